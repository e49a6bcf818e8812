"""
Lexical processing of C source text

Comment/string masking, preprocessor directive recognition, identifier
extraction and the small condition evaluator used to select a single
configuration. Masking keeps every offset and newline in place so results
found in masked text can be applied to the raw text.
"""

import re
from dataclasses import dataclass
from typing import Iterable, List, Optional, Set, Tuple

IDENT_RE = re.compile(r'\b[A-Za-z_]\w*\b')
CALL_RE = re.compile(r'\b([A-Za-z_]\w*)\s*\(')
DIRECTIVE_RE = re.compile(r'^\s*#\s*(\w+)\b(.*)$')
INCLUDE_RE = re.compile(r'^\s*#\s*include\s*([<"])([^>"]+)[>"]')
DEFINE_RE = re.compile(r'^\s*#\s*define\s+([A-Za-z_]\w*)(\()?(.*)$')
DEFINED_RE = re.compile(r'\bdefined\s*(?:\(\s*([A-Za-z_]\w*)\s*\)|([A-Za-z_]\w*))')

CONDITIONAL_OPENERS = ("if", "ifdef", "ifndef")

C_KEYWORDS = frozenset("""
auto break case char const continue default do double else enum extern float for goto if
inline int long register restrict return short signed sizeof static struct switch typedef
union unsigned void volatile while _Bool _Complex _Imaginary _Alignas _Alignof _Atomic
_Generic _Noreturn _Static_assert _Thread_local defined __attribute__ __inline __inline__
__restrict __extension__ __asm__ asm
""".split())


def mask_c(text: str) -> str:
    """
    Blank out comments and the contents of string/char literals

    Quotes of literals are kept, newlines are kept, everything else inside
    comments and literals becomes a space.
    """
    out = list(text)
    n = len(text)
    i = 0

    def blank(start: int, end: int):
        for k in range(start, end):
            if out[k] != '\n':
                out[k] = ' '

    while i < n:
        c = text[i]
        nxt = text[i + 1] if i + 1 < n else ''
        if c == '/' and nxt == '/':
            j = text.find('\n', i)
            j = n if j == -1 else j
            blank(i, j)
            i = j
        elif c == '/' and nxt == '*':
            j = text.find('*/', i + 2)
            end = n if j == -1 else j + 2
            blank(i, end)
            i = end
        elif c in '"\'':
            j = i + 1
            while j < n and text[j] != c and text[j] != '\n':
                j += 2 if text[j] == '\\' else 1
            j = min(j, n)
            blank(i + 1, j)
            i = j + 1 if j < n and text[j] == c else j
        else:
            i += 1
    return ''.join(out)


RUST_CHAR_RE = re.compile(r"'(?:\\(?:u\{[0-9a-fA-F]+\}|x[0-9a-fA-F]{2}|.)|[^\\'\n])'")
RUST_RAW_STRING_RE = re.compile(r'b?r(#*)"')


def mask_rust(text: str) -> str:
    """
    mask_c for Rust: nested block comments, raw strings and char literals

    Lifetimes ('a) are left alone.
    """
    out = list(text)
    n = len(text)
    i = 0

    def blank(start: int, end: int):
        for k in range(start, end):
            if out[k] != '\n':
                out[k] = ' '

    while i < n:
        c = text[i]
        nxt = text[i + 1] if i + 1 < n else ''
        if c == '/' and nxt == '/':
            j = text.find('\n', i)
            j = n if j == -1 else j
            blank(i, j)
            i = j
        elif c == '/' and nxt == '*':
            depth, j = 1, i + 2
            while j < n and depth:
                if text.startswith('/*', j):
                    depth, j = depth + 1, j + 2
                elif text.startswith('*/', j):
                    depth, j = depth - 1, j + 2
                else:
                    j += 1
            blank(i, j)
            i = j
        elif c in 'br' and (i == 0 or not (text[i - 1].isalnum() or text[i - 1] == '_')) \
                and RUST_RAW_STRING_RE.match(text, i):
            m = RUST_RAW_STRING_RE.match(text, i)
            closing = '"' + m.group(1)
            j = text.find(closing, m.end())
            end = n if j == -1 else j
            blank(m.end(), end)
            i = end + len(closing) if j != -1 else n
        elif c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 2 if text[j] == '\\' else 1
            j = min(j, n)
            blank(i + 1, j)
            i = j + 1
        elif c == "'" and RUST_CHAR_RE.match(text, i):
            m = RUST_CHAR_RE.match(text, i)
            blank(i + 1, m.end() - 1)
            i = m.end()
        else:
            i += 1
    return ''.join(out)


@dataclass(frozen=True)
class Directive:
    name: str
    argument: str
    start_line: int
    end_line: int


def parse_directive(line: str) -> Optional[Tuple[str, str]]:
    """Return (directive name, rest of line) for a preprocessor line"""
    m = DIRECTIVE_RE.match(line)
    if not m:
        return None
    return m.group(1), m.group(2).strip()


def directive_end(lines: List[str], index: int) -> int:
    """Index of the last physical line of a backslash-continued directive"""
    while index < len(lines) - 1 and lines[index].rstrip().endswith('\\'):
        index += 1
    return index


def iter_directives(masked_lines: List[str]) -> Iterable[Directive]:
    """Yield every directive with its 1-based line span"""
    i = 0
    while i < len(masked_lines):
        parsed = parse_directive(masked_lines[i])
        if parsed:
            end = directive_end(masked_lines, i)
            rest = " ".join(l.rstrip().rstrip('\\') for l in masked_lines[i:end + 1])
            name, arg = parse_directive(rest) or parsed
            yield Directive(name, arg, i + 1, end + 1)
            i = end + 1
        else:
            i += 1


def identifiers(text: str) -> List[str]:
    return IDENT_RE.findall(text)


def guard_symbols(directive: str, argument: str) -> List[str]:
    """Macro identifiers tested by an #if-family condition"""
    if directive in ("ifdef", "ifndef"):
        names = identifiers(argument)
        return names[:1]
    names = []
    for name in identifiers(argument):
        if name == "defined" or name in names:
            continue
        names.append(name)
    return names


def replace_identifier(text: str, old: str, new: str, masked: Optional[str] = None) -> str:
    """Rename identifier tokens outside comments and string literals"""
    masked = mask_c(text) if masked is None else masked
    pattern = re.compile(r'\b%s\b' % re.escape(old))
    pieces = []
    last = 0
    for m in pattern.finditer(masked):
        pieces.append(text[last:m.start()])
        pieces.append(new)
        last = m.end()
    pieces.append(text[last:])
    return ''.join(pieces)


def is_valueless_define(argument: str) -> bool:
    """True for `#define NAME` with nothing after the name"""
    m = re.match(r'([A-Za-z_]\w*)(.*)$', argument)
    return bool(m) and not m.group(2).strip()


# --- condition evaluation --------------------------------------------------

_TOKEN_RE = re.compile(r'\s*(\d+[uUlL]*|&&|\|\||!|\(|\))')


def evaluate_condition(directive: str, argument: str, defined: Set[str]) -> Optional[bool]:
    """
    Evaluate an #if-family condition against a set of defined macros

    Supports #ifdef/#ifndef and #if expressions built from defined(),
    integer literals, !, && and ||. Returns None when the condition uses
    anything else.
    """
    if directive == "ifdef":
        names = identifiers(argument)
        return bool(names) and names[0] in defined
    if directive == "ifndef":
        names = identifiers(argument)
        return bool(names) and names[0] not in defined
    expr = DEFINED_RE.sub(lambda m: "1" if (m.group(1) or m.group(2)) in defined else "0", argument)
    tokens = []
    pos = 0
    expr = expr.strip()
    while pos < len(expr):
        m = _TOKEN_RE.match(expr, pos)
        if not m:
            return None
        tokens.append(m.group(1))
        pos = m.end()
        while pos < len(expr) and expr[pos].isspace():
            pos += 1
    if not tokens:
        return None
    parser = _ConditionParser(tokens)
    try:
        value = parser.parse_or()
    except (IndexError, ValueError):
        return None
    if parser.pos != len(tokens):
        return None
    return bool(value)


class _ConditionParser:
    def __init__(self, tokens: List[str]):
        self.tokens = tokens
        self.pos = 0

    def _peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def parse_or(self) -> int:
        value = self.parse_and()
        while self._peek() == "||":
            self.pos += 1
            rhs = self.parse_and()
            value = 1 if (value or rhs) else 0
        return value

    def parse_and(self) -> int:
        value = self.parse_not()
        while self._peek() == "&&":
            self.pos += 1
            rhs = self.parse_not()
            value = 1 if (value and rhs) else 0
        return value

    def parse_not(self) -> int:
        if self._peek() == "!":
            self.pos += 1
            return 0 if self.parse_not() else 1
        return self.parse_atom()

    def parse_atom(self) -> int:
        token = self.tokens[self.pos]
        self.pos += 1
        if token == "(":
            value = self.parse_or()
            if self._peek() != ")":
                raise ValueError("missing )")
            self.pos += 1
            return value
        return int(token.rstrip("uUlL"))


class ActiveBranchTracker:
    """
    Follow #if/#else/#endif nesting and report whether a line is in the
    branch selected by the configured set of defined macros.

    Unknown conditions keep their first branch active.
    """

    def __init__(self, defined: Set[str]):
        self.defined = set(defined)
        # each frame: [parent_active, branch_taken, current_active]
        self.stack: List[List[bool]] = []

    @property
    def active(self) -> bool:
        return self.stack[-1][2] if self.stack else True

    def feed(self, directive: str, argument: str) -> None:
        if directive in CONDITIONAL_OPENERS:
            parent = self.active
            value = evaluate_condition(directive, argument, self.defined)
            taken = True if value is None else value
            self.stack.append([parent, taken, parent and taken])
        elif directive == "elif" and self.stack:
            frame = self.stack[-1]
            if frame[1]:
                frame[2] = False
            else:
                value = evaluate_condition("if", argument, self.defined)
                taken = False if value is None else value
                frame[1] = taken
                frame[2] = frame[0] and taken
        elif directive == "else" and self.stack:
            frame = self.stack[-1]
            frame[2] = frame[0] and not frame[1]
            frame[1] = True
        elif directive == "endif" and self.stack:
            self.stack.pop()
        elif directive == "define" and self.active:
            names = identifiers(argument)
            if names:
                self.defined.add(names[0])
        elif directive == "undef" and self.active:
            names = identifiers(argument)
            if names:
                self.defined.discard(names[0])
