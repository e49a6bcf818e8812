"""
Structural analysis of C source

A line-granular lexical scanner that splits C files into the six code
element categories, plus the project-level views built on top of it:
conditional compilation blocks, the include graph, call and reference
graphs, and declaration/definition pairing. No C grammar is involved;
the scanner tracks braces, parentheses, statement ends and directives on
comment/string-masked text.
"""

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from .common_utils import dedupe, join_lines, read_source, split_lines, text_hash
from .error_handling import (
    AmbiguousDefinition, DanglingEndif, UnbalancedBraces, UnterminatedConditional,
)
from .file_search import find_c_sources
from .graph_utils import strongly_connected_components
from .models import (
    AtomGroup, CallGraph, CodeElement, ConditionalBlock, DeclPairing, ElementKind, IncludeEdge,
    IncludeGraph, ProjectAnalysis,
)
from .text_processor import (
    C_KEYWORDS, CONDITIONAL_OPENERS, DEFINE_RE, INCLUDE_RE, ActiveBranchTracker,
    directive_end, guard_symbols, identifiers, is_valueless_define, iter_directives,
    mask_c, parse_directive,
)

logger = logging.getLogger(__name__)

STORAGE_WORDS = frozenset({
    "static", "extern", "inline", "const", "volatile", "register", "auto", "__inline",
    "__inline__", "_Thread_local", "__extension__", "_Noreturn", "typedef", "restrict",
})
TAG_WORDS = ("struct", "union", "enum")

_ATTRIBUTE_RE = re.compile(r'__attribute__\s*\(\((?:[^()]|\([^()]*\))*\)\)')
_FN_POINTER_RE = re.compile(r'\(\s*\*\s*([A-Za-z_]\w*)\s*\)')
_KNR_PARAMS_RE = re.compile(r'\s*[A-Za-z_]\w*(\s*,\s*[A-Za-z_]\w*)*\s*')
_FORWARD_TAG_RE = re.compile(r'(?:(?:static|extern)\s+)?(struct|union|enum)\s+([A-Za-z_]\w*)\s*;')


def normalize_newlines(text: str) -> str:
    return text.replace('\r\n', '\n').replace('\r', '\n')


# --- statement helpers ------------------------------------------------------

def _match_close(s: str, open_index: int) -> int:
    """Index of the bracket closing the one at open_index (or len(s))"""
    pairs = {'{': '}', '(': ')', '[': ']'}
    opener = s[open_index]
    closer = pairs[opener]
    depth = 0
    for i in range(open_index, len(s)):
        if s[i] == opener:
            depth += 1
        elif s[i] == closer:
            depth -= 1
            if depth == 0:
                return i
    return len(s)


def _split_top(s: str, separators: str) -> List[str]:
    """Split on separators that are outside every (), [] and {}"""
    pieces, depth, last = [], 0, 0
    for i, c in enumerate(s):
        if c in '([{':
            depth += 1
        elif c in ')]}':
            depth -= 1
        elif c in separators and depth == 0:
            pieces.append(s[last:i])
            last = i + 1
    pieces.append(s[last:])
    return pieces


def _top_index(s: str, chars: str) -> int:
    """First index of any of chars at bracket depth 0, or -1"""
    depth = 0
    for i, c in enumerate(s):
        if c in chars and depth == 0:
            return i
        if c in '([{':
            depth += 1
        elif c in ')]}':
            depth -= 1
    return -1


def _declarator_name(declarator: str) -> Optional[str]:
    pointer = _FN_POINTER_RE.search(declarator)
    if pointer:
        return pointer.group(1)
    declarator = declarator.split('=', 1)[0]
    declarator = re.sub(r'\[[^\]]*\]', ' ', declarator)
    names = [n for n in identifiers(declarator) if n not in C_KEYWORDS]
    return names[-1] if names else None


def _call_name(head: str) -> Optional[str]:
    """Identifier right before the first top-level parenthesis"""
    i = head.find('(')
    if i < 0:
        return None
    m = re.search(r'([A-Za-z_]\w*)\s*$', head[:i])
    return m.group(1) if m else None


def _has_type_before(head: str, name: str) -> bool:
    i = head.find('(')
    m = re.search(r'([A-Za-z_]\w*)\s*$', head[:i])
    prefix = head[:m.start()] if m else ""
    words = [w for w in identifiers(prefix) if w not in STORAGE_WORDS]
    return bool(words)


def _enumerators(body: str) -> List[str]:
    names = []
    for piece in _split_top(body, ','):
        ids = identifiers(piece.split('=', 1)[0])
        if ids:
            names.append(ids[0])
    return names


def is_body_head(head: str) -> bool:
    """
    True when the text before a top-level `{` opens a function-like body

    The closing brace of such a body ends the statement.
    """
    head = _ATTRIBUTE_RE.sub(' ', head).strip()
    return head.endswith(')') and '=' not in head and '(' in head


def _looks_like_knr(statement: str) -> bool:
    """`int f(a, b) int a;` so far: a K&R parameter declaration in progress"""
    s = _ATTRIBUTE_RE.sub(' ', statement)
    open_index = s.find('(')
    if open_index < 0:
        return False
    close = _match_close(s, open_index)
    if close >= len(s):
        return False
    params = s[open_index + 1:close]
    after = s[close + 1:]
    if not _KNR_PARAMS_RE.fullmatch(params):
        return False
    name = _call_name(s[:close + 1])
    if not name or not _has_type_before(s[:close + 1], name):
        return False
    if '(' in after or '=' in after:
        return False
    return len(identifiers(after)) >= 2


# --- element classification -------------------------------------------------

@dataclass
class _Classified:
    kind: ElementKind
    name: str
    is_static: bool = False
    is_declaration: bool = False
    aliases: Tuple[str, ...] = ()


def _tag_definition(s: str, anon: str) -> _Classified:
    open_index = s.find('{')
    close = _match_close(s, open_index)
    prefix = s[:open_index]
    words = identifiers(prefix)
    tag = None
    for i, w in enumerate(words):
        if w in TAG_WORDS and i + 1 < len(words):
            tag = words[i + 1]
    keyword = next((w for w in words if w in TAG_WORDS), "")
    enumerators = _enumerators(s[open_index + 1:close]) if keyword == "enum" else []
    tail = s[close + 1:].strip().rstrip(';')
    declarators = [d for d in (_declarator_name(p) for p in _split_top(tail, ',')) if d]
    is_static = "static" in words
    if "typedef" in words:
        name = declarators[0] if declarators else (tag or anon)
        aliases = [a for a in dedupe(([tag] if tag else []) + declarators[1:] + enumerators) if a != name]
        return _Classified(ElementKind.TYPE_DEF, name, is_static, False, tuple(aliases))
    if tag:
        aliases = [a for a in dedupe(declarators + enumerators) if a != tag]
        return _Classified(ElementKind.TYPE_DEF, tag, is_static, False, tuple(aliases))
    if declarators:
        return _Classified(ElementKind.VARIABLE, declarators[0], is_static,
                           "extern" in words, tuple(dedupe(declarators[1:] + enumerators)))
    return _Classified(ElementKind.TYPE_DEF, anon, is_static, False, tuple(enumerators))


def classify_statement(statement: str, body: Optional[str], anon: str) -> _Classified:
    """
    Categorize the first statement of an element

    Args:
        statement: Masked statement text without directive lines
        body: "function" when a function-like body closed the statement,
            "knr" for K&R-style definitions, None otherwise
        anon: Synthetic name for anonymous constructs
    """
    s = _ATTRIBUTE_RE.sub(' ', statement).strip()
    words = identifiers(s)
    if not words:
        return _Classified(ElementKind.OTHER, anon)

    open_brace = _top_index(s, '{')
    open_paren = _top_index(s, '(')
    head = s[:open_brace] if open_brace >= 0 else s
    head_words = identifiers(head)
    is_static = "static" in head_words

    if "typedef" in head_words[:3]:
        if open_brace >= 0:
            return _tag_definition(s, anon)
        pointer = _FN_POINTER_RE.search(s)
        if pointer:
            return _Classified(ElementKind.TYPE_DEF, pointer.group(1), is_static)
        declarators = [d for d in (_declarator_name(p) for p in _split_top(s.rstrip(';'), ',')) if d]
        name = declarators[0] if declarators else anon
        return _Classified(ElementKind.TYPE_DEF, name, is_static, False, tuple(declarators[1:]))

    if body is not None:
        name = _call_name(head) or anon
        if body == "knr" or not _has_type_before(head, name):
            return _Classified(ElementKind.OTHER, name, is_static)
        return _Classified(ElementKind.FUNCTION, name, is_static)

    lead = [w for w in head_words if w not in STORAGE_WORDS]
    if lead and lead[0] in TAG_WORDS and open_brace >= 0 and (open_paren < 0 or open_paren > open_brace):
        eq = _top_index(s, '=')
        if eq < 0 or eq > open_brace:
            return _tag_definition(s, anon)

    forward = _FORWARD_TAG_RE.fullmatch(s)
    if forward:
        return _Classified(ElementKind.TYPE_DEF, forward.group(2), is_static, True)

    eq = _top_index(s, '=')
    before_eq = s[:eq] if eq >= 0 else s
    is_extern = "extern" in identifiers(before_eq)

    pointer = _FN_POINTER_RE.search(before_eq)
    if pointer:
        return _Classified(ElementKind.VARIABLE, pointer.group(1), is_static, is_extern and eq < 0)

    if '(' in before_eq:
        name = _call_name(before_eq)
        if name and _has_type_before(before_eq, name):
            return _Classified(ElementKind.FUNCTION, name, is_static, True)
        return _Classified(ElementKind.OTHER, name or anon, is_static)

    declarators = _split_top(s.rstrip().rstrip(';'), ',')
    names = [d for d in (_declarator_name(p) for p in declarators) if d]
    if not names:
        return _Classified(ElementKind.OTHER, anon, is_static)
    return _Classified(ElementKind.VARIABLE, names[0], is_static, is_extern and eq < 0,
                       tuple(dedupe(names[1:])))


# --- the scanner ------------------------------------------------------------

@dataclass
class _ScanState:
    start: Optional[int] = None       # 0-based line of the open element
    depth: int = 0
    paren: int = 0
    in_progress: bool = False
    first_done: bool = False
    first_text: List[str] = field(default_factory=list)
    first_body: Optional[str] = None
    current: List[str] = field(default_factory=list)
    current_body: Optional[str] = None
    current_knr: bool = False

    def copy(self) -> "_ScanState":
        return replace(self, first_text=list(self.first_text), current=list(self.current))


class ElementScanner:
    """
    Line-granular scanner for one C file

    An element closes at the end of the first line where brace depth is zero
    and no statement is left in progress. Conditional branches are scanned
    independently: each #else/#elif restarts from the state at the #if and
    the state at the end of the first branch wins at #endif.
    """

    def __init__(self, source_text: str, file: str):
        self.file = file
        self.text = normalize_newlines(source_text)
        self.raw_lines = split_lines(self.text)
        self.masked_lines = split_lines(mask_c(self.text))
        self.results: List[Tuple[int, int, Union[_ScanState, _Classified]]] = []

    def scan(self) -> List[CodeElement]:
        state = _ScanState()
        frames: List[List[Optional[_ScanState]]] = []
        lines = self.masked_lines
        i = 0
        while i < len(lines):
            directive = parse_directive(lines[i])
            if directive:
                end = directive_end(lines, i)
                name, _ = directive
                if name in CONDITIONAL_OPENERS:
                    frames.append([state.copy(), None])
                elif name in ("elif", "else") and frames:
                    if frames[-1][1] is None:
                        frames[-1][1] = state.copy()
                    state = frames[-1][0].copy()
                elif name == "endif" and frames:
                    _, first_branch = frames.pop()
                    if first_branch is not None:
                        state = first_branch
                elif name == "define" and state.start is None:
                    self._emit_define(i, end)
                i = end + 1
                continue

            if state.start is None and not lines[i].strip():
                i += 1
                continue
            if state.start is None:
                state.start = i
            for c in lines[i]:
                self._feed(state, c, i)
            state_open = state.in_progress or state.depth > 0
            if not state_open and state.start is not None:
                self.results.append((state.start, i, state))
                state = _ScanState()
            i += 1

        if state.depth > 0:
            raise UnbalancedBraces(self.file, (state.start or 0) + 1)
        if state.start is not None:
            last = max(k for k in range(state.start, len(lines)) if lines[k].strip() or k == state.start)
            self.results.append((state.start, last, state))
        return self._build()

    def _feed(self, state: _ScanState, c: str, line: int) -> None:
        if c.isspace():
            if state.in_progress:
                if not state.first_done:
                    state.first_text.append(c)
                if state.depth == 0:
                    state.current.append(c)
            return
        if not state.in_progress:
            state.in_progress = True
            state.current = []
            state.current_body = None
            state.current_knr = False
        if not state.first_done:
            state.first_text.append(c)
        if state.depth == 0:
            state.current.append(c)

        if c == '{':
            if state.depth == 0 and state.paren == 0:
                head = ''.join(state.current[:-1])
                if state.current_knr:
                    state.current_body = "knr"
                elif is_body_head(head):
                    state.current_body = "function"
            state.depth += 1
        elif c == '}':
            state.depth -= 1
            if state.depth < 0:
                raise UnbalancedBraces(self.file, line + 1)
            if state.depth == 0 and state.current_body is not None:
                self._complete(state)
        elif state.depth == 0:
            if c == '(':
                state.paren += 1
            elif c == ')':
                state.paren = max(0, state.paren - 1)
            elif c == ';' and state.paren == 0:
                if state.current_knr or _looks_like_knr(''.join(state.current[:-1])):
                    state.current_knr = True
                else:
                    self._complete(state)

    @staticmethod
    def _complete(state: _ScanState) -> None:
        state.in_progress = False
        if not state.first_done:
            state.first_done = True
            state.first_body = state.current_body

    def _emit_define(self, start: int, end: int) -> None:
        joined = " ".join(l.rstrip().rstrip('\\') for l in self.masked_lines[start:end + 1])
        m = DEFINE_RE.match(joined)
        if not m:
            return
        kind = ElementKind.MACRO_FUNCTION if m.group(2) else ElementKind.MACRO_VARIABLE
        self.results.append((start, end, _Classified(kind, m.group(1))))

    def _build(self) -> List[CodeElement]:
        # alternative branches can close the same element twice; keep one span
        merged: List[List] = []
        for start, end, entry in sorted(self.results, key=lambda r: (r[0], r[1])):
            if merged and start <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], end)
                continue
            merged.append([start, end, entry])

        elements = []
        for start, end, entry in merged:
            anon = f"anon@{self.file}:{start + 1}"
            if isinstance(entry, _Classified):
                info = entry
            elif entry.in_progress and not entry.first_done:
                statement = ''.join(entry.first_text)
                info = _Classified(ElementKind.OTHER, _call_name(statement) or anon)
            else:
                info = classify_statement(''.join(entry.first_text), entry.first_body, anon)
            raw = join_lines(self.raw_lines[start:end + 1])
            elements.append(CodeElement(
                kind=info.kind, name=info.name, start_line=start + 1, end_line=end + 1,
                file=self.file, is_static=info.is_static, is_declaration=info.is_declaration,
                text_hash=text_hash(raw), aliases=info.aliases,
            ))
        return elements


def scan_elements(source_text: str, file: str) -> List[CodeElement]:
    """
    Split a C file into code elements

    Every non-blank, non-comment line outside a directive belongs to exactly
    one element; `#define` lines are elements of their own. Unknown
    constructs become kind other.

    Raises:
        UnbalancedBraces: a closing brace without opener, or depth left open at EOF
    """
    return ElementScanner(source_text, file).scan()


def element_text(lines: Sequence[str], element: CodeElement) -> str:
    return join_lines(lines[element.start_line - 1:element.end_line])


# --- conditional blocks -----------------------------------------------------

def _last_content_line(masked_lines: Sequence[str]) -> int:
    for k in range(len(masked_lines) - 1, -1, -1):
        if masked_lines[k].strip():
            return k + 1
    return 0


def _next_content_line(masked_lines: Sequence[str], after: int) -> Optional[int]:
    for k in range(after, len(masked_lines)):
        if masked_lines[k].strip():
            return k + 1
    return None


def detect_conditional_blocks(source_text: str, file: str,
                              elements: Optional[Sequence[CodeElement]] = None) -> List[ConditionalBlock]:
    """
    Find every #if/#ifdef/#ifndef ... #endif region

    Blocks come back ordered by start line. guard_symbols collects the
    macros tested by the opening directive and every #elif. An include
    guard (#ifndef X / #define X wrapping the whole file) is flagged.

    Raises:
        DanglingEndif: #else, #elif or #endif without an open block
        UnterminatedConditional: a block still open at end of file
    """
    text = normalize_newlines(source_text)
    masked_lines = split_lines(mask_c(text))
    if elements is None:
        elements = scan_elements(text, file)

    stack: List[dict] = []
    blocks: List[ConditionalBlock] = []
    last_line = _last_content_line(masked_lines)
    for d in iter_directives(masked_lines):
        if d.name in CONDITIONAL_OPENERS:
            stack.append({"start": d.start_line, "end_of_opener": d.end_line, "directive": d.name,
                          "argument": d.argument, "symbols": guard_symbols(d.name, d.argument),
                          "branches": 1})
        elif d.name in ("elif", "else", "endif"):
            if not stack:
                raise DanglingEndif(d.start_line, file)
            frame = stack[-1]
            if d.name == "elif":
                frame["symbols"] = dedupe(frame["symbols"] + guard_symbols("if", d.argument))
                frame["branches"] += 1
            elif d.name == "else":
                frame["branches"] += 1
            else:
                stack.pop()
                start, end = frame["start"], d.end_line
                contained = tuple(e.element_id for e in elements
                                  if e.start_line <= end and e.end_line >= start)
                blocks.append(ConditionalBlock(
                    file=file, start_line=start, end_line=end,
                    guard_symbols=tuple(frame["symbols"]), contained_elements=contained,
                    is_include_guard=_is_include_guard(frame, end, masked_lines, last_line),
                ))
    if stack:
        raise UnterminatedConditional(stack[-1]["start"], file)
    return sorted(blocks, key=lambda b: (b.start_line, -b.end_line))


def _is_include_guard(frame: dict, end: int, masked_lines: Sequence[str], last_line: int) -> bool:
    if frame["directive"] != "ifndef" or frame["branches"] != 1 or end != last_line:
        return False
    following = _next_content_line(masked_lines, frame["end_of_opener"])
    if following is None:
        return False
    parsed = parse_directive(masked_lines[following - 1])
    if not parsed or parsed[0] != "define":
        return False
    names = identifiers(parsed[1])
    if not names or not frame["symbols"]:
        return False
    return names[0] == frame["symbols"][0] and is_valueless_define(parsed[1])


def include_guard_lines(source_text: str, file: str) -> Set[int]:
    """Lines of an include guard (#ifndef, #define, #endif), empty when unguarded"""
    text = normalize_newlines(source_text)
    masked_lines = split_lines(mask_c(text))
    try:
        blocks = detect_conditional_blocks(text, file, elements=[])
    except (DanglingEndif, UnterminatedConditional):
        return set()
    guard = next((b for b in blocks if b.is_include_guard), None)
    if guard is None:
        return set()
    lines = set()
    opener_end = directive_end(masked_lines, guard.start_line - 1) + 1
    lines.update(range(guard.start_line, opener_end + 1))
    define_start = _next_content_line(masked_lines, opener_end)
    define_end = directive_end(masked_lines, define_start - 1) + 1
    lines.update(range(define_start, define_end + 1))
    lines.add(guard.end_line)
    return lines


def atom_spans(elements: Sequence[CodeElement], blocks: Sequence[ConditionalBlock],
               extra_spans: Iterable[Tuple[int, int]] = ()) -> List[AtomGroup]:
    """
    Indivisible line runs: elements, merged with every conditional block
    (include guards aside) and any extra spans that overlap them
    """
    spans = [(e.start_line, e.end_line) for e in elements]
    spans += [(b.start_line, b.end_line) for b in blocks if not b.is_include_guard]
    spans += list(extra_spans)
    merged: List[List[int]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [AtomGroup(start, end, tuple(e.element_id for e in elements
                                        if start <= e.start_line and e.end_line <= end))
            for start, end in merged]


# --- include graph ----------------------------------------------------------

def _include_guard_symbols(text: str, file: str) -> Set[str]:
    try:
        blocks = detect_conditional_blocks(text, file, elements=[])
    except (DanglingEndif, UnterminatedConditional):
        return set()
    return {s for b in blocks if b.is_include_guard for s in b.guard_symbols}


def collect_defines(sources: Mapping[str, str]) -> List[str]:
    """
    Every macro name #defined anywhere in the project

    Include guard macros are left out: assuming them defined up front would
    switch off the header they guard.
    """
    names = []
    for file in sorted(sources):
        text = normalize_newlines(sources[file])
        guards = _include_guard_symbols(text, file)
        for d in iter_directives(split_lines(mask_c(text))):
            if d.name == "define":
                ids = identifiers(d.argument)
                if ids and ids[0] not in guards:
                    names.append(ids[0])
    return dedupe(names)


def resolve_quoted(includer: str, name: str, nodes: Set[str], include_dirs: Sequence[str]) -> Optional[str]:
    candidates = [PurePosixPath(includer).parent / name]
    candidates += [PurePosixPath(d) / name for d in include_dirs]
    candidates.append(PurePosixPath(name))
    for candidate in candidates:
        normalized = _normalize(candidate)
        if normalized in nodes:
            return normalized
    return None


def _normalize(path: PurePosixPath) -> str:
    parts: List[str] = []
    for part in path.parts:
        if part in ("", "."):
            continue
        if part == ".." and parts and parts[-1] != "..":
            parts.pop()
        else:
            parts.append(part)
    return "/".join(parts)


def include_lines(source_text: str) -> List[Tuple[int, str, bool]]:
    """(1-based line, name, is_system) of every #include directive"""
    text = normalize_newlines(source_text)
    raw_lines = split_lines(text)
    masked_lines = split_lines(mask_c(text))
    found = []
    for d in iter_directives(masked_lines):
        if d.name != "include":
            continue
        m = INCLUDE_RE.match(raw_lines[d.start_line - 1])
        if m:
            found.append((d.start_line, m.group(2).strip(), m.group(1) == "<"))
    return found


def build_include_graph(project_root: Union[str, Path], include_dirs: Sequence[str] = (),
                        defined: Optional[Iterable[str]] = None,
                        sources: Optional[Mapping[str, str]] = None,
                        exclude: Iterable[Union[str, Path]] = ()) -> IncludeGraph:
    """
    Build the include graph of a project

    Quoted includes resolve relative to the includer, then each include dir,
    then the project root. Only includes in branches selected by the
    configured macro set become edges. Unresolvable quoted includes are
    recorded in `missing` and logged.

    Args:
        project_root: Project directory
        include_dirs: Extra search directories, relative to the root
        defined: Macros assumed defined; defaults to every project #define
        sources: Preloaded file texts keyed by relative path
        exclude: Directories to skip while discovering files
    """
    root = Path(project_root)
    if sources is None:
        sources = {f: read_source(root / f) for f in find_c_sources(root, exclude=exclude)}
    nodes = sorted(sources)
    node_set = set(nodes)
    if defined is None:
        defined = collect_defines(sources)
    defined = set(defined)

    edges: List[IncludeEdge] = []
    missing: List[Tuple[str, str]] = []
    for includer in nodes:
        text = normalize_newlines(sources[includer])
        raw_lines = split_lines(text)
        tracker = ActiveBranchTracker(defined)
        for d in iter_directives(split_lines(mask_c(text))):
            if d.name == "include" and tracker.active:
                m = INCLUDE_RE.match(raw_lines[d.start_line - 1])
                if not m:
                    continue
                name = m.group(2).strip()
                if m.group(1) == "<":
                    edges.append(IncludeEdge(includer, name, d.start_line, True))
                    continue
                target = resolve_quoted(includer, name, node_set, include_dirs)
                if target is None:
                    logger.warning(f"⚠️ {includer}:{d.start_line}: cannot resolve #include \"{name}\"")
                    missing.append((includer, name))
                else:
                    edges.append(IncludeEdge(includer, target, d.start_line, False))
            else:
                tracker.feed(d.name, d.argument)

    adjacency: Dict[str, List[str]] = {}
    for e in edges:
        if not e.is_system:
            adjacency.setdefault(e.includer, []).append(e.included)
    cycles = [c for c in strongly_connected_components(nodes, adjacency)
              if len(c) > 1 or c[0] in adjacency.get(c[0], [])]
    for cycle in cycles:
        logger.info(f"Include cycle (resolved by include-once merging): {' -> '.join(cycle)}")
    return IncludeGraph(root=str(root), nodes=nodes, edges=edges, missing=missing, cycles=cycles)


# --- call and reference graphs ---------------------------------------------

def _body_identifiers(element: CodeElement, masked_lines: Sequence[str]) -> List[str]:
    """Identifiers after the element's own name (its body, parameters, initializer)"""
    text = "\n".join(masked_lines[element.start_line - 1:element.end_line])
    if element.kind == ElementKind.FUNCTION:
        brace = text.find('{')
        text = text[brace:] if brace >= 0 else ""
    elif element.kind in (ElementKind.MACRO_FUNCTION, ElementKind.MACRO_VARIABLE):
        m = DEFINE_RE.match(" ".join(l.rstrip().rstrip('\\') for l in text.split("\n")))
        if m:
            rest = m.group(3)
            if m.group(2):
                close = rest.find(')')
                rest = rest[close + 1:] if close >= 0 else ""
            text = rest
    return identifiers(text)


class _NameIndex:
    """name -> candidate element ids, with file-scoped statics"""

    def __init__(self, elements: Sequence[CodeElement], include_aliases: bool = True):
        self.by_name: Dict[str, List[CodeElement]] = {}
        for e in elements:
            for name in (e.defined_names if include_aliases else (e.name,)):
                self.by_name.setdefault(name, []).append(e)

    def resolve(self, name: str, file: str) -> List[CodeElement]:
        candidates = self.by_name.get(name, [])
        if not candidates:
            return []
        local_static = [c for c in candidates if c.is_static and c.file == file]
        if local_static:
            return local_static
        return [c for c in candidates if not c.is_static or c.file == file]


def build_call_graph(elements: Sequence[CodeElement], sources: Mapping[str, str]) -> CallGraph:
    """
    Caller -> callee graph over function and function-like macro definitions

    Any occurrence of a known name in a body is an edge, so function
    pointers taken without a call count too. A name defined both as a macro
    and as a function gets an edge to each and is listed in `ambiguous`.
    Self references create no edge.

    Args:
        elements: Scanned elements of every file
        sources: File texts keyed by the elements' file paths
    """
    callables = [e for e in elements
                 if e.kind in (ElementKind.FUNCTION, ElementKind.MACRO_FUNCTION) and not e.is_declaration]
    nodes = [e.element_id for e in callables]
    index = _NameIndex(callables, include_aliases=False)
    masked = {f: split_lines(mask_c(normalize_newlines(t))) for f, t in sources.items()}

    ambiguous = sorted(name for name, cands in index.by_name.items()
                       if len({c.kind for c in cands}) > 1)
    for name in ambiguous:
        logger.info(f"'{name}' is defined both as a macro and as a function; keeping both edges")

    edges: Dict[str, List[str]] = {}
    for element in callables:
        targets = []
        for name in dedupe(_body_identifiers(element, masked[element.file])):
            for callee in index.resolve(name, element.file):
                if callee.element_id != element.element_id:
                    targets.append(callee.element_id)
        edges[element.element_id] = dedupe(targets)

    return CallGraph(nodes=nodes, edges=edges,
                     scc_groups=strongly_connected_components(nodes, edges),
                     ambiguous=ambiguous)


def build_reference_graph(elements: Sequence[CodeElement], sources: Mapping[str, str]) -> Dict[str, List[str]]:
    """
    Element -> referenced element edges over every kind

    Struct tags and enumerators resolve through element aliases. References
    to a declaration only count when no definition of the name exists.
    """
    definitions = [e for e in elements if not e.is_declaration]
    defined_names = {n for e in definitions for n in e.defined_names}
    declarations = [e for e in elements if e.is_declaration and e.name not in defined_names]
    index = _NameIndex(definitions + declarations)
    masked = {f: split_lines(mask_c(normalize_newlines(t))) for f, t in sources.items()}

    edges: Dict[str, List[str]] = {}
    for element in elements:
        own = set(element.defined_names)
        lines = masked[element.file][element.start_line - 1:element.end_line]
        if element.kind in (ElementKind.MACRO_FUNCTION, ElementKind.MACRO_VARIABLE,
                            ElementKind.FUNCTION):
            names = _body_identifiers(element, masked[element.file])
            if element.kind == ElementKind.FUNCTION:
                # parameter and return types live in the head
                head = "\n".join(lines).split('{', 1)[0]
                names = identifiers(head) + names
        else:
            names = identifiers("\n".join(lines))
        targets = []
        for name in dedupe(names):
            if name in own or name in C_KEYWORDS:
                continue
            for target in index.resolve(name, element.file):
                if target.element_id != element.element_id:
                    targets.append(target.element_id)
        edges[element.element_id] = dedupe(targets)
    return edges


def flag_ambiguous(elements: Sequence[CodeElement], call_graph: CallGraph) -> List[CodeElement]:
    """Mark elements whose name is both a macro and a function"""
    names = set(call_graph.ambiguous)
    return [replace(e, flagged=True) if e.name in names and
            e.kind in (ElementKind.FUNCTION, ElementKind.MACRO_FUNCTION) else e
            for e in elements]


# --- declarations and definitions -----------------------------------------

def _compatible(declaration: CodeElement, definition: CodeElement) -> bool:
    if declaration.kind == ElementKind.TYPE_DEF:
        return definition.kind == ElementKind.TYPE_DEF and declaration.name in definition.defined_names
    return definition.kind == declaration.kind and definition.name == declaration.name


def _same_conditional_block(a: CodeElement, b: CodeElement, blocks: Sequence[ConditionalBlock]) -> bool:
    if a.file != b.file:
        return False
    for block in blocks:
        if block.file != a.file or block.is_include_guard:
            continue
        if a.element_id in block.contained_elements and b.element_id in block.contained_elements:
            return True
    return False


def pair_decls_defs(elements: Sequence[CodeElement],
                    blocks: Sequence[ConditionalBlock] = ()) -> DeclPairing:
    """
    Pair prototypes, externs and forward tags with their definitions

    Static definitions only pair within their own file. Same-name non-static
    definitions are an error unless they are alternatives inside one
    conditional block.

    Raises:
        AmbiguousDefinition: several non-static definitions of one name
    """
    definitions = [e for e in elements if not e.is_declaration and
                   e.kind in (ElementKind.FUNCTION, ElementKind.VARIABLE)]
    by_key: Dict[Tuple[ElementKind, str], List[CodeElement]] = {}
    for d in definitions:
        if not d.is_static:
            by_key.setdefault((d.kind, d.name), []).append(d)
    for (kind, name), defs in by_key.items():
        if len(defs) > 1 and not all(_same_conditional_block(defs[0], d, blocks) for d in defs[1:]):
            raise AmbiguousDefinition(name, [f"{d.file}:{d.start_line}" for d in defs])

    pairs: List[Tuple[CodeElement, CodeElement]] = []
    external: List[CodeElement] = []
    candidates_all = [e for e in elements if not e.is_declaration]
    for decl in (e for e in elements if e.is_declaration):
        candidates = [d for d in candidates_all if _compatible(decl, d)]
        local = [d for d in candidates if d.file == decl.file]
        if decl.is_static:
            chosen = local
        else:
            chosen = local or [d for d in candidates if not d.is_static]
        if chosen:
            pairs.append((decl, chosen[0]))
        else:
            external.append(decl)
    return DeclPairing(pairs=pairs, external=external)


# --- project analysis -------------------------------------------------------

def analyze_project(project_root: Union[str, Path], include_dirs: Sequence[str] = (),
                    defined: Optional[Iterable[str]] = None,
                    exclude: Iterable[Union[str, Path]] = ()) -> ProjectAnalysis:
    """Scan every source of a project and build its include graph"""
    root = Path(project_root)
    files = find_c_sources(root, exclude=exclude)
    sources = {f: normalize_newlines(read_source(root / f)) for f in files}
    elements: Dict[str, List[CodeElement]] = {}
    blocks: Dict[str, List[ConditionalBlock]] = {}
    for f in files:
        elements[f] = scan_elements(sources[f], f)
        blocks[f] = detect_conditional_blocks(sources[f], f, elements[f])
    call_graph = build_call_graph([e for f in files for e in elements[f]], sources)
    if call_graph.ambiguous:
        logger.warning(f"⚠️ Names defined both as macro and function: {', '.join(call_graph.ambiguous)}")
        elements = {f: flag_ambiguous(found, call_graph) for f, found in elements.items()}
    defined_list = list(defined) if defined is not None else collect_defines(sources)
    graph = build_include_graph(root, include_dirs, defined_list, sources=sources)
    logger.info(f"Analyzed {len(files)} files, {sum(len(v) for v in elements.values())} elements")
    return ProjectAnalysis(root=str(root), sources=sources, elements=elements, blocks=blocks,
                           include_graph=graph, defined_macros=defined_list)
