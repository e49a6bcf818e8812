"""
Prompt construction and response assembly

Builds the translate, repair, mapping and file-selection envelopes from the
editable templates under templates/, estimates their token cost against the
backend budget, and turns multi-part LLM answers back into validated JSON
documents.
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from string import Template
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import jsonschema

from .common_utils import count_lines, dedupe, split_lines
from .error_handling import BudgetExceeded, FormatError, ValidationError
from .models import (
    ContextBundle, LlmResponsePart, PromptBudget, PromptEnvelope, PromptKind, TranslationUnit,
    UnitMetadata,
)

logger = logging.getLogger(__name__)

PACKAGE_ROOT = Path(__file__).resolve().parent.parent
TEMPLATES_DIR = PACKAGE_ROOT / "templates"
SCHEMAS_DIR = PACKAGE_ROOT / "schemas"

CONTINUE_MARKER = "[[CONTINUE]]"
CHUNK_LINES = 100
BYTES_PER_TOKEN = 4
MIN_TOKENS_PER_LINE = 5
TRUNCATION_MARKER = "[... {count} earlier log lines truncated to fit the context window ...]"

MANDATORY_RULES = (
    "Declare all elements as public (`pub`), including struct fields.",
    "Use wildcards to import all modules (`use crate::<module>::*;`).",
    "Avoid using unsafe whenever possible.",
)

DEFAULT_RULES = MANDATORY_RULES + (
    "Use only the Rust standard library; do not add external crates.",
    "Translate code guarded by feature macros with `#[cfg(feature = \"<macro in lower case>\")]`.",
    "Keep the names of C functions, types and globals unless Rust naming requires snake_case.",
)


def estimate_tokens(text: str) -> int:
    """
    Over-estimate the token count of text

    ceil(bytes / 4), raised to 5 tokens per line. Empty text costs nothing.
    """
    if not text:
        return 0
    by_bytes = math.ceil(len(text.encode("utf-8")) / BYTES_PER_TOKEN)
    return max(by_bytes, MIN_TOKENS_PER_LINE * count_lines(text))


# --- rules --------------------------------------------------------------------

@dataclass(frozen=True)
class RulesProfile:
    """Ordered translation rules; the mandatory rules are always first"""
    rules: Tuple[str, ...] = DEFAULT_RULES
    source: str = "built-in"

    def __post_init__(self):
        extra = tuple(r for r in self.rules if r not in MANDATORY_RULES)
        object.__setattr__(self, "rules", MANDATORY_RULES + tuple(dedupe(extra)))

    def render(self) -> str:
        return "\n".join(f"{i}. {rule}" for i, rule in enumerate(self.rules, 1))


def load_rules_profile(path: Optional[Union[str, Path]] = None) -> RulesProfile:
    """
    Read a rules file: one rule per line, blank lines and `#` comments ignored

    Without a path the built-in rules are used.
    """
    if path is None:
        return RulesProfile()
    rules_path = Path(path)
    if not rules_path.is_file():
        raise ValidationError(f"Rules file not found: {rules_path}")
    rules = []
    for line in rules_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rules.append(line)
    logger.info(f"Loaded {len(rules)} rules from {rules_path}")
    return RulesProfile(rules=tuple(rules), source=str(rules_path))


# --- templates and schemas -------------------------------------------------------

@lru_cache(maxsize=None)
def _read_template(path: str) -> Template:
    return Template(Path(path).read_text(encoding="utf-8"))


def load_template(name: str, templates_dir: Optional[Union[str, Path]] = None) -> Template:
    path = Path(templates_dir or TEMPLATES_DIR) / f"{name}.tmpl"
    if not path.is_file():
        raise ValidationError(f"Prompt template not found: {path}")
    return _read_template(str(path))


@lru_cache(maxsize=None)
def _read_schema(path: str) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def load_schema(schema_id: str, schemas_dir: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    path = Path(schemas_dir or SCHEMAS_DIR) / f"{schema_id}.json"
    if not path.is_file():
        raise ValidationError(f"Unknown response schema '{schema_id}'")
    return _read_schema(str(path))


def _error_path(error: jsonschema.ValidationError) -> str:
    where = ""
    for part in error.absolute_path:
        where += f"[{part}]" if isinstance(part, int) else (f".{part}" if where else str(part))
    return where


def validate_document(data: Any, schema: Dict[str, Any]) -> List[str]:
    """
    Check a document against one of the shipped schemas

    Returns:
        One "path: message" line per violation, sorted by path (empty if valid)
    """
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path])
    return [f"{_error_path(e)}: {e.message}" if e.absolute_path else e.message for e in errors]


def validate_response(data: Any, schema_id: str, schemas_dir: Optional[Union[str, Path]] = None) -> Any:
    """Validate a decoded answer; a bare array is wrapped when the schema allows it"""
    schema = load_schema(schema_id, schemas_dir)
    wrap = schema.get("wrap_array")
    if wrap and isinstance(data, list):
        data = {wrap: data}
    issues = validate_document(data, schema)
    if issues:
        raise FormatError(f"response does not match the {schema_id} schema: {'; '.join(issues[:5])}")
    return data


# --- envelopes ----------------------------------------------------------------------

def _section(label: str, body: str) -> str:
    return f"\n## {label}\n{body}\n" if body else ""


def _envelope(kind: PromptKind, rules: Sequence[str], sections: Sequence[Tuple[str, str]],
              schema_id: str, unit_id: str, text: str,
              budget: Optional[PromptBudget]) -> PromptEnvelope:
    load_schema(schema_id)
    est = estimate_tokens(text)
    if budget is not None and est > budget.available:
        raise BudgetExceeded(unit_id, est, budget.available)
    return PromptEnvelope(kind=kind, system_rules=tuple(rules), body_sections=tuple(sections),
                          response_schema_id=schema_id, est_tokens=est, unit_id=unit_id, text=text)


def _with_newline(text: str) -> str:
    return text if not text or text.endswith("\n") else text + "\n"


def build_translation_prompt(unit: TranslationUnit, context_bundle: ContextBundle,
                             rules_profile: RulesProfile, budget: PromptBudget,
                             chunk_lines: int = CHUNK_LINES,
                             templates_dir: Optional[Union[str, Path]] = None) -> PromptEnvelope:
    """
    Envelope asking for the Rust translation of one unit

    Raises:
        BudgetExceeded: the prompt does not fit the budget
    """
    rules = rules_profile.render()
    context = context_bundle.render()
    code = _with_newline(unit.text)
    text = load_template("translate", templates_dir).substitute(
        rules=rules,
        context_section=_section("Context from already translated code", context),
        chunk_lines=chunk_lines,
        continue_marker=CONTINUE_MARKER,
        unit_id=unit.unit_id,
        c_code=code,
    )
    sections = [("rules", rules)]
    if context:
        sections.append(("context", context))
    sections += [("response", f"respond in chunks of {chunk_lines} lines"),
                 ("scope", "translate only within the range of the C code written below"),
                 ("code", code)]
    return _envelope(PromptKind.TRANSLATE, rules_profile.rules, sections, "translate",
                     unit.unit_id, text, budget)


def number_lines(text: str) -> str:
    lines = split_lines(text)
    width = len(str(len(lines) + 1))
    return "\n".join(f"{n:>{width}} | {line}" for n, line in enumerate(lines, 1))


def truncate_log(log: str, max_tokens: int) -> str:
    """
    Keep the tail of a compiler log within max_tokens

    Whole lines are dropped from the head and replaced by a marker line.
    """
    if estimate_tokens(log) <= max_tokens:
        return log
    lines = split_lines(log)
    kept: List[str] = []
    used = estimate_tokens(TRUNCATION_MARKER.format(count=len(lines)) + "\n")
    for line in reversed(lines):
        cost = estimate_tokens(line + "\n")
        if used + cost > max_tokens:
            break
        kept.append(line)
        used += cost
    kept.reverse()
    dropped = len(lines) - len(kept)
    logger.warning(f"⚠️ Compiler log truncated: {dropped} of {len(lines)} lines dropped")
    return "\n".join([TRUNCATION_MARKER.format(count=dropped)] + kept)


def build_repair_prompt(error_log_raw: str, target_file: str, target_file_text: str,
                        rust_context_bundle: ContextBundle, budget: PromptBudget,
                        unit_id: str = "", chunk_lines: int = CHUNK_LINES,
                        templates_dir: Optional[Union[str, Path]] = None) -> PromptEnvelope:
    """
    Envelope asking for line-range patches of one workspace file

    The raw log is embedded verbatim when it fits, otherwise tail-truncated
    with a marker. The context bundle must hold Rust-side records only.

    Raises:
        ValidationError: empty compiler log
        BudgetExceeded: not even a truncated log fits
    """
    if not error_log_raw.strip():
        raise ValidationError("Repair prompt needs a non-empty compiler log")
    template = load_template("repair", templates_dir)
    context = rust_context_bundle.render()
    fields = dict(
        target_file=target_file,
        context_section=_section("Rust context", context),
        numbered_file=number_lines(target_file_text),
        append_line=count_lines(target_file_text) + 1,
        chunk_lines=chunk_lines,
        continue_marker=CONTINUE_MARKER,
    )
    skeleton = template.substitute(error_log="", **fields)
    log = truncate_log(error_log_raw, budget.available - estimate_tokens(skeleton))
    text = template.substitute(error_log=log, **fields)
    sections = [("compiler log", log)]
    if context:
        sections.append(("context", context))
    sections.append((target_file, target_file_text))
    return _envelope(PromptKind.REPAIR, (), sections, "repair", unit_id, text, budget)


def build_mapping_prompt(c_unit_text: str, rust_unit_text: str, unit_metadata: UnitMetadata,
                         rust_file: str = "", budget: Optional[PromptBudget] = None,
                         templates_dir: Optional[Union[str, Path]] = None) -> PromptEnvelope:
    """Envelope asking which Rust element implements each C element of a unit"""
    listing = "\n".join(f"- {e.name} ({e.kind.value})" for e in unit_metadata.elements) or "(none)"
    text = load_template("map", templates_dir).substitute(
        element_count=len(unit_metadata.elements),
        element_list=listing,
        c_code=_with_newline(c_unit_text),
        rust_file=rust_file,
        rust_code=_with_newline(rust_unit_text),
    )
    sections = [("elements", listing), ("c code", c_unit_text), ("rust code", rust_unit_text)]
    return _envelope(PromptKind.MAP, (), sections, "map", unit_metadata.unit_id, text, budget)


def build_selection_prompt(error_log_raw: str, candidates: Iterable[str], unit_id: str = "",
                           budget: Optional[PromptBudget] = None,
                           templates_dir: Optional[Union[str, Path]] = None) -> PromptEnvelope:
    """Envelope asking which candidate files a repair should touch"""
    listing = "\n".join(f"- {c}" for c in candidates)
    template = load_template("select", templates_dir)
    log = error_log_raw
    if budget is not None:
        skeleton = template.substitute(error_log="", candidates=listing)
        log = truncate_log(error_log_raw, budget.available - estimate_tokens(skeleton))
    text = template.substitute(error_log=log, candidates=listing)
    return _envelope(PromptKind.SELECT, (), [("compiler log", log), ("candidates", listing)],
                     "select", unit_id, text, budget)


def build_format_retry_section(error: FormatError, chunk_lines: int = CHUNK_LINES,
                               templates_dir: Optional[Union[str, Path]] = None) -> Tuple[str, str]:
    """Corrective instruction appended to an envelope after an unusable answer"""
    instructions = []
    if "escape" in error.reason.lower():
        instructions.append("Rewrite the response with correct escape handling: inside JSON strings "
                            "escape backslashes as \\\\, quotes as \\\" and newlines as \\n.")
    if error.truncated:
        instructions.append(f"The response was cut off. Respond in chunks of {chunk_lines} lines, "
                            f"ending every chunk except the last with {CONTINUE_MARKER}.")
    body = load_template("format_retry", templates_dir).substitute(
        reason=error.reason, instruction="\n".join(instructions))
    return "Correction", body


# --- responses -----------------------------------------------------------------------

def _strip_marker(fragment: str) -> str:
    trimmed = fragment.rstrip()
    if trimmed.endswith(CONTINUE_MARKER):
        return trimmed[:-len(CONTINUE_MARKER)]
    return fragment


def _strip_fence(text: str) -> str:
    stripped = text.strip()
    if not stripped.startswith("```"):
        return text
    body = stripped.split("\n", 1)[1] if "\n" in stripped else ""
    if body.rstrip().endswith("```"):
        body = body.rstrip()[:-3]
    return body


def join_parts(parts: Sequence[LlmResponsePart]) -> str:
    """Concatenate fragments in part order with continuation markers removed"""
    ordered = sorted(parts, key=lambda p: p.part_index)
    return _strip_fence("".join(_strip_marker(p.payload_fragment) for p in ordered))


def assemble_multipart(parts: Sequence[LlmResponsePart], schema_id: Optional[str] = None,
                       schemas_dir: Optional[Union[str, Path]] = None) -> Any:
    """
    Parse a possibly multi-part answer into one JSON document

    Raises:
        FormatError: missing parts, undecodable JSON (the decoder message is
            kept, "invalid escape" for bad escapes) or a schema mismatch
    """
    if not parts:
        raise FormatError("empty response", truncated=True)
    expected = max((p.total_parts or 0) for p in parts)
    if expected and len(parts) < expected:
        raise FormatError(f"expected {expected} response parts, received {len(parts)}", truncated=True)

    text = join_parts(parts)
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        end = len(text.rstrip())
        truncated = e.pos >= end or e.msg.startswith("Unterminated string")
        if "escape" in e.msg.lower():
            reason = f"invalid escape at line {e.lineno} column {e.colno}"
        else:
            reason = f"{e.msg} at line {e.lineno} column {e.colno}"
        raise FormatError(reason, truncated=truncated) from e

    if schema_id is not None:
        document = validate_response(document, schema_id, schemas_dir)
    return document
