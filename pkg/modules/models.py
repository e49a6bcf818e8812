"""
Data models and type definitions for the C-to-Rust translation pipeline

This module contains the data classes, enums and type definitions shared by
the analysis, preprocessing, segmentation, prompting and orchestration
modules.
"""

from typing import Any, Dict, List, Optional, Tuple
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction

from .common_utils import split_lines


SCHEMA_VERSION = 1


class ElementKind(Enum):
    """The six code element categories shared by C and Rust"""
    FUNCTION = "function"
    MACRO_FUNCTION = "macro_function"
    TYPE_DEF = "type_def"
    MACRO_VARIABLE = "macro_variable"
    VARIABLE = "variable"
    OTHER = "other"


class RustKind(Enum):
    """Rust side of the element categories"""
    FUNCTION = "function"
    MACRO_FUNCTION = "macro_function"
    STRUCT_OR_ENUM = "struct_or_enum"
    MACRO_VARIABLE = "macro_variable"
    STATIC_OR_CONSTANT = "static_or_constant"
    OTHER = "other"


class UnitStatus(Enum):
    PENDING = "pending"
    TRANSLATED = "translated"
    COMPILED = "compiled"
    FAILED = "failed"
    ABORTED = "aborted"


class ShrinkTrigger(Enum):
    INITIAL = "initial"
    CONTEXT_OVERFLOW = "context_overflow"
    COMPILE_STALL = "compile_stall"


class PromptKind(Enum):
    TRANSLATE = "translate"
    REPAIR = "repair"
    MAP = "map"
    SELECT = "select"


class Confidence(Enum):
    LLM = "llm"
    EXACT_NAME = "exact-name"


class ErrorCategory(Enum):
    """Rust compilation error categories (Attributes listed once)"""
    SYNTAX = "Syntax"
    GENERICS = "Generics"
    LIFETIME = "Lifetime"
    MODULES = "Modules"
    CONSTANTS = "Constants"
    ATTRIBUTES = "Attributes"
    TYPE = "Type"
    TRAITS = "Traits"
    OWNERSHIP = "Ownership"
    NAME_RESOLUTION = "Name Resolution"


# --- c_model ---------------------------------------------------------------

@dataclass(frozen=True)
class CodeElement:
    """A categorized, line-spanned syntactic unit of C source"""
    kind: ElementKind
    name: str
    start_line: int
    end_line: int
    file: str
    is_static: bool = False
    is_declaration: bool = False
    text_hash: str = ""
    aliases: Tuple[str, ...] = ()
    flagged: bool = False

    @property
    def element_id(self) -> str:
        return f"{self.file}:{self.start_line}:{self.name}"

    @property
    def line_count(self) -> int:
        return self.end_line - self.start_line + 1

    @property
    def defined_names(self) -> Tuple[str, ...]:
        return (self.name,) + self.aliases

    def shifted(self, offset: int, file: Optional[str] = None) -> "CodeElement":
        return replace(self, start_line=self.start_line + offset,
                       end_line=self.end_line + offset, file=file or self.file)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.element_id,
            "kind": self.kind.value,
            "name": self.name,
            "start_line": self.start_line,
            "end_line": self.end_line,
            "file": self.file,
            "is_static": self.is_static,
            "is_declaration": self.is_declaration,
            "text_hash": self.text_hash,
            "aliases": list(self.aliases),
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CodeElement":
        return cls(
            kind=ElementKind(data["kind"]),
            name=data["name"],
            start_line=data["start_line"],
            end_line=data["end_line"],
            file=data["file"],
            is_static=data.get("is_static", False),
            is_declaration=data.get("is_declaration", False),
            text_hash=data.get("text_hash", ""),
            aliases=tuple(data.get("aliases", ())),
            flagged=data.get("flagged", False),
        )


@dataclass(frozen=True)
class ConditionalBlock:
    """An #if-family region, from the opening directive to its #endif"""
    file: str
    start_line: int
    end_line: int
    guard_symbols: Tuple[str, ...]
    contained_elements: Tuple[str, ...] = ()
    is_include_guard: bool = False

    def contains_line(self, line: int) -> bool:
        return self.start_line <= line <= self.end_line

    def to_dict(self) -> Dict[str, Any]:
        return {
            "file": self.file,
            "start_line": self.start_line,
            "end_line": self.end_line,
            "guard_symbols": list(self.guard_symbols),
            "contained_elements": list(self.contained_elements),
            "is_include_guard": self.is_include_guard,
        }


@dataclass(frozen=True)
class IncludeEdge:
    includer: str
    included: str
    line: int
    is_system: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"includer": self.includer, "included": self.included,
                "line": self.line, "is_system": self.is_system}


@dataclass
class IncludeGraph:
    root: str
    nodes: List[str]
    edges: List[IncludeEdge]
    missing: List[Tuple[str, str]] = field(default_factory=list)
    cycles: List[List[str]] = field(default_factory=list)

    def quoted_edges_from(self, includer: str) -> List[IncludeEdge]:
        return [e for e in self.edges if e.includer == includer and not e.is_system]

    def resolve(self, includer: str, line: int) -> Optional[str]:
        for edge in self.edges:
            if edge.includer == includer and edge.line == line and not edge.is_system:
                return edge.included
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nodes": list(self.nodes),
            "edges": [e.to_dict() for e in self.edges],
            "missing": [{"includer": a, "name": b} for a, b in self.missing],
            "cycles": [list(c) for c in self.cycles],
        }


@dataclass
class CallGraph:
    nodes: List[str]
    edges: Dict[str, List[str]]
    scc_groups: List[List[str]]
    ambiguous: List[str] = field(default_factory=list)

    def edge_pairs(self) -> List[Tuple[str, str]]:
        return [(src, dst) for src in self.nodes for dst in self.edges.get(src, [])]

    def scc_of(self, node: str) -> List[str]:
        for group in self.scc_groups:
            if node in group:
                return group
        return [node]

    def to_dict(self) -> Dict[str, Any]:
        return {"nodes": list(self.nodes), "edges": {k: list(v) for k, v in self.edges.items()},
                "scc_groups": [list(g) for g in self.scc_groups], "ambiguous": list(self.ambiguous)}


@dataclass
class ProjectAnalysis:
    """Everything the scanner learns about a project in one pass"""
    root: str
    sources: Dict[str, str]
    elements: Dict[str, List[CodeElement]]
    blocks: Dict[str, List[ConditionalBlock]]
    include_graph: IncludeGraph
    defined_macros: List[str] = field(default_factory=list)

    @property
    def files(self) -> List[str]:
        return sorted(self.sources)

    @property
    def all_elements(self) -> List[CodeElement]:
        return [e for f in self.files for e in self.elements.get(f, [])]

    @property
    def all_blocks(self) -> List[ConditionalBlock]:
        return [b for f in self.files for b in self.blocks.get(f, [])]

    @property
    def total_loc(self) -> int:
        return sum(len(split_lines(t)) for t in self.sources.values())

    def kind_counts(self) -> Dict[str, int]:
        counts = {k.value: 0 for k in ElementKind}
        for e in self.all_elements:
            counts[e.kind.value] += 1
        return counts

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "files": [{"path": f, "loc": len(split_lines(self.sources[f])),
                       "elements": len(self.elements.get(f, []))} for f in self.files],
            "total_loc": self.total_loc,
            "element_counts": self.kind_counts(),
            "elements": [e.to_dict() for e in self.all_elements],
            "conditional_blocks": [b.to_dict() for b in self.all_blocks],
            "include_graph": self.include_graph.to_dict(),
        }


@dataclass
class DeclPairing:
    """Result of pairing prototypes/externs with their definitions"""
    pairs: List[Tuple[CodeElement, CodeElement]]
    external: List[CodeElement]

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


# --- preprocess ------------------------------------------------------------

@dataclass(frozen=True)
class OriginRange:
    """Merged-line range mapped back to its original file and lines"""
    out_start: int
    out_end: int
    file: Optional[str]
    orig_start: Optional[int]
    orig_end: Optional[int]
    synthetic: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"out": [self.out_start, self.out_end], "file": self.file,
                "orig": None if self.orig_start is None else [self.orig_start, self.orig_end],
                "synthetic": self.synthetic}


@dataclass(frozen=True)
class FeatureRecord:
    macro_name: str
    originally_defined: bool
    file: str
    line: int

    @property
    def feature_name(self) -> str:
        return self.macro_name.lower()

    def to_dict(self) -> Dict[str, Any]:
        return {"macro_name": self.macro_name, "originally_defined": self.originally_defined,
                "feature": self.feature_name,
                "source_location": {"file": self.file, "line": self.line}}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureRecord":
        loc = data.get("source_location", {})
        return cls(data["macro_name"], data["originally_defined"], loc.get("file", ""), loc.get("line", 0))


@dataclass
class ModuleSource:
    """One merged, reordered C compilation module destined to become one Rust module"""
    name: str
    text: str
    elements: List[CodeElement]
    origin_map: List[OriginRange]
    feature_defines: List[str] = field(default_factory=list)
    annotations: List[str] = field(default_factory=list)

    @property
    def lines(self) -> List[str]:
        return split_lines(self.text)

    @property
    def file_name(self) -> str:
        return f"{self.name}.c"


# --- segment ---------------------------------------------------------------

@dataclass
class TranslationUnit:
    module: str
    ordinal: int
    start_line: int
    end_line: int
    element_ids: List[str]
    text: str
    est_tokens: int
    status: UnitStatus = UnitStatus.PENDING
    oversized: bool = False

    @property
    def unit_id(self) -> str:
        return f"{self.module}.{self.ordinal}"

    @property
    def line_count(self) -> int:
        return self.end_line - self.start_line + 1

    @property
    def rust_path(self) -> str:
        return f"src/{self.module}/unit{self.ordinal}.rs"

    def to_dict(self) -> Dict[str, Any]:
        return {"id": [self.module, self.ordinal], "line_range": [self.start_line, self.end_line],
                "element_ids": list(self.element_ids), "est_tokens": self.est_tokens,
                "status": self.status.value, "oversized": self.oversized}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], text: str = "") -> "TranslationUnit":
        module, ordinal = data["id"]
        start, end = data["line_range"]
        return cls(module=module, ordinal=ordinal, start_line=start, end_line=end,
                   element_ids=list(data.get("element_ids", [])), text=text,
                   est_tokens=data.get("est_tokens", 0), status=UnitStatus(data["status"]),
                   oversized=data.get("oversized", False))


@dataclass
class SegmentPlan:
    cap_lines: int
    history: List[Tuple[int, ShrinkTrigger]]
    units: List[TranslationUnit]
    floor_lines: int = 30

    def units_of(self, module: str) -> List[TranslationUnit]:
        return sorted((u for u in self.units if u.module == module), key=lambda u: u.ordinal)

    def unit(self, unit_id: str) -> TranslationUnit:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise KeyError(unit_id)

    def to_dict(self) -> Dict[str, Any]:
        return {"schema": SCHEMA_VERSION, "cap_lines": self.cap_lines, "floor_lines": self.floor_lines,
                "history": [{"cap": c, "trigger": t.value} for c, t in self.history],
                "units": [u.to_dict() for u in self.units]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SegmentPlan":
        return cls(cap_lines=data["cap_lines"],
                   history=[(h["cap"], ShrinkTrigger(h["trigger"])) for h in data["history"]],
                   units=[TranslationUnit.from_dict(u) for u in data["units"]],
                   floor_lines=data.get("floor_lines", 30))


@dataclass(frozen=True)
class AtomGroup:
    """An indivisible run of module lines: element, conditional block or SCC"""
    start_line: int
    end_line: int
    element_ids: Tuple[str, ...]

    @property
    def line_count(self) -> int:
        return self.end_line - self.start_line + 1


# --- metadata --------------------------------------------------------------

@dataclass
class ElementSummary:
    kind: ElementKind
    name: str
    signature_or_definition: str
    start_line: int
    end_line: int

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "name": self.name,
                "signature_or_definition": self.signature_or_definition,
                "start_line": self.start_line, "end_line": self.end_line}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ElementSummary":
        return cls(ElementKind(data["kind"]), data["name"], data["signature_or_definition"],
                   data["start_line"], data["end_line"])


@dataclass
class UnitMetadata:
    unit_id: str
    elements: List[ElementSummary]
    imports_needed: List[str]
    aliases: Dict[str, str] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    def element(self, name: str) -> Optional[ElementSummary]:
        for e in self.elements:
            if e.name == name:
                return e
        target = self.aliases.get(name)
        if target is not None:
            return self.element(target)
        return None

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.extra)
        data.update({"unit_id": self.unit_id, "elements": [e.to_dict() for e in self.elements],
                     "imports_needed": list(self.imports_needed), "aliases": dict(self.aliases)})
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "UnitMetadata":
        known = {"unit_id", "elements", "imports_needed", "aliases"}
        return cls(unit_id=data["unit_id"],
                   elements=[ElementSummary.from_dict(e) for e in data["elements"]],
                   imports_needed=list(data.get("imports_needed", [])),
                   aliases=dict(data.get("aliases", {})),
                   extra={k: v for k, v in data.items() if k not in known})


@dataclass
class RustElementRecord:
    kind: RustKind
    name: str
    signature: str
    file: str
    unit_id: str
    definition: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "name": self.name, "signature": self.signature,
                "file": self.file, "unit_id": self.unit_id, "definition": self.definition}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RustElementRecord":
        return cls(RustKind(data["kind"]), data["name"], data["signature"], data["file"],
                   data["unit_id"], data.get("definition", ""))


@dataclass
class MappingEntry:
    c_name: str
    c_unit: str
    rust_name: str
    rust_file: str
    confidence: Confidence
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"c_element": {"name": self.c_name, "unit_id": self.c_unit},
                "rust_element": {"name": self.rust_name, "file": self.rust_file},
                "confidence": self.confidence.value, "note": self.note}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MappingEntry":
        return cls(data["c_element"]["name"], data["c_element"]["unit_id"],
                   data["rust_element"]["name"], data["rust_element"]["file"],
                   Confidence(data["confidence"]), data.get("note", ""))


@dataclass
class Tombstone:
    c_name: str
    c_unit: str
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"c_element": {"name": self.c_name, "unit_id": self.c_unit}, "note": self.note}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Tombstone":
        return cls(data["c_element"]["name"], data["c_element"]["unit_id"], data.get("note", ""))


@dataclass
class ContextItem:
    name: str
    kind: str
    text: str
    source_note: str
    priority: int


@dataclass
class ContextBundle:
    items: List[ContextItem] = field(default_factory=list)
    dropped: List[str] = field(default_factory=list)

    @property
    def names(self) -> List[str]:
        return [i.name for i in self.items]

    def render(self) -> str:
        return "\n\n".join(f"// {i.source_note}\n{i.text}" for i in self.items)

    def __len__(self) -> int:
        return len(self.items)


# --- prompts / backend -----------------------------------------------------

@dataclass(frozen=True)
class PromptEnvelope:
    kind: PromptKind
    system_rules: Tuple[str, ...]
    body_sections: Tuple[Tuple[str, str], ...]
    response_schema_id: str
    est_tokens: int
    unit_id: str
    text: str

    def with_section(self, label: str, body: str, est_tokens: int) -> "PromptEnvelope":
        return replace(self, body_sections=self.body_sections + ((label, body),),
                       text=f"{self.text}\n\n## {label}\n{body}", est_tokens=est_tokens)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "unit_id": self.unit_id,
                "response_schema_id": self.response_schema_id, "est_tokens": self.est_tokens,
                "text": self.text}


@dataclass(frozen=True)
class LlmResponsePart:
    part_index: int
    payload_fragment: str
    total_parts: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"part_index": self.part_index, "total_parts": self.total_parts,
                "payload_fragment": self.payload_fragment}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LlmResponsePart":
        return cls(data["part_index"], data["payload_fragment"], data.get("total_parts"))


@dataclass
class PromptBudget:
    context_window: int
    reserved_output: int
    memory_tokens: int = 0

    @property
    def available(self) -> int:
        return self.context_window - self.reserved_output - self.memory_tokens


@dataclass
class BackendProfile:
    name: str
    context_window: int
    output_limit: int
    model: str = ""
    base_url: Optional[str] = None
    api_key_env: str = "OPENAI_API_KEY"
    provider: str = "openai"
    api_version: Optional[str] = None
    timeout: float = 120.0
    max_retries: int = 5
    backoff_seconds: float = 2.0
    response_text_path: str = "/choices/0/message/content"

    def __post_init__(self):
        if self.context_window <= 0:
            raise ValueError(f"Profile {self.name}: context_window must be positive")
        if self.output_limit > self.context_window:
            raise ValueError(f"Profile {self.name}: output_limit exceeds context_window")


@dataclass
class Turn:
    prompt: str
    response: str
    est_tokens: int


@dataclass
class ConversationMemory:
    unit_id: str
    turns: List[Turn] = field(default_factory=list)

    @property
    def est_tokens_total(self) -> int:
        return sum(t.est_tokens for t in self.turns)

    def to_dict(self) -> Dict[str, Any]:
        return {"unit_id": self.unit_id, "est_tokens_total": self.est_tokens_total,
                "turns": [{"prompt": t.prompt, "response": t.response, "est_tokens": t.est_tokens}
                          for t in self.turns]}


# --- orchestrator ----------------------------------------------------------

@dataclass(frozen=True)
class RepairPatch:
    file: str
    start_line: int
    end_line: int
    replacement: str

    @property
    def replacement_lines(self) -> List[str]:
        return self.replacement.splitlines()


@dataclass
class Diagnostic:
    code: Optional[str]
    message: str
    file: Optional[str]
    line: Optional[int]
    level: str = "error"
    category: Optional[ErrorCategory] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "file": self.file, "line": self.line,
                "level": self.level, "category": self.category.value if self.category else None}


@dataclass
class CompileReport:
    success: bool
    raw_log: str
    diagnostics: List[Diagnostic]
    duration: float = 0.0

    @property
    def errors(self) -> List[Diagnostic]:
        return [d for d in self.diagnostics if d.level == "error"]

    @property
    def error_files(self) -> List[str]:
        seen: List[str] = []
        for d in self.errors:
            if d.file and d.file not in seen:
                seen.append(d.file)
        return seen

    def to_dict(self) -> Dict[str, Any]:
        return {"success": self.success, "duration": round(self.duration, 3),
                "diagnostics": [d.to_dict() for d in self.diagnostics]}


@dataclass
class RepairAttemptLog:
    unit_id: str
    attempt: int
    files_patched: List[str]
    errors_before: Dict[str, int]
    errors_after: Dict[str, int]

    def to_dict(self) -> Dict[str, Any]:
        return {"unit_id": self.unit_id, "attempt": self.attempt, "files_patched": list(self.files_patched),
                "errors_before": dict(self.errors_before), "errors_after": dict(self.errors_after)}


@dataclass
class ModuleCoverage:
    module: str
    lines_total: int
    lines_compiled: int
    elements_total: int
    elements_covered: int

    @property
    def lcov(self) -> Fraction:
        return Fraction(self.lines_compiled, self.lines_total) if self.lines_total else Fraction(0)

    @property
    def elemcov(self) -> Fraction:
        return Fraction(self.elements_covered, self.elements_total) if self.elements_total else Fraction(0)

    def to_dict(self) -> Dict[str, Any]:
        return {"module": self.module, "lines_total": self.lines_total, "lines_compiled": self.lines_compiled,
                "elements_total": self.elements_total, "elements_covered": self.elements_covered,
                "lcov": round(float(self.lcov), 3), "elemcov": round(float(self.elemcov), 3)}


@dataclass
class CoverageReport:
    modules: List[ModuleCoverage]
    error_histogram: Dict[str, int] = field(default_factory=dict)
    aborted_units: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    test_hook_status: Optional[int] = None

    @property
    def lines_total(self) -> int:
        return sum(m.lines_total for m in self.modules)

    @property
    def elements_total(self) -> int:
        return sum(m.elements_total for m in self.modules)

    @property
    def lcov(self) -> Fraction:
        total = self.lines_total
        return Fraction(sum(m.lines_compiled for m in self.modules), total) if total else Fraction(0)

    @property
    def elemcov(self) -> Fraction:
        total = self.elements_total
        return Fraction(sum(m.elements_covered for m in self.modules), total) if total else Fraction(0)

    def to_dict(self) -> Dict[str, Any]:
        return {"schema": SCHEMA_VERSION,
                "project": {"lcov": round(float(self.lcov), 3), "elemcov": round(float(self.elemcov), 3),
                            "lcov_exact": str(self.lcov), "elemcov_exact": str(self.elemcov)},
                "modules": [m.to_dict() for m in self.modules],
                "error_histogram": dict(self.error_histogram),
                "aborted_units": list(self.aborted_units),
                "notes": list(self.notes),
                "test_hook_status": self.test_hook_status}
