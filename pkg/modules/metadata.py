"""
Translation metadata store

Per-unit records of the C elements a unit defines and the names it needs
from elsewhere, the Rust items parsed from compiled unit files, and the
C-to-Rust mapping. The store is what context-supplementing prompts are
built from and what element coverage is measured against.
"""

import copy
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .c_model import element_text
from .common_utils import canonical_json, dedupe, read_json, snake_case, atomic_write
from .error_handling import ScanFailure, UnknownCElement
from .models import (
    SCHEMA_VERSION, CodeElement, Confidence, ContextBundle, ContextItem, ElementKind,
    ElementSummary, MappingEntry, ModuleSource, RustElementRecord, RustKind, SegmentPlan,
    Tombstone, TranslationUnit, UnitMetadata,
)
from .prompts import estimate_tokens
from .text_processor import identifiers, mask_c, mask_rust

logger = logging.getLogger(__name__)

# context priorities, lowest number kept longest
PRIORITY_FUNCTION = 0
PRIORITY_TYPE = 1
PRIORITY_OTHER = 2


# --- C side -------------------------------------------------------------------

def function_signature(text: str) -> str:
    """Declaration part of a C function definition, body replaced by `;`"""
    masked = mask_c(text)
    brace = masked.find('{')
    if brace == -1:
        return text.strip()
    return text[:brace].strip() + ";"


def summarize_element(element: CodeElement, lines: Sequence[str]) -> ElementSummary:
    text = element_text(lines, element).rstrip("\n")
    if element.kind == ElementKind.FUNCTION:
        text = function_signature(text)
    return ElementSummary(kind=element.kind, name=element.name, signature_or_definition=text,
                          start_line=element.start_line, end_line=element.end_line)


def build_project_index(plan: SegmentPlan, modules: Mapping[str, ModuleSource]) -> Dict[str, str]:
    """Defined C name -> id of the first unit defining it"""
    index: Dict[str, str] = {}
    for unit in plan.units:
        by_id = {e.element_id: e for e in modules[unit.module].elements}
        for eid in unit.element_ids:
            element = by_id.get(eid)
            if element is None or element.is_declaration:
                continue
            for name in element.defined_names:
                index.setdefault(name, unit.unit_id)
    return index


def emit_unit_metadata(unit: TranslationUnit, module_elements: Sequence[CodeElement],
                       project_index: Mapping[str, str],
                       module_lines: Optional[Sequence[str]] = None) -> UnitMetadata:
    """
    Metadata record of one unit

    Functions are summarized to signatures; every other element keeps its
    full definition. imports_needed lists, in order of first use, the names
    the unit references that other units define.
    """
    by_id = {e.element_id: e for e in module_elements}
    members = [by_id[eid] for eid in unit.element_ids if eid in by_id]
    if module_lines is None:
        # unit text holds the lines start_line..end_line
        padding = [""] * (unit.start_line - 1)
        module_lines = padding + unit.text.split("\n")
    elements = [summarize_element(e, module_lines) for e in members]

    local = {name for e in members if not e.is_declaration for name in e.defined_names}
    aliases = {alias: e.name for e in members for alias in e.aliases}
    imports = [name for name in dedupe(identifiers(mask_c(unit.text)))
               if name not in local and project_index.get(name, unit.unit_id) != unit.unit_id]
    return UnitMetadata(unit_id=unit.unit_id, elements=elements, imports_needed=imports, aliases=aliases)


# --- Rust side ------------------------------------------------------------------

RUST_TOKEN_RE = re.compile(r'[A-Za-z_]\w*!?')
BLOCK_KEYWORDS = {"fn", "struct", "enum", "union", "impl", "trait", "mod", "macro_rules!"}
QUALIFIERS = {"pub", "crate", "super", "self", "in", "unsafe", "async", "extern", "default"}


def _skip_attributes(masked: str, start: int) -> int:
    """Offset of the first character after the leading #[...] attributes"""
    i = start
    while True:
        while i < len(masked) and masked[i].isspace():
            i += 1
        if not masked.startswith('#[', i):
            return i
        depth = 0
        for j in range(i + 1, len(masked)):
            if masked[j] == '[':
                depth += 1
            elif masked[j] == ']':
                depth -= 1
                if depth == 0:
                    i = j + 1
                    break
        else:
            return i


def _is_block_head(head: str) -> bool:
    tokens = RUST_TOKEN_RE.findall(head)
    return bool(BLOCK_KEYWORDS.intersection(tokens)) or (bool(tokens) and tokens[0] == "extern") \
        or head.rstrip().endswith("!")


def rust_item_spans(masked: str, file: str = "") -> List[Tuple[int, int]]:
    """
    (start, end) offsets of the top-level items of masked Rust text

    Inner attributes are skipped; outer attributes belong to the next item.

    Raises:
        ScanFailure: unbalanced delimiters or an unterminated item
    """
    spans = []
    depth = 0
    start: Optional[int] = None
    block_item = False
    for i, c in enumerate(masked):
        if start is None:
            if c.isspace():
                continue
            start, block_item = i, False
        if c in '([{':
            if c == '{' and depth == 0 and not block_item:
                block_item = _is_block_head(masked[_skip_attributes(masked, start):i])
            depth += 1
        elif c in ')]}':
            depth -= 1
            if depth < 0:
                raise ScanFailure(file, f"unbalanced '{c}' at offset {i}")
            if depth == 0 and c == '}' and block_item:
                spans.append((start, i + 1))
                start = None
            elif depth == 0 and c == ']' and masked.startswith('#!', start):
                start = None
        elif c == ';' and depth == 0:
            spans.append((start, i + 1))
            start = None
    if depth != 0:
        raise ScanFailure(file, "unbalanced braces")
    if start is not None:
        raise ScanFailure(file, "unterminated item at end of file")
    return spans


def _item_keyword(tokens: List[str]) -> Tuple[Optional[str], Optional[str]]:
    """(keyword, name) of an item from its head tokens"""
    for k, token in enumerate(tokens):
        if token in QUALIFIERS:
            if token == "extern" and k + 1 < len(tokens) and tokens[k + 1] == "crate":
                return "extern crate", None
            continue
        if token == "const" and k + 1 < len(tokens) and tokens[k + 1] in ("fn", "unsafe", "async", "extern"):
            continue
        following = tokens[k + 1:]
        if token == "static" and following and following[0] == "mut":
            following = following[1:]
        return token, following[0] if following else None
    return None, None


def _rust_kind(keyword: str, masked_item: str) -> RustKind:
    if keyword == "fn":
        return RustKind.FUNCTION
    if keyword in ("struct", "enum", "union", "type"):
        return RustKind.STRUCT_OR_ENUM
    if keyword in ("static", "const"):
        return RustKind.STATIC_OR_CONSTANT
    if keyword == "macro_rules!":
        return RustKind.MACRO_FUNCTION if '$' in masked_item else RustKind.MACRO_VARIABLE
    return RustKind.OTHER


def parse_rust_elements(rust_source: str, file: str, unit_id: str = "") -> List[RustElementRecord]:
    """
    Top-level items of a compiled Rust file

    Signatures keep attribute lines and stop before the body; constants,
    statics and macros keep their whole text as signature.

    Raises:
        ScanFailure: delimiters do not balance
    """
    masked = mask_rust(rust_source)
    records = []
    for start, end in rust_item_spans(masked, file):
        body_start = _skip_attributes(masked, start)
        item_masked = masked[body_start:end]
        head_end = item_masked.find('{')
        head = item_masked if head_end == -1 else item_masked[:head_end]
        keyword, name = _item_keyword(RUST_TOKEN_RE.findall(head))
        if keyword in (None, "use", "extern crate") or (keyword == "mod" and head_end == -1):
            continue
        text = rust_source[start:end]
        kind = _rust_kind(keyword, item_masked)
        if keyword == "impl":
            name = " ".join(head.split()[1:])
        if kind in (RustKind.FUNCTION, RustKind.STRUCT_OR_ENUM, RustKind.OTHER):
            cut = body_start + head_end if head_end != -1 else end
            signature = rust_source[start:cut].rstrip().rstrip(';').rstrip()
        else:
            signature = text.strip()
        records.append(RustElementRecord(kind=kind, name=name or "", signature=signature,
                                         file=file, unit_id=unit_id, definition=text))
    return records


# --- store ----------------------------------------------------------------------

def _key(unit_id: str, name: str) -> str:
    return f"{unit_id}:{name}"


@dataclass
class MetadataStore:
    """
    `<out>/metadata.json`: units, Rust elements, mappings and tombstones

    Single writer (the orchestrator); readers take a snapshot().
    """
    units: Dict[str, UnitMetadata] = field(default_factory=dict)
    rust_elements: Dict[str, List[RustElementRecord]] = field(default_factory=dict)
    mappings: Dict[str, MappingEntry] = field(default_factory=dict)
    tombstones: Dict[str, Tombstone] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    # units

    def add_unit(self, metadata: UnitMetadata) -> None:
        self.units[metadata.unit_id] = metadata

    def c_element(self, name: str) -> Optional[Tuple[str, ElementSummary]]:
        for unit_id, meta in self.units.items():
            summary = meta.element(name)
            if summary is not None:
                return unit_id, summary
        return None

    # rust side

    def track_file(self, path: str, unit_id: str) -> None:
        self.files.setdefault(path, unit_id)

    def set_rust_elements(self, path: str, records: List[RustElementRecord]) -> None:
        """Replace the records of one Rust file (latest parse wins)"""
        self.rust_elements[path] = list(records)

    def drop_file(self, path: str) -> None:
        self.rust_elements.pop(path, None)
        self.files.pop(path, None)

    def rust_element(self, name: str, file: Optional[str] = None) -> Optional[RustElementRecord]:
        paths = [file] if file in self.rust_elements else list(self.rust_elements)
        for path in paths:
            for record in self.rust_elements.get(path, []):
                if record.name == name:
                    return record
        return None

    # mappings

    def mapping_for(self, c_name: str, unit_id: Optional[str] = None) -> Optional[MappingEntry]:
        if unit_id is not None:
            return self.mappings.get(_key(unit_id, c_name))
        for entry in self.mappings.values():
            if entry.c_name == c_name:
                return entry
        return None

    def set_mapping(self, entry: MappingEntry) -> None:
        key = _key(entry.c_unit, entry.c_name)
        self.tombstones.pop(key, None)
        self.mappings[key] = entry

    def set_tombstone(self, tombstone: Tombstone) -> None:
        key = _key(tombstone.c_unit, tombstone.c_name)
        self.mappings.pop(key, None)
        self.tombstones[key] = tombstone

    def covered_elements(self, unit_id: str) -> int:
        meta = self.units.get(unit_id)
        if meta is None:
            return 0
        return sum(1 for e in meta.elements if _key(unit_id, e.name) in self.mappings)

    # persistence

    def snapshot(self) -> "MetadataStore":
        return copy.deepcopy(self)

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.extra)
        data.update({
            "schema": SCHEMA_VERSION,
            "units": [self.units[k].to_dict() for k in sorted(self.units)],
            "rust_elements": [r.to_dict() for path in sorted(self.rust_elements)
                              for r in self.rust_elements[path]],
            "mappings": [self.mappings[k].to_dict() for k in sorted(self.mappings)],
            "tombstones": [self.tombstones[k].to_dict() for k in sorted(self.tombstones)],
            "files": dict(sorted(self.files.items())),
        })
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetadataStore":
        known = {"schema", "units", "rust_elements", "mappings", "tombstones", "files"}
        store = cls(extra={k: v for k, v in data.items() if k not in known})
        for unit in data.get("units", []):
            store.add_unit(UnitMetadata.from_dict(unit))
        for record in data.get("rust_elements", []):
            parsed = RustElementRecord.from_dict(record)
            store.rust_elements.setdefault(parsed.file, []).append(parsed)
        for entry in data.get("mappings", []):
            store.set_mapping(MappingEntry.from_dict(entry))
        for tomb in data.get("tombstones", []):
            store.set_tombstone(Tombstone.from_dict(tomb))
        store.files = dict(data.get("files", {}))
        return store

    def dumps(self) -> str:
        return canonical_json(self.to_dict())

    def save(self, path: Union[str, Path]) -> None:
        atomic_write(path, self.dumps())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MetadataStore":
        path = Path(path)
        if not path.exists():
            return cls()
        return cls.from_dict(read_json(path))


# --- context ----------------------------------------------------------------------

def _priority(kind: Union[ElementKind, RustKind]) -> int:
    if kind in (ElementKind.FUNCTION, ElementKind.MACRO_FUNCTION, RustKind.FUNCTION, RustKind.MACRO_FUNCTION):
        return PRIORITY_FUNCTION
    if kind in (ElementKind.TYPE_DEF, RustKind.STRUCT_OR_ENUM):
        return PRIORITY_TYPE
    return PRIORITY_OTHER


def _rust_item(name: str, record: RustElementRecord) -> ContextItem:
    text = record.signature if record.kind == RustKind.FUNCTION else record.definition.strip()
    return ContextItem(name=name, kind=record.kind.value, text=text,
                       source_note=f"defined in {record.file}", priority=_priority(record.kind))


def select_context(unit_metadata: UnitMetadata, store: MetadataStore,
                   budget_tokens: Optional[int] = None, rust_only: bool = False) -> ContextBundle:
    """
    Signatures and definitions of the names a unit imports

    A mapped name contributes its Rust item; an unmapped one its C summary,
    unless rust_only (repair prompts), in which case only a Rust item of the
    same or snake_case name is used. Over budget, functions outlast types,
    which outlast everything else.
    """
    items: List[ContextItem] = []
    for name in unit_metadata.imports_needed:
        mapping = store.mapping_for(name)
        record = store.rust_element(mapping.rust_name, mapping.rust_file) if mapping else None
        if record is None and rust_only:
            record = store.rust_element(name) or store.rust_element(snake_case(name))
        if record is not None:
            items.append(_rust_item(name, record))
            continue
        if rust_only:
            continue
        found = store.c_element(name)
        if found is None:
            continue
        unit_id, summary = found
        items.append(ContextItem(name=name, kind=summary.kind.value, text=summary.signature_or_definition,
                                 source_note=f"defined in C unit {unit_id} (not yet translated)",
                                 priority=_priority(summary.kind)))

    bundle = ContextBundle(items=items)
    if budget_tokens is None or estimate_tokens(bundle.render()) <= budget_tokens:
        return bundle

    ranked = sorted(range(len(items)), key=lambda i: (items[i].priority, i))
    kept = set(ranked)
    for i in reversed(ranked):
        if estimate_tokens(ContextBundle([items[k] for k in sorted(kept)]).render()) <= budget_tokens:
            break
        kept.discard(i)
    dropped = [items[i].name for i in range(len(items)) if i not in kept]
    logger.warning(f"⚠️ {unit_metadata.unit_id}: context truncated, dropped {', '.join(dropped)}")
    return ContextBundle(items=[items[i] for i in sorted(kept)], dropped=dropped)


# --- mapping ----------------------------------------------------------------------

def record_mapping(store: MetadataStore, c_unit: str, rust_files: Sequence[str],
                   mapping_response: Mapping[str, Any]) -> List[str]:
    """
    Store the C-to-Rust correspondence reported for one compiled unit

    Identical names get confidence exact-name, other reported pairs llm;
    removed elements get a tombstone. C elements the answer leaves out are
    matched to a Rust item of the same (or snake_case) name when one exists.

    Returns:
        Names skipped because the unit does not define them
    """
    meta = store.units[c_unit]
    known = {e.name for e in meta.elements}
    rust_names = {r.name: r for path in rust_files for r in store.rust_elements.get(path, [])}
    skipped: List[str] = []
    reported = set()

    for entry in mapping_response.get("mappings", []):
        c_name = meta.aliases.get(entry["c_name"], entry["c_name"])
        if c_name not in known:
            logger.warning(f"⚠️ {UnknownCElement(entry['c_name'], c_unit)}; entry skipped")
            skipped.append(entry["c_name"])
            continue
        reported.add(c_name)
        rust_name = entry.get("rust_name")
        if entry.get("removed") or not rust_name:
            store.set_tombstone(Tombstone(c_name, c_unit, entry.get("note", "removed by translation")))
            continue
        record = rust_names.get(rust_name) or store.rust_element(rust_name)
        if record is None:
            logger.warning(f"⚠️ {c_unit}: Rust item '{rust_name}' for '{c_name}' not found; mapping skipped")
            continue
        confidence = Confidence.EXACT_NAME if rust_name == c_name else Confidence.LLM
        store.set_mapping(MappingEntry(c_name, c_unit, rust_name, record.file, confidence, entry.get("note", "")))

    for element in meta.elements:
        if element.name in reported:
            continue
        record = rust_names.get(element.name) or rust_names.get(snake_case(element.name))
        if record is not None:
            store.set_mapping(MappingEntry(element.name, c_unit, record.name, record.file,
                                           Confidence.EXACT_NAME, "matched by name"))
    return skipped
