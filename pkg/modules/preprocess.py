"""
Preprocessing of C projects into translation-ready modules

Each root .c file becomes one ModuleSource: project headers are inlined
once, colliding statics get unique names, declarations with a local
definition are removed, feature macros used only by conditional
compilation are extracted, and elements are reordered so that everything
is defined before it is referenced. Every transformation keeps the
origin map (merged line -> original file and line) current.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from .c_model import (
    atom_spans, build_reference_graph, detect_conditional_blocks, include_guard_lines,
    include_lines, normalize_newlines, pair_decls_defs, resolve_quoted, scan_elements,
)
from .common_utils import atomic_write, dedupe, join_lines, read_json, rust_identifier, split_lines, write_json
from .error_handling import MissingHeader, safe_operation
from .file_search import root_c_files
from .graph_utils import forward_references, stable_topological_groups, strongly_connected_components
from .models import (
    SCHEMA_VERSION, CodeElement, ConditionalBlock, ElementKind, FeatureRecord, IncludeGraph,
    ModuleSource, OriginRange, ProjectAnalysis,
)
from .text_processor import (
    identifiers, is_valueless_define, iter_directives, mask_c, replace_identifier,
)

logger = logging.getLogger(__name__)

Origin = Optional[Tuple[str, int]]


@dataclass
class PreprocessResult:
    """Modules in translation order plus the project feature records"""
    modules: List[ModuleSource]
    features: Dict[str, List[FeatureRecord]] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def order(self) -> List[str]:
        return [m.name for m in self.modules]

    def module(self, name: str) -> ModuleSource:
        for m in self.modules:
            if m.name == name:
                return m
        raise KeyError(name)

    def all_features(self) -> List[FeatureRecord]:
        """Feature records merged across modules; defined anywhere wins"""
        merged: Dict[str, FeatureRecord] = {}
        for name in self.order:
            for record in self.features.get(name, []):
                current = merged.get(record.macro_name)
                if current is None or (record.originally_defined and not current.originally_defined):
                    merged[record.macro_name] = record
        return [merged[k] for k in sorted(merged)]


# --- origin bookkeeping -----------------------------------------------------

def expand_origins(module: ModuleSource) -> List[Origin]:
    """One origin per module line; None for synthetic lines"""
    origins: List[Origin] = []
    for r in module.origin_map:
        for offset in range(r.out_end - r.out_start + 1):
            if r.synthetic or r.file is None:
                origins.append(None)
            else:
                origins.append((r.file, r.orig_start + offset))
    line_count = len(module.lines)
    if len(origins) < line_count:
        origins.extend([None] * (line_count - len(origins)))
    return origins[:line_count]


def compress_origins(origins: Sequence[Origin]) -> List[OriginRange]:
    ranges: List[OriginRange] = []
    for out_line, origin in enumerate(origins, 1):
        if ranges:
            last = ranges[-1]
            if origin is None and last.synthetic:
                ranges[-1] = replace(last, out_end=out_line)
                continue
            if origin is not None and not last.synthetic and last.file == origin[0] \
                    and last.orig_end + 1 == origin[1]:
                ranges[-1] = replace(last, out_end=out_line, orig_end=origin[1])
                continue
        if origin is None:
            ranges.append(OriginRange(out_line, out_line, None, None, None, synthetic=True))
        else:
            ranges.append(OriginRange(out_line, out_line, origin[0], origin[1], origin[1]))
    return ranges


def origin_of(module: ModuleSource, line: int) -> Origin:
    for r in module.origin_map:
        if r.out_start <= line <= r.out_end:
            if r.synthetic or r.file is None:
                return None
            return r.file, r.orig_start + (line - r.out_start)
    return None


def rebuild_module(module: ModuleSource, lines: Sequence[str], origins: Sequence[Origin]) -> ModuleSource:
    """New module text with rescanned elements and a recompressed origin map"""
    text = join_lines(lines)
    return replace(module, text=text, elements=scan_elements(text, module.file_name),
                   origin_map=compress_origins(origins))


def module_blocks(module: ModuleSource) -> List[ConditionalBlock]:
    return detect_conditional_blocks(module.text, module.file_name, module.elements)


# --- merging ----------------------------------------------------------------

def merge_includes(root_c_file: str, include_graph: IncludeGraph, sources: Mapping[str, str],
                   name: Optional[str] = None, include_dirs: Sequence[str] = ()) -> ModuleSource:
    """
    Inline the quoted-include closure of a root file

    Each project header is inserted once, at its first include; later
    include lines of the same header are dropped, as are include guards of
    inlined headers. System includes and unresolvable quoted includes stay
    verbatim. Includes of project headers in branches the configuration
    does not select are commented out.
    """
    node_set = set(include_graph.nodes)
    out_lines: List[str] = []
    origins: List[Origin] = []
    visited = {root_c_file}

    def inline(file: str, drop_guard: bool) -> None:
        text = normalize_newlines(sources[file])
        skip = include_guard_lines(text, file) if drop_guard else set()
        includes = {line: (inc, is_system) for line, inc, is_system in include_lines(text)}
        for n, line in enumerate(split_lines(text), 1):
            if n in skip:
                continue
            target = include_graph.resolve(file, n)
            if target is not None:
                if target not in visited:
                    visited.add(target)
                    inline(target, True)
                continue
            if n in includes and not includes[n][1]:
                project_header = resolve_quoted(file, includes[n][0], node_set, include_dirs)
                if project_header is not None:
                    line = f"/* seamstress: inactive {line.strip()} */"
            out_lines.append(line)
            origins.append((file, n))

    inline(root_c_file, False)
    module_name = name or rust_identifier(PurePosixPath(root_c_file).stem)
    text = join_lines(out_lines)
    return ModuleSource(name=module_name, text=text,
                        elements=scan_elements(text, f"{module_name}.c"),
                        origin_map=compress_origins(origins))


# --- statics ----------------------------------------------------------------

def build_static_symbol_table(modules: Iterable[ModuleSource]) -> Dict[str, Set[str]]:
    """Function/variable name -> modules that define it"""
    table: Dict[str, Set[str]] = {}
    for module in modules:
        for e in module.elements:
            if e.is_declaration or e.kind not in (ElementKind.FUNCTION, ElementKind.VARIABLE):
                continue
            table.setdefault(e.name, set()).add(module.name)
    return table


def uniquify_statics(module: ModuleSource, project_symbol_table: Mapping[str, Set[str]]) -> ModuleSource:
    """
    Rename statics whose name is also defined by another module

    `init` in module `a` becomes `init__a`, at the definition and at every
    reference in the module (macro bodies included).
    """
    renames = sorted({e.name for e in module.elements
                      if e.is_static and not e.is_declaration
                      and e.kind in (ElementKind.FUNCTION, ElementKind.VARIABLE)
                      and project_symbol_table.get(e.name, set()) - {module.name}})
    if not renames:
        return module
    text = module.text
    for old in renames:
        new = f"{old}__{module.name}"
        logger.info(f"🔧 {module.name}: static {old} -> {new}")
        text = replace_identifier(text, old, new)
    return replace(module, text=text, elements=scan_elements(text, module.file_name))


# --- declarations -----------------------------------------------------------

def _single_statement(module: ModuleSource, element: CodeElement) -> bool:
    masked = split_lines(mask_c(module.text))[element.start_line - 1:element.end_line]
    body = "\n".join(masked)
    return '{' not in body and body.count(';') == 1


def strip_declarations(module: ModuleSource,
                       project_definitions: Optional[Mapping[str, str]] = None) -> ModuleSource:
    """
    Delete declarations whose definition lives in the same module

    Declarations without a local definition are the seams to other modules
    or libraries; they stay and are recorded in the module annotations.

    Args:
        module: Module to process
        project_definitions: Non-static definition name -> defining module
    """
    pairing = pair_decls_defs(module.elements, module_blocks(module))
    project_definitions = project_definitions or {}

    annotations = list(module.annotations)
    for decl in pairing.external:
        owner = project_definitions.get(decl.name)
        note = f"{decl.name}: defined in module {owner}" if owner and owner != module.name \
            else f"{decl.name}: external (not defined in project)"
        if note not in annotations:
            annotations.append(note)

    doomed: Set[int] = set()
    for decl, _definition in pairing.pairs:
        if _single_statement(module, decl):
            doomed.update(range(decl.start_line, decl.end_line + 1))
    if not doomed:
        return replace(module, annotations=annotations)

    origins = expand_origins(module)
    keep = [i for i in range(1, len(module.lines) + 1) if i not in doomed]
    lines = module.lines
    stripped = rebuild_module(module, [lines[i - 1] for i in keep], [origins[i - 1] for i in keep])
    logger.info(f"{module.name}: removed {len(pairing.pairs)} paired declarations")
    return replace(stripped, annotations=annotations)


# --- conditional compilation macros -----------------------------------------

def extract_cfg_macros(module: ModuleSource,
                       conditional_blocks: Optional[Sequence[ConditionalBlock]] = None
                       ) -> Tuple[ModuleSource, List[FeatureRecord]]:
    """
    Pull out valueless #defines that only steer conditional compilation

    A top-level `#define NAME` whose NAME appears in guards and nowhere else
    is removed and reported as a defined feature; guard macros the module
    never defines are reported as undefined features. Value-bearing defines
    are left alone. A module that #undefs a guard is left untouched.
    """
    blocks = list(conditional_blocks) if conditional_blocks is not None else module_blocks(module)
    feature_blocks = [b for b in blocks if not b.is_include_guard]
    guards = dedupe(s for b in feature_blocks for s in b.guard_symbols if not s.startswith("__"))
    if not guards:
        return module, []

    masked_lines = split_lines(mask_c(module.text))
    directives = list(iter_directives(masked_lines))
    undefined_guards = [d for d in directives if d.name == "undef" and identifiers(d.argument)[:1]
                        and identifiers(d.argument)[0] in guards]
    if undefined_guards:
        logger.warning(f"⚠️ {module.name}: #undef of guard macro at line {undefined_guards[0].start_line}; "
                       f"feature extraction skipped")
        return module, []

    directive_lines = {n for d in directives for n in range(d.start_line, d.end_line + 1)}
    code_identifiers: Set[str] = set()
    for n, line in enumerate(masked_lines, 1):
        if n not in directive_lines:
            code_identifiers.update(identifiers(line))

    defines: Dict[str, List] = {}
    for d in directives:
        if d.name == "define":
            ids = identifiers(d.argument)
            if ids:
                defines.setdefault(ids[0], []).append(d)
                # names used inside other macro bodies are not pure guards
                code_identifiers.update(ids[1:])

    records: List[FeatureRecord] = []
    doomed: Set[int] = set()
    for name in guards:
        if name not in defines:
            first = next(b for b in feature_blocks if name in b.guard_symbols)
            file, line = origin_of(module, first.start_line) or (module.file_name, first.start_line)
            records.append(FeatureRecord(name, False, file, line))
            continue
        found = defines[name]
        top_level = [d for d in found if not any(b.start_line <= d.start_line <= b.end_line
                                                 for b in feature_blocks)]
        if len(found) != 1 or len(top_level) != 1 or name in code_identifiers:
            continue
        define = top_level[0]
        if not is_valueless_define(define.argument):
            continue
        file, line = origin_of(module, define.start_line) or (module.file_name, define.start_line)
        records.append(FeatureRecord(name, True, file, line))
        doomed.update(range(define.start_line, define.end_line + 1))

    if not doomed:
        return module, records
    origins = expand_origins(module)
    lines = module.lines
    keep = [i for i in range(1, len(lines) + 1) if i not in doomed]
    feature_defines = dedupe(list(module.feature_defines) + [r.macro_name for r in records if r.originally_defined])
    updated = rebuild_module(module, [lines[i - 1] for i in keep], [origins[i - 1] for i in keep])
    return replace(updated, feature_defines=feature_defines), records


# --- reordering -------------------------------------------------------------

def _is_include_line(line: str) -> bool:
    stripped = line.lstrip()
    return stripped.startswith('#') and stripped[1:].lstrip().startswith('include')


def reorder_elements(module: ModuleSource, reference_graph: Optional[Mapping[str, Iterable[str]]] = None,
                     conditional_blocks: Optional[Sequence[ConditionalBlock]] = None) -> ModuleSource:
    """
    Put definitions before their uses

    Atoms (elements, or conditional blocks together with the elements
    overlapping them) are sorted topologically over the reference graph;
    mutually dependent atoms stay together in source order and unconstrained
    atoms keep their relative order. Lines between atoms travel with the
    atom that follows them, except #include lines, which move to the top.
    A module that is already in order is returned unchanged.
    """
    if reference_graph is None:
        reference_graph = build_reference_graph(module.elements, {module.file_name: module.text})
    blocks = list(conditional_blocks) if conditional_blocks is not None else module_blocks(module)
    atoms = atom_spans(module.elements, blocks)
    if len(atoms) < 2:
        return module

    atom_of = {eid: i for i, atom in enumerate(atoms) for eid in atom.element_ids}
    edges: Dict[int, Set[int]] = {i: set() for i in range(len(atoms))}
    for src, targets in reference_graph.items():
        if src not in atom_of:
            continue
        for dst in targets:
            if dst in atom_of and atom_of[dst] != atom_of[src]:
                edges[atom_of[src]].add(atom_of[dst])

    order = [i for group in stable_topological_groups(list(range(len(atoms))), edges) for i in group]
    if order == list(range(len(atoms))):
        return module

    lines = module.lines
    origins = expand_origins(module)
    prologue = list(range(1, atoms[0].start_line))
    hoisted: List[int] = []
    chunks: Dict[int, List[int]] = {}
    previous_end = atoms[0].start_line - 1
    for i, atom in enumerate(atoms):
        gap = list(range(previous_end + 1, atom.start_line))
        hoisted += [n for n in gap if _is_include_line(lines[n - 1])]
        chunks[i] = [n for n in gap if not _is_include_line(lines[n - 1])] + \
            list(range(atom.start_line, atom.end_line + 1))
        previous_end = atom.end_line
    epilogue = list(range(previous_end + 1, len(lines) + 1))

    sequence = prologue + hoisted + [n for i in order for n in chunks[i]] + epilogue
    logger.info(f"{module.name}: reordered {len(atoms)} atoms")
    return rebuild_module(module, [lines[n - 1] for n in sequence], [origins[n - 1] for n in sequence])


def forward_reference_count(module: ModuleSource) -> int:
    """Cross-SCC references to elements placed later in the module (0 when ordered)"""
    graph = build_reference_graph(module.elements, {module.file_name: module.text})
    blocks = module_blocks(module)
    atoms = atom_spans(module.elements, blocks)
    atom_of = {eid: i for i, atom in enumerate(atoms) for eid in atom.element_ids}
    edges: Dict[int, Set[int]] = {i: set() for i in range(len(atoms))}
    for src, targets in graph.items():
        for dst in targets:
            if src in atom_of and dst in atom_of and atom_of[src] != atom_of[dst]:
                edges[atom_of[src]].add(atom_of[dst])
    vertices = list(range(len(atoms)))
    groups = strongly_connected_components(vertices, edges)
    return len(forward_references(vertices, edges, groups))


# --- project level ----------------------------------------------------------

def _definition_owners(modules: Sequence[ModuleSource]) -> Dict[str, str]:
    owners: Dict[str, str] = {}
    for module in modules:
        for e in module.elements:
            if e.is_declaration or e.is_static:
                continue
            if e.kind in (ElementKind.FUNCTION, ElementKind.VARIABLE):
                owners.setdefault(e.name, module.name)
    return owners


def module_order(modules: Sequence[ModuleSource]) -> List[str]:
    """
    Translation order of modules

    A module follows every module defining something it references, with
    mutually dependent modules kept together in their original order.
    """
    owners = _definition_owners(modules)
    names = [m.name for m in modules]
    edges: Dict[str, Set[str]] = {}
    for module in modules:
        local = {n for e in module.elements if not e.is_declaration for n in e.defined_names}
        used = set(identifiers(mask_c(module.text)))
        edges[module.name] = {owners[n] for n in used - local if n in owners and owners[n] != module.name}
    return [n for group in stable_topological_groups(names, edges) for n in group]


def _unique_module_names(roots: Sequence[str]) -> Dict[str, str]:
    names: Dict[str, str] = {}
    taken: Set[str] = set()
    for root in roots:
        base = rust_identifier(PurePosixPath(root).stem)
        candidate, counter = base, 2
        while candidate in taken:
            candidate = f"{base}_{counter}"
            counter += 1
        taken.add(candidate)
        names[root] = candidate
    return names


def preprocess_module(module: ModuleSource,
                      owners: Mapping[str, str]) -> Tuple[ModuleSource, List[FeatureRecord]]:
    """Declaration stripping, feature extraction and reordering of one renamed module"""
    module = strip_declarations(module, owners)
    module, records = extract_cfg_macros(module)
    module = reorder_elements(module)
    return module, records


@safe_operation("preprocessing")
def preprocess_project(analysis: ProjectAnalysis, include_dirs: Sequence[str] = ()) -> PreprocessResult:
    """
    Turn every root .c file of an analyzed project into a ModuleSource

    Returns:
        PreprocessResult with modules in translation order
    """
    roots = root_c_files(analysis.files)
    names = _unique_module_names(roots)
    merged = [merge_includes(root, analysis.include_graph, analysis.sources, names[root], include_dirs)
              for root in roots]
    symbol_table = build_static_symbol_table(merged)

    # statics first, so owners reflect the final names
    renamed = [uniquify_statics(m, symbol_table) for m in merged]
    owners = _definition_owners(renamed)

    processed: Dict[str, ModuleSource] = {}
    features: Dict[str, List[FeatureRecord]] = {}
    for module in renamed:
        done, records = preprocess_module(module, owners)
        processed[done.name] = done
        features[done.name] = records

    warnings = [str(MissingHeader(includer, name)) for includer, name in analysis.include_graph.missing]
    ordered = [processed[n] for n in module_order(list(processed.values()))]
    logger.info(f"✅ Preprocessed {len(ordered)} modules")
    return PreprocessResult(modules=ordered, features=features, warnings=warnings)


# --- persistence ------------------------------------------------------------

def write_preprocessed(out_dir: Union[str, Path], result: PreprocessResult) -> List[Path]:
    """
    Write `<out>/preprocessed/<name>.c`, `<name>.origin.json`, the module
    index and `<out>/features.json`
    """
    out = Path(out_dir)
    target = out / "preprocessed"
    written = []
    for module in result.modules:
        c_path = target / module.file_name
        atomic_write(c_path, module.text)
        write_json(target / f"{module.name}.origin.json",
                   {"schema": SCHEMA_VERSION, "module": module.name,
                    "origin_map": [r.to_dict() for r in module.origin_map]})
        written.append(c_path)
    write_json(target / "modules.json", {
        "schema": SCHEMA_VERSION,
        "order": result.order,
        "modules": [{"name": m.name, "feature_defines": list(m.feature_defines),
                     "annotations": list(m.annotations)} for m in result.modules],
        "warnings": list(result.warnings),
    })
    write_json(out / "features.json", {
        "schema": SCHEMA_VERSION,
        "features": [r.to_dict() for r in result.all_features()],
        "by_module": {name: [r.to_dict() for r in records] for name, records in sorted(result.features.items())},
    })
    return written


def _origin_from_dict(data: dict) -> OriginRange:
    start, end = data["out"]
    orig = data.get("orig")
    return OriginRange(start, end, data.get("file"), orig[0] if orig else None,
                       orig[1] if orig else None, data.get("synthetic", False))


def load_preprocessed(out_dir: Union[str, Path]) -> PreprocessResult:
    """Read back what write_preprocessed produced"""
    target = Path(out_dir) / "preprocessed"
    index = read_json(target / "modules.json")
    modules = []
    for entry in index["modules"]:
        name = entry["name"]
        text = (target / f"{name}.c").read_text(encoding="utf-8")
        origin = read_json(target / f"{name}.origin.json")
        modules.append(ModuleSource(
            name=name, text=text, elements=scan_elements(text, f"{name}.c"),
            origin_map=[_origin_from_dict(r) for r in origin["origin_map"]],
            feature_defines=list(entry.get("feature_defines", [])),
            annotations=list(entry.get("annotations", [])),
        ))
    features_path = Path(out_dir) / "features.json"
    features: Dict[str, List[FeatureRecord]] = {}
    if features_path.exists():
        data = read_json(features_path)
        features = {name: [FeatureRecord.from_dict(r) for r in records]
                    for name, records in data.get("by_module", {}).items()}
    return PreprocessResult(modules=modules, features=features, warnings=list(index.get("warnings", [])))
