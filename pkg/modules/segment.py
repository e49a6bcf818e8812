"""
Segmentation of preprocessed modules into translation units

Units are packed greedily in element order under a line cap. Elements,
conditional blocks and mutually recursive function groups are never
split; an atom larger than the cap becomes an oversized unit of its own.
The cap only shrinks: by an eighth when a prompt overflows the context
window, by half when units keep failing to compile.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .c_model import atom_spans, build_call_graph
from .common_utils import join_lines, read_json, write_json, atomic_write
from .error_handling import FloorReached, ValidationError
from .models import (
    AtomGroup, BackendProfile, CallGraph, ModuleSource, SegmentPlan, ShrinkTrigger,
    TranslationUnit, UnitStatus,
)
from .preprocess import module_blocks
from .prompts import estimate_tokens

logger = logging.getLogger(__name__)

DEFAULT_MAX_CAP = 4000
DEFAULT_FLOOR = 30

# upper density of 15 tokens per line, half the window left for context and logs
TOKENS_PER_LINE = 15


def initial_cap(profile: BackendProfile, max_cap: int = DEFAULT_MAX_CAP, floor: int = DEFAULT_FLOOR) -> int:
    """
    Starting unit size for a backend

    min(max_cap, floor(0.5 * window / 15)), never below the floor.
    """
    derived = profile.context_window // (2 * TOKENS_PER_LINE)
    return max(floor, min(max_cap, derived))


def group_sccs(module: ModuleSource, call_graph: Optional[CallGraph] = None) -> List[AtomGroup]:
    """
    Indivisible atom groups of a module

    Every multi-node SCC of the call graph is fused with whatever lies
    between its members; conditional blocks (include guards aside) are
    fused with the elements they overlap. Without cycles or blocks each
    element is its own group.
    """
    if call_graph is None:
        call_graph = build_call_graph(module.elements, {module.file_name: module.text})
    by_id = {e.element_id: e for e in module.elements}
    scc_spans = []
    for group in call_graph.scc_groups:
        members = [by_id[eid] for eid in group if eid in by_id]
        if len(members) > 1:
            scc_spans.append((min(e.start_line for e in members), max(e.end_line for e in members)))
    return atom_spans(module.elements, module_blocks(module), scc_spans)


def _unit(module: ModuleSource, lines: Sequence[str], ordinal: int, start: int, end: int,
          element_ids: List[str], cap_lines: int) -> TranslationUnit:
    text = join_lines(lines[start - 1:end])
    return TranslationUnit(module=module.name, ordinal=ordinal, start_line=start, end_line=end,
                           element_ids=element_ids, text=text, est_tokens=estimate_tokens(text),
                           oversized=end - start + 1 > cap_lines)


def plan_segments(module: ModuleSource, cap_lines: int, call_graph: Optional[CallGraph] = None,
                  from_line: int = 1, first_ordinal: int = 1) -> List[TranslationUnit]:
    """
    Pack a module into units of at most cap_lines lines

    Lines between atoms belong to the atom that follows them and trailing
    lines to the last atom, so the units of a module concatenate to its
    text from `from_line` on.

    Args:
        module: Preprocessed module
        cap_lines: Maximum unit size in lines
        call_graph: Call graph of the module, built when omitted
        from_line: First line to plan (used when re-planning after a shrink)
        first_ordinal: Ordinal of the first unit produced

    Returns:
        Units in module order
    """
    if cap_lines < 1:
        raise ValidationError(f"cap_lines must be positive, got {cap_lines}")
    lines = module.lines
    total = len(lines)
    if from_line > total:
        return []

    atoms = [a for a in group_sccs(module, call_graph) if a.start_line >= from_line]
    if not atoms:
        rest = lines[from_line - 1:]
        if not any(line.strip() for line in rest):
            return []
        return [_unit(module, lines, first_ordinal, from_line, total, [], cap_lines)]

    # extended spans: (start, end, element ids)
    spans: List[Tuple[int, int, Tuple[str, ...]]] = []
    previous_end = from_line - 1
    for atom in atoms:
        spans.append((previous_end + 1, atom.end_line, atom.element_ids))
        previous_end = atom.end_line
    last_start, _, last_ids = spans[-1]
    spans[-1] = (last_start, total, last_ids)

    units: List[TranslationUnit] = []
    ordinal = first_ordinal
    current: Optional[List] = None  # [start, end, ids]
    for start, end, ids in spans:
        size = end - start + 1
        if size > cap_lines:
            if current:
                units.append(_unit(module, lines, ordinal, current[0], current[1], current[2], cap_lines))
                ordinal += 1
                current = None
            units.append(_unit(module, lines, ordinal, start, end, list(ids), cap_lines))
            logger.info(f"⚠️ {module.name}.{ordinal}: atom of {size} lines exceeds cap {cap_lines}")
            ordinal += 1
            continue
        if current and end - current[0] + 1 > cap_lines:
            units.append(_unit(module, lines, ordinal, current[0], current[1], current[2], cap_lines))
            ordinal += 1
            current = None
        if current is None:
            current = [start, end, list(ids)]
        else:
            current[1] = end
            current[2].extend(ids)
    if current:
        units.append(_unit(module, lines, ordinal, current[0], current[1], current[2], cap_lines))
    return units


def _as_mapping(modules: Union[Mapping[str, ModuleSource], Iterable[ModuleSource]]) -> Dict[str, ModuleSource]:
    if isinstance(modules, Mapping):
        return dict(modules)
    return {m.name: m for m in modules}


def plan_project(modules: Sequence[ModuleSource], cap_lines: int, floor: int = DEFAULT_FLOOR) -> SegmentPlan:
    """Initial plan over all modules, in translation order"""
    if cap_lines < floor:
        raise ValidationError(f"Initial cap {cap_lines} is below the floor {floor}")
    units = [u for m in modules for u in plan_segments(m, cap_lines)]
    logger.info(f"📊 Planned {len(units)} units over {len(modules)} modules at cap {cap_lines}")
    return SegmentPlan(cap_lines=cap_lines, history=[(cap_lines, ShrinkTrigger.INITIAL)],
                       units=units, floor_lines=floor)


def _module_order(plan: SegmentPlan) -> List[str]:
    order: List[str] = []
    for u in plan.units:
        if u.module not in order:
            order.append(u.module)
    return order


def replan(plan: SegmentPlan, modules: Union[Mapping[str, ModuleSource], Iterable[ModuleSource]],
           new_cap: int, trigger: ShrinkTrigger) -> SegmentPlan:
    """
    Re-segment under a smaller cap

    The leading run of compiled units of each module is kept with its
    ordinals; everything after it is planned again from the first
    un-compiled line, continuing the ordinals.
    """
    if new_cap >= plan.cap_lines:
        raise ValidationError(f"New cap {new_cap} does not shrink {plan.cap_lines}")
    sources = _as_mapping(modules)
    units: List[TranslationUnit] = []
    for name in _module_order(plan):
        existing = plan.units_of(name)
        kept: List[TranslationUnit] = []
        for u in existing:
            if u.status != UnitStatus.COMPILED:
                break
            kept.append(u)
        units.extend(kept)
        if len(kept) == len(existing):
            continue
        from_line = kept[-1].end_line + 1 if kept else 1
        next_ordinal = max(u.ordinal for u in existing) + 1
        units.extend(plan_segments(sources[name], new_cap, from_line=from_line, first_ordinal=next_ordinal))
    history = list(plan.history) + [(new_cap, trigger)]
    logger.info(f"🔧 Unit cap {plan.cap_lines} -> {new_cap} ({trigger.value})")
    return SegmentPlan(cap_lines=new_cap, history=history, units=units, floor_lines=plan.floor_lines)


def overflow_cap(cap: int, floor: int) -> int:
    new_cap = cap * 7 // 8
    if new_cap < floor:
        raise FloorReached(cap, floor)
    return new_cap


def stall_cap(cap: int, floor: int) -> int:
    """Half the cap, rounded half-up, never below the floor"""
    if cap <= floor:
        raise FloorReached(cap, floor)
    return max(floor, (cap + 1) // 2)


def shrink_for_overflow(plan: SegmentPlan,
                        modules: Union[Mapping[str, ModuleSource], Iterable[ModuleSource]]) -> SegmentPlan:
    """Cut the cap by an eighth after a prompt exceeded the context window"""
    return replan(plan, modules, overflow_cap(plan.cap_lines, plan.floor_lines), ShrinkTrigger.CONTEXT_OVERFLOW)


def shrink_for_stall(plan: SegmentPlan,
                     modules: Union[Mapping[str, ModuleSource], Iterable[ModuleSource]]) -> SegmentPlan:
    """Halve the cap after repeated unit failures"""
    return replan(plan, modules, stall_cap(plan.cap_lines, plan.floor_lines), ShrinkTrigger.COMPILE_STALL)


def write_segments(out_dir: Union[str, Path], plan: SegmentPlan) -> Path:
    """
    Write `<out>/segments/<module>.<ordinal>.c` for every unit and
    `<out>/plan.json`; segment files of units no longer planned are removed
    """
    out = Path(out_dir)
    target = out / "segments"
    target.mkdir(parents=True, exist_ok=True)
    wanted = {f"{u.unit_id}.c" for u in plan.units}
    for stale in target.glob("*.c"):
        if stale.name not in wanted:
            stale.unlink()
    for u in plan.units:
        atomic_write(target / f"{u.unit_id}.c", u.text)
    plan_path = out / "plan.json"
    write_json(plan_path, plan.to_dict())
    return plan_path


def load_plan(out_dir: Union[str, Path],
              modules: Union[Mapping[str, ModuleSource], Iterable[ModuleSource]]) -> SegmentPlan:
    """Read plan.json back, taking unit texts from the modules"""
    plan = SegmentPlan.from_dict(read_json(Path(out_dir) / "plan.json"))
    sources = _as_mapping(modules)
    for u in plan.units:
        module = sources.get(u.module)
        if module is None:
            raise ValidationError(f"plan.json names unknown module '{u.module}'")
        u.text = join_lines(module.lines[u.start_line - 1:u.end_line])
    return plan
