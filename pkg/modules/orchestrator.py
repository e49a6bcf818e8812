"""
Translation pipeline

Drives every unit through translate -> compile -> repair -> map in module
dependency order, keeps the workspace compiling at every unit boundary,
applies the abort and resize policies and computes the coverage report.
"""

import json
import logging
import shlex
from collections import Counter
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

from .common_utils import dedupe, write_json
from .config import RunConfig
from .error_handling import (
    BudgetExceeded, CompileTimeout, ContextOverflow, FloorReached, FormatError, GiveUp, PatchError,
    ScanFailure, standardize_error_response,
)
from .llm_backend import LlmBackend
from .metadata import (
    MetadataStore, build_project_index, emit_unit_metadata, parse_rust_elements, record_mapping,
    select_context,
)
from .models import (
    CompileReport, ContextBundle, ConversationMemory, CoverageReport, ModuleCoverage, ModuleSource,
    RepairAttemptLog, RepairPatch, SegmentPlan, TranslationUnit, UnitStatus,
)
from .preprocess import PreprocessResult
from .prompts import (
    CHUNK_LINES, RulesProfile, build_mapping_prompt, build_repair_prompt, build_selection_prompt,
    build_translation_prompt,
)
from .segment import shrink_for_overflow, shrink_for_stall, write_segments
from .workspace import (
    MANIFEST, CommandRunner, Workspace, apply_patches, classify_errors, compile_workspace,
    run_command, scaffold_workspace, validate_manifest,
)

logger = logging.getLogger(__name__)

COMPILED = "compiled"
ABORTED = "aborted"
OVERFLOW = "overflow"

NOTES = [
    "A C element mapped to several Rust items counts once as covered.",
    "An aborted unit aborts the remaining units of its module only; other modules proceed.",
    "Error categories: 10 distinct categories (Attributes counted once).",
]


class RunLog:
    """`<out>/run.jsonl`: one JSON event per line"""

    def __init__(self, path: Union[str, Path], append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not append:
            self.path.write_text("", encoding="utf-8")
        self.seq = 0

    def event(self, event: str, **fields: Any) -> None:
        self.seq += 1
        record = {"seq": self.seq, "event": event, **fields}
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")

    def read(self) -> List[Dict[str, Any]]:
        if not self.path.exists():
            return []
        return [json.loads(line) for line in self.path.read_text(encoding="utf-8").splitlines() if line]


def patches_from_response(document: Mapping[str, Any], file: str) -> List[RepairPatch]:
    return [RepairPatch(file=file, start_line=p["start_line"], end_line=p["end_line"], replacement=p["code"])
            for p in document["patches"]]


def choose_repair_files(report: CompileReport, unit: TranslationUnit, workspace: Workspace,
                        backend: LlmBackend, chunk_lines: int = CHUNK_LINES) -> List[str]:
    """
    Files the next repair attempt patches

    Candidates are the files named in diagnostics, the manifest and the
    unit's own file; the LLM picks among them. Paths outside the candidates
    are dropped; an unusable answer falls back to the diagnostic files.
    """
    diagnostic_files = [f for f in report.error_files if f == MANIFEST or workspace.exists(f)]
    candidates = dedupe(diagnostic_files + [MANIFEST, unit.rust_path])
    fallback = diagnostic_files or [unit.rust_path]

    scratch = ConversationMemory(unit_id=unit.unit_id)
    try:
        envelope = build_selection_prompt(report.raw_log or _messages(report), candidates, unit.unit_id,
                                          backend.budget(scratch))
        document = backend.request_json(envelope, scratch)
    except (GiveUp, BudgetExceeded, ContextOverflow) as e:
        logger.warning(f"⚠️ {unit.unit_id}: file selection failed ({e}); using diagnostic files")
        return fallback

    chosen = [f for f in dedupe(document["files"]) if f in candidates]
    hallucinated = [f for f in document["files"] if f not in candidates]
    if hallucinated:
        logger.warning(f"⚠️ {unit.unit_id}: ignoring files outside the candidates: {', '.join(hallucinated)}")
    return chosen or fallback


def _messages(report: CompileReport) -> str:
    return "\n".join(f"{d.level}[{d.code or '-'}]: {d.message} ({d.file}:{d.line})" for d in report.errors)


def compute_coverage(plan: SegmentPlan, store: MetadataStore, module_order: Optional[Sequence[str]] = None,
                     error_histogram: Optional[Mapping[str, int]] = None) -> CoverageReport:
    """
    Line and element coverage per module and for the project

    LCov counts the C lines of compiled units over the lines of all units;
    ElemCov counts elements of compiled units with a mapping (tombstones
    excluded) over all elements.
    """
    order = list(module_order or [])
    for u in plan.units:
        if u.module not in order:
            order.append(u.module)
    modules = []
    for name in order:
        units = plan.units_of(name)
        if not units:
            continue
        compiled = [u for u in units if u.status == UnitStatus.COMPILED]
        modules.append(ModuleCoverage(
            module=name,
            lines_total=sum(u.line_count for u in units),
            lines_compiled=sum(u.line_count for u in compiled),
            elements_total=sum(len(store.units[u.unit_id].elements) for u in units if u.unit_id in store.units),
            elements_covered=sum(store.covered_elements(u.unit_id) for u in compiled),
        ))
    return CoverageReport(modules=modules,
                          error_histogram=dict(error_histogram or {}),
                          aborted_units=[u.unit_id for u in plan.units if u.status == UnitStatus.ABORTED],
                          notes=list(NOTES))


class Pipeline:
    """One translation run over a preprocessed project"""

    def __init__(self, config: RunConfig, preprocessed: PreprocessResult, plan: SegmentPlan,
                 backend: LlmBackend, rules: Optional[RulesProfile] = None,
                 runner: CommandRunner = run_command, workspace: Optional[Workspace] = None,
                 run_log: Optional[RunLog] = None):
        self.config = config
        self.preprocessed = preprocessed
        self.modules: Dict[str, ModuleSource] = {m.name: m for m in preprocessed.modules}
        self.plan = plan
        self.backend = backend
        self.rules = rules or RulesProfile()
        self.runner = runner
        self.workspace = workspace
        self.out_dir = Path(config.out_dir)
        self.log = run_log or RunLog(self.out_dir / "run.jsonl")
        if self.backend.event_sink is None:
            self.backend.event_sink = self.log.event
        self.store = MetadataStore()
        self.histogram: Counter = Counter()
        self.attempt_logs: List[RepairAttemptLog] = []
        self.stall_count = 0
        self.shrinking_exhausted = False
        self.report: Optional[CompileReport] = None

    # --- bookkeeping

    def _compile(self, unit_id: str = "", full_build: bool = False) -> CompileReport:
        report = compile_workspace(self.workspace, timeout=self.config.compile_timeout,
                                   runner=self.runner, full_build=full_build)
        histogram = classify_errors(report)
        self.histogram.update({k: v for k, v in histogram.items() if v})
        self.log.event("compile", unit_id=unit_id, success=report.success, errors=len(report.errors),
                       categories={k: v for k, v in histogram.items() if v}, full_build=full_build)
        self.report = report
        return report

    def _emit_metadata(self) -> None:
        """(Re)build the metadata of every unit not yet compiled"""
        index = build_project_index(self.plan, self.modules)
        planned = {u.unit_id for u in self.plan.units}
        for stale in [k for k in self.store.units if k not in planned]:
            del self.store.units[stale]
        for unit in self.plan.units:
            if unit.status == UnitStatus.COMPILED and unit.unit_id in self.store.units:
                continue
            module = self.modules[unit.module]
            self.store.add_unit(emit_unit_metadata(unit, module.elements, index, module.lines))

    def _save(self) -> None:
        write_segments(self.out_dir, self.plan)
        self.store.save(self.out_dir / "metadata.json")

    def _next_unit(self) -> Optional[TranslationUnit]:
        for name in self.preprocessed.order:
            for unit in self.plan.units_of(name):
                if unit.status == UnitStatus.PENDING:
                    return unit
        return None

    # --- units

    def _abort(self, unit: TranslationUnit, error: Exception, snapshot: Dict[str, str]) -> None:
        self.workspace.restore(snapshot)
        self.store.drop_file(unit.rust_path)
        unit.status = UnitStatus.ABORTED
        rest = [u for u in self.plan.units_of(unit.module) if u.ordinal > unit.ordinal]
        for u in rest:
            u.status = UnitStatus.ABORTED
        details = standardize_error_response(error, f"unit {unit.unit_id}")
        self.log.event("abort", unit_id=unit.unit_id, propagated_to=[u.unit_id for u in rest], **details)
        logger.warning(f"❌ {unit.unit_id} aborted; {len(rest)} later unit(s) of {unit.module} aborted")

    def translate_unit(self, unit: TranslationUnit, memory: ConversationMemory) -> str:
        """Ask for the unit's Rust code and write it into the workspace"""
        meta = self.store.units[unit.unit_id]
        budget = self.backend.budget(memory)
        bare = build_translation_prompt(unit, ContextBundle(), self.rules, budget, self.config.chunk_lines)
        bundle = select_context(meta, self.store, budget_tokens=budget.available - bare.est_tokens)
        envelope = build_translation_prompt(unit, bundle, self.rules, budget, self.config.chunk_lines)
        document = self.backend.request_json(envelope, memory)
        rel = self.workspace.write_unit(unit, document["rust_code"])
        self.store.track_file(rel, unit.unit_id)
        unit.status = UnitStatus.TRANSLATED
        self.log.event("translate", unit_id=unit.unit_id, est_tokens=envelope.est_tokens,
                       context=bundle.names, dropped_context=bundle.dropped)
        return rel

    def _repair_one_file(self, unit: TranslationUnit, memory: ConversationMemory, rel: str,
                         report: CompileReport) -> None:
        text = self.workspace.read(rel) if self.workspace.exists(rel) else ""
        meta = self.store.units[unit.unit_id]
        budget = self.backend.budget(memory)
        bundle = select_context(meta, self.store, budget_tokens=budget.available // 4, rust_only=True)
        envelope = build_repair_prompt(report.raw_log or _messages(report), rel, text, bundle, budget,
                                       unit.unit_id, self.config.chunk_lines)

        def check(document: Mapping[str, Any]) -> None:
            try:
                patched = apply_patches(text, patches_from_response(document, rel))
            except PatchError as e:
                raise FormatError(f"patch rejected: {e}") from e
            if rel == MANIFEST:
                validate_manifest(patched, self.config.allowlist)

        document = self.backend.request_json(envelope, memory, validate=check)
        patches = patches_from_response(document, rel)
        self.workspace.apply_patches(rel, patches)
        self.log.event("patch", unit_id=unit.unit_id, file=rel,
                       ranges=[[p.start_line, p.end_line] for p in patches])

    def repair_loop(self, unit: TranslationUnit, memory: ConversationMemory) -> bool:
        """
        Patch and recompile until the workspace compiles

        Returns:
            True when it compiles within max_repair_attempts
        """
        report = self.report
        for attempt in range(1, self.config.max_repair_attempts + 1):
            before = classify_errors(report)
            files = choose_repair_files(report, unit, self.workspace, self.backend, self.config.chunk_lines)
            for rel in files:
                self._repair_one_file(unit, memory, rel, report)
            report = self._compile(unit.unit_id)
            entry = RepairAttemptLog(unit_id=unit.unit_id, attempt=attempt, files_patched=files,
                                     errors_before={k: v for k, v in before.items() if v},
                                     errors_after={k: v for k, v in classify_errors(report).items() if v})
            self.attempt_logs.append(entry)
            self.log.event("repair", **entry.to_dict())
            if report.success:
                return True
        return False

    def _record_rust(self, unit: TranslationUnit, snapshot: Dict[str, str]) -> None:
        """Parse every Rust file this unit created or changed"""
        for rel in self.workspace.files():
            if not rel.endswith(".rs") or rel.endswith("mod.rs") or rel in ("src/lib.rs", "build.rs"):
                continue
            text = self.workspace.read(rel)
            if snapshot.get(rel) == text:
                continue
            owner = self.store.files.get(rel, unit.unit_id)
            try:
                self.store.set_rust_elements(rel, parse_rust_elements(text, rel, owner))
            except ScanFailure as e:
                logger.error(f"❌ {e}; no Rust elements recorded for {rel}")
                self.store.set_rust_elements(rel, [])

    def map_unit(self, unit: TranslationUnit, rel: str) -> None:
        meta = self.store.units[unit.unit_id]
        scratch = ConversationMemory(unit_id=unit.unit_id)
        try:
            envelope = build_mapping_prompt(unit.text, self.workspace.read(rel), meta, rel,
                                            self.backend.budget(scratch))
            document = self.backend.request_json(envelope, scratch)
        except (GiveUp, BudgetExceeded, ContextOverflow) as e:
            logger.warning(f"⚠️ {unit.unit_id}: mapping request failed ({e}); matching by name only")
            document = {"mappings": []}
        skipped = record_mapping(self.store, unit.unit_id, [rel], document)
        self.log.event("map", unit_id=unit.unit_id, covered=self.store.covered_elements(unit.unit_id),
                       elements=len(meta.elements), skipped=skipped)

    def process_unit(self, unit: TranslationUnit) -> str:
        memory = self.backend.clear_memory(unit.unit_id)
        snapshot = self.workspace.snapshot()
        try:
            rel = self.translate_unit(unit, memory)
            report = self._compile(unit.unit_id)
            if not report.success and not self.repair_loop(unit, memory):
                self._abort(unit, GiveUp(unit.unit_id, f"still failing after "
                                                       f"{self.config.max_repair_attempts} repair attempts"),
                            snapshot)
                return ABORTED
        except (BudgetExceeded, ContextOverflow) as e:
            self.workspace.restore(snapshot)
            self.store.drop_file(unit.rust_path)
            unit.status = UnitStatus.PENDING
            self.log.event("overflow", unit_id=unit.unit_id, reason=str(e))
            return OVERFLOW
        except (GiveUp, CompileTimeout) as e:
            self._abort(unit, e, snapshot)
            return ABORTED

        unit.status = UnitStatus.COMPILED
        self._record_rust(unit, snapshot)
        self.map_unit(unit, rel)
        logger.info(f"✅ {unit.unit_id} compiled")
        return COMPILED

    # --- resizing

    def _shrink(self, operation: Callable[..., SegmentPlan], unit: Optional[TranslationUnit]) -> bool:
        if self.shrinking_exhausted:
            return False
        old_cap = self.plan.cap_lines
        try:
            self.plan = operation(self.plan, self.modules)
        except FloorReached as e:
            self.shrinking_exhausted = True
            self.log.event("floor_reached", cap=old_cap, floor=self.plan.floor_lines,
                           unit_id=unit.unit_id if unit else "", reason=str(e))
            return False
        trigger = self.plan.history[-1][1].value
        self.log.event("shrink", cap_from=old_cap, cap_to=self.plan.cap_lines, trigger=trigger)
        self.stall_count = 0
        self._emit_metadata()
        return True

    # --- driver

    def run(self) -> CoverageReport:
        """
        Process every unit, then build once more and compute coverage

        Unit-level failures (give-ups, floor reached) become aborts; they
        never end the run.
        """
        if self.workspace is None:
            self.workspace = scaffold_workspace(self.out_dir / "rust", self.preprocessed.order,
                                                self.preprocessed.all_features(),
                                                crate_name=Path(self.config.project_root).resolve().name,
                                                force=self.config.force)
        self._emit_metadata()
        self._save()

        while True:
            unit = self._next_unit()
            if unit is None:
                break
            outcome = self.process_unit(unit)
            if outcome == COMPILED:
                self.stall_count = 0
            elif outcome == OVERFLOW:
                if not self._shrink(shrink_for_overflow, unit):
                    self._abort(unit, FloorReached(self.plan.cap_lines, self.plan.floor_lines),
                                self.workspace.snapshot())
            else:
                self.stall_count += 1
                if self.stall_count >= self.config.stall_threshold:
                    self._shrink(shrink_for_stall, unit)
            self._save()

        test_status = None
        if self.plan.units:
            final = self._compile(full_build=True)
            if not final.success:
                logger.error("❌ Final build failed although every unit boundary compiled")
            if self.config.test_hook:
                test_status = self._run_test_hook()

        report = compute_coverage(self.plan, self.store, self.preprocessed.order, self.histogram)
        report.test_hook_status = test_status
        self._save()
        write_json(self.out_dir / "report.json", report.to_dict())
        logger.info(f"📊 LCov {float(report.lcov):.3f}, ElemCov {float(report.elemcov):.3f}, "
                    f"{len(report.aborted_units)} aborted unit(s)")
        return report

    def _run_test_hook(self) -> int:
        result = self.runner(shlex.split(self.config.test_hook), self.workspace.root, self.config.compile_timeout)
        self.log.event("test_hook", command=self.config.test_hook, status=result.returncode)
        return result.returncode


def run_pipeline(config: RunConfig, preprocessed: PreprocessResult, plan: SegmentPlan, backend: LlmBackend,
                 rules: Optional[RulesProfile] = None, runner: CommandRunner = run_command,
                 workspace: Optional[Workspace] = None) -> CoverageReport:
    """Translate a preprocessed, segmented project; see Pipeline"""
    return Pipeline(config, preprocessed, plan, backend, rules=rules, runner=runner, workspace=workspace).run()
