"""
Command-line surface: analyze, preprocess, segment, translate, report

Every command reads and writes only the output directory, so a command can
be re-run at any time and deleting the directory resets everything.

Exit codes: 0 success, 1 finished with aborted units (or an I/O failure),
2 usage or environment error.
"""

import argparse
import contextlib
import logging
import os
import shutil
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence

from .c_model import analyze_project
from .common_utils import write_json
from .config import CONFIG_FILE, DEFAULT_OUT, RunConfig, load_run_config, setup_environment
from .display_utils import display_analysis, print_coverage
from .error_handling import (
    ReplayMiss, SeamstressError, ToolchainMissing, ValidationError, WorkspaceExists, safe_file_operation,
)
from .llm_backend import ChatBackend, LlmBackend, ReplayBackend, TranscriptWriter
from .models import BackendProfile, ProjectAnalysis
from .orchestrator import run_pipeline
from .preprocess import PreprocessResult, preprocess_project, write_preprocessed
from .prompts import load_rules_profile
from .segment import initial_cap, plan_project, write_segments
from .workspace import CommandRunner, run_command

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ABORTED = 1
EXIT_USAGE = 2

LOCK_FILE = ".seamstress.lock"

# usage/environment errors; MissingCredentials is a ValidationError
USAGE_ERRORS = (ReplayMiss, ValidationError, ToolchainMissing, WorkspaceExists)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seamstress", description="LLM-driven C to Rust translation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--project", help="C project root")
    common.add_argument("--out", help=f"Output directory (default: <project>/{DEFAULT_OUT})")
    common.add_argument("--config", help=f"Settings file (default: <project>/{CONFIG_FILE})")
    common.add_argument("--define", action="append", metavar="NAME[,NAME...]",
                        help="Macros assumed defined when selecting the configuration")
    common.add_argument("--include-dir", action="append", dest="include_dir", help="Extra include directory")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="Scan sources and count code elements")
    sub.add_parser("preprocess", parents=[common], help="Merge, strip, extract features and reorder")

    for name, text in (("segment", "Split modules into translation units"),
                       ("translate", "Run the whole translation pipeline")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--backend", help="Backend profile name or replay:<dir>")
        p.add_argument("--cap", type=int, help="Initial unit cap in lines")
        if name == "translate":
            p.add_argument("--max-repair", type=int, dest="max_repair", help="Repair attempts per unit")
            p.add_argument("--rules", help="Translation rules file")
            p.add_argument("--report-format", choices=["text", "json"], dest="report_format")
            p.add_argument("--force", action="store_true", default=None, help="Replace an existing workspace")
            p.add_argument("--test-hook", dest="test_hook", help="Command run in the workspace after the final build")

    report = sub.add_parser("report", parents=[common], help="Print coverage tables and the error histogram")
    report.add_argument("--report-format", choices=["text", "json"], dest="report_format")
    return parser


def _defines(values: Optional[List[str]]) -> Optional[List[str]]:
    if not values:
        return None
    return [name.strip() for value in values for name in value.split(",") if name.strip()]


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """RunConfig from parsed arguments; unset flags fall back to seamstress.toml"""
    flags: Dict[str, Any] = {
        "project_root": args.project,
        "out_dir": args.out,
        "defines": _defines(args.define),
        "include_dirs": args.include_dir,
        "backend": getattr(args, "backend", None),
        "cap": getattr(args, "cap", None),
        "max_repair_attempts": getattr(args, "max_repair", None),
        "rules_path": getattr(args, "rules", None),
        "report_format": getattr(args, "report_format", None),
        "force": getattr(args, "force", None),
        "test_hook": getattr(args, "test_hook", None),
    }
    return load_run_config(flags, args.config)


@contextlib.contextmanager
def out_dir_lock(out_dir: Path) -> Iterator[Path]:
    """Exclusive lock on an output directory for the duration of one command"""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / LOCK_FILE
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(f"{out_dir} is in use by another command (remove {path} if it is stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        path.unlink(missing_ok=True)


@safe_file_operation("writing outputs")
def _write_outputs(writer: Callable[[], Any]) -> Dict[str, Any]:
    writer()
    return {}


def _analyze(config: RunConfig) -> ProjectAnalysis:
    return analyze_project(config.project_root, config.include_dirs, defined=config.defines or None,
                           exclude=[config.out_dir])


def cmd_analyze(config: RunConfig) -> int:
    """Scan the project, write analysis.json and print the summary table"""
    if not config.project_root.is_dir():
        raise ValidationError(f"Project root {config.project_root} is not a directory")
    analysis = _analyze(config)
    with out_dir_lock(config.out_dir):
        result = _write_outputs(lambda: write_json(config.out_dir / "analysis.json", analysis.to_dict()))
    if result.get("error"):
        print(f"❌ {result['error']}")
        return EXIT_ABORTED
    print(display_analysis(analysis))
    return EXIT_OK


def _preprocess(config: RunConfig) -> PreprocessResult:
    if not config.project_root.is_dir():
        raise ValidationError(f"Project root {config.project_root} is not a directory")
    analysis = _analyze(config)
    result = preprocess_project(analysis, config.include_dirs)
    for warning in result.warnings:
        print(f"⚠️ {warning}")
    return result


def cmd_preprocess(config: RunConfig) -> int:
    """Write preprocessed modules, origin maps and features.json"""
    result = _preprocess(config)
    with out_dir_lock(config.out_dir):
        status = _write_outputs(lambda: write_preprocessed(config.out_dir, result))
    if status.get("error"):
        print(f"❌ {status['error']}")
        return EXIT_ABORTED
    features = result.all_features()
    print(f"✅ {len(result.modules)} module(s) preprocessed in order: {', '.join(result.order) or '-'}")
    print(f"📊 {len(features)} feature(s): {', '.join(f.feature_name for f in features) or '-'}")
    return EXIT_OK


def backend_profile(config: RunConfig) -> BackendProfile:
    if config.is_replay:
        return ReplayBackend(config.replay_dir).profile
    return config.profile()


def _clear_transcript(directory: Path) -> None:
    if directory.is_dir():
        shutil.rmtree(directory)


def make_backend(config: RunConfig) -> LlmBackend:
    """
    Replay backend for replay:<dir>, otherwise the chat backend recording
    into `<out>/transcript`

    Raises:
        MissingCredentials: live profile whose key variable is unset
    """
    if config.is_replay:
        return ReplayBackend(config.replay_dir, max_format_retries=config.max_format_retries,
                             chunk_lines=config.chunk_lines)
    profile = config.profile()
    transcript_dir = config.out_dir / "transcript"
    backend = ChatBackend(profile, max_format_retries=config.max_format_retries, chunk_lines=config.chunk_lines)
    _clear_transcript(transcript_dir)
    backend.transcript = TranscriptWriter(transcript_dir, profile)
    return backend


def cmd_segment(config: RunConfig) -> int:
    """Preprocess and write the initial segment plan"""
    result = _preprocess(config)
    cap = config.cap or initial_cap(backend_profile(config), config.max_cap_lines, config.floor_lines)
    plan = plan_project(result.modules, cap, config.floor_lines)
    with out_dir_lock(config.out_dir):
        status = _write_outputs(lambda: (write_preprocessed(config.out_dir, result),
                                         write_segments(config.out_dir, plan)))
    if status.get("error"):
        print(f"❌ {status['error']}")
        return EXIT_ABORTED
    oversized = sum(1 for u in plan.units if u.oversized)
    print(f"✅ {len(plan.units)} unit(s) at cap {cap} lines ({oversized} oversized)")
    return EXIT_OK


def cmd_translate(config: RunConfig, runner: CommandRunner = run_command,
                  backend: Optional[LlmBackend] = None) -> int:
    """Run the full pipeline and print the coverage report"""
    workspace_root = config.out_dir / "rust"
    if workspace_root.exists() and any(workspace_root.iterdir()) and not config.force:
        raise WorkspaceExists(str(workspace_root))

    result = _preprocess(config)
    with out_dir_lock(config.out_dir):
        backend = backend or make_backend(config)
        cap = config.cap or initial_cap(backend.profile, config.max_cap_lines, config.floor_lines)
        plan = plan_project(result.modules, cap, config.floor_lines)
        write_preprocessed(config.out_dir, result)
        rules = load_rules_profile(config.rules_path)
        report = run_pipeline(config, result, plan, backend, rules=rules, runner=runner)
    print_coverage(report, report_format=config.report_format)
    return EXIT_ABORTED if report.aborted_units else EXIT_OK


def cmd_report(out_dir: Path, report_format: str = "text") -> int:
    """Print report.json of a finished run"""
    path = Path(out_dir) / "report.json"
    if not path.is_file():
        raise ValidationError(f"No report at {path}; run translate first")
    output = print_coverage(path.read_text(encoding="utf-8"), report_format=report_format)
    return EXIT_OK if output is not None else EXIT_ABORTED


def _report_target(args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    if args.project:
        return Path(args.project) / DEFAULT_OUT
    raise ValidationError("report needs --out or --project")


def main(argv: Optional[Sequence[str]] = None, runner: CommandRunner = run_command) -> int:
    args = build_parser().parse_args(argv)
    setup_environment()
    try:
        if args.command == "report":
            return cmd_report(_report_target(args), args.report_format or "text")
        config = config_from_args(args)
        if args.command == "analyze":
            return cmd_analyze(config)
        if args.command == "preprocess":
            return cmd_preprocess(config)
        if args.command == "segment":
            return cmd_segment(config)
        return cmd_translate(config, runner=runner)
    except USAGE_ERRORS as e:
        print(f"❌ {e}")
        return EXIT_USAGE
    except SeamstressError as e:
        print(f"❌ {e}")
        return EXIT_ABORTED
