"""
Generated Rust workspace

Scaffolds the Cargo package the translation is written into, runs the
toolchain in JSON-diagnostics mode, classifies the errors it reports and
applies the line-range patches of repair answers.
"""

import json
import logging
import shutil
import subprocess
import time
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Union

from .common_utils import atomic_write, join_lines, rust_identifier, split_lines
from .error_handling import (
    CompileTimeout, FormatError, OverlappingPatches, PatchOutOfRange, ToolchainMissing,
    WorkspaceExists,
)
from .models import (
    CompileReport, Diagnostic, ErrorCategory, FeatureRecord, RepairPatch, TranslationUnit,
)

logger = logging.getLogger(__name__)

MANIFEST = "Cargo.toml"
BUILD_SCRIPT = "build.rs"
LIB_ROOT = "src/lib.rs"
DEFAULT_COMPILE_TIMEOUT = 300.0

LIB_PROLOGUE = (
    "#![allow(dead_code, unused_imports, unused_variables, unused_mut, unused_assignments)]\n"
    "#![allow(non_snake_case, non_camel_case_types, non_upper_case_globals)]\n"
)

# rustc error code -> category; codes not listed fall back to Type
ERROR_CODE_TABLE: Dict[str, ErrorCategory] = {}


def _register(category: ErrorCategory, codes: str) -> None:
    for code in codes.split():
        ERROR_CODE_TABLE[code] = category


_register(ErrorCategory.SYNTAX, "E0178 E0585 E0586 E0758 E0765 E0766")
_register(ErrorCategory.GENERICS, "E0107 E0109 E0207 E0392 E0401 E0403 E0747 E0770")
_register(ErrorCategory.LIFETIME, "E0106 E0261 E0262 E0263 E0310 E0495 E0515 E0597 E0621 E0623 E0716 E0759")
_register(ErrorCategory.MODULES, "E0252 E0254 E0255 E0365 E0432 E0433 E0583 E0603 E0616 E0624")
_register(ErrorCategory.CONSTANTS, "E0010 E0013 E0015 E0080 E0435 E0493 E0744")
_register(ErrorCategory.ATTRIBUTES, "E0452 E0537 E0538 E0539 E0541 E0552 E0554 E0565 E0566 E0589 E0658")
_register(ErrorCategory.TYPE, "E0023 E0026 E0027 E0054 E0061 E0063 E0069 E0070 E0133 E0282 E0283 "
                              "E0308 E0560 E0604 E0605 E0606 E0608 E0609 E0610 E0614 E0615 E0618 E0620 E0689")
_register(ErrorCategory.TRAITS, "E0034 E0038 E0046 E0117 E0119 E0184 E0204 E0277 E0369 E0404 E0405 "
                                "E0407 E0599 E0600 E0782")
_register(ErrorCategory.OWNERSHIP, "E0373 E0381 E0382 E0384 E0499 E0502 E0503 E0505 E0506 E0507 "
                                   "E0508 E0509 E0594 E0596")
_register(ErrorCategory.NAME_RESOLUTION, "E0408 E0411 E0412 E0415 E0416 E0422 E0423 E0424 E0425 "
                                         "E0426 E0428 E0429 E0430 E0431 E0434 E0531 E0532 E0574 E0576")

NON_DIAGNOSTIC_PREFIXES = ("aborting due to", "could not compile")

CommandRunner = Callable[[Sequence[str], Path, float], "subprocess.CompletedProcess[str]"]


def run_command(cmd: Sequence[str], cwd: Path, timeout: float) -> "subprocess.CompletedProcess[str]":
    """
    Run the toolchain

    Raises:
        ToolchainMissing: the program is not installed
        CompileTimeout: it did not finish in time
    """
    if shutil.which(cmd[0]) is None:
        raise ToolchainMissing(f"'{cmd[0]}' not found on PATH; install the Rust toolchain")
    try:
        return subprocess.run(list(cmd), cwd=str(cwd), capture_output=True, text=True, timeout=timeout)
    except FileNotFoundError as e:
        raise ToolchainMissing(str(e)) from e
    except subprocess.TimeoutExpired as e:
        raise CompileTimeout(timeout) from e


# --- workspace --------------------------------------------------------------------

@dataclass
class Workspace:
    """The Cargo package under `<out>/rust`"""
    root: Path
    crate_name: str
    modules: List[str]
    features: List[str] = field(default_factory=list)

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST

    @property
    def build_script_path(self) -> Optional[Path]:
        path = self.root / BUILD_SCRIPT
        return path if path.exists() else None

    @property
    def lib_path(self) -> Path:
        return self.root / LIB_ROOT

    def path(self, rel: str) -> Path:
        return self.root / rel

    def exists(self, rel: str) -> bool:
        return self.path(rel).is_file()

    def read(self, rel: str) -> str:
        return self.path(rel).read_text(encoding="utf-8")

    def write(self, rel: str, text: str) -> None:
        atomic_write(self.path(rel), text)

    def line_count(self, rel: str) -> int:
        return len(split_lines(self.read(rel))) if self.exists(rel) else 0

    def files(self) -> List[str]:
        """Manifest, build script and every Rust source, workspace-relative"""
        found = [p.relative_to(self.root).as_posix() for p in sorted(self.root.glob("src/**/*.rs"))]
        for extra in (BUILD_SCRIPT, MANIFEST):
            if self.exists(extra):
                found.insert(0, extra)
        return found

    def write_unit(self, unit: TranslationUnit, rust_code: str) -> str:
        """Write a unit's Rust file and declare it in its module's mod.rs"""
        rel = unit.rust_path
        self.write(rel, rust_code if rust_code.endswith("\n") else rust_code + "\n")
        mod_rel = f"src/{unit.module}/mod.rs"
        mod_text = self.read(mod_rel) if self.exists(mod_rel) else ""
        declaration = f"pub mod unit{unit.ordinal};\npub use unit{unit.ordinal}::*;\n"
        if f"pub mod unit{unit.ordinal};" not in mod_text:
            self.write(mod_rel, mod_text + declaration)
        return rel

    def snapshot(self) -> Dict[str, str]:
        return {rel: self.read(rel) for rel in self.files()}

    def restore(self, snapshot: Dict[str, str]) -> None:
        """Put every file back as it was when the snapshot was taken"""
        for rel in self.files():
            if rel not in snapshot:
                self.path(rel).unlink()
        for rel, text in snapshot.items():
            if not self.exists(rel) or self.read(rel) != text:
                self.write(rel, text)

    def apply_patches(self, rel: str, patches: Sequence[RepairPatch]) -> str:
        """Patch one file in place; returns the new text"""
        old = self.read(rel) if self.exists(rel) else ""
        new = apply_patches(old, patches)
        self.write(rel, new)
        return new


def render_manifest(crate_name: str, features: Iterable[str]) -> str:
    lines = [
        "[package]",
        f'name = "{crate_name}"',
        'version = "0.1.0"',
        'edition = "2021"',
        "",
        "[lib]",
        'path = "src/lib.rs"',
        "",
        "[dependencies]",
        "",
        "[features]",
    ]
    lines += [f"{name} = []" for name in features]
    return join_lines(lines)


def render_build_script(enabled: Iterable[str]) -> str:
    lines = ["fn main() {"]
    lines += [f'    println!("cargo:rustc-cfg=feature=\\"{name}\\"");' for name in enabled]
    lines.append("}")
    return join_lines(lines)


def scaffold_workspace(root: Union[str, Path], modules: Sequence[str], feature_records: Sequence[FeatureRecord],
                       crate_name: str = "translated", force: bool = False) -> Workspace:
    """
    Create the Cargo package: manifest, lib root with one module per C
    module, and a build script enabling the originally defined features

    Raises:
        WorkspaceExists: root is not empty and force is not set
    """
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise WorkspaceExists(str(root))
        shutil.rmtree(root)

    features = sorted({r.feature_name for r in feature_records})
    enabled = sorted({r.feature_name for r in feature_records if r.originally_defined})
    workspace = Workspace(root=root, crate_name=rust_identifier(crate_name), modules=list(modules),
                          features=features)
    workspace.write(MANIFEST, render_manifest(workspace.crate_name, features))
    if enabled:
        workspace.write(BUILD_SCRIPT, render_build_script(enabled))
    workspace.write(LIB_ROOT, LIB_PROLOGUE + "".join(f"pub mod {m};\n" for m in modules))
    for m in modules:
        workspace.write(f"src/{m}/mod.rs", "")
    logger.info(f"✅ Scaffolded workspace {root} ({len(modules)} modules, {len(enabled)} enabled features)")
    return workspace


def open_workspace(root: Union[str, Path]) -> Workspace:
    """Workspace object for an existing package"""
    root = Path(root)
    manifest = tomllib.loads((root / MANIFEST).read_text(encoding="utf-8"))
    modules = sorted(p.parent.name for p in root.glob("src/*/mod.rs"))
    return Workspace(root=root, crate_name=manifest["package"]["name"], modules=modules,
                     features=sorted(manifest.get("features", {})))


# --- compile ------------------------------------------------------------------------

def _primary_span(message: Dict[str, Any]) -> Dict[str, Any]:
    spans = message.get("spans") or []
    for span in spans:
        if span.get("is_primary"):
            return span
    return spans[0] if spans else {}


def parse_diagnostics(stdout: str) -> List[Diagnostic]:
    """Compiler messages from `--message-format=json` output"""
    diagnostics = []
    for line in stdout.splitlines():
        line = line.strip()
        if not line.startswith("{"):
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError:
            continue
        if data.get("reason") != "compiler-message":
            continue
        message = data.get("message", {})
        level = message.get("level", "")
        text = message.get("message", "")
        if level not in ("error", "warning") or text.startswith(NON_DIAGNOSTIC_PREFIXES):
            continue
        span = _primary_span(message)
        code = (message.get("code") or {}).get("code")
        diagnostics.append(Diagnostic(code=code, message=text, file=span.get("file_name"),
                                      line=span.get("line_start"), level=level))
    return diagnostics


def rendered_log(stdout: str) -> str:
    """The human-readable text of every compiler message, in order"""
    rendered = []
    for line in stdout.splitlines():
        if not line.startswith("{"):
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError:
            continue
        if data.get("reason") == "compiler-message":
            text = data.get("message", {}).get("rendered")
            if text:
                rendered.append(text)
    return "".join(rendered)


def compile_workspace(workspace: Workspace, timeout: float = DEFAULT_COMPILE_TIMEOUT,
                      runner: CommandRunner = run_command, full_build: bool = False) -> CompileReport:
    """
    Check (or, at the end of a run, build) the workspace

    Raises:
        ToolchainMissing, CompileTimeout
    """
    cmd = ["cargo", "build" if full_build else "check", "--message-format=json"]
    started = time.monotonic()
    result = runner(cmd, workspace.root, timeout)
    duration = time.monotonic() - started

    diagnostics = parse_diagnostics(result.stdout or "")
    raw_log = rendered_log(result.stdout or "")
    stderr = result.stderr or ""
    errors = [d for d in diagnostics if d.level == "error"]
    if result.returncode != 0 and not errors:
        # cargo-level failure such as a broken manifest
        message = next((l for l in stderr.splitlines() if l.startswith("error")), "cargo failed")
        diagnostics.append(Diagnostic(code=None, message=message, file=MANIFEST, line=None))
        raw_log += stderr
    report = CompileReport(success=not [d for d in diagnostics if d.level == "error"],
                           raw_log=raw_log, diagnostics=diagnostics, duration=duration)
    classify_errors(report)
    logger.info(f"{'✅' if report.success else '❌'} cargo {cmd[1]}: {len(report.errors)} error(s) "
                f"in {duration:.1f}s")
    return report


def classify_code(code: Optional[str]) -> ErrorCategory:
    """Category of one error code; no code means a parse-level error"""
    if code is None:
        return ErrorCategory.SYNTAX
    category = ERROR_CODE_TABLE.get(code)
    if category is None:
        logger.warning(f"⚠️ Unmapped rustc error code {code}; counted as Type")
        return ErrorCategory.TYPE
    return category


def classify_errors(report: CompileReport) -> Dict[str, int]:
    """Assign a category to every error and return the category histogram"""
    histogram = {c.value: 0 for c in ErrorCategory}
    for d in report.errors:
        d.category = classify_code(d.code)
        histogram[d.category.value] += 1
    return histogram


# --- patches ------------------------------------------------------------------------

def validate_patches(patches: Sequence[RepairPatch], length: int) -> List[RepairPatch]:
    """
    Check ranges against a file of `length` lines

    end = length + 1 is only allowed together with start = end (append).

    Raises:
        PatchOutOfRange, OverlappingPatches
    """
    for p in patches:
        if not (1 <= p.start_line <= p.end_line <= length + 1) or \
                (p.end_line == length + 1 and p.start_line != p.end_line):
            raise PatchOutOfRange(p.start_line, p.end_line, length)
    ordered = sorted(patches, key=lambda p: (p.start_line, p.end_line))
    for first, second in zip(ordered, ordered[1:]):
        if second.start_line <= first.end_line:
            raise OverlappingPatches((first.start_line, first.end_line), (second.start_line, second.end_line))
    return ordered


def apply_patches(text: str, patches: Sequence[RepairPatch]) -> str:
    """
    Apply validated patches, last one first so earlier line numbers hold

    Each patch replaces lines start..end with its replacement lines; an
    empty replacement deletes them.
    """
    lines = split_lines(text)
    for p in reversed(validate_patches(patches, len(lines))):
        lines[p.start_line - 1:p.end_line] = p.replacement_lines
    return join_lines(lines)


def validate_manifest(text: str, allowlist: Iterable[str] = ()) -> Dict[str, Any]:
    """
    Parse a patched Cargo.toml and reject crates outside the allowlist

    Raises:
        FormatError: invalid TOML, missing [package] or a disallowed dependency
    """
    try:
        manifest = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise FormatError(f"Cargo.toml is not valid TOML: {e}") from e
    if "package" not in manifest:
        raise FormatError("Cargo.toml lost its [package] table")
    allowed = set(allowlist)
    tables = [manifest.get(k, {}) for k in ("dependencies", "dev-dependencies", "build-dependencies")]
    for target in manifest.get("target", {}).values():
        tables += [target.get(k, {}) for k in ("dependencies", "dev-dependencies", "build-dependencies")]
    for table in tables:
        for crate in table:
            if crate not in allowed:
                raise FormatError(f"dependency '{crate}' is not allowed (allowed: {sorted(allowed) or 'none'})")
    return manifest
