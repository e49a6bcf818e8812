"""
Shared test helpers: fixture projects, a scripted LLM backend and a fake
cargo that reports `// @E0432`-style markers as compiler errors
"""
import json
import re
import shutil
import subprocess
import sys
import tomllib
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Union

import pytest

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from modules.c_model import scan_elements
from modules.config import RunConfig
from modules.error_handling import ContextOverflow
from modules.llm_backend import LlmBackend
from modules.models import BackendProfile, LlmResponsePart, ModuleSource, PromptEnvelope, PromptKind
from modules.preprocess import compress_origins
from modules.common_utils import count_lines, split_lines

FIXTURES = Path(__file__).parent / "fixtures"

PROFILE = BackendProfile(name="scripted", context_window=200000, output_limit=8192)

MARKER_RE = re.compile(r'@(E\d{4})')

BROKEN_IMPORT = "use crate::geometry::Quadtree; // @E0432"
FIXED_IMPORT = "use crate::geometry::*;"
MANIFEST_ADDITION = "[profile.dev]\nopt-level = 0"

# Rust written for each unit of fixtures/shapes planned at a 30-line cap
SHAPES_RUST: Dict[str, str] = {
    "geometry.1": """\
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

pub fn distance(a: Point, b: Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let squared = dx * dx + dy * dy;
    if squared == 0.0 {
        return 0.0;
    }
    squared.sqrt()
}
""",
    "geometry.2": """\
use crate::geometry::*;

pub fn midpoint(a: Point, b: Point) -> Point {
    Point {
        x: (a.x + b.x) / 2.0,
        y: (a.y + b.y) / 2.0,
    }
}
""",
    "shapes.1": """\
use crate::geometry::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

pub const PI: f64 = 3.14159265358979;

pub fn circle_area(c: Circle) -> f64 {
    PI * c.radius * c.radius
}
""",
    "shapes.2": f"""\
{BROKEN_IMPORT}
use crate::shapes::*;

pub fn circles_overlap(a: Circle, b: Circle) -> i32 {{
    let d = distance(a.center, b.center);
    let reach = a.radius + b.radius;
    if d <= reach {{
        return 1;
    }}
    0
}}
""",
    "main_mod.1": """\
use crate::geometry::*;
use crate::shapes::*;

pub fn describe(c: Circle) -> String {
    format!(
        "circle at ({:.1}, {:.1}) with area {:.2}",
        c.center.x,
        c.center.y,
        circle_area(c)
    )
}
""",
    "main_mod.2": """\
use crate::geometry::*;
use crate::main_mod::*;
use crate::shapes::*;

pub fn main() -> i32 {
    let origin = Point { x: 0.0, y: 0.0 };
    let corner = Point { x: 3.0, y: 4.0 };
    let a = Circle { center: origin, radius: 2.0 };
    let b = Circle { center: midpoint(origin, corner), radius: 1.0 };

    println!("{}", describe(a));
    println!("{}", describe(b));
    if circles_overlap(a, b) != 0 {
        println!("the circles overlap");
    }
    println!("distance {:.1}", distance(origin, corner));
    0
}
""",
}


def section(envelope: PromptEnvelope, label: str) -> Optional[str]:
    return dict(envelope.body_sections).get(label)


def listed(text: str) -> List[str]:
    """Entries of a `- item` listing; `- name (kind)` yields name"""
    names = []
    for line in text.splitlines():
        if line.startswith("- "):
            names.append(line[2:].split(" (")[0].strip())
    return names


def stub_rust(unit_id: str) -> str:
    module, ordinal = unit_id.rsplit(".", 1)
    return f"pub fn unit_{module}_{ordinal}() {{}}\n"


class ShapesResponder:
    """
    Answers every envelope kind of a run over fixtures/shapes

    Args:
        rust: unit id -> Rust code; unknown units get a stub function
        failing: units whose Rust always carries a compile-error marker
        overflow: units whose first request overflows the context window
        fix: whether repair answers remove error markers
    """

    def __init__(self, rust: Optional[Dict[str, str]] = None, failing: Sequence[str] = (),
                 overflow: Sequence[str] = (), fix: bool = True, select_extra: Sequence[str] = ()):
        self.rust = dict(SHAPES_RUST if rust is None else rust)
        self.failing: Set[str] = set(failing)
        self.overflow: Set[str] = set(overflow)
        self.fix = fix
        self.select_extra = list(select_extra)
        self.kinds: List[str] = []

    def __call__(self, envelope: PromptEnvelope) -> Union[str, Dict[str, Any]]:
        self.kinds.append(envelope.kind.value)
        if envelope.kind == PromptKind.TRANSLATE:
            if envelope.unit_id in self.overflow:
                self.overflow.discard(envelope.unit_id)
                raise ContextOverflow(PROFILE.context_window + 1, PROFILE.context_window, envelope.unit_id)
            code = self.rust.get(envelope.unit_id, stub_rust(envelope.unit_id))
            if envelope.unit_id in self.failing:
                code = "const BROKEN: i32 = 0; // @E0308\n" + code
            return {"rust_code": code}
        if envelope.kind == PromptKind.SELECT:
            return {"files": listed(section(envelope, "candidates")) + self.select_extra}
        if envelope.kind == PromptKind.REPAIR:
            return {"patches": self.repair(envelope)}
        mappings = [{"c_name": name, "rust_name": name, "removed": False}
                    for name in listed(section(envelope, "elements"))]
        return {"mappings": mappings}

    def repair(self, envelope: PromptEnvelope) -> List[Dict[str, Any]]:
        target, text = envelope.body_sections[-1]
        if target == "Cargo.toml":
            if "[profile.dev]" in text:
                return []
            end = count_lines(text) + 1
            return [{"start_line": end, "end_line": end, "code": MANIFEST_ADDITION}]
        if not self.fix:
            return []
        patches = []
        for n, line in enumerate(split_lines(text), 1):
            if MARKER_RE.search(line):
                code = FIXED_IMPORT if line == BROKEN_IMPORT else ""
                patches.append({"start_line": n, "end_line": n, "code": code})
        return patches


class ScriptedBackend(LlmBackend):
    """Backend answering from a Python callable; dict answers are sent as JSON"""

    name = "scripted"

    def __init__(self, answer: Callable[[PromptEnvelope], Union[str, Dict[str, Any], List[Any]]],
                 profile: BackendProfile = PROFILE, **kwargs):
        super().__init__(profile, **kwargs)
        self.answer = answer
        self.envelopes: List[PromptEnvelope] = []

    def _exchange(self, envelope, memory):
        self.envelopes.append(envelope)
        reply = self.answer(envelope)
        text = reply if isinstance(reply, str) else json.dumps(reply)
        return [LlmResponsePart(part_index=1, payload_fragment=text)]


def compiler_message(code: str, rel: str, line: int, level: str = "error") -> str:
    return json.dumps({
        "reason": "compiler-message",
        "message": {
            "level": level,
            "message": f"marker {code}",
            "code": {"code": code},
            "spans": [{"file_name": rel, "line_start": line, "is_primary": True}],
            "rendered": f"{level}[{code}]: marker {code}\n --> {rel}:{line}:1\n\n",
        },
    })


class FakeCargo:
    """
    Command runner standing in for cargo

    Every `@E####` marker in a source file becomes one error at that line;
    an unparsable Cargo.toml fails without compiler messages. Other
    commands (test hooks) exit with hook_status.
    """

    def __init__(self, hook_status: int = 0):
        self.calls: List[List[str]] = []
        self.hook_status = hook_status

    def __call__(self, cmd, cwd, timeout):
        cmd = list(cmd)
        self.calls.append(cmd)
        root = Path(cwd)
        if cmd[0] != "cargo":
            return subprocess.CompletedProcess(cmd, self.hook_status, "", "")
        try:
            tomllib.loads((root / "Cargo.toml").read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError):
            return subprocess.CompletedProcess(cmd, 101, "", "error: failed to parse manifest\n")

        messages = []
        for path in sorted(root.glob("src/**/*.rs")):
            rel = path.relative_to(root).as_posix()
            for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
                for m in MARKER_RE.finditer(line):
                    messages.append(compiler_message(m.group(1), rel, n))
        success = not messages
        messages.append(json.dumps({"reason": "build-finished", "success": success}))
        return subprocess.CompletedProcess(cmd, 0 if success else 101, "\n".join(messages) + "\n", "")

    @property
    def cargo_calls(self) -> List[List[str]]:
        return [c for c in self.calls if c[0] == "cargo"]


def module_from_text(name: str, text: str) -> ModuleSource:
    file_name = f"{name}.c"
    origins = [(file_name, n) for n in range(1, count_lines(text) + 1)]
    return ModuleSource(name=name, text=text, elements=scan_elements(text, file_name),
                        origin_map=compress_origins(origins))


def write_files(root: Path, files: Dict[str, str]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for rel, text in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return root


def make_config(project: Path, out: Path, **overrides) -> RunConfig:
    values = dict(project_root=project, out_dir=out, backend="scripted", max_repair_attempts=3,
                  max_format_retries=3)
    values.update(overrides)
    return RunConfig(**values).validate()


@pytest.fixture
def shapes_project(tmp_path) -> Path:
    """A copy of fixtures/shapes: geometry, shapes and main modules"""
    return Path(shutil.copytree(FIXTURES / "shapes", tmp_path / "shapes"))


@pytest.fixture
def bst_project(tmp_path) -> Path:
    """A copy of fixtures/bst: one 158-line file with seven elements"""
    return Path(shutil.copytree(FIXTURES / "bst", tmp_path / "bst"))


@pytest.fixture
def fake_cargo() -> FakeCargo:
    return FakeCargo()
