#!/usr/bin/env python3
"""
Tests for workspace scaffolding, compiler output parsing and line-range patches
"""
import json
import random
import shutil
import sys
from pathlib import Path
from typing import List

import pytest

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from modules.common_utils import join_lines, split_lines
from modules.error_handling import (
    FormatError, OverlappingPatches, PatchOutOfRange, ToolchainMissing, WorkspaceExists,
)
from modules.models import CompileReport, ErrorCategory, FeatureRecord, RepairPatch, TranslationUnit
from modules.workspace import (
    apply_patches, classify_code, classify_errors, compile_workspace, open_workspace, parse_diagnostics,
    rendered_log, run_command, scaffold_workspace, validate_manifest, validate_patches,
)

from conftest import BROKEN_IMPORT, FIXED_IMPORT, SHAPES_RUST, FakeCargo, compiler_message

MODULES = ["geometry", "shapes", "main_mod"]
FEATURES = [FeatureRecord("FEATURE_X", True, "a.c", 1), FeatureRecord("FEATURE_Y", False, "a.c", 5)]

FIVE = "one\ntwo\nthree\nfour\nfive\n"


def unit(module: str, ordinal: int) -> TranslationUnit:
    return TranslationUnit(module=module, ordinal=ordinal, start_line=1, end_line=1, element_ids=[], text="",
                           est_tokens=0)


def patch(start: int, end: int, code: str, file: str = "src/m/unit1.rs") -> RepairPatch:
    return RepairPatch(file=file, start_line=start, end_line=end, replacement=code)


def test_scaffold_layout(tmp_path):
    ws = scaffold_workspace(tmp_path / "rust", MODULES, FEATURES, crate_name="shapes-demo")
    assert ws.crate_name == "shapes_demo"
    assert ws.files() == ["Cargo.toml", "build.rs", "src/geometry/mod.rs", "src/lib.rs",
                          "src/main_mod/mod.rs", "src/shapes/mod.rs"]
    manifest = validate_manifest(ws.read("Cargo.toml"))
    assert manifest["package"]["name"] == "shapes_demo"
    assert manifest["features"] == {"feature_x": [], "feature_y": []}
    assert 'cargo:rustc-cfg=feature=\\"feature_x\\"' in ws.read("build.rs")
    assert "feature_y" not in ws.read("build.rs")
    lib = ws.read("src/lib.rs")
    assert lib.startswith("#![allow(")
    assert "pub mod geometry;\npub mod shapes;\npub mod main_mod;\n" in lib


def test_scaffold_without_enabled_features(tmp_path):
    ws = scaffold_workspace(tmp_path / "rust", ["m"], [FeatureRecord("DEBUG", False, "m.c", 3)])
    assert ws.build_script_path is None
    assert validate_manifest(ws.read("Cargo.toml"))["features"] == {"debug": []}


def test_existing_workspace_needs_force(tmp_path):
    root = tmp_path / "rust"
    root.mkdir()
    (root / "leftover.txt").write_text("keep me")
    with pytest.raises(WorkspaceExists):
        scaffold_workspace(root, ["m"], [])
    assert (root / "leftover.txt").exists()
    scaffold_workspace(root, ["m"], [], force=True)
    assert not (root / "leftover.txt").exists()


def test_open_workspace(tmp_path):
    scaffold_workspace(tmp_path / "rust", MODULES, FEATURES, crate_name="demo")
    ws = open_workspace(tmp_path / "rust")
    assert ws.crate_name == "demo"
    assert ws.modules == sorted(MODULES)
    assert ws.features == ["feature_x", "feature_y"]


def test_write_unit_declares_module_once(tmp_path):
    ws = scaffold_workspace(tmp_path / "rust", ["m"], [])
    assert ws.write_unit(unit("m", 1), "pub fn a() {}") == "src/m/unit1.rs"
    ws.write_unit(unit("m", 2), "pub fn b() {}\n")
    ws.write_unit(unit("m", 1), "pub fn a2() {}\n")
    assert ws.read("src/m/mod.rs") == "pub mod unit1;\npub use unit1::*;\npub mod unit2;\npub use unit2::*;\n"
    assert ws.read("src/m/unit1.rs") == "pub fn a2() {}\n"
    assert ws.line_count("src/m/unit2.rs") == 1
    assert ws.line_count("src/m/unit9.rs") == 0


def test_snapshot_and_restore(tmp_path):
    ws = scaffold_workspace(tmp_path / "rust", ["m"], [])
    ws.write_unit(unit("m", 1), "pub fn a() {}\n")
    snapshot = ws.snapshot()
    ws.write_unit(unit("m", 2), "pub fn b() {}\n")
    ws.write("src/m/unit1.rs", "broken\n")
    ws.restore(snapshot)
    assert ws.snapshot() == snapshot
    assert not ws.exists("src/m/unit2.rs")


def test_apply_patches_replace_delete_append():
    patched = apply_patches(FIVE, [
        patch(4, 4, ""),
        patch(1, 2, "ONE\nONE AND A HALF\nTWO"),
        patch(6, 6, "six"),
    ])
    assert patched == "ONE\nONE AND A HALF\nTWO\nthree\nfive\nsix\n"


def test_append_to_empty_file():
    assert apply_patches("", [patch(1, 1, "[profile.dev]")]) == "[profile.dev]\n"


@pytest.mark.parametrize("start,end", [(0, 1), (3, 2), (5, 7), (4, 6), (7, 7)])
def test_patch_out_of_range(start, end):
    with pytest.raises(PatchOutOfRange) as info:
        apply_patches(FIVE, [patch(start, end, "x")])
    assert info.value.length == 5


def test_overlapping_patches():
    with pytest.raises(OverlappingPatches) as info:
        apply_patches(FIVE, [patch(3, 4, "x"), patch(1, 3, "y")])
    assert info.value.first == (1, 3)
    assert info.value.second == (3, 4)


def random_patches(rng: random.Random, length: int) -> List[RepairPatch]:
    """Non-overlapping patches over a file of `length` lines, in random order"""
    patches, line = [], 1
    while line <= length:
        line += rng.randint(0, 3)
        if line > length:
            break
        end = rng.randint(line, min(length, line + 4))
        code = "\n".join(f"new {line}.{k}" for k in range(rng.randint(0, 3)))
        patches.append(patch(line, end, code))
        line = end + 1
    if rng.random() < 0.3:
        patches.append(patch(length + 1, length + 1, "\n".join(f"tail {k}" for k in range(rng.randint(1, 3)))))
    rng.shuffle(patches)
    return patches


def patched_in_sequence(lines: List[str], patches: List[RepairPatch]) -> List[str]:
    """Walk the file top to bottom, swapping in each patch where it starts"""
    by_start = {p.start_line: p for p in patches}
    out, line = [], 1
    while line <= len(lines):
        p = by_start.get(line)
        if p is None:
            out.append(lines[line - 1])
            line += 1
        else:
            out += p.replacement_lines
            line = p.end_line + 1
    if len(lines) + 1 in by_start:
        out += by_start[len(lines) + 1].replacement_lines
    return out


@pytest.mark.parametrize("seed", range(10))
def test_patches_match_sequential_edit(seed):
    rng = random.Random(seed)
    for _ in range(100):
        length = rng.randint(0, 40)
        lines = [f"line {i}" for i in range(1, length + 1)]
        patches = random_patches(rng, length)
        patched = apply_patches(join_lines(lines), patches)
        expected = patched_in_sequence(lines, patches)
        assert patched == join_lines(expected)

        removed = sum(0 if p.start_line == length + 1 else p.end_line - p.start_line + 1 for p in patches)
        added = sum(len(p.replacement_lines) for p in patches)
        assert len(split_lines(patched)) == length - removed + added


@pytest.mark.parametrize("seed", range(10))
def test_overlapping_patch_sets_are_rejected(seed):
    rng = random.Random(100 + seed)
    for _ in range(100):
        length = rng.randint(1, 40)
        patches = random_patches(rng, length)
        replacing = [p for p in patches if p.start_line <= length]
        if replacing:
            hit = rng.choice(replacing)
            start = rng.randint(hit.start_line, hit.end_line)
            extra = patch(start, rng.randint(start, length), "clash")
        else:
            extra = patch(length + 1, length + 1, "clash")
            patches.append(patch(length + 1, length + 1, "tail"))
        patches.insert(rng.randint(0, len(patches)), extra)
        with pytest.raises(OverlappingPatches):
            apply_patches(join_lines(f"line {i}" for i in range(1, length + 1)), patches)
        with pytest.raises(OverlappingPatches):
            validate_patches(patches, length)


@pytest.mark.parametrize("seed", range(10))
def test_out_of_range_patch_sets_are_rejected(seed):
    rng = random.Random(200 + seed)
    for _ in range(100):
        length = rng.randint(1, 40)
        patches = random_patches(rng, length)
        start = rng.randint(1, length)
        bad = rng.choice([
            patch(0, rng.randint(0, length), "x"),
            patch(length + 2, length + 2 + rng.randint(0, 3), "x"),
            patch(start, length + 1, "x"),
            patch(start + 1, start, "x"),
        ])
        patches.insert(rng.randint(0, len(patches)), bad)
        with pytest.raises(PatchOutOfRange) as info:
            validate_patches(patches, length)
        assert info.value.length == length
        assert (info.value.start, info.value.end) == (bad.start_line, bad.end_line)


def test_validate_manifest():
    base = '[package]\nname = "demo"\nversion = "0.1.0"\n\n[dependencies]\n'
    assert validate_manifest(base + 'libc = "0.2"\n', allowlist=["libc"])["dependencies"] == {"libc": "0.2"}
    with pytest.raises(FormatError) as info:
        validate_manifest(base + 'rand = "0.8"\n')
    assert "rand" in info.value.reason
    with pytest.raises(FormatError):
        validate_manifest(base + '[target.x86_64-unknown-linux-gnu.dependencies]\nnix = "0.27"\n')
    with pytest.raises(FormatError):
        validate_manifest("[package\n")
    with pytest.raises(FormatError):
        validate_manifest('[dependencies]\n')


def test_parse_diagnostics():
    stdout = "\n".join([
        json.dumps({"reason": "compiler-artifact"}),
        compiler_message("E0425", "src/ht/unit2.rs", 14),
        compiler_message("E0308", "src/ht/unit3.rs", 2, level="warning"),
        json.dumps({"reason": "compiler-message", "message": {
            "level": "error", "message": "aborting due to 1 previous error", "code": None, "spans": [],
            "rendered": "error: aborting due to 1 previous error\n\n"}}),
        "not json at all",
        json.dumps({"reason": "build-finished", "success": False}),
    ])
    diagnostics = parse_diagnostics(stdout)
    assert [(d.code, d.file, d.line, d.level) for d in diagnostics] == [
        ("E0425", "src/ht/unit2.rs", 14, "error"), ("E0308", "src/ht/unit3.rs", 2, "warning")]
    log = rendered_log(stdout)
    assert log.startswith("error[E0425]: marker E0425\n --> src/ht/unit2.rs:14:1")
    assert "aborting due to 1 previous error" in log


@pytest.mark.parametrize("code,category", [
    ("E0425", ErrorCategory.NAME_RESOLUTION),
    ("E0432", ErrorCategory.MODULES),
    ("E0308", ErrorCategory.TYPE),
    ("E0382", ErrorCategory.OWNERSHIP),
    ("E0106", ErrorCategory.LIFETIME),
    ("E0277", ErrorCategory.TRAITS),
    ("E9999", ErrorCategory.TYPE),
    (None, ErrorCategory.SYNTAX),
])
def test_classify_code(code, category):
    assert classify_code(code) == category


def test_classify_errors_skips_warnings():
    report = CompileReport(success=False, raw_log="", diagnostics=parse_diagnostics("\n".join([
        compiler_message("E0425", "src/m/unit1.rs", 3),
        compiler_message("E0425", "src/m/unit1.rs", 9),
        compiler_message("E0308", "src/m/unit1.rs", 4, level="warning"),
        compiler_message("E0432", "src/m/unit1.rs", 1),
    ])))
    histogram = classify_errors(report)
    assert len(histogram) == 10
    assert histogram["Name Resolution"] == 2
    assert histogram["Modules"] == 1
    assert histogram["Type"] == 0
    assert [d.category for d in report.errors] == [
        ErrorCategory.NAME_RESOLUTION, ErrorCategory.NAME_RESOLUTION, ErrorCategory.MODULES]
    assert report.diagnostics[2].category is None


def test_compile_with_fake_cargo(tmp_path):
    cargo = FakeCargo()
    ws = scaffold_workspace(tmp_path / "rust", ["m"], [])
    assert compile_workspace(ws, runner=cargo).success

    ws.write_unit(unit("m", 1), "use crate::geometry::Quadtree; // @E0432\npub fn a() {}\n")
    report = compile_workspace(ws, runner=cargo)
    assert not report.success
    [error] = report.errors
    assert (error.code, error.file, error.line, error.category) == ("E0432", "src/m/unit1.rs", 1,
                                                                   ErrorCategory.MODULES)
    assert report.error_files == ["src/m/unit1.rs"]
    assert "error[E0432]" in report.raw_log

    compile_workspace(ws, runner=cargo, full_build=True)
    assert [c[1] for c in cargo.cargo_calls] == ["check", "check", "build"]


def test_broken_manifest_is_reported_against_manifest(tmp_path):
    ws = scaffold_workspace(tmp_path / "rust", ["m"], [])
    ws.write("Cargo.toml", "[package\n")
    report = compile_workspace(ws, runner=FakeCargo())
    [error] = report.errors
    assert error.file == "Cargo.toml"
    assert error.category == ErrorCategory.SYNTAX
    assert "failed to parse manifest" in report.raw_log


def test_missing_program(tmp_path):
    with pytest.raises(ToolchainMissing):
        run_command(["seamstress-no-such-program"], tmp_path, 5)


@pytest.mark.skipif(shutil.which("cargo") is None, reason="cargo not installed")
def test_real_cargo_checks_shapes_translation(tmp_path):
    ws = scaffold_workspace(tmp_path / "rust", MODULES, [])
    for unit_id, code in SHAPES_RUST.items():
        module, ordinal = unit_id.rsplit(".", 1)
        ws.write_unit(unit(module, int(ordinal)), code.replace(BROKEN_IMPORT, FIXED_IMPORT))
    report = compile_workspace(ws, timeout=600, runner=run_command)
    assert report.success, report.raw_log

    ws.write("src/shapes/unit2.rs", ws.read("src/shapes/unit2.rs").replace(FIXED_IMPORT, BROKEN_IMPORT))
    report = compile_workspace(ws, timeout=600, runner=run_command)
    assert not report.success
    assert "src/shapes/unit2.rs" in report.error_files


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
