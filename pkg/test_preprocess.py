#!/usr/bin/env python3
"""
Tests for module merging, declaration stripping, feature extraction and reordering
"""
import random
import sys
from pathlib import Path
from typing import Dict, List, Tuple

import pytest

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from modules.c_model import analyze_project
from modules.common_utils import count_lines, read_json, split_lines
from modules.preprocess import (
    build_static_symbol_table, expand_origins, extract_cfg_macros, forward_reference_count, load_preprocessed,
    merge_includes, module_order, origin_of, preprocess_project, reorder_elements, uniquify_statics,
    write_preprocessed,
)

from conftest import module_from_text, write_files

FEATURES = """\
#define FEATURE_X
#ifdef FEATURE_X
int x = 1;
#endif
#ifdef FEATURE_Y
int y = 1;
#endif
int z;
"""

OUT_OF_ORDER = """\
int main(void)
{
    return helper();
}

int helper(void)
{
    return 1;
}
"""


@pytest.fixture
def shapes_result(shapes_project):
    return preprocess_project(analyze_project(shapes_project))


def test_module_order(shapes_result):
    assert shapes_result.order == ["geometry", "shapes", "main_mod"]


def test_headers_inlined_once(shapes_result):
    main = shapes_result.module("main_mod")
    lines = main.lines
    assert len(lines) == 45
    assert lines[0] == "#include <stdio.h>"
    assert not any("GEOMETRY_H" in line or "SHAPES_H" in line for line in lines)
    assert sum(1 for e in main.elements if e.name == "Point") == 1
    assert origin_of(main, 5) == ("geometry.h", 5)
    assert origin_of(main, 45) == ("main.c", 25)


def test_local_prototypes_removed(shapes_result):
    geometry = shapes_result.module("geometry")
    assert len(geometry.lines) == 36
    assert not any(e.is_declaration for e in geometry.elements)
    assert [e.name for e in geometry.elements] == ["Point", "distance", "midpoint"]

    shapes = shapes_result.module("shapes")
    assert len(shapes.lines) == 43
    declared = [e.name for e in shapes.elements if e.is_declaration]
    assert declared == ["distance", "midpoint"]


def test_external_declarations_annotated(shapes_result):
    main = shapes_result.module("main_mod")
    assert len([e for e in main.elements if e.is_declaration]) == 4
    assert "distance: defined in module geometry" in main.annotations
    assert "circle_area: defined in module shapes" in main.annotations


def test_inactive_project_include_commented_out(tmp_path):
    root = write_files(tmp_path / "proj", {
        "a.c": '#ifdef USE_B\n#include "b.h"\n#endif\nint a;\n',
        "b.h": "int b;\n",
    })
    result = preprocess_project(analyze_project(root))
    module = result.module("a")
    assert module.lines[1] == '/* seamstress: inactive #include "b.h" */'
    assert "int b;" not in module.lines
    [record] = result.features["a"]
    assert (record.macro_name, record.originally_defined) == ("USE_B", False)
    assert (record.file, record.line) == ("a.c", 1)


def test_missing_header_becomes_warning(tmp_path):
    root = write_files(tmp_path / "proj", {"a.c": '#include "gone.h"\nint a;\n'})
    result = preprocess_project(analyze_project(root))
    assert result.warnings == ['a.c: cannot resolve #include "gone.h"']
    assert result.module("a").lines[0] == '#include "gone.h"'


def test_extract_feature_macros():
    module, records = extract_cfg_macros(module_from_text("m", FEATURES))
    assert [(r.macro_name, r.originally_defined, r.line) for r in records] == [
        ("FEATURE_X", True, 1), ("FEATURE_Y", False, 5)]
    assert records[0].feature_name == "feature_x"
    assert module.feature_defines == ["FEATURE_X"]
    assert module.lines[0] == "#ifdef FEATURE_X"
    assert len(module.lines) == 7
    # origins follow the removal
    assert origin_of(module, 1) == ("m.c", 2)


def test_undef_of_guard_leaves_module_alone():
    original = module_from_text("m", FEATURES + "#undef FEATURE_X\n")
    module, records = extract_cfg_macros(original)
    assert records == []
    assert module is original


def test_valued_define_is_not_a_feature():
    original = module_from_text("m", "#define LEVEL 2\n#if LEVEL > 1\nint y;\n#endif\n")
    module, records = extract_cfg_macros(original)
    assert records == []
    assert module.text == original.text


def test_reorder_puts_definitions_first():
    module = module_from_text("m", OUT_OF_ORDER)
    assert forward_reference_count(module) == 1
    reordered = reorder_elements(module)
    assert [e.name for e in reordered.elements] == ["helper", "main"]
    assert forward_reference_count(reordered) == 0
    helper = reordered.elements[0]
    assert origin_of(reordered, helper.start_line) == ("m.c", 6)
    assert sorted(reordered.lines) == sorted(module.lines)


def test_ordered_module_is_unchanged():
    module = module_from_text("m", "int helper(void)\n{\n    return 1;\n}\n\nint main(void)\n{\n    return helper();\n}\n")
    assert reorder_elements(module) is module


def test_colliding_statics_renamed():
    a = module_from_text("a", "static int counter = 0;\n\nint next_a(void)\n{\n    return ++counter;\n}\n")
    b = module_from_text("b", "static int counter = 5;\n\nint next_b(void)\n{\n    return counter--;\n}\n")
    table = build_static_symbol_table([a, b])
    assert table["counter"] == {"a", "b"}
    renamed_a = uniquify_statics(a, table)
    renamed_b = uniquify_statics(b, table)
    assert "    return ++counter__a;" in renamed_a.lines
    assert renamed_b.elements[0].name == "counter__b"
    # nothing to rename when the static is unique
    assert uniquify_statics(a, build_static_symbol_table([a])) is a


def test_module_order_follows_references():
    user = module_from_text("user", "int run(void)\n{\n    return base();\n}\n")
    lib = module_from_text("lib", "int base(void)\n{\n    return 1;\n}\n")
    assert module_order([user, lib]) == ["lib", "user"]


def test_write_and_load_preprocessed(shapes_result, tmp_path):
    out = tmp_path / "out"
    written = write_preprocessed(out, shapes_result)
    assert [p.name for p in written] == ["geometry.c", "shapes.c", "main_mod.c"]
    assert read_json(out / "preprocessed" / "modules.json")["order"] == shapes_result.order
    assert (out / "features.json").exists()

    loaded = load_preprocessed(out)
    assert loaded.order == shapes_result.order
    main = loaded.module("main_mod")
    assert main.text == shapes_result.module("main_mod").text
    assert main.annotations == shapes_result.module("main_mod").annotations
    assert origin_of(main, 5) == ("geometry.h", 5)


def random_project(rng: random.Random) -> Tuple[Dict[str, str], Dict[str, List[str]]]:
    """
    Sources of a small multi-module project and the quoted includes of each file

    Module m has header m{m}.h with a prototype per function; it may depend
    on lower modules, whose headers it reaches through its own header or by
    including them directly, sometimes more than once.
    """
    count = rng.randint(1, 3)
    functions = {m: [f"m{m}_f{i}" for i in range(rng.randint(1, 4))] for m in range(count)}
    files: Dict[str, str] = {}
    includes: Dict[str, List[str]] = {}
    for m in range(count):
        deps = [d for d in range(m) if rng.random() < 0.6]
        via_header = [d for d in deps if rng.random() < 0.5]
        header = [f"#ifndef M{m}_H", f"#define M{m}_H", ""]
        header += [f'#include "m{d}.h"' for d in via_header]
        header += [f"int {name}(int n);" for name in functions[m]]
        header.append("#endif")
        files[f"m{m}.h"] = "\n".join(header) + "\n"
        includes[f"m{m}.h"] = [f"m{d}.h" for d in via_header]

        quoted = [f"m{m}.h"] * rng.randint(1, 2)
        quoted += [f"m{d}.h" for d in deps if d not in via_header or rng.random() < 0.3]
        rng.shuffle(quoted)
        lines = ["#include <stdio.h>"] if rng.random() < 0.5 else []
        lines += [f'#include "{h}"' for h in quoted]
        static = rng.random() < 0.5
        if static:
            lines += ["", "static int counter = 0;"]
        callable_names = functions[m] + [f for d in deps for f in functions[d]]
        for name in rng.sample(functions[m], len(functions[m])):
            calls = " + ".join(f"{rng.choice(callable_names)}(n - {k + 1})" for k in range(rng.randint(0, 2)))
            lines += ["", f"int {name}(int n)", "{", "    if (n <= 0) {", "        return 1;", "    }"]
            if static:
                lines.append("    counter += n;")
            lines += [f"    return {calls or 'n'};", "}"]
        files[f"m{m}.c"] = "\n".join(lines) + "\n"
        includes[f"m{m}.c"] = quoted
    return files, includes


def include_closure(root: str, includes: Dict[str, List[str]]) -> List[str]:
    seen, stack = [root], [root]
    while stack:
        for header in includes[stack.pop()]:
            if header not in seen:
                seen.append(header)
                stack.append(header)
    return seen


@pytest.mark.parametrize("seed", range(100))
def test_random_project_preprocessing(seed, tmp_path):
    rng = random.Random(seed)
    files, includes = random_project(rng)
    analysis = analyze_project(write_files(tmp_path / "proj", files))

    for root in sorted(f for f in files if f.endswith(".c")):
        merged = merge_includes(root, analysis.include_graph, analysis.sources)
        closure = include_closure(root, includes)
        expected = sum(count_lines(files[f]) - len(includes[f]) for f in closure) - 3 * (len(closure) - 1)
        assert len(merged.lines) == expected
        origins = expand_origins(merged)
        assert None not in origins
        assert len(set(origins)) == len(origins)
        for line, (file, number) in zip(merged.lines, origins):
            assert split_lines(files[file])[number - 1] == line

    result = preprocess_project(analysis)
    for module in result.modules:
        assert not any(line.lstrip().startswith('#include "') for line in module.lines)
        local = {e.name for e in module.elements if not e.is_declaration}
        assert not [e.name for e in module.elements if e.is_declaration and e.name in local]
        assert forward_reference_count(module) == 0

    again = preprocess_project(analyze_project(write_files(
        tmp_path / "again", {f"{m.name}.c": m.text for m in result.modules})))
    assert {m.name: m.text for m in again.modules} == {m.name: m.text for m in result.modules}


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
