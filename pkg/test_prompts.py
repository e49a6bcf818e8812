#!/usr/bin/env python3
"""
Tests for token estimation, prompt envelopes and multi-part response assembly
"""
import json
import random
import sys
from pathlib import Path

import pytest

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from modules.c_model import analyze_project
from modules.error_handling import BudgetExceeded, FormatError, ValidationError
from modules.metadata import build_project_index, emit_unit_metadata
from modules.models import (
    ContextBundle, ContextItem, LlmResponsePart, PromptBudget, PromptKind, TranslationUnit, UnitMetadata,
)
from modules.preprocess import preprocess_project
from modules.prompts import (
    CONTINUE_MARKER, MANDATORY_RULES, RulesProfile, assemble_multipart, build_format_retry_section,
    build_mapping_prompt, build_repair_prompt, build_selection_prompt, build_translation_prompt,
    estimate_tokens, load_rules_profile, load_schema, number_lines, truncate_log, validate_document,
)
from modules.segment import plan_project

from conftest import FIXTURES

BUDGET = PromptBudget(context_window=200000, reserved_output=8192)

E0425_LOG = """\
error[E0425]: cannot find value `table_size` in this scope
 --> src/ht/unit2.rs:14:20
   |
14 |     let slot = key % table_size;
   |                      ^^^^^^^^^^ not found in this scope
"""


@pytest.fixture
def bst_unit(bst_project):
    modules = {m.name: m for m in preprocess_project(analyze_project(bst_project)).modules}
    plan = plan_project(list(modules.values()), 4000)
    [unit] = plan.units
    return unit, emit_unit_metadata(unit, modules["bst"].elements, build_project_index(plan, modules),
                                    modules["bst"].lines)


def parts_of(payload: str, cuts):
    """Split payload at the given offsets, marking every part but the last"""
    bounds = [0] + list(cuts) + [len(payload)]
    fragments = [payload[a:b] for a, b in zip(bounds, bounds[1:])]
    return [LlmResponsePart(part_index=i, payload_fragment=f + (CONTINUE_MARKER if i < len(fragments) else ""))
            for i, f in enumerate(fragments, 1)]


def test_estimate_tokens():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abcd") == 5
    dense = "".join(f"    result[{i:03d}] = compute_value(a, b, c, {i:03d});\n" for i in range(100))
    assert len(dense.encode()) >= 4000
    assert estimate_tokens(dense) >= 1000


def test_estimate_tokens_is_monotone():
    text = (FIXTURES / "bst" / "bst.c").read_text()
    previous = 0
    for end in range(0, len(text), 97):
        current = estimate_tokens(text[:end])
        assert current >= previous
        previous = current


def test_estimate_never_below_real_tokenizer():
    tiktoken = pytest.importorskip("tiktoken")
    try:
        encoding = tiktoken.get_encoding("cl100k_base")
    except Exception as e:
        pytest.skip(f"tokenizer data unavailable: {e}")
    for path in [FIXTURES / "bst" / "bst.c", FIXTURES / "shapes" / "geometry.c", FIXTURES / "shapes" / "main.c"]:
        text = path.read_text()
        assert estimate_tokens(text) >= len(encoding.encode(text))


def test_rules_profile_keeps_mandatory_rules_first(tmp_path):
    rules_file = tmp_path / "rules.txt"
    rules_file.write_text("# local rules\nPrefer slices over raw pointers.\n\nAvoid using unsafe whenever possible.\n")
    profile = load_rules_profile(rules_file)
    assert profile.rules[:3] == MANDATORY_RULES
    assert profile.rules[3:] == ("Prefer slices over raw pointers.",)
    rendered = profile.render()
    assert rendered.startswith("1. Declare all elements as public")
    assert "4. Prefer slices over raw pointers." in rendered
    assert load_rules_profile().source == "built-in"
    with pytest.raises(ValidationError):
        load_rules_profile(tmp_path / "missing.txt")


def test_translation_prompt_layout(bst_unit):
    unit, _ = bst_unit
    envelope = build_translation_prompt(unit, ContextBundle(), RulesProfile(), BUDGET)
    assert envelope.kind == PromptKind.TRANSLATE
    assert envelope.response_schema_id == "translate"
    assert [label for label, _ in envelope.body_sections] == ["rules", "response", "scope", "code"]
    text = envelope.text
    for rule in MANDATORY_RULES:
        assert rule in text
    markers = ["strictly adhere to the translation rules", "Declare all elements as public",
               "respond in chunks of 100 lines", "Translate only within the range of the C code written below",
               "Node *newNode(int item)"]
    positions = [text.index(m) for m in markers]
    assert positions == sorted(positions)
    assert envelope.est_tokens == estimate_tokens(text)
    assert build_translation_prompt(unit, ContextBundle(), RulesProfile(), BUDGET).text == text


def test_translation_prompt_with_context(bst_unit):
    unit, _ = bst_unit
    bundle = ContextBundle(items=[ContextItem("insertNode", "function", "pub fn insert_node(root: Option<Box<Node>>, key: i32) -> Option<Box<Node>>",
                                              "defined in src/bst/unit1.rs", 0)])
    envelope = build_translation_prompt(unit, bundle, RulesProfile(), BUDGET)
    assert [label for label, _ in envelope.body_sections][:2] == ["rules", "context"]
    assert "pub fn insert_node(root: Option<Box<Node>>" in envelope.text
    assert envelope.text.index("pub fn insert_node") < envelope.text.index("## C code")


def test_translation_prompt_over_budget():
    text = "int x;\n" * 4000
    unit = TranslationUnit(module="big", ordinal=1, start_line=1, end_line=4000, element_ids=[], text=text,
                           est_tokens=estimate_tokens(text))
    with pytest.raises(BudgetExceeded) as info:
        build_translation_prompt(unit, ContextBundle(), RulesProfile(),
                                 PromptBudget(context_window=8000, reserved_output=2048))
    assert info.value.unit_id == "big.1"
    assert info.value.budget == 5952


def test_repair_prompt_embeds_raw_log():
    target = "fn hash(key: u32) -> u32 {\n    let slot = key % table_size;\n    slot\n}\n"
    envelope = build_repair_prompt(E0425_LOG, "src/ht/unit2.rs", target, ContextBundle(), BUDGET, unit_id="ht.2")
    assert envelope.kind == PromptKind.REPAIR
    assert E0425_LOG.rstrip("\n") in envelope.text
    assert "Please resolve this error by editing src/ht/unit2.rs" in envelope.text
    assert "address" not in envelope.text
    assert "start and end lines that need to be repaired, along with the new code, in JSON" in envelope.text
    assert "2 | " + "    let slot = key % table_size;" in envelope.text
    assert "start_line = end_line = 5 inserts" in envelope.text
    assert envelope.body_sections[-1] == ("src/ht/unit2.rs", target)


def test_repair_prompt_needs_a_log():
    with pytest.raises(ValidationError):
        build_repair_prompt("  \n", "src/m/unit1.rs", "fn f() {}\n", ContextBundle(), BUDGET)


def test_repair_prompt_truncates_giant_log():
    line = "error[E0425]: cannot find value `missing_{:05d}` in this scope"
    giant = "\n".join(line.format(i) for i in range(4000))
    assert estimate_tokens(giant) > 50000
    budget = PromptBudget(context_window=24192, reserved_output=8192)
    envelope = build_repair_prompt(giant, "src/m/unit1.rs", "fn f() {}\n", ContextBundle(), budget)
    assert envelope.est_tokens <= budget.available
    assert "earlier log lines truncated" in envelope.text
    assert line.format(3999) in envelope.text
    assert line.format(0) not in envelope.text


def test_truncate_log_keeps_short_logs():
    assert truncate_log(E0425_LOG, 10000) == E0425_LOG


def test_number_lines():
    assert number_lines("a\nb\n") == "1 | a\n2 | b"


def test_mapping_prompt_lists_elements(bst_unit):
    unit, meta = bst_unit
    envelope = build_mapping_prompt(unit.text, "pub fn main() {}\n", meta, rust_file="src/bst/unit1.rs")
    listing = dict(envelope.body_sections)["elements"]
    assert len(listing.splitlines()) == 7
    assert "- deleteNode (function)" in listing
    assert "- Node (type_def)" in listing
    assert '"removed"' in envelope.text

    empty = build_mapping_prompt("", "", UnitMetadata(unit_id="m.1", elements=[], imports_needed=[]))
    assert dict(empty.body_sections)["elements"] == "(none)"


def test_selection_prompt_lists_candidates():
    envelope = build_selection_prompt(E0425_LOG, ["src/ht/unit2.rs", "Cargo.toml"], unit_id="ht.2")
    assert envelope.kind == PromptKind.SELECT
    assert dict(envelope.body_sections)["candidates"] == "- src/ht/unit2.rs\n- Cargo.toml"


def test_assemble_single_part():
    parts = [LlmResponsePart(1, '{"rust_code": "fn main() {}"}')]
    assert assemble_multipart(parts, "translate") == {"rust_code": "fn main() {}"}


def test_assemble_split_parts_matches_unsplit():
    code = "".join(f"    let v{i} = {i};\n" for i in range(300))
    payload = json.dumps({"rust_code": f"fn main() {{\n{code}}}\n"})
    expected = json.loads(payload)
    for cuts in [(1, 2), (len(payload) // 3, 2 * len(payload) // 3), (10, len(payload) - 1)]:
        parts = parts_of(payload, cuts)
        assert assemble_multipart(list(reversed(parts)), "translate") == expected


RUST_PIECES = ['fn main() {\n', '    let s = "a \\"quoted\\" word";\n', "    let c = '\\\\';\n", "}\n",
               "    // ½ of the area\n", "\t", "    println!(\"{}\", x);\n", "[[", "]]", "```"]


@pytest.mark.parametrize("seed", range(10))
def test_assemble_at_random_split_points(seed):
    rng = random.Random(seed)
    for _ in range(100):
        code = "".join(rng.choice(RUST_PIECES) for _ in range(rng.randint(1, 60)))
        payload = json.dumps({"rust_code": code}, ensure_ascii=rng.random() < 0.5)
        cuts = sorted(rng.randint(0, len(payload)) for _ in range(rng.randint(0, 6)))
        parts = parts_of(payload, cuts)
        rng.shuffle(parts)
        assert assemble_multipart(parts, "translate") == {"rust_code": code}


def test_assemble_strips_code_fence():
    parts = [LlmResponsePart(1, '```json\n{"files": ["Cargo.toml"]}\n```')]
    assert assemble_multipart(parts, "select") == {"files": ["Cargo.toml"]}


def test_bare_array_is_wrapped():
    parts = [LlmResponsePart(1, '["src/m/unit1.rs"]')]
    assert assemble_multipart(parts, "select") == {"files": ["src/m/unit1.rs"]}


def test_bad_escape_is_format_error():
    with pytest.raises(FormatError) as info:
        assemble_multipart([LlmResponsePart(1, '{"rust_code": "let s = \\q;"}')], "translate")
    assert "invalid escape" in info.value.reason
    assert not info.value.truncated


def test_cut_off_answer_is_truncated():
    with pytest.raises(FormatError) as info:
        assemble_multipart([LlmResponsePart(1, '{"rust_code": "fn main() {')], "translate")
    assert info.value.truncated
    with pytest.raises(FormatError) as info:
        assemble_multipart([LlmResponsePart(1, '{"rust_code": ', total_parts=3),
                            LlmResponsePart(2, '"x"', total_parts=3)], "translate")
    assert info.value.truncated
    with pytest.raises(FormatError):
        assemble_multipart([])


def test_schema_mismatch_is_format_error():
    with pytest.raises(FormatError) as info:
        assemble_multipart([LlmResponsePart(1, '{"patches": [{"start_line": "one", "end_line": 1}]}')], "repair")
    assert "repair schema" in info.value.reason


def test_schema_keywords_are_enforced():
    repair = load_schema("repair")
    assert validate_document({"patches": [{"start_line": 1, "end_line": 1, "code": ""}]}, repair) == []
    assert validate_document({"patches": [{"start_line": 0, "end_line": 1, "code": ""}]}, repair) == [
        "patches[0].start_line: 0 is less than the minimum of 1"]
    with pytest.raises(FormatError):
        assemble_multipart([LlmResponsePart(1, '{"patches": [{"start_line": 0, "end_line": 0, "code": ""}]}')],
                           "repair")

    removed = {"c_name": "helper", "removed": True, "rust_name": None, "rust_file": None, "note": None}
    assert validate_document({"mappings": [removed]}, load_schema("map")) == []

    plan = {"schema": 1, "cap_lines": 30, "floor_lines": 30, "history": [{"cap": 30, "trigger": "shrink"}],
            "units": [{"id": ["m", 1], "line_range": [3], "element_ids": [], "est_tokens": 0, "status": "pending"}]}
    issues = validate_document(plan, load_schema("plan"))
    assert len(issues) == 2
    assert issues[0].startswith("history[0].trigger: 'shrink' is not one of")
    assert issues[1].startswith("units[0].line_range: [3]")


def test_format_retry_section():
    label, body = build_format_retry_section(FormatError("invalid escape at line 1 column 20"))
    assert label == "Correction"
    assert "correct escape handling" in body
    _, body = build_format_retry_section(FormatError("Unterminated string", truncated=True))
    assert "respond in chunks of 100 lines".lower() in body.lower()
    assert CONTINUE_MARKER in body


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
