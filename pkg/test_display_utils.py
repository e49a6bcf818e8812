#!/usr/bin/env python3
"""
Tests for the analysis and coverage tables
"""
import json
import sys
from pathlib import Path

import pytest

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from modules.c_model import analyze_project
from modules.display_utils import (
    analysis_summary, coverage_from_dict, display_analysis, display_coverage, display_histogram, print_coverage,
)
from modules.models import CoverageReport, ModuleCoverage

REPORT = CoverageReport(
    modules=[ModuleCoverage("geometry", 36, 36, 3, 3), ModuleCoverage("shapes", 43, 0, 7, 0)],
    error_histogram={"Type": 4, "Modules": 1},
    aborted_units=["shapes.1", "shapes.2"],
    notes=["An aborted unit aborts the remaining units of its module only; other modules proceed."],
)


def test_analysis_table(bst_project):
    analysis = analyze_project(bst_project)
    assert analysis_summary(analysis) == {
        "files": 1, "total_loc": 158, "avg_loc": 158.0, "elements": 7,
        "element_counts": analysis.kind_counts(),
    }
    table = display_analysis(analysis)
    row = next(line for line in table.splitlines() if line.startswith("bst.c"))
    assert row.split()[:3] == ["bst.c", "158", "7"]
    assert "1 files | 158 LoC | avg 158.0 LoC/file | 7 elements" in table


def test_coverage_table():
    text = display_coverage(REPORT)
    geometry = next(line for line in text.splitlines() if line.startswith("geometry"))
    assert geometry.split() == ["geometry", "36/36", "1.000", "3/3", "1.000"]
    project = next(line for line in text.splitlines() if line.startswith("(project)"))
    assert project.split() == ["(project)", "36/79", "0.456", "3/10", "0.300"]
    assert "Aborted units (2): shapes.1, shapes.2" in text
    assert "other modules proceed" in text


def test_histogram_lists_every_category():
    text = display_histogram({"Type": 4, "Modules": 1}, width=8)
    lines = text.splitlines()
    assert lines[0] == "🔧 Compilation errors by category (5 total)"
    assert len(lines) == 11
    type_line = next(line for line in lines if line.strip().startswith("Type"))
    assert type_line.endswith("████████")
    assert any(line.strip().startswith("Attributes") for line in lines)


def test_report_round_trip_through_json(capsys):
    data = json.loads(json.dumps(REPORT.to_dict()))
    assert coverage_from_dict(data).to_dict() == REPORT.to_dict()
    output = print_coverage(json.dumps(data), report_format="json")
    assert json.loads(output)["aborted_units"] == ["shapes.1", "shapes.2"]
    assert "Coverage Report" in print_coverage(data)


def test_print_coverage_rejects_bad_input(capsys):
    assert print_coverage("{oops") is None
    assert print_coverage({"schema": 99}) is None
    malformed = REPORT.to_dict()
    del malformed["project"]
    malformed["modules"][0]["lines_total"] = "36"
    assert print_coverage(malformed) is None
    assert print_coverage(42) is None
    printed = capsys.readouterr().out
    assert "Invalid input type" in printed
    assert "Malformed report: 'project' is a required property" in printed


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
