"""
Utility functions for displaying analysis and coverage summaries
"""

import json
from typing import Any, Dict, List, Mapping, Optional, Union

from .common_utils import split_lines
from .models import CoverageReport, ErrorCategory, ModuleCoverage, ProjectAnalysis, SCHEMA_VERSION
from .prompts import load_schema, validate_document

KIND_COLUMNS = [("function", "Func"), ("macro_function", "MFunc"), ("type_def", "Type"),
                ("macro_variable", "MVar"), ("variable", "Var"), ("other", "Other")]


def _table(headers: List[str], rows: List[List[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]

    def line(cells: List[str]) -> str:
        first, rest = cells[0], cells[1:]
        return "  ".join([first.ljust(widths[0])] + [c.rjust(w) for c, w in zip(rest, widths[1:])])

    out = [line(headers), "  ".join("-" * w for w in widths)]
    out.extend(line(r) for r in rows)
    return "\n".join(out)


def analysis_summary(analysis: ProjectAnalysis) -> Dict[str, Any]:
    """Project totals: files, LoC, average LoC per file and element counts"""
    files = analysis.files
    counts = analysis.kind_counts()
    return {
        "files": len(files),
        "total_loc": analysis.total_loc,
        "avg_loc": round(analysis.total_loc / len(files), 1) if files else 0.0,
        "elements": sum(counts.values()),
        "element_counts": counts,
    }


def display_analysis(analysis: ProjectAnalysis, title: str = "Project Analysis") -> str:
    """
    One row per file, then the project totals

    Example Output:
        📋 Project Analysis - bst
        ================================================================================
        File   LoC  Elements  Func  MFunc  Type  MVar  Var  Other
        -----  ---  --------  ----  -----  ----  ----  ---  -----
        bst.c  158         7     6      0     1     0    0      0
    """
    summary = f"\n📋 {title} - {analysis.root}\n" + "=" * 80 + "\n"
    if not analysis.files:
        return summary + "❌ No C sources found\n"

    rows = []
    for f in analysis.files:
        counts = {k: 0 for k, _ in KIND_COLUMNS}
        for e in analysis.elements.get(f, []):
            counts[e.kind.value] += 1
        loc = len(split_lines(analysis.sources[f]))
        rows.append([f, str(loc), str(sum(counts.values()))] + [str(counts[k]) for k, _ in KIND_COLUMNS])
    summary += _table(["File", "LoC", "Elements"] + [label for _, label in KIND_COLUMNS], rows) + "\n"

    stats = analysis_summary(analysis)
    summary += (f"\n📊 {stats['files']} files | {stats['total_loc']} LoC | "
                f"avg {stats['avg_loc']} LoC/file | {stats['elements']} elements\n")
    return summary


def _ratio(value: Any) -> str:
    return f"{float(value):.3f}"


def display_coverage(report: CoverageReport, title: str = "Coverage Report") -> str:
    """LCov/ElemCov per module and for the project"""
    summary = f"\n📋 {title}\n" + "=" * 80 + "\n"
    rows = [[m.module, f"{m.lines_compiled}/{m.lines_total}", _ratio(m.lcov),
             f"{m.elements_covered}/{m.elements_total}", _ratio(m.elemcov)] for m in report.modules]
    rows.append(["(project)", f"{sum(m.lines_compiled for m in report.modules)}/{report.lines_total}",
                 _ratio(report.lcov), f"{sum(m.elements_covered for m in report.modules)}/{report.elements_total}",
                 _ratio(report.elemcov)])
    summary += _table(["Module", "Lines", "LCov", "Elements", "ElemCov"], rows) + "\n"

    if report.aborted_units:
        summary += f"\n❌ Aborted units ({len(report.aborted_units)}): {', '.join(report.aborted_units)}\n"
    else:
        summary += "\n✅ No aborted units\n"
    if report.test_hook_status is not None:
        mark = "✅" if report.test_hook_status == 0 else "⚠️"
        summary += f"{mark} Test hook exit status: {report.test_hook_status}\n"
    for note in report.notes:
        summary += f"   • {note}\n"
    return summary


def display_histogram(histogram: Mapping[str, int], width: int = 40) -> str:
    """Compilation errors per category, all ten categories listed"""
    counts = {c.value: int(histogram.get(c.value, 0)) for c in ErrorCategory}
    total = sum(counts.values())
    peak = max(counts.values()) if total else 0
    label_width = max(len(k) for k in counts)
    lines = [f"🔧 Compilation errors by category ({total} total)"]
    for name, count in counts.items():
        bar = "█" * (round(count * width / peak) if peak else 0)
        lines.append(f"   {name.ljust(label_width)}  {str(count).rjust(5)}  {bar}")
    return "\n".join(lines) + "\n"


def coverage_from_dict(data: Mapping[str, Any]) -> CoverageReport:
    """Rebuild a CoverageReport from report.json"""
    if data.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"Unsupported report schema {data.get('schema')}")
    issues = validate_document(data, load_schema("report"))
    if issues:
        raise ValueError(f"Malformed report: {'; '.join(issues[:3])}")
    modules = [ModuleCoverage(module=m["module"], lines_total=m["lines_total"], lines_compiled=m["lines_compiled"],
                              elements_total=m["elements_total"], elements_covered=m["elements_covered"])
               for m in data.get("modules", [])]
    return CoverageReport(modules=modules, error_histogram=dict(data.get("error_histogram", {})),
                          aborted_units=list(data.get("aborted_units", [])), notes=list(data.get("notes", [])),
                          test_hook_status=data.get("test_hook_status"))


def print_coverage(report: Union[CoverageReport, str, dict], title: str = "Coverage Report",
                   report_format: str = "text") -> Optional[str]:
    """
    Print a coverage report to console

    Args:
        report: CoverageReport, JSON string or dict loaded from report.json
        title: Title for the text display
        report_format: "text" for tables, "json" for the report document
    """
    if isinstance(report, str):
        try:
            report = json.loads(report)
        except json.JSONDecodeError as e:
            print(f"❌ Error parsing JSON for report: {e}")
            return None
    if isinstance(report, dict):
        try:
            report = coverage_from_dict(report)
        except (KeyError, ValueError) as e:
            print(f"❌ Error reading coverage report: {e}")
            return None
    if not isinstance(report, CoverageReport):
        print(f"❌ Invalid input type for report: {type(report)}")
        return None

    if report_format == "json":
        output = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    else:
        output = display_coverage(report, title) + "\n" + display_histogram(report.error_histogram)
    print(output)
    return output
