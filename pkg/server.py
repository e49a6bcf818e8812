"""
Seamstress MCP Server - C project analysis for LLM-driven Rust translation

A Model Context Protocol (MCP) server exposing the deterministic phases of
the translation pipeline: element scanning, preprocessing, segmentation and
coverage reporting. The LLM-driven translate phase stays on the command line
(`python seamstress.py translate`).
"""

import argparse
from pathlib import Path

import fastmcp

from modules.c_model import analyze_project as scan_project
from modules.common_utils import read_json
from modules.config import BUILTIN_PROFILES, get_environment_info, load_run_config, setup_environment
from modules.display_utils import analysis_summary, coverage_from_dict, display_coverage, display_histogram
from modules.error_handling import ValidationError, safe_json_response
from modules.file_search import find_c_sources, summarize_sources
from modules.preprocess import preprocess_project as run_preprocess
from modules.preprocess import write_preprocessed
from modules.segment import initial_cap, plan_project, write_segments

setup_environment()
mcp = fastmcp.FastMCP("Seamstress Server")


def _defines(defines: str):
    names = [d.strip() for d in defines.split(",") if d.strip()]
    return names or None


def _config(project_root: str, out_dir: str = "", **extra):
    flags = {"project_root": project_root, "out_dir": out_dir or None, **extra}
    return load_run_config(flags)


@safe_json_response
def list_project_sources(project_root: str) -> dict:
    """
    List the .c and .h files of a project with their sizes.

    Args:
        project_root: Path to the C project

    Returns:
        JSON string with one entry per file and a search summary
    """
    root = Path(project_root).resolve()
    if not root.is_dir():
        raise ValidationError(f"Project root {root} is not a directory")
    return summarize_sources(root, find_c_sources(root))


@safe_json_response
def analyze_project(project_root: str, defines: str = "") -> dict:
    """
    Scan a C project: files, lines of code and code elements by category.

    Args:
        project_root: Path to the C project
        defines: Comma-separated macros assumed defined (default: every #define seen)

    Returns:
        JSON string with the summary and the per-file rows

    Example Output Structure:
        {
          "summary": {"files": 1, "total_loc": 158, "avg_loc": 158.0, "elements": 7, ...},
          "files": [{"path": "bst.c", "loc": 158, "elements": 7}]
        }
    """
    root = Path(project_root).resolve()
    if not root.is_dir():
        raise ValidationError(f"Project root {root} is not a directory")
    analysis = scan_project(root, defined=_defines(defines))
    data = analysis.to_dict()
    return {"summary": analysis_summary(analysis), "files": data["files"],
            "conditional_blocks": len(data["conditional_blocks"]),
            "missing_headers": data["include_graph"]["missing"]}


@safe_json_response
def preprocess_project(project_root: str, out_dir: str = "", defines: str = "") -> dict:
    """
    Merge headers, strip declarations, extract feature macros and reorder definitions.

    Args:
        project_root: Path to the C project
        out_dir: Output directory (default: <project>/.seamstress)
        defines: Comma-separated macros assumed defined

    Returns:
        JSON string with the module order, features and written files
    """
    config = _config(project_root, out_dir, defines=_defines(defines))
    analysis = scan_project(config.project_root, defined=config.defines or None, exclude=[config.out_dir])
    result = run_preprocess(analysis)
    written = write_preprocessed(config.out_dir, result)
    return {"order": result.order,
            "features": [f.to_dict() for f in result.all_features()],
            "warnings": result.warnings,
            "written": [str(p) for p in written]}


@safe_json_response
def plan_project_segments(project_root: str, out_dir: str = "", cap: int = 0,
                          backend: str = "claude-3.5-sonnet") -> dict:
    """
    Split the preprocessed modules into translation units.

    Args:
        project_root: Path to the C project
        out_dir: Output directory (default: <project>/.seamstress)
        cap: Unit cap in lines (0 derives it from the backend's context window)
        backend: Profile name used to derive the cap

    Returns:
        JSON string with the plan (also written to <out>/plan.json)
    """
    config = _config(project_root, out_dir, backend=backend, cap=cap or None)
    analysis = scan_project(config.project_root, exclude=[config.out_dir])
    result = run_preprocess(analysis)
    if config.is_replay:
        raise ValidationError("plan_project_segments needs a profile name, not a replay directory")
    lines = config.cap or initial_cap(config.profile(), config.max_cap_lines, config.floor_lines)
    plan = plan_project(result.modules, lines, config.floor_lines)
    write_preprocessed(config.out_dir, result)
    write_segments(config.out_dir, plan)
    return plan.to_dict()


@safe_json_response
def coverage_report(out_dir: str) -> dict:
    """
    Coverage of a finished translate run.

    Args:
        out_dir: Output directory of the run

    Returns:
        JSON string with the report document and its text rendering
    """
    path = Path(out_dir) / "report.json"
    if not path.is_file():
        raise ValidationError(f"No report at {path}")
    data = read_json(path)
    report = coverage_from_dict(data)
    return {"report": data, "text": display_coverage(report) + "\n" + display_histogram(report.error_histogram)}


@safe_json_response
def backend_profiles() -> dict:
    """Built-in backend profiles and whether their credentials are set."""
    return get_environment_info()


for _tool in (list_project_sources, analyze_project, preprocess_project, plan_project_segments,
              coverage_report, backend_profiles):
    mcp.tool()(_tool)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Seamstress MCP Server")
    parser.add_argument("--transport", choices=["stdio", "http"], default="http",
                        help="Transport protocol (default: http)")
    parser.add_argument("--port", type=int, default=2000,
                        help="Port for HTTP transport (default: 2000)")
    parser.add_argument("--host", default="0.0.0.0",
                        help="Host for HTTP transport (default: 0.0.0.0)")

    args = parser.parse_args()

    if args.transport == "http":
        print(f"🚀 Starting Seamstress MCP Server on http://{args.host}:{args.port}")
        print("\nAvailable tools:")
        print("   - list_project_sources")
        print("   - analyze_project")
        print("   - preprocess_project")
        print("   - plan_project_segments")
        print("   - coverage_report")
        print("   - backend_profiles")

        configured = [name for name, ok in
                      ((n, v["credentials"]) for n, v in get_environment_info()["profiles"].items()) if ok]
        if configured:
            print(f"✅ Credentials found for: {', '.join(configured)}")
        else:
            print(f"⚠️ No backend credentials set ({', '.join(p.api_key_env for p in BUILTIN_PROFILES.values())})")

        import uvicorn
        app = mcp.http_app()
        uvicorn.run(app, host=args.host, port=args.port)
    else:
        print("📝 Starting Seamstress MCP Server with stdio transport")
        mcp.run()
