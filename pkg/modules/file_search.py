"""
Source discovery for C projects

Locates the .c/.h files of a project so the analysis phases do not need
explicit file lists. Paths are reported relative to the project root in
POSIX form so that results are stable across platforms.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

logger = logging.getLogger(__name__)

C_EXTENSIONS = ('.c', '.h')

# Build and VCS directories never hold project sources
SKIPPED_DIRS = {'.git', '.hg', '.svn', 'build', 'target', '__pycache__', '.seamstress'}


def find_c_sources(project_root: Union[str, Path],
                   extensions: Iterable[str] = C_EXTENSIONS,
                   exclude: Iterable[Union[str, Path]] = ()) -> List[str]:
    """
    Find every C source and header below project_root

    Args:
        project_root: Directory to search recursively
        extensions: File suffixes to collect
        exclude: Directories to leave out (e.g. an output dir placed inside the project)

    Returns:
        Sorted list of relative POSIX paths
    """
    root = Path(project_root)
    if not root.is_dir():
        logger.warning(f"⚠️ Project root {root} is not a directory")
        return []

    suffixes = {ext.lower() for ext in extensions}
    excluded = [Path(e).resolve() for e in exclude]
    found = []
    for path in root.rglob('*'):
        try:
            if not path.is_file() or path.suffix.lower() not in suffixes:
                continue
        except OSError:
            # Skip files that can't be accessed
            continue
        rel = path.relative_to(root)
        if any(part in SKIPPED_DIRS for part in rel.parts[:-1]):
            continue
        resolved = path.resolve()
        if any(resolved.is_relative_to(e) for e in excluded):
            continue
        found.append(rel.as_posix())
    return sorted(found)


def root_c_files(files: Iterable[str]) -> List[str]:
    """The .c files of a project, each of which becomes one module"""
    return [f for f in files if f.lower().endswith('.c')]


def summarize_sources(project_root: Union[str, Path], files: List[str]) -> Dict[str, Any]:
    """
    File listing with sizes, used by the analysis report

    Returns:
        Dictionary with one entry per file plus a search summary
    """
    root = Path(project_root)
    entries = []
    for rel in files:
        try:
            size = (root / rel).stat().st_size
        except OSError:
            size = 0
        entries.append({'path': rel, 'size_bytes': size, 'extension': Path(rel).suffix.lower()})
    return {
        'files': entries,
        'search_summary': {
            'root': str(root),
            'total_found': len(entries),
            'sources': sum(1 for e in entries if e['extension'] == '.c'),
            'headers': sum(1 for e in entries if e['extension'] == '.h'),
        }
    }
