"""
Common utility functions used across multiple modules

This module contains shared helpers for reading sources, hashing,
name normalization, canonical JSON and atomic file writes.
"""

import hashlib
import json
import logging
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Union

logger = logging.getLogger(__name__)

_CAMEL_BOUNDARY = re.compile(r'(?<=[a-z0-9])(?=[A-Z])')


def read_source(path: Union[str, Path]) -> str:
    """
    Read a C or Rust source file as UTF-8

    Invalid bytes are replaced and a warning is logged.
    """
    raw = Path(path).read_bytes()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        logger.warning(f"⚠️ {path}: invalid UTF-8 bytes replaced")
        return raw.decode("utf-8", errors="replace")


def text_hash(text: str) -> str:
    """Short content digest used for change detection"""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def snake_case(name: str) -> str:
    """
    Normalize an identifier the way Rust naming conventions rename it

    insertNode -> insert_node, MAX -> max, HTTPServer -> httpserver
    """
    return _CAMEL_BOUNDARY.sub("_", name).lower()


def join_lines(lines: Iterable[str]) -> str:
    """Join lines into text with a trailing newline (empty for no lines)"""
    lines = list(lines)
    return "\n".join(lines) + "\n" if lines else ""


def split_lines(text: str) -> List[str]:
    """
    Split text on newlines only (CRLF and CR normalized first)

    Unlike str.splitlines, form feeds and other separators stay inside lines,
    so masked and raw text always yield the same line count.
    """
    text = text.replace('\r\n', '\n').replace('\r', '\n')
    lines = text.split('\n')
    if lines and lines[-1] == '':
        lines.pop()
    return lines


def count_lines(text: str) -> int:
    return len(split_lines(text))


def canonical_json(data: Any) -> str:
    """Serialize with sorted keys so that equal documents are byte-identical"""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def atomic_write(path: Union[str, Path], text: str) -> None:
    """Write text to path through a temporary file and rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_json(path: Union[str, Path], data: Any) -> None:
    atomic_write(path, canonical_json(data))


def read_json(path: Union[str, Path]) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def rust_identifier(name: str) -> str:
    """Turn a C file stem into a valid Rust module identifier"""
    ident = re.sub(r'[^0-9a-zA-Z_]', '_', name).lower() or "module"
    if ident[0].isdigit():
        ident = f"m_{ident}"
    if ident in RUST_KEYWORDS:
        ident = f"{ident}_mod"
    return ident


def dedupe(items: Iterable[str]) -> List[str]:
    """Remove duplicates while preserving order"""
    seen = set()
    unique = []
    for item in items:
        if item not in seen:
            seen.add(item)
            unique.append(item)
    return unique


RUST_KEYWORDS = frozenset("""
as break const continue crate else enum extern false fn for if impl in let loop match mod
move mut pub ref return self static struct super trait true type unsafe use where while
async await dyn abstract become box do final macro override priv typeof unsized virtual
yield try lib main build std core
""".split())
