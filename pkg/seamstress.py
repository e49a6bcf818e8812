"""
seamstress - translate a C project into a compiling Rust library with an LLM

Usage:
    python seamstress.py analyze --project path/to/c
    python seamstress.py translate --project path/to/c --backend claude-3.5-sonnet
    python seamstress.py report --project path/to/c
"""

import sys

from modules.cli import main

if __name__ == "__main__":
    sys.exit(main())
