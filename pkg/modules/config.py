"""
Configuration and environment setup for seamstress

This module handles .env loading, the backend profile table and the run
configuration assembled from seamstress.toml and command-line flags.
"""

import logging
import os
import tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from .error_handling import ValidationError
from .models import BackendProfile

logger = logging.getLogger(__name__)

CONFIG_FILE = "seamstress.toml"
REPLAY_PREFIX = "replay:"
DEFAULT_OUT = ".seamstress"

# context window / output limit per model
BUILTIN_PROFILES: Dict[str, BackendProfile] = {
    "gpt-4o": BackendProfile(name="gpt-4o", context_window=128000, output_limit=4096,
                             model="gpt-4o", api_key_env="OPENAI_API_KEY"),
    "claude-3.5-sonnet": BackendProfile(name="claude-3.5-sonnet", context_window=200000, output_limit=8192,
                                        model="claude-3-5-sonnet-20240620",
                                        base_url="https://api.anthropic.com/v1/",
                                        api_key_env="ANTHROPIC_API_KEY"),
    "gemini-1.5-pro": BackendProfile(name="gemini-1.5-pro", context_window=2000000, output_limit=8192,
                                     model="gemini-1.5-pro",
                                     base_url="https://generativelanguage.googleapis.com/v1beta/openai/",
                                     api_key_env="GEMINI_API_KEY"),
    "llama-3-70b": BackendProfile(name="llama-3-70b", context_window=8000, output_limit=2048,
                                  model="meta-llama/Meta-Llama-3-70B-Instruct",
                                  api_key_env="LLAMA_API_KEY"),
}


def setup_environment(env_file: Optional[Union[str, Path]] = None) -> bool:
    """Load a .env file into the environment when one exists"""
    try:
        from dotenv import load_dotenv
    except ImportError:
        logger.warning("⚠️ python-dotenv not installed, using system environment variables only")
        return False
    path = Path(env_file) if env_file else Path.cwd() / ".env"
    if not path.exists():
        logger.debug(f"No .env file at {path}")
        return False
    try:
        load_dotenv(path)
    except Exception as e:
        logger.warning(f"⚠️ Error loading .env file: {e}")
        return False
    logger.info(f"✅ Environment variables loaded from {path}")
    return True


def _env_override_name(profile_name: str) -> str:
    cleaned = "".join(ch if ch.isalnum() else "_" for ch in profile_name).upper()
    return f"SEAMSTRESS_{cleaned}_BASE_URL"


def profile_from_dict(name: str, data: Mapping[str, Any]) -> BackendProfile:
    """Profile declared under [profiles.<name>] in seamstress.toml"""
    known = {f.name for f in fields(BackendProfile)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"Profile {name}: unknown keys {sorted(unknown)}")
    try:
        return BackendProfile(**{"name": name, **data})
    except (TypeError, ValueError) as e:
        raise ValidationError(f"Profile {name}: {e}") from e


def get_backend_profile(name: str, extra: Optional[Mapping[str, BackendProfile]] = None) -> BackendProfile:
    """
    Look up a profile, declared ones shadowing the built-in table

    SEAMSTRESS_<PROFILE>_BASE_URL overrides the endpoint.
    """
    table = dict(BUILTIN_PROFILES)
    table.update(extra or {})
    if name not in table:
        raise ValidationError(f"Unknown backend profile '{name}' (known: {', '.join(sorted(table))})")
    profile = table[name]
    base_url = os.getenv(_env_override_name(name))
    if base_url:
        profile = replace(profile, base_url=base_url)
    return profile


@dataclass
class RunConfig:
    """Everything one command needs; flags win over seamstress.toml, which wins over defaults"""
    project_root: Path
    out_dir: Path
    backend: str = "claude-3.5-sonnet"
    cap: Optional[int] = None
    max_cap_lines: int = 4000
    floor_lines: int = 30
    max_repair_attempts: int = 20
    max_format_retries: int = 20
    stall_threshold: int = 10
    compile_timeout: float = 300.0
    chunk_lines: int = 100
    defines: List[str] = field(default_factory=list)
    include_dirs: List[str] = field(default_factory=list)
    rules_path: Optional[Path] = None
    report_format: str = "text"
    force: bool = False
    allowlist: List[str] = field(default_factory=list)
    test_hook: Optional[str] = None
    profiles: Dict[str, BackendProfile] = field(default_factory=dict)

    def __post_init__(self):
        self.project_root = Path(self.project_root)
        self.out_dir = Path(self.out_dir)
        if self.rules_path is not None:
            self.rules_path = Path(self.rules_path)

    @property
    def is_replay(self) -> bool:
        return self.backend.startswith(REPLAY_PREFIX)

    @property
    def replay_dir(self) -> Optional[Path]:
        return Path(self.backend[len(REPLAY_PREFIX):]) if self.is_replay else None

    def profile(self) -> Optional[BackendProfile]:
        """Live profile; None for replay backends, which carry their own"""
        if self.is_replay:
            return None
        return get_backend_profile(self.backend, self.profiles)

    def validate(self) -> "RunConfig":
        if self.out_dir.resolve() == self.project_root.resolve():
            raise ValidationError("The output directory must differ from the project root")
        limits = {"cap": self.cap, "max_cap_lines": self.max_cap_lines, "floor_lines": self.floor_lines,
                  "max_repair_attempts": self.max_repair_attempts,
                  "max_format_retries": self.max_format_retries, "stall_threshold": self.stall_threshold,
                  "compile_timeout": self.compile_timeout, "chunk_lines": self.chunk_lines}
        for name, value in limits.items():
            if value is not None and value < 1:
                raise ValidationError(f"{name} must be at least 1, got {value}")
        if self.cap is not None and self.cap < self.floor_lines:
            raise ValidationError(f"cap {self.cap} is below the floor of {self.floor_lines} lines")
        if self.report_format not in ("text", "json"):
            raise ValidationError(f"report format must be text or json, got '{self.report_format}'")
        if self.is_replay and not self.backend[len(REPLAY_PREFIX):]:
            raise ValidationError("replay backend needs a directory: replay:<dir>")
        return self


# seamstress.toml key -> RunConfig field
FILE_KEYS = {
    "project": "project_root", "out": "out_dir", "backend": "backend", "cap": "cap",
    "max_cap": "max_cap_lines", "floor": "floor_lines", "max_repair": "max_repair_attempts",
    "max_format_retries": "max_format_retries", "stall_threshold": "stall_threshold",
    "compile_timeout": "compile_timeout", "chunk_lines": "chunk_lines", "define": "defines",
    "include_dirs": "include_dirs", "rules": "rules_path", "report_format": "report_format",
    "allowlist": "allowlist", "test_hook": "test_hook",
}


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """RunConfig field values and declared profiles from a seamstress.toml"""
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ValidationError(f"{path}: {e}") from e
    values: Dict[str, Any] = {}
    for key, value in data.items():
        if key == "profiles":
            values["profiles"] = {name: profile_from_dict(name, table) for name, table in value.items()}
        elif key in FILE_KEYS:
            values[FILE_KEYS[key]] = value
        else:
            raise ValidationError(f"{path}: unknown setting '{key}'")
    # relative paths in the file are relative to the file
    for key in ("project_root", "out_dir", "rules_path"):
        if key in values and not Path(values[key]).is_absolute():
            values[key] = path.parent / values[key]
    return values


def load_run_config(flags: Mapping[str, Any], config_path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Merge defaults, seamstress.toml and flags (None means not given)

    Without an explicit path, `<project>/seamstress.toml` is used when present.
    """
    given = {k: v for k, v in flags.items() if v is not None}
    if config_path is None and given.get("project_root"):
        candidate = Path(given["project_root"]) / CONFIG_FILE
        config_path = candidate if candidate.is_file() else None
    values = read_config_file(config_path) if config_path else {}
    values.update(given)
    if "out_dir" not in values and "project_root" in values:
        values["out_dir"] = Path(values["project_root"]) / DEFAULT_OUT
    for required in ("project_root", "out_dir"):
        if required not in values:
            raise ValidationError(f"Missing setting: {required}")
    if isinstance(values.get("defines"), str):
        values["defines"] = [d for d in values["defines"].split(",") if d]
    return RunConfig(**values).validate()


def get_environment_info(config: Optional[RunConfig] = None) -> Dict[str, Any]:
    """Which credentials are present, for the analyze summary and the server"""
    info = {
        "profiles": {name: {"context_window": p.context_window, "output_limit": p.output_limit,
                            "credentials": bool(os.getenv(p.api_key_env))}
                     for name, p in BUILTIN_PROFILES.items()},
    }
    if config is not None:
        info["backend"] = config.backend
    return info
