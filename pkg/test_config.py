#!/usr/bin/env python3
"""
Tests for backend profiles and run configuration loading
"""
import os
import sys
from pathlib import Path

import pytest

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from modules.config import (
    BUILTIN_PROFILES, RunConfig, get_backend_profile, get_environment_info, load_run_config,
    profile_from_dict, read_config_file, setup_environment,
)
from modules.error_handling import ValidationError


def test_builtin_profiles():
    assert get_backend_profile("gpt-4o").context_window == 128000
    assert get_backend_profile("llama-3-70b").output_limit == 2048
    assert get_backend_profile("gemini-1.5-pro").context_window == 2000000
    with pytest.raises(ValidationError) as info:
        get_backend_profile("gpt-2")
    assert "claude-3.5-sonnet" in str(info.value)


def test_base_url_override(monkeypatch):
    monkeypatch.setenv("SEAMSTRESS_LLAMA_3_70B_BASE_URL", "http://localhost:8000/v1")
    assert get_backend_profile("llama-3-70b").base_url == "http://localhost:8000/v1"
    assert BUILTIN_PROFILES["llama-3-70b"].base_url is None


def test_declared_profile_shadows_builtin():
    local = profile_from_dict("gpt-4o", {"context_window": 32000, "output_limit": 1024, "model": "gpt-4o-mini"})
    assert get_backend_profile("gpt-4o", {"gpt-4o": local}).context_window == 32000
    with pytest.raises(ValidationError):
        profile_from_dict("x", {"context_window": 1000, "output_limit": 10, "temperature": 0.2})
    with pytest.raises(ValidationError):
        profile_from_dict("x", {"context_window": 1000, "output_limit": 2000})


def test_validate_limits(tmp_path):
    project = tmp_path / "c"
    with pytest.raises(ValidationError):
        RunConfig(project_root=project, out_dir=project).validate()
    with pytest.raises(ValidationError):
        RunConfig(project_root=project, out_dir=tmp_path / "out", cap=20).validate()
    with pytest.raises(ValidationError):
        RunConfig(project_root=project, out_dir=tmp_path / "out", max_repair_attempts=0).validate()
    with pytest.raises(ValidationError):
        RunConfig(project_root=project, out_dir=tmp_path / "out", report_format="yaml").validate()
    with pytest.raises(ValidationError):
        RunConfig(project_root=project, out_dir=tmp_path / "out", backend="replay:").validate()


def test_replay_backend_name(tmp_path):
    config = RunConfig(project_root=tmp_path / "c", out_dir=tmp_path / "out",
                       backend=f"replay:{tmp_path / 'transcript'}").validate()
    assert config.is_replay
    assert config.replay_dir == tmp_path / "transcript"
    assert config.profile() is None


def test_read_config_file(tmp_path):
    path = tmp_path / "seamstress.toml"
    path.write_text(
        'backend = "local"\n'
        'rules = "rules.txt"\n'
        'define = ["FAST"]\n'
        'allowlist = ["libc"]\n'
        '\n'
        '[profiles.local]\n'
        'context_window = 16000\n'
        'output_limit = 2048\n'
        'base_url = "http://localhost:11434/v1"\n'
    )
    values = read_config_file(path)
    assert values["rules_path"] == tmp_path / "rules.txt"
    assert values["defines"] == ["FAST"]
    assert values["profiles"]["local"].context_window == 16000

    config = load_run_config({"project_root": tmp_path / "c"}, path)
    assert config.profile().base_url == "http://localhost:11434/v1"
    assert config.allowlist == ["libc"]

    path.write_text('colour = "blue"\n')
    with pytest.raises(ValidationError):
        read_config_file(path)
    path.write_text('cap = \n')
    with pytest.raises(ValidationError):
        read_config_file(path)


def test_load_run_config_defaults(tmp_path):
    config = load_run_config({"project_root": tmp_path, "cap": None, "defines": "A,B"})
    assert config.out_dir == tmp_path / ".seamstress"
    assert config.defines == ["A", "B"]
    assert config.cap is None
    assert config.max_repair_attempts == 20
    with pytest.raises(ValidationError):
        load_run_config({})


def test_setup_environment(tmp_path, monkeypatch):
    pytest.importorskip("dotenv")
    monkeypatch.delenv("SEAMSTRESS_TEST_SETTING", raising=False)
    assert setup_environment(tmp_path / "absent.env") is False
    env_file = tmp_path / ".env"
    env_file.write_text("SEAMSTRESS_TEST_SETTING=on\n")
    assert setup_environment(env_file) is True
    assert os.environ["SEAMSTRESS_TEST_SETTING"] == "on"
    monkeypatch.delenv("SEAMSTRESS_TEST_SETTING")


def test_environment_info(monkeypatch, tmp_path):
    monkeypatch.setenv("GEMINI_API_KEY", "g-test")
    monkeypatch.delenv("LLAMA_API_KEY", raising=False)
    info = get_environment_info(RunConfig(project_root=tmp_path, out_dir=tmp_path / "out"))
    assert info["profiles"]["gemini-1.5-pro"]["credentials"] is True
    assert info["profiles"]["llama-3-70b"]["credentials"] is False
    assert info["backend"] == "claude-3.5-sonnet"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
