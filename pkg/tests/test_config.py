"""Config loading, validation, and environment overrides."""

from __future__ import annotations

import pytest

from scenewise.config import EngineConfig, load_config
from scenewise.errors import InvalidInputError


def test_defaults_are_valid():
    cfg = EngineConfig()
    assert cfg.chunk_len_s == 300.0
    assert cfg.overlap_s == 10.0
    assert cfg.epsilon_s == 10.0
    assert cfg.min_scene_s == 10.0
    assert cfg.frame_interval_s == 6.0
    assert cfg.max_frames == 10
    assert cfg.budget_tokens == 2400
    assert cfg.temperature == 0.7 and cfg.top_p == 0.95
    assert cfg.max_retries == 4


def test_invariants_enforced():
    with pytest.raises(InvalidInputError):
        EngineConfig(overlap_s=400.0)
    with pytest.raises(InvalidInputError):
        EngineConfig(budget_tokens=0)
    with pytest.raises(InvalidInputError):
        EngineConfig(chunk_len_s=-1)
    with pytest.raises(InvalidInputError):
        EngineConfig(record_delimiter="<|X|>", completion_delimiter="<|X|>")


def test_yaml_load_with_providers(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(
        """
providers:
  llm_base: {endpoint: "https://api.example/chat", model: "m-base"}
  embed: {endpoint: "https://api.example/embed", model: "m-embed"}
budget_tokens: 1200
epsilon_s: 8
""",
        encoding="utf-8",
    )
    cfg = load_config(path, env={})
    assert cfg.providers["llm_base"].model == "m-base"
    assert cfg.providers["vlm"].configured is False
    assert cfg.budget_tokens == 1200
    assert cfg.epsilon_s == 8.0


def test_env_overrides_win(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("budget_tokens: 1200\n", encoding="utf-8")
    env = {
        "SCENEWISE_BUDGET_TOKENS": "900",
        "SCENEWISE_LLM_BASE_ENDPOINT": "https://other/chat",
        "SCENEWISE_LLM_BASE_MODEL": "env-model",
    }
    cfg = load_config(path, env=env)
    assert cfg.budget_tokens == 900
    assert cfg.providers["llm_base"].endpoint == "https://other/chat"
    assert cfg.providers["llm_base"].model == "env-model"


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("no_such_knob: 1\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        load_config(path, env={})
