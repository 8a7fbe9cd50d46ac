"""Engine configuration: one YAML file, environment variable overrides.

Secrets and machine-local endpoints are usually supplied via environment
variables (``SCENEWISE_<FIELD>`` for scalars, ``SCENEWISE_<ROLE>_ENDPOINT``
and ``SCENEWISE_<ROLE>_MODEL`` for providers) so config files can be
committed without credentials.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import InvalidInputError

PROVIDER_ROLES = ("asr", "llm_base", "llm_escalated", "vlm", "embed", "judge")


@dataclass
class ProviderConfig:
    """Endpoint URL and model name for one provider role."""

    endpoint: str = ""
    model: str = ""

    @property
    def configured(self) -> bool:
        return bool(self.endpoint and self.model)


@dataclass
class EngineConfig:
    """All tunables of the engine. Defaults match the documented pipeline."""

    providers: dict[str, ProviderConfig] = field(
        default_factory=lambda: {role: ProviderConfig() for role in PROVIDER_ROLES}
    )

    # Chunking and silence handling.
    chunk_len_s: float = 300.0
    overlap_s: float = 10.0
    min_gap_s: float = 2.0
    epsilon_s: float = 10.0
    min_scene_s: float = 10.0
    align_window_s: float = 3.0

    # Segmentation loop.
    min_scene_dur_s: float = 15.0
    max_scene_dur_s: float = 60.0
    min_segments: int = 3
    min_segments_chunk_dur_s: float = 90.0
    max_retries: int = 4
    escalate_after_faults: int = 2
    fallback_scene_dur_s: float = 60.0
    record_delimiter: str = "<|REC|>"
    completion_delimiter: str = "<|DONE|>"
    temperature: float = 0.7
    top_p: float = 0.95
    max_prompt_tokens: int = 16000

    # Grounding and indexing.
    frame_interval_s: float = 6.0
    max_frames: int = 10
    condense_threshold: int = 4
    embedding_dim: int = 384

    # Retrieval.
    budget_tokens: int = 2400
    graph_hop_depth: int = 1

    # Infrastructure.
    transport_retries: int = 2
    frame_command: str = ""
    cache_dir: str = ""

    def __post_init__(self) -> None:
        positive = (
            "chunk_len_s",
            "epsilon_s",
            "min_scene_s",
            "align_window_s",
            "min_scene_dur_s",
            "max_scene_dur_s",
            "frame_interval_s",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"config {name} must be positive")
        if not 0 <= self.overlap_s < self.chunk_len_s:
            raise InvalidInputError("config requires 0 <= overlap_s < chunk_len_s")
        if self.budget_tokens <= 0:
            raise InvalidInputError("config budget_tokens must be positive")
        if self.max_frames < 1:
            raise InvalidInputError("config max_frames must be at least 1")
        if self.record_delimiter == self.completion_delimiter or not (
            self.record_delimiter and self.completion_delimiter
        ):
            raise InvalidInputError("delimiters must be non-empty and distinct")
        for role in PROVIDER_ROLES:
            self.providers.setdefault(role, ProviderConfig())


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None) -> EngineConfig:
    """Build an ``EngineConfig`` from an optional YAML file plus environment."""
    env = dict(os.environ if env is None else env)
    data: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text("utf-8")) or {}
        if not isinstance(loaded, dict):
            raise InvalidInputError(f"config file {path} must contain a mapping")
        data = loaded

    providers: dict[str, ProviderConfig] = {}
    raw_providers = data.pop("providers", {}) or {}
    for role in PROVIDER_ROLES:
        entry = raw_providers.get(role, {}) or {}
        endpoint = env.get(f"SCENEWISE_{role.upper()}_ENDPOINT", entry.get("endpoint", ""))
        model = env.get(f"SCENEWISE_{role.upper()}_MODEL", entry.get("model", ""))
        providers[role] = ProviderConfig(endpoint=endpoint, model=model)

    kwargs: dict = {"providers": providers}
    for f in fields(EngineConfig):
        if f.name == "providers":
            continue
        value = data.get(f.name, None)
        env_key = f"SCENEWISE_{f.name.upper()}"
        if env_key in env:
            value = env[env_key]
        if value is None:
            continue
        kwargs[f.name] = type(getattr(EngineConfig(), f.name))(value)
    unknown = set(data) - {f.name for f in fields(EngineConfig)}
    if unknown:
        raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
    return EngineConfig(**kwargs)
