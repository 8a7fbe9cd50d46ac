"""Shared test fixtures: scripted providers and small corpus builders."""

from __future__ import annotations

import pytest

from scenewise.config import EngineConfig
from scenewise.ingest import ChunkRange, TimedUtterance, Transcript
from scenewise.providers import Provider, ScriptedTransport
from scenewise.store import MemoryKV


def utter(start: float, end: float, text: str = "words") -> TimedUtterance:
    return TimedUtterance(start, end, text)


def transcript(utterances, duration: float, video_id: str = "vid") -> Transcript:
    return Transcript(video_id, duration, tuple(utterances))


def chunk(start: float, end: float, index: int = 1) -> ChunkRange:
    return ChunkRange(index, start, end)


def chat_provider(script, model: str = "base-model", cache=None) -> Provider:
    """Chat provider over a scripted transport; script entries are content strings."""
    if callable(script):
        transport = ScriptedTransport(script)
    else:
        transport = ScriptedTransport([{"content": s} for s in script])
    return Provider(kind="chat", model=model, transport=transport, cache=cache, retries=0)


def provider_of(kind: str, script, model: str = "m", cache=None, retries: int = 0) -> Provider:
    transport = ScriptedTransport(script)
    return Provider(kind=kind, model=model, transport=transport, cache=cache, retries=retries)


@pytest.fixture
def cfg() -> EngineConfig:
    return EngineConfig(embedding_dim=8)


@pytest.fixture
def memory_kv() -> MemoryKV:
    return MemoryKV()
