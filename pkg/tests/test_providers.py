"""Provider envelope validation, caching, retries, transports, KV stores."""

from __future__ import annotations

import threading

import pytest

from scenewise import wire
from scenewise.errors import ProtocolError, TransportError
from scenewise.providers import (
    Provider,
    ProviderRequest,
    ScriptedTransport,
    build_transport,
)
from scenewise.store import KVStore, MemoryKV


class TestWireSchemas:
    def test_chat_round_trip_valid(self):
        wire.validate_request(
            "chat",
            {
                "model": "m",
                "messages": [{"role": "user", "content": "hi"}],
                "temperature": 0.7,
                "top_p": 0.95,
            },
        )
        wire.validate_response("chat", {"content": "ok"})

    def test_chat_missing_field_rejected(self):
        with pytest.raises(ProtocolError):
            wire.validate_request(
                "chat", {"model": "m", "messages": [{"role": "user", "content": "x"}]}
            )

    def test_embed_response_shape(self):
        wire.validate_response("embed", {"vector": [0.1, 0.2], "dim": 2})
        with pytest.raises(ProtocolError):
            wire.validate_response("embed", {"vector": []})

    def test_asr_envelope(self):
        wire.validate_request("asr", {"model": "m", "media": {"locator": "clip.wav"}})
        with pytest.raises(ProtocolError):
            wire.validate_request("asr", {"model": "m", "media": {}})

    def test_caption_needs_frames_or_locator_with_timestamps(self):
        wire.validate_request(
            "caption",
            {"model": "m", "transcript": "t", "frames_b64": ["aGk="]},
        )
        wire.validate_request(
            "caption",
            {
                "model": "m",
                "transcript": "t",
                "media": {"locator": "v"},
                "frame_timestamps_s": [3.0],
            },
        )
        with pytest.raises(ProtocolError):
            wire.validate_request("caption", {"model": "m", "transcript": "t"})


class TestProvider:
    def test_fills_model_and_chat_defaults(self):
        transport = ScriptedTransport([{"content": "hello"}])
        provider = Provider(kind="chat", model="m1", transport=transport)
        assert provider.chat([{"role": "user", "content": "q"}]) == "hello"
        body = transport.requests[0].body
        assert body["model"] == "m1"
        assert body["temperature"] == 0.7 and body["top_p"] == 0.95

    def test_response_schema_enforced(self):
        transport = ScriptedTransport([{"not_content": 1}])
        provider = Provider(kind="chat", model="m", transport=transport)
        with pytest.raises(ProtocolError):
            provider.chat([{"role": "user", "content": "q"}])

    def test_cache_hit_skips_transport(self):
        cache = MemoryKV()
        transport = ScriptedTransport([{"content": "a"}])
        provider = Provider(kind="chat", model="m", transport=transport, cache=cache)
        first = provider.chat([{"role": "user", "content": "q"}])
        second = provider.chat([{"role": "user", "content": "q"}])
        assert first == second == "a"
        assert transport.calls == 1

    def test_distinct_requests_miss_cache(self):
        cache = MemoryKV()
        transport = ScriptedTransport([{"content": "a"}, {"content": "b"}])
        provider = Provider(kind="chat", model="m", transport=transport, cache=cache)
        provider.chat([{"role": "user", "content": "one"}])
        provider.chat([{"role": "user", "content": "two"}])
        assert transport.calls == 2

    def test_transport_errors_retried_then_raised(self):
        transport = ScriptedTransport(
            [TransportError("boom"), TransportError("boom"), {"content": "ok"}]
        )
        provider = Provider(
            kind="chat", model="m", transport=transport, retries=2, retry_wait_s=0.0
        )
        assert provider.chat([{"role": "user", "content": "q"}]) == "ok"
        assert transport.calls == 3

        exhausted = ScriptedTransport([TransportError("boom")] * 3)
        provider = Provider(
            kind="chat", model="m", transport=exhausted, retries=2, retry_wait_s=0.0
        )
        with pytest.raises(TransportError):
            provider.chat([{"role": "user", "content": "q"}])
        assert exhausted.calls == 3

    def test_embed_dim_cross_check(self):
        transport = ScriptedTransport([{"vector": [1.0, 2.0], "dim": 3}])
        provider = Provider(kind="embed", model="m", transport=transport)
        with pytest.raises(ProtocolError):
            provider.embed("text")

    def test_cache_key_stable_under_key_order(self):
        a = ProviderRequest("chat", {"model": "m", "x": 1, "y": 2})
        b = ProviderRequest("chat", {"y": 2, "x": 1, "model": "m"})
        assert a.cache_key() == b.cache_key()

    def test_concurrent_calls_thread_safe(self):
        cache = MemoryKV()
        transport = ScriptedTransport(lambda req: {"content": "z"})
        provider = Provider(kind="chat", model="m", transport=transport, cache=cache)

        def worker(i: int) -> None:
            provider.chat([{"role": "user", "content": f"q{i % 4}"}])

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        # Every distinct request reached the transport at least once and the
        # cache holds exactly the four distinct responses.
        assert len(cache.keys("provider:")) == 4


class TestTransportRegistry:
    def test_unknown_scheme_rejected(self):
        with pytest.raises(ProtocolError):
            build_transport("gopher://nope")

    def test_fixture_scheme_lazily_registered(self):
        transport = build_transport("fixture://embed")
        request = ProviderRequest("embed", {"model": "m", "text": "benchmarks talk"})
        assert transport.send(request).body["dim"] == 8


class TestKVStore:
    def test_round_trip_and_enumeration(self, tmp_path):
        kv = KVStore(tmp_path / "kv")
        kv.put("scene:v:0001", b"one")
        kv.put("provider:chat:abc", b"two")
        assert kv.get("scene:v:0001") == b"one"
        assert kv.get("missing") is None
        assert kv.keys("scene:") == ["scene:v:0001"]
        assert set(kv.items()) == {"scene:v:0001", "provider:chat:abc"}

    def test_keys_survive_odd_characters(self, tmp_path):
        kv = KVStore(tmp_path / "kv")
        key = "scene:weird/..\\name with spaces:✓"
        kv.put(key, b"x")
        assert kv.get(key) == b"x"
        assert kv.keys() == [key]
        assert (tmp_path / "kv").is_dir()

    def test_overwrite_is_atomic_replacement(self, tmp_path):
        kv = KVStore(tmp_path / "kv")
        kv.put("k", b"first")
        kv.put("k", b"second")
        assert kv.get("k") == b"second"
        assert len(kv.keys()) == 1
