"""Context chunks, embeddings, exact vector search, bundle persistence."""

from __future__ import annotations

import random

import numpy as np
import pytest

from conftest import provider_of
from scenewise.errors import (
    InvalidInputError,
    ProtocolError,
    StoreNotFoundError,
    StoreVersionError,
)
from scenewise.grounding import KnowledgeGraph, merge_into_graph
from scenewise.index import (
    CONTEXT_SEPARATOR,
    StoreBundle,
    VectorIndex,
    build_context_chunk,
    check_store_agreement,
    embed_text,
    load,
    make_embedding,
    nearest_scenes,
    persist,
    scene_kv_key,
)
from scenewise.refine import Scene, SceneSet
from scenewise.store import KVStore
from scenewise.tokens import token_length
from test_grounding import knowledge


def scene(sid, a, b, text="words"):
    return Scene(sid, a, b, text)


class TestContextChunk:
    def test_format_rule(self):
        chunk = build_context_chunk(scene("s", 0, 10, "T"), "C")
        assert chunk.text == "C\n---\nT"

    def test_empty_caption_degraded(self):
        chunk = build_context_chunk(scene("s", 0, 10, "T"), "")
        assert chunk.text == "\n---\nT"

    def test_deterministic(self):
        a = build_context_chunk(scene("s", 0, 10, "T"), "C")
        b = build_context_chunk(scene("s", 0, 10, "T"), "C")
        assert a == b

    def test_token_len_subadditive(self):
        rng = random.Random(1)
        words = ["alpha", "beta,", "gamma.", "delta", "epsilon!"]
        for _ in range(100):
            a = " ".join(rng.choices(words, k=rng.randint(0, 30)))
            b = " ".join(rng.choices(words, k=rng.randint(1, 30)))
            joined = token_length(a + CONTEXT_SEPARATOR + b)
            assert joined <= token_length(a) + token_length(b) + token_length(
                CONTEXT_SEPARATOR
            )


class TestEmbedText:
    def test_stored_verbatim(self):
        provider = provider_of(
            "embed", [{"vector": [1.0, 0, 0, 0, 0, 0, 0, 0], "dim": 8}]
        )
        vec = embed_text("hello", provider, expected_dim=8)
        assert vec.values == (1.0, 0, 0, 0, 0, 0, 0, 0)
        assert vec.norm == 1.0

    def test_wrong_dimension_is_protocol_error(self):
        provider = provider_of("embed", [{"vector": [1.0, 2.0], "dim": 2}])
        with pytest.raises(ProtocolError):
            embed_text("hello", provider, expected_dim=8)

    def test_repeat_call_hits_cache(self, memory_kv):
        provider = provider_of(
            "embed", [{"vector": [1.0] * 8, "dim": 8}], cache=memory_kv
        )
        embed_text("hello", provider, expected_dim=8)
        embed_text("hello", provider, expected_dim=8)
        assert provider.transport.calls == 1

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            make_embedding([float("nan"), 1.0])


def brute_force_cosine(rows, query):
    """Independent oracle: per-pair cosine, same tie-break key."""
    scored = []
    for scene_id, start, values in rows:
        a = np.asarray(values, dtype=np.float64)
        q = np.asarray(query, dtype=np.float64)
        score = float(a @ q / (np.linalg.norm(a) * np.linalg.norm(q)))
        scored.append((scene_id, start, score))
    scored.sort(key=lambda item: (-item[2], item[1], item[0]))
    return [(sid, score) for sid, _, score in scored]


class TestVectorIndex:
    def test_self_similarity_first(self):
        index = VectorIndex(4)
        index.add("a", make_embedding([1, 0, 0, 0]), 0.0)
        index.add("b", make_embedding([0, 1, 0, 0]), 10.0)
        top = index.query(make_embedding([1, 0, 0, 0]), 1)
        assert top[0][0] == "a"
        assert top[0][1] == pytest.approx(1.0)

    def test_orthogonal_scores_zero(self):
        index = VectorIndex(4)
        index.add("a", make_embedding([1, 0, 0, 0]), 0.0)
        score = index.query(make_embedding([0, 1, 0, 0]), 1)[0][1]
        assert score == 0.0

    def test_ties_break_by_start_time(self):
        index = VectorIndex(4)
        index.add("later", make_embedding([1, 0, 0, 0]), 50.0)
        index.add("earlier", make_embedding([1, 0, 0, 0]), 10.0)
        ranked = index.query(make_embedding([1, 0, 0, 0]), 2)
        assert [sid for sid, _ in ranked] == ["earlier", "later"]

    def test_matches_brute_force_oracle(self):
        rng = random.Random(9)
        for _ in range(25):
            dim = rng.choice([4, 8, 16])
            index = VectorIndex(dim)
            rows = []
            for i in range(rng.randint(1, 60)):
                values = [rng.uniform(-1, 1) for _ in range(dim)]
                if rng.random() < 0.15 and rows:
                    values = list(rows[rng.randrange(len(rows))][2])  # force ties
                start = rng.uniform(0, 1000)
                rows.append((f"s{i:03d}", start, tuple(np.float32(v) for v in values)))
                index.add(f"s{i:03d}", make_embedding(values), start)
            query = [rng.uniform(-1, 1) for _ in range(dim)]
            k = rng.randint(1, len(rows))
            expected = brute_force_cosine(rows, tuple(np.float32(v) for v in query))[:k]
            assert index.query(make_embedding(query), k) == expected

    def test_empty_index_returns_empty(self):
        assert nearest_scenes(VectorIndex(4), make_embedding([1, 0, 0, 0]), 3) == []

    def test_bytes_round_trip(self):
        index = VectorIndex(3)
        index.add("a", make_embedding([0.25, -1.5, 3.0]), 1.0)
        index.add("b", make_embedding([2.0, 0.125, -0.75]), 2.0)
        assert VectorIndex.from_bytes(index.to_bytes()) == index


def tiny_bundle(tmp_path):
    kv = KVStore(tmp_path / "kvcache")
    graph = KnowledgeGraph()
    merge_into_graph(graph, knowledge("v:0000", ["A", "B"], [("A", "B")]))
    vectors = VectorIndex(4)
    scenes = (
        scene("v:0000", 0.0, 30.0, "first words"),
        scene("v:0001", 30.0, 60.0, "second words"),
    )
    for s in scenes:
        vectors.add(s.id, make_embedding([s.start_s + 1, 1, 0, 0]), s.start_s)
        kv.put(scene_kv_key(s.id), b'{"text": "x", "token_len": 3}')
    scene_set = SceneSet("v", 60.0, scenes)
    return StoreBundle(kv=kv, graph=graph, vectors=vectors, scene_sets=[scene_set])


class TestPersistence:
    def test_round_trip_equality(self, tmp_path):
        bundle = tiny_bundle(tmp_path)
        persist(bundle, tmp_path)
        loaded = load(tmp_path)
        assert loaded.scene_sets == bundle.scene_sets
        assert loaded.graph == bundle.graph
        assert loaded.vectors == bundle.vectors
        assert loaded.kv.items() == bundle.kv.items()

    def test_missing_path_not_found(self, tmp_path):
        with pytest.raises(StoreNotFoundError):
            load(tmp_path / "nowhere")

    def test_future_version_refused(self, tmp_path):
        bundle = tiny_bundle(tmp_path)
        persist(bundle, tmp_path)
        (tmp_path / "VERSION").write_text("99\n", encoding="utf-8")
        with pytest.raises(StoreVersionError, match="migrate"):
            load(tmp_path)


class TestStoreAgreement:
    def test_agreement_holds(self, tmp_path):
        check_store_agreement(tiny_bundle(tmp_path))

    def test_missing_vector_detected(self, tmp_path):
        bundle = tiny_bundle(tmp_path)
        bundle.vectors = VectorIndex(4)
        with pytest.raises(Exception, match="vector ids"):
            check_store_agreement(bundle)
