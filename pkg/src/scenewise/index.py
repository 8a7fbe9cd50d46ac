"""Per-scene context chunks, embeddings, exact vector search, persistence.

The vector index is an exact cosine scanner: corpora are at most thousands
of scenes, so exactness is cheap and keeps tests deterministic. Vectors are
quantized to float32 on entry, which makes the on-disk round trip bit-exact.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataIntegrityError,
    InvalidInputError,
    ProtocolError,
    StoreNotFoundError,
    StoreVersionError,
)
from .grounding import KnowledgeGraph
from .providers import Provider
from .refine import Scene, SceneSet, scene_set_from_manifest, scene_set_to_manifest
from .store import FORMAT_VERSION, KVStore, atomic_write_bytes, atomic_write_text
from .tokens import token_length

logger = logging.getLogger(__name__)

CONTEXT_SEPARATOR = "\n---\n"


@dataclass(frozen=True)
class ContextChunk:
    """Caption and transcript of one scene, concatenated for embedding."""

    scene_id: str
    text: str
    token_len: int


def build_context_chunk(s: Scene, caption: str) -> ContextChunk:
    """Concatenate caption and transcript with the fixed separator line."""
    if not caption:
        logger.warning("scene %s has an empty caption (degraded mode)", s.id)
    text = caption + CONTEXT_SEPARATOR + s.transcript_text
    return ContextChunk(s.id, text, token_length(text))


@dataclass(frozen=True)
class EmbeddingVector:
    """A finite, fixed-dimension embedding, stored at float32 precision."""

    values: tuple[float, ...]
    norm: float

    @property
    def dim(self) -> int:
        return len(self.values)


def make_embedding(values: list[float] | tuple[float, ...]) -> EmbeddingVector:
    array = np.asarray(values, dtype=np.float32)
    if array.ndim != 1 or array.size == 0:
        raise InvalidInputError("embedding must be a non-empty 1-D vector")
    if not np.all(np.isfinite(array)):
        raise InvalidInputError("embedding contains non-finite entries")
    norm = float(np.linalg.norm(array.astype(np.float64)))
    if norm <= 0:
        raise InvalidInputError("embedding has zero norm")
    return EmbeddingVector(tuple(float(v) for v in array), norm)


def embed_text(text: str, provider: Provider, *, expected_dim: int) -> EmbeddingVector:
    """Embed ``text`` through the provider; dimension mismatches are fatal."""
    if not text:
        raise InvalidInputError("cannot embed empty text")
    vector = provider.embed(text)
    if len(vector) != expected_dim:
        raise ProtocolError(
            f"embedding dimension {len(vector)} does not match configured {expected_dim}"
        )
    return make_embedding(vector)


class VectorIndex:
    """Exact cosine index over scene embeddings with start-time tie-breaks."""

    def __init__(self, dim: int):
        if dim < 1:
            raise InvalidInputError("vector index dimension must be positive")
        self.dim = dim
        self._ids: list[str] = []
        self._starts: list[float] = []
        self._rows: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def scene_ids(self) -> list[str]:
        return list(self._ids)

    def add(self, scene_id: str, vector: EmbeddingVector, start_s: float) -> None:
        if vector.dim != self.dim:
            raise ProtocolError(
                f"vector dim {vector.dim} does not match index dim {self.dim}"
            )
        if scene_id in self._ids:
            position = self._ids.index(scene_id)
            self._rows[position] = np.asarray(vector.values, dtype=np.float32)
            self._starts[position] = start_s
            return
        self._ids.append(scene_id)
        self._starts.append(start_s)
        self._rows.append(np.asarray(vector.values, dtype=np.float32))

    def query(self, vector: EmbeddingVector, k: int) -> list[tuple[str, float]]:
        """Top-k scene ids by cosine similarity, descending.

        Ties break by ascending scene start time, then scene id, so equal
        inputs always give equal rankings.
        """
        if k < 1:
            raise InvalidInputError("k must be at least 1")
        if not self._ids:
            return []
        if vector.dim != self.dim:
            raise ProtocolError(
                f"query dim {vector.dim} does not match index dim {self.dim}"
            )
        q = np.asarray(vector.values, dtype=np.float64)
        q_norm = float(np.linalg.norm(q))
        scored = []
        for scene_id, start, row in zip(self._ids, self._starts, self._rows):
            r = row.astype(np.float64)
            score = float(np.dot(r, q) / (np.linalg.norm(r) * q_norm))
            scored.append((scene_id, start, score))
        scored.sort(key=lambda item: (-item[2], item[1], item[0]))
        return [(scene_id, score) for scene_id, _, score in scored[:k]]

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {
                "dim": self.dim,
                "dtype": "float32-le",
                "ids": self._ids,
                "starts": self._starts,
            },
            sort_keys=True,
        ).encode("utf-8")
        if self._rows:
            matrix = np.stack(self._rows).astype("<f4")
            payload = matrix.tobytes(order="C")
        else:
            payload = b""
        return struct.pack("<Q", len(header)) + header + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "VectorIndex":
        if len(blob) < 8:
            raise DataIntegrityError("vector file too short")
        (header_len,) = struct.unpack("<Q", blob[:8])
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
        index = cls(int(header["dim"]))
        ids, starts = list(header["ids"]), [float(s) for s in header["starts"]]
        raw = blob[8 + header_len :]
        expected = len(ids) * index.dim * 4
        if len(raw) != expected:
            raise DataIntegrityError(
                f"vector payload is {len(raw)} bytes, expected {expected}"
            )
        if ids:
            matrix = np.frombuffer(raw, dtype="<f4").reshape(len(ids), index.dim)
            for scene_id, start, row in zip(ids, starts, matrix):
                index._ids.append(scene_id)
                index._starts.append(start)
                index._rows.append(np.array(row, dtype=np.float32))
        return index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VectorIndex):
            return NotImplemented
        return (
            self.dim == other.dim
            and self._ids == other._ids
            and self._starts == other._starts
            and all(np.array_equal(a, b) for a, b in zip(self._rows, other._rows))
        )


def nearest_scenes(
    index: VectorIndex, query_vec: EmbeddingVector, k: int
) -> list[tuple[str, float]]:
    """Exact cosine ranking of the ``k`` most similar scenes."""
    return index.query(query_vec, k)


@dataclass
class StoreBundle:
    """Everything a corpus build produces: KV cache, graph, vectors, scenes."""

    kv: KVStore
    graph: KnowledgeGraph
    vectors: VectorIndex
    scene_sets: list[SceneSet]

    def all_scene_ids(self) -> set[str]:
        ids: set[str] = set()
        for scene_set in self.scene_sets:
            ids |= {s.id for s in scene_set.scenes}
        return ids


SCENE_KEY_PREFIX = "scene:"


def scene_kv_key(scene_id: str) -> str:
    return SCENE_KEY_PREFIX + scene_id


def check_store_agreement(bundle: StoreBundle) -> None:
    """Verify the stores agree on the corpus scene ids after a build.

    The KV store's per-scene entries and the vector index must cover exactly
    the scene set; graph sources must be a subset (a scene legitimately
    contributes nothing when extraction degraded for both modalities).
    """
    scene_ids = bundle.all_scene_ids()
    kv_ids = {
        key[len(SCENE_KEY_PREFIX) :] for key in bundle.kv.keys(SCENE_KEY_PREFIX)
    }
    vector_ids = set(bundle.vectors.scene_ids)
    if kv_ids != scene_ids:
        raise DataIntegrityError(
            f"KV scene ids disagree with scene sets: {sorted(kv_ids ^ scene_ids)}"
        )
    if vector_ids != scene_ids:
        raise DataIntegrityError(
            f"vector ids disagree with scene sets: {sorted(vector_ids ^ scene_ids)}"
        )
    orphan_sources = bundle.graph.source_scene_ids() - scene_ids
    if orphan_sources:
        raise DataIntegrityError(
            f"graph references unknown scenes: {sorted(orphan_sources)}"
        )


def persist(bundle: StoreBundle, path: str | Path) -> None:
    """Write the bundle to a directory; loading it back is bit-exact."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    scenes_doc = {
        "videos": [
            {
                "video_id": ss.video_id,
                "duration_s": ss.duration_s,
                "scenes": scene_set_to_manifest(ss),
            }
            for ss in bundle.scene_sets
        ]
    }
    atomic_write_text(root / "scenes.json", json.dumps(scenes_doc, indent=2, sort_keys=True))
    atomic_write_text(
        root / "graph.json", json.dumps(bundle.graph.to_dict(), indent=2, sort_keys=True)
    )
    atomic_write_bytes(root / "vectors.bin", bundle.vectors.to_bytes())
    if getattr(bundle.kv, "directory", None) != root / "kvcache":
        target = KVStore(root / "kvcache")
        for key, value in bundle.kv.items().items():
            target.put(key, value)
    atomic_write_text(root / "VERSION", FORMAT_VERSION + "\n")


def load(path: str | Path) -> StoreBundle:
    """Load a persisted bundle, refusing unknown format versions."""
    root = Path(path)
    version_file = root / "VERSION"
    if not root.is_dir() or not version_file.exists():
        raise StoreNotFoundError(f"no store bundle at {root}")
    version = version_file.read_text("utf-8").strip()
    if version != FORMAT_VERSION:
        raise StoreVersionError(
            f"bundle at {root} has format version {version!r}, this build reads "
            f"{FORMAT_VERSION!r}; migrate the corpus or rebuild it"
        )
    scenes_doc = json.loads((root / "scenes.json").read_text("utf-8"))
    scene_sets = [
        scene_set_from_manifest(v["video_id"], float(v["duration_s"]), v["scenes"])
        for v in scenes_doc["videos"]
    ]
    graph = KnowledgeGraph.from_dict(json.loads((root / "graph.json").read_text("utf-8")))
    vectors = VectorIndex.from_bytes((root / "vectors.bin").read_bytes())
    return StoreBundle(
        kv=KVStore(root / "kvcache"),
        graph=graph,
        vectors=vectors,
        scene_sets=scene_sets,
    )
