"""Stage orchestration over a corpus directory.

Artifacts live under one corpus directory and every stage is idempotent:
outputs are atomically replaced and all provider responses go through the
content-addressed KV cache, so re-running a stage with unchanged inputs
issues zero provider calls.

Layout::

    corpus/
      kvcache/                   content-addressed provider responses + scene KV
      videos/<id>/transcript.tsv
      videos/<id>/scenes.json    scene manifest (segment stage)
      videos/<id>/captions.json  scene captions (ground stage)
      graph.json                 knowledge graph (ground stage)
      scenes.json, vectors.bin, VERSION   store bundle (index stage)
"""

from __future__ import annotations

import base64
import concurrent.futures
import json
import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import index as index_mod
from .config import EngineConfig
from .errors import (
    ExtractionError,
    InvalidInputError,
    PipelineError,
    PrerequisiteError,
)
from .grounding import (
    ASR,
    VISUAL,
    KnowledgeGraph,
    SceneKnowledge,
    caption_scene,
    condense_graph_descriptions,
    extract_knowledge,
    fuse_scene_knowledge,
    merge_into_graph,
    plan_frames,
)
from .ingest import (
    Transcript,
    dump_transcript_file,
    load_transcript_file,
    make_chunk_ranges,
    shift_transcript,
    slice_transcript,
    transcribe,
)
from .providers import Provider, build_transport
from .refine import (
    SILENT,
    Scene,
    SceneSet,
    align_boundaries,
    fill_time_gaps,
    merge_short_scenes,
    scene_set_from_manifest,
    scene_set_to_manifest,
    stitch_chunks,
)
from .retrieval import (
    Query,
    QueryResult,
    assemble_context,
    extract_query_keywords,
    focused_caption,
    generate_answer,
    select_scenes,
)
from .segmenter import segment_chunk
from .store import KVStore, atomic_write_text
from .tokens import token_length

logger = logging.getLogger(__name__)

STAGES = ("ingest", "segment", "ground", "index", "query", "eval")


@dataclass
class ProviderSet:
    """Configured providers by role; unconfigured roles stay ``None``."""

    asr: Provider | None = None
    llm_base: Provider | None = None
    llm_escalated: Provider | None = None
    vlm: Provider | None = None
    embed: Provider | None = None
    judge: Provider | None = None


_ROLE_KINDS = {
    "asr": "asr",
    "llm_base": "chat",
    "llm_escalated": "chat",
    "vlm": "caption",
    "embed": "embed",
    "judge": "chat",
}


def build_providers(cfg: EngineConfig, cache: KVStore | None) -> ProviderSet:
    """Instantiate providers from config; endpoints resolve via the scheme registry."""
    providers = ProviderSet()
    for role, kind in _ROLE_KINDS.items():
        entry = cfg.providers.get(role)
        if entry is None or not entry.configured:
            continue
        provider = Provider(
            kind=kind,
            model=entry.model,
            transport=build_transport(entry.endpoint),
            cache=cache,
            retries=cfg.transport_retries,
            chat_defaults={"temperature": cfg.temperature, "top_p": cfg.top_p},
        )
        setattr(providers, role, provider)
    return providers


def corpus_cache(corpus: Path, cfg: EngineConfig) -> KVStore:
    return KVStore(Path(cfg.cache_dir) if cfg.cache_dir else corpus / "kvcache")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise PrerequisiteError(message)


def _video_dirs(corpus: Path) -> list[Path]:
    root = corpus / "videos"
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir())


# ---------------------------------------------------------------- ingest


def stage_ingest(
    corpus: Path,
    cfg: EngineConfig,
    providers: ProviderSet,
    source: str,
    *,
    video_id: str | None = None,
    duration_s: float | None = None,
) -> Transcript:
    """Load a transcript file, or transcribe media chunk by chunk via ASR."""
    corpus.mkdir(parents=True, exist_ok=True)
    path = Path(source)
    if path.exists() and path.suffix in (".tsv", ".txt"):
        transcript = load_transcript_file(path, video_id=video_id, duration_s=duration_s)
    else:
        _require(providers.asr is not None, "ingest from media needs a configured ASR provider")
        if duration_s is None:
            raise InvalidInputError("ingesting media requires an explicit duration")
        if video_id is None:
            video_id = Path(source).stem
        utterances = []
        for chunk in make_chunk_ranges(duration_s, cfg.chunk_len_s, cfg.overlap_s):
            locator = f"{source}#t={chunk.start_s:.2f},{chunk.end_s:.2f}"
            chunk_t = transcribe(locator, providers.asr, video_id=video_id)
            shifted = shift_transcript(chunk_t, chunk.start_s, duration_s)
            for u in shifted.utterances:
                # Chunks overlap; keep the first covering utterance.
                if not utterances or u.start_s >= utterances[-1].end_s:
                    utterances.append(u)
        transcript = Transcript(video_id, duration_s, tuple(utterances))
    video_dir = corpus / "videos" / transcript.video_id
    video_dir.mkdir(parents=True, exist_ok=True)
    dump_transcript_file(transcript, video_dir / "transcript.tsv")
    logger.info(
        "ingested %s: %d utterance(s), %.2f s",
        transcript.video_id,
        len(transcript.utterances),
        transcript.duration_s,
    )
    return transcript


def _load_video_transcript(video_dir: Path) -> Transcript:
    path = video_dir / "transcript.tsv"
    _require(path.exists(), f"no transcript for video {video_dir.name}; run ingest first")
    text = path.read_text("utf-8")
    duration = None
    for line in text.splitlines():
        if line.startswith("#") and "duration_s=" in line:
            duration = float(line.rsplit("duration_s=", 1)[1].split()[0])
            break
    return load_transcript_file(path, video_id=video_dir.name, duration_s=duration)


# ---------------------------------------------------------------- segment


def stage_segment(
    corpus: Path,
    cfg: EngineConfig,
    providers: ProviderSet,
    *,
    jobs: int = 1,
    dry_run: bool = False,
) -> list[SceneSet]:
    """Chunk, LLM-segment, refine, and stitch every ingested video."""
    video_dirs = _video_dirs(corpus)
    _require(bool(video_dirs), "no ingested videos; run ingest first")
    _require(
        dry_run or providers.llm_base is not None,
        "segment needs a configured llm_base provider",
    )
    scene_sets: list[SceneSet] = []
    for video_dir in video_dirs:
        transcript = _load_video_transcript(video_dir)
        chunks = make_chunk_ranges(transcript.duration_s, cfg.chunk_len_s, cfg.overlap_s)
        if dry_run:
            for chunk in chunks:
                piece = slice_transcript(transcript, chunk)
                print(
                    f"[dry-run] video={transcript.video_id} chunk={chunk.index} "
                    f"[{chunk.start_s:.2f}, {chunk.end_s:.2f}] "
                    f"model={cfg.providers['llm_base'].model or '?'} "
                    f"prompt_tokens~{token_length(' '.join(u.text for u in piece.utterances))}"
                )
            continue

        def run_chunk(chunk):
            piece = slice_transcript(transcript, chunk)
            raw = segment_chunk(
                piece,
                chunk,
                providers.llm_base,
                cfg,
                escalated_llm=providers.llm_escalated,
            )
            filled = fill_time_gaps(raw, chunk, cfg.epsilon_s)
            merged = merge_short_scenes(filled, cfg.min_scene_s, piece)
            aligned = align_boundaries(merged, piece, cfg.align_window_s)
            return chunk, aligned

        if jobs > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
                per_chunk = list(pool.map(run_chunk, chunks))
        else:
            per_chunk = [run_chunk(chunk) for chunk in chunks]
        scene_set = stitch_chunks(
            per_chunk,
            transcript.duration_s,
            video_id=transcript.video_id,
            transcript=transcript,
            min_dur_s=cfg.min_scene_s,
            epsilon_s=cfg.epsilon_s,
        )
        atomic_write_text(
            video_dir / "scenes.json",
            json.dumps(scene_set_to_manifest(scene_set), indent=2),
        )
        scene_sets.append(scene_set)
        logger.info(
            "segmented %s into %d scene(s)", transcript.video_id, len(scene_set.scenes)
        )
    return scene_sets


def load_scene_sets(corpus: Path) -> list[SceneSet]:
    scene_sets = []
    for video_dir in _video_dirs(corpus):
        manifest_path = video_dir / "scenes.json"
        _require(
            manifest_path.exists(),
            f"no scenes for video {video_dir.name}; run segment first",
        )
        transcript = _load_video_transcript(video_dir)
        records = json.loads(manifest_path.read_text("utf-8"))
        scene_sets.append(
            scene_set_from_manifest(video_dir.name, transcript.duration_s, records)
        )
    return scene_sets


# ---------------------------------------------------------------- ground


class FrameExtractor:
    """Runs the configured external command to materialize frames.

    The engine never decodes media itself; a command template with
    ``{media}``, ``{timestamp}`` and ``{output}`` placeholders (for example
    an ffmpeg invocation) produces one image file per sampled timestamp.
    """

    def __init__(self, command_template: str):
        self.command_template = command_template

    def extract_b64(self, media_locator: str, timestamps: list[float]) -> list[str]:
        frames: list[str] = []
        with tempfile.TemporaryDirectory(prefix="scenewise-frames-") as tmp:
            for i, ts in enumerate(timestamps):
                output = Path(tmp) / f"frame-{i:03d}.png"
                command = [
                    part.replace("{media}", media_locator)
                    .replace("{timestamp}", f"{ts:.2f}")
                    .replace("{output}", str(output))
                    for part in shlex.split(self.command_template)
                ]
                try:
                    subprocess.run(command, check=True, capture_output=True, timeout=60)
                except (subprocess.SubprocessError, OSError) as exc:
                    raise PipelineError(f"frame extraction failed: {exc}") from exc
                frames.append(base64.b64encode(output.read_bytes()).decode("ascii"))
        return frames


def _media_locator(corpus: Path, video_id: str) -> str:
    meta = corpus / "videos" / video_id / "media.txt"
    if meta.exists():
        return meta.read_text("utf-8").strip()
    return f"video:{video_id}"


def stage_ground(
    corpus: Path,
    cfg: EngineConfig,
    providers: ProviderSet,
    *,
    jobs: int = 1,
) -> KnowledgeGraph:
    """Caption every scene, extract and fuse knowledge, grow the graph."""
    scene_sets = load_scene_sets(corpus)
    _require(providers.vlm is not None, "ground needs a configured vlm provider")
    _require(providers.llm_base is not None, "ground needs a configured llm_base provider")
    extractor = FrameExtractor(cfg.frame_command) if cfg.frame_command else None
    graph = KnowledgeGraph()

    for scene_set in scene_sets:
        locator = _media_locator(corpus, scene_set.video_id)
        captions: dict[str, str] = {}

        def ground_scene(scene) -> tuple[str, str, SceneKnowledge]:
            plan = plan_frames(scene, cfg.frame_interval_s, cfg.max_frames)
            frames_b64 = (
                extractor.extract_b64(locator, list(plan.timestamps_s))
                if extractor is not None
                else None
            )
            caption = caption_scene(
                scene, plan, providers.vlm, media_locator=locator, frames_b64=frames_b64
            )
            visual: tuple[list, list] = ([], [])
            spoken: tuple[list, list] = ([], [])
            try:
                if caption.strip():
                    visual = extract_knowledge(caption, VISUAL, scene.id, providers.llm_base)
            except ExtractionError as exc:
                logger.warning("%s", exc)
            try:
                if scene.kind != SILENT and scene.transcript_text.strip():
                    spoken = extract_knowledge(
                        scene.transcript_text, ASR, scene.id, providers.llm_base
                    )
            except ExtractionError as exc:
                logger.warning("%s", exc)
            knowledge = fuse_scene_knowledge(
                visual, spoken, providers.llm_base, scene_id=scene.id
            )
            return scene.id, caption, knowledge

        if jobs > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
                grounded = list(pool.map(ground_scene, scene_set.scenes))
        else:
            grounded = [ground_scene(scene) for scene in scene_set.scenes]

        for scene_id, caption, knowledge in grounded:
            captions[scene_id] = caption
            merge_into_graph(graph, knowledge)  # single-writer join point

        atomic_write_text(
            corpus / "videos" / scene_set.video_id / "captions.json",
            json.dumps(captions, indent=2, sort_keys=True),
        )

    atomic_write_text(corpus / "graph.json", json.dumps(graph.to_dict(), indent=2, sort_keys=True))
    logger.info("graph now has %d node(s), %d edge(s)", graph.node_count, graph.edge_count)
    return graph


def load_captions(corpus: Path, video_id: str) -> dict[str, str]:
    path = corpus / "videos" / video_id / "captions.json"
    _require(path.exists(), f"no captions for video {video_id}; run ground first")
    return json.loads(path.read_text("utf-8"))


# ---------------------------------------------------------------- index


def stage_index(
    corpus: Path, cfg: EngineConfig, providers: ProviderSet, *, jobs: int = 1
) -> index_mod.StoreBundle:
    """Embed every scene's context chunk and persist the store bundle.

    Embedding calls may run concurrently; the vector index and KV store are
    filled by a single writer in scene order, so the artifact is identical
    regardless of ``jobs``.
    """
    scene_sets = load_scene_sets(corpus)
    graph_path = corpus / "graph.json"
    _require(graph_path.exists(), "no knowledge graph; run ground first")
    _require(providers.embed is not None, "index needs a configured embed provider")
    graph = KnowledgeGraph.from_dict(json.loads(graph_path.read_text("utf-8")))
    if providers.llm_base is not None:
        condense_graph_descriptions(graph, providers.llm_base, cfg.condense_threshold)

    work: list[tuple[Scene, index_mod.ContextChunk]] = []
    for scene_set in scene_sets:
        captions = load_captions(corpus, scene_set.video_id)
        for scene in scene_set.scenes:
            work.append(
                (scene, index_mod.build_context_chunk(scene, captions.get(scene.id, "")))
            )

    def embed_one(item):
        _, chunk = item
        return index_mod.embed_text(chunk.text, providers.embed, expected_dim=cfg.embedding_dim)

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            embedded = list(pool.map(embed_one, work))
    else:
        embedded = [embed_one(item) for item in work]

    kv = corpus_cache(corpus, cfg)
    vectors = index_mod.VectorIndex(cfg.embedding_dim)
    for (scene, chunk), vector in zip(work, embedded):
        vectors.add(scene.id, vector, scene.start_s)
        kv.put(
            index_mod.scene_kv_key(scene.id),
            json.dumps(
                {"text": chunk.text, "token_len": chunk.token_len},
                sort_keys=True,
            ).encode("utf-8"),
        )
    bundle = index_mod.StoreBundle(kv=kv, graph=graph, vectors=vectors, scene_sets=scene_sets)
    index_mod.check_store_agreement(bundle)
    index_mod.persist(bundle, corpus)
    logger.info("indexed %d scene(s) at dim %d", len(vectors), cfg.embedding_dim)
    return bundle


# ---------------------------------------------------------------- query


def run_query(
    corpus: Path,
    cfg: EngineConfig,
    providers: ProviderSet,
    text: str,
    *,
    budget_tokens: int | None = None,
) -> QueryResult:
    """Answer one query against the persisted corpus bundle."""
    try:
        bundle = index_mod.load(corpus)
    except index_mod.StoreNotFoundError as exc:
        raise PrerequisiteError(f"{exc}; run index first") from exc
    _require(providers.embed is not None, "query needs a configured embed provider")
    _require(providers.llm_base is not None, "query needs a configured llm_base provider")

    degraded: list[str] = []
    keywords = extract_query_keywords(text, providers.llm_base)
    query = Query(
        text=text,
        keywords=tuple(keywords),
        budget_tokens=budget_tokens or cfg.budget_tokens,
    )

    query_vec = index_mod.embed_text(text, providers.embed, expected_dim=cfg.embedding_dim)
    ranked = (
        bundle.vectors.query(query_vec, k=len(bundle.vectors)) if len(bundle.vectors) else []
    )
    scores = dict(ranked)

    scenes: dict[str, Scene] = {}
    lengths: dict[str, int] = {}
    starts: dict[str, float] = {}
    for scene_set in bundle.scene_sets:
        for scene in scene_set.scenes:
            scenes[scene.id] = scene
            starts[scene.id] = scene.start_s
            entry = bundle.kv.get(index_mod.scene_kv_key(scene.id))
            if entry is None:
                raise PrerequisiteError(f"scene {scene.id} missing from KV store; run index first")
            lengths[scene.id] = int(json.loads(entry.decode("utf-8"))["token_len"])

    selection = select_scenes(scores, lengths, query.budget_tokens, starts=starts)

    captions: dict[str, str] = {}
    generic = {
        video.video_id: load_captions(corpus, video.video_id) for video in bundle.scene_sets
    }
    for scene_id in selection.scene_ids:
        scene = scenes[scene_id]
        video_id = scene_id.rsplit(":", 1)[0]
        plan = plan_frames(scene, cfg.frame_interval_s, cfg.max_frames)
        extractor = FrameExtractor(cfg.frame_command) if cfg.frame_command else None
        locator = _media_locator(corpus, video_id)
        frames_b64 = None
        if extractor is not None:
            frames_b64 = extractor.extract_b64(locator, list(plan.timestamps_s))
        caption, was_degraded = focused_caption(
            scene,
            query.keywords,
            plan,
            providers.vlm,
            generic_caption=generic.get(video_id, {}).get(scene_id, ""),
            media_locator=locator,
            frames_b64=frames_b64,
        )
        captions[scene_id] = caption
        if was_degraded:
            degraded.append(f"focused_caption:{scene_id}")

    context = assemble_context(
        selection, bundle.graph, scenes, captions, hop_depth=cfg.graph_hop_depth
    )
    answer = generate_answer(query, context, providers.llm_base)

    return QueryResult(
        query=text,
        answer=answer,
        selection=tuple(
            {
                "scene_id": sid,
                "start_s": scenes[sid].start_s,
                "end_s": scenes[sid].end_s,
                "score": selection.scores[sid],
                "tokens": lengths[sid],
            }
            for sid in selection.scene_ids
        ),
        context_tokens=selection.total_tokens,
        degraded_flags=tuple(degraded),
    )
