"""Scene grounding: captions, dual-path knowledge extraction, graph building.

Each scene is described twice, once by a vision-language model over sampled
frames and once by its transcript. Entities and relations are mined from
both texts separately, fused (mechanically where names agree, by model
judgment otherwise), and folded into one incremental knowledge graph per
corpus.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

from . import prompts
from .errors import ExtractionError, InvalidInputError, ProtocolError, TransportError
from .providers import Provider
from .refine import Scene

logger = logging.getLogger(__name__)

VISUAL = "visual"
ASR = "asr"


@dataclass(frozen=True)
class FramePlan:
    """Frame sampling timestamps for one scene, capped in count."""

    scene_id: str
    timestamps_s: tuple[float, ...]


def plan_frames(s: Scene, interval_s: float = 6.0, max_frames: int = 10) -> FramePlan:
    """Uniform mid-interval frame timestamps inside the scene.

    Samples sit at interval/2, 3*interval/2, ... past the scene start so a
    frame never lands exactly on a cut. Scenes shorter than one interval get
    a single frame at their midpoint.
    """
    if interval_s <= 0:
        raise InvalidInputError("frame interval must be positive")
    if max_frames < 1:
        raise InvalidInputError("max_frames must be at least 1")
    if s.duration_s <= interval_s:
        return FramePlan(s.id, ((s.start_s + s.end_s) / 2.0,))
    stamps: list[float] = []
    for i in range(max_frames):
        t = s.start_s + interval_s / 2.0 + i * interval_s
        if t >= s.end_s:
            break
        stamps.append(t)
    return FramePlan(s.id, tuple(stamps))


@dataclass
class Entity:
    """A named entity with its accumulated evidence across scenes."""

    name: str
    entity_type: str = ""
    descriptions: tuple[str, ...] = ()
    source_scene_ids: frozenset[str] = frozenset()
    source_modality: frozenset[str] = frozenset()

    @property
    def description(self) -> str:
        return "; ".join(self.descriptions)


@dataclass
class Relation:
    """An undirected relation between two entities."""

    src_name: str
    dst_name: str
    descriptions: tuple[str, ...] = ()
    keywords: tuple[str, ...] = ()
    source_scene_ids: frozenset[str] = frozenset()

    @property
    def description(self) -> str:
        return "; ".join(self.descriptions)

    @property
    def key(self) -> tuple[str, str]:
        return tuple(sorted((self.src_name, self.dst_name)))  # type: ignore[return-value]


@dataclass
class SceneKnowledge:
    """Fused per-scene entities and relations, plus a degraded-fusion flag."""

    scene_id: str
    entities: list[Entity] = field(default_factory=list)
    relations: list[Relation] = field(default_factory=list)
    degraded: bool = False


def normalize_name(name: str) -> str:
    """Uppercase with collapsed whitespace; the graph's node identity."""
    return " ".join(name.split()).upper()


def _loose_key(name: str) -> str:
    return re.sub(r"[^0-9A-Z]+", "", normalize_name(name))


_RECORD_RE = re.compile(r"\(\s*\"?(entity|relationship)\"?\s*(.*)\)", re.DOTALL)


def build_extraction_prompt(text: str) -> str:
    return (
        prompts.EXTRACTION_TEMPLATE.replace(
            "{tuple_delimiter}", prompts.EXTRACTION_TUPLE_DELIMITER
        )
        .replace("{record_delimiter}", prompts.EXTRACTION_RECORD_DELIMITER)
        .replace("{completion_delimiter}", prompts.EXTRACTION_COMPLETION_DELIMITER)
        .replace("{input_text}", text)
    )


def _parse_extraction(
    response: str, modality: str, scene_id: str
) -> tuple[list[Entity], list[Relation], int]:
    """Parse delimiter-structured records; malformed ones are counted, not fatal."""
    body = response.split(prompts.EXTRACTION_COMPLETION_DELIMITER, 1)[0]
    entities: dict[str, Entity] = {}
    relations: list[Relation] = []
    dropped = 0
    for block in body.split(prompts.EXTRACTION_RECORD_DELIMITER):
        block = block.strip()
        if not block:
            continue
        match = _RECORD_RE.search(block)
        if match is None:
            dropped += 1
            continue
        kind = match.group(1)
        parts = [p.strip().strip('"') for p in match.group(2).split(prompts.EXTRACTION_TUPLE_DELIMITER)]
        # First element is the leftover after the record tag, usually empty.
        parts = [p for p in parts[1:]]
        if kind == "entity" and len(parts) >= 3:
            name = normalize_name(parts[0])
            if not name:
                dropped += 1
                continue
            existing = entities.get(name)
            description = parts[2]
            if existing is None:
                entities[name] = Entity(
                    name=name,
                    entity_type=parts[1],
                    descriptions=(description,) if description else (),
                    source_scene_ids=frozenset({scene_id}),
                    source_modality=frozenset({modality}),
                )
            elif description and description not in existing.descriptions:
                existing.descriptions = existing.descriptions + (description,)
        elif kind == "relationship" and len(parts) >= 3:
            src, dst = normalize_name(parts[0]), normalize_name(parts[1])
            if not src or not dst or src == dst:
                dropped += 1
                continue
            keywords = tuple(
                k.strip().lower() for k in (parts[3] if len(parts) > 3 else "").split(",") if k.strip()
            )
            relations.append(
                Relation(
                    src_name=src,
                    dst_name=dst,
                    descriptions=(parts[2],) if parts[2] else (),
                    keywords=keywords,
                    source_scene_ids=frozenset({scene_id}),
                )
            )
        else:
            dropped += 1
    # Relations may reference entities the model forgot to declare.
    for rel in relations:
        for endpoint in (rel.src_name, rel.dst_name):
            if endpoint not in entities:
                entities[endpoint] = Entity(
                    name=endpoint,
                    source_scene_ids=frozenset({scene_id}),
                    source_modality=frozenset({modality}),
                )
    return list(entities.values()), relations, dropped


def extract_knowledge(
    text: str, modality: str, scene_id: str, llm: Provider
) -> tuple[list[Entity], list[Relation]]:
    """Mine entities and relations from one scene text in one modality."""
    if not text.strip():
        raise InvalidInputError("cannot extract knowledge from empty text")
    if modality not in (VISUAL, ASR):
        raise InvalidInputError(f"unknown modality {modality!r}")
    prompt = build_extraction_prompt(text)
    for attempt in range(2):
        response = llm.chat([{"role": "user", "content": prompt}])
        entities, relations, dropped = _parse_extraction(response, modality, scene_id)
        if dropped:
            logger.warning(
                "scene %s %s extraction dropped %d malformed record(s)",
                scene_id,
                modality,
                dropped,
            )
        if entities or relations:
            return entities, relations
        if attempt == 0:
            logger.warning(
                "scene %s %s extraction unparseable, retrying once", scene_id, modality
            )
    raise ExtractionError(f"extraction failed for scene {scene_id} ({modality})")


def _merge_entity(into: Entity, other: Entity) -> Entity:
    descriptions = into.descriptions + tuple(
        d for d in other.descriptions if d not in into.descriptions
    )
    return Entity(
        name=into.name,
        entity_type=into.entity_type or other.entity_type,
        descriptions=descriptions,
        source_scene_ids=into.source_scene_ids | other.source_scene_ids,
        source_modality=into.source_modality | other.source_modality,
    )


def _judge_same_entities(
    pairs: Sequence[tuple[Entity, Entity]], llm: Provider
) -> list[bool]:
    """Ask the model which cross-modality entity pairs are the same entity."""
    listing = "\n".join(
        f"{i + 1}. A: {a.name} ({a.description or 'no description'}) | "
        f"B: {b.name} ({b.description or 'no description'})"
        for i, (a, b) in enumerate(pairs)
    )
    prompt = prompts.ENTITY_MATCH_TEMPLATE.replace("{pairs}", listing)
    response = llm.chat([{"role": "user", "content": prompt}])
    verdicts = [False] * len(pairs)
    for line in response.splitlines():
        match = re.match(r"\s*(\d+)\s*[:.]\s*(SAME|DIFFERENT)\b", line.strip(), re.IGNORECASE)
        if match:
            index = int(match.group(1)) - 1
            if 0 <= index < len(pairs):
                verdicts[index] = match.group(2).upper() == "SAME"
    return verdicts


def fuse_scene_knowledge(
    vis: tuple[list[Entity], list[Relation]],
    asr: tuple[list[Entity], list[Relation]],
    llm: Provider | None = None,
    *,
    scene_id: str | None = None,
) -> SceneKnowledge:
    """Merge visual and transcript knowledge into one per-scene set.

    Exact and punctuation-insensitive name matches merge mechanically; the
    remaining cross-modality pairs go to the model in one batch, and pairs
    judged identical merge under the transcript-side surface form (spoken
    names tend to be the fuller reference). Model failure falls back to
    mechanical-only fusion with the degraded flag set.
    """
    vis_entities, vis_relations = vis
    asr_entities, asr_relations = asr
    if scene_id is None:
        for entity in list(asr_entities) + list(vis_entities):
            for sid in entity.source_scene_ids:
                scene_id = sid
                break
            if scene_id:
                break
        scene_id = scene_id or ""

    merged: dict[str, Entity] = {}
    canonical: dict[str, str] = {}
    for entity in asr_entities:
        if entity.name in merged:
            merged[entity.name] = _merge_entity(merged[entity.name], entity)
        else:
            merged[entity.name] = entity
        canonical[entity.name] = entity.name

    pending: list[Entity] = []
    loose_index = {_loose_key(name): name for name in merged}
    for entity in vis_entities:
        if entity.name in merged:
            merged[entity.name] = _merge_entity(merged[entity.name], entity)
            canonical[entity.name] = entity.name
        elif _loose_key(entity.name) in loose_index:
            target = loose_index[_loose_key(entity.name)]
            merged[target] = _merge_entity(merged[target], entity)
            canonical[entity.name] = target
        else:
            pending.append(entity)

    degraded = False
    asr_only = [merged[name] for name in merged]
    if pending and asr_only and llm is not None:
        pairs = [(v, a) for v in pending for a in asr_only]
        try:
            verdicts = _judge_same_entities(pairs, llm)
        except (TransportError, ProtocolError) as exc:
            logger.warning("entity fusion judgment failed, mechanical-only: %s", exc)
            degraded = True
            verdicts = [False] * len(pairs)
        resolved: set[str] = set()
        for (vis_entity, asr_entity), same in zip(pairs, verdicts):
            if same and vis_entity.name not in resolved:
                merged[asr_entity.name] = _merge_entity(merged[asr_entity.name], vis_entity)
                canonical[vis_entity.name] = asr_entity.name
                resolved.add(vis_entity.name)
        pending = [e for e in pending if e.name not in resolved]
    elif pending and llm is None:
        degraded = True

    for entity in pending:
        if entity.name in merged:
            merged[entity.name] = _merge_entity(merged[entity.name], entity)
        else:
            merged[entity.name] = entity
        canonical[entity.name] = entity.name

    relations: dict[tuple[str, str], Relation] = {}
    for rel in list(asr_relations) + list(vis_relations):
        src = canonical.get(rel.src_name, rel.src_name)
        dst = canonical.get(rel.dst_name, rel.dst_name)
        if src == dst:
            logger.warning("dropping self-relation %s after fusion", src)
            continue
        if src not in merged or dst not in merged:
            # Extraction guarantees endpoints exist; a miss here means the
            # caller passed relations detached from any entity list. There is
            # no modality evidence to attach, so drop rather than fabricate.
            logger.warning("dropping relation %s--%s with unknown endpoint", src, dst)
            continue
        repointed = Relation(
            src_name=src,
            dst_name=dst,
            descriptions=rel.descriptions,
            keywords=rel.keywords,
            source_scene_ids=rel.source_scene_ids,
        )
        existing = relations.get(repointed.key)
        if existing is None:
            relations[repointed.key] = repointed
        else:
            relations[repointed.key] = Relation(
                src_name=existing.src_name,
                dst_name=existing.dst_name,
                descriptions=existing.descriptions
                + tuple(d for d in repointed.descriptions if d not in existing.descriptions),
                keywords=existing.keywords
                + tuple(k for k in repointed.keywords if k not in existing.keywords),
                source_scene_ids=existing.source_scene_ids | repointed.source_scene_ids,
            )

    return SceneKnowledge(
        scene_id=scene_id,
        entities=list(merged.values()),
        relations=list(relations.values()),
        degraded=degraded,
    )


class KnowledgeGraph:
    """The corpus-wide entity/relation graph, grown scene by scene."""

    def __init__(self) -> None:
        self.nodes: dict[str, Entity] = {}
        self.edges: dict[tuple[str, str], Relation] = {}

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def check_integrity(self) -> None:
        for key, rel in self.edges.items():
            if rel.src_name not in self.nodes or rel.dst_name not in self.nodes:
                raise InvalidInputError(f"edge {key} has a missing endpoint")

    def source_scene_ids(self) -> set[str]:
        ids: set[str] = set()
        for node in self.nodes.values():
            ids |= node.source_scene_ids
        return ids

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "name": e.name,
                    "entity_type": e.entity_type,
                    "descriptions": list(e.descriptions),
                    "source_scene_ids": sorted(e.source_scene_ids),
                    "source_modality": sorted(e.source_modality),
                }
                for e in sorted(self.nodes.values(), key=lambda e: e.name)
            ],
            "edges": [
                {
                    "src_name": r.src_name,
                    "dst_name": r.dst_name,
                    "descriptions": list(r.descriptions),
                    "keywords": list(r.keywords),
                    "source_scene_ids": sorted(r.source_scene_ids),
                }
                for r in sorted(self.edges.values(), key=lambda r: r.key)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeGraph":
        graph = cls()
        for row in data.get("nodes", []):
            entity = Entity(
                name=row["name"],
                entity_type=row.get("entity_type", ""),
                descriptions=tuple(row.get("descriptions", [])),
                source_scene_ids=frozenset(row.get("source_scene_ids", [])),
                source_modality=frozenset(row.get("source_modality", [])),
            )
            graph.nodes[entity.name] = entity
        for row in data.get("edges", []):
            rel = Relation(
                src_name=row["src_name"],
                dst_name=row["dst_name"],
                descriptions=tuple(row.get("descriptions", [])),
                keywords=tuple(row.get("keywords", [])),
                source_scene_ids=frozenset(row.get("source_scene_ids", [])),
            )
            graph.edges[rel.key] = rel
        graph.check_integrity()
        return graph

    def to_edge_list(self) -> str:
        """Plain text export: one ``src<TAB>dst<TAB>description`` line per edge."""
        lines = [
            f"{r.src_name}\t{r.dst_name}\t{r.description}"
            for r in sorted(self.edges.values(), key=lambda r: r.key)
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def merge_into_graph(g: KnowledgeGraph, sk: SceneKnowledge) -> KnowledgeGraph:
    """Upsert one scene's knowledge into the graph; idempotent per scene."""
    for entity in sk.entities:
        existing = g.nodes.get(entity.name)
        g.nodes[entity.name] = entity if existing is None else _merge_entity(existing, entity)
    for rel in sk.relations:
        existing = g.edges.get(rel.key)
        if existing is None:
            g.edges[rel.key] = rel
        else:
            g.edges[rel.key] = Relation(
                src_name=existing.src_name,
                dst_name=existing.dst_name,
                descriptions=existing.descriptions
                + tuple(d for d in rel.descriptions if d not in existing.descriptions),
                keywords=existing.keywords
                + tuple(k for k in rel.keywords if k not in existing.keywords),
                source_scene_ids=existing.source_scene_ids | rel.source_scene_ids,
            )
    g.check_integrity()
    return g


def caption_scene(
    s: Scene,
    plan: FramePlan,
    vlm: Provider,
    *,
    media_locator: str = "",
    frames_b64: Sequence[str] | None = None,
    keywords: Sequence[str] | None = None,
) -> str:
    """Ask the vision-language provider for a scene description.

    Silent scenes are captioned too; visually rich transitions often carry
    no speech. Responses are cached by the provider layer, keyed on the
    full request (scene transcript, frame plan, model).
    """
    body: dict = {"transcript": s.transcript_text}
    if frames_b64:
        body["frames_b64"] = list(frames_b64)
    if media_locator:
        body["media"] = {"locator": media_locator}
        body["frame_timestamps_s"] = list(plan.timestamps_s)
    if not frames_b64 and not media_locator:
        # Degenerate offline setup: past the provider boundary there is
        # nothing to show, but scripted providers still answer.
        body["frame_timestamps_s"] = list(plan.timestamps_s)
        body["media"] = {"locator": f"scene:{plan.scene_id}"}
    if keywords:
        body["keywords"] = [k for k in keywords]
    return vlm.caption(**body)


def synthesize_entity_description(e: Entity, llm: Provider) -> str:
    """Condense an entity's accumulated fragments into one description.

    Requires at least two fragments; on model failure the concatenation is
    kept. On success the fragments are replaced by the condensed text.
    """
    if len(e.descriptions) < 2:
        return e.description
    fragments = "\n".join(f"- {d}" for d in e.descriptions)
    prompt = prompts.CONDENSE_DESCRIPTION_TEMPLATE.replace("{name}", e.name).replace(
        "{fragments}", fragments
    )
    try:
        condensed = llm.chat([{"role": "user", "content": prompt}]).strip()
    except (TransportError, ProtocolError) as exc:
        logger.warning("description synthesis failed for %s: %s", e.name, exc)
        return e.description
    if not condensed:
        return e.description
    e.descriptions = (condensed,)
    return condensed


def condense_graph_descriptions(
    g: KnowledgeGraph, llm: Provider, threshold: int = 4
) -> int:
    """Condense every entity whose fragment count exceeds ``threshold``."""
    condensed = 0
    for entity in g.nodes.values():
        if len(entity.descriptions) > threshold:
            synthesize_entity_description(entity, llm)
            condensed += 1
    return condensed
