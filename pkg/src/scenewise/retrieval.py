"""Query answering: keyword extraction, budgeted selection, context, answer.

Scene selection is a greedy pass over scenes in descending similarity order
that admits every scene fitting the remaining token budget. Scenes are never
truncated to fit: a partial scene would defeat the point of scene-coherent
retrieval. The exhaustive knapsack solver lives in the test suite as an
oracle, not here.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import prompts
from .errors import DataIntegrityError, InvalidInputError, ProtocolError, TransportError
from .grounding import Entity, FramePlan, KnowledgeGraph, Relation
from .providers import Provider
from .refine import Scene

logger = logging.getLogger(__name__)

NO_SCENES_SENTINEL = "No relevant scenes were retrieved for this query."

_STOPWORDS = frozenset(
    """a an the and or but if then else of in on at to for with by from as is are was
    were be been being am do does did have has had how what when where why who whom
    which this that these those it its i you he she we they them his her their our
    your my me us not no nor so than too very can could will would shall should may
    might must about into over under again once only also just there here""".split()
)


@dataclass(frozen=True)
class Query:
    """A user query with extracted keywords and its token budget."""

    text: str
    keywords: tuple[str, ...] = ()
    budget_tokens: int = 2400

    def __post_init__(self) -> None:
        if self.budget_tokens <= 0:
            raise InvalidInputError("query budget must be positive")
        if any(k != k.lower() for k in self.keywords):
            raise InvalidInputError("keywords must be lowercase-normalized")


def extract_query_keywords(q: str, llm: Provider | None) -> list[str]:
    """Salient keywords for a query, lowercased and deduplicated.

    Falls back to stopword-filtered query tokens when the model is
    unavailable or answers unusably, so this never fails.
    """
    if not q.strip():
        raise InvalidInputError("query text is empty")
    keywords: list[str] = []
    if llm is not None:
        try:
            response = llm.chat(
                [{"role": "user", "content": prompts.KEYWORD_TEMPLATE.replace("{query}", q)}]
            )
            keywords = [k.strip().lower() for k in re.split(r"[,\n]", response) if k.strip()]
        except (TransportError, ProtocolError) as exc:
            logger.warning("keyword extraction failed, using fallback: %s", exc)
    if not keywords:
        tokens = re.findall(r"\w+", q.lower())
        keywords = [t for t in tokens if t not in _STOPWORDS]
    seen: set[str] = set()
    unique = []
    for k in keywords:
        if k not in seen:
            seen.add(k)
            unique.append(k)
    return unique


@dataclass(frozen=True)
class RetrievalSelection:
    """The budget-feasible scene subset chosen for one query."""

    scene_ids: tuple[str, ...]  # in video order
    scores: Mapping[str, float]
    total_tokens: int


def select_scenes(
    scores: Mapping[str, float],
    lengths: Mapping[str, int],
    budget: int,
    *,
    starts: Mapping[str, float] | None = None,
) -> RetrievalSelection:
    """Greedy budgeted selection by descending similarity.

    Scenes are visited by descending score (ties go to the earlier start
    time, then the smaller id) and taken whenever their length fits the
    remaining budget; scanning continues to the end of the list. A scene
    longer than the whole budget is simply skipped, never truncated.
    """
    if budget <= 0:
        raise InvalidInputError("budget must be positive")
    if set(scores) != set(lengths):
        raise InvalidInputError("score and length maps must share keys")
    start_of = dict(starts) if starts is not None else {}

    def visit_key(scene_id: str) -> tuple:
        return (-scores[scene_id], start_of.get(scene_id, float("inf")), scene_id)

    remaining = budget
    chosen: list[str] = []
    for scene_id in sorted(scores, key=visit_key):
        if lengths[scene_id] <= remaining:
            chosen.append(scene_id)
            remaining -= lengths[scene_id]
    chosen.sort(key=lambda sid: (start_of.get(sid, float("inf")), sid))
    return RetrievalSelection(
        scene_ids=tuple(chosen),
        scores={sid: scores[sid] for sid in chosen},
        total_tokens=sum(lengths[sid] for sid in chosen),
    )


def focused_caption(
    s: Scene,
    keywords: Sequence[str],
    plan: FramePlan,
    vlm: Provider | None,
    *,
    generic_caption: str,
    media_locator: str = "",
    frames_b64: Sequence[str] | None = None,
) -> tuple[str, bool]:
    """Query-focused recaption of a selected scene.

    Returns ``(caption, degraded)``; on any provider failure the stored
    generic caption is used and the degraded flag is set. Responses are
    cached by the provider layer, keyed on scene, keyword set, and model.
    """
    if vlm is None:
        return generic_caption, True
    from .grounding import caption_scene  # local import to avoid cycle at module load

    try:
        caption = caption_scene(
            s,
            plan,
            vlm,
            media_locator=media_locator,
            frames_b64=frames_b64,
            keywords=sorted(set(k.lower() for k in keywords)),
        )
        return caption, False
    except (TransportError, ProtocolError) as exc:
        logger.warning("focused caption failed for %s, using generic: %s", s.id, exc)
        return generic_caption, True


@dataclass(frozen=True)
class ContextSection:
    scene_id: str
    focused_caption: str
    transcript: str
    entities: tuple[Entity, ...]
    relations: tuple[Relation, ...]


@dataclass(frozen=True)
class AssembledContext:
    sections: tuple[ContextSection, ...]
    rendered: str


def _relations_for_selection(
    g: KnowledgeGraph, selected: set[str], hop_depth: int
) -> list[Relation]:
    """Relations reachable from selected-scene entities within ``hop_depth``.

    Depth 0 keeps only relations whose both endpoints are sourced from
    selected scenes; each extra hop follows relations out of the current
    entity frontier.
    """
    sourced = {
        name
        for name, entity in g.nodes.items()
        if entity.source_scene_ids & selected
    }
    chosen: dict[tuple[str, str], Relation] = {}
    for rel in g.edges.values():
        if rel.src_name in sourced and rel.dst_name in sourced:
            chosen[rel.key] = rel
    frontier = set(sourced)
    for _ in range(hop_depth):
        reached: set[str] = set()
        for rel in g.edges.values():
            if rel.src_name in frontier or rel.dst_name in frontier:
                chosen.setdefault(rel.key, rel)
                reached.update((rel.src_name, rel.dst_name))
        frontier |= reached
    return list(chosen.values())


def assemble_context(
    sel: RetrievalSelection,
    g: KnowledgeGraph,
    scenes: Mapping[str, Scene],
    captions: Mapping[str, str],
    *,
    hop_depth: int = 1,
) -> AssembledContext:
    """Compose the answer context from the selected scenes and the graph.

    Sections follow video order. Entities appear in every owning section;
    each relation is attached once, to the earliest section that sources one
    of its endpoints.
    """
    missing = [sid for sid in sel.scene_ids if sid not in scenes]
    if missing:
        raise DataIntegrityError(f"selected scenes missing from stores: {missing}")

    ordered = sorted(sel.scene_ids, key=lambda sid: (scenes[sid].start_s, sid))
    selected = set(ordered)
    section_rank = {sid: i for i, sid in enumerate(ordered)}

    per_section_entities: dict[str, list[Entity]] = {sid: [] for sid in ordered}
    for entity in sorted(g.nodes.values(), key=lambda e: e.name):
        for sid in ordered:
            if sid in entity.source_scene_ids:
                per_section_entities[sid].append(entity)

    per_section_relations: dict[str, list[Relation]] = {sid: [] for sid in ordered}
    for rel in sorted(_relations_for_selection(g, selected, hop_depth), key=lambda r: r.key):
        owner_candidates = set()
        for endpoint in (rel.src_name, rel.dst_name):
            entity = g.nodes.get(endpoint)
            if entity is not None:
                owner_candidates |= entity.source_scene_ids & selected
        if not owner_candidates:
            owner_candidates = selected
        owner = min(owner_candidates, key=lambda sid: section_rank[sid])
        per_section_relations[owner].append(rel)

    sections = tuple(
        ContextSection(
            scene_id=sid,
            focused_caption=captions.get(sid, ""),
            transcript=scenes[sid].transcript_text,
            entities=tuple(per_section_entities[sid]),
            relations=tuple(per_section_relations[sid]),
        )
        for sid in ordered
    )
    return AssembledContext(sections=sections, rendered=_render(sections, scenes))


def _render(sections: tuple[ContextSection, ...], scenes: Mapping[str, Scene]) -> str:
    if not sections:
        return NO_SCENES_SENTINEL
    parts: list[str] = []
    for section in sections:
        scene = scenes[section.scene_id]
        lines = [
            f"=== Scene {section.scene_id} "
            f"[{scene.start_s:.2f} -> {scene.end_s:.2f}] ({scene.kind}) ===",
            "Caption:",
            section.focused_caption or "(none)",
            "Transcript:",
            section.transcript,
            "Entities:",
        ]
        if section.entities:
            lines += [
                f"- {e.name}"
                + (f" ({e.entity_type})" if e.entity_type else "")
                + (f": {e.description}" if e.description else "")
                for e in section.entities
            ]
        else:
            lines.append("(none)")
        lines.append("Relations:")
        if section.relations:
            lines += [
                f"- {r.src_name} -- {r.dst_name}"
                + (f": {r.description}" if r.description else "")
                for r in section.relations
            ]
        else:
            lines.append("(none)")
        parts.append("\n".join(lines))
    return "\n\n".join(parts)


def generate_answer(q: Query, ctx: AssembledContext, llm: Provider) -> str:
    """Single synthesis call over the assembled context."""
    prompt = prompts.ANSWER_TEMPLATE.replace("{query}", q.text).replace(
        "{context}", ctx.rendered
    )
    return llm.chat([{"role": "user", "content": prompt}])


@dataclass(frozen=True)
class QueryResult:
    """The externally visible result of one query run."""

    query: str
    answer: str
    selection: tuple[dict, ...]  # scene_id, start_s, end_s, score, tokens
    context_tokens: int
    degraded_flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "answer": self.answer,
            "selection": [dict(entry) for entry in self.selection],
            "context_tokens": self.context_tokens,
            "degraded_flags": list(self.degraded_flags),
        }
