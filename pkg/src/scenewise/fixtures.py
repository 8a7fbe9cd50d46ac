"""Bundled offline corpus and rule-based scripted providers.

This module lets the whole pipeline run deterministically with no network:
a five-scene lecture transcript about caching economics, plus provider rules
that answer segmentation, extraction, captioning, embedding, judging, and
answer-synthesis requests by inspecting the request content. Tests use it as
their end-to-end corpus; operators can point provider endpoints at
``fixture://chat`` (and friends) to exercise the CLI offline.
"""

from __future__ import annotations

import re
from typing import Mapping

from . import prompts
from .config import EngineConfig, ProviderConfig
from .errors import InvalidInputError
from .ingest import TimedUtterance, Transcript, format_seconds
from .providers import ProviderRequest, ScriptedTransport, register_transport_scheme

CASE_STUDY_VIDEO_ID = "caching-lecture"
CASE_STUDY_DURATION_S = 300.0

# Five narrative units; the middle three run past sixty seconds, so the
# fixture config widens the validator's upper duration bound.
CASE_STUDY_BOUNDS: tuple[tuple[float, float], ...] = (
    (0.0, 23.96),
    (23.96, 66.08),
    (66.08, 134.22),
    (134.22, 213.12),
    (213.12, 300.0),
)

# One topic word per scene; embeddings and extraction key off these.
SCENE_MARKERS = ("introduction", "pricing", "applications", "workflows", "benchmarks")

CASE_STUDY_QUERY = (
    "How does response caching compare to a retrieval pipeline in cost and efficiency?"
)

# The query should pull in the pricing scene and the benchmarks scene only.
EXPECTED_SELECTION_INDICES = (1, 4)

_UTTERANCE_CUTS: tuple[tuple[float, ...], ...] = (
    (0.0, 6.0, 12.0, 18.0, 23.96),
    (23.96, 31.0, 38.0, 45.0, 52.0, 59.0, 66.08),
    (66.08, 76.0, 86.0, 96.0, 106.0, 116.0, 126.0, 134.22),
    (134.22, 144.0, 154.0, 164.0, 174.0, 184.0, 194.0, 204.0, 213.12),
    (213.12, 226.0, 238.0, 250.0, 262.0, 274.0, 287.0, 300.0),
)

# Words per utterance, tuned so that the pricing and benchmarks scenes fit
# the 2400-token budget together while every other scene overflows the
# remainder (the acceptance test re-checks the arithmetic).
_WORDS_PER_UTTERANCE = (170, 92, 100, 88, 80)

_WORD_BANK = (
    "cached context keeps repeated calls cheap while stored prefixes "
    "serve answers faster than refetching source passages every round "
    "token budgets bound what a model reads so careful reuse beats "
    "rebuilding context from scratch when sessions stay long"
).split()


def _utterance_text(scene_index: int, utterance_index: int, words: int) -> str:
    marker = SCENE_MARKERS[scene_index]
    tokens = [marker, "and", "caching", "considerations", "follow", "here:"]
    cursor = (scene_index * 37 + utterance_index * 11) % len(_WORD_BANK)
    while len(tokens) < words:
        tokens.append(_WORD_BANK[cursor])
        cursor = (cursor + 1) % len(_WORD_BANK)
    sentences = []
    for i in range(0, len(tokens), 9):
        sentences.append(" ".join(tokens[i : i + 9]) + ".")
    return " ".join(sentences)


def case_study_transcript() -> Transcript:
    utterances = []
    for scene_index, cuts in enumerate(_UTTERANCE_CUTS):
        for utterance_index, (start, end) in enumerate(zip(cuts, cuts[1:])):
            utterances.append(
                TimedUtterance(
                    start,
                    end,
                    _utterance_text(
                        scene_index, utterance_index, _WORDS_PER_UTTERANCE[scene_index]
                    ),
                )
            )
    return Transcript(CASE_STUDY_VIDEO_ID, CASE_STUDY_DURATION_S, tuple(utterances))


def case_study_config(**overrides) -> EngineConfig:
    """Engine config for the fixture corpus: small embeddings, wide scenes.

    The fixture's narrative units run up to 87 seconds, so the validator's
    upper duration bound is raised; the correction prompts keep their fixed
    wording, which is tuned for the default bounds.
    """
    settings = dict(
        embedding_dim=8,
        max_scene_dur_s=90.0,
        providers={
            "llm_base": ProviderConfig("fixture://chat", "base-model"),
            "llm_escalated": ProviderConfig("fixture://chat", "strong-model"),
            "vlm": ProviderConfig("fixture://caption", "caption-model"),
            "embed": ProviderConfig("fixture://embed", "embed-model"),
            "judge": ProviderConfig("fixture://judge", "judge-model"),
            "asr": ProviderConfig("fixture://asr", "asr-model"),
        },
    )
    settings.update(overrides)
    return EngineConfig(**settings)


def case_study_segmentation_response(
    delimiters: tuple[str, str] = ("<|REC|>", "<|DONE|>")
) -> str:
    record, completion = delimiters
    blocks = [
        f"[{format_seconds(a)} -> {format_seconds(b)}] {SCENE_MARKERS[i]} segment"
        for i, (a, b) in enumerate(CASE_STUDY_BOUNDS)
    ]
    return record.join(blocks) + completion


# ------------------------------------------------------------- chat rules

_ALLCAPS_TOKEN = re.compile(r"\b[A-Z]{3,}\d+[A-Z]\b")
_PAIR_LINE = re.compile(r"^\s*(\d+)\.", re.MULTILINE)
_PROMPT_MARK = re.compile(r"^\[(\d+(?:\.\d+)?) -> (\d+(?:\.\d+)?)\]", re.MULTILINE)


def _found_entities(text: str) -> list[str]:
    names = [m.upper() for m in SCENE_MARKERS if m in text.lower()]
    if "caching" in text.lower():
        names.append("CACHING")
    names.extend(_ALLCAPS_TOKEN.findall(text))
    unique = []
    for name in names:
        if name not in unique:
            unique.append(name)
    return unique


_TOPIC_STEM = re.compile(r"([A-Z]{3,}\d+)[A-Z]")


def _related(a: str, b: str) -> bool:
    """A pair is extractable only when the text states a real connection.

    Topic halves (FOO3A with FOO3B) belong to one statement that a segment
    must contain whole; everything also relates to the CACHING hub entity.
    Unrelated topics merely co-occurring in a window yield no relation,
    which is what makes mid-topic cuts lose graph edges.
    """
    if "CACHING" in (a, b):
        return a != b
    stem_a, stem_b = _TOPIC_STEM.fullmatch(a), _TOPIC_STEM.fullmatch(b)
    return bool(stem_a and stem_b and stem_a.group(1) == stem_b.group(1) and a != b)


def extraction_response(text: str) -> str:
    """Entities for every topic token; relations for genuinely linked pairs."""
    names = _found_entities(text)
    records = [
        f'("entity"<|>{name}<|>CONCEPT<|>{name.lower()} as covered in this passage)'
        for name in names
    ]
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            if _related(a, b):
                records.append(
                    f'("relationship"<|>{a}<|>{b}<|>stated together<|>shared topic)'
                )
    if not records:
        records.append('("entity"<|>GENERAL CONTENT<|>CONCEPT<|>unlabeled passage)')
    return "##".join(records) + "##<|COMPLETE|>"


def blocks_segmentation_response(prompt_text: str, block_s: float = 40.0) -> str:
    """Scene boundaries at topic-block multiples for whatever chunk is shown."""
    marks = [(float(a), float(b)) for a, b in _PROMPT_MARK.findall(prompt_text)]
    if not marks:
        return "no time marks found"
    start, end = marks[0][0], marks[-1][1]
    bounds = [start]
    next_block = (int(start // block_s) + 1) * block_s
    while next_block < end:
        if next_block - bounds[-1] >= 15.0 and end - next_block >= 15.0:
            bounds.append(next_block)
        next_block += block_s
    bounds.append(end)
    blocks = [
        f"[{format_seconds(a)} -> {format_seconds(b)}] block content"
        for a, b in zip(bounds, bounds[1:])
    ]
    return "<|REC|>".join(blocks) + "<|DONE|>"


def make_chat_rule(segmentation: str = "case_study"):
    """Build a rule answering every chat request the pipeline can issue.

    ``segmentation`` picks how segmentation prompts are answered:
    ``case_study`` returns the five fixture scenes, ``blocks`` derives
    topic-block boundaries from the prompt, ``garbage`` never parses (which
    drives the loop to its uniform fallback partition).
    """

    def rule(request: ProviderRequest) -> Mapping:
        last = request.body["messages"][-1]["content"]
        if (
            "segment the input text into distinct scenes" in last
            or "Output Error Correction Request" in last
        ):
            if segmentation == "garbage":
                return {"content": "no scenes to report<|DONE|>"}
            if segmentation == "blocks":
                return {"content": blocks_segmentation_response(last)}
            return {"content": case_study_segmentation_response()}
        if "identify all entities" in last:
            return {"content": extraction_response(last.rsplit("Text: ", 1)[-1])}
        if "refer to the same real-world entity" in last:
            pairs = _PAIR_LINE.findall(last)
            return {"content": "\n".join(f"{p}: DIFFERENT" for p in pairs)}
        if "Extract the salient keywords" in last:
            return {"content": "caching, cost, efficiency, retrieval"}
        if "comprehensive description of the entity" in last:
            return {"content": "a condensed description of the entity"}
        if "You are answering a question" in last:
            return {
                "content": (
                    "Response caching avoids re-reading stored context, so repeated "
                    "queries cost less and return faster; the retrieved pricing and "
                    "benchmarks scenes quantify the difference."
                )
            }
        raise InvalidInputError(f"fixture chat rule cannot answer: {last[:80]!r}")

    return rule


def judge_rule(request: ProviderRequest) -> Mapping:
    """Position-biased pairwise judge; Likert requests get straight fours."""
    last = request.body["messages"][-1]["content"]
    if "Rate the candidate" in last:
        return {
            "content": (
                '{"comprehensiveness": 4, "empowerment": 4, "trustworthiness": 4, '
                '"depth": 4, "density": 4, "overall": 4}'
            )
        }
    dims = (
        '{"winner": "1", "rationale": "prefers the first position"}'
    )
    body = ", ".join(
        f'"{name}": {dims}'
        for name in (
            "comprehensiveness",
            "empowerment",
            "trustworthiness",
            "depth",
            "density",
            "overall",
        )
    )
    return {"content": "{" + body + "}"}


# -------------------------------------------------- caption / embed / asr

def caption_rule(request: ProviderRequest) -> Mapping:
    text = str(request.body.get("transcript", ""))
    names = _found_entities(text)
    topic = names[0].lower() if names else "the scenery"
    focus = ""
    if request.body.get("keywords"):
        focus = "Focused on " + ", ".join(request.body["keywords"]) + ": "
    return {
        "content": (
            f"{focus}A lecture segment covering {topic} and caching trade-offs "
            f"on screen."
        )
    }


QUERY_VECTOR = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

_MARKER_VECTORS: dict[str, tuple[float, ...]] = {
    "pricing": (0.90, 0.10, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05),
    "benchmarks": (0.80, 0.20, 0.0, 0.0, 0.10, 0.0, 0.0, 0.0),
    "introduction": (0.05, 0.97, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0),
    "applications": (0.05, 0.0, 0.97, 0.0, 0.0, 0.0, 0.0, 0.0),
    "workflows": (0.05, 0.0, 0.0, 0.97, 0.0, 0.0, 0.0, 0.0),
}
_DEFAULT_VECTOR = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)


def embed_rule(request: ProviderRequest) -> Mapping:
    text = str(request.body["text"])
    if text == CASE_STUDY_QUERY:
        vector = QUERY_VECTOR
    else:
        vector = _DEFAULT_VECTOR
        for marker, candidate in _MARKER_VECTORS.items():
            if marker in text.lower():
                vector = candidate
                break
    return {"vector": list(vector), "dim": len(vector)}


def asr_rule(request: ProviderRequest) -> Mapping:
    """Ten-second utterances across the requested media window."""
    locator = str(request.body["media"].get("locator", ""))
    window = re.search(r"#t=([0-9.]+),([0-9.]+)", locator)
    start, end = (float(window.group(1)), float(window.group(2))) if window else (0.0, 30.0)
    utterances = []
    cursor = 0.0
    index = 0
    while start + cursor < end:
        piece_end = min(cursor + 10.0, end - start)
        utterances.append(
            {"start_s": cursor, "end_s": piece_end, "text": f"spoken piece {index}."}
        )
        cursor = piece_end
        index += 1
    return {"utterances": utterances}


# ------------------------------------------------------ scheme registration

_RULES = {
    "chat": make_chat_rule("case_study"),
    "judge": judge_rule,
    "caption": caption_rule,
    "embed": embed_rule,
    "asr": asr_rule,
}

_FIXTURE_TRANSPORTS: dict[str, ScriptedTransport] = {}


def fixture_transport(endpoint: str) -> ScriptedTransport:
    """Process-wide scripted transport per fixture endpoint (counts persist)."""
    name = endpoint.split("://", 1)[1] if "://" in endpoint else endpoint
    if name not in _RULES:
        raise InvalidInputError(f"unknown fixture endpoint {endpoint!r}")
    if name not in _FIXTURE_TRANSPORTS:
        _FIXTURE_TRANSPORTS[name] = ScriptedTransport(_RULES[name])
    return _FIXTURE_TRANSPORTS[name]


def reset_fixture_transports() -> None:
    _FIXTURE_TRANSPORTS.clear()


def set_chat_mode(mode: str) -> None:
    """Swap how fixture chat answers segmentation prompts; resets transports."""
    _RULES["chat"] = make_chat_rule(mode)
    reset_fixture_transports()


def fixture_call_total() -> int:
    return sum(t.calls for t in _FIXTURE_TRANSPORTS.values())


register_transport_scheme("fixture", fixture_transport)
