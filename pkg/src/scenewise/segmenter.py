"""LLM scene segmentation loop: prompt, parse, validate, repair, fall back.

One chunk is segmented by prompting a chat model with its time-marked
transcript. Responses are parsed and checked against hard constraints;
each violation selects a fault-specific correction prompt that is appended
to the conversation. After two consecutive faults the loop escalates to
the stronger model tier, and after four retries it gives up and returns a
uniform fallback partition of the chunk.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

from . import prompts
from .config import EngineConfig
from .errors import EngineError, InvalidInputError
from .ingest import ChunkRange, Transcript, format_seconds
from .providers import Provider
from .tokens import token_length

logger = logging.getLogger(__name__)


class FaultKind(str, Enum):
    TOO_FEW_SEGMENTS = "TooFewSegments"
    SCENE_TOO_SHORT = "SceneTooShort"
    SCENE_TOO_LONG = "SceneTooLong"
    GAP_OR_OVERLAP = "GapOrOverlap"
    OUT_OF_BOUNDS = "OutOfBounds"
    UNPARSEABLE = "Unparseable"


@dataclass(frozen=True)
class SegmentationFault:
    """Why a model response was rejected; ``kind`` picks the repair prompt."""

    kind: FaultKind
    detail: str = ""


class SegmentationFaultError(EngineError):
    """Raised by the parser when a response cannot yield scenes at all."""

    def __init__(self, fault: SegmentationFault):
        super().__init__(f"{fault.kind.value}: {fault.detail}")
        self.fault = fault


@dataclass(frozen=True)
class RawScene:
    """A candidate scene as emitted by the model, before refinement."""

    start_s: float
    end_s: float
    text: str


@dataclass(frozen=True)
class SegmentationPrompt:
    text: str
    record_delimiter: str
    completion_delimiter: str


@dataclass
class RetryState:
    """Bookkeeping for one segmentation loop invocation."""

    attempt: int = 0
    model_tier: str = "base"
    history: list[tuple[str, str]] = field(default_factory=list)


def build_segmentation_prompt(
    t: Transcript, delimiters: tuple[str, str] = ("<|REC|>", "<|DONE|>")
) -> SegmentationPrompt:
    """Render the scene-splitting prompt for one chunk's transcript slice.

    Each utterance is embedded with its ``[start -> end]`` time mark. The
    delimiters must not collide with the transcript text, otherwise the
    parser could not split the response reliably.
    """
    record, completion = delimiters
    if not record or not completion or record == completion:
        raise InvalidInputError("delimiters must be non-empty and distinct")
    if not t.utterances:
        raise InvalidInputError("cannot build a segmentation prompt from an empty slice")
    for u in t.utterances:
        if record in u.text or completion in u.text:
            raise InvalidInputError(
                f"delimiter collides with transcript text near {u.start_s}"
            )
    input_text = "\n".join(
        f"[{format_seconds(u.start_s)} -> {format_seconds(u.end_s)}] {u.text}"
        for u in t.utterances
    )
    text = (
        prompts.SCENE_SPLIT_TEMPLATE.replace("{record_delimiter}", record)
        .replace("{completion_delimiter}", completion)
        .replace("{input_text}", input_text)
    )
    return SegmentationPrompt(text, record, completion)


_TIME_MARK_RE = re.compile(
    r"^\s*\[\s*(?P<start>[0-9][0-9:.]*)\s*->\s*(?P<end>[0-9][0-9:.]*)\s*\]\s*"
)


def parse_timestamp(text: str) -> float | None:
    """Parse ``h:mm:ss``, ``mm:ss``, or plain seconds into seconds."""
    parts = text.strip().split(":")
    if not 1 <= len(parts) <= 3 or any(not p for p in parts):
        return None
    try:
        values = [float(p) for p in parts]
    except ValueError:
        return None
    seconds = 0.0
    for value in values:
        seconds = seconds * 60.0 + value
    return seconds


def parse_segmentation_response(
    response: str, delimiters: tuple[str, str]
) -> list[RawScene]:
    """Split a model response into raw scenes.

    Raises ``SegmentationFaultError`` with an ``Unparseable`` fault when any
    non-blank block lacks a leading time range, or when nothing remains.
    """
    record, completion = delimiters
    body = response.split(completion, 1)[0]
    scenes: list[RawScene] = []
    for block in body.split(record):
        block = block.strip()
        if not block:
            continue
        match = _TIME_MARK_RE.match(block)
        if match is None:
            raise SegmentationFaultError(
                SegmentationFault(FaultKind.UNPARSEABLE, f"no time mark in: {block[:80]!r}")
            )
        start = parse_timestamp(match.group("start"))
        end = parse_timestamp(match.group("end"))
        if start is None or end is None:
            raise SegmentationFaultError(
                SegmentationFault(FaultKind.UNPARSEABLE, f"bad timestamp in: {block[:80]!r}")
            )
        scenes.append(RawScene(start, end, block[match.end():].strip()))
    if not scenes:
        raise SegmentationFaultError(
            SegmentationFault(FaultKind.UNPARSEABLE, "response contains no scenes")
        )
    return scenes


def render_scenes(scenes: Sequence[RawScene], delimiters: tuple[str, str]) -> str:
    """Render scenes in the response format (the parser's inverse)."""
    record, completion = delimiters
    blocks = [
        f"[{format_seconds(s.start_s)} -> {format_seconds(s.end_s)}] {s.text}"
        for s in scenes
    ]
    return record.join(blocks) + completion


def check_time_ranges(
    scenes: Sequence[RawScene], chunk_dur_s: float, cfg: EngineConfig
) -> SegmentationFault | None:
    """Validate scenes against the segmentation constraints, in rule order.

    Rules, first violation wins: (1) at least ``min_segments`` scenes when
    the chunk is long enough for that to be satisfiable, (2) every range
    within ``[0, chunk_dur_s]``, (3) monotonic and non-overlapping, (4)
    every duration within the configured bounds. Interior gaps are legal:
    speech-free stretches are absent from transcripts, and the refinement
    stage resolves them.
    """
    if chunk_dur_s >= cfg.min_segments_chunk_dur_s and len(scenes) < cfg.min_segments:
        return SegmentationFault(
            FaultKind.TOO_FEW_SEGMENTS,
            f"{len(scenes)} scene(s), need at least {cfg.min_segments}",
        )
    for s in scenes:
        if s.start_s < 0 or s.end_s > chunk_dur_s:
            return SegmentationFault(
                FaultKind.OUT_OF_BOUNDS,
                f"[{s.start_s}, {s.end_s}] outside [0, {chunk_dur_s}]",
            )
    previous: RawScene | None = None
    for s in scenes:
        if s.end_s <= s.start_s:
            return SegmentationFault(
                FaultKind.GAP_OR_OVERLAP, f"empty or reversed range [{s.start_s}, {s.end_s}]"
            )
        if previous is not None and s.start_s < previous.end_s:
            return SegmentationFault(
                FaultKind.GAP_OR_OVERLAP,
                f"scene at {s.start_s} overlaps previous ending {previous.end_s}",
            )
        previous = s
    for s in scenes:
        duration = s.end_s - s.start_s
        if duration < cfg.min_scene_dur_s:
            return SegmentationFault(
                FaultKind.SCENE_TOO_SHORT,
                f"scene [{s.start_s}, {s.end_s}] lasts {duration:.2f}s",
            )
        if duration > cfg.max_scene_dur_s:
            return SegmentationFault(
                FaultKind.SCENE_TOO_LONG,
                f"scene [{s.start_s}, {s.end_s}] lasts {duration:.2f}s",
            )
    return None


def choose_fix_prompt(fault: SegmentationFault, base_prompt: str = "") -> str:
    """Pick the correction prompt for a fault kind.

    Gap/overlap and out-of-bounds faults reuse the too-short correction,
    whose checklist already demands a logical time sequence without gaps
    or overlaps. An unparseable response re-issues the base prompt with a
    format reminder.
    """
    if fault.kind is FaultKind.TOO_FEW_SEGMENTS:
        return prompts.REPAIR_TOO_FEW
    if fault.kind is FaultKind.SCENE_TOO_LONG:
        return prompts.REPAIR_TOO_LONG
    if fault.kind in (
        FaultKind.SCENE_TOO_SHORT,
        FaultKind.GAP_OR_OVERLAP,
        FaultKind.OUT_OF_BOUNDS,
    ):
        return prompts.REPAIR_TOO_SHORT
    return (base_prompt + "\n\n" + prompts.FORMAT_REMINDER).strip()


def default_partition(
    t: Transcript, r: ChunkRange, cfg: EngineConfig
) -> list[RawScene]:
    """Uniform fallback partition of the chunk, used when the loop gives up.

    Interval length is the maximum scene duration; a final remainder shorter
    than the minimum scene duration is absorbed by the previous interval.
    Scene text is sliced from the transcript.
    """
    step = cfg.fallback_scene_dur_s
    bounds = [r.start_s]
    while r.end_s - bounds[-1] > step:
        bounds.append(bounds[-1] + step)
    bounds.append(r.end_s)
    if len(bounds) >= 3 and bounds[-1] - bounds[-2] < cfg.min_scene_dur_s:
        del bounds[-2]
    scenes = []
    for start, end in zip(bounds, bounds[1:]):
        texts = [
            u.text for u in t.utterances if u.start_s < end and u.end_s > start
        ]
        scenes.append(RawScene(start, end, " ".join(texts)))
    return scenes


def _truncate_history(
    messages: list[dict[str, str]], max_prompt_tokens: int
) -> list[dict[str, str]]:
    """Drop oldest repair rounds until the conversation fits the context."""
    trimmed = list(messages)
    while (
        sum(token_length(m["content"]) for m in trimmed) > max_prompt_tokens
        and len(trimmed) > 3
    ):
        # messages[0] is the base prompt; each round appends (assistant, user).
        del trimmed[1:3]
    return trimmed


def segment_chunk(
    t: Transcript,
    r: ChunkRange,
    llm: Provider,
    cfg: EngineConfig,
    *,
    escalated_llm: Provider | None = None,
) -> list[RawScene]:
    """Segment one chunk, returning raw scenes with absolute timestamps.

    Issues at most ``1 + cfg.max_retries`` model calls. On exhaustion the
    uniform fallback partition is returned. An empty transcript slice skips
    the model entirely: the chunk is all silence and refinement will cover
    it.
    """
    if not t.utterances:
        return []
    prompt = build_segmentation_prompt(
        t, (cfg.record_delimiter, cfg.completion_delimiter)
    )
    delimiters = (prompt.record_delimiter, prompt.completion_delimiter)
    messages: list[dict[str, str]] = [{"role": "user", "content": prompt.text}]
    state = RetryState()
    provider = llm
    consecutive_faults = 0

    for attempt in range(cfg.max_retries + 1):
        state.attempt = attempt
        sent = _truncate_history(messages, cfg.max_prompt_tokens)
        content = provider.chat(
            sent, temperature=cfg.temperature, top_p=cfg.top_p
        )
        state.history.append((sent[-1]["content"], content))

        fault: SegmentationFault | None
        scenes: list[RawScene] = []
        try:
            parsed = parse_segmentation_response(content, delimiters)
        except SegmentationFaultError as exc:
            fault = exc.fault
        else:
            # The prompt carries absolute time marks, so responses come back
            # absolute; the validator works in chunk-relative coordinates.
            scenes = [
                replace(s, start_s=s.start_s - r.start_s, end_s=s.end_s - r.start_s)
                for s in parsed
            ]
            fault = check_time_ranges(scenes, r.duration_s, cfg)

        if fault is None:
            return [
                replace(s, start_s=s.start_s + r.start_s, end_s=s.end_s + r.start_s)
                for s in scenes
            ]

        consecutive_faults += 1
        logger.info(
            "chunk %d attempt %d rejected: %s (%s)",
            r.index,
            attempt,
            fault.kind.value,
            fault.detail,
        )
        if (
            consecutive_faults >= cfg.escalate_after_faults
            and state.model_tier == "base"
            and escalated_llm is not None
        ):
            provider = escalated_llm
            state.model_tier = "escalated"
            logger.info("chunk %d escalating to stronger model", r.index)
        messages.append({"role": "assistant", "content": content})
        messages.append({"role": "user", "content": choose_fix_prompt(fault, prompt.text)})

    logger.warning(
        "chunk %d segmentation exhausted %d retries, using default partition",
        r.index,
        cfg.max_retries,
    )
    return default_partition(t, r, cfg)
