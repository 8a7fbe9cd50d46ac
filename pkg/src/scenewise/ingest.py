"""Transcript ingestion: chunk planning, slicing, and silence detection.

Timestamps are absolute seconds everywhere inside the engine; the only
chunk-relative moment is the ASR boundary, where ``transcribe`` returns
chunk-relative utterances and the caller shifts them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import InvalidInputError, ProtocolError
from .providers import Provider

logger = logging.getLogger(__name__)


def format_seconds(value: float) -> str:
    """Render seconds as a decimal with two fraction digits."""
    return f"{value:.2f}"


@dataclass(frozen=True)
class TimedUtterance:
    """One timestamped utterance; start < end and text non-blank."""

    start_s: float
    end_s: float
    text: str

    def __post_init__(self) -> None:
        if self.start_s < 0:
            raise InvalidInputError(f"utterance start {self.start_s} is negative")
        if not self.start_s < self.end_s:
            raise InvalidInputError(
                f"utterance range [{self.start_s}, {self.end_s}] is empty or reversed"
            )
        if not self.text.strip():
            raise InvalidInputError("utterance text is blank")


@dataclass(frozen=True)
class Transcript:
    """Ordered, non-overlapping utterances for one video."""

    video_id: str
    duration_s: float
    utterances: tuple[TimedUtterance, ...]

    def __post_init__(self) -> None:
        previous: TimedUtterance | None = None
        for utterance in self.utterances:
            if previous is not None and utterance.start_s < previous.end_s:
                raise InvalidInputError(
                    f"utterances overlap at {previous.end_s} > {utterance.start_s}"
                )
            if utterance.end_s > self.duration_s:
                raise InvalidInputError(
                    f"utterance end {utterance.end_s} exceeds duration {self.duration_s}"
                )
            previous = utterance


@dataclass(frozen=True)
class ChunkRange:
    """One temporal window handed to segmentation; 1-based index."""

    index: int
    start_s: float
    end_s: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class SilenceInterval:
    """A maximal speech-free interval within a chunk."""

    start_s: float
    end_s: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def make_chunk_ranges(
    duration_s: float, chunk_len_s: float = 300.0, overlap_s: float = 10.0
) -> list[ChunkRange]:
    """Cut ``[0, duration_s]`` into fixed-length chunks with a fixed overlap.

    Chunk k starts at (k-1) * (chunk_len_s - overlap_s). A final uncovered
    fragment shorter than ``overlap_s`` is absorbed by extending the previous
    chunk instead of emitting a chunk that adds almost no new material.
    """
    if duration_s <= 0:
        raise InvalidInputError(f"duration must be positive, got {duration_s}")
    if not 0 <= overlap_s < chunk_len_s:
        raise InvalidInputError(
            f"need 0 <= overlap ({overlap_s}) < chunk length ({chunk_len_s})"
        )
    spans: list[tuple[float, float]] = []
    start = 0.0
    while True:
        end = start + chunk_len_s
        if end >= duration_s:
            spans.append((start, duration_s))
            break
        spans.append((start, end))
        # Equivalent to start_k = (k-1)(len - overlap), but deriving each
        # start from the previous end keeps coverage exact in floats.
        start = end - overlap_s
    if len(spans) >= 2 and spans[-1][1] - spans[-2][1] < overlap_s:
        spans[-2] = (spans[-2][0], spans[-1][1])
        spans.pop()
    return [ChunkRange(i + 1, s, e) for i, (s, e) in enumerate(spans)]


def slice_transcript(t: Transcript, r: ChunkRange) -> Transcript:
    """Utterances of ``t`` intersecting ``r``, clipped to its bounds."""
    if r.start_s < 0 or r.end_s > t.duration_s:
        raise InvalidInputError(f"chunk {r} outside transcript [0, {t.duration_s}]")
    clipped = []
    for u in t.utterances:
        if u.start_s < r.end_s and u.end_s > r.start_s:
            clipped.append(
                replace(u, start_s=max(u.start_s, r.start_s), end_s=min(u.end_s, r.end_s))
            )
    return Transcript(t.video_id, t.duration_s, tuple(clipped))


def detect_silences(
    t: Transcript, r: ChunkRange, min_gap_s: float = 2.0
) -> list[SilenceInterval]:
    """Maximal speech-free gaps of at least ``min_gap_s`` inside ``r``.

    Leading and trailing gaps against the chunk bounds count. The input
    transcript must already be confined to ``r``.
    """
    silences: list[SilenceInterval] = []
    cursor = r.start_s
    for u in t.utterances:
        if u.start_s < r.start_s or u.end_s > r.end_s:
            raise InvalidInputError(f"utterance {u} outside chunk {r}")
        if u.start_s - cursor >= min_gap_s:
            silences.append(SilenceInterval(cursor, u.start_s))
        cursor = u.end_s
    if r.end_s - cursor >= min_gap_s:
        silences.append(SilenceInterval(cursor, r.end_s))
    return silences


def transcribe(
    chunk_media_ref: str,
    asr: Provider,
    *,
    video_id: str = "",
    duration_s: float | None = None,
) -> Transcript:
    """Run ASR on one chunk's media and return a chunk-relative transcript.

    Timestamps in the result are relative to the chunk start; the caller
    shifts them to absolute time. Overlapping utterances from the provider
    are rejected rather than repaired, because downstream interval math
    assumes a partition.
    """
    raw = asr.asr({"locator": chunk_media_ref})
    try:
        utterances = tuple(
            TimedUtterance(float(u["start_s"]), float(u["end_s"]), str(u["text"]))
            for u in raw
        )
    except (InvalidInputError, KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"ASR payload has malformed utterances: {exc}") from exc
    if duration_s is None:
        duration_s = utterances[-1].end_s if utterances else 0.0
    try:
        return Transcript(video_id, duration_s, utterances)
    except InvalidInputError as exc:
        raise ProtocolError(f"ASR utterances violate transcript invariants: {exc}") from exc


def shift_transcript(t: Transcript, offset_s: float, duration_s: float) -> Transcript:
    """Shift all timestamps by ``offset_s`` into a video of ``duration_s``."""
    moved = tuple(
        replace(u, start_s=u.start_s + offset_s, end_s=u.end_s + offset_s)
        for u in t.utterances
    )
    return Transcript(t.video_id, duration_s, moved)


def load_transcript_file(
    path: str | Path, *, video_id: str | None = None, duration_s: float | None = None
) -> Transcript:
    """Read a tab-separated ``start<TAB>end<TAB>text`` transcript file.

    Lines starting with ``#`` are ignored. When ``duration_s`` is omitted the
    last utterance end is used.
    """
    path = Path(path)
    utterances = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = line.split("\t", 2)
        if len(parts) != 3:
            raise InvalidInputError(f"{path}:{lineno}: expected 3 tab-separated fields")
        try:
            utterances.append(TimedUtterance(float(parts[0]), float(parts[1]), parts[2]))
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{lineno}: bad timestamp: {exc}") from exc
    if video_id is None:
        video_id = path.stem
    if duration_s is None:
        duration_s = utterances[-1].end_s if utterances else 0.0
    return Transcript(video_id, duration_s, tuple(utterances))


def dump_transcript_file(t: Transcript, path: str | Path) -> None:
    """Write a transcript in the tab-separated file format."""
    lines = [f"# video_id={t.video_id} duration_s={format_seconds(t.duration_s)}"]
    for u in t.utterances:
        lines.append(f"{format_seconds(u.start_s)}\t{format_seconds(u.end_s)}\t{u.text}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
