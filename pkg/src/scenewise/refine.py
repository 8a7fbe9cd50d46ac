"""Deterministic scene refinement: gap filling, merging, alignment, stitching.

Every operation preserves exact tiling: output intervals are sorted,
disjoint, and cover the same range as the input, with shared boundary
values assigned (never recomputed) so float equality holds end to end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import InvalidInputError
from .ingest import ChunkRange, Transcript
from .segmenter import RawScene

logger = logging.getLogger(__name__)

SPEECH = "speech"
SILENT = "silent"
SILENT_MARKER = "[SILENT]"

_SENTENCE_END = ".!?。！？"


@dataclass(frozen=True)
class Scene:
    """A refined narrative unit; silent scenes carry the literal marker."""

    id: str
    start_s: float
    end_s: float
    transcript_text: str
    kind: str = SPEECH

    def __post_init__(self) -> None:
        if not self.start_s < self.end_s:
            raise InvalidInputError(f"scene range [{self.start_s}, {self.end_s}] is empty")
        if self.kind not in (SPEECH, SILENT):
            raise InvalidInputError(f"unknown scene kind {self.kind!r}")
        if self.kind == SILENT and self.transcript_text != SILENT_MARKER:
            raise InvalidInputError("silent scenes must carry the [SILENT] marker text")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class SceneSet:
    """The final scene partition of one video: an exact tiling of [0, D]."""

    video_id: str
    duration_s: float
    scenes: tuple[Scene, ...]

    def __post_init__(self) -> None:
        if not self.scenes:
            raise InvalidInputError("a scene set needs at least one scene")
        if self.scenes[0].start_s != 0.0:
            raise InvalidInputError(f"first scene starts at {self.scenes[0].start_s}, not 0")
        if self.scenes[-1].end_s != self.duration_s:
            raise InvalidInputError(
                f"last scene ends at {self.scenes[-1].end_s}, not {self.duration_s}"
            )
        for left, right in zip(self.scenes, self.scenes[1:]):
            if left.end_s != right.start_s:
                raise InvalidInputError(
                    f"scenes do not tile: {left.end_s} != {right.start_s}"
                )
            if left.kind == SILENT and right.kind == SILENT:
                raise InvalidInputError("two consecutive silent scenes")

    def by_id(self) -> dict[str, Scene]:
        return {s.id: s for s in self.scenes}


def _silent(start_s: float, end_s: float) -> Scene:
    return Scene("", start_s, end_s, SILENT_MARKER, SILENT)


def _speech(start_s: float, end_s: float, text: str) -> Scene:
    return Scene("", start_s, end_s, text, SPEECH)


def fill_time_gaps(
    scenes: Sequence[RawScene], r: ChunkRange, epsilon_s: float = 10.0
) -> list[Scene]:
    """Resolve every uncovered interval of the chunk range.

    Interior gaps no longer than ``epsilon_s`` are split at their midpoint
    between the two neighbors; longer gaps are promoted to silent scenes.
    Gaps at the chunk edge have a single neighbor, which absorbs them when
    they are short enough; otherwise promotion applies there too.
    """
    ordered = list(scenes)
    previous: RawScene | None = None
    for s in ordered:
        if s.end_s <= s.start_s:
            raise InvalidInputError(f"scene range [{s.start_s}, {s.end_s}] is empty")
        if s.start_s < r.start_s or s.end_s > r.end_s:
            raise InvalidInputError(f"scene [{s.start_s}, {s.end_s}] outside chunk {r}")
        if previous is not None and s.start_s < previous.end_s:
            raise InvalidInputError(
                f"scenes overlap: {previous.end_s} > {s.start_s}"
            )
        previous = s

    if not ordered:
        return [_silent(r.start_s, r.end_s)]

    result: list[Scene] = []
    cursor = r.start_s
    for s in ordered:
        start = s.start_s
        gap = start - cursor
        if gap > 0:
            if gap > epsilon_s:
                result.append(_silent(cursor, start))
            elif not result:
                start = cursor  # leading edge gap: sole neighbor absorbs it
            else:
                midpoint = (cursor + start) / 2.0
                result[-1] = replace(result[-1], end_s=midpoint)
                start = midpoint
        result.append(_speech(start, s.end_s, s.text))
        cursor = s.end_s
    tail_gap = r.end_s - cursor
    if tail_gap > 0:
        if tail_gap > epsilon_s:
            result.append(_silent(cursor, r.end_s))
        else:
            result[-1] = replace(result[-1], end_s=r.end_s)
    return result


def _check_tiling(scenes: Sequence[Scene]) -> None:
    for left, right in zip(scenes, scenes[1:]):
        if left.end_s != right.start_s:
            raise InvalidInputError(f"input does not tile: {left.end_s} != {right.start_s}")


def _gap_before(t: Transcript | None, boundary: float) -> float:
    """Distance from ``boundary`` back to the nearest speech on its left."""
    if t is None:
        return float("inf")
    best = float("inf")
    for u in t.utterances:
        if u.end_s <= boundary:
            best = min(best, boundary - u.end_s)
        elif u.start_s < boundary:
            return 0.0
    return best


def _gap_after(t: Transcript | None, boundary: float) -> float:
    """Distance from ``boundary`` forward to the nearest speech on its right."""
    if t is None:
        return float("inf")
    best = float("inf")
    for u in t.utterances:
        if u.start_s >= boundary:
            best = min(best, u.start_s - boundary)
        elif u.end_s > boundary:
            return 0.0
    return best


def _merge_pair(left: Scene, right: Scene) -> Scene:
    """Combine two adjacent scenes; speech wins and markers are dropped."""
    texts = [s.transcript_text for s in (left, right) if s.kind == SPEECH and s.transcript_text]
    if left.kind == SILENT and right.kind == SILENT:
        return _silent(left.start_s, right.end_s)
    merged_id = left.id or right.id
    return Scene(merged_id, left.start_s, right.end_s, " ".join(texts), SPEECH)


def _merge_pass(
    scenes: Sequence[Scene],
    transcript: Transcript | None,
    should_merge,
) -> list[Scene]:
    """Repeatedly merge scenes matched by ``should_merge`` into a neighbor.

    The shortest offender merges first. Direction prefers an adjacent speech
    scene; between two speech neighbors the one whose utterances hug the
    shared boundary more closely wins, with ties going to the previous scene.
    """
    out = list(scenes)
    _check_tiling(out)
    while len(out) > 1:
        offenders = [i for i, s in enumerate(out) if should_merge(s)]
        if not offenders:
            break
        i = min(offenders, key=lambda j: (out[j].duration_s, j))
        left = out[i - 1] if i > 0 else None
        right = out[i + 1] if i + 1 < len(out) else None
        if left is not None and right is not None:
            if left.kind == SPEECH and right.kind != SPEECH:
                into_left = True
            elif right.kind == SPEECH and left.kind != SPEECH:
                into_left = False
            else:
                gap_left = _gap_before(transcript, out[i].start_s)
                gap_right = _gap_after(transcript, out[i].end_s)
                into_left = gap_left <= gap_right
        else:
            into_left = left is not None
        if into_left:
            out[i - 1 : i + 1] = [_merge_pair(out[i - 1], out[i])]
        else:
            out[i : i + 2] = [_merge_pair(out[i], out[i + 1])]
    return out


def merge_short_scenes(
    scenes: Sequence[Scene],
    min_dur_s: float = 10.0,
    transcript: Transcript | None = None,
) -> list[Scene]:
    """Merge every scene shorter than ``min_dur_s`` into an adjacent one.

    The transcript, when given, feeds the direction rule (smaller boundary
    utterance gap); without it ties fall back to the previous scene.
    """
    return _merge_pass(scenes, transcript, lambda s: s.duration_s < min_dur_s)


def _ends_sentence(text: str) -> bool:
    stripped = text.rstrip()
    return bool(stripped) and stripped[-1] in _SENTENCE_END


def _slice_text(t: Transcript, start_s: float, end_s: float) -> str:
    return " ".join(
        u.text for u in t.utterances if u.start_s < end_s and u.end_s > start_s
    )


def align_boundaries(
    scenes: Sequence[Scene], t: Transcript, window_s: float = 3.0
) -> list[Scene]:
    """Snap interior speech-to-speech boundaries to sentence punctuation.

    Each boundary moves to the nearest utterance end within the window whose
    text finishes a sentence; with no candidate it stays. Moves that would
    empty a scene or invert ordering are skipped, so the scene count and the
    tiling are preserved. All scene texts are then re-sliced from the
    transcript.
    """
    out = list(scenes)
    _check_tiling(out)
    punctuated_ends = [u.end_s for u in t.utterances if _ends_sentence(u.text)]
    for i in range(len(out) - 1):
        left, right = out[i], out[i + 1]
        if left.kind != SPEECH or right.kind != SPEECH:
            continue
        boundary = left.end_s
        candidates = [
            e
            for e in punctuated_ends
            if abs(e - boundary) <= window_s and left.start_s < e < right.end_s
        ]
        if not candidates:
            continue
        new_boundary = min(candidates, key=lambda e: (abs(e - boundary), e))
        if new_boundary == boundary:
            continue
        out[i] = replace(left, end_s=new_boundary)
        out[i + 1] = replace(right, start_s=new_boundary)
    return [
        s if s.kind == SILENT else replace(s, transcript_text=_slice_text(t, s.start_s, s.end_s))
        for s in out
    ]


def _cut_right(scenes: list[Scene], cut: float, t: Transcript | None) -> list[Scene]:
    """Keep the part of a scene list left of ``cut``."""
    kept: list[Scene] = []
    for s in scenes:
        if s.end_s <= cut:
            kept.append(s)
        elif s.start_s < cut:
            text = (
                _slice_text(t, s.start_s, cut)
                if t is not None and s.kind == SPEECH
                else s.transcript_text
            )
            kept.append(replace(s, end_s=cut, transcript_text=text))
    return kept


def _cut_left(scenes: list[Scene], cut: float, t: Transcript | None) -> list[Scene]:
    """Keep the part of a scene list right of ``cut``."""
    kept: list[Scene] = []
    for s in scenes:
        if s.start_s >= cut:
            kept.append(s)
        elif s.end_s > cut:
            text = (
                _slice_text(t, cut, s.end_s)
                if t is not None and s.kind == SPEECH
                else s.transcript_text
            )
            kept.append(replace(s, start_s=cut, transcript_text=text))
    return kept


def stitch_chunks(
    per_chunk: Sequence[tuple[ChunkRange, Sequence[Scene]]],
    duration_s: float,
    *,
    video_id: str = "video",
    transcript: Transcript | None = None,
    min_dur_s: float = 10.0,
    epsilon_s: float = 10.0,
) -> SceneSet:
    """Join per-chunk scene lists into one scene set for the whole video.

    In each overlap region the earlier chunk owns everything up to the
    overlap midpoint and the later chunk the rest; straddling scenes are
    truncated (and re-sliced when a transcript is given). Adjacent silent
    scenes across a seam coalesce. A final merge pass removes the sub-minimum
    slivers that seam cuts can create, and double-checks that no silent scene
    at or under ``epsilon_s`` survives.
    """
    if not per_chunk:
        raise InvalidInputError("nothing to stitch")
    ordered = sorted(per_chunk, key=lambda pair: pair[0].start_s)
    for r, scenes in ordered:
        scenes = list(scenes)
        if not scenes or scenes[0].start_s != r.start_s or scenes[-1].end_s != r.end_s:
            raise InvalidInputError(f"chunk {r.index} scenes do not tile its range")
        _check_tiling(scenes)
    if ordered[0][0].start_s != 0.0 or ordered[-1][0].end_s != duration_s:
        raise InvalidInputError("chunks do not cover [0, duration]")

    acc: list[Scene] = list(ordered[0][1])
    acc_end = ordered[0][0].end_s
    for r, scenes in ordered[1:]:
        if r.start_s > acc_end or r.end_s <= acc_end:
            raise InvalidInputError(f"chunk {r.index} does not extend the covered range")
        cut = (r.start_s + acc_end) / 2.0
        acc = _cut_right(acc, cut, transcript)
        incoming = _cut_left(list(scenes), cut, transcript)
        if acc and incoming and acc[-1].kind == SILENT and incoming[0].kind == SILENT:
            acc[-1] = _silent(acc[-1].start_s, incoming[0].end_s)
            incoming.pop(0)
        acc.extend(incoming)
        acc_end = r.end_s

    acc = _merge_pass(
        acc,
        transcript,
        lambda s: s.duration_s < min_dur_s
        or (s.kind == SILENT and s.duration_s <= epsilon_s),
    )
    final = tuple(
        replace(s, id=f"{video_id}:{i:04d}") for i, s in enumerate(acc)
    )
    return SceneSet(video_id, duration_s, final)


def scene_set_to_manifest(scene_set: SceneSet) -> list[dict]:
    """Scene manifest records: id, bounds, kind, transcript text."""
    return [
        {
            "id": s.id,
            "start_s": s.start_s,
            "end_s": s.end_s,
            "kind": s.kind,
            "transcript_text": s.transcript_text,
        }
        for s in scene_set.scenes
    ]


def scene_set_from_manifest(
    video_id: str, duration_s: float, records: Sequence[dict]
) -> SceneSet:
    scenes = tuple(
        Scene(
            rec["id"],
            float(rec["start_s"]),
            float(rec["end_s"]),
            rec["transcript_text"],
            rec["kind"],
        )
        for rec in records
    )
    return SceneSet(video_id, duration_s, scenes)
