"""Chunk planning, transcript slicing, silence detection, file round trips."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chunk, transcript, utter
from scenewise.errors import InvalidInputError, ProtocolError
from scenewise.ingest import (
    ChunkRange,
    SilenceInterval,
    TimedUtterance,
    Transcript,
    detect_silences,
    dump_transcript_file,
    load_transcript_file,
    make_chunk_ranges,
    slice_transcript,
    transcribe,
)
from scenewise.providers import Provider, ScriptedTransport


class TestMakeChunkRanges:
    def test_three_chunks_with_overlap(self):
        spans = [(r.start_s, r.end_s) for r in make_chunk_ranges(720, 300, 10)]
        assert spans == [(0, 300), (290, 590), (580, 720)]

    def test_single_chunk_when_short(self):
        spans = [(r.start_s, r.end_s) for r in make_chunk_ranges(200, 300, 10)]
        assert spans == [(0, 200)]

    def test_tail_fragment_merges_into_predecessor(self):
        # Hand-check: full chunks cover up to 590; the 5 s remainder is
        # shorter than the overlap, so the second chunk absorbs it.
        spans = [(r.start_s, r.end_s) for r in make_chunk_ranges(595, 300, 10)]
        assert spans == [(0, 300), (290, 595)]

    def test_invalid_inputs(self):
        with pytest.raises(InvalidInputError):
            make_chunk_ranges(0, 300, 10)
        with pytest.raises(InvalidInputError):
            make_chunk_ranges(-5, 300, 10)
        with pytest.raises(InvalidInputError):
            make_chunk_ranges(100, 300, 300)

    @pytest.mark.parametrize("duration", [1.0, 9.5, 300.0, 301.0, 580.0, 590.0, 591.0, 600.0, 1234.5])
    def test_coverage_and_overlap_invariant(self, duration):
        ranges = make_chunk_ranges(duration, 300, 10)
        assert ranges[0].start_s == 0.0
        assert ranges[-1].end_s == duration
        for left, right in zip(ranges, ranges[1:]):
            assert right.start_s < left.end_s  # chunks overlap
            assert left.end_s - right.start_s == pytest.approx(10.0)
        for i, r in enumerate(ranges):
            assert r.index == i + 1
            assert r.end_s - r.start_s <= 300 + 10

    @given(
        st.floats(0.1, 50_000),
        st.floats(10.0, 3_000),
        st.floats(0.0, 500.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_coverage_property(self, duration, chunk_len, overlap):
        if not overlap < chunk_len:
            return
        ranges = make_chunk_ranges(duration, chunk_len, overlap)
        assert ranges[0].start_s == 0.0
        assert ranges[-1].end_s == duration
        for left, right in zip(ranges, ranges[1:]):
            assert right.start_s <= left.end_s  # no coverage hole
        # A merged tail may reach chunk_len + overlap; nothing longer.
        assert all(r.duration_s <= chunk_len + overlap + 1e-9 for r in ranges)


class TestSliceTranscript:
    def test_clips_at_range_edge(self):
        t = transcript([utter(5, 9, "a"), utter(9, 14, "b")], 20)
        sliced = slice_transcript(t, chunk(0, 10))
        assert [(u.start_s, u.end_s, u.text) for u in sliced.utterances] == [
            (5, 9, "a"),
            (9, 10, "b"),
        ]

    def test_identity_on_full_range(self):
        t = transcript([utter(5, 9, "a"), utter(9, 14, "b")], 20)
        assert slice_transcript(t, chunk(0, 20)) == t

    def test_disjoint_range_is_empty(self):
        t = transcript([utter(5, 9, "a")], 30)
        assert slice_transcript(t, chunk(10, 20)).utterances == ()

    def test_idempotent_on_own_output(self):
        t = transcript([utter(2, 8, "a"), utter(9, 15, "b"), utter(16, 19, "c")], 25)
        r = chunk(5, 17)
        once = slice_transcript(t, r)
        assert slice_transcript(once, r) == once


class TestDetectSilences:
    def test_single_interior_gap(self):
        t = transcript([utter(0, 10), utter(25, 40)], 40)
        gaps = detect_silences(t, chunk(0, 40), 2.0)
        assert [(g.start_s, g.end_s) for g in gaps] == [(10, 25)]

    def test_fully_voiced_chunk(self):
        t = transcript([utter(0, 40)], 40)
        assert detect_silences(t, chunk(0, 40), 2.0) == []

    def test_leading_and_trailing_gaps(self):
        t = transcript([utter(5, 10)], 30)
        gaps = detect_silences(t, chunk(0, 30), 2.0)
        assert [(g.start_s, g.end_s) for g in gaps] == [(0, 5), (10, 30)]

    def test_sub_threshold_gap_ignored(self):
        t = transcript([utter(0, 10), utter(11.5, 30)], 30)
        assert detect_silences(t, chunk(0, 30), 2.0) == []

    def test_partition_property(self):
        # Silences, utterances, and sub-threshold gaps tile the chunk.
        t = transcript([utter(3, 10), utter(11, 20), utter(26, 29)], 35)
        r = chunk(0, 35)
        gaps = detect_silences(t, r, 2.0)
        spans = sorted(
            [(g.start_s, g.end_s) for g in gaps]
            + [(u.start_s, u.end_s) for u in t.utterances]
        )
        covered = []
        for start, end in spans:
            if covered and start < covered[-1][1]:
                pytest.fail("overlapping spans")
            if covered and start - covered[-1][1] >= 2.0:
                pytest.fail("missed a reportable gap")
            covered.append((start, end))
        assert covered[0][0] < 2.0 and r.end_s - covered[-1][1] < 2.0


class TestInvariants:
    def test_utterance_validation(self):
        with pytest.raises(InvalidInputError):
            TimedUtterance(5, 5, "x")
        with pytest.raises(InvalidInputError):
            TimedUtterance(-1, 5, "x")
        with pytest.raises(InvalidInputError):
            TimedUtterance(1, 5, "   ")

    def test_transcript_validation(self):
        with pytest.raises(InvalidInputError):
            Transcript("v", 10, (utter(0, 5), utter(4, 8)))
        with pytest.raises(InvalidInputError):
            Transcript("v", 7, (utter(0, 5), utter(5, 8)))


class TestTranscribe:
    def _asr(self, responses):
        return Provider(kind="asr", model="asr-1", transport=ScriptedTransport(responses))

    def test_scripted_round_trip(self):
        asr = self._asr(
            [
                {
                    "utterances": [
                        {"start_s": 0.0, "end_s": 2.5, "text": "hello"},
                        {"start_s": 3.0, "end_s": 5.0, "text": "there"},
                    ]
                }
            ]
        )
        t = transcribe("clip.wav", asr, video_id="v")
        assert [(u.start_s, u.end_s, u.text) for u in t.utterances] == [
            (0.0, 2.5, "hello"),
            (3.0, 5.0, "there"),
        ]

    def test_overlapping_utterances_rejected(self):
        asr = self._asr(
            [
                {
                    "utterances": [
                        {"start_s": 0.0, "end_s": 4.0, "text": "a"},
                        {"start_s": 3.0, "end_s": 6.0, "text": "b"},
                    ]
                }
            ]
        )
        with pytest.raises(ProtocolError):
            transcribe("clip.wav", asr)

    def test_cached_repeat_issues_zero_calls(self, memory_kv):
        transport = ScriptedTransport(
            [{"utterances": [{"start_s": 0.0, "end_s": 1.0, "text": "x"}]}]
        )
        asr = Provider(kind="asr", model="asr-1", transport=transport, cache=memory_kv)
        first = transcribe("clip.wav", asr)
        again = transcribe("clip.wav", asr)
        assert first == again
        assert transport.calls == 1


class TestTranscriptFile:
    def test_round_trip(self, tmp_path):
        t = transcript([utter(0, 2.25, "alpha beta"), utter(2.25, 4.5, "gamma")], 10.0)
        path = tmp_path / "vid.tsv"
        dump_transcript_file(t, path)
        loaded = load_transcript_file(path, video_id="vid", duration_s=10.0)
        assert loaded == t

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("# header\n\n0.00\t1.50\thello world\n", encoding="utf-8")
        loaded = load_transcript_file(path)
        assert loaded.utterances[0].text == "hello world"
        assert loaded.duration_s == 1.5

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("0.00,1.50,hello\n", encoding="utf-8")
        with pytest.raises(InvalidInputError):
            load_transcript_file(path)
