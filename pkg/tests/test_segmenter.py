"""Segmentation loop: prompt rendering, parsing, validation, repair, fallback."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chat_provider, chunk, transcript, utter
from scenewise.config import EngineConfig
from scenewise.errors import InvalidInputError
from scenewise.segmenter import (
    FaultKind,
    RawScene,
    SegmentationFault,
    SegmentationFaultError,
    build_segmentation_prompt,
    check_time_ranges,
    choose_fix_prompt,
    default_partition,
    parse_segmentation_response,
    parse_timestamp,
    render_scenes,
    segment_chunk,
)

DELIMS = ("<|REC|>", "<|DONE|>")


def oracle_parse_timestamp(text: str) -> float:
    """Independent reference parser: weigh colon-separated parts by 60^k."""
    total = 0.0
    for power, part in enumerate(reversed(text.split(":"))):
        total += float(part) * 60.0**power
    return total


class TestBuildPrompt:
    def test_time_marks_and_delimiters_present(self):
        t = transcript([utter(0, 4.5, "first words"), utter(5, 9, "second words")], 10)
        prompt = build_segmentation_prompt(t, DELIMS)
        assert "[0.00 -> 4.50] first words" in prompt.text
        assert "[5.00 -> 9.00] second words" in prompt.text
        instructions = prompt.text.split("Output format Example:")[0]
        assert instructions.count("<|REC|>") == 1
        assert instructions.count("<|DONE|>") == 1

    def test_empty_slice_rejected(self):
        with pytest.raises(InvalidInputError):
            build_segmentation_prompt(transcript([], 10), DELIMS)

    def test_delimiter_collision_rejected(self):
        t = transcript([utter(0, 4, "contains <|REC|> inside")], 10)
        with pytest.raises(InvalidInputError):
            build_segmentation_prompt(t, DELIMS)

    def test_equal_delimiters_rejected(self):
        t = transcript([utter(0, 4, "hi there")], 10)
        with pytest.raises(InvalidInputError):
            build_segmentation_prompt(t, ("<|X|>", "<|X|>"))


class TestParseResponse:
    def test_two_block_split(self):
        scenes = parse_segmentation_response(
            "[0 -> 24] A<|REC|>[24 -> 66] B<|DONE|>", DELIMS
        )
        assert [(s.start_s, s.end_s, s.text) for s in scenes] == [
            (0, 24, "A"),
            (24, 66, "B"),
        ]

    @pytest.mark.parametrize(
        "mark",
        ["0:24 -> 1:06", "24 -> 66", "0:00:24 -> 0:01:06", "24.0 -> 66.0"],
    )
    def test_timestamp_forms_match_oracle(self, mark):
        start_text, end_text = mark.split(" -> ")
        scenes = parse_segmentation_response(f"[{mark}] A<|DONE|>", DELIMS)
        assert scenes[0].start_s == oracle_parse_timestamp(start_text) == 24.0
        assert scenes[0].end_s == oracle_parse_timestamp(end_text) == 66.0

    def test_missing_time_mark_is_unparseable(self):
        with pytest.raises(SegmentationFaultError) as exc:
            parse_segmentation_response("no timestamps here<|DONE|>", DELIMS)
        assert exc.value.fault.kind is FaultKind.UNPARSEABLE

    def test_empty_response_is_unparseable(self):
        with pytest.raises(SegmentationFaultError):
            parse_segmentation_response("  <|DONE|> ", DELIMS)

    def test_garbage_timestamp_is_unparseable(self):
        with pytest.raises(SegmentationFaultError):
            parse_segmentation_response("[1:2:3:4 -> 5] A<|DONE|>", DELIMS)

    @given(
        st.lists(
            st.tuples(st.integers(0, 50_000), st.integers(1, 5_000), st.text(
                alphabet=st.characters(blacklist_characters="<|>", blacklist_categories=("Cs", "Cc")),
                min_size=1,
                max_size=40,
            )),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_render_parse_round_trip(self, spans):
        cursor = 0
        scenes = []
        for offset, length, text in spans:
            start = (cursor + offset) / 100.0
            end = (cursor + offset + length) / 100.0
            text = " ".join(text.split())
            if not text:
                text = "x"
            scenes.append(RawScene(start, end, text))
            cursor += offset + length
        rendered = render_scenes(scenes, DELIMS)
        assert parse_segmentation_response(rendered, DELIMS) == scenes


class TestParseTimestamp:
    def test_forms(self):
        assert parse_timestamp("83") == 83.0
        assert parse_timestamp("1:23") == 83.0
        assert parse_timestamp("1:01:05.5") == 3665.5
        assert parse_timestamp("bogus") is None
        assert parse_timestamp("1:2:3:4") is None


CFG = EngineConfig(embedding_dim=8)


class TestCheckTimeRanges:
    def scenes(self, spans):
        return [RawScene(a, b, "t") for a, b in spans]

    def test_all_constraints_met(self):
        assert check_time_ranges(self.scenes([(0, 20), (20, 50), (50, 90)]), 90, CFG) is None

    def test_too_short_scene(self):
        fault = check_time_ranges(self.scenes([(0, 20), (20, 25), (25, 90)]), 90, CFG)
        assert fault is not None and fault.kind is FaultKind.SCENE_TOO_SHORT

    def test_too_long_scene(self):
        fault = check_time_ranges(self.scenes([(0, 80), (80, 160), (160, 240)]), 240, CFG)
        assert fault is not None and fault.kind is FaultKind.SCENE_TOO_LONG

    def test_overlap(self):
        # Three scenes keep the count rule quiet so the overlap is what trips.
        fault = check_time_ranges(self.scenes([(0, 40), (35, 90), (90, 130)]), 130, CFG)
        assert fault is not None and fault.kind is FaultKind.GAP_OR_OVERLAP

    def test_rule_order_is_fixed(self):
        # Everything is wrong here; the count rule is checked first.
        fault = check_time_ranges(self.scenes([(0, 200), (150, 180)]), 100, CFG)
        assert fault is not None and fault.kind is FaultKind.TOO_FEW_SEGMENTS

    def test_count_rule_disabled_for_short_chunks(self):
        assert check_time_ranges(self.scenes([(0, 30), (30, 60)]), 60, CFG) is None

    def test_out_of_bounds(self):
        fault = check_time_ranges(self.scenes([(0, 30), (30, 60), (60, 95)]), 90, CFG)
        assert fault is not None and fault.kind is FaultKind.OUT_OF_BOUNDS

    def test_interior_gaps_are_legal(self):
        assert (
            check_time_ranges(self.scenes([(0, 20), (40, 60), (70, 90)]), 90, CFG) is None
        )


class TestChooseFixPrompt:
    def test_too_few(self):
        text = choose_fix_prompt(SegmentationFault(FaultKind.TOO_FEW_SEGMENTS))
        assert "Too few time ranges." in text

    def test_too_long(self):
        text = choose_fix_prompt(SegmentationFault(FaultKind.SCENE_TOO_LONG))
        assert "Split scenes that exceed the maximum duration" in text

    def test_too_short(self):
        text = choose_fix_prompt(SegmentationFault(FaultKind.SCENE_TOO_SHORT))
        assert "time ranges that are too short" in text

    def test_gap_overlap_and_bounds_reuse_too_short(self):
        short = choose_fix_prompt(SegmentationFault(FaultKind.SCENE_TOO_SHORT))
        assert choose_fix_prompt(SegmentationFault(FaultKind.GAP_OR_OVERLAP)) == short
        assert choose_fix_prompt(SegmentationFault(FaultKind.OUT_OF_BOUNDS)) == short

    def test_unparseable_reissues_base_prompt(self):
        text = choose_fix_prompt(SegmentationFault(FaultKind.UNPARSEABLE), "BASE PROMPT")
        assert text.startswith("BASE PROMPT")
        assert "Reminder" in text


def make_slice(duration: float = 300.0):
    utterances = []
    cursor = 0.0
    i = 0
    while cursor < duration:
        end = min(cursor + 10.0, duration)
        utterances.append(utter(cursor, end, f"utterance {i}."))
        cursor = end
        i += 1
    return transcript(utterances, duration)


VALID_RESPONSE = (
    "[0 -> 50] part one<|REC|>[50 -> 100] part two<|REC|>"
    "[100 -> 150] part three<|REC|>[150 -> 200] part four<|REC|>"
    "[200 -> 250] part five<|REC|>[250 -> 300] part six<|DONE|>"
)
BAD_RESPONSE = "[0 -> 50] one<|REC|>[50 -> 100] two<|DONE|>"  # too few segments


class TestSegmentChunk:
    def test_happy_path_single_call(self):
        llm = chat_provider([VALID_RESPONSE])
        scenes = segment_chunk(make_slice(), chunk(0, 300), llm, CFG)
        assert len(scenes) == 6
        assert llm.transport.calls == 1

    def test_retry_bound_is_five_calls(self):
        llm = chat_provider([BAD_RESPONSE] * 10)
        segment_chunk(make_slice(), chunk(0, 300), llm, CFG, escalated_llm=llm)
        assert llm.transport.calls == 5

    def test_two_faults_then_valid_escalates_exactly_once(self):
        base = chat_provider([BAD_RESPONSE, BAD_RESPONSE], model="base-model")
        escalated = chat_provider([VALID_RESPONSE], model="strong-model")
        scenes = segment_chunk(
            make_slice(), chunk(0, 300), base, CFG, escalated_llm=escalated
        )
        assert len(scenes) == 6
        assert base.transport.calls == 2
        assert escalated.transport.calls == 1
        models = [r.body["model"] for r in base.transport.requests] + [
            r.body["model"] for r in escalated.transport.requests
        ]
        assert models == ["base-model", "base-model", "strong-model"]

    def test_repair_prompt_appended_to_history(self):
        llm = chat_provider([BAD_RESPONSE, VALID_RESPONSE])
        segment_chunk(make_slice(), chunk(0, 300), llm, CFG)
        second_request = llm.transport.requests[1].body
        assert second_request["messages"][-1]["content"].startswith(
            "Output Error Correction Request:\nToo few time ranges."
        )
        assert second_request["messages"][-2]["content"] == BAD_RESPONSE

    def test_exhaustion_returns_uniform_partition(self):
        llm = chat_provider(["garbage with no marks<|DONE|>"] * 5)
        scenes = segment_chunk(make_slice(), chunk(0, 300), llm, CFG)
        assert [(s.start_s, s.end_s) for s in scenes] == [
            (0, 60),
            (60, 120),
            (120, 180),
            (180, 240),
            (240, 300),
        ]
        assert llm.transport.calls == 5
        # Partition tiles the chunk and carries transcript text.
        assert scenes[0].start_s == 0 and scenes[-1].end_s == 300
        assert all(a.end_s == b.start_s for a, b in zip(scenes, scenes[1:]))
        assert all(s.text for s in scenes)

    def test_fallback_final_interval_absorbs_remainder(self):
        llm = chat_provider(["junk<|DONE|>"] * 5)
        scenes = segment_chunk(make_slice(310), chunk(0, 310), llm, CFG)
        assert [(s.start_s, s.end_s) for s in scenes][-1] == (240, 310)

    def test_absolute_timestamps_for_offset_chunk(self):
        response = (
            "[290 -> 340] a<|REC|>[340 -> 390] b<|REC|>"
            "[390 -> 440] c<|REC|>[440 -> 500] d<|REC|>[500 -> 560] e<|REC|>"
            "[560 -> 590] f<|DONE|>"
        )
        utterances = [utter(290 + 10 * i, 300 + 10 * i, f"u{i}.") for i in range(30)]
        piece = transcript(utterances, 590)
        llm = chat_provider([response])
        scenes = segment_chunk(piece, chunk(290, 590, index=2), llm, CFG)
        assert scenes[0].start_s == 290 and scenes[-1].end_s == 590

    def test_empty_slice_skips_model(self):
        llm = chat_provider([])
        assert segment_chunk(transcript([], 300), chunk(0, 300), llm, CFG) == []
        assert llm.transport.calls == 0

    def test_determinism(self):
        script = [BAD_RESPONSE, VALID_RESPONSE]
        first = segment_chunk(make_slice(), chunk(0, 300), chat_provider(script), CFG)
        second = segment_chunk(make_slice(), chunk(0, 300), chat_provider(script), CFG)
        assert first == second

    def test_accepted_output_satisfies_validator_by_brute_force(self):
        llm = chat_provider([VALID_RESPONSE])
        scenes = segment_chunk(make_slice(), chunk(0, 300), llm, CFG)
        # Re-verify the validator's promise directly on the accepted list.
        assert all(15 <= s.end_s - s.start_s <= 60 for s in scenes)
        assert all(a.end_s <= b.start_s for a, b in zip(scenes, scenes[1:]))
        assert all(0 <= s.start_s and s.end_s <= 300 for s in scenes)

    def test_history_truncation_drops_oldest_rounds(self):
        small = EngineConfig(embedding_dim=8, max_prompt_tokens=600)
        llm = chat_provider([BAD_RESPONSE] * 5)
        segment_chunk(make_slice(), chunk(0, 300), llm, small, escalated_llm=llm)
        # Later requests must stay within budget by dropping old rounds,
        # while always retaining the base prompt.
        last = llm.transport.requests[-1].body["messages"]
        assert last[0]["content"].startswith("-Goal-")
        assert len(last) < 1 + 2 * 4


class TestDefaultPartition:
    def test_tiles_any_chunk(self):
        for duration in (40.0, 60.0, 61.0, 299.0, 300.0, 314.9):
            slice_t = make_slice(duration)
            scenes = default_partition(slice_t, chunk(0, duration), CFG)
            assert scenes[0].start_s == 0 and scenes[-1].end_s == duration
            assert all(a.end_s == b.start_s for a, b in zip(scenes, scenes[1:]))
