"""Order-swapped pairwise judging, Likert scoring, and aggregation."""

from __future__ import annotations

import json

import pytest

from conftest import chat_provider
from scenewise.errors import InvalidInputError, JudgeResponseError
from scenewise.evaluation import (
    DIMENSIONS,
    JudgeVerdict,
    PairComparison,
    aggregate,
    judge_pair,
    likert_score,
)


def pairwise_reply(winner: str) -> str:
    return json.dumps({d: {"winner": winner, "rationale": "r"} for d in DIMENSIONS})


def position_biased_judge():
    """A judge that always prefers whatever answer is shown first."""
    return chat_provider(lambda request: {"content": pairwise_reply("1")})


def comparison(verdicts, domain="all", query_id="q", valid=True):
    return PairComparison(query_id, domain, tuple(verdicts), valid)


def verdicts_for(winner_by_dim, order="AB"):
    return [JudgeVerdict(d, winner_by_dim.get(d, "tie"), "", order) for d in DIMENSIONS]


class TestJudgePair:
    def test_position_bias_cancels_to_fifty_fifty(self):
        judge = position_biased_judge()
        verdicts = judge_pair("q", "answer one", "answer two", judge)
        assert judge.transport.calls == 2
        table = aggregate([comparison(verdicts)], "all")
        for dim in DIMENSIONS:
            rate = table.groups["all"][dim]
            assert rate.a_pct == 50.0 and rate.b_pct == 50.0

    def test_consistent_preference_wins_everything(self):
        def prefer_a(request):
            prompt = request.body["messages"][0]["content"]
            first = prompt.split("Answer 1:\n", 1)[1].split("\n\nAnswer 2:")[0]
            return {"content": pairwise_reply("1" if first == "alpha" else "2")}

        judge = chat_provider(prefer_a)
        verdicts = judge_pair("q", "alpha", "beta", judge)
        table = aggregate([comparison(verdicts)], "all")
        for dim in DIMENSIONS:
            assert table.groups["all"][dim].a_pct == 100.0

    def test_identical_answers_rejected(self):
        with pytest.raises(InvalidInputError):
            judge_pair("q", "same", "same", chat_provider([]))

    def test_malformed_twice_raises_after_reask(self):
        judge = chat_provider(["not json", "still not json"])
        with pytest.raises(JudgeResponseError):
            judge_pair("q", "a", "b", judge)
        assert judge.transport.calls == 2

    def test_reask_recovers_once(self):
        judge = chat_provider(["not json", pairwise_reply("1"), pairwise_reply("1")])
        verdicts = judge_pair("q", "a", "b", judge)
        assert len(verdicts) == len(DIMENSIONS) * 2
        assert judge.transport.calls == 3


class TestLikert:
    def test_all_fives(self):
        judge = chat_provider([json.dumps({d: 5 for d in DIMENSIONS})])
        assert likert_score("q", "a", "ref", judge) == {d: 5 for d in DIMENSIONS}

    def test_out_of_range_clamped(self):
        judge = chat_provider([json.dumps({**{d: 3 for d in DIMENSIONS}, "depth": 6})])
        scores = likert_score("q", "a", "ref", judge)
        assert scores["depth"] == 5

    def test_missing_dimension_reasks_then_fails(self):
        incomplete = json.dumps({d: 4 for d in DIMENSIONS if d != "density"})
        judge = chat_provider([incomplete, incomplete])
        with pytest.raises(JudgeResponseError):
            likert_score("q", "a", "ref", judge)
        assert judge.transport.calls == 2


class TestAggregate:
    def test_three_one_split(self):
        comparisons = [
            comparison(verdicts_for({d: "A" for d in DIMENSIONS}), query_id=f"q{i}")
            for i in range(3)
        ] + [comparison(verdicts_for({d: "B" for d in DIMENSIONS}), query_id="q3")]
        table = aggregate(comparisons, "all")
        assert table.groups["all"]["overall"].a_pct == 75.0
        assert table.groups["all"]["overall"].b_pct == 25.0

    def test_tie_splits_evenly(self):
        comparisons = [
            comparison(verdicts_for({d: "A" for d in DIMENSIONS}), query_id="q0"),
            comparison(verdicts_for({}), query_id="q1"),  # all ties
        ]
        table = aggregate(comparisons, "all")
        assert table.groups["all"]["overall"].a_pct == 75.0
        assert table.groups["all"]["overall"].ties == 1

    def test_percentages_sum_to_hundred(self):
        comparisons = [
            comparison(verdicts_for({"depth": "A"}), query_id="q0"),
            comparison(verdicts_for({"depth": "B", "density": "A"}), query_id="q1"),
        ]
        table = aggregate(comparisons, "all")
        for rate in table.groups["all"].values():
            assert rate.a_pct + rate.b_pct == pytest.approx(100.0)

    def test_domain_aggregation_weighted_by_count(self):
        # Hand-summed toy table: lecture has 3 comparisons all A,
        # documentary has 1 comparison all B; All = 75 / 25.
        comparisons = [
            comparison(verdicts_for({d: "A" for d in DIMENSIONS}), "lecture", f"l{i}")
            for i in range(3)
        ] + [comparison(verdicts_for({d: "B" for d in DIMENSIONS}), "documentary", "d0")]
        table = aggregate(comparisons, "per-domain")
        assert table.groups["lecture"]["overall"].a_pct == 100.0
        assert table.groups["documentary"]["overall"].a_pct == 0.0
        assert table.groups["all"]["overall"].a_pct == 75.0
        # Conservation: per-domain counts sum to the aggregate count.
        assert (
            table.groups["lecture"]["overall"].comparisons
            + table.groups["documentary"]["overall"].comparisons
            == table.groups["all"]["overall"].comparisons
        )

    def test_invalid_comparisons_excluded(self):
        comparisons = [
            comparison(verdicts_for({d: "A" for d in DIMENSIONS}), query_id="q0"),
            comparison((), query_id="q1", valid=False),
        ]
        table = aggregate(comparisons, "all")
        assert table.groups["all"]["overall"].comparisons == 1

    def test_zero_valid_comparisons_is_error(self):
        with pytest.raises(InvalidInputError):
            aggregate([comparison((), valid=False)], "all")

    def test_text_rendering(self):
        comparisons = [comparison(verdicts_for({d: "A" for d in DIMENSIONS}))]
        text = aggregate(comparisons, "all").render_text()
        assert "comprehensiveness" in text and "100.0" in text
