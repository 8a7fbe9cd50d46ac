"""Answer-quality judging: order-swapped pairwise win rates and Likert scores.

Each pairwise comparison is judged twice with the candidate order swapped,
and the two verdicts are averaged, which cancels judge position bias
exactly: a judge that always prefers the first position lands on 50/50.
Ties contribute half a win to each side so percentages keep summing to 100;
tie counts are reported separately.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import InvalidInputError, JudgeResponseError
from .providers import Provider

logger = logging.getLogger(__name__)

DIMENSIONS = (
    "comprehensiveness",
    "empowerment",
    "trustworthiness",
    "depth",
    "density",
    "overall",
)

_DIMENSION_RUBRIC = """Judge the two candidate answers on these dimensions:
- comprehensiveness: how fully the answer covers the query intent
- empowerment: how much the answer helps the reader act or understand
- trustworthiness: factual accuracy and groundedness
- depth: quality of reasoning
- density: amount of relevant, non-redundant information
- overall: which answer is the better response overall"""

PAIRWISE_TEMPLATE = """You are comparing two candidate answers to the same question about long-form video content.

Question: {query}

Answer 1:
{first}

Answer 2:
{second}

{rubric}

For every dimension pick the winner: "1", "2", or "tie".
Reply with only a JSON object of the form:
{{"comprehensiveness": {{"winner": "1", "rationale": "..."}}, "empowerment": {{...}}, "trustworthiness": {{...}}, "depth": {{...}}, "density": {{...}}, "overall": {{...}}}}"""

LIKERT_TEMPLATE = """You are rating a candidate answer to a question about long-form video content against a reference answer.

Question: {query}

Reference answer:
{reference}

Candidate answer:
{answer}

{rubric}

Rate the candidate on every dimension with an integer from 1 (far worse than the reference) to 5 (far better than the reference).
Reply with only a JSON object mapping each dimension name to its integer score."""


@dataclass(frozen=True)
class JudgeVerdict:
    """One dimension's outcome from one judging order."""

    dimension: str
    winner: str  # "A" | "B" | "tie"
    rationale: str = ""
    order: str = "AB"  # which candidate was shown first


@dataclass(frozen=True)
class PairComparison:
    """Both-order verdicts for one query, ready for aggregation."""

    query_id: str
    domain: str = "all"
    verdicts: tuple[JudgeVerdict, ...] = ()
    valid: bool = True


def _parse_json_reply(text: str) -> dict:
    fenced = re.search(r"```(?:json)?\s*\n(.*?)\n\s*```", text, re.DOTALL)
    if fenced:
        text = fenced.group(1)
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end <= start:
        raise JudgeResponseError("judge reply contains no JSON object")
    try:
        return json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise JudgeResponseError(f"judge reply is not valid JSON: {exc}") from exc


def _parse_pairwise(text: str) -> dict[str, tuple[str, str]]:
    data = _parse_json_reply(text)
    verdicts: dict[str, tuple[str, str]] = {}
    for dimension in DIMENSIONS:
        entry = data.get(dimension)
        if not isinstance(entry, Mapping):
            raise JudgeResponseError(f"judge reply missing dimension {dimension!r}")
        winner = str(entry.get("winner", "")).strip().lower()
        if winner not in ("1", "2", "tie"):
            raise JudgeResponseError(
                f"dimension {dimension!r} winner must be 1, 2, or tie, got {winner!r}"
            )
        verdicts[dimension] = (winner, str(entry.get("rationale", "")))
    return verdicts


def _judge_once(
    query: str, first: str, second: str, judge: Provider
) -> dict[str, tuple[str, str]]:
    prompt = (
        PAIRWISE_TEMPLATE.replace("{query}", query)
        .replace("{first}", first)
        .replace("{second}", second)
        .replace("{rubric}", _DIMENSION_RUBRIC)
    )
    last_error: JudgeResponseError | None = None
    for _ in range(2):  # one re-ask on unusable output
        reply = judge.chat([{"role": "user", "content": prompt}])
        try:
            return _parse_pairwise(reply)
        except JudgeResponseError as exc:
            last_error = exc
            logger.warning("unusable judge reply, re-asking: %s", exc)
    raise last_error  # type: ignore[misc]


def judge_pair(
    query: str, answer_a: str, answer_b: str, judge: Provider
) -> list[JudgeVerdict]:
    """Judge a pair in both candidate orders.

    The prompt labels candidates purely by position; the mapping back to A/B
    is tracked here, so issuing both orders and averaging removes position
    bias by construction. Raises ``JudgeResponseError`` when either order
    stays unusable after a re-ask; callers mark the comparison invalid.
    """
    if answer_a == answer_b:
        raise InvalidInputError("pairwise judging needs distinct answers")
    verdicts: list[JudgeVerdict] = []
    for order, (first, second) in (("AB", (answer_a, answer_b)), ("BA", (answer_b, answer_a))):
        outcome = _judge_once(query, first, second, judge)
        for dimension in DIMENSIONS:
            winner_pos, rationale = outcome[dimension]
            if winner_pos == "tie":
                winner = "tie"
            elif winner_pos == "1":
                winner = "A" if order == "AB" else "B"
            else:
                winner = "B" if order == "AB" else "A"
            verdicts.append(JudgeVerdict(dimension, winner, rationale, order))
    return verdicts


def likert_score(
    query: str, answer: str, reference_answer: str, judge: Provider
) -> dict[str, int]:
    """Rate one answer against a reference on a 1..5 scale per dimension.

    Out-of-range scores are clamped (and logged); a missing dimension gets
    one re-ask before the rating is declared invalid.
    """
    prompt = (
        LIKERT_TEMPLATE.replace("{query}", query)
        .replace("{reference}", reference_answer)
        .replace("{answer}", answer)
        .replace("{rubric}", _DIMENSION_RUBRIC)
    )
    last_error: JudgeResponseError | None = None
    for _ in range(2):
        reply = judge.chat([{"role": "user", "content": prompt}])
        try:
            data = _parse_json_reply(reply)
            scores: dict[str, int] = {}
            for dimension in DIMENSIONS:
                if dimension not in data:
                    raise JudgeResponseError(f"likert reply missing {dimension!r}")
                raw = int(data[dimension])
                clamped = min(5, max(1, raw))
                if clamped != raw:
                    logger.warning(
                        "likert score %d for %s clamped to %d", raw, dimension, clamped
                    )
                scores[dimension] = clamped
            return scores
        except (JudgeResponseError, TypeError, ValueError) as exc:
            last_error = (
                exc if isinstance(exc, JudgeResponseError) else JudgeResponseError(str(exc))
            )
            logger.warning("unusable likert reply, re-asking: %s", exc)
    raise last_error  # type: ignore[misc]


@dataclass
class DimensionRate:
    """Win percentages and counts for one dimension."""

    a_pct: float
    b_pct: float
    comparisons: int
    ties: int


@dataclass
class WinRateTable:
    """Per-dimension win rates for systems A and B, per grouping key."""

    groups: dict[str, dict[str, DimensionRate]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            group: {
                dim: {
                    "a_pct": rate.a_pct,
                    "b_pct": rate.b_pct,
                    "comparisons": rate.comparisons,
                    "ties": rate.ties,
                }
                for dim, rate in dims.items()
            }
            for group, dims in self.groups.items()
        }

    def render_text(self) -> str:
        lines = []
        for group, dims in self.groups.items():
            lines.append(f"[{group}]")
            lines.append(f"{'dimension':<20} {'A %':>7} {'B %':>7} {'n':>5} {'ties':>5}")
            for dim, rate in dims.items():
                lines.append(
                    f"{dim:<20} {rate.a_pct:>7.1f} {rate.b_pct:>7.1f} "
                    f"{rate.comparisons:>5d} {rate.ties:>5d}"
                )
            lines.append("")
        return "\n".join(lines).rstrip() + "\n"


def _comparison_points(verdicts: Iterable[JudgeVerdict]) -> dict[str, tuple[float, int]]:
    """Per-dimension A-points (0..1) for one comparison, plus tie count."""
    points: dict[str, list[float]] = {d: [] for d in DIMENSIONS}
    ties: dict[str, int] = {d: 0 for d in DIMENSIONS}
    for verdict in verdicts:
        if verdict.winner == "A":
            points[verdict.dimension].append(1.0)
        elif verdict.winner == "B":
            points[verdict.dimension].append(0.0)
        else:
            points[verdict.dimension].append(0.5)
            ties[verdict.dimension] += 1
    return {
        d: (sum(values) / len(values) if values else 0.5, ties[d])
        for d, values in points.items()
    }


def aggregate(
    comparisons: Sequence[PairComparison], grouping: str = "all"
) -> WinRateTable:
    """Win-rate table over valid comparisons.

    ``grouping`` is ``"all"`` for one aggregate block or ``"per-domain"``
    for one block per domain plus the weighted aggregate. Raises when no
    valid comparison exists.
    """
    valid = [c for c in comparisons if c.valid]
    if not valid:
        raise InvalidInputError("no valid comparisons to aggregate")

    def block(rows: Sequence[PairComparison]) -> dict[str, DimensionRate]:
        dims: dict[str, DimensionRate] = {}
        for dimension in DIMENSIONS:
            total = 0.0
            ties = 0
            for comparison in rows:
                points, dim_ties = _comparison_points(comparison.verdicts)[dimension]
                total += points
                ties += dim_ties
            share = total / len(rows)
            dims[dimension] = DimensionRate(
                a_pct=round(share * 100.0, 10),
                b_pct=round((1.0 - share) * 100.0, 10),
                comparisons=len(rows),
                ties=ties,
            )
        return dims

    table = WinRateTable()
    if grouping == "per-domain":
        domains = sorted({c.domain for c in valid})
        for domain in domains:
            table.groups[domain] = block([c for c in valid if c.domain == domain])
    elif grouping != "all":
        raise InvalidInputError(f"unknown grouping {grouping!r}")
    table.groups["all"] = block(valid)
    return table
