"""Strategic-property verification: payoff curves, truthfulness gaps,
completeness and obliviousness checks.

All checks run through the exact engine and compare rationals with zero
tolerance.  Dominant-strategy verification is over finite report grids and
finite opponent profiles ("grid-truthfulness"), not all distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterable, Optional, Sequence

from .core import (
    Instance,
    Preference,
    Qualitative,
    Quantitative,
    Report,
    make_instance,
    point_mass,
)
from .engine import DEFAULT_BRANCH_LIMIT, exact_evaluate


def _as_report(value, like: Report) -> Report:
    """Wrap a bare length as a report of the same kind as ``like``."""
    if isinstance(value, (Quantitative, Qualitative, Preference)):
        return value
    if isinstance(like, Qualitative):
        return Qualitative(int(value))
    if isinstance(like, Preference):
        return Preference(int(value))
    return Quantitative(point_mass(int(value)))


@dataclass
class PayoffCurve:
    """Exact finish probability of one player across a grid of own reports."""

    player: int
    grid: list[tuple[object, Fraction]]
    true_length: Optional[int] = None


def payoff_curve(
    spec,
    instance: Instance,
    player: int,
    report_grid: Sequence,
    branch_limit: int = DEFAULT_BRANCH_LIMIT,
    true_length: Optional[int] = None,
) -> PayoffCurve:
    """Replace the player's report by every grid value and exact-evaluate."""
    like = instance.players[player].report
    points = []
    for value in report_grid:
        probe = instance.with_report(player, _as_report(value, like))
        result = exact_evaluate(spec, probe, branch_limit)
        points.append((value, result.per_player_finish_prob[player]))
    return PayoffCurve(player, points, true_length)


@dataclass
class ErrorPropertyReport:
    symmetric: bool
    monotone: bool
    witnesses: list = field(default_factory=list)


def check_error_properties(curve: PayoffCurve, true_length: int) -> ErrorPropertyReport:
    """Exact symmetry and monotonicity of payoff in the report error.

    Symmetry compares reports true_length +/- e pairwise; monotonicity
    requires the payoff never to increase as |error| grows, on each side.
    The grid must be symmetric around true_length.
    """
    payoff = {r: v for r, v in curve.grid}
    errors = sorted({abs(r - true_length) for r in payoff})
    for e in errors:
        if e and (true_length + e in payoff) != (true_length - e in payoff):
            raise ValueError(f"grid not symmetric around {true_length} at error {e}")
    symmetric = True
    monotone = True
    witnesses = []
    for e in errors:
        lo, hi = true_length - e, true_length + e
        if e and lo in payoff and payoff[lo] != payoff[hi]:
            symmetric = False
            witnesses.append(("symmetry", lo, payoff[lo], hi, payoff[hi]))
    for side in (+1, -1):
        previous = None
        for e in errors:
            r = true_length + side * e
            if r not in payoff:
                continue
            if previous is not None and payoff[r] > previous[1]:
                monotone = False
                witnesses.append(("monotonicity", previous[0], previous[1], r, payoff[r]))
            previous = (r, payoff[r])
    return ErrorPropertyReport(symmetric, monotone, witnesses)


def best_response_gap(
    spec,
    instance: Instance,
    player: int,
    honest_report,
    report_grid: Sequence,
    branch_limit: int = DEFAULT_BRANCH_LIMIT,
) -> Fraction:
    """(best payoff over the grid) - (payoff of the honest report).

    The maximum includes the honest report, so the gap is >= 0 by
    construction; a gap of 0 certifies grid-truthfulness.
    """
    like = instance.players[player].report
    honest = _as_report(honest_report, like)

    def value(report: Report) -> Fraction:
        probe = instance.with_report(player, report)
        return exact_evaluate(spec, probe, branch_limit).per_player_finish_prob[player]

    honest_value = value(honest)
    best = honest_value
    for r in report_grid:
        best = max(best, value(_as_report(r, like)))
    return best - honest_value


@dataclass
class CompletenessReport:
    cases: int
    violations: list  # (lengths, deadline, player, finish probability)

    @property
    def ok(self) -> bool:
        return not self.violations


def completeness_check(
    spec,
    n_values: Iterable[int],
    max_len: int,
    deadlines: Iterable[int],
    report_kind: str = "quantitative",
    branch_limit: int = DEFAULT_BRANCH_LIMIT,
) -> CompletenessReport:
    """Exhaustively check: sum of true lengths <= D implies everyone finishes.

    Enumerates every deterministic instance in the grid with truthful
    reports and verifies, over all randomness branches, that each player's
    exact finish probability is 1.
    """
    deadlines = list(deadlines)
    cases = 0
    violations = []
    for n in n_values:
        for lengths in product(range(1, max_len + 1), repeat=n):
            for deadline in deadlines:
                if sum(lengths) > deadline:
                    continue
                cases += 1
                cdfs = [point_mass(l) for l in lengths]
                if report_kind == "qualitative":
                    reports = [Qualitative(l) for l in lengths]
                else:
                    reports = [Quantitative(c) for c in cdfs]
                instance = make_instance(deadline, cdfs, reports)
                result = exact_evaluate(spec, instance, branch_limit)
                for p, prob in enumerate(result.per_player_finish_prob):
                    if prob != 1:
                        violations.append((lengths, deadline, p, prob))
    return CompletenessReport(cases, violations)


def obliviousness_check(
    spec,
    instance: Instance,
    report_profiles: Sequence[Sequence[Report]],
    branch_limit: int = DEFAULT_BRANCH_LIMIT,
) -> bool:
    """True iff exact results are identical across all report profiles."""
    if len(report_profiles) < 2:
        raise ValueError("need at least two report profiles")
    results = []
    for profile in report_profiles:
        probe = instance
        for player, report in enumerate(profile):
            probe = probe.with_report(player, report)
        result = exact_evaluate(spec, probe, branch_limit)
        results.append((result.per_player_finish_prob, result.expected_welfare))
    return all(r == results[0] for r in results[1:])
