"""Fairness and welfare measures, plus offline and preemptive baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

from .core import NEVER_FINISHES, Instance, LengthCdf, SchedulingError

ONE = Fraction(1)


class StateLimitExceeded(SchedulingError):
    """The preemptive-optimum search exceeded its state budget."""


def fair_share(cdf: LengthCdf, n: int, deadline: int) -> Fraction:
    """max of f(t) * D / (t * n) over ceil(D/n) <= t <= D, clamped to 1.

    This is the finish probability the player could claim if all jobs were
    clones of his and the canonical schedule were used.
    """
    lo = -(-deadline // n)
    best = Fraction(0)
    for t in range(lo, deadline + 1):
        value = cdf.at(t) * Fraction(deadline, t * n)
        if value > best:
            best = value
    return min(best, ONE)


@dataclass
class FairnessRow:
    player: int
    fair_share: Fraction
    achieved: object
    ratio: object  # achieved / fair_share; None when fair_share == 0


@dataclass
class FairnessReport:
    rows: list[FairnessRow]
    rho: object  # min ratio over players with positive fair share
    vacuous: bool = False  # every fair share was zero


def fairness_ratio(result, instance: Instance) -> FairnessReport:
    """Per-player fair shares and achieved finish probabilities, with rho.

    Exact results give exact rational ratios; Monte Carlo results give float
    ratios.  Players whose fair share is zero are excluded from rho; if that
    excludes everyone, rho is reported as +inf with the vacuous flag set.
    """
    rows = []
    ratios = []
    for i, player in enumerate(instance.players):
        share = fair_share(player.true_cdf, instance.n, instance.deadline)
        achieved = result.per_player_finish_prob[i]
        ratio = None
        if share > 0:
            ratio = achieved / share
            ratios.append(ratio)
        rows.append(FairnessRow(i, share, achieved, ratio))
    if ratios:
        return FairnessReport(rows, min(ratios))
    return FairnessReport(rows, math.inf, vacuous=True)


def realized_optimal_welfare(lengths: Sequence, deadline: int) -> int:
    """Most jobs finishable by the deadline: greedy over sorted lengths."""
    finite = sorted(int(l) for l in lengths if l is not NEVER_FINISHES and l != math.inf)
    used = 0
    count = 0
    for l in finite:
        if used + l > deadline:
            break
        used += l
        count += 1
    return count


# ---------------------------------------------------------------------------
# Exact optimum over all adaptive preemptive policies
# ---------------------------------------------------------------------------


class _PreemptiveOptimum:
    """Backward induction over (time left, per-job progress) states.

    Jobs are grouped by distribution so identical instances collapse to
    sorted progress multisets.  Steps through zero-mass CDF regions reveal
    nothing and cannot finish a job, so actions jump straight to the next
    support point; this prunes only dominated policies and leaves the
    optimum unchanged.
    """

    def __init__(self, cdfs: Sequence[LengthCdf], state_limit: int):
        unique: list[LengthCdf] = []
        self.job_class = []
        for cdf in cdfs:
            if cdf not in unique:
                unique.append(cdf)
            self.job_class.append(unique.index(cdf))
        self.cdfs = unique
        self.state_limit = state_limit
        self.memo: dict = {}

    def value(self, time_left: int, jobs: tuple) -> Fraction:
        """jobs: sorted tuple of (class id, progress) for alive jobs."""
        jobs = tuple(
            (c, p) for c, p in jobs if self.cdfs[c].next_support(p) is not None
        )
        if time_left == 0 or not jobs:
            return Fraction(0)
        key = (time_left, jobs)
        cached = self.memo.get(key)
        if cached is not None:
            return cached
        if len(self.memo) >= self.state_limit:
            raise StateLimitExceeded(f"more than {self.state_limit} DP states")
        best = Fraction(0)
        seen = set()
        for idx, (c, progress) in enumerate(jobs):
            if (c, progress) in seen:
                continue
            seen.add((c, progress))
            cdf = self.cdfs[c]
            target = cdf.next_support(progress)
            cost = target - progress
            if cost > time_left:
                continue
            alive = 1 - cdf.at(progress)
            p_finish = cdf.pmf(target) / alive
            rest = jobs[:idx] + jobs[idx + 1 :]
            value = p_finish * (1 + self.value(time_left - cost, rest))
            if p_finish < 1:
                survived = tuple(sorted(rest + ((c, target),)))
                value += (1 - p_finish) * self.value(time_left - cost, survived)
            if value > best:
                best = value
        self.memo[key] = best
        return best


def exact_preemptive_optimum(instance: Instance, state_limit: int = 2_000_000) -> Fraction:
    """Expected welfare of the best adaptive preemptive policy, exactly."""
    solver = _PreemptiveOptimum([p.true_cdf for p in instance.players], state_limit)
    start = tuple(sorted((c, 0) for c in solver.job_class))
    return solver.value(instance.deadline, start)


# ---------------------------------------------------------------------------
# Canonical-schedule baselines
# ---------------------------------------------------------------------------


def canonical_parameter(cdf: LengthCdf, n: int, deadline: int) -> int:
    """Smallest t in ceil(D/n)..D maximizing f(t)/t."""
    lo = -(-deadline // n)
    best_t = lo
    best = Fraction(-1)
    for t in range(lo, deadline + 1):
        value = Fraction(cdf.at(t), t)
        if value > best:
            best, best_t = value, t
    return best_t


def canonical_expected_welfare(cdf: LengthCdf, n: int, deadline: int) -> Fraction:
    """Expected welfare of the canonical schedule on n identical jobs."""
    t = canonical_parameter(cdf, n, deadline)
    return (deadline // t) * cdf.at(t)


def canonical_gap_ratio(k: int, n: int, deadline: int, state_limit: int = 2_000_000) -> Fraction:
    """Preemptive optimum over canonical welfare on the flat-then-linear gap instance."""
    from .instances import gen_canonical_gap

    instance = gen_canonical_gap(k, n, deadline)
    cdf = instance.players[0].true_cdf
    optimum = exact_preemptive_optimum(instance, state_limit)
    return optimum / canonical_expected_welfare(cdf, n, deadline)
