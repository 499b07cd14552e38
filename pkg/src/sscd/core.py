"""Core domain types for deadline scheduling games.

Time is discrete, in integer steps 1..D.  All probabilities are exact
``fractions.Fraction`` values so that exact evaluation is bit-reproducible;
floats appear only in emitted reports.  Distribution mass above a CDF's
horizon means "the job never finishes within the horizon" and is kept
explicit (``NEVER_FINISHES``) rather than truncated away.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from random import Random
from typing import Optional, Sequence, Union

#: Realized length of a job that never finishes within its CDF horizon.
NEVER_FINISHES = math.inf

ZERO = Fraction(0)
ONE = Fraction(1)


class SchedulingError(Exception):
    """Base class for all errors raised by this package."""


class MonotonicityViolation(SchedulingError):
    """CDF values decreased somewhere."""


class RangeViolation(SchedulingError):
    """CDF value outside [0, 1]."""


# ---------------------------------------------------------------------------
# Length distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LengthCdf:
    """Cumulative distribution over integer job lengths 1..lmax.

    ``values[t-1]`` is Pr[length <= t].  ``1 - values[-1]`` is the mass of
    "never finishes within the horizon".
    """

    values: tuple[Fraction, ...]

    @property
    def lmax(self) -> int:
        return len(self.values)

    def at(self, t: int) -> Fraction:
        """Pr[length <= t] for any integer t >= 0."""
        if t <= 0:
            return ZERO
        if t >= len(self.values):
            return self.values[-1]
        return self.values[t - 1]

    def pmf(self, t: int) -> Fraction:
        """Pr[length == t]."""
        return self.at(t) - self.at(t - 1)

    @property
    def residual_mass(self) -> Fraction:
        """Pr[never finishes within the horizon]."""
        return ONE - self.values[-1]

    def support(self) -> list[int]:
        """Lengths with positive probability (excludes NEVER_FINISHES)."""
        return [t for t in range(1, self.lmax + 1) if self.pmf(t) > 0]

    def next_support(self, progress: int) -> Optional[int]:
        """Smallest length > progress with positive mass, or None."""
        for t in range(progress + 1, self.lmax + 1):
            if self.pmf(t) > 0:
                return t
        return None


def validate_cdf(raw: Sequence) -> LengthCdf:
    """Build a LengthCdf from a sequence of rationals, checking invariants.

    Raises RangeViolation if any value leaves [0, 1], MonotonicityViolation
    if the sequence ever decreases.  Values are retained exactly.
    """
    if len(raw) == 0:
        raise RangeViolation("CDF needs at least one value")
    values = tuple(Fraction(v) for v in raw)
    for t, v in enumerate(values, start=1):
        if not (ZERO <= v <= ONE):
            raise RangeViolation(f"CDF value at t={t} is {v}, outside [0, 1]")
    for t in range(1, len(values)):
        if values[t] < values[t - 1]:
            raise MonotonicityViolation(
                f"CDF decreases from {values[t - 1]} to {values[t]} at t={t + 1}"
            )
    return LengthCdf(values)


def point_mass(length: int) -> LengthCdf:
    """Deterministic job of the given length."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return LengthCdf(tuple([ZERO] * (length - 1) + [ONE]))


@lru_cache(maxsize=4096)
def _sampling_table(cdf: LengthCdf) -> tuple[tuple, tuple[Fraction, ...]]:
    support = cdf.support()
    weights = [cdf.pmf(t) for t in support]
    outcomes: list = list(support)
    if cdf.residual_mass > 0:
        weights.append(cdf.residual_mass)
        outcomes.append(NEVER_FINISHES)
    return tuple(outcomes), tuple(weights)


def sample_length(cdf: LengthCdf, rng: "RandomSource"):
    """Draw a realized length (or NEVER_FINISHES) with one weighted choice."""
    outcomes, weights = _sampling_table(cdf)
    return outcomes[rng.weighted_choice(weights)]


# ---------------------------------------------------------------------------
# Reports and instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Quantitative:
    """Report of a full length distribution."""

    cdf: LengthCdf


@dataclass(frozen=True)
class Qualitative:
    """Report of a single length estimate."""

    estimate: int

    def __post_init__(self):
        if self.estimate < 1:
            raise ValueError("estimate must be >= 1")


@dataclass(frozen=True)
class Preference:
    """Directly chosen lottery parameter t."""

    t: int

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be >= 1")


Report = Union[Quantitative, Qualitative, Preference]


@dataclass(frozen=True)
class Player:
    true_cdf: LengthCdf
    report: Report


@dataclass(frozen=True)
class Instance:
    """A deadline-scheduling instance: deadline, players, a label."""

    deadline: int
    players: tuple[Player, ...]
    label: str = ""

    def __post_init__(self):
        if self.deadline < 1:
            raise ValueError("deadline must be >= 1")
        if len(self.players) < 1:
            raise ValueError("need at least one player")

    @property
    def n(self) -> int:
        return len(self.players)

    def with_report(self, player: int, report: Report) -> "Instance":
        """Copy of this instance with one player's report replaced."""
        players = list(self.players)
        players[player] = Player(players[player].true_cdf, report)
        return Instance(self.deadline, tuple(players), self.label)


def make_instance(deadline, cdfs, reports=None, label="") -> Instance:
    """Convenience constructor; reports default to truthful quantitative."""
    cdfs = list(cdfs)
    if reports is None:
        reports = [Quantitative(c) for c in cdfs]
    players = tuple(Player(c, r) for c, r in zip(cdfs, reports))
    return Instance(deadline, players, label)


# ---------------------------------------------------------------------------
# Directives and observations (scheduler <-> engine protocol)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Run:
    player: int
    allotment: int


@dataclass(frozen=True)
class Idle:
    steps: int


@dataclass(frozen=True)
class Halt:
    pass


Directive = Union[Run, Idle, Halt]


@dataclass(frozen=True)
class Finished:
    """Player finished after s steps of the current allotment (1 <= s)."""

    player: int
    after: int


@dataclass(frozen=True)
class Exhausted:
    """Player ran the full allotment without finishing."""

    player: int


Observation = Union[Finished, Exhausted]


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


class RandomSource:
    """Single randomness primitive: a finite weighted choice.

    Schedulers draw randomness only through this interface, with exact
    rational weights summing to 1.  A sampling-backed source is
    deterministic given its seed; the exact engine substitutes an
    enumeration-backed source that explores every branch.
    """

    def weighted_choice(self, weights: Sequence[Fraction]) -> int:
        raise NotImplementedError

    def uniform_choice(self, k: int) -> int:
        """Uniform choice over k branches (a weighted choice with equal weights)."""
        if k == 1:
            return 0
        return self.weighted_choice(_uniform_weights(k))


@lru_cache(maxsize=1024)
def _uniform_weights(k: int) -> tuple[Fraction, ...]:
    return (Fraction(1, k),) * k


@lru_cache(maxsize=4096)
def _integerized(weights: tuple) -> tuple[list[int], int]:
    """Cumulative integer weights over a common denominator (validated)."""
    check_weights(weights)
    denom = 1
    for w in weights:
        denom = denom * w.denominator // math.gcd(denom, w.denominator)
    cumulative = []
    acc = 0
    for w in weights:
        acc += w.numerator * (denom // w.denominator)
        cumulative.append(acc)
    return cumulative, denom


def check_weights(weights: Sequence[Fraction]) -> None:
    if any(w < 0 for w in weights):
        raise ValueError("weights must be nonnegative")
    if sum(weights) != 1:
        raise ValueError(f"weights must sum to 1, got {sum(weights)}")


# Stable weight tuples (sampling tables, cached plans) are integerized once
# and looked up by identity; the entry pins the tuple so its id stays valid.
_TABLE_CACHE: dict[int, tuple] = {}


class SampledSource(RandomSource):
    """Pseudo-random source, deterministic given a 64-bit seed."""

    def __init__(self, seed: int):
        self._rng = Random(seed)

    def uniform_choice(self, k: int) -> int:
        return self._rng.randrange(k) if k > 1 else 0

    def weighted_choice(self, weights: Sequence[Fraction]) -> int:
        if len(weights) == 2:
            w0 = weights[0]
            return 0 if self._rng.randrange(w0.denominator) < w0.numerator else 1
        if isinstance(weights, tuple):
            entry = _TABLE_CACHE.get(id(weights))
            if entry is None or entry[0] is not weights:
                if len(_TABLE_CACHE) > 8192:
                    _TABLE_CACHE.clear()
                entry = (weights, *_integerized(weights))
                _TABLE_CACHE[id(weights)] = entry
            _, cumulative, total = entry
        else:
            cumulative, total = _integerized(tuple(weights))
        draw = self._rng.randrange(total)
        return bisect_right(cumulative, draw)


# ---------------------------------------------------------------------------
# Execution traces
# ---------------------------------------------------------------------------


@dataclass
class PlayerEvents:
    """Per-player outcome in a trace: run segments and finish step."""

    segments: list[tuple[int, int]] = field(default_factory=list)
    finished_at: Optional[int] = None

    @property
    def steps_run(self) -> int:
        return sum(end - start + 1 for start, end in self.segments)


@dataclass
class ExecutionTrace:
    """Realized timeline of one run: per-step occupancy and per-player events.

    ``timeline[k]`` is the player index that ran in step k+1, or None for an
    idle step.  ``total_used`` counts consumed steps (run or idle) and never
    exceeds the deadline.  The per-step timeline can be suppressed for bulk
    sampling; ``total_used`` is tracked either way.
    """

    deadline: int
    timeline: list[Optional[int]] = field(default_factory=list)
    events: dict[int, PlayerEvents] = field(default_factory=dict)
    total_used: int = 0

    def finished_players(self) -> list[int]:
        return sorted(p for p, ev in self.events.items() if ev.finished_at is not None)

    def welfare(self) -> int:
        return len(self.finished_players())
