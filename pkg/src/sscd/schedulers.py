"""The twelve scheduling mechanisms, as factories producing sessions.

Each mechanism is a ``SchedulerSpec`` (kind + parameters + capability flags)
whose ``build(instance)`` returns a fresh single-use session.  Sessions draw
randomness only through ``env.rng.weighted_choice``, so the exact engine can
enumerate every branch.

Conventions used throughout: ties in argmax computations break toward the
smallest value; ties in orderings break toward the lower player index;
random orders are drawn lazily (one uniform choice among the remaining
players at a time), which is distribution-identical to one uniform choice
over all n! permutations but keeps enumeration trees small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

from .core import (
    Finished,
    Instance,
    LengthCdf,
    Player,
    Preference,
    Qualitative,
    Quantitative,
    SchedulingError,
)

ONE = Fraction(1)


class NotIdenticalInstance(SchedulingError):
    """canonical requires all players to share one distribution."""


class TimeOverflow(SchedulingError):
    """Bounded fair-share grants exceeded the deadline (violated precondition)."""


class SplitOverflow(SchedulingError):
    """General fair-share grants did not fit into two feasible bundles."""


class TooFewPlayers(SchedulingError):
    """complete_lottery needs at least three players."""


class TableLimitExceeded(SchedulingError):
    """complete_nash_dp backward induction exceeded its state limit."""


# ---------------------------------------------------------------------------
# Specs and capabilities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Capabilities:
    adaptivity: str  # "nonadaptive" | "adaptive" | "preemptive"
    oblivious: bool
    complete: bool


CAPABILITIES = {
    "shortest_first": Capabilities("adaptive", False, False),
    "trivial_oblivious": Capabilities("adaptive", True, True),
    "timeout_oblivious": Capabilities("adaptive", True, False),
    "random_threshold_oblivious": Capabilities("adaptive", True, False),
    "canonical": Capabilities("nonadaptive", True, False),
    "fair_share_lottery": Capabilities("nonadaptive", False, False),
    "adaptive_fair_share": Capabilities("adaptive", False, False),
    "complete_lottery": Capabilities("adaptive", False, True),
    "complete_nash_dp": Capabilities("preemptive", False, True),
    "near_deterministic_threshold": Capabilities("adaptive", False, False),
    "forgiving_lottery": Capabilities("adaptive", False, False),
    "forgiving_virtual_length": Capabilities("preemptive", False, True),
}

SCHEDULER_KINDS = tuple(CAPABILITIES)


@dataclass
class SchedulerSpec:
    """A mechanism kind plus its parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    @property
    def capabilities(self) -> Capabilities:
        return CAPABILITIES[self.kind]

    def build(self, instance: Instance):
        """Construct a fresh session for one run against this instance."""
        return _BUILDERS[self.kind](self, instance)

    def to_json_dict(self) -> dict:
        params = {}
        for name, value in self.params.items():
            if isinstance(value, LengthCdf):
                params[name] = [f"{v.numerator}/{v.denominator}" for v in value.values]
            else:
                params[name] = value
        return {"kind": self.kind, "params": params}


def spec_from_json(data: dict) -> SchedulerSpec:
    kind = data["kind"]
    if kind not in CAPABILITIES:
        raise ValueError(f"unknown scheduler kind {kind!r}")
    params = dict(data.get("params") or {})
    if kind == "canonical" and "cdf" in params and params["cdf"] is not None:
        from .core import validate_cdf

        params["cdf"] = validate_cdf([Fraction(v) for v in params["cdf"]])
    return SchedulerSpec(kind, params)


# -- factory helpers --------------------------------------------------------


def shortest_first() -> SchedulerSpec:
    return SchedulerSpec("shortest_first")


def trivial_oblivious() -> SchedulerSpec:
    return SchedulerSpec("trivial_oblivious")


def timeout_oblivious(T: Optional[int] = None) -> SchedulerSpec:
    return SchedulerSpec("timeout_oblivious", {} if T is None else {"T": T})


def random_threshold_oblivious() -> SchedulerSpec:
    return SchedulerSpec("random_threshold_oblivious")


def canonical(cdf: Optional[LengthCdf] = None) -> SchedulerSpec:
    return SchedulerSpec("canonical", {} if cdf is None else {"cdf": cdf})


def fair_share_lottery(mode: str = "general", M: Optional[int] = None) -> SchedulerSpec:
    if mode not in ("general", "bounded"):
        raise ValueError("mode must be 'general' or 'bounded'")
    if mode == "bounded" and M is None:
        raise ValueError("bounded mode requires M")
    params = {"mode": mode}
    if M is not None:
        params["M"] = M
    return SchedulerSpec("fair_share_lottery", params)


def adaptive_fair_share() -> SchedulerSpec:
    return SchedulerSpec("adaptive_fair_share")


def complete_lottery() -> SchedulerSpec:
    return SchedulerSpec("complete_lottery")


def complete_nash_dp(table_limit: int = 500_000, run_phase2: bool = True) -> SchedulerSpec:
    """run_phase2=False ablates the phase-2 execution (lottery choices are
    computed the same way), isolating how much the second phase adds."""
    params = {"table_limit": table_limit}
    if not run_phase2:
        params["run_phase2"] = False
    return SchedulerSpec("complete_nash_dp", params)


def near_deterministic_threshold() -> SchedulerSpec:
    return SchedulerSpec("near_deterministic_threshold")


def forgiving_lottery(unit: Optional[int] = None) -> SchedulerSpec:
    return SchedulerSpec("forgiving_lottery", {} if unit is None else {"unit": unit})


def forgiving_virtual_length() -> SchedulerSpec:
    return SchedulerSpec("forgiving_virtual_length")


def all_specs() -> list[SchedulerSpec]:
    """One default-parameter spec per kind."""
    return [SchedulerSpec(kind) for kind in SCHEDULER_KINDS]


# ---------------------------------------------------------------------------
# Shared session machinery
# ---------------------------------------------------------------------------


class Session:
    """Base session: owns nothing but its preemption declaration."""

    preemptive = False

    def play(self, env) -> None:
        raise NotImplementedError


class _LazyOrder:
    """Uniform random order over players, drawn one element at a time."""

    def __init__(self, rng, pool):
        self._rng = rng
        self._pool = list(pool)

    def has_more(self) -> bool:
        return bool(self._pool)

    def next(self) -> int:
        k = len(self._pool)
        i = self._rng.uniform_choice(k) if k > 1 else 0
        return self._pool.pop(i)


def _argmax_smallest(candidates, key):
    """Candidate with the largest key; ties go to the earliest candidate."""
    best = None
    best_key = None
    for c in candidates:
        k = key(c)
        if best is None or k > best_key:
            best, best_key = c, k
    return best


def _reported_cdf(player: Player) -> LengthCdf:
    if not isinstance(player.report, Quantitative):
        raise ValueError("this mechanism requires quantitative reports")
    return player.report.cdf


def _estimate(player: Player) -> int:
    if not isinstance(player.report, Qualitative):
        raise ValueError("this mechanism requires qualitative reports")
    return player.report.estimate


def _coin(rng, p_heads: Fraction) -> bool:
    """One weighted choice; True with probability p_heads."""
    if p_heads >= 1:
        return True
    if p_heads <= 0:
        return False
    return rng.weighted_choice((p_heads, 1 - p_heads)) == 0


# ---------------------------------------------------------------------------
# Report-reading queue mechanisms
# ---------------------------------------------------------------------------


class _ShortestFirst(Session):
    """Run jobs in increasing reported length, each for its report."""

    def __init__(self, instance: Instance):
        self.instance = instance
        self.reports = [_estimate(p) for p in instance.players]

    def play(self, env) -> None:
        order = sorted(range(self.instance.n), key=lambda i: (self.reports[i], i))
        for p in order:
            if env.remaining == 0:
                break
            env.run(p, min(self.reports[p], env.remaining))


class _TrivialOblivious(Session):
    """Random order, run each job to completion, no aborts."""

    def __init__(self, instance: Instance):
        self.instance = instance

    def play(self, env) -> None:
        order = _LazyOrder(env.rng, range(self.instance.n))
        while env.remaining > 0 and order.has_more():
            env.run(order.next(), env.remaining)


def default_timeout(n: int, D: int) -> int:
    """ceil(D / sqrt(n)) in exact integer arithmetic."""
    t = math.isqrt(D * D // n)
    while t * t * n < D * D:
        t += 1
    return max(1, t)


class _TimeoutOblivious(Session):
    """Random order with a per-job timeout."""

    def __init__(self, instance: Instance, T: Optional[int]):
        self.instance = instance
        self.T = T if T is not None else default_timeout(instance.n, instance.deadline)
        if self.T < 1:
            raise ValueError("timeout must be >= 1")

    def play(self, env) -> None:
        order = _LazyOrder(env.rng, range(self.instance.n))
        while env.remaining > 0 and order.has_more():
            env.run(order.next(), min(self.T, env.remaining))


def _ceil_log2(n: int) -> int:
    return max(1, (n - 1).bit_length())


class _RandomThresholdOblivious(Session):
    """Timeout T = 2^i * ceil(D/n) for uniform i in 1..ceil(log2 n)."""

    def __init__(self, instance: Instance):
        self.instance = instance

    def play(self, env) -> None:
        n, D = self.instance.n, self.instance.deadline
        m = _ceil_log2(n)
        i = env.rng.uniform_choice(m) + 1
        T = min((2**i) * -(-D // n), D)
        order = _LazyOrder(env.rng, range(n))
        while env.remaining > 0 and order.has_more():
            env.run(order.next(), min(T, env.remaining))


class _Canonical(Session):
    """For identical jobs: pick t maximizing f(t)/t and run D // t jobs."""

    def __init__(self, instance: Instance, cdf: Optional[LengthCdf]):
        self.instance = instance
        first = instance.players[0].true_cdf
        if cdf is None:
            cdf = first
        for p in instance.players:
            if p.true_cdf != cdf:
                raise NotIdenticalInstance("players do not share the scheduler's CDF")
        n, D = instance.n, instance.deadline
        lo = -(-D // n)
        self.t_star = _argmax_smallest(range(lo, D + 1), lambda t: Fraction(cdf.at(t), t))
        self.slots = D // self.t_star

    def play(self, env) -> None:
        order = _LazyOrder(env.rng, range(self.instance.n))
        for _ in range(self.slots):
            p = order.next()
            obs = env.run(p, self.t_star)
            leftover = self.t_star - obs.after if isinstance(obs, Finished) else 0
            if leftover > 0:
                env.idle(leftover)


# ---------------------------------------------------------------------------
# Fair-share lottery (nonadaptive, Theorem-3 style)
# ---------------------------------------------------------------------------


def _chosen_parameter(player: Player, u: Fraction, cap: int) -> int:
    """The lottery length t in 1..cap maximizing f(t) * min(1, u/t)."""
    if isinstance(player.report, Preference):
        t = player.report.t
        if t > cap:
            raise ValueError(f"preference t={t} exceeds the mode bound {cap}")
        return t
    cdf = _reported_cdf(player)
    return _argmax_smallest(
        range(1, cap + 1), lambda t: cdf.at(t) * min(ONE, Fraction(u, t))
    )


def _first_fit_decreasing(grants: list[tuple[int, int]], capacity: int):
    """Pack (player, t) grants into bins of the given capacity."""
    bins: list[tuple[int, list]] = []
    for player, t in sorted(grants, key=lambda g: -g[1]):
        for b, (load, members) in enumerate(bins):
            if load + t <= capacity:
                bins[b] = (load + t, members + [(player, t)])
                break
        else:
            bins.append((t, [(player, t)]))
    order = {g: i for i, g in enumerate(grants)}
    return [sorted(members, key=order.get) for _, members in bins]


@dataclass(frozen=True)
class _FairSharePlan:
    cells: tuple  # (weight, bundles) with bundles a tuple of grant tuples
    weights: tuple  # cell weights, kept as one stable tuple for the sampler


# Instance hashing is linear in the player count, so plans are memoized by
# instance identity (the entry pins the instance to keep its id valid).
_PLAN_CACHE: dict = {}


def _fair_share_plan(instance: Instance, mode: str, M: Optional[int]) -> _FairSharePlan:
    key = (id(instance), mode, M)
    entry = _PLAN_CACHE.get(key)
    if entry is not None and entry[0] is instance:
        return entry[1]
    if len(_PLAN_CACHE) > 2048:
        _PLAN_CACHE.clear()
    plan = _compute_fair_share_plan(instance, mode, M)
    _PLAN_CACHE[key] = (instance, plan)
    return plan


def _compute_fair_share_plan(instance: Instance, mode: str, M: Optional[int]) -> _FairSharePlan:
    n, D = instance.n, instance.deadline
    if mode == "bounded":
        if not 1 <= M <= D:
            raise ValueError("bounded mode needs 1 <= M <= D")
        u, cap = Fraction(D - M, n), M
    else:
        u, cap = Fraction(D, n), D
    choices = [_chosen_parameter(p, u, cap) for p in instance.players]
    probs = [min(ONE, Fraction(u, t)) if t > 0 else ONE for t in choices]
    order = sorted(range(n), key=lambda i: (choices[i], i))

    starts = {}
    acc = Fraction(0)
    for i in order:
        starts[i] = acc
        acc += probs[i]

    # Selection events are constant between interval-endpoint fractional
    # parts, so the uniform draw over grid midpoints collapses to a weighted
    # choice over constancy cells of r in [0, 1).
    breakpoints = {Fraction(0), Fraction(1)}
    for i in order:
        breakpoints.add(starts[i] % 1)
        breakpoints.add((starts[i] + probs[i]) % 1)
    points = sorted(breakpoints)
    cells = []
    for lo, hi in zip(points, points[1:]):
        weight = hi - lo
        if weight == 0:
            continue
        r = (lo + hi) / 2
        grants = []
        for i in order:
            z = math.ceil(starts[i] - r)
            if z + r < starts[i] + probs[i]:
                grants.append((i, choices[i]))
        total = sum(t for _, t in grants)
        if total <= D:
            bundles = (tuple(grants),)
        elif mode == "bounded":
            raise TimeOverflow(f"bounded grants total {total} > deadline {D}")
        else:
            packed = _first_fit_decreasing(grants, D)
            if len(packed) > 2:
                raise SplitOverflow(f"grants needed {len(packed)} feasible bundles")
            bundles = tuple(tuple(b) for b in packed)
        cells.append((weight, bundles))
    return _FairSharePlan(tuple(cells), tuple(w for w, _ in cells))


class _FairShareLottery(Session):
    """Interval lottery granting t_i steps with probability min(1, u/t_i)."""

    def __init__(self, instance: Instance, mode: str, M: Optional[int]):
        self.plan = _fair_share_plan(instance, mode, M)

    def play(self, env) -> None:
        cells = self.plan.cells
        cell = 0 if len(cells) == 1 else env.rng.weighted_choice(self.plan.weights)
        bundles = cells[cell][1]
        bundle = bundles[0] if len(bundles) == 1 else bundles[env.rng.uniform_choice(len(bundles))]
        for player, t in bundle:
            obs = env.run(player, t)
            leftover = t - obs.after if isinstance(obs, Finished) else 0
            if leftover > 0 and env.remaining >= leftover:
                env.idle(leftover)


# ---------------------------------------------------------------------------
# Adaptive fair share and the complete mechanisms
# ---------------------------------------------------------------------------


class _AdaptiveFairShare(Session):
    """Round-based fair share: the first player may run to completion."""

    def __init__(self, instance: Instance):
        self.instance = instance
        self.cdfs = [_reported_cdf(p) for p in instance.players]

    def play(self, env) -> None:
        n = self.instance.n
        completion_mode = _coin(env.rng, Fraction(1, 2))
        order = _LazyOrder(env.rng, range(n))
        for i in range(n):
            if env.remaining == 0:
                break
            p = order.next()
            if i == 0 and completion_mode:
                env.run(p, env.remaining)
                continue
            self._lottery_round(env, p, remaining_players=n - i)

    def _lottery_round(self, env, p: int, remaining_players: int) -> None:
        budget = env.remaining
        cap = Fraction(budget, remaining_players)
        cdf = self.cdfs[p]
        t = _argmax_smallest(
            range(1, budget + 1), lambda s: cdf.at(s) * min(ONE, cap / s)
        )
        if _coin(env.rng, min(ONE, cap / t)):
            env.run(p, t)


class _CompleteLottery(Session):
    """Run each player until n_i - 1 steps remain, then an expectation-1 lottery."""

    def __init__(self, instance: Instance):
        if instance.n < 3:
            raise TooFewPlayers("complete_lottery requires n >= 3")
        self.instance = instance
        self.cdfs = [_reported_cdf(p) for p in instance.players]

    def play(self, env) -> None:
        n = self.instance.n
        order = _LazyOrder(env.rng, range(n))
        for i in range(n):
            if env.remaining == 0:
                break
            p = order.next()
            players_left = n - i
            progress = 0
            preliminary = env.remaining - (players_left - 1)
            if preliminary > 0:
                obs = env.run(p, preliminary)
                if isinstance(obs, Finished):
                    continue
                progress = preliminary
            budget = env.remaining
            if budget == 0:
                continue
            cdf = self.cdfs[p]
            base = cdf.at(progress)
            t = _argmax_smallest(
                range(1, budget + 1),
                lambda s: Fraction(cdf.at(progress + s) - base, s),
            )
            if _coin(env.rng, Fraction(1, t)):
                env.run(p, t)


class _NashTable:
    """Backward induction for the two-phase complete scheduler.

    States are (round index, time left, progresses of earlier unfinished
    players); values are per-player finish-probability vectors under the
    assumption that all reports are truthful and later players also play the
    table's choices.  Phase 2 resumes unfinished players in round order.
    """

    def __init__(self, cdfs: tuple, deadline: int, limit: int):
        self.cdfs = cdfs
        self.n = len(cdfs)
        self.deadline = deadline
        self.limit = limit
        self._round_memo: dict = {}
        self._phase2_memo: dict = {}
        self._choices: dict = {}

    def _check_size(self) -> None:
        if len(self._round_memo) + len(self._phase2_memo) > self.limit:
            raise TableLimitExceeded(f"state limit {self.limit} exceeded")

    def choice(self, i: int, time_left: int, unfinished: tuple) -> int:
        key = (i, time_left, unfinished)
        if key not in self._choices:
            self.round_value(i, time_left, unfinished)
        return self._choices[key]

    def round_value(self, i: int, time_left: int, unfinished: tuple) -> tuple:
        if i == self.n:
            return self.phase2_value(time_left, unfinished)
        key = (i, time_left, unfinished)
        cached = self._round_memo.get(key)
        if cached is not None:
            return cached
        self._check_size()
        m = self.n - i
        cap = time_left // m
        skipped = unfinished + ((i, 0),)
        if cap < 1 or time_left < 1:
            value = self.round_value(i + 1, time_left, skipped)
            self._choices[key] = 0
            self._round_memo[key] = value
            return value
        lose_value = self.round_value(i + 1, time_left, skipped)
        best_t, best_value = 0, lose_value
        for t in range(1, time_left + 1):
            win_prob = min(ONE, Fraction(cap, t))
            win_value = self._win_value(i, time_left, unfinished, t)
            value = tuple(
                win_prob * w + (1 - win_prob) * l
                for w, l in zip(win_value, lose_value)
            )
            if best_t == 0 or value[i] > best_value[i]:
                best_t, best_value = t, value
        self._choices[key] = best_t
        self._round_memo[key] = best_value
        return best_value

    def _win_value(self, i: int, time_left: int, unfinished: tuple, t: int) -> tuple:
        cdf = self.cdfs[i]
        total = [Fraction(0)] * self.n
        survive = ONE
        for s in range(1, t + 1):
            mass = cdf.pmf(s)
            if mass == 0:
                continue
            survive -= mass
            cont = self.round_value(i + 1, time_left - s, unfinished)
            for j in range(self.n):
                total[j] += mass * cont[j]
            total[i] += mass
        if survive > 0:
            cont = self.round_value(i + 1, time_left - t, unfinished + ((i, t),))
            for j in range(self.n):
                total[j] += survive * cont[j]
        return tuple(total)

    def phase2_value(self, time_left: int, unfinished: tuple) -> tuple:
        key = (time_left, unfinished)
        cached = self._phase2_memo.get(key)
        if cached is not None:
            return cached
        self._check_size()
        if not unfinished or time_left == 0:
            value = (Fraction(0),) * self.n
            self._phase2_memo[key] = value
            return value
        (player, progress), rest = unfinished[0], unfinished[1:]
        cdf = self.cdfs[player]
        alive = 1 - cdf.at(progress)
        total = [Fraction(0)] * self.n
        consumed_all = ONE
        for length in range(progress + 1, progress + time_left + 1):
            mass = cdf.pmf(length)
            if mass == 0:
                continue
            share = mass / alive
            consumed_all -= share
            cont = self.phase2_value(time_left - (length - progress), rest)
            for j in range(self.n):
                total[j] += share * cont[j]
            total[player] += share
        # Mass beyond the budget blocks the machine until the deadline.
        value = tuple(total)
        self._phase2_memo[key] = value
        return value


@lru_cache(maxsize=64)
def _nash_table(cdfs: tuple, deadline: int, limit: int) -> _NashTable:
    return _NashTable(cdfs, deadline, limit)


class _CompleteNashDp(Session):
    """Two-phase complete scheduler with table-driven lottery choices."""

    preemptive = True

    def __init__(self, instance: Instance, table_limit: int, run_phase2: bool = True):
        self.instance = instance
        self.cdfs = [_reported_cdf(p) for p in instance.players]
        self.table_limit = table_limit
        self.run_phase2 = run_phase2

    def play(self, env) -> None:
        n = self.instance.n
        order: list[int] = []
        lazy = _LazyOrder(env.rng, range(n))
        if _coin(env.rng, Fraction(1, 2)):
            # Run a random job to completion, then everything else.
            while env.remaining > 0 and lazy.has_more():
                env.run(lazy.next(), env.remaining)
            return
        while lazy.has_more():
            order.append(lazy.next())
        table = _nash_table(
            tuple(self.cdfs[p] for p in order), self.instance.deadline, self.table_limit
        )
        unfinished: list[tuple[int, int]] = []
        state: tuple = ()
        for i, p in enumerate(order):
            budget = env.remaining
            cap = budget // (n - i)
            t = table.choice(i, budget, state) if cap >= 1 else 0
            if t < 1:
                unfinished.append((p, 0))
                state = state + ((i, 0),)
                continue
            if _coin(env.rng, min(ONE, Fraction(cap, t))):
                obs = env.run(p, t)
                if isinstance(obs, Finished):
                    continue
                unfinished.append((p, t))
                state = state + ((i, t),)
            else:
                unfinished.append((p, 0))
                state = state + ((i, 0),)
        if not self.run_phase2:
            return
        for p, _ in unfinished:
            if env.remaining == 0:
                break
            env.run(p, env.remaining)


# ---------------------------------------------------------------------------
# Near-deterministic threshold mechanism
# ---------------------------------------------------------------------------


def _dangerous_safe_factor(n: int) -> int:
    """2 ** ceil(sqrt(log2 n)) via exact integer arithmetic."""
    s = 0
    while 2 ** (s * s) < n:
        s += 1
    return 2**s


@lru_cache(maxsize=256)
def _threshold_from_reports(reports: tuple, D: int) -> int:
    """Doubling threshold scan: prefixes of the sorted reports, largest first.

    A report is dangerous at threshold t when t_i <= t < 2 t_i (the job is
    eligible but might overrun) and safe when 2 t_i <= t.  The first
    candidate with dangerous count <= factor * safe count wins; D is the
    fallback when no candidate qualifies.
    """
    n = len(reports)
    factor = _dangerous_safe_factor(n)
    ordered = sorted(reports)

    def dangerous(t):
        return sum(1 for r in ordered if r <= t < 2 * r)

    def safe(t):
        return sum(1 for r in ordered if 2 * r <= t)

    for p in range(n, 0, -1):
        t = math.ceil(Fraction(2 * sum(ordered[:p]), p))
        while t <= D:
            if dangerous(t) <= factor * safe(t):
                return t
            t *= 2
    return D


class _NearDeterministicThreshold(Session):
    """Run reports below a data-driven threshold; long shots get a 1/(2n) lottery."""

    def __init__(self, instance: Instance):
        self.instance = instance
        self.reports = [_estimate(p) for p in instance.players]
        self.threshold = _threshold_from_reports(
            tuple(self.reports), instance.deadline
        )

    def play(self, env) -> None:
        n = self.instance.n
        t = self.threshold
        eligible = [i for i in range(n) if self.reports[i] <= t]
        order = _LazyOrder(env.rng, eligible)
        while env.remaining > 0 and order.has_more():
            env.run(order.next(), min(t, env.remaining))
        for p in range(n):
            if self.reports[p] <= t:
                continue
            if env.remaining == 0:
                break
            if _coin(env.rng, Fraction(1, 2 * n)):
                env.run(p, env.remaining)


# ---------------------------------------------------------------------------
# Forgiving mechanisms
# ---------------------------------------------------------------------------


class _ForgivingLottery(Session):
    """Fair-share selection plus geometric forgiveness past the report.

    A selected player gets his reported steps; while unfinished after
    r + j steps he continues one more step with probability
    (r + 2j) / (r + 2j + 2), all bounded by the remaining budget.
    """

    def __init__(self, instance: Instance, unit: Optional[int]):
        self.instance = instance
        self.reports = [_estimate(p) for p in instance.players]
        self.unit = unit

    def play(self, env) -> None:
        n = self.instance.n
        order = _LazyOrder(env.rng, range(n))
        for i in range(n):
            if env.remaining == 0:
                break
            p = order.next()
            u = self.unit if self.unit is not None else env.remaining // (n - i)
            r = self.reports[p]
            if u < 1:
                continue
            if not _coin(env.rng, min(ONE, Fraction(u, r))):
                continue
            grant = min(r, env.remaining)
            obs = env.run(p, grant)
            if isinstance(obs, Finished) or grant < r:
                continue
            j = 0
            while env.remaining > 0:
                if not _coin(env.rng, Fraction(r + 2 * j, r + 2 * j + 2)):
                    break
                obs = env.run(p, 1)
                if isinstance(obs, Finished):
                    break
                j += 1


class _ForgivingVirtualLength(Session):
    """Deterministic preemptive mechanism keyed by virtual lengths.

    Every step runs the unfinished player with the smallest virtual length
    (ties toward the lower index); a player who runs past his report has 2
    added to his virtual length per extra step.
    """

    preemptive = True

    def __init__(self, instance: Instance):
        self.instance = instance
        self.reports = [_estimate(p) for p in instance.players]
        self.virtual_lengths = list(self.reports)
        self.counters = [0] * instance.n

    def play(self, env) -> None:
        alive = set(range(self.instance.n))
        v, c = self.virtual_lengths, self.counters
        while alive and env.remaining > 0:
            p = min(alive, key=lambda i: (v[i], i))
            obs = env.run(p, 1)
            c[p] += 1
            if isinstance(obs, Finished):
                alive.discard(p)
            elif c[p] >= self.reports[p]:
                v[p] += 2


# ---------------------------------------------------------------------------
# Builder table
# ---------------------------------------------------------------------------

_BUILDERS = {
    "shortest_first": lambda spec, inst: _ShortestFirst(inst),
    "trivial_oblivious": lambda spec, inst: _TrivialOblivious(inst),
    "timeout_oblivious": lambda spec, inst: _TimeoutOblivious(inst, spec.params.get("T")),
    "random_threshold_oblivious": lambda spec, inst: _RandomThresholdOblivious(inst),
    "canonical": lambda spec, inst: _Canonical(inst, spec.params.get("cdf")),
    "fair_share_lottery": lambda spec, inst: _FairShareLottery(
        inst, spec.params.get("mode", "general"), spec.params.get("M")
    ),
    "adaptive_fair_share": lambda spec, inst: _AdaptiveFairShare(inst),
    "complete_lottery": lambda spec, inst: _CompleteLottery(inst),
    "complete_nash_dp": lambda spec, inst: _CompleteNashDp(
        inst, spec.params.get("table_limit", 500_000), spec.params.get("run_phase2", True)
    ),
    "near_deterministic_threshold": lambda spec, inst: _NearDeterministicThreshold(inst),
    "forgiving_lottery": lambda spec, inst: _ForgivingLottery(inst, spec.params.get("unit")),
    "forgiving_virtual_length": lambda spec, inst: _ForgivingVirtualLength(inst),
}
