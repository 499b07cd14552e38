"""Execution engine: drives scheduler sessions against instances.

Two evaluation modes share one execution path:

* ``monte_carlo`` samples realized lengths per trial and runs the session
  with a seeded random source;
* ``exact_evaluate`` enumerates every weighted-choice branch a session takes
  (scheduler randomness and nature's length randomness alike) and returns
  exact rational probabilities.

Exact mode resolves lengths lazily by default: a player's length branch is
opened only when the engine first needs to answer "does it finish within
this allotment", conditioning the CDF on survival so far.  This is
mathematically equivalent to sampling all lengths upfront (``lazy=False``
does exactly that, and the equivalence is covered by tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .core import (
    NEVER_FINISHES,
    ExecutionTrace,
    Exhausted,
    Finished,
    Instance,
    Observation,
    PlayerEvents,
    RandomSource,
    SampledSource,
    SchedulingError,
    check_weights,
    sample_length,
)

DEFAULT_BRANCH_LIMIT = 10**7


class BudgetExceeded(SchedulingError):
    """A session issued directives overrunning the deadline (a scheduler bug)."""


class PreemptionNotDeclared(SchedulingError):
    """A session resumed an aborted player without declaring preemption."""


class SchedulerProtocolError(SchedulingError):
    """A session issued a malformed directive (e.g. ran a finished player)."""


class BranchLimitExceeded(SchedulingError):
    """Exact enumeration hit the branch limit; instance too large for exact mode."""

    def __init__(self, count):
        super().__init__(f"enumeration exceeded branch limit after {count} branches")
        self.count = count


# ---------------------------------------------------------------------------
# Length oracles: answer "does player p finish within s more steps?"
# ---------------------------------------------------------------------------


class _FixedLengths:
    """Lengths realized upfront (Monte Carlo and eager exact mode)."""

    def __init__(self, lengths: Sequence):
        self.lengths = list(lengths)

    def finish_within(self, player: int, progress: int, steps: int, rng) -> Optional[int]:
        length = self.lengths[player]
        if length is NEVER_FINISHES or length == math.inf:
            return None
        need = int(length) - progress
        return need if need <= steps else None


class _LazyLengths:
    """Lengths resolved by conditional branching through the random source."""

    def __init__(self, instance: Instance):
        self.cdfs = [p.true_cdf for p in instance.players]
        self.resolved: dict[int, object] = {}

    def finish_within(self, player: int, progress: int, steps: int, rng) -> Optional[int]:
        if player in self.resolved:
            length = self.resolved[player]
            if length is NEVER_FINISHES:
                return None
            need = int(length) - progress
            return need if need <= steps else None
        cdf = self.cdfs[player]
        alive = 1 - cdf.at(progress)
        outcomes: list[Optional[int]] = []
        weights: list[Fraction] = []
        for s in range(1, steps + 1):
            mass = cdf.pmf(progress + s)
            if mass > 0:
                outcomes.append(s)
                weights.append(mass / alive)
        beyond = (1 - cdf.at(progress + steps)) / alive
        if beyond > 0:
            outcomes.append(None)
            weights.append(beyond)
        if len(outcomes) == 1:
            choice = 0
        else:
            choice = rng.weighted_choice(tuple(weights))
        result = outcomes[choice]
        if result is not None:
            self.resolved[player] = progress + result
        return result


# ---------------------------------------------------------------------------
# The session-facing environment
# ---------------------------------------------------------------------------


class Environment:
    """What a running session sees: the budget and the run/idle operations.

    Enforces the protocol invariants: cumulative steps never exceed the
    deadline, finished players never run again, and resuming a previously
    aborted player requires the session to have declared preemption.
    """

    def __init__(
        self,
        instance: Instance,
        oracle,
        rng: RandomSource,
        preemptive: bool,
        record_timeline: bool = True,
    ):
        self.instance = instance
        self.rng = rng
        self._oracle = oracle
        self._preemptive = preemptive
        self._record = record_timeline
        self.trace = ExecutionTrace(deadline=instance.deadline)
        self._progress = [0] * instance.n
        self._last_ran_step = [0] * instance.n

    @property
    def remaining(self) -> int:
        return self.instance.deadline - self.trace.total_used

    def _events(self, player: int) -> PlayerEvents:
        return self.trace.events.setdefault(player, PlayerEvents())

    def finished(self, player: int) -> bool:
        ev = self.trace.events.get(player)
        return ev is not None and ev.finished_at is not None

    def progress(self, player: int) -> int:
        return self._progress[player]

    def run(self, player: int, allotment: int) -> Observation:
        if allotment < 1:
            raise SchedulerProtocolError("allotment must be >= 1")
        if not 0 <= player < self.instance.n:
            raise SchedulerProtocolError(f"no such player {player}")
        if allotment > self.remaining:
            raise BudgetExceeded(
                f"Run({player}, {allotment}) with only {self.remaining} steps left"
            )
        if self.finished(player):
            raise SchedulerProtocolError(f"player {player} already finished")
        progress = self._progress[player]
        if (
            progress > 0
            and self._last_ran_step[player] != self.trace.total_used
            and not self._preemptive
        ):
            raise PreemptionNotDeclared(
                f"player {player} was aborted earlier and the session is not preemptive"
            )
        finish_after = self._oracle.finish_within(player, progress, allotment, self.rng)
        ran = finish_after if finish_after is not None else allotment
        start = self.trace.total_used + 1
        if self._record:
            self.trace.timeline.extend([player] * ran)
        self.trace.total_used += ran
        self._progress[player] += ran
        self._last_ran_step[player] = self.trace.total_used
        events = self._events(player)
        events.segments.append((start, start + ran - 1))
        if finish_after is not None:
            events.finished_at = self.trace.total_used
            return Finished(player, finish_after)
        return Exhausted(player)

    def idle(self, steps: int) -> None:
        if steps < 1:
            raise SchedulerProtocolError("idle steps must be >= 1")
        if steps > self.remaining:
            raise BudgetExceeded(f"Idle({steps}) with only {self.remaining} steps left")
        if self._record:
            self.trace.timeline.extend([None] * steps)
        self.trace.total_used += steps


def run_once(
    session,
    instance: Instance,
    realized_lengths: Sequence,
    rng: RandomSource,
    record_timeline: bool = True,
    check_support: bool = True,
) -> ExecutionTrace:
    """Drive one fresh session against realized lengths; return the trace."""
    if check_support:
        for p, length in enumerate(realized_lengths):
            if length is not NEVER_FINISHES and length != math.inf:
                cdf = instance.players[p].true_cdf
                if not (1 <= length <= cdf.lmax) or cdf.pmf(int(length)) == 0:
                    raise ValueError(f"length {length} not in support of player {p}")
            elif instance.players[p].true_cdf.residual_mass == 0:
                raise ValueError(f"player {p} always finishes; NEVER_FINISHES invalid")
    env = Environment(
        instance, _FixedLengths(realized_lengths), rng, session.preemptive, record_timeline
    )
    session.play(env)
    return env.trace


# ---------------------------------------------------------------------------
# Evaluation results
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    """Finish probabilities and expected welfare, exact or estimated.

    In exact mode probabilities and welfare are Fractions and the standard
    errors are None; in monte_carlo mode they are floats with standard
    errors.
    """

    mode: str
    per_player_finish_prob: tuple
    expected_welfare: object
    finish_prob_se: Optional[tuple] = None
    welfare_se: Optional[float] = None
    trials: Optional[int] = None
    seed: Optional[int] = None
    branch_count: Optional[int] = None

    def to_json_dict(self) -> dict:
        if self.mode == "exact":
            probs = [f"{p.numerator}/{p.denominator}" for p in self.per_player_finish_prob]
            welfare = f"{self.expected_welfare.numerator}/{self.expected_welfare.denominator}"
        else:
            probs = [float(p) for p in self.per_player_finish_prob]
            welfare = float(self.expected_welfare)
        out = {
            "mode": self.mode,
            "per_player_finish_prob": probs,
            "expected_welfare": welfare,
            "trials": self.trials,
            "seed": self.seed,
            "branch_count": self.branch_count,
        }
        if self.finish_prob_se is not None:
            out["finish_prob_se"] = list(self.finish_prob_se)
        if self.welfare_se is not None:
            out["welfare_se"] = self.welfare_se
        return out


def monte_carlo(scheduler_spec, instance: Instance, trials: int, seed: int) -> EvalResult:
    """Estimate finish probabilities by seeded sampling.

    Each trial derives its own random source from (seed, trial index), so
    results do not depend on execution order and repeated calls are
    bit-identical.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = instance.n
    finish_counts = [0] * n
    welfare_sum = 0
    welfare_sq_sum = 0
    for trial in range(trials):
        rng = SampledSource(seed * 1_000_003 + trial)
        lengths = [sample_length(p.true_cdf, rng) for p in instance.players]
        session = scheduler_spec.build(instance)
        trace = run_once(session, instance, lengths, rng, record_timeline=False, check_support=False)
        w = 0
        for p in trace.finished_players():
            finish_counts[p] += 1
            w += 1
        welfare_sum += w
        welfare_sq_sum += w * w
    probs = tuple(c / trials for c in finish_counts)
    ses = tuple(math.sqrt(p * (1 - p) / trials) for p in probs)
    mean_w = welfare_sum / trials
    var_w = max(0.0, welfare_sq_sum / trials - mean_w**2)
    return EvalResult(
        mode="monte_carlo",
        per_player_finish_prob=probs,
        expected_welfare=mean_w,
        finish_prob_se=ses,
        welfare_se=math.sqrt(var_w / trials),
        trials=trials,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


class _ReplaySource(RandomSource):
    """Enumeration source: replays a branch prefix, then takes first branches.

    Choices beyond the prefix take the first positive-weight branch and
    record every sibling as a pending prefix, so depth-first iteration over
    pending prefixes visits each leaf of the choice tree exactly once.
    """

    def __init__(self, prefix: tuple, pending: list):
        self.prefix = prefix
        self.pending = pending
        self.position = 0
        self.taken: tuple = ()
        self.path_weight = Fraction(1)

    def weighted_choice(self, weights: Sequence[Fraction]) -> int:
        weights = tuple(weights)
        check_weights(weights)
        live = [i for i, w in enumerate(weights) if w > 0]
        if len(live) == 1:
            choice = live[0]
            self.path_weight *= weights[choice]
            return choice
        if self.position < len(self.prefix):
            choice = self.prefix[self.position]
        else:
            choice = live[0]
            for sibling in live[1:]:
                self.pending.append(self.taken + (sibling,))
        self.taken += (choice,)
        self.position += 1
        self.path_weight *= weights[choice]
        return choice


def exact_evaluate(
    scheduler_spec,
    instance: Instance,
    branch_limit: int = DEFAULT_BRANCH_LIMIT,
    lazy: bool = True,
) -> EvalResult:
    """Exact finish probabilities by enumerating all randomness branches.

    Enumerates the product of length realizations and every weighted choice
    the session makes, in depth-first order, accumulating exact rational
    branch weights.  Raises BranchLimitExceeded once more than
    ``branch_limit`` leaves have been evaluated.
    """
    if branch_limit < 1:
        raise ValueError("branch_limit must be >= 1")
    n = instance.n
    probs = [Fraction(0)] * n
    welfare = Fraction(0)
    total_weight = Fraction(0)
    pending: list[tuple] = [()]
    branches = 0
    while pending:
        prefix = pending.pop()
        if branches >= branch_limit:
            raise BranchLimitExceeded(branches)
        rng = _ReplaySource(prefix, pending)
        session = scheduler_spec.build(instance)
        if lazy:
            oracle = _LazyLengths(instance)
        else:
            lengths = [sample_length(p.true_cdf, rng) for p in instance.players]
            oracle = _FixedLengths(lengths)
        env = Environment(instance, oracle, rng, session.preemptive, record_timeline=False)
        session.play(env)
        weight = rng.path_weight
        total_weight += weight
        branches += 1
        w = 0
        for p in env.trace.finished_players():
            probs[p] += weight
            w += 1
        welfare += weight * w
    assert total_weight == 1, f"branch weights sum to {total_weight}, not 1"
    return EvalResult(
        mode="exact",
        per_player_finish_prob=tuple(probs),
        expected_welfare=welfare,
        branch_count=branches,
    )
