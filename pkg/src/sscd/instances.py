"""Instance generators and JSON serialization.

Every generator is deterministic in its arguments and emits instances whose
CDFs pass validation.  Rationals serialize as "p/q" strings, never floats.
"""

from __future__ import annotations

import json
from fractions import Fraction
from random import Random
from typing import Optional

from .core import (
    Instance,
    LengthCdf,
    Player,
    Preference,
    Qualitative,
    Quantitative,
    Report,
    make_instance,
    point_mass,
    validate_cdf,
)


def _uniform_cdf(lo: int, hi: int) -> LengthCdf:
    """Uniform distribution over integer lengths lo..hi."""
    span = hi - lo + 1
    values = [Fraction(0)] * (lo - 1) + [Fraction(i, span) for i in range(1, span + 1)]
    return validate_cdf(values)


def _two_point_cdf(short: int, long: int, p_short: Fraction) -> LengthCdf:
    values = [Fraction(0)] * (short - 1) + [p_short] * (long - short) + [Fraction(1)]
    return validate_cdf(values)


# ---------------------------------------------------------------------------
# Constructions behind the impossibility results
# ---------------------------------------------------------------------------


def gen_theorem1(deadline: int, group_cap: int) -> Instance:
    """Near-deterministic groups witnessing the strategic-uncertainty gap.

    Group 0 holds `deadline` jobs of length 1; group i holds jobs of length
    2^(i-1) with probability 1/deadline, else 2^i.  True group sizes
    deadline * (2*deadline)^i are capped at group_cap.  Groups are emitted
    longest first so that index tie-breaks do not hand the short jobs a win
    the construction does not intend.
    """
    if deadline < 2 or deadline & (deadline - 1):
        raise ValueError("deadline must be a power of two >= 2")
    if group_cap < 1:
        raise ValueError("group_cap must be >= 1")
    k = 2 * deadline
    eps = Fraction(1, deadline)
    d = deadline.bit_length() - 1  # log2(deadline)
    cdfs = []
    for i in range(d + 1, 0, -1):
        size = min(deadline * k**i, group_cap)
        cdfs.extend([_two_point_cdf(2 ** (i - 1), 2**i, eps)] * size)
    cdfs.extend([point_mass(1)] * deadline)
    return make_instance(deadline, cdfs, label=f"theorem1(D={deadline},cap={group_cap})")


def gen_short_long(n: int, t: int) -> Instance:
    """n/t short jobs uniform on 1..2t, the rest uniform on 1..n, deadline n."""
    if t < 1 or n % t:
        raise ValueError("t must divide n")
    short = [_uniform_cdf(1, 2 * t)] * (n // t)
    long = [_uniform_cdf(1, n)] * (n - n // t)
    return make_instance(n, short + long, label=f"short_long(n={n},t={t})")


def gen_oblivious_lb(n: int) -> Instance:
    """Geometric length mix on which oblivious schedulers stay O(1/log n)-fair.

    Each of n jobs independently has length 2^i with probability 2^i / (2n)
    for i = 1..log2(n); the residual 1/n mass is assigned to length n (the
    most pessimistic choice for a scheduler).  Deadline n.
    """
    if n < 2 or n & (n - 1):
        raise ValueError("n must be a power of two >= 2")
    pmf = {2**i: Fraction(2**i, 2 * n) for i in range(1, n.bit_length())}
    pmf[n] = pmf.get(n, Fraction(0)) + Fraction(1, n)
    values = []
    acc = Fraction(0)
    for t in range(1, n + 1):
        acc += pmf.get(t, Fraction(0))
        values.append(acc)
    cdf = validate_cdf(values)
    return make_instance(n, [cdf] * n, label=f"oblivious_lb(n={n},residual->n)")


def gen_complete_lb(n: int) -> Instance:
    """Half point-mass at n, half uniform on 1..n^2; deadline n^2."""
    if n < 2:
        raise ValueError("n must be >= 2")
    half = Fraction(1, 2)
    values = []
    for t in range(1, n * n + 1):
        mass = Fraction(t, 2 * n * n)
        if t >= n:
            mass += half
        values.append(mass)
    cdf = validate_cdf(values)
    return make_instance(n * n, [cdf] * n, label=f"complete_lb(n={n})")


def gen_canonical_gap(k: int, n: int, deadline: int) -> Instance:
    """Flat 1/k head then linear tail, the gap instance for the factor-3 bound.

    f(t) = 1/k for t <= D/n and min(1, t*n/(D*k)) for larger t up to
    min(k*D/n, D), flat beyond.  The linear reading of the tail is one of
    two plausible parsings; the downstream ratio check is robust to it.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < 1 or deadline % n:
        raise ValueError("n must divide the deadline")
    share = deadline // n
    top = min(k * share, deadline)
    values = []
    for t in range(1, top + 1):
        if t <= share:
            values.append(Fraction(1, k))
        else:
            values.append(min(Fraction(1), Fraction(t * n, deadline * k)))
    cdf = validate_cdf(values)
    return make_instance(deadline, [cdf] * n, label=f"canonical_gap(k={k},n={n},D={deadline})")


# ---------------------------------------------------------------------------
# Parameterized suites
# ---------------------------------------------------------------------------


def gen_identical(cdf: LengthCdf, n: int, deadline: int, label: str = "") -> Instance:
    return make_instance(deadline, [cdf] * n, label=label or f"identical(n={n},D={deadline})")


def gen_near_deterministic(n: int, deadline: int, seed: int, q=Fraction(1, 2)) -> Instance:
    """Jobs with base length b, realized b or 2b; qualitative reports b."""
    rng = Random(seed)
    max_base = max(1, deadline // max(1, n) * 2)
    cdfs = []
    reports: list[Report] = []
    for _ in range(n):
        b = rng.randint(1, max_base)
        cdfs.append(_two_point_cdf(b, 2 * b, Fraction(q)))
        reports.append(Qualitative(b))
    return make_instance(
        deadline, cdfs, reports, label=f"near_det(n={n},D={deadline},seed={seed})"
    )


def gen_random(
    seed: int,
    n: int,
    deadline: int,
    max_support: int = 3,
    max_length: Optional[int] = None,
    allow_residual: bool = True,
) -> Instance:
    """Seeded random instance with small-denominator CDFs, truthful reports."""
    rng = Random(seed)
    max_length = max_length or deadline
    cdfs = []
    for _ in range(n):
        points = sorted(rng.sample(range(1, max_length + 1), rng.randint(1, max_support)))
        acc = Fraction(0)
        pmf = {}
        for t in points[:-1]:
            step = Fraction(rng.randint(1, 4), 12)
            if acc + step < 1:
                pmf[t] = step
                acc += step
        if allow_residual and rng.random() < 0.25:
            tail = Fraction(rng.randint(1, 3), 12)
            pmf[points[-1]] = max(Fraction(0), 1 - acc - tail)
        else:
            pmf[points[-1]] = 1 - acc
        values = []
        acc = Fraction(0)
        for t in range(1, points[-1] + 1):
            acc += pmf.get(t, Fraction(0))
            values.append(acc)
        cdfs.append(validate_cdf(values))
    return make_instance(deadline, cdfs, label=f"random(seed={seed},n={n},D={deadline})")


GENERATORS = {
    "theorem1": gen_theorem1,
    "short_long": gen_short_long,
    "oblivious_lb": gen_oblivious_lb,
    "complete_lb": gen_complete_lb,
    "canonical_gap": gen_canonical_gap,
    "near_deterministic": gen_near_deterministic,
    "random": gen_random,
}


def generate(kind: str, params: dict) -> Instance:
    """Dispatch a generator by name with keyword parameters."""
    if kind not in GENERATORS:
        raise ValueError(f"unknown generator {kind!r}; known: {sorted(GENERATORS)}")
    return GENERATORS[kind](**params)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _rat_str(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def _parse_rational(text, where: str) -> Fraction:
    if isinstance(text, int):
        return Fraction(text)
    if not isinstance(text, str):
        raise ValueError(f"{where}: rationals must be 'p/q' strings, got {text!r}")
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"{where}: invalid rational {text!r}") from exc


def report_to_json(report: Report) -> dict:
    if isinstance(report, Quantitative):
        return {"type": "quantitative", "cdf": [_rat_str(v) for v in report.cdf.values]}
    if isinstance(report, Qualitative):
        return {"type": "qualitative", "estimate": report.estimate}
    return {"type": "preference", "t": report.t}


def report_from_json(data: dict, where: str) -> Report:
    kind = data.get("type")
    if kind == "quantitative":
        raw = [_parse_rational(v, f"{where}.cdf[{i}]") for i, v in enumerate(data["cdf"])]
        return Quantitative(validate_cdf(raw))
    if kind == "qualitative":
        return Qualitative(int(data["estimate"]))
    if kind == "preference":
        return Preference(int(data["t"]))
    raise ValueError(f"{where}.type: unknown report type {kind!r}")


def instance_to_json(instance: Instance) -> dict:
    return {
        "deadline": instance.deadline,
        "players": [
            {
                "true_cdf": [_rat_str(v) for v in p.true_cdf.values],
                "report": report_to_json(p.report),
            }
            for p in instance.players
        ],
        "label": instance.label,
    }


def instance_from_json(data: dict) -> Instance:
    players = []
    for i, p in enumerate(data["players"]):
        where = f"players[{i}]"
        raw = [
            _parse_rational(v, f"{where}.true_cdf[{j}]")
            for j, v in enumerate(p["true_cdf"])
        ]
        cdf = validate_cdf(raw)
        players.append(Player(cdf, report_from_json(p["report"], f"{where}.report")))
    return Instance(int(data["deadline"]), tuple(players), data.get("label", ""))


def save_instance(instance: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_json(instance), fh, indent=2)
        fh.write("\n")


def load_instance(path) -> Instance:
    with open(path) as fh:
        return instance_from_json(json.load(fh))
