"""Batch experiment runner.

One JSON config document describes a scheduler, an instance (inline,
generated, or from a file), an engine mode, and optional analyses; results
are written as CSV and JSON.  Same config and seed give byte-identical
output (the timestamp header line is suppressible for that purpose).

Exit codes: 0 success, 2 config error, 3 engine error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from datetime import datetime, timezone
from fractions import Fraction
from itertools import product

from .core import Instance, SchedulingError
from .engine import DEFAULT_BRANCH_LIMIT, EvalResult, exact_evaluate, monte_carlo
from .instances import (
    GENERATORS,
    generate,
    instance_from_json,
    instance_to_json,
    load_instance,
    save_instance,
)
from .metrics import fairness_ratio
from .analysis import best_response_gap, payoff_curve
from .schedulers import CAPABILITIES, SCHEDULER_KINDS, SchedulerSpec, spec_from_json

SCHEMA_VERSION = 1

RESULT_COLUMNS = (
    "schema_version",
    "label",
    "scheduler",
    "mode",
    "trials",
    "seed",
    "branch_count",
    "welfare",
    "welfare_se",
)
FAIRNESS_COLUMNS = (
    "schema_version",
    "label",
    "scheduler",
    "player",
    "fair_share",
    "achieved",
    "ratio",
)


class ConfigError(Exception):
    """Malformed or inconsistent configuration."""


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _get(config: dict, field: str, where: str):
    if field not in config:
        raise ConfigError(f"missing field {where}.{field}")
    return config[field]


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _build_instance(section: dict) -> Instance:
    if "inline" in section:
        try:
            return instance_from_json(section["inline"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"instance.inline: {exc}") from exc
    if "generator" in section:
        gen = section["generator"]
        kind = _get(gen, "kind", "instance.generator")
        try:
            return generate(kind, gen.get("params", {}))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"instance.generator: {exc}") from exc
    if "path" in section:
        try:
            return load_instance(section["path"])
        except OSError as exc:
            raise ConfigError(f"instance.path: {exc}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"instance file: {exc}") from exc
    raise ConfigError("instance needs one of: inline, generator, path")


def _build_spec(section: dict) -> SchedulerSpec:
    try:
        return spec_from_json(section)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"scheduler: {exc}") from exc


def _evaluate(spec: SchedulerSpec, instance: Instance, engine_cfg: dict) -> EvalResult:
    mode = engine_cfg.get("mode", "monte_carlo")
    if mode == "exact":
        default_limit = int(os.environ.get("SSCD_BRANCH_LIMIT", DEFAULT_BRANCH_LIMIT))
        limit = int(engine_cfg.get("branch_limit", default_limit))
        return exact_evaluate(spec, instance, limit)
    if mode == "monte_carlo":
        trials = int(engine_cfg.get("trials", 10_000))
        seed = int(engine_cfg.get("seed", 0))
        return monte_carlo(spec, instance, trials, seed)
    raise ConfigError(f"engine.mode must be 'exact' or 'monte_carlo', got {mode!r}")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _result_row(label: str, spec: SchedulerSpec, result: EvalResult, extra: dict) -> dict:
    row = dict(extra)
    row.update(
        schema_version=SCHEMA_VERSION,
        label=label,
        scheduler=spec.kind,
        mode=result.mode,
        trials=result.trials,
        seed=result.seed,
        branch_count=result.branch_count,
        welfare=result.expected_welfare,
        welfare_se=result.welfare_se,
    )
    for i, p in enumerate(result.per_player_finish_prob, start=1):
        row[f"p_finish_{i}"] = p
    return row


def _write_csv(path: str, columns, rows: list[dict], timestamp: bool) -> None:
    seen = list(columns)
    for row in rows:
        for key in row:
            if key not in seen:
                seen.append(key)
    with open(path, "w", newline="") as fh:
        if timestamp:
            fh.write(f"# generated_at={datetime.now(timezone.utc).isoformat()}\n")
        writer = csv.writer(fh)
        writer.writerow(seen)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in seen])


def _run_analyses(cfg_list, spec, instance, result, label, rows_out) -> list[dict]:
    fairness_rows = []
    analysis_json = []
    for cfg in cfg_list or []:
        op = _get(cfg, "op", "analyses[]")
        if op == "fairness":
            report = fairness_ratio(result, instance)
            for row in report.rows:
                fairness_rows.append(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "label": label,
                        "scheduler": spec.kind,
                        "player": row.player,
                        "fair_share": row.fair_share,
                        "achieved": row.achieved,
                        "ratio": row.ratio,
                    }
                )
            analysis_json.append(
                {
                    "op": "fairness",
                    "rho": _fmt(report.rho),
                    "vacuous": report.vacuous,
                    "rows": [
                        {
                            "player": r.player,
                            "fair_share": _fmt(r.fair_share),
                            "achieved": _fmt(r.achieved),
                            "ratio": _fmt(r.ratio),
                        }
                        for r in report.rows
                    ],
                }
            )
        elif op == "payoff_curve":
            curve = payoff_curve(
                spec, instance, int(_get(cfg, "player", "analyses[]")), cfg.get("grid", [])
            )
            analysis_json.append(
                {
                    "op": "payoff_curve",
                    "player": curve.player,
                    "points": [[r, _fmt(v)] for r, v in curve.grid],
                }
            )
        elif op == "best_response_gap":
            gap = best_response_gap(
                spec,
                instance,
                int(_get(cfg, "player", "analyses[]")),
                _get(cfg, "honest", "analyses[]"),
                cfg.get("grid", []),
            )
            analysis_json.append(
                {"op": "best_response_gap", "player": cfg["player"], "gap": _fmt(gap)}
            )
        else:
            raise ConfigError(f"analyses[].op: unknown analysis {op!r}")
    rows_out.extend(fairness_rows)
    return analysis_json


def _set_by_path(config: dict, path: str, value) -> None:
    keys = path.split(".")
    node = config
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def cmd_run(args) -> int:
    try:
        config = _load_config(args.config)
        return _execute(config, args, sweep_axes=None)
    except ConfigError as exc:
        return _fail(2, str(exc))
    except SchedulingError as exc:
        return _fail(3, f"{type(exc).__name__}: {exc}")


def cmd_sweep(args) -> int:
    try:
        config = _load_config(args.config)
        axes = config.get("sweep")
        if not axes:
            raise ConfigError("sweep config needs a 'sweep' list of {path, values}")
        return _execute(config, args, sweep_axes=axes)
    except ConfigError as exc:
        return _fail(2, str(exc))
    except SchedulingError as exc:
        return _fail(3, f"{type(exc).__name__}: {exc}")


def _apply_overrides(config: dict, args) -> None:
    engine = config.setdefault("engine", {})
    if args.seed is not None:
        engine["seed"] = args.seed
    if args.trials is not None:
        engine["trials"] = args.trials
    if args.exact:
        engine["mode"] = "exact"
    if args.branch_limit is not None:
        engine["branch_limit"] = args.branch_limit


def _execute(config: dict, args, sweep_axes) -> int:
    _apply_overrides(config, args)
    out_base = args.out or config.get("output", {}).get("path", "results")
    timestamp = not args.no_header_timestamp

    points = [{}]
    if sweep_axes:
        paths = [_get(axis, "path", "sweep[]") for axis in sweep_axes]
        values = [_get(axis, "values", "sweep[]") for axis in sweep_axes]
        points = [dict(zip(paths, combo)) for combo in product(*values)]

    result_rows: list[dict] = []
    fairness_rows: list[dict] = []
    json_records = []
    for point in points:
        variant = copy.deepcopy(config)
        for path, value in point.items():
            _set_by_path(variant, path, value)
        spec = _build_spec(_get(variant, "scheduler", "config"))
        instance = _build_instance(_get(variant, "instance", "config"))
        result = _evaluate(spec, instance, variant.get("engine", {}))
        label = instance.label or "instance"
        extra = {f"sweep:{k}": v for k, v in point.items()}
        result_rows.append(_result_row(label, spec, result, extra))
        analyses = _run_analyses(
            variant.get("analyses"), spec, instance, result, label, fairness_rows
        )
        record = {
            "sweep_point": point,
            "label": label,
            "scheduler": spec.to_json_dict(),
            "result": result.to_json_dict(),
        }
        if analyses:
            record["analyses"] = analyses
        json_records.append(record)

    sweep_columns = tuple(sorted({k for row in result_rows for k in row if k.startswith("sweep:")}))
    _write_csv(out_base + ".csv", sweep_columns + RESULT_COLUMNS, result_rows, timestamp)
    if fairness_rows:
        _write_csv(out_base + "_fairness.csv", FAIRNESS_COLUMNS, fairness_rows, timestamp)
    with open(out_base + ".json", "w") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, "runs": json_records}, fh, indent=2)
        fh.write("\n")
    print(f"wrote {out_base}.csv ({len(result_rows)} rows)")
    return 0


def cmd_generate(args) -> int:
    try:
        params = json.loads(args.params) if args.params else {}
    except json.JSONDecodeError as exc:
        return _fail(2, f"--params is not valid JSON: {exc}")
    if args.kind not in GENERATORS:
        return _fail(2, f"unknown generator {args.kind!r}; known: {sorted(GENERATORS)}")
    try:
        instance = generate(args.kind, params)
    except (ValueError, TypeError) as exc:
        return _fail(2, f"generator parameters: {exc}")
    save_instance(instance, args.out)
    print(f"wrote {args.out} ({instance.n} players, D={instance.deadline})")
    return 0


def cmd_list_schedulers(_args) -> int:
    for kind in SCHEDULER_KINDS:
        caps = CAPABILITIES[kind]
        flags = [caps.adaptivity]
        if caps.oblivious:
            flags.append("oblivious")
        if caps.complete:
            flags.append("complete")
        print(f"{kind:30s} {', '.join(flags)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sscd", description="Deadline-scheduling mechanism workbench"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True)
    _common_run_flags(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a parameter grid, one CSV row per point")
    sweep.add_argument("--config", required=True)
    _common_run_flags(sweep)
    sweep.set_defaults(func=cmd_sweep)

    gen = sub.add_parser("generate", help="write an instance JSON file")
    gen.add_argument("--kind", required=True)
    gen.add_argument("--params", help="generator parameters as a JSON object")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    ls = sub.add_parser("list-schedulers", help="print kinds and capability flags")
    ls.set_defaults(func=cmd_list_schedulers)
    return parser


def _common_run_flags(parser) -> None:
    parser.add_argument("--out", help="output base path (default from config)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--trials", type=int)
    parser.add_argument("--exact", action="store_true")
    parser.add_argument("--branch-limit", type=int)
    parser.add_argument("--no-header-timestamp", action="store_true")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
