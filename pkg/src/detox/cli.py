"""Command-line entry point: ``detox <subcommand> --config FILE --out DIR``.

Every subcommand writes ``<name>.json`` (the canonical summary: version,
seed, config echo, result rows and a ``failures`` list) and, with
``--format csv``, a ``<name>.csv`` projection of the rows. Column orders:

  filter-stats  p,q,r,delta,theta,trials,exact_expectation,empirical_mean,
                empirical_stderr,mc_status,theorem1_bound,theorem1_status,
                r3_bound,r3_status,corollary_threshold,empirical_tail,
                corollary_status,lemma3_bound,lemma3_empirical,lemma3_status
  train         iteration,loss,delta,q_hat,agg_seconds
  mean-est      estimator,error,q_hat
  bounds        kind,d,n,x,with_detox,value
  timing        p,d,detox,seconds

``aggregate`` reads one whitespace-separated vector per line and prints
the aggregate with 17 significant digits. Exit status is 0 iff every
declared check passed; 1 on a failed check; 2 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, aggregators
from .analysis import REPORT_COLUMNS, bound_report, convergence_rate_bounds
from .core import AggregatorSpec, DetoxConfig, DetoxError
from .harness import (
    DEFAULT_ESTIMATORS,
    RUN_COLUMNS,
    TaskSpec,
    gen_task,
    mean_estimation_experiment,
    run_training,
    timing_probe,
)


class ParseError(DetoxError):
    pass


VERSION = f"v{__version__}"


def _fmt(v: Any) -> Any:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({c: _fmt(row.get(c)) for c in columns})
    return buf.getvalue()


def _write(out: Path, name: str, fmt: str, summary: dict, rows: list[dict], columns) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"version": VERSION, **summary, "rows": rows}
    (out / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if fmt == "csv":
        (out / f"{name}.csv").write_text(rows_to_csv(rows, columns))


def _load(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DetoxError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DetoxError(f"config {path} is not valid JSON: {exc}")


def _seed(args, cfg: dict, default: int = 0) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", default))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _grid_points(cfg: dict) -> list[dict]:
    grid = cfg.get("grid", [])
    if isinstance(grid, dict):
        keys = ["p", "q", "r", "delta", "theta"]
        lists = [grid.get(k, [None]) for k in keys]
        grid = [dict(zip(keys, combo)) for combo in itertools.product(*lists)]
    points = []
    for g in grid:
        points.append(
            {
                "p": int(g["p"]),
                "q": int(g["q"]),
                "r": int(g["r"]),
                "delta": float(g.get("delta") or 0.1),
                "theta": float(g.get("theta") or 2.0),
            }
        )
    return points


def cmd_filter_stats(args) -> int:
    cfg = _load(args.config)
    seed = _seed(args, cfg)
    trials = args.trials if args.trials is not None else int(cfg.get("trials", 100_000))
    rows, failures = [], []
    for i, pt in enumerate(_grid_points(cfg)):
        rep = bound_report(trials=trials, seed=seed + i, **pt)
        rows.append(rep.to_dict())
        for check, status in rep.checks().items():
            if status == "fail":
                failures.append({"point": pt, "check": check})
    summary = {"seed": seed, "trials": trials, "config": cfg, "failures": failures}
    _write(Path(args.out), "filter_stats", args.format, summary, rows, REPORT_COLUMNS)
    for f in failures:
        print(f"bound violated: {f['check']} at {f['point']}", file=sys.stderr)
    return 1 if failures else 0


def cmd_train(args) -> int:
    cfg = _load(args.config)
    unknown = set(cfg) - {"detox", "task"}
    if unknown:
        raise DetoxError(f"unknown train config fields: {sorted(unknown)}")
    dcfg = DetoxConfig.from_dict(cfg["detox"])
    if args.seed is not None:
        dcfg = dcfg.replace(seed=args.seed)
    task_spec = TaskSpec.from_dict(cfg["task"])
    rec = run_training(dcfg, gen_task(task_spec))
    rows = rec.rows(timing=args.record_timing)
    summary = {
        "seed": dcfg.seed,
        "config": {"detox": dcfg.to_dict(), "task": task_spec.to_dict()},
        "final_loss": float(rec.loss[-1]) if rec.iterations else None,
        "final_model": [float(v) for v in rec.final_model],
        "byzantine": list(rec.byzantine),
        "failures": [],
    }
    _write(Path(args.out), "train", args.format, summary, rows, RUN_COLUMNS)
    return 0


def cmd_mean_est(args) -> int:
    cfg = _load(args.config)
    allowed = {"d", "p", "r", "q", "byz_norm", "byz_vector", "estimators", "seed", "k"}
    unknown = set(cfg) - allowed
    if unknown:
        raise DetoxError(f"unknown mean-est config fields: {sorted(unknown)}")
    seed = _seed(args, cfg)
    rows = mean_estimation_experiment(
        d=int(cfg["d"]),
        p=int(cfg["p"]),
        r=int(cfg["r"]),
        q=int(cfg["q"]),
        byz_norm=float(cfg.get("byz_norm", 100.0)),
        estimators=tuple(cfg.get("estimators", DEFAULT_ESTIMATORS)),
        seed=seed,
        k=int(cfg.get("k", 5)),
        byz_vector=cfg.get("byz_vector", "constant"),
    )
    summary = {"seed": seed, "config": cfg, "failures": []}
    _write(Path(args.out), "mean_est", args.format, summary, rows, ["estimator", "error", "q_hat"])
    return 0


def cmd_bounds(args) -> int:
    cfg = _load(args.config)
    entries = cfg.get("points", [cfg]) if isinstance(cfg, dict) else cfg
    rows = []
    for e in entries:
        e = {"n": 1, "x": 0.0, "with_detox": False, **e}
        value = convergence_rate_bounds(
            e["kind"], int(e["d"]), int(e["n"]), float(e["x"]), bool(e["with_detox"])
        )
        rows.append({k: e[k] for k in ("kind", "d", "n", "x", "with_detox")} | {"value": value})
    summary = {"seed": _seed(args, cfg if isinstance(cfg, dict) else {}), "config": cfg, "failures": []}
    _write(Path(args.out), "bounds", args.format, summary, rows, ["kind", "d", "n", "x", "with_detox", "value"])
    for row in rows:
        print(repr(row["value"]))
    return 0


def cmd_timing(args) -> int:
    cfg = _load(args.config)
    seed = _seed(args, cfg)
    rows = timing_probe(
        p_values=[int(p) for p in cfg["p_values"]],
        d=int(cfg["d"]),
        agg=AggregatorSpec.from_dict(cfg.get("agg", "mean")),
        detox=bool(cfg.get("detox", False)),
        r=int(cfg.get("r", 5)),
        k=int(cfg.get("k", 10)),
        reps=int(cfg.get("reps", 11)),
        warmup=int(cfg.get("warmup", 2)),
        seed=seed,
    )
    summary = {"seed": seed, "config": cfg, "failures": []}
    _write(Path(args.out), "timing", args.format, summary, rows, ["p", "d", "detox", "seconds"])
    return 0


def read_vectors(path: str) -> np.ndarray:
    """Parse one whitespace-separated vector per non-blank line."""
    rows: list[list[float]] = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                vals = [float(tok) for tok in line.split()]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}")
            if not all(np.isfinite(vals)):
                raise ParseError(f"line {lineno}: NaN or Inf not allowed")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"line {lineno}: expected {width} values, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no vectors")
    return np.array(rows)


def _parse_param(text: str) -> tuple[str, Any]:
    name, sep, value = text.partition("=")
    if not sep:
        raise ParseError(f"--param expects name=value, got {text!r}")
    return name, json.loads(value)


def cmd_aggregate(args) -> int:
    params = dict(_parse_param(p) for p in args.param)
    spec = AggregatorSpec(args.agg, params)
    out = aggregators.aggregate(spec, read_vectors(args.input))
    print(" ".join(f"{v:.17g}" for v in out))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detox",
        description="Byzantine-resilient SGD simulator and filtering statistics.",
        epilog=__doc__.split("\n\n", 1)[1],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--format", choices=("csv", "json"), default="json")

    fs = sub.add_parser("filter-stats", help="exact vs Monte Carlo filtering checks")
    common(fs)
    fs.add_argument("--trials", type=int, default=None, help="override the trial count")
    fs.set_defaults(func=cmd_filter_stats)

    tr = sub.add_parser("train", help="run DETOX training on a synthetic task")
    common(tr)
    tr.add_argument(
        "--record-timing", action="store_true",
        help="include aggregation wall-clock (makes output non-reproducible)",
    )
    tr.set_defaults(func=cmd_train)

    me = sub.add_parser("mean-est", help="robust mean estimation benchmark")
    common(me)
    me.set_defaults(func=cmd_mean_est)

    bd = sub.add_parser("bounds", help="order-of-magnitude convergence bounds")
    common(bd)
    bd.set_defaults(func=cmd_bounds)

    tm = sub.add_parser("timing", help="aggregation-stage wall-clock probe")
    common(tm)
    tm.set_defaults(func=cmd_timing)

    ag = sub.add_parser("aggregate", help="aggregate vectors from a text file")
    ag.add_argument("input", help="one vector per line")
    ag.add_argument("--agg", required=True, choices=aggregators_kinds())
    ag.add_argument("--param", action="append", default=[], help="name=value (JSON value)")
    ag.set_defaults(func=cmd_aggregate)
    return parser


def aggregators_kinds() -> list[str]:
    from .core import AGGREGATOR_KINDS

    return list(AGGREGATOR_KINDS)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DetoxError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
