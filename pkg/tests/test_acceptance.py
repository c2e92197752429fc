"""Acceptance criteria, each run at its stated scale and tolerance.

Every check prints one ``criterion N [PASS|FAIL]`` line (also repeated in
the pytest terminal summary). Run directly with
``python tests/test_acceptance.py`` for the lines alone.
"""

from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest

import acceptance_log
import oracles
from detox import aggregators as A
from detox.analysis import (
    corollary_threshold,
    exact_expected_qhat,
    exact_expected_qhat_fraction,
    monte_carlo_qhat,
    r3_bound,
    tail_bound,
    theorem1_bound,
)
from detox.core import AggregatorSpec, AttackSpec, DetoxConfig, LRSchedule, split_rng
from detox.engine import detox_step, draw_batch, partition_nodes
from detox.harness import TaskSpec, gen_task, mean_estimation_experiment, run_training, timing_probe

MEAN = AggregatorSpec("mean")
MEDIAN = AggregatorSpec("coord_median")


def _timed(fn):
    start = time.perf_counter()
    ok, detail = fn()
    return ok, f"{detail} ({time.perf_counter() - start:.1f}s)"


# ---------------------------------------------------------------------------


def check_monte_carlo_vs_exact():
    worst = 0.0
    ok = True
    for p in (12, 45, 60):
        for q in (3, 5, 6):
            dist = monte_carlo_qhat(p, q, 3, 1_000_000, seed=p * 100 + q)
            z = (dist.mean - exact_expected_qhat(p, q, 3)) / dist.stderr
            worst = max(worst, abs(z))
            ok &= abs(z) <= 3
    return ok, f"9 grid points, max |z| = {worst:.2f} (limit 3)"


def check_expectation_bounds():
    bad = []
    n = 0
    for r in (5, 7, 9):
        p = 40 * r
        for den in (50, 80):
            q = p // den  # eps*p is fractional here; round down and use eps = q/p
            n += 1
            if not exact_expected_qhat(p, q, r) <= theorem1_bound(p, q, r):
                bad.append(("general", p, q, r))
    for p in range(12, 121, 3):
        for q in range(0, p // 3 + 1):
            n += 1
            e = exact_expected_qhat_fraction(p, q, 3)
            eps = Fraction(q, p)
            if not e <= q * eps * (4 - 2 * eps) / 3:
                bad.append(("r=3", p, q))
    return not bad, f"{n} points checked exactly, {len(bad)} violations"


def check_corollary_tail():
    rows = []
    ok = True
    # r=9 does not divide 640; 648 is the nearest multiple of 9 keeping eps <= 1/80
    for p, q, r in ((160, 2, 5), (648, 8, 9)):
        dist = monte_carlo_qhat(p, q, r, 100_000, seed=p)
        for delta in (0.1, 0.25):
            tail = dist.prob_greater(corollary_threshold(delta))
            ok &= tail <= delta
            rows.append(f"({p},{q},{r},d={delta}) tail={tail:g}")
    return ok, "; ".join(rows)


def check_tail_dominance():
    dist = monte_carlo_qhat(60, 6, 3, 1_000_000, seed=60)
    e = exact_expected_qhat(60, 6, 3)
    rows = []
    ok = True
    for theta in (2, 4, 8):
        emp = dist.prob_at_least(e * (1 + theta))
        bound = tail_bound(60, 6, 3, theta)
        ok &= emp <= bound
        rows.append(f"theta={theta}: {emp:.2e} <= {bound:.3f}")
    return ok, "; ".join(rows)


def check_pipeline_reduction():
    g = split_rng(2024, "acceptance-configs")
    task = gen_task(TaskSpec("linear_regression", 8, 5000, 0.7))
    worst = 0.0
    for i in range(20):
        r = int(g.choice([1, 3, 5]))
        groups = int(g.integers(1, 9))
        p = r * groups
        b = p * int(g.integers(1, 6))
        divisors = [k for k in range(1, groups + 1) if groups % k == 0]
        k = int(g.choice(divisors))
        cfg = DetoxConfig(p=p, q=0, r=r, b=b, k=k, d=8, agg0=MEAN, agg1=MEAN)
        part = partition_nodes(p, r, split_rng(i, "partition"))
        w = g.standard_normal(8)
        new, _ = detox_step(w, cfg, part, task.grad, AttackSpec(), split_rng(i, "steps"), n=task.n)
        S = draw_batch(task.n, b, split_rng(i, "steps"))
        ref = w - cfg.lr_schedule(0) * task.grad(w, S)
        worst = max(worst, float(np.max(np.abs(new - ref) / np.maximum(np.abs(ref), 1e-300))))
    return worst <= 1e-12, f"20 configs, max relative error {worst:.1e} (limit 1e-12)"


def check_mean_estimation():
    ok = True
    rows = []
    for d in (20, 50, 100):
        errs = {name: [] for name in ("geo_median", "coord_median", "detox_geo_median", "detox_coord_median")}
        for seed in range(20):
            for row in mean_estimation_experiment(d, 2100, 3, 100, 100.0, seed=seed, k=5):
                errs[row["estimator"]].append(row["error"])
        med = {k: float(np.median(v)) for k, v in errs.items()}
        ok &= med["detox_geo_median"] < med["geo_median"]
        ok &= med["detox_coord_median"] < med["coord_median"]
        rows.append(
            f"d={d}: geo {med['detox_geo_median']:.3f}<{med['geo_median']:.3f}, "
            f"coord {med['detox_coord_median']:.3f}<{med['coord_median']:.3f}"
        )
    return ok, "; ".join(rows)


def _final_losses(task, base: DetoxConfig, seeds):
    return float(np.median([run_training(base.replace(seed=s), task).loss[-1] for s in seeds]))


def check_training_robustness():
    task = gen_task(TaskSpec("logistic_regression", 20, 10_000, 1.0))
    seeds = range(10)
    common = dict(p=45, b=1440, d=20, iterations=300, lr_schedule=LRSchedule(lr=0.5))
    baseline = DetoxConfig(q=0, r=1, k=45, agg0=MEAN, agg1=MEAN, **common)
    detox = DetoxConfig(q=5, r=3, k=3, agg0=MEAN, agg1=MEDIAN, **common)
    plain = DetoxConfig(q=5, r=1, k=45, agg0=MEAN, agg1=MEAN, **common)
    rev = AttackSpec("reverse_gradient", c=1.0)
    alie = AttackSpec("alie", z=1.0)

    base = _final_losses(task, baseline, seeds)
    d_rev = _final_losses(task, detox.replace(attack=rev), seeds)
    d_alie = _final_losses(task, detox.replace(attack=alie), seeds)
    m_rev = _final_losses(task, plain.replace(attack=rev), seeds)
    robust = d_rev <= 1.1 * base and d_alie <= 1.1 * base
    broken = m_rev >= 2 * base
    detail = (
        f"baseline {base:.4f}; DETOX rev {d_rev / base:.3f}x, alie {d_alie / base:.3f}x (limit 1.1x) "
        f"[{'ok' if robust else 'violated'}]; plain mean rev {m_rev / base:.3f}x (needs >= 2x) "
        f"[{'ok' if broken else 'violated'}]"
    )
    return robust and broken, detail


def check_delta_scaling():
    task = gen_task(TaskSpec("linear_regression", 10, 100_000, 1.0))
    med = {}
    for b in (1024, 4096):
        deltas = []
        for seed in range(20):
            cfg = DetoxConfig(p=64, q=0, r=1, b=b, k=8, d=10, agg0=MEAN, agg1=MEDIAN, iterations=50, seed=seed)
            deltas.extend(run_training(cfg, task).delta.tolist())
        med[b] = float(np.median(deltas))
    ratio = med[4096] / med[1024]
    return 0.3 <= ratio <= 0.8, f"median delta {med[1024]:.4f} -> {med[4096]:.4f}, ratio {ratio:.3f} (band [0.3, 0.8])"


def check_aggregation_complexity():
    d = 100_000
    bul = timing_probe([50, 100], d, AggregatorSpec("bulyan", {"q": 5}), detox=False)
    det = timing_probe([50, 100], d, AggregatorSpec("bulyan", {"q": 1}), detox=True, r=5, k=10)
    rb = bul[1]["seconds"] / bul[0]["seconds"]
    rd = det[1]["seconds"] / det[0]["seconds"]
    ok = 3 <= rb <= 6 and 1.5 <= rd <= 3
    return ok, f"plain Bulyan ratio {rb:.2f} (band [3, 6]); DETOX ratio {rd:.2f} (band [1.5, 3])"


def _grid_min_2d(pts, step=0.01):
    lo = pts.min(axis=0) - 1.0
    hi = pts.max(axis=0) + 1.0
    xs = np.arange(lo[0], hi[0] + step / 2, step)
    ys = np.arange(lo[1], hi[1] + step / 2, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    obj = np.zeros(grid.shape[0])
    for p in pts:
        obj += np.hypot(grid[:, 0] - p[0], grid[:, 1] - p[1])
    return float(obj.min())


def check_aggregator_oracles():
    g = split_rng(7, "acceptance-aggregators")
    cases = 500
    failures: dict[str, int] = {}

    def fail(name):
        failures[name] = failures.get(name, 0) + 1

    for _ in range(cases):
        n = int(g.integers(1, 16))
        d = int(g.integers(1, 6))
        x = g.standard_normal((n, d)) * float(g.choice([1e-3, 1.0, 1e3]))
        xs = x.tolist()
        ref = np.array(oracles.fsum_mean(xs))
        if not np.allclose(A.mean(x), ref, rtol=1e-12, atol=1e-12 * np.abs(x).max()):
            fail("mean")
        if A.coord_median(x).tolist() != oracles.coord_median(xs):
            fail("coord_median")
        if A.sign_majority(x).tolist() != oracles.sign_majority(xs):
            fail("sign_majority")
        alpha = float(g.choice([0.0, 0.1, 0.2, 0.25, 0.3, 0.4]))
        if 2 * math.ceil(round(alpha * n, 9)) < n:
            if A.trimmed_mean(x, alpha).tolist() != oracles.trimmed_mean(xs, alpha):
                fail("trimmed_mean")

        m = int(g.integers(3, 16))
        y = g.standard_normal((m, d))
        ys = y.tolist()
        q = int(g.integers(0, (m - 3) // 2 + 1))
        if not np.array_equal(A.krum(y, q), y[oracles.krum_index(ys, q)]):
            fail("krum")
        mm = int(g.integers(1, m - q - 1))
        if A.multi_krum(y, q, mm).tolist() != oracles.multi_krum(ys, q, mm):
            fail("multi_krum")
        qb = int(g.integers(0, (m - 3) // 4 + 1))
        if A.bulyan(y, qb).tolist() != oracles.bulyan(ys, qb)[0]:
            fail("bulyan")

        pts = g.uniform(-2, 2, size=(int(g.integers(1, 9)), 2))
        tol = 1e-8
        out = A.geo_median(pts, tol=tol)
        if A.geo_objective(out, pts) > _grid_min_2d(pts) + tol:
            fail("geo_median")
    kinds = ["mean", "coord_median", "geo_median", "trimmed_mean", "krum", "multi_krum", "bulyan", "sign_majority"]
    summary = ", ".join(f"{k} {cases - failures.get(k, 0)}/{cases}" for k in kinds if k != "trimmed_mean")
    return not failures, f"{summary}, trimmed_mean all admissible cases; failures {failures or 'none'}"


CRITERIA = [
    (1, "exact vs Monte Carlo E[q_hat]", check_monte_carlo_vs_exact),
    (2, "expectation bounds (general r and r=3)", check_expectation_bounds),
    (3, "high-probability q_hat threshold", check_corollary_tail),
    (4, "tail dominance", check_tail_dominance),
    (5, "pipeline reduces to mini-batch SGD", check_pipeline_reduction),
    (6, "mean-estimation ordering", check_mean_estimation),
    (7, "training robustness ordering", check_training_robustness),
    (8, "inexactness scaling with batch size", check_delta_scaling),
    (9, "aggregation-stage complexity", check_aggregation_complexity),
    (10, "aggregator oracle equivalence", check_aggregator_oracles),
]


@pytest.mark.parametrize("number,title,check", CRITERIA, ids=[f"criterion_{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, title, check):
    ok, detail = _timed(check)
    acceptance_log.record(number, title, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    for number, title, check in CRITERIA:
        acceptance_log.record(number, title, *_timed(check))
