"""End-to-end experiments on synthetic tasks with known full gradients."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import aggregators
from .adversary import place_byzantine
from .core import (
    AggregatorSpec,
    ConfigError,
    DetoxConfig,
    NodeGroupPartition,
    check_groups,
    split_rng,
    validate_config,
)
from .engine import (
    assign_batch,
    detox_step,
    draw_batch,
    filter_votes,
    hier_aggr,
    partition_nodes,
)

TASK_KINDS = ("linear_regression", "logistic_regression", "mean_estimation")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    d: int
    n: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.d < 1 or self.n < 1:
            raise ConfigError("d and n must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "n": self.n,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TaskSpec":
        unknown = set(obj) - {"kind", "d", "n", "noise_sigma", "seed"}
        if unknown:
            raise ConfigError(f"unknown task fields: {sorted(unknown)}")
        return cls(**obj)


class Task:
    """Finite-sum objective F(w) = (1/n) sum_i f_i(w) over a fixed dataset.

    ``grad(w, idx)`` is the mean per-sample gradient over ``idx`` taken in
    the order given; ``full_grad(w)`` is the exact gradient of F.
    """

    def __init__(self, spec: TaskSpec, X: np.ndarray, y: np.ndarray, w_star: np.ndarray):
        self.spec = spec
        self.X = X
        self.y = y
        self.w_star = w_star

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def sample_grads(self, w: np.ndarray, idx) -> np.ndarray:
        raise NotImplementedError

    def loss(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, w: np.ndarray, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.add.reduce(self.sample_grads(w, idx), axis=0) / idx.shape[0]

    def full_grad(self, w: np.ndarray) -> np.ndarray:
        return self.grad(w, np.arange(self.n))


class LinearRegression(Task):
    def sample_grads(self, w, idx):
        X = self.X[idx]
        return X * (X @ w - self.y[idx])[:, None]

    def loss(self, w):
        res = self.X @ w - self.y
        return float(0.5 * np.mean(res * res))


class LogisticRegression(Task):
    """Labels in {-1, +1}; f_i(w) = log(1 + exp(-y_i x_i.w))."""

    def sample_grads(self, w, idx):
        X, y = self.X[idx], self.y[idx]
        m = y * (X @ w)
        # sigmoid(-m) via tanh, which cannot overflow
        return X * (-y * 0.5 * (1.0 - np.tanh(0.5 * m)))[:, None]

    def loss(self, w):
        m = self.y * (self.X @ w)
        return float(np.mean(np.logaddexp(0.0, -m)))


class MeanEstimation(Task):
    """f_i(w) = |w - x_i|^2 / 2, minimised at the sample mean."""

    def sample_grads(self, w, idx):
        return w - self.X[idx]

    def loss(self, w):
        diff = self.X - w
        return float(0.5 * np.mean(np.einsum("ij,ij->i", diff, diff)))


def gen_task(spec: TaskSpec) -> Task:
    """Build a synthetic dataset for ``spec``.

    Regression tasks draw standard-normal features and a generating weight
    vector w* with unit-variance entries. Linear targets are X w* plus
    Gaussian noise; logistic labels are sign(X w* + noise). Mean estimation
    samples are standard normal (w* = 0).
    """
    rng = split_rng(spec.seed, f"task-{spec.kind}")
    n, d = spec.n, spec.d
    X = rng.standard_normal((n, d))
    if spec.kind == "mean_estimation":
        return MeanEstimation(spec, X, np.zeros(n), np.zeros(d))
    w_star = rng.standard_normal(d)
    noise = spec.noise_sigma * rng.standard_normal(n)
    if spec.kind == "linear_regression":
        return LinearRegression(spec, X, X @ w_star + noise, w_star)
    y = np.where(X @ w_star + noise >= 0, 1.0, -1.0)
    return LogisticRegression(spec, X, y, w_star)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

RUN_COLUMNS = ("iteration", "loss", "delta", "q_hat", "agg_seconds")


@dataclass
class RunRecord:
    """Per-iteration trace of one training run (loss is taken after the update)."""

    loss: np.ndarray
    delta: np.ndarray
    q_hat: np.ndarray
    agg_seconds: np.ndarray
    final_model: np.ndarray
    byzantine: tuple[int, ...] = ()

    @property
    def iterations(self) -> int:
        return self.loss.shape[0]

    def rows(self, timing: bool = True) -> list[dict]:
        return [
            {
                "iteration": t,
                "loss": float(self.loss[t]),
                "delta": float(self.delta[t]),
                "q_hat": int(self.q_hat[t]),
                "agg_seconds": float(self.agg_seconds[t]) if timing else 0.0,
            }
            for t in range(self.iterations)
        ]

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=RUN_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows(timing):
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def _setup(cfg: DetoxConfig) -> tuple[NodeGroupPartition, frozenset[int]]:
    partition = partition_nodes(cfg.p, cfg.r, split_rng(cfg.seed, "partition"))
    byz = place_byzantine(
        cfg.p, cfg.q, partition, cfg.attack.placement, split_rng(cfg.seed, "byzantine")
    )
    return partition, byz


def run_training(cfg: DetoxConfig, task: Task, w0: np.ndarray | None = None) -> RunRecord:
    """Run ``cfg.iterations`` DETOX steps on ``task`` starting from ``w0`` (zeros by default).

    The node partition and Byzantine set are drawn once from the
    ``partition`` and ``byzantine`` streams; batches and vote groups come
    from the ``steps`` stream.
    """
    validate_config(cfg)
    if cfg.d != task.d:
        raise ConfigError(f"config d={cfg.d} does not match task d={task.d}")
    if task.n < cfg.b:
        raise ConfigError(f"dataset size n={task.n} is smaller than batch size b={cfg.b}")
    partition, byz = _setup(cfg)
    rng = split_rng(cfg.seed, "steps")
    w = np.zeros(cfg.d) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    T = cfg.iterations
    loss = np.empty(T)
    delta = np.empty(T)
    q_hat = np.empty(T, dtype=np.int64)
    secs = np.empty(T)
    for t in range(T):
        G = task.full_grad(w)
        w, stats = detox_step(
            w, cfg, partition, task.grad, cfg.attack, rng,
            n=task.n, byzantine=byz, t=t, true_grad=G,
        )
        secs[t] = stats.agg_seconds
        loss[t] = task.loss(w)
        delta[t] = stats.delta_inexact
        q_hat[t] = stats.q_hat
    return RunRecord(loss, delta, q_hat, secs, w, tuple(sorted(byz)))


def minibatch_sgd(cfg: DetoxConfig, task: Task, w0: np.ndarray | None = None) -> np.ndarray:
    """Byzantine-free reference: w <- w - eta_t * mean_j g_j on the same sample draws.

    Consumes the ``steps`` stream exactly like :func:`run_training` does
    when there is a single vote group, so trajectories can be compared.
    Returns the model after every iteration, shape ``(T, d)``.
    """
    validate_config(cfg)
    partition = partition_nodes(cfg.p, cfg.r, split_rng(cfg.seed, "partition"))
    rng = split_rng(cfg.seed, "steps")
    w = np.zeros(cfg.d) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    out = np.empty((cfg.iterations, cfg.d))
    for t in range(cfg.iterations):
        S = draw_batch(task.n, cfg.b, rng)
        assignment = assign_batch(S, partition, rng)
        grads = np.stack([task.grad(w, s) for s in assignment.sample_groups])
        if cfg.p_hat // cfg.k > 1:
            rng.permutation(cfg.p_hat)
        w = w - cfg.lr_schedule(t) * (np.add.reduce(grads, axis=0) / grads.shape[0])
        out[t] = w
    return out


# ---------------------------------------------------------------------------
# Robust mean estimation
# ---------------------------------------------------------------------------

DEFAULT_ESTIMATORS = ("geo_median", "coord_median", "detox_geo_median", "detox_coord_median")


def mean_estimation_experiment(
    d: int,
    p: int,
    r: int,
    q: int,
    byz_norm: float,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
    seed: int = 0,
    k: int = 5,
    byz_vector: str = "constant",
) -> list[dict]:
    """Estimate the zero mean of N(0, I_d) with q Byzantine nodes.

    Each of the p nodes is handed one sample (batch b = p). Byzantine
    nodes send the constant vector with every entry ``byz_norm / sqrt(d)``,
    or, with ``byz_vector="honest_mean"``, the empirical mean of the honest
    samples (a vacuous attack).
    Plain estimators (``mean``, ``geo_median``, ``coord_median``) see the
    p raw outputs; ``detox_<agg>`` estimators give each node group the
    mean of its r samples, majority-vote, then apply mean over vote
    groups of size ``k`` followed by ``<agg>``. The error is the
    Euclidean norm of the estimate.
    """
    n_groups = check_groups(p, r)
    if not byz_norm >= 0:
        raise ValueError("byz_norm must be >= 0")
    rng = split_rng(seed, "mean-estimation")
    samples = rng.standard_normal((p, d))
    singletons = NodeGroupPartition(tuple((i,) for i in range(p)))
    byz = place_byzantine(p, q, singletons, "random_fixed", rng)
    byz_idx = sorted(byz)
    if byz_vector == "constant":
        attack_vec = np.full(d, byz_norm / np.sqrt(d))
    elif byz_vector == "honest_mean":
        attack_vec = aggregators.mean(np.delete(samples, byz_idx, axis=0))
    else:
        raise ValueError(f"unknown byz_vector {byz_vector!r}")

    rows = []
    for name in estimators:
        if name.startswith("detox_"):
            partition = partition_nodes(p, r, split_rng(seed, "mean-estimation-partition"))
            sent = np.empty((p, d))
            honest = np.empty((n_groups, d))
            for j, g in enumerate(partition.groups):
                # node group j owns samples j*r .. j*r+r-1
                honest[j] = np.add.reduce(samples[j * r : (j + 1) * r], axis=0) / r
                sent[list(g)] = honest[j]
            sent[byz_idx] = attack_vec
            votes = filter_votes(sent, partition, honest)
            est = hier_aggr(
                votes, k, AggregatorSpec("mean"), AggregatorSpec(name[len("detox_"):]),
                split_rng(seed, "mean-estimation-votes"),
            )
            q_hat = votes.q_hat
        else:
            sent = samples.copy()
            sent[byz_idx] = attack_vec
            est = aggregators.aggregate(AggregatorSpec(name), sent)
            q_hat = q
        rows.append({"estimator": name, "error": float(np.linalg.norm(est)), "q_hat": q_hat})
    return rows


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------


def _median_time(fn, reps: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def timing_probe(
    p_values: Sequence[int],
    d: int,
    agg: AggregatorSpec,
    detox: bool,
    r: int = 5,
    k: int = 10,
    reps: int = 11,
    warmup: int = 2,
    seed: int = 0,
) -> list[dict]:
    """Median wall-clock of the server-side aggregation stage for each p.

    Plain mode times ``agg`` over all p outputs. DETOX mode times majority
    voting over node groups of size ``r`` plus hierarchical aggregation
    with ``agg`` inside vote groups of fixed size ``k`` and mean across
    them.
    """
    if list(p_values) != sorted(p_values):
        raise ValueError("p_values must be sorted ascending")
    rows = []
    for p in p_values:
        rng = split_rng(seed, "timing", p, d)
        if detox:
            n_groups = check_groups(p, r)
            partition = partition_nodes(p, r, rng)
            group_grads = rng.standard_normal((n_groups, d))
            outputs = np.empty((p, d))
            for j, g in enumerate(partition.groups):
                outputs[list(g)] = group_grads[j]
            mean_spec = AggregatorSpec("mean")

            def run(outputs=outputs, partition=partition, rng=rng):
                votes = filter_votes(outputs, partition)
                return hier_aggr(votes, k, agg, mean_spec, rng)
        else:
            outputs = rng.standard_normal((p, d))

            def run(outputs=outputs):
                return aggregators.aggregate(agg, outputs)

        rows.append({"p": p, "d": d, "detox": detox, "seconds": _median_time(run, reps, warmup)})
    return rows


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
