"""The DETOX pipeline run by the parameter server.

One iteration draws a batch, hands each node group its own sample group,
collects the (possibly corrupted) worker outputs, keeps one majority vote
per node group and then aggregates the votes hierarchically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import aggregators
from .adversary import apply_attack
from .core import (
    AggregatorSpec,
    AttackSpec,
    DetoxConfig,
    DimensionMismatchError,
    DivisibilityError,
    FilterStats,
    NodeGroupPartition,
    VoteSet,
    check_groups,
    stack_vectors,
)

WorkerFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Assignment:
    partition: NodeGroupPartition
    sample_groups: tuple[np.ndarray, ...]

    def samples_for_worker(self, worker: int) -> np.ndarray:
        return self.sample_groups[int(self.partition.group_of()[worker])]


def partition_nodes(p: int, r: int, rng: np.random.Generator) -> NodeGroupPartition:
    """Uniformly random partition of ``0..p-1`` into p/r groups of size r."""
    n_groups = check_groups(p, r)
    perm = rng.permutation(p).reshape(n_groups, r)
    return NodeGroupPartition(tuple(tuple(sorted(row)) for row in perm.tolist()))


def draw_batch(n: int, b: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``b`` distinct sample indices uniformly from ``0..n-1``."""
    if b > n:
        raise ValueError(f"batch size {b} exceeds dataset size {n}")
    return rng.choice(n, size=b, replace=False)


def assign_batch(
    S: np.ndarray, partition: NodeGroupPartition, rng: np.random.Generator
) -> Assignment:
    """Split the batch into one sample group of size rb/p per node group.

    Each sample group is sorted ascending, which fixes the summation order
    every replica uses.
    """
    S = np.asarray(S, dtype=np.int64)
    b, p, n_groups = S.shape[0], partition.p, partition.n_groups
    if b % p:
        raise DivisibilityError(f"p={p} does not divide b={b}")
    shuffled = rng.permutation(S)
    groups = tuple(np.sort(chunk) for chunk in np.split(shuffled, n_groups))
    return Assignment(partition, groups)


def majority_vote(outputs) -> tuple[np.ndarray, bool]:
    """Return the vector sent by a strict majority, compared bit for bit.

    Without a strict majority the zero vector is returned with ``False``.
    """
    x = stack_vectors(outputs)
    r = x.shape[0]
    counts: dict[bytes, int] = {}
    first: dict[bytes, int] = {}
    for i in range(r):
        key = x[i].tobytes()
        counts[key] = counts.get(key, 0) + 1
        first.setdefault(key, i)
    key, c = max(counts.items(), key=lambda kv: kv[1])
    if 2 * c > r:
        return x[first[key]].copy(), True
    return np.zeros(x.shape[1]), False


def filter_votes(
    all_outputs,
    partition: NodeGroupPartition,
    honest_grads=None,
) -> VoteSet:
    """Majority-vote each node group's outputs.

    ``all_outputs`` is indexed by worker id. ``honest_grads`` (one row per
    node group) is the simulation's ground truth; when supplied, a vote is
    labelled honest iff it is bitwise equal to its group's honest gradient.
    """
    x = stack_vectors(all_outputs)
    if x.shape[0] != partition.p:
        raise DimensionMismatchError(
            f"expected {partition.p} worker outputs, got {x.shape[0]}"
        )
    n_groups, d = partition.n_groups, x.shape[1]
    votes = np.empty((n_groups, d))
    no_major = np.zeros(n_groups, dtype=bool)
    for j, g in enumerate(partition.groups):
        votes[j], ok = majority_vote(x[list(g)])
        no_major[j] = not ok
    honest_mask = None
    if honest_grads is not None:
        h = stack_vectors(honest_grads)
        if h.shape != votes.shape:
            raise DimensionMismatchError("honest_grads must have one row per node group")
        honest_mask = np.array(
            [votes[j].tobytes() == h[j].tobytes() for j in range(n_groups)]
        )
    return VoteSet(votes, no_major, honest_mask)


def hier_aggr(
    votes,
    k: int,
    agg0: AggregatorSpec,
    agg1: AggregatorSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Hierarchical aggregation: ``agg0`` within random vote groups of size k, ``agg1`` across them.

    With a single vote group the votes are used in their given order and
    ``rng`` is not consumed.
    """
    z = votes.votes if isinstance(votes, VoteSet) else stack_vectors(votes)
    p_hat = z.shape[0]
    if k < 1 or p_hat % k:
        raise DivisibilityError(f"k={k} does not divide the vote count {p_hat}")
    n_groups = p_hat // k
    if n_groups == 1:
        return aggregators.aggregate(agg1, [aggregators.aggregate(agg0, z)])
    order = rng.permutation(p_hat).reshape(n_groups, k)
    group_out = np.stack([aggregators.aggregate(agg0, z[idx]) for idx in order])
    return aggregators.aggregate(agg1, group_out)


def compute_honest(
    model: np.ndarray, assignment: Assignment, worker_fn: WorkerFn
) -> tuple[np.ndarray, np.ndarray]:
    """Run every worker honestly.

    Returns ``(per_worker, per_group)``: each worker evaluates ``worker_fn``
    on its own group's samples, so replicas agree only because the
    computation is deterministic.
    """
    partition = assignment.partition
    per_worker: list[np.ndarray | None] = [None] * partition.p
    for j, g in enumerate(partition.groups):
        for i in g:
            per_worker[i] = np.asarray(worker_fn(model, assignment.sample_groups[j]), dtype=np.float64)
    outputs = np.stack(per_worker)
    per_group = np.stack([outputs[g[0]] for g in partition.groups])
    return outputs, per_group


def detox_step(
    model: np.ndarray,
    cfg: DetoxConfig,
    partition: NodeGroupPartition,
    worker_fn: WorkerFn,
    attack: AttackSpec,
    rng: np.random.Generator,
    *,
    n: int,
    byzantine=(),
    t: int = 0,
    true_grad: np.ndarray | None = None,
) -> tuple[np.ndarray, FilterStats]:
    """One parameter-server iteration: draw, assign, compute, attack, filter, aggregate, update.

    ``worker_fn(w, idx)`` returns the mean gradient over samples ``idx``.
    ``byzantine`` is the fixed set of corrupted worker ids. ``true_grad``,
    when given, is used to record the inexactness ``||G_hat - G||``.
    """
    S = draw_batch(n, cfg.b, rng)
    assignment = assign_batch(S, partition, rng)
    honest, per_group = compute_honest(model, assignment, worker_fn)
    sent = apply_attack(attack, honest, byzantine, partition)
    start = time.perf_counter()
    votes = filter_votes(sent, partition, per_group)
    g_hat = hier_aggr(votes, cfg.k, cfg.agg0, cfg.agg1, rng)
    agg_seconds = time.perf_counter() - start
    new_model = model - cfg.lr_schedule(t) * g_hat
    delta = float(np.linalg.norm(g_hat - true_grad)) if true_grad is not None else float("nan")
    return new_model, FilterStats(votes.q_hat, votes.p_hat, delta, agg_seconds)
