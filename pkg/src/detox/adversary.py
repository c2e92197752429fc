"""Byzantine worker placement and attacks.

Attacks rewrite the rows of the honest output buffer that belong to
Byzantine workers. Colluders in the same node group always emit the same
vector, so they win the group's vote exactly when they hold a majority.
"""

from __future__ import annotations

import numpy as np

from .core import AttackSpec, ByzantineRatioError, NodeGroupPartition, stack_vectors


def place_byzantine(
    p: int,
    q: int,
    partition: NodeGroupPartition,
    placement: str,
    rng: np.random.Generator,
) -> frozenset[int]:
    """Choose the fixed set of Byzantine workers.

    ``random_fixed`` draws a uniform q-subset. ``adversarial_grouped`` is a
    worst-case placement (not part of the random model): it fills node
    groups with (r+1)/2 colluders each, capturing floor(q / ((r+1)/2))
    groups, and parks any remainder in one further group.
    """
    if q < 0 or 2 * q >= p:
        raise ByzantineRatioError(f"need 0 <= q < p/2, got q={q}, p={p}")
    if q == 0:
        return frozenset()
    if placement == "random_fixed":
        return frozenset(int(i) for i in rng.choice(p, size=q, replace=False))
    if placement != "adversarial_grouped":
        raise ValueError(f"unknown placement {placement!r}")
    need = (partition.r + 1) // 2
    order = rng.permutation(partition.n_groups)
    chosen: list[int] = []
    remaining = q
    for j in order:
        if remaining == 0:
            break
        take = min(need, remaining)
        chosen.extend(partition.groups[j][:take])
        remaining -= take
    return frozenset(chosen)


def _alie_vector(
    attack: AttackSpec,
    honest: np.ndarray,
    byz: list[int],
    partition: NodeGroupPartition | None,
) -> np.ndarray:
    if partition is None:
        pool = honest[byz] if attack.alie_source == "byzantine_visible" else honest
    else:
        owner = partition.group_of()
        reps = np.array([g[0] for g in partition.groups])
        if attack.alie_source == "byzantine_visible":
            seen = sorted({int(owner[i]) for i in byz})
            reps = reps[seen]
        pool = honest[reps]
    mu = pool.mean(axis=0)
    sigma = pool.std(axis=0)
    return mu + attack.z * sigma


def apply_attack(
    attack: AttackSpec,
    honest_outputs,
    byzantine,
    partition: NodeGroupPartition | None = None,
) -> np.ndarray:
    """Return the buffer the server receives; honest rows pass through unchanged.

    ``reverse_gradient`` sends ``-c * g``, ``constant`` fills every entry
    with ``value``, and ``alie`` has all colluders send ``mu + z * sigma``,
    estimated per coordinate from one honest gradient per node group:
    either the groups containing a Byzantine worker (``byzantine_visible``)
    or all groups (``all``). Without a partition each worker counts as its
    own group.
    """
    honest = stack_vectors(honest_outputs)
    out = honest.copy()
    byz = sorted(int(i) for i in byzantine)
    if attack.kind == "none" or not byz:
        return out
    if attack.kind == "reverse_gradient":
        out[byz] = -attack.c * honest[byz]
    elif attack.kind == "constant":
        out[byz] = attack.value
    elif attack.kind == "alie":
        out[byz] = _alie_vector(attack, honest, byz, partition)
    else:
        raise ValueError(f"unknown attack {attack.kind!r}")
    return out
