"""Robust aggregation rules.

Every rule takes a non-empty collection of equal-length vectors (a list of
1-D arrays or an ``(n, d)`` array) and returns a new 1-D ``float64`` array.
They are pure functions and safe to call from several threads.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import AggregatorSpec, DetoxError, stack_vectors


class TrimTooLargeError(DetoxError):
    pass


class TooFewVectorsError(DetoxError):
    pass


class BadMError(DetoxError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    """Weiszfeld hit ``max_iter`` before the step size dropped below ``tol``."""


GEO_SMOOTHING = 1e-10


def _average(x: np.ndarray) -> np.ndarray:
    """Row average summed in input order, clamped to each coordinate's [min, max].

    Rows are accumulated one at a time so the rounding never depends on
    memory layout (numpy switches to pairwise sums on contiguous axes).
    The exact mean always lies in [min, max]; the clamp only removes
    rounding drift, so constant coordinates come back bit-exact.
    """
    acc = x[0].astype(np.float64, copy=True)
    for row in x[1:]:
        acc += row
    return np.clip(acc / x.shape[0], x.min(axis=0), x.max(axis=0))


def mean(vs) -> np.ndarray:
    return _average(stack_vectors(vs))


def coord_median(vs) -> np.ndarray:
    """Coordinate-wise median; even counts use the midpoint of the middle pair."""
    return np.median(stack_vectors(vs), axis=0)


@dataclass
class GeoMedianResult:
    point: np.ndarray
    objective: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def geo_objective(x: np.ndarray, points: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(points - x, axis=1)))


def _weiszfeld_step(x: np.ndarray, pts: np.ndarray) -> np.ndarray | None:
    """One Vardi-Zhang step from ``x``; None when ``x`` is already optimal.

    Points closer than ``GEO_SMOOTHING`` count as coincident with ``x``.
    Plain Weiszfeld stalls there because their weight blows up; the
    modified step moves off the point unless the pull of the others is
    too weak to beat its multiplicity, in which case ``x`` is the median.
    """
    dist = np.linalg.norm(pts - x, axis=1)
    on = dist <= GEO_SMOOTHING
    eta = int(on.sum())
    if eta == len(pts):
        return None
    w = 1.0 / (dist[~on] + GEO_SMOOTHING)
    others = pts[~on]
    t = (w @ others) / w.sum()
    if eta == 0:
        return t
    pull = float(np.linalg.norm(w @ (others - x)))
    if pull <= eta:
        return None
    lam = eta / pull
    return (1.0 - lam) * t + lam * x


def weiszfeld(vs, tol: float = 1e-8, max_iter: int = 1000) -> GeoMedianResult:
    """Smoothed Weiszfeld iteration started from the coordinate-wise median.

    Each distance gets ``GEO_SMOOTHING`` added before inversion, and an
    iterate sitting on an input point takes the Vardi-Zhang step instead
    of freezing there. A step that would increase the objective is
    rejected and the iteration stops, which keeps the recorded objective
    sequence non-increasing. When the median is itself an input point the
    iterates only creep towards it, so every iteration also tests the
    nearest input point for optimality and jumps there when it passes.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    pts = stack_vectors(vs)
    x = np.median(pts, axis=0)
    obj = geo_objective(x, pts)
    history = [obj]
    for it in range(1, max_iter + 1):
        near = pts[int(np.argmin(np.linalg.norm(pts - x, axis=1)))]
        if not np.array_equal(near, x) and _weiszfeld_step(near, pts) is None:
            near_obj = geo_objective(near, pts)
            if near_obj <= obj:
                history.append(near_obj)
                return GeoMedianResult(near.copy(), history, it, converged=True)
        x_new = _weiszfeld_step(x, pts)
        if x_new is None:
            return GeoMedianResult(x, history, it, converged=True)
        obj_new = geo_objective(x_new, pts)
        if obj_new > obj:
            return GeoMedianResult(x, history, it, converged=True)
        step = float(np.linalg.norm(x_new - x))
        x, obj = x_new, obj_new
        history.append(obj)
        if step <= tol:
            return GeoMedianResult(x, history, it, converged=True)
    return GeoMedianResult(x, history, max_iter, converged=False)


def geo_median(vs, tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """Geometric median (argmin of the summed Euclidean distances).

    Emits :class:`NonConvergenceWarning` and returns the best iterate when
    ``max_iter`` is reached first. Use :func:`weiszfeld` for the full trace.
    """
    res = weiszfeld(vs, tol=tol, max_iter=max_iter)
    if not res.converged:
        warnings.warn(
            f"geometric median did not converge in {max_iter} iterations",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return res.point


def trim_count(n: int, alpha: float) -> int:
    # rounding guards against alpha * n landing a hair above an integer
    return math.ceil(round(alpha * n, 9))


def trimmed_mean(vs, alpha: float) -> np.ndarray:
    """Drop the ceil(alpha*n) largest and smallest values per coordinate, average the rest."""
    if not 0 <= alpha < 0.5:
        raise ValueError("alpha must lie in [0, 1/2)")
    x = stack_vectors(vs)
    n = x.shape[0]
    t = trim_count(n, alpha)
    if 2 * t >= n:
        raise TrimTooLargeError(f"trimming {t} from each side leaves nothing of n={n}")
    s = np.sort(x, axis=0)
    return _average(s[t : n - t])


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances by direct differencing (no Gram-matrix cancellation)."""
    n = x.shape[0]
    out = np.zeros((n, n))
    for i in range(n - 1):
        diff = x[i + 1 :] - x[i]
        dd = np.einsum("ij,ij->i", diff, diff)
        out[i, i + 1 :] = dd
        out[i + 1 :, i] = dd
    return out


def krum_scores(dists: np.ndarray, n_neighbors: int) -> np.ndarray:
    """Sum of the ``n_neighbors`` smallest distances from each point to the others."""
    n = dists.shape[0]
    if n_neighbors <= 0 or n == 1:
        return np.zeros(n)
    others = np.sort(dists + np.diag(np.full(n, np.inf)), axis=1)
    return others[:, :n_neighbors].sum(axis=1)


def _check_krum(n: int, q: int) -> None:
    if q < 0:
        raise ValueError("q must be >= 0")
    if n < 2 * q + 3:
        raise TooFewVectorsError(f"Krum needs n >= 2q+3, got n={n}, q={q}")


def krum_select(vs, q: int, m: int = 1) -> np.ndarray:
    """Indices of the ``m`` lowest Krum scores, ties broken by lower index."""
    x = stack_vectors(vs)
    n = x.shape[0]
    _check_krum(n, q)
    if not 1 <= m <= n - q - 2:
        raise BadMError(f"m must lie in [1, n-q-2] = [1, {n - q - 2}], got {m}")
    scores = krum_scores(pairwise_sq_dists(x), n - q - 2)
    return np.argsort(scores, kind="stable")[:m]


def krum(vs, q: int) -> np.ndarray:
    """Input vector with the smallest sum of squared distances to its n-q-2 nearest others."""
    x = stack_vectors(vs)
    return x[krum_select(x, q, 1)[0]].copy()


def multi_krum(vs, q: int, m: int) -> np.ndarray:
    """Mean of the ``m`` best-scored inputs, summed in ascending input order."""
    x = stack_vectors(vs)
    idx = np.sort(krum_select(x, q, m))
    return mean(x[idx])


def _bulyan_select(x: np.ndarray, q: int, inner: AggregatorSpec | None) -> np.ndarray:
    n = x.shape[0]
    pool = list(range(n))
    chosen: list[int] = []
    if inner is None or (inner.kind == "krum" and inner.get("q", q) == q):
        dists = pairwise_sq_dists(x)
        for _ in range(n - 2 * q):
            sub = dists[np.ix_(pool, pool)]
            m = len(pool)
            # neighbour count shrinks with the pool; at least one neighbour once m >= 2
            nn = min(max(m - q - 2, 1), m - 1)
            pick = int(np.argmin(krum_scores(sub, nn)))
            chosen.append(pool.pop(pick))
        return np.array(chosen)
    for _ in range(n - 2 * q):
        out = aggregate(inner, x[pool])
        d = np.linalg.norm(x[pool] - out, axis=1)
        chosen.append(pool.pop(int(np.argmin(d))))
    return np.array(chosen)


def bulyan(vs, q: int, inner: AggregatorSpec | None = None) -> np.ndarray:
    """Two-phase Bulyan.

    Selection: ``inner`` (Krum with parameter ``q`` by default) is applied
    ``n - 2q`` times, removing the picked vector from the pool each time.
    When ``inner`` does not return a pool member, the pool vector closest
    to its output is taken. Aggregation: per coordinate, average the
    ``n - 4q`` selected values closest to the selected set's median.
    """
    x = stack_vectors(vs)
    n = x.shape[0]
    if q < 0:
        raise ValueError("q must be >= 0")
    if n < 4 * q + 3:
        raise TooFewVectorsError(f"Bulyan needs n >= 4q+3, got n={n}, q={q}")
    sel = x[_bulyan_select(x, q, inner)]
    beta = n - 4 * q
    med = np.median(sel, axis=0)
    order = np.argsort(np.abs(sel - med), axis=0, kind="stable")[:beta]
    return _average(np.take_along_axis(sel, order, axis=0))


def sign_majority(vs) -> np.ndarray:
    """Per-coordinate sign of the summed signs; exact ties give 0."""
    x = stack_vectors(vs)
    return np.sign(np.sign(x).sum(axis=0))


def aggregate(spec: AggregatorSpec, vs) -> np.ndarray:
    """Dispatch on ``spec.kind``."""
    kind = spec.kind
    if kind == "mean":
        return mean(vs)
    if kind == "coord_median":
        return coord_median(vs)
    if kind == "geo_median":
        return geo_median(vs, tol=spec.get("tol", 1e-8), max_iter=spec.get("max_iter", 1000))
    if kind == "trimmed_mean":
        return trimmed_mean(vs, spec.get("alpha", 0.25))
    if kind == "krum":
        return krum(vs, spec.get("q", 0))
    if kind == "multi_krum":
        return multi_krum(vs, spec.get("q", 0), spec.get("m", 1))
    if kind == "bulyan":
        return bulyan(vs, spec.get("q", 0), spec.get("inner"))
    if kind == "sign_majority":
        return sign_majority(vs)
    raise ValueError(f"unknown aggregator {kind!r}")
