"""Exact and Monte Carlo statistics of the number of Byzantine votes.

With q Byzantine workers spread by a uniformly random partition into
groups of r, the count of groups they hold a strict majority in (``q_hat``)
has a closed-form expectation. This module computes it exactly, evaluates
the known upper bounds on it and samples its distribution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .core import DetoxError, check_groups, split_rng

THEOREM1_MAX_EPS = Fraction(1, 40)
COROLLARY_MAX_EPS = Fraction(1, 80)


class PreconditionViolated(DetoxError):
    pass


class BadDeltaError(DetoxError):
    pass


def _check_q(p: int, q: int) -> None:
    if not 0 <= q <= p:
        raise ValueError(f"need 0 <= q <= p, got q={q}, p={p}")


def exact_expected_qhat_fraction(p: int, q: int, r: int) -> Fraction:
    """E[q_hat] as an exact rational.

    (p/r) * sum_{i=0}^{(r-1)/2} C(q, r-i) C(p-q, i) / C(p, r); ``math.comb``
    returns 0 when the lower index exceeds the upper one.
    """
    n_groups = check_groups(p, r)
    _check_q(p, q)
    num = sum(comb(q, r - i) * comb(p - q, i) for i in range((r - 1) // 2 + 1))
    return Fraction(n_groups * num, comb(p, r))


def exact_expected_qhat(p: int, q: int, r: int) -> float:
    return float(exact_expected_qhat_fraction(p, q, r))


def theorem1_bound(p: int, q: int, r: int) -> float:
    """2q (40 eps (1-eps))^((r-1)/2) / r, valid for r > 3, p >= 2r, eps < 1/40."""
    _check_q(p, q)
    if r <= 3:
        raise PreconditionViolated(f"requires r > 3, got r={r}")
    if p < 2 * r:
        raise PreconditionViolated(f"requires p >= 2r, got p={p}, r={r}")
    if Fraction(q, p) >= THEOREM1_MAX_EPS:
        raise PreconditionViolated(f"requires eps = q/p < 1/40, got {q}/{p}")
    eps = q / p
    return 2 * q * (40 * eps * (1 - eps)) ** ((r - 1) / 2) / r


def r3_bound(q: int, epsilon: float) -> float:
    """Upper bound q * eps * (4 - 2 eps) / 3 on E[q_hat] when r = 3."""
    return q * epsilon * (4 - 2 * epsilon) / 3


def corollary_threshold(delta: float) -> float:
    """1 + 2 ln(1/delta): q_hat stays at or below this with probability >= 1 - delta."""
    if not 0 < delta <= 0.5:
        raise BadDeltaError(f"delta must lie in (0, 1/2], got {delta}")
    return 1 + 2 * math.log(1 / delta)


def corollary_applies(p: int, q: int, r: int) -> bool:
    """Whether eps <= 1/80 and r >= 3 + 2 log2(q) hold."""
    if q == 0:
        return True
    return Fraction(q, p) <= COROLLARY_MAX_EPS and r >= 3 + 2 * math.log2(q)


def tail_bound(p: int, q: int, r: int, theta: float) -> float:
    """(1 / (1 + theta/2)) ** (E[q_hat] * theta / 2), bounding P[q_hat >= E[q_hat](1+theta)]."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    e = exact_expected_qhat(p, q, r)
    return (1 / (1 + theta / 2)) ** (e * theta / 2)


def convergence_rate_bounds(
    kind: str, d: int, n: int, x: float, with_detox: bool
) -> float:
    """Order-of-magnitude inexactness for trimmed mean / iterative filtering.

    Unit constants and no logarithmic factors, so only the scaling is
    meaningful: trimmed mean d*x (d/n after filtering); iterative
    filtering sqrt(x) + sqrt(d/n) (sqrt(d/n) after filtering).
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if not 0 <= x < 0.5:
        raise ValueError("x must lie in [0, 1/2)")
    if kind == "trimmed_mean":
        return d / n if with_detox else d * x
    if kind == "iterative_filtering":
        return math.sqrt(d / n) if with_detox else math.sqrt(x) + math.sqrt(d / n)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

MC_CHUNK = 50_000


@dataclass(frozen=True, eq=False)
class QhatDistribution:
    """Empirical distribution of q_hat.

    ``pair_counts`` holds how often group 0, group 1, and both together
    were Byzantine-majority, for correlation checks.
    """

    p: int
    q: int
    r: int
    trials: int
    histogram: np.ndarray
    pair_counts: tuple[int, int, int]

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.histogram.size), self.histogram) / self.trials)

    @property
    def variance(self) -> float:
        k = np.arange(self.histogram.size)
        m = self.mean
        return float(np.dot((k - m) ** 2, self.histogram) / self.trials)

    @property
    def stderr(self) -> float:
        if self.trials < 2:
            return math.inf
        return math.sqrt(self.variance * self.trials / (self.trials - 1) / self.trials)

    def prob_greater(self, x: float) -> float:
        k = np.arange(self.histogram.size)
        return float(self.histogram[k > x].sum() / self.trials)

    def prob_at_least(self, x: float) -> float:
        k = np.arange(self.histogram.size)
        return float(self.histogram[k >= x].sum() / self.trials)


def sample_qhat(
    p: int, q: int, r: int, trials: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``trials`` random partitions; return q_hat per trial and the majority indicators.

    The Byzantine workers are ids ``0..q-1``; under a uniform partition
    their positions are a uniform q-subset of slots, and slot s belongs to
    group s // r.
    """
    n_groups = check_groups(p, r)
    if q == 0:
        return np.zeros(trials, dtype=np.int64), np.zeros((trials, n_groups), dtype=bool)
    keys = rng.random((trials, p))
    if q < p:
        slots = np.argpartition(keys, q - 1, axis=1)[:, :q]
    else:
        slots = np.broadcast_to(np.arange(p), (trials, p))
    groups = slots // r
    flat = (np.arange(trials)[:, None] * n_groups + groups).ravel()
    counts = np.bincount(flat, minlength=trials * n_groups).reshape(trials, n_groups)
    majority = counts > r // 2
    return majority.sum(axis=1), majority


def monte_carlo_qhat(p: int, q: int, r: int, trials: int, seed: int) -> QhatDistribution:
    """Histogram of q_hat over ``trials`` uniformly random partitions.

    Trials run in fixed-size chunks, each with its own stream keyed by
    ``(seed, chunk index)``, so the result depends only on the arguments.
    """
    n_groups = check_groups(p, r)
    _check_q(p, q)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    hist = np.zeros(n_groups + 1, dtype=np.int64)
    c0 = c1 = c01 = 0
    done, chunk = 0, 0
    while done < trials:
        m = min(MC_CHUNK, trials - done)
        rng = split_rng(seed, "monte-carlo-qhat", p, q, r, chunk)
        qhat, maj = sample_qhat(p, q, r, m, rng)
        hist += np.bincount(qhat, minlength=n_groups + 1)
        if n_groups >= 2:
            c0 += int(maj[:, 0].sum())
            c1 += int(maj[:, 1].sum())
            c01 += int((maj[:, 0] & maj[:, 1]).sum())
        done += m
        chunk += 1
    return QhatDistribution(p, q, r, trials, hist, (c0, c1, c01))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class FilterBoundReport:
    """One grid point of the filtering checks.

    Bound fields are ``None`` when the bound's preconditions do not hold;
    the matching ``*_status`` field then reads ``precondition_skipped``.
    """

    p: int
    q: int
    r: int
    delta: float
    theta: float
    trials: int
    exact_expectation: float
    empirical_mean: float
    empirical_stderr: float
    mc_status: str
    theorem1_bound: float | None
    theorem1_status: str
    r3_bound: float | None
    r3_status: str
    corollary_threshold: float
    empirical_tail: float
    corollary_status: str
    lemma3_bound: float
    lemma3_empirical: float
    lemma3_status: str

    def checks(self) -> dict[str, str]:
        return {
            "monte_carlo": self.mc_status,
            "theorem1": self.theorem1_status,
            "r3": self.r3_status,
            "corollary": self.corollary_status,
            "lemma3": self.lemma3_status,
        }

    @property
    def passed(self) -> bool:
        return all(s != "fail" for s in self.checks().values())

    def to_dict(self) -> dict:
        return asdict(self)


REPORT_COLUMNS = [f for f in FilterBoundReport.__dataclass_fields__]


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def bound_report(
    p: int, q: int, r: int, delta: float, theta: float, trials: int, seed: int
) -> FilterBoundReport:
    """Evaluate every filtering bound at one grid point against exact and sampled values."""
    exact = exact_expected_qhat_fraction(p, q, r)
    dist = monte_carlo_qhat(p, q, r, trials, seed)
    mc_ok = abs(dist.mean - float(exact)) <= 3 * dist.stderr or (
        dist.stderr == 0 and dist.mean == float(exact)
    )

    try:
        t1 = theorem1_bound(p, q, r)
        t1_status = _status(float(exact) <= t1)
    except PreconditionViolated:
        t1, t1_status = None, "precondition_skipped"

    if r == 3 and p >= 6 and 2 * q < p:
        r3 = r3_bound(q, q / p)
        r3_status = _status(float(exact) <= r3)
    else:
        r3, r3_status = None, "precondition_skipped"

    thr = corollary_threshold(delta)
    tail = dist.prob_greater(thr)
    cor_status = _status(tail <= delta) if corollary_applies(p, q, r) else "precondition_skipped"

    l3 = tail_bound(p, q, r, theta)
    l3_emp = dist.prob_at_least(float(exact) * (1 + theta))
    return FilterBoundReport(
        p=p,
        q=q,
        r=r,
        delta=delta,
        theta=theta,
        trials=trials,
        exact_expectation=float(exact),
        empirical_mean=dist.mean,
        empirical_stderr=dist.stderr,
        mc_status=_status(mc_ok),
        theorem1_bound=t1,
        theorem1_status=t1_status,
        r3_bound=r3,
        r3_status=r3_status,
        corollary_threshold=thr,
        empirical_tail=tail,
        corollary_status=cor_status,
        lemma3_bound=l3,
        lemma3_empirical=l3_emp,
        lemma3_status=_status(l3_emp <= l3),
    )
