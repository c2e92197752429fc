"""Shared types, configuration validation and seeded randomness.

Gradient vectors are plain 1-D ``float64`` numpy arrays. Everything else
here is an immutable dataclass that round-trips through JSON.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np


class DetoxError(ValueError):
    """Base class for every error raised by this package."""


class DivisibilityError(DetoxError):
    pass


class ParityError(DetoxError):
    pass


class ByzantineRatioError(DetoxError):
    pass


class EmptyInputError(DetoxError):
    pass


class DimensionMismatchError(DetoxError):
    pass


class NonFiniteError(DetoxError):
    pass


class ConfigError(DetoxError):
    """Malformed or unknown configuration fields."""


# ---------------------------------------------------------------------------
# Gradient vectors
# ---------------------------------------------------------------------------


def as_gradvec(v: Any, d: int | None = None) -> np.ndarray:
    """Convert ``v`` to a finite 1-D float64 array, optionally checking length."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D vector, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise DimensionMismatchError(f"expected dimension {d}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("vector contains NaN or Inf")
    return arr


def stack_vectors(vs: Any) -> np.ndarray:
    """Stack a non-empty collection of equal-length vectors into an (n, d) array.

    Accepts either a sequence of 1-D vectors or an already-stacked 2-D
    array. NaN/Inf entries are rejected.
    """
    if isinstance(vs, np.ndarray) and vs.ndim == 2:
        arr = np.asarray(vs, dtype=np.float64)
    else:
        vs = list(vs)
        if not vs:
            raise EmptyInputError("cannot aggregate an empty list of vectors")
        rows = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vs]
        d = rows[0].shape[0]
        for i, row in enumerate(rows):
            if row.shape[0] != d:
                raise DimensionMismatchError(
                    f"vector {i} has dimension {row.shape[0]}, expected {d}"
                )
        arr = np.stack(rows)
    if arr.shape[0] == 0:
        raise EmptyInputError("cannot aggregate an empty list of vectors")
    if arr.shape[1] == 0:
        raise DimensionMismatchError("vectors must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("input vectors contain NaN or Inf")
    return arr


# ---------------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------------


def _label_words(label: str) -> tuple[int, ...]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def split_rng(seed: int, stream_label: str, *indices: int) -> np.random.Generator:
    """Return an independent Philox stream keyed by ``(seed, stream_label, *indices)``.

    The label is hashed with SHA-256 so the mapping is identical on every
    platform; ``indices`` give sub-streams (e.g. one per Monte Carlo chunk).
    """
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    key = _label_words(stream_label) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------

AGGREGATOR_KINDS = (
    "mean",
    "coord_median",
    "geo_median",
    "trimmed_mean",
    "krum",
    "multi_krum",
    "bulyan",
    "sign_majority",
)

_AGG_PARAMS: dict[str, set[str]] = {
    "mean": set(),
    "coord_median": set(),
    "geo_median": {"tol", "max_iter"},
    "trimmed_mean": {"alpha"},
    "krum": {"q"},
    "multi_krum": {"q", "m"},
    "bulyan": {"q", "inner"},
    "sign_majority": set(),
}


@dataclass(frozen=True)
class AggregatorSpec:
    """Aggregator identifier plus its kind-specific parameters.

    ``params`` keys: ``alpha`` (trimmed_mean), ``q`` and ``m`` (krum,
    multi_krum), ``q`` and ``inner`` (bulyan; ``inner`` is another spec),
    ``tol`` and ``max_iter`` (geo_median).
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in AGGREGATOR_KINDS:
            raise ConfigError(f"unknown aggregator kind {self.kind!r}")
        params = dict(self.params)
        extra = set(params) - _AGG_PARAMS[self.kind]
        if extra:
            raise ConfigError(f"unknown parameters for {self.kind}: {sorted(extra)}")
        if "alpha" in params and not 0 <= params["alpha"] < 0.5:
            raise ConfigError("alpha must lie in [0, 1/2)")
        if "tol" in params and not params["tol"] > 0:
            raise ConfigError("tol must be positive")
        if "max_iter" in params and params["max_iter"] < 1:
            raise ConfigError("max_iter must be >= 1")
        if "m" in params and params["m"] < 1:
            raise ConfigError("m must be >= 1")
        if "q" in params and params["q"] < 0:
            raise ConfigError("q must be >= 0")
        inner = params.get("inner")
        if inner is not None and not isinstance(inner, AggregatorSpec):
            params["inner"] = AggregatorSpec.from_dict(inner)
        object.__setattr__(self, "params", params)

    def get(self, name: str, default: Any = None) -> Any:
        return self.params.get(name, default)

    def to_dict(self) -> dict[str, Any]:
        params = {
            k: (v.to_dict() if isinstance(v, AggregatorSpec) else v)
            for k, v in sorted(self.params.items())
        }
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, obj: Any) -> "AggregatorSpec":
        if isinstance(obj, AggregatorSpec):
            return obj
        if isinstance(obj, str):
            return cls(obj)
        _check_keys(obj, {"kind", "params"}, "aggregator")
        return cls(obj["kind"], dict(obj.get("params", {})))


ATTACK_KINDS = ("none", "reverse_gradient", "constant", "alie")
PLACEMENTS = ("random_fixed", "adversarial_grouped")
ALIE_SOURCES = ("byzantine_visible", "all")


@dataclass(frozen=True)
class AttackSpec:
    """Byzantine behaviour and placement.

    ``alie_source`` selects which honest gradients the colluders use to
    estimate the mean and standard deviation for the ALIE attack.
    """

    kind: str = "none"
    c: float = 1.0
    value: float = -1.0
    z: float = 1.0
    placement: str = "random_fixed"
    alie_source: str = "byzantine_visible"

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not self.c > 0:
            raise ConfigError("reverse-gradient scale c must be positive")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown placement {self.placement!r}")
        if self.alie_source not in ALIE_SOURCES:
            raise ConfigError(f"unknown alie_source {self.alie_source!r}")
        for name in ("c", "value", "z"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: Any) -> "AttackSpec":
        if isinstance(obj, AttackSpec):
            return obj
        _check_keys(obj, {f.name for f in dataclasses.fields(cls)}, "attack")
        return cls(**obj)


@dataclass(frozen=True)
class LRSchedule:
    """Step size ``lr * decay ** (t // period)``; ``constant`` ignores decay."""

    kind: str = "constant"
    lr: float = 0.1
    decay: float = 1.0
    period: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "geometric"):
            raise ConfigError(f"unknown lr schedule {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.decay <= 1:
            raise ConfigError("decay must lie in (0, 1]")
        if self.period < 1:
            raise ConfigError("period must be >= 1")

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.lr
        return self.lr * self.decay ** (t // self.period)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: Any) -> "LRSchedule":
        if isinstance(obj, LRSchedule):
            return obj
        _check_keys(obj, {f.name for f in dataclasses.fields(cls)}, "lr_schedule")
        return cls(**obj)


@dataclass(frozen=True)
class DetoxConfig:
    """Full experiment configuration.

    ``k`` is the vote-group size used by hierarchical aggregation; setting
    ``r = 1`` and ``k = p`` gives a vanilla single-level aggregator
    (``agg0`` over all outputs, ``agg1`` applied to the single result).
    """

    p: int
    q: int
    r: int
    b: int
    k: int
    d: int
    agg0: AggregatorSpec = AggregatorSpec("mean")
    agg1: AggregatorSpec = AggregatorSpec("coord_median")
    attack: AttackSpec = AttackSpec()
    lr_schedule: LRSchedule = LRSchedule()
    seed: int = 0
    iterations: int = 100

    @property
    def p_hat(self) -> int:
        return self.p // self.r

    @property
    def epsilon(self) -> float:
        return self.q / self.p

    def replace(self, **changes: Any) -> "DetoxConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "p": self.p,
            "q": self.q,
            "r": self.r,
            "b": self.b,
            "k": self.k,
            "d": self.d,
            "agg0": self.agg0.to_dict(),
            "agg1": self.agg1.to_dict(),
            "attack": self.attack.to_dict(),
            "lr_schedule": self.lr_schedule.to_dict(),
            "seed": self.seed,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "DetoxConfig":
        _check_keys(obj, {f.name for f in dataclasses.fields(cls)}, "config")
        missing = {"p", "q", "r", "b", "k", "d"} - set(obj)
        if missing:
            raise ConfigError(f"config is missing fields {sorted(missing)}")
        kwargs = dict(obj)
        for name in ("p", "q", "r", "b", "k", "d", "seed", "iterations"):
            if name in kwargs:
                if isinstance(kwargs[name], bool) or not isinstance(kwargs[name], int):
                    raise ConfigError(f"{name} must be an integer")
        if "agg0" in kwargs:
            kwargs["agg0"] = AggregatorSpec.from_dict(kwargs["agg0"])
        if "agg1" in kwargs:
            kwargs["agg1"] = AggregatorSpec.from_dict(kwargs["agg1"])
        if "attack" in kwargs:
            kwargs["attack"] = AttackSpec.from_dict(kwargs["attack"])
        if "lr_schedule" in kwargs:
            kwargs["lr_schedule"] = LRSchedule.from_dict(kwargs["lr_schedule"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "DetoxConfig":
        return cls.from_dict(json.loads(text))


def _check_keys(obj: Any, allowed: set[str], what: str) -> None:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{what} must be a JSON object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown {what} fields: {sorted(unknown)}")


def validate_config(cfg: DetoxConfig) -> DetoxConfig:
    """Return ``cfg`` unchanged if it satisfies every structural invariant.

    Checks, in order: r odd and positive, r | p, p | b, k | p/r, and
    0 <= q < p/2.
    """
    if cfg.p < 1 or cfg.d < 1 or cfg.b < 1 or cfg.k < 1:
        raise ConfigError("p, b, k and d must be positive")
    if cfg.iterations < 0:
        raise ConfigError("iterations must be non-negative")
    if cfg.r < 1 or cfg.r % 2 == 0:
        raise ParityError(f"redundancy ratio r={cfg.r} must be a positive odd integer")
    if cfg.p % cfg.r:
        raise DivisibilityError(f"r={cfg.r} does not divide p={cfg.p}")
    if cfg.b % cfg.p:
        raise DivisibilityError(f"p={cfg.p} does not divide b={cfg.b}")
    if (cfg.p // cfg.r) % cfg.k:
        raise DivisibilityError(f"k={cfg.k} does not divide p/r={cfg.p // cfg.r}")
    if cfg.q < 0 or 2 * cfg.q >= cfg.p:
        raise ByzantineRatioError(f"need 0 <= q < p/2, got q={cfg.q}, p={cfg.p}")
    return cfg


def check_groups(p: int, r: int) -> int:
    """Validate a node-group shape and return the number of groups p/r."""
    if r < 1 or r % 2 == 0:
        raise ParityError(f"redundancy ratio r={r} must be a positive odd integer")
    if p < 1 or p % r:
        raise DivisibilityError(f"r={r} does not divide p={p}")
    return p // r


# ---------------------------------------------------------------------------
# Run-time values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeGroupPartition:
    """Disjoint node groups of equal odd size covering workers ``0..p-1``."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        if not groups:
            raise EmptyInputError("partition needs at least one group")
        r = len(groups[0])
        if any(len(g) != r for g in groups):
            raise DivisibilityError("all node groups must have the same size")
        flat = sorted(i for g in groups for i in g)
        if flat != list(range(len(flat))):
            raise ConfigError("groups must partition 0..p-1")
        object.__setattr__(self, "groups", groups)

    @property
    def p(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def r(self) -> int:
        return len(self.groups[0])

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_of(self) -> np.ndarray:
        """Array mapping worker id -> group index."""
        owner = np.empty(self.p, dtype=np.int64)
        for j, g in enumerate(self.groups):
            owner[list(g)] = j
        return owner


@dataclass(frozen=True, eq=False)
class VoteSet:
    """Filtered votes of one iteration.

    ``honest_mask`` is ground truth, available only in simulation; it is
    ``None`` when the honest gradients were not supplied.
    """

    votes: np.ndarray
    no_majority_mask: np.ndarray
    honest_mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        votes = np.asarray(self.votes, dtype=np.float64)
        votes.setflags(write=False)
        object.__setattr__(self, "votes", votes)
        if np.any(votes[np.asarray(self.no_majority_mask, dtype=bool)] != 0):
            raise DetoxError("a vote without majority must be the zero vector")

    @property
    def p_hat(self) -> int:
        return self.votes.shape[0]

    @property
    def q_hat(self) -> int | None:
        if self.honest_mask is None:
            return None
        return int(np.count_nonzero(~np.asarray(self.honest_mask, dtype=bool)))


@dataclass(frozen=True)
class FilterStats:
    """Per-iteration filtering record; ``delta_inexact`` is ``nan`` if G is unknown.

    ``agg_seconds`` is the wall-clock of the filter and aggregation stage.
    """

    q_hat: int
    p_hat: int
    delta_inexact: float = math.nan
    agg_seconds: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.q_hat <= self.p_hat:
            raise DetoxError("need 0 <= q_hat <= p_hat")

    @property
    def epsilon_hat(self) -> float:
        return self.q_hat / self.p_hat
