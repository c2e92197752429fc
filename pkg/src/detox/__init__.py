"""DETOX: redundant gradient computation, majority-vote filtering and
hierarchical robust aggregation for Byzantine-resilient SGD."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AggregatorSpec,
    AttackSpec,
    DetoxConfig,
    DetoxError,
    FilterStats,
    LRSchedule,
    NodeGroupPartition,
    VoteSet,
    split_rng,
    validate_config,
)
from .aggregators import aggregate  # noqa: E402
from .engine import detox_step, filter_votes, hier_aggr, majority_vote, partition_nodes  # noqa: E402
from .adversary import apply_attack, place_byzantine  # noqa: E402
from .analysis import exact_expected_qhat, monte_carlo_qhat  # noqa: E402
from .harness import TaskSpec, gen_task, run_training  # noqa: E402

__all__ = [
    "AggregatorSpec",
    "AttackSpec",
    "DetoxConfig",
    "DetoxError",
    "FilterStats",
    "LRSchedule",
    "NodeGroupPartition",
    "TaskSpec",
    "VoteSet",
    "aggregate",
    "apply_attack",
    "detox_step",
    "exact_expected_qhat",
    "filter_votes",
    "gen_task",
    "hier_aggr",
    "majority_vote",
    "monte_carlo_qhat",
    "partition_nodes",
    "place_byzantine",
    "run_training",
    "split_rng",
    "validate_config",
]
