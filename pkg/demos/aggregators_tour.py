# Every robust aggregator on the same poisoned batch of gradients.
import numpy as np

from detox import aggregators as A

rng = np.random.default_rng(0)
honest = rng.normal(1.0, 0.1, size=(12, 4))
poison = np.full((3, 4), -50.0)
votes = np.vstack([honest, poison])

print("true centre  ", np.ones(4))
print("mean         ", A.mean(votes))
print("coord median ", A.coord_median(votes))
print("geo median   ", A.geo_median(votes))
print("trimmed 0.2  ", A.trimmed_mean(votes, 0.2))
print("krum q=3     ", A.krum(votes, 3))
print("multi-krum   ", A.multi_krum(votes, 3, 5))
print("bulyan q=3   ", A.bulyan(votes, 3))
print("sign majority", A.sign_majority(votes))

# the trace of the Weiszfeld objective never goes up
res = A.weiszfeld(votes)
print(res.iterations, "iterations, objective", res.objective[0], "->", res.objective[-1])

# the same call through the config-driven dispatcher
from detox.core import AggregatorSpec
print(A.aggregate(AggregatorSpec("trimmed_mean", {"alpha": 0.2}), votes))
