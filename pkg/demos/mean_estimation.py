# Estimating the mean of N(0, I) when 100 of 2100 nodes push a vector of norm 100.
import numpy as np

from detox.harness import mean_estimation_experiment

for d in (20, 50):
    rows = [mean_estimation_experiment(d, 2100, 3, 100, 100.0, seed=s, k=5) for s in range(5)]
    for j, name in enumerate(r["estimator"] for r in rows[0]):
        print(d, f"{name:20s}", np.median([rs[j]["error"] for rs in rows]))
