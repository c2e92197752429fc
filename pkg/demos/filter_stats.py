# How many vote groups can q Byzantine nodes capture after random grouping?
import numpy as np

from detox.analysis import (
    bound_report,
    corollary_threshold,
    exact_expected_qhat,
    monte_carlo_qhat,
    r3_bound,
    theorem1_bound,
)

# 45 nodes in groups of 3, five of them Byzantine
p, q, r = 45, 5, 3
exact = exact_expected_qhat(p, q, r)
dist = monte_carlo_qhat(p, q, r, 200_000, seed=0)
print(f"E[q_hat] exact {exact:.5f}  monte carlo {dist.mean:.5f} +- {dist.stderr:.5f}")
print("r=3 bound", r3_bound(q, q / p))
print("histogram of captured groups", dist.histogram[:4])

# larger groups make capture exponentially unlikely
for r in (5, 7, 9):
    p = 2000 - 2000 % r
    print(r, "exact", exact_expected_qhat(p, 40, r), "bound", theorem1_bound(p, 40, r))

# with eps <= 1/80 and r >= 3 + 2 log2 q, q_hat stays below 1 + 2 ln(1/delta) w.h.p.
dist = monte_carlo_qhat(160, 2, 5, 100_000, seed=1)
print("P(q_hat > threshold) =", dist.prob_greater(corollary_threshold(0.1)))

rep = bound_report(60, 6, 3, 0.1, 2.0, 50_000, 0)
print({k: v for k, v in rep.to_dict().items() if k.endswith("status")})
