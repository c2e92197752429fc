# Cost of one aggregation as the number of workers grows.
from detox.core import AggregatorSpec
from detox.harness import timing_probe

d = 20_000
for row in timing_probe([50, 100, 200], d, AggregatorSpec("bulyan", {"q": 5}), detox=False, reps=3):
    print("bulyan      ", row["p"], f"{row['seconds'] * 1e3:.1f} ms")
for row in timing_probe([50, 100, 200], d, AggregatorSpec("bulyan", {"q": 1}), detox=True, r=5, k=10, reps=3):
    print("detox+bulyan", row["p"], f"{row['seconds'] * 1e3:.1f} ms")
