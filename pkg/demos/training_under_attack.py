# Logistic regression on 45 workers, 5 of them sending reversed gradients.
# k is the vote-group size of the first aggregation stage; k=1 makes stage one a no-op.
from detox.core import AggregatorSpec, AttackSpec, DetoxConfig, LRSchedule
from detox.harness import TaskSpec, gen_task, run_training

task = gen_task(TaskSpec("logistic_regression", 20, 10_000, 1.0))
attack = AttackSpec("reverse_gradient", c=10.0)
common = dict(p=45, q=5, b=1440, d=20, iterations=100, attack=attack, lr_schedule=LRSchedule(lr=0.5))

runs = {
    "plain mean":   DetoxConfig(r=1, k=45, agg0=AggregatorSpec("mean"), agg1=AggregatorSpec("mean"), **common),
    "coord median": DetoxConfig(r=1, k=1, agg0=AggregatorSpec("mean"), agg1=AggregatorSpec("coord_median"), **common),
    "detox + median": DetoxConfig(r=3, k=3, **common),
}
for name, cfg in runs.items():
    rec = run_training(cfg, task)
    print(f"{name:15s} loss {rec.loss[0]:.4f} -> {rec.loss[-1]:.4f}  mean q_hat {rec.q_hat.mean():.2f}")

# the per-iteration record is a plain table
print(rec.to_csv(timing=False).splitlines()[:3])
