"""Recover y = 3.14*x1*x2 + x3 with the GP engine.

A shortened run (40 generations) so the demo finishes in about ten seconds;
the acceptance suite uses the full 200.
"""
import numpy as np

from srlab import exprcore as ec
from srlab.data import Dataset, r2, split
from srlab.engine import EngineConfig, run

rng = np.random.default_rng(0)
X = rng.uniform(-1, 1, size=(500, 3))
y = 3.14 * X[:, 0] * X[:, 1] + X[:, 2]
data = split(Dataset(X, y, ("x1", "x2", "x3")), test_fraction=0.25,
             validation_fraction=0.25, seed=0)

result = run(EngineConfig(generations=40, seed=0), data)

print("gen  best train MSE   median size")
for g in result.log[::5]:
    print(f"{g.generation:3d}  {g.best_train_loss:14.3e}   {g.median_size:6.1f}")

Xt, yt = data.test
best = result.best
print()
print("model      :", ec.to_prefix(best.tree))
print("size       :", best.size, " complexity:", best.complexity)
print(f"test R^2   : {r2(ec.evaluate(best.tree, Xt), yt):.6f}")
