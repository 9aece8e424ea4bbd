"""What the SimHash simplification table does to a few hand-written trees,
and how often it fires during a short noisy run."""
import numpy as np

from srlab import exprcore as ec
from srlab.data import Dataset, split
from srlab.engine import EngineConfig, run
from srlab.simplify import SimplifyConfig, hash_simplify, init_table

rng = np.random.default_rng(1)
X = rng.uniform(-1, 1, size=(200, 3))
table = init_table(X, bits=256, seed=0)
cfg = SimplifyConfig(enabled=True, tolerance=0.01)
print(f"table starts with {len(table)} buckets (constant + one per feature)\n")

trees = [
    ec.op("log", ec.op("exp", ec.var(2))),
    ec.op("add", ec.op("sub", ec.var(0), ec.var(0)), ec.op("mul", ec.var(1), ec.var(2))),
    ec.op("mul", ec.op("mul", ec.var(1), ec.var(2)), ec.op("cos", ec.const(0.0))),
    ec.op("sin", ec.op("mul", ec.var(0), ec.const(1e-4))),  # same direction as x0, but far from it
]
for tree in trees:
    res = hash_simplify(tree, table, cfg, X)
    print(f"{ec.to_prefix(tree):40s} -> {ec.to_prefix(res.tree)}")
    for r in res.replacements:
        print(f"    at {r.path or 'root'}: size {r.pre_size} -> {r.post_size}, "
              f"distance {r.distance:.2e}")

# the same machinery inside the engine
Xd = rng.uniform(-1, 1, size=(300, 3))
yd = 3.14 * Xd[:, 0] * Xd[:, 1] + Xd[:, 2]
yd = yd + 0.05 * yd.std() * rng.normal(size=len(yd))
data = split(Dataset(Xd, yd, ("x1", "x2", "x3")), 0.25, 0.25, seed=0)
for enabled in (False, True):
    res = run(EngineConfig(generations=20, seed=3, simplify=SimplifyConfig(enabled)), data)
    print(f"\nsimplification {'ON ' if enabled else 'OFF'}: best complexity "
          f"{res.best.complexity}, size {res.best.size}, replacements {len(res.replacements)}")
