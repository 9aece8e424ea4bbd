"""Interaction-Transformation models fitted with the four parameter
heuristics on a target that needs a shifted sine."""
import time

import numpy as np

from srlab.data import nmse
from srlab.itrep import ITEAConfig, it_evaluate, itea_run

rng = np.random.default_rng(0)
X = rng.uniform(1, 3, size=(200, 2))
y = 1.5 * np.sin(0.7 + 2.0 * X[:, 0]) + X[:, 0] * X[:, 1]
Xtr, ytr, Xte, yte = X[:150], y[:150], X[150:], y[150:]

for heuristic in ("OLS", "LM", "OLS+LM", "LM+OLS"):
    cfg = ITEAConfig(popsize=60, gens=30, heuristic=heuristic, terms_bounds=(2, 6))
    t0 = time.perf_counter()
    res = itea_run(cfg, Xtr, ytr, np.random.default_rng(1))
    pred = it_evaluate(res.best, Xte)
    score = nmse(pred, yte) if np.isfinite(pred).all() else float("inf")
    print(f"{heuristic:7s} test NMSE {score:9.2e}  ({time.perf_counter() - t0:4.1f} s)")
    print("        ", res.best)
