"""End-to-end tour of the command line: fit, predict, bench, profile.

Everything is written to a temporary directory, which is printed at the end.
"""
import json
import tempfile
from pathlib import Path

import numpy as np

from srlab.cli import main

work = Path(tempfile.mkdtemp(prefix="srlab-demo-"))
rng = np.random.default_rng(0)
(work / "data").mkdir()
for name, f in (("product", lambda X: X[:, 0] * X[:, 1]),
                ("wave", lambda X: np.sin(3 * X[:, 0]) + X[:, 1])):
    X = rng.uniform(-1, 1, size=(120, 2))
    rows = np.column_stack([X, f(X)])
    np.savetxt(work / "data" / f"{name}.csv", rows, delimiter=",", header="a,b,y",
               comments="")

(work / "configs").mkdir()
small = {"pop_size": 20, "generations": 10, "max_size": 32, "max_depth": 5}
(work / "configs" / "gp.json").write_text(json.dumps(small))
(work / "configs" / "gp-simplify.json").write_text(json.dumps(dict(small, simplify=True)))
(work / "configs" / "itea.json").write_text(json.dumps({"engine": "itea", "popsize": 30,
                                                        "gens": 10}))

print("$ srlab fit")
main(["fit", "--config", str(work / "configs" / "gp.json"),
      "--data", str(work / "data" / "product.csv"),
      "--out", str(work / "model.json"), "--log", str(work / "run_log.csv")])
print("$ srlab predict")
main(["predict", "--model", str(work / "model.json"),
      "--data", str(work / "data" / "product.csv"), "--out", str(work / "pred.csv")])
print((work / "pred.csv").read_text().splitlines()[:3])

print("$ srlab bench (3 methods x 2 datasets x 2 seeds)")
main(["bench", "--configs", str(work / "configs"), "--data", str(work / "data"),
      "--seeds", "2", "--out", str(work / "results.csv")])
print("$ srlab profile")
main(["profile", "--results", str(work / "results.csv"), "--agg", "max",
      "--out", str(work / "profile.json")])
print("\noutputs in", work)
