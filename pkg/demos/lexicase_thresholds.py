"""MAD versus MVT epsilons on one case, and the selection frequencies they
induce on a small error matrix."""
import numpy as np

from srlab.select import LexicaseSelector, SelectorConfig, mad, mvt

# one training case: a tight cluster of good errors and a spread-out tail
e = np.array([0.10, 0.12, 0.13, 0.15, 0.9, 1.4, 2.2, 3.0])
eps = mad(e)
tau = mvt(e)
print("errors      :", e)
print(f"MAD keeps   : e <= {e.min():.2f} + {eps:.2f}  ->", e[e <= e.min() + eps])
print(f"MVT keeps   : e <  {tau:.3f}         ->", e[e < tau])

# cases x individuals; individual 3 is a generalist, the others specialists
errors = np.array([
    [0.0, 2.0, 2.0, 0.6],
    [2.0, 0.0, 2.0, 0.6],
    [2.0, 2.0, 0.0, 0.6],
    [0.1, 0.1, 0.1, 0.5],
])
rng = np.random.default_rng(0)
print("\nselection frequency per individual (20k draws)")
for kind in ("tournament", "lex-mad-dynamic", "lex-mvt-dynamic", "lex-mvt-static"):
    cfg = SelectorConfig(kind)
    if kind == "tournament":
        from srlab.select import select_tournament
        picks = [select_tournament(errors.mean(axis=0), 3, rng) for _ in range(20_000)]
    else:
        sel = LexicaseSelector(errors, cfg)
        picks = [sel.select(rng) for _ in range(20_000)]
    freq = np.bincount(picks, minlength=4) / len(picks)
    print(f"  {kind:16s}", "  ".join(f"{f:.3f}" for f in freq))
