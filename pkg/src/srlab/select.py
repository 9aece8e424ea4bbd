"""Parent selection: tournament and epsilon-lexicase variants.

Error matrices are laid out ``errors[case, individual]`` and hold absolute
residuals; non-finite entries are treated as ``+inf``.

Lexicase kinds:

* ``lex-mad-static``   pass mask ``e <= best_in_population + MAD`` fixed up front
* ``lex-mad-semi``     MAD over the population, elite taken from the pool
* ``lex-mad-dynamic``  MAD and elite both taken from the pool
* ``lex-mvt-static``   pass mask ``e < tau*`` from the population
* ``lex-mvt-dynamic``  ``tau*`` recomputed on the pool for every case
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("tournament", "lex-mad-static", "lex-mad-semi", "lex-mad-dynamic",
         "lex-mvt-static", "lex-mvt-dynamic")


@dataclass(frozen=True)
class SelectorConfig:
    kind: str = "lex-mad-dynamic"
    tournament_size: int = 3
    # "size-weighted" swaps Var/|side| for the classic pooled within-group variance
    mvt_weighting: str = "printed"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown selection kind {self.kind!r}")
        if self.tournament_size < 2:
            raise ConfigError("tournament_size must be >= 2")
        if self.mvt_weighting not in ("printed", "size-weighted"):
            raise ConfigError("mvt_weighting must be 'printed' or 'size-weighted'")


def as_error_matrix(errors) -> np.ndarray:
    e = np.array(errors, dtype=float)
    if e.ndim != 2:
        raise ValueError("error matrix must be 2-D (cases x individuals)")
    e[~np.isfinite(e)] = np.inf
    return e


def _lower_median(v: np.ndarray) -> float:
    k = (len(v) - 1) // 2
    return float(np.partition(v, k)[k])


def mad(values) -> float:
    """Median absolute deviation using the lower median for even lengths."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("mad of an empty vector")
    m = _lower_median(v)
    if np.isfinite(m):
        return _lower_median(np.abs(v - m))
    with np.errstate(invalid="ignore"):
        dev = np.abs(v - m)
    dev[np.isnan(dev)] = 0.0  # inf - inf: both sit at the median
    return _lower_median(dev)


def mvt(values, weighting: str = "printed") -> float | None:
    """Minimum-variance threshold.

    Returns the midpoint between consecutive distinct sorted values that
    minimizes ``Var(l)/|l| + Var(r)/|r|`` with ``l = e < tau`` and
    ``r = e >= tau`` (smallest threshold on ties), or ``None`` when all
    values are equal. Infinite values always fall on the right; if every
    finite value is equal but infinities exist, ``+inf`` is returned so that
    exactly the finite values are kept.
    """
    v = np.asarray(values, dtype=float)
    finite = v[np.isfinite(v)]
    s = np.sort(finite)
    if s.size == 0 or s[0] == s[-1]:
        return np.inf if 0 < s.size < v.size else None
    n = s.size
    c = s - s.mean()
    cs = np.cumsum(c)
    cs2 = np.cumsum(c * c)
    nl = np.arange(1, n)
    sl, sl2 = cs[:-1], cs2[:-1]
    sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
    nr = n - nl
    var_l = np.maximum(sl2 / nl - (sl / nl) ** 2, 0.0)
    var_r = np.maximum(sr2 / nr - (sr / nr) ** 2, 0.0)
    if weighting == "printed":
        cost = var_l / nl + var_r / nr
    else:
        cost = (nl * var_l + nr * var_r) / n
    valid = s[:-1] < s[1:]
    cost = np.where(valid, cost, np.inf)
    # prefix sums can split exact ties by rounding; re-score the near-optimal
    # splits with two-pass variances and take the smallest threshold
    best = cost.min()
    near = np.flatnonzero(cost <= best + 1e-9 * abs(best) + 1e-300)
    if len(near) > 1:
        exact = [_split_cost(s[:i + 1], s[i + 1:], n, weighting) for i in near]
        i = int(near[int(np.argmin(exact))])
    else:
        i = int(near[0])
    return float((s[i] + s[i + 1]) / 2.0)


def _split_cost(left: np.ndarray, right: np.ndarray, n: int, weighting: str) -> float:
    if weighting == "printed":
        return float(np.var(left) / len(left) + np.var(right) / len(right))
    return float((len(left) * np.var(left) + len(right) * np.var(right)) / n)


def _mvt_keep(e: np.ndarray, weighting: str) -> np.ndarray:
    tau = mvt(e, weighting)
    if tau is None:
        return np.ones(len(e), dtype=bool)
    return e < tau


class LexicaseSelector:
    """Selects parents from a fixed error matrix.

    Per-population quantities (static pass masks, semi-dynamic epsilons) are
    computed once at construction and reused by every ``select`` call.
    """

    def __init__(self, errors, config: SelectorConfig):
        self.errors = as_error_matrix(errors)
        self.config = config
        n_cases, n_ind = self.errors.shape
        if n_ind < 1:
            raise ValueError("need at least one individual")
        self.cases_used: list[int] = []
        # individuals with identical error columns can never be separated, so
        # the case loop stops as soon as the pool holds a single error profile
        _, self.group = np.unique(self.errors.T, axis=0, return_inverse=True)
        self.group = self.group.ravel()
        kind = config.kind
        if kind in ("lex-mad-static", "lex-mad-semi"):
            self.eps = np.array([mad(row) for row in self.errors])
        if kind == "lex-mad-static":
            best = self.errors.min(axis=1, keepdims=True)
            with np.errstate(invalid="ignore"):
                self.fail = ~(self.errors <= best + self.eps[:, None])
        elif kind == "lex-mvt-static":
            self.fail = ~np.vstack([_mvt_keep(row, config.mvt_weighting) for row in self.errors])

    def _filter(self, pool: np.ndarray, t: int) -> np.ndarray:
        kind = self.config.kind
        if kind in ("lex-mad-static", "lex-mvt-static"):
            f = self.fail[t, pool]
            return pool[f == f.min()]
        e = self.errors[t, pool]
        if kind == "lex-mvt-dynamic":
            return pool[_mvt_keep(e, self.config.mvt_weighting)]
        elite = e.min()
        if elite == np.inf:  # nobody is distinguishable on this case
            return pool
        eps = self.eps[t] if kind == "lex-mad-semi" else mad(e)
        return pool[e <= elite + eps]

    def select(self, rng: np.random.Generator) -> int:
        n_cases, n_ind = self.errors.shape
        pool = np.arange(n_ind)
        used = 0
        if n_ind > 1:
            for t in rng.permutation(n_cases):
                pool = self._filter(pool, t)
                used += 1
                g = self.group[pool]
                if len(pool) <= 1 or (g == g[0]).all():
                    break
        self.cases_used.append(used)
        return int(pool[rng.integers(len(pool))]) if len(pool) > 1 else int(pool[0])


def select_parent(errors, config: SelectorConfig, rng: np.random.Generator) -> int:
    """Select one parent index from ``errors[case, individual]``."""
    if config.kind == "tournament":
        e = as_error_matrix(errors)
        with np.errstate(invalid="ignore"):
            return select_tournament(e.mean(axis=0), config.tournament_size, rng)
    return LexicaseSelector(errors, config).select(rng)


def select_tournament(fitness, k: int, rng: np.random.Generator) -> int:
    """Draw ``k`` distinct individuals and return the one with the lowest
    fitness (lowest index on ties). Draws are independent across calls."""
    fit = np.asarray(fitness, dtype=float)
    n = len(fit)
    if not 1 <= k <= n:
        raise ValueError("tournament size must lie in [1, population size]")
    idx = np.sort(rng.choice(n, size=k, replace=False))
    f = np.where(np.isnan(fit[idx]), np.inf, fit[idx])
    return int(idx[np.argmin(f)])


def select_many(errors, fitness, config: SelectorConfig, n: int,
                rng: np.random.Generator) -> list[int]:
    """Select ``n`` parents, sharing any per-population precomputation."""
    if config.kind == "tournament":
        k = min(config.tournament_size, len(fitness))
        return [select_tournament(fitness, k, rng) for _ in range(n)]
    sel = LexicaseSelector(errors, config)
    return [sel.select(rng) for _ in range(n)]
