"""Interaction-Transformation (IT) expressions with inner parameters, their
mutations, the four parameter-fitting heuristics and the ITEA loop.

An IT expression is ``b0 + sum_i b_i * g_i(th0_i + th1_i * prod_j x_j ** k_ij)``.
Parameters are laid out as ``[b0, b_1..b_t, th0_1, th1_1, ..., th0_t, th1_t]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import nmse
from .errors import ConfigError, NumericFailure
from .optim import (
    ADDITIVE,
    DEFAULT_LM_ITERS,
    MULTIPLICATIVE,
    LMProblem,
    ParamCache,
    cache_get_or_fit,
    lm_fit,
    neutral_fallback,
    ols_fit,
)

TRANSFORMS = {
    "id": lambda a: a,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sqrt": np.sqrt,
    "log": np.log,
    "exp": np.exp,
    "abs": np.abs,
}

HEURISTICS = ("OLS", "LM", "OLS+LM", "LM+OLS")
INIT_RANGE = 100.0
MAX_REDRAWS = 100


@dataclass(frozen=True)
class ITTerm:
    g: str
    k: tuple[int, ...]
    theta: tuple[float, float] = (0.0, 1.0)

    @property
    def key(self) -> tuple:
        return (self.g, self.k)


@dataclass(frozen=True)
class ITExpression:
    terms: tuple[ITTerm, ...]
    beta: tuple[float, ...] = ()
    beta0: float = 0.0

    def __post_init__(self):
        if not self.beta:
            object.__setattr__(self, "beta", (1.0,) * len(self.terms))
        if len(self.beta) != len(self.terms):
            raise ValueError("one outer coefficient per term is required")

    @property
    def n_params(self) -> int:
        return 1 + 3 * len(self.terms)

    @property
    def params(self) -> np.ndarray:
        th = [v for t in self.terms for v in t.theta]
        return np.array([self.beta0, *self.beta, *th], dtype=float)

    @property
    def roles(self) -> np.ndarray:
        t = len(self.terms)
        return np.array([ADDITIVE] * (1 + t) + [ADDITIVE, MULTIPLICATIVE] * t)

    def with_params(self, params) -> ITExpression:
        params = np.asarray(params, dtype=float)
        t = len(self.terms)
        th = params[1 + t:].reshape(t, 2)
        terms = tuple(replace(term, theta=(float(a), float(b))) for term, (a, b) in zip(self.terms, th))
        return ITExpression(terms, tuple(float(b) for b in params[1:1 + t]), float(params[0]))

    @property
    def structure_key(self) -> tuple:
        """Term-order independent key: sorted multiset of ``(g, k)`` pairs."""
        return tuple(sorted(t.key for t in self.terms))

    @property
    def size(self) -> int:
        """Node count of the equivalent parse tree (intercept, and per term:
        coefficient, product, transform, shift, scale, and two nodes per
        nonzero strength)."""
        n = 1
        for t in self.terms:
            nz = sum(1 for v in t.k if v)
            n += 5 + 2 * nz + 1
        return n

    def __str__(self) -> str:
        return render(self)


def render(expr: ITExpression) -> str:
    def f(x):
        return format(float(x), ".17g")

    parts = [f(expr.beta0)]
    for b, t in zip(expr.beta, expr.terms):
        inter = "*".join(f"x{j}^{v}" for j, v in enumerate(t.k) if v) or "1"
        parts.append(f"{f(b)}*{t.g}({f(t.theta[0])} + {f(t.theta[1])}*{inter})")
    return " + ".join(parts)


def interactions(terms: Sequence[ITTerm], X: np.ndarray) -> np.ndarray:
    """``(t, d)`` matrix of ``prod_j x_j ** k_j`` per term."""
    X = np.asarray(X, dtype=float)
    out = np.ones((len(terms), X.shape[0]))
    with np.errstate(all="ignore"):
        for i, t in enumerate(terms):
            for j, v in enumerate(t.k):
                if v:
                    out[i] *= X[:, j] ** v
    return out


def _transform(terms, args):
    # args: (..., t, d)
    out = np.empty_like(args)
    with np.errstate(all="ignore"):
        for i, t in enumerate(terms):
            out[..., i, :] = TRANSFORMS[t.g](args[..., i, :])
    return out


def _predict_params(terms, P: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Predictions for one ``(p,)`` or a batch ``(B, p)`` of parameter vectors."""
    t = len(terms)
    params = np.asarray(params, dtype=float)
    b0 = params[..., 0:1]
    beta = params[..., 1:1 + t]
    th = params[..., 1 + t:].reshape(params.shape[:-1] + (t, 2))
    args = th[..., 0:1] + th[..., 1:2] * P
    with np.errstate(all="ignore"):
        return b0 + np.einsum("...t,...td->...d", beta, _transform(terms, args))


def it_evaluate(expr: ITExpression, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    for t in expr.terms:
        if len(t.k) != X.shape[1]:
            raise ValueError("strength vector length does not match feature count")
    return _predict_params(expr.terms, interactions(expr.terms, X), expr.params)


# --- configuration and mutation --------------------------------------------


@dataclass
class ITEAConfig:
    popsize: int = 250
    gens: int = 400
    strength_bounds: tuple[int, int] = (-3, 3)
    terms_bounds: tuple[int, int] = (2, 15)
    max_nonzero_strengths: int = 2
    transf_funcs: tuple[str, ...] = ("id", "sin", "cos", "tan", "sqrt", "log", "exp", "abs")
    heuristic: str = "OLS"
    tournament_size: int = 3
    lm_iters: int = DEFAULT_LM_ITERS
    cache_size: int = 10_000

    def __post_init__(self):
        lo, hi = self.strength_bounds
        tlo, thi = self.terms_bounds
        if lo > hi or not (1 <= tlo <= thi):
            raise ConfigError("invalid strength or term bounds")
        if lo == 0 and hi == 0:
            raise ConfigError("strength bounds admit no nonzero value")
        if self.max_nonzero_strengths < 1:
            raise ConfigError("max_nonzero_strengths must be >= 1")
        if self.heuristic not in HEURISTICS:
            raise ConfigError(f"unknown heuristic {self.heuristic!r}")
        unknown = set(self.transf_funcs) - set(TRANSFORMS)
        if unknown or not self.transf_funcs:
            raise ConfigError(f"unknown transformation functions {sorted(unknown)}")
        if self.tournament_size < 2 or self.popsize < 1 or self.gens < 0:
            raise ConfigError("invalid population settings")
        self.strength_bounds = (int(lo), int(hi))
        self.terms_bounds = (int(tlo), int(thi))
        self.transf_funcs = tuple(self.transf_funcs)


def _nonzero_values(config: ITEAConfig) -> np.ndarray:
    lo, hi = config.strength_bounds
    vals = np.arange(lo, hi + 1)
    return vals[vals != 0]


def random_term(n: int, config: ITEAConfig, rng: np.random.Generator) -> ITTerm:
    m = int(rng.integers(1, min(config.max_nonzero_strengths, n) + 1))
    pos = rng.choice(n, size=m, replace=False)
    k = np.zeros(n, dtype=int)
    k[pos] = rng.choice(_nonzero_values(config), size=m)
    g = config.transf_funcs[rng.integers(len(config.transf_funcs))]
    return ITTerm(g, tuple(int(v) for v in k))


def random_expression(n: int, config: ITEAConfig, rng: np.random.Generator) -> ITExpression:
    lo, hi = config.terms_bounds
    t = int(rng.integers(lo, hi + 1))
    return ITExpression(tuple(random_term(n, config, rng) for _ in range(t)))


def _limit_strengths(k: np.ndarray, config: ITEAConfig) -> np.ndarray:
    lo, hi = config.strength_bounds
    k = np.clip(k, lo, hi)
    nz = np.flatnonzero(k)
    if len(nz) > config.max_nonzero_strengths:
        keep = nz[np.argsort(-np.abs(k[nz]), kind="stable")[:config.max_nonzero_strengths]]
        out = np.zeros_like(k)
        out[keep] = k[keep]
        k = out
    return k


def expand(expr: ITExpression, config: ITEAConfig, rng: np.random.Generator) -> ITExpression:
    n = len(expr.terms[0].k)
    if len(expr.terms) >= 2 and rng.random() < 0.5:
        i, j = rng.choice(len(expr.terms), size=2, replace=False)
        a = np.array(expr.terms[i].k)
        b = np.array(expr.terms[j].k)
        k = a + b if rng.random() < 0.5 else a - b
        g = config.transf_funcs[rng.integers(len(config.transf_funcs))]
        new = ITTerm(g, tuple(int(v) for v in _limit_strengths(k, config)))
    else:
        new = random_term(n, config, rng)
    return ITExpression(expr.terms + (new,), expr.beta + (0.0,), expr.beta0)


def shrink(expr: ITExpression, rng: np.random.Generator) -> ITExpression:
    i = int(rng.integers(len(expr.terms)))
    keep = [j for j in range(len(expr.terms)) if j != i]
    return ITExpression(tuple(expr.terms[j] for j in keep),
                        tuple(expr.beta[j] for j in keep), expr.beta0)


def local_modification(expr: ITExpression, config: ITEAConfig,
                       rng: np.random.Generator) -> ITExpression:
    i = int(rng.integers(len(expr.terms)))
    k = np.array(expr.terms[i].k)
    nz = np.flatnonzero(k)
    # at the nonzero cap only existing nonzero strengths may change
    candidates = nz if len(nz) >= config.max_nonzero_strengths else np.arange(len(k))
    j = int(candidates[rng.integers(len(candidates))])
    lo, hi = config.strength_bounds
    choices = [v for v in range(lo, hi + 1) if v != k[j]]
    k[j] = choices[rng.integers(len(choices))]
    terms = list(expr.terms)
    terms[i] = replace(terms[i], k=tuple(int(v) for v in k))
    return replace(expr, terms=tuple(terms))


def mutate(expr: ITExpression, config: ITEAConfig, rng: np.random.Generator) -> ITExpression:
    lo, hi = config.terms_bounds
    kinds = ["local"]
    if len(expr.terms) < hi:
        kinds.append("expand")
    if len(expr.terms) > lo:
        kinds.append("shrink")
    kind = kinds[rng.integers(len(kinds))]
    if kind == "expand":
        return expand(expr, config, rng)
    if kind == "shrink":
        return shrink(expr, rng)
    return local_modification(expr, config, rng)


def drop_invalid_terms(expr: ITExpression, X: np.ndarray,
                       config: ITEAConfig) -> ITExpression | None:
    """Remove terms whose unshifted column ``g(prod x^k)`` is non-finite on
    ``X``. Returns None if fewer than the minimum number of terms remain."""
    cols = _transform(expr.terms, interactions(expr.terms, X))
    ok = np.isfinite(cols).all(axis=1)
    if ok.all():
        return expr
    if ok.sum() < config.terms_bounds[0]:
        return None
    keep = np.flatnonzero(ok)
    return ITExpression(tuple(expr.terms[i] for i in keep),
                        tuple(expr.beta[i] for i in keep), expr.beta0)


# --- parameter fitting heuristics ------------------------------------------


def _ols_betas(expr: ITExpression, P: np.ndarray, y: np.ndarray) -> np.ndarray:
    """OLS on the transformed columns with the inner parameters held fixed.

    Terms sharing ``(g, k, theta)`` share one design column; the fitted
    coefficient goes to the first occurrence and the duplicates get zero.
    """
    t = len(expr.terms)
    th = expr.params[1 + t:].reshape(t, 2)
    with np.errstate(all="ignore"):
        cols = _transform(expr.terms, th[:, 0:1] + th[:, 1:2] * P)
    first: dict = {}
    owner = []
    for i, term in enumerate(expr.terms):
        owner.append(first.setdefault((term.key, term.theta), i))
    uniq = sorted(set(owner))
    phi = np.column_stack([np.ones(len(y))] + [cols[i] for i in uniq])
    coef = ols_fit(phi, y)
    beta = np.zeros(t)
    beta[uniq] = coef[1:]
    return np.concatenate([[coef[0]], beta])


def _lm(expr: ITExpression, P, y, theta0, free, max_iters) -> np.ndarray:
    """LM over the parameters selected by the boolean mask ``free``."""
    base = np.array(theta0, dtype=float)
    idx = np.flatnonzero(free)

    def residuals(sub):
        sub = np.asarray(sub, dtype=float)
        full = np.broadcast_to(base, sub.shape[:-1] + base.shape).copy()
        full[..., idx] = sub
        return y - _predict_params(expr.terms, P, full)

    res = lm_fit(LMProblem(residuals, base[idx], max_iters=max_iters, vectorized=True))
    out = base.copy()
    out[idx] = res.theta
    return out


def _loss(expr, P, y, params) -> float:
    pred = _predict_params(expr.terms, P, params)
    with np.errstate(all="ignore"):
        v = float(np.mean((pred - y) ** 2))
    return v if np.isfinite(v) else np.inf


def fit_heuristic(expr: ITExpression, X: np.ndarray, y: np.ndarray, heuristic: str,
                  rng: np.random.Generator, max_iters: int = DEFAULT_LM_ITERS,
                  term_cache: dict | None = None):
    """Fit ``expr``'s parameters with one of OLS, LM, OLS+LM, LM+OLS.

    Returns ``(fitted expression, ok)``; ``ok`` is true when the parameters
    are finite and the training MSE beats the intercept-only baseline, which
    is the condition for memoizing them. Structure is never changed.

    ``term_cache`` (LM+OLS only) memoizes the per-term inner parameters by
    ``(g, k)``; it must only be shared between calls on the same ``X, y``.
    """
    if heuristic not in HEURISTICS:
        raise ConfigError(f"unknown heuristic {heuristic!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("empty training partition")
    P = interactions(expr.terms, X)
    t = len(expr.terms)
    roles = expr.roles
    nonlinear = np.zeros(expr.n_params, dtype=bool)
    nonlinear[1 + t:] = True
    neutral = ITExpression(expr.terms, (1.0,) * t, 0.0).with_params(
        neutral_fallback(np.full(expr.n_params, np.nan), roles))
    try:
        if heuristic == "OLS":
            params = neutral.params
            params[:1 + t] = _ols_betas(neutral, P, y)
        elif heuristic == "LM":
            init = rng.uniform(-INIT_RANGE, INIT_RANGE, expr.n_params)
            params = _lm(expr, P, y, init, np.ones(expr.n_params, bool), max_iters)
        elif heuristic == "OLS+LM":
            params = neutral.params
            try:
                params[:1 + t] = _ols_betas(neutral, P, y)
            except NumericFailure:
                pass
            params[1 + t:] = rng.uniform(-INIT_RANGE, INIT_RANGE, 2 * t)
            params = _lm(expr, P, y, params, np.ones(expr.n_params, bool), max_iters)
        else:
            params = _lm_then_ols(expr, neutral, P, y, max_iters, term_cache)
    except NumericFailure:
        params = np.full(expr.n_params, np.nan)
    params = neutral_fallback(params, roles)
    fitted = expr.with_params(params)
    loss = _loss(expr, P, y, params)
    ok = np.isfinite(loss) and loss < float(np.var(y))
    return fitted, bool(ok)


def _lm_then_ols(expr, neutral, P, y, max_iters, term_cache=None) -> np.ndarray:
    """Per-term LM of ``c + a * g(th0 + th1 * p)`` against ``y`` (all four
    free, starting from the term's OLS fit with theta = (0, 1)), then a global
    OLS for the outer coefficients; ``c`` and ``a`` are discarded. The plain
    OLS point (inner parameters at (0, 1)) is a feasible point of this
    composite, so the better of the two is returned."""
    t = len(expr.terms)
    theta = np.tile([0.0, 1.0], (t, 1))
    for i, term in enumerate(expr.terms):
        key = (term.g, term.k)
        if term_cache is not None and key in term_cache:
            theta[i] = term_cache[key]
            continue
        theta[i] = _fit_term_theta(term, P[i:i + 1], y, max_iters)
        if term_cache is not None:
            term_cache[key] = theta[i].copy()
    candidates = []
    with_theta = neutral.params
    with_theta[1 + t:] = theta.ravel()
    for base in (neutral.params, with_theta):
        try:
            base[:1 + t] = _ols_betas(neutral.with_params(base), P, y)
        except NumericFailure:
            continue
        candidates.append(base)
    if not candidates:
        raise NumericFailure("no finite linear fit")
    return min(candidates, key=lambda p: _loss(expr, P, y, p))


def _fit_term_theta(term: ITTerm, Pi, y, max_iters) -> np.ndarray:
    single = ITExpression((term,))
    start = single.params
    try:
        start[:2] = _ols_betas(single, Pi, y)
        fitted = _lm(single, Pi, y, start, np.ones(4, dtype=bool), max_iters)
    except NumericFailure:
        return np.array([0.0, 1.0])
    return fitted[2:] if np.isfinite(fitted).all() else np.array([0.0, 1.0])


# --- ITEA ------------------------------------------------------------------


def canonical_order(expr: ITExpression) -> np.ndarray:
    return np.array(sorted(range(len(expr.terms)), key=lambda i: expr.terms[i].key), dtype=int)


def _to_canonical(expr: ITExpression) -> tuple:
    order = canonical_order(expr)
    beta = np.asarray(expr.beta)[order]
    th = np.array([expr.terms[i].theta for i in order])
    return (expr.beta0, tuple(beta), tuple(map(tuple, th)))


def _from_canonical(expr: ITExpression, stored) -> ITExpression:
    b0, beta, th = stored
    order = canonical_order(expr)
    t = len(expr.terms)
    new_beta = np.empty(t)
    new_th = np.empty((t, 2))
    new_beta[order] = beta
    new_th[order] = th
    return expr.with_params(np.concatenate([[b0], new_beta, new_th.ravel()]))


def fitness(expr: ITExpression, X, y) -> float:
    pred = it_evaluate(expr, X)
    if not np.isfinite(pred).all():
        return np.inf
    return nmse(pred, y)


@dataclass
class ITEAResult:
    best: ITExpression
    best_fitness: float
    history: list[float] = field(default_factory=list)
    cache: ParamCache | None = None


def tournament(fit: np.ndarray, k: int, rng: np.random.Generator) -> int:
    """Best of ``k`` draws with replacement (lowest index on ties)."""
    idx = np.sort(rng.integers(len(fit), size=k))
    return int(idx[np.argmin(fit[idx])])


def itea_run(config: ITEAConfig, X: np.ndarray, y: np.ndarray,
             rng: np.random.Generator) -> ITEAResult:
    """Run ITEA: mutate everyone, fit parameters through the LRU cache,
    then refill the population by tournaments over parents plus mutants."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[1]
    cache = ParamCache(config.cache_size)
    term_cache: dict = {}

    def fit_one(expr: ITExpression) -> ITExpression:
        def fitter():
            fitted, ok = fit_heuristic(expr, X, y, config.heuristic, rng, config.lm_iters,
                                        term_cache)
            return _to_canonical(fitted), ok
        return _from_canonical(expr, cache_get_or_fit(cache, expr.structure_key, fitter))

    def valid_random() -> ITExpression:
        for _ in range(MAX_REDRAWS):
            expr = random_expression(n, config, rng)
            clean = drop_invalid_terms(expr, X, config)
            if clean is not None:
                return clean
        return expr

    def valid_mutant(parent: ITExpression) -> ITExpression:
        clean = drop_invalid_terms(mutate(parent, config, rng), X, config)
        return parent if clean is None else clean

    pop = [fit_one(valid_random()) for _ in range(config.popsize)]
    fit = np.array([fitness(p, X, y) for p in pop])
    history = [float(fit.min())]
    for _ in range(config.gens):
        mutants = [fit_one(valid_mutant(p)) for p in pop]
        pool = [fit_one(p) for p in pop] + mutants
        pool_fit = np.array([fitness(p, X, y) for p in pool])
        chosen = [tournament(pool_fit, config.tournament_size, rng) for _ in range(config.popsize)]
        pop = [pool[i] for i in chosen]
        fit = pool_fit[chosen]
        history.append(float(fit.min()))
    best = int(np.argmin(fit))
    return ITEAResult(pop[best], float(fit[best]), history, cache)
