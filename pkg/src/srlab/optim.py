"""Closed-form least squares, Levenberg-Marquardt, and parameter memoization."""
from __future__ import annotations

import warnings
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Hashable

import numpy as np
import scipy.linalg

from .errors import NumericFailure

RIDGE = 1e-8
DEFAULT_LM_ITERS = 10


def design_matrix(columns: np.ndarray) -> np.ndarray:
    """Prepend the intercept column of ones to a ``(d, t)`` column block."""
    columns = np.asarray(columns, dtype=float)
    if columns.ndim == 1:
        columns = columns[:, None]
    return np.hstack([np.ones((columns.shape[0], 1)), columns])


def ols_fit(phi: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients for ``phi @ beta ~= y``.

    Full-rank systems are solved through a QR factorization of ``phi``.
    Rank-deficient ones fall back to the normal equations with a ``1e-8``
    ridge term. Raises NumericFailure on non-finite input or output.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.isfinite(phi).all() and np.isfinite(y).all()):
        raise NumericFailure("non-finite linear system")
    d, p = phi.shape
    beta = None
    if d >= p:
        with np.errstate(all="ignore"):
            q, r = np.linalg.qr(phi)
        diag = np.abs(np.diag(r))
        if diag.size and diag.min() > max(d, p) * np.finfo(float).eps * diag.max():
            beta = scipy.linalg.solve_triangular(r, q.T @ y)
    if beta is None:
        with np.errstate(all="ignore"):
            a = phi.T @ phi + RIDGE * np.eye(p)
            rhs = phi.T @ y
        if not (np.isfinite(a).all() and np.isfinite(rhs).all()):
            raise NumericFailure("normal equations overflow")
        try:
            with warnings.catch_warnings():
                # ill-conditioning is the reason this branch runs at all
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                beta = scipy.linalg.solve(a, rhs, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            beta = np.linalg.lstsq(a, rhs, rcond=None)[0]
    if not np.isfinite(beta).all():
        raise NumericFailure("least squares produced non-finite coefficients")
    return beta


@dataclass
class LMProblem:
    """Nonlinear least squares ``min ||residuals(theta)||``.

    When ``vectorized`` is true, ``residuals`` also accepts a ``(batch, p)``
    matrix of parameter vectors and returns ``(batch, d)`` residuals, which
    lets the Jacobian be evaluated in one call. A ``jacobian`` callable, if
    given, replaces the finite-difference Jacobian.
    """

    residuals: Callable[[np.ndarray], np.ndarray]
    theta0: np.ndarray
    max_iters: int = DEFAULT_LM_ITERS
    damping: float = 1e-3
    vectorized: bool = False
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass
class LMResult:
    theta: np.ndarray
    loss: float
    iterations: int
    losses: list[float]


def _loss(r: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        v = float(np.mean(r * r))
    return v if np.isfinite(v) else np.inf


def fd_step(theta: np.ndarray) -> np.ndarray:
    """Central-difference step ``sqrt(eps) * (1 + |theta_i|)``."""
    return np.sqrt(np.finfo(float).eps) * (1.0 + np.abs(theta))


def fd_jacobian(problem: LMProblem, theta: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian with step ``fd_step(theta)``."""
    p = len(theta)
    h = fd_step(theta)
    steps = np.diag(h)
    if problem.vectorized:
        batch = np.vstack([theta + steps, theta - steps])
        r = np.asarray(problem.residuals(batch), dtype=float)
        return ((r[:p] - r[p:]) / (2.0 * h[:, None])).T
    cols = [(problem.residuals(theta + steps[i]) - problem.residuals(theta - steps[i])) / (2 * h[i])
            for i in range(p)]
    return np.column_stack(cols)


def lm_fit(problem: LMProblem) -> LMResult:
    """Levenberg-Marquardt with Marquardt's diagonal scaling.

    Steps are accepted only when they lower the mean squared residual.
    Stops after ``max_iters`` Jacobian evaluations, when the relative loss
    improvement falls below 1e-9, or when the damping overflows.
    """
    theta = np.array(problem.theta0, dtype=float)
    with np.errstate(all="ignore"):
        r = np.asarray(problem.residuals(theta), dtype=float)
    loss = _loss(r)
    if not np.isfinite(theta).all() or not np.isfinite(loss):
        raise NumericFailure("non-finite residuals at the initial parameters")
    losses = [loss]
    lam = problem.damping
    it = 0
    with np.errstate(all="ignore"):
        while it < problem.max_iters:
            it += 1
            J = (fd_jacobian(problem, theta) if problem.jacobian is None
                 else np.asarray(problem.jacobian(theta), dtype=float))
            if not np.isfinite(J).all():
                break
            g = J.T @ r
            if not np.any(g):
                break
            A = J.T @ J
            diag = np.diag(A).copy()
            diag = np.maximum(diag, 1e-12 * max(1.0, diag.max()))
            accepted = False
            while lam <= 1e10:
                try:
                    delta = np.linalg.solve(A + lam * np.diag(diag), -g)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                cand = theta + delta
                rc = np.asarray(problem.residuals(cand), dtype=float)
                lc = _loss(rc)
                if lc < loss:
                    accepted = True
                    lam = max(lam / 10.0, 1e-12)
                    break
                lam *= 10.0
            if not accepted:
                break
            improvement = (loss - lc) / max(loss, 1e-300)
            theta, r, loss = cand, rc, lc
            losses.append(loss)
            if improvement < 1e-9:
                break
    return LMResult(theta, loss, it, losses)


# --- neutral fallback ------------------------------------------------------

ADDITIVE, MULTIPLICATIVE = "additive", "multiplicative"


def neutral_fallback(params: np.ndarray, roles) -> np.ndarray:
    """Replace non-finite parameters by the neutral element of their role:
    0 for additive parameters, 1 for multiplicative ones."""
    params = np.array(params, dtype=float)
    roles = np.asarray(roles)
    bad = ~np.isfinite(params)
    params[bad & (roles == ADDITIVE)] = 0.0
    params[bad & (roles == MULTIPLICATIVE)] = 1.0
    return params


# --- parameter cache -------------------------------------------------------


class ParamCache:
    """Bounded LRU map from canonical expression keys to fitted parameters."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key) -> bool:
        return key in self._data

    def get(self, key):
        try:
            value = self._data[key]
        except KeyError:
            return None
        self._data.move_to_end(key)
        return value

    def put(self, key, value) -> None:
        self._data[key] = value
        self._data.move_to_end(key)
        while len(self._data) > self.capacity:
            self._data.popitem(last=False)

    def keys(self):
        return list(self._data)


def cache_get_or_fit(cache: ParamCache, key: Hashable, fitter: Callable[[], tuple]):
    """Return cached parameters for ``key`` or fit them.

    ``fitter`` returns ``(params, ok)``; ``params`` is stored only when
    ``ok`` is true (finite and an improvement). Cached parameters are reused
    as-is, never refined.
    """
    hit = cache.get(key)
    if hit is not None:
        cache.hits += 1
        return hit
    cache.misses += 1
    params, ok = fitter()
    if ok:
        cache.put(key, params)
    return params
