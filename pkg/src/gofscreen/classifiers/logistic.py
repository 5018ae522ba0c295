"""L2-penalised logistic regression on standardised features.

Objective (``n`` rows, weights ``w`` on the standardised scale, intercept
``b`` unpenalised)::

    mean_i logloss(y_i, sigma(z_i w + b)) + ||w||^2 / (2 C n)

which is the usual ``C * sum(logloss) + ||w||^2 / 2`` scaled by ``1 / (C n)``,
so ``C`` has its conventional meaning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..optimize import STATUS_FTOL, STATUS_PGTOL, minimize_box
from .tree import SchemaMismatchError, check_training_data


class SingleClassError(ValueError):
    pass


@njit(cache=True)
def _penalised_logloss(params, args):
    Z, y, l2 = args
    n, p = Z.shape
    w = params[:p]
    b = params[p]
    g = np.zeros(p + 1)
    f = 0.0
    for i in range(n):
        t = b
        for j in range(p):
            t += Z[i, j] * w[j]
        # log(1 + exp(t)) - y t, computed stably
        if t > 0.0:
            f += t + math.log1p(math.exp(-t)) - y[i] * t
            q = 1.0 / (1.0 + math.exp(-t))
        else:
            e = math.exp(t)
            f += math.log1p(e) - y[i] * t
            q = e / (1.0 + e)
        r = q - y[i]
        for j in range(p):
            g[j] += r * Z[i, j]
        g[p] += r
    f /= n
    for j in range(p + 1):
        g[j] /= n
    for j in range(p):
        f += 0.5 * l2 * w[j] * w[j]
        g[j] += l2 * w[j]
    return f, g


# not cacheable: receives a jitted objective
@njit
def _solve(Z, y, l2, x0, maxiter, pgtol, ftol):
    lo = np.full(x0.size, -np.inf)
    hi = np.full(x0.size, np.inf)
    return minimize_box(_penalised_logloss, x0, lo, hi, (Z, y, l2), 10, maxiter, pgtol, ftol)


@dataclass(frozen=True, eq=False)
class LogisticModel:
    coef: np.ndarray  # standardised scale
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    C: float
    converged: bool
    n_iter: int
    columns: tuple[str, ...] | None = None

    @property
    def n_features(self) -> int:
        return self.coef.size

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaMismatchError(f"expected {self.n_features} columns, got shape {X.shape}")
        return (X - self.mean) / self.scale

    def decision_function(self, X) -> np.ndarray:
        return self.standardize(X) @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        t = self.decision_function(X)
        out = np.empty_like(t)
        pos = t >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
        e = np.exp(t[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    def coefficients(self) -> dict[str, float]:
        names = self.columns or tuple(f"x{j}" for j in range(self.n_features))
        return {k: float(v) for k, v in zip(names, self.coef)}


def standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and population SDs; zero SDs become 1."""
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mean, sd


def fit_logistic(X, y, C: float = 1e6, max_iter: int = 5000, *, pgtol: float = 1e-10, ftol: float = 1e-15,
                 columns=None) -> LogisticModel:
    X, y = check_training_data(X, y)
    if y.min() == y.max():
        raise SingleClassError("logistic regression needs both classes")
    if C <= 0:
        raise ValueError("C must be positive")
    n, p = X.shape
    mean, sd = standardization(X)
    Z = np.ascontiguousarray((X - mean) / sd)
    l2 = 1.0 / (C * n)
    x0 = np.zeros(p + 1)
    rate = y.mean()
    x0[p] = math.log(rate / (1 - rate))
    x, f, g, status, nit, nfev = _solve(Z, y.astype(np.float64), l2, x0, int(max_iter), pgtol, ftol)
    return LogisticModel(
        coef=x[:p].copy(),
        intercept=float(x[p]),
        mean=mean,
        scale=sd,
        C=float(C),
        converged=int(status) in (STATUS_PGTOL, STATUS_FTOL),
        n_iter=int(nit),
        columns=None if columns is None else tuple(columns),
    )
