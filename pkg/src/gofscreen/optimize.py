"""Projected limited-memory BFGS for box-constrained minimisation.

The objective is a jitted function ``fg(x, args) -> (f, grad)``. Each
iteration fixes the variables sitting on a bound whose gradient points out of
the box, builds an L-BFGS direction on the remaining (free) variables via the
two-loop recursion, and backtracks along the projected path
``P(x + t d)`` until an Armijo decrease is found.

If no decrease is found along the quasi-Newton direction the memory is
dropped and steepest descent is tried, then each free coordinate on its own
(this lets the smooth coordinates keep moving when the iterate sits on a kink
of a piecewise-smooth objective).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

STATUS_PGTOL = 0
STATUS_FTOL = 1
STATUS_MAXITER = 2
STATUS_LINESEARCH = 3

STATUS_TEXT = {
    STATUS_PGTOL: "projected gradient below tolerance",
    STATUS_FTOL: "relative objective change below tolerance",
    STATUS_MAXITER: "iteration limit reached",
    STATUS_LINESEARCH: "no descent step found",
}

ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 40


class BoxResult(NamedTuple):
    x: np.ndarray
    fun: float
    grad: np.ndarray
    status: int
    nit: int
    nfev: int

    @property
    def converged(self) -> bool:
        return self.status in (STATUS_PGTOL, STATUS_FTOL)

    @property
    def message(self) -> str:
        return STATUS_TEXT[self.status]


@njit(cache=True)
def _project(x, lower, upper):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        if v < lower[i]:
            v = lower[i]
        elif v > upper[i]:
            v = upper[i]
        out[i] = v
    return out


@njit(cache=True)
def projected_gradient_norm(x, g, lower, upper):
    """``max_i |x_i - P(x - g)_i|``."""
    worst = 0.0
    for i in range(x.size):
        v = x[i] - g[i]
        if v < lower[i]:
            v = lower[i]
        elif v > upper[i]:
            v = upper[i]
        a = abs(x[i] - v)
        if a > worst:
            worst = a
    return worst


@njit(cache=True)
def _free_mask(x, g, lower, upper):
    free = np.ones(x.size, dtype=np.bool_)
    for i in range(x.size):
        if (x[i] <= lower[i] and g[i] > 0.0) or (x[i] >= upper[i] and g[i] < 0.0):
            free[i] = False
    return free


@njit(cache=True)
def _two_loop(g, free, S, Y, rho, n_mem, head, m):
    q = np.where(free, g, 0.0)
    alpha = np.zeros(m)
    # newest to oldest
    for j in range(n_mem):
        idx = (head - 1 - j) % m
        a = rho[idx] * np.dot(S[idx], q)
        alpha[idx] = a
        q = q - a * Y[idx]
    if n_mem > 0:
        idx = (head - 1) % m
        gamma = np.dot(S[idx], Y[idx]) / np.dot(Y[idx], Y[idx])
        q = q * gamma
    for j in range(n_mem - 1, -1, -1):
        idx = (head - 1 - j) % m
        b = rho[idx] * np.dot(Y[idx], q)
        q = q + S[idx] * (alpha[idx] - b)
    d = np.where(free, -q, 0.0)
    return d


@njit(cache=True)
def _backtrack(fg, args, x, f, g, d, t0, lower, upper):
    """Armijo backtracking on the projected path. Returns (ok, x, f, g, nfev)."""
    t = t0
    nfev = 0
    for _ in range(MAX_BACKTRACKS):
        xt = _project(x + t * d, lower, upper)
        step = xt - x
        if np.max(np.abs(step)) == 0.0:
            break
        slope = np.dot(g, step)
        if slope >= 0.0:
            t *= 0.5
            continue
        ft, gt = fg(xt, args)
        nfev += 1
        if np.isfinite(ft) and ft <= f + ARMIJO_C1 * slope:
            return True, xt, ft, gt, nfev
        # safeguarded quadratic interpolation along the path
        if np.isfinite(ft):
            denom = 2.0 * (ft - f - slope)
            tq = -slope * t / denom if denom > 0.0 else 0.5 * t
            if tq < 0.1 * t:
                tq = 0.1 * t
            elif tq > 0.5 * t:
                tq = 0.5 * t
            t = tq
        else:
            t *= 0.1
    return False, x, f, g, nfev


@njit(cache=True)
def minimize_box(fg, x0, lower, upper, args, m=10, maxiter=250, pgtol=1e-8, ftol=1e-12):
    """Minimise ``fg`` over the box ``[lower, upper]`` starting from ``x0``.

    Returns ``(x, f, g, status, nit, nfev)``; see ``STATUS_*``.
    """
    n = x0.size
    x = _project(x0.astype(np.float64), lower, upper)
    f, g = fg(x, args)
    nfev = 1
    S = np.zeros((m, n))
    Y = np.zeros((m, n))
    rho = np.zeros(m)
    n_mem = 0
    head = 0
    status = STATUS_MAXITER
    nit = 0
    while nit < maxiter:
        if projected_gradient_norm(x, g, lower, upper) <= pgtol:
            status = STATUS_PGTOL
            break
        nit += 1
        free = _free_mask(x, g, lower, upper)
        d = _two_loop(g, free, S, Y, rho, n_mem, head, m)
        t0 = 1.0
        if n_mem == 0 or np.dot(d, g) >= 0.0:
            n_mem = 0
            d = np.where(free, -g, 0.0)
            gmax = np.max(np.abs(d))
            t0 = 1.0 / gmax if gmax > 1.0 else 1.0
        ok, xn, fn, gn, k = _backtrack(fg, args, x, f, g, d, t0, lower, upper)
        nfev += k
        if not ok and n_mem > 0:
            n_mem = 0
            d = np.where(free, -g, 0.0)
            gmax = np.max(np.abs(d))
            t0 = 1.0 / gmax if gmax > 1.0 else 1.0
            ok, xn, fn, gn, k = _backtrack(fg, args, x, f, g, d, t0, lower, upper)
            nfev += k
        if not ok:
            # coordinate-wise fallback
            for i in range(n):
                if not free[i] or g[i] == 0.0:
                    continue
                d = np.zeros(n)
                d[i] = -g[i]
                t0 = 1.0 / abs(g[i]) if abs(g[i]) > 1.0 else 1.0
                ok, xn, fn, gn, k = _backtrack(fg, args, x, f, g, d, t0, lower, upper)
                nfev += k
                if ok:
                    break
        if not ok:
            status = STATUS_LINESEARCH
            break
        s = xn - x
        y = gn - g
        sy = np.dot(s, y)
        if sy > 1e-10 * np.dot(y, y):
            S[head] = s
            Y[head] = y
            rho[head] = 1.0 / sy
            head = (head + 1) % m
            if n_mem < m:
                n_mem += 1
        f_old = f
        x = xn
        f = fn
        g = gn
        if (f_old - f) <= ftol * max(abs(f_old), abs(f), 1.0):
            status = STATUS_FTOL
            break
    return x, f, g, status, nit, nfev


def minimize(fg, x0, lower=None, upper=None, args=(), m=10, maxiter=250, pgtol=1e-8, ftol=1e-12) -> BoxResult:
    """Python entry point around :func:`minimize_box`.

    ``fg`` must be a numba-jitted ``fg(x, args) -> (float, ndarray)``.
    Missing bounds default to an unbounded box.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    lo = np.full(x0.size, -np.inf) if lower is None else np.asarray(lower, dtype=np.float64)
    hi = np.full(x0.size, np.inf) if upper is None else np.asarray(upper, dtype=np.float64)
    if np.any(lo > hi):
        raise ValueError("lower bound above upper bound")
    x, f, g, status, nit, nfev = minimize_box(fg, x0, lo, hi, args, m, maxiter, pgtol, ftol)
    return BoxResult(x, float(f), g, int(status), int(nit), int(nfev))
