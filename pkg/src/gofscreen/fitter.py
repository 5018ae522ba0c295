"""Instance-level maximum-likelihood fit of the latent state ``theta = (L, M)``.

The negative log-likelihood of one instance under the valid-class simulation
model is minimised over the box ``[0, 1] x [0, 20]`` from several starting
points; the best run wins (first one on exact ties).

The likelihood has a kink in ``L`` at every sensor location, and the kinks
from non-detecting sensors are non-convex, so local searches from a few fixed
points can end in the wrong basin. After the fixed starts a profile scan runs:
for fixed ``L`` the log-likelihood is strictly concave in ``M``, so ``M`` is
profiled out by safeguarded Newton on a grid of ``L`` values plus the detecting
sensor locations, and one more local search starts from the best scan point.

``|L - r_s|`` is not differentiable at ``L = r_s``; there the right-sided
derivative (``sign(0) = +1``) is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import PROB_CLAMP, Instance
from .optimize import STATUS_FTOL, STATUS_LINESEARCH, STATUS_PGTOL, minimize_box
from .simgen import LabeledDataset, SensorNetwork, SimulationParams

# line search stalled on a kink, but no coordinate probe lowers the objective
STATUS_KINK = 4
CONVERGED_STATUSES = (STATUS_PGTOL, STATUS_FTOL, STATUS_KINK)


@dataclass(frozen=True)
class FitConfig:
    L_box: tuple[float, float] = (0.0, 1.0)
    M_box: tuple[float, float] = (0.0, 20.0)
    fixed_L_starts: tuple[float, ...] = (0.2, 0.5, 0.8)
    M_start: float = 10.0
    use_empirical_start: bool = True
    max_iterations: int = 250
    pgtol: float = 1e-8
    ftol: float = 1e-12
    history: int = 10
    # size of the L grid of the profile scan; 0 disables the scan
    profile_scan: int = 101

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        (l0, l1), (m0, m1) = self.L_box, self.M_box
        if not (l0 < l1 and m0 < m1):
            raise ValueError("box lower bounds must be below upper bounds")
        for L in self.fixed_L_starts:
            if not l0 <= L <= l1:
                raise ValueError(f"start L={L} outside the box")
        if not m0 <= self.M_start <= m1:
            raise ValueError(f"start M={self.M_start} outside the box")
        if not self.fixed_L_starts and not self.use_empirical_start and self.profile_scan == 0:
            raise ValueError("at least one start is required")
        if self.profile_scan == 1 or self.profile_scan < 0:
            raise ValueError("profile_scan must be 0 or at least 2")

    @classmethod
    def from_params(cls, params: SimulationParams, **kw) -> "FitConfig":
        kw.setdefault("M_start", params.M_mean)
        return cls(L_box=params.L_box, M_box=params.M_box, **kw)

    @property
    def n_starts(self) -> int:
        return len(self.fixed_L_starts) + int(self.use_empirical_start) + int(self.profile_scan > 0)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.L_box[0], self.M_box[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.L_box[1], self.M_box[1]])


@dataclass(frozen=True)
class FitResult:
    theta_hat: tuple[float, float]
    log_likelihood: float
    converged: bool
    n_starts: int
    per_start_values: tuple[float, ...]
    per_start_status: tuple[int, ...] = field(default=())
    best_start: int = 0


def model_constants(params: SimulationParams) -> np.ndarray:
    return np.array(
        [
            params.alpha_0,
            params.alpha_M,
            params.alpha_d,
            params.lam,
            params.beta_0,
            params.beta_M,
            params.beta_d,
            params.sigma_x,
        ]
    )


@njit(cache=True)
def _nll_grad(theta, args):
    det, x, r, a0s, c = args
    L = theta[0]
    M = theta[1]
    a0, aM, ad, lam, b0, bM, bd, sx = c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]
    inv_var = 1.0 / (sx * sx)
    log_norm = -0.5 * math.log(2.0 * math.pi * sx * sx)
    ll = 0.0
    gL = 0.0
    gM = 0.0
    for s in range(r.size):
        dd = L - r[s]
        sgn = 1.0 if dd >= 0.0 else -1.0
        dist = abs(dd)
        z = a0 + a0s[s] + lam * (aM * M - ad * dist)
        p = 1.0 / (1.0 + math.exp(-z))
        clamped = p < PROB_CLAMP or p > 1.0 - PROB_CLAMP
        pc = min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)
        if det[s]:
            ll += math.log(pc)
            dz = 0.0 if clamped else 1.0 - p
            mu = b0 + bM * M - bd * dist
            res = x[s] - mu
            ll += log_norm - 0.5 * res * res * inv_var
            dmu = res * inv_var
            gL += dz * (-lam * ad * sgn) + dmu * (-bd * sgn)
            gM += dz * (lam * aM) + dmu * bM
        else:
            ll += math.log(1.0 - pc)
            dz = 0.0 if clamped else -p
            gL += dz * (-lam * ad * sgn)
            gM += dz * (lam * aM)
    g = np.empty(2)
    g[0] = -gL
    g[1] = -gM
    return -ll, g


@njit(cache=True)
def _empirical_start(det, x, r, c, lower, upper, M_default):
    m = 0
    sr = 0.0
    for s in range(r.size):
        if det[s]:
            m += 1
            sr += r[s]
    if m == 0:
        return 0.5 * (lower[0] + upper[0]), M_default
    L0 = sr / m
    sx = 0.0
    sd = 0.0
    for s in range(r.size):
        if det[s]:
            sx += x[s]
            sd += abs(L0 - r[s])
    b0, bM, bd = c[4], c[5], c[6]
    M0 = (sx / m - b0 + bd * sd / m) / bM
    M0 = min(max(M0, lower[1]), upper[1])
    L0 = min(max(L0, lower[0]), upper[0])
    return L0, M0


@njit(cache=True)
def _profile_M(L, det, x, r, a0s, c, lower, upper, M0):
    """Maximise the log-likelihood over ``M`` at fixed ``L``; returns ``(M, nll)``."""
    a0, aM, ad, lam, b0, bM, bd, sx = c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]
    inv_var = 1.0 / (sx * sx)
    k = lam * aM
    lo = lower[1]
    hi = upper[1]
    M = min(max(M0, lo), hi)
    for it in range(60):
        g = 0.0
        h = 0.0
        for s in range(r.size):
            dist = abs(L - r[s])
            p = 1.0 / (1.0 + math.exp(-(a0 + a0s[s] + lam * (aM * M - ad * dist))))
            if not (p < PROB_CLAMP or p > 1.0 - PROB_CLAMP):
                g += k * ((1.0 - p) if det[s] else -p)
                h -= k * k * p * (1.0 - p)
            if det[s]:
                g += (x[s] - (b0 + bM * M - bd * dist)) * bM * inv_var
                h -= bM * bM * inv_var
        # g is decreasing in M, so its sign at M shrinks the bracket
        if g > 0.0:
            lo = M
        else:
            hi = M
        if hi - lo <= 1e-8 or g == 0.0:
            break
        step = M - g / h if h < 0.0 else 0.5 * (lo + hi)
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        done = abs(step - M) <= 1e-8
        M = step
        if done:
            break
    theta = np.empty(2)
    theta[0] = L
    theta[1] = M
    f, _ = _nll_grad(theta, (det, x, r, a0s, c))
    return M, f


@njit(cache=True)
def _profile_scan(det, x, r, a0s, c, lower, upper, n_grid, M_default):
    """Best ``(L, M)`` over the scan points and its objective value."""
    best_f = np.inf
    best = np.empty(2)
    M = M_default
    for i in range(n_grid + r.size):
        if i < n_grid:
            L = lower[0] + (upper[0] - lower[0]) * i / (n_grid - 1)
        else:
            s = i - n_grid
            if not det[s]:
                continue
            L = min(max(r[s], lower[0]), upper[0])
        # warm start along the grid
        Mi, f = _profile_M(L, det, x, r, a0s, c, lower, upper, M)
        if i < n_grid:
            M = Mi
        if f < best_f:
            best_f = f
            best[0] = L
            best[1] = Mi
    return best, best_f


@njit(cache=True)
def _kink_stationary(xk, fk, args, lower, upper):
    """True when no small step along +-L or +-M decreases the objective."""
    tol = 1e-12 * max(1.0, abs(fk))
    for j in range(2):
        eps = 1e-7 * (upper[j] - lower[j])
        for sgn in (-1.0, 1.0):
            for scale in (1.0, 100.0):
                y = xk.copy()
                y[j] = min(max(y[j] + sgn * scale * eps, lower[j]), upper[j])
                fy, _ = _nll_grad(y, args)
                if fy < fk - tol:
                    return False
    return True


# not cacheable: numba cannot cache functions that receive a jitted objective
@njit
def _fit_one(det, x, r, a0s, c, lower, upper, starts, use_emp, M_default, m_hist, maxiter, pgtol, ftol, n_scan):
    n_fixed = starts.shape[0]
    n_local = n_fixed + (1 if use_emp else 0)
    n_starts = n_local + (1 if n_scan > 0 else 0)
    values = np.empty(n_starts)
    status = np.empty(n_starts, dtype=np.int64)
    best_f = np.inf
    best_x = np.empty(2)
    best_k = -1
    args = (det, x, r, a0s, c)
    for k in range(n_starts):
        x0 = np.empty(2)
        if k == n_local:
            x0, _ = _profile_scan(det, x, r, a0s, c, lower, upper, n_scan, M_default)
        elif use_emp and k == 0:
            L0, M0 = _empirical_start(det, x, r, c, lower, upper, M_default)
            x0[0] = L0
            x0[1] = M0
        else:
            j = k - 1 if use_emp else k
            x0[0] = starts[j, 0]
            x0[1] = starts[j, 1]
        xk, fk, gk, st, nit, nfev = minimize_box(_nll_grad, x0, lower, upper, args, m_hist, maxiter, pgtol, ftol)
        if st == STATUS_LINESEARCH and _kink_stationary(xk, fk, args, lower, upper):
            st = STATUS_KINK
        values[k] = -fk
        status[k] = st
        if fk < best_f or best_k < 0:
            best_f = fk
            best_x[:] = xk
            best_k = k
    return best_x, -best_f, values, status, best_k


@njit
def _fit_batch(D, X, r, a0s, c, lower, upper, starts, use_emp, M_default, m_hist, maxiter, pgtol, ftol, n_scan):
    n = D.shape[0]
    n_starts = starts.shape[0] + (1 if use_emp else 0) + (1 if n_scan > 0 else 0)
    theta = np.empty((n, 2))
    ll = np.empty(n)
    values = np.empty((n, n_starts))
    status = np.empty((n, n_starts), dtype=np.int64)
    best = np.empty(n, dtype=np.int64)
    for i in range(n):
        bx, bll, v, st, bk = _fit_one(
            D[i], X[i], r, a0s, c, lower, upper, starts, use_emp, M_default, m_hist, maxiter, pgtol, ftol, n_scan
        )
        theta[i] = bx
        ll[i] = bll
        values[i] = v
        status[i] = st
        best[i] = bk
    return theta, ll, values, status, best


def _instance_arrays(inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    det = np.asarray(inst.detections, dtype=np.bool_)
    x = np.zeros(det.size)
    for s, v in inst.observed.items():
        x[s] = v
    return det, x


def _check(params: SimulationParams, network: SensorNetwork, S: int):
    if network.S != params.S or S != params.S:
        raise ValueError(f"sensor count mismatch: instance {S}, network {network.S}, params {params.S}")


def neg_log_likelihood_and_gradient(theta, inst: Instance, params: SimulationParams, network: SensorNetwork):
    """Negative log-likelihood of ``inst`` at ``theta`` and its gradient in ``(L, M)``."""
    _check(params, network, inst.sensor_count)
    det, x = _instance_arrays(inst)
    f, g = _nll_grad(
        np.asarray(theta, dtype=np.float64),
        (det, x, network.locations.copy(), network.noise_offsets.copy(), model_constants(params)),
    )
    return float(f), (float(g[0]), float(g[1]))


def empirical_start(inst: Instance, params: SimulationParams, network: SensorNetwork, cfg: FitConfig | None = None):
    cfg = cfg or FitConfig.from_params(params)
    det, x = _instance_arrays(inst)
    return _empirical_start(det, x, network.locations.copy(), model_constants(params), cfg.lower, cfg.upper, cfg.M_start)


def _start_array(cfg: FitConfig) -> np.ndarray:
    if not cfg.fixed_L_starts:
        return np.empty((0, 2))
    return np.array([[L, cfg.M_start] for L in cfg.fixed_L_starts], dtype=np.float64)


def fit_latent_state(inst: Instance, params: SimulationParams, network: SensorNetwork, cfg: FitConfig | None = None) -> FitResult:
    cfg = cfg or FitConfig.from_params(params)
    _check(params, network, inst.sensor_count)
    if inst.m < 1:
        raise ValueError("fitting needs at least one detection")
    det, x = _instance_arrays(inst)
    return _run_batch(det[None, :], x[None, :], params, network, cfg)[0]


@dataclass(frozen=True, eq=False)
class BatchFit:
    """Fits for every instance of a dataset, as arrays."""

    theta_hat: np.ndarray  # (n, 2)
    log_likelihood: np.ndarray
    per_start_values: np.ndarray  # (n, n_starts)
    per_start_status: np.ndarray
    best_start: np.ndarray

    def __len__(self) -> int:
        return self.theta_hat.shape[0]

    @property
    def converged(self) -> np.ndarray:
        st = self.per_start_status[np.arange(len(self)), self.best_start]
        return np.isin(st, CONVERGED_STATUSES)

    @property
    def failure_count(self) -> int:
        return int((~self.converged).sum())

    def __getitem__(self, i: int) -> FitResult:
        return FitResult(
            theta_hat=(float(self.theta_hat[i, 0]), float(self.theta_hat[i, 1])),
            log_likelihood=float(self.log_likelihood[i]),
            converged=bool(self.converged[i]),
            n_starts=self.per_start_values.shape[1],
            per_start_values=tuple(float(v) for v in self.per_start_values[i]),
            per_start_status=tuple(int(s) for s in self.per_start_status[i]),
            best_start=int(self.best_start[i]),
        )


def fit_dataset(data: LabeledDataset, params: SimulationParams, network: SensorNetwork, cfg: FitConfig | None = None) -> BatchFit:
    cfg = cfg or FitConfig.from_params(params)
    _check(params, network, data.S)
    if np.any(data.m < 1):
        raise ValueError("fitting needs at least one detection per instance")
    D = np.array(data.detections, dtype=np.bool_)
    X = np.where(D, data.values, 0.0)
    return _run_batch(D, X, params, network, cfg)


def _run_batch(D, X, params, network, cfg) -> BatchFit:
    theta, ll, values, status, best = _fit_batch(
        D, X, network.locations.copy(), network.noise_offsets.copy(), model_constants(params),
        cfg.lower, cfg.upper, _start_array(cfg), cfg.use_empirical_start, float(cfg.M_start),
        cfg.history, cfg.max_iterations, cfg.pgtol, cfg.ftol, int(cfg.profile_scan),
    )
    return BatchFit(theta, ll, values, status, best)
