"""Input representations for the classifiers.

========================  ==================================================
tag                       columns
========================  ==================================================
``decomp``                bar_ell_obs, bar_ell_det, bar_ell_nondet, aux
``obs``                   bar_ell_obs, aux
``baseline``              aux
``raw``                   x_0..x_{S-1} (zero-imputed), d_0..d_{S-1}
``raw_plus_features``     raw, then the decomp block
========================  ==================================================

``aux`` is ``(m, M_hat, R_bar, s_R)``: detection count, fitted size, and the
mean and sample standard deviation of the residuals at detecting sensors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fitter import BatchFit, FitResult
from .model import PROB_CLAMP, Instance, normalize_many
from .simgen import LabeledDataset, SensorNetwork, SimulationParams

AUX_COLUMNS = ("m", "M_hat", "R_bar", "s_R")
SCORE_COLUMNS = ("bar_ell_obs", "bar_ell_det", "bar_ell_nondet")
TAGS = ("decomp", "obs", "baseline", "raw", "raw_plus_features")


class FeatureSchemaError(ValueError):
    pass


def raw_columns(S: int) -> list[str]:
    return [f"x_{s}" for s in range(S)] + [f"d_{s}" for s in range(S)]


def columns(tag: str, S: int) -> list[str]:
    if tag == "decomp":
        return [*SCORE_COLUMNS, *AUX_COLUMNS]
    if tag == "obs":
        return [SCORE_COLUMNS[0], *AUX_COLUMNS]
    if tag == "baseline":
        return list(AUX_COLUMNS)
    if tag == "raw":
        return raw_columns(S)
    if tag == "raw_plus_features":
        return raw_columns(S) + columns("decomp", S)
    raise FeatureSchemaError(f"unknown representation tag {tag!r}; expected one of {TAGS}")


@dataclass(frozen=True)
class AuxiliaryFeatures:
    m: int
    M_hat: float
    R_bar: float
    s_R: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (float(self.m), self.M_hat, self.R_bar, self.s_R)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    tag: str
    values: np.ndarray
    columns: tuple[str, ...]


def residuals(inst: Instance, theta_hat, params: SimulationParams, network: SensorNetwork) -> np.ndarray:
    """``x_s - mu_s(theta_hat)`` for each detecting sensor, in sensor order."""
    L, M = theta_hat
    idx = sorted(inst.observed)
    x = np.array([inst.observed[s] for s in idx])
    mu = params.beta_0 + params.beta_M * M - params.beta_d * np.abs(L - network.locations[idx])
    return x - mu


def residual_summary(res) -> tuple[float, float]:
    res = np.asarray(res, dtype=float)
    if res.size == 0:
        return 0.0, 0.0
    if res.size == 1:
        return float(res[0]), 0.0
    return float(res.mean()), float(res.std(ddof=1))


def auxiliary(inst: Instance, fit: FitResult, params, network) -> AuxiliaryFeatures:
    R_bar, s_R = residual_summary(residuals(inst, fit.theta_hat, params, network))
    return AuxiliaryFeatures(inst.m, float(fit.theta_hat[1]), R_bar, s_R)


# ---------------------------------------------------------------------------
# batch computation


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Per-instance fitted scores for a whole dataset."""

    ell: np.ndarray  # (n, 3): det, nondet, obs
    bar_ell: np.ndarray  # (n, 3): det, nondet, obs
    aux: np.ndarray  # (n, 4): m, M_hat, R_bar, s_R
    theta_hat: np.ndarray
    converged: np.ndarray

    def __len__(self) -> int:
        return self.ell.shape[0]

    @property
    def ell_total(self) -> np.ndarray:
        return self.ell.sum(axis=1)


def score_table(data: LabeledDataset, fits: BatchFit, params: SimulationParams, network: SensorNetwork) -> ScoreTable:
    """Decomposed scores and auxiliary summaries at the fitted states."""
    if len(fits) != len(data):
        raise FeatureSchemaError("fits and dataset differ in length")
    theta = fits.theta_hat
    L = theta[:, :1]
    M = theta[:, 1:]
    D = data.detections
    dist = np.abs(L - network.locations[None, :])
    z = params.alpha_0 + network.noise_offsets[None, :] + params.lam * (params.alpha_M * M - params.alpha_d * dist)
    p = np.clip(1.0 / (1.0 + np.exp(-z)), PROB_CLAMP, 1.0 - PROB_CLAMP)
    mu = params.beta_0 + params.beta_M * M - params.beta_d * dist
    x = np.where(D, data.values, 0.0)
    res = x - mu
    log_g = -0.5 * np.log(2.0 * np.pi * params.sigma_x**2) - 0.5 * (res / params.sigma_x) ** 2
    ell = np.column_stack(
        [
            np.where(D, np.log(p), 0.0).sum(axis=1),
            np.where(D, 0.0, np.log(1.0 - p)).sum(axis=1),
            np.where(D, log_g, 0.0).sum(axis=1),
        ]
    )
    m = D.sum(axis=1)
    bar = normalize_many(ell, m, data.S)
    res_d = np.where(D, res, 0.0)
    R_bar = res_d.sum(axis=1) / np.maximum(m, 1)
    ss = np.where(D, (res - R_bar[:, None]) ** 2, 0.0).sum(axis=1)
    s_R = np.where(m > 1, np.sqrt(ss / np.maximum(m - 1, 1)), 0.0)
    aux = np.column_stack([m.astype(float), M[:, 0], R_bar, s_R])
    return ScoreTable(ell, bar, aux, theta.copy(), fits.converged)


def raw_matrix(data: LabeledDataset) -> np.ndarray:
    return np.hstack([np.where(data.detections, data.values, 0.0), data.detections.astype(float)])


def _decomp_block(scores: ScoreTable) -> np.ndarray:
    b = scores.bar_ell
    # column order: obs, det, nondet
    return np.column_stack([b[:, 2], b[:, 0], b[:, 1], scores.aux])


def feature_matrix(tag: str, data: LabeledDataset, scores: ScoreTable | None = None) -> np.ndarray:
    if tag in ("raw",):
        return raw_matrix(data)
    if scores is None:
        raise FeatureSchemaError(f"representation {tag!r} needs fitted scores")
    if len(scores) != len(data):
        raise FeatureSchemaError("scores and dataset differ in length")
    dec = _decomp_block(scores)
    if tag == "decomp":
        return dec
    if tag == "obs":
        return dec[:, [0, 3, 4, 5, 6]]
    if tag == "baseline":
        return dec[:, 3:]
    if tag == "raw_plus_features":
        return np.hstack([raw_matrix(data), dec])
    raise FeatureSchemaError(f"unknown representation tag {tag!r}; expected one of {TAGS}")


def build_features(inst: Instance, fit: FitResult | None, params: SimulationParams, network: SensorNetwork, tag: str) -> FeatureVector:
    """Single-instance version of :func:`feature_matrix`."""
    if inst.sensor_count != network.S:
        raise FeatureSchemaError(f"instance has {inst.sensor_count} sensors, network has {network.S}")
    cols = tuple(columns(tag, inst.sensor_count))
    data = LabeledDataset.from_instances([inst])
    if tag == "raw":
        return FeatureVector(tag, raw_matrix(data)[0], cols)
    if fit is None:
        raise FeatureSchemaError(f"representation {tag!r} needs a fit")
    bf = BatchFit(
        np.array([fit.theta_hat], dtype=float),
        np.array([fit.log_likelihood]),
        np.array([fit.per_start_values]),
        np.array([fit.per_start_status or (0,) * len(fit.per_start_values)]),
        np.array([fit.best_start]),
    )
    scores = score_table(data, bf, params, network)
    return FeatureVector(tag, feature_matrix(tag, data, scores)[0], cols)


def write_feature_csv(path, X: np.ndarray, cols, extra: dict[str, np.ndarray] | None = None) -> None:
    """CSV with a header row; ``extra`` columns (e.g. event_id, label) go first."""
    extra = extra or {}
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*extra.keys(), *cols])
        for i in range(X.shape[0]):
            w.writerow([*(_fmt(v[i]) for v in extra.values()), *(_fmt(v) for v in X[i])])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))
