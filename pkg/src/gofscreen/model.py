"""Class-conditional models and the detection / non-detection / observed-value
log-likelihood decomposition.

A model describes, for a single modelled class, how likely each sensor is to
detect an instance with latent state ``theta`` and how the value reported by a
detecting sensor is distributed. Given an instance, the log-likelihood splits
additively into three parts::

    ell_det    = sum_{D_s = 1} log pi_s(theta)
    ell_nondet = sum_{D_s = 0} log(1 - pi_s(theta))
    ell_obs    = sum_{D_s = 1} log g_s(x_s; theta)
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

PROB_CLAMP = 1e-12


class ModelStructureError(ValueError):
    """Instance and model disagree on the sensor layout."""


class ClassConditionalModel(abc.ABC):
    """Interface for a model of the valid (label 1) class.

    Implementations must be immutable after construction.
    """

    @property
    @abc.abstractmethod
    def sensor_count(self) -> int: ...

    @abc.abstractmethod
    def detect_prob(self, sensor_index: int, theta) -> float:
        """Probability that ``sensor_index`` detects an instance with state ``theta``."""

    @abc.abstractmethod
    def obs_log_density(self, sensor_index: int, x: float, theta) -> float:
        """Log density of value ``x`` at a detecting sensor."""


@dataclass(frozen=True)
class Instance:
    """One observed instance: detection pattern plus values at detecting sensors."""

    detections: tuple[bool, ...]
    observed: Mapping[int, float]
    label: int | None = None
    latent_truth: tuple[float, float] | None = None
    scenario: str | None = None

    def __post_init__(self):
        det = tuple(bool(d) for d in self.detections)
        object.__setattr__(self, "detections", det)
        obs = {int(k): float(v) for k, v in self.observed.items()}
        expected = {s for s, d in enumerate(det) if d}
        if set(obs) != expected:
            raise ModelStructureError(
                "observed keys must be exactly the detecting sensors; "
                f"got {sorted(obs)} vs {sorted(expected)}"
            )
        object.__setattr__(self, "observed", obs)
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0, 1 or None, got {self.label!r}")

    @property
    def sensor_count(self) -> int:
        return len(self.detections)

    @property
    def m(self) -> int:
        return sum(self.detections)

    def values_array(self) -> np.ndarray:
        """Values as a length-S array with NaN at non-detecting sensors."""
        out = np.full(self.sensor_count, np.nan)
        for s, x in self.observed.items():
            out[s] = x
        return out

    @classmethod
    def from_arrays(cls, detections, values, **kw) -> "Instance":
        det = np.asarray(detections, dtype=bool)
        vals = np.asarray(values, dtype=float)
        observed = {int(s): float(vals[s]) for s in np.flatnonzero(det)}
        return cls(tuple(det.tolist()), observed, **kw)


@dataclass(frozen=True)
class ScoreDecomposition:
    ell_det: float
    ell_nondet: float
    ell_obs: float
    m: int
    S: int
    # False when some density evaluated to a non-finite value
    finite: bool = True
    ell_total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ell_total", self.ell_det + self.ell_nondet + self.ell_obs)


@dataclass(frozen=True)
class NormalizedScores:
    bar_ell_det: float
    bar_ell_nondet: float
    bar_ell_obs: float


def _clamped_logs(p: float) -> tuple[float, float]:
    p = min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)
    return math.log(p), math.log(1.0 - p)


def _check_layout(model: ClassConditionalModel, inst: Instance) -> None:
    if inst.sensor_count != model.sensor_count:
        raise ModelStructureError(
            f"instance has {inst.sensor_count} sensors, model has {model.sensor_count}"
        )


def _safe_log_density(model, s, x, theta) -> float:
    v = float(model.obs_log_density(s, x, theta))
    if math.isnan(v):
        return -math.inf
    return v


def sensor_contributions(model: ClassConditionalModel, theta, inst: Instance) -> list[float]:
    """Per-sensor fit contributions; they sum to the total log-likelihood."""
    _check_layout(model, inst)
    out = []
    for s, d in enumerate(inst.detections):
        log_p, log_q = _clamped_logs(model.detect_prob(s, theta))
        if d:
            out.append(log_p + _safe_log_density(model, s, inst.observed[s], theta))
        else:
            out.append(log_q)
    return out


def score_decomposition(model: ClassConditionalModel, theta, inst: Instance) -> ScoreDecomposition:
    _check_layout(model, inst)
    ell_det = ell_nondet = ell_obs = 0.0
    for s, d in enumerate(inst.detections):
        log_p, log_q = _clamped_logs(model.detect_prob(s, theta))
        if d:
            ell_det += log_p
            ell_obs += _safe_log_density(model, s, inst.observed[s], theta)
        else:
            ell_nondet += log_q
    return ScoreDecomposition(
        ell_det, ell_nondet, ell_obs, m=inst.m, S=inst.sensor_count, finite=math.isfinite(ell_obs)
    )


def normalize(dec: ScoreDecomposition) -> NormalizedScores:
    """Per-sensor averages, guarded so that empty sums stay 0."""
    m, S = dec.m, dec.S
    return NormalizedScores(
        bar_ell_det=dec.ell_det / max(m, 1),
        bar_ell_nondet=dec.ell_nondet / max(S - m, 1),
        bar_ell_obs=dec.ell_obs / max(m, 1),
    )


def worst_sensor(model: ClassConditionalModel, theta, inst: Instance) -> int:
    """Index of the sensor with the smallest contribution (first on ties)."""
    return int(np.argmin(sensor_contributions(model, theta, inst)))


def normalize_many(ell: np.ndarray, m: np.ndarray, S: int) -> np.ndarray:
    """Vectorised ``normalize`` over rows of ``(ell_det, ell_nondet, ell_obs)``."""
    ell = np.asarray(ell, dtype=float)
    m = np.asarray(m)
    out = np.empty_like(ell)
    out[:, 0] = ell[:, 0] / np.maximum(m, 1)
    out[:, 1] = ell[:, 1] / np.maximum(S - m, 1)
    out[:, 2] = ell[:, 2] / np.maximum(m, 1)
    return out


__all__: Sequence[str] = [
    "ClassConditionalModel",
    "Instance",
    "ModelStructureError",
    "NormalizedScores",
    "PROB_CLAMP",
    "ScoreDecomposition",
    "normalize",
    "normalize_many",
    "score_decomposition",
    "sensor_contributions",
    "worst_sensor",
]
