"""Synthetic sensor-network data: valid events and two kinds of invalid ones.

A valid event has a latent state ``(L, M)`` (location and size). Sensor ``s``
at location ``r_s`` detects it with probability::

    sigmoid(alpha_0 + alpha_0s + lam * (alpha_M * M - alpha_d * |L - r_s|))

and, when it detects, reports ``X_s ~ N(beta_0 + beta_M * M - beta_d * |L - r_s|, sigma_x**2)``.

Invalid events are either *composite* (each sensor is driven by one of two
independent pseudo-events) or *malformed* (a plausible event whose detection
pattern is i.i.d. Bernoulli noise). Every emitted event has at least two
detections; events with fewer are discarded and redrawn from scratch.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ClassConditionalModel, Instance, PROB_CLAMP
from .rng import as_generator

MAX_ATTEMPTS = 10_000
ALPHA_0_FOR_LAMBDA = {1.0: -2.2, 2.0: -2.82}

SCENARIO_VALID = "valid"
SCENARIO_COMPOSITE = "composite"
SCENARIO_MALFORMED = "malformed"
SCENARIOS = (SCENARIO_VALID, SCENARIO_COMPOSITE, SCENARIO_MALFORMED)

# parameters an expert model may get wrong (perturbed in misspecification runs)
EXPERT_PARAMETERS = ("alpha_0", "alpha_M", "alpha_d", "beta_0", "beta_M", "beta_d", "sigma_x")


class GenerationError(RuntimeError):
    """Raised when the minimum-detection filter keeps rejecting draws."""


@dataclass(frozen=True)
class SimulationParams:
    S: int = 50
    alpha_0: float = -2.2
    alpha_M: float = 0.16
    alpha_d: float = 12.0
    lam: float = 1.0
    beta_0: float = 0.0
    beta_M: float = 1.0
    beta_d: float = 4.0
    sigma_x: float = 1.0
    gamma: float = 0.5
    p_mal: float = 0.1
    p_mix: float = 0.5
    M_mean: float = 10.0
    M_sd: float = 2.0
    L_box: tuple[float, float] = (0.0, 1.0)
    M_box: tuple[float, float] = (0.0, 20.0)
    min_detections: int = 2

    def __post_init__(self):
        if self.S < 1:
            raise ValueError("S must be positive")
        if not self.sigma_x > 0:
            raise ValueError("sigma_x must be positive")
        if self.M_sd < 0:
            raise ValueError("M_sd must be non-negative")
        for name in ("gamma", "p_mal", "p_mix"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("L_box", "M_box"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} lower bound must be below upper bound")
        object.__setattr__(self, "L_box", tuple(float(v) for v in self.L_box))
        object.__setattr__(self, "M_box", tuple(float(v) for v in self.M_box))

    @classmethod
    def for_lambda(cls, lam: float, **overrides) -> "SimulationParams":
        """Defaults with ``alpha_0`` recalibrated for the informativeness level ``lam``."""
        lam = float(lam)
        if "alpha_0" not in overrides:
            if lam not in ALPHA_0_FOR_LAMBDA:
                raise ValueError(f"no calibrated alpha_0 for lambda={lam}; pass alpha_0 explicitly")
            overrides["alpha_0"] = ALPHA_0_FOR_LAMBDA[lam]
        return cls(lam=lam, **overrides)

    @property
    def theta_box(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return self.L_box, self.M_box

    def replace(self, **changes) -> "SimulationParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["L_box"] = list(self.L_box)
        d["M_box"] = list(self.M_box)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationParams":
        d = dict(d)
        for k in ("L_box", "M_box"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SensorNetwork:
    locations: np.ndarray
    noise_offsets: np.ndarray

    def __post_init__(self):
        r = np.array(self.locations, dtype=float)
        a = np.array(self.noise_offsets, dtype=float)
        if r.ndim != 1 or r.shape != a.shape:
            raise ValueError("locations and noise_offsets must be 1-D arrays of equal length")
        if np.any((r < 0) | (r > 1)) or np.any((a < 0) | (a > 1)):
            raise ValueError("network entries must lie in [0, 1]")
        r.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "locations", r)
        object.__setattr__(self, "noise_offsets", a)

    @property
    def S(self) -> int:
        return self.locations.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SensorNetwork):
            return NotImplemented
        return np.array_equal(self.locations, other.locations) and np.array_equal(
            self.noise_offsets, other.noise_offsets
        )


def sample_network(params: SimulationParams, rng) -> SensorNetwork:
    rng = as_generator(rng)
    r = rng.uniform(0.0, 1.0, params.S)
    a0s = rng.uniform(0.0, 1.0, params.S)
    return SensorNetwork(r, a0s)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def detection_probabilities(params: SimulationParams, network: SensorNetwork, L, M) -> np.ndarray:
    """Detection probability at every sensor; ``L`` and ``M`` may be per-sensor arrays."""
    dist = np.abs(L - network.locations)
    z = params.alpha_0 + network.noise_offsets + params.lam * (params.alpha_M * M - params.alpha_d * dist)
    return _sigmoid(z)


def detection_probability(params: SimulationParams, network: SensorNetwork, s: int, L: float, M: float) -> float:
    if not 0 <= s < network.S:
        raise IndexError(f"sensor index {s} out of range")
    z = params.alpha_0 + network.noise_offsets[s] + params.lam * (
        params.alpha_M * M - params.alpha_d * abs(L - network.locations[s])
    )
    return float(1.0 / (1.0 + math.exp(-z)))


def observation_means(params: SimulationParams, network: SensorNetwork, L, M) -> np.ndarray:
    return params.beta_0 + params.beta_M * M - params.beta_d * np.abs(L - network.locations)


class SimulationModel(ClassConditionalModel):
    """The valid-class model of the simulation, with ``theta = (L, M)``."""

    def __init__(self, params: SimulationParams, network: SensorNetwork):
        if network.S != params.S:
            raise ValueError(f"network has {network.S} sensors, params say {params.S}")
        self.params = params
        self.network = network
        self._log_norm = -0.5 * math.log(2.0 * math.pi * params.sigma_x**2)

    @property
    def sensor_count(self) -> int:
        return self.params.S

    def detect_prob(self, sensor_index, theta):
        L, M = theta
        return detection_probability(self.params, self.network, sensor_index, L, M)

    def obs_log_density(self, sensor_index, x, theta):
        L, M = theta
        p = self.params
        mu = p.beta_0 + p.beta_M * M - p.beta_d * abs(L - self.network.locations[sensor_index])
        return self._log_norm - 0.5 * ((x - mu) / p.sigma_x) ** 2


# ---------------------------------------------------------------------------
# single draws (no minimum-detection filter)


@dataclass
class RawDraw:
    detections: np.ndarray
    values: np.ndarray
    latent: tuple[float, float]
    extra: dict = field(default_factory=dict)


def _draw_latent(params, rng) -> tuple[float, float]:
    L = rng.uniform(0.0, 1.0)
    M = rng.normal(params.M_mean, params.M_sd)
    return float(L), float(M)


def _draw_sensors(params, network, rng, L, M, detect_p=None):
    if detect_p is None:
        detect_p = detection_probabilities(params, network, L, M)
    det = rng.random(params.S) < detect_p
    noise = rng.standard_normal(params.S)
    mu = observation_means(params, network, L, M)
    values = np.where(det, mu + params.sigma_x * noise, np.nan)
    return det, values


def draw_valid(params, network, rng) -> RawDraw:
    L, M = _draw_latent(params, rng)
    det, values = _draw_sensors(params, network, rng, L, M)
    return RawDraw(det, values, (L, M))


def draw_composite(params, network, rng, theta_a=None, theta_b=None) -> RawDraw:
    """Two pseudo-events; selector 1 routes a sensor to ``theta_a``, 0 to ``theta_b``."""
    ta = _draw_latent(params, rng) if theta_a is None else tuple(map(float, theta_a))
    tb = _draw_latent(params, rng) if theta_b is None else tuple(map(float, theta_b))
    use_a = rng.random(params.S) < params.gamma
    L = np.where(use_a, ta[0], tb[0])
    M = np.where(use_a, ta[1], tb[1])
    det, values = _draw_sensors(params, network, rng, L, M)
    return RawDraw(det, values, (math.nan, math.nan), {"theta_a": ta, "theta_b": tb, "use_a": use_a})


def draw_malformed(params, network, rng) -> RawDraw:
    L, M = _draw_latent(params, rng)
    det, values = _draw_sensors(params, network, rng, L, M, detect_p=np.full(params.S, params.p_mal))
    return RawDraw(det, values, (L, M))


def _until_enough(draw, params, *args, **kw) -> RawDraw:
    for _ in range(MAX_ATTEMPTS):
        out = draw(params, *args, **kw)
        if out.detections.sum() >= params.min_detections:
            return out
    raise GenerationError(
        f"{draw.__name__}: no event with >= {params.min_detections} detections "
        f"in {MAX_ATTEMPTS} attempts; check the parameters"
    )


def _to_instance(raw: RawDraw, label: int, scenario: str) -> Instance:
    latent = None if math.isnan(raw.latent[0]) else raw.latent
    return Instance.from_arrays(raw.detections, raw.values, label=label, latent_truth=latent, scenario=scenario)


def sample_valid_event(params, network, rng) -> Instance:
    raw = _until_enough(draw_valid, params, network, as_generator(rng))
    return _to_instance(raw, 1, SCENARIO_VALID)


def sample_invalid_composite(params, network, rng, theta_a=None, theta_b=None) -> Instance:
    raw = _until_enough(draw_composite, params, network, as_generator(rng), theta_a=theta_a, theta_b=theta_b)
    return _to_instance(raw, 0, SCENARIO_COMPOSITE)


def sample_invalid_malformed(params, network, rng) -> Instance:
    raw = _until_enough(draw_malformed, params, network, as_generator(rng))
    return _to_instance(raw, 0, SCENARIO_MALFORMED)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Array-backed collection of instances.

    ``values`` holds NaN wherever ``detections`` is False. ``latent`` is NaN
    for composite events, which have no single latent state.
    """

    detections: np.ndarray
    values: np.ndarray
    labels: np.ndarray
    latent: np.ndarray
    scenarios: np.ndarray

    def __post_init__(self):
        det = np.asarray(self.detections, dtype=bool)
        vals = np.asarray(self.values, dtype=float)
        n, S = det.shape
        if vals.shape != (n, S):
            raise ValueError("values must match detections in shape")
        if np.any(np.isnan(vals[det])) or np.any(~np.isnan(vals[~det])):
            raise ValueError("values must be finite exactly where detections are True")
        labels = np.asarray(self.labels, dtype=np.int64)
        latent = np.asarray(self.latent, dtype=float).reshape(n, 2)
        scen = np.asarray(self.scenarios, dtype=object)
        if labels.shape != (n,) or scen.shape != (n,):
            raise ValueError("labels and scenarios must have one entry per instance")
        for name, arr in (("detections", det), ("values", vals), ("labels", labels), ("latent", latent), ("scenarios", scen)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.detections.shape[0]

    @property
    def S(self) -> int:
        return self.detections.shape[1]

    @property
    def m(self) -> np.ndarray:
        return self.detections.sum(axis=1)

    def __getitem__(self, i: int) -> Instance:
        lat = self.latent[i]
        return Instance.from_arrays(
            self.detections[i],
            self.values[i],
            label=int(self.labels[i]),
            latent_truth=None if np.isnan(lat[0]) else (float(lat[0]), float(lat[1])),
            scenario=str(self.scenarios[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def instances(self) -> list[Instance]:
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            np.array_equal(self.detections, other.detections)
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.latent, other.latent, equal_nan=True)
            and np.array_equal(self.scenarios, other.scenarios)
        )

    @classmethod
    def from_instances(cls, instances) -> "LabeledDataset":
        instances = list(instances)
        det = np.array([inst.detections for inst in instances], dtype=bool)
        vals = np.array([inst.values_array() for inst in instances])
        labels = np.array([-1 if inst.label is None else inst.label for inst in instances])
        latent = np.array([inst.latent_truth or (math.nan, math.nan) for inst in instances], dtype=float)
        scen = np.array([inst.scenario or "" for inst in instances], dtype=object)
        return cls(det, vals, labels, latent, scen)


def sample_dataset(n: int, params: SimulationParams, network: SensorNetwork, rng) -> LabeledDataset:
    """``ceil(n/2)`` valid and ``floor(n/2)`` invalid events in shuffled order."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if network.S != params.S:
        raise ValueError(f"network has {network.S} sensors, params say {params.S}")
    rng = as_generator(rng)
    n_valid = (n + 1) // 2
    draws, labels, scen = [], [], []
    for _ in range(n_valid):
        draws.append(_until_enough(draw_valid, params, network, rng))
        labels.append(1)
        scen.append(SCENARIO_VALID)
    for _ in range(n - n_valid):
        if rng.random() < params.p_mix:
            draws.append(_until_enough(draw_composite, params, network, rng))
            scen.append(SCENARIO_COMPOSITE)
        else:
            draws.append(_until_enough(draw_malformed, params, network, rng))
            scen.append(SCENARIO_MALFORMED)
        labels.append(0)
    order = rng.permutation(n)
    det = np.array([draws[i].detections for i in order])
    vals = np.array([draws[i].values for i in order])
    latent = np.array([draws[i].latent for i in order], dtype=float)
    return LabeledDataset(
        det, vals, np.asarray(labels)[order], latent, np.asarray(scen, dtype=object)[order]
    )


def perturb_params(params: SimulationParams, rng, factors=(0.75, 1.25)) -> tuple[SimulationParams, dict]:
    """Multiply each expert parameter by a factor drawn uniformly from ``factors``."""
    rng = as_generator(rng)
    choice = {name: float(factors[rng.integers(len(factors))]) for name in EXPERT_PARAMETERS}
    changes = {name: getattr(params, name) * f for name, f in choice.items()}
    return params.replace(**changes), choice


__all__ = [
    "ALPHA_0_FOR_LAMBDA",
    "EXPERT_PARAMETERS",
    "GenerationError",
    "LabeledDataset",
    "MAX_ATTEMPTS",
    "PROB_CLAMP",
    "SensorNetwork",
    "SimulationModel",
    "SimulationParams",
    "detection_probabilities",
    "detection_probability",
    "draw_composite",
    "draw_malformed",
    "draw_valid",
    "observation_means",
    "perturb_params",
    "sample_dataset",
    "sample_invalid_composite",
    "sample_invalid_malformed",
    "sample_network",
    "sample_valid_event",
]
