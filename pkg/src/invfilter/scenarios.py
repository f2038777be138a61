"""Benchmark scenario definitions and per-episode model factories.

Two built-in scenarios: a univariate nonlinear growth model and a bearing-only
tracking problem with a moving, jittered sensor.  A scenario config carries
every numeric parameter plus Monte Carlo sizes; the model factory turns it
into a concrete system for one episode (the bearing sensor path is a per-
episode random draw shared by both observation channels).
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .forward import ForwardEkf, ForwardPf
from .ssm import (AdditiveGaussianObservation, AdditiveGaussianTransition,
                  GaussianDist, SystemModel)


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending key."""


@dataclass
class ScenarioConfig:
    name: str
    horizon: int
    runs: int
    seed: int = 0
    forward_pf_particles: int = 25
    ipf_particles: int = 50
    resample_scheme: str = "systematic"
    gamma: float = 0.0
    max_retries: int = 10
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


UNGM_DEFAULTS = {
    "process_var": 10.0,
    "attacker_obs_var": 1.0,
    "action_var": 5.0,
    "prior_mean": 0.0,
    "prior_var": 5.0,
    "forward_init_mean": 0.0,
    "forward_init_var": 5.0,
    "inverse_init_mean": 0.0,
    "inverse_init_var": 10.0,
    "tracker_init_var": 10.0,
}

BEARING_DEFAULTS = {
    "dt": 1.0,
    "process_var": 0.01,
    "bearing_noise_deg": 3.0,
    "action_noise_deg": 5.0,
    "sensor_speed": 4.0,
    "sensor_height": 20.0,
    "sensor_jitter_var": 1.0,
    "x0": [80.0, 1.0],
    "sigma0_diag": [16.0, 1.0],
    "inverse_init_var": 1.0,
}

_VARIANCE_KEYS = ("process_var", "attacker_obs_var", "action_var", "prior_var",
                  "forward_init_var", "inverse_init_var", "tracker_init_var",
                  "sensor_jitter_var")


def build_ungm(**overrides):
    """Univariate nonlinear growth benchmark: forward PF with 25 particles,
    inverse PF with 50, horizon 100, 250 Monte Carlo runs."""
    params = dict(UNGM_DEFAULTS)
    cfg = ScenarioConfig(name="ungm", horizon=100, runs=250,
                         forward_pf_particles=25, ipf_particles=50, params=params)
    _apply_overrides(cfg, overrides)
    return cfg


def build_bearing(**overrides):
    """Bearing-only tracking benchmark: 100 particles in both filters, 20
    steps, 100 runs."""
    params = dict(BEARING_DEFAULTS)
    cfg = ScenarioConfig(name="bearing", horizon=20, runs=100,
                         forward_pf_particles=100, ipf_particles=100, params=params)
    _apply_overrides(cfg, overrides)
    return cfg


BUILTIN_SCENARIOS = {"ungm": build_ungm, "bearing": build_bearing}


def _apply_overrides(cfg, overrides):
    for key, value in overrides.items():
        if key == "params":
            for pkey, pvalue in value.items():
                if pkey not in cfg.params:
                    raise ConfigError(f"unknown scenario parameter 'params.{pkey}'")
                cfg.params[pkey] = pvalue
        elif hasattr(cfg, key) and key != "name":
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"unknown configuration key '{key}'")
    validate_config(cfg)
    return cfg


def config_from_dict(doc):
    name = doc.get("scenario")
    if name not in BUILTIN_SCENARIOS:
        raise ConfigError(f"unknown or missing 'scenario' (expected one of "
                          f"{sorted(BUILTIN_SCENARIOS)})")
    overrides = {k: v for k, v in doc.items() if k != "scenario"}
    return BUILTIN_SCENARIOS[name](**overrides)


def validate_config(cfg):
    if cfg.horizon < 1:
        raise ConfigError("'horizon' must be >= 1")
    if cfg.runs < 1:
        raise ConfigError("'runs' must be >= 1")
    if cfg.forward_pf_particles < 1:
        raise ConfigError("'forward_pf_particles' must be >= 1")
    if cfg.ipf_particles < 1:
        raise ConfigError("'ipf_particles' must be >= 1")
    if cfg.gamma < 0:
        raise ConfigError("'gamma' must be >= 0")
    if cfg.max_retries < 1:
        raise ConfigError("'max_retries' must be >= 1")
    if cfg.resample_scheme not in ("systematic", "multinomial"):
        raise ConfigError("'resample_scheme' must be 'systematic' or 'multinomial'")
    for key in _VARIANCE_KEYS:
        if key in cfg.params and cfg.params[key] <= 0:
            raise ConfigError(f"'params.{key}' must be > 0")
    if "sigma0_diag" in cfg.params and any(v <= 0 for v in cfg.params["sigma0_diag"]):
        raise ConfigError("'params.sigma0_diag' entries must be > 0")
    return cfg


# ---------------------------------------------------------------- UNGM model

def ungm_drift(x, k):
    return x / 2.0 + 25.0 * x / (1.0 + x**2) + 8.0 * math.cos(1.2 * k)


def ungm_drift_jac(x, k):
    return (0.5 + 25.0 * (1.0 - x**2) / (1.0 + x**2) ** 2)[..., None]


def ungm_obs(x, k):
    return x**2 / 20.0


def ungm_obs_jac(x, k):
    return (x / 10.0)[..., None]


def ungm_action(xhat, k):
    return xhat**2 / 10.0


def ungm_action_jac(xhat, k):
    return (xhat / 5.0)[..., None]


def make_ungm_model(cfg):
    p = cfg.params
    return SystemModel(
        transition=AdditiveGaussianTransition(ungm_drift, [[p["process_var"]]],
                                              jacobian=ungm_drift_jac),
        attacker_obs=AdditiveGaussianObservation(ungm_obs, [[p["attacker_obs_var"]]],
                                                 jacobian=ungm_obs_jac),
        defender_obs=AdditiveGaussianObservation(ungm_action, [[p["action_var"]]],
                                                 jacobian=ungm_action_jac),
        state_dim=1,
        init_state=GaussianDist([p["prior_mean"]], [[p["prior_var"]]]),
        forward_init=GaussianDist([p["forward_init_mean"]], [[p["forward_init_var"]]]),
    )


# ------------------------------------------------------------- bearing model

def deg_std_to_var(deg):
    return (deg * math.pi / 180.0) ** 2


def bearing_angle(positions, sensor_xy):
    """arctan(s_y / (p - s_x)) for target positions against one sensor point."""
    sx, sy = sensor_xy
    return np.arctan(sy / (positions - sx))


class BearingObservation(AdditiveGaussianObservation):
    """Bearing of the tracked position from a per-step jittered sensor."""

    def __init__(self, sensor_path, noise_var):
        self.sensor_path = sensor_path  # (K+1, 2); row 0 unused
        super().__init__(self._map, [[noise_var]], jacobian=self._jac)

    def _map(self, x, k):
        return bearing_angle(x[..., 0], self.sensor_path[k])[..., None]

    def _jac(self, x, k):
        sx, sy = self.sensor_path[k]
        dx = x[..., 0] - sx
        dp = -sy / (dx**2 + sy**2)
        jac = np.zeros(x.shape[:-1] + (1, 2))
        jac[..., 0, 0] = dp
        return jac


def draw_sensor_path(cfg, stream):
    p = cfg.params
    gen = stream.generator()
    K = cfg.horizon
    path = np.empty((K + 1, 2))
    path[0] = np.nan  # no observation at k = 0
    for k in range(1, K + 1):
        jitter = math.sqrt(p["sensor_jitter_var"]) * gen.standard_normal(2)
        path[k] = (p["sensor_speed"] * k + jitter[0], p["sensor_height"] + jitter[1])
    return path


def make_bearing_model(cfg, stream):
    p = cfg.params
    dt = p["dt"]
    F = np.array([[1.0, dt], [0.0, 1.0]])
    gain = np.array([[dt**2 / 2.0], [dt]])
    Q = p["process_var"] * gain @ gain.T
    path = draw_sensor_path(cfg, stream.child("sensor"))
    x0 = np.asarray(p["x0"], dtype=float)
    return SystemModel(
        transition=AdditiveGaussianTransition(
            lambda x, k: x @ F.T, Q,
            jacobian=lambda x, k: np.broadcast_to(F, x.shape[:-1] + (2, 2))),
        attacker_obs=BearingObservation(path, deg_std_to_var(p["bearing_noise_deg"])),
        defender_obs=BearingObservation(path, deg_std_to_var(p["action_noise_deg"])),
        state_dim=2,
        init_state=GaussianDist(x0, np.zeros((2, 2))),
        forward_init=GaussianDist(x0, np.diag(p["sigma0_diag"])),
    )


def make_episode_model(cfg, stream):
    if cfg.name == "ungm":
        return make_ungm_model(cfg)
    if cfg.name == "bearing":
        return make_bearing_model(cfg, stream)
    raise ConfigError(f"unknown scenario '{cfg.name}'")


def make_forward_filter(cfg, kind):
    """Forward tracker definition for the attacker: kind in {'ekf', 'pf'}."""
    p = cfg.params
    if cfg.name == "ungm":
        kwargs = {"init_cov": [[p["forward_init_var"]]],
                  "init_mean": [p["forward_init_mean"]]}
    elif cfg.name == "bearing":
        height = p["sensor_height"]
        kwargs = {
            "init_cov": np.diag(p["sigma0_diag"]),
            "init_from_first_obs": lambda y1: [height / math.atan(float(np.ravel(y1)[0])), 0.0],
        }
    else:
        raise ConfigError(f"unknown scenario '{cfg.name}'")
    if kind == "ekf":
        return ForwardEkf(**kwargs)
    if kind == "pf":
        return ForwardPf(cfg.forward_pf_particles, **kwargs)
    raise ConfigError(f"unknown forward filter kind '{kind}'")


def inverse_initialization(cfg):
    """(initial distribution for the inverse filters, tracker covariance replica)."""
    p = cfg.params
    if cfg.name == "ungm":
        init = GaussianDist([p["inverse_init_mean"]], [[p["inverse_init_var"]]])
        tracker_cov = np.array([[p["tracker_init_var"]]])
    elif cfg.name == "bearing":
        x0 = np.asarray(p["x0"], dtype=float)
        init = GaussianDist(x0, p["inverse_init_var"] * np.eye(2))
        # replica of the tracker's own initial covariance
        tracker_cov = np.diag(p["sigma0_diag"])
    else:
        raise ConfigError(f"unknown scenario '{cfg.name}'")
    return init, tracker_cov


# ------------------------------------------------- linear-Gaussian test model

def make_linear_gaussian_model(a=0.9, q=1.0, r=1.0, e=1.0,
                               prior=(0.0, 1.0), forward_init=(0.0, 1.0)):
    """Scalar linear-Gaussian chain f(x)=a x, h(x)=x, g(xhat)=xhat, used as an
    exactly solvable oracle scenario."""
    eye1 = lambda x, k: np.ones(x.shape[:-1] + (1, 1))
    return SystemModel(
        transition=AdditiveGaussianTransition(
            lambda x, k: a * x, [[q]],
            jacobian=lambda x, k: a * np.ones(x.shape[:-1] + (1, 1))),
        attacker_obs=AdditiveGaussianObservation(lambda x, k: x, [[r]], jacobian=eye1),
        defender_obs=AdditiveGaussianObservation(lambda x, k: x, [[e]], jacobian=eye1),
        state_dim=1,
        init_state=GaussianDist([prior[0]], [[prior[1]]]),
        forward_init=GaussianDist([forward_init[0]], [[forward_init[1]]]),
    )
