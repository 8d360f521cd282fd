"""Experiment configuration and its flat ``key = value`` file format.

Example file::

    # swap experiment, adversarial field
    experiment = swap
    robots = 5
    field_region = -0.9, 0.0, -0.9, 0.9
    field_gain = 0.5

Keys are the field names of :class:`ExperimentConfig`; tuples are
comma-separated numbers; booleans accept true/false/1/0/yes/no.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .cbf import BarrierParams, ClassKappa
from .gpdisturb import DisturbanceEstimator, GpHyperParams, UNICYCLE_ENTRIES
from .unisim import ArenaConfig, DisturbanceField

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "parse_config_text", "dump_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "explore"
    robots: int = 3
    duration: float = 300.0
    mode: str = "robust"
    seed: int = 0
    oracle_disturbance: bool = False
    output_dir: str = ""
    dataset: str = ""

    # arena and robots (parameter defaults from the GRITSBot-X table)
    bounds: tuple = (-1.6, 1.6, -1.0, 1.0)
    dt: float = 0.01
    l_p: float = 0.03
    l_b: float = 0.105
    r: float = 0.016
    delta: float = 0.12
    gamma: float = 700.0
    k_c: float = 2.0
    u_max: float = 0.2
    omega_max: float = 2.0
    noise_sigma: float = 1e-3
    # the filter keeps look-ahead points delta + barrier_margin apart
    barrier_margin: float = 0.002
    integrator: str = "rk4"

    # ground-truth disturbance: input gain inside a rectangle
    field_region: tuple = (-1.6, 0.0, 0.0, 1.0)
    field_gain: float = 0.8
    oracle_margin: float = 0.01

    # disturbance estimation
    sigma_s: float = 0.1
    sigma_n: float = 0.05
    length_xy: float = 0.3
    length_theta: float = 1.0
    prior_lo: float = -0.3
    prior_hi: float = 0.3
    batch_size: int = 50
    max_points: int = 2000
    # variance grid steps: metres, radians
    grid_resolution: tuple = (0.2, math.pi / 4)
    probe_points: tuple = (-1.4, 0.8, 1.4, -0.8)

    # exploration behaviour
    k_v: float = 0.8
    k_omega: float = 2.0
    sample_period: float = 1.0
    sample_window: float = 0.25
    sample_min_v: float = 0.1
    sample_min_omega: float = 0.3
    dither_amp: float = 1.0
    dither_period: float = 3.0
    target_tol: float = 0.1
    target_exclusion: float = 0.5
    target_timeout: float = 30.0

    # swap behaviour
    circle_radius: float = 0.8
    goal_tol: float = 0.05
    start_jitter: float = 0.1
    # "lookahead" steers the look-ahead point, "pose" steers position and heading
    swap_controller: str = "lookahead"
    circulation: float = 0.1
    # robust swap without oracle or dataset: fit the GP on this many offline samples (0 keeps the prior)
    calibration_samples: int = 0

    log_stride: int = 10

    def validate(self) -> "ExperimentConfig":
        def bad(name, why):
            raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        if self.experiment not in ("explore", "swap"):
            bad("experiment", "must be 'explore' or 'swap'")
        if self.mode not in ("robust", "nominal"):
            bad("mode", "must be 'robust' or 'nominal'")
        if self.experiment == "swap" and self.robots < 2:
            bad("robots", "swap needs at least two robots")
        if self.robots < 1:
            bad("robots", "must be at least 1")
        if not self.duration > 0:
            bad("duration", "must be positive")
        for name in ("dt", "l_p", "delta", "gamma", "k_c", "u_max", "omega_max", "sigma_s",
                     "length_xy", "length_theta", "sample_period",
                     "sample_window", "circle_radius", "goal_tol"):
            if not getattr(self, name) > 0:
                bad(name, "must be positive")
        for name in ("noise_sigma", "sigma_n", "barrier_margin", "oracle_margin"):
            if getattr(self, name) < 0:
                bad(name, "must be nonnegative")
        if not 0 < self.field_gain <= 1:
            bad("field_gain", "must lie in (0, 1]")
        if len(self.bounds) != 4 or self.bounds[0] >= self.bounds[1] or self.bounds[2] >= self.bounds[3]:
            bad("bounds", "must be xmin, xmax, ymin, ymax")
        if len(self.field_region) not in (0, 4):
            bad("field_region", "must be xmin, xmax, ymin, ymax or empty")
        if len(self.grid_resolution) != 2 or min(self.grid_resolution) <= 0:
            bad("grid_resolution", "must be two positive steps (m, rad)")
        if len(self.probe_points) % 2:
            bad("probe_points", "must hold x, y pairs")
        if self.prior_lo > self.prior_hi:
            bad("prior_lo", "must not exceed prior_hi")
        if self.batch_size < 1:
            bad("batch_size", "must be at least 1")
        if self.integrator not in ("rk4", "euler"):
            bad("integrator", "must be 'rk4' or 'euler'")
        if self.swap_controller not in ("lookahead", "pose"):
            bad("swap_controller", "must be 'lookahead' or 'pose'")
        if self.calibration_samples < 0:
            bad("calibration_samples", "must be nonnegative")
        if self.sample_window > self.sample_period:
            bad("sample_window", "must not exceed sample_period")
        return self

    # derived objects

    def arena(self) -> ArenaConfig:
        return ArenaConfig(bounds=tuple(self.bounds), dt=self.dt, l_p=self.l_p, l_b=self.l_b, r=self.r,
                           delta=self.delta, gamma=self.gamma, k_c=self.k_c, u_max=self.u_max,
                           omega_max=self.omega_max, noise_sigma=self.noise_sigma, seed=self.seed)

    def field(self) -> DisturbanceField:
        if not self.field_region or self.field_gain == 1.0:
            return DisturbanceField.none()
        return DisturbanceField(region=tuple(self.field_region), gain=self.field_gain)

    def barrier(self) -> BarrierParams:
        return BarrierParams(delta=self.delta + self.barrier_margin, l_p=self.l_p, kappa=ClassKappa(self.gamma))

    def hyper(self) -> GpHyperParams:
        return GpHyperParams(sigma_s=self.sigma_s, sigma_n=self.sigma_n,
                             widths=(self.length_xy ** -2, self.length_xy ** -2, self.length_theta ** -2))

    def estimator(self) -> DisturbanceEstimator:
        return DisturbanceEstimator(shape=(3, 2), entries=UNICYCLE_ENTRIES, k_c=self.k_c,
                                    prior_interval=(self.prior_lo, self.prior_hi), batch_size=self.batch_size,
                                    hyper=self.hyper(), max_points=self.max_points)

    def probes(self):
        pts = list(self.probe_points)
        return [(pts[k], pts[k + 1]) for k in range(0, len(pts), 2)]


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, default, text: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())
        return text
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {type(default).__name__}") from None


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(base)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{key}: unknown configuration key (line {lineno})")
        updates[key] = _coerce(key, defaults[key], value)
    return replace(base, **updates)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), base)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in asdict(cfg).items():
        if isinstance(v, (tuple, list)):
            v = ", ".join(repr(float(x)) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
