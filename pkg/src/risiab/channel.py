"""Scalar link-budget physics for mmWave links.

All quantities are in dB / dBm unless a name says otherwise.  Functions
accept numpy arrays and broadcast.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import InvalidParameterError

THERMAL_NOISE_DBM_HZ = -174.0

# Number of path-loss evaluations whose distance was clamped up to 1 m.
_diagnostics = {"clamped_distances": 0}


def clamped_distance_count() -> int:
    return _diagnostics["clamped_distances"]


def reset_diagnostics():
    _diagnostics["clamped_distances"] = 0


def db_to_linear(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


@dataclass(frozen=True)
class CarrierConfig:
    fc: float  # GHz
    bandwidth: float  # Hz

    def __post_init__(self):
        if not self.fc > 0:
            raise InvalidParameterError("carrier frequency must be positive")
        if not self.bandwidth > 0:
            raise InvalidParameterError("bandwidth must be positive")


@dataclass(frozen=True)
class PathLossConfig:
    alpha_los: float = 2.0
    alpha_nlos: float = 2.9

    def __post_init__(self):
        if not (self.alpha_nlos >= self.alpha_los >= 1.0):
            raise InvalidParameterError("need alpha_nlos >= alpha_los >= 1")


@dataclass(frozen=True)
class AntennaPattern:
    """Two-level sectored pattern; ``hpbw`` in radians."""

    g_main: float
    g_side: float
    hpbw: float

    def __post_init__(self):
        if not self.g_main > self.g_side:
            raise InvalidParameterError("main-lobe gain must exceed side-lobe gain")
        if not (0.0 < self.hpbw < 2 * math.pi):
            raise InvalidParameterError("hpbw must lie in (0, 2*pi)")


@dataclass(frozen=True)
class RainConfig:
    rate: float = 0.0  # mm/hr
    k: float = 0.2051
    alpha_rain: float = 0.9679

    def __post_init__(self):
        if not self.rate >= 0:
            raise InvalidParameterError("rain rate must be >= 0")
        if not (self.k > 0 and self.alpha_rain > 0):
            raise InvalidParameterError("rain coefficients must be positive")

    @classmethod
    def for_frequency(cls, fc_ghz: float, rate: float = 0.0) -> RainConfig:
        k, alpha = rain_coefficients(fc_ghz)
        return cls(rate=rate, k=k, alpha_rain=alpha)


@lru_cache(maxsize=1)
def _rain_table():
    text = resources.files("risiab.data").joinpath("rain_coefficients.json").read_text()
    rows = json.loads(text)["rows"]
    f = np.array([r["fc_ghz"] for r in rows], dtype=float)
    k = np.array([r["k"] for r in rows], dtype=float)
    a = np.array([r["alpha"] for r in rows], dtype=float)
    order = np.argsort(f)
    return f[order], k[order], a[order]


def rain_coefficients(fc_ghz: float) -> tuple[float, float]:
    """Power-law rain coefficients ``(k, alpha)`` for a carrier in GHz.

    Tabulated frequencies are returned exactly.  In between, ``log k`` and
    ``alpha`` are interpolated linearly in ``log f``.
    """
    f, k, a = _rain_table()
    if not (f[0] <= fc_ghz <= f[-1]):
        raise InvalidParameterError(
            f"no rain coefficients for {fc_ghz} GHz (table covers {f[0]:g}-{f[-1]:g} GHz)")
    hit = np.nonzero(f == fc_ghz)[0]
    if hit.size:
        return float(k[hit[0]]), float(a[hit[0]])
    lf = math.log10(fc_ghz)
    log_k = np.interp(lf, np.log10(f), np.log10(k))
    return float(10 ** log_k), float(np.interp(lf, np.log10(f), a))


def path_loss_db(distance, fc, alpha):
    """Close-in path loss with a 1 m free-space intercept, ``fc`` in GHz."""
    d = np.asarray(distance, dtype=float)
    if np.any(fc <= 0):
        raise InvalidParameterError("carrier frequency must be positive")
    short = d < 1.0
    if np.any(short):
        _diagnostics["clamped_distances"] += int(np.count_nonzero(short))
        d = np.maximum(d, 1.0)
    out = 32.4 + 10.0 * np.asarray(alpha, dtype=float) * np.log10(d) + 20.0 * np.log10(fc)
    return float(out) if out.ndim == 0 else out


def wrap_angle(theta):
    """Map angles onto (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    inside = (theta > -math.pi) & (theta <= math.pi)
    # in-range angles pass through untouched so beam-edge comparisons stay exact
    t = np.where(inside, theta, np.mod(theta + math.pi, 2 * math.pi) - math.pi)
    return np.where(t == -math.pi, math.pi, t)


def antenna_gain_db(theta, pattern: AntennaPattern):
    t = np.abs(wrap_angle(theta))
    out = np.where(t <= pattern.hpbw / 2, pattern.g_main, pattern.g_side)
    return float(out) if out.ndim == 0 else out


def foliage_loss_db(in_leaf_depth, out_leaf_depth, fc):
    """Fitted ITU-R vegetation loss for the two seasonal states.

    ``fc`` is in GHz; the fitted model is evaluated with the frequency in MHz.
    Each branch contributes nothing when its depth is zero.
    """
    leaf = np.asarray(in_leaf_depth, dtype=float)
    bare = np.asarray(out_leaf_depth, dtype=float)
    if np.any(leaf < 0) or np.any(bare < 0):
        raise InvalidParameterError("vegetation depth must be >= 0")
    f_mhz = 1000.0 * fc
    out = (0.39 * f_mhz ** 0.39 * leaf ** 0.25) + (0.37 * f_mhz ** 0.18 * bare ** 0.59)
    return float(out) if out.ndim == 0 else out


def rain_loss_db(rate, distance, rain: RainConfig):
    """Specific attenuation ``k * rate**alpha`` dB/km accumulated over ``distance`` metres."""
    rate = np.asarray(rate, dtype=float)
    d = np.asarray(distance, dtype=float)
    if np.any(rate < 0) or np.any(d < 0):
        raise InvalidParameterError("rain rate and distance must be >= 0")
    out = rain.k * rate ** rain.alpha_rain * (d / 1000.0)
    return float(out) if out.ndim == 0 else out


def sample_fading_power(rng: np.random.Generator, size=None):
    """Rayleigh power gain: unit-mean exponential draws."""
    return rng.standard_exponential(size)


def received_power_dbm(p_tx, gains_db, path_loss, foliage, rain, fading_power):
    """Compose transmit power, gains, losses and a linear fading draw.

    A zero fading draw yields ``-inf`` dBm rather than an error.
    """
    h = np.asarray(fading_power, dtype=float)
    if np.any(h < 0):
        raise InvalidParameterError("fading power must be >= 0")
    out = (np.asarray(p_tx, dtype=float) + gains_db - path_loss - foliage - rain
           + linear_to_db(h))
    return float(out) if out.ndim == 0 else out


def noise_power_dbm(bandwidth, noise_figure):
    """Thermal noise over ``bandwidth`` Hz plus the receiver noise figure."""
    bw = np.asarray(bandwidth, dtype=float)
    if np.any(bw <= 0):
        raise InvalidParameterError("noise bandwidth must be positive")
    out = THERMAL_NOISE_DBM_HZ + 10.0 * np.log10(bw) + noise_figure
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LinkBudget:
    p_tx: float
    distance: float
    los: bool
    tx_gain: float
    rx_gain: float
    path_loss: float
    foliage_in_leaf: float
    foliage_out_of_leaf: float
    rain: float
    fading_power: float

    @property
    def gains(self) -> float:
        return self.tx_gain + self.rx_gain

    @property
    def losses(self) -> float:
        return self.path_loss + self.foliage_in_leaf + self.foliage_out_of_leaf + self.rain

    @property
    def p_rx(self) -> float:
        return received_power_dbm(self.p_tx, self.gains, self.path_loss,
                                  self.foliage_in_leaf + self.foliage_out_of_leaf,
                                  self.rain, self.fading_power)

    @classmethod
    def evaluate(cls, p_tx, distance, in_leaf_depth, out_leaf_depth, carrier: CarrierConfig,
                 path: PathLossConfig, rain: RainConfig, tx_gain=0.0, rx_gain=0.0,
                 fading_power=1.0) -> LinkBudget:
        """Build a budget from geometry; any vegetation makes the link NLoS."""
        los = (in_leaf_depth + out_leaf_depth) == 0
        alpha = path.alpha_los if los else path.alpha_nlos
        return cls(
            p_tx=p_tx, distance=distance, los=los, tx_gain=tx_gain, rx_gain=rx_gain,
            path_loss=path_loss_db(distance, carrier.fc, alpha),
            foliage_in_leaf=foliage_loss_db(in_leaf_depth, 0.0, carrier.fc),
            foliage_out_of_leaf=foliage_loss_db(0.0, out_leaf_depth, carrier.fc),
            rain=rain_loss_db(rain.rate, distance, rain),
            fading_power=fading_power,
        )
