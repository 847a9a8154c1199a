"""RIS cascaded channels, joint active/passive beamforming, and NCR forwarding."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import db_to_linear
from .errors import InvalidParameterError
from .geometry import Point

SPEED_OF_LIGHT = 299_792_458.0
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RisPanel:
    position: Point
    elements: int
    element_spacing: float = 0.5  # wavelengths
    serves: int | None = None  # id of the SBS whose backhaul the panel assists

    def __post_init__(self):
        if self.elements < 1:
            raise InvalidParameterError("RIS needs at least one element")
        if not self.element_spacing > 0:
            raise InvalidParameterError("element spacing must be positive")


@dataclass(frozen=True)
class NcrConfig:
    amp_gain: float = 100.0  # dB
    max_output_power: float = 40.0  # dBm
    position: Point = Point(0.0, 0.0)
    antenna_gain: float = 10.0  # dBi, each side of the repeater
    serves: int | None = None

    def __post_init__(self):
        if not self.amp_gain >= 0:
            raise InvalidParameterError("NCR amplification gain must be >= 0 dB")


@dataclass(frozen=True)
class PhaseConfig:
    phases: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.phases, dtype=float).reshape(-1)
        if not np.all((p >= 0) & (p < TWO_PI)):
            raise InvalidParameterError("phases must lie in [0, 2*pi)")
        object.__setattr__(self, "phases", p)

    def __len__(self):
        return self.phases.size

    @property
    def reflection(self) -> np.ndarray:
        """Diagonal of the unit-modulus reflection matrix."""
        return np.exp(1j * self.phases)


def wrap_phase(x) -> np.ndarray:
    p = np.mod(np.asarray(x, dtype=float), TWO_PI)
    # mod can round up to exactly 2*pi for tiny negative inputs
    return np.where(p >= TWO_PI, 0.0, p)


def steering_vector(n: int, angle: float, spacing: float = 0.5) -> np.ndarray:
    return np.exp(1j * TWO_PI * spacing * np.arange(n) * math.sin(angle))


def synthesize_los_channel(tx_position: Point, rx_position: Point, tx_elements: int,
                           rx_elements: int, fc: float, large_scale_loss: float,
                           spacing: float = 0.5) -> np.ndarray:
    """Rank-one line-of-sight MIMO channel, shape (rx_elements, tx_elements).

    Both arrays are uniform linear arrays along the y axis; the link angle is
    measured from the x axis.  Squared Frobenius norm equals
    ``10**(-large_scale_loss/10) * tx_elements * rx_elements``.
    """
    if tx_elements < 1 or rx_elements < 1:
        raise InvalidParameterError("element counts must be >= 1")
    dx = rx_position.x - tx_position.x
    dy = rx_position.y - tx_position.y
    dist = math.hypot(dx, dy)
    if dist == 0:
        raise InvalidParameterError("channel endpoints coincide")
    angle = math.atan2(dy, dx)
    a_tx = steering_vector(tx_elements, angle, spacing)
    a_rx = steering_vector(rx_elements, angle + math.pi, spacing)
    wavelength = SPEED_OF_LIGHT / (fc * 1e9)
    amp = math.sqrt(float(db_to_linear(-large_scale_loss)))
    prop = np.exp(-1j * TWO_PI * dist / wavelength)
    return amp * prop * np.outer(a_rx, a_tx.conj())


def _as_row(g_ru) -> np.ndarray:
    g = np.asarray(g_ru, dtype=complex)
    if g.ndim == 2 and g.shape[0] != 1:
        raise InvalidParameterError(f"g_ru must be 1 x M, got {g.shape}")
    return g.reshape(-1)


def cascaded_channel(g_ru, phases: PhaseConfig, g_br) -> np.ndarray:
    """Effective donor-to-child row vector ``g_ru diag(e^{j w}) g_br`` (length N)."""
    a = _as_row(g_ru)
    g_br = np.asarray(g_br, dtype=complex)
    if g_br.ndim != 2 or g_br.shape[0] != a.size or len(phases) != a.size:
        raise InvalidParameterError(
            f"dimension mismatch: g_ru {a.size}, phases {len(phases)}, g_br {g_br.shape}")
    return (a * phases.reflection) @ g_br


@dataclass(frozen=True)
class RisSolution:
    phases: PhaseConfig
    beamformer: np.ndarray
    gain: float
    history: tuple[float, ...]  # objective after every half-step
    iterations: int


def gain_upper_bound(g_br, g_ru) -> float:
    """``(sum_m |g_ru[m]| * ||row_m(g_br)||)**2``, attained for rank-one ``g_br``."""
    a = _as_row(g_ru)
    rows = np.linalg.norm(np.asarray(g_br, dtype=complex), axis=1)
    return float(np.sum(np.abs(a) * rows) ** 2)


def optimize_ris(g_br, g_ru, tolerance: float = 1e-12, max_iterations: int = 100) -> RisSolution:
    """Alternate phase alignment and maximum-ratio transmission.

    With the beamformer fixed, each phase cancels the argument of its
    element's product term; with the phases fixed, the beamformer is the
    normalised conjugate of the cascaded channel.  Starts from the dominant
    right singular vector of ``diag(g_ru) g_br``, which is already optimal
    when ``g_br`` has rank one.
    """
    if not tolerance > 0:
        raise InvalidParameterError("tolerance must be positive")
    if max_iterations < 1:
        raise InvalidParameterError("max_iterations must be >= 1")
    a = _as_row(g_ru)
    g_br = np.asarray(g_br, dtype=complex)
    if g_br.ndim != 2 or g_br.shape[0] != a.size:
        raise InvalidParameterError(f"dimension mismatch: g_ru {a.size}, g_br {g_br.shape}")
    n_tx = g_br.shape[1]

    weighted = a[:, None] * g_br
    if np.any(weighted):
        w = np.linalg.svd(weighted, full_matrices=False)[2][0].conj()
    else:
        w = np.zeros(n_tx, dtype=complex)
        w[0] = 1.0
    history = []
    gain = 0.0
    phases = np.zeros(a.size)
    it = 0
    for it in range(1, max_iterations + 1):
        phases = wrap_phase(-np.angle(a * (g_br @ w)))
        g_c = (a * np.exp(1j * phases)) @ g_br
        history.append(float(abs(g_c @ w) ** 2))
        norm = np.linalg.norm(g_c)
        if norm > 0:
            w = g_c.conj() / norm
        new_gain = float(abs(g_c @ w) ** 2)
        history.append(new_gain)
        done = new_gain == 0.0 or (new_gain - gain) <= tolerance * new_gain
        gain = new_gain
        if done:
            break
    return RisSolution(PhaseConfig(phases), w, gain, tuple(history), it)


def ris_backhaul_rate(p_tx, gain, noise_power, bandwidth):
    """Rate in bit/s of the reflected link: ``B log2(1 + P g / sigma^2)``."""
    gain = np.asarray(gain, dtype=float)
    if np.any(gain < 0):
        raise InvalidParameterError("RIS gain must be >= 0")
    if np.any(np.asarray(bandwidth) <= 0):
        raise InvalidParameterError("bandwidth must be positive")
    snr = db_to_linear(p_tx) * gain / db_to_linear(noise_power)
    out = bandwidth * np.log2(1.0 + snr)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class NcrOutput:
    signal: float  # dBm
    noise: float  # dBm, the repeater's own input noise after amplification
    applied_gain: float  # dB


def ncr_forward(p_in, config: NcrConfig, noise_in=-math.inf) -> NcrOutput:
    """Amplify-and-forward with an output power cap.

    The signal sets the clamp; the amplified input noise sees the same
    effective gain.
    """
    p_in = np.asarray(p_in, dtype=float)
    with np.errstate(invalid="ignore"):
        applied = np.minimum(config.amp_gain, config.max_output_power - p_in)
    applied = np.where(np.isneginf(p_in), config.amp_gain, applied)
    signal = p_in + applied
    noise = np.asarray(noise_in, dtype=float) + applied
    if signal.ndim == 0:
        return NcrOutput(float(signal), float(noise), float(applied))
    return NcrOutput(signal, noise, applied)
