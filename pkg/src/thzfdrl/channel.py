"""THz line-of-sight plus reflected-path channel model for a ULA transmitter.

A link from a BS with ``N`` antennas to a single-antenna UE is

    h = G * (1 + sum_l Lambda_l) * a_L(f, d) * a_t(theta)

with ``a_L`` the spreading/absorption loss and ``a_t`` the array steering
vector. The same steering vector scales the LoS and reflected terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._util import ceil_fraction
from .errors import ConfigError, DomainError

SPEED_OF_LIGHT = 299_792_458.0

# Steering-vector amplitude conventions. "inverse_n" is the 1/N prefactor
# (norm 1/sqrt(N)); "unit" drops it, giving unit-modulus entries.
STEERING_SCALES = ("inverse_n", "unit")


@dataclass(frozen=True)
class ChannelParams:
    """Physical constants of one BS array and its propagation medium.

    ``rho`` is in 1/m. ``antenna_spacing`` defaults to half a wavelength.
    """

    f: float = 0.3e12
    rho: float = 0.1
    gain_db: float = 10.0
    num_nlos: int = 5
    num_antennas: int = 8
    antenna_spacing: float | None = None
    nlos_mag_range: tuple[float, float] = (0.01, 0.1)
    steering_scale: str = "inverse_n"

    def __post_init__(self):
        if not self.f > 0:
            raise ConfigError(f"carrier frequency must be positive, got {self.f}")
        if self.rho < 0:
            raise ConfigError(f"absorption factor must be >= 0, got {self.rho}")
        if self.num_antennas < 1:
            raise ConfigError(f"need at least one antenna, got {self.num_antennas}")
        if self.num_nlos < 0:
            raise ConfigError(f"num_nlos must be >= 0, got {self.num_nlos}")
        if self.antenna_spacing is not None and not self.antenna_spacing > 0:
            raise ConfigError("antenna_spacing must be positive")
        if self.steering_scale not in STEERING_SCALES:
            raise ConfigError(f"unknown steering_scale {self.steering_scale!r}")
        _check_mag_range(self.nlos_mag_range)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f

    @property
    def spacing(self) -> float:
        if self.antenna_spacing is None:
            return self.wavelength / 2
        return self.antenna_spacing

    @property
    def gain_linear(self) -> float:
        return 10.0 ** (self.gain_db / 10.0)


@dataclass(frozen=True)
class LinkGeometry:
    distance: float
    aod: float

    def __post_init__(self):
        if not self.distance > 0:
            raise DomainError(f"link distance must be positive, got {self.distance}")
        if not -math.pi / 2 <= self.aod <= math.pi / 2:
            raise DomainError(f"angle of departure {self.aod} outside [-pi/2, pi/2]")


@dataclass(frozen=True)
class NLoSFactors:
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def __len__(self):
        return len(self.lambdas)


def _check_mag_range(mag_range):
    lo, hi = mag_range
    if not 0 <= lo <= hi < 1:
        raise ConfigError(f"reflection magnitude range must satisfy 0 <= lo <= hi < 1, got {mag_range}")


def spread_loss(params: ChannelParams, d: float) -> float:
    """Free-space spreading times molecular absorption, c/(4 pi f d) * exp(-rho d / 2)."""
    if not d > 0:
        raise DomainError(f"distance must be positive, got {d}")
    return SPEED_OF_LIGHT / (4 * math.pi * params.f * d) * math.exp(-0.5 * params.rho * d)


def steering_vector(theta: float, n: int, d_a: float, wavelength: float, scale: str = "inverse_n") -> np.ndarray:
    """ULA response; entry ``i`` is ``exp(j 2 pi/lambda d_a i sin(theta))`` times the prefactor."""
    if n < 1:
        raise DomainError(f"need at least one antenna, got {n}")
    if not -math.pi / 2 <= theta <= math.pi / 2:
        raise DomainError(f"angle {theta} outside [-pi/2, pi/2]")
    phase = 2 * math.pi / wavelength * d_a * math.sin(theta)
    amp = 1.0 / n if scale == "inverse_n" else 1.0
    return amp * np.exp(1j * phase * np.arange(n))


def channel_response(params: ChannelParams, geom: LinkGeometry, nlos: NLoSFactors) -> np.ndarray:
    if len(nlos) != params.num_nlos:
        raise DomainError(f"expected {params.num_nlos} reflection factors, got {len(nlos)}")
    bracket = 1.0 + complex(np.sum(nlos.lambdas))
    a_t = steering_vector(geom.aod, params.num_antennas, params.spacing, params.wavelength,
                          params.steering_scale)
    return params.gain_linear * bracket * spread_loss(params, geom.distance) * a_t


def draw_nlos(rng: np.random.Generator, num_paths: int, mag_range=(0.01, 0.1)) -> NLoSFactors:
    """Random reflection factors: magnitude uniform in ``mag_range``, phase uniform in [0, 2pi)."""
    _check_mag_range(mag_range)
    if num_paths < 0:
        raise ConfigError(f"num_paths must be >= 0, got {num_paths}")
    mags = rng.uniform(mag_range[0], mag_range[1], size=num_paths)
    phases = rng.uniform(0.0, 2 * math.pi, size=num_paths)
    return NLoSFactors(mags * np.exp(1j * phases))


def limited_csi(h: np.ndarray, eta: float) -> np.ndarray:
    """Keep the first ceil(eta*N) entries of ``h`` and zero the rest."""
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"CSI fraction must lie in [0, 1], got {eta}")
    h = np.asarray(h)
    out = np.zeros_like(h)
    known = ceil_fraction(eta, h.shape[-1])
    out[..., :known] = h[..., :known]
    return out
