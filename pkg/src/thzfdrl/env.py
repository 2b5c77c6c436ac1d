"""Multi-cell downlink: SINR, rates, and the joint RL environment step.

Channel indexing follows ``channels[j, k] = h_jk``, the link from BS ``j`` to
UE ``k``. BS ``k`` serves UE ``k``. Every BS knows only the masked view of its
own serving channel; interference always uses the true channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelParams, LinkGeometry, channel_response, draw_nlos, limited_csi
from .errors import ConstraintError, DimensionError, DomainError

POWER_TOL = 1e-9
SINR_DB_CLAMP = 60.0


def dbm_to_watt(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


@dataclass(frozen=True, eq=False)
class NetworkScenario:
    """Ground truth for one Monte Carlo run; treat as read-only."""

    channels: np.ndarray  # (K, K, N) complex
    tx_power_w: float
    noise_w: float
    csi_fraction: float = 1.0
    geometry: tuple = ()

    def __post_init__(self):
        ch = np.asarray(self.channels)
        if ch.ndim != 3 or ch.shape[0] != ch.shape[1]:
            raise DimensionError(f"channels must be K x K x N, got shape {ch.shape}")
        if not (self.tx_power_w > 0 and self.noise_w > 0):
            raise DomainError("transmit power and noise power must be positive")
        if not 0.0 <= self.csi_fraction <= 1.0:
            raise DomainError(f"csi_fraction must lie in [0, 1], got {self.csi_fraction}")
        ch = ch.astype(complex)
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)

    @property
    def K(self) -> int:
        return self.channels.shape[0]

    @property
    def N(self) -> int:
        return self.channels.shape[2]

    def serving(self, k: int) -> np.ndarray:
        return self.channels[k, k]

    def serving_limited(self, k: int) -> np.ndarray:
        return limited_csi(self.channels[k, k], self.csi_fraction)

    def with_csi_fraction(self, eta: float) -> "NetworkScenario":
        return replace(self, csi_fraction=eta)


@dataclass(frozen=True)
class StepResult:
    rewards: np.ndarray
    states: list
    sum_rate: float
    sinr: np.ndarray


def check_beams(scenario: NetworkScenario, beams) -> np.ndarray:
    w = np.asarray(beams, dtype=complex)
    if w.shape != (scenario.K, scenario.N):
        raise DimensionError(f"expected beams of shape {(scenario.K, scenario.N)}, got {w.shape}")
    power = np.sum(np.abs(w) ** 2, axis=1)
    bad = np.flatnonzero(power > 1.0 + POWER_TOL)
    if bad.size:
        raise ConstraintError(f"beam power {power[bad[0]]:.6g} > 1 at BS {bad[0]}")
    return w


def _gains(scenario: NetworkScenario, w: np.ndarray) -> np.ndarray:
    # g[j, k] = P |h_jk^H w_j|^2
    inner = np.einsum("jkn,jn->jk", scenario.channels.conj(), w)
    return scenario.tx_power_w * np.abs(inner) ** 2


def _interference(scenario, gains):
    return gains.sum(axis=0) - np.diag(gains)


def sinr_all(scenario: NetworkScenario, beams, limited: bool = False) -> np.ndarray:
    """SINR of every UE. With ``limited`` the desired term uses the masked CSI."""
    w = check_beams(scenario, beams)
    g = _gains(scenario, w)
    denom = _interference(scenario, g) + scenario.noise_w
    if limited:
        h_lim = limited_csi(np.einsum("kkn->kn", scenario.channels), scenario.csi_fraction)
        desired = scenario.tx_power_w * np.abs(np.einsum("kn,kn->k", h_lim.conj(), w)) ** 2
    else:
        desired = np.diag(g)
    return desired / denom


def sinr(scenario: NetworkScenario, beams, k: int) -> float:
    if not 0 <= k < scenario.K:
        raise IndexError(f"UE index {k} out of range for K={scenario.K}")
    return float(sinr_all(scenario, beams)[k])


def rate(gamma):
    """Spectral efficiency log2(1 + gamma) in bits/s/Hz."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise DomainError(f"SINR must be non-negative, got {gamma}")
    out = np.log2(1.0 + g)
    return float(out) if out.ndim == 0 else out


def sum_rate(scenario: NetworkScenario, beams) -> float:
    return float(np.sum(rate(sinr_all(scenario, beams))))


def sum_rate_limited(scenario: NetworkScenario, beams) -> float:
    return float(np.sum(rate(sinr_all(scenario, beams, limited=True))))


def state_features(h_lim: np.ndarray, gamma: float) -> np.ndarray:
    """BS observation ``[Re(h_lim), Im(h_lim), clamp(SINR dB)]``."""
    db = 10.0 * math.log10(gamma) if gamma > 0 else -SINR_DB_CLAMP
    db = min(max(db, -SINR_DB_CLAMP), SINR_DB_CLAMP)
    return np.concatenate([h_lim.real, h_lim.imag, [db]])


def initial_states(scenario: NetworkScenario) -> list:
    """Observations before any feedback: the SINR entry sits at the lower clamp."""
    return [state_features(scenario.serving_limited(k), 0.0) for k in range(scenario.K)]


def env_step(scenario: NetworkScenario, actions) -> StepResult:
    """Evaluate all K beamformers jointly; rewards are the limited-CSI rates."""
    w = check_beams(scenario, actions)
    gamma = sinr_all(scenario, w)
    rewards = rate(sinr_all(scenario, w, limited=True))
    states = [state_features(scenario.serving_limited(k), gamma[k]) for k in range(scenario.K)]
    return StepResult(rewards=np.atleast_1d(rewards), states=states,
                      sum_rate=float(np.sum(rewards)), sinr=gamma)


def generate_scenario(rng: np.random.Generator, K: int, N: int, distance_range, params: ChannelParams,
                      tx_power_w: float, noise_w: float, csi_fraction: float = 1.0) -> NetworkScenario:
    """Random K-cell layout: per-link distance and AoD uniform, fresh reflection factors.

    Draw order is distances, AoDs, then reflection factors link by link, and none
    of it depends on ``N``; the same generator state therefore yields the same
    geometry for every array size.
    """
    lo, hi = distance_range
    if not 0 < lo <= hi:
        raise DomainError(f"distance range must satisfy 0 < lo <= hi, got {distance_range}")
    params = replace(params, num_antennas=N)
    dist = rng.uniform(lo, hi, size=(K, K))
    aod = rng.uniform(-math.pi / 2, math.pi / 2, size=(K, K))
    channels = np.empty((K, K, N), dtype=complex)
    geometry = []
    for j in range(K):
        row = []
        for k in range(K):
            geom = LinkGeometry(float(dist[j, k]), float(aod[j, k]))
            nlos = draw_nlos(rng, params.num_nlos, params.nlos_mag_range)
            channels[j, k] = channel_response(params, geom, nlos)
            row.append(geom)
        geometry.append(tuple(row))
    return NetworkScenario(channels, tx_power_w, noise_w, csi_fraction, tuple(geometry))
