"""Reference beamformers and a codebook deep-Q learner.

The classical methods (MRT, ZF, MMSE) get the full channel matrix, cross
links included. Each BS designs its own beam independently: ZF nulls toward
the other cells' UEs, MMSE regularizes the same Gram matrix with the
noise-to-power ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .agent import ReplayBuffer, scale_features, state_dim
from .errors import ConfigError, DomainError, InfeasibleError

PINV_TOL = 1e-12


def mrt_beamformer(h) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise DomainError("MRT is undefined for an all-zero channel")
    return h / norm


def _null_projector_apply(A, h):
    """Component of ``h`` orthogonal to the column span of ``A``."""
    if A.shape[1] == 0:
        return h.copy()
    norms = np.linalg.norm(A, axis=0)
    A = A[:, norms > 0] / norms[norms > 0]
    if A.shape[1] == 0:
        return h.copy()
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    U = U[:, s > PINV_TOL * s[0]]
    out = h - U @ (U.conj().T @ h)
    # second pass removes the rounding residue left by the first
    return out - U @ (U.conj().T @ out)


def zf_beamformers(channels) -> np.ndarray:
    """Per-BS zero forcing: BS k projects h_kk off span{h_kj : j != k}.

    ``channels[j, k]`` is the link BS j -> UE k. A BS whose serving channel
    lies inside the interference span gets an all-zero beam.
    """
    H = np.asarray(channels, dtype=complex)
    K, _, N = H.shape
    if N < K:
        raise InfeasibleError(f"zero forcing needs N >= K, got N={N}, K={K}")
    W = np.zeros((K, N), dtype=complex)
    for k in range(K):
        others = np.array([H[k, j] for j in range(K) if j != k]).reshape(-1, N).T
        w = _null_projector_apply(others, H[k, k])
        norm = np.linalg.norm(w)
        if norm > PINV_TOL * np.linalg.norm(H[k, k]):
            W[k] = w / norm
    return W


def mmse_beamformers(channels, tx_power_w: float, noise_w: float) -> np.ndarray:
    """Regularized ZF: w_k ~ (sum_j h_kj h_kj^H + (noise/P) I)^-1 h_kk, unit norm."""
    H = np.asarray(channels, dtype=complex)
    K, _, N = H.shape
    reg = noise_w / tx_power_w
    W = np.zeros((K, N), dtype=complex)
    for k in range(K):
        G = H[k].T  # columns h_kj
        R = G @ G.conj().T + reg * np.eye(N)
        w = np.linalg.solve(R, H[k, k])
        norm = np.linalg.norm(w)
        if norm > 0:
            W[k] = w / norm
    return W


def random_beams(rng: np.random.Generator, K: int, N: int) -> np.ndarray:
    W = rng.normal(size=(K, N)) + 1j * rng.normal(size=(K, N))
    return W / np.linalg.norm(W, axis=1, keepdims=True)


def codebook(n_antennas: int, size: int = 16) -> np.ndarray:
    """``size`` unit-norm half-wavelength ULA beams at evenly spaced angles.

    Angles are bin centres of [-pi/2, pi/2] so the two endpoints, which give
    the same half-wavelength beam, are never both present.
    """
    if size < 1:
        raise ConfigError(f"codebook size must be >= 1, got {size}")
    theta = -np.pi / 2 + np.pi * (np.arange(size) + 0.5) / size
    n = np.arange(n_antennas)
    return np.exp(1j * np.pi * np.outer(np.sin(theta), n)) / np.sqrt(n_antennas)


@dataclass
class DqnAgent:
    qnet: nn.Mlp
    target: nn.Mlp
    opt: nn.OptimizerState
    buffer: ReplayBuffer
    epsilon: float = 1.0
    gamma: float = 0.9
    tau: float = 0.01
    reward_scale: float = 0.0
    agent_id: int = 0


def make_dqn_agent(n_antennas: int, n_beams: int = 16, hidden=(100, 70), *, init_rng=None,
                   lr=1e-3, buffer_size=10, gamma=0.9, tau=0.01, epsilon=1.0, agent_id=0) -> DqnAgent:
    qnet = nn.Mlp([state_dim(n_antennas), *hidden, n_beams], "identity", init_rng)
    return DqnAgent(qnet, qnet.copy(), nn.OptimizerState.for_net(qnet, lr), ReplayBuffer(buffer_size),
                    epsilon=epsilon, gamma=gamma, tau=tau, agent_id=agent_id)


def dqn_agent_step(state, qnet: nn.Mlp, epsilon: float, beams, rng: np.random.Generator) -> int:
    """Epsilon-greedy beam index; greedy ties go to the lowest index."""
    n_beams = len(beams)
    if qnet.output_size != n_beams:
        raise ConfigError(f"Q-network has {qnet.output_size} outputs for {n_beams} beams")
    explore = rng.random() < epsilon
    if explore:
        return int(rng.integers(n_beams))
    return int(np.argmax(qnet(scale_features(state))))


def dqn_remember(agent: DqnAgent, s, index: int, r: float, s_next):
    r = float(r)
    agent.reward_scale = max(agent.reward_scale, abs(r))
    if agent.reward_scale > 0:
        r /= agent.reward_scale
    agent.buffer.push(s, [index], r, s_next)


def dqn_train_step(agent: DqnAgent, batch_size: int, rng: np.random.Generator):
    """One regression step toward ``r + gamma * max_a Q'(s', a)``; ``None`` if memory is short."""
    if len(agent.buffer) < batch_size:
        return None
    s, a, r, s_next = agent.buffer.sample(rng, batch_size)
    idx = a[:, 0].astype(int)
    y = r.copy()
    if agent.gamma > 0:
        y += agent.gamma * agent.target(scale_features(s_next)).max(axis=1)
    x = scale_features(s)
    q = agent.qnet(x)
    err = q[np.arange(batch_size), idx] - y
    upstream = np.zeros_like(q)
    upstream[np.arange(batch_size), idx] = (2.0 / batch_size) * err
    nn.optimizer_step(agent.opt, agent.qnet, agent.qnet.backward(x, upstream))
    nn.soft_update(agent.target, agent.qnet, agent.tau)
    return float(np.mean(err ** 2))
