"""Per-BS DDPG learner: replay memory, actor/critic updates, target tracking.

Raw actions are real vectors of length ``2N`` (real parts then imaginary
parts). They are mapped to a feasible beamformer by projecting onto the
unit ball, so exploration noise never produces an infeasible beam. Replay
memory and the critic work with the projected action, i.e. the beam that was
actually transmitted; the actor gradient is chained through the projection.

The networks do not see :class:`~thzfdrl.env` observations verbatim. THz
channel entries are of order 1e-6 and the SINR feature spans +-60 dB, so
:func:`scale_features` rescales the CSI block to unit norm and the SINR entry
to [-1, 1] before every forward pass. Rewards are likewise divided by the
largest reward seen so far as they enter replay memory, which keeps critic
targets O(1) whatever the link budget.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .env import SINR_DB_CLAMP
from .errors import ConfigError, DimensionError


def state_dim(n_antennas: int) -> int:
    return 2 * n_antennas + 1


def scale_features(states):
    """Map raw observations to network inputs; works row-wise on batches."""
    s = np.array(states, dtype=float)
    csi = s[..., :-1]
    norm = np.linalg.norm(csi, axis=-1, keepdims=True)
    s[..., :-1] = np.divide(csi, norm, out=np.zeros_like(csi), where=norm > 0)
    s[..., -1] = s[..., -1] / SINR_DB_CLAMP
    return s


def project_actions(a):
    """Row-wise projection of raw actions onto the unit ball."""
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    return np.where(norm > 1.0, a / np.maximum(norm, 1.0), a)


def _projection_vjp(mu, upstream):
    # d/dmu of mu/|mu| is (I - u u^T)/|mu| outside the ball, identity inside
    norm = np.linalg.norm(mu, axis=-1, keepdims=True)
    u = mu / np.maximum(norm, 1e-300)
    tangential = (upstream - np.sum(upstream * u, axis=-1, keepdims=True) * u) / np.maximum(norm, 1.0)
    return np.where(norm > 1.0, tangential, upstream)


def beam_to_action(w) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    return np.concatenate([w.real, w.imag])


def action_to_beamformer(a, n_antennas: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (2 * n_antennas,):
        raise DimensionError(f"expected a raw action of length {2 * n_antennas}, got {a.shape}")
    w = a[:n_antennas] + 1j * a[n_antennas:]
    norm = np.linalg.norm(w)
    if norm > 1.0:
        w = w / norm
    return w


class ReplayBuffer:
    """Fixed-capacity ring of ``(s, a, r, s_next)`` transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def push(self, s, a, r, s_next):
        item = (np.asarray(s, dtype=float), np.asarray(a, dtype=float), float(r),
                np.asarray(s_next, dtype=float))
        if not all(np.all(np.isfinite(x)) for x in item):
            raise ValueError("non-finite transition")
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform draw with replacement; returns stacked ``(S, A, R, S_next)``."""
        idx = rng.integers(0, len(self._items), size=batch_size)
        rows = [self._items[i] for i in idx]
        return tuple(np.stack([row[c] for row in rows]) for c in range(4))


@dataclass
class Agent:
    actor: nn.Mlp
    critic: nn.Mlp
    target_actor: nn.Mlp
    target_critic: nn.Mlp
    buffer: ReplayBuffer
    actor_opt: nn.OptimizerState
    critic_opt: nn.OptimizerState
    noise_sigma: float = float(np.sqrt(3.0))
    gamma: float = 0.9
    tau_a: float = 0.01
    tau_c: float = 0.01
    agent_id: int = 0
    reward_scale: float = 0.0
    scale_rewards: bool = True
    last_synced: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_antennas(self) -> int:
        return self.actor.output_size // 2


def make_agent(n_antennas: int, hidden=(100, 70), rng=None, *, init_rng=None, agent_id=0,
               buffer_size=10, gamma=0.9, tau_a=0.01, tau_c=0.01, actor_lr=1e-4, critic_lr=1e-3,
               noise_sigma=float(np.sqrt(3.0))) -> Agent:
    """Build an agent; ``init_rng`` draws the actor then the critic weights."""
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"discount must lie in [0, 1), got {gamma}")
    init_rng = init_rng if init_rng is not None else rng
    sdim = state_dim(n_antennas)
    actor = nn.Mlp([sdim, *hidden, 2 * n_antennas], "tanh", init_rng)
    critic = nn.Mlp([sdim + 2 * n_antennas, *hidden, 1], "identity", init_rng)
    return Agent(actor=actor, critic=critic, target_actor=actor.copy(), target_critic=critic.copy(),
                 buffer=ReplayBuffer(buffer_size),
                 actor_opt=nn.OptimizerState.for_net(actor, actor_lr),
                 critic_opt=nn.OptimizerState.for_net(critic, critic_lr),
                 noise_sigma=noise_sigma, gamma=gamma, tau_a=tau_a, tau_c=tau_c, agent_id=agent_id)


def policy(agent: Agent, s) -> np.ndarray:
    """Deterministic actor output for one raw observation."""
    s = np.asarray(s, dtype=float)
    if s.shape != (agent.actor.input_size,):
        raise DimensionError(f"expected state of length {agent.actor.input_size}, got {s.shape}")
    return agent.actor(scale_features(s))


def act(agent: Agent, s, explore: bool, rng: np.random.Generator) -> np.ndarray:
    a = policy(agent, s)
    if explore and agent.noise_sigma > 0:
        a = a + rng.normal(0.0, agent.noise_sigma, size=a.shape)
    return a


def remember(agent: Agent, s, a, r, s_next):
    """Store a transition, normalizing the reward by the running maximum.

    ``a`` should be the transmitted action, i.e. ``beam_to_action(w)``.
    """
    r = float(r)
    if agent.scale_rewards:
        agent.reward_scale = max(agent.reward_scale, abs(r))
        if agent.reward_scale > 0:
            r /= agent.reward_scale
    agent.buffer.push(s, a, r, s_next)


def critic_target(agent: Agent, batch) -> np.ndarray:
    """Bellman targets ``r + gamma * Q'(s', mu'(s'))`` from the target networks."""
    _, _, rewards, s_next = batch
    r = np.asarray(rewards, dtype=float)
    if agent.gamma == 0.0:
        return r
    x_next = scale_features(s_next)
    a_next = project_actions(agent.target_actor(x_next))
    q_next = agent.target_critic(np.concatenate([x_next, a_next], axis=-1))[..., 0]
    return r + agent.gamma * q_next


def actor_gradient(agent: Agent, x):
    """Gradient of ``-mean Q(x, P(mu(x)))`` w.r.t. the actor, plus the Q values.

    ``x`` holds already scaled features, one row per sample.
    """
    mu = agent.actor(x)
    q_in = np.concatenate([x, project_actions(mu)], axis=1)
    q_mu = agent.critic(q_in)[:, 0]
    dq = agent.critic.backward(q_in, np.full((len(x), 1), 1.0 / len(x))).input
    dq_dmu = _projection_vjp(mu, dq[:, x.shape[1]:])
    return agent.actor.backward(x, -dq_dmu), q_mu


def train_step(agent: Agent, batch_size: int, rng: np.random.Generator):
    """One critic step, one actor step, then soft target updates.

    Returns ``(critic_loss, actor_objective)``, or ``None`` when the replay
    memory holds fewer than ``batch_size`` transitions.
    """
    if len(agent.buffer) < batch_size:
        return None
    batch = agent.buffer.sample(rng, batch_size)
    s, a, _, _ = batch
    y = critic_target(agent, batch)
    x = scale_features(s)

    critic_in = np.concatenate([x, a], axis=1)
    q = agent.critic(critic_in)[:, 0]
    err = q - y
    critic_loss = float(np.mean(err ** 2))
    grads = agent.critic.backward(critic_in, (2.0 / batch_size) * err[:, None])
    nn.optimizer_step(agent.critic_opt, agent.critic, grads)

    actor_grads, q_mu = actor_gradient(agent, x)
    nn.optimizer_step(agent.actor_opt, agent.actor, actor_grads)

    nn.soft_update(agent.target_actor, agent.actor, agent.tau_a)
    nn.soft_update(agent.target_critic, agent.critic, agent.tau_c)
    return critic_loss, float(np.mean(q_mu))


def decay_noise(agent: Agent, factor: float) -> Agent:
    if not 0.0 < factor <= 1.0:
        raise ConfigError(f"noise decay factor must lie in (0, 1], got {factor}")
    agent.noise_sigma *= factor
    return agent


# Checkpoint layout (little-endian): b"THZA", u32 agent_id, u32 epoch,
# f64 noise_sigma, f64 reward_scale, u32 n_nets (=4), then per network a u64
# byte length followed by its nn.to_bytes blob, in the order actor, critic,
# target_actor, target_critic.
_CKPT_MAGIC = b"THZA"


def save_checkpoint(agent: Agent, epoch: int) -> bytes:
    nets = (agent.actor, agent.critic, agent.target_actor, agent.target_critic)
    out = [_CKPT_MAGIC, struct.pack("<IIddI", agent.agent_id, epoch, agent.noise_sigma,
                                    agent.reward_scale, len(nets))]
    for net in nets:
        blob = nn.to_bytes(net)
        out.append(struct.pack("<Q", len(blob)))
        out.append(blob)
    return b"".join(out)


def load_checkpoint(blob: bytes, **agent_kwargs) -> tuple[Agent, int]:
    """Restore networks and manifest; optimizer moments and replay start empty."""
    if blob[:4] != _CKPT_MAGIC:
        raise ConfigError("not an agent checkpoint (bad magic)")
    agent_id, epoch, sigma, scale, n_nets = struct.unpack_from("<IIddI", blob, 4)
    pos = 4 + struct.calcsize("<IIddI")
    nets = []
    for _ in range(n_nets):
        (length,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        net, _ = nn.from_bytes(blob[pos:pos + length])
        nets.append(net)
        pos += length
    actor, critic, target_actor, target_critic = nets
    kw = dict(agent_kwargs)
    buffer_size = kw.pop("buffer_size", 10)
    actor_lr = kw.pop("actor_lr", 1e-4)
    critic_lr = kw.pop("critic_lr", 1e-3)
    agent = Agent(actor=actor, critic=critic, target_actor=target_actor, target_critic=target_critic,
                  buffer=ReplayBuffer(buffer_size),
                  actor_opt=nn.OptimizerState.for_net(actor, actor_lr),
                  critic_opt=nn.OptimizerState.for_net(critic, critic_lr),
                  noise_sigma=sigma, agent_id=agent_id, reward_scale=scale, **kw)
    return agent, epoch
