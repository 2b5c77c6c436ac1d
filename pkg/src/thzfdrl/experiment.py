"""Experiment driver: the federated training loop, Monte Carlo batches, sweeps, CSV output.

Seeding: a master seed feeds :class:`numpy.random.SeedSequence`; run ``i`` of
every batch uses the ``i``-th spawned child, whatever the swept value or the
method. Within a run, the child is split into a scenario stream, a network
initialization stream (shared by all BSs, so they start from one global
model), one stream per BS, and a server stream.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import agent as ag
from . import baselines as bl
from . import federation as fed
from .channel import ChannelParams
from .env import (NetworkScenario, dbm_to_watt, env_step, generate_scenario, initial_states,
                  sum_rate_limited)
from .errors import ConfigError, ThzError

METHODS = ("fdrl", "ddpg-local", "dqn", "zf", "mmse", "mrt", "random")
LEARNING_METHODS = ("fdrl", "ddpg-local", "dqn")
STATE_MODES = ("csi+sinr", "sinr-only")
SWEEP_AXES = ("antennas", "cells", "neurons", "upload_ratio", "distance", "csi_fraction")

TRACE_COLUMNS = ("run_id", "epoch", "bs_id", "reward_bps_hz", "sum_rate_bps_hz", "noise_sigma",
                 "fed_round_flag")
SUMMARY_COLUMNS = ("axis_value", "mean_tp", "median_tp", "std_tp", "bytes_uploaded")


@dataclass(frozen=True)
class ExperimentConfig:
    # network layout
    K: int = 3
    N: int = 8
    distance_range: tuple = (10.0, 100.0)
    csi_fraction: float = 1.0
    tx_power_dbm: float = 10.0
    noise_dbm: float = -74.0
    frequency: float = 0.3e12
    rho: float = 0.1
    gain_db: float = 10.0
    num_nlos: int = 5
    nlos_mag_range: tuple = (0.01, 0.1)
    steering_scale: str = "inverse_n"
    # learning
    method: str = "fdrl"
    state_mode: str = "csi+sinr"
    neurons: tuple = (100, 70)
    epochs: int = 300
    fed_cycle: int = 20
    buffer_size: int = 10
    batch_size: int = 5
    gamma: float = 0.9
    tau_a: float = 0.01
    tau_c: float = 0.01
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    train_steps: int = 1
    noise_sigma: float = math.sqrt(3.0)
    noise_decay: float = 0.99
    upload_ratio: float = 1.0
    selection: str = "topk"
    importance: tuple = ()
    codebook_size: int = 16
    dqn_lr: float = 1e-3
    # bookkeeping
    monte_carlo_runs: int = 10
    seed: int = 0
    bandwidth: float = 1.0

    def __post_init__(self):
        for name in ("K", "N", "epochs", "fed_cycle", "buffer_size", "batch_size", "train_steps",
                     "codebook_size", "monte_carlo_runs"):
            if getattr(self, name) < 1 and not (name == "epochs" and self.epochs == 0):
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.state_mode not in STATE_MODES:
            raise ConfigError(f"unknown state_mode {self.state_mode!r}")
        if self.selection not in ("topk", "random"):
            raise ConfigError(f"unknown selection {self.selection!r}")
        if not 0.0 < self.upload_ratio <= 1.0:
            raise ConfigError(f"upload_ratio must lie in (0, 1], got {self.upload_ratio}")
        if not 0.0 < self.csi_fraction <= 1.0:
            raise ConfigError(f"csi_fraction must lie in (0, 1], got {self.csi_fraction}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.noise_decay <= 1.0:
            raise ConfigError(f"noise_decay must lie in (0, 1], got {self.noise_decay}")
        if len(self.neurons) < 1 or any(n < 1 for n in self.neurons):
            raise ConfigError(f"neurons must be positive widths, got {self.neurons}")
        if self.importance and len(self.importance) != self.K:
            raise ConfigError(f"importance needs {self.K} entries, got {len(self.importance)}")
        lo, hi = self.distance_range
        if not 0 < lo <= hi:
            raise ConfigError(f"distance_range must satisfy 0 < lo <= hi, got {self.distance_range}")
        if self.bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        self.channel_params()  # validates the physical parameters

    def channel_params(self) -> ChannelParams:
        return ChannelParams(f=self.frequency, rho=self.rho, gain_db=self.gain_db,
                             num_nlos=self.num_nlos, num_antennas=self.N,
                             nlos_mag_range=tuple(self.nlos_mag_range),
                             steering_scale=self.steering_scale)

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watt(self.tx_power_dbm)

    @property
    def noise_w(self) -> float:
        return dbm_to_watt(self.noise_dbm)


def _parse_value(name: str, text: str, current):
    text = text.strip()
    try:
        if isinstance(current, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            parts = [p for p in text.replace(" ", "").split(",") if p]
            kind = int if name in ("neurons",) else float
            return tuple(kind(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def config_with(base: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply ``{key: text}`` overrides, parsing each value by the field's type."""
    known = {f.name for f in fields(ExperimentConfig)}
    parsed = {}
    for key, text in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        parsed[key] = _parse_value(key, str(text), getattr(base, key))
    return replace(base, **parsed)


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        overrides[key.strip()] = value.strip()
    return config_with(base or ExperimentConfig(), overrides)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    rewards: np.ndarray           # (E, K) per-BS reward, bits/s/Hz
    sum_rate: np.ndarray          # (E,)
    noise_sigma: np.ndarray       # (E, K) exploration std (epsilon for dqn) after each epoch
    fed_round: np.ndarray         # (E,) bool
    final_throughput: float       # noise-free policy sum rate after training, bits/s/Hz
    wall_clock: float = 0.0
    bytes_uploaded: int = 0       # parameter payload, 8 bytes per uploaded value
    wire_bytes: int = 0           # encoded packages including headers and indices
    values_uploaded: int = 0
    train_flops: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.sum_rate)


def run_seeds(master_seed: int, runs: int) -> list:
    return np.random.SeedSequence(master_seed).spawn(runs)


def _scenario_for(cfg: ExperimentConfig, seq: np.random.SeedSequence) -> NetworkScenario:
    return generate_scenario(np.random.default_rng(seq), cfg.K, cfg.N, cfg.distance_range,
                             cfg.channel_params(), cfg.tx_power_w, cfg.noise_w, cfg.csi_fraction)


def _observe(cfg, states):
    if cfg.state_mode == "sinr-only":
        states = [np.concatenate([np.zeros(len(s) - 1), s[-1:]]) for s in states]
    return states


def baseline_beams(cfg: ExperimentConfig, scenario: NetworkScenario, rng=None) -> np.ndarray:
    if cfg.method == "zf":
        return bl.zf_beamformers(scenario.channels)
    if cfg.method == "mmse":
        return bl.mmse_beamformers(scenario.channels, scenario.tx_power_w, scenario.noise_w)
    if cfg.method == "mrt":
        return np.array([bl.mrt_beamformer(scenario.serving(k)) for k in range(scenario.K)])
    if cfg.method == "random":
        return bl.random_beams(rng, scenario.K, scenario.N)
    raise ConfigError(f"{cfg.method} is not a fixed beamforming method")


def _run_fixed(cfg, scenario, seq, started):
    beams = baseline_beams(cfg, scenario, np.random.default_rng(seq))
    res = env_step(scenario, beams)
    E = cfg.epochs
    return RunResult(rewards=np.tile(res.rewards, (E, 1)), sum_rate=np.full(E, res.sum_rate),
                     noise_sigma=np.zeros((E, scenario.K)), fed_round=np.zeros(E, dtype=bool),
                     final_throughput=res.sum_rate, wall_clock=time.perf_counter() - started)


def _train_flops(cfg, actor, critic):
    # forward ~2 flops per weight per sample, backward ~4; one critic step
    # (critic fwd+bwd, target actor+critic fwd) plus one actor step through the critic
    B = cfg.batch_size
    pa, pc = actor.num_params, critic.num_params
    return B * (6 * pc + 2 * (pa + pc) + 6 * (pa + pc))


def run_algorithm1(cfg: ExperimentConfig, scenario: NetworkScenario,
                   seq: np.random.SeedSequence) -> RunResult:
    """Train K agents on a fixed scenario for ``cfg.epochs`` epochs.

    Epochs count from 1; with ``method="fdrl"`` the server averages the main
    networks whenever ``epoch % fed_cycle == 0``.
    """
    started = time.perf_counter()
    init_seq, agents_seq, server_seq = seq.spawn(3)
    if cfg.method not in LEARNING_METHODS:
        return _run_fixed(cfg, scenario, server_seq, started)
    K, N, E = scenario.K, scenario.N, cfg.epochs
    agent_rngs = [np.random.default_rng(s) for s in agents_seq.spawn(K)]
    server_rng = np.random.default_rng(server_seq)
    dqn = cfg.method == "dqn"

    def fresh_init():
        # every BS draws identical initial weights from the same stream
        return np.random.default_rng(init_seq)

    if dqn:
        beams = bl.codebook(N, cfg.codebook_size)
        agents = [bl.make_dqn_agent(N, cfg.codebook_size, cfg.neurons, init_rng=fresh_init(),
                                    lr=cfg.dqn_lr, buffer_size=cfg.buffer_size, gamma=cfg.gamma,
                                    tau=cfg.tau_c, agent_id=k) for k in range(K)]
    else:
        agents = [ag.make_agent(N, cfg.neurons, init_rng=fresh_init(), agent_id=k,
                                buffer_size=cfg.buffer_size, gamma=cfg.gamma, tau_a=cfg.tau_a,
                                tau_c=cfg.tau_c, actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr,
                                noise_sigma=cfg.noise_sigma) for k in range(K)]
    federated = cfg.method == "fdrl"
    global_model = None
    if federated:
        global_model = fed.GlobalModel(fed.local_vector(agents[0]))
        for a in agents:
            a.last_synced = global_model.params.copy()
    weights = dict(enumerate(cfg.importance)) if cfg.importance else None

    rewards = np.zeros((E, K))
    sum_rates = np.zeros(E)
    sigmas = np.zeros((E, K))
    fed_flags = np.zeros(E, dtype=bool)
    payload = wire = n_values = 0
    flops = 0.0
    states = _observe(cfg, initial_states(scenario))

    for t in range(1, E + 1):
        try:
            if dqn:
                choice = [bl.dqn_agent_step(states[k], agents[k].qnet, agents[k].epsilon, beams,
                                            agent_rngs[k]) for k in range(K)]
                W = beams[choice]
            else:
                raw = [ag.act(agents[k], states[k], True, agent_rngs[k]) for k in range(K)]
                W = np.array([ag.action_to_beamformer(a, N) for a in raw])
            res = env_step(scenario, W)
            next_states = _observe(cfg, res.states)
            for k in range(K):
                a = agents[k]
                if dqn:
                    bl.dqn_remember(a, states[k], choice[k], res.rewards[k], next_states[k])
                    for _ in range(cfg.train_steps):
                        if bl.dqn_train_step(a, cfg.batch_size, agent_rngs[k]) is not None:
                            flops += 8 * cfg.batch_size * a.qnet.num_params
                    a.epsilon *= cfg.noise_decay
                    sigmas[t - 1, k] = a.epsilon
                else:
                    ag.remember(a, states[k], ag.beam_to_action(W[k]), res.rewards[k], next_states[k])
                    for _ in range(cfg.train_steps):
                        if ag.train_step(a, cfg.batch_size, agent_rngs[k]) is not None:
                            flops += _train_flops(cfg, a.actor, a.critic)
                    ag.decay_noise(a, cfg.noise_decay)
                    sigmas[t - 1, k] = a.noise_sigma
            rewards[t - 1] = res.rewards
            sum_rates[t - 1] = res.sum_rate
            states = next_states

            if federated and fed.federation_round_due(t, cfg.fed_cycle):
                packages = []
                for a in agents:
                    vec = fed.local_vector(a)
                    if cfg.upload_ratio >= 1.0:
                        pkg = fed.full_package(a.agent_id, vec, global_model.round + 1)
                    else:
                        pkg = fed.select_partial(vec, a.last_synced, cfg.upload_ratio,
                                                 agent_id=a.agent_id, round=global_model.round + 1,
                                                 mode=cfg.selection, rng=server_rng)
                    packages.append(pkg)
                    payload += 8 * pkg.count
                    wire += pkg.nbytes
                    n_values += pkg.count
                global_model = fed.aggregate(packages, global_model, weights)
                flops += K * global_model.params.size
                for a in agents:
                    fed.apply_global(a, global_model)
                fed_flags[t - 1] = True
        except ThzError as exc:
            raise type(exc)(f"epoch {t}: {exc}") from exc

    if dqn:
        W = beams[[int(np.argmax(a.qnet(ag.scale_features(s)))) for a, s in zip(agents, states)]]
    else:
        W = np.array([ag.action_to_beamformer(ag.policy(a, s), N) for a, s in zip(agents, states)])
    final = sum_rate_limited(scenario, W) if E > 0 else 0.0
    return RunResult(rewards=rewards, sum_rate=sum_rates, noise_sigma=sigmas, fed_round=fed_flags,
                     final_throughput=final, wall_clock=time.perf_counter() - started,
                     bytes_uploaded=payload, wire_bytes=wire, values_uploaded=n_values,
                     train_flops=flops)


@dataclass
class MonteCarloResult:
    config: ExperimentConfig
    runs: list = field(default_factory=list)

    @property
    def finals(self) -> np.ndarray:
        return np.array([r.final_throughput for r in self.runs]) * self.config.bandwidth

    @property
    def mean(self) -> float:
        return float(np.mean(self.finals))

    @property
    def median(self) -> float:
        return float(np.median(self.finals))

    @property
    def std(self) -> float:
        return float(np.std(self.finals))

    @property
    def mean_trace(self) -> np.ndarray:
        if not self.runs or self.config.epochs == 0:
            return np.zeros(0)
        return np.mean([r.sum_rate for r in self.runs], axis=0) * self.config.bandwidth

    @property
    def bytes_uploaded(self) -> float:
        return float(np.mean([r.bytes_uploaded for r in self.runs]))


def run_monte_carlo(cfg: ExperimentConfig) -> MonteCarloResult:
    """Independent scenario per run; run ``i`` always uses the ``i``-th derived seed."""
    out = MonteCarloResult(cfg)
    for seq in run_seeds(cfg.seed, cfg.monte_carlo_runs):
        scen_seq, algo_seq = seq.spawn(2)
        out.runs.append(run_algorithm1(cfg, _scenario_for(cfg, scen_seq), algo_seq))
    return out


def config_for_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "antennas":
        return replace(cfg, N=int(value))
    if axis == "cells":
        return replace(cfg, K=int(value), importance=())
    if axis == "neurons":
        widths = tuple(int(v) for v in (value if isinstance(value, (tuple, list)) else (value, value)))
        return replace(cfg, neurons=widths)
    if axis == "upload_ratio":
        return replace(cfg, upload_ratio=float(value))
    if axis == "distance":
        return replace(cfg, distance_range=(float(value), float(value)))
    if axis == "csi_fraction":
        return replace(cfg, csi_fraction=float(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


def sweep(cfg: ExperimentConfig, axis: str, values) -> list:
    """One Monte Carlo batch per value, all batches on the same derived seeds."""
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    return [(v, run_monte_carlo(config_for_axis(cfg, axis, v))) for v in values]


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (tuple, list)):
        return "x".join(str(v) for v in x)
    return str(x)


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="")
    except OSError as exc:
        raise IOError(f"{path}: {exc.strerror}") from None


def trace_rows(runs):
    for run_id, r in enumerate(runs):
        for e in range(r.epochs):
            for k in range(r.rewards.shape[1]):
                yield (run_id, e + 1, k, r.rewards[e, k], r.sum_rate[e], r.noise_sigma[e, k],
                       int(r.fed_round[e]))


def emit_csv(rows, path, columns=TRACE_COLUMNS) -> Path:
    """Write ``rows`` under a fixed header; floats keep 17 significant digits."""
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return Path(path)


def summary_rows(results):
    """``results`` is a list of ``(axis_value, MonteCarloResult)``."""
    for value, mc in results:
        yield (value, mc.mean, mc.median, mc.std, mc.bytes_uploaded)


def read_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def asdict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
