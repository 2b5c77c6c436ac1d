"""Edge-server model averaging with optional partial (sparse) uploads.

Each BS's local model is its main actor and critic flattened into one vector
(actor first). Every ``T`` epochs the BSs upload either that whole vector or
only the coordinates that moved most since the last synchronization; the
server averages coordinate-wise and broadcasts the result.

Upload wire format (little-endian)::

    magic      4 bytes  b"THZU"
    agent_id   u32
    round      u32
    kind       u8       0 = full, 1 = partial
    ratio      f64
    total      u64      parameter count of the full model
    count      u64      number of values that follow
    full:      f64 * count                       (count == total)
    partial:   (u32 index, f64 value) * count    (indices strictly increasing)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from ._util import ceil_fraction
from .errors import ConfigError, DimensionError, ProtocolError

FULL = "full"
PARTIAL = "partial"
_KINDS = (FULL, PARTIAL)
_MAGIC = b"THZU"
_HEADER = struct.Struct("<IIBdQQ")


@dataclass(frozen=True, eq=False)
class UploadPackage:
    agent_id: int
    kind: str
    total: int
    values: np.ndarray
    indices: np.ndarray | None = None
    upload_ratio: float = 1.0
    round: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ProtocolError(f"unknown package kind {self.kind!r}")
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.kind == FULL:
            if values.shape != (self.total,):
                raise ProtocolError(f"full package carries {values.size} values, model has {self.total}")
            return
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.shape != values.shape:
            raise ProtocolError("partial package needs one index per value")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.total or np.any(np.diff(idx) <= 0)):
            raise ProtocolError("partial indices must be strictly increasing and in range")

    def dense(self, fill: np.ndarray) -> np.ndarray:
        """This agent's contribution with missing coordinates taken from ``fill``."""
        if self.kind == FULL:
            return self.values
        out = np.array(fill, dtype=float, copy=True)
        out[self.indices] = self.values
        return out

    @property
    def count(self) -> int:
        return self.values.size

    @property
    def nbytes(self) -> int:
        return len(encode_package(self))

    def __eq__(self, other):
        if not isinstance(other, UploadPackage):
            return NotImplemented
        return encode_package(self) == encode_package(other)

    __hash__ = None


@dataclass
class GlobalModel:
    params: np.ndarray
    round: int = 0
    weights: np.ndarray | None = None  # importance xi_k per agent id; None means all ones


def full_package(agent_id: int, current, round: int = 0) -> UploadPackage:
    current = np.asarray(current, dtype=float)
    return UploadPackage(agent_id, FULL, current.size, current.copy(), upload_ratio=1.0, round=round)


def select_partial(current, last_synced, ratio: float, *, agent_id: int = 0, round: int = 0,
                   mode: str = "topk", rng: np.random.Generator | None = None) -> UploadPackage:
    """Pick ceil(ratio*n) coordinates to upload.

    ``mode="topk"`` takes the largest ``|current - last_synced|`` with ties
    going to the lower index; ``mode="random"`` draws a uniform subset from
    ``rng`` (ablation only).
    """
    current = np.asarray(current, dtype=float)
    last = np.asarray(last_synced, dtype=float)
    if current.shape != last.shape or current.ndim != 1:
        raise DimensionError("current and last_synced must be vectors of equal length")
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"upload ratio must lie in (0, 1], got {ratio}")
    n = current.size
    count = ceil_fraction(ratio, n)
    if mode == "topk":
        # stable sort on -|delta| keeps lower indices first among ties
        order = np.argsort(-np.abs(current - last), kind="stable")
        idx = np.sort(order[:count])
    elif mode == "random":
        if rng is None:
            raise ConfigError("random partial selection needs an rng")
        idx = np.sort(rng.choice(n, size=count, replace=False))
    else:
        raise ConfigError(f"unknown selection mode {mode!r}")
    return UploadPackage(agent_id, PARTIAL, n, current[idx], idx, upload_ratio=ratio, round=round)


def aggregate(packages, previous_global, weights=None) -> GlobalModel:
    """Coordinate-wise ``(1/K) sum_k xi_k theta_k`` over the submitted packages.

    A coordinate an agent did not upload counts as ``previous_global`` for that
    agent. ``weights`` maps agent id to ``xi_k`` (default 1 for everyone).
    """
    packages = sorted(packages, key=lambda p: p.agent_id)
    if not packages:
        raise ProtocolError("aggregation needs at least one package")
    prev = previous_global.params if isinstance(previous_global, GlobalModel) else previous_global
    prev = np.asarray(prev, dtype=float)
    rnd = previous_global.round + 1 if isinstance(previous_global, GlobalModel) else 1
    for p in packages:
        if p.total != prev.size:
            raise ProtocolError(f"agent {p.agent_id} uploads a {p.total}-parameter model, "
                                f"global has {prev.size}")
    ids = [p.agent_id for p in packages]
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate agent id in one round")
    dense = [p.dense(prev) for p in packages]
    xi = np.array([1.0 if weights is None else float(weights[p.agent_id]) for p in packages])
    k = len(packages)
    # offsets from the first model keep identical uploads an exact fixed point
    ref = dense[0]
    acc = np.zeros_like(prev)
    for w, d in zip(xi, dense):
        acc += w * (d - ref)
    return GlobalModel((xi.sum() / k) * ref + acc / k, rnd, xi)


def local_vector(agent) -> np.ndarray:
    return np.concatenate([nn.flatten(agent.actor), nn.flatten(agent.critic)])


def apply_global(agent, global_model) -> None:
    """Overwrite the agent's main actor and critic; targets keep tracking on their own."""
    vec = global_model.params if isinstance(global_model, GlobalModel) else np.asarray(global_model)
    n_actor = agent.actor.num_params
    if vec.size != n_actor + agent.critic.num_params:
        raise DimensionError(f"global model has {vec.size} parameters, agent needs "
                             f"{n_actor + agent.critic.num_params}")
    nn.load_flat(agent.actor, vec[:n_actor])
    nn.load_flat(agent.critic, vec[n_actor:])
    agent.last_synced = np.array(vec, dtype=float, copy=True)


def federation_round_due(epoch: int, T: int) -> bool:
    if T < 1:
        raise ConfigError(f"federation cycle must be >= 1, got {T}")
    return epoch % T == 0


def encode_package(p: UploadPackage) -> bytes:
    head = _MAGIC + _HEADER.pack(p.agent_id, p.round, _KINDS.index(p.kind), p.upload_ratio,
                                 p.total, p.count)
    if p.kind == FULL:
        return head + p.values.astype("<f8").tobytes()
    rec = np.empty(p.count, dtype=np.dtype([("i", "<u4"), ("v", "<f8")]))
    rec["i"] = p.indices
    rec["v"] = p.values
    return head + rec.tobytes()


def decode_package(blob: bytes) -> UploadPackage:
    if blob[:4] != _MAGIC:
        raise ProtocolError("not an upload package (bad magic)")
    try:
        agent_id, rnd, kind, ratio, total, count = _HEADER.unpack_from(blob, 4)
    except struct.error as exc:
        raise ProtocolError(f"truncated package header: {exc}") from None
    if kind >= len(_KINDS):
        raise ProtocolError(f"unknown package kind code {kind}")
    body = blob[4 + _HEADER.size:]
    if kind == 0:
        if len(body) != 8 * count:
            raise ProtocolError("package body length disagrees with header")
        values = np.frombuffer(body, dtype="<f8").astype(float)
        return UploadPackage(agent_id, FULL, total, values, upload_ratio=ratio, round=rnd)
    if len(body) != 12 * count:
        raise ProtocolError("package body length disagrees with header")
    rec = np.frombuffer(body, dtype=np.dtype([("i", "<u4"), ("v", "<f8")]))
    return UploadPackage(agent_id, PARTIAL, total, rec["v"].astype(float), rec["i"].astype(np.int64),
                         upload_ratio=ratio, round=rnd)
