"""Solo demonstrations and behavior cloning of the shared solo policy."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .envs import BatchedWorlds, SpreadEnv
from .numerics import AdamState, Mlp, adam_step, check_finite

log = logging.getLogger(__name__)

DEMO_MAGIC = b"SOCODEMO"
DEMO_VERSION = 1
_DEMO_HEADER = struct.Struct("<8sIQII")
_LEN_PREFIX = struct.Struct("<Q")


class FrozenPolicyError(RuntimeError):
    pass


class DemoFormatError(ValueError):
    pass


class SoloPolicy:
    """Deterministic solo policy: ``Mlp(obs -> h -> h -> act)`` with a tanh head."""

    def __init__(self, obs_width: int = 6, act_width: int = 2, hidden: int = 128, rng=None, net: Mlp | None = None):
        self.net = net if net is not None else Mlp([obs_width, hidden, hidden, act_width], output="tanh", rng=rng)
        if self.net.output != "tanh":
            raise ValueError("solo policy needs a tanh output head")
        self.frozen = False

    @property
    def obs_width(self) -> int:
        return self.net.in_size

    @property
    def act_width(self) -> int:
        return self.net.out_size

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        flat = obs.reshape(-1, obs.shape[-1])
        return self.net.forward(flat).reshape(*obs.shape[:-1], self.act_width)

    def freeze(self) -> "SoloPolicy":
        self.frozen = True
        for arr in (self.net.flat, *self.net.weights, *self.net.biases):
            arr.flags.writeable = False
        return self

    def param_hash(self) -> str:
        return params_hash(self.net.flat)


def params_hash(flat: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(flat, dtype="<f8").tobytes()).hexdigest()


@dataclass
class DemoDataset:
    obs: np.ndarray  # (M, obs_width)
    actions: np.ndarray  # (M, act_width)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=np.float32))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float32))
        if self.obs.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("demo observations and actions must be 2-D")
        if len(self.obs) != len(self.actions):
            raise ValueError("observation and action row counts differ")
        if np.any(np.abs(self.actions) > 1.0):
            raise ValueError("demo actions must lie in [-1, 1]")
        check_finite("demo observations", self.obs)
        self.metadata.setdefault("M", len(self.obs))

    def __len__(self) -> int:
        return len(self.obs)


def write_demo_file(path: str | os.PathLike, ds: DemoDataset) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    m, ow = ds.obs.shape
    aw = ds.actions.shape[1] if ds.actions.ndim == 2 else 0
    if m == 0:
        ow = ds.metadata.get("obs_width", ow)
        aw = ds.metadata.get("act_width", aw)
    meta = json.dumps(ds.metadata, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_DEMO_HEADER.pack(DEMO_MAGIC, DEMO_VERSION, m, ow, aw))
        f.write(ds.obs.astype("<f4").tobytes())
        f.write(ds.actions.astype("<f4").tobytes())
        f.write(_LEN_PREFIX.pack(len(meta)))
        f.write(meta)
    os.replace(tmp, path)


def read_demo_file(path: str | os.PathLike) -> DemoDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _DEMO_HEADER.size:
        raise DemoFormatError("file too short for demo header")
    magic, version, m, ow, aw = _DEMO_HEADER.unpack_from(raw, 0)
    if magic != DEMO_MAGIC:
        raise DemoFormatError(f"bad magic {magic!r}")
    if version != DEMO_VERSION:
        raise DemoFormatError(f"unsupported demo format version {version}")
    off = _DEMO_HEADER.size
    n_obs, n_act = m * ow, m * aw
    need = off + 4 * (n_obs + n_act) + _LEN_PREFIX.size
    if len(raw) < need:
        raise DemoFormatError("demo file truncated")
    obs = np.frombuffer(raw, dtype="<f4", count=n_obs, offset=off).reshape(m, ow)
    off += 4 * n_obs
    act = np.frombuffer(raw, dtype="<f4", count=n_act, offset=off).reshape(m, aw)
    off += 4 * n_act
    (meta_len,) = _LEN_PREFIX.unpack_from(raw, off)
    off += _LEN_PREFIX.size
    if len(raw) != off + meta_len:
        raise DemoFormatError("metadata length does not match file size")
    meta = json.loads(raw[off:].decode("utf-8"))
    if meta.get("M", m) != m:
        raise DemoFormatError("metadata M disagrees with header")
    return DemoDataset(obs.astype(np.float32), act.astype(np.float32), meta)


def rollout_returns(
    policy: Callable[[np.ndarray], np.ndarray], env: SpreadEnv, seeds: list[int], record: bool = False
):
    """Deterministic rollouts of a single-agent policy, one world per seed.

    Returns per-episode returns, and with ``record`` also the visited
    observations and actions ordered episode-major.
    """
    worlds = BatchedWorlds(env, seeds)
    returns = np.zeros(len(seeds))
    obs_log, act_log = [], []
    done = False
    while not done:
        obs = worlds.observe()[:, 0, :]  # (E, obs_width)
        act = np.clip(policy(obs), -1.0, 1.0)
        if record:
            obs_log.append(obs)
            act_log.append(act)
        reward, done = worlds.step(act[:, None, :])
        returns += reward
    if not record:
        return returns
    # (T, E, w) -> (E, T, w)
    return returns, np.stack(obs_log, axis=1), np.stack(act_log, axis=1)


def collect_demos(
    expert: Callable[[np.ndarray], np.ndarray],
    env: SpreadEnv,
    m: int,
    seed: int,
    expert_hash: str = "",
) -> DemoDataset:
    """Collect ``m`` (obs, action) pairs from noise-free expert rollouts."""
    if env.n_agents != 1:
        raise ValueError("demonstrations come from the single-agent task")
    meta = {"env": env.env_id, "expert_hash": expert_hash, "seed": seed, "M": m,
            "obs_width": env.obs_width, "act_width": env.act_width}
    if m == 0:
        meta["mean_episode_return"] = None
        return DemoDataset(np.zeros((0, env.obs_width)), np.zeros((0, env.act_width)), meta)
    probe = np.asarray(expert(np.zeros((1, env.obs_width))))
    if probe.shape[-1] != env.act_width:
        raise ValueError("expert output width does not match the environment action width")
    n_episodes = -(-m // env.horizon)
    seeds = [seed * 1_000_003 + e for e in range(n_episodes)]
    rets, obs, act = [], [], []
    for start in range(0, n_episodes, 1000):
        r, o, a = rollout_returns(expert, env, seeds[start : start + 1000], record=True)
        rets.append(r)
        obs.append(o.reshape(-1, env.obs_width))
        act.append(a.reshape(-1, env.act_width))
    meta["mean_episode_return"] = float(np.mean(np.concatenate(rets)))
    return DemoDataset(np.concatenate(obs)[:m], np.concatenate(act)[:m], meta)


def bc_loss_and_grad(solo: SoloPolicy, obs: np.ndarray, actions: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over the batch of the squared L2 action error, and its parameter gradient."""
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if obs.shape[-1] != solo.obs_width or actions.shape[-1] != solo.act_width:
        raise ValueError("batch width does not match the solo policy")
    out, cache = solo.net.forward_train(obs)
    diff = out - actions
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    grad, _ = solo.net.backward(cache, 2.0 * diff / len(obs), need_input_grad=False)
    return loss, grad


def bc_update(solo: SoloPolicy, obs: np.ndarray, actions: np.ndarray, opt: AdamState) -> float:
    if solo.frozen:
        raise FrozenPolicyError("solo policy is frozen")
    loss, grad = bc_loss_and_grad(solo, obs, actions)
    adam_step(solo.net.flat, grad, opt)
    return loss


def train_bc(
    ds: DemoDataset,
    steps: int = 5000,
    batch_size: int = 256,
    lr: float = 1e-3,
    hidden: int = 128,
    seed: int = 0,
) -> tuple[SoloPolicy, list[float]]:
    if len(ds) == 0:
        raise ValueError("cannot clone from an empty dataset")
    rng = np.random.default_rng(seed)
    solo = SoloPolicy(ds.obs.shape[1], ds.actions.shape[1], hidden, rng=rng)
    opt = AdamState(lr, solo.net.n_params)
    history = []
    obs = ds.obs.astype(np.float64)
    act = ds.actions.astype(np.float64)
    for step in range(steps):
        idx = rng.integers(0, len(ds), size=min(batch_size, len(ds)))
        history.append(bc_update(solo, obs[idx], act[idx], opt))
        if step % 1000 == 0:
            log.info("bc step %d loss %.6f", step, history[-1])
    return solo, history


def demo_stats(ds: DemoDataset) -> dict:
    """Count, per-dimension action mean/std and the recorded mean episode return."""
    m = len(ds)
    stats = {"count": m, "header_M": ds.metadata.get("M"),
             "mean_episode_return": ds.metadata.get("mean_episode_return")}
    if m == 0:
        stats.update(action_mean=None, action_std=None)
        return stats
    a = ds.actions.astype(np.float64)
    stats.update(action_mean=a.mean(axis=0).tolist(), action_std=a.std(axis=0).tolist())
    return stats
