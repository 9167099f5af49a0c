"""MATD3 with shared twin centralized critics; TD3 is the single-agent case.

Actors are either :class:`~soco.fusion.FusedPolicy` (SoCo) or
:class:`VanillaActor`.  Because the solo policy is frozen, candidate solo
actions are a fixed function of the observation; the trainer computes them
once at acting time and stores them in the replay buffer next to the
observations instead of re-running the solo network on every sampled batch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .decomp import ObservationLayout, build_solo_views, spread_layout
from .demos import SoloPolicy, params_hash
from .envs import BatchedWorlds, SpreadEnv, make_env
from .fusion import CLIP_MODES, GATING_MODES, FusedPolicy, candidate_actions, gating_entropy
from .numerics import AdamState, Mlp, adam_step, check_finite

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step",
    "mean_return",
    "std_return",
    "critic_loss_1",
    "critic_loss_2",
    "actor_loss",
    "mean_edit_norm",
    "gating_entropy",
)


class ConfigError(ValueError):
    pass


class FrozenHashMismatch(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    env: str = "spread"
    n_agents: int = 3
    algo: str = "soco"  # soco | vanilla
    gamma: float = 0.99
    batch_size: int = 1000
    buffer_size: int = 1_000_000
    hidden: int = 128
    explore_noise: float = 0.1
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    tau: float = 0.005
    actor_lr: float = 5e-4
    critic_lr: float = 1e-3
    n_step: int = 1
    warmup_steps: int = 10_000
    total_steps: int = 100_000
    update_every: int = 1
    eval_interval: int = 10_000
    eval_episodes: int = 40
    eval_seed: int = 10_000
    seed: int = 0
    strength: float = 0.0
    gating: str = "learned"
    clip: str = "tanh"
    gumbel_temperature: float = 1.0
    bootstrap_time_limit: bool = True

    def validate(self) -> "TrainerConfig":
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.algo in ("soco", "vanilla"), f"algo must be soco or vanilla, got {self.algo!r}")
        need(self.env in ("spread", "solonav"), f"unknown env {self.env!r}")
        need(self.n_agents >= 1, "n_agents must be >= 1")
        need(self.env != "solonav" or self.n_agents == 1, "solonav has exactly one agent")
        need(0.0 <= self.gamma <= 1.0, "gamma must lie in [0, 1]")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.buffer_size >= self.batch_size, "buffer_size must be >= batch_size")
        need(self.hidden >= 1, "hidden must be >= 1")
        need(self.explore_noise >= 0, "explore_noise must be >= 0")
        need(self.policy_noise >= 0, "policy_noise must be >= 0")
        need(self.noise_clip >= 0, "noise_clip must be >= 0")
        need(self.policy_delay >= 1, "policy_delay must be >= 1")
        need(0.0 <= self.tau <= 1.0, "tau must lie in [0, 1]")
        need(self.actor_lr > 0 and self.critic_lr > 0, "learning rates must be positive")
        need(self.n_step >= 1, "n_step must be >= 1")
        need(self.warmup_steps >= 0 and self.total_steps >= 0, "step counts must be >= 0")
        need(self.update_every >= 1, "update_every must be >= 1")
        need(self.eval_interval >= 1 and self.eval_episodes >= 1, "evaluation cadence must be >= 1")
        need(self.strength >= 0, "strength L must be >= 0")
        need(self.gating in GATING_MODES, f"gating must be one of {GATING_MODES}")
        need(self.clip in CLIP_MODES, f"clip must be one of {CLIP_MODES}")
        need(self.gumbel_temperature > 0, "gumbel_temperature must be > 0")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown trainer keys: {sorted(unknown)}")
        return cls(**d).validate()

    def to_dict(self) -> dict:
        return asdict(self)


class VanillaActor:
    """Plain per-agent actor: ``Mlp(obs -> h -> h -> act)`` with a tanh head."""

    uses_candidates = False

    def __init__(self, obs_width: int, act_width: int, hidden: int, rng=None):
        self.net = Mlp([obs_width, hidden, hidden, act_width], output="tanh", rng=rng)

    @property
    def nets(self) -> list[Mlp]:
        return [self.net]

    def trainable(self) -> list[Mlp]:
        return [self.net]

    def begin_episode(self, rng, n_worlds: int = 1) -> None:
        pass

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return self.net.forward(np.atleast_2d(obs))

    def act(self, obs, rng=None, train=False, candidates=None):
        return self.net.forward(np.atleast_2d(obs)), {}

    def forward_train(self, obs, candidates, rng, noise=None):
        return self.net.forward_train(np.atleast_2d(obs))

    def backward(self, cache, grad_action):
        grad, _ = self.net.backward(cache, grad_action, need_input_grad=False)
        return {"actor": grad}

    def copy(self) -> "VanillaActor":
        other = VanillaActor.__new__(VanillaActor)
        other.net = self.net.copy()
        return other


FusedPolicy.uses_candidates = True


def _grad_key(actor, net: Mlp) -> str:
    if isinstance(actor, VanillaActor):
        return "actor"
    return "gate" if net is actor.gate.net else "editor"


@dataclass
class Batch:
    state: np.ndarray  # (B, S)
    obs: np.ndarray  # (B, N, O)
    actions: np.ndarray  # (B, N, A)
    ret: np.ndarray  # (B,) n-step discounted reward sum
    boot_state: np.ndarray
    boot_obs: np.ndarray
    discount: np.ndarray  # (B,) gamma^steps, or 0 when the window hit a terminal
    cand: np.ndarray | None = None  # (B, N, G, A)
    boot_cand: np.ndarray | None = None
    terminal: np.ndarray | None = None

    @property
    def done(self) -> np.ndarray:
        return self.terminal if self.terminal is not None else self.discount == 0.0


class ReplayBuffer:
    """FIFO ring buffer of transitions with n-step sampling."""

    def __init__(self, capacity: int, state_width: int, n_agents: int, obs_width: int, act_width: int,
                 n_views: int = 0, n_step: int = 1, gamma: float = 0.99):
        self.capacity = int(capacity)
        self.n_step = n_step
        self.gamma = gamma
        c = self.capacity
        f32 = np.float32
        self.state = np.zeros((c, state_width), f32)
        self.next_state = np.zeros((c, state_width), f32)
        self.obs = np.zeros((c, n_agents, obs_width), f32)
        self.next_obs = np.zeros((c, n_agents, obs_width), f32)
        self.actions = np.zeros((c, n_agents, act_width), f32)
        self.reward = np.zeros(c, np.float64)
        self.done = np.zeros(c, bool)
        self.terminal = np.zeros(c, bool)
        self.n_views = n_views
        if n_views:
            self.cand = np.zeros((c, n_agents, n_views, act_width), f32)
            self.next_cand = np.zeros((c, n_agents, n_views, act_width), f32)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, obs, actions, reward, next_state, next_obs, done, cand=None, next_cand=None,
            terminal: bool | None = None) -> None:
        """Store one transition.

        ``done`` marks the end of an episode; ``terminal`` (defaults to
        ``done``) says whether the value beyond it is zero.  A done but
        non-terminal transition is a time-limit truncation: n-step windows
        stop there and bootstrap from its next state.
        """
        i = self.ptr
        self.state[i] = state
        self.obs[i] = obs
        self.actions[i] = actions
        self.reward[i] = reward
        self.next_state[i] = next_state
        self.next_obs[i] = next_obs
        self.done[i] = done
        self.terminal[i] = done if terminal is None else terminal
        if self.n_views:
            self.cand[i] = cand
            self.next_cand[i] = next_cand
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _window(self, logical: np.ndarray):
        """n-step reward sums for logical positions (0 = oldest)."""
        oldest = (self.ptr - self.size) % self.capacity
        ret = np.zeros(len(logical))
        alive = np.ones(len(logical), bool)
        last = (oldest + logical) % self.capacity
        valid = np.ones(len(logical), bool)
        steps = np.zeros(len(logical), np.int64)
        terminal = np.zeros(len(logical), bool)
        for k in range(self.n_step):
            pos = logical + k
            inside = pos < self.size
            # a window must be complete unless an earlier step ended the episode
            valid &= inside | ~alive
            phys = (oldest + np.minimum(pos, self.size - 1)) % self.capacity
            step_alive = alive & inside
            ret += np.where(step_alive, self.gamma**k * self.reward[phys], 0.0)
            last = np.where(step_alive, phys, last)
            steps += step_alive
            terminal |= step_alive & self.terminal[phys]
            alive = step_alive & ~self.done[phys]
        discount = np.where(terminal, 0.0, self.gamma**steps)
        self._last_terminal = terminal
        return ret, last, discount, valid

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        logical = rng.integers(0, self.size, size=batch_size)
        ret, last, discount, valid = self._window(logical)
        terminal = self._last_terminal
        while not valid.all():
            bad = np.flatnonzero(~valid)
            logical[bad] = rng.integers(0, self.size, size=bad.size)
            ret[bad], last[bad], discount[bad], valid[bad] = self._window(logical[bad])
            terminal[bad] = self._last_terminal
        first = ((self.ptr - self.size) % self.capacity + logical) % self.capacity
        b = Batch(
            state=self.state[first].astype(np.float64),
            obs=self.obs[first].astype(np.float64),
            actions=self.actions[first].astype(np.float64),
            ret=ret,
            boot_state=self.next_state[last].astype(np.float64),
            boot_obs=self.next_obs[last].astype(np.float64),
            discount=discount,
            terminal=terminal,
        )
        if self.n_views:
            b.cand = self.cand[first].astype(np.float64)
            b.boot_cand = self.next_cand[last].astype(np.float64)
        return b


def buffer_sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(batch_size, rng)


class TwinCritics:
    """Two centralized critics ``Q(s || a_1..a_N) -> R`` plus target copies."""

    def __init__(self, in_width: int, hidden: int, lr: float, rng: np.random.Generator):
        self.q1 = Mlp([in_width, hidden, hidden, 1], rng=rng)
        self.q2 = Mlp([in_width, hidden, hidden, 1], rng=rng)
        self.t1 = self.q1.copy()
        self.t2 = self.q2.copy()
        self.opt1 = AdamState(lr, self.q1.n_params)
        self.opt2 = AdamState(lr, self.q2.n_params)


def critic_input(state: np.ndarray, joint_actions: np.ndarray) -> np.ndarray:
    return np.concatenate([state, joint_actions.reshape(len(state), -1)], axis=1)


def clipped_noise(rng: np.random.Generator, shape, sigma: float, clip: float) -> np.ndarray:
    return np.clip(rng.normal(0.0, sigma, size=shape), -clip, clip)


def target_actions(batch: Batch, target_actors: list, policy_noise: float, noise_clip: float,
                   rng: np.random.Generator, noise: np.ndarray | None = None) -> np.ndarray:
    """Smoothed target joint action at the bootstrap observation."""
    acts = []
    for i, actor in enumerate(target_actors):
        cand = batch.boot_cand[:, i] if getattr(actor, "uses_candidates", False) else None
        if cand is not None and actor.gate.mode == "erg":
            # sampled transitions carry no episode identity; draw the index per sample
            actor.episode_index = rng.integers(0, actor.gate.n_views, size=len(cand))
        a, _ = actor.act(batch.boot_obs[:, i], rng, False, candidates=cand)
        acts.append(a)
    joint = np.stack(acts, axis=1)
    if noise is None:
        noise = clipped_noise(rng, joint.shape, policy_noise, noise_clip)
    else:
        noise = np.clip(noise, -noise_clip, noise_clip)
    return np.clip(joint + noise, -1.0, 1.0)


def critic_target(batch: Batch, critics: TwinCritics, target_actors: list, policy_noise: float,
                  noise_clip: float, rng: np.random.Generator, noise: np.ndarray | None = None) -> np.ndarray:
    """``y = R^(n) + gamma^n * min_k Qbar_k(s', a')``; terminal windows give ``y = R^(n)``."""
    joint = target_actions(batch, target_actors, policy_noise, noise_clip, rng, noise)
    x = critic_input(batch.boot_state, joint)
    q = np.minimum(critics.t1.forward(x), critics.t2.forward(x))[:, 0]
    return batch.ret + np.where(batch.done, 0.0, batch.discount * q)


def critic_loss_and_grads(critics: TwinCritics, batch: Batch, y: np.ndarray):
    check_finite("critic target", y)
    x = critic_input(batch.state, batch.actions)
    out = []
    for q in (critics.q1, critics.q2):
        pred, cache = q.forward_train(x)
        diff = pred[:, 0] - y
        grad, _ = q.backward(cache, (2.0 / len(y)) * diff[:, None], need_input_grad=False)
        out.append((float(np.mean(diff * diff)), grad))
    return out


def critic_update(critics: TwinCritics, batch: Batch, y: np.ndarray) -> tuple[float, float]:
    (l1, g1), (l2, g2) = critic_loss_and_grads(critics, batch, y)
    adam_step(critics.q1.flat, g1, critics.opt1)
    adam_step(critics.q2.flat, g2, critics.opt2)
    return l1, l2


def actor_loss_and_grads(i: int, actor, q1: Mlp, batch: Batch, rng: np.random.Generator,
                         noise: np.ndarray | None = None):
    """``-mean Q1(s, a)`` with agent i's slot replaced by its current policy output."""
    cand = batch.cand[:, i] if actor.uses_candidates else None
    a_i, cache = actor.forward_train(batch.obs[:, i], cand, rng, noise=noise)
    joint = batch.actions.copy()
    joint[:, i] = a_i
    q, qcache = q1.forward_train(critic_input(batch.state, joint))
    b = len(q)
    _, g_in = q1.backward(qcache, np.full_like(q, -1.0 / b), need_param_grad=False)
    s = batch.state.shape[1]
    aw = a_i.shape[1]
    grads = actor.backward(cache, g_in[:, s + i * aw : s + (i + 1) * aw])
    return -float(np.mean(q)), grads


def actor_update(i: int, actor, q1: Mlp, batch: Batch, opts: dict, rng: np.random.Generator) -> float:
    loss, grads = actor_loss_and_grads(i, actor, q1, batch, rng)
    for net in actor.trainable():
        key = _grad_key(actor, net)
        adam_step(net.flat, grads[key], opts[id(net)])
    return loss


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    if target.flat.shape != online.flat.shape:
        raise ValueError("target and online parameter shapes differ")
    target.flat[...] = tau * online.flat + (1.0 - tau) * target.flat


def evaluate(actors: list, env: SpreadEnv, episodes: int = 40, seed: int = 0, solo: SoloPolicy | None = None,
             layout: ObservationLayout | None = None, diagnostics: dict | None = None) -> tuple[float, float]:
    """Mean and std of episode returns with deterministic actions.

    Episode e is world ``seed + e``; all episodes run as one batch.
    """
    worlds = BatchedWorlds(env, [seed + e for e in range(episodes)])
    rng = np.random.default_rng([seed, 7])
    saved = [getattr(a, "episode_index", None) for a in actors]
    for a in actors:
        a.begin_episode(rng, episodes)
    returns = np.zeros(episodes)
    edit, ent, hist = [], [], None
    done = False
    while not done:
        obs = worlds.observe()  # (E, N, O)
        cand = None
        if solo is not None:
            cand = candidate_actions(solo, build_solo_views(obs, layout))  # (E, N, G, A)
            hist = hist if hist is not None else np.zeros(cand.shape[2])
        acts = []
        for i, actor in enumerate(actors):
            a, diag = actor.act(obs[:, i], rng, False, candidates=None if cand is None else cand[:, i])
            acts.append(a)
            if diag:
                edit.append(np.mean(diag["edit_norm"]))
                ent.append(gating_entropy(diag["logits"]))
                hist += np.bincount(diag["index"], minlength=len(hist))
        reward, done = worlds.step(np.stack(acts, axis=1))
        returns += reward
    for a, idx in zip(actors, saved):
        if hasattr(a, "episode_index"):
            a.episode_index = idx
    if diagnostics is not None:
        diagnostics["mean_edit_norm"] = float(np.mean(edit)) if edit else 0.0
        diagnostics["gating_entropy"] = float(np.mean(ent)) if ent else 0.0
        if hist is not None:
            diagnostics["gate_hist"] = (hist / max(hist.sum(), 1)).tolist()
    return float(np.mean(returns)), float(np.std(returns))


@dataclass
class TrainResult:
    rows: list[dict]
    trainer: "Trainer"
    solo_hash: str | None = None
    counters: dict = field(default_factory=dict)


class Trainer:
    """Owns all mutable learner state for one (config, seed) run."""

    def __init__(self, cfg: TrainerConfig, solo: SoloPolicy | None = None, layout: ObservationLayout | None = None):
        cfg.validate()
        self.cfg = cfg
        self.env = make_env(cfg.env, cfg.n_agents)
        n, ow, aw = self.env.n_agents, self.env.obs_width, self.env.act_width
        ss = np.random.SeedSequence(cfg.seed)
        init, env_seq, explore, sample, target, gumbel_seq = ss.spawn(6)
        init_rng = np.random.default_rng(init)
        self.env_rng = np.random.default_rng(env_seq)
        self.explore_rng = np.random.default_rng(explore)
        self.sample_rng = np.random.default_rng(sample)
        self.target_rng = np.random.default_rng(target)
        self.gumbel_rng = np.random.default_rng(gumbel_seq)
        self.solo = None
        self.layout = None
        if cfg.algo == "soco":
            if solo is None:
                raise ConfigError("a SoCo run needs a frozen solo policy")
            self.layout = layout or spread_layout(n)
            if self.layout.obs_width != ow:
                raise ConfigError("observation layout does not match the environment")
            self.solo = solo if solo.frozen else solo.freeze()
            self.actors = [
                FusedPolicy(self.solo, self.layout, i, cfg.hidden, cfg.strength, cfg.gating, cfg.clip,
                            cfg.gumbel_temperature, rng=init_rng)
                for i in range(n)
            ]
        else:
            self.actors = [VanillaActor(ow, aw, cfg.hidden, rng=init_rng) for _ in range(n)]
        self.target_actors = [a.copy() for a in self.actors]
        self.critics = TwinCritics(self.env.state_width + n * aw, cfg.hidden, cfg.critic_lr, init_rng)
        self.actor_opts = {id(net): AdamState(cfg.actor_lr, net.n_params) for a in self.actors for net in a.nets}
        n_views = self.layout.n_views if self.layout else 0
        capacity = min(cfg.buffer_size, max(cfg.warmup_steps + cfg.total_steps, cfg.batch_size))
        self.buffer = ReplayBuffer(capacity, self.env.state_width, n, ow, aw, n_views, cfg.n_step, cfg.gamma)
        self.critic_updates = 0
        self.actor_updates = 0
        self.target_updates = 0

    def solo_hash(self) -> str | None:
        return self.solo.param_hash() if self.solo is not None else None

    def _candidates(self, joint_obs: np.ndarray) -> np.ndarray | None:
        if self.solo is None:
            return None
        return candidate_actions(self.solo, build_solo_views(joint_obs, self.layout))

    def _act(self, joint_obs: np.ndarray, cand: np.ndarray | None, random: bool) -> np.ndarray:
        n, aw = self.env.n_agents, self.env.act_width
        if random:
            return self.explore_rng.uniform(-1.0, 1.0, size=(n, aw))
        acts = []
        for i, actor in enumerate(self.actors):
            a, _ = actor.act(joint_obs[i : i + 1], self.gumbel_rng, True,
                             candidates=None if cand is None else cand[i : i + 1])
            acts.append(a[0])
        acts = np.stack(acts)
        acts = acts + self.explore_rng.normal(0.0, self.cfg.explore_noise, size=acts.shape)
        return np.clip(acts, -1.0, 1.0)

    def update(self, stats: dict) -> None:
        cfg = self.cfg
        batch = self.buffer.sample(cfg.batch_size, self.sample_rng)
        y = critic_target(batch, self.critics, self.target_actors, cfg.policy_noise, cfg.noise_clip,
                          self.target_rng)
        l1, l2 = critic_update(self.critics, batch, y)
        self.critic_updates += 1
        stats["critic_loss_1"].append(l1)
        stats["critic_loss_2"].append(l2)
        if self.critic_updates % cfg.policy_delay:
            return
        losses = [actor_update(i, actor, self.critics.q1, batch, self.actor_opts, self.gumbel_rng)
                  for i, actor in enumerate(self.actors)]
        self.actor_updates += 1
        stats["actor_loss"].append(float(np.mean(losses)))
        for actor, target in zip(self.actors, self.target_actors):
            for net, tnet in zip(actor.nets, target.nets):
                soft_update(tnet, net, cfg.tau)
        soft_update(self.critics.t1, self.critics.q1, cfg.tau)
        soft_update(self.critics.t2, self.critics.q2, cfg.tau)
        self.target_updates += 1

    def evaluate(self, diagnostics: dict | None = None) -> tuple[float, float]:
        return evaluate(self.actors, self.env, self.cfg.eval_episodes, self.cfg.eval_seed, self.solo,
                        self.layout, diagnostics)

    def policy(self) -> Callable[[np.ndarray], np.ndarray]:
        """Deterministic single-agent policy callable (for demo collection)."""
        actor = self.actors[0]
        return lambda obs: actor.act(obs, None, False)[0]

    def run(self, on_row: Callable[[dict], None] | None = None) -> TrainResult:
        cfg = self.cfg
        start_hash = self.solo_hash()
        rows: list[dict] = []
        stats = {"critic_loss_1": [], "critic_loss_2": [], "actor_loss": []}
        episode = 0

        def new_episode():
            nonlocal episode
            _, obs = self.env.reset(seed=int(self.env_rng.integers(2**31)))
            for a in self.actors:
                a.begin_episode(self.gumbel_rng)
            episode += 1
            return obs

        def emit(step: int) -> None:
            diag: dict = {}
            mean, std = self.evaluate(diag)
            row = {"step": step, "mean_return": mean, "std_return": std}
            for k in ("critic_loss_1", "critic_loss_2", "actor_loss"):
                row[k] = float(np.mean(stats[k])) if stats[k] else math.nan
                stats[k].clear()
            row["mean_edit_norm"] = diag.get("mean_edit_norm", 0.0)
            row["gating_entropy"] = diag.get("gating_entropy", 0.0)
            for k, frac in enumerate(diag.get("gate_hist", [])):
                row[f"gate_frac_{k}"] = frac
            rows.append(row)
            log.info("step %d return %.3f +- %.3f", step, mean, std)
            if on_row is not None:
                on_row(row)

        obs = new_episode()
        cand = self._candidates(obs)
        for t in range(cfg.warmup_steps + cfg.total_steps):
            learning_step = t - cfg.warmup_steps
            if learning_step == 0:
                emit(0)
            state = self.env.global_state()
            act = self._act(obs, cand, random=learning_step < 0)
            _, next_obs, reward, _, done = self.env.step(act)
            next_cand = self._candidates(next_obs)
            self.buffer.add(state, obs, act, reward, self.env.global_state(), next_obs, done, cand, next_cand,
                            terminal=done and not cfg.bootstrap_time_limit)
            if done:
                obs = new_episode()
                cand = self._candidates(obs)
            else:
                obs, cand = next_obs, next_cand
            if learning_step >= 0:
                done_steps = learning_step + 1
                if done_steps % cfg.update_every == 0 and len(self.buffer) >= cfg.batch_size:
                    self.update(stats)
                if done_steps % cfg.eval_interval == 0 or done_steps == cfg.total_steps:
                    emit(done_steps)
        if cfg.total_steps == 0:
            emit(0)
        end_hash = self.solo_hash()
        if start_hash != end_hash:
            raise FrozenHashMismatch("solo policy parameters changed during cooperative training")
        return TrainResult(rows, self, end_hash, {
            "critic_updates": self.critic_updates,
            "actor_updates": self.actor_updates,
            "target_updates": self.target_updates,
            "episodes": episode,
        })


def train_marl(cfg: TrainerConfig, solo: SoloPolicy | None = None, layout: ObservationLayout | None = None,
               expected_solo_hash: str | None = None, on_row=None) -> TrainResult:
    """Warm-up, then act / store / update per environment step with periodic evaluation."""
    cfg.validate()
    if solo is not None and expected_solo_hash is not None and solo.param_hash() != expected_solo_hash:
        raise FrozenHashMismatch("solo checkpoint hash does not match the recorded hash")
    return Trainer(cfg, solo, layout).run(on_row)
