"""Cooperative Spread world and its single-agent SoloNav counterpart.

Physics: damped double integrator with a continuous 2D force in [-1, 1]^2.
The reward helpers broadcast over leading batch dimensions so the same code
serves single worlds and vectorized evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DAMPING = 0.25
DT = 0.1
MASS = 1.0
HORIZON = 25
AGENT_RADIUS = 0.15
LANDMARK_RADIUS = 0.05
MAX_RESET_ATTEMPTS = 1000


@dataclass
class SpreadState:
    pos: np.ndarray  # (N, 2)
    vel: np.ndarray  # (N, 2)
    landmarks: np.ndarray  # (K, 2)
    t: int = 0

    @property
    def n_agents(self) -> int:
        return self.pos.shape[0]

    def copy(self) -> "SpreadState":
        return SpreadState(self.pos.copy(), self.vel.copy(), self.landmarks.copy(), self.t)


def obs_width(n_agents: int, n_landmarks: int) -> int:
    return 4 + 2 * n_landmarks + 2 * (n_agents - 1)


def state_width(n_agents: int, n_landmarks: int) -> int:
    return 4 * n_agents + 2 * n_landmarks


def spread_reward(
    pos: np.ndarray,
    landmarks: np.ndarray,
    radii: np.ndarray | float = AGENT_RADIUS,
) -> tuple[np.ndarray, np.ndarray]:
    """Shared reward ``R`` and per-agent rewards ``r_i`` for positions ``(..., N, 2)``.

    ``r_i = (r_global + r_local_i) / 2`` with ``r_global`` the negated sum over
    landmarks of the closest agent distance and ``r_local_i`` minus the number
    of other agents within the sum of radii.
    """
    pos = np.asarray(pos, dtype=np.float64)
    landmarks = np.asarray(landmarks, dtype=np.float64)
    n = pos.shape[-2]
    # (..., K, N) agent-landmark distances
    d_al = np.linalg.norm(landmarks[..., :, None, :] - pos[..., None, :, :], axis=-1)
    r_global = -np.sum(np.min(d_al, axis=-1), axis=-1)
    radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), pos.shape[:-1])
    d_aa = np.linalg.norm(pos[..., :, None, :] - pos[..., None, :, :], axis=-1)
    reach = radii[..., :, None] + radii[..., None, :]
    hit = (d_aa < reach) & ~np.eye(n, dtype=bool)
    r_local = -np.sum(hit, axis=-1).astype(np.float64)
    per_agent = 0.5 * (r_global[..., None] + r_local)
    return np.sum(per_agent, axis=-1), per_agent


def observe(state: SpreadState) -> np.ndarray:
    """Joint observation ``(N, 4 + 2K + 2(N-1))``.

    Row i: own velocity, own position, landmarks relative to self (by index),
    other agents relative to self (ascending index, self skipped).
    """
    return _observe(state.pos, state.vel, state.landmarks)


def _observe(pos: np.ndarray, vel: np.ndarray, landmarks: np.ndarray) -> np.ndarray:
    # batched over leading dims: pos (..., N, 2)
    n = pos.shape[-2]
    batch = pos.shape[:-2]
    rel_lm = landmarks[..., None, :, :] - pos[..., :, None, :]  # (..., N, K, 2)
    rel_ag = pos[..., None, :, :] - pos[..., :, None, :]  # (..., N, N, 2)
    if n > 1:
        mask = ~np.eye(n, dtype=bool)
        rel_ag = rel_ag[..., mask, :].reshape(*batch, n, n - 1, 2)
    else:
        rel_ag = rel_ag[..., :0, :]
    return np.concatenate(
        [
            vel,
            pos,
            rel_lm.reshape(*batch, n, -1),
            rel_ag.reshape(*batch, n, -1),
        ],
        axis=-1,
    )


def global_state(state: SpreadState) -> np.ndarray:
    return np.concatenate([state.pos.ravel(), state.vel.ravel(), state.landmarks.ravel()])


def integrate(pos: np.ndarray, vel: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vel = (1.0 - DAMPING) * vel + actions * (DT / MASS)
    return pos + vel * DT, vel


def sample_world(rng: np.random.Generator, n_agents: int, n_landmarks: int) -> SpreadState:
    pos = rng.uniform(-1.0, 1.0, size=(n_agents, 2))
    landmarks = np.zeros((n_landmarks, 2))
    min_gap = 2 * LANDMARK_RADIUS
    for k in range(n_landmarks):
        for _ in range(MAX_RESET_ATTEMPTS):
            cand = rng.uniform(-1.0, 1.0, size=2)
            if k == 0 or np.all(np.linalg.norm(landmarks[:k] - cand, axis=1) > min_gap):
                landmarks[k] = cand
                break
        else:
            raise RuntimeError(f"could not place landmark {k} without overlap")
    return SpreadState(pos=pos, vel=np.zeros((n_agents, 2)), landmarks=landmarks, t=0)


class SpreadEnv:
    """N agents, K = N landmarks, fixed 25-step horizon."""

    act_width = 2

    def __init__(self, n_agents: int = 3, horizon: int = HORIZON, agent_radius: float = AGENT_RADIUS):
        if n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        self.n_agents = n_agents
        self.n_landmarks = n_agents
        self.horizon = horizon
        self.agent_radius = agent_radius
        self.obs_width = obs_width(n_agents, self.n_landmarks)
        self.state_width = state_width(n_agents, self.n_landmarks)
        self.rng = np.random.default_rng()
        self.state: SpreadState | None = None

    @property
    def env_id(self) -> str:
        return f"spread-{self.n_agents}"

    def reset(self, seed: int | None = None) -> tuple[SpreadState, np.ndarray]:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = sample_world(self.rng, self.n_agents, self.n_landmarks)
        return self.state.copy(), observe(self.state)

    def step(self, actions: np.ndarray):
        """Advance one step.

        Returns ``(state, joint_obs, R, per_agent_rewards, done)``.
        """
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        actions = np.asarray(actions, dtype=np.float64).reshape(self.n_agents, 2)
        if np.any(np.abs(actions) > 1.0):
            log.warning("action outside [-1, 1] clamped")
            actions = np.clip(actions, -1.0, 1.0)
        s = self.state
        s.pos, s.vel = integrate(s.pos, s.vel, actions)
        s.t += 1
        total, per_agent = spread_reward(s.pos, s.landmarks, self.agent_radius)
        done = s.t >= self.horizon
        return s.copy(), observe(s), float(total), per_agent, done

    def global_state(self) -> np.ndarray:
        if self.state is None:
            raise RuntimeError("reset() must be called first")
        return global_state(self.state)


class SoloNavEnv(SpreadEnv):
    """One agent, one landmark; observation ``[vel, pos, landmark - pos]``."""

    def __init__(self, horizon: int = HORIZON, agent_radius: float = AGENT_RADIUS):
        super().__init__(1, horizon=horizon, agent_radius=agent_radius)

    @property
    def env_id(self) -> str:
        return "solonav"


def make_env(env_id: str, n_agents: int | None = None) -> SpreadEnv:
    if env_id == "solonav":
        return SoloNavEnv()
    if env_id == "spread":
        return SpreadEnv(n_agents or 3)
    if env_id.startswith("spread-"):
        return SpreadEnv(int(env_id.split("-", 1)[1]))
    raise ValueError(f"unknown environment {env_id!r}")


class BatchedWorlds:
    """Independent copies of one environment stepped in lockstep.

    World ``e`` is reset with ``seeds[e]`` exactly as :meth:`SpreadEnv.reset`
    would, so batched rollouts match per-episode rollouts.
    """

    def __init__(self, env: SpreadEnv, seeds: list[int]):
        states = [sample_world(np.random.default_rng(s), env.n_agents, env.n_landmarks) for s in seeds]
        self.env = env
        self.pos = np.stack([s.pos for s in states])
        self.vel = np.stack([s.vel for s in states])
        self.landmarks = np.stack([s.landmarks for s in states])
        self.t = 0

    def observe(self) -> np.ndarray:
        return _observe(self.pos, self.vel, self.landmarks)

    def global_state(self) -> np.ndarray:
        e = self.pos.shape[0]
        return np.concatenate(
            [self.pos.reshape(e, -1), self.vel.reshape(e, -1), self.landmarks.reshape(e, -1)], axis=1
        )

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, bool]:
        actions = np.clip(actions, -1.0, 1.0)
        self.pos, self.vel = integrate(self.pos, self.vel, actions)
        self.t += 1
        total, _ = spread_reward(self.pos, self.landmarks, self.env.agent_radius)
        return total, self.t >= self.env.horizon
