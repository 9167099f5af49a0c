"""Policy fusion: candidate solo actions, gating selector, bounded editor, clip.

Per agent, the fused action is

    a = clip(gate(candidates) + L * tanh(editor(obs) / L))

where the candidates are the frozen solo policy applied to every solo view of
the agent's observation.  Gating is a straight-through Gumbel-Softmax in the
learned mode; RG/ERG/FG are rule-based ablations.  Everything here is
batched over a leading axis so acting, target computation and actor updates
share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decomp import ObservationLayout, build_solo_views
from .demos import SoloPolicy
from .numerics import Mlp

GATING_MODES = ("learned", "rg", "erg", "fg")
CLIP_MODES = ("tanh", "norm", "hard")


def candidate_actions(solo: SoloPolicy, views: np.ndarray) -> np.ndarray:
    """Solo action for every view: ``(..., G, obs_w) -> (..., G, act_w)``."""
    views = np.asarray(views, dtype=np.float64)
    if views.shape[-1] != solo.obs_width:
        raise ValueError(f"view width {views.shape[-1]} != solo input width {solo.obs_width}")
    return solo(views)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    # open interval keeps both logs finite
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).eps)
    return -np.log(-np.log(u))


class GatingSelector:
    def __init__(self, obs_width: int, n_views: int, hidden: int, mode: str = "learned",
                 temperature: float = 1.0, rng: np.random.Generator | None = None):
        if mode not in GATING_MODES:
            raise ValueError(f"unknown gating mode {mode!r}")
        if temperature <= 0:
            raise ValueError("gating temperature must be positive")
        if n_views < 1:
            raise ValueError("gating needs at least one candidate")
        self.net = Mlp([obs_width, hidden, hidden, n_views], rng=rng)
        self.mode = mode
        self.temperature = float(temperature)
        self.n_views = n_views


class ActionEditor:
    def __init__(self, obs_width: int, act_width: int, hidden: int, strength: float,
                 rng: np.random.Generator | None = None):
        if strength < 0:
            raise ValueError("editor strength L must be >= 0")
        self.net = Mlp([obs_width, hidden, hidden, act_width], rng=rng)
        self.strength = float(strength)


@dataclass
class GateResult:
    action: np.ndarray  # (B, act_w), always one candidate row per element
    weights: np.ndarray  # (B, G) soft weights (one-hot for rule-based modes)
    index: np.ndarray  # (B,)
    logits: np.ndarray | None = None
    cache: object = None


def gate_select(
    gate: GatingSelector,
    obs: np.ndarray,
    candidates: np.ndarray,
    rng: np.random.Generator | None = None,
    train: bool = False,
    agent_index: int = 0,
    episode_index: np.ndarray | None = None,
    noise: np.ndarray | None = None,
    keep_cache: bool = False,
) -> GateResult:
    """Pick one candidate per batch element.

    ``noise`` overrides the Gumbel draw (tests pin it to zero).  In eval mode
    the learned gate is a noise-free argmax of its logits.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    candidates = np.asarray(candidates, dtype=np.float64).reshape(len(obs), -1, candidates.shape[-1])
    b, g = candidates.shape[:2]
    if g == 0:
        raise ValueError("empty candidate set")
    if g != gate.n_views:
        raise ValueError(f"{g} candidates but the gate emits {gate.n_views} logits")
    rows = np.arange(b)
    if gate.mode == "learned":
        if keep_cache:
            logits, cache = gate.net.forward_train(obs)
        else:
            logits, cache = gate.net.forward(obs), None
        if noise is None:
            noise = gumbel(rng, logits.shape) if train else np.zeros_like(logits)
        weights = softmax((logits + noise) / gate.temperature)
        index = np.argmax(weights, axis=-1)
        return GateResult(candidates[rows, index], weights, index, logits, cache)
    if gate.mode == "rg":
        index = rng.integers(0, g, size=b)
    elif gate.mode == "erg":
        if episode_index is None:
            raise ValueError("episode-wise gating needs the per-episode index")
        index = np.broadcast_to(np.asarray(episode_index), (b,)).astype(np.int64)
    else:  # fg
        index = np.full(b, agent_index % g, dtype=np.int64)
    weights = np.zeros((b, g))
    weights[rows, index] = 1.0
    return GateResult(candidates[rows, index], weights, index)


def squash_residual(raw: np.ndarray, strength: float) -> np.ndarray:
    if strength == 0:
        return np.zeros_like(np.asarray(raw, dtype=np.float64))
    return strength * np.tanh(np.asarray(raw, dtype=np.float64) / strength)


def edit_action(editor: ActionEditor, obs: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if editor.strength == 0:
        return np.zeros((len(obs), editor.net.out_size))
    return squash_residual(editor.net.forward(obs), editor.strength)


def fuse(selected: np.ndarray, delta: np.ndarray, mode: str, strength: float) -> np.ndarray:
    """Combine the selected solo action with the residual and bound the result."""
    x = np.asarray(selected, dtype=np.float64) + np.asarray(delta, dtype=np.float64)
    if mode == "tanh":
        # no residual means nothing can overflow; the solo action passes through
        return np.tanh(x) if strength > 0 else x
    if mode == "norm":
        return x / (strength + 1.0)
    if mode == "hard":
        return np.clip(x, -1.0, 1.0)
    raise ValueError(f"unknown clip mode {mode!r}")


def fuse_derivative(x: np.ndarray, mode: str, strength: float) -> np.ndarray:
    """Elementwise derivative of :func:`fuse` with respect to ``selected + delta``."""
    x = np.asarray(x, dtype=np.float64)
    if mode == "tanh":
        return 1.0 - np.tanh(x) ** 2 if strength > 0 else np.ones_like(x)
    if mode == "norm":
        return np.full_like(x, 1.0 / (strength + 1.0))
    if mode == "hard":
        return (np.abs(x) < 1.0).astype(np.float64)
    raise ValueError(f"unknown clip mode {mode!r}")


@dataclass
class FusedCache:
    gate: GateResult
    candidates: np.ndarray
    editor_cache: object
    editor_raw: np.ndarray | None
    pre_clip: np.ndarray


class FusedPolicy:
    """One agent's fused policy around the shared, frozen solo policy."""

    def __init__(
        self,
        solo: SoloPolicy,
        layout: ObservationLayout,
        agent_index: int,
        hidden: int,
        strength: float = 0.0,
        gating: str = "learned",
        clip: str = "tanh",
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
    ):
        if clip not in CLIP_MODES:
            raise ValueError(f"unknown clip mode {clip!r}")
        if layout.solo_view_width != solo.obs_width:
            raise ValueError("solo view width does not match the solo policy input")
        self.solo = solo
        self.layout = layout
        self.agent_index = agent_index
        self.clip = clip
        self.gate = GatingSelector(layout.obs_width, layout.n_views, hidden, gating, temperature, rng)
        self.editor = ActionEditor(layout.obs_width, solo.act_width, hidden, strength, rng)
        self.episode_index: np.ndarray | None = None

    @property
    def strength(self) -> float:
        return self.editor.strength

    @property
    def nets(self) -> list[Mlp]:
        return [self.gate.net, self.editor.net]

    def trainable(self) -> list[Mlp]:
        """Networks whose parameters can change the action."""
        nets = []
        if self.gate.mode == "learned":
            nets.append(self.gate.net)
        if self.strength > 0:
            nets.append(self.editor.net)
        return nets

    def candidates(self, obs: np.ndarray) -> np.ndarray:
        return candidate_actions(self.solo, build_solo_views(obs, self.layout))

    def begin_episode(self, rng: np.random.Generator, n_worlds: int = 1) -> None:
        """Episode-wise random gating draws its fixed index here."""
        if self.gate.mode == "erg":
            self.episode_index = rng.integers(0, self.gate.n_views, size=n_worlds)

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None, train: bool = False,
            candidates: np.ndarray | None = None):
        """Fused actions for a batch of observations plus diagnostics."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if candidates is None:
            candidates = self.candidates(obs)
        sel = gate_select(self.gate, obs, candidates, rng, train, self.agent_index, self.episode_index)
        delta = edit_action(self.editor, obs)
        action = fuse(sel.action, delta, self.clip, self.strength)
        diag = {"index": sel.index, "edit_norm": np.linalg.norm(delta, axis=-1), "weights": sel.weights,
                "logits": sel.logits}
        return action, diag

    def forward_train(self, obs: np.ndarray, candidates: np.ndarray, rng: np.random.Generator | None,
                      noise: np.ndarray | None = None) -> tuple[np.ndarray, FusedCache]:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        sel = gate_select(self.gate, obs, candidates, rng, True, self.agent_index, self.episode_index,
                          noise=noise, keep_cache=True)
        if self.strength > 0:
            raw, ecache = self.editor.net.forward_train(obs)
            delta = squash_residual(raw, self.strength)
        else:
            raw, ecache = None, None
            delta = np.zeros_like(sel.action)
        pre = sel.action + delta
        return fuse(sel.action, delta, self.clip, self.strength), FusedCache(
            sel, np.asarray(candidates, dtype=np.float64), ecache, raw, pre
        )

    def backward(self, cache: FusedCache, grad_action: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for the gate and editor networks given ``dLoss/daction``.

        The gate gradient follows the straight-through rule: the forward
        value is the hard pick, the derivative is that of the soft mixture
        ``sum_k w_k * candidate_k``.
        """
        g_pre = grad_action * fuse_derivative(cache.pre_clip, self.clip, self.strength)
        grads = {"gate": np.zeros_like(self.gate.net.flat), "editor": np.zeros_like(self.editor.net.flat)}
        sel = cache.gate
        if self.gate.mode == "learned":
            g_w = np.einsum("bga,ba->bg", cache.candidates, g_pre)
            w = sel.weights
            g_z = w * (g_w - np.sum(w * g_w, axis=-1, keepdims=True))
            grads["gate"], _ = self.gate.net.backward(sel.cache, g_z / self.gate.temperature,
                                                      need_input_grad=False)
        if self.strength > 0:
            t = np.tanh(cache.editor_raw / self.strength)
            grads["editor"], _ = self.editor.net.backward(cache.editor_cache, g_pre * (1.0 - t * t),
                                                          need_input_grad=False)
        return grads

    def copy(self) -> "FusedPolicy":
        other = FusedPolicy.__new__(FusedPolicy)
        other.solo = self.solo
        other.layout = self.layout
        other.agent_index = self.agent_index
        other.clip = self.clip
        other.gate = GatingSelector.__new__(GatingSelector)
        other.gate.__dict__.update(self.gate.__dict__)
        other.gate.net = self.gate.net.copy()
        other.editor = ActionEditor.__new__(ActionEditor)
        other.editor.__dict__.update(self.editor.__dict__)
        other.editor.net = self.editor.net.copy()
        other.episode_index = None
        return other


def fused_act(policy: FusedPolicy, obs: np.ndarray, rng: np.random.Generator | None = None,
              train: bool = False):
    """Views -> candidates -> gate -> editor -> clip for one agent."""
    return policy.act(obs, rng, train)


def gating_entropy(logits: np.ndarray | None) -> float:
    if logits is None:
        return 0.0
    p = softmax(np.atleast_2d(logits))
    return float(np.mean(-np.sum(p * np.log(np.maximum(p, 1e-300)), axis=-1)))
