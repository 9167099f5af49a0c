"""Dense MLPs with hand-written reverse-mode gradients, Adam, and a finite-difference oracle.

Every learnable object in the package (solo policy, gating selector, action
editor, critics, vanilla actors) is an :class:`Mlp`.  Parameters live in one
flat float64 vector; the per-layer weights and biases are views into it, so
optimizers and soft updates operate on a single array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

OUTPUT_ACTIVATIONS = ("identity", "tanh")


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in a public tensor operation."""


class ShapeError(ValueError):
    pass


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    # any NaN/Inf makes the sum non-finite; one reduction beats isfinite().all()
    if not np.isfinite(np.sum(x)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return x


@dataclass
class ForwardCache:
    """Activations recorded by :meth:`Mlp.forward_train` for the backward pass."""

    inputs: list[np.ndarray]  # input to each linear layer
    pre: list[np.ndarray]  # pre-activation of each hidden layer
    output: np.ndarray


class Mlp:
    """Two-hidden-layer ReLU network ``in -> h -> h -> out``.

    ``output`` selects the head: ``"identity"`` (critics, gate, editor) or
    ``"tanh"`` (solo policy and vanilla actors).
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        output: str = "identity",
        rng: np.random.Generator | None = None,
    ) -> None:
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) != 4:
            raise ShapeError(f"an Mlp has exactly two hidden layers, got sizes {sizes}")
        if any(s <= 0 for s in sizes):
            raise ShapeError(f"layer sizes must be positive, got {sizes}")
        if output not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output!r}")
        self.layer_sizes = sizes
        self.output = output
        self.flat = np.zeros(param_count(sizes), dtype=np.float64)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = self.flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.flat[offset : offset + fan_out]
            offset += fan_out
            self.weights.append(w)
            self.biases.append(b)
        if rng is not None:
            self.init_params(rng)

    @property
    def in_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return self.flat.size

    def init_params(self, rng: np.random.Generator) -> None:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        for w in self.weights:
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
        for b in self.biases:
            b[...] = 0.0

    def copy(self) -> "Mlp":
        other = Mlp(self.layer_sizes, self.output)
        other.flat[...] = self.flat
        return other

    def load_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.flat.shape:
            raise ShapeError(f"expected {self.flat.shape} parameters, got {values.shape}")
        check_finite("parameters", values)
        self.flat[...] = values

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_size:
            raise ShapeError(f"expected input of shape (batch, {self.in_size}), got {x.shape}")
        return check_finite("mlp input", x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Inference pass; nothing is cached."""
        h = self._check_input(x)
        w0, w1, w2 = self.weights
        b0, b1, b2 = self.biases
        h = np.maximum(h @ w0 + b0, 0.0)
        h = np.maximum(h @ w1 + b1, 0.0)
        out = h @ w2 + b2
        if self.output == "tanh":
            out = np.tanh(out)
        return out

    def forward_train(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        x = self._check_input(x)
        w0, w1, w2 = self.weights
        b0, b1, b2 = self.biases
        z0 = x @ w0 + b0
        h0 = np.maximum(z0, 0.0)
        z1 = h0 @ w1 + b1
        h1 = np.maximum(z1, 0.0)
        out = h1 @ w2 + b2
        if self.output == "tanh":
            out = np.tanh(out)
        return out, ForwardCache(inputs=[x, h0, h1], pre=[z0, z1], output=out)

    def backward(
        self,
        cache: ForwardCache | None,
        upstream: np.ndarray,
        need_input_grad: bool = True,
        need_param_grad: bool = True,
    ) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Reverse-mode pass for the scalar ``sum(upstream * output)``.

        Returns ``(flat parameter gradient, input gradient)``; either may be
        skipped (returned as ``None``) when the caller does not need it.
        """
        if cache is None:
            raise RuntimeError("backward requires a cache from forward_train")
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != cache.output.shape:
            raise ShapeError(
                f"upstream gradient shape {upstream.shape} != output shape {cache.output.shape}"
            )
        check_finite("upstream gradient", upstream)
        g = upstream
        if self.output == "tanh":
            g = g * (1.0 - cache.output**2)
        grad = np.empty_like(self.flat) if need_param_grad else None
        gw: list[np.ndarray] = []
        gb: list[np.ndarray] = []
        if grad is not None:
            offset = 0
            for w in self.weights:
                gw.append(grad[offset : offset + w.size].reshape(w.shape))
                offset += w.size
                gb.append(grad[offset : offset + w.shape[1]])
                offset += w.shape[1]
        for layer in (2, 1, 0):
            if grad is not None:
                np.matmul(cache.inputs[layer].T, g, out=gw[layer])
                np.sum(g, axis=0, out=gb[layer])
            if layer == 0 and not need_input_grad:
                return grad, None
            g = g @ self.weights[layer].T
            if layer > 0:
                g = g * (cache.pre[layer - 1] > 0.0)
        return grad, g


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def mlp_forward(net: Mlp, x: np.ndarray, train: bool = False):
    """Functional wrapper: returns the output, or ``(output, cache)`` when ``train``."""
    return net.forward_train(x) if train else net.forward(x)


def mlp_backward(net: Mlp, cache: ForwardCache | None, upstream: np.ndarray):
    return net.backward(cache, upstream)


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for one flat parameter vector."""

    lr: float
    n_params: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.m = np.zeros(self.n_params, dtype=np.float64)
        self.v = np.zeros(self.n_params, dtype=np.float64)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> None:
    """Apply one Adam update to ``params`` in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError("parameter, gradient and moment shapes disagree")
    check_finite("gradient", grads)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"function is non-finite near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
