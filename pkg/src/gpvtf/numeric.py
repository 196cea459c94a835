"""Dense float64 primitives: products, dense layers and their gradients, Xavier init, Adam.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError

ACTIVATIONS = ("relu", "sigmoid", "linear")

# logits beyond this are clipped so sigmoid stays strictly inside (0, 1)
LOGIT_CLIP = 30.0


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def xavier_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot init on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]."""
    if fan_in < 1 or fan_out < 1:
        raise ParameterError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, -LOGIT_CLIP, LOGIT_CLIP)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "sigmoid":
        return sigmoid(pre)
    if activation == "linear":
        return pre
    raise ParameterError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def _activation_grad(pre: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (pre > 0).astype(np.float64)
    if activation == "sigmoid":
        return out * (1.0 - out) * (np.abs(pre) < LOGIT_CLIP)
    return np.ones_like(pre)


def _check_layer(inputs, weights, bias):
    inputs, weights = as_matrix(inputs), as_matrix(weights)
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if inputs.shape[1] != weights.shape[0]:
        raise DimensionError(f"input {inputs.shape} does not match weights {weights.shape}")
    if bias.shape[0] != weights.shape[1]:
        raise DimensionError(f"bias of length {bias.shape[0]} does not match weights {weights.shape}")
    return inputs, weights, bias


def dense_forward(inputs, weights, bias, activation: str = "linear") -> np.ndarray:
    inputs, weights, bias = _check_layer(inputs, weights, bias)
    return _activate(inputs @ weights + bias, activation)


def _forward_raw(inputs, weights, bias, activation):
    # unchecked path for network internals; returns (pre-activation, output)
    pre = inputs @ weights
    pre += bias
    return pre, _activate(pre, activation)


def _backward_raw(inputs, weights, pre, out, activation, upstream, input_grad=True):
    if activation == "linear":
        delta = upstream
    else:
        delta = upstream * _activation_grad(pre, out, activation)
    return inputs.T @ delta, delta.sum(axis=0), delta @ weights.T if input_grad else None


@dataclass
class LayerGrads:
    weights: np.ndarray
    bias: np.ndarray


def dense_backward(inputs, weights, bias, activation: str, upstream) -> tuple[LayerGrads, np.ndarray]:
    """Gradients of ``dense_forward`` given dL/d(output).

    Returns the parameter gradients and dL/d(inputs).
    """
    inputs, weights, bias = _check_layer(inputs, weights, bias)
    upstream = as_matrix(upstream)
    if upstream.shape != (inputs.shape[0], weights.shape[1]):
        raise DimensionError(
            f"upstream gradient {upstream.shape} does not match output {(inputs.shape[0], weights.shape[1])}"
        )
    pre = inputs @ weights + bias
    out = _activate(pre, activation)
    delta = upstream * _activation_grad(pre, out, activation)
    grads = LayerGrads(weights=inputs.T @ delta, bias=delta.sum(axis=0))
    return grads, delta @ weights.T


@dataclass
class AdamState:
    """Moment buffers for one parameter array. ``step`` counts completed updates."""

    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def like(cls, params: np.ndarray, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        return cls(np.zeros_like(params), np.zeros_like(params), lr, beta1, beta2, eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """Bias-corrected Adam update. Mutates ``state`` and returns the new parameters."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise DimensionError(
            f"params {params.shape}, grads {grads.shape} and state {state.m.shape} must share a shape"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    corr1 = 1.0 - state.beta1 ** state.step
    corr2 = 1.0 - state.beta2 ** state.step
    denom = np.sqrt(state.v / corr2)
    denom += state.eps
    return params - (state.lr / corr1) * state.m / denom


@dataclass
class Optimizer:
    """Adam over a named dict of parameter arrays, updated in place."""

    lr: float
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        from ._kernels import adam_inplace

        for name, g in grads.items():
            if name not in self.states:
                self.states[name] = AdamState.like(params[name], self.lr)
                params[name] = np.ascontiguousarray(params[name], dtype=np.float64)
            st, p = self.states[name], params[name]
            g = np.ascontiguousarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise DimensionError(f"{name}: gradient {g.shape} does not match parameters {p.shape}")
            st.step += 1
            # same arithmetic as adam_step, fused into one pass over the buffers
            adam_inplace(p.reshape(-1), g.reshape(-1), st.m.reshape(-1), st.v.reshape(-1),
                         st.lr, st.beta1, st.beta2, st.eps, st.step)

    @property
    def steps(self) -> int:
        return max((s.step for s in self.states.values()), default=0)
