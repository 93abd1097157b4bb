"""Fixed-topology multilayer perceptrons in float64 numpy.

Every network in the package (encoder, decoder, latent actor, Q and V
critics) is an instance of :class:`MlpSpec` with its parameters held in a
:class:`ParamSet`. Parameters live in one flat vector so that Adam, soft
target updates and checkpointing all operate on plain arrays.

Weights are stored input-major (``W`` has shape ``(fan_in, fan_out)``) and
inputs are row batches, so a layer is ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeError(ValueError):
    """Raised when an array does not match the network it is fed to."""


class NonFiniteError(FloatingPointError):
    """Raised when NaN/Inf would enter a parameter vector."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if len(self.hidden_dims) < 1:
            raise ValueError("an MLP needs at least one hidden layer")
        if min((self.input_dim, self.output_dim, *self.hidden_dims)) < 1:
            raise ValueError(f"all layer widths must be >= 1, got {self}")
        if self.hidden_activation not in ("relu", "tanh"):
            raise ValueError(f"hidden_activation must be relu or tanh, not {self.hidden_activation!r}")
        if self.output_activation not in ("identity", "tanh"):
            raise ValueError(f"output_activation must be identity or tanh, not {self.output_activation!r}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @cached_property
    def layout(self) -> tuple[tuple[int, int, int, int], ...]:
        """Per layer: (weight offset, fan_in, fan_out, bias offset)."""
        out = []
        offset = 0
        sizes = self.sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w_off = offset
            offset += fan_in * fan_out
            out.append((w_off, fan_in, fan_out, offset))
            offset += fan_out
        return tuple(out)

    @cached_property
    def n_params(self) -> int:
        _, fan_in, fan_out, b_off = self.layout[-1]
        return b_off + fan_out

    def unpack(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``[(W, b), ...]`` into a flat parameter (or gradient) vector."""
        return [
            (flat[w:w + i * o].reshape(i, o), flat[b:b + o])
            for w, i, o, b in self.layout
        ]


@dataclass
class ParamSet:
    """Flat parameters of one network plus its Adam state."""

    flat: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    def __post_init__(self):
        if not (self.flat.shape == self.m.shape == self.v.shape and self.flat.ndim == 1):
            raise ShapeError(
                f"params/moments must be equal-length vectors: {self.flat.shape}, {self.m.shape}, {self.v.shape}"
            )

    @classmethod
    def from_flat(cls, flat) -> "ParamSet":
        flat = np.array(flat, dtype=np.float64)
        return cls(flat, np.zeros_like(flat), np.zeros_like(flat), 0)

    def copy(self) -> "ParamSet":
        return ParamSet(self.flat.copy(), self.m.copy(), self.v.copy(), self.step)

    def bitwise_equal(self, other: "ParamSet") -> bool:
        return (
            self.step == other.step
            and self.flat.tobytes() == other.flat.tobytes()
            and self.m.tobytes() == other.m.tobytes()
            and self.v.tobytes() == other.v.tobytes()
        )


@dataclass
class Tape:
    """Activations cached by :func:`mlp_forward` for the backward pass."""

    spec: MlpSpec
    source: np.ndarray  # the exact flat array the forward pass read
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer
    output: np.ndarray
    squeeze: bool = field(default=False)


@dataclass
class GradBundle:
    param_grads: np.ndarray
    input_grad: np.ndarray


def _as_batch(spec: MlpSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected input of width {spec.input_dim}, got shape {x.shape}")
    return x, squeeze


def _check_params(spec: MlpSpec, params: ParamSet) -> None:
    if params.flat.shape != (spec.n_params,):
        raise ShapeError(f"ParamSet has {params.flat.size} entries, spec needs {spec.n_params}")


def mlp_forward(spec: MlpSpec, params: ParamSet, x) -> tuple[np.ndarray, Tape]:
    """Evaluate the network on one input vector or a row batch."""
    _check_params(spec, params)
    h, squeeze = _as_batch(spec, x)
    layers = spec.unpack(params.flat)
    inputs, pre = [], []
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        act = spec.output_activation if k == last else spec.hidden_activation
        if act == "relu":
            h = np.maximum(z, 0.0)
        elif act == "tanh":
            h = np.tanh(z)
        else:
            h = z
    tape = Tape(spec, params.flat, inputs, pre, h, squeeze)
    return (h[0] if squeeze else h), tape


def mlp_backward(spec: MlpSpec, params: ParamSet, tape: Tape, upstream) -> GradBundle:
    """Vector-Jacobian product of the forward pass recorded in ``tape``.

    ``upstream`` is dL/dy with the same shape as the forward output. Parameter
    gradients are summed over the batch; the input gradient keeps the batch
    shape.
    """
    if tape.spec != spec or tape.source is not params.flat:
        raise ShapeError("tape was recorded with different parameters")
    g = np.asarray(upstream, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.output.shape:
        raise ShapeError(f"upstream shape {g.shape} does not match output {tape.output.shape}")

    grads = np.zeros(spec.n_params)
    gviews = spec.unpack(grads)
    layers = spec.unpack(params.flat)
    last = len(layers) - 1
    for k in range(last, -1, -1):
        act = spec.output_activation if k == last else spec.hidden_activation
        if act == "relu":
            g = g * (tape.pre[k] > 0.0)
        elif act == "tanh":
            y = tape.output if k == last else tape.inputs[k + 1]
            g = g * (1.0 - y * y)
        gw, gb = gviews[k]
        gw[...] = tape.inputs[k].T @ g
        gb[...] = g.sum(axis=0)
        g = g @ layers[k][0].T
    return GradBundle(grads, g[0] if tape.squeeze else g)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    flat = np.zeros(spec.n_params)
    for (w, _), (_, fan_in, fan_out, _) in zip(spec.unpack(flat), spec.layout):
        bound = np.sqrt(1.0 / fan_in)
        w[...] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return ParamSet.from_flat(flat)


def adam_step(
    params: ParamSet,
    grads: np.ndarray,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamSet:
    """One bias-corrected Adam update; returns a new ParamSet."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.flat.shape:
        raise ShapeError(f"gradient shape {grads.shape} != params {params.flat.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite gradient passed to adam_step")
    t = params.step + 1
    m = beta1 * params.m + (1.0 - beta1) * grads
    v = beta2 * params.v + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    flat = params.flat - lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(flat)):
        raise NonFiniteError("adam_step produced non-finite parameters")
    return ParamSet(flat, m, v, t)


def soft_update(target: ParamSet, online: ParamSet, tau: float) -> ParamSet:
    """Polyak averaging ``(1 - tau) * target + tau * online``.

    Written as ``target + tau * (online - target)`` so identical inputs stay
    bitwise identical; ``tau == 1`` copies exactly.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if target.flat.shape != online.flat.shape:
        raise ShapeError(f"target {target.flat.shape} and online {online.flat.shape} differ")
    if tau == 1.0:
        flat = online.flat.copy()
    else:
        flat = target.flat + tau * (online.flat - target.flat)
    return ParamSet(flat, target.m, target.v, target.step)
