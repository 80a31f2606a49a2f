"""Dense-network engine: flat float64 parameters, manual backprop, Adam.

Everything the learners differentiate goes through this module, so the
gradients are exact reverse-mode derivatives and are cross-checked against
central finite differences in the test suite.  The rectifier and the
absolute-value activation both use subgradient 0 at the kink.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

ACT_RELU = "relu"
ACT_IDENTITY = "identity"
ACT_ABS = "abs"
ACTIVATIONS = (ACT_RELU, ACT_IDENTITY, ACT_ABS)


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = ACT_RELU


@dataclass
class ParameterVector:
    """Flat parameter storage plus the layer layout that interprets it."""

    layers: tuple[LayerSpec, ...]
    values: np.ndarray

    def layer_views(self):
        """(spec, weight matrix, bias) views aliasing the flat storage."""
        views = getattr(self, "_views", None)
        if views is None or views[0] is not self.values:
            slices = []
            offset = 0
            for spec in self.layers:
                n = spec.in_width * spec.out_width
                w = self.values[offset:offset + n].reshape(spec.in_width,
                                                           spec.out_width)
                b = self.values[offset + n:offset + n + spec.out_width]
                slices.append((spec, w, b))
                offset += n + spec.out_width
            views = (self.values, slices)
            object.__setattr__(self, "_views", views)
        return views[1]


def _validate_layers(layers) -> tuple[LayerSpec, ...]:
    layers = tuple(layers)
    if not layers:
        raise ValueError("empty layer spec")
    for spec in layers:
        if spec.in_width < 1 or spec.out_width < 1:
            raise ValueError("layer widths must be positive")
        if spec.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {spec.activation!r}")
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_width != nxt.in_width:
            raise ValueError("consecutive layer widths do not match")
    return layers


def param_count(layers) -> int:
    return sum(s.in_width * s.out_width + s.out_width for s in layers)


def init_params(layers, rng: np.random.Generator) -> ParameterVector:
    """Uniform fan-based weight init in +-sqrt(6/(in+out)); biases zero."""
    layers = _validate_layers(layers)
    values = np.zeros(param_count(layers), dtype=np.float64)
    offset = 0
    for spec in layers:
        n = spec.in_width * spec.out_width
        bound = np.sqrt(6.0 / (spec.in_width + spec.out_width))
        values[offset:offset + n] = rng.uniform(-bound, bound, size=n)
        offset += n + spec.out_width
    return ParameterVector(layers, values)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == ACT_RELU:
        return np.maximum(z, 0.0)
    if activation == ACT_ABS:
        return np.abs(z)
    return z


def forward(params: ParameterVector, x) -> np.ndarray:
    """Apply the network to a single vector or a (batch, features) matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != params.layers[0].in_width:
        raise ValueError(f"input width {a.shape[1]} != "
                         f"{params.layers[0].in_width}")
    for spec, w, b in params.layer_views():
        a = _activate(a @ w + b, spec.activation)
    return a[0] if single else a


def forward_backward(params: ParameterVector, x, upstream):
    """Forward pass plus exact gradients of <upstream, output>.

    Returns (output, flat parameter gradient, input gradient).  For batched
    inputs the parameter gradient sums over the batch rows.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    u = upstream[None, :] if single else upstream
    if a.shape[1] != params.layers[0].in_width:
        raise ValueError(f"input width {a.shape[1]} != "
                         f"{params.layers[0].in_width}")
    if u.shape != (a.shape[0], params.layers[-1].out_width):
        raise ValueError("upstream gradient shape mismatch")

    slices = params.layer_views()
    acts = [a]
    pres = []
    for spec, w, b in slices:
        z = acts[-1] @ w + b
        pres.append(z)
        acts.append(_activate(z, spec.activation))
    out = acts[-1]
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite activation in forward pass")

    grad = np.zeros_like(params.values)
    delta = u
    offset = len(params.values)
    for idx in range(len(slices) - 1, -1, -1):
        spec, w, _ = slices[idx]
        if spec.activation == ACT_RELU:
            delta = delta * (pres[idx] > 0.0)
        elif spec.activation == ACT_ABS:
            delta = delta * np.sign(pres[idx])
        n = spec.in_width * spec.out_width
        offset -= n + spec.out_width
        grad[offset:offset + n] = (acts[idx].T @ delta).ravel()
        grad[offset + n:offset + n + spec.out_width] = delta.sum(axis=0)
        delta = delta @ w.T
    if not np.isfinite(grad).all():
        raise FloatingPointError("non-finite gradient")
    input_grad = delta[0] if single else delta
    return out[0] if single else out, grad, input_grad


def copy_to_target(params: ParameterVector) -> ParameterVector:
    return ParameterVector(params.layers, params.values.copy())


@dataclass
class OptimizerState:
    """Adam moments plus hyperparameters; gradients are norm-clipped first."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0


def init_optimizer(params: ParameterVector, lr: float = 5e-4,
                   clip_norm: float = 10.0) -> OptimizerState:
    size = len(params.values)
    return OptimizerState(m=np.zeros(size), v=np.zeros(size), lr=lr,
                          clip_norm=clip_norm)


def optimizer_step(params: ParameterVector, gradient: np.ndarray,
                   opt: OptimizerState) -> tuple[ParameterVector, OptimizerState]:
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.values.shape:
        raise ValueError("gradient shape mismatch")
    if not np.isfinite(gradient).all():
        raise ValueError("non-finite gradient")
    norm = float(np.linalg.norm(gradient))
    if opt.clip_norm > 0 and norm > opt.clip_norm:
        gradient = gradient * (opt.clip_norm / norm)
    t = opt.step_count + 1
    m = opt.beta1 * opt.m + (1.0 - opt.beta1) * gradient
    v = opt.beta2 * opt.v + (1.0 - opt.beta2) * gradient * gradient
    m_hat = m / (1.0 - opt.beta1 ** t)
    v_hat = v / (1.0 - opt.beta2 ** t)
    values = params.values - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return (ParameterVector(params.layers, values),
            replace(opt, m=m, v=v, step_count=t))


# ---- binary serialization (used by the checkpoint files) -------------------

_ACT_CODES = {ACT_RELU: 0, ACT_IDENTITY: 1, ACT_ABS: 2}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}


def encode_params(params: ParameterVector) -> bytes:
    """Self-describing block: layer table then little-endian float64 values."""
    out = [struct.pack("<I", len(params.layers))]
    for spec in params.layers:
        out.append(struct.pack("<IIB", spec.in_width, spec.out_width,
                               _ACT_CODES[spec.activation]))
    out.append(params.values.astype("<f8").tobytes())
    return b"".join(out)


def decode_params(buf: bytes, offset: int = 0) -> tuple[ParameterVector, int]:
    """Inverse of encode_params; returns the vector and the next offset."""
    (n_layers,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    layers = []
    for _ in range(n_layers):
        in_w, out_w, code = struct.unpack_from("<IIB", buf, offset)
        offset += 9
        layers.append(LayerSpec(in_w, out_w, _CODE_ACTS[code]))
    layers = tuple(layers)
    count = param_count(layers)
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).copy()
    if len(values) != count:
        raise ValueError("truncated parameter block")
    return ParameterVector(layers, values), offset + 8 * count
