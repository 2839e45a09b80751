"""Small neural networks with exact reverse-mode gradients, in plain numpy.

Two architectures map a batch of p-dimensional inputs to d outputs:

* a fully connected network whose layers compute ``relu(W a - b)`` with an
  identity final layer (note the minus sign on the bias), and
* a residual 1-d convolutional network: the input is zero-padded across
  channels, passed through a sequence of residual blocks (each a chain of
  stride-one, end-padded convolutions with relu, plus an identity skip),
  and finished by an identity fully connected head on the flattened
  activation.

Stride-one convolution with one-sided padding keeps the spatial length at
``p`` in every layer: output position ``beta`` sees input positions
``beta .. beta+K-1``, positions past the end contributing zero.

Parameters live in one flat float64 vector per network; a layout table maps
names to shaped views.  ``NetworkModel`` bundles either a single d-output
trunk or d independent scalar networks behind one flat parameter vector,
and handles bit-exact checkpointing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

__all__ = [
    "AdamState",
    "CnnSpec",
    "FnnSpec",
    "NetworkModel",
    "adam_step",
    "cnn_backward",
    "cnn_forward",
    "conv1d_backward",
    "conv1d_forward",
    "fnn_backward",
    "fnn_forward",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "cnn_capacity_rule",
    "fnn_capacity_rule",
]

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Architecture specs and parameter layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FnnSpec:
    """Fully connected architecture: ``widths = (p, k_1, ..., k_L, d)``.

    Hidden layers use relu, the final layer is identity.
    """

    widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w < 1 for w in widths):
            raise ValueError(f"widths must be positive, got {widths}")
        object.__setattr__(self, "widths", widths)

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    def layout(self):
        shapes = []
        for i in range(len(self.widths) - 1):
            shapes.append((f"w{i}", (self.widths[i + 1], self.widths[i])))
            shapes.append((f"b{i}", (self.widths[i + 1],)))
        return shapes


@dataclass(frozen=True)
class CnnSpec:
    """Residual convolutional architecture.

    ``blocks`` residual blocks of ``depth`` convolutional layers each, all
    with ``channels`` channels and filters of length ``kernel``, followed by
    an identity fully connected head from the flattened (p * channels)
    activation to ``output_dim``.
    """

    input_dim: int
    output_dim: int
    blocks: int = 1
    depth: int = 1
    channels: int = 2
    kernel: int = 2

    def __post_init__(self):
        if self.blocks < 1 or self.depth < 1 or self.channels < 1:
            raise ValueError("blocks, depth, and channels must all be >= 1")
        if not 2 <= self.kernel <= self.input_dim:
            raise ValueError(
                f"kernel length {self.kernel} must lie in [2, input_dim={self.input_dim}]"
            )
        if self.output_dim < 1:
            raise ValueError("output_dim must be >= 1")

    def layout(self):
        shapes = []
        for m in range(self.blocks):
            for l in range(self.depth):
                shapes.append(
                    (f"w{m}_{l}", (self.kernel, self.channels, self.channels))
                )
                shapes.append((f"b{m}_{l}", (self.channels,)))
        shapes.append(("w_head", (self.output_dim, self.input_dim * self.channels)))
        shapes.append(("b_head", (self.output_dim,)))
        return shapes


def _layout_size(spec):
    return sum(int(np.prod(shape)) for _, shape in spec.layout())


def _unpack(spec, flat):
    flat = np.asarray(flat, dtype=float)
    if flat.size != _layout_size(spec):
        raise ValueError(
            f"parameter vector has {flat.size} entries, layout needs {_layout_size(spec)}"
        )
    views = {}
    offset = 0
    for name, shape in spec.layout():
        size = int(np.prod(shape))
        views[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    return views


# Weight scale at initialization, as a multiple of 1/sqrt(fan_in).  The
# quarter-variance default (0.5, i.e. weights ~ N(0, 1/(4 fan_in))) starts
# the network near a smooth, small-amplitude function; with the rank-based
# objective this measurably improves which optimum training reaches,
# compared with the usual relu gain of sqrt(2).
INIT_GAIN = 0.5


def init_params(spec, rng, gain=INIT_GAIN):
    """Fan-in initialization: weights ~ N(0, gain^2/fan_in), biases zero."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    flat = np.zeros(_layout_size(spec))
    views = _unpack(spec, flat)
    for name, shape in spec.layout():
        if name.startswith("b"):
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 2 else shape[0] * shape[2]
        views[name][...] = rng.standard_normal(shape) * (gain / np.sqrt(fan_in))
    return flat


# ---------------------------------------------------------------------------
# Fully connected forward/backward
# ---------------------------------------------------------------------------

def fnn_forward(spec: FnnSpec, flat, x):
    """Forward pass; returns ``(outputs, cache)`` with cache for backward."""
    x = _as_batch(x, spec.input_dim)
    views = _unpack(spec, flat)
    n_layers = len(spec.widths) - 1
    activations = [x]
    pres = []
    a = x
    for i in range(n_layers):
        pre = a @ views[f"w{i}"].T - views[f"b{i}"]
        pres.append(pre)
        a = np.maximum(pre, 0.0) if i < n_layers - 1 else pre
        activations.append(a)
    return a, (activations, pres)


def fnn_backward(spec: FnnSpec, flat, cache, out_grad):
    """Parameter gradient for :func:`fnn_forward` given d(loss)/d(outputs)."""
    activations, pres = cache
    views = _unpack(spec, flat)
    grad_flat = np.zeros_like(np.asarray(flat, dtype=float))
    grads = _unpack(spec, grad_flat)
    n_layers = len(spec.widths) - 1
    g = np.asarray(out_grad, dtype=float)
    if g.shape != activations[-1].shape:
        raise ValueError(
            f"output gradient shape {g.shape} does not match outputs {activations[-1].shape}"
        )
    for i in range(n_layers - 1, -1, -1):
        gpre = g if i == n_layers - 1 else g * (pres[i] > 0.0)
        grads[f"w{i}"][...] = gpre.T @ activations[i]
        grads[f"b{i}"][...] = -gpre.sum(axis=0)
        if i > 0:
            g = gpre @ views[f"w{i}"]
    return grad_flat


def _as_batch(x, p):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != p:
        raise ValueError(f"expected inputs of width {p}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs contain non-finite values")
    return x


# ---------------------------------------------------------------------------
# Convolution building blocks
# ---------------------------------------------------------------------------

def conv1d_forward(w, x):
    """Stride-one, end-padded 1-d convolution.

    ``w`` has shape (K, H_out, H_in), ``x`` has shape (..., p, H_in); the
    result keeps length p: out[..., beta, j] sums w[k, j, i] * x[..., beta+k, i]
    over taps that stay inside the input.
    """
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    k_len = w.shape[0]
    p = x.shape[-2]
    if k_len > p:
        raise ValueError(f"filter length {k_len} exceeds input length {p}")
    out = np.zeros(x.shape[:-1] + (w.shape[1],))
    for k in range(k_len):
        out[..., : p - k, :] += x[..., k:, :] @ w[k].T
    return out


def conv1d_backward(w, x, out_grad):
    """Gradients of :func:`conv1d_forward` w.r.t. filter and input."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    g = np.asarray(out_grad, dtype=float)
    k_len = w.shape[0]
    p = x.shape[-2]
    grad_w = np.zeros_like(w)
    grad_x = np.zeros_like(x)
    for k in range(k_len):
        grad_w[k] = np.tensordot(g[..., : p - k, :], x[..., k:, :], axes=([0, 1], [0, 1]))
        grad_x[..., k:, :] += g[..., : p - k, :] @ w[k]
    return grad_w, grad_x


def cnn_forward(spec: CnnSpec, flat, x):
    """Forward pass of the residual convolutional network."""
    x = _as_batch(x, spec.input_dim)
    views = _unpack(spec, flat)
    b = x.shape[0]
    z = np.zeros((b, spec.input_dim, spec.channels))
    z[:, :, 0] = x
    block_inputs = []
    layer_inputs = []
    layer_pres = []
    for m in range(spec.blocks):
        block_inputs.append(z)
        inputs_m = []
        pres_m = []
        h = z
        for l in range(spec.depth):
            inputs_m.append(h)
            pre = conv1d_forward(views[f"w{m}_{l}"], h) - views[f"b{m}_{l}"]
            pres_m.append(pre)
            h = np.maximum(pre, 0.0)
        layer_inputs.append(inputs_m)
        layer_pres.append(pres_m)
        z = h + z
    flat_act = z.reshape(b, -1)
    out = flat_act @ views["w_head"].T - views["b_head"]
    return out, (block_inputs, layer_inputs, layer_pres, flat_act)


def cnn_backward(spec: CnnSpec, flat, cache, out_grad):
    """Parameter gradient for :func:`cnn_forward` given d(loss)/d(outputs)."""
    block_inputs, layer_inputs, layer_pres, flat_act = cache
    views = _unpack(spec, flat)
    grad_flat = np.zeros_like(np.asarray(flat, dtype=float))
    grads = _unpack(spec, grad_flat)
    g = np.asarray(out_grad, dtype=float)
    grads["w_head"][...] = g.T @ flat_act
    grads["b_head"][...] = -g.sum(axis=0)
    gz = (g @ views["w_head"]).reshape(block_inputs[0].shape)
    for m in range(spec.blocks - 1, -1, -1):
        skip = gz
        h_grad = gz
        for l in range(spec.depth - 1, -1, -1):
            gpre = h_grad * (layer_pres[m][l] > 0.0)
            grads[f"b{m}_{l}"][...] = -gpre.sum(axis=(0, 1))
            gw, gx = conv1d_backward(views[f"w{m}_{l}"], layer_inputs[m][l], gpre)
            grads[f"w{m}_{l}"][...] = gw
            h_grad = gx
        gz = h_grad + skip
    return grad_flat


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(m=np.zeros(size), v=np.zeros(size), t=0)


def adam_step(state: AdamState, params, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction; returns ``(state, params)``."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient, and state shapes must agree")
    if not np.all(np.isfinite(grad)):
        bad = int(np.sum(~np.isfinite(grad)))
        raise NumericalError(
            f"gradient has {bad} non-finite entries (max abs finite "
            f"{np.max(np.abs(grad[np.isfinite(grad)]), initial=0.0):.3e})"
        )
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m=m, v=v, t=t), new_params


# ---------------------------------------------------------------------------
# Model wrapper
# ---------------------------------------------------------------------------

def _forward(spec, flat, x):
    if isinstance(spec, FnnSpec):
        return fnn_forward(spec, flat, x)
    return cnn_forward(spec, flat, x)


def _backward(spec, flat, cache, gout):
    if isinstance(spec, FnnSpec):
        return fnn_backward(spec, flat, cache, gout)
    return cnn_backward(spec, flat, cache, gout)


class NetworkModel:
    """One or more networks evaluated side by side behind one flat vector.

    With a single member the trunk is shared and its output width is the
    model's output width; with several members (each single-output) the
    outputs are concatenated column-wise.  Initialization is deterministic
    in ``seed``.
    """

    def __init__(self, specs, seed=0, params=None):
        if isinstance(specs, (FnnSpec, CnnSpec)):
            specs = (specs,)
        self.specs = tuple(specs)
        if not self.specs:
            raise ValueError("need at least one network spec")
        self.seed = int(seed)
        self._sizes = [_layout_size(s) for s in self.specs]
        self._offsets = np.concatenate([[0], np.cumsum(self._sizes)])
        if params is None:
            rng = np.random.default_rng(self.seed)
            params = np.concatenate([init_params(s, rng) for s in self.specs])
        params = np.asarray(params, dtype=float)
        if params.size != self._offsets[-1]:
            raise ValueError(
                f"parameter vector has {params.size} entries, layouts need {self._offsets[-1]}"
            )
        self.params = params

    @property
    def n_params(self):
        return int(self._offsets[-1])

    @property
    def input_dim(self):
        return self.specs[0].input_dim

    @property
    def output_dim(self):
        return sum(s.output_dim for s in self.specs)

    def _member_params(self, params=None):
        params = self.params if params is None else params
        return [
            params[self._offsets[i] : self._offsets[i + 1]]
            for i in range(len(self.specs))
        ]

    def forward(self, x):
        """Evaluate all members; returns ``(outputs, cache)``."""
        outs, caches = [], []
        for spec, member in zip(self.specs, self._member_params()):
            y, cache = _forward(spec, member, x)
            outs.append(y)
            caches.append(cache)
        return np.hstack(outs), caches

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, caches, out_grad):
        """Flat parameter gradient given d(loss)/d(outputs)."""
        out_grad = np.asarray(out_grad, dtype=float)
        pieces = []
        col = 0
        for spec, member, cache in zip(self.specs, self._member_params(), caches):
            width = spec.output_dim
            pieces.append(
                _backward(spec, member, cache, out_grad[:, col : col + width])
            )
            col += width
        return np.concatenate(pieces)


def save_checkpoint(path, model: NetworkModel):
    """Write a model to ``path`` (npz); parameters round-trip bit-exactly."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "specs": [_spec_to_dict(s) for s in model.specs],
    }
    with open(path, "wb") as handle:
        np.savez(handle, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 params=model.params)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        params = data["params"].copy()
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
    specs = tuple(_spec_from_dict(d) for d in meta["specs"])
    return NetworkModel(specs, seed=meta["seed"], params=params)


def _spec_to_dict(spec):
    if isinstance(spec, FnnSpec):
        return {"type": "fnn", "widths": list(spec.widths)}
    return {
        "type": "cnn",
        "input_dim": spec.input_dim,
        "output_dim": spec.output_dim,
        "blocks": spec.blocks,
        "depth": spec.depth,
        "channels": spec.channels,
        "kernel": spec.kernel,
    }


def _spec_from_dict(d):
    kind = d.get("type")
    if kind == "fnn":
        return FnnSpec(tuple(d["widths"]))
    if kind == "cnn":
        return CnnSpec(
            input_dim=d["input_dim"],
            output_dim=d["output_dim"],
            blocks=d["blocks"],
            depth=d["depth"],
            channels=d["channels"],
            kernel=d["kernel"],
        )
    raise ValueError(f"unknown spec type {kind!r}")


# ---------------------------------------------------------------------------
# Theory-scale capacity rules
# ---------------------------------------------------------------------------

def fnn_capacity_rule(p, n, beta=1.0, units=1):
    """Width/depth sizing from the approximation-theory analysis of deep
    relu networks for smoothness ``beta``.  Returns ``(width, depth)``.

    These counts grow like ``3**(p+3)`` and are meant for asymptotic
    arguments, not as a practical default; see
    :func:`fccovnet.trainer.default_architecture` for the working preset.
    """
    if p < 1 or n < 1 or units < 1:
        raise ValueError("p, n, and units must be positive")
    width = 3 ** (p + 3) * max(p * int(np.floor(units ** (1.0 / p))), units + 1)
    depth = int(np.ceil(12.0 * n ** (p / (2.0 * (p + 2.0 * beta))) + 14 + 2 * p))
    return width, depth


def cnn_capacity_rule(p, n, beta=1.0):
    """Residual-block count and depth sizing for the convolutional class.

    Blocks scale like ``n**(p / (2 beta + p))`` with logarithmic depth;
    returns ``(blocks, depth)``.  Theory-scale guidance only.
    """
    if p < 1 or n < 1:
        raise ValueError("p and n must be positive")
    blocks = max(1, int(np.floor(n ** (p / (2.0 * beta + p)))))
    depth = max(1, int(np.ceil(np.log(blocks + 1))))
    return blocks, depth
