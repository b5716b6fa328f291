"""Differentiable layers shared by the DeepBind baseline and DeeperBind.

Every forward function accepts a single example or a leading batch axis.
Feature maps are laid out filters x positions (``K x T``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Variable

GATES = ("f", "i", "g", "o")


def _uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Variable:
    s = 1.0 / np.sqrt(fan_in)
    return Variable(rng.uniform(-s, s, size=shape), trainable=True, name=name)


def _zeros(shape, name: str, fill: float = 0.0) -> Variable:
    return Variable(np.full(shape, fill), trainable=True, name=name)


@dataclass
class ConvLayer:
    """K motif detectors, each a channels x width weight matrix, stride 1."""

    kernels: Variable  # (K, C, m)
    biases: Variable  # (K,)

    @classmethod
    def init(cls, n_filters: int, width: int, rng: np.random.Generator, channels: int = 4) -> "ConvLayer":
        if n_filters < 1 or width < 1:
            raise ValueError(f"need n_filters >= 1 and width >= 1, got {n_filters}, {width}")
        return cls(_uniform(rng, (n_filters, channels, width), channels * width, "conv.kernels"),
                   _zeros((n_filters,), "conv.biases"))

    @property
    def n_filters(self) -> int:
        return self.kernels.shape[0]

    @property
    def width(self) -> int:
        return self.kernels.shape[2]

    def parameters(self) -> list[Variable]:
        return [self.kernels, self.biases]


def conv_forward(x, layer: ConvLayer, padding: str = "valid") -> Variable:
    """Convolve ``x`` (C x L or B x C x L) with every kernel.

    ``valid`` yields L - m + 1 positions; ``same`` zero-pads (m-1)//2 on the
    left and the remainder on the right, yielding L positions.
    """
    x = ad._as_var(x)
    K, C, m = layer.kernels.shape
    if x.value.ndim not in (2, 3) or x.shape[-2] != C:
        raise ShapeError(f"conv input must be {C} x L (optionally batched), got {x.shape}")
    L = x.shape[-1]
    if padding == "valid":
        if L < m:
            raise ShapeError(f"sequence length {L} is shorter than kernel width {m}")
        left = right = 0
    elif padding == "same":
        left = (m - 1) // 2
        right = m - 1 - left
    else:
        raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
    cols = ad.windows(x, m, left, right)  # (..., T, C*m)
    fm = ad.add(ad.matmul(cols, ad.reshape(layer.kernels, (K, C * m))), layer.biases)  # (..., T, K)
    axes = (1, 0) if fm.value.ndim == 2 else (0, 2, 1)
    return ad.transpose(fm, axes)


def rect(featmap, thresholds) -> Variable:
    """max(0, featmap[k, t] - threshold[k])."""
    featmap = ad._as_var(featmap)
    thresholds = ad._as_var(thresholds)
    K = featmap.shape[-2]
    if thresholds.shape != (K,):
        raise ShapeError(f"rect: thresholds shape {thresholds.shape} does not match {K} filters")
    return ad.relu(ad.sub(featmap, ad.reshape(thresholds, (K, 1))))


def global_max_pool(featmap) -> Variable:
    """Per-filter maximum over all positions (first maximum wins ties)."""
    featmap = ad._as_var(featmap)
    if featmap.shape[-1] < 1:
        raise ShapeError("global_max_pool: feature map has no positions")
    return ad.max_axis(featmap, axis=-1)


@dataclass
class LstmLayer:
    """Standard LSTM cell (no peepholes).

    Each gate has a weight matrix of shape H x (H + D) acting on the
    concatenation [h_prev, x_t], and a bias of length H.
    """

    weights: dict[str, Variable]
    biases: dict[str, Variable]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
             forget_bias: float = 1.0) -> "LstmLayer":
        fan_in = input_size + hidden_size
        weights = {g: _uniform(rng, (hidden_size, fan_in), fan_in, f"lstm.w_{g}") for g in GATES}
        biases = {g: _zeros((hidden_size,), f"lstm.b_{g}", forget_bias if g == "f" else 0.0) for g in GATES}
        return cls(weights, biases)

    @property
    def hidden_size(self) -> int:
        return self.weights["f"].shape[0]

    @property
    def input_size(self) -> int:
        return self.weights["f"].shape[1] - self.hidden_size

    def parameters(self) -> list[Variable]:
        return [self.weights[g] for g in GATES] + [self.biases[g] for g in GATES]

    def stacked(self) -> tuple[Variable, Variable]:
        """All four gates as one (4H, H+D) matrix and (4H,) bias, order f, i, g, o."""
        return (ad.concat([self.weights[g] for g in GATES], axis=0),
                ad.concat([self.biases[g] for g in GATES], axis=0))


def _cell(z: Variable, c_prev: Variable | None, H: int) -> tuple[Variable, Variable]:
    # z holds pre-activations for gates f, i, g, o in that order
    f = ad.sigmoid(z[..., 0:H])
    i = ad.sigmoid(z[..., H:2 * H])
    g = ad.tanh(z[..., 2 * H:3 * H])
    o = ad.sigmoid(z[..., 3 * H:4 * H])
    ig = ad.mul(i, g)
    # a zero previous cell state contributes exactly nothing
    c = ig if c_prev is None else ad.add(ad.mul(f, c_prev), ig)
    h = ad.mul(o, ad.tanh(c))
    return h, c


def lstm_step(x_t, h_prev, c_prev, layer: LstmLayer) -> tuple[Variable, Variable]:
    """One LSTM time step; inputs may carry a leading batch axis."""
    x_t, h_prev, c_prev = ad._as_var(x_t), ad._as_var(h_prev), ad._as_var(c_prev)
    H, D = layer.hidden_size, layer.input_size
    if x_t.shape[-1] != D or h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_step: expected x (..., {D}), h and c (..., {H}); "
                         f"got x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}")
    W, b = layer.stacked()
    z = ad.add(ad.matmul(ad.concat([h_prev, x_t], axis=-1), W), b)
    return _cell(z, c_prev, H)


@dataclass
class LstmStack:
    layers: list[LstmLayer]

    @classmethod
    def from_arch(cls, arch: str, input_size: int, rng: np.random.Generator) -> "LstmStack":
        """Build from an architecture string such as ``"30"`` or ``"10:20"``."""
        sizes = parse_arch(arch)
        layers = []
        d = input_size
        for h in sizes:
            layers.append(LstmLayer.init(d, h, rng))
            d = h
        return cls(layers)

    @property
    def arch(self) -> str:
        return ":".join(str(layer.hidden_size) for layer in self.layers)

    @property
    def output_size(self) -> int:
        return self.layers[-1].hidden_size

    def parameters(self) -> list[Variable]:
        return [p for layer in self.layers for p in layer.parameters()]


def parse_arch(arch: str) -> list[int]:
    try:
        sizes = [int(s) for s in str(arch).split(":")]
    except ValueError:
        raise ValueError(f"bad LSTM architecture {arch!r}; expected sizes joined by ':'") from None
    if not 1 <= len(sizes) <= 2 or min(sizes) < 1:
        raise ValueError(f"LSTM architecture {arch!r} must have one or two positive layer sizes")
    return sizes


def lstm_forward(features, stack: LstmStack) -> Variable:
    """Run the stack left to right from zero state; return the top layer's last h.

    ``features`` is a T x D tensor (or B x T x D), or a list of T per-step
    tensors of size D.
    """
    if isinstance(features, (list, tuple)):
        if not features:
            raise ShapeError("lstm_forward: empty sequence")
        features = ad.stack(features, axis=-2)
    seq = ad._as_var(features)
    if seq.value.ndim not in (2, 3) or seq.shape[-2] < 1:
        raise ShapeError(f"lstm_forward: expected (T, D) or (B, T, D) with T >= 1, got {seq.shape}")
    T = seq.shape[-2]
    for depth, layer in enumerate(stack.layers):
        H, D = layer.hidden_size, layer.input_size
        if seq.shape[-1] != D:
            raise ShapeError(f"lstm layer {depth} expects input size {D}, got {seq.shape[-1]}")
        W, b = layer.stacked()
        # W.[h, x] split as W_h.h + W_x.x; the input half is computed for all steps at once
        w_h = W[:, 0:H]
        proj = ad.add(ad.matmul(seq, W[:, H:H + D]), b)  # (..., T, 4H)
        h, c = _cell(proj[..., 0, :], None, H)
        outputs = [h]
        for t in range(1, T):
            z = ad.add(proj[..., t, :], ad.matmul(h, w_h))
            h, c = _cell(z, c, H)
            outputs.append(h)
        if depth < len(stack.layers) - 1:
            seq = ad.stack(outputs, axis=-2)
    return h


@dataclass
class DenseLayer:
    weights: Variable  # (out, in)
    bias: Variable  # (out,)
    activation: str = "identity"

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, activation: str = "identity",
             name: str = "dense") -> "DenseLayer":
        if activation not in ("relu", "identity"):
            raise ValueError(f"activation must be 'relu' or 'identity', got {activation!r}")
        return cls(_uniform(rng, (n_out, n_in), n_in, f"{name}.weights"), _zeros((n_out,), f"{name}.bias"),
                   activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> list[Variable]:
        return [self.weights, self.bias]


def dense_forward(x, layer: DenseLayer) -> Variable:
    x = ad._as_var(x)
    if x.shape[-1] != layer.n_in:
        raise ShapeError(f"dense layer expects input size {layer.n_in}, got shape {x.shape}")
    y = ad.add(ad.matmul(x, layer.weights), layer.bias)
    return ad.relu(y) if layer.activation == "relu" else y


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.0
    mode: str = "eval"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"dropout mode must be 'train' or 'eval', got {self.mode!r}")


def dropout(x, spec: DropoutSpec, rng: np.random.Generator | None = None) -> Variable:
    """Inverted dropout: survivors are scaled by 1/(1-p); eval mode is the identity."""
    x = ad._as_var(x)
    if spec.mode == "eval" or spec.rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= spec.rate
    return ad.mul(x, keep / (1.0 - spec.rate))

