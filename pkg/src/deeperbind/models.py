"""The two end-to-end scoring functions and their checkpoint format.

DeepBind baseline:  conv(same) -> rect_b -> global max pool -> [dropout] -> FC
DeeperBind:         conv(valid) -> ReLU -> LSTM stack -> [dropout] -> FC
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .encoding import ROW_ORDER, one_hot_batch, validate
from .layers import (ConvLayer, DenseLayer, DropoutSpec, LstmStack, conv_forward, dense_forward,
                     dropout, global_max_pool, lstm_forward, rect)

CHECKPOINT_FORMAT = "deeperbind-checkpoint"
CHECKPOINT_VERSION = 1

DEEPBIND = "deepbind"
DEEPERBIND = "deeperbind"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choices that are fixed before training."""

    kind: str = DEEPERBIND
    n_filters: int = 5
    width: int = 11
    lstm_arch: str | None = "10:10"
    fc_hidden: int | None = 32
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in (DEEPBIND, DEEPERBIND):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == DEEPERBIND and not self.lstm_arch:
            raise ValueError("DeeperBind needs an LSTM architecture")

    def with_hyperparams(self, lstm_arch: str | None, dropout_rate: float) -> "ModelSpec":
        if self.kind == DEEPERBIND:
            return replace(self, lstm_arch=lstm_arch or self.lstm_arch, dropout=dropout_rate)
        return replace(self, lstm_arch=None, dropout=dropout_rate)


def _fc_stack(n_in: int, hidden: int | None, rng: np.random.Generator) -> list[DenseLayer]:
    if hidden:
        return [DenseLayer.init(n_in, hidden, rng, "relu", "fc0"), DenseLayer.init(hidden, 1, rng, "identity", "fc1")]
    return [DenseLayer.init(n_in, 1, rng, "identity", "fc0")]


@dataclass
class DeepBindModel:
    conv: ConvLayer
    thresholds: Variable
    fc: list[DenseLayer]
    dropout_rate: float = 0.0
    kind: str = field(default=DEEPBIND, init=False)

    @property
    def min_length(self) -> int:
        return 1

    def parameters(self) -> list[Variable]:
        return self.conv.parameters() + [self.thresholds] + [p for d in self.fc for p in d.parameters()]

    def features(self, x: Variable) -> Variable:
        fm = conv_forward(x, self.conv, padding="same")
        return global_max_pool(rect(fm, self.thresholds))


@dataclass
class DeeperBindModel:
    conv: ConvLayer
    lstm: LstmStack
    fc: list[DenseLayer]
    dropout_rate: float = 0.0
    kind: str = field(default=DEEPERBIND, init=False)

    @property
    def min_length(self) -> int:
        return self.conv.width

    def parameters(self) -> list[Variable]:
        return self.conv.parameters() + self.lstm.parameters() + [p for d in self.fc for p in d.parameters()]

    def features(self, x: Variable) -> Variable:
        fm = ad.relu(conv_forward(x, self.conv, padding="valid"))  # (B, K, T)
        return lstm_forward(ad.transpose(fm, (0, 2, 1)), self.lstm)


Model = Union[DeepBindModel, DeeperBindModel]


def build_model(spec: ModelSpec, rng: np.random.Generator) -> Model:
    conv = ConvLayer.init(spec.n_filters, spec.width, rng)
    if spec.kind == DEEPBIND:
        fc = _fc_stack(spec.n_filters, spec.fc_hidden, rng)
        thresholds = Variable(np.zeros(spec.n_filters), trainable=True, name="rect.thresholds")
        return DeepBindModel(conv, thresholds, fc, spec.dropout)
    lstm = LstmStack.from_arch(spec.lstm_arch, spec.n_filters, rng)
    return DeeperBindModel(conv, lstm, _fc_stack(lstm.output_size, spec.fc_hidden, rng), spec.dropout)


def forward(model: Model, x, mode: str = "eval", rng: np.random.Generator | None = None) -> Variable:
    """Predictions for a (B, 4, L) one-hot batch, shape (B,)."""
    x = ad._as_var(x)
    if x.value.ndim != 3:
        raise ValueError(f"forward expects a (B, 4, L) batch, got shape {x.shape}")
    if x.shape[-1] < model.min_length:
        raise ValueError(f"probe length {x.shape[-1]} is shorter than the minimum {model.min_length}")
    h = model.features(x)
    h = dropout(h, DropoutSpec(model.dropout_rate, mode), rng)
    for layer in model.fc:
        h = dense_forward(h, layer)
    return ad.reshape(h, (h.shape[0],))


def predict(model: Model, probe: str, mode: str = "eval", rng: np.random.Generator | None = None) -> float:
    seq = validate(probe)
    if len(seq) < model.min_length:
        raise ValueError(f"probe of length {len(seq)} is shorter than the required minimum {model.min_length}")
    return float(forward(model, one_hot_batch([seq]), mode, rng).value[0])


def predict_batch(model: Model, probes: Sequence[str], mode: str = "eval",
                  rng: np.random.Generator | None = None, chunk: int = 500) -> list[float]:
    """Predict every probe; probes are grouped by length internally."""
    seqs = []
    for i, p in enumerate(probes):
        try:
            s = validate(p)
            if len(s) < model.min_length:
                raise ValueError(f"probe of length {len(s)} is shorter than the required minimum {model.min_length}")
        except ValueError as e:
            raise ValueError(f"probe {i}: {e}") from e
        seqs.append(s)
    out = np.empty(len(seqs))
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(len(s), []).append(i)
    for L in sorted(by_len):
        idx = by_len[L]
        for lo in range(0, len(idx), chunk):
            part = idx[lo:lo + chunk]
            out[part] = forward(model, one_hot_batch([seqs[i] for i in part]), mode, rng).value
    return out.tolist()


def param_count(model: Model) -> int:
    return int(np.sum([p.value.size for p in model.parameters()]))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def model_header(model: Model) -> dict:
    header = {
        "kind": model.kind,
        "n_filters": model.conv.n_filters,
        "width": model.conv.width,
        "lstm_arch": model.lstm.arch if model.kind == DEEPERBIND else None,
        "fc_sizes": [d.n_out for d in model.fc],
        "fc_activations": [d.activation for d in model.fc],
        "dropout": model.dropout_rate,
        "row_order": ROW_ORDER,
    }
    return header


def checkpoint_dict(model: Model, metadata: dict | None = None) -> dict:
    """JSON-ready checkpoint; floats are written with round-trip precision."""
    params = model.parameters()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "header": model_header(model),
        "parameters": [{"name": p.name, "shape": list(p.shape), "values": p.value.reshape(-1).tolist()}
                       for p in params],
        "metadata": metadata or {},
    }


def model_from_checkpoint(data: dict) -> Model:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a {CHECKPOINT_FORMAT} file")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {data.get('version')!r}")
    h = data["header"]
    if h.get("row_order") != ROW_ORDER:
        raise CheckpointError(f"checkpoint row order {h.get('row_order')!r} differs from {ROW_ORDER!r}")
    fc_sizes = h["fc_sizes"]
    hidden = fc_sizes[0] if len(fc_sizes) == 2 else None
    spec = ModelSpec(kind=h["kind"], n_filters=h["n_filters"], width=h["width"], lstm_arch=h["lstm_arch"],
                     fc_hidden=hidden, dropout=h["dropout"])
    model = build_model(spec, np.random.default_rng(0))
    params = model.parameters()
    stored = data["parameters"]
    if len(stored) != len(params):
        raise CheckpointError(f"checkpoint holds {len(stored)} tensors, architecture needs {len(params)}")
    for p, s in zip(params, stored):
        values = np.asarray(s["values"], dtype=np.float64)
        if tuple(s["shape"]) != p.shape or values.size != p.value.size:
            raise CheckpointError(f"tensor {s.get('name')!r} has shape {s['shape']}, expected {list(p.shape)}")
        p.value[...] = values.reshape(p.shape)
    return model


def save_checkpoint(model: Model, path, metadata: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model, metadata), indent=1) + "\n")


def load_checkpoint(path) -> tuple[Model, dict]:
    """Return the model and the checkpoint's metadata block."""
    try:
        data = json.loads(Path(path).read_text())
        model = model_from_checkpoint(data)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"cannot load checkpoint {path}: {e}") from e
    return model, data.get("metadata", {})


def copy_model(model: Model) -> Model:
    return model_from_checkpoint(checkpoint_dict(model))


__all__ = [
    "DEEPBIND", "DEEPERBIND", "DeepBindModel", "DeeperBindModel", "Model", "ModelSpec",
    "CheckpointError", "build_model", "forward", "predict", "predict_batch", "param_count",
    "checkpoint_dict", "model_from_checkpoint", "save_checkpoint", "load_checkpoint", "copy_model",
]
