"""Layer specs, weights and the batched forward pass of the BiLSTM classifier.

All arrays are float64. Batched code paths take index arrays of shape
``(batch, T)``; the single-name helpers are thin wrappers around them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from namerace.encoding import VOCAB_SIZE, EncodedName, input_length

CLASS_NAMES: tuple[str, ...] = ("asian", "black", "hispanic", "white")
N_CLASSES = len(CLASS_NAMES)


@dataclass(frozen=True)
class Embedding:
    dim: int
    vocab: int = VOCAB_SIZE
    kind = "embedding"


@dataclass(frozen=True)
class BiLstm:
    hidden: int
    return_sequences: bool
    kind = "bilstm"


@dataclass(frozen=True)
class Dense:
    out: int = N_CLASSES
    activation: str = "softmax"
    kind = "dense"


Layer = Union[Embedding, BiLstm, Dense]


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]
    mode: str = "lastname"
    class_names: tuple[str, ...] = CLASS_NAMES

    @property
    def input_length(self) -> int:
        return input_length(self.mode)

    def param_shapes(self) -> list[dict[str, tuple[int, ...]]]:
        """Weight shapes per layer, in layer order. Assumes a valid spec."""
        shapes: list[dict[str, tuple[int, ...]]] = []
        width = None
        for layer in self.layers:
            if isinstance(layer, Embedding):
                shapes.append({"E": (layer.vocab, layer.dim)})
                width = layer.dim
            elif isinstance(layer, BiLstm):
                h = layer.hidden
                d = {}
                for direction in ("fwd", "bwd"):
                    d[f"{direction}_W"] = (4 * h, width)
                    d[f"{direction}_U"] = (4 * h, h)
                    d[f"{direction}_b"] = (4 * h,)
                shapes.append(d)
                width = 2 * h
            else:
                shapes.append({"W": (layer.out, width), "b": (layer.out,)})
                width = layer.out
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for d in self.param_shapes() for s in d.values())


def stacked_spec(dim: int, hidden: tuple[int, ...], mode: str = "lastname") -> ModelSpec:
    """Embedding -> BiLSTM stack (all but last return sequences) -> dense softmax head."""
    layers: list[Layer] = [Embedding(dim)]
    for i, h in enumerate(hidden):
        layers.append(BiLstm(h, return_sequences=i < len(hidden) - 1))
    layers.append(Dense())
    return ModelSpec(tuple(layers), mode)


def teacher_spec(mode: str = "lastname") -> ModelSpec:
    return stacked_spec(256, (512, 512, 512, 512), mode)


def student_spec(mode: str = "lastname") -> ModelSpec:
    # the student's 32-wide "dense" input layer acting on one-hot characters is an embedding
    return stacked_spec(32, (64, 64), mode)


def toy_teacher_spec(mode: str = "lastname") -> ModelSpec:
    return stacked_spec(16, (24, 24), mode)


def toy_student_spec(mode: str = "lastname") -> ModelSpec:
    return stacked_spec(8, (8,), mode)


PRESETS = {
    "teacher": teacher_spec,
    "student": student_spec,
    "toy": toy_teacher_spec,
    "toy-student": toy_student_spec,
}


@dataclass
class Model:
    spec: ModelSpec
    params: list[dict[str, np.ndarray]] = field(repr=False)

    def n_params(self) -> int:
        return sum(a.size for d in self.params for a in d.values())

    def copy(self) -> "Model":
        return Model(self.spec, [{k: v.copy() for k, v in d.items()} for d in self.params])

    def flat(self) -> list[tuple[int, str, np.ndarray]]:
        return [(i, k, v) for i, d in enumerate(self.params) for k, v in d.items()]


def zero_model(spec: ModelSpec) -> Model:
    return Model(spec, [{k: np.zeros(s) for k, s in d.items()} for d in spec.param_shapes()])


def init_model(spec: ModelSpec, rng: np.random.Generator) -> Model:
    """Glorot-uniform matrices, zero biases except forget-gate bias 1."""
    params = []
    for layer, shapes in zip(spec.layers, spec.param_shapes()):
        d = {}
        for name, shape in shapes.items():
            if len(shape) == 1:
                b = np.zeros(shape)
                if isinstance(layer, BiLstm):
                    h = layer.hidden
                    b[h : 2 * h] = 1.0
                d[name] = b
            else:
                fan_out, fan_in = shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                d[name] = rng.uniform(-limit, limit, size=shape)
        params.append(d)
    return Model(spec, params)


@dataclass(frozen=True)
class LstmParams:
    W: np.ndarray  # (4H, D), gate blocks [input, forget, candidate, output]
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


def lstm_params(layer_params: dict[str, np.ndarray], direction: str) -> LstmParams:
    return LstmParams(layer_params[f"{direction}_W"], layer_params[f"{direction}_U"], layer_params[f"{direction}_b"])


def sigmoid(z: np.ndarray) -> np.ndarray:
    # exp overflow for z < -709 gives 1/inf = 0, the correct limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def embedding_forward(indices: np.ndarray, E: np.ndarray) -> np.ndarray:
    indices = np.asarray(indices)
    assert indices.min(initial=0) >= 0 and indices.max(initial=0) < E.shape[0], "index out of dictionary range"
    return E[indices]


def lstm_cell_step(x, h, c, p: LstmParams) -> tuple[np.ndarray, np.ndarray]:
    """One step; ``x``, ``h``, ``c`` may carry a leading batch axis."""
    H = p.hidden
    if np.shape(x)[-1] != p.input_dim or np.shape(h)[-1] != H or np.shape(c)[-1] != H:
        raise ValueError("lstm_cell_step: dimension mismatch")
    z = x @ p.W.T + h @ p.U.T + p.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    g = np.tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H :])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def lstm_scan(xs: np.ndarray, p: LstmParams, reverse: bool = False) -> np.ndarray:
    """Hidden states for every step of ``xs`` (B, T, D) from zero state; returns (B, T, H)."""
    B, T, _ = xs.shape
    H = p.hidden
    xw = (xs.reshape(B * T, -1) @ p.W.T).reshape(B, T, 4 * H)
    xw += p.b
    UT = p.U.T
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    z = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1) if reverse else range(T):
        np.matmul(h, UT, out=z)
        z += xw[:, t]
        z[:, : 2 * H] = sigmoid(z[:, : 2 * H])
        np.tanh(z[:, 2 * H : 3 * H], out=z[:, 2 * H : 3 * H])
        z[:, 3 * H :] = sigmoid(z[:, 3 * H :])
        c *= z[:, H : 2 * H]
        c += z[:, :H] * z[:, 2 * H : 3 * H]
        h = hs[:, t]
        np.tanh(c, out=h)
        h *= z[:, 3 * H :]
    return hs


def bilstm_forward(seq: np.ndarray, fwd: LstmParams, bwd: LstmParams, return_sequences: bool) -> np.ndarray:
    """``seq`` is (T, D) or (B, T, D). Output is (.., T, 2H) or (.., 2H)."""
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.shape[1] == 0:
        raise ValueError("bilstm_forward: empty sequence")
    hf = lstm_scan(seq, fwd)
    hb = lstm_scan(seq, bwd, reverse=True)
    if return_sequences:
        out = np.concatenate([hf, hb], axis=-1)
    else:
        out = np.concatenate([hf[:, -1], hb[:, 0]], axis=-1)
    return out[0] if single else out


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, activation: str = "none") -> np.ndarray:
    if np.shape(x)[-1] != W.shape[1] or b.shape[0] != W.shape[0]:
        raise ValueError("dense_forward: dimension mismatch")
    y = x @ W.T + b
    if activation == "softmax":
        return softmax(y)
    if activation == "none":
        return y
    raise ValueError(f"unknown activation {activation!r}")


def apply_layers(model: Model, X: np.ndarray) -> np.ndarray:
    """Run the layer stack on an index batch of any sequence length; returns pre-activation outputs."""
    a = None
    for layer, p in zip(model.spec.layers, model.params):
        if isinstance(layer, Embedding):
            a = embedding_forward(X, p["E"])
        elif isinstance(layer, BiLstm):
            a = bilstm_forward(a, lstm_params(p, "fwd"), lstm_params(p, "bwd"), layer.return_sequences)
        else:
            a = dense_forward(a, p["W"], p["b"], "none")
    return a


def forward_logits(model: Model, X: np.ndarray) -> np.ndarray:
    """Pre-activation outputs of the final dense layer for an index batch (B, T)."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != model.spec.input_length:
        raise ValueError(f"expected index batch of shape (B, {model.spec.input_length}), got {X.shape}")
    return apply_layers(model, X)


def forward_batch(model: Model, X: np.ndarray) -> np.ndarray:
    """Class probabilities (B, 4) for an index batch."""
    logits = forward_logits(model, X)
    if model.spec.layers[-1].activation == "softmax":
        return softmax(logits)
    return logits


def model_forward(name: EncodedName, model: Model) -> np.ndarray:
    if name.mode != model.spec.mode:
        raise ValueError(f"{name.mode} input given to a {model.spec.mode} model")
    return forward_batch(model, name.to_array()[None])[0]
