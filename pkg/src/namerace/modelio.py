"""Versioned JSON model files.

Layout (keys always in this order)::

    {"format_version": 1,
     "mode": "lastname" | "fullname",
     "input_length": 10 | 20,
     "dictionary": [29 symbols in index order],
     "class_names": ["asian", "black", "hispanic", "white"],
     "layers": [{"kind": ..., "dims": {...}, "weights": {name: [row-major float32 values]}}, ...]}

Weights are stored as float32 in shortest round-trip decimal form and widened
to float64 on load. See ``docs/model_format.md`` for a worked example.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from namerace.encoding import MODES, SYMBOLS, VOCAB_SIZE, input_length
from namerace.nncore import CLASS_NAMES, N_CLASSES, BiLstm, Dense, Embedding, Model, ModelSpec

FORMAT_VERSION = 1


class ModelFileError(ValueError):
    """Base class for every malformed or unreadable model file."""


class UnsupportedVersionError(ModelFileError):
    pass


class DictionaryMismatchError(ModelFileError):
    pass


class DimensionMismatchError(ModelFileError):
    def __init__(self, layer_index: int, message: str):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


class NonFiniteWeightError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class InvalidSpecError(ModelFileError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def validate_spec(spec: ModelSpec) -> list[str]:
    """All violated architecture invariants; an empty list means the architecture is usable."""
    problems = []
    layers = spec.layers
    if spec.mode not in MODES:
        problems.append(f"mode must be one of {MODES}, got {spec.mode!r}")
    if tuple(spec.class_names) != CLASS_NAMES:
        problems.append(f"class_names must be {list(CLASS_NAMES)}")
    if not layers or not isinstance(layers[0], Embedding):
        problems.append("first layer must be an embedding")
    elif layers[0].vocab != VOCAB_SIZE:
        problems.append(f"embedding vocab must be {VOCAB_SIZE}, got {layers[0].vocab}")
    if not layers or not isinstance(layers[-1], Dense):
        problems.append("last layer must be dense")
    else:
        if layers[-1].out != N_CLASSES:
            problems.append(f"output classes must be {N_CLASSES}, got {layers[-1].out}")
        if layers[-1].activation not in ("softmax", "none"):
            problems.append(f"unknown activation {layers[-1].activation!r}")
    middle = layers[1:-1]
    lstms = [layer for layer in middle if isinstance(layer, BiLstm)]
    if not lstms:
        problems.append("at least one BiLSTM layer is required")
    if len(lstms) != len(middle):
        problems.append("only BiLSTM layers may sit between the embedding and the dense head")
    for i, layer in enumerate(lstms):
        last = i == len(lstms) - 1
        if layer.return_sequences == last:
            want = "false" if last else "true"
            problems.append(f"BiLSTM {i} must have return_sequences={want}")
    for i, layer in enumerate(layers):
        for name in ("dim", "hidden", "out", "vocab"):
            v = getattr(layer, name, None)
            if v is not None and (not isinstance(v, int) or v < 1):
                problems.append(f"layer {i}: {name} must be a positive integer, got {v!r}")
    return problems


def _fmt(v: np.float32) -> str:
    return str(v)


def _emit(obj, out: list[str]) -> None:
    if isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(k))
            out.append(": ")
            _emit(v, out)
        out.append("}")
    elif isinstance(obj, np.ndarray):
        out.append("[" + ",".join(_fmt(v) for v in obj.astype(np.float32).ravel()) + "]")
    elif isinstance(obj, (list, tuple)):
        out.append("[" + ", ".join(json.dumps(v) for v in obj) + "]")
    else:
        out.append(json.dumps(obj))


def _layer_record(layer, params: dict[str, np.ndarray]) -> dict:
    if isinstance(layer, Embedding):
        dims = {"vocab": layer.vocab, "dim": layer.dim}
    elif isinstance(layer, BiLstm):
        dims = {"input": int(params["fwd_W"].shape[1]), "hidden": layer.hidden,
                "return_sequences": layer.return_sequences}
    else:
        dims = {"input": int(params["W"].shape[1]), "out": layer.out, "activation": layer.activation}
    return {"kind": layer.kind, "dims": dims, "weights": {k: params[k] for k in sorted(params)}}


def dumps_model(model: Model) -> str:
    problems = validate_spec(model.spec)
    if problems:
        raise InvalidSpecError(problems)
    for i, name, arr in model.flat():
        expected = model.spec.param_shapes()[i][name]
        if arr.shape != expected:
            raise DimensionMismatchError(i, f"{name} has shape {arr.shape}, expected {expected}")
        with np.errstate(over="ignore"):
            narrowed = arr.astype(np.float32)
        if not np.all(np.isfinite(narrowed)):
            raise NonFiniteWeightError(f"layer {i}: {name} holds non-finite values (after float32 narrowing)")
    doc = {
        "format_version": FORMAT_VERSION,
        "mode": model.spec.mode,
        "input_length": model.spec.input_length,
        "dictionary": list(SYMBOLS),
        "class_names": list(model.spec.class_names),
        "layers": None,
    }
    out: list[str] = []
    _emit({k: v for k, v in doc.items() if k != "layers"}, out)
    head = "".join(out)[:-1]
    records = []
    for layer, params in zip(model.spec.layers, model.params):
        buf: list[str] = []
        _emit(_layer_record(layer, params), buf)
        records.append("    " + "".join(buf))
    return head + ',\n "layers": [\n' + ",\n".join(records) + "\n ]}\n"


def save_model(model: Model, path: str | os.PathLike) -> None:
    """Write ``model`` to ``path``; nothing is written if validation fails."""
    text = dumps_model(model)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"cannot write model file {path}: {e}") from e


def _positive_int(v, what: str, layer_index: int) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise DimensionMismatchError(layer_index, f"{what} must be a positive integer, got {v!r}")
    return v


def _parse_layer(i: int, rec: dict):
    try:
        kind, dims, weights = rec["kind"], rec["dims"], rec["weights"]
    except (KeyError, TypeError) as e:
        raise ModelFileError(f"layer {i}: missing field {e}") from None
    if not isinstance(dims, dict):
        raise ModelFileError(f"layer {i}: dims must be an object")
    if kind == "embedding":
        layer = Embedding(dim=_positive_int(dims.get("dim"), "dim", i), vocab=_positive_int(dims.get("vocab"), "vocab", i))
        width_in = None
    elif kind == "bilstm":
        layer = BiLstm(_positive_int(dims.get("hidden"), "hidden", i), bool(dims.get("return_sequences")))
        width_in = _positive_int(dims.get("input"), "input", i)
    elif kind == "dense":
        layer = Dense(_positive_int(dims.get("out"), "out", i), dims.get("activation", "softmax"))
        width_in = _positive_int(dims.get("input"), "input", i)
    else:
        raise ModelFileError(f"layer {i}: unknown layer kind {kind!r}")
    if not isinstance(weights, dict):
        raise ModelFileError(f"layer {i}: weights must be an object")
    return layer, width_in, weights


def loads_model(text: str) -> Model:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise TruncatedFileError(f"model file is truncated or not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ModelFileError("model file must hold a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format_version {version!r}; this build reads {FORMAT_VERSION}")
    if doc.get("dictionary") != list(SYMBOLS):
        raise DictionaryMismatchError("dictionary differs from the canonical 29-symbol ordering")
    for key in ("mode", "input_length", "class_names", "layers"):
        if key not in doc:
            raise ModelFileError(f"missing field {key!r}")
    mode = doc["mode"]
    if mode not in MODES:
        raise ModelFileError(f"unknown mode {mode!r}")
    if doc["input_length"] != input_length(mode):
        raise ModelFileError(f"input_length {doc['input_length']} does not match mode {mode}")
    if not isinstance(doc["layers"], list):
        raise ModelFileError("layers must be an array")

    layers, widths, raw = [], [], []
    for i, rec in enumerate(doc["layers"]):
        layer, width_in, weights = _parse_layer(i, rec)
        layers.append(layer)
        widths.append(width_in)
        raw.append(weights)
    spec = ModelSpec(tuple(layers), mode, tuple(doc["class_names"]))
    problems = validate_spec(spec)
    if problems:
        raise InvalidSpecError(problems)

    params = []
    for i, (shapes, weights) in enumerate(zip(spec.param_shapes(), raw)):
        if widths[i] is not None:
            actual_in = shapes["W" if "W" in shapes else "fwd_W"][1]
            if widths[i] != actual_in:
                raise DimensionMismatchError(i, f"declared input width {widths[i]} but previous layer emits {actual_in}")
        if set(weights) != set(shapes):
            raise DimensionMismatchError(i, f"weight names {sorted(weights)} != expected {sorted(shapes)}")
        d = {}
        for name, shape in shapes.items():
            values = weights[name]
            n = int(np.prod(shape))
            if not isinstance(values, list) or len(values) != n:
                got = len(values) if isinstance(values, list) else type(values).__name__
                raise DimensionMismatchError(i, f"{name} declares shape {shape} ({n} values) but holds {got}")
            try:
                with np.errstate(over="ignore"):
                    arr = np.asarray(values, dtype=np.float32)
            except (TypeError, ValueError):
                raise ModelFileError(f"layer {i}: {name} holds non-numeric values") from None
            if not np.all(np.isfinite(arr)):
                raise NonFiniteWeightError(f"layer {i}: {name} holds non-finite values")
            d[name] = arr.astype(np.float64).reshape(shape)
        params.append(d)
    return Model(spec, params)


def load_model(path: str | os.PathLike) -> Model:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise TruncatedFileError(f"{path}: not UTF-8 text: {e}") from None
    return loads_model(text)
