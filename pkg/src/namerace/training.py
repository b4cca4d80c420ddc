"""Losses, backpropagation through time, Adam training, distillation and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from namerace.dataprep import rng_for
from namerace.nncore import (
    N_CLASSES,
    BiLstm,
    Embedding,
    Model,
    ModelSpec,
    forward_logits,
    init_model,
    lstm_params,
    sigmoid,
    softmax,
)

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    temperature: float = 2.0
    alpha: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


# ---------------------------------------------------------------- losses

def cross_entropy(logits: np.ndarray, labels) -> float:
    """Mean negative log-likelihood, computed from logits via log-sum-exp."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    return float(-np.mean(log_softmax(logits, axis=-1)[np.arange(len(labels)), labels]))


def kl_divergence(p_logits: np.ndarray, q_logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Per-row KL(softmax(p/T) || softmax(q/T))."""
    lp = log_softmax(np.atleast_2d(p_logits) / temperature, axis=-1)
    lq = log_softmax(np.atleast_2d(q_logits) / temperature, axis=-1)
    return np.sum(np.exp(lp) * (lp - lq), axis=-1)


def distill_loss(student_logits, teacher_logits, labels, temperature: float = 2.0, alpha: float = 0.5) -> float:
    """alpha * CE(student, label) + (1 - alpha) * T^2 * KL(teacher_T || student_T), batch mean."""
    ce = cross_entropy(student_logits, labels)
    if alpha == 1.0:
        return ce
    kl = float(np.mean(kl_divergence(teacher_logits, student_logits, temperature)))
    return alpha * ce + (1.0 - alpha) * temperature**2 * kl


def _loss_and_dlogits(logits, labels, teacher_logits=None, temperature=2.0, alpha=1.0):
    B = len(labels)
    p = softmax(logits)
    onehot = np.zeros_like(p)
    onehot[np.arange(B), labels] = 1.0
    if teacher_logits is None or alpha == 1.0:
        return cross_entropy(logits, labels), (p - onehot) / B
    loss = distill_loss(logits, teacher_logits, labels, temperature, alpha)
    qs = softmax(logits / temperature)
    qt = softmax(teacher_logits / temperature)
    d = alpha * (p - onehot) + (1.0 - alpha) * temperature * (qs - qt)
    return loss, d / B


# ---------------------------------------------------------------- forward with cache / backward

def _scan_cached(xs, W, U, b, reverse):
    B, T, _ = xs.shape
    H = U.shape[1]
    xw = (xs.reshape(B * T, -1) @ W.T).reshape(B, T, 4 * H) + b
    gates = np.empty((B, T, 4 * H))  # activated i, f, g, o
    cs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        z = xw[:, t] + h @ U.T
        a = gates[:, t]
        a[:, : 2 * H] = sigmoid(z[:, : 2 * H])
        a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        a[:, 3 * H :] = sigmoid(z[:, 3 * H :])
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 2 * H : 3 * H]
        h = a[:, 3 * H :] * np.tanh(c)
        cs[:, t] = c
        hs[:, t] = h
    return hs, (xs, gates, cs, hs, reverse)


def _scan_backward(dhs, cache, W, U):
    xs, gates, cs, hs, reverse = cache
    B, T, H = hs.shape
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * H)
    dxs = np.zeros_like(xs)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    order = list(range(T - 1, -1, -1) if reverse else range(T))
    for k in range(T - 1, -1, -1):
        t = order[k]
        prev = order[k - 1] if k > 0 else None
        h_prev = hs[:, prev] if prev is not None else np.zeros((B, H))
        c_prev = cs[:, prev] if prev is not None else np.zeros((B, H))
        i, f, g, o = (gates[:, t, j * H : (j + 1) * H] for j in range(4))
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc**2)
        dz = np.concatenate(
            [dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - g**2), dh * tc * o * (1 - o)], axis=1
        )
        dW += dz.T @ xs[:, t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dxs[:, t] = dz @ W
        dh_next = dz @ U
        dc_next = dc * f
    return dxs, dW, dU, db


def forward_train(model: Model, X: np.ndarray):
    """Logits plus per-layer caches for :func:`backward_from_logits`."""
    caches = []
    a = None
    for layer, p in zip(model.spec.layers, model.params):
        if isinstance(layer, Embedding):
            a = p["E"][X]
            caches.append(X)
        elif isinstance(layer, BiLstm):
            hf, cf = _scan_cached(a, p["fwd_W"], p["fwd_U"], p["fwd_b"], False)
            hb, cb = _scan_cached(a, p["bwd_W"], p["bwd_U"], p["bwd_b"], True)
            caches.append((cf, cb))
            if layer.return_sequences:
                a = np.concatenate([hf, hb], axis=-1)
            else:
                a = np.concatenate([hf[:, -1], hb[:, 0]], axis=-1)
        else:
            caches.append(a)
            a = a @ p["W"].T + p["b"]
    return a, caches


def backward_from_logits(model: Model, caches, dlogits: np.ndarray) -> list[dict[str, np.ndarray]]:
    grads: list[dict[str, np.ndarray]] = [None] * len(model.params)  # type: ignore[list-item]
    da = dlogits
    for li in range(len(model.params) - 1, -1, -1):
        layer, p, cache = model.spec.layers[li], model.params[li], caches[li]
        if isinstance(layer, Embedding):
            dE = np.zeros_like(p["E"])
            np.add.at(dE, cache, da)
            grads[li] = {"E": dE}
        elif isinstance(layer, BiLstm):
            cf, cb = cache
            H = layer.hidden
            B, T = cf[0].shape[:2]
            if layer.return_sequences:
                dhf, dhb = da[..., :H], da[..., H:]
            else:
                dhf = np.zeros((B, T, H))
                dhb = np.zeros((B, T, H))
                dhf[:, -1] = da[:, :H]
                dhb[:, 0] = da[:, H:]
            g = {}
            dx = 0.0
            for direction, dhs, c in (("fwd", dhf, cf), ("bwd", dhb, cb)):
                lp = lstm_params(p, direction)
                dxs, dW, dU, db = _scan_backward(dhs, c, lp.W, lp.U)
                g[f"{direction}_W"], g[f"{direction}_U"], g[f"{direction}_b"] = dW, dU, db
                dx = dx + dxs
            grads[li] = g
            da = dx
        else:
            grads[li] = {"W": da.T @ cache, "b": da.sum(axis=0)}
            da = da @ p["W"]
    return grads


def loss_and_grads(model: Model, X, y, teacher_logits=None, temperature=2.0, alpha=1.0, loss_scale=1.0):
    """Mean batch loss and its exact gradient for every weight of ``model``."""
    X = np.asarray(X)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty batch")
    logits, caches = forward_train(model, X)
    loss, dlogits = _loss_and_dlogits(logits, y, teacher_logits, temperature, alpha)
    grads = backward_from_logits(model, caches, dlogits * loss_scale)
    return loss * loss_scale, grads


def backward(model: Model, X, y, **loss_kwargs) -> list[dict[str, np.ndarray]]:
    return loss_and_grads(model, X, y, **loss_kwargs)[1]


def batch_loss(model: Model, X, y, teacher_logits=None, temperature=2.0, alpha=1.0) -> float:
    logits = forward_logits(model, np.asarray(X))
    if teacher_logits is None:
        return cross_entropy(logits, y)
    return distill_loss(logits, teacher_logits, y, temperature, alpha)


def grad_check(model: Model, X, y, epsilon: float = 1e-5, grad_fn=None, **loss_kwargs) -> float:
    """Max relative error between analytic and central-difference gradients over all weights.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``. ``grad_fn`` defaults to
    :func:`backward` and exists so tests can inject a corrupted gradient.
    """
    if len(y) == 0:
        raise ValueError("grad_check needs a non-empty batch")
    grads = (grad_fn or backward)(model, X, y, **loss_kwargs)
    worst = 0.0
    for li, name, w in model.flat():
        a = grads[li][name]
        flat = w.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + epsilon
            lp = batch_loss(model, X, y, **loss_kwargs)
            flat[j] = old - epsilon
            lm = batch_loss(model, X, y, **loss_kwargs)
            flat[j] = old
            num = (lp - lm) / (2 * epsilon)
            an = a.reshape(-1)[j]
            err = abs(an - num) / max(abs(an), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- optimization

class Adam:
    def __init__(self, model: Model, hp: Hyperparams):
        self.hp = hp
        self.m = [{k: np.zeros_like(v) for k, v in d.items()} for d in model.params]
        self.v = [{k: np.zeros_like(v) for k, v in d.items()} for d in model.params]
        self.t = 0

    def step(self, model: Model, grads) -> None:
        hp = self.hp
        self.t += 1
        c1 = 1 - hp.beta1**self.t
        c2 = 1 - hp.beta2**self.t
        for li, name, w in model.flat():
            g = grads[li][name]
            m = self.m[li][name]
            v = self.v[li][name]
            m *= hp.beta1
            m += (1 - hp.beta1) * g
            v *= hp.beta2
            v += (1 - hp.beta2) * g * g
            w -= hp.learning_rate * (m / c1) / (np.sqrt(v / c2) + hp.adam_eps)


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)


def _run(model: Model, X, y, hp: Hyperparams, teacher: Model | None = None, alpha: float = 1.0):
    X = np.asarray(X)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty training set")
    rng = rng_for(hp.seed)
    opt = Adam(model, hp)
    hist = History()
    for epoch in range(hp.epochs):
        order = rng.permutation(len(y))
        total, total_kl = 0.0, 0.0
        for bi, start in enumerate(range(0, len(y), hp.batch_size)):
            idx = order[start : start + hp.batch_size]
            tl = forward_logits(teacher, X[idx]) if teacher is not None else None
            logits, caches = forward_train(model, X[idx])
            loss, dlogits = _loss_and_dlogits(logits, y[idx], tl, hp.temperature, alpha)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch {bi}, learning_rate {hp.learning_rate}"
                )
            opt.step(model, backward_from_logits(model, caches, dlogits))
            total += loss * len(idx)
            if tl is not None:
                total_kl += float(np.sum(kl_divergence(tl, logits, hp.temperature)))
        hist.loss.append(total / len(y))
        if teacher is not None:
            hist.kl.append(total_kl / len(y))
        log.info("epoch %d loss %.6f", epoch + 1, hist.loss[-1])
    return model, hist


def train(model: Model, X, y, hp: Hyperparams) -> tuple[Model, History]:
    """Mini-batch Adam on cross-entropy; ``model`` is trained in place and returned."""
    return _run(model, X, y, hp)


def distill(teacher: Model, student_spec: ModelSpec, X, y, hp: Hyperparams,
            student: Model | None = None) -> tuple[Model, History]:
    """Train a fresh student (seeded from ``hp.seed``) against the frozen teacher's logits."""
    if teacher.spec.mode != student_spec.mode:
        raise ValueError(f"teacher mode {teacher.spec.mode} != student mode {student_spec.mode}")
    if tuple(teacher.spec.class_names) != tuple(student_spec.class_names):
        raise ValueError("teacher and student class orders differ")
    if student is None:
        student = init_model(student_spec, rng_for(hp.seed))
    if student.n_params() >= teacher.n_params():
        log.warning("student has %d parameters, teacher %d", student.n_params(), teacher.n_params())
    return _run(student, X, y, hp, teacher=teacher, alpha=hp.alpha)


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    accuracy: float
    confusion: list[list[int]]
    undefined_precision: list[bool]

    def total(self) -> dict[str, float]:
        """Support-weighted averages, the 'total' row of a classification report."""
        s = np.asarray(self.support, dtype=float)
        w = s / s.sum()
        return {
            "precision": float(w @ self.precision),
            "recall": float(w @ self.recall),
            "f1": float(w @ self.f1),
            "support": int(s.sum()),
        }

    def to_dict(self) -> dict:
        rows = {
            name: {"precision": self.precision[k], "recall": self.recall[k], "f1": self.f1[k],
                   "support": self.support[k], "precision_undefined": self.undefined_precision[k]}
            for k, name in enumerate(self.class_names)
        }
        rows["total"] = self.total()
        return {"classes": rows, "accuracy": self.accuracy, "confusion": self.confusion}


def report_from_confusion(cm: np.ndarray, class_names=None) -> EvalReport:
    """Per-class metrics from a confusion matrix with rows = true, columns = predicted."""
    cm = np.asarray(cm, dtype=np.int64)
    n = cm.shape[0]
    if cm.sum() == 0:
        raise ValueError("empty test set")
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0).astype(float)
    true = cm.sum(axis=1).astype(float)
    undefined = pred == 0
    precision = np.divide(tp, pred, out=np.zeros(n), where=~undefined)
    recall = np.divide(tp, true, out=np.zeros(n), where=true > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n), where=denom > 0)
    names = tuple(class_names) if class_names is not None else tuple(str(k) for k in range(n))
    return EvalReport(names, precision.tolist(), recall.tolist(), f1.tolist(), true.astype(int).tolist(),
                      float(tp.sum() / cm.sum()), cm.tolist(), undefined.tolist())


def predict_classes(model: Model, X, batch_size: int = 1024) -> np.ndarray:
    X = np.asarray(X)
    out = [np.argmax(forward_logits(model, X[s : s + batch_size]), axis=1) for s in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: Model, X, y) -> EvalReport:
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty test set")
    pred = predict_classes(model, X)
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (y, pred), 1)
    return report_from_confusion(cm, model.spec.class_names)
