"""Batch prediction with a deterministic thread pool.

Rows are grouped into fixed-size chunks whose boundaries depend only on the
row count, never on the thread count. Each worker evaluates a contiguous run
of whole chunks and writes into its own slice of a preallocated output array,
so results are bitwise identical for any ``threads`` value.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from namerace.dataprep import TOY_BODY, is_missing, rng_for
from namerace.encoding import MODES, encode_names
from namerace.nncore import Model, forward_batch

CHUNK_ROWS = 256


class MissingValueError(ValueError):
    def __init__(self, row: int, column: str):
        super().__init__(f"missing {column} at row {row}; pass na_rm=True to drop such rows")
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Prediction:
    firstname: Optional[str]
    lastname: str
    prob_asian: float
    prob_black: float
    prob_hispanic: float
    prob_white: float
    race: str


@dataclass(frozen=True)
class BatchRequest:
    lastnames: Sequence[str]
    firstnames: Optional[Sequence[str]] = None
    method: str = "fullname"
    threads: int = 1
    na_rm: bool = False

    def __post_init__(self):
        if self.method not in MODES:
            raise ValueError(f"method must be one of {MODES}, got {self.method!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.method == "fullname":
            if self.firstnames is None:
                raise ValueError("method='fullname' requires firstnames")
            if len(self.firstnames) != len(self.lastnames):
                raise ValueError(
                    f"firstnames ({len(self.firstnames)}) and lastnames ({len(self.lastnames)}) differ in length"
                )


def partition_work(n: int, threads: int) -> list[range]:
    """At most ``threads`` contiguous ranges covering ``range(n)``, sizes differing by at most one."""
    if n < 0 or threads < 1:
        raise ValueError("need n >= 0 and threads >= 1")
    k = min(n, threads)
    base, extra = divmod(n, k) if k else (0, 0)
    out, start = [], 0
    for i in range(k):
        size = base + (i < extra)
        out.append(range(start, start + size))
        start += size
    return out


def predict_probs(model: Model, X: np.ndarray, threads: int = 1) -> np.ndarray:
    """(n, 4) probabilities for an encoded index matrix."""
    n = len(X)
    out = np.empty((n, len(model.spec.class_names)))
    chunks = [range(s, min(s + CHUNK_ROWS, n)) for s in range(0, n, CHUNK_ROWS)]

    def work(chunk_ids: range) -> None:
        for c in chunk_ids:
            r = chunks[c]
            out[r.start : r.stop] = forward_batch(model, X[r.start : r.stop])

    groups = partition_work(len(chunks), threads)
    # parallelism comes from our workers only; a multithreaded BLAS would oversubscribe cores
    with threadpool_limits(limits=1, user_api="blas"):
        if len(groups) <= 1:
            for g in groups:
                work(g)
        else:
            with ThreadPoolExecutor(max_workers=len(groups)) as pool:
                for f in [pool.submit(work, g) for g in groups]:
                    f.result()
    return out


def retained_rows(req: BatchRequest) -> list[int]:
    """Indices of rows carrying every required component; raises on the first gap unless ``na_rm``."""
    keep = []
    for i, last in enumerate(req.lastnames):
        missing = None
        if req.method == "fullname" and is_missing(req.firstnames[i]):
            missing = "firstname"
        elif is_missing(last):
            missing = "lastname"
        if missing is None:
            keep.append(i)
        elif not req.na_rm:
            raise MissingValueError(i, missing)
    return keep


def predict_batch(req: BatchRequest, model: Model) -> list[Prediction]:
    if model.spec.mode != req.method:
        raise ValueError(f"method {req.method!r} does not match the {model.spec.mode} model")
    keep = retained_rows(req)
    lasts = [req.lastnames[i] for i in keep]
    firsts = [req.firstnames[i] for i in keep] if req.firstnames is not None else None
    X = encode_names(lasts, firsts, req.method)
    probs = predict_probs(model, X, req.threads)
    labels = np.argmax(probs, axis=1)
    names = model.spec.class_names
    out = []
    for j, i in enumerate(keep):
        p = probs[j]
        out.append(Prediction(
            firstname=req.firstnames[i] if req.method == "fullname" else None,
            lastname=req.lastnames[i],
            prob_asian=float(p[0]), prob_black=float(p[1]), prob_hispanic=float(p[2]), prob_white=float(p[3]),
            race=names[int(labels[j])],
        ))
    return out


def predict_ethnicity(firstnames=None, lastnames=(), method="fullname", threads=1, na_rm=False, *, model: Model):
    """Keyword-style convenience wrapper around :func:`predict_batch`."""
    return predict_batch(BatchRequest(list(lastnames), None if firstnames is None else list(firstnames),
                                      method, threads, na_rm), model)


def synthetic_names(n: int, seed: int = 0) -> list[str]:
    rng = rng_for(seed)
    letters = np.array(list(TOY_BODY + "aeiou"))
    lengths = rng.integers(3, 12, size=n)
    return ["".join(rng.choice(letters, size=k)) for k in lengths]


def throughput_bench(model: Model, n: int, threads_list: Sequence[int], repeats: int = 5, seed: int = 0):
    """Mean wall time of ``predict_probs`` over ``repeats`` runs per thread count.

    Returns rows of (threads, n, mean_seconds). Encoding is excluded from the timing.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lasts = synthetic_names(n, seed)
    firsts = synthetic_names(n, seed + 1) if model.spec.mode == "fullname" else None
    X = encode_names(lasts, firsts, model.spec.mode)
    rows = []
    for threads in threads_list:
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            predict_probs(model, X, threads)
            times.append(time.perf_counter() - t0)
        rows.append((int(threads), n, float(np.mean(times))))
    return rows
