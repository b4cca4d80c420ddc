"""Name normalization and fixed-length character encoding.

Index layout (part of the model file contract, never reorder):
``E`` (pad) = 0, ``a``..``z`` = 1..26, space = 27, ``U`` (unknown) = 28.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Literal

import numpy as np

PAD = "E"
UNKNOWN = "U"
SYMBOLS: tuple[str, ...] = (PAD, *string.ascii_lowercase, " ", UNKNOWN)
VOCAB_SIZE = len(SYMBOLS)
PAD_INDEX = 0
COMPONENT_LENGTH = 10

Mode = Literal["lastname", "fullname"]
MODES: tuple[str, ...] = ("lastname", "fullname")

_INDEX = {s: i for i, s in enumerate(SYMBOLS)}
_PUNCT = frozenset(string.punctuation)
_LOWER_INDEX = frozenset(string.ascii_lowercase + " ")


def _fold(ch: str) -> str:
    if ch in string.ascii_letters:
        return ch.lower()
    if ch == " " or ch in _PUNCT:
        return " "
    return UNKNOWN


def normalize(raw: str) -> str:
    """Fold case, map ASCII punctuation to space and everything else to ``U``.

    Outer whitespace of ``raw`` is stripped first; inner runs of spaces are kept.
    A raw uppercase ``U`` folds to ``u`` like any letter, so re-normalizing
    text that already holds the unknown marker is not a fixed point.
    """
    return "".join(_fold(ch) for ch in raw.strip())


def index_of(ch: str) -> int:
    """Index of one character of normalized text; ``U`` here is the unknown marker.

    Characters outside the normalized alphabet are folded first, so the map is total.
    """
    if ch == UNKNOWN or ch in _LOWER_INDEX:
        return _INDEX[ch]
    return _INDEX[_fold(ch)]


def encode_component(name: str, length: int = COMPONENT_LENGTH) -> list[int]:
    """Encode an already-normalized component, right-truncated and pad-filled to ``length``."""
    if length < 1:
        raise ValueError(f"component length must be >= 1, got {length}")
    idx = [index_of(ch) for ch in name[:length]]
    return idx + [PAD_INDEX] * (length - len(idx))


@dataclass(frozen=True)
class EncodedName:
    indices: tuple[int, ...]
    mode: Mode

    def __post_init__(self):
        expected = input_length(self.mode)
        if len(self.indices) != expected:
            raise ValueError(f"{self.mode} encoding needs {expected} indices, got {len(self.indices)}")

    def to_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)


def input_length(mode: str) -> int:
    if mode == "lastname":
        return COMPONENT_LENGTH
    if mode == "fullname":
        return 2 * COMPONENT_LENGTH
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def encode_lastname(last: str) -> EncodedName:
    return EncodedName(tuple(encode_component(normalize(last))), "lastname")


def encode_fullname(first: str, last: str) -> EncodedName:
    """First name in slots 0-9, last name always starting at slot 10."""
    idx = encode_component(normalize(first)) + encode_component(normalize(last))
    return EncodedName(tuple(idx), "fullname")


def encode_names(lastnames, firstnames=None, mode: str = "lastname") -> np.ndarray:
    """Vectorized helper: (n, input_length) int array for a batch of raw names."""
    n = len(lastnames)
    out = np.zeros((n, input_length(mode)), dtype=np.int64)
    for i in range(n):
        last = encode_component(normalize(lastnames[i]))
        if mode == "fullname":
            out[i, :COMPONENT_LENGTH] = encode_component(normalize(firstnames[i]))
            out[i, COMPONENT_LENGTH:] = last
        else:
            out[i] = last
    return out


def decode(indices) -> str:
    """Inverse table lookup, pads rendered as ``E``; for debugging and docs."""
    return "".join(SYMBOLS[int(i)] for i in indices)
