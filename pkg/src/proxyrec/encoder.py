"""Short-term interest: single-block self-attention over the session prefix.

Input rows combine item embeddings with reverse positional embeddings (the
most recent item always gets positional row 0, so recency is encoded the
same way regardless of session length):

    X_j = item_{s_j} + pos_{n-j}          j = 1..n, 0-indexed pos

Queries and keys go through relu projections, attention weights are a
row-wise softmax of QK'/sqrt(d), and the attended rows get a residual add.
The last row (the most recent item) is read out through a two-layer head
with biases. There is no causal mask: the prefix is fully observed, every
position may attend everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthError


@dataclass
class EncoderParams:
    wq: np.ndarray  # (d, d)
    wk: np.ndarray  # (d, d)
    w1: np.ndarray  # (d, d)
    w2: np.ndarray  # (d, d)
    b1: np.ndarray  # (d,)
    b2: np.ndarray  # (d,)
    pos: np.ndarray  # (max_len, d), reverse positional rows


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def encode_short_term(items, item_table: np.ndarray, enc: EncoderParams) -> np.ndarray:
    """Encode a prefix into one d-vector read off the most recent position."""
    idx = np.asarray(items, dtype=np.int64)
    n = idx.shape[0]
    if n == 0:
        raise LengthError("cannot encode an empty prefix")
    if n > enc.pos.shape[0]:
        raise LengthError(
            f"prefix length {n} exceeds positional table of {enc.pos.shape[0]} rows"
        )
    d = item_table.shape[1]
    x = item_table[idx] + enc.pos[n - 1 :: -1]
    q = _relu(x @ enc.wq)
    k = _relu(x @ enc.wk)
    att = _softmax_rows(q @ k.T / np.sqrt(d))
    z = att @ x + x
    last = z[-1]
    return _relu(last @ enc.w1 + enc.b1) @ enc.w2 + enc.b2


def attention_weights(items, item_table: np.ndarray, enc: EncoderParams) -> np.ndarray:
    """The (n, n) attention matrix, exposed for inspection and tests."""
    idx = np.asarray(items, dtype=np.int64)
    n = idx.shape[0]
    if n == 0 or n > enc.pos.shape[0]:
        raise LengthError(f"bad prefix length {n} for positional table {enc.pos.shape[0]}")
    d = item_table.shape[1]
    x = item_table[idx] + enc.pos[n - 1 :: -1]
    q = _relu(x @ enc.wq)
    k = _relu(x @ enc.wk)
    return _softmax_rows(q @ k.T / np.sqrt(d))
