"""Combining both interest signals on a proxy-specific hyperplane.

Each proxy row has a companion normal vector; the session's mixture of
normals (renormalized to unit length) defines a hyperplane. The short-term
vector and every candidate item are projected onto that hyperplane before
measuring squared Euclidean distance to the proxy-plus-short-term query:

    dist(session, item) = || (proxy + s_perp) - item_perp ||^2

Smaller is better everywhere in this module. Alternative modes cover the
ablations: each drops one ingredient (proxy only, short-term only, no
projection) or swaps the metric for a negated dot product.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DegenerateProxyError, MetricError

SCORING_MODES = ("full", "proxy_only", "short_only", "no_projection", "dot_product")
EPS_DEGENERATE = 1e-12


def hyperplane_normal(
    pi: np.ndarray, normals: np.ndarray, strict: bool = True
) -> np.ndarray:
    """Unit normal of the session's hyperplane: normalized mixture of rows."""
    w = pi @ normals
    norm = float(np.linalg.norm(w))
    if strict:
        if norm < EPS_DEGENERATE:
            raise DegenerateProxyError(
                f"hyperplane normal has norm {norm:.3e}; cannot normalize"
            )
        return w / norm
    return w / (norm + EPS_DEGENERATE)


def project_to_hyperplane(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Remove the component along unit normal v: x - (v.x) v.

    Works on a single vector (d,) or a stack of rows (..., d).
    """
    return x - np.expand_dims(x @ v, -1) * v if x.ndim > 1 else x - (v @ x) * v


def dissimilarity(
    proxy: np.ndarray | None,
    short: np.ndarray | None,
    item_vec: np.ndarray,
    normal: np.ndarray | None,
    mode: str = "full",
):
    """Score one item (or a stack of items) against the session state.

    Smaller means a better match in every mode; the dot_product mode negates
    the raw inner product to keep that orientation.
    """
    if mode not in SCORING_MODES:
        raise ConfigError(f"unknown scoring mode {mode!r}; expected one of {SCORING_MODES}")
    axis = -1
    if mode == "full":
        q = proxy + project_to_hyperplane(short, normal)
        target = project_to_hyperplane(item_vec, normal)
    elif mode == "proxy_only":
        q = proxy
        target = project_to_hyperplane(item_vec, normal)
    elif mode == "short_only":
        q = short
        target = item_vec
    elif mode == "no_projection":
        q = proxy + short
        target = item_vec
    else:  # dot_product
        q = proxy + project_to_hyperplane(short, normal)
        target = project_to_hyperplane(item_vec, normal)
        return -(target @ q) if item_vec.ndim > 1 else -float(q @ target)
    diff = q - target
    out = (diff * diff).sum(axis=axis)
    return out if item_vec.ndim > 1 else float(out)


def score_catalog(
    proxy: np.ndarray | None,
    short: np.ndarray | None,
    normal: np.ndarray | None,
    item_table: np.ndarray,
    mask=None,
    mode: str = "full",
) -> np.ndarray:
    """Dissimilarity of every catalog item; masked ids score +inf.

    item_table row 0 is the unused padding row, so scores[0] is always +inf
    and real items live at 1..N.
    """
    scores = np.empty(item_table.shape[0], dtype=np.float64)
    scores[0] = np.inf
    scores[1:] = dissimilarity(proxy, short, item_table[1:], normal, mode)
    if mask is not None:
        idx = np.fromiter(mask, dtype=np.int64) if not isinstance(mask, np.ndarray) else mask
        if idx.size:
            if idx.min() < 0 or idx.max() >= scores.shape[0]:
                raise MetricError(f"mask ids outside catalog: {idx.min()}..{idx.max()}")
            scores[idx] = np.inf
    return scores
