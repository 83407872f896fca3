"""Proxy selection: session logits, annealed softmax, and proxy assembly.

A shared bank of K proxy embeddings stands in for unknown user profiles.
A two-layer point-wise feed-forward scorer (no biases) turns each session
item into selection logits, averaged over positions:

    alpha = mean_j  W2' leaky_relu(W1' (item_j + pos_j))      (slope 0.1)

The selection distribution is softmax(alpha / tau) with the temperature
annealed across epochs, so training moves from a soft mixture of proxies to
a near one-hot choice. The chosen mixture is rescaled so its norm equals the
mixture of the bank row norms, which keeps a soft combination from shrinking
toward the origin.

During training the distribution is computed from the whole parent session,
including the items after the prediction point; at inference only the prefix
is available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateProxyError, LengthError

EPS_DEGENERATE = 1e-12


@dataclass
class SelectorParams:
    w1: np.ndarray  # (d, hidden)
    w2: np.ndarray  # (hidden, K)
    pos: np.ndarray  # (max_len, d), forward positional rows


@dataclass
class ProxyBank:
    proxies: np.ndarray  # (K, d), rows kept inside the unit ball
    normals: np.ndarray  # (K, d), rows kept at unit norm


@dataclass
class AnnealSchedule:
    start: float = 3.0
    end: float = 0.01
    epochs: int = 10

    def __post_init__(self):
        # start == end is allowed: it pins the temperature (no annealing)
        if not (self.start >= self.end > 0.0):
            raise ConfigError(
                f"anneal schedule needs start >= end > 0, got {self.start}, {self.end}"
            )
        if self.epochs < 1:
            raise ConfigError(f"anneal epochs must be >= 1, got {self.epochs}")


def temperature(epoch: int, sched: AnnealSchedule) -> float:
    """Exponential decay from start to end over the schedule's epochs.

    Clamped exactly to the end value from the final epoch onward, so the
    floor is hit without floating-point drift.
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    if epoch >= sched.epochs:
        return sched.end
    t = sched.start * (sched.end / sched.start) ** (epoch / sched.epochs)
    return max(t, sched.end)


def _leaky(x: np.ndarray, slope: float = 0.1) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def encode_logits(
    items, item_table: np.ndarray, sel: SelectorParams
) -> np.ndarray:
    """Per-session selection logits: position-wise FFN scores, averaged."""
    idx = np.asarray(items, dtype=np.int64)
    n = idx.shape[0]
    if n == 0:
        raise LengthError("cannot encode an empty session")
    if n > sel.pos.shape[0]:
        raise LengthError(
            f"session length {n} exceeds positional table of {sel.pos.shape[0]} rows"
        )
    x = item_table[idx] + sel.pos[:n]
    return (_leaky(x @ sel.w1) @ sel.w2).mean(axis=0)


def selection_distribution(
    logits: np.ndarray, tau: float, user_bias: np.ndarray | None = None
) -> np.ndarray:
    """softmax((logits + bias) / tau), stabilized by max subtraction."""
    if tau <= 0.0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    z = logits if user_bias is None else logits + user_bias
    z = z / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def assemble_proxy(
    pi: np.ndarray, bank: ProxyBank, strict: bool = True
) -> tuple[np.ndarray, float]:
    """Combine bank rows under pi and rescale to the mixed row-norm length.

    Returns (proxy, gamma) with proxy = gamma * sum_j pi_j P_j and gamma
    chosen so that ||proxy|| equals sum_j pi_j ||P_j||. A (near) zero
    combination has no direction to rescale: strict mode raises, while the
    training path pads the denominator with a tiny constant and carries on.
    """
    combined = pi @ bank.proxies
    norm = float(np.linalg.norm(combined))
    mixed_norms = float(pi @ np.linalg.norm(bank.proxies, axis=1))
    if strict:
        if norm < EPS_DEGENERATE:
            raise DegenerateProxyError(
                f"proxy combination has norm {norm:.3e}; cannot rescale"
            )
        gamma = mixed_norms / norm
    else:
        gamma = mixed_norms / (norm + EPS_DEGENERATE)
    return gamma * combined, gamma


def select_for_training(instance, params, tau: float):
    """(pi, proxy) for a training instance: logits from the whole parent session."""
    return _select(instance.parent_items, instance, params, tau, strict=False)


def select_for_inference(instance, params, tau: float):
    """(pi, proxy) for an evaluation instance: logits from the prefix only."""
    return _select(instance.prefix, instance, params, tau, strict=True)


def _select(items, instance, params, tau, strict):
    logits = encode_logits(items, params.items, params.selector)
    bias = params.bias_for(instance.user_tag) if instance.known_user else None
    pi = selection_distribution(logits, tau, bias)
    proxy, _ = assemble_proxy(pi, params.bank, strict=strict)
    return pi, proxy
