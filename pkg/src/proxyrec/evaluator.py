"""Ranking evaluation: deterministic rank-of-target, recall@k and MRR@k.

Scores come from the inference path: the selection distribution is computed
from the prefix only (the part of the session actually observed at
prediction time), degenerate mixtures raise instead of being padded, and on
the unseen task every prefix item is masked out of the catalog before
ranking.

Ranks are deterministic under score ties: an item tied with the target
counts against it only when its id is smaller. Multi-threaded evaluation
partitions instances into contiguous chunks and writes ranks back by
position, so the aggregate never depends on thread scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import PredictionInstance
from .encoder import encode_short_term
from .errors import ConfigError, MetricError
from .scoring import SCORING_MODES, hyperplane_normal, score_catalog
from .selector import select_for_inference


def rank_of_target(scores: np.ndarray, target: int) -> int:
    """1-based rank of the target under ascending score, ties broken by id.

    rank = 1 + #(strictly better) + #(tied with a smaller id). Masked items
    carry +inf and can never outrank anything finite; a non-finite target
    score means the target itself was masked out, which is a caller bug.
    """
    if not 1 <= target < scores.shape[0]:
        raise MetricError(f"target id {target} outside catalog of {scores.shape[0] - 1}")
    st = scores[target]
    if not np.isfinite(st):
        raise MetricError(f"target id {target} has non-finite score {st}")
    better = int(np.count_nonzero(scores < st))
    tied_before = int(np.count_nonzero(scores[:target] == st))
    return 1 + better + tied_before


def score_instance(
    params,
    instance: PredictionInstance,
    tau: float,
    task: str,
    mode: str = "full",
) -> np.ndarray:
    """Catalog scores (N+1,) for one instance; unseen task masks the prefix."""
    proxy = normal = short = None
    if mode != "short_only":
        pi, proxy = select_for_inference(instance, params, tau)
        normal = hyperplane_normal(pi, params.bank.normals, strict=True)
    if mode != "proxy_only":
        short = encode_short_term(instance.prefix, params.items, params.encoder)
    mask = instance.prefix if task == "unseen" else None
    return score_catalog(proxy, short, normal, params.items, mask=mask, mode=mode)


@dataclass
class MetricsReport:
    recall: dict[int, float]
    mrr: dict[int, float]
    count: int

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
            "mrr": {str(k): v for k, v in sorted(self.mrr.items())},
        }

    def as_text(self) -> str:
        lines = [f"{'k':>4}  {'recall@k':>10}  {'mrr@k':>10}"]
        for k in sorted(self.recall):
            lines.append(f"{k:>4}  {self.recall[k]:>10.6f}  {self.mrr[k]:>10.6f}")
        lines.append(f"({self.count} instances)")
        return "\n".join(lines)


def compute_ranks(
    params,
    instances: list[PredictionInstance],
    task: str,
    tau: float,
    mode: str = "full",
    threads: int = 1,
) -> np.ndarray:
    """Rank of every instance's target, in instance order."""
    if mode not in SCORING_MODES:
        raise ConfigError(f"unknown scoring mode {mode!r}; expected one of {SCORING_MODES}")
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    ranks = np.empty(len(instances), dtype=np.int64)

    def fill(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            scores = score_instance(params, instances[i], tau, task, mode)
            ranks[i] = rank_of_target(scores, instances[i].target)

    n = len(instances)
    if threads == 1 or n < 2 * threads:
        fill(0, n)
    else:
        step = -(-n // threads)
        bounds = [(lo, min(lo + step, n)) for lo in range(0, n, step)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for fut in [pool.submit(fill, lo, hi) for lo, hi in bounds]:
                fut.result()
    return ranks


def metrics_from_ranks(ranks: np.ndarray, ks: tuple[int, ...]) -> MetricsReport:
    if ranks.size == 0:
        raise MetricError("metrics over zero instances are undefined")
    recall, mrr = {}, {}
    for k in ks:
        if k < 1:
            raise ConfigError(f"cutoff must be >= 1, got {k}")
        hit = ranks <= k
        recall[int(k)] = float(np.mean(hit))
        mrr[int(k)] = float(np.mean(np.where(hit, 1.0 / ranks, 0.0)))
    return MetricsReport(recall=recall, mrr=mrr, count=int(ranks.size))


def evaluate(
    params,
    instances: list[PredictionInstance],
    task: str,
    ks: tuple[int, ...] = (5, 10, 20),
    tau: float = 0.01,
    mode: str = "full",
    threads: int = 1,
) -> MetricsReport:
    """Recall@k and MRR@k over prediction instances at a fixed temperature."""
    if not instances:
        raise MetricError("metrics over zero instances are undefined")
    ranks = compute_ranks(params, instances, task, tau, mode=mode, threads=threads)
    return metrics_from_ranks(ranks, tuple(ks))
