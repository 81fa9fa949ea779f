"""Ranking metrics over per-video label probabilities: MAP, HIT and GAP.

All three look only at each video's top ``k`` labels (20 by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import DEFAULT_TOP_K, topk


@dataclass(frozen=True)
class VideoResult:
    id: str
    ranked: tuple[tuple[int, float], ...]
    ap: float


@dataclass(frozen=True)
class EvalReport:
    map: float
    hit: float
    gap: float
    per_video: tuple[VideoResult, ...] = field(default=(), repr=False)

    def key_values(self) -> str:
        return f"map={self.map:.6f}\nhit={self.hit:.6f}\ngap={self.gap:.6f}\n"

    def table(self) -> str:
        rows = [("metric", "value"), ("MAP", f"{self.map:.4f}"), ("HIT", f"{self.hit:.4f}"), ("GAP", f"{self.gap:.4f}")]
        return "\n".join(f"{a:<8}{b:>8}" for a, b in rows) + "\n"


def average_precision(ranked: Sequence[int], truth, k: int = DEFAULT_TOP_K) -> float:
    """AP of a ranked label list cut at ``k``, normalized by ``min(|truth|, k)``.

    An empty truth set scores 0.
    """
    ranked = list(ranked)
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicate labels")
    truth = set(truth)
    if not truth:
        return 0.0
    hits = 0
    total = 0.0
    for r, label in enumerate(ranked[:k], start=1):
        if label in truth:
            hits += 1
            total += hits / r
    return total / min(len(truth), k)


def global_average_precision(predictions: np.ndarray, truths: Sequence, k: int = DEFAULT_TOP_K) -> float:
    """AP over the pooled top-``k`` predictions of every video.

    Entries are sorted by probability (descending), ties by video then label
    index. The positive count is the sum over videos of ``min(|truth|, k)``.
    """
    P = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    k = min(k, P.shape[1])
    probs, vids, labs, hit = [], [], [], []
    positives = 0
    for v, (p, truth) in enumerate(zip(P, truths)):
        truth = set(truth)
        positives += min(len(truth), k)
        for label, prob in topk(p, k):
            probs.append(prob)
            vids.append(v)
            labs.append(label)
            hit.append(label in truth)
    if positives == 0:
        return 0.0
    order = np.lexsort((np.array(labs), np.array(vids), -np.array(probs)))
    hit_sorted = np.array(hit, dtype=bool)[order]
    ranks = np.flatnonzero(hit_sorted) + 1
    cum_hits = np.arange(1, ranks.size + 1)
    return float(np.sum(cum_hits / ranks) / positives)


def evaluate(predictions, truths: Sequence, k: int = DEFAULT_TOP_K, ids: Sequence[str] | None = None) -> EvalReport:
    """MAP, HIT and GAP for aligned per-video predictions and truth sets."""
    P = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    if P.shape[0] != len(truths):
        raise ValueError(f"{P.shape[0]} predictions but {len(truths)} truth sets")
    if P.shape[0] == 0:
        raise ValueError("nothing to evaluate")
    if ids is None:
        ids = [str(i) for i in range(P.shape[0])]
    k_eff = min(k, P.shape[1])
    per_video = []
    hits = 0
    for vid, p, truth in zip(ids, P, truths):
        ranked = topk(p, k_eff)
        labels = [lab for lab, _ in ranked]
        truth = set(truth)
        hits += labels[0] in truth
        per_video.append(VideoResult(vid, tuple(ranked), average_precision(labels, truth, k_eff)))
    n = P.shape[0]
    return EvalReport(
        map=sum(v.ap for v in per_video) / n,
        hit=hits / n,
        gap=global_average_precision(P, truths, k_eff),
        per_video=tuple(per_video),
    )
