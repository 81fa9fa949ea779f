"""Timing of the pairwise penalty against the Laplacian (matrix) form.

The pairwise double sum touches every label pair, so its cost grows with
``L**2``; the matrix form touches only stored entries. At a fixed number of
entries per row the matrix form should scale roughly linearly in ``L``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .consistency import ConsistencyMatrix, laplacian_quadratic, pairwise_quadratic


@dataclass(frozen=True)
class BenchRow:
    labels: int
    batch: int
    nnz: int
    pairwise_s: float
    matrix_s: float


def random_sparse_consistency(L: int, nnz_per_row: int, rng: np.random.Generator) -> ConsistencyMatrix:
    """Random symmetric S where each row links to ``nnz_per_row`` random others."""
    k = min(nnz_per_row, L - 1)
    if k <= 0:
        return ConsistencyMatrix.empty(L)
    rows = np.repeat(np.arange(L), k)
    # draw from the L-1 other labels, then shift past the diagonal
    cols = np.concatenate([rng.choice(L - 1, size=k, replace=False) for _ in range(L)])
    cols = np.where(cols >= rows, cols + 1, cols)
    pairs = np.unique(np.stack([np.minimum(rows, cols), np.maximum(rows, cols)], axis=1), axis=0)
    vals = rng.uniform(0.1, 1.0, size=len(pairs))
    return ConsistencyMatrix(L, pairs[:, 0], pairs[:, 1], vals)


def _best_time(fn: Callable[[], object], repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_regularizer(labels: Sequence[int] = (256, 512, 1024), batches: Sequence[int] = (1,),
                      nnz_per_row: int = 5, repeats: int = 3, seed: int = 0,
                      matrix_inner: int = 200) -> list[BenchRow]:
    """Best-of-``repeats`` time per evaluation of both forms on random inputs.

    The matrix form is fast enough that each timing averages
    ``matrix_inner`` back-to-back evaluations.
    """
    rng = np.random.default_rng(seed)
    out = []
    for L in labels:
        S = random_sparse_consistency(L, nnz_per_row, rng)
        for M in batches:
            P = rng.uniform(size=(M, L))

            def matrix():
                for _ in range(matrix_inner):
                    laplacian_quadratic(S, P)

            t_pair = _best_time(lambda: pairwise_quadratic(S, P), repeats)
            t_mat = _best_time(matrix, repeats) / matrix_inner
            out.append(BenchRow(L, M, S.nnz, t_pair, t_mat))
    return out


def format_table(rows: Sequence[BenchRow]) -> str:
    lines = ["L\tM\tnnz\tpairwise_s\tmatrix_s\tspeedup"]
    for r in rows:
        lines.append(
            f"{r.labels}\t{r.batch}\t{r.nnz}\t{r.pairwise_s:.6g}\t{r.matrix_s:.6g}\t{r.pairwise_s / r.matrix_s:.1f}"
        )
    return "\n".join(lines) + "\n"


def growth_ratios(rows: Sequence[BenchRow]) -> list[tuple[int, int, int, float, float]]:
    """For consecutive label sizes at equal batch: (M, L_small, L_big, pairwise ratio, matrix ratio)."""
    by_batch: dict[int, list[BenchRow]] = {}
    for r in rows:
        by_batch.setdefault(r.batch, []).append(r)
    out = []
    for M, rs in sorted(by_batch.items()):
        rs = sorted(rs, key=lambda r: r.labels)
        for a, b in zip(rs, rs[1:]):
            out.append((M, a.labels, b.labels, b.pairwise_s / a.pairwise_s, b.matrix_s / a.matrix_s))
    return out
