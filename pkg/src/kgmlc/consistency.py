"""Semantic consistency matrix and the Laplacian smoothing penalty.

The matrix is stored as its strict upper triangle in COO form. The penalty
``sqrt(p (D - S) p^T)`` and its gradient are evaluated from the stored
entries only, so their cost grows with ``nnz(S) + L`` rather than ``L**2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .kgraph import ProximityTable

DEFAULT_EPSILON = 1e-12


class WorkCounter:
    """Tally of matrix entries touched; pass one in to audit complexity."""

    def __init__(self):
        self.visited = 0

    def add(self, n: int) -> None:
        self.visited += int(n)


@dataclass(frozen=True, eq=False)
class ConsistencyMatrix:
    """Sparse symmetric L x L matrix with a zero diagonal.

    ``rows[k] < cols[k]`` for every stored entry and ``values[k] > 0``.
    """

    size: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    degree: np.ndarray = field(init=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValueError("rows, cols and values must be 1-D arrays of equal length")
        if rows.size:
            if np.any(rows >= cols):
                raise ValueError("entries must satisfy i < j")
            if rows.min() < 0 or cols.max() >= self.size:
                raise ValueError("entry index out of range")
            if np.any(~np.isfinite(vals)) or np.any(vals < 0):
                raise ValueError("entries must be finite and non-negative")
        keep = vals > 0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                raise ValueError("duplicate entries")
        for name, arr in (("rows", rows), ("cols", cols), ("values", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        deg = np.bincount(rows, vals, minlength=self.size) + np.bincount(cols, vals, minlength=self.size)
        deg.setflags(write=False)
        object.__setattr__(self, "degree", deg)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "ConsistencyMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise ValueError("dense matrix must be square")
        if not np.array_equal(dense, dense.T):
            raise ValueError("dense matrix must be symmetric")
        r, c = np.nonzero(np.triu(dense, 1))
        return cls(dense.shape[0], r, c, dense[r, c])

    @classmethod
    def empty(cls, size: int) -> "ConsistencyMatrix":
        z = np.zeros(0, dtype=np.int64)
        return cls(size, z, z, np.zeros(0))

    @property
    def nnz(self) -> int:
        """Number of stored (i < j) entries."""
        return int(self.values.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.size, self.size))
        out[self.rows, self.cols] = self.values
        out[self.cols, self.rows] = self.values
        return out

    def to_sparse(self) -> sp.csr_matrix:
        """Full symmetric matrix as CSR."""
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        v = np.concatenate([self.values, self.values])
        return sp.csr_matrix((v, (r, c)), shape=(self.size, self.size))

    def entries(self) -> dict[tuple[int, int], float]:
        return {(int(i), int(j)): float(v) for i, j, v in zip(self.rows, self.cols, self.values)}

    @cached_property
    def _incidence(self) -> sp.csr_matrix:
        # nnz x L, +1 at the row end and -1 at the column end of each entry
        e = np.arange(self.nnz)
        return sp.csr_matrix(
            (np.concatenate([np.ones(self.nnz), -np.ones(self.nnz)]),
             (np.concatenate([e, e]), np.concatenate([self.rows, self.cols]))),
            shape=(self.nnz, self.size),
        )

    def __eq__(self, other):
        if not isinstance(other, ConsistencyMatrix):
            return NotImplemented
        return (
            self.size == other.size
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def build_consistency(proximity: ProximityTable | np.ndarray) -> ConsistencyMatrix:
    """Symmetrize RWR proximities with a geometric mean, zeroing the diagonal."""
    R = proximity.values if isinstance(proximity, ProximityTable) else np.asarray(proximity, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"proximity must be square, got shape {R.shape}")
    if np.any(R < 0) or not np.all(np.isfinite(R)):
        raise ValueError("proximity entries must be finite and non-negative")
    iu, ju = np.triu_indices(R.shape[0], 1)
    vals = np.sqrt(R[iu, ju] * R[ju, iu])
    nz = vals > 0
    return ConsistencyMatrix(R.shape[0], iu[nz], ju[nz], vals[nz])


def knn_reduce(S: ConsistencyMatrix, K: int) -> ConsistencyMatrix:
    """Keep S_ij only if it is among the K largest of row i or of row j.

    Values tied with a row's K-th largest are all kept, so a row may retain
    more than K entries.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if S.nnz == 0:
        return S
    full = S.to_sparse()
    threshold = np.full(S.size, -np.inf)
    for i in range(S.size):
        row = full.data[full.indptr[i] : full.indptr[i + 1]]
        if row.size > K:
            threshold[i] = np.partition(row, row.size - K)[row.size - K]
    keep = (S.values >= threshold[S.rows]) | (S.values >= threshold[S.cols])
    return ConsistencyMatrix(S.size, S.rows[keep], S.cols[keep], S.values[keep])


def _check_p(S: ConsistencyMatrix, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim not in (1, 2) or p.shape[-1] != S.size:
        raise ValueError(f"probability vector length {p.shape[-1] if p.ndim else 0} != L={S.size}")
    return p


def laplacian_apply(S: ConsistencyMatrix, p, counter: WorkCounter | None = None) -> np.ndarray:
    """Return ``p (D - S)`` for one vector or a batch of row vectors.

    Each component is accumulated as ``sum_j S_ij (p_i - p_j)``, which is
    exactly zero for constant ``p``.
    """
    p = _check_p(S, p)
    batch = 1 if p.ndim == 1 else p.shape[0]
    if counter is not None:
        counter.add(batch * (S.nnz + S.size))
    if S.nnz == 0:
        return np.zeros_like(p)
    B = S._incidence
    diff = B @ p.T  # (nnz,) or (nnz, M)
    weighted = diff * (S.values if p.ndim == 1 else S.values[:, None])
    return (B.T @ weighted).T


def laplacian_quadratic(S: ConsistencyMatrix, p, counter: WorkCounter | None = None):
    """``Tr[p (D - S) p^T]`` in O(nnz(S) + L); a batch gives one value per row.

    Values in ``[-1e-12, 0)`` from rounding are clamped to zero.
    """
    p = _check_p(S, p)
    q = np.sum(p * laplacian_apply(S, p, counter), axis=-1)
    q = np.where((q < 0) & (q >= -1e-12), 0.0, q)
    return float(q) if p.ndim == 1 else q


def pairwise_quadratic(S: ConsistencyMatrix, p, counter: WorkCounter | None = None):
    """Direct double sum ``sum_i sum_{j<i} S_ij (p_i - p_j)**2``.

    Visits every label pair, O(L**2) per vector. Reference for tests and the
    scaling benchmark; training never calls it.
    """
    p = _check_p(S, p)
    dense = S.to_dense().tolist()
    vectors = [p] if p.ndim == 1 else list(p)
    out = []
    L = S.size
    for vec in vectors:
        v = vec.tolist()
        total = 0.0
        for i in range(L):
            row = dense[i]
            pi = v[i]
            for j in range(i):
                d = pi - v[j]
                total += row[j] * d * d
        out.append(total)
        if counter is not None:
            counter.add(L * (L - 1) // 2)
    return out[0] if p.ndim == 1 else np.array(out)


def regularizer(S: ConsistencyMatrix, p, epsilon: float = DEFAULT_EPSILON, counter: WorkCounter | None = None):
    """Smoothed penalty ``sqrt(q + eps**2) - eps`` and its gradient in ``p``.

    ``q`` is the Laplacian quadratic form. The gradient is
    ``p (D - S) / sqrt(q + eps**2)`` and is exactly zero wherever ``q == 0``.
    A 2-D ``p`` is treated as a batch, with one penalty per row.
    """
    p = _check_p(S, p)
    lp = laplacian_apply(S, p, counter)
    q = np.sum(p * lp, axis=-1)
    q = np.maximum(q, 0.0)
    root = np.sqrt(q + epsilon * epsilon)
    value = root - epsilon
    grad = lp / (root if p.ndim == 1 else root[:, None])
    if p.ndim == 1:
        if q == 0.0:
            return 0.0, np.zeros_like(p)
        return float(value), grad
    flat = q == 0.0
    value = np.where(flat, 0.0, value)
    grad[flat] = 0.0
    return value, grad


def save_coo(S: ConsistencyMatrix, path: str | Path, metadata: dict | None = None) -> None:
    """Write ``L nnz`` then one ``i j value`` line per entry (17 significant digits).

    ``metadata``, if given, goes to a ``<path>.meta.json`` sidecar.
    """
    path = Path(path)
    lines = [f"{S.size} {S.nnz}"]
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(S.rows.tolist(), S.cols.tolist(), S.values.tolist())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if metadata is not None:
        meta_path(path).write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def load_coo(path: str | Path) -> ConsistencyMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be 'L nnz'")
        size, nnz = int(header[0]), int(header[1])
        rows, cols, vals = [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'i j value'")
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(float(parts[2]))
    if len(vals) != nnz:
        raise ValueError(f"{path}: header says {nnz} entries, found {len(vals)}")
    return ConsistencyMatrix(size, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals))
