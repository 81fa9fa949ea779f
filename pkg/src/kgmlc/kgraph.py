"""Knowledge-graph ingestion and random-walk-with-restart proximity.

Edges are read from a tab-separated dump (head, relation, tail), filtered by
relation name, and collapsed into an unweighted undirected graph. Proximity
between two concepts is the stationary probability of a restarting random
walk started at one of them.
"""

from __future__ import annotations

import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_BLOCKED_RELATIONS = frozenset(
    {"NotDesires", "NotCapableOf", "Antonym", "DistinctFrom"}
)

_WS = re.compile(r"\s+")


class GraphParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyGraphError(ValueError):
    pass


class ConvergenceWarning(RuntimeWarning):
    pass


def normalize_name(name: str) -> str:
    """Lowercase, trim, and join internal whitespace runs with '_'."""
    norm = _WS.sub("_", name.strip().lower())
    if not norm:
        raise ValueError(f"empty concept name: {name!r}")
    return norm


def _normalize_relation(rel: str) -> str:
    rel = rel.strip()
    # ConceptNet dumps write relations as /r/Name
    if rel.startswith("/r/"):
        rel = rel[3:]
    return rel


class ConceptId(NamedTuple):
    index: int
    name: str


@dataclass(frozen=True)
class RelationFilter:
    blocked_relations: frozenset[str] = DEFAULT_BLOCKED_RELATIONS

    def __post_init__(self):
        object.__setattr__(
            self,
            "blocked_relations",
            frozenset(_normalize_relation(r) for r in self.blocked_relations),
        )

    def blocks(self, relation: str) -> bool:
        return _normalize_relation(relation) in self.blocked_relations


@dataclass(frozen=True)
class RwrConfig:
    restart_prob: float = 0.15
    tolerance: float = 1e-10
    max_iterations: int = 1000

    def __post_init__(self):
        if not 0.0 < self.restart_prob < 1.0:
            raise ValueError("restart_prob must lie strictly inside (0, 1)")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be a positive integer")


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Immutable undirected concept graph.

    ``adjacency[v]`` is a sorted tuple of neighbor indices of node ``v``.
    """

    nodes: tuple[ConceptId, ...]
    adjacency: tuple[tuple[int, ...], ...]
    name_index: dict[str, ConceptId] = field(repr=False)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]]) -> "KnowledgeGraph":
        """Build a graph from (head, tail) name pairs.

        Names are normalized; self-loops and repeated edges are dropped.
        Node indices follow first appearance.
        """
        index: dict[str, int] = {}
        names: list[str] = []
        neigh: list[set[int]] = []

        def intern(name: str) -> int:
            i = index.get(name)
            if i is None:
                i = index[name] = len(names)
                names.append(name)
                neigh.append(set())
            return i

        for head, tail in edges:
            h, t = normalize_name(head), normalize_name(tail)
            if h == t:
                continue
            a, b = intern(h), intern(t)
            neigh[a].add(b)
            neigh[b].add(a)

        nodes = tuple(ConceptId(i, n) for i, n in enumerate(names))
        return cls(
            nodes=nodes,
            adjacency=tuple(tuple(sorted(s)) for s in neigh),
            name_index={c.name: c for c in nodes},
        )

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def concept(self, name: str) -> ConceptId | None:
        return self.name_index.get(normalize_name(name))

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, nb in enumerate(self.adjacency) for v in nb if u < v]

    @cached_property
    def transition(self) -> sp.csr_matrix:
        """Row-stochastic uniform transition matrix (rows of isolated nodes are zero)."""
        n = len(self.nodes)
        deg = np.array([len(a) for a in self.adjacency], dtype=np.float64)
        rows = np.repeat(np.arange(n), deg.astype(np.int64))
        cols = np.fromiter((v for a in self.adjacency for v in a), dtype=np.int64, count=rows.size)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return sp.csr_matrix((inv[rows], (rows, cols)), shape=(n, n))


def load_edge_list(path: str | Path, filter: RelationFilter | None = None) -> KnowledgeGraph:
    """Read a ``head<TAB>relation<TAB>tail[<TAB>weight]`` file into a graph.

    Blank lines and lines starting with '#' are skipped. Any extra columns
    (e.g. a weight) are ignored.
    """
    filter = filter or RelationFilter()
    kept: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise GraphParseError(lineno, f"expected >= 3 tab-separated fields, got {len(parts)}")
            head, rel, tail = parts[0], parts[1], parts[2]
            if not head.strip() or not tail.strip():
                raise GraphParseError(lineno, "empty concept name")
            if filter.blocks(rel):
                continue
            kept.append((head, tail))
    graph = KnowledgeGraph.from_edges(kept)
    if len(graph) == 0:
        raise EmptyGraphError(f"{path}: no edges left after filtering")
    return graph


def load_vocabulary(path: str | Path) -> list[str]:
    """One label name per line; the line number is the label index."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh if line.strip()]


def map_labels(graph: KnowledgeGraph, label_names: Sequence[str]) -> list[ConceptId | None]:
    if not label_names:
        raise ValueError("label_names must be non-empty")
    out: list[ConceptId | None] = []
    for name in label_names:
        try:
            out.append(graph.name_index.get(normalize_name(name)))
        except ValueError:
            out.append(None)
    return out


def _power_iterate(graph: KnowledgeGraph, sources: Sequence[int], config: RwrConfig) -> np.ndarray:
    # One row per source: r <- a*e + (1-a) r P, with P row-stochastic.
    n = len(graph)
    if n == 0:
        raise EmptyGraphError("graph has no nodes")
    src = np.asarray(sources, dtype=np.int64)
    if src.size and (src.min() < 0 or src.max() >= n):
        raise IndexError("source node not in graph")
    alpha = config.restart_prob
    restart = np.zeros((src.size, n))
    restart[np.arange(src.size), src] = 1.0
    if src.size == 0:
        return restart

    isolated = np.array([graph.degree(int(s)) == 0 for s in src])
    pt = graph.transition.T.tocsr()
    r = restart.copy()
    converged = False
    for _ in range(config.max_iterations):
        nxt = alpha * restart + (1.0 - alpha) * (pt @ r.T).T
        delta = np.max(np.abs(nxt - r))
        r = nxt
        if delta < config.tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"random walk did not converge in {config.max_iterations} iterations "
            f"(last change {delta:.3e})",
            ConvergenceWarning,
            stacklevel=3,
        )
    r[isolated] = restart[isolated]
    return r


def rwr_from(graph: KnowledgeGraph, source: ConceptId | int, config: RwrConfig | None = None) -> np.ndarray:
    """Stationary distribution of a walk that restarts at ``source``.

    Solves ``r = a*e_source + (1 - a) P^T r`` by power iteration. An isolated
    source keeps all of its mass. Emits :class:`ConvergenceWarning` instead of
    raising when ``max_iterations`` is hit.
    """
    config = config or RwrConfig()
    idx = source.index if isinstance(source, ConceptId) else int(source)
    return _power_iterate(graph, [idx], config)[0]


@dataclass(frozen=True)
class ProximityTable:
    sources: tuple[ConceptId, ...]
    values: np.ndarray

    def __post_init__(self):
        n = len(self.sources)
        if self.values.shape != (n, n):
            raise ValueError(f"proximity values must be {n}x{n}, got {self.values.shape}")


def proximity_table(
    graph: KnowledgeGraph,
    label_nodes: Sequence[ConceptId],
    config: RwrConfig | None = None,
    *,
    workers: int = 1,
    chunk: int = 256,
) -> ProximityTable:
    """RWR probabilities between every ordered pair of label nodes.

    Row ``i`` is ``rwr_from(label_nodes[i])`` restricted to the label columns.
    Rows are independent; ``workers > 1`` computes chunks of rows in threads
    and yields the same table as the sequential run.
    """
    config = config or RwrConfig()
    for c in label_nodes:
        if not (0 <= c.index < len(graph)) or graph.nodes[c.index].name != c.name:
            raise KeyError(f"label node {c} not in graph")
    idx = [c.index for c in label_nodes]
    cols = np.asarray(idx, dtype=np.int64)
    batches = [idx[i : i + chunk] for i in range(0, len(idx), chunk)]

    def run(batch: list[int]) -> np.ndarray:
        return _power_iterate(graph, batch, config)[:, cols]

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    values = np.vstack(parts) if parts else np.zeros((0, 0))
    return ProximityTable(sources=tuple(label_nodes), values=values)
