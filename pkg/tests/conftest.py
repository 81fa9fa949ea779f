import numpy as np
import pytest

from kgmlc.kgraph import KnowledgeGraph


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


@pytest.fixture
def path_graph():
    return KnowledgeGraph.from_edges([("a", "b"), ("b", "c")])


@pytest.fixture
def path_edges(tmp_path):
    return write_lines(tmp_path / "edges.tsv", [
        "# head\trelation\ttail",
        "a\tRelatedTo\tb",
        "b\tIsA\tc\t2.0",
        "c\tAntonym\ta",
    ])


def rwr_linear_solve(graph, source, alpha):
    """Direct solve of (I - (1-a) P^T) r = a e_source."""
    n = len(graph)
    P = np.zeros((n, n))
    for u, nb in enumerate(graph.adjacency):
        for v in nb:
            P[u, v] = 1.0 / len(nb)
    e = np.zeros(n)
    e[source] = 1.0
    if not graph.adjacency[source]:
        return e
    return np.linalg.solve(np.eye(n) - (1 - alpha) * P.T, alpha * e)


def random_graph(rng, n, p_edge):
    edges = [(f"n{i}", f"n{j}") for i in range(n) for j in range(i + 1, n) if rng.random() < p_edge]
    if not edges:
        edges = [("n0", "n1")]
    return KnowledgeGraph.from_edges(edges)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
