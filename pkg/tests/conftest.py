import numpy as np
import pytest

from graphlc.graph import Graph


def random_tree(V, rng):
    edges = [[i, int(rng.integers(0, i))] for i in range(1, V)]
    return Graph.from_edges(V, np.array(edges, dtype=np.int64).reshape(-1, 2), "tree")


def path_graph(V):
    return Graph.from_edges(V, [[i, i + 1] for i in range(V - 1)], "path")


def star_graph(V):
    return Graph.from_edges(V, [[0, i] for i in range(1, V)], "star")


def complete_graph(V):
    return Graph.from_edges(V, [[i, j] for i in range(V) for j in range(i + 1, V)], "complete")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
