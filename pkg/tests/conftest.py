from __future__ import annotations

from importlib import resources

import numpy as np
import pytest

from traceorder.poset import Poset, load_graph

DATA = resources.files("traceorder") / "data"


def data_path(name: str) -> str:
    return str(DATA / name)


def random_poset(rng: np.random.Generator, m: int, density: float = 0.3) -> Poset:
    """Closure of a random DAG consistent with a random permutation."""
    perm = rng.permutation(m)
    edges = [
        (int(perm[a]), int(perm[b]))
        for a in range(m)
        for b in range(a + 1, m)
        if rng.random() < density
    ]
    return Poset.from_edges(m, edges)


@pytest.fixture
def diamond() -> Poset:
    # 1 -> {2, 3} -> 4 as indices 0..3
    return Poset.from_edges(4, [(0, 1), (0, 2), (1, 3), (2, 3)])


@pytest.fixture
def fork5():
    return load_graph(data_path("fork5.json"))


@pytest.fixture
def s1_paths():
    return {
        "scenario": data_path("s1_scenario.json"),
        "graph": data_path("s1_graph.json"),
        "traces": data_path("s1_traces.json"),
        "rich": data_path("s1_rich_trace.json"),
    }
