"""Non-Bayesian baselines and the shared cycle-break projection.

Every baseline produces a weighted digraph that may contain cycles; it is
turned into a partial order by repeatedly deleting the weakest edge of some
directed cycle and then taking closure and reduction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .poset import NLE_CAP, CoverGraph, Poset, transitive_reduction
from .sampler import Chain, SamplerConfig, run_chain
from .traces import TraceSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightedDigraph:
    m: int
    A: np.ndarray  # bool adjacency
    W: np.ndarray  # edge weights, larger = stronger

    def __post_init__(self):
        A = np.asarray(self.A, dtype=bool)
        W = np.asarray(self.W, dtype=float)
        if A.shape != (self.m, self.m) or W.shape != (self.m, self.m):
            raise ValueError("adjacency and weights must be m x m")
        if (W < 0).any():
            raise ValueError("weights must be nonnegative")
        if (W[~A] > 0).any():
            raise ValueError("positive weight on a missing edge")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "W", W)

    @classmethod
    def from_edges(cls, m: int, weighted: dict[tuple[int, int], float]) -> "WeightedDigraph":
        A = np.zeros((m, m), dtype=bool)
        W = np.zeros((m, m))
        for (i, j), w in weighted.items():
            A[i, j] = True
            W[i, j] = w
        return cls(m, A, W)


def find_cycle(A: np.ndarray) -> list[tuple[int, int]] | None:
    """Edges of one directed cycle, searching depth-first from the lowest index."""
    m = A.shape[0]
    state = [0] * m  # 0 new, 1 on stack, 2 done
    for root in range(m):
        if state[root]:
            continue
        path = [root]
        iters = [iter(np.flatnonzero(A[root]).tolist())]
        state[root] = 1
        while path:
            nxt = next(iters[-1], None)
            if nxt is None:
                state[path.pop()] = 2
                iters.pop()
                continue
            if state[nxt] == 1:
                cyc = path[path.index(nxt):] + [nxt]
                return list(zip(cyc, cyc[1:]))
            if state[nxt] == 0:
                state[nxt] = 1
                path.append(nxt)
                iters.append(iter(np.flatnonzero(A[nxt]).tolist()))
    return None


def cycle_break_and_cover(g: WeightedDigraph) -> CoverGraph:
    A = g.A.copy()
    while (cyc := find_cycle(A)) is not None:
        i, j = min(cyc, key=lambda e: g.W[e])
        A[i, j] = False
    edges = [(int(i), int(j)) for i, j in np.argwhere(A)]
    return transitive_reduction(Poset.from_edges(g.m, edges))


def precedence_counts(traces: TraceSet) -> tuple[np.ndarray, np.ndarray]:
    """Co-occurrence counts T and precedence counts C (C[i, j]: i before j)."""
    m = len(traces.catalog)
    T = np.zeros((m, m), dtype=np.int64)
    C = np.zeros((m, m), dtype=np.int64)
    for order in traces.indexed():
        for a, b in combinations(order, 2):
            C[a, b] += 1
            T[a, b] += 1
            T[b, a] += 1
    return T, C


def majority_baseline(traces: TraceSet, tau: float = 0.5) -> Poset:
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if tau < 0.5:
        log.warning("tau=%s below 0.5 admits zero-weight edges, which break first in cycles", tau)
    T, C = precedence_counts(traces)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(T > 0, C / np.maximum(T, 1), 0.0)
    A = (T > 0) & (p > tau) & (p > p.T)
    W = np.where(A, np.abs(p - 0.5), 0.0)
    return cycle_break_and_cover(WeightedDigraph(len(traces.catalog), A, W)).to_poset()


def dependency_matrix(traces: TraceSet) -> np.ndarray:
    """(c(a,b) - c(b,a)) / (c(a,b) + c(b,a) + 1) over direct successions."""
    m = len(traces.catalog)
    c = np.zeros((m, m))
    for order in traces.indexed():
        for a, b in zip(order, order[1:]):
            c[a, b] += 1
    D = (c - c.T) / (c + c.T + 1.0)
    np.fill_diagonal(D, 0.0)
    return D


def heuristics_baseline(traces: TraceSet, delta: float = 0.5) -> Poset:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    D = dependency_matrix(traces)
    A = D >= delta
    return cycle_break_and_cover(WeightedDigraph(len(traces.catalog), A, np.where(A, D, 0.0))).to_poset()


def qj_infer(config: SamplerConfig, traces: TraceSet, out=None, cap: int = NLE_CAP) -> Chain:
    """Posterior chain under the queue-jump likelihood (jump weight ``config.qj_jump``)."""
    return run_chain(config, traces, "queue-jump", out=out, nle_cap=cap)
