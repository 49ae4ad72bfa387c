"""Posterior edge marginals, point estimates and structural-recovery metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .baselines import WeightedDigraph, cycle_break_and_cover
from .errors import CatalogMismatch, EmptyChain
from .poset import ActionCatalog, CoverGraph, Poset, is_linear_extension, transitive_reduction
from .sampler import Chain
from .traces import TraceSet, ip_coverage


@dataclass(frozen=True)
class EdgeMarginals:
    """``probs[i, j]`` is the fraction of samples in which i precedes j."""

    catalog: ActionCatalog
    counts: np.ndarray  # int, m x m
    n: int

    @property
    def m(self) -> int:
        return len(self.catalog)

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n

    def incomparable(self) -> np.ndarray:
        """Pairwise mass of "neither precedes the other" (diagonal is 0)."""
        p = 1.0 - self.probs - self.probs.T
        np.fill_diagonal(p, 0.0)
        return p


def edge_marginals(chain: Chain) -> EdgeMarginals:
    if not len(chain):
        raise EmptyChain("chain has no samples")
    m = len(chain.catalog)
    counts = np.zeros((m, m), dtype=np.int64)
    for s in chain:
        for i, j in s.edges:
            counts[i, j] += 1
    return EdgeMarginals(chain.catalog, counts, len(chain))


def write_marginals_csv(marginals: EdgeMarginals, path=None) -> str:
    """m x m CSV with a header row of action names; returns the text as well."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(marginals.catalog.names)
    for row in marginals.probs:
        w.writerow([repr(float(x)) for x in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_marginals_csv(path) -> tuple[ActionCatalog, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return ActionCatalog(rows[0]), np.array([[float(x) for x in r] for r in rows[1:]])


# -- point estimates ------------------------------------------------------------


def _repair(m: int, seeds: list[tuple[int, int]], weights: np.ndarray) -> Poset:
    A = np.zeros((m, m), dtype=bool)
    for i, j in seeds:
        A[i, j] = True
    return cycle_break_and_cover(WeightedDigraph(m, A, np.where(A, weights, 0.0))).to_poset()


def threshold_estimate(marginals: EdgeMarginals, alpha: float = 1 / 3) -> Poset:
    """Keep every edge with marginal >= alpha, then repair into a partial order."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p = marginals.probs
    m = marginals.m
    seeds = [(i, j) for i in range(m) for j in range(m) if i != j and p[i, j] >= alpha]
    return _repair(m, seeds, p)


def mode_estimate(source: Chain | EdgeMarginals) -> Poset:
    """Per pair, the most probable of i<j, j<i and incomparable; any tie means incomparable."""
    marg = source if isinstance(source, EdgeMarginals) else edge_marginals(source)
    c, n, m = marg.counts, marg.n, marg.m
    seeds = []
    for i, j in combinations(range(m), 2):
        fwd, back = int(c[i, j]), int(c[j, i])
        inc = n - fwd - back
        top = max(fwd, back, inc)
        if [fwd, back, inc].count(top) > 1 or top == inc:
            continue
        seeds.append((i, j) if fwd == top else (j, i))
    return _repair(m, seeds, marg.probs)


# -- metrics --------------------------------------------------------------------


def _cover(order: Poset | CoverGraph) -> tuple[int, frozenset]:
    if isinstance(order, CoverGraph):
        return order.m, order.edges
    return order.m, transitive_reduction(order).edges


def _same_size(a, b) -> None:
    if a.m != b.m:
        raise CatalogMismatch(f"estimate has {a.m} actions, truth has {b.m}")


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 1.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def _edge_counts(estimate, truth) -> tuple[int, int, int]:
    _same_size(estimate, truth)
    _, est = _cover(estimate)
    _, tru = _cover(truth)
    return len(est & tru), len(est - tru), len(tru - est)


def edge_prf(estimate: Poset | CoverGraph, truth: Poset | CoverGraph) -> tuple[float, float, float]:
    """Precision, recall and F1 over cover edges."""
    return _prf(*_edge_counts(estimate, truth))


def shd(estimate: Poset | CoverGraph, truth: Poset | CoverGraph) -> int:
    """Cover-edge symmetric difference; a reversed edge counts twice."""
    _, fp, fn = _edge_counts(estimate, truth)
    return fp + fn


def feasibility(traces: TraceSet, estimate: Poset | CoverGraph) -> float:
    if isinstance(estimate, CoverGraph):
        estimate = estimate.to_poset()
    if not len(traces):
        return 1.0
    ok = sum(is_linear_extension(order, estimate) for order in traces.indexed())
    return ok / len(traces)


def ip_f1(estimate: Poset | CoverGraph, truth: Poset | CoverGraph) -> float:
    """F1 of predicting "incomparable" over all unordered pairs."""
    est = estimate.to_poset() if isinstance(estimate, CoverGraph) else estimate
    tru = truth.to_poset() if isinstance(truth, CoverGraph) else truth
    _same_size(est, tru)
    tp = fp = fn = 0
    for i, j in combinations(range(est.m), 2):
        a, b = not est.comparable(i, j), not tru.comparable(i, j)
        tp += a and b
        fp += a and not b
        fn += b and not a
    return _prf(tp, fp, fn)[2]


@dataclass(frozen=True)
class RecoveryReport:
    precision: float
    recall: float
    f1: float
    shd: int
    feasibility: float
    ip_cov: float
    ip_f1: float
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return asdict(self)


def recovery_report(
    estimate: Poset | CoverGraph, truth: Poset | CoverGraph, traces: TraceSet
) -> RecoveryReport:
    tp, fp, fn = _edge_counts(estimate, truth)
    p, r, f = _prf(tp, fp, fn)
    tru = truth.to_poset() if isinstance(truth, CoverGraph) else truth
    return RecoveryReport(
        precision=p,
        recall=r,
        f1=f,
        shd=fp + fn,
        feasibility=feasibility(traces, estimate),
        ip_cov=ip_coverage(traces, tru),
        ip_f1=ip_f1(estimate, truth),
        tp=tp,
        fp=fp,
        fn=fn,
    )
