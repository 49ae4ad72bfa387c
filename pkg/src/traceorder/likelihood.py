"""Frontier-softmax trace likelihood and the queue-jump alternative.

This is the reference (pure Python) implementation.  The sampler carries a
compiled copy in :mod:`traceorder._kernels`; the two are checked against each
other in the test-suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import TooLarge, UnknownAction
from .poset import NLE_CAP, ActionCatalog, Poset, count_linear_extensions, iter_bits, mask_of
from .traces import Trace, TraceSet

NEG_INF = float("-inf")


@dataclass(frozen=True)
class LikelihoodParams:
    beta: float = 1.0
    epsilon: float = 0.01

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")


def _log(p: float) -> float:
    return math.log(p) if p > 0 else NEG_INF


def _logsumexp(values: Iterable[float]) -> float:
    values = list(values)
    top = max(values)
    if top == NEG_INF:
        return NEG_INF
    return top + math.log(sum(math.exp(v - top) for v in values))


def successor_utility(a: int, poset: Poset, remaining: Iterable[int]) -> float:
    """log(1 + #remaining descendants) for frontier actions, -inf otherwise."""
    rem = mask_of(remaining)
    if not rem >> a & 1:
        raise ValueError(f"{a} is not in the remaining set")
    if poset.pred[a] & rem:
        return NEG_INF
    return math.log1p((poset.succ[a] & rem).bit_count())


def step_probability(
    y: int, remaining: Iterable[int], poset: Poset, params: LikelihoodParams
) -> float:
    """Probability of choosing ``y`` next: frontier softmax mixed with uniform slips."""
    remaining = list(remaining)
    rem = mask_of(remaining)
    if not rem >> y & 1:
        raise ValueError(f"{y} is not in the remaining set")
    n_rem = rem.bit_count()
    utils = {a: successor_utility(a, poset, remaining) for a in iter_bits(rem)}
    logits = [params.beta * q for q in utils.values() if q != NEG_INF]
    soft = 0.0
    if utils[y] != NEG_INF:
        soft = math.exp(params.beta * utils[y] - _logsumexp(logits))
    return (1.0 - params.epsilon) * soft + params.epsilon / n_rem


def _resolve(trace, poset: Poset, catalog: ActionCatalog | None) -> tuple[int, ...]:
    if isinstance(trace, Trace):
        if catalog is None:
            raise ValueError("a catalog is needed to resolve named traces")
        return catalog.resolve(trace.actions)
    if catalog is not None:
        return tuple(a if isinstance(a, int) else catalog.index_of(a) for a in trace)
    items = tuple(int(a) for a in trace)
    for a in items:
        if not 0 <= a < poset.m:
            raise UnknownAction(a)
    return items


def trace_loglik(
    trace, poset: Poset, params: LikelihoodParams, catalog: ActionCatalog | None = None
) -> float:
    """Sum of log step probabilities over the trace, on the induced subposet.

    The frontier is maintained Kahn-style (unmet-prerequisite counts) and the
    softmax normaliser is kept as a histogram of successor counts, so the cost
    is linear in trace length plus the number of precedence pairs touched.
    """
    items = _resolve(trace, poset, catalog)
    T = len(items)
    if T == 0:
        return 0.0
    succ, pred = poset.succ, poset.pred
    beta, eps = params.beta, params.epsilon
    rem = mask_of(items)

    unmet = {a: (pred[a] & rem).bit_count() for a in items}
    score = {a: (succ[a] & rem).bit_count() for a in items}
    on_front = {a: unmet[a] == 0 for a in items}
    hist: dict[int, int] = {}
    for a in items:
        if on_front[a]:
            hist[score[a]] = hist.get(score[a], 0) + 1

    def drop(s: int) -> None:
        if hist[s] == 1:
            del hist[s]
        else:
            hist[s] -= 1

    total = 0.0
    for t, y in enumerate(items):
        n_rem = T - t
        soft = 0.0
        if on_front[y]:
            log_z = _logsumexp(math.log(c) + beta * math.log1p(s) for s, c in hist.items())
            soft = math.exp(beta * math.log1p(score[y]) - log_z)
        total += _log((1.0 - eps) * soft + eps / n_rem)
        if total == NEG_INF:
            return NEG_INF

        if on_front[y]:
            drop(score[y])
            on_front[y] = False
        rem &= ~(1 << y)
        for x in iter_bits(pred[y] & rem):
            # y left before its ancestor x: x loses a remaining descendant
            if on_front[x]:
                drop(score[x])
                hist[score[x] - 1] = hist.get(score[x] - 1, 0) + 1
            score[x] -= 1
        for b in iter_bits(succ[y] & rem):
            unmet[b] -= 1
            if unmet[b] == 0:
                on_front[b] = True
                hist[score[b]] = hist.get(score[b], 0) + 1
    return total


def dataset_loglik(traces: TraceSet, poset: Poset, params: LikelihoodParams) -> float:
    return math.fsum(trace_loglik(order, poset, params) for order in traces.indexed())


# -- queue-jump -----------------------------------------------------------------


def qj_step_probability(
    y: int, remaining: Iterable[int], poset: Poset, jump_p: float, cap: int = NLE_CAP
) -> float:
    """Share of linear extensions of the remaining subposet that start with ``y``,
    mixed with a uniform jump of probability ``jump_p``."""
    remaining = list(remaining)
    rem = mask_of(remaining)
    if not rem >> y & 1:
        raise ValueError(f"{y} is not in the remaining set")
    n_rem = rem.bit_count()
    if n_rem > cap:
        raise TooLarge(n_rem, cap)
    ratio = 0.0
    if not poset.pred[y] & rem:
        total = count_linear_extensions(poset, remaining, cap)
        first = count_linear_extensions(poset, [a for a in remaining if a != y], cap)
        ratio = first / total
    return (1.0 - jump_p) * ratio + jump_p / n_rem


def qj_trace_loglik(trace: Sequence[int], poset: Poset, jump_p: float, cap: int = NLE_CAP) -> float:
    items = list(trace)
    total = 0.0
    for t, y in enumerate(items):
        total += _log(qj_step_probability(y, items[t:], poset, jump_p, cap))
        if total == NEG_INF:
            break
    return total


def qj_dataset_loglik(traces: TraceSet, poset: Poset, jump_p: float, cap: int = NLE_CAP) -> float:
    return math.fsum(qj_trace_loglik(order, poset, jump_p, cap) for order in traces.indexed())
