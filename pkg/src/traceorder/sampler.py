"""Metropolis-within-Gibbs sampler over latent embeddings (U, rho, beta, K).

Two routes share the same acceptance rules:

* :func:`run_chain` drives the compiled loop in :mod:`traceorder._kernels`
  and streams thinned samples to a JSON-Lines chain file;
* :func:`update_U_row`, :func:`update_rho`, :func:`update_beta` and
  :func:`rj_update_K` are plain Python single-kernel updates built on
  :mod:`traceorder.likelihood` and :mod:`traceorder.priors`, kept for checking
  and testing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import IO, Iterator, Sequence

import numpy as np

from . import _kernels as kn
from .errors import CatalogMismatch, EmptyChain, TooLarge
from .likelihood import LikelihoodParams, qj_trace_loglik, trace_loglik
from .poset import NLE_CAP, ActionCatalog, LatentEmbedding, Poset, dominance_order
from .priors import (
    Hyperparams,
    conditional_column_params,
    log_prior_beta,
    log_prior_K,
    log_prior_rho,
    log_prior_U,
    sample_prior_U,
)
from .traces import TraceSet

log = logging.getLogger(__name__)

SCHEMA = "bpop-chain/1"
KINDS = {"none": kn.KIND_NONE, "frontier": kn.KIND_FRONTIER, "queue-jump": kn.KIND_QJ}
RHO_INIT = 0.1
BETA_INIT = 1.0
U_ACCEPT_BAND = (0.05, 0.8)


# -- configuration --------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 200_000
    burn_in: float = 0.5
    thin: int = 100
    cycle_length: int = 500
    seed: int = 0
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    likelihood: LikelihoodParams = field(default_factory=LikelihoodParams)
    u_step_scale: float = 1.0
    jump_p: float | None = None  # queue-jump mixing weight; defaults to epsilon
    record_u: bool = False
    debug: bool = False

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.cycle_length < 1:
            raise ValueError("cycle_length must be at least 1")
        if not self.u_step_scale > 0:
            raise ValueError("u_step_scale must be positive")

    @property
    def qj_jump(self) -> float:
        return self.likelihood.epsilon if self.jump_p is None else self.jump_p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("debug")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def kernel_weights(m: int) -> np.ndarray:
    """One weight per U row, 2 for rho, 2 for beta, max(3, m) for K."""
    return np.array([1.0] * m + [2.0, 2.0, float(max(3, m))])


def kernel_counts(m: int, L: int) -> np.ndarray:
    """Per-cycle kernel counts proportional to the weights (largest remainder)."""
    w = kernel_weights(m)
    exact = L * w / w.sum()
    counts = np.floor(exact).astype(np.int64)
    short = L - int(counts.sum())
    # stable order keeps ties deterministic
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _base_schedule(m: int, L: int) -> np.ndarray:
    return np.repeat(np.arange(m + 3, dtype=np.int64), kernel_counts(m, L))


def build_schedule(config: SamplerConfig, rng: np.random.Generator, m: int) -> np.ndarray:
    """One randomly permuted cycle of kernel indices.

    Indices ``0..m-1`` update U rows, ``m`` is rho, ``m+1`` is beta and
    ``m+2`` is the dimension move.
    """
    return rng.permutation(_base_schedule(m, config.cycle_length))


# -- state and single-kernel updates -------------------------------------------


@dataclass(frozen=True)
class ChainModel:
    """Everything a kernel needs besides the state itself."""

    orders: tuple[tuple[int, ...], ...]
    m: int
    kind: str = "frontier"
    likelihood: LikelihoodParams = field(default_factory=LikelihoodParams)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    jump_p: float = 0.01
    u_step_scale: float = 1.0

    def loglik(self, poset: Poset, beta: float) -> float:
        if self.kind == "none" or not self.orders:
            return 0.0
        if self.kind == "frontier":
            params = replace(self.likelihood, beta=beta)
            return math.fsum(trace_loglik(o, poset, params) for o in self.orders)
        return math.fsum(qj_trace_loglik(o, poset, self.jump_p) for o in self.orders)


@dataclass(frozen=True)
class ChainState:
    embedding: LatentEmbedding
    rho: float
    beta: float
    poset: Poset
    loglik: float
    log_prior: float
    model: ChainModel

    @property
    def U(self) -> np.ndarray:
        return self.embedding.U

    @property
    def K(self) -> int:
        return self.embedding.K

    @classmethod
    def create(cls, U, rho: float, beta: float, model: ChainModel) -> "ChainState":
        emb = U if isinstance(U, LatentEmbedding) else LatentEmbedding(np.array(U, dtype=float))
        poset = dominance_order(emb)
        hp = model.hyperparams
        lp = (
            log_prior_U(emb, rho)
            + log_prior_rho(rho, hp)
            + log_prior_beta(beta, hp)
            + log_prior_K(emb.K, hp)
        )
        return cls(emb, rho, beta, poset, model.loglik(poset, beta), lp, model)

    def moved(self, **changes) -> "ChainState":
        U = changes.pop("U", self.U)
        rho = changes.pop("rho", self.rho)
        beta = changes.pop("beta", self.beta)
        return ChainState.create(U, rho, beta, self.model)


def _delta(new: float, old: float) -> float:
    if new == -math.inf:
        return -math.inf
    if old == -math.inf:
        return math.inf
    return new - old


def _row_logpdf(row: np.ndarray, rho: float) -> float:
    return log_prior_U(row[None, :], rho)


def log_accept_U_row(state: ChainState, i: int, new_row: np.ndarray) -> tuple[float, ChainState]:
    U = state.U.copy()
    U[i] = new_row
    prop = state.moved(U=U)
    la = _row_logpdf(new_row, state.rho) - _row_logpdf(state.U[i], state.rho)
    return la + _delta(prop.loglik, state.loglik), prop


def log_accept_rho(state: ChainState, delta: float) -> tuple[float, float]:
    """Log acceptance for rho* = 1 - (1 - rho) * delta, and rho* itself."""
    rho_new = 1.0 - (1.0 - state.rho) * delta
    if not 0.0 <= rho_new <= kn.RHO_MAX:
        return -math.inf, rho_new
    hp = state.model.hyperparams
    la = (
        log_prior_rho(rho_new, hp)
        - log_prior_rho(state.rho, hp)
        + log_prior_U(state.embedding, rho_new)
        - log_prior_U(state.embedding, state.rho)
        - math.log(delta)
    )
    return la, rho_new


def log_accept_beta(state: ChainState, eta: float) -> tuple[float, ChainState]:
    prop = state.moved(beta=state.beta * math.exp(eta))
    hp = state.model.hyperparams
    la = (
        _delta(prop.loglik, state.loglik)
        + log_prior_beta(prop.beta, hp)
        - log_prior_beta(state.beta, hp)
        + eta
    )
    return la, prop


def _move_prob_up(K: int) -> float:
    return 1.0 if K == 1 else 0.5


def log_accept_K(state: ChainState, new_U: np.ndarray) -> tuple[float, ChainState]:
    """Dimension move to ``new_U``; Gaussian prior and birth-proposal terms cancel."""
    K, K_new = state.K, new_U.shape[1]
    hp = state.model.hyperparams
    if K_new == K + 1:
        move = math.log((1.0 - _move_prob_up(K_new)) / _move_prob_up(K))
    elif K_new == K - 1 and K_new >= 1:
        move = math.log(_move_prob_up(K_new) / (1.0 - _move_prob_up(K)))
    else:
        raise ValueError(f"invalid dimension move {K} -> {K_new}")
    prop = state.moved(U=new_U)
    la = log_prior_K(K_new, hp) - log_prior_K(K, hp) + move
    return la + _delta(prop.loglik, state.loglik), prop


def _accept(log_alpha: float, rng: np.random.Generator) -> bool:
    return math.log(rng.random()) < log_alpha


def update_U_row(state: ChainState, row_index: int, rng: np.random.Generator) -> ChainState:
    if not 0 <= row_index < state.embedding.m:
        raise IndexError(row_index)
    rho, K = state.rho, state.K
    step = math.sqrt(1.0 - rho) * rng.standard_normal(K) + math.sqrt(rho) * rng.standard_normal()
    new_row = state.U[row_index] + state.model.u_step_scale * step
    la, prop = log_accept_U_row(state, row_index, new_row)
    return prop if _accept(la, rng) else state


def update_rho(state: ChainState, rng: np.random.Generator) -> ChainState:
    d = state.model.hyperparams.rho_step
    delta = rng.uniform(d, 1.0 / d)
    la, rho_new = log_accept_rho(state, delta)
    return state.moved(rho=rho_new) if _accept(la, rng) else state


def update_beta(state: ChainState, rng: np.random.Generator) -> ChainState:
    eta = state.model.hyperparams.beta_step * rng.standard_normal()
    la, prop = log_accept_beta(state, eta)
    return prop if _accept(la, rng) else state


def birth_column(U: np.ndarray, rho: float, slot: int, rng: np.random.Generator) -> np.ndarray:
    """Insert a column at ``slot`` drawn row-wise from the conditional prior."""
    K = U.shape[1]
    col = np.empty(U.shape[0])
    for r, row in enumerate(U):
        mu, var = conditional_column_params(row, rho, K)
        col[r] = mu + math.sqrt(var) * rng.standard_normal()
    return np.insert(U, slot, col, axis=1)


def rj_update_K(state: ChainState, rng: np.random.Generator) -> ChainState:
    K = state.K
    if K == 1 or rng.random() < 0.5:
        new_U = birth_column(state.U, state.rho, int(rng.integers(K + 1)), rng)
    else:
        new_U = np.delete(state.U, int(rng.integers(K)), axis=1)
    la, prop = log_accept_K(state, new_U)
    return prop if _accept(la, rng) else state


# -- chains ---------------------------------------------------------------------


@dataclass(frozen=True)
class ChainSample:
    iter: int
    K: int
    rho: float
    beta: float
    loglik: float
    edges: tuple[tuple[int, int], ...]
    U: tuple[tuple[float, ...], ...] | None = None

    def to_json(self) -> dict:
        d = {
            "iter": self.iter,
            "K": self.K,
            "rho": self.rho,
            "beta": self.beta,
            "loglik": self.loglik,
            "edges": [list(e) for e in self.edges],
        }
        if self.U is not None:
            d["U"] = [list(r) for r in self.U]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ChainSample":
        U = d.get("U")
        return cls(
            int(d["iter"]),
            int(d["K"]),
            float(d["rho"]),
            float(d["beta"]),
            float(d["loglik"]),
            tuple((int(i), int(j)) for i, j in d["edges"]),
            None if U is None else tuple(tuple(map(float, r)) for r in U),
        )


@dataclass
class Chain:
    catalog: ActionCatalog
    samples: list[ChainSample]
    header: dict = field(default_factory=dict)
    accept: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[ChainSample]:
        return iter(self.samples)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(_dumps(self.header) + "\n")
            for s in self.samples:
                fh.write(_dumps(s.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "Chain":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise EmptyChain(f"{path} has no header")
        header = json.loads(lines[0])
        if header.get("schema") != SCHEMA:
            raise ValueError(f"{path}: unexpected schema {header.get('schema')!r}")
        samples = [ChainSample.from_json(json.loads(ln)) for ln in lines[1:]]
        return cls(ActionCatalog(header["catalog"]), samples, header)

    @staticmethod
    def merge(chains: Sequence["Chain"]) -> "Chain":
        if not chains:
            raise EmptyChain("nothing to merge")
        cat = chains[0].catalog
        for c in chains[1:]:
            if c.catalog != cat:
                raise CatalogMismatch("chains were run on different catalogs")
        return Chain(cat, [s for c in chains for s in c.samples], dict(chains[0].header))


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def pack_traces(traces: TraceSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct traces as a padded index array, their lengths and multiplicities."""
    counts = Counter(traces.indexed())
    distinct = list(counts)  # first-appearance order
    T = max((len(o) for o in distinct), default=0)
    arr = np.full((len(distinct), max(T, 1)), -1, dtype=np.int64)
    for n, order in enumerate(distinct):
        arr[n, : len(order)] = order
    lengths = np.array([len(o) for o in distinct], dtype=np.int64)
    weights = np.array([counts[o] for o in distinct], dtype=np.float64)
    return arr, lengths, weights


def _record_iters(config: SamplerConfig) -> range:
    horizon = math.floor(config.burn_in * config.iterations)
    first = (horizon // config.thin + 1) * config.thin
    return range(first, config.iterations + 1, config.thin)


class _Compiled:
    """Mutable compiled-chain state between blocks."""

    def __init__(self, U, config: SamplerConfig, kind: int, packed, m: int):
        self.U = np.ascontiguousarray(U)
        self.rho = RHO_INIT
        self.beta = BETA_INIT
        self.kind = kind
        self.traces, self.lengths, self.weights = packed
        self.eps = config.likelihood.epsilon
        self.jump_p = config.qj_jump
        hp = config.hyperparams
        self.hp = np.array([hp.alpha_rho, hp.gamma_a, hp.gamma_b, hp.lam, hp.rho_step, hp.beta_step])
        self.u_scale = config.u_step_scale
        self.sched = _base_schedule(m, config.cycle_length)
        self.pos = len(self.sched)  # forces a shuffle before the first kernel
        self.stats = np.zeros((5, 2), dtype=np.int64)
        self.succ = np.zeros(m, dtype=np.int64)
        self.pred = np.zeros(m, dtype=np.int64)
        kn.dominance_rows(self.U, self.succ, self.pred)
        self.loglik = self.recompute()

    def recompute(self) -> float:
        succ = np.zeros_like(self.succ)
        pred = np.zeros_like(self.pred)
        kn.dominance_rows(self.U, succ, pred)
        return kn.dataset_loglik(
            self.kind, self.traces, self.lengths, self.weights, succ, pred, self.beta, self.eps, self.jump_p
        )

    def step(self, n: int) -> None:
        self.U, self.rho, self.beta, self.loglik, self.pos = kn.advance(
            self.U, self.rho, self.beta, self.loglik, self.succ, self.pred, n,
            self.sched, self.pos, self.kind, self.traces, self.lengths, self.weights,
            self.eps, self.jump_p, self.hp, self.u_scale, self.stats,
        )


def _check_coherence(c: _Compiled, traces: TraceSet, kind: str, config: SamplerConfig) -> None:
    poset = dominance_order(c.U)
    if c.kind != kn.KIND_NONE:
        assert tuple(int(r) for r in c.succ) == poset.succ, "cached poset is stale"
    fresh = c.recompute()
    assert fresh == c.loglik, f"cached loglik {c.loglik} != recomputed {fresh}"
    model = ChainModel(tuple(traces.indexed()), len(traces.catalog), kind, config.likelihood, jump_p=config.qj_jump)
    ref = model.loglik(poset, c.beta)
    assert math.isclose(ref, c.loglik, rel_tol=1e-9, abs_tol=1e-9) or ref == c.loglik, (
        f"compiled loglik {c.loglik} disagrees with reference {ref}"
    )


def _sample(c: _Compiled, t: int, record_u: bool) -> ChainSample:
    poset = dominance_order(c.U)
    U = tuple(tuple(float(x) for x in r) for r in c.U) if record_u else None
    return ChainSample(t, int(c.U.shape[1]), float(c.rho), float(c.beta), float(c.loglik), tuple(poset.edges), U)


def _accept_rates(stats: np.ndarray) -> dict:
    names = ["U", "rho", "beta", "K_up", "K_down"]
    return {
        n: (float(acc) / prop if prop else None)
        for n, (prop, acc) in zip(names, stats.tolist())
    }


def run_chain(
    config: SamplerConfig,
    traces: TraceSet,
    likelihood_kind: str = "frontier",
    out: str | Path | IO[str] | None = None,
    nle_cap: int = NLE_CAP,
) -> Chain:
    """Run one chain; thinned post-burn-in samples are streamed to ``out``.

    ``likelihood_kind`` is ``"frontier"``, ``"queue-jump"`` or ``"none"``
    (prior only).  The run is a deterministic function of ``config``.
    """
    if likelihood_kind not in KINDS:
        raise ValueError(f"unknown likelihood kind {likelihood_kind!r}")
    catalog = traces.catalog
    m = len(catalog)
    if m > kn.MAX_M:
        raise ValueError(f"catalogs above {kn.MAX_M} actions are not supported by the sampler")
    if likelihood_kind == "queue-jump" and m > nle_cap:
        raise TooLarge(m, nle_cap)

    rng = np.random.default_rng(config.seed)
    K0 = max(1, math.floor(config.hyperparams.lam))
    U0 = sample_prior_U(m, K0, RHO_INIT, rng)
    kn.seed(config.seed)
    c = _Compiled(U0, config, KINDS[likelihood_kind], pack_traces(traces), m)

    header = {
        "schema": SCHEMA,
        "config_digest": config.digest(),
        "catalog": list(catalog.names),
        "kind": likelihood_kind,
    }
    fh, own = None, False
    if isinstance(out, (str, Path)):
        fh, own = open(out, "w"), True
    elif out is not None:
        fh = out
    samples: list[ChainSample] = []
    try:
        if fh:
            fh.write(_dumps(header) + "\n")
            fh.flush()
        t = 0

        def go(target: int) -> None:
            nonlocal t
            if not config.debug:
                c.step(target - t)
                t = target
                return
            while t < target:
                before = int(c.stats[:, 1].sum())
                c.step(1)
                t += 1
                if int(c.stats[:, 1].sum()) != before:
                    _check_coherence(c, traces, likelihood_kind, config)

        for r in _record_iters(config):
            go(r)
            s = _sample(c, r, config.record_u)
            samples.append(s)
            if fh:
                fh.write(_dumps(s.to_json()) + "\n")
                fh.flush()
        go(config.iterations)
    finally:
        if own:
            fh.close()

    rates = _accept_rates(c.stats)
    lo, hi = U_ACCEPT_BAND
    u_rate = rates["U"]
    if likelihood_kind != "none" and u_rate is not None and not lo < u_rate < hi:
        log.warning("U-row acceptance rate %.3f is outside (%.2f, %.2f)", u_rate, lo, hi)
    return Chain(catalog, samples, header, rates)
