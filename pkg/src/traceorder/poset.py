"""Strict partial orders over an action catalog.

A :class:`Poset` stores the transitively closed precedence relation as one
bitmask per element: bit ``j`` of ``succ[i]`` is set iff ``i`` precedes ``j``
(``h[i][j] = 1``).  ``pred`` is the transposed view.  Elements are 0-based
indices into an :class:`ActionCatalog`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import CycleDetected, SchemaError, TooLarge, UnknownAction

#: default cap on the number of elements for exact linear-extension counting
NLE_CAP = 20


def iter_bits(x: int) -> Iterator[int]:
    """Yield the indices of the set bits of ``x`` in increasing order."""
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def mask_of(items: Iterable[int]) -> int:
    mask = 0
    for i in items:
        mask |= 1 << i
    return mask


class ActionCatalog:
    """Ordered, duplicate-free list of action names with a reverse index."""

    __slots__ = ("names", "index")

    def __init__(self, names: Iterable[str]):
        names = tuple(str(n) for n in names)
        index = {n: i for i, n in enumerate(names)}
        if len(index) != len(names):
            seen = set()
            dup = next(n for n in names if n in seen or seen.add(n))
            raise ValueError(f"duplicate action name {dup!r} in catalog")
        self.names = names
        self.index = index

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name) -> bool:
        return name in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, ActionCatalog) and self.names == other.names

    def __hash__(self) -> int:
        return hash(self.names)

    def __repr__(self) -> str:
        return f"ActionCatalog({list(self.names)!r})"

    def index_of(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise UnknownAction(name) from None

    def resolve(self, names: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index_of(n) for n in names)


class Poset:
    """Immutable strict partial order on ``range(m)``.

    Build one with :func:`transitive_closure`, :meth:`from_matrix`,
    :meth:`from_edges` or :func:`dominance_order`.
    """

    __slots__ = ("m", "succ", "pred", "_matrix")

    def __init__(self, m: int, succ: Sequence[int]):
        # trusted constructor: ``succ`` must already be closed and acyclic
        self.m = int(m)
        self.succ = tuple(int(r) for r in succ)
        pred = [0] * self.m
        for i, row in enumerate(self.succ):
            for j in iter_bits(row):
                pred[j] |= 1 << i
        self.pred = tuple(pred)
        self._matrix = None

    @classmethod
    def from_matrix(cls, matrix) -> "Poset":
        """Validate a closed relation matrix and wrap it (no closure is taken)."""
        h = np.asarray(matrix, dtype=bool)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError(f"relation must be square, got shape {h.shape}")
        if h.diagonal().any():
            i = int(np.flatnonzero(h.diagonal())[0])
            raise CycleDetected(i, i)
        both = h & h.T
        if both.any():
            i, j = map(int, np.argwhere(both)[0])
            raise CycleDetected(i, j)
        hi = h.astype(np.int64)
        if ((hi @ hi > 0) & ~h).any():
            raise ValueError("relation is not transitively closed")
        return cls(h.shape[0], _rows_from_matrix(h))

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[tuple[int, int]]) -> "Poset":
        """Transitive closure of an edge list (cover or otherwise)."""
        rows = [0] * m
        for i, j in edges:
            if not (0 <= i < m and 0 <= j < m):
                raise ValueError(f"edge ({i}, {j}) out of range for m={m}")
            rows[i] |= 1 << j
        return _close_rows(m, rows)

    @classmethod
    def empty(cls, m: int) -> "Poset":
        return cls(m, [0] * m)

    @classmethod
    def chain(cls, order: Sequence[int], m: int | None = None) -> "Poset":
        """Total order ``order[0] > order[1] > ...`` (elements not listed stay free)."""
        m = len(order) if m is None else m
        rows = [0] * m
        below = 0
        for a in reversed(order):
            rows[a] = below
            below |= 1 << a
        return cls(m, rows)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            h = np.zeros((self.m, self.m), dtype=bool)
            for i, row in enumerate(self.succ):
                for j in iter_bits(row):
                    h[i, j] = True
            h.flags.writeable = False
            self._matrix = h
        return self._matrix

    @property
    def edges(self) -> list[tuple[int, int]]:
        """All closure pairs ``(i, j)`` with ``i`` preceding ``j``, sorted."""
        return [(i, j) for i, row in enumerate(self.succ) for j in iter_bits(row)]

    def precedes(self, i: int, j: int) -> bool:
        return bool(self.succ[i] >> j & 1)

    def comparable(self, i: int, j: int) -> bool:
        return self.precedes(i, j) or self.precedes(j, i)

    def with_edges(self, edges: Iterable[tuple[int, int]]) -> "Poset":
        """Closure of this order plus extra edges (may raise CycleDetected)."""
        rows = list(self.succ)
        for i, j in edges:
            rows[i] |= 1 << j
        return _close_rows(self.m, rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, Poset) and self.m == other.m and self.succ == other.succ

    def __hash__(self) -> int:
        return hash((self.m, self.succ))

    def __repr__(self) -> str:
        return f"Poset(m={self.m}, edges={self.edges})"


@dataclass(frozen=True)
class CoverGraph:
    """Transitive reduction (Hasse diagram) of a poset."""

    m: int
    edges: frozenset = field(default_factory=frozenset)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def to_poset(self) -> Poset:
        return Poset.from_edges(self.m, self.edges)


@dataclass(frozen=True)
class LatentEmbedding:
    """Row ``j`` of ``U`` is the K-dimensional latent position of action ``j``."""

    U: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=float, copy=True)
        if U.ndim == 1:
            U = U[:, None]
        if U.ndim != 2 or U.shape[1] < 1:
            raise ValueError("embedding must be an m x K matrix with K >= 1")
        if not np.isfinite(U).all():
            raise ValueError("embedding entries must be finite")
        U.flags.writeable = False
        object.__setattr__(self, "U", U)

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def K(self) -> int:
        return self.U.shape[1]


def _rows_from_matrix(h: np.ndarray) -> list[int]:
    if h.shape[1] == 0:
        return [0] * h.shape[0]
    packed = np.packbits(h, axis=1, bitorder="little")
    return [int.from_bytes(r.tobytes(), "little") for r in packed]


def _close_rows(m: int, rows: list[int]) -> Poset:
    rows = list(rows)
    for k in range(m):
        bk = 1 << k
        rk = rows[k]
        for i in range(m):
            if rows[i] & bk:
                rows[i] |= rk
    for i in range(m):
        if rows[i] >> i & 1:
            partner = next((j for j in iter_bits(rows[i]) if j != i and rows[j] >> i & 1), i)
            raise CycleDetected(i, partner)
    return Poset(m, rows)


def transitive_closure(relation) -> Poset:
    """Close an acyclic relation given as an ``m x m`` boolean matrix."""
    h = np.asarray(relation, dtype=bool)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"relation must be square, got shape {h.shape}")
    return _close_rows(h.shape[0], _rows_from_matrix(h))


def transitive_reduction(poset: Poset) -> CoverGraph:
    edges = []
    for i, row in enumerate(poset.succ):
        implied = 0
        for k in iter_bits(row):
            implied |= poset.succ[k]
        edges.extend((i, j) for j in iter_bits(row & ~implied))
    return CoverGraph(poset.m, frozenset(edges))


def frontier(poset: Poset, remaining: Iterable[int]) -> frozenset[int]:
    """Minimal elements of ``remaining``: nothing left in the set precedes them."""
    rem = mask_of(remaining)
    return frozenset(a for a in iter_bits(rem) if not poset.pred[a] & rem)


def descendant_counts(poset: Poset, remaining: Iterable[int]) -> dict[int, int]:
    rem = mask_of(remaining)
    return {a: (poset.succ[a] & rem).bit_count() for a in iter_bits(rem)}


def incomparable_pairs(poset: Poset) -> set[tuple[int, int]]:
    out = set()
    for i in range(poset.m):
        related = poset.succ[i] | poset.pred[i]
        for j in range(i + 1, poset.m):
            if not related >> j & 1:
                out.add((i, j))
    return out


def _resolve_trace(trace, m: int, catalog: ActionCatalog | None) -> tuple[int, ...]:
    if catalog is not None:
        return tuple(a if isinstance(a, (int, np.integer)) else catalog.index_of(a) for a in trace)
    items = []
    for a in trace:
        if not isinstance(a, (int, np.integer)) or not 0 <= a < m:
            raise UnknownAction(a)
        items.append(int(a))
    return tuple(items)


def is_linear_extension(trace, poset: Poset, catalog: ActionCatalog | None = None) -> bool:
    """True iff ``trace`` respects every precedence among the items it contains.

    ``trace`` may cover only part of the catalog; the check runs on the
    induced subposet.  Items are indices, or names when ``catalog`` is given.
    """
    items = _resolve_trace(trace, poset.m, catalog)
    for a in items:
        if not 0 <= a < poset.m:
            raise UnknownAction(a)
    seen = 0
    for a in items:
        # something already executed must not be a descendant of a
        if poset.succ[a] & seen:
            return False
        seen |= 1 << a
    return True


def count_linear_extensions(
    poset: Poset, items: Iterable[int] | None = None, cap: int = NLE_CAP
) -> int:
    """Exact number of linear extensions of ``poset`` (or of its restriction to ``items``).

    Peels minimal elements recursively, memoising on the set of elements
    removed so far.  Cost is exponential in the number of elements, hence the cap.
    """
    full = (1 << poset.m) - 1 if items is None else mask_of(items)
    n = full.bit_count()
    if n > cap:
        raise TooLarge(n, cap)
    pred = poset.pred
    memo: dict[int, int] = {}

    def count(removed: int) -> int:
        rem = full & ~removed
        if rem == 0:
            return 1
        hit = memo.get(removed)
        if hit is not None:
            return hit
        total = 0
        for a in iter_bits(rem):
            if not pred[a] & rem:
                total += count(removed | (1 << a))
        memo[removed] = total
        return total

    return count(0)


def dominance_order(embedding) -> Poset:
    """Order induced by strict componentwise dominance of the embedding rows."""
    U = embedding.U if isinstance(embedding, LatentEmbedding) else np.asarray(embedding, float)
    if U.ndim == 1:
        U = U[:, None]
    h = (U[:, None, :] > U[None, :, :]).all(axis=2)
    # dominance is transitive and irreflexive by construction
    return Poset(U.shape[0], _rows_from_matrix(h))


# -- graph JSON and DOT -----------------------------------------------------


def load_graph(source) -> tuple[ActionCatalog, Poset]:
    """Read ``{"nodes": [...], "edges": [[u, v], ...]}`` and close it.

    ``source`` is a path or an already parsed mapping.  Edges are read as
    cover edges but any acyclic edge set is accepted.
    """
    doc = source
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text())
    if not isinstance(doc, dict):
        raise SchemaError("$", "graph document must be an object")
    nodes = doc.get("nodes")
    if not isinstance(nodes, list) or not all(isinstance(n, str) for n in nodes):
        raise SchemaError("$.nodes", "expected a list of action names")
    try:
        catalog = ActionCatalog(nodes)
    except ValueError as exc:
        raise SchemaError("$.nodes", str(exc)) from None
    edges = doc.get("edges", [])
    if not isinstance(edges, list):
        raise SchemaError("$.edges", "expected a list of [u, v] pairs")
    pairs = []
    for k, e in enumerate(edges):
        if not (isinstance(e, list) and len(e) == 2):
            raise SchemaError(f"$.edges[{k}]", "expected [u, v]")
        try:
            pairs.append((catalog.index_of(e[0]), catalog.index_of(e[1])))
        except UnknownAction as exc:
            raise SchemaError(f"$.edges[{k}]", str(exc)) from None
    return catalog, Poset.from_edges(len(catalog), pairs)


def graph_document(catalog: ActionCatalog, order: Poset | CoverGraph, **extra) -> dict:
    """Graph JSON for ``order``; edges are always the cover edges."""
    cover = order if isinstance(order, CoverGraph) else transitive_reduction(order)
    doc = {
        "nodes": list(catalog.names),
        "edges": [[catalog.names[i], catalog.names[j]] for i, j in cover.sorted_edges()],
    }
    doc.update(extra)
    return doc


def to_dot(catalog: ActionCatalog, order: Poset | CoverGraph, name: str = "sop") -> str:
    cover = order if isinstance(order, CoverGraph) else transitive_reduction(order)
    lines = [f"digraph {json.dumps(name)} {{"]
    lines += [f"  {json.dumps(n)};" for n in catalog.names]
    for i, j in cover.sorted_edges():
        lines.append(f"  {json.dumps(catalog.names[i])} -> {json.dumps(catalog.names[j])};")
    lines.append("}")
    return "\n".join(lines) + "\n"
