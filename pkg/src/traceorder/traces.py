"""Traces, trace files, coverage diagnostics and synthetic trace generation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import DuplicateAction, EmptyTrace, SchemaError, TargetUnreachable
from .poset import ActionCatalog, Poset, incomparable_pairs, iter_bits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trace:
    id: str
    actions: tuple[str, ...]
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        seen = set()
        for a in self.actions:
            if a in seen:
                raise DuplicateAction(self.id, a)
            seen.add(a)

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class TraceSet:
    catalog: ActionCatalog
    traces: tuple[Trace, ...]
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        for t in self.traces:
            for a in t.actions:
                self.catalog.index_of(a)

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    def indexed(self) -> list[tuple[int, ...]]:
        """Each trace as a tuple of catalog indices."""
        return [self.catalog.resolve(t.actions) for t in self.traces]

    @classmethod
    def from_indices(
        cls, catalog: ActionCatalog, orders: Iterable[Sequence[int]], prefix: str = "t"
    ) -> "TraceSet":
        traces = [
            Trace(f"{prefix}{k:03d}", tuple(catalog.names[i] for i in order))
            for k, order in enumerate(orders)
        ]
        return cls(catalog, traces)


# -- raw agent sessions -------------------------------------------------------


@dataclass(frozen=True)
class ActionCall:
    name: str
    params: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Cognitive:
    text: str


@dataclass(frozen=True)
class RawSession:
    tokens: tuple  # of ActionCall | Cognitive
    id: str = "session"

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        for tok in self.tokens:
            if not isinstance(tok, (ActionCall, Cognitive)):
                raise TypeError(f"session entries must be ActionCall or Cognitive, got {tok!r}")


def project_trace(session: RawSession, catalog: ActionCatalog) -> Trace:
    """Keep catalog tool calls in order and drop everything cognitive.

    A repeated action keeps its first occurrence (with a warning).
    """
    kept: list[str] = []
    steps = []
    for tok in session.tokens:
        if not isinstance(tok, ActionCall) or tok.name not in catalog:
            continue
        if tok.name in kept:
            log.warning("session %s repeats %s; keeping first occurrence", session.id, tok.name)
            continue
        kept.append(tok.name)
        steps.append({"action": tok.name, "params": dict(tok.params), "output": dict(tok.outputs)})
    if not kept:
        raise EmptyTrace(f"session {session.id!r} has no catalog actions")
    return Trace(session.id, tuple(kept), {"steps": steps})


# -- trace files --------------------------------------------------------------


def _parse_flat(doc: dict) -> TraceSet:
    actions = doc["actions"]
    if not isinstance(actions, list) or not all(isinstance(a, str) for a in actions):
        raise SchemaError("$.actions", "expected a list of action names")
    try:
        catalog = ActionCatalog(actions)
    except ValueError as exc:
        raise SchemaError("$.actions", str(exc)) from None
    raw = doc.get("traces")
    if not isinstance(raw, list):
        raise SchemaError("$.traces", "expected a list of traces")
    ids = doc.get("ids")
    traces = []
    for k, seq in enumerate(raw):
        path = f"$.traces[{k}]"
        if not isinstance(seq, list) or not all(isinstance(a, str) for a in seq):
            raise SchemaError(path, "expected a list of action names")
        for a in seq:
            if a not in catalog:
                raise SchemaError(path, f"unknown action {a!r}")
        tid = ids[k] if isinstance(ids, list) and k < len(ids) else f"t{k:03d}"
        traces.append(Trace(tid, tuple(seq)))
    meta = {key: doc[key] for key in ("target", "realized", "seed") if key in doc}
    return TraceSet(catalog, traces, meta)


def _parse_rich_record(rec, k: int) -> Trace:
    path = f"$[{k}]"
    if not isinstance(rec, dict):
        raise SchemaError(path, "expected a trace object")
    tid = rec.get("trace_id")
    if not isinstance(tid, str):
        raise SchemaError(f"{path}.trace_id", "expected a string")
    seq = rec.get("action_sequence")
    if not isinstance(seq, list):
        raise SchemaError(f"{path}.action_sequence", "expected a list of steps")
    steps = []
    for s, step in enumerate(seq):
        spath = f"{path}.action_sequence[{s}]"
        if not isinstance(step, dict) or not isinstance(step.get("action"), str):
            raise SchemaError(spath, "step needs a string 'action'")
        order = step.get("step", s + 1)
        if not isinstance(order, (int, float)) or isinstance(order, bool):
            raise SchemaError(f"{spath}.step", "expected a number")
        steps.append((order, s, step))
    steps.sort(key=lambda x: (x[0], x[1]))
    names = []
    for _, _, step in steps:
        if step["action"] in names:
            raise DuplicateAction(tid, step["action"])
        names.append(step["action"])
    meta = {
        "intent": rec.get("intent"),
        "steps": [
            {"action": st["action"], "params": st.get("params", {}), "output": st.get("output", {})}
            for _, _, st in steps
        ],
    }
    return Trace(tid, tuple(names), meta)


def parse_trace_file(document) -> TraceSet:
    """Parse a flat or rich trace document (auto-detected by its top-level keys).

    ``document`` may be a path or already-parsed JSON.
    """
    doc = document
    if isinstance(document, (str, Path)):
        doc = json.loads(Path(document).read_text())
    if isinstance(doc, dict) and "actions" in doc and "traces" in doc:
        return _parse_flat(doc)
    if isinstance(doc, dict) and "action_sequence" in doc:
        doc = [doc]
    if isinstance(doc, list):
        traces = [_parse_rich_record(rec, k) for k, rec in enumerate(doc)]
        names: list[str] = []
        for t in traces:
            names.extend(a for a in t.actions if a not in names)
        return TraceSet(ActionCatalog(names), traces)
    raise SchemaError("$", "expected a flat {actions, traces} object or a list of trace records")


def trace_document(traces: TraceSet, **extra) -> dict:
    """Flat trace JSON for ``traces``; ``extra`` keys (target, realized, seed) are embedded."""
    doc: dict[str, Any] = {
        "actions": list(traces.catalog.names),
        "traces": [list(t.actions) for t in traces],
        "ids": [t.id for t in traces],
    }
    doc.update(extra)
    return doc


# -- coverage diagnostics -----------------------------------------------------


def _directions(orders: Iterable[Sequence[int]]) -> set[tuple[int, int]]:
    seen = set()
    for order in orders:
        for a, b in combinations(order, 2):
            seen.add((a, b))
    return seen


def pair_saturation(traces: TraceSet) -> set[tuple[str, str]]:
    """Unordered pairs observed in both relative orders (names, sorted by catalog index)."""
    seen = _directions(traces.indexed())
    names = traces.catalog.names
    return {(names[a], names[b]) for a, b in seen if a < b and (b, a) in seen}


def ip_coverage(traces: TraceSet, truth: Poset) -> float:
    """Fraction of truth-incomparable pairs witnessed in both directions (1.0 if none exist)."""
    pairs = incomparable_pairs(truth)
    if not pairs:
        return 1.0
    seen = _directions(traces.indexed())
    hit = sum(1 for i, j in pairs if (i, j) in seen and (j, i) in seen)
    return hit / len(pairs)


def sample_linear_extension(poset: Poset, rng: np.random.Generator) -> tuple[int, ...]:
    """Randomised Kahn: pick uniformly from the current frontier at every step."""
    remaining = (1 << poset.m) - 1
    order = []
    pred = poset.pred
    while remaining:
        front = [a for a in iter_bits(remaining) if not pred[a] & remaining]
        a = front[int(rng.integers(len(front)))]
        order.append(a)
        remaining ^= 1 << a
    return tuple(order)


def curate_to_coverage(
    poset: Poset,
    target: float,
    rng: np.random.Generator,
    max_attempts: int = 10_000,
    catalog: ActionCatalog | None = None,
    min_traces: int = 0,
) -> TraceSet:
    """Greedy trace curation toward an IP-Cov target.

    Candidates come from :func:`sample_linear_extension`; one is kept only if it
    shows some truth-incomparable pair in a direction not seen before.  Once the
    target is met, further uniform samples are appended until ``min_traces``.
    """
    if not 0 < target <= 1:
        raise ValueError("target must lie in (0, 1]")
    catalog = catalog or ActionCatalog(f"a{i + 1}" for i in range(poset.m))
    pairs = incomparable_pairs(poset)
    directed = {(i, j) for i, j in pairs} | {(j, i) for i, j in pairs}
    seen: set[tuple[int, int]] = set()
    kept: list[tuple[int, ...]] = []

    def realized() -> float:
        if not pairs:
            return 1.0
        return sum(1 for i, j in pairs if (i, j) in seen and (j, i) in seen) / len(pairs)

    attempts = 0
    while not kept or realized() < target:
        if attempts >= max_attempts:
            raise TargetUnreachable(realized(), attempts)
        attempts += 1
        cand = sample_linear_extension(poset, rng)
        new = (_directions([cand]) & directed) - seen
        if kept and not new:
            continue
        seen |= new
        kept.append(cand)
    while len(kept) < min_traces:
        cand = sample_linear_extension(poset, rng)
        seen |= _directions([cand]) & directed
        kept.append(cand)
    reached = realized()
    out = TraceSet.from_indices(catalog, kept)
    return TraceSet(out.catalog, out.traces, {"target": target, "realized": reached})
