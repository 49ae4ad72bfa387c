"""Deterministic SOP execution with a blackboard, expert halting and hybrid fallback.

Actions are dispatched frontier by frontier.  Every frontier gets one logical
timestamp and its actions run in lexicographic order.  By default an action
may only read blackboard fields written by its ancestors in the compiled
order (plus the initial blackboard), so a missing precedence edge shows up as
a missing input even when the producer happened to run earlier.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import RegistryGap, SchemaError
from .poset import ActionCatalog, Poset, iter_bits, transitive_reduction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IOSignature:
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        for name in self.inputs + self.outputs:
            if not isinstance(name, str) or not name:
                raise ValueError(f"slot and field names must be non-empty strings, got {name!r}")


class IORegistry(dict):
    """action name -> :class:`IOSignature`."""

    @classmethod
    def from_dict(cls, d: Mapping) -> "IORegistry":
        reg = cls()
        for name, sig in d.items():
            if isinstance(sig, IOSignature):
                reg[name] = sig
            else:
                reg[name] = IOSignature(sig.get("inputs", ()), sig.get("outputs", ()))
        return reg

    def producers(self, field_name: str) -> list[str]:
        return [a for a, sig in self.items() if field_name in sig.outputs]

    def to_dict(self) -> dict:
        return {a: {"inputs": list(s.inputs), "outputs": list(s.outputs)} for a, s in self.items()}


class BlackboardConflict(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    value: str
    producer: str | None  # None for the initial blackboard
    t: int


class Blackboard:
    """Write-once field store."""

    def __init__(self, initial: Mapping[str, str] | None = None):
        self._data: dict[str, Entry] = {}
        for k, v in (initial or {}).items():
            self.write(k, v, None, 0)

    def write(self, name: str, value: str, producer: str | None, t: int) -> None:
        if name in self._data:
            raise BlackboardConflict(f"field {name!r} already written by {self._data[name].producer!r}")
        self._data[name] = Entry(value, producer, t)

    def get(self, name: str) -> Entry | None:
        return self._data.get(name)

    def __contains__(self, name) -> bool:
        return name in self._data

    def snapshot(self) -> dict[str, dict]:
        return {k: asdict(e) for k, e in sorted(self._data.items())}


# -- scenarios ------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    registry: IORegistry
    truth_edges: tuple[tuple[str, str], ...] = ()
    failures: Mapping[str, str] = field(default_factory=dict)  # action -> "once" | "always"
    initial: Mapping[str, str] = field(default_factory=dict)
    seed: int = 0
    name: str = "scenario"

    @property
    def catalog(self) -> ActionCatalog:
        return ActionCatalog(self.registry)

    def truth(self) -> Poset:
        cat = self.catalog
        return Poset.from_edges(len(cat), [(cat.index_of(u), cat.index_of(v)) for u, v in self.truth_edges])

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        if not isinstance(d.get("registry"), dict):
            raise SchemaError("$.registry", "expected an object of action signatures")
        for name, sig in d["registry"].items():
            if not isinstance(sig, dict):
                raise SchemaError(f"$.registry.{name}", "expected {inputs, outputs}")
        edges = d.get("truth_edges", [])
        for k, e in enumerate(edges):
            if not (isinstance(e, list) and len(e) == 2 and all(a in d["registry"] for a in e)):
                raise SchemaError(f"$.truth_edges[{k}]", "expected a pair of registry actions")
        failures = d.get("failures", {})
        for a, mode in failures.items():
            if mode not in ("once", "always"):
                raise SchemaError(f"$.failures.{a}", "expected 'once' or 'always'")
        try:
            registry = IORegistry.from_dict(d["registry"])
        except ValueError as exc:
            raise SchemaError("$.registry", str(exc)) from None
        return cls(
            registry,
            tuple((u, v) for u, v in edges),
            dict(failures),
            dict(d.get("initial", {})),
            int(d.get("seed", 0)),
            str(d.get("name", "scenario")),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _token_prefix(field_name: str) -> str:
    base = re.sub(r"Ids?$", "", field_name) or field_name
    return base.lower()


@dataclass(frozen=True)
class MockResult:
    ok: bool
    outputs: dict
    error: str | None = None


def mock_invoke(action: str, inputs: Mapping[str, str], scenario: Scenario, attempt: int = 1) -> MockResult:
    """Deterministic stand-in for a tool call.

    Outputs are ``<prefix>-<8 hex chars>`` tokens derived from the scenario seed,
    the action and the field name.
    """
    mode = scenario.failures.get(action)
    if mode == "always" or (mode == "once" and attempt == 1):
        return MockResult(False, {}, f"{action} failed (attempt {attempt})")
    outputs = {}
    for f in scenario.registry[action].outputs:
        digest = hashlib.sha256(f"{scenario.seed}:{action}:{f}".encode()).hexdigest()[:8]
        outputs[f] = f"{_token_prefix(f)}-{digest}"
    return MockResult(True, outputs)


# -- compilation ----------------------------------------------------------------


@dataclass(frozen=True)
class CompiledSOP:
    catalog: ActionCatalog
    poset: Poset
    registry: IORegistry
    warnings: tuple[str, ...] = ()

    @property
    def cover(self) -> list[tuple[int, int]]:
        return transitive_reduction(self.poset).sorted_edges()

    def ancestors(self, action: str) -> set[str]:
        i = self.catalog.index_of(action)
        return {self.catalog.names[k] for k in iter_bits(self.poset.pred[i])}


def compile_sop(
    estimate: Poset,
    registry: IORegistry | Mapping,
    catalog: ActionCatalog | None = None,
    initial_fields: Iterable[str] = (),
) -> CompiledSOP:
    """Bundle an order with an IO registry and flag inputs no ancestor can produce."""
    registry = registry if isinstance(registry, IORegistry) else IORegistry.from_dict(registry)
    catalog = catalog or ActionCatalog(registry)
    if len(catalog) != estimate.m:
        raise ValueError(f"catalog has {len(catalog)} actions but the order has {estimate.m}")
    for a in catalog:
        if a not in registry:
            raise RegistryGap(a)
    initial = set(initial_fields)
    sop = CompiledSOP(catalog, estimate, registry)
    warnings = []
    for a in catalog:
        anc = sop.ancestors(a)
        for slot in registry[a].inputs:
            if slot in initial:
                continue
            if not anc & set(registry.producers(slot)):
                warnings.append(f"{slot} has no reachable producer for {a}")
    for w in warnings:
        log.warning(w)
    return CompiledSOP(catalog, estimate, registry, tuple(warnings))


# -- execution ------------------------------------------------------------------


@dataclass(frozen=True)
class LogEntry:
    t: int
    action: str
    status: str  # "done" | "failed"
    fallback: bool = False
    error: str | None = None


@dataclass
class ExecutionReport:
    mode: str
    success: bool
    n_actions: int
    log: list[LogEntry] = field(default_factory=list)
    frontiers: list[dict] = field(default_factory=list)
    fallback_events: list[dict] = field(default_factory=list)
    error: str | None = None

    @property
    def completed(self) -> list[str]:
        return [e.action for e in self.log if e.status == "done"]

    @property
    def completeness(self) -> float:
        return len(self.completed) / self.n_actions if self.n_actions else 1.0

    @property
    def timesteps(self) -> int:
        return len(self.frontiers)

    @property
    def n_fallbacks(self) -> int:
        return len(self.fallback_events)

    @property
    def action_fallback_rate(self) -> float:
        n = sum(1 for e in self.log if e.fallback and e.status == "done")
        return n / self.n_actions if self.n_actions else 0.0

    @property
    def llm_calls(self) -> int:
        # one intent parse plus one planner call per fallback
        return 1 + self.n_fallbacks

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "success": self.success,
            "completeness": self.completeness,
            "task_fallback": self.n_fallbacks > 0,
            "fallback_events": self.fallback_events,
            "n_fallbacks": self.n_fallbacks,
            "action_fallback_rate": self.action_fallback_rate,
            "llm_calls": self.llm_calls,
            "timesteps": self.timesteps,
            "error": self.error,
            "log": [asdict(e) for e in self.log],
            "frontiers": self.frontiers,
        }


# (failed action, missing slots, done so far, sop) -> remedial action names
FallbackHook = Callable[[str, Sequence[str], frozenset, CompiledSOP], list[str]]


def oracle_planner(scenario: Scenario) -> FallbackHook:
    """Planner that knows the true dependency table.

    Returns the failed action's true ancestors that are not done yet (in a
    topological order) followed by the action itself.
    """
    truth = scenario.truth()
    cat = scenario.catalog

    def plan(action: str, missing: Sequence[str], done: frozenset, sop: CompiledSOP) -> list[str]:
        need = {cat.names[k] for k in iter_bits(truth.pred[cat.index_of(action)])} - done
        # fewer true ancestors first is a valid topological order
        ordered = sorted(need, key=lambda a: (truth.pred[cat.index_of(a)].bit_count(), a))
        return ordered + [action]

    return plan


class _Run:
    def __init__(self, sop: CompiledSOP, scenario: Scenario, initial, scoped: bool, mode: str):
        self.sop = sop
        self.scenario = scenario
        self.bb = Blackboard(scenario.initial if initial is None else initial)
        self.scoped = scoped
        self.attempts: dict[str, int] = {}
        self.done: set[str] = set()
        self.report = ExecutionReport(mode, False, len(sop.catalog))
        self.t = 0

    def read(self, action: str, scoped: bool) -> tuple[dict, list[str]]:
        anc = self.sop.ancestors(action) if scoped else None
        inputs, missing = {}, []
        for slot in self.sop.registry[action].inputs:
            e = self.bb.get(slot)
            if e is None or (anc is not None and e.producer is not None and e.producer not in anc):
                missing.append(slot)
            else:
                inputs[slot] = e.value
        return inputs, missing

    def invoke(self, action: str, scoped: bool, fallback: bool) -> str | None:
        """Run one action; returns an error message on failure."""
        inputs, missing = self.read(action, scoped)
        if missing:
            err = "missing " + ", ".join(missing)
        else:
            self.attempts[action] = self.attempts.get(action, 0) + 1
            res = mock_invoke(action, inputs, self.scenario, self.attempts[action])
            err = res.error
            if res.ok:
                for k, v in res.outputs.items():
                    self.bb.write(k, v, action, self.t)
                self.done.add(action)
        status = "failed" if err else "done"
        self.report.log.append(LogEntry(self.t, action, status, fallback, err))
        return err

    def frontier(self) -> list[str]:
        names = self.sop.catalog.names
        pred = self.sop.poset.pred
        done = {self.sop.catalog.index_of(a) for a in self.done}
        rem = [i for i in range(len(names)) if i not in done]
        front = [names[i] for i in rem if all(k in done for k in iter_bits(pred[i]))]
        return sorted(front)

    def execute(self, hook: FallbackHook | None) -> ExecutionReport:
        rep = self.report
        while len(self.done) < rep.n_actions:
            front = self.frontier()
            self.t += 1
            rep.frontiers.append({"t": self.t, "actions": front})
            fault = None
            for a in front:
                err = self.invoke(a, self.scoped, False)
                if err and fault is None:
                    fault = (a, err)
            if fault is None:
                continue
            action, err = fault
            if hook is None:
                rep.error = err
                return rep
            if not self.fallback(hook, action, err):
                return rep
        rep.success = True
        return rep

    def fallback(self, hook: FallbackHook, action: str, err: str) -> bool:
        rep = self.report
        missing = err[len("missing "):].split(", ") if err.startswith("missing ") else []
        plan = list(hook(action, missing, frozenset(self.done), self.sop))
        rep.fallback_events.append({"t": self.t, "action": action, "missing": missing, "error": err, "plan": plan})
        if not plan:
            rep.error = f"fallback produced no plan for {action}: {err}"
            return False
        for a in plan:
            if a in self.done:
                continue
            self.t += 1
            e = self.invoke(a, False, True)
            if e:
                rep.error = f"fallback step {a} failed: {e}"
                return False
        if action not in self.done:
            rep.error = f"fallback plan did not complete {action}"
            return False
        return True


def run_expert(
    sop: CompiledSOP, scenario: Scenario, initial: Mapping[str, str] | None = None, scoped_reads: bool = True
) -> ExecutionReport:
    """Frontier execution that halts on the first fault."""
    return _Run(sop, scenario, initial, scoped_reads, "expert").execute(None)


def run_hybrid(
    sop: CompiledSOP,
    scenario: Scenario,
    initial: Mapping[str, str] | None = None,
    fallback: FallbackHook | None = None,
    scoped_reads: bool = True,
) -> ExecutionReport:
    """Frontier execution that hands faults to a planner hook and then resumes."""
    hook = fallback or oracle_planner(scenario)
    return _Run(sop, scenario, initial, scoped_reads, "hybrid").execute(hook)
