"""Command-line pipeline: simulate -> infer -> estimate -> evaluate, plus baselines and execution.

Every artifact is a deterministic function of the config, the input files and
the seeds, so reruns are byte-identical.  Outputs land in
``<out>/<name>/`` (``traces.json``, ``chain-<seed>.jsonl``, ``marginals.csv``,
``estimate-<alpha>.json`` / ``.dot``, ``estimate-mode.json``, ``report.json``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import heuristics_baseline, majority_baseline, qj_infer
from .errors import SchemaError, TargetUnreachable, TooLarge, TraceOrderError
from .estimation import (
    edge_marginals,
    mode_estimate,
    recovery_report,
    threshold_estimate,
    write_marginals_csv,
)
from .executor import Scenario, compile_sop, run_expert, run_hybrid
from .likelihood import LikelihoodParams
from .poset import ActionCatalog, Poset, graph_document, load_graph, to_dot
from .priors import Hyperparams
from .sampler import Chain, SamplerConfig, run_chain
from .traces import curate_to_coverage, ip_coverage, parse_trace_file, trace_document, TraceSet

log = logging.getLogger("traceorder")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3
DATA = resources.files("traceorder") / "data"


# -- config ---------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    name: str = "run"
    base: Path = Path(".")
    graph: str | None = None
    traces: str | None = None
    synthesis: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    estimator: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)
    scenario: str | None = None
    out: str = "runs"

    @classmethod
    def load(cls, path: str | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        p = _resolve_existing(path, Path("."))
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise SchemaError("$", "config must be an object")
        known = {"name", "graph", "traces", "synthesis", "sampler", "estimator", "baselines", "scenario", "out"}
        for key in doc:
            if key not in known:
                raise SchemaError(f"$.{key}", "unknown config key")
        for key in ("synthesis", "sampler", "estimator", "baselines"):
            if key in doc and not isinstance(doc[key], dict):
                raise SchemaError(f"$.{key}", "expected an object")
        return cls(base=p.parent, **doc)

    def path(self, value: str | None, what: str) -> Path:
        if value is None:
            raise SchemaError(f"$.{what}", "no path given (config key or command-line flag)")
        return _resolve_existing(value, self.base)

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.name

    def seeds(self, override: int | None) -> list[int]:
        if override is not None:
            return [override]
        seeds = self.sampler.get("seeds", [0])
        if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds) or not seeds:
            raise SchemaError("$.sampler.seeds", "expected a non-empty list of integers")
        return seeds

    def sampler_config(self, seed: int) -> SamplerConfig:
        s = dict(self.sampler)
        try:
            hp = Hyperparams.from_dict(s.get("hyperparams"))
            lik = LikelihoodParams(beta=1.0, epsilon=float(s.get("epsilon", 0.01)))
            return SamplerConfig(
                iterations=int(s.get("iterations", 200_000)),
                burn_in=float(s.get("burn_in", 0.5)),
                thin=int(s.get("thin", 100)),
                cycle_length=int(s.get("cycle_length", 500)),
                seed=seed,
                hyperparams=hp,
                likelihood=lik,
                u_step_scale=float(s.get("u_step_scale", 1.0)),
                jump_p=self.baselines.get("qj_jump"),
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError("$.sampler", str(exc)) from None

    def alphas(self, override: list[float] | None) -> list[float]:
        alphas = override or self.estimator.get("alpha", [1 / 3])
        if not isinstance(alphas, list):
            alphas = [alphas]
        for a in alphas:
            if not isinstance(a, (int, float)) or not 0 < a < 1:
                raise SchemaError("$.estimator.alpha", f"alpha must lie in (0, 1), got {a!r}")
        return [float(a) for a in alphas]


def _resolve_existing(value: str, base: Path) -> Path:
    for cand in (Path(value), base / value, Path(str(DATA / value))):
        if cand.exists():
            return cand
    raise SchemaError("$", f"file not found: {value}")


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _alpha_tag(alpha: float) -> str:
    return f"{alpha:.4g}"


def _align(src: ActionCatalog, order: Poset, dst: ActionCatalog) -> Poset:
    """Re-index ``order`` from catalog ``src`` onto catalog ``dst`` (same names)."""
    if set(src.names) != set(dst.names):
        raise SchemaError("$.nodes", "estimate and reference use different action sets")
    return Poset.from_edges(len(dst), [(dst.index_of(src.names[i]), dst.index_of(src.names[j])) for i, j in order.edges])


# -- commands -------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, args) -> dict:
    catalog, truth = load_graph(cfg.path(args.truth or cfg.graph, "graph"))
    syn = cfg.synthesis
    seed = args.seed if args.seed is not None else int(syn.get("seed", 0))
    target = float(syn.get("target_ip_cov", 1.0))
    traces = curate_to_coverage(
        truth,
        target,
        np.random.default_rng(seed),
        max_attempts=int(syn.get("max_attempts", 10_000)),
        catalog=catalog,
        min_traces=int(syn.get("min_traces", 0)),
    )
    realized = traces.meta["realized"]
    out = Path(args.out or cfg.run_dir) / "traces.json"
    _write_json(out, trace_document(traces, target=target, realized=realized, seed=seed))
    return {"traces": str(out), "n_traces": len(traces), "target": target, "realized": realized}


def _load_traces(cfg: ExperimentConfig, args) -> TraceSet:
    path = args.traces or cfg.traces
    if path is None:
        path = str(Path(args.out or cfg.run_dir) / "traces.json")
    return parse_trace_file(cfg.path(path, "traces"))


def cmd_infer(cfg: ExperimentConfig, args) -> dict:
    traces = _load_traces(cfg, args)
    kind = cfg.sampler.get("likelihood", "frontier")
    if kind not in ("frontier", "queue-jump", "none"):
        raise SchemaError("$.sampler.likelihood", f"unknown likelihood {kind!r}")
    out_dir = Path(args.out or cfg.run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for seed in cfg.seeds(args.seed):
        path = out_dir / f"chain-{seed}.jsonl"
        chain = run_chain(cfg.sampler_config(seed), traces, kind, out=path)
        written.append({"chain": str(path), "samples": len(chain), "accept": chain.accept})
    return {"chains": written}


def _load_chains(cfg: ExperimentConfig, args) -> Chain:
    paths = args.chain or [
        str(Path(args.out or cfg.run_dir) / f"chain-{s}.jsonl") for s in cfg.seeds(args.seed)
    ]
    return Chain.merge([Chain.load(cfg.path(p, "chain")) for p in paths])


def cmd_estimate(cfg: ExperimentConfig, args) -> dict:
    chain = _load_chains(cfg, args)
    marg = edge_marginals(chain)
    out_dir = Path(args.out or cfg.run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_marginals_csv(marg, out_dir / "marginals.csv")
    cat = chain.catalog
    mode = mode_estimate(marg)
    _write_json(out_dir / "estimate-mode.json", graph_document(cat, mode, estimator="mode"))
    (out_dir / "estimate-mode.dot").write_text(to_dot(cat, mode))
    written = {}
    for alpha in cfg.alphas(args.alpha):
        est = threshold_estimate(marg, alpha)
        tag = _alpha_tag(alpha)
        _write_json(out_dir / f"estimate-{tag}.json", graph_document(cat, est, estimator="threshold", alpha=alpha))
        (out_dir / f"estimate-{tag}.dot").write_text(to_dot(cat, est))
        written[tag] = {"estimate": str(out_dir / f"estimate-{tag}.json"), "agrees_with_mode": est == mode}
    return {"samples": len(chain), "estimates": written}


def cmd_evaluate(cfg: ExperimentConfig, args) -> dict:
    truth_cat, truth = load_graph(cfg.path(args.truth or cfg.graph, "graph"))
    traces = _load_traces(cfg, args)
    est_path = args.estimate or str(Path(args.out or cfg.run_dir) / f"estimate-{_alpha_tag(cfg.alphas(args.alpha)[0])}.json")
    est_cat, est = load_graph(cfg.path(est_path, "estimate"))
    est = _align(est_cat, est, truth_cat)
    if traces.catalog != truth_cat:
        traces = TraceSet(truth_cat, traces.traces)
    report = recovery_report(est, truth, traces).to_dict()
    _write_json(Path(args.out or cfg.run_dir) / "report.json", report)
    return report


def cmd_baseline(cfg: ExperimentConfig, args) -> dict:
    traces = _load_traces(cfg, args)
    method = args.method or "majority"
    b = cfg.baselines
    if method == "majority":
        est = majority_baseline(traces, float(b.get("tau", 0.5)))
    elif method == "heuristics":
        est = heuristics_baseline(traces, float(b.get("delta", 0.5)))
    else:
        seed = cfg.seeds(args.seed)[0]
        chain = qj_infer(cfg.sampler_config(seed), traces)
        est = mode_estimate(chain)
    out = Path(args.out or cfg.run_dir) / f"baseline-{method}.json"
    _write_json(out, graph_document(traces.catalog, est, method=method))
    return {"baseline": str(out), "edges": graph_document(traces.catalog, est)["edges"]}


def cmd_execute(cfg: ExperimentConfig, args) -> dict:
    scenario = Scenario.load(cfg.path(args.scenario or cfg.scenario, "scenario"))
    est_cat, est = load_graph(cfg.path(args.estimate, "estimate"))
    est = _align(est_cat, est, scenario.catalog)
    sop = compile_sop(est, scenario.registry, scenario.catalog, scenario.initial)
    mode = args.mode or "expert"
    rep = run_expert(sop, scenario) if mode == "expert" else run_hybrid(sop, scenario)
    doc = rep.to_dict()
    doc["warnings"] = list(sop.warnings)
    _write_json(Path(args.out or cfg.run_dir) / f"execution-{mode}.json", doc)
    return doc


def cmd_run(cfg: ExperimentConfig, args) -> dict:
    summary: dict[str, Any] = {}
    if cfg.traces is None and args.traces is None:
        summary["simulate"] = cmd_simulate(cfg, args)
    summary["infer"] = cmd_infer(cfg, args)
    summary["estimate"] = cmd_estimate(cfg, args)
    out_dir = Path(args.out or cfg.run_dir)
    if cfg.graph or args.truth:
        truth_cat, truth = load_graph(cfg.path(args.truth or cfg.graph, "graph"))
        traces = _load_traces(cfg, args)
        chain = _load_chains(cfg, args)
        marg = edge_marginals(chain)
        per_alpha = {}
        for alpha in cfg.alphas(args.alpha):
            est = _align(chain.catalog, threshold_estimate(marg, alpha), truth_cat)
            per_alpha[_alpha_tag(alpha)] = recovery_report(est, truth, TraceSet(truth_cat, traces.traces)).to_dict()
        mode = _align(chain.catalog, mode_estimate(marg), truth_cat)
        report = {
            "ip_cov": ip_coverage(TraceSet(truth_cat, traces.traces), truth),
            "threshold": per_alpha,
            "mode": recovery_report(mode, truth, TraceSet(truth_cat, traces.traces)).to_dict(),
        }
        baselines = {}
        for method, fn, key in (("majority", majority_baseline, "tau"), ("heuristics", heuristics_baseline, "delta")):
            if method in cfg.baselines.get("methods", ["majority", "heuristics"]):
                est = fn(traces, float(cfg.baselines.get(key, 0.5)))
                est = _align(traces.catalog, est, truth_cat)
                baselines[method] = recovery_report(est, truth, TraceSet(truth_cat, traces.traces)).to_dict()
        if cfg.baselines.get("qj"):
            chain_qj = qj_infer(cfg.sampler_config(cfg.seeds(args.seed)[0]), traces)
            est = _align(traces.catalog, mode_estimate(chain_qj), truth_cat)
            baselines["qj"] = recovery_report(est, truth, TraceSet(truth_cat, traces.traces)).to_dict()
        report["baselines"] = baselines
        _write_json(out_dir / "report.json", report)
        summary["report"] = str(out_dir / "report.json")
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "execute": cmd_execute,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="traceorder", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the config seed(s)")
        p.add_argument("--alpha", type=float, action="append", help="threshold level (repeatable)")
        p.add_argument("--method", choices=["majority", "heuristics", "qj"])
        p.add_argument("--mode", choices=["expert", "hybrid"])
        p.add_argument("--out", help="output directory (default <config out>/<name>)")
        p.add_argument("--chain", action="append", help="chain JSONL file (repeatable)")
        p.add_argument("--estimate", help="estimated graph JSON")
        p.add_argument("--truth", help="reference graph JSON")
        p.add_argument("--traces", help="trace file (flat or rich JSON)")
        p.add_argument("--scenario", help="executor scenario JSON")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        result = COMMANDS[args.command](cfg, args)
    except (TooLarge, TargetUnreachable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SchemaError, TraceOrderError, ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
