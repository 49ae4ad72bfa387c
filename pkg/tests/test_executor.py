from __future__ import annotations

import json
import logging
import re

import pytest

from traceorder.errors import RegistryGap, SchemaError
from traceorder.executor import (
    Blackboard,
    BlackboardConflict,
    IORegistry,
    IOSignature,
    Scenario,
    compile_sop,
    mock_invoke,
    oracle_planner,
    run_expert,
    run_hybrid,
)
from traceorder.poset import Poset

VPC, VSW, SG, RUN = "CreateVpc", "CreateVSwitch", "CreateSecurityGroup", "RunInstances"


@pytest.fixture
def s1(s1_paths) -> Scenario:
    return Scenario.load(s1_paths["scenario"])


def sop_without(s1: Scenario, dropped=()):
    cat = s1.catalog
    edges = [(cat.index_of(u), cat.index_of(v)) for u, v in s1.truth_edges if (u, v) not in dropped]
    return compile_sop(Poset.from_edges(len(cat), edges), s1.registry, cat, s1.initial)


# -- building blocks ------------------------------------------------------------


def test_signature_validation():
    with pytest.raises(ValueError):
        IOSignature(("",), ())
    reg = IORegistry.from_dict({"a": {"outputs": ["X"]}, "b": {"inputs": ["X"], "outputs": ["X"]}})
    assert reg.producers("X") == ["a", "b"]
    assert IORegistry.from_dict(reg.to_dict()) == reg


def test_blackboard_is_write_once():
    bb = Blackboard({"RegionId": "r"})
    assert bb.get("RegionId").producer is None
    bb.write("VpcId", "vpc-1", VPC, 1)
    with pytest.raises(BlackboardConflict):
        bb.write("VpcId", "vpc-2", SG, 2)
    assert "VpcId" in bb and bb.get("Nope") is None
    assert list(bb.snapshot()) == ["RegionId", "VpcId"]


def test_scenario_loading(s1):
    assert s1.catalog.names == (VPC, VSW, SG, RUN)
    assert s1.truth().edges == [(0, 1), (0, 2), (0, 3), (1, 3), (2, 3)]
    with pytest.raises(SchemaError, match=r"\$\.registry"):
        Scenario.from_dict({})
    with pytest.raises(SchemaError, match=r"truth_edges\[0\]"):
        Scenario.from_dict({"registry": {"a": {}}, "truth_edges": [["a", "zz"]]})
    with pytest.raises(SchemaError, match=r"failures"):
        Scenario.from_dict({"registry": {"a": {}}, "failures": {"a": "sometimes"}})


def test_mock_invoke_tokens_are_deterministic(s1):
    a = mock_invoke(VPC, {"RegionId": "x"}, s1)
    b = mock_invoke(VPC, {"RegionId": "y"}, s1)
    assert a.ok and a.outputs == b.outputs
    assert re.fullmatch(r"vpc-[0-9a-f]{8}", a.outputs["VpcId"])
    run = mock_invoke(RUN, {}, s1)
    assert re.fullmatch(r"instance-[0-9a-f]{8}", run.outputs["InstanceIds"])
    other = Scenario(s1.registry, s1.truth_edges, {}, s1.initial, seed=1)
    assert mock_invoke(VPC, {}, other).outputs != a.outputs


def test_mock_invoke_failure_modes(s1):
    once = Scenario(s1.registry, s1.truth_edges, {SG: "once"}, s1.initial)
    assert not mock_invoke(SG, {}, once, 1).ok
    assert mock_invoke(SG, {}, once, 2).ok
    always = Scenario(s1.registry, s1.truth_edges, {SG: "always"}, s1.initial)
    assert not mock_invoke(SG, {}, always, 5).ok


# -- compilation ----------------------------------------------------------------


def test_compile_true_order_has_no_warnings(s1):
    sop = sop_without(s1)
    assert sop.warnings == ()
    assert sop.ancestors(RUN) == {VPC, VSW, SG}
    assert sop.cover == [(0, 1), (0, 2), (1, 3), (2, 3)]


def test_compile_warns_on_unreachable_producer(s1, caplog):
    with caplog.at_level(logging.WARNING):
        sop = sop_without(s1, {(SG, RUN)})
    assert sop.warnings == ("SecurityGroupId has no reachable producer for RunInstances",)
    assert "SecurityGroupId" in caplog.text


def test_compile_errors(s1):
    cat = s1.catalog
    reg = IORegistry({k: v for k, v in s1.registry.items() if k != RUN})
    with pytest.raises(RegistryGap):
        compile_sop(s1.truth(), reg, cat)
    with pytest.raises(ValueError):
        compile_sop(Poset.empty(3), s1.registry, cat)


# -- execution ------------------------------------------------------------------


def test_expert_runs_true_sop(s1):
    rep = run_expert(sop_without(s1), s1)
    assert rep.success and rep.completeness == 1.0
    assert rep.timesteps == 3
    assert [f["actions"] for f in rep.frontiers] == [[VPC], [SG, VSW], [RUN]]
    assert rep.n_fallbacks == 0 and rep.llm_calls == 1


def test_expert_halts_on_missing_edge(s1):
    rep = run_expert(sop_without(s1, {(SG, RUN)}), s1)
    assert not rep.success
    assert rep.error == "missing SecurityGroupId"
    assert rep.completeness == 0.75
    # the producer already ran, but it is not an ancestor of RunInstances
    assert [f["actions"] for f in rep.frontiers] == [[VPC], [SG, VSW], [RUN]]
    assert rep.log[-1].action == RUN and rep.log[-1].status == "failed"


def test_unscoped_reads_hide_the_missing_edge(s1):
    rep = run_expert(sop_without(s1, {(SG, RUN)}), s1, scoped_reads=False)
    # the producer happens to run one frontier earlier, so the gap goes unnoticed
    assert rep.success and rep.timesteps == 3


def test_hybrid_recovers_missing_edge(s1):
    rep = run_hybrid(sop_without(s1, {(SG, RUN)}), s1)
    assert rep.success and rep.completeness == 1.0
    assert rep.n_fallbacks == 1 and rep.llm_calls == 2
    ev = rep.fallback_events[0]
    assert ev["action"] == RUN and ev["missing"] == ["SecurityGroupId"]
    assert ev["plan"] == [RUN]  # all true ancestors are done by then
    assert rep.action_fallback_rate == 0.25
    assert rep.to_dict()["task_fallback"] is True


def test_hybrid_with_transient_failure(s1):
    flaky = Scenario(s1.registry, s1.truth_edges, {VSW: "once"}, s1.initial)
    expert = run_expert(sop_without(flaky), flaky)
    assert not expert.success and "failed" in expert.error
    rep = run_hybrid(sop_without(flaky), flaky)
    assert rep.success and rep.n_fallbacks == 1
    # the sibling in the faulted frontier still completed
    assert SG in rep.completed


def test_hybrid_gives_up_on_permanent_failure(s1):
    broken = Scenario(s1.registry, s1.truth_edges, {VSW: "always"}, s1.initial)
    rep = run_hybrid(sop_without(broken), broken)
    assert not rep.success and "fallback step" in rep.error


def test_hybrid_empty_and_incomplete_plans(s1):
    sop = sop_without(s1, {(SG, RUN)})
    rep = run_hybrid(sop, s1, fallback=lambda *a: [])
    assert not rep.success and "no plan" in rep.error
    rep = run_hybrid(sop, s1, fallback=lambda *a: [SG])
    assert not rep.success and "did not complete" in rep.error


def test_oracle_planner_orders_true_ancestors(s1):
    plan = oracle_planner(s1)
    assert plan(RUN, ["VpcId"], frozenset(), None) == [VPC, SG, VSW, RUN]
    assert plan(RUN, [], frozenset({VPC, VSW}), None) == [SG, RUN]


def test_empty_order_runs_everything_at_once(s1):
    cat = s1.catalog
    sop = compile_sop(Poset.empty(4), s1.registry, cat, s1.initial)
    assert len(sop.warnings) == 4
    rep = run_hybrid(sop, s1)
    assert rep.success
    assert rep.frontiers[0]["actions"] == sorted(cat.names)


def test_report_serialises(s1):
    rep = run_hybrid(sop_without(s1, {(SG, RUN)}), s1)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["timesteps"] == rep.timesteps and d["log"][0]["action"] == VPC
