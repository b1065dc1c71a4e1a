import random

import pytest

from roleflow import (
    Channel,
    CoherenceError,
    Expr,
    Net,
    ProcedureDef,
    apply_op,
    diff_models,
    evolve,
    recompose,
    serialize_model,
    validate_model,
    validate_op,
)
from roleflow.adaptation import (
    AdaptationRequest,
    a_com,
    a_p,
    a_sn,
    add_agent,
    modify_agent,
    r_com,
    r_p,
    remove_agent,
    rp_p,
    rp_t,
)

from conftest import TOK, tok
from helpers import gen_agent_payload, gen_org, gen_random_op, all_assignments
from roleflow import decompose


def inc2():
    return ProcedureDef(
        "inc2",
        (("n", TOK),),
        (("o", TOK),),
        (("o", Expr.call("addK", Expr.var("n"), Expr.lit(tok(2)))),),
    )


def hold_task():
    from roleflow import OutputArc, Place, ReceiveEvent, Transition

    return Net(
        "agent2",
        colorsets=[TOK],
        places=[Place("hold", TOK)],
        transitions=[Transition("tB", "B", "inc1", event=ReceiveEvent("mid", "n"))],
        arcs=[OutputArc("tB", "hold", "o")],
    )


class TestValidateOp:
    def test_remove_procedure_in_use(self, mam1):
        report = validate_op(mam1, r_p("agent2", "inc1"))
        assert any("in use by tB" in v.message for v in report.entries)

    def test_replace_with_same_signature_ok(self, mam1):
        assert validate_op(mam1, rp_p("agent2", "inc1", inc2())).empty

    def test_remove_channel_in_use(self, mam1):
        report = validate_op(mam1, r_com("mid"))
        assert any("in use by agent1" in v.message for v in report.entries)

    def test_signature_change_blocked_when_referenced(self, mam1):
        two_in = ProcedureDef(
            "wider",
            (("n", TOK), ("m", TOK)),
            (("o", TOK),),
            (("o", Expr.var("n")),),
        )
        report = validate_op(mam1, rp_p("agent2", "inc1", two_in))
        assert any("keep the signature" in v.message for v in report.entries)

    def test_add_channel_requires_both_endpoints(self, mam1):
        report = validate_op(mam1, a_com(Channel("extra", TOK, "agent1", "nobody")))
        assert any("not an agent" in v.message for v in report.entries)

    def test_remove_agent_still_named_by_channel(self, mam1):
        report = validate_op(mam1, remove_agent("agent2"))
        assert any("still name the agent" in v.message for v in report.entries)


class TestApplyOp:
    def test_rpp_changes_only_the_body(self, mam1):
        got = apply_op(mam1, rp_p("agent2", "inc1", inc2()))
        assert sorted(got.agents["agent2"].task.procedures) == ["inc2"]
        assert got.agents["agent2"].task.transitions["tB"].procedure == "inc2"
        assert got.agents["agent1"] == mam1.agents["agent1"]
        assert got.channels == mam1.channels
        assert mam1.agents["agent2"].task.procedures.get("inc1") is not None  # input untouched

    def test_add_agent_keeps_channels(self, mam1):
        rng = random.Random(5)
        got = apply_op(mam1, add_agent(gen_agent_payload(rng, "agent3")))
        assert sorted(got.agents) == ["agent1", "agent2", "agent3"]
        assert got.channels == mam1.channels

    def test_rpt_touches_exactly_one_task(self, mam1):
        got = apply_op(mam1, rp_t("agent2", hold_task()))
        assert sorted(got.agents["agent2"].task.places) == ["hold"]
        assert sorted(got.agents["agent2"].task.procedures) == ["inc1"]  # knowledge kept
        diff = diff_models(mam1, got)
        assert diff == ("agent agent2: task replaced",)

    def test_rejected_op_raises(self, mam1):
        with pytest.raises(CoherenceError):
            apply_op(mam1, r_p("agent2", "inc1"))


class TestEvolve:
    def test_preserving_impact(self, mam1):
        got, impact = evolve(mam1, AdaptationRequest((rp_p("agent2", "inc1", inc2()),)))
        assert impact.per_agent == {"agent1": "preserving", "agent2": "preserving"}
        assert sorted(got.agents["agent2"].task.procedures) == ["inc2"]

    def test_task_replacement_is_modifying(self, mam1):
        _, impact = evolve(mam1, AdaptationRequest((rp_t("agent2", hold_task()),)))
        assert impact.per_agent == {"agent1": "preserving", "agent2": "modifying"}

    def test_new_agents_are_modifying(self, mam1):
        rng = random.Random(6)
        _, impact = evolve(mam1, AdaptationRequest((add_agent(gen_agent_payload(rng, "agent3")),)))
        assert impact.per_agent["agent3"] == "modifying"

    def test_atomic_rejection(self, mam1):
        before = serialize_model(mam1)
        request = AdaptationRequest((rp_p("agent2", "inc1", inc2()), r_p("agent2", "nonexistent")))
        with pytest.raises(CoherenceError):
            evolve(mam1, request)
        assert serialize_model(mam1) == before

    def test_empty_request_rejected(self, mam1):
        with pytest.raises(CoherenceError):
            evolve(mam1, AdaptationRequest(()))

    def test_noop_modify_agent(self, mam1):
        got, impact = evolve(mam1, AdaptationRequest((modify_agent("agent2", ()),)))
        assert serialize_model(got) == serialize_model(mam1)
        assert impact.per_agent == {"agent1": "preserving", "agent2": "preserving"}


class TestDiff:
    def test_identity_is_empty(self, mam1):
        assert diff_models(mam1, mam1) == ()

    def test_added_agent(self, mam1):
        rng = random.Random(7)
        got = apply_op(mam1, add_agent(gen_agent_payload(rng, "agent3")))
        assert diff_models(mam1, got) == ("agent agent3 added",)

    def test_two_ops_two_entries(self, mam1):
        request = AdaptationRequest(
            (
                a_p("agent2", ProcedureDef("spare", (("x", TOK),), (("y", TOK),), (("y", Expr.var("x")),))),
                a_com(Channel("side", TOK, "agent2", "agent1")),
            )
        )
        got, _ = evolve(mam1, request)
        diff = diff_models(mam1, got)
        assert len(diff) == len(request.ops) == 2
        assert diff == ("channel side added", "agent agent2: procedure spare added")


class TestInversePairs:
    def test_add_remove_agent(self, mam1):
        rng = random.Random(8)
        agent = gen_agent_payload(rng, "agent9")
        back = apply_op(apply_op(mam1, add_agent(agent)), remove_agent("agent9"))
        assert serialize_model(back) == serialize_model(mam1)

    def test_add_remove_channel(self, mam1):
        ch = Channel("spare", TOK, "agent1", "agent2")
        back = apply_op(apply_op(mam1, a_com(ch)), r_com("spare"))
        assert serialize_model(back) == serialize_model(mam1)

    def test_add_remove_procedure(self, mam1):
        proc = ProcedureDef("spare", (("x", TOK),), (("y", TOK),), (("y", Expr.var("x")),))
        back = apply_op(apply_op(mam1, a_p("agent2", proc)), r_p("agent2", "spare"))
        assert serialize_model(back) == serialize_model(mam1)

    def test_sensor_and_effector_pairs(self, mam1):
        ch = Channel("spare", TOK, "agent1", "agent2")
        with_ch = apply_op(mam1, a_com(ch))
        with_sn = apply_op(with_ch, a_sn("agent2", "spare"))
        from roleflow.adaptation import r_sn

        assert serialize_model(apply_op(with_sn, r_sn("agent2", "spare"))) == serialize_model(with_ch)


class TestClosureSample:
    def test_accepted_ops_stay_coherent(self):
        rng = random.Random(99)
        for i in range(8):
            org = gen_org(rng, f"cl{i}")
            assignment = next(iter(all_assignments(org.roles)))
            mam = decompose(org, assignment)
            for _ in range(20):
                op = gen_random_op(rng, mam)
                report = validate_op(mam, op)
                if report.empty:
                    mam = apply_op(mam, op)
                    assert validate_model(mam).empty
                    recompose(mam)
