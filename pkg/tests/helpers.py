"""Independent oracles and random model generators used across the suite.

The oracles here are written naively and separately from the library paths
they check: binding enumeration works over individual token instances,
firing effects are recomputed by explicit count accounting, and concurrent
runs are checked against an exhaustive interleaving search.
"""

from __future__ import annotations

import itertools
import random

from roleflow import (
    ColorSet,
    CommLink,
    Expr,
    InputArc,
    Marking,
    Multiset,
    Net,
    Organization,
    OutputArc,
    Place,
    ProcedureDef,
    ReceiveEvent,
    Role,
    Transition,
    Value,
    communication_structure,
    enabled_bindings,
    eval_expr,
    fire,
    validate_organization,
)

TOK = ColorSet("Tok", "int")


def tok(n: int) -> Value:
    return Value(TOK, n)


# ---------------------------------------------------------------------------
# oracle: binding enumeration over token instances


def brute_force_bindings(net, marking, tid, mailbox=()):
    """Enumerate bindings by choosing concrete token instances, then dedupe."""
    t = net.transitions[tid]
    fixed = {}
    if isinstance(t.event, ReceiveEvent):
        msgs = [v for ch, v in mailbox if ch == t.event.channel]
        if not msgs:
            return []
        fixed[t.event.var] = msgs[0]

    arcs = list(net.input_arcs(tid))
    pools = []
    for arc in arcs:
        instances = [(arc.place, i, v) for i, v in enumerate(marking.get(arc.place).values())]
        pools.append(instances)

    found = []
    for combo in itertools.product(*pools):
        taken = set()
        clash = False
        for pid, i, _ in combo:
            if (pid, i) in taken:
                clash = True
                break
            taken.add((pid, i))
        if clash:
            continue
        binding = dict(fixed)
        for arc, (_, _, v) in zip(arcs, combo):
            binding[arc.label] = v
        if t.guard is not None:
            if eval_expr(t.guard, binding).payload != "true":
                continue
        if binding not in found:
            found.append(binding)
    found.sort(key=lambda b: tuple(b[p].sort_key() for p in sorted(b)))
    return found


def accounting_fire(net, marking, tid, binding):
    """Expected post-firing marking from explicit per-place count bookkeeping."""
    from roleflow.cpn import invoke_procedure

    t = net.transitions[tid]
    proc = net.procedures[t.procedure]
    counts = {pid: dict() for pid in net.places}
    for pid in net.places:
        for v, c in marking.get(pid).items():
            counts[pid][v] = c
    for arc in net.input_arcs(tid):
        v = binding[arc.label]
        counts[arc.place][v] -= 1
        assert counts[arc.place][v] >= 0, "negative intermediate count"
        if counts[arc.place][v] == 0:
            del counts[arc.place][v]
    results = invoke_procedure(proc, binding)
    for arc in net.output_arcs(tid):
        v = results[arc.label]
        counts[arc.place][v] = counts[arc.place].get(v, 0) + 1
    return Marking({pid: Multiset.from_counts(c) for pid, c in counts.items() if c})


# ---------------------------------------------------------------------------
# random organizations (single-input transitions, DAG flow, role-clean places)


def gen_org(rng: random.Random, ident: str = "gen") -> Organization:
    """A small organization that decomposes under every total assignment."""
    while True:
        org = _try_gen_org(rng, ident)
        if org is not None and validate_organization(org).empty:
            return org


def _try_gen_org(rng, ident):
    n_roles = rng.randint(1, 3)
    roles = [f"r{i+1}" for i in range(n_roles)]
    n_places = rng.randint(2, 4)
    reader_role = {f"p{i}": rng.choice(roles) for i in range(n_places)}
    place_ids = sorted(reader_role)

    n_trans = rng.randint(1, 5)
    writer_role: dict[str, str] = {}
    transitions, procedures, arcs = [], [], []
    for t_index in range(n_trans):
        in_idx = rng.randrange(n_places)
        in_place = f"p{in_idx}"
        role = reader_role[in_place]
        later = [f"p{j}" for j in range(in_idx + 1, n_places)]
        rng.shuffle(later)
        outs = []
        for cand in later:
            if len(outs) >= rng.randint(1, 2):
                break
            if writer_role.get(cand, role) != role:
                continue
            outs.append(cand)
        if not outs:
            return None
        for cand in outs:
            writer_role[cand] = role
        pname = f"f{t_index+1}"
        out_sig = tuple((f"y{j+1}", TOK) for j in range(len(outs)))
        body = []
        for rname, _ in out_sig:
            kind = rng.randrange(3)
            if kind == 0:
                body.append((rname, Expr.var("x")))
            elif kind == 1:
                body.append((rname, Expr.call("inc", Expr.var("x"))))
            else:
                body.append(
                    (rname, Expr.call("addK", Expr.var("x"), Expr.lit(tok(rng.randint(0, 3)))))
                )
        procedures.append(ProcedureDef(pname, (("x", TOK),), out_sig, tuple(body)))
        tid = f"t{t_index+1}"
        transitions.append(Transition(tid, role, pname))
        arcs.append(InputArc(in_place, tid, "x"))
        for (rname, _), cand in zip(out_sig, outs):
            arcs.append(OutputArc(tid, cand, rname))

    # per-place single writer/reader role, and at most one cross-role adjacency
    # per transition, so every assignment (roles merged or split) decomposes
    actual_writers: dict[str, set] = {p: set() for p in place_ids}
    actual_readers: dict[str, set] = {p: set() for p in place_ids}
    t_by_id = {t.id: t for t in transitions}
    for arc in arcs:
        role = t_by_id[arc.transition].role
        if isinstance(arc, OutputArc):
            actual_writers[arc.place].add(role)
        else:
            actual_readers[arc.place].add(role)
    cross = set()
    for p in place_ids:
        if len(actual_writers[p]) > 1 or len(actual_readers[p]) > 1:
            return None
        if actual_writers[p] and actual_readers[p] and actual_writers[p] != actual_readers[p]:
            cross.add(p)
    for t in transitions:
        adjacent = {a.place for a in arcs if a.transition == t.id}
        if len(adjacent & cross) > 1:
            return None

    places = []
    for i, pid in enumerate(place_ids):
        initial = Multiset()
        if i < n_places // 2 or n_places == 2 and i == 0:
            initial = Multiset([tok(rng.randint(0, 9)) for _ in range(rng.randint(0, 3))])
        places.append(Place(pid, TOK, initial))
    if all(p.initial.is_empty for p in places):
        places[0] = Place(places[0].id, TOK, Multiset([tok(rng.randint(0, 9))]))

    net = Net(
        ident,
        colorsets=[TOK],
        places=places,
        transitions=transitions,
        procedures=procedures,
        arcs=arcs,
    )
    org = Organization(ident, "generated", [Role(r) for r in roles], [], net)
    links = set(communication_structure(org))
    if rng.random() < 0.3 and n_roles >= 2:
        extra = CommLink(roles[0], roles[-1])
        if extra.source != extra.target:
            links.add(extra)
    return Organization(ident, "generated", [Role(r) for r in roles], links, net)


def all_assignments(roles):
    """Every total assignment onto canonically named agents (set partitions)."""
    roles = sorted(roles)

    def rec(i, used, current):
        if i == len(roles):
            yield dict(current)
            return
        for a in range(used + 1):
            current[roles[i]] = f"ag{a+1}"
            yield from rec(i + 1, max(used, a + 1), current)

    yield from rec(0, 0, {})


# ---------------------------------------------------------------------------
# bounded nets for the enabling-oracle family


def gen_bounded_net(rng: random.Random):
    """Nets of <=4 places, <=3 transitions, int tokens 0..9, <=5 tokens total."""
    n_places = rng.randint(1, 4)
    place_ids = [f"p{i}" for i in range(n_places)]
    n_trans = rng.randint(1, 3)
    transitions, procedures, arcs = [], [], []
    channels = ["ch0", "ch1"]
    uses_receive = False
    for idx in range(n_trans):
        tid = f"t{idx+1}"
        n_in = rng.randint(1, 2)
        n_out = rng.randint(0, 2)
        receive = rng.random() < 0.35
        uses_receive = uses_receive or receive
        in_names = [f"a{j}" for j in range(n_in)] + (["m"] if receive else [])
        out_names = [f"b{j}" for j in range(n_out)]
        body = tuple((o, Expr.call("inc", Expr.var(rng.choice(in_names)))) for o in out_names)
        procedures.append(
            ProcedureDef(
                f"f{idx+1}",
                tuple((n, TOK) for n in in_names),
                tuple((n, TOK) for n in out_names),
                body,
            )
        )
        event = ReceiveEvent(rng.choice(channels), "m") if receive else None
        transitions.append(Transition(tid, "R", f"f{idx+1}", event=event))
        for j in range(n_in):
            arcs.append(InputArc(rng.choice(place_ids), tid, f"a{j}"))
        for j in range(n_out):
            arcs.append(OutputArc(tid, rng.choice(place_ids), f"b{j}"))
    net = Net(
        "bounded",
        colorsets=[TOK],
        places=[Place(p, TOK) for p in place_ids],
        transitions=transitions,
        procedures=procedures,
        arcs=arcs,
    )
    counts = {}
    for _ in range(rng.randint(0, 5)):
        pid = rng.choice(place_ids)
        counts.setdefault(pid, []).append(tok(rng.randint(0, 9)))
    marking = Marking({pid: Multiset(vs) for pid, vs in counts.items()})
    mailbox = tuple(
        (rng.choice(channels), tok(rng.randint(0, 9))) for _ in range(rng.randint(0, 2))
    )
    return net, marking, mailbox


# ---------------------------------------------------------------------------
# oracle: exhaustive interleaving search for the concurrent runtime


def _freeze_state(markings, mailboxes, bus):
    return (
        tuple(sorted(markings.items(), key=lambda e: e[0])),
        tuple(sorted((a, tuple(mb)) for a, mb in mailboxes.items())),
        tuple(bus),
    )


def _initial_state(mam):
    markings = {aid: mam.agents[aid].task.initial_marking() for aid in mam.agents}
    mailboxes = {aid: [] for aid in mam.agents}
    for cid in sorted(mam.channels):
        ch = mam.channels[cid]
        for v in sorted(ch.initial, key=lambda v: v.sort_key()):
            mailboxes[ch.consumer].append((cid, v))
    return markings, mailboxes, []


def _agent_canonical_firing(task, marking, mailbox):
    for tid in sorted(task.transitions):
        bindings = enabled_bindings(task, marking, tid, mailbox)
        if bindings:
            return tid, bindings[0]
    return None


def enumerate_final_states(mam, max_states=200_000):
    """All terminal (markings, mailboxes) reachable by interleaving agent steps."""
    from roleflow.cpn import ReceivedMessage, SentMessage

    init = _initial_state(mam)
    seen = set()
    finals = set()
    stack = [init]
    while stack:
        markings, mailboxes, bus = stack.pop()
        key = _freeze_state(markings, mailboxes, bus)
        if key in seen:
            continue
        seen.add(key)
        assert len(seen) <= max_states, "interleaving state space too large"

        moves = []
        delivered_channels = set()
        for i, (ch, v) in enumerate(bus):
            if ch not in delivered_channels:
                delivered_channels.add(ch)
                moves.append(("deliver", i))
        for aid in sorted(mam.agents):
            choice = _agent_canonical_firing(
                mam.agents[aid].task, markings[aid], mailboxes[aid]
            )
            if choice is not None:
                moves.append(("fire", aid, choice))

        if not moves:
            finals.add(
                (
                    key[0],
                    tuple(
                        sorted(
                            (aid, ch, v.canonical())
                            for aid, mb in mailboxes.items()
                            for ch, v in mb
                        )
                    ),
                )
            )
            continue

        for move in moves:
            m2 = dict(markings)
            mb2 = {aid: list(mb) for aid, mb in mailboxes.items()}
            bus2 = list(bus)
            if move[0] == "deliver":
                ch, v = bus2.pop(move[1])
                mb2[mam.channels[ch].consumer].append((ch, v))
            else:
                aid, (tid, binding) = move[1], move[2]
                task = mam.agents[aid].task
                new_marking, events = fire(task, m2[aid], tid, binding)
                m2[aid] = new_marking
                for ev in events:
                    if isinstance(ev, ReceivedMessage):
                        for i, (ch, _) in enumerate(mb2[aid]):
                            if ch == ev.channel:
                                del mb2[aid][i]
                                break
                    elif isinstance(ev, SentMessage):
                        bus2.append((ev.channel, ev.value))
            stack.append((m2, mb2, bus2))
    return finals


def freeze_report_state(report):
    """The comparable final state of a runtime report, matching the enumerator."""
    return (
        tuple(sorted(report.final_markings.items(), key=lambda e: e[0])),
        tuple(
            sorted(
                (aid, ch, v.canonical())
                for aid, mb in report.final_mailboxes.items()
                for ch, v in mb
            )
        ),
    )


# ---------------------------------------------------------------------------
# random adaptation operations for the closure fuzz


def _fresh_task(rng, agent_id, with_loop=False):
    if not with_loop:
        return Net(agent_id, colorsets=[TOK])
    pid = f"own_{agent_id}_{rng.randint(0, 99)}"
    pname = f"spin_{agent_id}"
    return Net(
        agent_id,
        colorsets=[TOK],
        places=[Place(pid, TOK, Multiset([tok(1)]))],
        transitions=[Transition(f"t_{agent_id}", f"role_{agent_id}", pname)],
        procedures=[
            ProcedureDef(pname, (("x", TOK),), (("y", TOK),), (("y", Expr.var("x")),))
        ],
        arcs=[InputArc(pid, f"t_{agent_id}", "x"), OutputArc(f"t_{agent_id}", pid, "y")],
    )


def gen_agent_payload(rng, agent_id):
    from roleflow import AgentModel

    task = _fresh_task(rng, agent_id, with_loop=rng.random() < 0.5)
    return AgentModel(
        id=agent_id,
        roles=frozenset({f"role_{agent_id}"}),
        sensors=frozenset(),
        effectors=frozenset(),
        task=task,
    )


def gen_random_op(rng: random.Random, mam):
    """A plausible mix of valid and invalid operations against the model."""
    from roleflow import Channel
    from roleflow import adaptation as A

    agents = sorted(mam.agents)
    channels = sorted(mam.channels)
    kind = rng.choice(A.OP_KINDS)

    def some_agent(real=0.8):
        if agents and rng.random() < real:
            return rng.choice(agents)
        return f"ghost{rng.randint(0, 2)}"

    def some_channel(real=0.7):
        if channels and rng.random() < real:
            return rng.choice(channels)
        return f"chx{rng.randint(0, 2)}"

    def some_proc(aid):
        agent = mam.agents.get(aid)
        names = sorted(agent.task.procedures) if agent else []
        if names and rng.random() < 0.8:
            return rng.choice(names)
        return f"nosuch{rng.randint(0, 2)}"

    def proc_payload(name, n_in=1, n_out=1):
        ins = tuple((f"x{i}", TOK) for i in range(n_in))
        outs = tuple((f"y{i}", TOK) for i in range(n_out))
        body = tuple((o, Expr.call("inc", Expr.var(ins[0][0]))) for o, _ in outs)
        return ProcedureDef(name, ins, outs, body)

    if kind == "addAgent":
        aid = some_agent(real=0.2) if rng.random() < 0.3 else f"fresh{rng.randint(0, 50)}"
        return A.add_agent(gen_agent_payload(rng, aid))
    if kind == "removeAgent":
        return A.remove_agent(some_agent())
    if kind == "modifyAgent":
        aid = some_agent()
        nested = [gen_random_op(rng, mam) for _ in range(rng.randint(0, 2))]
        nested = [op for op in nested if op.kind not in A.AGENT_OP_KINDS][:2]
        from dataclasses import replace as dc_replace

        nested = [dc_replace(op, agent_id=aid) if op.agent_id else op for op in nested]
        return A.modify_agent(aid, nested)
    if kind == "aCom":
        cid = some_channel(real=0.2) if rng.random() < 0.3 else f"newch{rng.randint(0, 50)}"
        return A.a_com(Channel(cid, TOK, some_agent(), some_agent()))
    if kind == "rCom":
        return A.r_com(some_channel())
    if kind == "rpCom":
        old = some_channel()
        return A.rp_com(old, Channel(old if rng.random() < 0.7 else f"ren{rng.randint(0,9)}", TOK, some_agent(), some_agent()))
    if kind in ("aSn", "rSn", "aEf", "rEf"):
        fn = {"aSn": A.a_sn, "rSn": A.r_sn, "aEf": A.a_ef, "rEf": A.r_ef}[kind]
        return fn(some_agent(), some_channel())
    if kind in ("rpSn", "rpEf"):
        fn = A.rp_sn if kind == "rpSn" else A.rp_ef
        return fn(some_agent(), some_channel(), some_channel())
    if kind == "aP":
        return A.a_p(some_agent(), proc_payload(f"f_new{rng.randint(0, 50)}", rng.randint(1, 2), rng.randint(1, 2)))
    if kind == "rP":
        aid = some_agent()
        return A.r_p(aid, some_proc(aid))
    if kind == "rpP":
        aid = some_agent()
        name = some_proc(aid)
        agent = mam.agents.get(aid)
        old = agent.task.procedures.get(name) if agent else None
        if old is not None and rng.random() < 0.6:
            new = ProcedureDef(
                f"{name}_v{rng.randint(2, 9)}",
                old.inputs,
                old.outputs,
                tuple((o, Expr.call("inc", Expr.var(old.inputs[0][0]))) for o, _ in old.outputs)
                if old.inputs
                else old.body,
            )
        else:
            new = proc_payload(f"swap{rng.randint(0, 9)}", rng.randint(1, 2), rng.randint(1, 2))
        return A.rp_p(aid, name, new)
    # rpT: sometimes a fresh private loop over an existing procedure (payloads
    # may not declare procedures; they reference the agent's knowledge)
    aid = some_agent()
    agent = mam.agents.get(aid)
    if agent is not None and agent.task.procedures and agent.roles and rng.random() < 0.6:
        proc = agent.task.procedures[sorted(agent.task.procedures)[0]]
        if proc.inputs and all(cs == TOK for _, cs in proc.inputs + proc.outputs):
            pid = f"sw_{aid}{rng.randint(0, 9)}"
            tid = f"st_{aid}{rng.randint(0, 9)}"
            arcs = [InputArc(pid, tid, n) for n, _ in proc.inputs]
            arcs += [OutputArc(tid, pid, n) for n, _ in proc.outputs]
            task = Net(
                aid,
                colorsets=[TOK],
                places=[Place(pid, TOK, Multiset([tok(0), tok(1)]))],
                transitions=[Transition(tid, sorted(agent.roles)[0], proc.name)],
                arcs=arcs,
            )
            return A.rp_t(aid, task)
    return A.rp_t(aid, Net(aid, colorsets=[TOK]))


# ---------------------------------------------------------------------------
# random color sets and markings for the codec fuzz


def gen_colorset(rng: random.Random, name: str, depth: int = 0) -> ColorSet:
    kinds = ["int", "text", "enum"] + (["product"] if depth < 2 else [])
    kind = rng.choice(kinds)
    if kind == "enum":
        members = tuple(f"m{j}" for j in range(rng.randint(1, 3)))
        return ColorSet(name, "enum", members=members)
    if kind == "product":
        comps = tuple(
            gen_colorset(rng, f"{name}c{j}", depth + 1) for j in range(rng.randint(2, 3))
        )
        return ColorSet(name, "product", components=comps)
    return ColorSet(name, kind)


def gen_value(rng: random.Random, cs: ColorSet) -> Value:
    if cs.kind == "unit":
        return Value(cs, None)
    if cs.kind == "int":
        return Value(cs, rng.randint(-50, 50))
    if cs.kind == "text":
        alphabet = 'ab"\\\n\tz-'
        return Value(cs, "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 6))))
    if cs.kind == "enum":
        return Value(cs, rng.choice(cs.members))
    return Value(cs, tuple(gen_value(rng, c) for c in cs.components))


def gen_net_and_marking(rng: random.Random):
    n = rng.randint(1, 4)
    places = []
    for i in range(n):
        cs = gen_colorset(rng, f"C{i}")
        places.append(Place(f"p{i}", cs))
    net = Net("codec", colorsets=[p.colorset for p in places], places=places)
    marking = Marking(
        {
            p.id: Multiset([gen_value(rng, p.colorset) for _ in range(rng.randint(0, 4))])
            for p in places
            if rng.random() < 0.8
        }
    )
    return net, marking
