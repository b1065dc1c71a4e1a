"""Splitting a global task into per-agent tasks and joining them back.

Role attribution turns each cross-agent place into an asynchronous FIFO
channel: the writing transition gains a send event, the reading transition
gains a receive event, and both drop the shared arc. The inverse rebuilds
one net by re-materializing every channel as a shared place, which is what
the structural equivalence check rides on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .cpn import (
    ColorSet,
    Expr,
    InputArc,
    Marking,
    Multiset,
    Net,
    OutputArc,
    Place,
    ProcedureDef,
    ReceiveEvent,
    SendEvent,
    Transition,
    Value,
    analyze_expr,
    type_check_net,
)
from .errors import (
    CoherenceError,
    IncoherentOrganization,
    InconsistentChannels,
    InvalidModel,
    PartialAssignment,
    ValidationReport,
    Violation,
    report_of,
)
from .organization import Organization, validate_organization

RoleAssignment = Mapping[str, str]


@dataclass(frozen=True)
class Channel:
    """A derived communication means; id matches the global place it replaced."""

    id: str
    colorset: ColorSet
    producer: str
    consumer: str
    initial: tuple[Value, ...] = ()


@dataclass(frozen=True)
class AgentModel:
    """One agent: roles held, channel capabilities, and an event-annotated task net.

    The agent's procedure knowledge is the task net's procedure table.
    """

    id: str
    roles: frozenset[str]
    sensors: frozenset[str]
    effectors: frozenset[str]
    task: Net

    @property
    def procedures(self) -> dict[str, ProcedureDef]:
        return self.task.procedures


@dataclass
class MultiAgentModel:
    organization_ref: str
    assignment: dict[str, str]
    agents: dict[str, AgentModel]
    channels: dict[str, Channel]

    def __init__(self, organization_ref, assignment, agents, channels):
        self.organization_ref = organization_ref
        self.assignment = dict(assignment)
        self.agents = (
            {a.id: a for a in agents} if not isinstance(agents, dict) else dict(agents)
        )
        self.channels = (
            {c.id: c for c in channels} if not isinstance(channels, dict) else dict(channels)
        )

    def agent_ids(self) -> list[str]:
        return sorted(self.agents)

    def __eq__(self, other):
        if not isinstance(other, MultiAgentModel):
            return NotImplemented
        return (
            self.organization_ref == other.organization_ref
            and self.assignment == other.assignment
            and self.agents == other.agents
            and self.channels == other.channels
        )


def decompose(org: Organization, assignment: RoleAssignment) -> MultiAgentModel:
    """Derive a multi-agent model from an organization under a total role assignment."""
    report = validate_organization(org)
    if not report.empty:
        raise IncoherentOrganization("organization fails validation", report)
    missing = sorted(set(org.roles) - set(assignment))
    if missing:
        raise PartialAssignment(f"roles without an agent: {missing}")

    net = org.global_task
    agent_ids = sorted(set(assignment.values()))
    agent_of = {tid: assignment[t.role] for tid, t in net.transitions.items()}

    writers: dict[str, set[str]] = {pid: set() for pid in net.places}
    readers: dict[str, set[str]] = {pid: set() for pid in net.places}
    for arc in net.arcs:
        if isinstance(arc, OutputArc):
            writers[arc.place].add(agent_of[arc.transition])
        else:
            readers[arc.place].add(agent_of[arc.transition])

    place_owner: dict[str, str] = {}
    channels: dict[str, Channel] = {}
    for pid in sorted(net.places):
        adjacent = writers[pid] | readers[pid]
        if len(adjacent) <= 1:
            # isolated places go to the first agent so nothing is dropped
            place_owner[pid] = next(iter(adjacent)) if adjacent else agent_ids[0]
            continue
        if len(writers[pid]) != 1:
            raise IncoherentOrganization(
                f"place {pid} is written by several agents; no single producer"
            )
        if len(readers[pid]) != 1:
            raise IncoherentOrganization(
                f"place {pid} is read by several agents; no single consumer"
            )
        place = net.places[pid]
        channels[pid] = Channel(
            id=pid,
            colorset=place.colorset,
            producer=next(iter(writers[pid])),
            consumer=next(iter(readers[pid])),
            initial=tuple(place.initial.values()),
        )

    for tid in sorted(net.transitions):
        touched = [a.place for a in net.input_arcs(tid) if a.place in channels]
        touched += [a.place for a in net.output_arcs(tid) if a.place in channels]
        if len(touched) > 1:
            raise IncoherentOrganization(
                f"transition {tid} would need {len(touched)} message events; only one is supported"
            )

    agents: dict[str, AgentModel] = {}
    for aid in agent_ids:
        own_tids = sorted(t for t in net.transitions if agent_of[t] == aid)
        own_places = [net.places[p] for p in sorted(net.places) if place_owner.get(p) == aid]
        transitions = []
        arcs = []
        sensors: set[str] = set()
        effectors: set[str] = set()
        proc_names: set[str] = set()
        for tid in own_tids:
            t = net.transitions[tid]
            proc_names.add(t.procedure)
            event = None
            for arc in net.input_arcs(tid):
                if arc.place in channels:
                    event = ReceiveEvent(arc.place, arc.label)
                    sensors.add(arc.place)
                else:
                    arcs.append(arc)
            for arc in net.output_arcs(tid):
                if arc.place in channels:
                    event = SendEvent(arc.place, Expr.var(arc.label))
                    effectors.add(arc.place)
                else:
                    arcs.append(arc)
            transitions.append(
                Transition(t.id, t.role, t.procedure, guard=t.guard, event=event)
            )
        task = Net(
            aid,
            colorsets=list(net.colorsets.values()),
            variables=list(net.variables.values()),
            places=own_places,
            transitions=transitions,
            procedures=[net.procedures[p] for p in sorted(proc_names)],
            arcs=arcs,
        )
        roles = frozenset(r for r, a in assignment.items() if a == aid)
        agents[aid] = AgentModel(
            id=aid,
            roles=roles,
            sensors=frozenset(sensors),
            effectors=frozenset(effectors),
            task=task,
        )
    return MultiAgentModel(org.id, dict(assignment), agents, channels)


def recompose(mam: MultiAgentModel) -> Net:
    """Union of the agent tasks with every channel re-materialized as a shared place."""
    colorsets: dict[str, object] = {}
    variables: dict[str, object] = {}
    places: dict[str, Place] = {}
    transitions: dict[str, Transition] = {}
    procedures: dict[str, ProcedureDef] = {}
    arcs: list = []

    def merge(table: dict, key: str, value, what: str):
        if key in table:
            if table[key] != value:
                raise InconsistentChannels(f"conflicting {what} '{key}' across agents")
        else:
            table[key] = value

    for aid in mam.agent_ids():
        task = mam.agents[aid].task
        for cs in task.colorsets.values():
            merge(colorsets, cs.name, cs, "color set")
        for var in task.variables.values():
            merge(variables, var.name, var, "variable")
        for place in task.places.values():
            if place.id in places:
                raise InconsistentChannels(f"place '{place.id}' owned by two agents")
            places[place.id] = place
        for proc in task.procedures.values():
            merge(procedures, proc.name, proc, "procedure")
        for t in task.transitions.values():
            if t.id in transitions:
                raise InconsistentChannels(f"transition '{t.id}' owned by two agents")
        arcs.extend(task.arcs)

        for t in sorted(task.transitions.values(), key=lambda t: t.id):
            event = t.event
            if isinstance(event, SendEvent):
                if event.channel not in mam.channels:
                    raise InconsistentChannels(
                        f"transition {t.id} sends on undeclared channel '{event.channel}'"
                    )
                if event.message.kind != "var":
                    raise InconsistentChannels(
                        f"send of {t.id} cannot be re-materialized as an arc"
                    )
                arcs.append(OutputArc(t.id, event.channel, event.message.name))
            elif isinstance(event, ReceiveEvent):
                if event.channel not in mam.channels:
                    raise InconsistentChannels(
                        f"transition {t.id} receives on undeclared channel '{event.channel}'"
                    )
                arcs.append(InputArc(event.channel, t.id, event.var))
            transitions[t.id] = Transition(t.id, t.role, t.procedure, guard=t.guard, event=None)

    for cid in sorted(mam.channels):
        ch = mam.channels[cid]
        if cid in places:
            raise InconsistentChannels(f"channel '{cid}' collides with a private place")
        merge(colorsets, ch.colorset.name, ch.colorset, "color set")
        places[cid] = Place(cid, ch.colorset, Multiset(ch.initial))

    return Net(
        mam.organization_ref,
        colorsets=list(colorsets.values()),
        variables=list(variables.values()),
        places=list(places.values()),
        transitions=list(transitions.values()),
        procedures=list(procedures.values()),
        arcs=arcs,
    )


def check_equivalence(global_task: Net, recomposed: Net) -> bool:
    """Structural identity after normalizing the derived net id."""
    from .modelio import canonical_net_text

    return canonical_net_text(global_task) == canonical_net_text(recomposed)


def project_marking(
    global_marking: Marking, mam: MultiAgentModel
) -> tuple[dict[str, Marking], dict[str, tuple[Value, ...]]]:
    """Route a global marking to per-agent markings and per-channel mailbox contents."""
    place_agent: dict[str, str] = {}
    for aid in mam.agent_ids():
        for pid in mam.agents[aid].task.places:
            place_agent[pid] = aid

    per_agent: dict[str, dict[str, Multiset]] = {aid: {} for aid in mam.agent_ids()}
    per_channel: dict[str, tuple[Value, ...]] = {cid: () for cid in sorted(mam.channels)}
    for pid in global_marking.place_ids():
        tokens = global_marking.get(pid)
        if pid in mam.channels:
            per_channel[pid] = tuple(tokens.values())
        elif pid in place_agent:
            per_agent[place_agent[pid]][pid] = tokens
        else:
            raise InvalidModel(f"marking names place '{pid}' unknown to the model")
    return ({aid: Marking(ms) for aid, ms in per_agent.items()}, per_channel)


def marking_compatible(old_task: Net, new_task: Net) -> bool:
    """Whether any marking of the old task can be restored into the new task."""
    for pid, place in old_task.places.items():
        other = new_task.places.get(pid)
        if other is None or other.colorset.descriptor() != place.colorset.descriptor():
            return False
    return True


def validate_model(mam: MultiAgentModel) -> ValidationReport:
    """Full coherence check of a multi-agent model."""
    out: list[Violation] = []

    for cid in sorted(mam.channels):
        ch = mam.channels[cid]
        if ch.id != cid:
            out.append(Violation("channel", cid, "channel keyed under a different id"))
        if ch.producer == ch.consumer:
            out.append(Violation("channel", cid, "producer and consumer must differ"))
        for end in (ch.producer, ch.consumer):
            if end not in mam.agents:
                out.append(Violation("channel", cid, f"endpoint '{end}' is not an agent"))
        for v in ch.initial:
            if v.colorset != ch.colorset:
                out.append(Violation("channel", cid, "initial message does not conform"))
                break

    place_owner: dict[str, str] = {}
    transition_owner: dict[str, str] = {}
    proc_table: dict[str, tuple[str, ProcedureDef]] = {}
    color_table: dict[str, tuple[str, object]] = {}
    var_table: dict[str, tuple[str, object]] = {}

    for aid in mam.agent_ids():
        agent = mam.agents[aid]
        if agent.id != aid:
            out.append(Violation("agent", aid, "agent keyed under a different id"))
        task = agent.task
        out.extend(type_check_net(task).entries)

        for pid in sorted(task.places):
            if pid in place_owner:
                out.append(Violation("place", pid, f"also owned by agent {place_owner[pid]}"))
            elif pid in mam.channels:
                out.append(Violation("place", pid, "private place shadows a channel"))
            else:
                place_owner[pid] = aid
        for tid in sorted(task.transitions):
            if tid in transition_owner:
                out.append(Violation("transition", tid, f"also owned by agent {transition_owner[tid]}"))
            else:
                transition_owner[tid] = aid
        for name in sorted(task.procedures):
            seen = proc_table.get(name)
            if seen and seen[1] != task.procedures[name]:
                out.append(Violation("procedure", name, f"conflicting definitions ({seen[0]}, {aid})"))
            proc_table.setdefault(name, (aid, task.procedures[name]))
        for name in sorted(task.colorsets):
            seen = color_table.get(name)
            if seen and seen[1] != task.colorsets[name]:
                out.append(Violation("colorset", name, f"conflicting definitions ({seen[0]}, {aid})"))
            color_table.setdefault(name, (aid, task.colorsets[name]))
        for name in sorted(task.variables):
            seen = var_table.get(name)
            if seen and seen[1] != task.variables[name]:
                out.append(Violation("variable", name, f"conflicting definitions ({seen[0]}, {aid})"))
            var_table.setdefault(name, (aid, task.variables[name]))

        for ch in sorted(agent.sensors):
            if ch not in mam.channels:
                out.append(Violation("sensor", aid, f"sensor on unknown channel '{ch}'"))
            elif mam.channels[ch].consumer != aid:
                out.append(Violation("sensor", aid, f"sensor on channel '{ch}' consumed elsewhere"))
        for ch in sorted(agent.effectors):
            if ch not in mam.channels:
                out.append(Violation("effector", aid, f"effector on unknown channel '{ch}'"))
            elif mam.channels[ch].producer != aid:
                out.append(Violation("effector", aid, f"effector on channel '{ch}' produced elsewhere"))

        for tid in sorted(task.transitions):
            t = task.transitions[tid]
            if t.role not in agent.roles:
                out.append(Violation("role", tid, f"role '{t.role}' not held by agent {aid}"))
            proc = task.procedures.get(t.procedure)
            if isinstance(t.event, ReceiveEvent):
                ch = mam.channels.get(t.event.channel)
                if t.event.channel not in agent.sensors:
                    out.append(Violation("event", tid, f"receive on '{t.event.channel}' without a sensor"))
                if ch and proc:
                    params = dict(proc.inputs)
                    got = params.get(t.event.var)
                    if got is not None and got != ch.colorset:
                        out.append(Violation("event", tid, "received message color does not match parameter"))
            elif isinstance(t.event, SendEvent):
                ch = mam.channels.get(t.event.channel)
                if t.event.channel not in agent.effectors:
                    out.append(Violation("event", tid, f"send on '{t.event.channel}' without an effector"))
                if ch and proc:
                    env = dict(proc.inputs)
                    env.update(dict(proc.outputs))
                    for p in analyze_expr(t.event.message, ch.colorset, env)[0]:
                        out.append(Violation("event", tid, f"send message: {p}"))
    return report_of(out)


def synthesize(mam: MultiAgentModel):
    """Build a runnable system: fresh markings, channel-preloaded mailboxes."""
    report = validate_model(mam)
    if not report.empty:
        raise CoherenceError("model fails validation", report)
    from . import runtime

    return runtime.RunnableSystem.fresh(mam)
