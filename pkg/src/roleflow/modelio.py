"""Text formats for models, scenarios, contexts, traces, and reports.

One lexical convention everywhere ('#' comments, quoted text, identifiers),
line-per-declaration canonical output, and strict round-tripping: parsing
canonical output reproduces the parsed object, and serializing twice is
byte-identical. Canonical net text is also the substrate for structural
equivalence checks, so ordering rules here are load-bearing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Union

from . import adaptation as ops
from .adaptation import AdaptationOp, AdaptationRequest, OP_KINDS
from .cpn import (
    BUILTINS,
    ColorSet,
    Expr,
    InputArc,
    Multiset,
    Net,
    OutputArc,
    Place,
    ProcedureDef,
    ReceiveEvent,
    SendEvent,
    Transition,
    Value,
    Variable,
    quote_text,
)
from .decomposition import AgentModel, Channel, MultiAgentModel
from .errors import (
    FormatError,
    ModelSyntaxError,
    ResolutionError,
    UnknownOp,
    VersionMismatch,
)
from .organization import CommLink, Organization, Role
from .runtime import Context, FinalReport, Scenario, Trigger
from .textscan import TokenStream, parse_descriptor, parse_value, parse_value_text, stream

CONTEXT_HEADER = "CTX1"


@dataclass
class ModelDocument:
    model: Union[Organization, MultiAgentModel]
    locations: dict  # (kind, id) -> (line, col), for diagnostics


# --------------------------------------------------------------------------
# expressions


def render_expr(expr: Expr) -> str:
    if expr.kind == "var":
        return expr.name
    if expr.kind == "lit":
        if expr.value.colorset.kind == "enum":
            return f"{expr.value.colorset.name}.{expr.value.payload}"
        return expr.value.canonical()
    if expr.kind == "tuple":
        return "(" + ",".join(render_expr(a) for a in expr.args) + ")"
    return f"{expr.name}(" + ",".join(render_expr(a) for a in expr.args) + ")"


def parse_expr(
    ts: TokenStream,
    env: Mapping[str, ColorSet],
    colorsets: Mapping[str, ColorSet],
    expected: Optional[ColorSet],
) -> Expr:
    tok = ts.peek()
    if tok.kind == "int":
        ts.next()
        if expected is None or expected.kind != "int":
            raise ModelSyntaxError(tok.line, tok.col, "an integer in an int-colored context")
        return Expr.lit(Value(expected, int(tok.text)))
    if tok.kind == "string":
        ts.next()
        if expected is None or expected.kind != "text":
            raise ModelSyntaxError(tok.line, tok.col, "text in a text-colored context")
        return Expr.lit(Value(expected, tok.text))
    if ts.at("punct", "("):
        ts.next()
        if ts.accept("punct", ")"):
            if expected is None or expected.kind != "unit":
                raise ModelSyntaxError(tok.line, tok.col, "'()' in a unit-colored context")
            return Expr.lit(Value(expected, None))
        if expected is None or expected.kind != "product":
            raise ModelSyntaxError(tok.line, tok.col, "a tuple in a product-colored context")
        args = []
        for i, comp in enumerate(expected.components):
            if i:
                ts.expect("punct", ",")
            args.append(parse_expr(ts, env, colorsets, comp))
        ts.expect("punct", ")")
        return Expr.tup(*args)
    name_tok = ts.expect("ident", what="an expression")
    name = name_tok.text
    if ts.at("punct", "("):
        return _parse_call(ts, name_tok, env, colorsets, expected)
    if ts.at("punct", "."):
        ts.next()
        member = ts.expect("ident", what="an enum member").text
        cs = colorsets.get(name)
        if cs is None:
            raise ResolutionError(name, name_tok.line, name_tok.col)
        if cs.kind != "enum" or member not in cs.members:
            raise ModelSyntaxError(name_tok.line, name_tok.col, f"a member of enum {name}")
        return Expr.lit(Value(cs, member))
    if name in env:
        return Expr.var(name)
    if expected is not None and expected.kind == "enum" and name in expected.members:
        return Expr.lit(Value(expected, name))
    raise ResolutionError(name, name_tok.line, name_tok.col)


def _parse_call(ts, name_tok, env, colorsets, expected) -> Expr:
    name = name_tok.text
    if name not in BUILTINS:
        raise ModelSyntaxError(name_tok.line, name_tok.col, "a builtin function name")
    ts.expect("punct", "(")

    def done():
        ts.expect("punct", ")")

    if name in ("identity", "constOf", "inc"):
        arg = parse_expr(ts, env, colorsets, expected)
        done()
        return Expr.call(name, arg)
    if name == "concat":
        a = parse_expr(ts, env, colorsets, expected)
        ts.expect("punct", ",")
        b = parse_expr(ts, env, colorsets, expected)
        done()
        return Expr.call(name, a, b)
    if name == "addK":
        a = parse_expr(ts, env, colorsets, expected)
        ts.expect("punct", ",")
        k = ts.expect("int", what="an integer constant")
        done()
        if expected is None or expected.kind != "int":
            raise ModelSyntaxError(name_tok.line, name_tok.col, "addK in an int-colored context")
        return Expr.call(name, a, Expr.lit(Value(expected, int(k.text))))
    if name in ("first", "second"):
        arg = parse_expr_inferred(ts, env, colorsets)
        done()
        return Expr.call(name, arg)
    # pairOf
    if expected is None or expected.kind != "product" or len(expected.components) != 2:
        raise ModelSyntaxError(name_tok.line, name_tok.col, "pairOf in a pair-colored context")
    a = parse_expr(ts, env, colorsets, expected.components[0])
    ts.expect("punct", ",")
    b = parse_expr(ts, env, colorsets, expected.components[1])
    done()
    return Expr.call(name, a, b)


def parse_expr_inferred(ts, env, colorsets) -> Expr:
    """Parse where the color must come from the expression itself (vars, projections)."""
    tok = ts.peek()
    if tok.kind == "ident":
        if ts.peek(1).kind == "punct" and ts.peek(1).text == "(":
            name = ts.next().text
            if name in ("first", "second", "identity", "constOf", "inc"):
                ts.expect("punct", "(")
                arg = parse_expr_inferred(ts, env, colorsets)
                ts.expect("punct", ")")
                return Expr.call(name, arg)
            raise ModelSyntaxError(tok.line, tok.col, "an expression with inferable color")
        if ts.peek(1).kind == "punct" and ts.peek(1).text == ".":
            name = ts.next().text
            ts.next()
            member = ts.expect("ident", what="an enum member").text
            cs = colorsets.get(name)
            if cs is None:
                raise ResolutionError(name, tok.line, tok.col)
            if cs.kind != "enum" or member not in cs.members:
                raise ModelSyntaxError(tok.line, tok.col, f"a member of enum {name}")
            return Expr.lit(Value(cs, member))
        name = ts.next().text
        if name in env:
            return Expr.var(name)
        raise ResolutionError(name, tok.line, tok.col)
    raise ModelSyntaxError(tok.line, tok.col, "an expression with inferable color")


# --------------------------------------------------------------------------
# net fragments (shared by organization docs, agent sections, task blocks)

_FRAGMENT_KEYWORDS = ("colorset", "var", "place", "proc", "trans", "in", "out")


class NetBuilder:
    def __init__(self, seed_colorsets: Mapping[str, ColorSet] | None = None, allow_procs=True, allow_events=False):
        self.seed_colorsets = dict(seed_colorsets or {})
        self.colorsets: dict[str, ColorSet] = {}
        self.variables: dict[str, Variable] = {}
        self.places: dict[str, Place] = {}
        self.procedures: dict[str, ProcedureDef] = {}
        self.transitions: dict[str, Transition] = {}
        self.arcs: list = []
        self.current: Optional[str] = None
        self.allow_procs = allow_procs
        self.allow_events = allow_events
        self.locations: dict = {}

    def lookup_colorset(self, tok) -> ColorSet:
        cs = self.colorsets.get(tok.text) or self.seed_colorsets.get(tok.text)
        if cs is None:
            raise ResolutionError(tok.text, tok.line, tok.col)
        return cs

    def colorset_env(self) -> dict[str, ColorSet]:
        env = dict(self.seed_colorsets)
        env.update(self.colorsets)
        return env

    def statement(self, ts: TokenStream) -> bool:
        """Consume one fragment statement; False when the next token is not ours."""
        tok = ts.peek()
        if tok.kind != "ident" or tok.text not in _FRAGMENT_KEYWORDS:
            return False
        keyword = ts.next().text
        getattr(self, f"_stmt_{keyword}")(ts, tok)
        return True

    def _declare(self, kind: str, name_tok, table: dict, item):
        if name_tok.text in table:
            raise ModelSyntaxError(name_tok.line, name_tok.col, f"a fresh {kind} name")
        table[name_tok.text] = item
        self.locations[(kind, name_tok.text)] = (name_tok.line, name_tok.col)

    def _stmt_colorset(self, ts, kw):
        name = ts.expect("ident", what="a color set name")
        ts.expect("punct", "=")
        head = ts.expect("ident", what="a color kind")
        if head.text in ("unit", "int", "text"):
            cs = ColorSet(name.text, head.text)
        elif head.text == "enum":
            ts.expect("punct", "{")
            members = [ts.expect("ident", what="an enum member").text]
            while ts.accept("punct", ","):
                members.append(ts.expect("ident", what="an enum member").text)
            ts.expect("punct", "}")
            cs = ColorSet(name.text, "enum", members=tuple(members))
        elif head.text == "product":
            ts.expect("punct", "(")
            comps = [self.lookup_colorset(ts.expect("ident", what="a color set name"))]
            while ts.accept("punct", ","):
                comps.append(self.lookup_colorset(ts.expect("ident", what="a color set name")))
            ts.expect("punct", ")")
            cs = ColorSet(name.text, "product", components=tuple(comps))
        else:
            ts.fail("one of unit/int/text/enum/product")
        self._declare("colorset", name, self.colorsets, cs)

    def _stmt_var(self, ts, kw):
        name = ts.expect("ident", what="a variable name")
        ts.expect("punct", ":")
        cs = self.lookup_colorset(ts.expect("ident", what="a color set name"))
        self._declare("variable", name, self.variables, Variable(name.text, cs))

    def _stmt_place(self, ts, kw):
        name = ts.expect("ident", what="a place name")
        ts.expect("punct", ":")
        cs = self.lookup_colorset(ts.expect("ident", what="a color set name"))
        initial = Multiset()
        if ts.at("ident", "init"):
            ts.next()
            initial = self._multiset(ts, cs)
        self._declare("place", name, self.places, Place(name.text, cs, initial))

    def _multiset(self, ts, cs) -> Multiset:
        ts.expect("punct", "{")
        values = []
        if not ts.at("punct", "}"):
            values.append(parse_value(ts, cs))
            while ts.accept("punct", ","):
                values.append(parse_value(ts, cs))
        ts.expect("punct", "}")
        return Multiset(values)

    def _params(self, ts) -> tuple:
        ts.expect("punct", "(")
        out = []
        if not ts.at("punct", ")"):
            while True:
                pname = ts.expect("ident", what="a parameter name").text
                ts.expect("punct", ":")
                cs = self.lookup_colorset(ts.expect("ident", what="a color set name"))
                out.append((pname, cs))
                if not ts.accept("punct", ","):
                    break
        ts.expect("punct", ")")
        return tuple(out)

    def _stmt_proc(self, ts, kw):
        if not self.allow_procs:
            raise ModelSyntaxError(kw.line, kw.col, "no procedure declarations in this block")
        name = ts.expect("ident", what="a procedure name")
        proc = self.parse_procedure_tail(ts, name)
        self._declare("procedure", name, self.procedures, proc)

    def parse_procedure_tail(self, ts, name_tok) -> ProcedureDef:
        inputs = self._params(ts)
        ts.expect("arrow")
        outputs = self._params(ts)
        env = dict(inputs)
        if len(env) != len(inputs):
            raise ModelSyntaxError(name_tok.line, name_tok.col, "distinct parameter names")
        ts.expect("punct", "{")
        rules: dict[str, Expr] = {}
        out_colors = dict(outputs)
        while not ts.at("punct", "}"):
            rname_tok = ts.expect("ident", what="an output name")
            if rname_tok.text not in out_colors:
                raise ModelSyntaxError(rname_tok.line, rname_tok.col, "a declared output name")
            if rname_tok.text in rules:
                raise ModelSyntaxError(rname_tok.line, rname_tok.col, "a single rule per output")
            ts.expect("punct", "=")
            rules[rname_tok.text] = parse_expr(ts, env, self.colorset_env(), out_colors[rname_tok.text])
            if not ts.accept("punct", ";"):
                break
        close = ts.expect("punct", "}")
        missing = [r for r, _ in outputs if r not in rules]
        if missing:
            raise ModelSyntaxError(close.line, close.col, f"a rule for output '{missing[0]}'")
        body = tuple((r, rules[r]) for r, _ in outputs)
        return ProcedureDef(name_tok.text, inputs, outputs, body)

    def _expr_env(self, proc: Optional[ProcedureDef], with_outputs=False) -> dict:
        env = {v.name: v.colorset for v in self.variables.values()}
        if proc is not None:
            env.update(dict(proc.inputs))
            if with_outputs:
                env.update(dict(proc.outputs))
        return env

    def _stmt_trans(self, ts, kw):
        name = ts.expect("ident", what="a transition name")
        ts.expect("ident", "role", what="'role'")
        ts.expect("punct", "=")
        role = ts.expect("ident", what="a role name").text
        ts.expect("ident", "proc", what="'proc'")
        ts.expect("punct", "=")
        proc_tok = ts.expect("ident", what="a procedure name")
        proc_name = proc_tok.text
        proc = self.procedures.get(proc_name)
        if proc is None and self.allow_procs:
            # task blocks reference knowledge injected later; here it must exist
            raise ResolutionError(proc_name, proc_tok.line, proc_tok.col)
        guard = None
        event = None
        if ts.at("ident", "guard"):
            ts.next()
            guard = parse_expr(ts, self._expr_env(proc), self.colorset_env(), None)
        if ts.at("ident", "recv") or ts.at("ident", "send"):
            ev_tok = ts.next()
            if not self.allow_events:
                raise ModelSyntaxError(ev_tok.line, ev_tok.col, "no events in this net")
            channel = ts.expect("ident", what="a channel name").text
            if ev_tok.text == "recv":
                var = ts.expect("ident", what="a bound variable name").text
                event = ReceiveEvent(channel, var)
            else:
                ts.expect("punct", "=")
                message = parse_expr(
                    ts, self._expr_env(proc, with_outputs=True), self.colorset_env(), None
                )
                event = SendEvent(channel, message)
        self._declare(
            "transition", name, self.transitions, Transition(name.text, role, proc_name, guard, event)
        )
        self.current = name.text

    def _require_current(self, kw) -> str:
        if self.current is None:
            raise ModelSyntaxError(kw.line, kw.col, "a preceding trans declaration")
        return self.current

    def _stmt_in(self, ts, kw):
        tid = self._require_current(kw)
        place = ts.expect("ident", what="a place name")
        if place.text not in self.places:
            raise ResolutionError(place.text, place.line, place.col)
        ts.expect("punct", ":")
        label = ts.expect("ident", what="a parameter name").text
        self.arcs.append(InputArc(place.text, tid, label))

    def _stmt_out(self, ts, kw):
        tid = self._require_current(kw)
        place = ts.expect("ident", what="a place name")
        if place.text not in self.places:
            raise ResolutionError(place.text, place.line, place.col)
        ts.expect("punct", ":")
        label = ts.expect("ident", what="a result name").text
        self.arcs.append(OutputArc(tid, place.text, label))

    def build(self, net_id: str) -> Net:
        table: dict[str, ColorSet] = {}

        def admit(cs: ColorSet):
            seen = table.get(cs.name)
            if seen is not None and seen != cs:
                raise ResolutionError(cs.name)
            table[cs.name] = cs
            for comp in cs.components:
                admit(comp)

        for cs in self.colorsets.values():
            admit(cs)
        for p in self.places.values():
            admit(p.colorset)
        for v in self.variables.values():
            admit(v.colorset)
        for proc in self.procedures.values():
            for _, cs in proc.inputs + proc.outputs:
                admit(cs)
        return Net(
            net_id,
            colorsets=list(table.values()),
            variables=list(self.variables.values()),
            places=list(self.places.values()),
            transitions=list(self.transitions.values()),
            procedures=list(self.procedures.values()),
            arcs=self.arcs,
        )


# --------------------------------------------------------------------------
# canonical serialization


def _topo_colorsets(colorsets: Mapping[str, ColorSet]) -> list[ColorSet]:
    done: dict[str, ColorSet] = {}
    order: list[ColorSet] = []

    def visit(cs: ColorSet):
        if cs.name in done:
            return
        for comp in cs.components:
            visit(comp)
        done[cs.name] = cs
        order.append(cs)

    for name in sorted(colorsets):
        visit(colorsets[name])
    return order


def _render_colorset_decl(cs: ColorSet) -> str:
    if cs.kind == "enum":
        rhs = "enum{" + ",".join(cs.members) + "}"
    elif cs.kind == "product":
        rhs = "product(" + ",".join(c.name for c in cs.components) + ")"
    else:
        rhs = cs.kind
    return f"colorset {cs.name} = {rhs}"


def _render_multiset(ms: Multiset) -> str:
    return "{ " + ", ".join(v.canonical() for v in ms.values()) + " }"


def _render_proc(proc: ProcedureDef) -> str:
    ins = ",".join(f"{n}:{cs.name}" for n, cs in proc.inputs)
    outs = ",".join(f"{n}:{cs.name}" for n, cs in proc.outputs)
    body = "; ".join(f"{r} = {render_expr(e)}" for r, e in proc.body)
    return f"proc {proc.name}({ins}) -> ({outs}) {{ {body} }}"


def serialize_net_fragment(net: Net) -> list[str]:
    lines: list[str] = []
    for cs in _topo_colorsets(net.colorsets):
        lines.append(_render_colorset_decl(cs))
    for name in sorted(net.variables):
        v = net.variables[name]
        lines.append(f"var {v.name} : {v.colorset.name}")
    for pid in sorted(net.places):
        p = net.places[pid]
        line = f"place {p.id} : {p.colorset.name}"
        if not p.initial.is_empty:
            line += " init " + _render_multiset(p.initial)
        lines.append(line)
    for name in sorted(net.procedures):
        lines.append(_render_proc(net.procedures[name]))
    for tid in sorted(net.transitions):
        t = net.transitions[tid]
        line = f"trans {t.id} role={t.role} proc={t.procedure}"
        if t.guard is not None:
            line += f" guard {render_expr(t.guard)}"
        if isinstance(t.event, ReceiveEvent):
            line += f" recv {t.event.channel} {t.event.var}"
        elif isinstance(t.event, SendEvent):
            line += f" send {t.event.channel} = {render_expr(t.event.message)}"
        lines.append(line)
        for arc in net.input_arcs(tid):
            lines.append(f"in {arc.place} : {arc.label}")
        for arc in net.output_arcs(tid):
            lines.append(f"out {arc.place} : {arc.label}")
    return lines


def canonical_net_text(net: Net) -> str:
    """Canonical rendering with the net id normalized away; equality substrate."""
    return "\n".join(serialize_net_fragment(net)) + "\n"


def serialize_model(model: Union[Organization, MultiAgentModel, ModelDocument]) -> str:
    if isinstance(model, ModelDocument):
        model = model.model
    if isinstance(model, Organization):
        return _serialize_org(model)
    return _serialize_mas(model)


def _serialize_org(org: Organization) -> str:
    lines = [f"org {org.id}", f"objective {quote_text(org.objective)}"]
    for rid in sorted(org.roles):
        lines.append(f"role {rid} {quote_text(org.roles[rid].description)}")
    for link in sorted(org.links, key=lambda l: (l.source, l.target)):
        lines.append(f"comm {link.source} -> {link.target}")
    lines.extend(serialize_net_fragment(org.global_task))
    return "\n".join(lines) + "\n"


def _serialize_mas(mam: MultiAgentModel) -> str:
    lines = [f"mas {mam.organization_ref}"]
    for role in sorted(mam.assignment):
        lines.append(f"assign {role} -> {mam.assignment[role]}")
    for cid in sorted(mam.channels):
        ch = mam.channels[cid]
        line = f"channel {ch.id} : {ch.colorset.descriptor()} from {ch.producer} to {ch.consumer}"
        if ch.initial:
            line += " init { " + ", ".join(v.canonical() for v in ch.initial) + " }"
        lines.append(line)
    for aid in sorted(mam.agents):
        agent = mam.agents[aid]
        lines.append(f"agent {agent.id}")
        for role in sorted(agent.roles):
            lines.append(f"assumes {role}")
        for ch in sorted(agent.sensors):
            lines.append(f"sensor {ch}")
        for ch in sorted(agent.effectors):
            lines.append(f"effector {ch}")
        lines.extend(serialize_net_fragment(agent.task))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# model parsing


def parse_model(text: str) -> ModelDocument:
    ts = stream(text)
    head = ts.peek()
    if ts.at("ident", "org"):
        return _parse_org(ts)
    if ts.at("ident", "mas"):
        return _parse_mas(ts)
    raise ModelSyntaxError(head.line, head.col, "'org' or 'mas'")


def _parse_org(ts: TokenStream) -> ModelDocument:
    ts.expect("ident", "org")
    org_id = ts.expect("ident", what="an organization id").text
    objective = ""
    roles: dict[str, Role] = {}
    links: list[CommLink] = []
    builder = NetBuilder()
    locations: dict = {}

    while not ts.at("eof"):
        tok = ts.peek()
        if ts.at("ident", "objective"):
            ts.next()
            objective = ts.expect("string", what="a quoted objective").text
        elif ts.at("ident", "role"):
            ts.next()
            name = ts.expect("ident", what="a role id")
            desc = ts.accept("string")
            if name.text in roles:
                raise ModelSyntaxError(name.line, name.col, "a fresh role id")
            roles[name.text] = Role(name.text, desc.text if desc else "")
            locations[("role", name.text)] = (name.line, name.col)
        elif ts.at("ident", "comm"):
            ts.next()
            src = ts.expect("ident", what="a role id")
            ts.expect("arrow")
            dst = ts.expect("ident", what="a role id")
            for end in (src, dst):
                if end.text not in roles:
                    raise ResolutionError(end.text, end.line, end.col)
            links.append(CommLink(src.text, dst.text))
        elif builder.statement(ts):
            continue
        else:
            raise ModelSyntaxError(tok.line, tok.col, "an organization declaration")

    net = builder.build(org_id)
    locations.update(builder.locations)
    org = Organization(org_id, objective, roles, links, net)
    return ModelDocument(org, locations)


def _parse_channel_tail(ts, name_tok) -> Channel:
    ts.expect("punct", ":")
    cs = parse_descriptor(ts)
    ts.expect("ident", "from", what="'from'")
    producer = ts.expect("ident", what="an agent id").text
    ts.expect("ident", "to", what="'to'")
    consumer = ts.expect("ident", what="an agent id").text
    initial: tuple[Value, ...] = ()
    if ts.at("ident", "init"):
        ts.next()
        ts.expect("punct", "{")
        values = []
        if not ts.at("punct", "}"):
            values.append(parse_value(ts, cs))
            while ts.accept("punct", ","):
                values.append(parse_value(ts, cs))
        ts.expect("punct", "}")
        initial = tuple(values)
    return Channel(name_tok.text, cs, producer, consumer, initial)


_AGENT_KEYWORDS = ("assumes", "sensor", "effector")


def _parse_agent_section(ts, agent_id: str, seed_colorsets=None) -> AgentModel:
    roles: set[str] = set()
    sensors: set[str] = set()
    effectors: set[str] = set()
    builder = NetBuilder(seed_colorsets, allow_events=True)
    while not ts.at("eof"):
        tok = ts.peek()
        if tok.kind == "ident" and tok.text in _AGENT_KEYWORDS:
            ts.next()
            name = ts.expect("ident", what="an identifier").text
            {"assumes": roles, "sensor": sensors, "effector": effectors}[tok.text].add(name)
        elif tok.kind == "ident" and tok.text in _FRAGMENT_KEYWORDS:
            builder.statement(ts)
        else:
            break
    return AgentModel(
        id=agent_id,
        roles=frozenset(roles),
        sensors=frozenset(sensors),
        effectors=frozenset(effectors),
        task=builder.build(agent_id),
    )


def _parse_mas(ts: TokenStream) -> ModelDocument:
    ts.expect("ident", "mas")
    ref = ts.expect("ident", what="an organization reference").text
    assignment: dict[str, str] = {}
    channels: dict[str, Channel] = {}
    agents: dict[str, AgentModel] = {}
    locations: dict = {}

    while not ts.at("eof"):
        tok = ts.peek()
        if ts.at("ident", "assign"):
            ts.next()
            role = ts.expect("ident", what="a role id").text
            ts.expect("arrow")
            agent = ts.expect("ident", what="an agent id").text
            assignment[role] = agent
        elif ts.at("ident", "channel"):
            ts.next()
            name = ts.expect("ident", what="a channel id")
            if name.text in channels:
                raise ModelSyntaxError(name.line, name.col, "a fresh channel id")
            channels[name.text] = _parse_channel_tail(ts, name)
            locations[("channel", name.text)] = (name.line, name.col)
        elif ts.at("ident", "agent"):
            ts.next()
            name = ts.expect("ident", what="an agent id")
            if name.text in agents:
                raise ModelSyntaxError(name.line, name.col, "a fresh agent id")
            agents[name.text] = _parse_agent_section(ts, name.text)
            locations[("agent", name.text)] = (name.line, name.col)
        else:
            raise ModelSyntaxError(tok.line, tok.col, "a model declaration")

    mam = MultiAgentModel(ref, assignment, agents, channels)
    return ModelDocument(mam, locations)


# --------------------------------------------------------------------------
# scenarios and adaptation operation payloads


@dataclass
class ScenarioDocument:
    assignment: dict
    scenario: Scenario
    colorsets: dict


def parse_scenario(text: str) -> ScenarioDocument:
    ts = stream(text)
    assignment: dict[str, str] = {}
    colorsets: dict[str, ColorSet] = {}
    triggers: list[Trigger] = []
    max_steps = 10_000
    end_condition: tuple = ("quiescence",)
    builder = NetBuilder()

    while not ts.at("eof"):
        tok = ts.peek()
        if ts.at("ident", "assign"):
            ts.next()
            role = ts.expect("ident", what="a role id").text
            ts.expect("arrow")
            agent = ts.expect("ident", what="an agent id").text
            assignment[role] = agent
        elif ts.at("ident", "budget"):
            ts.next()
            n = ts.expect("int", what="a step budget")
            max_steps = int(n.text)
            if max_steps < 1:
                raise ModelSyntaxError(n.line, n.col, "a positive budget")
        elif ts.at("ident", "end"):
            ts.next()
            kind = ts.expect("ident", what="'quiescence' or 'marked'")
            if kind.text == "quiescence":
                end_condition = ("quiescence",)
            elif kind.text == "marked":
                agent = ts.expect("ident", what="an agent id").text
                ts.expect("punct", ".")
                place = ts.expect("ident", what="a place id").text
                end_condition = ("marked", agent, place)
            else:
                raise ModelSyntaxError(kind.line, kind.col, "'quiescence' or 'marked'")
        elif ts.at("ident", "colorset"):
            builder.statement(ts)
            colorsets = builder.colorset_env()
        elif ts.at("ident", "at"):
            ts.next()
            step_tok = ts.expect("int", what="a step number")
            at_step = int(step_tok.text)
            if triggers and at_step <= triggers[-1].at_step:
                raise ModelSyntaxError(step_tok.line, step_tok.col, "an increasing trigger step (non-increasing step)")
            ts.expect("ident", "adapt", what="'adapt'")
            ts.expect("punct", "{")
            op_list = _parse_ops(ts, builder.colorset_env())
            ts.expect("punct", "}")
            triggers.append(
                Trigger(at_step, AdaptationRequest(tuple(op_list), reason=f"trigger at {at_step}"))
            )
        else:
            raise ModelSyntaxError(tok.line, tok.col, "a scenario declaration")

    scenario = Scenario(tuple(triggers), max_steps, end_condition)
    return ScenarioDocument(assignment, scenario, builder.colorset_env())


def _parse_ops(ts: TokenStream, colorsets: Mapping[str, ColorSet]) -> list[AdaptationOp]:
    out = []
    while not ts.at("punct", "}") and not ts.at("eof"):
        out.append(_parse_one_op(ts, colorsets))
        ts.accept("punct", ";")
    return out


def parse_ops_text(text: str, model: MultiAgentModel) -> list[AdaptationOp]:
    """Parse adaptation operations against a live model's color environment."""
    colorsets: dict[str, ColorSet] = {}
    for aid in sorted(model.agents):
        for name, cs in model.agents[aid].task.colorsets.items():
            colorsets.setdefault(name, cs)
    for cid in sorted(model.channels):
        colorsets.setdefault(model.channels[cid].colorset.name, model.channels[cid].colorset)
    ts = stream(text)
    op_list = _parse_ops(ts, colorsets)
    ts.expect("eof", what="end of the request")
    return op_list


def _parse_one_op(ts: TokenStream, colorsets) -> AdaptationOp:
    tok = ts.peek()
    if tok.kind != "ident":
        raise ModelSyntaxError(tok.line, tok.col, "an operation keyword")
    if tok.text not in OP_KINDS:
        raise UnknownOp(f"unknown operation keyword '{tok.text}' ({tok.line}:{tok.col})")
    kind = ts.next().text

    def ident(what):
        return ts.expect("ident", what=what).text

    if kind == "aCom":
        name = ts.expect("ident", what="a channel id")
        return ops.a_com(_parse_channel_tail(ts, name))
    if kind == "rCom":
        return ops.r_com(ident("a channel id"))
    if kind == "rpCom":
        old = ident("a channel id")
        ts.expect("ident", "channel", what="'channel'")
        name = ts.expect("ident", what="a channel id")
        return ops.rp_com(old, _parse_channel_tail(ts, name))
    if kind in ("aSn", "rSn", "aEf", "rEf"):
        agent = ident("an agent id")
        channel = ident("a channel id")
        fn = {"aSn": ops.a_sn, "rSn": ops.r_sn, "aEf": ops.a_ef, "rEf": ops.r_ef}[kind]
        return fn(agent, channel)
    if kind in ("rpSn", "rpEf"):
        agent = ident("an agent id")
        old = ident("a channel id")
        new = ident("a channel id")
        return (ops.rp_sn if kind == "rpSn" else ops.rp_ef)(agent, old, new)
    if kind == "aP" or kind == "rpP":
        agent = ident("an agent id")
        old = ident("a procedure name") if kind == "rpP" else ""
        ts.expect("ident", "proc", what="'proc'")
        name = ts.expect("ident", what="a procedure name")
        helper = NetBuilder(colorsets)
        proc = helper.parse_procedure_tail(ts, name)
        return ops.a_p(agent, proc) if kind == "aP" else ops.rp_p(agent, old, proc)
    if kind == "rP":
        agent = ident("an agent id")
        return ops.r_p(agent, ident("a procedure name"))
    if kind == "rpT":
        agent = ident("an agent id")
        ts.expect("ident", "task", what="'task'")
        ts.expect("punct", "{")
        builder = NetBuilder(colorsets, allow_procs=False, allow_events=True)
        while builder.statement(ts):
            pass
        ts.expect("punct", "}")
        return ops.rp_t(agent, builder.build(agent))
    if kind == "addAgent":
        name = ts.expect("ident", what="an agent id")
        ts.expect("punct", "{")
        agent = _parse_agent_section(ts, name.text, seed_colorsets=colorsets)
        ts.expect("punct", "}")
        return ops.add_agent(agent)
    if kind == "removeAgent":
        return ops.remove_agent(ident("an agent id"))
    # modifyAgent
    agent = ident("an agent id")
    ts.expect("punct", "{")
    nested = _parse_ops(ts, colorsets)
    ts.expect("punct", "}")
    return ops.modify_agent(agent, nested)


# --------------------------------------------------------------------------
# context codec


def write_context(context: Context) -> bytes:
    lines = [CONTEXT_HEADER, f"cursor {context.cursor}", f"steps {context.step_count}"]
    channel_colors: dict[str, str] = {}
    for _, mailbox in context.agent_mailboxes:
        for ch, v in mailbox:
            channel_colors.setdefault(ch, v.colorset.descriptor())
    for ch, v in context.bus:
        channel_colors.setdefault(ch, v.colorset.descriptor())
    for ch in sorted(channel_colors):
        lines.append(f"channel {ch} : {channel_colors[ch]}")
    mailboxes = dict(context.agent_mailboxes)
    for aid, marking_bytes in context.agent_markings:
        lines.append(f"agent {aid}")
        lines.append("marking-begin")
        text = marking_bytes.decode("utf-8")
        lines.extend(ln for ln in text.split("\n") if ln)
        lines.append("marking-end")
        for ch, v in mailboxes.get(aid, ()):
            lines.append(f"mail {ch} {v.canonical()}")
    for ch, v in context.bus:
        lines.append(f"bus {ch} {v.canonical()}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_context(data: bytes) -> Context:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"context bytes are not UTF-8: {exc}") from exc
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        raise FormatError("empty context data")
    if lines[0] != CONTEXT_HEADER:
        if lines[0].startswith("CTX"):
            raise VersionMismatch(f"unsupported context version '{lines[0]}'")
        raise FormatError("missing context header")

    cursor: Optional[int] = None
    steps: Optional[int] = None
    channel_colors: dict[str, ColorSet] = {}
    markings: list = []
    mailboxes: list = []
    bus: list = []
    current_agent: Optional[str] = None
    in_marking = False
    marking_lines: list[str] = []

    def parse_msg(rest: str, what: str):
        ch, _, value_text = rest.partition(" ")
        cs = channel_colors.get(ch)
        if cs is None:
            raise FormatError(f"{what} on channel '{ch}' without a declared color")
        try:
            return ch, parse_value_text(value_text, cs)
        except Exception as exc:
            raise FormatError(f"bad {what} value: {exc}") from exc

    for ln in lines[1:]:
        if in_marking:
            if ln == "marking-end":
                in_marking = False
                markings.append(
                    (current_agent, ("\n".join(marking_lines) + "\n").encode("utf-8"))
                )
            else:
                marking_lines.append(ln)
            continue
        head, _, rest = ln.partition(" ")
        if head == "cursor":
            cursor = _int_field(rest, "cursor")
        elif head == "steps":
            steps = _int_field(rest, "steps")
        elif head == "channel":
            ch, _, descriptor = rest.partition(" : ")
            try:
                channel_colors[ch.strip()] = _descriptor(descriptor.strip())
            except Exception as exc:
                raise FormatError(f"bad channel descriptor: {exc}") from exc
        elif head == "agent":
            current_agent = rest.strip()
            if not current_agent:
                raise FormatError("agent line without an id")
            mailboxes.append((current_agent, []))
        elif head == "marking-begin":
            if current_agent is None:
                raise FormatError("marking outside an agent section")
            marking_lines = []
            in_marking = True
        elif head == "mail":
            if current_agent is None or not mailboxes:
                raise FormatError("mail line outside an agent section")
            mailboxes[-1][1].append(parse_msg(rest, "mail"))
        elif head == "bus":
            bus.append(parse_msg(rest, "bus"))
        else:
            raise FormatError(f"unexpected context line: {ln!r}")
    if in_marking:
        raise FormatError("unterminated marking section")
    if cursor is None or steps is None:
        raise FormatError("context missing cursor or steps")
    return Context(
        version=CONTEXT_HEADER,
        agent_markings=tuple(markings),
        agent_mailboxes=tuple((aid, tuple(mb)) for aid, mb in mailboxes),
        bus=tuple(bus),
        cursor=cursor,
        step_count=steps,
    )


def _int_field(text: str, what: str) -> int:
    try:
        return int(text.strip())
    except ValueError as exc:
        raise FormatError(f"bad {what} value {text!r}") from exc


def _descriptor(text: str) -> ColorSet:
    from .textscan import parse_descriptor_text

    return parse_descriptor_text(text)


# --------------------------------------------------------------------------
# traces and reports


def render_trace(entries) -> str:
    return "".join(e.render() + "\n" for e in entries)


def render_report(report: FinalReport) -> str:
    lines = [
        f"end {report.end_reason}",
        f"steps {report.steps}",
        f"adaptations {len(report.adaptations)}",
    ]
    for aid in sorted(report.final_markings):
        lines.append(f"agent {aid}")
        marking = report.final_markings[aid]
        for pid in marking.place_ids():
            lines.append(f"place {pid} " + _render_multiset(marking.get(pid)))
        for ch, v in report.final_mailboxes.get(aid, ()):
            lines.append(f"mail {ch} {v.canonical()}")
    for w in report.warnings:
        lines.append(f"warning {w}")
    return "\n".join(lines) + "\n"
