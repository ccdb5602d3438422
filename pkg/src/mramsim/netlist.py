"""Minimal SPICE-dialect netlist parser and hierarchy flattener.

Grammar (one element or directive per line, first character selects kind)::

    * comment
    Rname n1 n2 <value>
    Cname n1 n2 <value> [ic=<volts>]
    Mname nd ng ns nb <nmos|pmos> W=<m> L=<m> [vth0= kp= lambda= cov=]
    Jname n1 n2 state=<P|AP> area=<m2> tox=<m> [ra= tmr= beta= jc0= tox0=]
    Vname n+ n- DC <v>
    Vname n+ n- PWL(t1 v1 t2 v2 ...)
    Xname n1 n2 ... subcktname
    .subckt name p1 p2 ... / .ends
    .param name=value
    .tran <step> <stop>
    .global n1 ...
    .end

Numbers accept the suffixes f p n u m k meg; a trailing ``2`` after a suffix
squares it (``1600n2`` is 1600 nm^2).  Node names are case-insensitive and
``gnd`` is an alias of ``0``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .devices import (DEFAULT_BETA, DEFAULT_JC0, DEFAULT_MOS, NOMINAL_RA_P, NOMINAL_TMR,
                      NOMINAL_TOX, MosParams, MtjParams, MtjState, Waveform)

GROUND = "0"

SUFFIXES = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "m": 1e-3, "k": 1e3, "meg": 1e6}

_NUMBER = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|[fpnumk])?(2)?$", re.IGNORECASE)

KIND_BY_LETTER = {"r": "resistor", "c": "capacitor", "m": "mosfet", "j": "mtj",
                  "v": "vsource", "x": "instance"}
LETTER_BY_KIND = {v: k.upper() for k, v in KIND_BY_LETTER.items()}
NODE_COUNT = {"resistor": 2, "capacitor": 2, "mosfet": 4, "mtj": 2, "vsource": 2}

# accepted optional keyword parameters per kind (lower case)
KEYWORDS = {
    "resistor": set(),
    "capacitor": {"ic"},
    "mosfet": {"w", "l", "vth0", "kp", "lambda", "cov"},
    "mtj": {"state", "area", "tox", "ra", "tmr", "beta", "jc0", "tox0"},
    "vsource": set(),
    "instance": set(),
}


class NetlistError(ValueError):
    """Parse or elaboration error, optionally tied to a source line."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class ElementLine:
    kind: str
    name: str
    nodes: Tuple[str, ...]
    params: Dict[str, object] = field(default_factory=dict)
    line: Optional[int] = field(default=None, compare=False)


@dataclass
class Subckt:
    name: str
    ports: Tuple[str, ...]
    elements: List[ElementLine] = field(default_factory=list)


@dataclass
class AnalysisDirective:
    kind: str
    args: Tuple[float, ...]


@dataclass
class Netlist:
    title: str = ""
    elements: List[ElementLine] = field(default_factory=list)
    subcircuits: Dict[str, Subckt] = field(default_factory=dict)
    params: Dict[str, float] = field(default_factory=dict)
    analyses: List[AnalysisDirective] = field(default_factory=list)
    globals: Tuple[str, ...] = ()

    def tran(self) -> Optional[Tuple[float, float]]:
        for a in self.analyses:
            if a.kind == "tran":
                return a.args[0], a.args[1]
        return None


def parse_value(token: str, line: Optional[int] = None) -> float:
    m = _NUMBER.match(token.strip())
    if not m:
        raise NetlistError(f"malformed number {token!r}", line)
    mantissa, suffix, squared = m.groups()
    value = float(mantissa)
    if suffix:
        scale = SUFFIXES[suffix.lower()]
        value *= scale * scale if squared else scale
    elif squared:
        raise NetlistError(f"malformed number {token!r}", line)
    if not math.isfinite(value):
        raise NetlistError(f"non-finite number {token!r}", line)
    return value


def format_value(value: float) -> str:
    return repr(float(value))


def node_name(token: str) -> str:
    n = token.lower()
    return GROUND if n in ("0", "gnd") else n


def _split_keywords(tokens: Sequence[str], line: int) -> Tuple[List[str], Dict[str, str]]:
    positional, keywords = [], {}
    for tok in tokens:
        if "=" in tok:
            key, _, val = tok.partition("=")
            key = key.lower()
            if not key or not val:
                raise NetlistError(f"malformed parameter {tok!r}", line)
            if key in keywords:
                raise NetlistError(f"parameter {key!r} given twice", line)
            keywords[key] = val
        else:
            positional.append(tok)
    return positional, keywords


def _positive(value: float, what: str, line: int) -> float:
    if not value > 0:
        raise NetlistError(f"non-positive {what} {value!r}", line)
    return value


def _parse_vsource(name: str, rest: str, line: int) -> ElementLine:
    m = re.match(r"^(\S+)\s+(\S+)\s+(.*)$", rest)
    if not m:
        raise NetlistError("vsource needs two nodes and a value", line)
    n1, n2, spec = m.groups()
    spec = spec.strip()
    pwl = re.match(r"^pwl\s*\((.*)\)$", spec, re.IGNORECASE)
    if pwl:
        nums = [parse_value(t, line) for t in pwl.group(1).replace(",", " ").split()]
        if not nums or len(nums) % 2:
            raise NetlistError("PWL needs time/value pairs", line)
        pts = tuple(zip(nums[0::2], nums[1::2]))
        try:
            Waveform(pts)
        except ValueError as exc:
            raise NetlistError(str(exc), line) from None
        params: Dict[str, object] = {"pwl": pts}
    else:
        toks = spec.split()
        if len(toks) != 2 or toks[0].lower() != "dc":
            raise NetlistError("vsource value must be 'DC <v>' or 'PWL(...)'", line)
        params = {"dc": parse_value(toks[1], line)}
    return ElementLine("vsource", name, (node_name(n1), node_name(n2)), params, line)


def _parse_element(tokens: List[str], raw: str, line: int) -> ElementLine:
    name = tokens[0]
    kind = KIND_BY_LETTER.get(name[0].lower())
    if kind is None:
        raise NetlistError(f"unknown device kind {name[0]!r} in {name!r}", line)
    if kind == "vsource":
        rest = raw.strip()[len(name):].strip()
        return _parse_vsource(name, rest, line)
    positional, keywords = _split_keywords(tokens[1:], line)
    unknown = set(keywords) - KEYWORDS[kind]
    if unknown:
        raise NetlistError(f"unknown parameter(s) {sorted(unknown)} for {kind} {name}", line)

    if kind == "instance":
        if len(positional) < 2:
            raise NetlistError("instance needs at least one node and a subcircuit name", line)
        return ElementLine(kind, name, tuple(node_name(n) for n in positional[:-1]),
                           {"subckt": positional[-1].lower()}, line)

    count = NODE_COUNT[kind]
    if len(positional) < count:
        raise NetlistError(f"{kind} {name} needs {count} nodes", line)
    nodes = tuple(node_name(n) for n in positional[:count])
    extra = positional[count:]
    params: Dict[str, object] = {}
    if kind in ("resistor", "capacitor"):
        if len(extra) != 1:
            raise NetlistError(f"{kind} {name} needs exactly one value", line)
        what = "resistance" if kind == "resistor" else "capacitance"
        params["value"] = _positive(parse_value(extra[0], line), what, line)
        if "ic" in keywords:
            params["ic"] = parse_value(keywords["ic"], line)
    elif kind == "mosfet":
        if len(extra) != 1 or extra[0].lower() not in ("nmos", "pmos"):
            raise NetlistError(f"mosfet {name} needs a model nmos|pmos", line)
        params["model"] = extra[0].lower()
        for key in ("w", "l"):
            if key not in keywords:
                raise NetlistError(f"mosfet {name} missing {key.upper()}=", line)
        for key, val in keywords.items():
            v = parse_value(val, line)
            if key in ("w", "l", "kp"):
                _positive(v, f"mosfet {key}", line)
            elif key in ("lambda", "cov") and v < 0:
                raise NetlistError(f"negative mosfet {key}", line)
            params[key] = v
    elif kind == "mtj":
        if extra:
            raise NetlistError(f"unexpected tokens {extra} for mtj {name}", line)
        state = keywords.get("state", "").upper()
        if state not in ("P", "AP"):
            raise NetlistError(f"mtj {name} needs state=P|AP", line)
        params["state"] = state
        for key in ("area", "tox"):
            if key not in keywords:
                raise NetlistError(f"mtj {name} missing {key}=", line)
        for key, val in keywords.items():
            if key == "state":
                continue
            params[key] = _positive(parse_value(val, line), f"mtj {key}", line)
    return ElementLine(kind, name, nodes, params, line)


def parse_netlist(text: str) -> Netlist:
    """Parse netlist source into a :class:`Netlist`.

    The first line is the title unless it parses as an element or directive
    (a leading comment line is also accepted as the title).
    """
    net = Netlist()
    scope: List[ElementLine] = net.elements
    current: Optional[Subckt] = None
    seen: Dict[str, set] = {"": set()}
    globals_: List[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("*"):
            if lineno == 1:
                net.title = stripped[1:].strip()
            continue
        tokens = stripped.split()
        head = tokens[0].lower()
        if head.startswith("."):
            if head == ".subckt":
                if current is not None:
                    raise NetlistError("nested .subckt definitions are not supported", lineno)
                if len(tokens) < 2:
                    raise NetlistError(".subckt needs a name", lineno)
                name = tokens[1].lower()
                if name in net.subcircuits:
                    raise NetlistError(f"subcircuit {name!r} defined twice", lineno)
                current = Subckt(name, tuple(node_name(p) for p in tokens[2:]))
                net.subcircuits[name] = current
                scope = current.elements
                seen[name] = set()
            elif head == ".ends":
                if current is None:
                    raise NetlistError(".ends without .subckt", lineno)
                current, scope = None, net.elements
            elif head == ".param":
                body = stripped[len(tokens[0]):].replace(" =", "=").replace("= ", "=")
                for tok in body.split():
                    key, eq, val = tok.partition("=")
                    if not eq or not key:
                        raise NetlistError(f"malformed .param {tok!r}", lineno)
                    net.params[key.lower()] = parse_value(val, lineno)
            elif head == ".tran":
                if len(tokens) != 3:
                    raise NetlistError(".tran needs <step> <stop>", lineno)
                step, stop = (parse_value(t, lineno) for t in tokens[1:])
                if not (0 < step < stop):
                    raise NetlistError(".tran needs 0 < step < stop", lineno)
                net.analyses.append(AnalysisDirective("tran", (step, stop)))
            elif head == ".global":
                globals_.extend(node_name(t) for t in tokens[1:])
            elif head == ".end":
                break
            else:
                raise NetlistError(f"unknown directive {tokens[0]!r}", lineno)
            continue
        if lineno == 1:
            try:
                el = _parse_element(tokens, raw, lineno)
            except NetlistError:
                net.title = stripped
                continue
        else:
            el = _parse_element(tokens, raw, lineno)
        key = current.name if current else ""
        if el.name.lower() in seen[key]:
            raise NetlistError(f"duplicate element name {el.name!r}", lineno)
        seen[key].add(el.name.lower())
        scope.append(el)

    if current is not None:
        raise NetlistError(f"missing .ends for subcircuit {current.name!r}")
    net.globals = tuple(dict.fromkeys(globals_))
    for el in _all_elements(net):
        if el.kind == "instance" and el.params["subckt"] not in net.subcircuits:
            raise NetlistError(f"undefined subcircuit {el.params['subckt']!r}", el.line)
    return net


def _all_elements(net: Netlist):
    yield from net.elements
    for sub in net.subcircuits.values():
        yield from sub.elements


def format_element(el: ElementLine) -> str:
    head = " ".join([el.name, *el.nodes])
    p = el.params
    if el.kind in ("resistor", "capacitor"):
        text = f"{head} {format_value(p['value'])}"
        if "ic" in p:
            text += f" ic={format_value(p['ic'])}"
        return text
    if el.kind == "mosfet":
        kw = " ".join(f"{k.upper() if k in ('w', 'l') else k}={format_value(v)}"
                      for k, v in p.items() if k != "model")
        return f"{head} {p['model']} {kw}"
    if el.kind == "mtj":
        kw = " ".join(f"{k}={format_value(v)}" for k, v in p.items() if k != "state")
        return f"{head} state={p['state']} {kw}"
    if el.kind == "vsource":
        if "pwl" in p:
            body = " ".join(f"{format_value(t)} {format_value(v)}" for t, v in p["pwl"])
            return f"{head} PWL({body})"
        return f"{head} DC {format_value(p['dc'])}"
    return f"{head} {p['subckt']}"


def format_netlist(net: Netlist) -> str:
    """Render a :class:`Netlist` back to source text."""
    out = [f"* {net.title}"]
    if net.globals:
        out.append(".global " + " ".join(net.globals))
    for key, val in net.params.items():
        out.append(f".param {key}={format_value(val)}")
    for sub in net.subcircuits.values():
        out.append(" ".join([".subckt", sub.name, *sub.ports]))
        out.extend(format_element(el) for el in sub.elements)
        out.append(".ends")
    out.extend(format_element(el) for el in net.elements)
    for a in net.analyses:
        out.append(f".{a.kind} " + " ".join(format_value(v) for v in a.args))
    out.append(".end")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# flattening


@dataclass
class Device:
    """A resolved device with integer node indices.

    ``value`` holds the kind-specific payload: ohms for resistors, farads for
    capacitors, a :class:`MosParams` for mosfets, ``(MtjParams, MtjState,
    tox)`` for junctions and a :class:`Waveform` for sources.
    """
    kind: str
    name: str
    nodes: Tuple[int, ...]
    value: object


@dataclass
class FlatCircuit:
    node_names: List[str]
    devices: List[Device]
    initial: Dict[str, float] = field(default_factory=dict)
    tran: Optional[Tuple[float, float]] = None
    ground_name: str = GROUND

    @property
    def node_count(self) -> int:
        return len(self.node_names)

    def node_index(self, name: str) -> int:
        key = node_name(name)
        try:
            return self.node_names.index(key)
        except ValueError:
            raise KeyError(f"no node named {name!r}") from None

    def by_kind(self, kind: str) -> List[Device]:
        return [d for d in self.devices if d.kind == kind]

    def device(self, name: str) -> Device:
        for d in self.devices:
            if d.name.lower() == name.lower():
                return d
        raise KeyError(name)


def _mos_params(el: ElementLine, params: Dict[str, float]) -> MosParams:
    pol = el.params["model"]
    suffix = "n" if pol == "nmos" else "p"
    base = DEFAULT_MOS[pol]
    p = el.params
    return MosParams(
        polarity=pol,
        vth0=p.get("vth0", params.get(f"vth0_{suffix}", base.vth0)),
        kprime=p.get("kp", params.get(f"kprime_{suffix}", base.kprime)),
        lam=p.get("lambda", params.get("lambda", base.lam)),
        w=p["w"], l=p["l"],
        cox_overlap=p.get("cov", params.get("cox_overlap", base.cox_overlap)),
    )


def _mtj_value(el: ElementLine, params: Dict[str, float]):
    p = el.params
    try:
        mp = MtjParams(
            area=p["area"],
            tox0=p.get("tox0", params.get("tox0", NOMINAL_TOX)),
            ra_p=p.get("ra", params.get("ra_p", NOMINAL_RA_P)),
            tmr=p.get("tmr", params.get("tmr", NOMINAL_TMR)),
            beta=p.get("beta", params.get("beta", DEFAULT_BETA)),
            jc0=p.get("jc0", params.get("jc0", DEFAULT_JC0)),
        )
    except ValueError as exc:
        raise NetlistError(str(exc), el.line) from None
    return mp, MtjState(p["state"]), p["tox"]


def flatten_hierarchy(net: Netlist) -> FlatCircuit:
    """Expand subcircuit instances into a flat, node-indexed circuit.

    Internal nodes of an instance ``X1`` are renamed ``x1.<node>`` and device
    names become ``X1.<name>``; ground and ``.global`` nodes are shared.
    Nodes are numbered by first appearance with ground fixed at 0.
    """
    index: Dict[str, int] = {GROUND: 0}
    names: List[str] = [GROUND]
    devices: List[Device] = []
    initial: Dict[str, float] = {}
    shared = {GROUND, *net.globals}

    def idx(name: str) -> int:
        if name not in index:
            index[name] = len(names)
            names.append(name)
        return index[name]

    def expand(elements, mapping, prefix, name_prefix, stack):
        for el in elements:
            def resolve(n):
                if n in shared:
                    return n
                return mapping.get(n, prefix + n)
            if el.kind == "instance":
                sub = net.subcircuits[el.params["subckt"]]
                if sub.name in stack:
                    raise NetlistError(
                        f"recursive subcircuit {sub.name!r} via {' -> '.join(stack + [sub.name])}",
                        el.line)
                if len(el.nodes) != len(sub.ports):
                    raise NetlistError(
                        f"{el.name}: subcircuit {sub.name!r} has {len(sub.ports)} ports, "
                        f"got {len(el.nodes)} nodes", el.line)
                inner = {port: resolve(n) for port, n in zip(sub.ports, el.nodes)}
                expand(sub.elements, inner, f"{prefix}{el.name.lower()}.",
                       f"{name_prefix}{el.name}.", stack + [sub.name])
                continue
            nodes = tuple(idx(resolve(n)) for n in el.nodes)
            name = name_prefix + el.name
            if el.kind == "resistor":
                value = el.params["value"]
            elif el.kind == "capacitor":
                value = el.params["value"]
                if "ic" in el.params:
                    initial[resolve(el.nodes[0])] = el.params["ic"]
            elif el.kind == "mosfet":
                value = _mos_params(el, net.params)
            elif el.kind == "mtj":
                value = _mtj_value(el, net.params)
            else:
                pts = el.params.get("pwl") or ((0.0, el.params["dc"]),)
                value = Waveform(pts)
            devices.append(Device(el.kind, name, nodes, value))

    expand(net.elements, {}, "", "", [])
    return FlatCircuit(node_names=names, devices=devices, initial=initial, tran=net.tran())


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    code: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


_DC_TERMINALS = {"resistor": (0, 1), "mtj": (0, 1), "vsource": (0, 1), "mosfet": (0, 2)}


def validate_circuit(circuit: FlatCircuit) -> List[Diagnostic]:
    """Check FlatCircuit invariants; an empty list means the circuit is sound."""
    diags: List[Diagnostic] = []
    n = circuit.node_count
    seen: Dict[str, str] = {}
    for d in circuit.devices:
        key = d.name.lower()
        if key in seen:
            diags.append(Diagnostic("duplicate-name", d.name,
                                    f"duplicate device name {d.name!r}"))
        seen[key] = d.name
        bad = [i for i in d.nodes if not 0 <= i < n]
        if bad:
            diags.append(Diagnostic("bad-node", d.name,
                                    f"device {d.name!r} references node index {bad[0]} "
                                    f"outside [0, {n})"))

    # union-find over DC conduction paths
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    touched = [False] * n
    for d in circuit.devices:
        if any(not 0 <= i < n for i in d.nodes):
            continue
        for i in d.nodes:
            touched[i] = True
        terms = _DC_TERMINALS.get(d.kind)
        if terms:
            a, b = (d.nodes[t] for t in terms)
            parent[find(a)] = find(b)
    root = find(0)
    for i in range(1, n):
        if find(i) != root:
            what = "no DC path to ground" if touched[i] else "no devices attached"
            diags.append(Diagnostic("floating-node", circuit.node_names[i],
                                    f"floating node {circuit.node_names[i]!r}: {what}"))
    return diags
