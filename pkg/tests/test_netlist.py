import pytest
from hypothesis import given, settings, strategies as st

from mramsim.netlist import (NetlistError, flatten_hierarchy, format_netlist, parse_netlist,
                             parse_value, validate_circuit)

DIVIDER = """divider
V1 in 0 DC 1
R1 in mid 1k
R2 mid 0 1k
"""


def test_resistor_line():
    el = parse_netlist("t\nR1 a 0 1k\n").elements[0]
    assert (el.kind, el.name, el.nodes, el.params["value"]) == ("resistor", "R1", ("a", "0"), 1000.0)


def test_mtj_line():
    el = parse_netlist("t\nJ1 bl sl state=P area=1600n2 tox=1n\n").elements[0]
    assert el.kind == "mtj"
    assert el.params["state"] == "P"
    assert el.params["area"] == pytest.approx(1600e-18)
    assert el.params["tox"] == pytest.approx(1e-9)


def test_negative_resistance_rejected():
    with pytest.raises(NetlistError, match="line 2"):
        parse_netlist("t\nR1 a 0 -5\n")


@pytest.mark.parametrize("text", ["t\nQ1 a b c 1\n", "t\nR1 a 0 1x\n", "t\nR1 a 0\n",
                                  "t\nM1 d g s b nmos W=1u L=60n foo=1\n"])
def test_syntax_errors_carry_line(text):
    with pytest.raises(NetlistError) as err:
        parse_netlist(text)
    assert err.value.line == 2


@pytest.mark.parametrize("token,value", [("1f", 1e-15), ("2p", 2e-12), ("3n", 3e-9), ("4u", 4e-6),
                                         ("5m", 5e-3), ("6k", 6e3), ("7meg", 7e6), ("1.5e-3", 1.5e-3)])
def test_suffixes(token, value):
    assert parse_value(token) == pytest.approx(value)


def test_comments_and_blank_lines_ignored():
    net = parse_netlist("t\n* a comment\n\nR1 a 0 1k\n")
    assert len(net.elements) == 1


def test_flat_without_subcircuits():
    fc = flatten_hierarchy(parse_netlist("t\nV1 a 0 DC 1\nR1 a b 1k\nR2 b 0 1k\n"))
    assert fc.node_count == 3
    assert fc.node_names == ["0", "a", "b"]


def test_two_instances_expand_to_distinct_resistors():
    net = parse_netlist("t\n.subckt cell bl sl\nRj bl sl 742\n.ends\n"
                        "X1 a b cell\nX2 b 0 cell\nV1 a 0 DC 1\n")
    fc = flatten_hierarchy(net)
    rs = fc.by_kind("resistor")
    assert [r.name for r in rs] == ["X1.Rj", "X2.Rj"]
    assert rs[0].nodes != rs[1].nodes
    assert all(r.value == 742 for r in rs)


def test_recursive_subckt():
    net = parse_netlist("t\n.subckt loop a b\nX1 a b loop\n.ends\nX0 n 0 loop\n")
    with pytest.raises(NetlistError, match="recurs"):
        flatten_hierarchy(net)


def test_arity_mismatch():
    net = parse_netlist("t\n.subckt cell a b\nR1 a b 1\n.ends\nX0 n cell\n")
    with pytest.raises(NetlistError):
        flatten_hierarchy(net)


def test_internal_nodes_prefixed_and_globals_shared():
    net = parse_netlist("t\n.global vdd\n.subckt inv a\nR1 a mid 1k\nR2 mid vdd 1k\n.ends\n"
                        "X1 x inv\nX2 y inv\nV1 vdd 0 DC 1\nR3 x 0 1k\nR4 y 0 1k\n")
    fc = flatten_hierarchy(net)
    assert "x1.mid" in fc.node_names and "x2.mid" in fc.node_names
    assert fc.node_names.count("vdd") == 1


def test_gnd_synonym_and_case():
    fc = flatten_hierarchy(parse_netlist("t\nV1 A gnd DC 1\nR1 a 0 1k\n"))
    assert fc.node_names == ["0", "a"]


def test_divider_is_clean():
    assert validate_circuit(flatten_hierarchy(parse_netlist(DIVIDER))) == []


def test_capacitor_only_node_is_floating():
    fc = flatten_hierarchy(parse_netlist(DIVIDER + "C1 mid x 1f\n"))
    diags = validate_circuit(fc)
    assert [d.code for d in diags] == ["floating-node"]
    assert diags[0].subject == "x"


def test_duplicate_names_reported():
    fc = flatten_hierarchy(parse_netlist(DIVIDER))
    fc.devices.append(fc.devices[1])
    diags = validate_circuit(fc)
    assert any(d.code == "duplicate-name" and d.subject == "R1" for d in diags)


def test_duplicate_names_in_source():
    with pytest.raises(NetlistError, match="duplicate"):
        parse_netlist("t\nM1 a b 0 0 nmos W=1u L=1u\nM1 a b 0 0 nmos W=1u L=1u\n")


def test_tran_and_ic():
    fc = flatten_hierarchy(parse_netlist("t\nR1 a 0 1k\nC1 a 0 50f ic=1\n.tran 1p 2n\n"))
    assert fc.tran == (1e-12, 2e-9)
    assert fc.initial == {"a": 1.0}


names = st.from_regex(r"[a-z][a-z0-9]{0,4}", fullmatch=True)
values = st.floats(min_value=1e-15, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def netlists(draw):
    lines = ["generated"]
    nodes = draw(st.lists(names, min_size=2, max_size=5, unique=True))
    n = draw(st.integers(1, 8))
    for k in range(n):
        kind = draw(st.sampled_from("RCMJV"))
        a, b = draw(st.sampled_from(nodes)), draw(st.sampled_from(nodes + ["0"]))
        if kind == "R":
            lines.append(f"R{k} {a} {b} {draw(values)!r}")
        elif kind == "C":
            lines.append(f"C{k} {a} {b} {draw(values)!r}")
        elif kind == "M":
            model = draw(st.sampled_from(["nmos", "pmos"]))
            lines.append(f"M{k} {a} {b} 0 0 {model} W={draw(values)!r} L={draw(values)!r}")
        elif kind == "J":
            state = draw(st.sampled_from(["P", "AP"]))
            lines.append(f"J{k} {a} {b} state={state} area={draw(values)!r} tox={draw(values)!r}")
        else:
            lines.append(f"V{k} {a} {b} DC {draw(st.floats(-5, 5))!r}")
    return "\n".join(lines) + "\n"


@settings(max_examples=60, deadline=None)
@given(netlists())
def test_round_trip(text):
    net = parse_netlist(text)
    again = parse_netlist(format_netlist(net))
    assert again.elements == net.elements
    assert again.title == net.title


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.integers(0, 3))
def test_flatten_preserves_device_count(per_cell, instances, top):
    body = "".join(f"R{k} a b {k + 1}\n" for k in range(per_cell))
    inst = "".join(f"X{k} n{k} n{k + 1} cell\n" for k in range(instances))
    tops = "".join(f"C{k} n0 0 1f\n" for k in range(top))
    net = parse_netlist(f"t\n.subckt cell a b\n{body}.ends\n{inst}{tops}V0 n0 0 DC 1\n")
    fc = flatten_hierarchy(net)
    assert len(fc.devices) == per_cell * instances + top + 1
