import math

import pytest
from hypothesis import given, settings, strategies as st

from egatsym.netlist import (
    DeviceKind, NetlistError, ParseOptions, emit_netlist, format_value, load_parse_options,
    mark_dummies, parse_netlist, parse_value,
)
from egatsym.synth import generate_circuit


def _one(card: str):
    return parse_netlist(f".SUBCKT t a b d g s\n{card}\n.ENDS\n").devices[0]


def test_pmos_card_fields():
    d = _one("M1 d g vdd vdd pch L=1u W=10u nf=2")
    assert d.kind == DeviceKind.PMOS
    assert d.model == "pch"
    assert math.isclose(d.length, 1e-6) and math.isclose(d.width, 1e-5)
    assert d.fingers == 2
    assert math.isclose(d.unit_width, 5e-6)
    assert d.net("source") == "vdd" and d.net("bulk") == "vdd"


def test_resistor_card():
    d = _one("R1 a b 10k")
    assert d.kind == DeviceKind.RESISTOR
    assert dict(d.pins) == {"terminal-a": "a", "terminal-b": "b"}
    assert d.value == 10e3


@pytest.mark.parametrize("card, fragment", [
    ("M1 d g s", "expects 5 fields"),
    ("M1 d g s b nch", "undefined parameter L"),
    ("M1 d g s b weird L=1u W=1u", "cannot classify"),
    ("M1 d g s b nch L=1u W=1u foo=3", "unknown parameter"),
    ("X1 a b sub", "unknown device card"),
    ("R1 a b 10q", "bad number"),
])
def test_errors_are_located(card, fragment):
    with pytest.raises(NetlistError, match=fragment) as info:
        parse_netlist(f"* header\n.SUBCKT t a b\n{card}\n.ENDS\n")
    assert info.value.line == 3


def test_continuation_and_comments():
    nl = parse_netlist(".SUBCKT t in out\n* a comment\nM1 out in gnd gnd nch\n+ L=1u W=2u\n.ENDS\n")
    assert nl.devices[0].width == 2e-6


def test_missing_ends():
    with pytest.raises(NetlistError, match="missing .ENDS"):
        parse_netlist(".SUBCKT t a\nR1 a gnd 1k\n")


def test_duplicate_ids_rejected():
    with pytest.raises(NetlistError, match="duplicate device id"):
        parse_netlist(".SUBCKT t a\nR1 a gnd 1k\nR1 a gnd 2k\n.ENDS\n")


def test_rails_recognised():
    nl = parse_netlist(".SUBCKT t a\nM1 a a vdd vdd pch L=1u W=1u\nM2 a a 0 0 nch L=1u W=1u\n.ENDS\n")
    assert nl.power_nets == {"vdd"} and nl.ground_nets == {"0"}


def test_emit_sorted_and_header_only():
    nl = parse_netlist(".SUBCKT t a\nR2 a gnd 1k\nC1 a gnd 1p\nM3 a a gnd gnd nch L=1u W=1u\n.ENDS\n")
    lines = emit_netlist(nl).splitlines()
    assert [ln.split()[0] for ln in lines[1:-1]] == ["C1", "M3", "R2"]
    empty = parse_netlist(".SUBCKT e a\n.ENDS\n")
    assert emit_netlist(empty) == ".SUBCKT e a\n.ENDS\n"


def test_mark_dummies():
    nl = parse_netlist(".SUBCKT t a\nMDMY1 a a gnd gnd nch L=1u W=1u\n"
                       "M2 x x x gnd nch L=1u W=1u\nM3 a x gnd gnd nch L=1u W=1u\n.ENDS\n")
    flags = {d.id: d.is_dummy for d in mark_dummies(nl, ["*DMY*"]).devices}
    assert flags == {"MDMY1": True, "M2": True, "M3": False}
    with pytest.raises(ValueError):
        mark_dummies(nl, [""])


def test_parse_options_file(tmp_path):
    p = tmp_path / "opts.txt"
    p.write_text("# rails\npower_nets = vpos, vdd\nground_nets=vneg\n")
    opts = load_parse_options(p)
    assert opts.power_nets == ("vpos", "vdd") and opts.ground_nets == ("vneg",)
    nl = parse_netlist(".SUBCKT t a\nR1 a vneg 1k\nR2 a vpos 1k\n.ENDS\n", opts)
    assert nl.ground_nets == {"vneg"} and nl.power_nets == {"vpos"}
    p.write_text("bogus = 1\n")
    with pytest.raises(NetlistError):
        load_parse_options(p)
    assert ParseOptions().ground_nets[2] == "0"


@pytest.mark.parametrize("text, value", [("10k", 1e4), ("1.5u", 1.5e-6), ("2meg", 2e6), ("100f", 1e-13),
                                         ("3", 3.0), ("0.18u", 0.18e-6)])
def test_parse_value(text, value):
    assert math.isclose(parse_value(text), value, rel_tol=1e-15)


@given(st.floats(min_value=1e-16, max_value=1e12, allow_nan=False))
def test_format_value_round_trips(v):
    assert parse_value(format_value(v)) == v


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["ota", "comparator", "mirror-bank", "bjt-reference"]))
def test_round_trip_generated(seed, profile):
    nl, _ = generate_circuit(seed, profile=profile)
    text = emit_netlist(nl)
    again = parse_netlist(text)
    assert again == nl
    assert emit_netlist(again) == text
    assert sorted(p for d in again.devices for p in d.pins) == sorted(p for d in nl.devices for p in d.pins)
