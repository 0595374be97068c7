import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egatsym.graph import (
    EDGE_DIM, GATE_SLICE, NODE_DIM, SIZE_SLICE, SizeStats, SymmetryGroups, build_graph,
    enumerate_valid_pairs, random_graph, raw_size,
)
from egatsym.netlist import DeviceKind, Netlist, parse_netlist
from egatsym.synth import generate_circuit

# the two-stage mirror/cascode fragment used to explain edge features
FRAGMENT = """.SUBCKT frag
MV3 net0 net0 vdd vdd pch L=1u W=4u
MV4 net1 net0 vdd vdd pch L=1u W=4u
MV8 net2 net2 net0 gnd nch L=1u W=4u
MV9 net3 net2 net1 gnd nch L=1u W=4u
.ENDS
"""


def _edges(g):
    return {(g.node_ids[u], g.node_ids[v]): g.edge_x[k].tolist()
            for k, (u, v) in enumerate(zip(g.src, g.dst))}


def test_fragment_edge_features():
    e = _edges(build_graph(parse_netlist(FRAGMENT)))
    assert e[("MV3", "MV4")] == [1, 0, 0, 0, 0]
    assert e[("MV4", "MV3")] == [1, 1, 0, 0, 0]


def test_three_device_net_is_a_clique():
    nl = parse_netlist(".SUBCKT t\nR1 x a 1k\nR2 x b 1k\nR3 x c 1k\nR4 a b 1k\nR5 b c 1k\nR6 c a 1k\n.ENDS\n")
    e = _edges(build_graph(nl))
    on_x = {k for k in e if set(k) <= {"R1", "R2", "R3"}}
    assert len(on_x) == 6


def test_parallel_nets_or_merge():
    nl = parse_netlist(".SUBCKT t o\nM1 a b gnd gnd nch L=1u W=1u\nM2 b a o gnd nch L=1u W=1u\n.ENDS\n")
    e = _edges(build_graph(nl))
    # M1's drain meets M2's gate, M1's gate meets M2's drain: one merged edge each way
    assert e[("M1", "M2")] == [1, 1, 0, 0, 0]
    assert e[("M2", "M1")] == [1, 1, 0, 0, 0]
    assert sum(1 for k in e if set(k) == {"M1", "M2"}) == 2


def test_rails_are_star_connected():
    g = build_graph(parse_netlist(FRAGMENT))
    e = _edges(g)
    # MV8 and MV9 share gnd (bulk) and net2 (gates); only the signal net links them
    assert e[("MV8", "MV9")] == [1, 0, 0, 0, 0]
    assert e[("vdd", "MV3")] == [0, 0, 1, 0, 1]
    assert e[("MV3", "vdd")] == [0, 0, 0, 0, 1]
    assert ("MV3", "gnd") not in e


def test_node_features_shape_and_io():
    g = build_graph(parse_netlist(FRAGMENT))
    assert g.node_x.shape == (g.n_nodes, NODE_DIM) and g.edge_x.shape[1] == EDGE_DIM
    io = g.kinds == DeviceKind.IO
    assert np.all(g.node_x[io][:, SIZE_SLICE] == -1)
    assert np.all(g.node_x[io, 8] == 1)


def test_size_feature_uses_unit_width():
    nl = parse_netlist(".SUBCKT t a\nM1 a a gnd gnd nch L=10u W=10u nf=2\n.ENDS\n")
    assert raw_size(nl.devices[0]) == pytest.approx((10e-6, 5e-6))


def test_size_normalisation_clips_and_degenerates():
    nl = parse_netlist(".SUBCKT t a\nM1 a a gnd gnd nch L=1u W=1u\nM2 a a gnd gnd nch L=2u W=1u\n.ENDS\n")
    st_ = SizeStats.fit([nl])
    assert st_.normalize(nl.devices[1]) == (1.0, 0.5)  # W range is empty
    big = parse_netlist(".SUBCKT t a\nM9 a a gnd gnd nch L=9u W=1u\n.ENDS\n").devices[0]
    assert st_.normalize(big)[0] == 1.0
    assert SizeStats.from_json(st_.to_json()) == st_


def test_gate_feature_priority():
    nl = parse_netlist(""".SUBCKT t in
MV12 a in gnd gnd nch L=1u W=1u
MV13 b in gnd gnd nch L=1u W=1u
M3 c in2 gnd gnd nch L=1u W=1u
M4 c d gnd gnd nch L=1u W=1u
M5 d a vdd vdd pch L=1u W=1u
M6 in2 a c gnd nch L=1u W=1u
R1 a b 1k
.ENDS
""")
    g = build_graph(nl)
    gate = {nid: g.node_x[i, GATE_SLICE].tolist() for i, nid in enumerate(g.node_ids)}
    assert gate["MV12"] == [0, 1, 0, 0]   # shares its gate with NMOS MV13 and an IO port
    assert gate["R1"] == [1, 0, 0, 0]
    assert gate["M4"] == [0, 0, 0, 1]
    assert gate["M5"] == [0, 0, 0, 1]    # the gate net is shared with an NMOS only
    assert build_graph(nl, gate_feature=False).node_x[:, GATE_SLICE].sum() == 0


def test_valid_pairs_counting():
    nl = parse_netlist(""".SUBCKT t a
M1 a a gnd gnd nch L=1u W=1u
M2 a a gnd gnd nch L=1u W=1u
M3 a a gnd gnd nch L=1u W=1u
M4 a a vdd vdd pch L=1u W=1u
M5 a a vdd vdd pch L=1u W=1u
R1 a gnd 1k
.ENDS
""")
    g = build_graph(nl)
    pairs = enumerate_valid_pairs(g)
    assert len(pairs) == 4 and all(p.label == -1 for p in pairs)
    labelled = enumerate_valid_pairs(g, SymmetryGroups("t", [["M1", "M2", "M3"]]))
    assert sum(p.label == 1 for p in labelled) == 3
    with pytest.raises(KeyError):
        enumerate_valid_pairs(g, SymmetryGroups("t", [["M1", "M77"]]))


def test_four_group_gives_six_positives():
    assert SymmetryGroups("x", [["v17", "v18", "v20", "v21"]]).n_positive_pairs() == 6


def test_empty_netlist_rejected():
    with pytest.raises(ValueError):
        build_graph(Netlist("e", (), frozenset()))


def _canonical(g):
    return (g.node_ids, g.kinds.tolist(), g.node_x.tolist(), g.src.tolist(), g.dst.tolist(), g.edge_x.tolist())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.randoms(use_true_random=False))
def test_declaration_order_does_not_matter(seed, rnd: random.Random):
    nl, _ = generate_circuit(seed, profile="ota")
    devs = list(nl.devices)
    rnd.shuffle(devs)
    shuffled = Netlist(nl.name, tuple(devs), nl.nets, nl.io_ports, nl.power_nets, nl.ground_nets)
    stats = SizeStats.fit([nl])
    assert _canonical(build_graph(nl, stats)) == _canonical(build_graph(shuffled, stats))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000))
def test_edges_closed_under_reversal(seed):
    g = build_graph(generate_circuit(seed, profile="comparator")[0])
    pairs = set(zip(g.src.tolist(), g.dst.tolist()))
    assert pairs == {(v, u) for u, v in pairs}
    assert np.all(np.diff(g.dst) >= 0)
    assert np.array_equal(np.diff(g.indptr), np.bincount(g.dst, minlength=g.n_nodes))


def test_random_graph_is_well_formed():
    g = random_graph(np.random.default_rng(1), 7)
    assert g.node_x.shape == (7, NODE_DIM)
    assert set(zip(g.src.tolist(), g.dst.tolist())) == set(zip(g.dst.tolist(), g.src.tolist()))
    assert np.all(np.diff(g.indptr) > 0)


def test_bulk_only_edges_do_not_conduct():
    g = build_graph(parse_netlist(FRAGMENT))
    flag = {(g.node_ids[u], g.node_ids[v]): bool(c) for u, v, c in zip(g.src, g.dst, g.conducting)}
    assert flag[("MV3", "vdd")] and flag[("vdd", "MV3")]      # source on the rail
    assert not flag[("MV8", "gnd")] and not flag[("gnd", "MV8")]  # body tie only
    assert flag[("MV3", "MV4")]
