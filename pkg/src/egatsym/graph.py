"""Netlist -> directed circuit graph with node/edge features and valid pairs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .netlist import Device, DeviceKind, Netlist

log = logging.getLogger(__name__)

NODE_DIM = 15
EDGE_DIM = 5
GATE_SLICE = slice(11, 15)
SIZE_SLICE = slice(9, 11)

# edge feature bit for the destination node's pin role
_ROLE_BIT = {"gate": 0, "drain": 1, "source": 2, "terminal-a": 3, "terminal-b": 3}
_OTHER_BIT = 4


def raw_size(d: Device) -> tuple[float, float] | None:
    """(length, unit width) when geometry is known, (value, value) for bare
    passives, otherwise None."""
    if d.length is not None and d.width is not None:
        return d.length, d.width / d.fingers
    if d.value is not None:
        return d.value, d.value
    return None


@dataclass
class SizeStats:
    """Per-kind min/max of raw sizes, fitted on the training circuits."""

    lo: dict[int, list[float]] = field(default_factory=dict)
    hi: dict[int, list[float]] = field(default_factory=dict)

    @classmethod
    def fit(cls, netlists) -> "SizeStats":
        st = cls()
        for nl in netlists:
            for d in nl.devices:
                sz = raw_size(d)
                if sz is None:
                    continue
                k = int(d.kind)
                if k not in st.lo:
                    st.lo[k] = list(sz)
                    st.hi[k] = list(sz)
                else:
                    st.lo[k] = [min(a, b) for a, b in zip(st.lo[k], sz)]
                    st.hi[k] = [max(a, b) for a, b in zip(st.hi[k], sz)]
        return st

    def normalize(self, d: Device) -> tuple[float, float]:
        sz = raw_size(d)
        k = int(d.kind)
        if sz is None or k not in self.lo:
            return 0.5, 0.5
        out = []
        for v, lo, hi in zip(sz, self.lo[k], self.hi[k]):
            if hi - lo <= 0:
                out.append(0.5)
            else:
                out.append(min(1.0, max(0.0, (v - lo) / (hi - lo))))
        return out[0], out[1]

    def to_json(self) -> dict:
        return {"lo": {str(k): v for k, v in self.lo.items()},
                "hi": {str(k): v for k, v in self.hi.items()}}

    @classmethod
    def from_json(cls, obj: dict) -> "SizeStats":
        return cls(lo={int(k): list(v) for k, v in obj["lo"].items()},
                   hi={int(k): list(v) for k, v in obj["hi"].items()})

    def degenerate_dims(self) -> list[tuple[str, int]]:
        return [(DeviceKind(k).name, i) for k in self.lo for i in range(2)
                if self.hi[k][i] - self.lo[k][i] <= 0]


@dataclass
class CircuitGraph:
    """Directed graph: one node per device (sorted by id) then one per IO net.

    Edges are stored sorted by (dst, src); ``indptr`` indexes the incoming
    edges of each node. ``conducting[k]`` is False when edge k exists only
    through a MOS bulk pin; ``None`` means every edge conducts.
    """

    name: str
    node_ids: list[str]
    kinds: np.ndarray
    node_x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_x: np.ndarray
    indptr: np.ndarray
    power_nodes: list[int]
    ground_nodes: list[int]
    devices: list[Device | None]
    conducting: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    def index(self, node_id: str) -> int:
        return self.node_ids.index(node_id)

    def incoming(self, i: int) -> list[tuple[int, int]]:
        """(neighbor, edge index) pairs for edges pointing at ``i``."""
        return [(int(self.src[k]), k) for k in range(self.indptr[i], self.indptr[i + 1])]

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(u), int(v)): k for k, (u, v) in enumerate(zip(self.src, self.dst))}

    def to_json(self) -> dict:
        return {
            "circuit": self.name,
            "nodes": [[nid, DeviceKind(int(k)).name, self.node_x[i].tolist()]
                      for i, (nid, k) in enumerate(zip(self.node_ids, self.kinds))],
            "edges": [[self.node_ids[int(u)], self.node_ids[int(v)], self.edge_x[k].tolist()]
                      for k, (u, v) in enumerate(zip(self.src, self.dst))],
        }


def _gate_feature(d: Device, gate_mates: dict[str, set[tuple[DeviceKind, str]]], io_nets: set[str]) -> int:
    if not d.kind.is_mos:
        return 0
    g = d.net("gate")
    if any(kind == d.kind and other != d.id for kind, other in gate_mates.get(g, ())):
        return 1
    if g in io_nets:
        return 2
    return 3


def build_graph(netlist: Netlist, stats: SizeStats | None = None, gate_feature: bool = True) -> CircuitGraph:
    """Build the bi-directional device/IO graph of ``netlist``.

    Signal nets are clique-expanded over every node touching them. Power and
    ground nets connect each attached device only to the rail's IO node.
    """
    if not netlist.devices:
        raise ValueError(f"netlist {netlist.name!r} has no devices")
    stats = stats if stats is not None else SizeStats.fit([netlist])
    devs = sorted(netlist.devices, key=lambda d: d.id)
    rails = netlist.power_nets | netlist.ground_nets
    io_nets = sorted({n for _, n in netlist.io_ports} | rails)
    node_ids = [d.id for d in devs] + io_nets
    kinds = np.array([int(d.kind) for d in devs] + [int(DeviceKind.IO)] * len(io_nets), dtype=np.int64)
    io_index = {n: len(devs) + i for i, n in enumerate(io_nets)}
    n = len(node_ids)

    # net -> {node: set of roles}
    attach: dict[str, dict[int, set[str]]] = {}
    gate_mates: dict[str, set] = {}
    for i, d in enumerate(devs):
        for role, net in d.pins:
            attach.setdefault(net, {}).setdefault(i, set()).add(role)
            if role == "gate" and d.kind.is_mos:
                gate_mates.setdefault(net, set()).add((d.kind, d.id))
    for net, i in io_index.items():
        attach.setdefault(net, {}).setdefault(i, set()).add("io")

    bits: dict[tuple[int, int], np.ndarray] = {}
    conducting: set[tuple[int, int]] = set()

    def link(u: int, v: int, u_roles: set[str], v_roles: set[str]) -> None:
        vec = bits.get((u, v))
        if vec is None:
            vec = bits[(u, v)] = np.zeros(EDGE_DIM)
        for r in v_roles:
            vec[_ROLE_BIT.get(r, _OTHER_BIT)] = 1.0
        if u_roles != {"bulk"} and v_roles != {"bulk"}:
            conducting.add((u, v))

    for net in sorted(attach):
        members = attach[net]
        if len(members) < 2:
            log.warning("%s: net %s has a single connection", netlist.name, net)
            continue
        if net in rails:
            hub = io_index[net]
            for i, roles in members.items():
                if i != hub:
                    link(hub, i, members[hub], roles)
                    link(i, hub, roles, members[hub])
        else:
            for u, v in combinations(sorted(members), 2):
                link(u, v, members[u], members[v])
                link(v, u, members[v], members[u])

    order = sorted(bits, key=lambda e: (e[1], e[0]))
    src = np.array([u for u, _ in order], dtype=np.int64)
    dst = np.array([v for _, v in order], dtype=np.int64)
    edge_x = np.array([bits[e] for e in order]).reshape(-1, EDGE_DIM)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, dst + 1, 1)
    indptr = np.cumsum(indptr)

    node_x = np.zeros((n, NODE_DIM))
    node_x[np.arange(n), kinds] = 1.0
    for i, d in enumerate(devs):
        node_x[i, SIZE_SLICE] = stats.normalize(d)
        node_x[i, 11 + _gate_feature(d, gate_mates, set(io_nets))] = 1.0
    for i in range(len(devs), n):
        node_x[i, SIZE_SLICE] = -1.0
        node_x[i, 11] = 1.0
    if not gate_feature:
        node_x[:, GATE_SLICE] = 0.0

    return CircuitGraph(
        name=netlist.name, node_ids=node_ids, kinds=kinds, node_x=node_x,
        src=src, dst=dst, edge_x=edge_x, indptr=indptr,
        power_nodes=[io_index[x] for x in io_nets if x in netlist.power_nets],
        ground_nodes=[io_index[x] for x in io_nets if x in netlist.ground_nets],
        devices=list(devs) + [None] * len(io_nets),
        conducting=np.array([e in conducting for e in order], dtype=bool),
    )


def encode_node_features(netlist: Netlist, stats: SizeStats, gate_feature: bool = True) -> np.ndarray:
    """The (N, 15) node feature matrix in canonical node order."""
    return build_graph(netlist, stats, gate_feature).node_x


# ---------------------------------------------------------------- labels and pairs

@dataclass
class SymmetryGroups:
    circuit: str
    groups: list[list[str]]

    @classmethod
    def load(cls, path: str | Path) -> "SymmetryGroups":
        obj = json.loads(Path(path).read_text())
        return cls(circuit=obj["circuit"], groups=[list(g) for g in obj["groups"]])

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"circuit": self.circuit, "groups": self.groups}, indent=1) + "\n")

    def n_positive_pairs(self) -> int:
        return sum(len(g) * (len(g) - 1) // 2 for g in self.groups)


@dataclass
class PairSample:
    a: int
    b: int
    label: int
    similarity: float = math.nan
    predicted: int = 0


def enumerate_valid_pairs(graph: CircuitGraph, labels: SymmetryGroups | None = None) -> list[PairSample]:
    """All unordered same-kind device pairs, labelled +1 inside a group."""
    group_of: dict[int, set[int]] = {}
    if labels is not None:
        for gi, grp in enumerate(labels.groups):
            for dev in grp:
                if dev not in graph.node_ids or graph.kinds[graph.index(dev)] == DeviceKind.IO:
                    raise KeyError(f"label references unknown device {dev!r} in {graph.name}")
                group_of.setdefault(graph.index(dev), set()).add(gi)
    by_kind: dict[int, list[int]] = {}
    for i, k in enumerate(graph.kinds):
        if k != DeviceKind.IO:
            by_kind.setdefault(int(k), []).append(i)
    pairs = []
    for k in sorted(by_kind):
        for a, b in combinations(by_kind[k], 2):
            pos = bool(group_of.get(a, set()) & group_of.get(b, set()))
            pairs.append(PairSample(a, b, 1 if pos else -1))
    return pairs


def random_graph(rng: np.random.Generator, n_nodes: int, edge_prob: float = 0.5,
                 name: str = "random") -> CircuitGraph:
    """A feature-valid random graph for property tests and gradient checks.

    Device kinds, sizes and gate codes are drawn at random; edges are
    symmetric with random (non-empty) role bits in each direction.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    kinds = rng.integers(0, int(DeviceKind.IO), size=n_nodes)
    node_x = np.zeros((n_nodes, NODE_DIM))
    node_x[np.arange(n_nodes), kinds] = 1.0
    node_x[:, SIZE_SLICE] = rng.random((n_nodes, 2))
    node_x[np.arange(n_nodes), 11 + rng.integers(0, 4, size=n_nodes)] = 1.0
    pairs = [(u, v) for u, v in combinations(range(n_nodes), 2) if rng.random() < edge_prob]
    # keep it connected: chain any node left without neighbours
    touched = {x for e in pairs for x in e}
    for i in range(1, n_nodes):
        if i not in touched:
            pairs.append((int(rng.integers(0, i)), i))
    order = sorted([(u, v) for u, v in pairs] + [(v, u) for u, v in pairs], key=lambda e: (e[1], e[0]))
    src = np.array([u for u, _ in order], dtype=np.int64)
    dst = np.array([v for _, v in order], dtype=np.int64)
    edge_x = (rng.random((len(order), EDGE_DIM)) < 0.4).astype(np.float64)
    edge_x[np.arange(len(order)), rng.integers(0, EDGE_DIM, size=len(order))] = 1.0
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, dst + 1, 1)
    return CircuitGraph(name=name, node_ids=[f"X{i}" for i in range(n_nodes)], kinds=kinds.astype(np.int64),
                        node_x=node_x, src=src, dst=dst, edge_x=edge_x.reshape(-1, EDGE_DIM),
                        indptr=np.cumsum(indptr), power_nodes=[], ground_nodes=[],
                        devices=[None] * n_nodes)
