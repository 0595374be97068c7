"""Inference-time pair filters: device position, size and dummy rules."""
from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import CircuitGraph, PairSample
from .netlist import DeviceKind

log = logging.getLogger(__name__)

RULES = ("position", "size", "dummy")
POSITION_TOL = 1e-9


def edge_weight(kind_u: int, kind_v: int) -> float:
    """0 between two passives, 0.5 with one passive end, else 1."""
    pu = DeviceKind(kind_u).is_passive
    pv = DeviceKind(kind_v).is_passive
    if pu and pv:
        return 0.0
    if pu or pv:
        return 0.5
    return 1.0


def _neighbors(graph: CircuitGraph) -> list[list[tuple[int, float]]]:
    """Weighted adjacency over conducting edges; a body tie to a rail is not
    a path from that rail."""
    adj: list[list[tuple[int, float]]] = [[] for _ in range(graph.n_nodes)]
    keep = graph.conducting if graph.conducting is not None else np.ones(graph.n_edges, dtype=bool)
    for u, v, c in zip(graph.src.tolist(), graph.dst.tolist(), keep.tolist()):
        if c:
            adj[u].append((v, edge_weight(graph.kinds[u], graph.kinds[v])))
    return adj


def shortest_distances(adj: Sequence[Sequence[tuple[int, float]]], sources: Iterable[int]) -> np.ndarray:
    """Multi-source Dijkstra; unreachable nodes get +inf."""
    dist = np.full(len(adj), math.inf)
    heap = []
    for s in sources:
        dist[s] = 0.0
        heap.append((0.0, s))
    heapq.heapify(heap)
    done = np.zeros(len(adj), dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def device_positions(graph: CircuitGraph) -> np.ndarray:
    """Weighted distance of each PMOS from the power rail and each NMOS from
    ground; every other node sits at 0."""
    kinds = graph.kinds
    has_p = bool(np.any(kinds == DeviceKind.PMOS))
    has_n = bool(np.any(kinds == DeviceKind.NMOS))
    if has_p and not graph.power_nodes:
        raise ValueError(f"{graph.name}: PMOS devices present but no power node")
    if has_n and not graph.ground_nodes:
        raise ValueError(f"{graph.name}: NMOS devices present but no ground node")
    adj = _neighbors(graph)
    pos = np.zeros(graph.n_nodes)
    if has_p:
        dp = shortest_distances(adj, graph.power_nodes)
        pos[kinds == DeviceKind.PMOS] = dp[kinds == DeviceKind.PMOS]
    if has_n:
        dn = shortest_distances(adj, graph.ground_nodes)
        pos[kinds == DeviceKind.NMOS] = dn[kinds == DeviceKind.NMOS]
    unreachable = np.isinf(pos)
    if unreachable.any():
        names = [graph.node_ids[i] for i in np.flatnonzero(unreachable)]
        log.warning("%s: devices unreachable from their rail: %s", graph.name, names)
    return pos


def _same(x, y, rel_tol: float | None) -> bool:
    if x is None or y is None:
        return x is None and y is None
    if rel_tol is None:
        return x == y
    return math.isclose(x, y, rel_tol=rel_tol, abs_tol=0.0)


@dataclass
class Removal:
    pair: tuple[str, str]
    rule: str
    values: dict

    def to_json(self) -> str:
        return json.dumps({"pair": list(self.pair), "rule": self.rule, "values": self.values})


def check_pair(graph: CircuitGraph, positions: np.ndarray, a: int, b: int,
               rules: Sequence[str] = RULES, rel_tol: float | None = None) -> Removal | None:
    """The first rule the pair violates, or None when it survives."""
    da, db = graph.devices[a], graph.devices[b]
    ids = (graph.node_ids[a], graph.node_ids[b])
    if "position" in rules and not abs(positions[a] - positions[b]) <= POSITION_TOL:
        return Removal(ids, "position", {"position": [float(positions[a]), float(positions[b])]})
    if "size" in rules and da is not None and db is not None:
        same = (da.model == db.model and da.fingers == db.fingers
                and _same(da.length, db.length, rel_tol)
                and _same(da.unit_width, db.unit_width, rel_tol)
                and _same(da.value, db.value, rel_tol))
        if not same:
            return Removal(ids, "size", {
                "model": [da.model, db.model], "length": [da.length, db.length],
                "unit_width": [da.unit_width, db.unit_width], "fingers": [da.fingers, db.fingers],
                "value": [da.value, db.value]})
    if "dummy" in rules and ((da is not None and da.is_dummy) or (db is not None and db.is_dummy)):
        return Removal(ids, "dummy", {"is_dummy": [bool(da and da.is_dummy), bool(db and db.is_dummy)]})
    return None


def apply_rules(pairs: Sequence[PairSample], graph: CircuitGraph, positions: np.ndarray,
                rules: Sequence[str] = RULES, rel_tol: float | None = None) -> tuple[list[PairSample], list[Removal]]:
    """Filter predicted-positive pairs; returns survivors and the removal log."""
    unknown = set(rules) - set(RULES)
    if unknown:
        raise ValueError(f"unknown rule(s) {sorted(unknown)}")
    kept, removed = [], []
    for p in pairs:
        r = check_pair(graph, positions, p.a, p.b, rules, rel_tol)
        if r is None:
            kept.append(p)
        else:
            removed.append(r)
    return kept, removed
