"""Synthetic analog netlists with ground-truth symmetry groups.

Circuits are stitched from motifs (differential pairs, mirrors, tail
sources, load pairs, BJT pairs, dummies). Noise adds hard negatives:
low-Vth twins of matched devices, ratioed mirror outputs and dummy pairs.
Every emitted group is checked to be identical in kind, model and size and
to sit at one device position, so the filter rules never drop a true pair.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import SymmetryGroups, build_graph, enumerate_valid_pairs
from .netlist import Device, DeviceKind, Netlist, ParseOptions, emit_netlist, parse_netlist, parse_value
from .postprocess import device_positions

log = logging.getLogger(__name__)

MOTIFS = ("differential-pair", "simple-current-mirror", "cascode-mirror", "tail-source",
          "resistive-load-pair", "capacitive-load-pair", "dummy-fill", "bjt-pair")
PROFILES = ("ota", "comparator", "mirror-bank", "bjt-reference")

_L = [parse_value(v) for v in ("0.18u", "0.35u", "0.5u", "1u", "2u")]
_W = [parse_value(v) for v in ("1u", "2u", "4u", "5u", "8u", "10u", "20u")]
_NF = [1, 2, 4]
_R = [parse_value(v) for v in ("1k", "2k", "5k", "10k", "20k", "50k")]
_C = [parse_value(v) for v in ("100f", "200f", "500f", "1p", "2p")]
_MODEL = {DeviceKind.NMOS: "nch", DeviceKind.PMOS: "pch"}
_LVT = {DeviceKind.NMOS: "nch_lvt", DeviceKind.PMOS: "pch_lvt"}


@dataclass(frozen=True)
class NoiseSpec:
    """Probabilities of injecting each kind of hard negative."""

    vth_twin: float = 0.5
    dummies: float = 0.4
    ratio_mirror: float = 0.35


@dataclass(frozen=True)
class MotifSpec:
    kind: str
    count: int = 1

    def __post_init__(self):
        if self.kind not in MOTIFS:
            raise ValueError(f"unknown motif {self.kind!r}")
        if self.count < 0:
            raise ValueError("motif count must be >= 0")


def rail(kind: DeviceKind) -> str:
    return "gnd" if kind == DeviceKind.NMOS else "vdd"


def other(kind: DeviceKind) -> DeviceKind:
    return DeviceKind.PMOS if kind == DeviceKind.NMOS else DeviceKind.NMOS


class _Circuit:
    def __init__(self, name: str, rng: np.random.Generator):
        self.name = name
        self.rng = rng
        self.devices: list[Device] = []
        self.groups: list[list[str]] = []
        self.ports: list[str] = ["vdd", "gnd"]
        self._count: Counter = Counter()
        self._nets = 0

    def net(self, base: str = "n") -> str:
        self._nets += 1
        return f"{base}{self._nets}"

    def port(self, name: str) -> str:
        if name not in self.ports:
            self.ports.append(name)
        return name

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def size(self) -> dict:
        nf = self.pick(_NF)
        return {"length": self.pick(_L), "width": self.pick(_W) * nf, "fingers": nf}

    def _id(self, prefix: str) -> str:
        self._count[prefix] += 1
        return f"{prefix}{self._count[prefix]}"

    def mos(self, kind, d, g, s, size, model=None, b=None, prefix="M") -> str:
        dev = Device(self._id(prefix), kind, model or _MODEL[kind],
                     (("drain", d), ("gate", g), ("source", s), ("bulk", b or rail(kind))), **size)
        self.devices.append(dev)
        return dev.id

    def two_terminal(self, letter: str, a: str, b: str, value: float) -> str:
        kind = {"R": DeviceKind.RESISTOR, "C": DeviceKind.CAPACITOR}[letter]
        dev = Device(self._id(letter), kind, "", (("terminal-a", a), ("terminal-b", b)), value=value)
        self.devices.append(dev)
        return dev.id

    def pnp(self, e: str, b: str, c: str, area: float) -> str:
        dev = Device(self._id("Q"), DeviceKind.PNP, "pnp",
                     (("collector", c), ("base", b), ("emitter", e)), length=parse_value("2u"), width=area)
        self.devices.append(dev)
        return dev.id

    def group(self, *ids: str) -> None:
        if len(ids) >= 2:
            self.groups.append(list(ids))

    def netlist(self) -> Netlist:
        nets = {n for d in self.devices for _, n in d.pins} | set(self.ports)
        return Netlist(self.name, tuple(self.devices), frozenset(nets),
                       tuple((p, p) for p in self.ports), frozenset({"vdd"}), frozenset({"gnd"}))


# ---------------------------------------------------------------- motifs

def diff_pair(c: _Circuit, kind, gp, gn, tail, dp, dn) -> tuple[str, str]:
    sz = c.size()
    a = c.mos(kind, dp, gp, tail, sz)
    b = c.mos(kind, dn, gn, tail, sz)
    c.group(a, b)
    return a, b


def simple_mirror(c: _Circuit, kind, ref, out) -> tuple[str, str]:
    sz = c.size()
    a = c.mos(kind, ref, ref, rail(kind), sz)
    b = c.mos(kind, out, ref, rail(kind), sz)
    c.group(a, b)
    return a, b


def cascode_mirror(c: _Circuit, kind, ref, out) -> list[str]:
    lo, hi = c.size(), c.size()
    x, y = c.net("x"), c.net("y")
    a = c.mos(kind, x, x, rail(kind), lo)
    b = c.mos(kind, y, x, rail(kind), lo)
    ua = c.mos(kind, ref, ref, x, hi)
    ub = c.mos(kind, out, ref, y, hi)
    c.group(a, b)
    c.group(ua, ub)
    return [a, b, ua, ub]


def bias_bank(c: _Circuit, kind, ref, outs: list[str], ratio_p: float) -> list[str]:
    """Diode-connected reference plus mirror outputs; each equal-size class
    of devices forms one group."""
    sz = c.size()
    ids = [c.mos(kind, ref, ref, rail(kind), sz)]
    classes = {1: list(ids)}
    for o in outs:
        mult = 2 if c.rng.random() < ratio_p else 1
        big = dict(sz, width=sz["width"] * mult, fingers=sz["fingers"] * mult)
        i = c.mos(kind, o, ref, rail(kind), big)
        ids.append(i)
        classes.setdefault(mult, []).append(i)
    for members in classes.values():
        c.group(*members)
    return ids


def load_pair(c: _Circuit, letter: str, a: str, b: str, to: str) -> tuple[str, str]:
    v = c.pick(_R if letter == "R" else _C)
    x = c.two_terminal(letter, a, to, v)
    y = c.two_terminal(letter, b, to, v)
    c.group(x, y)
    return x, y


def dummy_fill(c: _Circuit, kind, size: dict | None = None, n: int = 2) -> list[str]:
    sz = size or c.size()
    r = rail(kind)
    return [c.mos(kind, r, r, r, sz, prefix="MDMY") for _ in range(n)]


def bjt_pair(c: _Circuit, ea: str, eb: str) -> tuple[str, str]:
    area = c.pick(_W)
    a = c.pnp(ea, "gnd", "gnd", area)
    b = c.pnp(eb, "gnd", "gnd", area)
    c.group(a, b)
    return a, b


def vth_twin(c: _Circuit, like: str, drain: str) -> str:
    """Same-size, same-gate low-Vth copy of ``like``; never grouped."""
    d = next(x for x in c.devices if x.id == like)
    return c.mos(d.kind, drain, d.net("gate"), d.net("source"),
                 {"length": d.length, "width": d.width, "fingers": d.fingers}, model=_LVT[d.kind])


# ---------------------------------------------------------------- profiles

def _ota_core(c: _Circuit, noise: NoiseSpec, inp: str, inn: str, out: str, two_stage: bool) -> dict:
    kin = DeviceKind.NMOS if c.rng.random() < 0.7 else DeviceKind.PMOS
    kl = other(kin)
    tail, x1 = c.net("tail"), c.net("x")
    out1 = c.net("o") if two_stage else out
    diff_pair(c, kin, inp, inn, tail, x1, out1)
    if c.rng.random() < 0.3:
        cascode_mirror(c, kl, x1, out1)
    else:
        simple_mirror(c, kl, x1, out1)
    vb = c.port(c.net("ibias"))
    outs = [tail] + ([out] if two_stage else [])
    bank = bias_bank(c, kin, vb, outs, noise.ratio_mirror)
    if two_stage:
        c.mos(kl, out, out1, rail(kl), c.size())
        if c.rng.random() < 0.5:
            mid = c.net("z")
            c.two_terminal("R", out1, mid, c.pick(_R))
            c.two_terminal("C", mid, out, c.pick(_C))
        else:
            c.two_terminal("C", out1, out, c.pick(_C))
    return {"kin": kin, "bank": bank, "vb": vb}


def bias_branch(c: _Circuit, kind, bias: str) -> None:
    """Self-biased diode stack hanging off ``bias`` through a resistor."""
    top = c.net("vb")
    c.mos(kind, top, top, rail(kind), c.size())
    c.two_terminal("R", top, bias, c.pick(_R))


def ota(c: _Circuit, noise: NoiseSpec) -> None:
    inp, inn, out = c.port("inp"), c.port("inn"), c.port("out")
    info = _ota_core(c, noise, inp, inn, out, two_stage=c.rng.random() < 0.6)
    if c.rng.random() < 0.6:
        bias_branch(c, other(info["kin"]), info["vb"])
    if c.rng.random() < noise.vth_twin:
        vth_twin(c, info["bank"][0], c.port("iaux"))
    if c.rng.random() < noise.dummies:
        dummy_fill(c, info["kin"])


def comparator(c: _Circuit, noise: NoiseSpec) -> None:
    N, P = DeviceKind.NMOS, DeviceKind.PMOS
    clk, inp, inn = c.port("clk"), c.port("inp"), c.port("inn")
    inverters = c.rng.random() < 0.5
    outp, outn = (c.net("op"), c.net("on")) if inverters else (c.port("outp"), c.port("outn"))
    tail, x1, x2 = c.net("tail"), c.net("x"), c.net("x")
    c.mos(N, tail, clk, "gnd", c.size())
    diff_pair(c, N, inp, inn, tail, x1, x2)
    sz = c.size()
    c.group(c.mos(N, outn, outp, x1, sz), c.mos(N, outp, outn, x2, sz))
    sz = c.size()
    c.group(c.mos(P, outn, outp, "vdd", sz), c.mos(P, outp, outn, "vdd", sz))
    sz = c.size()
    reset = [c.mos(P, outn, clk, "vdd", sz), c.mos(P, outp, clk, "vdd", sz)]
    c.group(*reset)
    if c.rng.random() < 0.6:
        sz = c.size()
        c.group(c.mos(P, x1, clk, "vdd", sz), c.mos(P, x2, clk, "vdd", sz))
    if inverters:
        qp, qn = c.port("qp"), c.port("qn")
        sz = c.size()
        c.group(c.mos(N, qp, outn, "gnd", sz), c.mos(N, qn, outp, "gnd", sz))
        sz = c.size()
        c.group(c.mos(P, qp, outn, "vdd", sz), c.mos(P, qn, outp, "vdd", sz))
    if c.rng.random() < noise.vth_twin:
        vth_twin(c, reset[0], c.port("rst"))
    if c.rng.random() < noise.dummies:
        dummy_fill(c, c.pick([N, P]))


def mirror_bank(c: _Circuit, noise: NoiseSpec) -> None:
    N, P = DeviceKind.NMOS, DeviceKind.PMOS
    nb = c.port("ibias")
    k = int(c.rng.integers(2, 4))
    pref = c.net("pb")
    nouts = [pref] + [c.port(f"isink{i}") for i in range(k - 1)]
    nbank = bias_bank(c, N, nb, nouts, noise.ratio_mirror)
    j = int(c.rng.integers(2, 4))
    pbank = bias_bank(c, P, pref, [c.port(f"isrc{i}") for i in range(j)], noise.ratio_mirror)
    if c.rng.random() < 0.5:
        a, b = c.port("ra"), c.port("rb")
        load_pair(c, "R", a, b, "gnd")
    if c.rng.random() < 0.7:
        _ota_core(c, noise, c.port("inp"), c.port("inn"), c.port("out"), two_stage=c.rng.random() < 0.5)
    if c.rng.random() < noise.vth_twin:
        vth_twin(c, c.pick([nbank[0], pbank[0]]), c.port("itwin"))
    if c.rng.random() < noise.dummies:
        dummy_fill(c, c.pick([N, P]))


def bjt_reference(c: _Circuit, noise: NoiseSpec) -> None:
    P = DeviceKind.PMOS
    vg, na, nb, vref = c.net("vg"), c.net("na"), c.net("nb"), c.port("vref")
    sz = c.size()
    mirror = [c.mos(P, d, vg, "vdd", sz) for d in (na, nb, vref)]
    c.group(*mirror)
    e2, e3 = c.net("e"), c.net("e")
    qa, _ = bjt_pair(c, na, e3)
    c.pnp(e2, "gnd", "gnd", c.devices[-1].width * 8)
    c.two_terminal("R", nb, e2, c.pick(_R))
    c.two_terminal("R", vref, e3, c.pick(_R))
    if c.rng.random() < 0.6:
        load_pair(c, "R", na, nb, "gnd")
    info = _ota_core(c, noise, na, nb, vg, two_stage=False)
    if c.rng.random() < noise.vth_twin:
        vth_twin(c, mirror[0], c.port("iptat"))
    if c.rng.random() < noise.dummies:
        dummy_fill(c, info["kin"])


_PROFILE_FN = {"ota": ota, "comparator": comparator, "mirror-bank": mirror_bank,
               "bjt-reference": bjt_reference}


def _recipe_circuit(c: _Circuit, recipe: list[MotifSpec], noise: NoiseSpec) -> None:
    """Stitch recipe motifs into an amplifier-like chain."""
    counts = Counter()
    for m in recipe:
        counts[m.kind] += m.count
    if sum(counts.values()) == 0:
        raise ValueError("recipe has no devices")
    N = DeviceKind.NMOS
    stages = []
    prev = (c.port("inp"), c.port("inn"))
    for _ in range(counts["differential-pair"]):
        tail, dp, dn = c.net("tail"), c.net("x"), c.net("y")
        diff_pair(c, N, prev[0], prev[1], tail, dp, dn)
        stages.append({"tail": tail, "d": (dp, dn), "loaded": False})
        prev = (dp, dn)
    free = [s for s in stages]

    def next_load():
        for s in free:
            if not s["loaded"]:
                s["loaded"] = True
                return s["d"]
        return c.port(c.net("pa")), c.port(c.net("pb"))

    for _ in range(counts["simple-current-mirror"]):
        a, b = next_load()
        simple_mirror(c, DeviceKind.PMOS, a, b)
    for _ in range(counts["cascode-mirror"]):
        a, b = next_load()
        cascode_mirror(c, DeviceKind.PMOS, a, b)
    for _ in range(counts["resistive-load-pair"]):
        a, b = next_load()
        load_pair(c, "R", a, b, "vdd")
    for _ in range(counts["capacitive-load-pair"]):
        a, b = next_load()
        load_pair(c, "C", a, b, "vdd")
    tails = [s["tail"] for s in stages]
    for k in range(counts["tail-source"]):
        t = tails[k] if k < len(tails) else c.port(c.net("it"))
        c.mos(N, t, c.port("vbias"), "gnd", c.size())
    for _ in range(counts["bjt-pair"]):
        bjt_pair(c, c.port(c.net("ea")), c.port(c.net("eb")))
    for _ in range(counts["dummy-fill"]):
        dummy_fill(c, N)
    # drains of unloaded stages become outputs so no net dangles
    for s in free:
        if not s["loaded"]:
            for n in s["d"]:
                if n not in c.ports:
                    c.port(n)
    for t in tails[counts["tail-source"]:]:
        c.port(t)
    mos_groups = [g for g in c.groups if len(g) == 2]
    if noise.vth_twin > 0 and mos_groups and c.rng.random() < noise.vth_twin:
        like = c.pick([g[0] for g in mos_groups if g[0].startswith("M")] or [None])
        if like is not None:
            vth_twin(c, like, c.port("twin"))


# ---------------------------------------------------------------- validation

def check_circuit(netlist: Netlist, groups: SymmetryGroups, options: ParseOptions | None = None) -> list[str]:
    """Problems that make a generated circuit unusable (empty when valid)."""
    problems = []
    text = emit_netlist(netlist)
    parsed = parse_netlist(text, options)
    if parsed != netlist:
        problems.append("netlist does not round-trip")
    pin_count = Counter(n for d in parsed.devices for _, n in d.pins)
    for _, n in parsed.io_ports:
        pin_count[n] += 1
    lonely = sorted(n for n, k in pin_count.items() if k < 2)
    if lonely:
        problems.append(f"single-connection nets {lonely}")
    g = build_graph(parsed)
    seen = {0}
    frontier = [0]
    while frontier:
        u = frontier.pop()
        for v in g.dst[g.src == u].tolist():
            if v not in seen:
                seen.add(v)
                frontier.append(v)
    if len(seen) != g.n_nodes:
        problems.append("graph is disconnected")
    pos = device_positions(g)
    for grp in groups.groups:
        devs = [parsed.device(x) for x in grp]
        keys = {(d.kind, d.model, d.length, d.unit_width, d.fingers, d.value) for d in devs}
        if len(keys) != 1:
            problems.append(f"group {grp} is not size-identical")
        ps = {float(pos[g.index(x)]) for x in grp}
        if len(ps) != 1:
            problems.append(f"group {grp} spans positions {sorted(ps)}")
        if any(d.is_dummy for d in devs):
            problems.append(f"group {grp} contains a dummy")
    return problems


def _build(name: str, rng: np.random.Generator, profile: str | None,
           recipe: list[MotifSpec] | None, noise: NoiseSpec) -> tuple[Netlist, SymmetryGroups]:
    c = _Circuit(name, rng)
    if recipe is not None:
        _recipe_circuit(c, recipe, noise)
    else:
        _PROFILE_FN[profile](c, noise)
    nl = parse_netlist(emit_netlist(c.netlist()))
    return nl, SymmetryGroups(name, [list(g) for g in c.groups])


def generate_circuit(seed: int, recipe: list[MotifSpec] | None = None, noise: NoiseSpec | None = None,
                     profile: str = "ota", name: str | None = None, max_attempts: int = 200) -> tuple[Netlist, SymmetryGroups]:
    """One labelled circuit from a motif recipe (or a named profile)."""
    noise = noise if noise is not None else NoiseSpec()
    if recipe is None and profile not in _PROFILE_FN:
        raise ValueError(f"unknown profile {profile!r}")
    name = name or f"syn{seed}"
    last: list[str] = []
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        nl, groups = _build(name, rng, profile, recipe, noise)
        last = check_circuit(nl, groups)
        if not last:
            return nl, groups
    raise RuntimeError(f"could not generate a valid circuit for seed {seed}: {last}")


# ---------------------------------------------------------------- datasets

@dataclass
class DatasetStats:
    graphs: int = 0
    nodes: int = 0
    edges: int = 0
    valid_pairs: int = 0
    matched_pairs: int = 0

    @property
    def matched_ratio(self) -> float:
        return self.matched_pairs / self.valid_pairs if self.valid_pairs else 0.0

    def add(self, netlist: Netlist, groups: SymmetryGroups) -> None:
        g = build_graph(netlist)
        pairs = enumerate_valid_pairs(g, groups)
        self.graphs += 1
        self.nodes += g.n_nodes
        self.edges += g.n_edges
        self.valid_pairs += len(pairs)
        self.matched_pairs += sum(p.label == 1 for p in pairs)

    def to_json(self) -> dict:
        return dict(asdict(self), matched_ratio=round(self.matched_ratio, 4))


def profile_for(index: int, profile: str) -> str:
    if profile == "default":
        return PROFILES[index % len(PROFILES)]
    if profile in _PROFILE_FN:
        return profile
    raise ValueError(f"unknown dataset profile {profile!r}")


def generate_dataset(seed: int, n_circuits: int, out_dir: str | Path, profile: str = "default",
                     noise: NoiseSpec | None = None) -> dict:
    """Write netlists, label files and ``manifest.json``; returns the manifest."""
    if n_circuits < 4:
        raise ValueError("need at least 4 circuits")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    stats = DatasetStats()
    entries = []
    for i in range(n_circuits):
        prof = profile_for(i, profile)
        name = f"c{i:03d}_{prof.replace('-', '_')}"
        nl, groups = generate_circuit(seed * 100003 + i, profile=prof, noise=noise, name=name)
        (out / f"{name}.sp").write_text(emit_netlist(nl))
        groups.dump(out / f"{name}.json")
        stats.add(nl, groups)
        entries.append({"name": name, "profile": prof, "netlist": f"{name}.sp", "labels": f"{name}.json"})
    manifest = {"version": 1, "seed": seed, "profile": profile,
                "noise": asdict(noise or NoiseSpec()), "circuits": entries, "stats": stats.to_json()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest
