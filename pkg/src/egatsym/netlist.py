"""Flat SPICE netlist parsing and canonical emission.

Supported cards (one per line, ``*`` comments, ``+`` continuations)::

    .SUBCKT <name> <port>...
    M<name> <drain> <gate> <source> <bulk> <model> L=<v> W=<v> [nf=<int>]
    Q<name> <collector> <base> <emitter> <model>
    D<name> <anode> <cathode> <model>
    R<name> <a> <b> <value>        (likewise C, L)
    .ENDS

Q, D, R, C and L cards may carry optional ``L=``/``W=``/``nf=`` geometry.
Numbers accept the suffixes f p n u m k meg g, case-insensitively.
"""
from __future__ import annotations

import enum
import fnmatch
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence


class DeviceKind(enum.IntEnum):
    """Device categories; the value is the one-hot position."""

    NMOS = 0
    PMOS = 1
    NPN = 2
    PNP = 3
    DIODE = 4
    RESISTOR = 5
    CAPACITOR = 6
    INDUCTOR = 7
    IO = 8

    @property
    def is_mos(self) -> bool:
        return self in (DeviceKind.NMOS, DeviceKind.PMOS)

    @property
    def is_passive(self) -> bool:
        return self in (DeviceKind.RESISTOR, DeviceKind.CAPACITOR, DeviceKind.INDUCTOR)


MOS_ROLES = ("drain", "gate", "source", "bulk")
BJT_ROLES = ("collector", "base", "emitter")
DIODE_ROLES = ("anode", "cathode")
TWO_TERMINAL_ROLES = ("terminal-a", "terminal-b")

_ROLES_BY_KIND = {
    DeviceKind.NMOS: MOS_ROLES, DeviceKind.PMOS: MOS_ROLES,
    DeviceKind.NPN: BJT_ROLES, DeviceKind.PNP: BJT_ROLES,
    DeviceKind.DIODE: DIODE_ROLES,
    DeviceKind.RESISTOR: TWO_TERMINAL_ROLES, DeviceKind.CAPACITOR: TWO_TERMINAL_ROLES,
    DeviceKind.INDUCTOR: TWO_TERMINAL_ROLES,
}


class NetlistError(ValueError):
    """Parse or validation failure, located by line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Device:
    id: str
    kind: DeviceKind
    model: str
    pins: tuple[tuple[str, str], ...]
    length: float | None = None
    width: float | None = None
    fingers: int = 1
    value: float | None = None
    is_dummy: bool = False

    def net(self, role: str) -> str | None:
        for r, n in self.pins:
            if r == role:
                return n
        return None

    @property
    def unit_width(self) -> float | None:
        return None if self.width is None else self.width / self.fingers

    def validate(self) -> None:
        roles = tuple(r for r, _ in self.pins)
        expected = _ROLES_BY_KIND.get(self.kind)
        if expected is None:
            raise NetlistError(f"{self.id}: kind {self.kind.name} is not a netlist device")
        if sorted(roles) != sorted(expected):
            raise NetlistError(f"{self.id}: pin roles {roles} do not match {self.kind.name}")
        if self.kind.is_mos and (self.length is None or self.width is None):
            raise NetlistError(f"{self.id}: MOS device needs L and W")
        for name, v in (("length", self.length), ("width", self.width)):
            if v is not None and not v > 0:
                raise NetlistError(f"{self.id}: {name} must be positive")
        if self.fingers < 1:
            raise NetlistError(f"{self.id}: fingers must be >= 1")


@dataclass(frozen=True, eq=False)
class Netlist:
    """A flat circuit. Equality ignores device declaration order."""

    name: str
    devices: tuple[Device, ...]
    nets: frozenset[str]
    io_ports: tuple[tuple[str, str], ...] = ()
    power_nets: frozenset[str] = frozenset()
    ground_nets: frozenset[str] = frozenset()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Netlist):
            return NotImplemented
        return (self.name == other.name
                and sorted(self.devices, key=_dev_key) == sorted(other.devices, key=_dev_key)
                and self.nets == other.nets and self.io_ports == other.io_ports
                and self.power_nets == other.power_nets and self.ground_nets == other.ground_nets)

    __hash__ = None

    def device(self, device_id: str) -> Device:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def validate(self) -> None:
        seen = set()
        for d in self.devices:
            if d.id in seen:
                raise NetlistError(f"duplicate device id {d.id}")
            seen.add(d.id)
            d.validate()
            for _, n in d.pins:
                if n not in self.nets:
                    raise NetlistError(f"{d.id}: net {n} not declared")
        for _, n in self.io_ports:
            if n not in self.nets:
                raise NetlistError(f"port net {n} not declared")
        if self.power_nets & self.ground_nets:
            raise NetlistError("power and ground nets overlap")
        if not (self.power_nets | self.ground_nets) <= self.nets:
            raise NetlistError("rail nets must be circuit nets")


def _dev_key(d: Device) -> str:
    return d.id


@dataclass(frozen=True)
class ParseOptions:
    power_nets: tuple[str, ...] = ("vdd", "vcc", "avdd")
    ground_nets: tuple[str, ...] = ("gnd", "vss", "0", "avss")
    dummy_patterns: tuple[str, ...] = ("*dmy*", "*dummy*")
    pmos_models: tuple[str, ...] = ("p*",)
    nmos_models: tuple[str, ...] = ("n*",)
    pnp_models: tuple[str, ...] = ("*pnp*",)
    default_name: str = "top"


_LIST_KEYS = {"power_nets", "ground_nets", "dummy_patterns", "pmos_models", "nmos_models", "pnp_models"}


def load_parse_options(path: str | Path) -> ParseOptions:
    """Read ``key=value`` lines; list values are comma separated."""
    kw: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise NetlistError("expected key=value", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key in _LIST_KEYS:
            kw[key] = tuple(v.strip() for v in val.split(",") if v.strip())
        elif key == "default_name":
            kw[key] = val
        else:
            raise NetlistError(f"unknown option {key!r}", lineno)
    return ParseOptions(**kw)


# ---------------------------------------------------------------- numbers

_SUFFIX = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "m": 1e-3,
           "k": 1e3, "meg": 1e6, "g": 1e9}
_NUM_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|[fpnumkg])?$", re.IGNORECASE)


def parse_value(text: str) -> float:
    m = _NUM_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad number {text!r}")
    v = float(m.group(1))
    if m.group(2):
        v *= _SUFFIX[m.group(2).lower()]
    return v


def format_value(v: float) -> str:
    """Shortest engineering form that parses back to exactly ``v``."""
    if v != 0:
        for suf, mult in (("meg", 1e6), ("g", 1e9), ("k", 1e3), ("u", 1e-6),
                          ("n", 1e-9), ("p", 1e-12), ("f", 1e-15), ("m", 1e-3)):
            s = f"{v / mult:.12g}{suf}"
            if "e" not in s and parse_value(s) == v:
                return s
    return repr(float(v))


# ---------------------------------------------------------------- parsing

def _logical_lines(text: str) -> list[tuple[int, str]]:
    out: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("*"):
            continue
        if line.startswith("+"):
            if not out:
                raise NetlistError("continuation without a preceding card", lineno)
            out[-1][1].append(line[1:])
            continue
        out.append((lineno, [line]))
    return [(n, " ".join(parts)) for n, parts in out]


def _matches(name: str, patterns: Iterable[str]) -> bool:
    low = name.lower()
    return any(fnmatch.fnmatchcase(low, p.lower()) for p in patterns)


def _split_params(tokens: list[str], lineno: int) -> tuple[list[str], dict[str, str]]:
    pos, params = [], {}
    for t in tokens:
        if "=" in t:
            k, v = t.split("=", 1)
            if not k or not v:
                raise NetlistError(f"malformed parameter {t!r}", lineno)
            params[k.lower()] = v
        elif params:
            raise NetlistError(f"positional token {t!r} after parameters", lineno)
        else:
            pos.append(t)
    return pos, params


def _geometry(params: dict[str, str], lineno: int, required: bool, dev: str) -> dict:
    unknown = set(params) - {"l", "w", "nf"}
    if unknown:
        raise NetlistError(f"{dev}: unknown parameter(s) {sorted(unknown)}", lineno)
    if required:
        for k in ("l", "w"):
            if k not in params:
                raise NetlistError(f"{dev}: undefined parameter {k.upper()}", lineno)
    out: dict = {}
    try:
        if "l" in params:
            out["length"] = parse_value(params["l"])
        if "w" in params:
            out["width"] = parse_value(params["w"])
        if "nf" in params:
            if not re.fullmatch(r"\d+", params["nf"]):
                raise NetlistError(f"{dev}: nf must be a positive integer", lineno)
            out["fingers"] = int(params["nf"])
    except ValueError as exc:
        if isinstance(exc, NetlistError):
            raise
        raise NetlistError(f"{dev}: {exc}", lineno) from None
    return out


def _parse_card(lineno: int, line: str, opts: ParseOptions) -> Device:
    tokens = line.split()
    name = tokens[0]
    letter = name[0].upper()
    pos, params = _split_params(tokens[1:], lineno)

    def need(n: int, what: str) -> None:
        if len(pos) != n:
            raise NetlistError(f"{name}: {what} card expects {n} fields, got {len(pos)}", lineno)

    if letter == "M":
        need(5, "MOS")
        d, g, s, b, model = pos
        if _matches(model, opts.pmos_models):
            kind = DeviceKind.PMOS
        elif _matches(model, opts.nmos_models):
            kind = DeviceKind.NMOS
        else:
            raise NetlistError(f"{name}: cannot classify MOS model {model!r}", lineno)
        geo = _geometry(params, lineno, True, name)
        pins = (("drain", d), ("gate", g), ("source", s), ("bulk", b))
        dev = Device(name, kind, model, pins, **geo)
    elif letter == "Q":
        need(4, "BJT")
        c, b, e, model = pos
        kind = DeviceKind.PNP if _matches(model, opts.pnp_models) else DeviceKind.NPN
        pins = (("collector", c), ("base", b), ("emitter", e))
        dev = Device(name, kind, model, pins, **_geometry(params, lineno, False, name))
    elif letter == "D":
        need(3, "diode")
        a, k, model = pos
        pins = (("anode", a), ("cathode", k))
        dev = Device(name, DeviceKind.DIODE, model, pins, **_geometry(params, lineno, False, name))
    elif letter in "RCL":
        need(3, "two-terminal")
        a, b, val = pos
        kind = {"R": DeviceKind.RESISTOR, "C": DeviceKind.CAPACITOR, "L": DeviceKind.INDUCTOR}[letter]
        try:
            value = parse_value(val)
        except ValueError as exc:
            raise NetlistError(f"{name}: {exc}", lineno) from None
        dev = Device(name, kind, "", (("terminal-a", a), ("terminal-b", b)), value=value,
                     **_geometry(params, lineno, False, name))
    else:
        raise NetlistError(f"unknown device card {name!r}", lineno)
    try:
        dev.validate()
    except NetlistError as exc:
        raise NetlistError(str(exc), lineno) from None
    return dev


def parse_netlist(text: str, options: ParseOptions | None = None) -> Netlist:
    """Parse a flat netlist; raise :class:`NetlistError` on the first bad line."""
    opts = options or ParseOptions()
    name = opts.default_name
    ports: list[str] = []
    devices: list[Device] = []
    seen: dict[str, int] = {}
    state = "outside"  # outside -> inside -> closed, or bare when no header
    for lineno, line in _logical_lines(text):
        head = line.split()[0]
        if head.startswith("."):
            directive = head.lower()
            if directive == ".subckt":
                if state != "outside" or devices:
                    raise NetlistError("only one flat .SUBCKT is supported", lineno)
                toks = line.split()
                if len(toks) < 2:
                    raise NetlistError(".SUBCKT needs a name", lineno)
                name, ports = toks[1], toks[2:]
                if len(set(ports)) != len(ports):
                    raise NetlistError("duplicate port name", lineno)
                state = "inside"
            elif directive == ".ends":
                if state != "inside":
                    raise NetlistError(".ENDS without .SUBCKT", lineno)
                state = "closed"
            elif directive == ".end":
                break
            else:
                raise NetlistError(f"unsupported directive {head!r}", lineno)
            continue
        if state == "closed":
            raise NetlistError("card after .ENDS", lineno)
        if state == "outside":
            state = "bare"
        dev = _parse_card(lineno, line, opts)
        if dev.id in seen:
            raise NetlistError(f"duplicate device id {dev.id} (first on line {seen[dev.id]})", lineno)
        seen[dev.id] = lineno
        devices.append(dev)
    if state == "inside":
        raise NetlistError("missing .ENDS")

    nets = {n for d in devices for _, n in d.pins} | set(ports)
    power = frozenset(n for n in nets if n.lower() in {p.lower() for p in opts.power_nets})
    ground = frozenset(n for n in nets if n.lower() in {g.lower() for g in opts.ground_nets})
    nl = Netlist(name=name, devices=tuple(devices), nets=frozenset(nets),
                 io_ports=tuple((p, p) for p in ports), power_nets=power, ground_nets=ground)
    nl = mark_dummies(nl, opts.dummy_patterns)
    nl.validate()
    return nl


def _validate_patterns(patterns: Sequence[str]) -> None:
    for p in patterns:
        if not isinstance(p, str) or not p:
            raise ValueError(f"invalid dummy pattern {p!r}")
        try:
            re.compile(fnmatch.translate(p))
        except re.error as exc:
            raise ValueError(f"invalid dummy pattern {p!r}: {exc}") from None


def mark_dummies(netlist: Netlist, patterns: Sequence[str]) -> Netlist:
    """Flag devices whose id matches a glob, or MOS devices with gate, drain
    and source on one net. Other devices are reset to non-dummy."""
    _validate_patterns(patterns)
    devs = []
    for d in netlist.devices:
        inert = d.kind.is_mos and d.net("gate") == d.net("drain") == d.net("source")
        flag = _matches(d.id, patterns) or inert
        devs.append(d if d.is_dummy == flag else replace(d, is_dummy=flag))
    return replace(netlist, devices=tuple(devs))


# ---------------------------------------------------------------- emission

def _card(d: Device) -> str:
    geo = []
    if d.length is not None:
        geo.append(f"L={format_value(d.length)}")
    if d.width is not None:
        geo.append(f"W={format_value(d.width)}")
    if d.fingers != 1:
        geo.append(f"nf={d.fingers}")
    if d.kind.is_mos:
        fields = [d.net(r) for r in MOS_ROLES] + [d.model]
    elif d.kind in (DeviceKind.NPN, DeviceKind.PNP):
        fields = [d.net(r) for r in BJT_ROLES] + [d.model]
    elif d.kind == DeviceKind.DIODE:
        fields = [d.net(r) for r in DIODE_ROLES] + [d.model]
    else:
        fields = [d.net("terminal-a"), d.net("terminal-b"), format_value(d.value)]
    return " ".join([d.id, *fields, *geo])


def emit_netlist(netlist: Netlist) -> str:
    """Canonical text: one header, cards sorted by device id, ``.ENDS``."""
    lines = [" ".join([".SUBCKT", netlist.name, *(p for p, _ in netlist.io_ports)])]
    lines += [_card(d) for d in sorted(netlist.devices, key=_dev_key)]
    lines.append(".ENDS")
    return "\n".join(lines) + "\n"


def read_netlist(path: str | Path, options: ParseOptions | None = None) -> Netlist:
    return parse_netlist(Path(path).read_text(), options)
