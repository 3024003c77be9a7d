"""Circuit representation, text netlist grammar, and the two neuron topologies.

Grammar (one element per line, ``#`` starts a comment, keywords are
case-insensitive, ``0`` or ``gnd`` is ground)::

    Mname drain gate source NMOS|PMOS W=<val> L=<val> [VTH=] [DVTH=] [KP=] [LAMBDA=] [N=] [UT=]
    Cname n1 n2 <val>
    Rname n1 n2 <val>
    Iname n+ n- <val>                 # SPICE sense: current flows n+ -> source -> n-
    Vname n+ n- <val>
    Vname n+ n- PWL(t1 v1 t2 v2 ...)
    .probe node [alias]

A MOSFET name may also start with ``N`` or ``P`` (``NM2``, ``PM0``), the
way the neuron schematics label their transistors. Values take the suffixes f p n u m k meg. ``W`` and ``L`` are lengths in
metres on the text side and micrometres inside :class:`MosfetParams`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from typing import Iterable, Mapping, Union

from .devices import (NMOS, PMOS, CapacitorSpec, MosfetParams, SourceSpec,
                      default_nmos, default_pmos)

GROUND = "0"
_GROUND_ALIASES = {"0", "gnd"}


class NetlistError(ValueError):
    """Base class for netlist diagnostics."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class NetlistSyntaxError(NetlistError):
    pass


class UnknownDeviceKindError(NetlistError):
    pass


class DuplicateNameError(NetlistError):
    pass


class DanglingNodeError(NetlistError):
    pass


class UnknownDeviceError(NetlistError, KeyError):
    """A name that does not refer to a MOSFET of the netlist."""

    def __str__(self):
        return ValueError.__str__(self)


# --- elements ---------------------------------------------------------------

@dataclass(frozen=True)
class Mosfet:
    name: str
    drain: str
    gate: str
    source: str
    params: MosfetParams

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.drain, self.gate, self.source)


@dataclass(frozen=True)
class Capacitor:
    name: str
    spec: CapacitorSpec

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.spec.node_a, self.spec.node_b)


@dataclass(frozen=True)
class Resistor:
    """Linear resistor, kept for test fixtures."""

    name: str
    node_a: str
    node_b: str
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"resistance must be positive, got {self.r}")

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.node_a, self.node_b)


@dataclass(frozen=True)
class Source:
    name: str
    pos: str
    neg: str
    spec: SourceSpec

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.pos, self.neg)


Element = Union[Mosfet, Capacitor, Resistor, Source]


@dataclass(frozen=True)
class Netlist:
    devices: tuple[Element, ...]
    probes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "probes", tuple(tuple(p) for p in self.probes))
        validate(self)

    @property
    def nodes(self) -> tuple[str, ...]:
        """Ground first, then other nodes in order of first appearance."""
        seen = {GROUND: None}
        for dev in self.devices:
            for nd in dev.nodes:
                seen.setdefault(nd, None)
        return tuple(seen)

    @property
    def mosfets(self) -> tuple[Mosfet, ...]:
        return tuple(d for d in self.devices if isinstance(d, Mosfet))

    def device(self, name: str) -> Element:
        for d in self.devices:
            if d.name == name:
                return d
        raise UnknownDeviceError(f"no device named {name!r}")

    def probe_node(self, alias: str) -> str:
        for a, node in self.probes:
            if a == alias:
                return node
        raise KeyError(alias)

    def replace_device(self, name: str, new: Element) -> "Netlist":
        devs = tuple(new if d.name == name else d for d in self.devices)
        return Netlist(devs, self.probes)

    def with_source_value(self, name: str, value: float) -> "Netlist":
        src = self.device(name)
        if not isinstance(src, Source) or src.spec.kind == "pwl_voltage":
            raise UnknownDeviceError(f"{name!r} is not a DC source")
        return self.replace_device(name, replace(src, spec=replace(src.spec, value=float(value))))


def validate(n: Netlist) -> None:
    names = set()
    for dev in n.devices:
        key = dev.name.lower()
        if key in names:
            raise DuplicateNameError(f"duplicate device name {dev.name!r}")
        names.add(key)
        for nd in dev.nodes:
            if nd in _GROUND_ALIASES and nd != GROUND:
                raise NetlistError(f"device {dev.name}: ground must be written as '0'")
    counts: dict[str, int] = {}
    for dev in n.devices:
        for nd in dev.nodes:
            counts[nd] = counts.get(nd, 0) + 1
    for nd, c in counts.items():
        if nd != GROUND and c < 2:
            raise DanglingNodeError(f"node {nd!r} has only {c} connection")
    for alias, nd in n.probes:
        if nd != GROUND and nd not in counts:
            raise NetlistError(f"probe {alias!r} refers to unknown node {nd!r}")


# --- values -------------------------------------------------------------------

_SUFFIX = {"f": -15, "p": -12, "n": -9, "u": -6, "m": -3, "k": 3, "meg": 6, "g": 9, "t": 12}
_NUM_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[fpnumkgt])?$", re.IGNORECASE)


def parse_value_decimal(text: str) -> Decimal:
    m = _NUM_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad numeric value {text!r}")
    try:
        mant = Decimal(m.group(1))
    except InvalidOperation as exc:  # pragma: no cover - regex already filters
        raise ValueError(f"bad numeric value {text!r}") from exc
    suffix = m.group(2)
    if suffix:
        mant = mant.scaleb(_SUFFIX[suffix.lower()])
    return mant


def parse_value(text: str) -> float:
    """Parse a number with an optional engineering suffix (``100f``, ``1meg``)."""
    return float(parse_value_decimal(text))


def _fmt(x: float) -> str:
    return repr(float(x))


# --- parser -------------------------------------------------------------------

_MOS_KEYS = {"w", "l", "vth", "dvth", "kp", "lambda", "n", "ut"}


def _tokens(line: str) -> list[tuple[str, int]]:
    out = []
    for m in re.finditer(r"PWL\s*\([^)]*\)|\S+", line, re.IGNORECASE):
        out.append((m.group(0), m.start() + 1))
    return out


def _node(tok: str) -> str:
    return GROUND if tok.lower() in _GROUND_ALIASES else tok


def parse_netlist(text: str) -> Netlist:
    """Parse netlist text; raises a :class:`NetlistError` subclass on bad input."""
    devices: list[Element] = []
    probes: list[tuple[str, str]] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        toks = _tokens(line)
        head, col = toks[0]
        if head.startswith("."):
            if head.lower() == ".end":
                break
            if head.lower() != ".probe":
                raise NetlistSyntaxError(f"unknown directive {head!r}", lineno, col)
            if len(toks) not in (2, 3):
                raise NetlistSyntaxError(".probe takes a node and an optional alias", lineno, col)
            node = _node(toks[1][0])
            alias = toks[2][0] if len(toks) == 3 else toks[1][0]
            probes.append((alias, node))
            continue
        kind = head[0].upper()
        if kind in "NP":
            kind = "M"
        if kind not in "MCRIV":
            raise UnknownDeviceKindError(f"unknown device kind {head[0]!r} in {head!r}", lineno, col)
        if head.lower() in seen:
            raise DuplicateNameError(f"duplicate device name {head!r} (first on line {seen[head.lower()]})",
                                     lineno, col)
        seen[head.lower()] = lineno
        try:
            dev = _parse_device(kind, head, toks, lineno)
        except NetlistError:
            raise
        except ValueError as exc:
            raise NetlistSyntaxError(str(exc), lineno, col) from None
        devices.append(dev)
    return Netlist(tuple(devices), tuple(probes))


def _need(toks, count, lineno, what):
    if len(toks) < count:
        col = toks[-1][1] + len(toks[-1][0])
        raise NetlistSyntaxError(f"{what}: expected at least {count - 1} fields after the name", lineno, col)


def _value_at(toks, idx, lineno) -> float:
    tok, col = toks[idx]
    try:
        return parse_value(tok)
    except ValueError:
        raise NetlistSyntaxError(f"bad numeric value {tok!r}", lineno, col) from None


def _parse_device(kind, name, toks, lineno) -> Element:
    if kind == "M":
        _need(toks, 5, lineno, "MOSFET")
        d, g, s = (_node(t) for t, _ in toks[1:4])
        pol_tok, pol_col = toks[4]
        pol = pol_tok.lower()
        if pol not in (NMOS, PMOS):
            raise NetlistSyntaxError(f"expected NMOS or PMOS, got {pol_tok!r}", lineno, pol_col)
        params = {}
        for tok, col in toks[5:]:
            key, eq, val = tok.partition("=")
            key = key.lower()
            if not eq or key not in _MOS_KEYS:
                raise NetlistSyntaxError(f"bad MOSFET parameter {tok!r}", lineno, col)
            if key in params:
                raise NetlistSyntaxError(f"repeated MOSFET parameter {key.upper()}", lineno, col)
            try:
                params[key] = parse_value_decimal(val)
            except ValueError:
                raise NetlistSyntaxError(f"bad numeric value {val!r}", lineno, col + len(key) + 1) from None
        for req in ("w", "l"):
            if req not in params:
                raise NetlistSyntaxError(f"MOSFET {name} needs {req.upper()}=", lineno, toks[0][1])
        base = default_nmos() if pol == NMOS else default_pmos()
        kw = dict(w=float(params["w"].scaleb(6)), l=float(params["l"].scaleb(6)))
        for key, attr in (("vth", "vth0"), ("dvth", "delta_vth"), ("kp", "kp"),
                          ("lambda", "lambda_"), ("n", "n_slope"), ("ut", "u_t")):
            if key in params:
                kw[attr] = float(params[key])
        return Mosfet(name, d, g, s, replace(base, **kw))
    if kind in "CR":
        if len(toks) != 4:
            _need(toks, 4, lineno, "capacitor" if kind == "C" else "resistor")
            raise NetlistSyntaxError("unexpected trailing field", lineno, toks[4][1])
        a, b = _node(toks[1][0]), _node(toks[2][0])
        val = _value_at(toks, 3, lineno)
        if kind == "C":
            return Capacitor(name, CapacitorSpec(a, b, val))
        return Resistor(name, a, b, val)
    # sources
    _need(toks, 4, lineno, "source")
    if len(toks) > 4:
        raise NetlistSyntaxError("unexpected trailing field", lineno, toks[4][1])
    a, b = _node(toks[1][0]), _node(toks[2][0])
    tok, col = toks[3]
    if tok.upper().startswith("PWL"):
        if kind != "V":
            raise NetlistSyntaxError("PWL is only supported on voltage sources", lineno, col)
        inner = tok[tok.index("(") + 1:tok.rindex(")")].split()
        if not inner or len(inner) % 2:
            raise NetlistSyntaxError("PWL needs (time value) pairs", lineno, col)
        try:
            nums = [parse_value(x) for x in inner]
        except ValueError as exc:
            raise NetlistSyntaxError(str(exc), lineno, col) from None
        pts = tuple(zip(nums[0::2], nums[1::2]))
        return Source(name, a, b, SourceSpec("pwl_voltage", points=pts))
    val = _value_at(toks, 3, lineno)
    return Source(name, a, b, SourceSpec("dc_current" if kind == "I" else "dc_voltage", value=val))


# --- serializer ------------------------------------------------------------

def serialize_netlist(n: Netlist) -> str:
    """Text form that :func:`parse_netlist` maps back to an equal Netlist."""
    lines = []
    for dev in n.devices:
        if isinstance(dev, Mosfet):
            p = dev.params
            lines.append(
                f"{dev.name} {dev.drain} {dev.gate} {dev.source} {p.polarity.upper()} "
                f"W={_fmt(p.w)}u L={_fmt(p.l)}u VTH={_fmt(p.vth0)} DVTH={_fmt(p.delta_vth)} "
                f"KP={_fmt(p.kp)} LAMBDA={_fmt(p.lambda_)} N={_fmt(p.n_slope)} UT={_fmt(p.u_t)}")
        elif isinstance(dev, Capacitor):
            lines.append(f"{dev.name} {dev.spec.node_a} {dev.spec.node_b} {_fmt(dev.spec.c)}")
        elif isinstance(dev, Resistor):
            lines.append(f"{dev.name} {dev.node_a} {dev.node_b} {_fmt(dev.r)}")
        else:
            if dev.spec.kind == "pwl_voltage":
                body = " ".join(f"{_fmt(t)} {_fmt(v)}" for t, v in dev.spec.points)
                lines.append(f"{dev.name} {dev.pos} {dev.neg} PWL({body})")
            else:
                lines.append(f"{dev.name} {dev.pos} {dev.neg} {_fmt(dev.spec.value)}")
    for alias, node in n.probes:
        lines.append(f".probe {node} {alias}")
    return "\n".join(lines) + "\n"


# --- aging bridge -----------------------------------------------------------

def apply_delta_vth(n: Netlist, d: Mapping[str, float]) -> Netlist:
    """Copy of ``n`` with each named MOSFET's ``delta_vth`` increased by ``d[name]``."""
    if not d:
        return n
    mos = {m.name for m in n.mosfets}
    for name in d:
        if name not in mos:
            raise UnknownDeviceError(f"{name!r} is not a MOSFET of this netlist")
    devs = []
    for dev in n.devices:
        if isinstance(dev, Mosfet) and dev.name in d:
            dev = replace(dev, params=dev.params.with_shift(float(d[dev.name])))
        devs.append(dev)
    return Netlist(tuple(devs), n.probes)


# --- topologies -------------------------------------------------------------

Size = tuple[float, float]  # (w, l) in micrometres


@dataclass(frozen=True)
class AhParams:
    """Axon-Hillock neuron: membrane cap, two inverters, feedback cap, reset NM2."""

    i_inj: float = 1e-6
    c_m: float = 2e-9
    c_f: float = 0.5e-9
    v_ck: float = 0.0
    v_dd: float = 1.1
    sizes: Mapping[str, Size] = field(default_factory=dict)
    nmos: MosfetParams = field(default_factory=default_nmos)
    pmos: MosfetParams = field(default_factory=default_pmos)

    def __post_init__(self):
        if not (self.c_m > 0 and self.c_f > 0):
            raise ValueError("capacitances must be positive")
        if not self.c_f < self.c_m:
            raise ValueError("c_f must be smaller than c_m")
        if self.i_inj < 0:
            raise ValueError("i_inj must be non-negative")


AH_SIZES: dict[str, Size] = {
    "PM0": (0.45, 0.045),
    "NM0": (0.45, 0.045),
    # the output inverter drives C_F and the reset device sinks the full swing,
    # so both are wide enough that switching stays short next to the charge phase
    "PM1": (16.0, 0.36),
    "NM1": (8.0, 0.36),
    "NM2": (5.4, 0.36),
}


def _mos(name, d, g, s, base: MosfetParams, sizes, defaults):
    w, l = sizes.get(name, defaults[name])
    return Mosfet(name, d, g, s, replace(base, w=float(w), l=float(l)))


def build_ah(p: AhParams) -> Netlist:
    """Axon-Hillock circuit.

    ``ck`` is the source of the reset transistor NM2 (gate = spike output),
    so raising ``v_ck`` throttles the reset current.
    """
    sz = dict(p.sizes)
    unknown = set(sz) - set(AH_SIZES)
    if unknown:
        raise UnknownDeviceError(f"unknown AH device(s) {sorted(unknown)}")
    dv = lambda v: SourceSpec("dc_voltage", value=float(v))  # noqa: E731
    devs: list[Element] = [
        Source("VDD", "vdd", GROUND, dv(p.v_dd)),
        Source("VCK", "ck", GROUND, dv(p.v_ck)),
        Source("Iinj", GROUND, "mem", SourceSpec("dc_current", value=float(p.i_inj))),
        Capacitor("CM", CapacitorSpec("mem", GROUND, p.c_m)),
        _mos("PM0", "inv1", "mem", "vdd", p.pmos, sz, AH_SIZES),
        _mos("NM0", "inv1", "mem", GROUND, p.nmos, sz, AH_SIZES),
        _mos("PM1", "spk", "inv1", "vdd", p.pmos, sz, AH_SIZES),
        _mos("NM1", "spk", "inv1", GROUND, p.nmos, sz, AH_SIZES),
        Capacitor("CF", CapacitorSpec("spk", "mem", p.c_f)),
        _mos("NM2", "mem", "spk", "ck", p.nmos, sz, AH_SIZES),
    ]
    return Netlist(tuple(devs), (("mem", "mem"), ("spk", "spk")))


@dataclass(frozen=True)
class VifParams:
    """Voltage integrate-and-fire neuron biases and capacitors."""

    i_inj: float = 1e-6
    c_m: float = 2e-9
    c_k: float = 0.1e-9
    v_thr: float = 0.9
    v_pw: float = 0.6
    v_rfr: float = 0.54
    v_lk: float = 0.2
    v_bias: float = 0.6
    v_dd: float = 1.1
    sizes: Mapping[str, Size] = field(default_factory=dict)
    nmos: MosfetParams = field(default_factory=default_nmos)
    pmos: MosfetParams = field(default_factory=default_pmos)

    def __post_init__(self):
        if not (self.c_m > 0 and self.c_k > 0):
            raise ValueError("capacitances must be positive")
        if not 0 < self.v_thr <= self.v_dd:
            raise ValueError("v_thr must lie in (0, v_dd]")
        limit = abs(self.nmos.vth0) + 0.1
        if self.v_rfr >= limit or self.v_lk >= limit:
            raise ValueError(f"v_rfr and v_lk must stay below {limit:g} V (subthreshold bias)")
        if self.i_inj < 0:
            raise ValueError("i_inj must be non-negative")


VIF_SIZES: dict[str, Size] = {
    # comparator: diff pair, mirror load, tail
    "NCA": (0.9, 0.09),
    "NCB": (0.9, 0.09),
    "PCA": (0.9, 0.09),
    "PCB": (0.9, 0.09),
    "NCT": (0.45, 0.09),
    # spike buffer
    "PM1": (0.45, 0.045),
    "NM1": (0.45, 0.045),
    "PM4": (0.45, 0.045),
    "NM4i": (0.45, 0.045),
    # sodium, pulse width, reset, refractory, leak
    # PM2 sits in triode at the threshold, so the reset margin shrinks as NM2 ages
    "PM2": (1.5, 0.1),
    "PM3": (0.9, 0.09),
    "NMrd": (0.45, 8.0),
    "NM2": (0.6, 0.1),
    "NM5": (40.0, 0.045),
    "NM3": (0.45, 0.45),
}


def build_vif(p: VifParams) -> Netlist:
    """Voltage integrate-and-fire circuit.

    A five-transistor comparator (output ``cmp``) trips when ``mem`` exceeds
    ``thr``; two inverters produce ``nspk``/``spk``. PM2 injects the sodium
    current into ``mem`` while firing, PM3 charges the pulse-width capacitor
    on ``rst`` from the spike node, and the NM2/NM5 stack discharges ``mem``
    once ``rst`` is high. NMrd bleeds ``rst`` between spikes and NM3 is the
    subthreshold membrane leak.
    """
    sz = dict(p.sizes)
    unknown = set(sz) - set(VIF_SIZES)
    if unknown:
        raise UnknownDeviceError(f"unknown VIF device(s) {sorted(unknown)}")
    dv = lambda v: SourceSpec("dc_voltage", value=float(v))  # noqa: E731
    N, P = p.nmos, p.pmos
    m = lambda *a: _mos(*a, sz, VIF_SIZES)  # noqa: E731
    devs: list[Element] = [
        Source("VDD", "vdd", GROUND, dv(p.v_dd)),
        Source("VTHR", "thr", GROUND, dv(p.v_thr)),
        Source("VBIAS", "vb", GROUND, dv(p.v_bias)),
        Source("VPW", "pw", GROUND, dv(p.v_pw)),
        Source("VRFR", "rfr", GROUND, dv(p.v_rfr)),
        Source("VLK", "lk", GROUND, dv(p.v_lk)),
        Source("Iinj", GROUND, "mem", SourceSpec("dc_current", value=float(p.i_inj))),
        Capacitor("CM", CapacitorSpec("mem", GROUND, p.c_m)),
        m("NCA", "m1", "mem", "tail", N),
        m("NCB", "cmp", "thr", "tail", N),
        m("PCA", "m1", "m1", "vdd", P),
        m("PCB", "cmp", "m1", "vdd", P),
        m("NCT", "tail", "vb", GROUND, N),
        m("PM1", "nspk", "cmp", "vdd", P),
        m("NM1", "nspk", "cmp", GROUND, N),
        m("PM4", "spk", "nspk", "vdd", P),
        m("NM4i", "spk", "nspk", GROUND, N),
        m("PM2", "mem", "nspk", "vdd", P),
        m("PM3", "rst", "pw", "spk", P),
        Capacitor("CK", CapacitorSpec("rst", GROUND, p.c_k)),
        m("NMrd", "rst", "nspk", GROUND, N),
        m("NM2", "mem", "rst", "x", N),
        m("NM5", "x", "rfr", GROUND, N),
        m("NM3", "mem", "lk", GROUND, N),
    ]
    return Netlist(tuple(devs), (("mem", "mem"), ("spk", "spk"), ("rst", "rst")))


def mosfet_names(n: Netlist) -> list[str]:
    return [m.name for m in n.mosfets]


def iter_sources(n: Netlist) -> Iterable[Source]:
    return (d for d in n.devices if isinstance(d, Source))
