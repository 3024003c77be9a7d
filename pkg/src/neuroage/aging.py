"""BTI/HCI threshold-voltage aging.

A fresh transient is reduced to two stress statistics per transistor (BTI
duty and HCI toggle rate), which power laws turn into end-of-life
threshold shifts. The shifts are then written back into a copy of the
netlist.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .netlist import Netlist, Source, apply_delta_vth
from .solver import TransientConfig, Waveform, transient

SECONDS_PER_YEAR = 3.156e7

DeltaVthMap = dict[str, float]


@dataclass(frozen=True)
class AgingParams:
    """Power-law coefficients and stress thresholds.

    ``phi_bti_nmos``/``phi_bti_pmos`` override the shared BTI prefactor for
    one polarity when set.
    """

    t_life: float = 10 * SECONDS_PER_YEAR
    phi_bti: float = 2.0e-3
    n_bti: float = 1.0 / 6.0
    phi_hci: float = 5.0e-9
    m_hci: float = 0.5
    bti_stress_fraction: float = 0.5
    hci_vds_fraction: float = 0.5
    phi_bti_nmos: Optional[float] = None
    phi_bti_pmos: Optional[float] = None

    def __post_init__(self):
        if self.t_life < 0:
            raise ValueError("t_life must be non-negative")
        for name in ("n_bti", "m_hci", "bti_stress_fraction", "hci_vds_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("phi_bti", "phi_hci", "phi_bti_nmos", "phi_bti_pmos"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_years(cls, years: float, **kw) -> "AgingParams":
        return cls(t_life=float(years) * SECONDS_PER_YEAR, **kw)

    def phi_bti_for(self, polarity: str) -> float:
        o = self.phi_bti_nmos if polarity == "nmos" else self.phi_bti_pmos
        return self.phi_bti if o is None else o


@dataclass(frozen=True)
class StressProfile:
    """Per-transistor stress: BTI duty in [0, 1] and HCI toggles per second."""

    duty_bti: Mapping[str, float]
    toggle_rate: Mapping[str, float]
    t_sim: float = 0.0
    polarity: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.duty_bti) != set(self.toggle_rate):
            raise ValueError("duty and toggle maps must cover the same devices")
        for k, d in self.duty_bti.items():
            if not 0.0 <= d <= 1.0:
                raise ValueError(f"duty_bti of {k} outside [0, 1]: {d}")
        for k, r in self.toggle_rate.items():
            if not r >= 0.0:
                raise ValueError(f"toggle_rate of {k} is negative: {r}")

    @property
    def devices(self) -> list[str]:
        return list(self.duty_bti)


def supply_voltage(n: Netlist) -> float:
    """Value of the ``VDD`` source, else the largest DC voltage source."""
    vals = {}
    for d in n.devices:
        if isinstance(d, Source) and not d.spec.is_current:
            vals[d.name.upper()] = abs(d.spec.value if d.spec.kind == "dc_voltage"
                                       else max(v for _, v in d.spec.points))
    if "VDD" in vals:
        return vals["VDD"]
    if not vals:
        raise ValueError("netlist has no voltage source to define the supply")
    return max(vals.values())


def _crossings(x: np.ndarray, level: float) -> int:
    above = x > level
    return int(np.count_nonzero(above[1:] != above[:-1]))


def extract_stress(w: Waveform, n: Netlist, p: AgingParams,
                   v_dd: Optional[float] = None) -> StressProfile:
    """Duty and toggle statistics for every MOSFET of ``n`` over ``w``."""
    missing = {nd for m in n.mosfets for nd in m.nodes} - set(w.nodes)
    if missing:
        raise ValueError(f"waveform lacks nodes {sorted(missing)} used by the netlist")
    if len(w.times) < 2:
        raise ValueError("waveform needs at least two samples")
    vdd = supply_voltage(n) if v_dd is None else float(v_dd)
    t_sim = float(w.times[-1] - w.times[0])
    duty, tog, pol = {}, {}, {}
    for m in n.mosfets:
        vg, vd, vs = w.v(m.gate), w.v(m.drain), w.v(m.source)
        stress = m.params.sign * (vg - vs)
        duty[m.name] = float(np.count_nonzero(stress > p.bti_stress_fraction * vdd) / len(stress))
        k = _crossings(np.abs(vd - vs), p.hci_vds_fraction * vdd)
        tog[m.name] = k / t_sim if t_sim > 0 else 0.0
        pol[m.name] = m.params.polarity
    return StressProfile(duty, tog, t_sim, pol)


def delta_vth_components(s: StressProfile, p: AgingParams) -> dict[str, tuple[float, float]]:
    """Per device ``(bti, hci)`` shifts in volts."""
    out = {}
    for name in s.devices:
        phi = p.phi_bti_for(s.polarity.get(name, "nmos"))
        bti = phi * (s.duty_bti[name] * p.t_life) ** p.n_bti
        hci = p.phi_hci * (s.toggle_rate[name] * p.t_life) ** p.m_hci
        out[name] = (float(bti), float(hci))
    return out


def compute_delta_vth(s: StressProfile, p: AgingParams) -> DeltaVthMap:
    return {k: b + h for k, (b, h) in delta_vth_components(s, p).items()}


@dataclass
class AgingResult:
    aged: Netlist
    stress: StressProfile
    delta_vth: DeltaVthMap
    fresh_waveform: Optional[Waveform] = None


def age_netlist(n: Netlist, w: Waveform, p: AgingParams) -> AgingResult:
    """Aging from an already simulated fresh waveform."""
    s = extract_stress(w, n, p)
    d = compute_delta_vth(s, p)
    return AgingResult(apply_delta_vth(n, d), s, d, w)


def age_circuit(n: Netlist, cfg: TransientConfig, p: AgingParams,
                initial: Optional[Mapping[str, float]] = None):
    """Fresh transient, stress extraction, shift computation, aged netlist.

    Returns ``(aged, stress, delta_vth)``.
    """
    w, _ = transient(n, cfg, initial=initial)
    r = age_netlist(n, w, p)
    return r.aged, r.stress, r.delta_vth


AGING_CSV_HEADER = ["device", "duty_bti", "toggle_rate_hz", "dvth_bti_v", "dvth_hci_v",
                    "dvth_total_v"]


def write_aging_csv(path, s: StressProfile, p: AgingParams) -> None:
    comp = delta_vth_components(s, p)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(AGING_CSV_HEADER)
        for name in s.devices:
            b, h = comp[name]
            wr.writerow([name, repr(s.duty_bti[name]), repr(s.toggle_rate[name]),
                         repr(b), repr(h), repr(b + h)])


def read_aging_csv(path) -> tuple[StressProfile, DeltaVthMap]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    duty = {r["device"]: float(r["duty_bti"]) for r in rows}
    tog = {r["device"]: float(r["toggle_rate_hz"]) for r in rows}
    return StressProfile(duty, tog), {r["device"]: float(r["dvth_total_v"]) for r in rows}
