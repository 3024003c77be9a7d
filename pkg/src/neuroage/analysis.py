"""Spike detection, firing-rate extraction and fresh-versus-aged sweeps.

Every transient starts from the resting state (membrane at 0 V, synaptic
drive off) and runs until enough spikes have been seen for a steady-state
rate estimate, bounded by a minimum and maximum simulated time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ._parallel import ordered_map
from .aging import AgingParams, age_netlist, supply_voltage
from .devices import SourceSpec
from .netlist import (GROUND, AhParams, Netlist, Source, VifParams, build_ah, build_vif)
from .solver import SolverError, SolverStats, TransientConfig, Waveform, dc_operating_point, transient

CircuitParams = Union[AhParams, VifParams]

CIRCUITS = {"ah": (AhParams, build_ah), "vif": (VifParams, build_vif)}

HIGH_FRACTION = 0.5
LOW_FRACTION = 0.3
DISCARD = 2

# Neuron experiments integrate with the trapezoidal rule: under backward Euler
# the reset overshoot, and with it the firing rate, drifts by percents per dt.
# The reset edges slew the membrane by several mV per step, which quantizes the
# point where the inverters flip; splitting those steps keeps it well below 0.1%.
EXPERIMENT_TRANSIENT = TransientConfig(t_stop=20e-3, dt=20e-9, integrator="trapezoidal",
                                       dv_max=2e-3, record_currents=False)


class FreshNotSpikingError(ValueError):
    """The fresh circuit does not fire, so a relative deviation is undefined."""


# --- spike trains ------------------------------------------------------------

@dataclass(frozen=True)
class SpikeTrain:
    spike_times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.spike_times, dtype=float)
        if t.ndim != 1:
            raise ValueError("spike_times must be one-dimensional")
        if np.any(np.diff(t) <= 0):
            raise ValueError("spike_times must be strictly increasing")
        object.__setattr__(self, "spike_times", t)

    def __len__(self):
        return len(self.spike_times)


class SpikeDetector:
    """Streaming Schmitt-trigger edge detector.

    A rising crossing of ``0.5 v_dd`` registers a spike only if the signal
    has dropped below ``0.3 v_dd`` since the previous registration. Chunks
    may be fed one after another; the state carries across calls.
    """

    def __init__(self, v_dd: float):
        if not v_dd > 0:
            raise ValueError("v_dd must be positive")
        self.hi = HIGH_FRACTION * v_dd
        self.lo = LOW_FRACTION * v_dd
        self.armed = True
        self.times: list[float] = []
        self._last: Optional[tuple[float, float]] = None

    def feed(self, t, v) -> None:
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        if len(t) == 0:
            return
        if self._last is not None:
            t = np.concatenate(([self._last[0]], t))
            v = np.concatenate(([self._last[1]], v))
        self._last = (float(t[-1]), float(v[-1]))
        cum = np.cumsum(v < self.lo)
        rises = np.flatnonzero((v[:-1] < self.hi) & (v[1:] >= self.hi)) + 1
        ref = None
        for k in rises:
            if ref is None:
                armed = self.armed or cum[k - 1] > 0
            else:
                armed = cum[k - 1] - cum[ref] > 0
            if armed:
                frac = (self.hi - v[k - 1]) / (v[k] - v[k - 1])
                self.times.append(float(t[k - 1] + frac * (t[k] - t[k - 1])))
                ref = k
        if ref is None:
            self.armed = self.armed or bool(cum[-1] > 0)
        else:
            self.armed = bool(cum[-1] - cum[ref] > 0)

    def train(self) -> SpikeTrain:
        return SpikeTrain(np.array(self.times))


def detect_spikes(w: Waveform, v_dd: float, probe: str = "spk") -> SpikeTrain:
    """Rising edges of the spike probe, linearly interpolated."""
    if probe not in w.probe_names:
        raise KeyError(f"waveform has no {probe!r} probe")
    d = SpikeDetector(v_dd)
    d.feed(w.times, w.probe(probe))
    return d.train()


@dataclass(frozen=True)
class FrequencyResult:
    f_spk: float
    n_spikes: int
    no_spike: bool
    mean_isi: float = math.nan
    isi_cv: float = math.nan

    def __post_init__(self):
        if self.no_spike != (self.n_spikes < 3):
            raise ValueError("no_spike must be true exactly when fewer than 3 spikes were seen")
        if self.no_spike and self.f_spk != 0.0:
            raise ValueError("f_spk must be 0 for a non-spiking result")


def spike_frequency(train: SpikeTrain) -> FrequencyResult:
    """Steady-state rate after dropping the first two spikes.

    With exactly three spikes only one would remain, so the last
    interval is used instead.
    """
    t = train.spike_times
    n = len(t)
    if n < 3:
        return FrequencyResult(0.0, n, True)
    kept = t[DISCARD:] if n > DISCARD + 1 else t[-2:]
    f = (len(kept) - 1) / (kept[-1] - kept[0])
    isi = np.diff(kept)
    mean = float(isi.mean())
    return FrequencyResult(float(f), n, False, mean, float(isi.std() / mean))


# --- deviation reports ---------------------------------------------------------

@dataclass
class DeviationReport:
    i_inj: float
    fresh_f_spk: float
    aged_f_spk: float
    percent_deviation: Optional[float]
    aged_no_spike: bool
    error: Optional[str] = None
    duty_bti: Optional[Mapping[str, float]] = None
    delta_vth: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if self.percent_deviation is not None and not (self.fresh_f_spk and self.aged_f_spk):
            raise ValueError("percent_deviation needs both frequencies nonzero")

    @property
    def fresh_spikes(self) -> bool:
        return self.fresh_f_spk > 0


def percent_deviation(fresh: FrequencyResult, aged: FrequencyResult,
                      i_inj: float = math.nan) -> DeviationReport:
    """Relative change of the firing rate after aging, in percent."""
    if fresh.no_spike:
        raise FreshNotSpikingError("fresh circuit does not spike; deviation undefined")
    if aged.no_spike:
        return DeviationReport(i_inj, fresh.f_spk, 0.0, None, True)
    pct = (aged.f_spk - fresh.f_spk) / fresh.f_spk * 100
    return DeviationReport(i_inj, fresh.f_spk, aged.f_spk, pct, False)


# --- simulation helpers ----------------------------------------------------------

@dataclass(frozen=True)
class RunLength:
    """Adaptive stop rule: run at least ``t_min``, stop once ``target_spikes``
    have been seen, never beyond ``t_max``."""

    t_min: float = 5e-3
    t_max: float = 20e-3
    target_spikes: int = 50

    def __post_init__(self):
        if not 0 < self.t_min <= self.t_max:
            raise ValueError("need 0 < t_min <= t_max")
        if self.target_spikes < 3:
            raise ValueError("target_spikes must be >= 3")


def resting_state(n: Netlist, node: str = "mem") -> dict[str, float]:
    """DC state with the membrane held at 0 V and every current source off."""
    devs = []
    for d in n.devices:
        if isinstance(d, Source) and d.spec.is_current:
            d = replace(d, spec=SourceSpec("dc_current", value=0.0))
        devs.append(d)
    devs.append(Source("Vrest", n.probe_node(node), GROUND, SourceSpec("dc_voltage", value=0.0)))
    return dc_operating_point(Netlist(tuple(devs), n.probes))


@dataclass
class Simulation:
    waveform: Waveform
    train: SpikeTrain
    frequency: FrequencyResult
    stats: SolverStats


def simulate(n: Netlist, run: RunLength = RunLength(), cfg: Optional[TransientConfig] = None,
             initial: Optional[Mapping[str, float]] = None) -> Simulation:
    """Transient from the resting state under the adaptive stop rule."""
    cfg = replace(cfg or EXPERIMENT_TRANSIENT, t_stop=run.t_max)
    vdd = supply_voltage(n)
    spk = n.probe_node("spk")
    det = SpikeDetector(vdd)

    def monitor(times, volts, nodes):
        det.feed(times, volts[:, nodes.index(spk)])
        return len(det.times) >= run.target_spikes and times[-1] >= run.t_min - 0.5 * cfg.dt

    x0 = resting_state(n) if initial is None else initial
    w, st = transient(n, cfg, initial=x0, monitor=monitor)
    train = detect_spikes(w, vdd)
    return Simulation(w, train, spike_frequency(train), st)


def build_circuit(circuit: str, params: Optional[CircuitParams] = None,
                  i_inj: Optional[float] = None) -> Netlist:
    if circuit not in CIRCUITS:
        raise ValueError(f"unknown circuit {circuit!r}; expected one of {sorted(CIRCUITS)}")
    cls, build = CIRCUITS[circuit]
    p = cls() if params is None else params
    if not isinstance(p, cls):
        raise TypeError(f"{circuit} needs {cls.__name__}, got {type(p).__name__}")
    if i_inj is not None:
        p = replace(p, i_inj=float(i_inj))
    return build(p)


# --- sweeps ----------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    i_min: float = 0.2e-6
    i_max: float = 60e-6
    n_points: int = 20
    spacing: str = "log"

    def __post_init__(self):
        if not 0 < self.i_min < self.i_max:
            raise ValueError("need 0 < i_min < i_max")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if self.spacing not in ("log", "linear"):
            raise ValueError(f"spacing must be 'log' or 'linear', got {self.spacing!r}")

    def currents(self) -> np.ndarray:
        f = np.geomspace if self.spacing == "log" else np.linspace
        i = f(self.i_min, self.i_max, self.n_points)
        i[0], i[-1] = self.i_min, self.i_max
        return i


@dataclass(frozen=True)
class PointJob:
    circuit: str
    params: Optional[CircuitParams]
    i_inj: float
    aging: AgingParams = field(default_factory=AgingParams)
    cfg: Optional[TransientConfig] = None
    run: RunLength = RunLength()


def evaluate_point(job: PointJob) -> DeviationReport:
    """Fresh run, aging, aged run and the resulting deviation for one current.

    Failures are caught and recorded in the report rather than raised.
    """
    nan = math.nan
    try:
        n = build_circuit(job.circuit, job.params, job.i_inj)
        fresh = simulate(n, job.run, job.cfg)
        if fresh.frequency.no_spike:
            return DeviationReport(job.i_inj, 0.0, nan, None, False,
                                   error="fresh circuit does not spike")
        ag = age_netlist(n, fresh.waveform, job.aging)
        aged = simulate(ag.aged, job.run, job.cfg)
    except SolverError as e:
        return DeviationReport(job.i_inj, nan, nan, None, False, error=f"solver failure: {e}")
    r = percent_deviation(fresh.frequency, aged.frequency, job.i_inj)
    r.duty_bti = dict(ag.stress.duty_bti)
    r.delta_vth = dict(ag.delta_vth)
    return r


def run_sweep(circuit: str, params: Optional[CircuitParams] = None, spec: SweepSpec = SweepSpec(),
              aging: AgingParams = AgingParams(), cfg: Optional[TransientConfig] = None,
              run: RunLength = RunLength(), jobs: Optional[int] = None) -> list[DeviationReport]:
    """Fresh/aged comparison at every sweep current, ordered by current."""
    jobs_ = [PointJob(circuit, params, float(i), aging, cfg, run) for i in spec.currents()]
    return ordered_map(evaluate_point, jobs_, jobs)


SWEEP_CSV_HEADER = ["i_inj_a", "fresh_fspk_hz", "aged_fspk_hz", "percent_deviation", "aged_no_spike"]


def _num(x: Optional[float]) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_sweep_csv(path, reports: Sequence[DeviationReport]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SWEEP_CSV_HEADER)
        for r in reports:
            wr.writerow([_num(r.i_inj), _num(r.fresh_f_spk), _num(r.aged_f_spk),
                         _num(r.percent_deviation), "true" if r.aged_no_spike else "false"])


def read_sweep_csv(path) -> list[DeviationReport]:
    def f(s):
        return float(s) if s else math.nan

    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pct = row["percent_deviation"]
            out.append(DeviationReport(f(row["i_inj_a"]), f(row["fresh_fspk_hz"]),
                                       f(row["aged_fspk_hz"]), float(pct) if pct else None,
                                       row["aged_no_spike"] == "true"))
    return out
