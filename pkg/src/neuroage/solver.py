"""DC operating point and fixed-step transient analysis (modified nodal analysis).

Nodes pinned to ground through a voltage source are eliminated; the
remaining node voltages plus the branch currents of floating voltage
sources form the unknown vector. Capacitors become companion
conductance/current pairs (backward Euler or trapezoidal) and every time
point is solved by damped Newton iteration with a per-iteration voltage
update clamp.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from . import _kernel as K
from .devices import drain_current
from .netlist import GROUND, Capacitor, Mosfet, Netlist, Resistor, Source


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, time=None, node=None, residual=None):
        self.time = time
        self.node = node
        self.residual = residual
        super().__init__(message)


class StepBudgetError(SolverError):
    pass


@dataclass(frozen=True)
class TransientConfig:
    t_stop: float
    dt: float = 20e-9
    integrator: str = "backward_euler"
    v_abstol: float = 1e-6
    v_reltol: float = 1e-6
    i_abstol: float = 1e-9
    max_newton_iters: int = 50
    gmin: float = 1e-12
    v_limit: float = 0.3
    max_split: int = 6
    dv_max: float = 0.0
    dv_levels: int = 3
    max_steps: int = 10**8
    record_currents: bool = True
    chunk_steps: int = 20000

    def __post_init__(self):
        if not (0 < self.dt < self.t_stop):
            raise ValueError("need 0 < dt < t_stop")
        if min(self.v_abstol, self.v_reltol, self.i_abstol, self.gmin) <= 0:
            raise ValueError("tolerances and gmin must be positive")
        if self.integrator not in ("backward_euler", "trapezoidal"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.dv_max < 0 or not 0 <= self.dv_levels <= self.max_split:
            raise ValueError("need dv_max >= 0 and 0 <= dv_levels <= max_split")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")

    @property
    def method(self) -> int:
        return K.TRAP if self.integrator == "trapezoidal" else K.BE


@dataclass
class SolverStats:
    total_newton_iters: int = 0
    steps_taken: int = 0
    max_kcl_residual: float = 0.0
    split_steps: int = 0


@dataclass
class Waveform:
    """Node voltages of every stored time point.

    ``volts[k, j]`` is the voltage of ``nodes[j]`` at ``times[k]``; probes
    are aliases onto nodes. ``currents`` maps MOSFET names to drain
    currents when they were recorded.
    """

    times: np.ndarray
    nodes: tuple[str, ...]
    volts: np.ndarray
    probes: tuple[tuple[str, str], ...] = ()
    currents: Optional[dict[str, np.ndarray]] = None

    def __post_init__(self):
        if self.volts.shape != (len(self.times), len(self.nodes)):
            raise ValueError("voltage matrix does not match times x nodes")
        if not np.all(np.isfinite(self.volts)):
            raise ValueError("waveform contains non-finite values")

    def v(self, node: str) -> np.ndarray:
        return self.volts[:, self.nodes.index(node)]

    def probe(self, alias: str) -> np.ndarray:
        for a, node in self.probes:
            if a == alias:
                return self.v(node)
        raise KeyError(f"no probe named {alias!r}")

    @property
    def probe_names(self) -> list[str]:
        return [a for a, _ in self.probes]

    def to_csv(self, path, columns: Optional[list[str]] = None) -> None:
        """Write ``time,<probe1>,...`` with full double precision."""
        cols = columns or self.probe_names
        data = [self.probe(c) if c in self.probe_names else self.v(c) for c in cols]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", *cols])
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t)), *(repr(float(d[k])) for d in data)])

    def currents_to_csv(self, path) -> None:
        if not self.currents:
            raise ValueError("waveform has no recorded currents")
        names = list(self.currents)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", *names])
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t)), *(repr(float(self.currents[n][k])) for n in names)])


def read_waveform_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Inverse of :meth:`Waveform.to_csv`: ``(times, {column: values})``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.array([[float(x) for x in r] for r in body]) if body else np.zeros((0, len(header)))
    return arr[:, 0], {h: arr[:, i] for i, h in enumerate(header) if i > 0}


# --- compilation --------------------------------------------------------------

@dataclass
class Compiled:
    """Packed arrays consumed by the compiled kernel."""

    netlist: Netlist
    nodes: tuple[str, ...]
    topo: np.ndarray
    par: np.ndarray
    node_map: np.ndarray
    node_sign: np.ndarray
    gmin: float
    src: tuple
    capn: np.ndarray
    capc: np.ndarray
    n_unknowns: int
    n_free: int
    free_nodes: list[str]
    caps: list[Capacitor]
    branch_sources: list[str] = field(default_factory=list)

    @property
    def head(self) -> tuple:
        return (self.topo, self.par, self.node_map, self.node_sign, self.gmin)


def compile_netlist(n: Netlist, gmin: float = 1e-12) -> Compiled:
    nodes = n.nodes
    idx = {nd: i for i, nd in enumerate(nodes)}
    nn = len(nodes)
    vsrcs = [d for d in n.devices if isinstance(d, Source) and not d.spec.is_current]
    vindex = {s.name: k for k, s in enumerate(vsrcs)}
    node_map = -np.ones((nn, 2), dtype=np.int64)
    node_sign = np.ones(nn)
    floating = []
    for k, s in enumerate(vsrcs):
        p, m = s.pos, s.neg
        if m == GROUND and p != GROUND and node_map[idx[p], 1] < 0:
            node_map[idx[p], 1] = k
        elif p == GROUND and m != GROUND and node_map[idx[m], 1] < 0:
            node_map[idx[m], 1] = k
            node_sign[idx[m]] = -1.0
        else:
            floating.append(s)
    free_nodes = []
    for i, nd in enumerate(nodes):
        if nd != GROUND and node_map[i, 1] < 0:
            node_map[i, 0] = len(free_nodes)
            free_nodes.append(nd)
    n_free = len(free_nodes)
    branch = {s.name: n_free + j for j, s in enumerate(floating)}
    topo, par, caps = [], [], []
    for d in n.devices:
        row = np.zeros(6)
        if isinstance(d, Mosfet):
            p = d.params
            topo.append([K.K_MOS, idx[d.drain], idx[d.gate], idx[d.source]])
            row[:] = [p.sign, p.vth_mag, p.i_spec, p.n_slope, p.lambda_, p.u_t]
        elif isinstance(d, Capacitor):
            topo.append([K.K_CAP, idx[d.spec.node_a], idx[d.spec.node_b], 0])
            row[0] = d.spec.c
            caps.append(d)
        elif isinstance(d, Resistor):
            topo.append([K.K_RES, idx[d.node_a], idx[d.node_b], 0])
            row[0] = 1.0 / d.r
        elif d.spec.is_current:
            topo.append([K.K_ISRC, idx[d.pos], idx[d.neg], 0])
            row[0] = d.spec.value
        elif d.name in branch:
            topo.append([K.K_VSRC, idx[d.pos], idx[d.neg], branch[d.name]])
            row[0] = vindex[d.name]
        else:
            continue
        par.append(row)
    tables = [s.spec.table() for s in vsrcs]
    vlen = np.array([len(t[0]) for t in tables], dtype=np.int64)
    voff = (np.concatenate([[0], np.cumsum(vlen)[:-1]]).astype(np.int64)
            if tables else np.zeros(0, np.int64))
    vt = np.concatenate([t[0] for t in tables]) if tables else np.zeros(0)
    vv = np.concatenate([t[1] for t in tables]) if tables else np.zeros(0)
    capn = np.array([[idx[c.spec.node_a], idx[c.spec.node_b]] for c in caps],
                    dtype=np.int64).reshape(-1, 2)
    capc = np.array([c.spec.c for c in caps], dtype=np.float64)
    return Compiled(
        n, nodes,
        np.array(topo, dtype=np.int64).reshape(-1, 4),
        np.array(par, dtype=np.float64).reshape(-1, 6),
        node_map, node_sign, float(gmin),
        (np.asarray(vt, np.float64), np.asarray(vv, np.float64), voff, vlen),
        capn, capc, n_free + len(floating), n_free, free_nodes, caps,
        [s.name for s in floating])


def _full_voltages(c: Compiled, x: np.ndarray, t: float) -> np.ndarray:
    vfull = np.zeros(len(c.nodes))
    vnow = np.zeros(len(c.src[2]))
    K.set_time(c.node_map, c.node_sign, *c.src, t, 1.0, vfull, vnow)
    for i in range(len(c.nodes)):
        u = c.node_map[i, 0]
        if u >= 0:
            vfull[i] = x[u]
    return vfull


def _residual(c: Compiled, x, t, dc, geq, ihist):
    topo, par, nodes, sign, gmin = c.head
    return K.residual_at(topo, par, nodes, sign, gmin, *c.src, x, t, dc, geq, ihist)


def _worst_node(c: Compiled, F: np.ndarray) -> tuple[str, float]:
    if c.n_free == 0:
        return GROUND, 0.0
    j = int(np.argmax(np.abs(F[:c.n_free])))
    return c.free_nodes[j], float(F[j])


# --- DC -----------------------------------------------------------------------

def dc_operating_point(n: Netlist, *, t: float = 0.0, gmin: float = 1e-12,
                       v_abstol: float = 1e-6, v_reltol: float = 1e-6, i_abstol: float = 1e-9,
                       max_iters: int = 100, steps: int = 10) -> dict[str, float]:
    """Static solution with capacitors open, node name -> volts.

    Plain Newton from zero first; on failure the independent sources are
    ramped from 0 to 100 % in ``steps`` increments.
    """
    c = compile_netlist(n, gmin)
    x = _dc_solve(c, t, gmin, v_abstol, v_reltol, i_abstol, max_iters, steps)
    v = _full_voltages(c, x, t)
    return {nd: float(v[i]) for i, nd in enumerate(c.nodes)}


def _dc_solve(c, t, gmin, abstol, reltol, itol, max_iters, steps, vlimit=0.3):
    x = np.zeros(c.n_unknowns)
    topo, par, nodes, sign, g = c.head
    args = (topo, par, nodes, sign, g, c.n_free, *c.src, x, t)
    status, _, _, F = K.dc_solve(*args, 1.0, abstol, reltol, itol, max_iters, vlimit)
    if status == K.OK:
        return x
    x[:] = 0.0
    for k in range(1, steps + 1):
        status, _, _, F = K.dc_solve(*args, k / steps, abstol, reltol, itol, max_iters, vlimit)
        if status != K.OK:
            node, r = _worst_node(c, F)
            raise ConvergenceError(
                f"DC operating point failed at source scale {k / steps:.1f}: "
                f"worst node {node!r}, residual {r:.3e} A", time=t, node=node, residual=r)
    return x


# --- transient ----------------------------------------------------------------

Monitor = Callable[[np.ndarray, np.ndarray, tuple], bool]


def transient(n: Netlist, cfg: TransientConfig, initial: Optional[Mapping[str, float]] = None,
              monitor: Optional[Monitor] = None) -> tuple[Waveform, SolverStats]:
    """Fixed-step transient from ``t = 0`` to ``cfg.t_stop``.

    ``initial`` gives explicit node voltages (unlisted free nodes start at
    0 V); otherwise the DC operating point is used. ``monitor`` is called
    after each chunk of steps with ``(times, volts, nodes)`` for that chunk
    and may return True to end the run early.
    """
    nsteps = int(math.ceil(cfg.t_stop / cfg.dt - 1e-9))
    if nsteps > cfg.max_steps:
        raise StepBudgetError(f"t_stop/dt = {nsteps} steps exceeds the budget of {cfg.max_steps}")
    c = compile_netlist(n, cfg.gmin)
    if initial is None:
        x = _dc_solve(c, 0.0, cfg.gmin, cfg.v_abstol, cfg.v_reltol, cfg.i_abstol, 100, 10)
    else:
        unknown = set(initial) - set(c.nodes)
        if unknown:
            raise KeyError(f"initial values for unknown nodes {sorted(unknown)}")
        x = np.zeros(c.n_unknowns)
        for j, nd in enumerate(c.free_nodes):
            x[j] = float(initial.get(nd, 0.0))
    v0 = _full_voltages(c, x, 0.0)
    ncap = len(c.caps)
    cap_v = np.array([v0[c.capn[k, 0]] - v0[c.capn[k, 1]] for k in range(ncap)], dtype=np.float64)
    cap_i = np.zeros(ncap)
    stats_arr = np.zeros(4)
    chunks_t = [np.zeros(1)]
    chunks_v = [v0[None, :]]
    done = 0
    first = True
    while done < nsteps:
        m = min(cfg.chunk_steps, nsteps - done)
        out = np.empty((m, len(c.nodes)))
        t0 = done * cfg.dt
        status, k, t_fail = K.run_steps(
            *c.head, c.n_free, *c.src, c.capn, c.capc, x, t0, cfg.dt, m, cfg.method, first and cfg.method == K.TRAP, cap_v, cap_i,
            cfg.v_abstol, cfg.v_reltol, cfg.i_abstol, cfg.max_newton_iters, cfg.v_limit,
            cfg.max_split, cfg.dv_max, cfg.dv_levels, out, stats_arr)
        first = False
        times = (done + 1 + np.arange(k)) * cfg.dt
        if status != K.OK:
            geq = np.array([cc.spec.c / cfg.dt for cc in c.caps])
            F = _residual(c, x, t_fail, False, geq, -geq * cap_v)
            node, r = _worst_node(c, F)
            raise ConvergenceError(
                f"Newton failed at t = {t_fail:.6e} s: worst node {node!r}, residual {r:.3e} A",
                time=t_fail, node=node, residual=r)
        chunks_t.append(times)
        chunks_v.append(out)
        done += m
        if monitor is not None and monitor(times, out, c.nodes):
            break
    times = np.concatenate(chunks_t)
    volts = np.concatenate(chunks_v)
    stats = SolverStats(int(stats_arr[0]), int(stats_arr[1]), float(stats_arr[2]), int(stats_arr[3]))
    wf = Waveform(times, c.nodes, volts, n.probes)
    if cfg.record_currents:
        wf.currents = mosfet_currents(n, wf)
    return wf, stats


def mosfet_currents(n: Netlist, wf: Waveform) -> dict[str, np.ndarray]:
    out = {}
    for m in n.mosfets:
        out[m.name] = drain_current(m.params, wf.v(m.gate), wf.v(m.drain), wf.v(m.source))
    return out


# --- verification hook --------------------------------------------------------

@dataclass(frozen=True)
class CompanionState:
    """Capacitor companion models for one step: ``i = geq * v + ihist``."""

    geq: np.ndarray
    ihist: np.ndarray

    @classmethod
    def backward_euler(cls, n: Netlist, dt: float, prev: Mapping[str, float]) -> "CompanionState":
        caps = [d for d in n.devices if isinstance(d, Capacitor)]
        geq = np.array([c.spec.c / dt for c in caps])
        vprev = np.array([prev[c.spec.node_a] - prev[c.spec.node_b] for c in caps])
        return cls(geq, -geq * vprev)

    @classmethod
    def trapezoidal(cls, n: Netlist, dt: float, prev: Mapping[str, float],
                    prev_currents: np.ndarray) -> "CompanionState":
        caps = [d for d in n.devices if isinstance(d, Capacitor)]
        geq = np.array([2 * c.spec.c / dt for c in caps])
        vprev = np.array([prev[c.spec.node_a] - prev[c.spec.node_b] for c in caps])
        return cls(geq, -geq * vprev - np.asarray(prev_currents, dtype=float))


def kcl_residual(n: Netlist, voltages: Mapping[str, float],
                 companion: Optional[CompanionState] = None, t: float = 0.0,
                 branch_currents: Optional[Mapping[str, float]] = None) -> dict[str, float]:
    """Net current leaving each solved node (amperes) at the given state.

    Without ``companion`` the capacitors are open (DC). Nodes pinned by a
    grounded voltage source carry no equation and are omitted. Branch
    currents of floating voltage sources default to zero.
    """
    c = compile_netlist(n)
    x = np.zeros(c.n_unknowns)
    for j, nd in enumerate(c.free_nodes):
        x[j] = float(voltages[nd])
    for j, name in enumerate(c.branch_sources):
        x[c.n_free + j] = float((branch_currents or {}).get(name, 0.0))
    if companion is None:
        F = _residual(c, x, t, True, np.zeros(0), np.zeros(0))
    else:
        F = _residual(c, x, t, False, np.asarray(companion.geq, float),
                      np.asarray(companion.ihist, float))
    return {nd: float(F[j]) for j, nd in enumerate(c.free_nodes)}
