"""Device models: an EKV-style all-region MOSFET plus linear element specs.

The MOSFET expression is a single smooth function of the terminal voltages,
so the Newton solver always sees continuous currents and derivatives, from
deep subthreshold (leak and refractory devices) to strong inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numba
import numpy as np

from ._kernel import ekv_core

U_T_300K = 0.02585

NMOS = "nmos"
PMOS = "pmos"


@dataclass(frozen=True)
class MosfetParams:
    """Compact-model card for one transistor.

    ``w`` and ``l`` are in micrometres. ``vth0`` is signed the SPICE way
    (negative for PMOS). ``delta_vth`` is a threshold *magnitude* increase:
    positive values always weaken the device regardless of polarity.
    """

    polarity: Literal["nmos", "pmos"] = NMOS
    vth0: float = 0.45
    kp: float = 400e-6
    w: float = 0.45
    l: float = 0.045
    lambda_: float = 0.2
    n_slope: float = 1.4
    u_t: float = U_T_300K
    delta_vth: float = 0.0

    def __post_init__(self):
        if self.polarity not in (NMOS, PMOS):
            raise ValueError(f"polarity must be 'nmos' or 'pmos', got {self.polarity!r}")
        if not (self.w > 0 and self.l > 0 and self.kp > 0 and self.u_t > 0):
            raise ValueError("w, l, kp and u_t must be positive")
        if self.n_slope < 1:
            raise ValueError("n_slope must be >= 1")

    @property
    def sign(self) -> float:
        return 1.0 if self.polarity == NMOS else -1.0

    @property
    def vth_eff(self) -> float:
        """Signed effective threshold including the shift."""
        if self.polarity == NMOS:
            return self.vth0 + self.delta_vth
        return self.vth0 - self.delta_vth

    @property
    def vth_mag(self) -> float:
        """Threshold in the polarity-mirrored (NMOS-like) frame."""
        return self.sign * self.vth_eff

    @property
    def i_spec(self) -> float:
        return 2.0 * self.n_slope * self.kp * (self.w / self.l) * self.u_t**2

    def with_shift(self, dv: float) -> "MosfetParams":
        return replace(self, delta_vth=self.delta_vth + dv)


def default_nmos(**kw) -> MosfetParams:
    return MosfetParams(polarity=NMOS, vth0=0.45, kp=400e-6, **kw)


def default_pmos(**kw) -> MosfetParams:
    return MosfetParams(polarity=PMOS, vth0=-0.45, kp=200e-6, **kw)


@dataclass(frozen=True)
class CapacitorSpec:
    node_a: str
    node_b: str
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"capacitance must be positive, got {self.c}")


@dataclass(frozen=True)
class SourceSpec:
    """Independent source.

    ``kind`` is one of ``dc_current``, ``dc_voltage`` or ``pwl_voltage``.
    DC sources carry a single value; PWL sources carry (time, value)
    breakpoints and hold the end values outside the breakpoint range.
    """

    kind: Literal["dc_current", "dc_voltage", "pwl_voltage"]
    value: float = 0.0
    points: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("dc_current", "dc_voltage", "pwl_voltage"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "pwl_voltage":
            if not self.points:
                raise ValueError("PWL source needs at least one breakpoint")
            times = [t for t, _ in self.points]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("PWL breakpoints must be strictly increasing in time")

    @property
    def is_current(self) -> bool:
        return self.kind == "dc_current"

    def at(self, t: float) -> float:
        if self.kind != "pwl_voltage":
            return self.value
        ts = [p[0] for p in self.points]
        vs = [p[1] for p in self.points]
        return float(np.interp(t, ts, vs))

    def table(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoint table usable by the compiled kernel (DC is one point)."""
        if self.kind == "pwl_voltage":
            pts = np.asarray(self.points, dtype=np.float64)
            return pts[:, 0].copy(), pts[:, 1].copy()
        return np.zeros(1), np.array([self.value], dtype=np.float64)


def mosfet_eval(p: MosfetParams, v_g: float, v_d: float, v_s: float):
    """Evaluate the MOSFET at one bias point.

    Returns ``(i_d, g_m, g_ds, g_ms)`` with ``i_d`` flowing into the drain,
    ``g_m = dI/dVg``, ``g_ds = dI/dVd`` and ``g_ms = -dI/dVs`` (so that
    ``g_ms = g_m + g_ds``, there being no bulk terminal).
    """
    i, gm, gds, dis = ekv_core(p.sign, p.vth_mag, p.i_spec, p.n_slope, p.lambda_, p.u_t,
                               float(v_g), float(v_d), float(v_s))
    return i, gm, gds, -dis


@numba.njit(cache=True)
def _ekv_array(sign, vth, ispec, n, lam, ut, vg, vd, vs, out):
    for k in range(vg.shape[0]):
        out[k] = ekv_core(sign, vth, ispec, n, lam, ut, vg[k], vd[k], vs[k])[0]


def drain_current(p: MosfetParams, v_g, v_d, v_s) -> np.ndarray:
    """Vectorised drain current over aligned voltage arrays."""
    vg = np.ascontiguousarray(v_g, dtype=np.float64)
    vd = np.ascontiguousarray(v_d, dtype=np.float64)
    vs = np.ascontiguousarray(v_s, dtype=np.float64)
    out = np.empty_like(vg)
    _ekv_array(p.sign, p.vth_mag, p.i_spec, p.n_slope, p.lambda_, p.u_t, vg, vd, vs, out)
    return out


def mosfet_conductance_check(p: MosfetParams, v_g: float, v_d: float, v_s: float,
                             h: float = 1e-6) -> float:
    """Max relative error of the analytic g_m, g_ds against central differences.

    The relative error is taken against ``max(|analytic|, |numeric|, floor)``
    where the floor (1e-9 of the local current scale) keeps exactly-zero
    conductances from dividing by zero.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-7, 1e-4] V")
    i0, gm, gds, _ = mosfet_eval(p, v_g, v_d, v_s)
    fd_gm = (mosfet_eval(p, v_g + h, v_d, v_s)[0] - mosfet_eval(p, v_g - h, v_d, v_s)[0]) / (2 * h)
    fd_gds = (mosfet_eval(p, v_g, v_d + h, v_s)[0] - mosfet_eval(p, v_g, v_d - h, v_s)[0]) / (2 * h)
    floor = 1e-9 * max(abs(i0), p.i_spec * 1e-12) / p.u_t
    err = 0.0
    for a, b in ((gm, fd_gm), (gds, fd_gds)):
        scale = max(abs(a), abs(b), floor)
        err = max(err, abs(a - b) / scale)
    return err
