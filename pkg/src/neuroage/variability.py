"""Time-zero threshold mismatch and Monte-Carlo firing-rate statistics.

Each run draws one Gaussian threshold offset per transistor with Pelgrom
scaling ``sigma = a_vt / sqrt(w l)``. The random stream of every draw is
keyed by ``(seed, run index, device name)``, so any run can be replayed on
its own and the batch result does not depend on how runs are scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from ._parallel import ordered_map
from .analysis import (EXPERIMENT_TRANSIENT, CircuitParams, RunLength, build_circuit,
                       simulate)
from .aging import DeltaVthMap
from .netlist import Mosfet, Netlist, apply_delta_vth
from .solver import SolverError, TransientConfig

STATUS_OK = "ok"
STATUS_NO_SPIKE = "no_spike"
STATUS_FAIL = "solver_fail"

# Monte-Carlo runs only need the steady rate, which a dozen spikes pin down
MC_RUN_LENGTH = RunLength(t_min=1e-3, t_max=20e-3, target_spikes=12)


@dataclass(frozen=True)
class MismatchParams:
    """Pelgrom coefficient in mV*um and the 64-bit batch seed."""

    a_vt: float = 3.5
    seed: int = 0

    def __post_init__(self):
        if not self.a_vt > 0:
            raise ValueError("a_vt must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def vth_sigma(m: Mosfet, a_vt: float) -> float:
    """Offset standard deviation of one transistor, in volts."""
    return a_vt / math.sqrt(m.params.w * m.params.l) * 1e-3


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def device_stream(seed: int, run_index: int, name: str) -> np.random.Generator:
    """Philox generator keyed by ``(seed, run_index, name)``."""
    ss = np.random.SeedSequence([int(seed), int(run_index), _name_key(name)])
    return np.random.Generator(np.random.Philox(ss))


def sample_vth_offsets(n: Netlist, p: MismatchParams, run_index: int) -> DeltaVthMap:
    """Signed threshold offsets (volts) of every MOSFET for one run."""
    if run_index < 0:
        raise ValueError("run_index must be non-negative")
    return {m.name: float(vth_sigma(m, p.a_vt) * device_stream(p.seed, run_index, m.name).standard_normal())
            for m in n.mosfets}


# --- probit ---------------------------------------------------------------------

def blom_positions(n: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    return (i - 0.375) / (n + 0.25)


def probit_series(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sorted samples against standard-normal quantiles of Blom positions."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 2:
        raise ValueError("probit series needs at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    return np.sort(x), ndtri(blom_positions(len(x)))


def quantile_correlation(values: np.ndarray, quantiles: np.ndarray) -> float:
    """Pearson correlation of a probit series (1 for a perfect normal fit)."""
    v = values - values.mean()
    q = quantiles - quantiles.mean()
    den = math.sqrt(float(v @ v) * float(q @ q))
    return float(v @ q / den) if den > 0 else math.nan


# --- Monte Carlo ------------------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    circuit: str = "ah"
    n_runs: int = 1000
    params: Optional[CircuitParams] = None
    cfg: TransientConfig = EXPERIMENT_TRANSIENT
    run: RunLength = MC_RUN_LENGTH

    def __post_init__(self):
        if self.n_runs < 2:
            raise ValueError("n_runs must be >= 2")


@dataclass
class McResult:
    f_spk: np.ndarray
    status: list[str]
    mean: float
    sd: float
    cv: float
    probit_values: np.ndarray
    probit_quantiles: np.ndarray
    quantile_correlation: float
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.status)


def _one_run(args) -> tuple[float, str]:
    base, cfg, p, k = args
    n = apply_delta_vth(base, sample_vth_offsets(base, p, k))
    try:
        sim = simulate(n, cfg.run, cfg.cfg)
    except SolverError:
        return 0.0, STATUS_FAIL
    f = sim.frequency
    return (0.0, STATUS_NO_SPIKE) if f.no_spike else (f.f_spk, STATUS_OK)


def summarize(f_spk: Sequence[float], status: Sequence[str]) -> McResult:
    """Moments and probit data from per-run rates; only ``ok`` runs contribute."""
    f = np.asarray(f_spk, dtype=float)
    st = list(status)
    ok = np.array([s == STATUS_OK for s in st], dtype=bool)
    counts = {s: sum(1 for x in st if x == s) for s in (STATUS_OK, STATUS_NO_SPIKE, STATUS_FAIL)}
    good = f[ok]
    nan = math.nan
    mean = float(good.mean()) if len(good) else nan
    sd = float(good.std(ddof=1)) if len(good) > 1 else nan
    cv = sd / mean if len(good) > 1 and mean else nan
    if len(good) >= 2:
        vals, qs = probit_series(good)
        qc = quantile_correlation(vals, qs)
    else:
        vals, qs, qc = np.sort(good), np.full(len(good), nan), nan
    return McResult(f, st, mean, sd, cv, vals, qs, qc, counts)


def run_monte_carlo(cfg: McConfig, p: MismatchParams, jobs: Optional[int] = None) -> McResult:
    """``cfg.n_runs`` mismatched fresh transients, aggregated by run index."""
    base = build_circuit(cfg.circuit, cfg.params)
    res = ordered_map(_one_run, [(base, cfg, p, k) for k in range(cfg.n_runs)], jobs)
    return summarize([r[0] for r in res], [r[1] for r in res])


# --- CSV --------------------------------------------------------------------------

def _w(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def write_mc_runs_csv(path, r: McResult) -> None:
    _w(path, ["run", "fspk_hz", "status"],
       ([k, repr(float(f)), s] for k, (f, s) in enumerate(zip(r.f_spk, r.status))))


def write_probit_csv(path, r: McResult) -> None:
    _w(path, ["value_hz", "normal_quantile"],
       ([repr(float(v)), repr(float(q))] for v, q in zip(r.probit_values, r.probit_quantiles)))


SUMMARY_KEYS = ["n_runs", "spiking_runs", "no_spike_runs", "failed_runs", "mean_hz", "sd_hz", "cv",
                "quantile_correlation"]


def write_mc_summary_csv(path, r: McResult) -> None:
    vals = [r.n_runs, r.counts[STATUS_OK], r.counts[STATUS_NO_SPIKE], r.counts[STATUS_FAIL],
            repr(r.mean), repr(r.sd), repr(r.cv), repr(r.quantile_correlation)]
    _w(path, ["key", "value"], zip(SUMMARY_KEYS, vals))


def read_mc_runs_csv(path) -> McResult:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if [int(r["run"]) for r in rows] != list(range(len(rows))):
        raise ValueError("run column must enumerate 0..n-1")
    return summarize([float(r["fspk_hz"]) for r in rows], [r["status"] for r in rows])


def read_mc_summary_csv(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        return {r["key"]: float(r["value"]) for r in csv.DictReader(fh)}
