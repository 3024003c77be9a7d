"""``neuroage`` command line: simulate, age, sweep and Monte-Carlo runs.

Configuration files are flat ``section.key = value`` text; command-line
flags override file values. Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import svg
from ._parallel import JOBS_ENV, default_jobs
from .aging import SECONDS_PER_YEAR, AgingParams, age_netlist, write_aging_csv
from .analysis import (CIRCUITS, EXPERIMENT_TRANSIENT, DeviationReport, RunLength, SweepSpec,
                       build_circuit, percent_deviation, run_sweep, simulate, write_sweep_csv)
from .netlist import AH_SIZES, VIF_SIZES, AhParams, VifParams, parse_value
from .solver import SolverError, TransientConfig
from .variability import (MC_RUN_LENGTH, McConfig, MismatchParams, run_monte_carlo,
                          write_mc_runs_csv, write_mc_summary_csv, write_probit_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    circuit: str = "ah"
    ah: AhParams = field(default_factory=AhParams)
    vif: VifParams = field(default_factory=VifParams)
    transient: TransientConfig = EXPERIMENT_TRANSIENT
    run: RunLength = RunLength()
    aging: AgingParams = field(default_factory=AgingParams)
    mismatch: MismatchParams = field(default_factory=MismatchParams)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    mc_runs: int = 1000
    mc_run: RunLength = MC_RUN_LENGTH
    out: str = "out"
    jobs: Optional[int] = None

    def circuits(self) -> list[str]:
        return ["ah", "vif"] if self.circuit == "both" else [self.circuit]

    def params(self, circuit: str):
        return self.ah if circuit == "ah" else self.vif


# --- config grammar ----------------------------------------------------------------

_PARAM_FIELDS = {
    "ah": {f.name for f in fields(AhParams)} - {"sizes", "nmos", "pmos"},
    "vif": {f.name for f in fields(VifParams)} - {"sizes", "nmos", "pmos"},
}
_SIZES = {"ah": AH_SIZES, "vif": VIF_SIZES}
_TRANSIENT = {"dt", "integrator", "v_abstol", "v_reltol", "i_abstol", "max_newton_iters", "gmin",
              "v_limit", "max_split", "dv_max", "dv_levels"}
_RUN = {"t_min", "t_max", "target_spikes"}
_AGING = {"t_life_years", "phi_bti", "n_bti", "phi_hci", "m_hci", "bti_stress_fraction",
          "hci_vds_fraction", "phi_bti_nmos", "phi_bti_pmos"}
_INTS = {"max_newton_iters", "max_split", "dv_levels", "target_spikes", "n_points", "n_runs", "seed", "jobs"}
_STRINGS = {"integrator", "spacing", "circuit", "out"}


def _value(key: str, leaf: str, raw: str):
    if leaf in _STRINGS:
        return raw
    try:
        v = parse_value(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r}") from None
    if leaf in _INTS:
        if v != int(v):
            raise ConfigError(f"config key {key!r} needs an integer, got {raw!r}")
        return int(v)
    return v


def parse_config(text: str) -> dict[str, object]:
    """``key = value`` lines into a flat dict; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k or not v:
            raise ConfigError(f"line {lineno}: empty key or value")
        if k in out:
            raise ConfigError(f"config key {k!r} given twice")
        out[k] = v
    return out


def apply_config(cfg: RunConfig, entries: dict[str, str]) -> RunConfig:
    """Fold parsed entries into ``cfg``; unknown keys raise :class:`ConfigError`."""
    ah, vif = {}, {}
    sizes = {"ah": dict(cfg.ah.sizes), "vif": dict(cfg.vif.sizes)}
    tr, run, mc_run, ag, mm, sw = {}, {}, {}, {}, {}, {}
    top = {}
    for key, raw in entries.items():
        parts = key.split(".")
        leaf = parts[-1]
        if len(parts) == 1 and key in ("circuit", "out", "seed", "jobs"):
            top[key] = _value(key, leaf, raw)
        elif len(parts) == 2 and parts[0] in _PARAM_FIELDS and leaf in _PARAM_FIELDS[parts[0]]:
            (ah if parts[0] == "ah" else vif)[leaf] = _value(key, leaf, raw)
        elif len(parts) == 3 and parts[0] in _SIZES and parts[1] == "size":
            if leaf not in _SIZES[parts[0]]:
                raise ConfigError(f"unknown config key {key!r}: no device {leaf!r} in {parts[0]}")
            wl = raw.replace(",", " ").split()
            if len(wl) != 2:
                raise ConfigError(f"config key {key!r} needs 'w, l' in micrometres")
            sizes[parts[0]][leaf] = tuple(_value(key, "w", x) for x in wl)
        elif len(parts) == 2 and parts[0] == "transient" and leaf in _TRANSIENT | _RUN:
            (tr if leaf in _TRANSIENT else run)[leaf] = _value(key, leaf, raw)
        elif len(parts) == 2 and parts[0] == "aging" and leaf in _AGING:
            ag[leaf] = _value(key, leaf, raw)
        elif len(parts) == 2 and parts[0] == "mismatch" and leaf in ("a_vt", "seed"):
            mm[leaf] = _value(key, leaf, raw)
        elif len(parts) == 2 and parts[0] == "sweep" and leaf in ("i_min", "i_max", "n_points", "spacing"):
            sw[leaf] = _value(key, leaf, raw)
        elif len(parts) == 2 and parts[0] == "mc" and leaf in _RUN | {"n_runs"}:
            if leaf == "n_runs":
                top["mc_runs"] = _value(key, leaf, raw)
            else:
                mc_run[leaf] = _value(key, leaf, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        if "t_life_years" in ag:
            ag["t_life"] = ag.pop("t_life_years") * SECONDS_PER_YEAR
        seed = top.pop("seed", None)
        if seed is not None:
            mm.setdefault("seed", seed)
        return replace(
            cfg,
            ah=replace(cfg.ah, sizes=sizes["ah"], **ah),
            vif=replace(cfg.vif, sizes=sizes["vif"], **vif),
            transient=replace(cfg.transient, **tr),
            run=replace(cfg.run, **run),
            mc_run=replace(cfg.mc_run, **mc_run),
            aging=replace(cfg.aging, **ag),
            mismatch=replace(cfg.mismatch, **mm),
            sweep=replace(cfg.sweep, **sw),
            **top,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _i_value(text: str) -> float:
    try:
        return parse_value(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad current {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--circuit", choices=["ah", "vif", "both"])
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help=f"worker processes (default: ${JOBS_ENV} or 1)")
    common.add_argument("--i-inj", type=_i_value, help="injected current, e.g. 1u")
    p = argparse.ArgumentParser(prog="neuroage", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="one fresh transient")
    a = sub.add_parser("age", parents=[common], help="fresh vs aged comparison")
    a.add_argument("--years", type=float)
    s = sub.add_parser("sweep", parents=[common], help="fresh/aged sweep over the injected current")
    s.add_argument("--years", type=float)
    s.add_argument("--points", type=int)
    s.add_argument("--spacing", choices=["log", "linear"])
    m = sub.add_parser("mc", parents=[common], help="Monte-Carlo mismatch runs")
    m.add_argument("--runs", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        cfg = apply_config(cfg, parse_config(text))
    try:
        if args.circuit:
            cfg = replace(cfg, circuit=args.circuit)
        if args.out:
            cfg = replace(cfg, out=args.out)
        if args.seed is not None:
            cfg = replace(cfg, mismatch=replace(cfg.mismatch, seed=args.seed))
        if args.jobs is not None:
            cfg = replace(cfg, jobs=args.jobs)
        elif cfg.jobs is None:
            cfg = replace(cfg, jobs=default_jobs())
        if args.i_inj is not None:
            cfg = replace(cfg, ah=replace(cfg.ah, i_inj=args.i_inj), vif=replace(cfg.vif, i_inj=args.i_inj))
        if getattr(args, "years", None) is not None:
            cfg = replace(cfg, aging=AgingParams.from_years(args.years, **{
                f.name: getattr(cfg.aging, f.name) for f in fields(AgingParams) if f.name != "t_life"}))
        if getattr(args, "points", None) is not None:
            cfg = replace(cfg, sweep=replace(cfg.sweep, n_points=args.points))
        if getattr(args, "spacing", None) is not None:
            cfg = replace(cfg, sweep=replace(cfg.sweep, spacing=args.spacing))
        if getattr(args, "runs", None) is not None:
            cfg = replace(cfg, mc_runs=args.runs)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if cfg.circuit not in (*CIRCUITS, "both"):
        raise ConfigError(f"circuit must be ah, vif or both, got {cfg.circuit!r}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if cfg.mc_runs < 2:
        raise ConfigError(f"mc runs must be >= 2, got {cfg.mc_runs}")
    return cfg


# --- commands ------------------------------------------------------------------------

def _fmtf(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _kv(d: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in d.items())


def _write_kv(path: Path, d: dict) -> None:
    path.write_text("key,value\n" + "".join(f"{k},{v}\n" for k, v in d.items()))


def _outdir(cfg: RunConfig, circuit: str) -> Path:
    d = Path(cfg.out) / circuit
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_simulate(cfg: RunConfig) -> int:
    for c in cfg.circuits():
        n = build_circuit(c, cfg.params(c))
        sim = simulate(n, cfg.run, replace(cfg.transient, record_currents=True))
        d = _outdir(cfg, c)
        sim.waveform.to_csv(d / "waveform.csv")
        sim.waveform.currents_to_csv(d / "currents.csv")
        f = sim.frequency
        summary = {"circuit": c, "i_inj_a": _fmtf(cfg.params(c).i_inj), "f_spk_hz": _fmtf(f.f_spk),
                   "n_spikes": f.n_spikes, "no_spike": str(f.no_spike).lower(),
                   "mean_isi_s": _fmtf(f.mean_isi), "isi_cv": _fmtf(f.isi_cv),
                   "t_sim_s": _fmtf(sim.waveform.times[-1]),
                   "max_kcl_residual_a": _fmtf(sim.stats.max_kcl_residual)}
        _write_kv(d / "summary.csv", summary)
        print(_kv(summary))
    return EXIT_OK


def cmd_age(cfg: RunConfig) -> int:
    for c in cfg.circuits():
        n = build_circuit(c, cfg.params(c))
        fresh = simulate(n, cfg.run, cfg.transient)
        r = age_netlist(n, fresh.waveform, cfg.aging)
        aged = simulate(r.aged, cfg.run, cfg.transient)
        d = _outdir(cfg, c)
        write_aging_csv(d / "aging.csv", r.stress, cfg.aging)
        i = cfg.params(c).i_inj
        if fresh.frequency.no_spike:
            rep = DeviationReport(i, 0.0, aged.frequency.f_spk, None, aged.frequency.no_spike,
                                  error="fresh circuit does not spike")
        else:
            rep = percent_deviation(fresh.frequency, aged.frequency, i)
        write_sweep_csv(d / "deviation.csv", [rep])
        summary = {"circuit": c, "i_inj_a": _fmtf(i), "years": _fmtf(cfg.aging.t_life / SECONDS_PER_YEAR),
                   "fresh_fspk_hz": _fmtf(rep.fresh_f_spk), "aged_fspk_hz": _fmtf(rep.aged_f_spk),
                   "percent_deviation": _fmtf(rep.percent_deviation),
                   "aged_no_spike": str(rep.aged_no_spike).lower()}
        if rep.error:
            summary["note"] = rep.error.replace(" ", "_")
        print(_kv(summary))
    return EXIT_OK


def _sweep_chart(results: dict[str, list[DeviationReport]]) -> svg.Chart:
    ch = svg.Chart("Aged vs fresh firing rate", "injected current (A)", "deviation (%)", log_x=True)
    for c, reps in results.items():
        ok = [r for r in reps if r.percent_deviation is not None]
        ch.series.append(svg.Series(c.upper(), [r.i_inj for r in ok], [r.percent_deviation for r in ok]))
        ch.flags += [(r.i_inj, f"{c.upper()} aged no-spike") for r in reps if r.aged_no_spike]
    return ch


def cmd_sweep(cfg: RunConfig) -> int:
    results = {}
    for c in cfg.circuits():
        reps = run_sweep(c, cfg.params(c), cfg.sweep, cfg.aging, cfg.transient, cfg.run, cfg.jobs)
        write_sweep_csv(_outdir(cfg, c) / "sweep.csv", reps)
        results[c] = reps
        for r in reps:
            row = {"circuit": c, "i_inj_a": _fmtf(r.i_inj), "fresh_fspk_hz": _fmtf(r.fresh_f_spk),
                   "aged_fspk_hz": _fmtf(r.aged_f_spk), "percent_deviation": _fmtf(r.percent_deviation),
                   "aged_no_spike": str(r.aged_no_spike).lower()}
            if r.error:
                row["note"] = r.error.replace(" ", "_")
            print(_kv(row))
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    svg.write(Path(cfg.out) / "sweep.svg", _sweep_chart(results))
    return EXIT_OK


def _mc_charts(c: str, r) -> tuple[svg.Chart, svg.Chart]:
    good = r.f_spk[np.array([s == "ok" for s in r.status])]
    h = svg.Chart(f"{c.upper()} firing-rate distribution", "f_spk (Hz)", "runs")
    p = svg.Chart(f"{c.upper()} probit plot", "f_spk (Hz)", "standard normal quantile")
    if len(good) >= 2:
        counts, edges = np.histogram(good, bins=max(5, int(math.sqrt(len(good)))))
        h.bars.append(svg.Bars(list(edges), list(counts)))
        if r.sd > 0:
            x, y = svg.gaussian_curve(r.mean, r.sd, len(good), edges[1] - edges[0], edges[0], edges[-1])
            h.series.append(svg.Series("gaussian fit", list(x), list(y), markers=False))
        p.series.append(svg.Series("runs", list(r.probit_values), list(r.probit_quantiles), line=False))
        if r.sd > 0:
            q = np.array([r.probit_quantiles[0], r.probit_quantiles[-1]])
            p.series.append(svg.Series("normal", list(r.mean + r.sd * q), list(q), markers=False))
    return h, p


def cmd_mc(cfg: RunConfig) -> int:
    for c in cfg.circuits():
        mc = McConfig(c, cfg.mc_runs, cfg.params(c), cfg.transient, cfg.mc_run)
        r = run_monte_carlo(mc, cfg.mismatch, cfg.jobs)
        d = _outdir(cfg, c)
        write_mc_runs_csv(d / "mc_runs.csv", r)
        write_probit_csv(d / "mc_probit.csv", r)
        write_mc_summary_csv(d / "mc_summary.csv", r)
        h, p = _mc_charts(c, r)
        svg.write(d / "mc_histogram.svg", h)
        svg.write(d / "mc_probit.svg", p)
        print(_kv({"circuit": c, "runs": r.n_runs, "spiking": r.counts["ok"],
                   "no_spike": r.counts["no_spike"], "solver_fail": r.counts["solver_fail"],
                   "mean_hz": _fmtf(r.mean), "sd_hz": _fmtf(r.sd), "cv": _fmtf(r.cv),
                   "quantile_correlation": _fmtf(r.quantile_correlation)}))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "age": cmd_age, "sweep": cmd_sweep, "mc": cmd_mc}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError) as e:
        print(f"neuroage: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except SolverError as e:
        print(f"neuroage: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
