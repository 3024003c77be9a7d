import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neuroage.analysis import (EXPERIMENT_TRANSIENT, DeviationReport, FreshNotSpikingError,
                               FrequencyResult, PointJob, RunLength, SpikeDetector, SpikeTrain,
                               SweepSpec, build_circuit, detect_spikes, evaluate_point,
                               percent_deviation, read_sweep_csv, simulate, spike_frequency,
                               write_sweep_csv)
from neuroage.solver import Waveform
from oracles import hybrid_ah_frequency

VDD = 1.1


def trace(t, v):
    t = np.asarray(t, float)
    return Waveform(t, ("0", "spk"), np.stack([0 * t, np.asarray(v, float)], axis=1), (("spk", "spk"),))


def square_wave(period, n_periods, dt, duty=0.5):
    t = np.arange(int(round(n_periods * period / dt)) + 1) * dt
    phase = (t % period) / period
    return t, np.where(phase >= 1 - duty, VDD, 0.0)


# --- detection -------------------------------------------------------------------

def test_constant_trace_has_no_spikes():
    assert len(detect_spikes(trace([0, 1e-6, 2e-6], [0, 0, 0]), VDD)) == 0


def test_square_wave_edges_are_evenly_spaced():
    t, v = square_wave(10e-6, 10, 0.1e-6)
    train = detect_spikes(trace(t, v), VDD)
    assert len(train) == 10
    np.testing.assert_allclose(np.diff(train.spike_times), 10e-6, rtol=1e-9)


def test_glitch_without_rearm_is_ignored():
    t = np.arange(8) * 1e-6
    v = np.array([0.0, 1.1, 0.45, 0.55, 0.45, 0.2, 1.1, 0.0]) * (VDD / 1.1)
    train = detect_spikes(trace(t, v), VDD)
    # rising at t in (0,1) us and again after the dip below 0.3 VDD
    assert len(train) == 2
    assert train.spike_times[0] == pytest.approx(0.5e-6)
    assert train.spike_times[1] == pytest.approx(5e-6 + (0.55 - 0.2) / 0.9 * 1e-6)


def test_missing_probe():
    w = Waveform(np.array([0.0, 1.0]), ("0", "a"), np.zeros((2, 2)), (("a", "a"),))
    with pytest.raises(KeyError):
        detect_spikes(w, VDD)


@st.composite
def pulse_trains(draw):
    dt = 1e-8
    width = draw(st.integers(4, 20))
    gaps = draw(st.lists(st.integers(4, 60), min_size=0, max_size=25))
    v = [0.0] * draw(st.integers(1, 10))
    for g in gaps:
        v += [VDD] * width + [0.0] * g
    t = np.arange(len(v)) * dt
    return t, np.array(v), len(gaps)


@given(pulse_trains(), st.lists(st.integers(1, 400), max_size=6))
def test_detection_counts_pulses_exactly_and_chunking_is_transparent(data, cuts):
    t, v, count = data
    assert len(detect_spikes(trace(t, v), VDD)) == count
    det = SpikeDetector(VDD)
    edges = sorted({0, len(t), *[c for c in cuts if c < len(t)]})
    for a, b in zip(edges[:-1], edges[1:]):
        det.feed(t[a:b], v[a:b])
    one = SpikeDetector(VDD)
    one.feed(t, v)
    assert det.times == one.times


def test_spike_train_must_increase():
    with pytest.raises(ValueError):
        SpikeTrain(np.array([1.0, 1.0]))


# --- frequency ------------------------------------------------------------------

def test_empty_train_is_no_spike():
    f = spike_frequency(SpikeTrain(np.array([])))
    assert f.no_spike and f.f_spk == 0.0 and f.n_spikes == 0


def test_discard_two_then_average():
    f = spike_frequency(SpikeTrain(np.arange(1, 13) * 1e-6))
    assert f.n_spikes == 12 and not f.no_spike
    assert f.f_spk == pytest.approx(1e6, rel=1e-12)


def test_three_spikes_use_last_interval():
    f = spike_frequency(SpikeTrain(np.array([0.0, 1e-3, 1.5e-3])))
    assert f.f_spk == pytest.approx(2000.0)
    assert not spike_frequency(SpikeTrain(np.array([0.0, 1e-3, 1.5e-3]))).no_spike
    assert spike_frequency(SpikeTrain(np.array([0.0, 1e-3]))).no_spike


def test_frequency_result_invariants():
    with pytest.raises(ValueError):
        FrequencyResult(10.0, 2, True)
    with pytest.raises(ValueError):
        FrequencyResult(10.0, 5, True)


# --- deviation --------------------------------------------------------------------

def fr(f):
    return FrequencyResult(f, 10, False)


def test_deviation_examples():
    assert percent_deviation(fr(100e3), fr(100e3)).percent_deviation == 0.0
    assert percent_deviation(fr(100e3), fr(98e3)).percent_deviation == pytest.approx(-2.0)
    r = percent_deviation(fr(50e3), FrequencyResult(0.0, 1, True))
    assert r.aged_no_spike and r.percent_deviation is None
    with pytest.raises(FreshNotSpikingError):
        percent_deviation(FrequencyResult(0.0, 0, True), fr(1.0))


@given(st.floats(1e-3, 1e9))
def test_deviation_algebra_is_exact(f):
    assert percent_deviation(fr(f), fr(f)).percent_deviation == 0.0
    assert percent_deviation(fr(f), fr(2 * f)).percent_deviation == 100.0


# --- sweep spec and CSV -------------------------------------------------------------

def test_sweep_endpoints_are_exact():
    assert list(SweepSpec(n_points=2, spacing="linear").currents()) == [0.2e-6, 60e-6]
    i = SweepSpec().currents()
    assert len(i) == 20 and i[0] == 0.2e-6 and i[-1] == 60e-6
    np.testing.assert_allclose(np.diff(np.log(i)), math.log(300) / 19)
    for bad in (dict(i_min=0.0), dict(i_min=2.0, i_max=1.0), dict(n_points=1), dict(spacing="cubic")):
        with pytest.raises(ValueError):
            SweepSpec(**bad)


def test_fresh_non_spiking_point_is_recorded_not_raised():
    short = RunLength(t_min=0.2e-3, t_max=0.2e-3, target_spikes=3)
    r = evaluate_point(PointJob("vif", None, 0.0, run=short))
    assert r.error == "fresh circuit does not spike"
    assert r.percent_deviation is None and not r.aged_no_spike


def test_sweep_csv_round_trip(tmp_path):
    reps = [DeviationReport(0.2e-6, 345.0123456789, 341.5, (341.5 - 345.0123456789) / 345.0123456789 * 100, False),
            DeviationReport(60e-6, 45956.06, 0.0, None, True),
            DeviationReport(1e-6, math.nan, math.nan, None, False, error="solver failure")]
    path = tmp_path / "s.csv"
    write_sweep_csv(path, reps)
    back = read_sweep_csv(path)
    for a, b in zip(reps, back):
        assert a.i_inj == b.i_inj and a.aged_no_spike == b.aged_no_spike
        assert a.percent_deviation == b.percent_deviation
        assert (a.fresh_f_spk == b.fresh_f_spk) or (math.isnan(a.fresh_f_spk) and math.isnan(b.fresh_f_spk))
    lines = path.read_text().splitlines()
    assert lines[0] == "i_inj_a,fresh_fspk_hz,aged_fspk_hz,percent_deviation,aged_no_spike"
    assert lines[2].endswith(",0.0,,true")


# --- hybrid-model oracle for the Axon-Hillock circuit ------------------------------------

@pytest.mark.parametrize("i_inj", [0.5e-6, 1e-6, 5e-6])
def test_ah_matches_hybrid_model(i_inj):
    oracle = hybrid_ah_frequency(i_inj)
    sim = simulate(build_circuit("ah", None, i_inj))
    assert sim.frequency.f_spk == pytest.approx(oracle, rel=0.10)


def test_ah_waveform_shape():
    sim = simulate(build_circuit("ah"), RunLength(t_min=5e-3, t_max=5e-3))
    w = sim.waveform
    spk, mem = w.probe("spk"), w.probe("mem")
    assert spk.max() > 0.95 * VDD and spk.min() < 0.05 * VDD
    assert len(sim.train) >= 4
    # the feedback capacitor kicks mem upwards at each spike onset
    k = np.searchsorted(w.times, sim.train.spike_times[2])
    jump = mem[k + 5] - mem[k - 5]
    assert jump > 0.5 * 0.5 / 2.5 * VDD


# --- numerical adequacy ---------------------------------------------------------------

@pytest.mark.parametrize("circuit,i_inj", [("ah", 0.2e-6), ("ah", 1e-6), ("ah", 60e-6),
                                           ("vif", 1e-6), ("vif", 10e-6)])
def test_halving_dt_changes_rate_by_less_than_half_percent(circuit, i_inj):
    n = build_circuit(circuit, None, i_inj)
    a = simulate(n).frequency.f_spk
    b = simulate(n, cfg=replace(EXPERIMENT_TRANSIENT, dt=EXPERIMENT_TRANSIENT.dt / 2)).frequency.f_spk
    assert abs(a - b) / b < 0.005


@pytest.mark.parametrize("circuit", ["ah", "vif"])
def test_doubling_run_length_changes_rate_by_less_than_half_percent(circuit):
    n = build_circuit(circuit)
    base = RunLength()
    a = simulate(n, base).frequency.f_spk
    b = simulate(n, RunLength(2 * base.t_min, 2 * base.t_max, 2 * base.target_spikes)).frequency.f_spk
    assert abs(a - b) / b < 0.005
