import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neuroage.netlist import AhParams, build_ah, parse_netlist
from neuroage.variability import (STATUS_FAIL, STATUS_NO_SPIKE, STATUS_OK, McConfig, MismatchParams,
                                  blom_positions, device_stream, probit_series, quantile_correlation,
                                  read_mc_runs_csv, read_mc_summary_csv, run_monte_carlo,
                                  sample_vth_offsets, summarize, vth_sigma, write_mc_runs_csv,
                                  write_mc_summary_csv, write_probit_csv)

ONE = parse_netlist("M1 d g 0 NMOS W=1u L=1u\nR1 d 0 1\nR2 g 0 1\n")


def test_pelgrom_sigma_examples():
    assert vth_sigma(ONE.device("M1"), 3.5) == pytest.approx(3.5e-3, rel=1e-12)
    nm0 = build_ah(AhParams()).device("NM0")  # 0.45 um x 0.045 um
    assert vth_sigma(nm0, 3.5) == pytest.approx(24.595492912420728e-3, rel=1e-12)


@pytest.fixture(scope="module")
def draws():
    p = MismatchParams(a_vt=3.5, seed=7)
    return np.array([sample_vth_offsets(ONE, p, k)["M1"] for k in range(100_000)])


def test_empirical_sigma_of_100k_draws(draws):
    assert draws.std() == pytest.approx(3.5e-3, rel=0.02)
    assert abs(draws.mean()) < 4 * 3.5e-3 / math.sqrt(len(draws))


def test_sigma_scales_with_a_vt(draws):
    k = 2.5
    p = MismatchParams(a_vt=3.5 * k, seed=7)
    scaled = np.array([sample_vth_offsets(ONE, p, j)["M1"] for j in range(0, 100_000, 10)])
    assert scaled.std() / draws[::10].std() == pytest.approx(k, rel=0.02)


def test_streams_are_keyed_by_seed_run_and_name():
    a = device_stream(1, 2, "NM2").standard_normal(3)
    assert np.array_equal(a, device_stream(1, 2, "NM2").standard_normal(3))
    assert not np.array_equal(a, device_stream(1, 3, "NM2").standard_normal(3))
    assert not np.array_equal(a, device_stream(2, 2, "NM2").standard_normal(3))
    assert not np.array_equal(a, device_stream(1, 2, "NM1").standard_normal(3))
    n = build_ah(AhParams())
    p = MismatchParams(seed=3)
    late = sample_vth_offsets(n, p, 41)
    for k in range(41):
        sample_vth_offsets(n, p, k)
    assert sample_vth_offsets(n, p, 41) == late
    with pytest.raises(ValueError):
        sample_vth_offsets(n, p, -1)


def test_mismatch_params_validate():
    with pytest.raises(ValueError):
        MismatchParams(a_vt=0.0)
    with pytest.raises(ValueError):
        MismatchParams(seed=-1)
    with pytest.raises(ValueError):
        McConfig(n_runs=1)


# --- probit -------------------------------------------------------------------------

def test_two_sample_probit():
    assert blom_positions(2) == pytest.approx([0.2778, 0.7222], abs=1e-4)
    vals, q = probit_series([3.0, 1.0])
    assert list(vals) == [1.0, 3.0]
    inv = NormalDist().inv_cdf  # independent inverse normal CDF
    assert q == pytest.approx([inv(0.625 / 2.25), inv(1.625 / 2.25)], rel=1e-12)
    assert q == pytest.approx([-0.5894, 0.5894], abs=1e-4)


def test_quantiles_match_independent_inverse_cdf():
    inv = NormalDist().inv_cdf
    for n in (3, 10, 1000):
        _, q = probit_series(np.arange(n, dtype=float))
        ref = [inv(p) for p in blom_positions(n)]
        np.testing.assert_allclose(q, ref, rtol=1e-10)


@given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=30), st.floats(-1e6, 1e6))
def test_symmetric_samples_give_antisymmetric_quantiles(half, centre):
    x = np.concatenate([centre - np.array(half), centre + np.array(half)])
    _, q = probit_series(x)
    np.testing.assert_allclose(q, -q[::-1], atol=1e-12)


@given(st.integers(2, 2000), st.floats(0.1, 1e4), st.floats(-1e4, 1e4))
def test_gaussian_samples_from_quantiles_correlate_perfectly(n, sd, mean):
    q = probit_series(np.arange(n, dtype=float))[1]
    vals, qs = probit_series(mean + sd * q)
    assert quantile_correlation(vals, qs) == pytest.approx(1.0, abs=1e-12)


def test_probit_rejects_short_or_bad_input():
    with pytest.raises(ValueError):
        probit_series([1.0])
    with pytest.raises(ValueError):
        probit_series([1.0, math.nan])


# --- aggregation ------------------------------------------------------------------------

@given(st.lists(st.tuples(st.floats(1.0, 1e6), st.sampled_from([STATUS_OK, STATUS_NO_SPIKE, STATUS_FAIL])),
                min_size=2, max_size=50))
def test_run_accounting(rows):
    f = [x if s == STATUS_OK else 0.0 for x, s in rows]
    r = summarize(f, [s for _, s in rows])
    assert sum(r.counts.values()) == r.n_runs == len(rows)
    ok = [x for x, s in rows if s == STATUS_OK]
    assert len(r.probit_values) == len(ok)
    assert np.all(np.diff(r.probit_values) >= 0)
    if len(ok) >= 2:
        assert r.mean == pytest.approx(np.mean(ok))
        assert r.sd == pytest.approx(np.std(ok, ddof=1), rel=1e-9, abs=1e-9)
    else:
        assert math.isnan(r.sd)


def test_csv_round_trip(tmp_path):
    r = summarize([100.0, 0.0, 101.5, 99.25, 0.0], [STATUS_OK, STATUS_NO_SPIKE, STATUS_OK, STATUS_OK, STATUS_FAIL])
    write_mc_runs_csv(tmp_path / "runs.csv", r)
    write_mc_summary_csv(tmp_path / "sum.csv", r)
    write_probit_csv(tmp_path / "probit.csv", r)
    back = read_mc_runs_csv(tmp_path / "runs.csv")
    assert back.status == r.status and back.f_spk.tobytes() == r.f_spk.tobytes()
    assert back.mean == r.mean and back.sd == r.sd and back.quantile_correlation == r.quantile_correlation
    s = read_mc_summary_csv(tmp_path / "sum.csv")
    assert s["n_runs"] == 5 and s["spiking_runs"] == 3 and s["no_spike_runs"] == 1 and s["failed_runs"] == 1
    assert s["mean_hz"] == r.mean and s["cv"] == r.cv
    lines = (tmp_path / "probit.csv").read_text().splitlines()
    assert lines[0] == "value_hz,normal_quantile" and len(lines) == 4


# --- Monte Carlo ---------------------------------------------------------------------------

def test_batch_is_schedule_invariant():
    cfg = McConfig("ah", 3)
    p = MismatchParams(seed=11)
    a = run_monte_carlo(cfg, p, jobs=1)
    b = run_monte_carlo(cfg, p, jobs=2)
    assert a.f_spk.tobytes() == b.f_spk.tobytes() and a.status == b.status
    assert a.status == [STATUS_OK] * 3
    assert len(set(a.f_spk)) == 3


def test_vanishing_mismatch_collapses_the_distribution():
    r = run_monte_carlo(McConfig("ah", 3), MismatchParams(a_vt=1e-6, seed=5), jobs=1)
    assert r.counts[STATUS_OK] == 3
    assert r.sd / r.mean < 1e-4
