from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neuroage.aging import (SECONDS_PER_YEAR, AgingParams, StressProfile, age_circuit, age_netlist,
                            compute_delta_vth, delta_vth_components, extract_stress, read_aging_csv,
                            supply_voltage, write_aging_csv)
from neuroage.analysis import EXPERIMENT_TRANSIENT, build_circuit, resting_state, simulate
from neuroage.netlist import AhParams, build_ah
from neuroage.solver import TransientConfig, Waveform, transient

T10 = 3.156e8
# power laws evaluated by an independent script
BTI_FULL_DUTY_10Y = 0.05218585798640954
HCI_100KHZ_10Y = 0.02808914381037628


def profile(duty, rate, name="M"):
    return StressProfile({name: duty}, {name: rate}, polarity={name: "nmos"})


def test_bti_power_law_oracle():
    d = compute_delta_vth(profile(1.0, 0.0), AgingParams(t_life=T10))
    assert d["M"] == pytest.approx(BTI_FULL_DUTY_10Y, rel=1e-12)
    assert d["M"] == pytest.approx(0.052, abs=5e-4)


def test_hci_power_law_oracle():
    b, h = delta_vth_components(profile(0.0, 1e5), AgingParams(t_life=T10))["M"]
    assert b == 0.0
    assert h == pytest.approx(HCI_100KHZ_10Y, rel=1e-12)


def test_zero_stress_is_exactly_zero():
    assert compute_delta_vth(profile(0.0, 0.0), AgingParams()) == {"M": 0.0}
    assert compute_delta_vth(profile(0.7, 3e4), AgingParams(t_life=0.0)) == {"M": 0.0}


def test_per_polarity_prefactor():
    s = StressProfile({"N": 1.0, "P": 1.0}, {"N": 0.0, "P": 0.0}, polarity={"N": "nmos", "P": "pmos"})
    d = compute_delta_vth(s, AgingParams(t_life=T10, phi_bti_pmos=4e-3))
    assert d["P"] == pytest.approx(2 * d["N"])


unit = st.floats(0.0, 1.0)
rate = st.floats(0.0, 1e7)
life = st.floats(0.0, 1e9)


@given(d1=unit, d2=unit, r1=rate, r2=rate, t1=life, t2=life)
def test_monotone_in_duty_rate_and_lifetime(d1, d2, r1, r2, t1, t2):
    lo = compute_delta_vth(profile(min(d1, d2), min(r1, r2)), AgingParams(t_life=min(t1, t2)))["M"]
    hi = compute_delta_vth(profile(max(d1, d2), max(r1, r2)), AgingParams(t_life=max(t1, t2)))["M"]
    assert 0.0 <= lo <= hi


def test_parameter_validation():
    for kw in (dict(t_life=-1.0), dict(n_bti=1.0), dict(m_hci=0.0), dict(bti_stress_fraction=1.5),
               dict(phi_hci=-1.0)):
        with pytest.raises(ValueError):
            AgingParams(**kw)
    with pytest.raises(ValueError):
        StressProfile({"M": 1.2}, {"M": 0.0})
    assert AgingParams.from_years(10).t_life == 10 * SECONDS_PER_YEAR


def synthetic_inverter_waveform():
    """Inverter driven by a square wave: duty and toggles are known exactly."""
    n = build_ah(AhParams())
    t = np.arange(1000) * 1e-6
    gate = np.where((np.arange(1000) // 100) % 2 == 1, 1.1, 0.0)  # 5 full periods
    nodes = n.nodes
    cols = {"0": 0 * t, "vdd": 0 * t + 1.1, "ck": 0 * t, "mem": gate, "inv1": 1.1 - gate,
            "spk": gate}
    volts = np.stack([cols[nd] for nd in nodes], axis=1)
    return n, Waveform(t, nodes, volts, n.probes)


def test_extract_stress_on_known_waveform():
    n, w = synthetic_inverter_waveform()
    s = extract_stress(w, n, AgingParams())
    assert s.duty_bti["NM0"] == pytest.approx(0.5)   # gate high half the time
    assert s.duty_bti["PM0"] == pytest.approx(0.5)   # gate low half the time
    # NM0 drain-source crosses half supply at every edge: 9 edges in 999 us
    assert s.toggle_rate["NM0"] == pytest.approx(9 / 999e-6)
    assert supply_voltage(n) == 1.1


def test_extract_stress_rejects_foreign_waveform():
    n, w = synthetic_inverter_waveform()
    short = Waveform(w.times, w.nodes[:3], w.volts[:, :3])
    with pytest.raises(ValueError):
        extract_stress(short, n, AgingParams())


def test_zero_lifetime_gives_identical_netlist():
    n = build_ah(AhParams(i_inj=5e-6))
    cfg = TransientConfig(t_stop=0.2e-3, dt=20e-9, integrator="trapezoidal")
    aged, stress, d = age_circuit(n, cfg, AgingParams(t_life=0.0), initial=resting_state(n))
    assert aged == n
    assert all(v == 0.0 for v in d.values())
    assert set(stress.devices) == {"PM0", "NM0", "PM1", "NM1", "NM2"}


def test_stress_extraction_is_invariant_to_oversampling():
    n = build_circuit("ah", None, 5e-6)
    cfg = replace(EXPERIMENT_TRANSIENT, t_stop=1e-3, record_currents=False)
    x0 = resting_state(n)
    w1, _ = transient(n, cfg, initial=x0)
    w2, _ = transient(n, replace(cfg, dt=cfg.dt / 2), initial=x0)
    s1 = extract_stress(w1, n, AgingParams())
    s2 = extract_stress(w2, n, AgingParams())
    for k in s1.devices:
        assert abs(s1.duty_bti[k] - s2.duty_bti[k]) < 0.005


@pytest.fixture(scope="module")
def aged_defaults():
    out = {}
    for c in ("ah", "vif"):
        n = build_circuit(c)
        sim = simulate(n)
        out[c] = age_netlist(n, sim.waveform, AgingParams())
    return out


def test_vif_nm2_ages_most_on_the_reset_path(aged_defaults):
    d = aged_defaults["vif"].delta_vth
    assert d["NM2"] > d["NM5"]
    assert d["NM2"] > 0


def test_default_shifts_stay_perturbative(aged_defaults):
    for c, r in aged_defaults.items():
        for name, dv in r.delta_vth.items():
            assert 0.0 <= dv < 0.2 * 0.45, (c, name, dv)
    assert max(aged_defaults["ah"].delta_vth.values()) < 0.060


def test_aging_csv_round_trip(tmp_path, aged_defaults):
    r = aged_defaults["vif"]
    p = AgingParams()
    path = tmp_path / "aging.csv"
    write_aging_csv(path, r.stress, p)
    stress, d = read_aging_csv(path)
    assert dict(stress.duty_bti) == dict(r.stress.duty_bti)
    assert dict(stress.toggle_rate) == dict(r.stress.toggle_rate)
    assert d == pytest.approx(r.delta_vth, rel=1e-15)
    assert path.read_text().splitlines()[0] == \
        "device,duty_bti,toggle_rate_hz,dvth_bti_v,dvth_hci_v,dvth_total_v"
