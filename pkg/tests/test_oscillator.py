import math

import numpy as np
import pytest

from reram_onn.oscillator import (
    InverterParams,
    OscillationError,
    RingOscillator,
    build_ring,
    free_run,
    intrinsic_frequency,
    rising_edges,
    stage_derivatives,
    stage_jacobian,
    transfer,
)

BASE = InverterParams(v_dd=5.0, gain=10.0, tau=8.73e-6, r_stage=100e3)


def test_same_phase_same_state():
    a = build_ring("a", BASE, 0.0)
    b = build_ring("b", BASE, 0.0)
    assert np.array_equal(a.state, b.state)


def test_half_period_shift():
    zero = build_ring("a", BASE, 0.0)
    half = build_ring("b", BASE, math.pi)
    d0 = stage_derivatives(zero)[-1]
    d1 = stage_derivatives(half)[-1]
    # phase 0 is the rising mid-supply crossing; half a period later it falls
    assert zero.output == pytest.approx(2.5, abs=0.05)
    assert d0 > 0 > d1
    assert build_ring("c", BASE, math.pi / 2).output > 2.5 > build_ring("d", BASE, 3 * math.pi / 2).output


def test_random_phases_distinct():
    rng = np.random.default_rng(3)
    rings = [build_ring(f"o{k}", BASE, rng.uniform(0, 2 * math.pi)) for k in range(4)]
    for i in range(4):
        for j in range(i + 1, 4):
            assert not np.allclose(rings[i].state, rings[j].state)


def test_mid_supply_is_equilibrium():
    osc = RingOscillator("m", BASE, np.full(9, 2.5))
    np.testing.assert_allclose(stage_derivatives(osc), 0.0, atol=1e-9)


def test_low_input_pulls_next_stage_high():
    state = np.full(9, 2.5)
    state[3] = 0.0
    osc = RingOscillator("m", BASE, state)
    assert transfer(0.0, 5.0, 10.0) == pytest.approx(5.0, abs=1e-6)
    assert stage_derivatives(osc)[4] > 0


def test_jacobian_matches_finite_differences():
    osc = build_ring("j", BASE, 1.1)
    J = stage_jacobian(osc)
    eps = 1e-6
    for j in range(9):
        up = RingOscillator("u", BASE, osc.state + eps * np.eye(9)[j])
        dn = RingOscillator("d", BASE, osc.state - eps * np.eye(9)[j])
        col = (stage_derivatives(up) - stage_derivatives(dn)) / (2 * eps)
        np.testing.assert_allclose(col, J[:, j], rtol=1e-6, atol=1e-6 * np.abs(J).max())


def test_injection_scales_by_stage_capacitance():
    osc = build_ring("i", BASE, 0.3)
    inj = np.zeros(9)
    inj[6] = 1e-6
    diff = stage_derivatives(osc, inj) - stage_derivatives(osc)
    assert diff[6] == pytest.approx(1e-6 / BASE.c_stage)
    assert np.count_nonzero(diff) == 1


def test_bad_injection_length():
    with pytest.raises(ValueError):
        stage_derivatives(build_ring("i", BASE), np.zeros(8))


def test_calibrated_frequency_near_target():
    f = intrinsic_frequency(build_ring("f", BASE))
    assert abs(f - 8.6e3) / 8.6e3 <= 0.15


def test_doubling_tau_halves_frequency():
    f1 = intrinsic_frequency(build_ring("a", BASE))
    f2 = intrinsic_frequency(build_ring("b", InverterParams(tau=2 * BASE.tau)))
    assert f2 / f1 == pytest.approx(0.5, rel=0.02)


def test_low_gain_does_not_oscillate():
    osc = RingOscillator("g", InverterParams(gain=0.8), np.linspace(0.5, 4.5, 9))
    with pytest.raises(OscillationError):
        intrinsic_frequency(osc)


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        build_ring("x", InverterParams(gain=2.0))
    with pytest.raises(ValueError):
        build_ring("x", InverterParams(tau=-1.0))
    with pytest.raises(ValueError):
        build_ring("x", BASE, stage_count=8)


def test_even_ring_latches():
    osc = RingOscillator("e", BASE, np.linspace(0.5, 4.5, 8), stage_count=8)
    with pytest.raises(OscillationError):
        intrinsic_frequency(osc)


def test_periodic_orbit_and_rails():
    # start off the orbit, let it settle, then compare successive periods
    osc = RingOscillator("p", BASE, np.linspace(0.2, 4.8, 9))
    dt = BASE.tau / 40
    _, v, _ = free_run(osc, 30 * 13 * BASE.tau, dt)
    edges = rising_edges(v, 2.5, dt)
    periods = np.diff(edges)[10:]
    assert np.max(np.abs(np.diff(periods)) / periods[1:]) < 1e-3
    assert v.min() >= 0.0 and v.max() <= 5.0


def test_all_stages_stay_within_rails():
    osc = RingOscillator("r", BASE, np.array([0, 5, 0, 5, 0, 5, 0, 5, 2.5]))
    for stage in range(1, 10):
        _, v, _ = free_run(osc, 5 * 13 * BASE.tau, BASE.tau / 40, stage=stage)
        assert v.min() >= 0.0 and v.max() <= 5.0


def test_period_scales_with_stage_count():
    # period ~ 2 * N * stage delay, so 9 vs 5 stages is roughly 9/5
    f9 = intrinsic_frequency(build_ring("n9", BASE))
    f5 = intrinsic_frequency(build_ring("n5", BASE, stage_count=5))
    assert f5 / f9 == pytest.approx(9 / 5, rel=0.1)
