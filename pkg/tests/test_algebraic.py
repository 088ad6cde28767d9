import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from pmu_dse.algebraic import DegeneratePhasorError, estimate_series, observe_x1_x3, psi_phasor
from pmu_dse.machine import SgParams, air_gap_torque, stator_currents
from pmu_dse.network import TerminalMeasurement, TerminalSeries
from pmu_dse.phasor import dq_compose, wrap_angle


def machine(xdp=0.3, xq=0.6, rs=0.0):
    return SgParams(H=5.0, D=0.0, Td0p=7.0, xd=1.8, xdp=xdp, xq=xq, Rs=rs)


def measurement(x1, x3, itd, itq, p, t=0.0):
    # terminal voltage that closes the stator equation for the given state and currents
    vd = -p.Rs * itd + p.xq * itq
    vq = x3 - p.Rs * itq - p.xdp * itd
    v = dq_compose(vd, vq, x1)
    i = dq_compose(itd, itq, x1)
    return TerminalMeasurement(t, abs(v), math.atan2(v.imag, v.real), abs(i), math.atan2(i.imag, i.real))


def test_examples():
    p = machine()
    y = TerminalMeasurement(0.0, 1.0, 0.0, 0.0, 0.0)
    x1, x3 = observe_x1_x3(y, p)
    assert x1 == 0.0 and x3 == 1.0
    assert psi_phasor(y, p) == 1.0
    y = TerminalMeasurement(0.0, 1.0, 0.0, 1.0, -math.pi / 2)
    x1, x3 = observe_x1_x3(y, machine(xq=0.5, rs=0.0))
    assert x1 == pytest.approx(0.0, abs=1e-15) and x3 == pytest.approx(1.3)


@given(st.floats(-math.pi, math.pi), st.floats(0.6, 1.6), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5),
       st.floats(0.1, 0.8), st.floats(0, 1.5), st.floats(0, 0.02))
def test_recovers_state(x1, x3, itd, itq, xdp, dq, rs):
    p = machine(xdp, xdp + dq, rs)
    y = measurement(x1, x3, itd, itq, p)
    # the reconstruction assumes the q-axis flux (xq - xdp)*Id + x3 is positive
    assume((p.xq - p.xdp) * itd + x3 > 1e-3)
    got1, got3 = observe_x1_x3(y, p)
    assert abs(wrap_angle(got1 - x1)) < 1e-9
    assert abs(got3 - x3) < 1e-9


def test_degenerate_psi():
    p = machine()
    with pytest.raises(DegeneratePhasorError):
        observe_x1_x3(TerminalMeasurement(0.0, 0.0, 0.0, 0.0, 0.0), p)


def test_series_unwraps_and_matches_pointwise():
    p = machine(rs=0.003)
    n = 400
    t = np.arange(n) * 0.02
    x1 = 0.5 + 2.0 * t            # several turns
    x3 = 1.1 + 0.02 * np.sin(t)
    itd = 0.4 + 0.1 * np.cos(t)
    itq = 0.6 + 0.05 * np.sin(2 * t)
    ms = [measurement(a, b, c, d, p, tk) for a, b, c, d, tk in zip(x1, x3, itd, itq, t)]
    y = TerminalSeries.from_polar(t, [m.vt for m in ms], [m.theta_t for m in ms],
                                  [m.it for m in ms], [m.phi_t for m in ms])
    s = estimate_series(y, p)
    assert np.max(np.abs(s.x1_hat - x1)) < 1e-9
    assert np.max(np.abs(s.x3_hat - x3)) < 1e-9
    assert np.allclose(s.itd, itd, atol=1e-9) and np.allclose(s.itq, itq, atol=1e-9)
    assert np.allclose(s.te_hat, air_gap_torque(x3, itd, itq, p), atol=1e-9)
    one = s[5]
    assert one.x3_hat == pytest.approx(x3[5])


def test_consistent_with_stator_solution():
    p = machine(rs=0.003, xq=1.7)
    x1, x3, vd, vq = 0.8, 1.15, 0.6, 0.8
    itd, itq, _ = stator_currents(x3, vd, vq, p)
    v = dq_compose(vd, vq, x1)
    i = dq_compose(itd, itq, x1)
    y = TerminalMeasurement(0.0, abs(v), np.angle(v), abs(i), np.angle(i))
    got = observe_x1_x3(y, p)
    assert got == pytest.approx((x1, x3), abs=1e-12)


def test_psi_and_open_circuit_examples():
    p = machine(xq=0.6, rs=0.0)
    assert psi_phasor(TerminalMeasurement(0.0, 1.0, 0.0, 1.0, 0.0), p) == pytest.approx(1 + 0.6j)
    y = TerminalMeasurement(0.0, 1.07, 0.42, 0.0, 1.3)
    assert psi_phasor(y, p) == pytest.approx(1.07 * np.exp(0.42j))
    x1, x3 = observe_x1_x3(y, p)
    assert x1 == pytest.approx(0.42) and x3 == pytest.approx(1.07)


@given(st.floats(0.1, 2), st.floats(-3, 3), st.floats(0, 2), st.floats(-3, 3))
def test_round_rotor_reads_magnitude(vt, th, it, ph):
    p = machine(xdp=0.4, xq=0.4, rs=0.002)
    y = TerminalMeasurement(0.0, vt, th, it, ph)
    psi = psi_phasor(y, p)
    assume(abs(psi) > 1e-6)
    assert observe_x1_x3(y, p)[1] == pytest.approx(abs(psi), abs=1e-14)


def test_constant_series_gives_constant_estimates():
    t = np.arange(20) * 0.02
    y = TerminalSeries(t, np.full(20, 1.0 + 0.1j), np.full(20, 0.8 - 0.2j))
    s = estimate_series(y, machine())
    for arr in (s.x1_hat, s.x3_hat, s.te_hat):
        assert np.ptp(arr) == 0.0
