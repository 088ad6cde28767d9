"""Synthetic PMU recordings from a single generator behind the plant network.

The generator (flux-decay model plus governor/turbine) feeds the plant
bus, the auxiliary load, the tap-changing transformer and the HV line;
a voltage source with a prescribed magnitude/angle profile stands in for
the grid at the substation bus. The model equations are integrated with
fixed-step classic RK4 and phasors are reported at the PMU frame rate.

Between two reporting instants the auxiliary load is held as the
constant admittance that draws exactly the demanded power at the
instant where it was refreshed, so the reported phasors satisfy the
forward measurement map to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .machine import (
    GovernorTurbineParams, SgParams, air_gap_torque, governor_rhs,
)
from .network import AuxAverager, NetworkParams, PmuSeries, TerminalSeries, network_matrix

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class ConvergenceError(SimulationError):
    pass


@dataclass(frozen=True)
class GridSource:
    """Voltage magnitude and angle of the grid at the substation bus.

    ``*_sines`` hold ``(amplitude, frequency_hz, phase_rad)`` triples and
    ``angle_steps`` holds ``(time, size)`` pairs.
    """

    v_mag: float = 1.0
    angle0: float = 0.0
    freq_offset_hz: float = 0.0
    angle_sines: tuple = ()
    mag_sines: tuple = ()
    angle_steps: tuple = ()

    def magnitude(self, t: float) -> float:
        v = self.v_mag
        for amp, f, ph in self.mag_sines:
            v += amp * math.sin(2 * math.pi * f * t + ph)
        return v

    def angle(self, t: float) -> float:
        a = self.angle0 + 2 * math.pi * self.freq_offset_hz * t
        for amp, f, ph in self.angle_sines:
            a += amp * math.sin(2 * math.pi * f * t + ph)
        for ts, size in self.angle_steps:
            if t >= ts:
                a += size
        return a

    def phasor(self, t: float) -> complex:
        return self.magnitude(t) * complex(math.cos(self.angle(t)), math.sin(self.angle(t)))

    def min_magnitude(self) -> float:
        return self.v_mag - sum(abs(a) for a, _, _ in self.mag_sines)


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 1e-3
    horizon: float = 120.0
    reporting_rate: float = 50.0
    x3_init: float = 1.15
    grid: GridSource = field(default_factory=GridSource)
    tap_changes: tuple = ()          # (time, tau) pairs; tau before the first is the transformer's
    sigma_mag: float = 1e-4
    sigma_ang: float = 1e-4
    x2_bound: float = 50.0
    aux_tol: float = 1e-10
    aux_max_iter: int = 50

    @property
    def report_period(self) -> float:
        return 1.0 / self.reporting_rate

    @property
    def substeps(self) -> int:
        n = self.report_period / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ValueError(f"dt={self.dt} must divide the reporting period {self.report_period}")
        return int(round(n))


@dataclass
class SimulationResult:
    t: np.ndarray
    x: np.ndarray              # (n, 3): x1, x2, x3
    tm: np.ndarray
    te: np.ndarray
    ef: np.ndarray
    itd: np.ndarray
    terminal: TerminalSeries
    pmu: PmuSeries
    p_as: np.ndarray


def tap_at(t: float, base_tau: float, tap_changes) -> float:
    tau = base_tau
    for ts, value in tap_changes:
        if t >= ts:
            tau = value
    return tau


class _Interconnection:
    """Closed-form solution of stator equation plus linear plant network.

    With the grid phasor ``V5`` imposed, the network reduces to
    ``p*V_t + q*I_t = V5`` where ``p``, ``q`` depend on the tap and on the
    auxiliary admittance. Combined with the dq stator equations this is a
    real 2x2 linear system in ``(Id, Iq)``.
    """

    def __init__(self, sg: SgParams, net: NetworkParams, tau: float, y_as: complex):
        self.sg = sg
        m = network_matrix(net, tau)
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det) < 1e-14:
            raise SimulationError("singular network: transfer matrix not invertible")
        self.minv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
        self.y_as = y_as
        mi11, mi12 = complex(self.minv[0, 0]), complex(self.minv[0, 1])
        self.p = mi11 - mi12 * y_as
        self.q = mi12

    def currents(self, x1: float, x3: float, v5: complex):
        sg = self.sg
        rot = complex(math.sin(x1), math.cos(x1))   # e^{-j(x1 - pi/2)}
        w = v5 * rot
        pr, pi_ = self.p.real, self.p.imag
        qr, qi = self.q.real, self.q.imag
        rs, xdp, xq = sg.Rs, sg.xdp, sg.xq
        a11 = -pr * rs + pi_ * xdp + qr
        a12 = pr * xq + pi_ * rs - qi
        a21 = -pi_ * rs - pr * xdp + qi
        a22 = pi_ * xq - pr * rs + qr
        b1 = w.real + pi_ * x3
        b2 = w.imag - pr * x3
        det = a11 * a22 - a12 * a21
        if det == 0:
            raise SimulationError("singular interconnection")
        idd = (b1 * a22 - a12 * b2) / det
        iq = (a11 * b2 - a21 * b1) / det
        return idd, iq

    def phasors(self, x1: float, x3: float, v5: complex):
        """Terminal voltage/current, LV current and PMU current phasors."""
        sg = self.sg
        idd, iq = self.currents(x1, x3, v5)
        vd = sg.xq * iq - sg.Rs * idd
        vq = x3 - sg.xdp * idd - sg.Rs * iq
        back = complex(math.sin(x1), -math.cos(x1))   # e^{j(x1 - pi/2)}
        v_t = complex(vd, vq) * back
        i_t = complex(idd, iq) * back
        i_lv = i_t - self.y_as * v_t
        i_pmu = complex(self.minv[1, 0]) * v_t + complex(self.minv[1, 1]) * i_lv
        return idd, iq, v_t, i_t, i_lv, i_pmu


def solve_network_interconnection(x1, x3, grid: complex, net: NetworkParams, sg: SgParams,
                                  aux: AuxAverager | None = None, t: float | None = None,
                                  tau: float | None = None, tol: float = 1e-10,
                                  max_iter: int = 50, y_guess: complex = 0j):
    """Terminal and PMU phasors for a given machine state and grid phasor.

    The auxiliary demand (a function of the running mean of ``P_LV``) is
    resolved by fixed-point iteration on the auxiliary admittance. When
    ``aux`` is given its state is *not* advanced. Returns a dict with
    ``v_t, i_t, i_lv, i_pmu, v_pmu, itd, itq, p_lv, p_as, y_as``.
    """
    tau = net.transformer.tau if tau is None else tau
    aux = aux or AuxAverager(net.aux)
    t = net.aux.t0 if t is None else t
    y = y_guess
    for _ in range(max_iter):
        ic = _Interconnection(sg, net, tau, y)
        idd, iq, v_t, i_t, i_lv, i_pmu = ic.phasors(x1, x3, grid)
        p_lv = (v_t * i_lv.conjugate()).real
        p_as = aux.peek(t, p_lv)
        s_as = complex(p_as, p_as * net.aux.q_per_p)
        vsq = abs(v_t) ** 2
        if vsq == 0:
            raise SimulationError("zero terminal voltage")
        y_new = s_as.conjugate() / vsq
        if abs(y_new - y) <= tol:
            y = y_new
            ic = _Interconnection(sg, net, tau, y)
            idd, iq, v_t, i_t, i_lv, i_pmu = ic.phasors(x1, x3, grid)
            p_lv = (v_t * i_lv.conjugate()).real
            return dict(v_t=v_t, i_t=i_t, i_lv=i_lv, i_pmu=i_pmu, v_pmu=grid, itd=idd,
                        itq=iq, p_lv=p_lv, p_as=aux.peek(t, p_lv), y_as=y, interconnection=ic)
        y = y_new
    raise ConvergenceError(f"auxiliary power fixed point did not converge in {max_iter} iterations")


def _equilibrium_x1(sg, net, grid_phasor, x3, target_te, tau):
    theta_g = math.atan2(grid_phasor.imag, grid_phasor.real)

    def mismatch(x1):
        sol = solve_network_interconnection(x1, x3, grid_phasor, net, sg, tau=tau)
        return air_gap_torque(x3, sol["itd"], sol["itq"], sg) - target_te

    grid_pts = theta_g + np.linspace(-0.5, math.pi * 0.75, 301)
    vals = np.array([mismatch(x) for x in grid_pts])
    k_max = int(np.argmax(vals))
    below = np.flatnonzero(vals[:k_max + 1] < 0)
    if vals[k_max] < 0 or below.size == 0:
        raise SimulationError(f"no stable equilibrium for electrical torque {target_te:.4f}")
    k = below[-1]
    return brentq(mismatch, grid_pts[k], grid_pts[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)


def initial_state(sg: SgParams, net: NetworkParams, gov: GovernorTurbineParams,
                  sim: SimulationConfig):
    """Steady state consistent with the grid profile at ``t=0``.

    A grid frequency offset makes the steady speed deviation nonzero; the
    damping torque then shifts the electrical torque below the
    mechanical one. Returns ``(y0, ef)`` with ``y0 = [x1, x2, x3, servo, turbine]``.
    """
    x2 = 2 * math.pi * sim.grid.freq_offset_hz
    tm = gov.T_ref - gov.droop_gain * x2 / sg.omega_s
    te = tm - sg.D * x2
    tau = tap_at(0.0, net.transformer.tau, sim.tap_changes)
    v5 = sim.grid.phasor(0.0)
    x1 = _equilibrium_x1(sg, net, v5, sim.x3_init, te, tau)
    sol = solve_network_interconnection(x1, sim.x3_init, v5, net, sg, tau=tau)
    ef = sim.x3_init + (sg.xd - sg.xdp) * sol["itd"]
    return np.array([x1, x2, sim.x3_init, tm, tm]), ef


def integrate_scenario(sg: SgParams, net: NetworkParams, gov: GovernorTurbineParams,
                       sim: SimulationConfig, y0=None, ef: float | None = None) -> SimulationResult:
    """Run a scenario with classic RK4 and sample it at the PMU frame rate."""
    if not sim.dt > 0 or not sim.horizon > 0:
        raise ValueError("dt and horizon must be positive")
    if sim.grid.min_magnitude() <= 0:
        raise ValueError("grid voltage magnitude must stay positive")
    nsub = sim.substeps
    h = sim.dt
    n_frames = int(math.floor(sim.horizon * sim.reporting_rate + 1e-9)) + 1
    if y0 is None:
        y0, ef0 = initial_state(sg, net, gov, sim)
        ef = ef0 if ef is None else ef
    elif ef is None:
        raise ValueError("ef is required together with y0")
    y = np.array(y0, dtype=float)

    a1, a2, td0p, xd_xdp, omega_s = sg.a1, sg.a2, sg.Td0p, sg.xd - sg.xdp, sg.omega_s
    xq_xdp = sg.xq - sg.xdp
    grid = sim.grid

    out = {k: np.empty(n_frames) for k in ("tm", "te", "itd", "p_as", "tap")}
    xs = np.empty((n_frames, 3))
    v_t = np.empty(n_frames, dtype=complex)
    i_t = np.empty(n_frames, dtype=complex)
    v5s = np.empty(n_frames, dtype=complex)
    i_pmu = np.empty(n_frames, dtype=complex)
    times = np.arange(n_frames) * sim.report_period

    aux = AuxAverager(net.aux)
    y_as = 0j
    for k in range(n_frames):
        t = float(times[k])
        tau = tap_at(t, net.transformer.tau, sim.tap_changes)
        v5 = grid.phasor(t)
        sol = solve_network_interconnection(y[0], y[2], v5, net, sg, aux=aux, t=t, tau=tau,
                                            tol=sim.aux_tol, max_iter=sim.aux_max_iter,
                                            y_guess=y_as)
        aux.push(t, sol["p_lv"])
        y_as = sol["y_as"]
        xs[k] = y[:3]
        out["tm"][k] = y[4]
        out["te"][k] = air_gap_torque(y[2], sol["itd"], sol["itq"], sg)
        out["itd"][k] = sol["itd"]
        out["p_as"][k] = sol["p_as"]
        out["tap"][k] = tau
        v_t[k], i_t[k], v5s[k], i_pmu[k] = sol["v_t"], sol["i_t"], v5, sol["i_pmu"]
        if k == n_frames - 1:
            break

        ic = sol["interconnection"]

        def rhs(tt, yy):
            x1, x2, x3, servo, turb = yy
            idd, iq = ic.currents(x1, x3, grid.phasor(tt))
            te = xq_xdp * idd * iq + x3 * iq
            ds, dturb = governor_rhs(servo, turb, x2, gov, omega_s)
            return np.array([x2, -a1 * x2 + a2 * (turb - te),
                             (-x3 - xd_xdp * idd + ef) / td0p, ds, dturb])

        for j in range(nsub):
            ts = t + j * h
            k1 = rhs(ts, y)
            k2 = rhs(ts + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(ts + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(ts + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or abs(y[1]) > sim.x2_bound:
            raise SimulationError(f"state left configured bounds at t={times[k + 1]:.3f}s: {y[:3]}")
        if y[2] <= 0:
            log.warning("internal voltage x3 <= 0 at t=%.3f s", times[k + 1])

    terminal = TerminalSeries(times, v_t, i_t)
    pmu = PmuSeries(times, v5s, i_pmu, out["tap"])
    return SimulationResult(times, xs, out["tm"], out["te"], np.full(n_frames, ef), out["itd"],
                            terminal, pmu, out["p_as"])


def add_measurement_noise(pmu: PmuSeries, sigma_mag: float, sigma_ang: float,
                          rng: np.random.Generator) -> PmuSeries:
    """Gaussian noise on magnitude and angle of both substation phasors."""
    n = len(pmu)
    if sigma_mag == 0 and sigma_ang == 0:
        return PmuSeries(pmu.t.copy(), pmu.v.copy(), pmu.i.copy(), pmu.tap.copy())

    def perturb(z):
        mag = np.abs(z) + sigma_mag * rng.standard_normal(n)
        ang = np.angle(z) + sigma_ang * rng.standard_normal(n)
        return mag * np.exp(1j * ang)

    return PmuSeries(pmu.t.copy(), perturb(pmu.v), perturb(pmu.i), pmu.tap.copy())
