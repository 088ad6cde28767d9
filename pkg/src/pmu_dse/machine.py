"""Third-order flux-decay synchronous generator model.

All electrical quantities are per unit, angles in radians and the speed
deviation ``x2 = omega - omega_s`` in rad/s. The d/q axes follow the
convention ``I = (I_d + j I_q) e^{j(x1 - pi/2)}``; see :mod:`pmu_dse.phasor`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateParametersError(ValueError):
    pass


@dataclass(frozen=True)
class SgParams:
    H: float
    D: float
    Td0p: float
    xd: float
    xdp: float
    xq: float
    Rs: float = 0.0
    omega_s: float = 100 * math.pi

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(f"{k}: {v}" for k, v in problems))

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if not self.H > 0:
            out.append(("H", f"must be > 0, got {self.H}"))
        if not self.Td0p > 0:
            out.append(("Td0p", f"must be > 0, got {self.Td0p}"))
        if not self.xdp > 0:
            out.append(("xdp", f"must be > 0, got {self.xdp}"))
        if not self.xd >= self.xdp:
            out.append(("xd", f"must be >= xdp ({self.xdp}), got {self.xd}"))
        if not self.xq > 0:
            out.append(("xq", f"must be > 0, got {self.xq}"))
        if not self.Rs >= 0:
            out.append(("Rs", f"must be >= 0, got {self.Rs}"))
        if not self.D >= 0:
            out.append(("D", f"must be >= 0, got {self.D}"))
        if not self.omega_s > 0:
            out.append(("omega_s", f"must be > 0, got {self.omega_s}"))
        return out

    @property
    def a1(self) -> float:
        return self.omega_s * self.D / (2 * self.H)

    @property
    def a2(self) -> float:
        return self.omega_s / (2 * self.H)

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.a1, self.a2])

    def with_theta(self, a1: float, a2: float) -> "SgParams":
        """Copy with H and D recovered from identified (a1, a2).

        ``H = omega_s / (2 a2)`` and, since ``a1 / a2 = D``, ``D = a1 / a2``.
        """
        if not a2 > 0:
            raise ValueError(f"a2 must be positive to recover H, got {a2}")
        return SgParams(
            H=self.omega_s / (2 * a2), D=a1 / a2, Td0p=self.Td0p, xd=self.xd,
            xdp=self.xdp, xq=self.xq, Rs=self.Rs, omega_s=self.omega_s,
        )


@dataclass
class SgState:
    x1: float
    x2: float
    x3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3])


def _denominator(p: SgParams) -> float:
    den = p.Rs ** 2 + p.xdp * p.xq
    if den == 0:
        raise DegenerateParametersError("Rs^2 + xdp*xq must be nonzero")
    return den


def stator_currents(x3, vtd, vtq, p: SgParams):
    """dq stator currents from the stator algebraic equation.

    Solves ``Vd + Rs*Id - xq*Iq = 0`` and ``Vq + Rs*Iq + xdp*Id = x3``.
    Returns ``(itd, itq, it)``.
    """
    den = _denominator(p)
    itd = (p.xq * x3 - p.xq * vtq - p.Rs * vtd) / den
    itq = (p.Rs * x3 - p.Rs * vtq + p.xdp * vtd) / den
    return itd, itq, np.hypot(itd, itq)


def terminal_powers(x3, vtd, vtq, p: SgParams):
    """Active and reactive terminal power in closed form."""
    den = _denominator(p)
    pt = (x3 * (p.xq * vtd + p.Rs * vtq) + vtd * vtq * (p.xdp - p.xq)
          - p.Rs * (vtd ** 2 + vtq ** 2)) / den
    qt = (x3 * (p.xq * vtq - p.Rs * vtd) - p.xdp * vtd ** 2 - p.xq * vtq ** 2) / den
    return pt, qt


def air_gap_torque(x3, itd, itq, p: SgParams):
    """Electrical air-gap torque ``(xq - xdp)*Id*Iq + x3*Iq``.

    Equals the terminal power plus the stator copper loss ``Rs*I^2``.
    """
    return (p.xq - p.xdp) * itd * itq + x3 * itq


def stator_residual(x1, x3, v, i, p: SgParams) -> complex:
    """Complex residual of the stator equation for terminal phasors ``v``, ``i``."""
    rot = np.exp(1j * (x1 - math.pi / 2))
    iq = (i / rot).imag
    return (1j * x3 * rot - (p.Rs + 1j * p.xdp) * i - v + (p.xq - p.xdp) * iq * rot)


def flux_decay_rhs(x, tm, te, itd, ef, p: SgParams) -> np.ndarray:
    x1, x2, x3 = x
    return np.array([
        x2,
        -p.a1 * x2 + p.a2 * (tm - te),
        (-x3 - (p.xd - p.xdp) * itd + ef) / p.Td0p,
    ])


@dataclass(frozen=True)
class GovernorTurbineParams:
    """Speed-droop governor with servo lag cascaded into a turbine lag."""

    T_ref: float
    droop_gain: float = 0.0
    servo_tc: float = 0.5
    turbine_tc: float = 2.0

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(f"{k}: {v}" for k, v in problems))

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if not self.servo_tc > 0:
            out.append(("servo_tc", f"must be > 0, got {self.servo_tc}"))
        if not self.turbine_tc > 0:
            out.append(("turbine_tc", f"must be > 0, got {self.turbine_tc}"))
        if not self.droop_gain >= 0:
            out.append(("droop_gain", f"must be >= 0, got {self.droop_gain}"))
        return out


@dataclass
class GovernorTurbineState:
    servo_out: float
    turbine_out: float

    @classmethod
    def steady(cls, gp: GovernorTurbineParams, x2: float = 0.0, omega_s: float = 100 * math.pi):
        level = gp.T_ref - gp.droop_gain * x2 / omega_s
        return cls(level, level)


def governor_rhs(servo, turbine, x2, gp: GovernorTurbineParams, omega_s: float):
    target = gp.T_ref - gp.droop_gain * x2 / omega_s
    return (target - servo) / gp.servo_tc, (servo - turbine) / gp.turbine_tc


def governor_turbine_step(s: GovernorTurbineState, x2: float, gp: GovernorTurbineParams,
                          dt: float, omega_s: float = 100 * math.pi):
    """Advance the governor/turbine by one RK4 step with ``x2`` held.

    Returns ``(new_state, tm)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = np.array([s.servo_out, s.turbine_out])

    def f(v):
        return np.array(governor_rhs(v[0], v[1], x2, gp, omega_s))

    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    new = GovernorTurbineState(float(y[0]), float(y[1]))
    return new, new.turbine_out


def simulate_governor(x2_series, gp: GovernorTurbineParams, dt: float,
                      omega_s: float = 100 * math.pi) -> np.ndarray:
    """Mechanical torque series for a measured speed-deviation series.

    The governor starts at steady state for the first speed sample.
    """
    x2_series = np.asarray(x2_series, dtype=float)
    state = GovernorTurbineState.steady(gp, x2_series[0], omega_s)
    tm = np.empty_like(x2_series)
    tm[0] = state.turbine_out
    for k in range(1, len(x2_series)):
        state, tm[k] = governor_turbine_step(state, x2_series[k - 1], gp, dt, omega_s)
    return tm


def estimate_t_ref(te_series, dt: float, window: float = 5.0) -> float:
    """Torque reference as the mean electrical torque over an initial window."""
    te_series = np.asarray(te_series, dtype=float)
    n = max(1, int(round(window / dt)))
    return float(np.mean(te_series[:n]))


def exciter_estimate(x3_series, itd_series, p: SgParams, dt: float) -> np.ndarray:
    """Field voltage estimate ``Td0p*dx3/dt + x3 + (xd - xdp)*Itd``.

    The derivative uses central differences inside and one-sided
    second-order differences at both ends.
    """
    x3 = np.asarray(x3_series, dtype=float)
    itd = np.asarray(itd_series, dtype=float)
    if x3.shape != itd.shape:
        raise ValueError(f"length mismatch: x3 has {x3.shape}, itd has {itd.shape}")
    if x3.size < 3:
        raise ValueError("need at least 3 samples")
    dx3 = np.gradient(x3, dt, edge_order=2)
    return p.Td0p * dx3 + x3 + (p.xd - p.xdp) * itd


def x2_from_frequency(f_t, omega_s: float = 100 * math.pi):
    """Speed deviation from the terminal voltage frequency, neglecting dx1/dt."""
    if np.ndim(f_t):
        f_t = np.asarray(f_t, dtype=float)
    return 2 * math.pi * f_t - omega_s


def frequency_from_angle(theta_series, dt: float, omega_s: float = 100 * math.pi) -> np.ndarray:
    """Terminal frequency (Hz) from a sampled voltage-angle series."""
    theta = np.unwrap(np.asarray(theta_series, dtype=float))
    return (omega_s + np.gradient(theta, dt, edge_order=2)) / (2 * math.pi)
