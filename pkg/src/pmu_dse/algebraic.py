"""Closed-form reconstruction of rotor angle and internal voltage.

Adding and subtracting ``j*xq*Id`` in the stator equation gives

    ((xq - xdp)*Id + x3) * e^{j x1} = (Rs + j xq) * I_t + V_t =: psi

so the rotor angle is ``arg(psi)`` and the internal voltage follows from
``|psi|`` once the d-axis current is known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .machine import SgParams, air_gap_torque
from .network import TerminalMeasurement, TerminalSeries
from .phasor import dq_decompose, wrap_angle


class DegeneratePhasorError(ValueError):
    pass


@dataclass(frozen=True)
class AlgebraicEstimate:
    t: float
    x1_hat: float
    x3_hat: float
    te_hat: float
    itd: float
    itq: float


@dataclass
class AlgebraicSeries:
    t: np.ndarray
    x1_hat: np.ndarray      # unwrapped
    x3_hat: np.ndarray
    te_hat: np.ndarray
    itd: np.ndarray
    itq: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k) -> AlgebraicEstimate:
        return AlgebraicEstimate(float(self.t[k]), float(self.x1_hat[k]), float(self.x3_hat[k]),
                                 float(self.te_hat[k]), float(self.itd[k]), float(self.itq[k]))


def psi_phasor(y: TerminalMeasurement, p: SgParams) -> complex:
    return (p.Rs + 1j * p.xq) * y.it * np.exp(1j * y.phi_t) + y.vt * np.exp(1j * y.theta_t)


def observe_x1_x3(y: TerminalMeasurement, p: SgParams, floor: float = 1e-9):
    """Rotor angle (principal value) and internal voltage for one sample."""
    psi = psi_phasor(y, p)
    if abs(psi) < floor:
        raise DegeneratePhasorError(f"|psi|={abs(psi):.3g} below floor {floor:g}")
    x1 = wrap_angle(math.atan2(psi.imag, psi.real))
    x3 = abs(psi) - (p.xq - p.xdp) * math.cos(math.pi / 2 - x1 + y.phi_t) * y.it
    return x1, x3


def estimate_series(y: TerminalSeries, p: SgParams, floor: float = 1e-9) -> AlgebraicSeries:
    """Vectorised observer over a terminal series with continuous rotor angle."""
    if len(y) == 0:
        raise ValueError("empty terminal series")
    psi = (p.Rs + 1j * p.xq) * y.i + y.v
    mag = np.abs(psi)
    bad = np.flatnonzero(mag < floor)
    if bad.size:
        raise DegeneratePhasorError(f"sample {bad[0]}: |psi|={mag[bad[0]]:.3g} below floor {floor:g}")
    x1 = np.angle(psi)
    phi_t, it = y.phi_t, y.it
    x3 = mag - (p.xq - p.xdp) * np.cos(np.pi / 2 - x1 + phi_t) * it
    itd, itq = dq_decompose(it, phi_t, x1)
    te = air_gap_torque(x3, itd, itq, p)
    return AlgebraicSeries(y.t.copy(), np.unwrap(x1), x3, te, itd, itq)
