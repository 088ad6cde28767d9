"""Immersion-and-invariance observer for the speed deviation.

The observer integrates

    xI2' = -(a1_hat + k)*(xI2 + k*x1) + a2_hat*(Tm - Te)

and reads out ``x2_hat = xI2 + k*x1``. With exact parameters the
estimation error obeys ``e' = -(a1 + k)*e``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObserverState:
    xI2: float
    x2_hat: float

    @classmethod
    def initial(cls, x1: float, k: float, x2_hat: float = 0.0) -> "ObserverState":
        return cls(x2_hat - k * x1, x2_hat)


def observer_step(s: ObserverState, x1: float, tm: float, te: float, theta_hat, k: float,
                  dt: float, x1_next: float | None = None, u_next: float | None = None) -> ObserverState:
    """Advance the observer by one sample.

    The linear part is integrated with the trapezoidal rule. Inputs are
    taken as piecewise linear when the next samples are supplied and as
    held otherwise.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not k > 0:
        raise ValueError(f"observer gain k must be positive, got {k}")
    a1_hat, a2_hat = float(theta_hat[0]), float(theta_hat[1])
    alpha = a1_hat + k
    u = tm - te
    x1n = x1 if x1_next is None else x1_next
    un = u if u_next is None else u_next
    g0 = -alpha * k * x1 + a2_hat * u
    g1 = -alpha * k * x1n + a2_hat * un
    xI2 = ((1 - 0.5 * alpha * dt) * s.xI2 + 0.5 * dt * (g0 + g1)) / (1 + 0.5 * alpha * dt)
    return ObserverState(xI2, xI2 + k * x1n)


def run_observer(x1, tm, te, theta_hat, k: float, dt: float, x2_hat0: float = 0.0) -> np.ndarray:
    """``x2_hat`` for a whole series.

    ``theta_hat`` may be a single 2-vector (frozen parameters) or an
    ``(n, 2)`` array sampled alongside the measurements; in the latter case
    the estimate available at sample ``j`` drives the step from ``j`` to
    ``j + 1``.
    """
    x1 = np.asarray(x1, dtype=float)
    tm = np.asarray(tm, dtype=float)
    te = np.asarray(te, dtype=float)
    th = np.asarray(theta_hat, dtype=float)
    n = len(x1)
    if len(tm) != n or len(te) != n:
        raise ValueError(f"length mismatch: x1={n}, tm={len(tm)}, te={len(te)}")
    if th.ndim == 1:
        th = np.broadcast_to(th, (n, 2))
    elif th.shape != (n, 2):
        raise ValueError(f"theta_hat must be (2,) or ({n}, 2), got {th.shape}")
    if n == 0:
        return np.empty(0)
    u = tm - te
    out = np.empty(n)
    s = ObserverState.initial(x1[0], k, x2_hat0)
    out[0] = s.x2_hat
    for j in range(n - 1):
        s = observer_step(s, x1[j], tm[j], te[j], th[j], k, dt, x1[j + 1], u[j + 1])
        out[j + 1] = s.x2_hat
    return out


def run_observer_two_pass(x1, tm, te, theta_hat_series, k: float, dt: float) -> np.ndarray:
    """Diagnostic mode: re-run the observer with the final parameter estimate frozen."""
    th = np.asarray(theta_hat_series, dtype=float)
    return run_observer(x1, tm, te, th[-1], k, dt)
