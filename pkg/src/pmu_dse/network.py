"""Mapping of substation phasors to the generator terminal and back.

Current directions: ``I_PMU`` is the line current at the substation bus
flowing *into the line towards the plant*. Every current downstream of
the line (``I_HV``, ``I_LV``, ``I_SG``) flows from the plant towards the
grid, and ``I_AS`` is the current drawn by the auxiliary load. For an
exporting generator ``Re(V_PMU * conj(I_PMU))`` is therefore negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SingularNetworkError(ValueError):
    pass


class MappingError(ValueError):
    """Failure at a specific sample of a series."""

    def __init__(self, index: int, reason: str):
        super().__init__(f"sample {index}: {reason}")
        self.index = index


@dataclass(frozen=True)
class LineParams:
    Z: complex = 0j
    Y: complex = 0j

    def __post_init__(self):
        if not (np.isfinite(self.Z) and np.isfinite(self.Y)):
            raise ValueError("line parameters must be finite")
        det = np.linalg.det(line_abcd(self))
        if abs(det) < 1e-12:
            raise SingularNetworkError(f"line transfer matrix is singular (det={det})")

    def violations(self) -> list[tuple[str, str]]:
        out = []
        for name in ("Z", "Y"):
            if not np.isfinite(getattr(self, name)):
                out.append((name, "must be finite"))
        return out


@dataclass(frozen=True)
class TransformerParams:
    rcu_hv: float = 0.0
    rcu_lv: float = 0.0
    xsig_hv: float = 0.0
    xsig_lv: float = 0.0
    xm: float = 1e6
    rfe: float = 1e6
    tau: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(f"{k}: {v}" for k, v in problems))

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if not self.xm > 0:
            out.append(("xm", f"must be > 0, got {self.xm}"))
        if not self.rfe > 0:
            out.append(("rfe", f"must be > 0, got {self.rfe}"))
        if 1 + self.tau == 0:
            out.append(("tau", "1 + tau must be nonzero"))
        return out

    @property
    def z_hv(self) -> complex:
        return complex(self.rcu_hv, self.xsig_hv)

    @property
    def z_lv(self) -> complex:
        return complex(self.rcu_lv, self.xsig_lv)

    @property
    def y_m(self) -> complex:
        """Shunt admittance of the magnetising branch, ``1/rfe + 1/(j xm)``."""
        return (self.rfe + 1j * self.xm) / (1j * self.rfe * self.xm)


@dataclass(frozen=True)
class AuxParams:
    p_as_max: float = 0.0
    p_sg_max: float = 1.0
    pf: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(f"{k}: {v}" for k, v in problems))

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if not self.p_as_max >= 0:
            out.append(("p_as_max", f"must be >= 0, got {self.p_as_max}"))
        if not self.p_sg_max > self.p_as_max:
            out.append(("p_sg_max", f"must exceed p_as_max ({self.p_as_max}), got {self.p_sg_max}"))
        if not 0 < self.pf <= 1:
            out.append(("pf", f"must be in (0, 1], got {self.pf}"))
        return out

    @property
    def ratio(self) -> float:
        return self.p_as_max / (self.p_sg_max - self.p_as_max)

    @property
    def q_per_p(self) -> float:
        return math.tan(math.acos(self.pf))


@dataclass(frozen=True)
class NetworkParams:
    line: LineParams = field(default_factory=LineParams)
    transformer: TransformerParams = field(default_factory=TransformerParams)
    aux: AuxParams = field(default_factory=AuxParams)


@dataclass(frozen=True)
class PmuSample:
    t: float
    v: complex
    i: complex
    tap: float = 0.0


@dataclass(frozen=True)
class TerminalMeasurement:
    t: float
    vt: float
    theta_t: float
    it: float
    phi_t: float

    @property
    def v(self) -> complex:
        return complex(np.exp(1j * self.theta_t) * self.vt)

    @property
    def i(self) -> complex:
        return complex(np.exp(1j * self.phi_t) * self.it)


@dataclass
class PmuSeries:
    """Substation positive-sequence phasors, one row per reporting instant."""

    t: np.ndarray
    v: np.ndarray
    i: np.ndarray
    tap: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v, dtype=complex)
        self.i = np.asarray(self.i, dtype=complex)
        self.tap = np.broadcast_to(np.asarray(self.tap, dtype=float), self.t.shape).copy()
        if not (self.t.shape == self.v.shape == self.i.shape):
            raise ValueError("PMU series arrays must have equal length")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k) -> PmuSample:
        return PmuSample(float(self.t[k]), complex(self.v[k]), complex(self.i[k]), float(self.tap[k]))


@dataclass
class TerminalSeries:
    t: np.ndarray
    v: np.ndarray
    i: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v, dtype=complex)
        self.i = np.asarray(self.i, dtype=complex)
        if not (self.t.shape == self.v.shape == self.i.shape):
            raise ValueError("terminal series arrays must have equal length")

    @classmethod
    def from_polar(cls, t, vt, theta_t, it, phi_t) -> "TerminalSeries":
        return cls(t, np.asarray(vt) * np.exp(1j * np.asarray(theta_t)),
                   np.asarray(it) * np.exp(1j * np.asarray(phi_t)))

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k) -> TerminalMeasurement:
        return TerminalMeasurement(float(self.t[k]), abs(self.v[k]), float(np.angle(self.v[k])),
                                   abs(self.i[k]), float(np.angle(self.i[k])))

    @property
    def vt(self):
        return np.abs(self.v)

    @property
    def theta_t(self):
        return np.angle(self.v)

    @property
    def it(self):
        return np.abs(self.i)

    @property
    def phi_t(self):
        return np.angle(self.i)

    @property
    def pt(self):
        return (self.v * np.conj(self.i)).real

    @property
    def qt(self):
        return (self.v * np.conj(self.i)).imag


# --- element models -------------------------------------------------------

def line_abcd(lp: LineParams) -> np.ndarray:
    """Two-port matrix of the pi line acting on ``(V_PMU, -I_PMU)``; det is 1."""
    a = 1 + lp.Z * lp.Y / 2
    return np.array([[a, lp.Z], [lp.Y + lp.Z * lp.Y ** 2 / 4, a]], dtype=complex)


def line_pmu_to_hv(v_pmu, i_pmu, lp: LineParams):
    a = 1 + 0.5 * lp.Z * lp.Y
    v_hv = a * v_pmu - lp.Z * i_pmu
    i_hv = (lp.Y + lp.Z * lp.Y ** 2 / 4) * v_pmu - a * i_pmu
    return v_hv, i_hv


def transformer_hv_to_lv(v_hv, i_hv, tp: TransformerParams, tau=None):
    """HV-side to LV-side phasors through the T model with tap changer.

    ``tau`` overrides ``tp.tau`` and may be an array (one value per sample).
    """
    tau = tp.tau if tau is None else tau
    n = 1 + np.asarray(tau, dtype=float)
    if np.any(n == 0):
        raise ValueError("invalid tap: 1 + tau == 0")
    if np.ndim(n) == 0:
        n = float(n)
    rot = np.exp(-1j * tp.phi)
    shunt = tp.rfe + 1j * tp.xm
    jrx = 1j * tp.rfe * tp.xm
    i_lv = rot * (v_hv * shunt / (n * jrx) + i_hv * n + i_hv * n * tp.z_hv * shunt / jrx)
    v_lv = i_lv * tp.z_lv + rot * (v_hv / n + i_hv * tp.z_hv * n)
    return v_lv, i_lv


def transformer_matrix(tp: TransformerParams, tau=None) -> np.ndarray:
    """``[[V_LV], [I_LV]] = M @ [[V_HV], [I_HV]]``; stacked along axis 0 for array ``tau``."""
    tau = tp.tau if tau is None else tau
    n = 1 + np.asarray(tau, dtype=float)
    rot = np.exp(-1j * tp.phi)
    ym, zh, zl = tp.y_m, tp.z_hv, tp.z_lv
    m21 = rot * ym / n
    m22 = rot * n * (1 + zh * ym)
    m11 = zl * m21 + rot / n
    m12 = zl * m22 + rot * zh * n
    return np.moveaxis(np.array([[m11, m12], [m21, m22]], dtype=complex), [0, 1], [-2, -1])


def network_matrix(net: NetworkParams, tau=None) -> np.ndarray:
    """Composite map ``[[V_LV], [I_LV]] = M @ [[V_PMU], [I_PMU]]``."""
    abcd = line_abcd(net.line)
    line = abcd @ np.diag([1, -1]).astype(complex)
    return transformer_matrix(net.transformer, tau) @ line


def aux_power(plv_history, t: float, ap: AuxParams):
    """Auxiliary-system demand from the running mean of ``P_LV`` since ``t0``.

    ``plv_history`` is a ``(times, values)`` pair covering ``[t0, t]``.
    Returns ``(p_as, q_as)``.
    """
    if not t > ap.t0:
        raise ValueError(f"empty averaging window: t={t} <= t0={ap.t0}")
    times, values = (np.asarray(a, dtype=float) for a in plv_history)
    sel = (times >= ap.t0) & (times <= t)
    integral = np.trapezoid(values[sel], times[sel])
    p_as = ap.ratio * integral / (t - ap.t0)
    return p_as, p_as * ap.q_per_p


def aux_current(p_as, q_as, v_lv):
    """Auxiliary load current from its complex power and the LV voltage.

    ``I_y`` is evaluated first, then ``I_x`` from it. Where ``V_x`` is
    tiny compared to ``|V|`` the algebraically identical form
    ``(P*V_x + Q*V_y)/|V|^2`` replaces the division by ``V_x``.
    """
    v_lv = np.asarray(v_lv, dtype=complex)
    vx, vy = v_lv.real, v_lv.imag
    vsq = vx ** 2 + vy ** 2
    if np.any(vsq == 0):
        raise ValueError("zero LV voltage: auxiliary current undefined")
    iy = (p_as * vy - q_as * vx) / vsq
    safe = np.abs(vx) > 1e-6 * np.sqrt(vsq)
    with np.errstate(divide="ignore", invalid="ignore"):
        ix = np.where(safe, (p_as - vy * iy) / np.where(safe, vx, 1.0),
                      (p_as * vx + q_as * vy) / vsq)
    out = ix + 1j * iy
    return complex(out) if out.ndim == 0 else out


class AuxAverager:
    """Streaming trapezoidal running mean of ``P_LV`` from ``t0``.

    Before the first sample ``P_LV`` is taken as constant at its first
    value, so ``t0`` may precede the series start.
    """

    def __init__(self, ap: AuxParams):
        self.ap = ap
        self.integral = 0.0
        self.last_t = None
        self.last_p = None

    def peek(self, t: float, p_lv: float) -> float:
        """``P_AS`` at ``t`` if ``p_lv`` were recorded there; state unchanged."""
        integral = self._integral_to(t, p_lv)
        if t <= self.ap.t0:
            return self.ap.ratio * p_lv
        return self.ap.ratio * integral / (t - self.ap.t0)

    def push(self, t: float, p_lv: float) -> float:
        p_as = self.peek(t, p_lv)
        self.integral = self._integral_to(t, p_lv)
        self.last_t, self.last_p = t, p_lv
        return p_as

    def _integral_to(self, t, p_lv):
        if self.last_t is None:
            return max(t - self.ap.t0, 0.0) * p_lv
        return self.integral + 0.5 * (t - self.last_t) * (self.last_p + p_lv)


def running_aux_power(t, p_lv, ap: AuxParams) -> np.ndarray:
    """Vectorised ``P_AS`` for a whole series (same rule as :class:`AuxAverager`)."""
    t = np.asarray(t, dtype=float)
    p_lv = np.asarray(p_lv, dtype=float)
    if t[0] < ap.t0:
        raise ValueError(f"aux window start t0={ap.t0} is after the first sample t={t[0]}")
    integral = np.empty_like(p_lv)
    integral[0] = (t[0] - ap.t0) * p_lv[0]
    integral[1:] = integral[0] + np.cumsum(0.5 * np.diff(t) * (p_lv[1:] + p_lv[:-1]))
    span = t - ap.t0
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(span > 0, integral / np.where(span > 0, span, 1.0), p_lv)
    return ap.ratio * mean


# --- composite maps ------------------------------------------------------

def map_to_terminal(samples: PmuSeries, net: NetworkParams) -> TerminalSeries:
    """Map substation phasors to the generator terminal, sample by sample."""
    if len(samples) == 0:
        raise ValueError("empty PMU series")
    if np.any(np.diff(samples.t) <= 0):
        k = int(np.argmax(np.diff(samples.t) <= 0)) + 1
        raise MappingError(k, "timestamps not strictly increasing")
    if samples.t[0] < net.aux.t0:
        raise MappingError(0, f"aux window start t0={net.aux.t0} after first timestamp")
    if np.any(1 + samples.tap == 0):
        raise MappingError(int(np.argmax(1 + samples.tap == 0)), "invalid tap: 1 + tau == 0")
    v_hv, i_hv = line_pmu_to_hv(samples.v, samples.i, net.line)
    v_lv, i_lv = transformer_hv_to_lv(v_hv, i_hv, net.transformer, samples.tap)
    p_lv = (v_lv * np.conj(i_lv)).real
    p_as = running_aux_power(samples.t, p_lv, net.aux)
    q_as = p_as * net.aux.q_per_p
    bad = np.flatnonzero(np.abs(v_lv) == 0)
    if bad.size:
        raise MappingError(int(bad[0]), "zero LV voltage: auxiliary current undefined")
    i_as = aux_current(p_as, q_as, v_lv)
    return TerminalSeries(samples.t.copy(), v_lv, i_lv + i_as)


def inverse_map(terminal: TerminalSeries, net: NetworkParams, tap=None,
                aux: AuxAverager | None = None) -> PmuSeries:
    """Reconstruct substation phasors that map onto the given terminal series.

    ``aux`` carries the auxiliary running-mean state when the series
    continues an earlier one; a fresh averager is used otherwise.
    """
    n = len(terminal)
    tap = np.broadcast_to(np.asarray(net.transformer.tau if tap is None else tap, dtype=float), (n,))
    aux = aux or AuxAverager(net.aux)
    v_sg, i_sg, t = terminal.v, terminal.i, terminal.t
    p_sg = (v_sg * np.conj(i_sg)).real
    ratio = net.aux.ratio
    p_as = np.empty(n)
    for k in range(n):
        # P_LV = P_SG - P_AS, and P_AS depends linearly on P_LV(t_k)
        tk = t[k]
        if aux.last_t is None:
            p_as[k] = ratio * p_sg[k] / (1 + ratio)
        else:
            span = tk - net.aux.t0
            w = 0.5 * (tk - aux.last_t)
            base = aux.integral + w * aux.last_p
            p_as[k] = ratio * (base + w * p_sg[k]) / (span + ratio * w)
        aux.push(tk, p_sg[k] - p_as[k])
    i_as = aux_current(p_as, p_as * net.aux.q_per_p, v_sg)
    i_lv = i_sg - i_as
    m = network_matrix(net, tap)
    det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    if np.any(np.abs(det) < 1e-14):
        raise SingularNetworkError("network transfer matrix is singular")
    v_pmu = (m[:, 1, 1] * v_sg - m[:, 0, 1] * i_lv) / det
    i_pmu = (-m[:, 1, 0] * v_sg + m[:, 0, 0] * i_lv) / det
    return PmuSeries(t.copy(), v_pmu, i_pmu, tap.copy())
