"""Two-step validation: observer scoring and event playback.

The single in-process pipeline lives here as well so the CLI subcommands
and the one-shot ``validate`` path share the same code.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .algebraic import AlgebraicSeries, estimate_series
from .drem import EstimationResult, EstimatorConfig, ExcitationWarning, run_estimation
from .machine import (
    GovernorTurbineParams, SgParams, air_gap_torque, estimate_t_ref, exciter_estimate,
    frequency_from_angle, simulate_governor, stator_currents, terminal_powers, x2_from_frequency,
)
from .network import NetworkParams, PmuSeries, TerminalSeries, map_to_terminal
from .observer import run_observer
from .phasor import dq_decompose

log = logging.getLogger(__name__)

NEVER_CONVERGED = math.inf


class EmptyWindowError(ValueError):
    pass


def smape(estimated, measured, start_index: int = 0) -> float:
    """Symmetric mean absolute percentage error in percent.

    Samples where both values are zero count as perfect matches but stay in
    the sample count.
    """
    est = np.asarray(estimated, dtype=float)
    meas = np.asarray(measured, dtype=float)
    if est.shape != meas.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {meas.shape}")
    if not 0 <= start_index < len(est):
        raise EmptyWindowError(f"start_index {start_index} leaves an empty window of {len(est)} samples")
    e, m = est[start_index:], meas[start_index:]
    den = 0.5 * (np.abs(e) + np.abs(m))
    ratio = np.divide(np.abs(e - m), den, out=np.zeros_like(den), where=den > 0)
    return float(100.0 * ratio.mean())


def convergence_time(t, theta_hat, band: float = 0.02) -> float:
    """Earliest time after which every component stays within ``band`` of its final value.

    Returns :data:`NEVER_CONVERGED` when only the last sample is inside the band.
    """
    t = np.asarray(t, dtype=float)
    th = np.asarray(theta_hat, dtype=float)
    if th.ndim == 1:
        th = th[:, None]
    if len(th) == 0:
        raise ValueError("empty series")
    final = th[-1]
    inside = np.all(np.abs(th - final) <= band * np.abs(final), axis=1)
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return float(t[0])
    k = outside[-1] + 1
    if k >= len(t) - 1 and len(t) > 1:
        return NEVER_CONVERGED
    return float(t[k])


# --- event playback -------------------------------------------------------

@dataclass
class PlaybackErrors:
    x2: np.ndarray
    it: np.ndarray
    pt: np.ndarray
    qt: np.ndarray


@dataclass
class PlaybackResult:
    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    it: np.ndarray
    pt: np.ndarray
    qt: np.ndarray

    def errors(self, x2_ref, y: TerminalSeries) -> PlaybackErrors:
        return PlaybackErrors(self.x2 - np.asarray(x2_ref), self.it - y.it, self.pt - y.pt,
                              self.qt - y.qt)


def event_playback(theta_hat, y: TerminalSeries, ef_hat, tm, p: SgParams, dt: float,
                   x0, substeps: int = 1) -> PlaybackResult:
    """Re-simulate the flux-decay model driven by recorded terminal voltage.

    ``theta_hat = (a1, a2)`` is mapped back to inertia and damping. The
    voltage magnitude and (unwrapped) angle, field voltage and mechanical
    torque are interpolated linearly inside each sample interval; the
    model is integrated with RK4 using ``substeps`` steps per interval.
    ``x0 = (x1, x2, x3)`` at the first sample.
    """
    ps = p.with_theta(float(theta_hat[0]), float(theta_hat[1]))
    n = len(y)
    vt, th = y.vt, np.unwrap(y.theta_t)
    ef = np.broadcast_to(np.asarray(ef_hat, dtype=float), (n,))
    tm = np.broadcast_to(np.asarray(tm, dtype=float), (n,))
    a1, a2 = ps.a1, ps.a2
    h = dt / substeps

    def electrical(x1, x3, v, ang):
        vd, vq = dq_decompose(v, ang, x1)
        itd, itq, _ = stator_currents(x3, vd, vq, ps)
        return vd, vq, itd, itq

    def rhs(x, v, ang, e, m):
        _, _, itd, itq = electrical(x[0], x[2], v, ang)
        te = air_gap_torque(x[2], itd, itq, ps)
        return np.array([x[1], -a1 * x[1] + a2 * (m - te),
                         (-x[2] - (ps.xd - ps.xdp) * itd + e) / ps.Td0p])

    xs = np.empty((n, 3))
    x = np.array(x0, dtype=float)
    xs[0] = x
    for k in range(n - 1):
        u0 = np.array([vt[k], th[k], ef[k], tm[k]])
        du = np.array([vt[k + 1], th[k + 1], ef[k + 1], tm[k + 1]]) - u0
        for j in range(substeps):
            s0 = j / substeps
            ua = u0 + s0 * du
            um = u0 + (s0 + 0.5 / substeps) * du
            ub = u0 + (s0 + 1.0 / substeps) * du
            k1 = rhs(x, *ua)
            k2 = rhs(x + 0.5 * h * k1, *um)
            k3 = rhs(x + 0.5 * h * k2, *um)
            k4 = rhs(x + h * k3, *ub)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"playback diverged at t={y.t[k + 1]:.3f}s")
        xs[k + 1] = x

    vd, vq, itd, itq = electrical(xs[:, 0], xs[:, 2], vt, th)
    pt, qt = terminal_powers(xs[:, 2], vd, vq, ps)
    return PlaybackResult(y.t.copy(), xs[:, 0], xs[:, 1], xs[:, 2], np.hypot(itd, itq), pt, qt)


# --- pipeline -------------------------------------------------------------

def reference_speed(y: TerminalSeries, dt: float, omega_s: float) -> np.ndarray:
    """Speed deviation read off the terminal voltage frequency."""
    return x2_from_frequency(frequency_from_angle(y.theta_t, dt, omega_s), omega_s)


def mechanical_torque(te_hat, x2_ref, gov: GovernorTurbineParams, dt: float,
                      omega_s: float, t_ref_auto: bool = False, window: float = 5.0) -> np.ndarray:
    """Turbine torque from the governor model driven by the measured speed.

    With ``t_ref_auto`` the setpoint is taken from the opening ``window``
    seconds, assuming the governor starts settled and neglecting damping.
    """
    if t_ref_auto:
        n = max(1, int(round(window / dt)))
        t_ref = estimate_t_ref(te_hat, dt, window) + gov.droop_gain * float(np.mean(x2_ref[:n])) / omega_s
        gov = dataclasses.replace(gov, T_ref=t_ref)
        log.info("governor setpoint estimated from data: %.6g", t_ref)
    return simulate_governor(x2_ref, gov, dt, omega_s)


@dataclass
class PipelineOutput:
    t: np.ndarray
    terminal: TerminalSeries
    algebraic: AlgebraicSeries
    estimation: EstimationResult
    x2_hat: np.ndarray
    x2_ref: np.ndarray
    tm: np.ndarray
    ef_hat: np.ndarray


def estimate_pipeline(y: TerminalSeries, sg: SgParams, gov: GovernorTurbineParams,
                      cfg: EstimatorConfig, tm=None, x2_ref=None,
                      delta2_ref: float | None = None, t_ref_auto: bool = False) -> PipelineOutput:
    """Algebraic observer, DREM estimator and speed observer on terminal data.

    ``tm`` defaults to the governor model driven by ``x2_ref``, which in
    turn defaults to the speed read off the terminal voltage frequency.
    """
    if len(y) < 3:
        raise ValueError("need at least 3 samples")
    dt = float(np.median(np.diff(y.t)))
    al = estimate_series(y, sg)
    if x2_ref is None:
        x2_ref = reference_speed(y, dt, sg.omega_s)
    x2_ref = np.asarray(x2_ref, dtype=float)
    if tm is None:
        tm = mechanical_torque(al.te_hat, x2_ref, gov, dt, sg.omega_s, t_ref_auto)
    tm = np.asarray(tm, dtype=float)
    est = run_estimation(y.t, al.x1_hat, tm, al.te_hat, cfg, dt, delta2_ref=delta2_ref)
    x2_hat = run_observer(al.x1_hat, tm, al.te_hat, est.theta_hat, cfg.k, dt)
    ef_hat = exciter_estimate(al.x3_hat, al.itd, sg, dt)
    return PipelineOutput(y.t.copy(), y, al, est, x2_hat, x2_ref, tm, ef_hat)


def playback_pipeline(out: PipelineOutput, sg: SgParams, theta_hat=None,
                      substeps: int = 1) -> PlaybackResult:
    theta = out.estimation.theta_hat[-1] if theta_hat is None else theta_hat
    dt = float(np.median(np.diff(out.t)))
    x0 = (out.algebraic.x1_hat[0], out.x2_ref[0], out.algebraic.x3_hat[0])
    return event_playback(theta, out.terminal, out.ef_hat, out.tm, sg, dt, x0, substeps)


@dataclass
class ValidationReport:
    scenario: str
    a1_hat: float
    a2_hat: float
    a1_ref: float
    a2_ref: float
    a1_rel_err_pct: float
    a2_rel_err_pct: float
    t_conv: float
    smape_x2_observer: float
    smape_x2_playback: float
    smape_it: float
    smape_pt: float
    smape_qt: float
    excitation_integral: float
    delta2_ref: float
    excitation_deficient: bool
    notes: list[str] = field(default_factory=list)

    def items(self) -> list[tuple[str, object]]:
        d = asdict(self)
        d.pop("notes")
        return list(d.items())

    def to_text(self) -> str:
        t_conv = "never" if math.isinf(self.t_conv) else f"{self.t_conv:.2f} s"
        lines = [
            f"scenario: {self.scenario}",
            f"  a1_hat = {self.a1_hat:.5g}  (reference {self.a1_ref:.5g}, error {self.a1_rel_err_pct:+.3f} %)",
            f"  a2_hat = {self.a2_hat:.5g}  (reference {self.a2_ref:.5g}, error {self.a2_rel_err_pct:+.3f} %)",
            f"  convergence time: {t_conv}",
            "  sMAPE after convergence (%):",
            f"    x2 observer  {self.smape_x2_observer:8.4f}",
            f"    x2 playback  {self.smape_x2_playback:8.4f}",
            f"    It playback  {self.smape_it:8.4f}",
            f"    Pt playback  {self.smape_pt:8.4f}",
            f"    Qt playback  {self.smape_qt:8.4f}",
            f"  excitation integral: {self.excitation_integral:.6g}  (delta2_ref {self.delta2_ref:.6g})",
        ]
        if self.excitation_deficient:
            lines.append("  WARNING: excitation deficient")
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "nan")
    return str(v)


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = [k for k, _ in reports[0].items()]
    w.writerow(keys)
    for r in reports:
        w.writerow([_fmt(v) for _, v in r.items()])
    return buf.getvalue()


def score(out: PipelineOutput, pb: PlaybackResult, sg: SgParams, scenario: str,
          x2_true=None, band: float = 0.02) -> ValidationReport:
    """Assemble the report; sMAPE windows start at the convergence time."""
    th = out.estimation.theta_hat
    t_conv = convergence_time(out.t, th, band)
    notes = list(out.estimation.notes)
    if math.isinf(t_conv):
        notes.append("parameters never settled in the band; scoring the last sample only")
        k0 = len(out.t) - 1
    else:
        k0 = int(np.searchsorted(out.t, t_conv))
    x2_ref = out.x2_ref if x2_true is None else np.asarray(x2_true)
    y = out.terminal
    a1, a2 = (float(v) for v in th[-1])
    return ValidationReport(
        scenario=scenario, a1_hat=a1, a2_hat=a2, a1_ref=sg.a1, a2_ref=sg.a2,
        a1_rel_err_pct=100 * (a1 - sg.a1) / sg.a1, a2_rel_err_pct=100 * (a2 - sg.a2) / sg.a2,
        t_conv=t_conv,
        smape_x2_observer=smape(out.x2_hat, x2_ref, k0),
        smape_x2_playback=smape(pb.x2, x2_ref, k0),
        smape_it=smape(pb.it, y.it, k0), smape_pt=smape(pb.pt, y.pt, k0),
        smape_qt=smape(pb.qt, y.qt, k0),
        excitation_integral=float(out.estimation.excitation[-1]),
        delta2_ref=out.estimation.delta2_ref,
        excitation_deficient=out.estimation.excitation_deficient, notes=notes,
    )


@dataclass
class Scenario:
    """Recorded substation data plus whatever ground truth is available.

    ``governor`` overrides the shared governor model for this recording.
    """

    name: str
    pmu: PmuSeries
    tm: np.ndarray | None = None
    x2: np.ndarray | None = None
    governor: GovernorTurbineParams | None = None
    t_ref_auto: bool = False


def validate_scenario(sc: Scenario, sg: SgParams, net: NetworkParams, gov: GovernorTurbineParams,
                      cfg: EstimatorConfig, delta2_ref: float | None = None,
                      band: float = 0.02, substeps: int = 1):
    """Map, estimate, observe, play back and score one scenario.

    Returns ``(report, pipeline_output, playback)``.
    """
    y = map_to_terminal(sc.pmu, net)
    out = estimate_pipeline(y, sg, sc.governor or gov, cfg, tm=sc.tm, x2_ref=sc.x2,
                            delta2_ref=delta2_ref, t_ref_auto=sc.t_ref_auto)
    pb = playback_pipeline(out, sg, substeps=substeps)
    return score(out, pb, sg, sc.name, band=band), out, pb


def auto_cross_validate(auto: Scenario, cross: Scenario, sg: SgParams, net: NetworkParams,
                        gov: GovernorTurbineParams, cfg: EstimatorConfig, band: float = 0.02):
    """Auto-validation calibrates ``delta2_ref``; the cross run reuses it untouched.

    Returns ``(auto_report, cross_report)``.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExcitationWarning)
        rep_a, out_a, _ = validate_scenario(auto, sg, net, gov, cfg, band=band)
        ref = out_a.estimation.delta2_ref
        rep_c, _, _ = validate_scenario(cross, sg, net, gov, cfg, delta2_ref=ref, band=band)
    for rep in (rep_a, rep_c):
        if rep.excitation_deficient:
            warnings.warn(f"{rep.scenario}: excitation deficient", ExcitationWarning, stacklevel=2)
    return rep_a, rep_c
