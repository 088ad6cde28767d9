"""DREM identification of ``theta = [a1, a2]`` from rotor angle and torque.

The swing equation ``x1'' = -a1*x1' + a2*(Tm - Te)`` is filtered by the
third-order lag ``F`` into the linear regression ``z = psi^T theta`` with

    z = F[s^2 x1],   psi = [-F[s x1], F[Tm - Te]].

The single-input two-output operator ``H = K*[1, c1*c2*s/((c1+s)(c2+s))]``
turns it into the square system ``Z = Psi theta``; multiplying by
``adj(Psi)`` decouples it into two scalar regressions
``adj(Psi) Z = det(Psi) theta`` which are solved by gradient estimators
whose gains are rescaled by the current level of excitation.

All continuous filters are discretised with the bilinear transform at
the data rate; the estimators use forward Euler.
"""

from __future__ import annotations

import functools
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import cont2discrete

log = logging.getLogger(__name__)


class StepTooLargeError(ValueError):
    pass


class StepInstabilityWarning(RuntimeWarning):
    pass


class ExcitationWarning(UserWarning):
    """The mixed regressor carries too little energy for parameter convergence."""


@dataclass(frozen=True)
class EstimatorConfig:
    lambda1: float = 8.0
    lambda2: float = 6.2
    lambda3: float = 7.4
    c1: float = 8.0
    c2: float = 6.0
    # c3 is listed with the tuning set but has no role in H; kept so configs round-trip
    c3: float | None = None
    K: float = 6.5
    gamma1: float = 850.0
    gamma2: float = 850.0
    k: float = 8.0
    epsilon: float = 0.01
    gain_upper: float = 100.0
    ma_window: float = 10.0
    delta2_ref: float | None = None
    gain_floor: float = 1e-12
    excitation_floor: float = 1e-10
    theta0: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(f"{k}: {v}" for k, v in problems))

    def violations(self) -> list[tuple[str, str]]:
        out = []
        for name in ("lambda1", "lambda2", "lambda3", "c1", "c2"):
            if not getattr(self, name) > 0:
                out.append((name, f"pole must be > 0, got {getattr(self, name)}"))
        for name in ("K", "gamma1", "gamma2", "k", "ma_window"):
            if not getattr(self, name) > 0:
                out.append((name, f"must be > 0, got {getattr(self, name)}"))
        if not 0 < self.epsilon < self.gain_upper:
            out.append(("epsilon", f"need 0 < epsilon < gain_upper, got {self.epsilon}"))
        if self.delta2_ref is not None and not self.delta2_ref >= 0:
            out.append(("delta2_ref", f"must be >= 0, got {self.delta2_ref}"))
        return out

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([self.gamma1, self.gamma2])


# --- discrete LTI building blocks -----------------------------------------

class DiscreteLTI:
    """State-space system ``x+ = A x + B u``, ``y = C x + D u`` (scalar input)."""

    def __init__(self, A, B, C, D):
        self.A, self.B, self.C, self.D = (np.asarray(m, dtype=float) for m in (A, B, C, D))
        self.B = self.B.reshape(-1)
        self.D = self.D.reshape(-1)
        self.x = np.zeros(self.A.shape[0])

    def steady_state(self, u0: float, du: float = 0.0) -> np.ndarray:
        """State consistent with an input ramp ``u_k = u0 + k*du`` since ``k = -inf``."""
        n = self.A.shape[0]
        m = np.eye(n) - self.A
        v = np.linalg.solve(m, self.B * du)
        return np.linalg.solve(m, self.B * u0 - v)

    def reset(self, u0: float = 0.0, du: float = 0.0):
        self.x = self.steady_state(u0, du)

    def step(self, u: float) -> np.ndarray:
        y = self.C @ self.x + self.D * u
        self.x = self.A @ self.x + self.B * u
        return y

    def run(self, u, init: float | None = None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        self.reset(u[0] if init is None else init)
        out = np.empty((len(u), self.C.shape[0]))
        for k, uk in enumerate(u):
            out[k] = self.step(uk)
        return out


def _bilinear(A, B, C, D, dt):
    ad, bd, cd, dd, _ = cont2discrete((A, B, C, D), dt, method="bilinear")
    return ad, bd, cd, dd


def _check_lag_step(dt, lambdas):
    if not dt > 0:
        raise StepTooLargeError(f"dt must be positive, got {dt}")
    if dt * max(lambdas) >= 0.5:
        raise StepTooLargeError(
            f"dt*max(lambda) = {dt * max(lambdas):.3g} >= 0.5; sample faster or use slower poles")


@functools.lru_cache(maxsize=64)
def lag3_matrices(dt: float, l1: float, l2: float, l3: float):
    """Bilinear realisation with outputs ``(F, sF, s^2F)`` of the third-order lag.

    Controllable canonical form of ``1/((l1+s)(l2+s)(l3+s))`` with the state
    ``(w, w', w'')`` scaled by ``l1*l2*l3``, so the three outputs are the
    filtered signal and its first two filtered derivatives.
    """
    _check_lag_step(dt, (l1, l2, l3))
    c2, c1, c0 = np.poly([-l1, -l2, -l3])[1:]
    A = np.array([[0, 1, 0], [0, 0, 1], [-c0, -c1, -c2]], dtype=float)
    B = np.array([[0], [0], [1]], dtype=float)
    C = l1 * l2 * l3 * np.eye(3)
    D = np.zeros((3, 1))
    return _bilinear(A, B, C, D, dt)


@functools.lru_cache(maxsize=64)
def h_matrices(dt: float, K: float, c1: float, c2: float):
    """Bilinear realisation of ``H = K*[1, c1 c2 s/((c1+s)(c2+s))]``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    A = np.array([[0, 1], [-c1 * c2, -(c1 + c2)]], dtype=float)
    B = np.array([[0], [1]], dtype=float)
    C = np.array([[0, 0], [0, K * c1 * c2]], dtype=float)
    D = np.array([[K], [0]], dtype=float)
    return _bilinear(A, B, C, D, dt)


class Lag3Filter(DiscreteLTI):
    """Third-order lag; ``step`` returns ``[F[u], F[s u], F[s^2 u]]``."""

    def __init__(self, dt: float, lambdas=(8.0, 6.2, 7.4)):
        super().__init__(*lag3_matrices(float(dt), *map(float, lambdas)))


class HOperator(DiscreteLTI):
    """Gain channel and band-limited derivative channel; ``step`` returns both."""

    def __init__(self, dt: float, K: float, c1: float, c2: float):
        super().__init__(*h_matrices(float(dt), float(K), float(c1), float(c2)))


def lag3_step(state, u, dt, l1, l2, l3):
    """One sample of ``F``; returns ``(new_state, F[u])``."""
    A, B, C, D = lag3_matrices(float(dt), float(l1), float(l2), float(l3))
    state = np.asarray(state, dtype=float)
    y = C[0] @ state + D[0, 0] * u
    return A @ state + B.reshape(-1) * u, float(y)


def h_operator_step(state, u, dt, K, c1, c2):
    """One sample of ``H``; returns ``(new_state, [out1, out2])``."""
    A, B, C, D = h_matrices(float(dt), float(K), float(c1), float(c2))
    state = np.asarray(state, dtype=float)
    y = C @ state + D.reshape(-1) * u
    return A @ state + B.reshape(-1) * u, y


def lag3_response(u, dt, lambdas=(8.0, 6.2, 7.4), init: float | None = 0.0) -> np.ndarray:
    """``F[u]`` for a whole series, starting from rest by default."""
    return Lag3Filter(dt, lambdas).run(u, init)[:, 0]


def filtered_derivatives(x1, dt, lambdas=(8.0, 6.2, 7.4), init: float | None = None):
    """``(F[s^2 x1], F[s x1])`` realised as proper filters driven by ``x1``.

    By default the filter starts at steady state for the first sample.
    """
    out = Lag3Filter(dt, lambdas).run(x1, init)
    return out[:, 2], out[:, 1]


def h_operator(u, dt, K, c1, c2, init: float | None = None) -> np.ndarray:
    return HOperator(dt, K, c1, c2).run(u, init)


# --- mixing, gains and scalar estimators ----------------------------------

def extend_and_mix(z_h, psi_h):
    """``(det(Psi), adj(Psi) @ Z)``; leading axes broadcast over samples."""
    z_h = np.asarray(z_h, dtype=float)
    psi_h = np.asarray(psi_h, dtype=float)
    a, b = psi_h[..., 0, 0], psi_h[..., 0, 1]
    c, d = psi_h[..., 1, 0], psi_h[..., 1, 1]
    delta = a * d - b * c
    z1, z2 = z_h[..., 0], z_h[..., 1]
    zcal = np.stack([d * z1 - b * z2, -c * z1 + a * z2], axis=-1)
    return delta, zcal


def adjugate(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])


def adaptive_gain(delta2_ma: float, delta2_ref: float, epsilon: float = 0.01,
                  gain_upper: float = 100.0, floor: float = 1e-12) -> float:
    """Excitation-normalising gain ``delta2_ref / mean(delta^2)``, clamped."""
    return min(max(delta2_ref / max(delta2_ma, floor), epsilon), gain_upper)


def estimator_step(theta_j: float, delta: float, zcal_j: float, gamma_j: float,
                   k_gamma_j: float, dt: float) -> float:
    """Forward-Euler step of ``theta' = -gamma*K*delta*(delta*theta - zcal)``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    rate = gamma_j * k_gamma_j * delta * delta * dt
    if rate >= 2:
        warnings.warn(f"estimator step unstable: gamma*K*delta^2*dt = {rate:.3g} >= 2",
                      StepInstabilityWarning, stacklevel=2)
    return theta_j - dt * gamma_j * k_gamma_j * delta * (delta * theta_j - zcal_j)


def excitation_metric(delta, dt: float) -> np.ndarray:
    """Running trapezoidal integral of ``delta^2``."""
    d2 = np.square(np.asarray(delta, dtype=float))
    out = np.zeros_like(d2)
    out[1:] = np.cumsum(0.5 * dt * (d2[1:] + d2[:-1]))
    return out


class MovingAverage:
    """Mean over the last ``n`` samples (fewer while the window fills)."""

    def __init__(self, n: int):
        self.n = max(1, int(n))
        self.buf: deque[float] = deque()
        self.total = 0.0
        self._since_resum = 0

    def push(self, value: float) -> float:
        self.buf.append(value)
        self.total += value
        if len(self.buf) > self.n:
            self.total -= self.buf.popleft()
        self._since_resum += 1
        if self._since_resum >= self.n:
            # bound rounding drift of the running sum
            self.total = math.fsum(self.buf)
            self._since_resum = 0
        return max(self.total, 0.0) / len(self.buf)


@dataclass
class DremState:
    x1_filter: Lag3Filter
    u_filter: Lag3Filter
    h_z: HOperator
    h_psi1: HOperator
    h_psi2: HOperator
    theta_hat: np.ndarray
    delta2_ma: MovingAverage
    excitation: float = 0.0
    last_delta2: float | None = None


@dataclass
class DremStep:
    z: float
    psi_regressor: np.ndarray
    delta: float
    zcal: np.ndarray
    delta2_ma: float
    k_gamma: np.ndarray
    theta_hat: np.ndarray
    excitation: float


class DremEstimator:
    """Sample-by-sample DREM estimator for ``theta = [a1, a2]``."""

    def __init__(self, cfg: EstimatorConfig, dt: float, delta2_ref: float | None = None,
                 x1_rate: float = 0.0):
        self.cfg = cfg
        self.x1_rate = float(x1_rate)
        self.dt = float(dt)
        ref = cfg.delta2_ref if delta2_ref is None else delta2_ref
        if ref is None:
            raise ValueError("delta2_ref is not calibrated; run calibrate_delta2_ref first")
        self.delta2_ref = float(ref)
        self.state: DremState | None = None

    def _init_state(self, x1: float, u: float):
        cfg, dt = self.cfg, self.dt
        st = DremState(
            x1_filter=Lag3Filter(dt, cfg.lambdas),
            u_filter=Lag3Filter(dt, cfg.lambdas),
            h_z=HOperator(dt, cfg.K, cfg.c1, cfg.c2),
            h_psi1=HOperator(dt, cfg.K, cfg.c1, cfg.c2),
            h_psi2=HOperator(dt, cfg.K, cfg.c1, cfg.c2),
            theta_hat=np.array(cfg.theta0, dtype=float),
            delta2_ma=MovingAverage(round(cfg.ma_window / dt)),
        )
        # filters start in steady state: x1 as a ramp at x1_rate, torque as a constant
        st.x1_filter.reset(x1, self.x1_rate * dt)
        st.u_filter.reset(u)
        st.h_z.reset(0.0)
        st.h_psi1.reset(-self.x1_rate)
        st.h_psi2.reset(u)
        self.state = st

    def update(self, x1: float, u: float, adapt: bool = True) -> DremStep:
        """Consume one sample of rotor angle and ``Tm - Te``.

        With ``adapt=False`` only the regressors are advanced.
        """
        if self.state is None:
            self._init_state(x1, u)
        st, cfg = self.state, self.cfg
        fx = st.x1_filter.step(x1)
        z, psi1 = fx[2], -fx[1]
        psi2 = st.u_filter.step(u)[0]
        zh = st.h_z.step(z)
        p1 = st.h_psi1.step(psi1)
        p2 = st.h_psi2.step(psi2)
        psi_h = np.array([[p1[0], p2[0]], [p1[1], p2[1]]])
        delta, zcal = extend_and_mix(zh, psi_h)
        delta = float(delta)
        d2 = delta * delta
        if st.last_delta2 is not None:
            st.excitation += 0.5 * self.dt * (st.last_delta2 + d2)
        st.last_delta2 = d2
        d2_ma = st.delta2_ma.push(d2)
        kg = adaptive_gain(d2_ma, self.delta2_ref, cfg.epsilon, cfg.gain_upper, cfg.gain_floor)
        k_gamma = np.array([kg, kg])
        if adapt:
            st.theta_hat = np.array([
                estimator_step(st.theta_hat[j], delta, zcal[j], cfg.gammas[j], k_gamma[j], self.dt)
                for j in range(2)
            ])
        return DremStep(z, np.array([psi1, psi2]), delta, zcal, d2_ma, k_gamma,
                        st.theta_hat.copy(), st.excitation)


@dataclass
class EstimationResult:
    t: np.ndarray
    theta_hat: np.ndarray       # (n, 2)
    delta: np.ndarray
    delta2_ma: np.ndarray
    k_gamma: np.ndarray         # (n, 2)
    excitation: np.ndarray
    z: np.ndarray
    psi_regressor: np.ndarray   # (n, 2)
    zcal: np.ndarray            # (n, 2)
    delta2_ref: float
    excitation_rate: float
    excitation_deficient: bool = False
    unstable_steps: int = 0
    notes: list[str] = field(default_factory=list)


def initial_rate(x1, dt: float) -> float:
    return float((x1[1] - x1[0]) / dt) if len(x1) > 1 else 0.0


def mixed_regressor(x1, u, cfg: EstimatorConfig, dt: float):
    """``Delta`` series alone; independent of the estimator state and gains."""
    est = DremEstimator(cfg, dt, delta2_ref=1.0, x1_rate=initial_rate(x1, dt))
    return np.array([est.update(a, b, adapt=False).delta for a, b in zip(x1, u)])


def calibrate_delta2_ref(x1, tm, te, cfg: EstimatorConfig, dt: float) -> float:
    """Mean of ``Delta^2`` over a reference run."""
    u = np.asarray(tm, dtype=float) - np.asarray(te, dtype=float)
    delta = mixed_regressor(np.asarray(x1, dtype=float), u, cfg, dt)
    return float(np.mean(delta ** 2))


def run_estimation(t, x1, tm, te, cfg: EstimatorConfig, dt: float,
                   delta2_ref: float | None = None) -> EstimationResult:
    """Run the estimator over aligned series of rotor angle and torques.

    ``delta2_ref`` overrides the configured reference level; when neither
    is set the run calibrates on itself and records a note.
    """
    x1 = np.asarray(x1, dtype=float)
    tm = np.asarray(tm, dtype=float)
    te = np.asarray(te, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (len(t) == len(x1) == len(tm) == len(te)):
        raise ValueError("t, x1, tm and te must have equal length")
    if len(t) == 0:
        raise ValueError("empty series")
    notes = []
    ref = cfg.delta2_ref if delta2_ref is None else delta2_ref
    if ref is None:
        ref = calibrate_delta2_ref(x1, tm, te, cfg, dt)
        notes.append(f"delta2_ref calibrated on this run: {ref:.6g}")
        log.info("delta2_ref calibrated on this run: %.6g", ref)
    est = DremEstimator(cfg, dt, delta2_ref=ref, x1_rate=initial_rate(x1, dt))
    n = len(t)
    theta = np.empty((n, 2))
    delta = np.empty(n)
    d2ma = np.empty(n)
    kg = np.empty((n, 2))
    exc = np.empty(n)
    z = np.empty(n)
    psi = np.empty((n, 2))
    zcal = np.empty((n, 2))
    unstable = 0
    u = tm - te
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", StepInstabilityWarning)
        for k in range(n):
            s = est.update(x1[k], u[k])
            theta[k], delta[k], d2ma[k], kg[k], exc[k] = s.theta_hat, s.delta, s.delta2_ma, s.k_gamma, s.excitation
            z[k], psi[k], zcal[k] = s.z, s.psi_regressor, s.zcal
        unstable = sum(1 for w in caught if issubclass(w.category, StepInstabilityWarning))
    if unstable:
        msg = f"{unstable} estimator steps violated gamma*K*delta^2*dt < 2"
        notes.append(msg)
        warnings.warn(msg, StepInstabilityWarning, stacklevel=2)

    window = min(cfg.ma_window, t[-1] - t[0]) if n > 1 else 0.0
    if window > 0:
        k0 = int(np.searchsorted(t, t[-1] - window))
        rate = (exc[-1] - exc[k0]) / (t[-1] - t[k0]) if t[-1] > t[k0] else 0.0
    else:
        rate = 0.0
    deficient = rate < cfg.excitation_floor
    if deficient:
        msg = (f"excitation deficient: integral of Delta^2 grows at {rate:.3g}/s "
               f"(floor {cfg.excitation_floor:g}); parameter estimates are not reliable")
        notes.append(msg)
        warnings.warn(msg, ExcitationWarning, stacklevel=2)
    return EstimationResult(t.copy(), theta, delta, d2ma, kg, exc, z, psi, zcal, float(ref),
                            float(rate), deficient, unstable, notes)
