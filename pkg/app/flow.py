"""
Type IIA flow on invariant 3-forms: right-hand sides, RK4 stepping with gate-driven halving,
observables and comparisons against closed-form solutions.
"""

from dataclasses import dataclass, field
from logging import getLogger
from typing import Callable, Optional

import numpy as np

from app.ansatz import Ansatz
from app.errors import FlowBlowup, GeometryError, HitchinGateError, StepUnderflow
from app.forms6 import KForm, lambda_contract
from app.hitchin import HitchinData, build
from app.liegeom import (
    LieModel,
    codifferential,
    d_invariant,
    levi_civita,
    n_dagger,
    nijenhuis,
    projected_connection,
    r_minus_j,
    tensor_norm_sq,
)

logger = getLogger(__name__)

GATE_TOL = 1e-9
DEFAULT_P_VALUES = (-1.0, 0.5, 1.0)


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    phi: KForm
    model: LieModel
    cache: HitchinData

    @classmethod
    def at(cls, model: LieModel, phi: KForm, t: float = 0.0) -> "FlowState":
        return cls(t, phi, model, build(phi, model.symplectic))

    def gate_residuals(self) -> tuple[float, float]:
        """(closedness, primitivity) relative to the coefficient scale."""
        scale = self.cache.scale
        return (
            d_invariant(self.phi, self.model).norm_max() / scale,
            lambda_contract(self.phi, self.model.symplectic).norm_max() / scale,
        )


def rhs_primary(s: FlowState) -> KForm:
    """d Lambda d(|phi|^2 phi_hat)."""
    m = s.model
    flux = s.cache.norm_sq * s.cache.phi_hat
    out = d_invariant(lambda_contract(d_invariant(flux, m), m.symplectic), m)
    primitivity = lambda_contract(out, m.symplectic).norm_max()
    if primitivity > 1e-10 * max(1.0, out.norm_max()):
        logger.debug(f"rhs_primary on {m.name} is not primitive: {primitivity:.3e}")
    return out


def rhs_laplacian(s: FlowState) -> KForm:
    """-d d^dagger(|phi|^2 phi) + 2 d(|phi|^2 N^dagger . phi), with d^dagger from the Levi-Civita connection."""
    m, data = s.model, s.cache
    conn = levi_civita(data.g, m)
    N = nijenhuis(data.J, data.g, m)
    scaled = data.norm_sq * data.phi
    return -d_invariant(codifferential(scaled, conn, data.g), m) + 2.0 * d_invariant(
        data.norm_sq * n_dagger(N, data.phi), m
    )


Rhs = Callable[[FlowState], KForm]


@dataclass
class StepControls:
    max_growth: float = 0.2
    dt_floor: float = 1e-12
    gate_tol: float = GATE_TOL
    # relative gap between one full step and two half steps
    error_tol: float = 1e-10


def _velocity(ansatz: Ansatz, theta: np.ndarray, t: float, rhs: Rhs) -> np.ndarray:
    if not np.all(np.isfinite(theta)):
        raise HitchinGateError("non-finite stage parameters")
    state = FlowState.at(ansatz.model, ansatz.form(theta), t)
    return ansatz.velocity(rhs(state))


def rk4(ansatz: Ansatz, theta: np.ndarray, t: float, dt: float, rhs: Rhs = rhs_primary) -> np.ndarray:
    """One classical RK4 step in parameter space; raises if any stage leaves the positive cone."""
    k1 = _velocity(ansatz, theta, t, rhs)
    k2 = _velocity(ansatz, theta + 0.5 * dt * k1, t + 0.5 * dt, rhs)
    k3 = _velocity(ansatz, theta + 0.5 * dt * k2, t + 0.5 * dt, rhs)
    k4 = _velocity(ansatz, theta + dt * k3, t + dt, rhs)
    return theta + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _try_step(
    ansatz: Ansatz, theta: np.ndarray, t: float, dt: float, rhs: Rhs, controls: StepControls
) -> Optional[FlowState]:
    try:
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            full = rk4(ansatz, theta, t, dt, rhs)
            half = rk4(ansatz, theta, t, 0.5 * dt, rhs)
            new = rk4(ansatz, half, t + 0.5 * dt, 0.5 * dt, rhs)
        if not (np.all(np.isfinite(new)) and np.all(np.isfinite(full))):
            return None
        growth = float(np.max(np.abs(new - theta))) / max(1.0, float(np.max(np.abs(theta))))
        if growth > controls.max_growth:
            logger.debug(f"Rejected step at t={t:.17g}, dt={dt:.3e}: growth {growth:.3e}")
            return None
        error = float(np.max(np.abs(new - full))) / max(1.0, float(np.max(np.abs(new))))
        if error > controls.error_tol:
            logger.debug(f"Rejected step at t={t:.17g}, dt={dt:.3e}: local error {error:.3e}")
            return None
        state = FlowState.at(ansatz.model, ansatz.form(new), t + dt)
    except (HitchinGateError, np.linalg.LinAlgError) as e:
        logger.debug(f"Rejected step at t={t:.17g}, dt={dt:.3e}: {e}")
        return None
    closed, primitive = state.gate_residuals()
    if closed > controls.gate_tol or primitive > controls.gate_tol:
        logger.debug(f"Rejected step at t={t:.17g}: closed {closed:.3e}, primitive {primitive:.3e}")
        return None
    return state


def step(
    s: FlowState,
    dt: float,
    ansatz: Ansatz,
    rhs: Rhs = rhs_primary,
    controls: Optional[StepControls] = None,
) -> FlowState:
    """
    Advance by dt with two half RK4 steps, halving until every gate passes and the half steps
    agree with the full step. The accepted size is new.t - s.t.
    """
    controls = controls or StepControls()
    if dt <= 0.0:
        raise GeometryError(f"dt must be positive, got {dt}")
    theta = ansatz.parameters_of(s.phi)
    rejected = 0.0
    while dt >= controls.dt_floor:
        new = _try_step(ansatz, theta, s.t, dt, rhs, controls)
        if new is not None:
            return new
        rejected += dt
        dt *= 0.5
    raise StepUnderflow(
        f"step size fell below {controls.dt_floor:.1e} at t={s.t:.17g}",
        t=s.t,
        dt=dt,
        bracket=(s.t, s.t + 2.0 * rejected),
    )


@dataclass
class ObservableRow:
    t: float
    theta: np.ndarray
    u: float
    norm_n_sq: float
    r_minus_j_sq: float
    e_p: dict[float, float]
    positivity_margin: float
    stability_margin: float

    @property
    def exp_minus_u(self) -> float:
        return float(np.exp(-self.u))

    @property
    def direction(self) -> np.ndarray:
        """Parameters scaled by |phi|^{-1}; frozen along a self-expander."""
        return self.theta * float(np.exp(-0.5 * self.u))


def observables(s: FlowState, theta: np.ndarray, p_values: tuple[float, ...] = DEFAULT_P_VALUES) -> ObservableRow:
    """Homogeneous observables; the invariant frame has unit volume so E_p = e^{pu}."""
    data, m = s.cache, s.model
    N = nijenhuis(data.J, data.g, m)
    rmj = r_minus_j(projected_connection(levi_civita(data.g, m), N), N)
    return ObservableRow(
        t=s.t,
        theta=np.asarray(theta, dtype=float).copy(),
        u=data.u,
        norm_n_sq=N.norm_sq,
        r_minus_j_sq=tensor_norm_sq(rmj, data.g_inv),
        e_p={p: float(np.exp(p * data.u)) for p in p_values},
        positivity_margin=data.positivity_margin,
        stability_margin=-data.lam,
    )


@dataclass
class FlowRun:
    ansatz: Ansatz
    rows: list[ObservableRow] = field(default_factory=list)
    states: list[FlowState] = field(default_factory=list)
    blowup: Optional[tuple[float, float]] = None
    halvings: int = 0

    @property
    def completed(self) -> bool:
        return self.blowup is None

    @property
    def final(self) -> FlowState:
        return self.states[-1]

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.rows])


def blowup_bracket(run: FlowRun, ladder: tuple[float, float]) -> tuple[float, float]:
    """
    Interval holding the zero of e^{-u} past the last accepted state.

    e^{-u} falls at rate |N|^2, so its zero lies within e^{-u}/|N|^2 of the last state while
    |N|^2 stays above half its last value. The rejected ladder is added on top.
    """
    lo, hi = ladder
    last = run.rows[-1]
    if last.norm_n_sq > 0.0:
        hi = max(hi, lo + 2.0 * last.exp_minus_u / last.norm_n_sq + (hi - lo))
    return lo, hi


def integrate(
    s: FlowState,
    ansatz: Ansatz,
    dt: float,
    t_max: float,
    rhs: Rhs = rhs_primary,
    controls: Optional[StepControls] = None,
    p_values: tuple[float, ...] = DEFAULT_P_VALUES,
    require_completion: bool = False,
) -> FlowRun:
    """Integrate to t_max, or until the step floor is reached and the blow-up is bracketed."""
    controls = controls or StepControls()
    run = FlowRun(ansatz)
    run.states.append(s)
    run.rows.append(observables(s, ansatz.parameters_of(s.phi), p_values))
    current = dt
    logger.debug(f"Integrating {ansatz.name} from t={s.t} to {t_max} with dt={dt}")
    while s.t < t_max - 1e-14 * max(1.0, t_max):
        size = min(current, t_max - s.t)
        try:
            new = step(s, size, ansatz, rhs, controls)
        except StepUnderflow as e:
            bracket = blowup_bracket(run, e.bracket or (e.t, e.t))
            run.blowup = bracket
            logger.info(f"Blow-up of {ansatz.name} bracketed in [{bracket[0]:.12g}, {bracket[1]:.12g}]")
            if require_completion:
                raise FlowBlowup(f"{ansatz.name} flow blew up before t={t_max}", bracket) from e
            break
        taken = new.t - s.t
        if taken < size:
            run.halvings += 1
            current = taken
        s = new
        run.states.append(s)
        run.rows.append(observables(s, ansatz.parameters_of(s.phi), p_values))
    return run


def monotonicity(run: FlowRun, tol: float = 1e-12) -> dict[str, bool]:
    """Verdicts for the monotone quantities of a homogeneous run."""
    u = run.column("u")
    n2 = run.column("norm_n_sq")
    e1 = np.array([r.e_p.get(1.0, np.exp(r.u)) for r in run.rows])
    em1 = np.array([r.e_p.get(-1.0, np.exp(-r.u)) for r in run.rows])
    norm_sq = np.exp(u)

    def non_decreasing(x: np.ndarray) -> bool:
        return bool(np.all(np.diff(x) >= -tol * np.maximum(1.0, np.abs(x[1:]))))

    verdicts = {
        "u_nondecreasing": non_decreasing(u),
        "norm_n_sq_nonincreasing": non_decreasing(-n2),
        "e1_nondecreasing": non_decreasing(e1),
        "e_minus1_nonincreasing": non_decreasing(-em1),
        "min_norm_bound": bool(np.min(norm_sq) >= norm_sq[0] - 1e-9),
    }
    t = run.times()
    if len(t) >= 3:
        # convexity of e^{-u} via second divided differences on the accepted grid
        f = np.exp(-u)
        slopes = np.diff(f) / np.diff(t)
        verdicts["exp_minus_u_convex"] = bool(np.all(np.diff(slopes) >= -1e-8 * np.maximum(1.0, np.abs(slopes[1:]))))
    return verdicts


def derivative_check(run: FlowRun) -> dict[str, float]:
    """Centered differences of u and |N|^2 against e^u|N|^2 and -2e^u|R^{-J}|^2 (max abs deviation)."""
    t = run.times()
    if len(t) < 3:
        return {"du_dt": 0.0, "dn_dt": 0.0}
    u = run.column("u")
    n2 = run.column("norm_n_sq")
    r2 = run.column("r_minus_j_sq")
    span = t[2:] - t[:-2]
    du = (u[2:] - u[:-2]) / span
    dn = (n2[2:] - n2[:-2]) / span
    eu = np.exp(u[1:-1])
    return {
        "du_dt": float(np.max(np.abs(du - eu * n2[1:-1]))),
        "dn_dt": float(np.max(np.abs(dn + 2.0 * eu * r2[1:-1]))),
    }


def metric_flow_check(s: FlowState, dt: float, ansatz: Ansatz, rhs: Rhs = rhs_primary) -> dict[str, float]:
    """Centered differences of g and g_tilde against -2e^u R^{-J} and e^{2u}(|N|^2 g - 2R^{-J})."""
    theta = ansatz.parameters_of(s.phi)
    m = s.model
    ahead = build(ansatz.form(rk4(ansatz, theta, s.t, dt, rhs)), m.symplectic)
    behind = build(ansatz.form(rk4(ansatz, theta, s.t, -dt, rhs)), m.symplectic)
    data = s.cache
    N = nijenhuis(data.J, data.g, m)
    rmj = r_minus_j(projected_connection(levi_civita(data.g, m), N), N)
    eu = data.norm_sq
    g_dot = (ahead.g - behind.g) / (2.0 * dt)
    gt_dot = (ahead.g_tilde - behind.g_tilde) / (2.0 * dt)
    return {
        "metric": float(np.max(np.abs(g_dot + 2.0 * eu * rmj))),
        "metric_tilde": float(np.max(np.abs(gt_dot - eu * eu * (N.norm_sq * data.g - 2.0 * rmj)))),
    }


@dataclass
class OracleReport:
    ansatz: str
    max_state_deviation: float
    max_norm_n_deviation: float
    checked_until: float
    predicted_blowup: Optional[float] = None
    detected_blowup: Optional[tuple[float, float]] = None
    min_norm_n_sq: float = 0.0
    ratio_drift: Optional[float] = None
    harmonic_residual: Optional[float] = None

    @property
    def bracket_contains_prediction(self) -> Optional[bool]:
        if self.predicted_blowup is None or self.detected_blowup is None:
            return None
        lo, hi = self.detected_blowup
        return lo <= self.predicted_blowup <= hi

    @property
    def bracket_relative_width(self) -> Optional[float]:
        if self.predicted_blowup is None or self.detected_blowup is None:
            return None
        lo, hi = self.detected_blowup
        return (hi - lo) / self.predicted_blowup


def oracle_compare(run: FlowRun, fraction: float = 0.9, harmonic_fraction: float = 0.999) -> OracleReport:
    """Compare a run with its closed form up to fraction*T (whole run when no blow-up is predicted)."""
    ansatz = run.ansatz
    oracle = ansatz.oracle
    theta0 = run.rows[0].theta
    predicted = oracle.blowup_time(theta0)
    limit = fraction * predicted if predicted is not None else float("inf")

    state_dev, norm_dev = 0.0, 0.0
    checked = run.rows[0].t
    for row in run.rows:
        if row.t > limit:
            break
        expected = oracle.state(theta0, row.t)
        state_dev = max(state_dev, float(np.max(np.abs(row.theta - expected) / np.maximum(1.0, np.abs(expected)))))
        n_expected = oracle.norm_n_sq(expected)
        norm_dev = max(norm_dev, abs(row.norm_n_sq - n_expected) / max(1.0, n_expected))
        checked = row.t

    report = OracleReport(
        ansatz=ansatz.name,
        max_state_deviation=state_dev,
        max_norm_n_deviation=norm_dev,
        checked_until=checked,
        predicted_blowup=predicted,
        detected_blowup=run.blowup,
        min_norm_n_sq=float(np.min(run.column("norm_n_sq"))),
    )
    if ansatz.name == "solv":
        thetas = run.thetas()
        ad = thetas[:, 0] / thetas[:, 3]
        bc = thetas[:, 1] / thetas[:, 2]
        report.ratio_drift = float(max(np.max(np.abs(ad - ad[0])) / abs(ad[0]), np.max(np.abs(bc - bc[0])) / abs(bc[0])))
        if predicted is not None:
            late = [r for r in run.rows if r.t >= harmonic_fraction * predicted]
            if late:
                report.harmonic_residual = float(np.sqrt(late[0].r_minus_j_sq))
    return report


def harmonic_residual(s: FlowState) -> float:
    """|R^{-J}| at a state; zero exactly when J is a harmonic almost-complex structure."""
    data, m = s.cache, s.model
    N = nijenhuis(data.J, data.g, m)
    rmj = r_minus_j(projected_connection(levi_civita(data.g, m), N), N)
    return float(np.sqrt(tensor_norm_sq(rmj, data.g_inv)))


def self_expander_deviation(run: FlowRun, fraction: float = 0.9) -> dict[str, float]:
    """Critical SOLV runs scale as phi0/sqrt(1 - t/T) with g and J frozen."""
    first = run.states[0]
    T = run.ansatz.oracle.blowup_time(run.rows[0].theta)
    if T is None:
        raise GeometryError(f"{run.ansatz.name} has no blow-up time")
    j_drift, n_drift, scale_drift = 0.0, 0.0, 0.0
    for state, row in zip(run.states, run.rows):
        if state.t > fraction * T:
            break
        j_drift = max(j_drift, float(np.max(np.abs(state.cache.J - first.cache.J))))
        n_drift = max(n_drift, abs(row.norm_n_sq - run.rows[0].norm_n_sq))
        expected = first.phi / np.sqrt(1.0 - state.t / T)
        scale_drift = max(scale_drift, (state.phi - expected).norm_max() / expected.norm_max())
    return {"j_drift": j_drift, "norm_n_drift": n_drift, "scaling": scale_drift}
