"""
Tests for the invariant flow engine.
"""

import numpy as np
import pytest

from app.ansatz import NIL_ANSATZ, SOLV_ANSATZ, TORUS_ANSATZ, SolvOracle
from app.errors import FlowBlowup, GeometryError
from app.forms6 import basis_form
from app.flow import (
    FlowRun,
    FlowState,
    ObservableRow,
    StepControls,
    blowup_bracket,
    derivative_check,
    harmonic_residual,
    integrate,
    metric_flow_check,
    monotonicity,
    observables,
    oracle_compare,
    rhs_laplacian,
    rhs_primary,
    self_expander_deviation,
    step,
)
from app.liegeom import SOLV_LAMBDA

CRITICAL = np.full(4, np.sqrt(0.5))
NONCRITICAL = np.array([1.0, 1.0, 0.5, 0.4])


def _state(ansatz, theta, t: float = 0.0) -> FlowState:
    return FlowState.at(ansatz.model, ansatz.form(np.asarray(theta, dtype=float)), t)


@pytest.fixture(scope="module")
def nil_run():
    return integrate(_state(NIL_ANSATZ, [0.0, 0.0]), NIL_ANSATZ, dt=1e-3, t_max=1.0)


@pytest.fixture(scope="module")
def solv_run():
    return integrate(_state(SOLV_ANSATZ, NONCRITICAL), SOLV_ANSATZ, dt=1e-4, t_max=1.0)


@pytest.fixture(scope="module")
def critical_run():
    return integrate(_state(SOLV_ANSATZ, CRITICAL), SOLV_ANSATZ, dt=1e-4, t_max=1.0)


class TestRightHandSides:
    """The two evaluators and their closed forms."""

    def test_nil(self):
        """Both evaluators give 8 e^135 across NIL."""
        for theta in ([0.0, 0.0], [1.0, 0.3], [-0.4, 0.1]):
            s = _state(NIL_ANSATZ, theta)
            assert rhs_primary(s).allclose(8.0 * basis_form(1, 3, 5), atol=1e-10)
            assert rhs_laplacian(s).allclose(8.0 * basis_form(1, 3, 5), atol=1e-9)

    def test_solv(self):
        """The SOLV velocity matches the reduced ODE."""
        s = _state(SOLV_ANSATZ, NONCRITICAL)
        velocity = SOLV_ANSATZ.velocity(rhs_primary(s))
        assert np.allclose(velocity, SolvOracle().rhs(NONCRITICAL), rtol=1e-10)
        assert rhs_laplacian(s).allclose(rhs_primary(s), atol=1e-9)

    def test_torus_stationary(self):
        """Invariant torus data does not move."""
        s = _state(TORUS_ANSATZ, [2.0, 1.5, 0.3, -0.2])
        assert rhs_primary(s).norm_max() == 0.0
        assert rhs_laplacian(s).norm_max() < 1e-12

    def test_evaluators_agree_on_random_states(self, rng):
        """d Lambda d(|phi|^2 phi_hat) equals the Laplacian form on sampled points."""
        for ansatz in (NIL_ANSATZ, SOLV_ANSATZ, TORUS_ANSATZ):
            for _ in range(100):
                s = _state(ansatz, ansatz.sample(rng))
                primary, laplacian = rhs_primary(s), rhs_laplacian(s)
                assert (primary - laplacian).norm_max() < 1e-9 * max(1.0, primary.norm_max())


class TestStep:
    def test_stationary(self):
        """A stationary state only advances in time."""
        s = _state(TORUS_ANSATZ, TORUS_ANSATZ.default)
        new = step(s, 0.1, TORUS_ANSATZ)
        assert new.t == pytest.approx(0.1)
        assert new.phi.allclose(s.phi)

    def test_rejects_nonpositive_dt(self):
        """dt must be positive."""
        with pytest.raises(GeometryError):
            step(_state(NIL_ANSATZ, [0.0, 0.0]), 0.0, NIL_ANSATZ)

    def test_halving_on_large_step(self):
        """A step across the blow-up time is halved until it is accurate."""
        s = _state(SOLV_ANSATZ, CRITICAL)
        new = step(s, 0.2, SOLV_ANSATZ)
        assert 0.0 < new.t < 0.2
        closed, primitive = new.gate_residuals()
        assert closed < 1e-9
        assert primitive < 1e-9

    def test_rejects_inaccurate_step(self):
        """A step whose half steps disagree with the full step is halved."""
        s = _state(SOLV_ANSATZ, NONCRITICAL)
        assert step(s, 1e-2, SOLV_ANSATZ).t < 1e-2
        loose = StepControls(error_tol=np.inf)
        assert step(s, 1e-2, SOLV_ANSATZ, controls=loose).t == pytest.approx(1e-2)

    def test_rk4_order(self):
        """Halving dt divides the SOLV endpoint error by about 16."""
        oracle = SolvOracle()
        t_max = 0.04
        exact = oracle.state(NONCRITICAL, t_max)
        errors = []
        fixed = StepControls(error_tol=np.inf)
        for dt in (2e-3, 1e-3):
            run = integrate(_state(SOLV_ANSATZ, NONCRITICAL), SOLV_ANSATZ, dt=dt, t_max=t_max, controls=fixed)
            errors.append(float(np.max(np.abs(run.rows[-1].theta - exact))))
        assert 12.0 <= errors[0] / errors[1] <= 20.0


class TestNilRun:
    """a(t) = a0 + 8t with |N|^2 = (1 + a - b^2)^(-3/2)."""

    def test_endpoint(self, nil_run):
        """a(1) = 8 and |N|^2 = 9^(-3/2)."""
        assert nil_run.completed
        final = nil_run.rows[-1]
        assert final.t == pytest.approx(1.0)
        assert final.theta[0] == pytest.approx(8.0, abs=1e-8)
        assert final.theta[1] == pytest.approx(0.0, abs=1e-12)
        assert final.norm_n_sq == pytest.approx(9.0**-1.5, rel=1e-9)

    def test_offset_start(self):
        """From (0, 0.3): b is frozen and |N|^2 follows (1 + a - b^2)^(-3/2)."""
        run = integrate(_state(NIL_ANSATZ, [0.0, 0.3]), NIL_ANSATZ, dt=1e-3, t_max=1.0)
        final = run.rows[-1]
        assert final.theta[0] == pytest.approx(8.0, abs=1e-8)
        assert final.theta[1] == pytest.approx(0.3, abs=1e-12)
        for row in run.rows[:: len(run.rows) // 10]:
            a, b = row.theta
            assert row.norm_n_sq == pytest.approx((1.0 + a - b * b) ** -1.5, abs=1e-6)
        assert all(monotonicity(run).values())

    def test_monotone(self, nil_run):
        """Every monotone quantity moves the right way."""
        verdicts = monotonicity(nil_run)
        assert all(verdicts.values()), verdicts

    def test_derivatives(self, nil_run):
        """Centered differences match du/dt = e^u|N|^2 and d|N|^2/dt = -2e^u|R^{-J}|^2 up to O(dt^2)."""
        dt = 1e-3
        residuals = derivative_check(nil_run)
        # u''' <= 512 and (|N|^2)''' <= 6720 on this run
        assert residuals["du_dt"] < 100.0 * dt**2 + 1e-8
        assert residuals["dn_dt"] < 1500.0 * dt**2 + 1e-8

    def test_derivative_residual_order(self):
        """Halving dt shrinks the centered-difference residual by about 4."""
        residuals = [
            derivative_check(integrate(_state(NIL_ANSATZ, [0.0, 0.0]), NIL_ANSATZ, dt=dt, t_max=0.05))["du_dt"]
            for dt in (1e-3, 5e-4)
        ]
        assert 3.5 <= residuals[0] / residuals[1] <= 4.5

    def test_gates_every_step(self, nil_run):
        """Every accepted state is closed and primitive."""
        for s in nil_run.states:
            closed, primitive = s.gate_residuals()
            assert closed < 1e-9
            assert primitive < 1e-9

    def test_oracle(self, nil_run):
        """The run matches the closed form and predicts no blow-up."""
        report = oracle_compare(nil_run)
        assert report.max_state_deviation < 1e-8
        assert report.predicted_blowup is None
        assert report.bracket_contains_prediction is None

    def test_long_run(self):
        """A long coarse run stays on the closed form."""
        run = integrate(_state(NIL_ANSATZ, [0.5, 0.2]), NIL_ANSATZ, dt=1e-2, t_max=10.0)
        assert oracle_compare(run).max_state_deviation < 1e-8

    def test_metric_flow(self, nil_run):
        """g and g_tilde evolve by their curvature laws."""
        s = next(state for state in nil_run.states if state.t >= 0.5 - 1e-12)
        residuals = metric_flow_check(s, 1e-4, NIL_ANSATZ)
        assert residuals["metric"] < 1e-6
        assert residuals["metric_tilde"] < 1e-6

    def test_e_p_columns(self):
        """E_p = e^{pu} on invariant data."""
        row = observables(_state(NIL_ANSATZ, [0.0, 0.0]), np.zeros(2), (0.5,))
        assert row.e_p == {0.5: pytest.approx(2.0)}
        assert row.exp_minus_u == pytest.approx(0.25)


class TestSolvRun:
    """Noncritical data blows up at the predicted time."""

    def test_blowup_bracket(self, solv_run):
        """The bracket holds the predicted blow-up time and is narrower than 1% of it."""
        assert not solv_run.completed
        report = oracle_compare(solv_run)
        assert report.bracket_contains_prediction
        assert report.bracket_relative_width < 0.01

    def test_oracle_deviation(self, solv_run):
        """Up to 0.9T the run tracks the closed form with conserved ratios."""
        report = oracle_compare(solv_run)
        assert report.max_state_deviation < 1e-6
        assert report.ratio_drift < 1e-9
        assert report.min_norm_n_sq >= 4.0 * SOLV_LAMBDA**2 - 1e-9

    def test_harmonic_limit(self, solv_run):
        """R^{-J} nearly vanishes close to the blow-up."""
        report = oracle_compare(solv_run)
        assert report.harmonic_residual is not None
        assert report.harmonic_residual < 1e-3

    def test_norm_decreases(self, solv_run):
        """|N|^2 falls while u, E_1 and E_{-1} move monotonically."""
        verdicts = monotonicity(solv_run)
        assert verdicts["norm_n_sq_nonincreasing"]
        assert verdicts["u_nondecreasing"]
        assert verdicts["e1_nondecreasing"]
        assert verdicts["e_minus1_nonincreasing"]

    def test_require_completion(self):
        """Asking for completion turns the blow-up into an error carrying the bracket."""
        with pytest.raises(FlowBlowup) as info:
            integrate(_state(SOLV_ANSATZ, CRITICAL), SOLV_ANSATZ, dt=1e-3, t_max=1.0, require_completion=True)
        lo, hi = info.value.bracket
        assert lo <= 1.0 / (16.0 * SOLV_LAMBDA**2) <= hi

    def test_no_state_past_blowup(self, solv_run):
        """Every accepted state lies before the blow-up time."""
        T = SolvOracle().blowup_time(NONCRITICAL)
        assert solv_run.rows[-1].t < T
        assert solv_run.blowup[0] == solv_run.rows[-1].t

    def test_custom_controls(self):
        """A coarser step floor still brackets the blow-up, with a wider interval."""
        T = 1.0 / (16.0 * SOLV_LAMBDA**2)
        controls = StepControls(dt_floor=1e-6)
        run = integrate(_state(SOLV_ANSATZ, CRITICAL), SOLV_ANSATZ, dt=1e-3, t_max=1.0, controls=controls)
        assert run.blowup is not None
        lo, hi = run.blowup
        assert lo <= T <= hi
        assert hi - lo < 1e-3

    def test_bracket_from_last_row(self):
        """e^{-u} = 0.01 falling at rate |N|^2 = 2 puts the upper end 0.01 past the last state."""
        row = ObservableRow(
            t=0.5,
            theta=np.zeros(4),
            u=np.log(100.0),
            norm_n_sq=2.0,
            r_minus_j_sq=0.0,
            e_p={},
            positivity_margin=1.0,
            stability_margin=1.0,
        )
        lo, hi = blowup_bracket(FlowRun(SOLV_ANSATZ, rows=[row]), (0.5, 0.5 + 1e-6))
        assert lo == 0.5
        assert hi == pytest.approx(0.510001)


class TestSelfExpander:
    """Critical SOLV data evolves by scaling with g, J and N frozen."""

    def test_bracket(self, critical_run):
        """The bracket holds T = 1/(16 lambda^2) with every accepted state before it."""
        T = 1.0 / (16.0 * SOLV_LAMBDA**2)
        lo, hi = critical_run.blowup
        assert lo <= T <= hi
        assert (hi - lo) / T < 0.01
        assert critical_run.rows[-1].t < T

    def test_scaling(self, critical_run):
        """J and |N|^2 are frozen and phi scales as phi0/sqrt(1 - t/T)."""
        deviation = self_expander_deviation(critical_run)
        assert deviation["j_drift"] < 1e-8
        assert deviation["norm_n_drift"] < 1e-8
        assert deviation["scaling"] < 1e-6

    def test_direction_frozen(self, critical_run):
        """The parameters scaled by 1/|phi| do not move."""
        first = critical_run.rows[0].direction
        for row in critical_run.rows[:: max(1, len(critical_run.rows) // 20)]:
            assert np.allclose(row.direction, first, rtol=1e-6)

    def test_harmonic(self, critical_run):
        """J is harmonic at the start and g follows its flow law."""
        assert harmonic_residual(critical_run.states[0]) < 1e-10
        residuals = metric_flow_check(critical_run.states[10], 1e-5, SOLV_ANSATZ)
        assert residuals["metric"] < 1e-6

    def test_oracle(self, critical_run):
        """The run tracks the self-expander closely."""
        report = oracle_compare(critical_run)
        assert report.max_state_deviation < 1e-6
        assert report.harmonic_residual is not None
        assert report.harmonic_residual < 1e-6

