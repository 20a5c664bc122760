"""
Tests for ansatz embeddings and their closed-form solutions.
"""

import numpy as np
import pytest

from app.ansatz import (
    ANSATZE,
    NIL_ANSATZ,
    ORACLES,
    SOLV_ANSATZ,
    TORUS_ANSATZ,
    NilOracle,
    SolvOracle,
    ansatz_for,
)
from app.errors import AnsatzLeak, GeometryError, UnknownOracle
from app.forms6 import basis_form, lambda_contract
from app.hitchin import CANONICAL_PHI, build
from app.liegeom import SOLV, SOLV_LAMBDA, d_invariant
from app.model_file import MODEL_DIR, load_model


class TestEmbeddings:
    """Every registered family is closed, primitive and positive on its sampling box."""

    def test_sampled_points_are_type_iia(self, rng):
        """Sampled forms pass the closed, primitive and positive gates."""
        for ansatz in ANSATZE.values():
            for _ in range(20):
                phi = ansatz.form(ansatz.sample(rng))
                data = build(phi, ansatz.model.symplectic)
                assert d_invariant(phi, ansatz.model).norm_max() < 1e-12
                assert lambda_contract(phi, ansatz.model.symplectic).norm_max() < 1e-12
                assert data.positivity_margin > 0.0

    def test_parameters_round_trip(self, rng):
        """parameters_of inverts form on SOLV samples."""
        theta = SOLV_ANSATZ.sample(rng)
        assert np.allclose(SOLV_ANSATZ.parameters_of(SOLV_ANSATZ.form(theta)), theta)

    def test_torus_default_is_canonical(self):
        """(a, b, c, d) = (2, 2, 0, 0) is phi_can."""
        assert TORUS_ANSATZ.form(np.array(TORUS_ANSATZ.default)).allclose(CANONICAL_PHI)

    def test_nil_origin_is_canonical(self):
        """(a, b) = (0, 0) is phi_can."""
        assert NIL_ANSATZ.form(np.zeros(2)).allclose(CANONICAL_PHI)

    def test_leak_detected(self):
        """A velocity outside the family span is reported."""
        with pytest.raises(AnsatzLeak):
            NIL_ANSATZ.velocity(basis_form(2, 4, 6))

    def test_full_ansatz_for_file_models(self):
        """File models get the 20-parameter family with no sampler and no oracle."""
        model = load_model(MODEL_DIR / "solv.model")
        ansatz = ansatz_for(model)
        assert ansatz.name == "full"
        assert len(ansatz.parameters) == 20
        assert ansatz_for(SOLV) is SOLV_ANSATZ
        with pytest.raises(GeometryError):
            ansatz.sample(np.random.default_rng(0))
        with pytest.raises(UnknownOracle):
            ansatz.oracle


class TestNilOracle:
    def test_linear_growth(self):
        """a grows by 8t, b is frozen and nothing blows up."""
        oracle = NilOracle()
        assert np.allclose(oracle.state(np.array([0.0, 0.2]), 1.0), [8.0, 0.2])
        assert oracle.norm_n_sq(np.array([0.0, 0.0])) == pytest.approx(1.0)
        assert oracle.blowup_time(np.array([0.0, 0.0])) is None


class TestSolvOracle:
    """Closed-form SOLV solution."""

    theta0 = np.array([1.0, 1.0, 0.5, 0.4])

    def test_initial_state(self):
        """The solution starts at its initial data."""
        assert np.allclose(SolvOracle().state(self.theta0, 0.0), self.theta0)

    def test_ratios_constant(self):
        """alpha/delta and beta/gamma are conserved."""
        state = SolvOracle().state(self.theta0, 0.05)
        assert state[0] / state[3] == pytest.approx(self.theta0[0] / self.theta0[3])
        assert state[1] / state[2] == pytest.approx(self.theta0[1] / self.theta0[2])

    def test_satisfies_ode(self):
        """The closed form solves the reduced ODE."""
        oracle = SolvOracle()
        h, t = 1e-6, 0.03
        derivative = (oracle.state(self.theta0, t + h) - oracle.state(self.theta0, t - h)) / (2 * h)
        assert np.allclose(derivative, oracle.rhs(oracle.state(self.theta0, t)), rtol=1e-7)

    def test_blowup_time(self):
        """T = (log P - log Q)/(P - Q)/(32 lambda^2)."""
        oracle = SolvOracle()
        P, Q = 0.4, 0.5
        expected = (np.log(P) - np.log(Q)) / (P - Q) / (32.0 * SOLV_LAMBDA**2)
        assert oracle.blowup_time(self.theta0) == pytest.approx(expected)

    def test_critical_case(self):
        """Critical data blows up at 1/(16 lambda^2) by pure scaling."""
        oracle = SolvOracle()
        theta = np.full(4, np.sqrt(0.5))
        assert oracle.is_critical(theta)
        T = oracle.blowup_time(theta)
        assert T == pytest.approx(1.0 / (16.0 * SOLV_LAMBDA**2))
        assert np.allclose(oracle.state(theta, 0.75 * T), theta * 2.0)
        assert oracle.norm_n_sq(theta) == pytest.approx(4.0 * SOLV_LAMBDA**2)

    def test_norm_lower_bound(self):
        """|N|^2 stays above 4 lambda^2."""
        oracle = SolvOracle()
        for t in np.linspace(0.0, 0.07, 8):
            assert oracle.norm_n_sq(oracle.state(self.theta0, t)) >= 4.0 * SOLV_LAMBDA**2 - 1e-12


class TestRegistry:
    def test_every_family_has_an_oracle(self):
        """Each built-in family is registered with its closed form."""
        for name, ansatz in ANSATZE.items():
            assert ansatz.oracle is ORACLES[name]
        assert SOLV_ANSATZ.expects_blowup
        assert not NIL_ANSATZ.expects_blowup
