"""
Finite-dimensional ansatz families for invariant flows and their closed-form solutions.

An ansatz is an affine map theta -> base + E theta into the 20 coefficients of a 3-form. The
flow is integrated in parameter space; every velocity is checked to lie in the span of E.
"""

from dataclasses import dataclass
from logging import getLogger
from typing import Optional

import numpy as np

from app.errors import AnsatzLeak, GeometryError, UnknownOracle
from app.forms6 import BASIS, KForm, basis_form
from app.liegeom import NIL, SOLV, SOLV_LAMBDA, TORUS, LieModel

logger = getLogger(__name__)

LEAK_TOL = 1e-10
CRITICAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Ansatz:
    name: str
    parameters: tuple[str, ...]
    model: LieModel
    base: np.ndarray
    embedding: np.ndarray  # (20, len(parameters))
    expects_blowup: bool = False
    default: tuple[float, ...] = ()
    sample_ranges: tuple[tuple[float, float], ...] = ()

    def form(self, theta: np.ndarray) -> KForm:
        return KForm(3, self.base + self.embedding @ np.asarray(theta, dtype=float))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if not self.sample_ranges:
            raise GeometryError(f"the {self.name} ansatz has no sampling ranges")
        return np.array([rng.uniform(lo, hi) for lo, hi in self.sample_ranges])

    def _solve(self, vec: np.ndarray, what: str) -> np.ndarray:
        theta, *_ = np.linalg.lstsq(self.embedding, vec, rcond=None)
        leak = float(np.max(np.abs(self.embedding @ theta - vec)))
        if leak > LEAK_TOL * max(1.0, float(np.max(np.abs(vec)))):
            raise AnsatzLeak(f"{what} leaves the {self.name} ansatz by {leak:.3e}")
        return theta

    def parameters_of(self, phi: KForm) -> np.ndarray:
        return self._solve(phi.vec - self.base, "state")

    def velocity(self, phi_dot: KForm) -> np.ndarray:
        return self._solve(phi_dot.vec, "velocity")

    @property
    def oracle(self) -> "Oracle":
        if self.name not in ORACLES:
            raise UnknownOracle(f"no closed-form solution registered for the {self.name} ansatz")
        return ORACLES[self.name]


def _columns(*forms: KForm) -> np.ndarray:
    return np.column_stack([f.vec for f in forms])


def _e(*idx: int) -> KForm:
    return basis_form(*idx)


NIL_ANSATZ = Ansatz(
    name="nil",
    parameters=("a", "b"),
    model=NIL,
    base=(_e(1, 3, 5) - _e(1, 4, 6) - _e(2, 4, 5) - _e(2, 3, 6)).vec,
    embedding=_columns(_e(1, 3, 5), _e(1, 3, 4) - _e(1, 5, 6)),
    default=(0.0, 0.0),
    sample_ranges=((-0.5, 2.0), (-0.5, 0.5)),
)

SOLV_ANSATZ = Ansatz(
    name="solv",
    parameters=("alpha", "beta", "gamma", "delta"),
    model=SOLV,
    base=np.zeros(len(BASIS[3])),
    embedding=_columns(
        _e(1, 3, 5) + _e(1, 3, 6),
        _e(1, 4, 5) - _e(1, 4, 6),
        _e(2, 3, 5) - _e(2, 3, 6),
        -(_e(2, 4, 5) + _e(2, 4, 6)),
    ),
    expects_blowup=True,
    default=(1.0, 1.0, 0.5, 0.4),
    sample_ranges=((0.3, 2.0),) * 4,
)

TORUS_ANSATZ = Ansatz(
    name="torus",
    parameters=("a", "b", "c", "d"),
    model=TORUS,
    base=(-_e(2, 4, 5) - _e(2, 3, 6)).vec,
    embedding=_columns(
        0.5 * _e(1, 3, 5),
        -0.5 * _e(1, 4, 6),
        0.5 * (_e(1, 3, 6) - _e(1, 4, 5)),
        0.5 * (_e(1, 3, 6) + _e(1, 4, 5)),
    ),
    default=(2.0, 2.0, 0.0, 0.0),
    sample_ranges=((1.0, 3.0), (1.0, 3.0), (-0.5, 0.5), (-1.0, 1.0)),
)


def full_ansatz(model: LieModel) -> Ansatz:
    """All 20 coefficients free; used for models read from files."""
    names = tuple("c" + "".join(str(i + 1) for i in idx) for idx in BASIS[3])
    return Ansatz("full", names, model, np.zeros(len(names)), np.eye(len(names)))


ANSATZE: dict[str, Ansatz] = {a.name: a for a in (NIL_ANSATZ, SOLV_ANSATZ, TORUS_ANSATZ)}


def ansatz_for(model: LieModel) -> Ansatz:
    registered = ANSATZE.get(model.name)
    if registered is not None and registered.model is model:
        return registered
    return full_ansatz(model)


class Oracle:
    """Closed-form solution of one ansatz family."""

    def state(self, theta0: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def norm_n_sq(self, theta: np.ndarray) -> float:
        raise NotImplementedError

    def rhs(self, theta: np.ndarray) -> np.ndarray:
        """Parameter velocity predicted by the displayed right-hand side."""
        raise NotImplementedError

    def blowup_time(self, theta0: np.ndarray) -> Optional[float]:
        return None


class NilOracle(Oracle):
    """a(t) = a0 + 8t, b constant; |N|^2 = (1 + a - b^2)^(-3/2)."""

    def state(self, theta0: np.ndarray, t: float) -> np.ndarray:
        a0, b0 = theta0
        return np.array([a0 + 8.0 * t, b0])

    def norm_n_sq(self, theta: np.ndarray) -> float:
        a, b = theta
        return float((1.0 + a - b * b) ** -1.5)

    def rhs(self, theta: np.ndarray) -> np.ndarray:
        return np.array([8.0, 0.0])


class SolvOracle(Oracle):
    """Explicit solution with P = alpha0 delta0, Q = beta0 gamma0 and rate K = 32 lam^2."""

    rate = 32.0 * SOLV_LAMBDA**2

    def _invariants(self, theta0: np.ndarray) -> tuple[float, float]:
        alpha0, beta0, gamma0, delta0 = theta0
        return float(alpha0 * delta0), float(beta0 * gamma0)

    def is_critical(self, theta0: np.ndarray) -> bool:
        P, Q = self._invariants(theta0)
        return abs(P - Q) <= CRITICAL_TOL * max(P, Q)

    def state(self, theta0: np.ndarray, t: float) -> np.ndarray:
        theta0 = np.asarray(theta0, dtype=float)
        P, Q = self._invariants(theta0)
        K = self.rate
        if self.is_critical(theta0):
            return theta0 / np.sqrt(1.0 - K * P * t)
        D = Q * np.exp(K * P * t) - P * np.exp(K * Q * t)
        grow_ad = np.sqrt((Q - P) * np.exp(K * Q * t) / D)
        grow_bc = np.sqrt((Q - P) * np.exp(K * P * t) / D)
        return theta0 * np.array([grow_ad, grow_bc, grow_bc, grow_ad])

    def norm_n_sq(self, theta: np.ndarray) -> float:
        alpha, beta, gamma, delta = theta
        return float(2.0 * SOLV_LAMBDA**2 * (alpha * delta + beta * gamma) / np.sqrt(alpha * beta * gamma * delta))

    def rhs(self, theta: np.ndarray) -> np.ndarray:
        alpha, beta, gamma, delta = theta
        return 16.0 * SOLV_LAMBDA**2 * np.array(
            [alpha * beta * gamma, alpha * beta * delta, alpha * gamma * delta, beta * gamma * delta]
        )

    def blowup_time(self, theta0: np.ndarray) -> Optional[float]:
        P, Q = self._invariants(theta0)
        if self.is_critical(theta0):
            return 1.0 / (self.rate * P)
        return float((np.log(P) - np.log(Q)) / (P - Q) / self.rate)


class StationaryOracle(Oracle):
    """Integrable J with constant |phi|: the flow does not move."""

    def state(self, theta0: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(theta0, dtype=float).copy()

    def norm_n_sq(self, theta: np.ndarray) -> float:
        return 0.0

    def rhs(self, theta: np.ndarray) -> np.ndarray:
        return np.zeros(len(theta))


ORACLES: dict[str, Oracle] = {"nil": NilOracle(), "solv": SolvOracle(), "torus": StationaryOracle()}
