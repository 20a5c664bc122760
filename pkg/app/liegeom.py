"""
Left-invariant geometry on 6-dimensional Lie models.

Structure constants are stored as c[k, i, j] with [e_i, e_j] = c^k_{ij} e_k and linked to the
invariant exterior derivative by (de^k)_{ij} = -c^k_{ij}. Connections are arrays gamma[k, i, j]
with nabla_{e_i} e_j = gamma^k_{ij} e_k.
"""

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from logging import getLogger
from math import comb

import numpy as np
from scipy.linalg import eigh, null_space

from app.errors import GeometryError, ModelError
from app.forms6 import (
    BASIS,
    DIM,
    KForm,
    Symplectic,
    TMValued2Form,
    basis_form,
    boxtimes,
    hodge_star,
    j_act,
    lambda_contract,
    standard_omega,
    type_split,
    wedge,
)
from app.hitchin import CANONICAL_PHI, STANDARD_J, HitchinData, hitchin_checks, normal_form

logger = getLogger(__name__)

SOLV_LAMBDA = float(np.log((3.0 + np.sqrt(5.0)) / 2.0))


@dataclass(frozen=True, eq=False)
class LieModel:
    name: str
    structure: np.ndarray
    symplectic: Symplectic
    base_phi: KForm | None = None
    constants: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.structure, dtype=float)
        if c.shape != (DIM, DIM, DIM) or not np.allclose(c, -c.transpose(0, 2, 1), atol=1e-14):
            raise ModelError(f"{self.name}: structure constants must be (6, 6, 6) and antisymmetric in i, j")
        c.setflags(write=False)
        object.__setattr__(self, "structure", c)
        jacobi = self.jacobi_residual()
        if jacobi > 1e-12:
            raise ModelError(f"{self.name}: Jacobi identity fails (d^2 e^k = {jacobi:.3e})")
        closed = d_invariant(self.symplectic.form, self).norm_max()
        if closed > 1e-12:
            raise ModelError(f"{self.name}: omega is not closed (d omega = {closed:.3e})")

    @classmethod
    def from_differentials(
        cls,
        name: str,
        differentials: dict[int, KForm],
        omega: KForm,
        flipped: bool = False,
        base_phi: KForm | None = None,
        constants: dict[str, float] | None = None,
    ) -> "LieModel":
        """Model from de^k (0-based k); `flipped` reverses the d <-> bracket sign link."""
        c = np.zeros((DIM, DIM, DIM))
        for k, dk in differentials.items():
            if dk.degree != 2:
                raise ModelError(f"{name}: de^{k + 1} must be a 2-form")
            c[k] = -dk.tensor
        if flipped:
            c = -c
        return cls(name, c, Symplectic.from_form(omega), base_phi, dict(constants or {}))

    @property
    def omega(self) -> KForm:
        return self.symplectic.form

    @cached_property
    def differentials(self) -> tuple[KForm, ...]:
        return tuple(KForm.from_tensor(2, -self.structure[k]) for k in range(DIM))

    @cached_property
    def d_matrices(self) -> dict[int, np.ndarray]:
        """Matrix of d from k-forms to (k+1)-forms in the sorted bases, by the Leibniz rule."""
        mats = {}
        for k in range(DIM):
            mat = np.zeros((comb(DIM, k + 1), comb(DIM, k)))
            for n, idx in enumerate(BASIS[k]):
                total = KForm.zero(k + 1)
                for p, i in enumerate(idx):
                    left = basis_form(*(j + 1 for j in idx[:p])) if p else KForm(0, [1.0])
                    right = basis_form(*(j + 1 for j in idx[p + 1 :])) if p + 1 < k else KForm(0, [1.0])
                    term = wedge(wedge(left, self.differentials[i]), right)
                    total = total + term if p % 2 == 0 else total - term
                mat[:, n] = total.vec
            mats[k] = mat
        return mats

    def jacobi_residual(self) -> float:
        # d^2 e^k = 0 for every generator is equivalent to the Jacobi identity
        return max(d_invariant(dk, self).norm_max() for dk in self.differentials)

    def bracket(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return np.einsum("kij,i,j->k", self.structure, X, Y)

    @property
    def is_unimodular(self) -> bool:
        return bool(np.allclose(np.einsum("kik->i", self.structure), 0.0, atol=1e-12))


def d_invariant(a: KForm, m: LieModel) -> KForm:
    if a.degree == DIM:
        return KForm.zero(DIM)
    return KForm(a.degree + 1, m.d_matrices[a.degree] @ a.vec)


def _model(name: str, terms: dict[int, dict[tuple[int, int], float]]) -> LieModel:
    differentials = {k - 1: KForm.from_terms(t, degree=2) for k, t in terms.items()}
    return LieModel.from_differentials(name, differentials, standard_omega().form)


TORUS = _model("torus", {})
NIL = _model("nil", {4: {(1, 5): 1.0}, 6: {(1, 3): 1.0}})
SOLV = _model(
    "solv",
    {
        1: {(1, 5): -SOLV_LAMBDA},
        2: {(2, 5): SOLV_LAMBDA},
        3: {(3, 6): -SOLV_LAMBDA},
        4: {(4, 6): SOLV_LAMBDA},
    },
)
BUILTIN_MODELS: dict[str, LieModel] = {m.name: m for m in (TORUS, NIL, SOLV)}


@dataclass(frozen=True, eq=False)
class Connection:
    gamma: np.ndarray

    def torsion(self, m: LieModel) -> np.ndarray:
        """T^k_{ij} = gamma^k_{ij} - gamma^k_{ji} - c^k_{ij}."""
        return self.gamma - self.gamma.transpose(0, 2, 1) - m.structure


def levi_civita(g: np.ndarray, m: LieModel) -> Connection:
    """Koszul formula for an invariant metric: 2 g(nabla_i e_j, e_l) = C_ijl - C_jli + C_lij."""
    C = np.einsum("kij,kl->ijl", m.structure, g)
    lowered = 0.5 * (C - np.einsum("jli->ijl", C) + np.einsum("lij->ijl", C))
    return Connection(np.einsum("kl,ijl->kij", np.linalg.inv(g), lowered))


def covariant_derivative(conn: Connection, tensor: np.ndarray, kinds: str) -> np.ndarray:
    """nabla of an invariant tensor; `kinds` marks each slot 'd' (covariant) or 'u' (contravariant).

    The result has the derivative direction as its first axis.
    """
    gamma = conn.gamma
    out = np.zeros((DIM,) + tensor.shape)
    for s, kind in enumerate(kinds):
        moved = np.moveaxis(tensor, s, 0)
        match kind:
            case "d":
                term = -np.tensordot(gamma, moved, axes=([0], [0]))
            case "u":
                term = np.swapaxes(np.tensordot(gamma, moved, axes=([2], [0])), 0, 1)
            case _:
                raise GeometryError(f"unknown slot kind {kind!r}")
        out += np.moveaxis(term, 1, s + 1)
    return out


@dataclass(frozen=True, eq=False)
class Curvature:
    operator: np.ndarray  # e^k(R(e_i, e_j) e_l) as [i, j, k, l]
    riemann: np.ndarray  # g(R(e_i, e_j) e_k, e_l) as [i, j, k, l]
    ricci: np.ndarray
    scalar: float


def curvature(conn: Connection, g: np.ndarray, m: LieModel) -> Curvature:
    """R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y] in the invariant frame."""
    mats = np.moveaxis(conn.gamma, 1, 0)  # mats[i] = (gamma^k_{i l})_{k l}
    commutator = np.einsum("ikm,jml->ijkl", mats, mats) - np.einsum("jkm,iml->ijkl", mats, mats)
    operator = commutator - np.einsum("mij,mkl->ijkl", m.structure, mats)
    riemann = np.einsum("ijmk,ml->ijkl", operator, g)
    ricci = np.einsum("ijil->jl", operator)
    scalar = float(np.einsum("jl,jl->", np.linalg.inv(g), ricci))
    return Curvature(operator, riemann, ricci, scalar)


def curvature_residuals(curv: Curvature) -> dict[str, float]:
    Rm, op = curv.riemann, curv.operator
    scale = max(1.0, float(np.max(np.abs(Rm))))
    antisymmetry = max(
        float(np.max(np.abs(Rm + Rm.transpose(1, 0, 2, 3)))),
        float(np.max(np.abs(Rm + Rm.transpose(0, 1, 3, 2)))),
    )
    pair = float(np.max(np.abs(Rm - Rm.transpose(2, 3, 0, 1))))
    # R(X,Y)Z + R(Y,Z)X + R(Z,X)Y with output index k
    bianchi = float(np.max(np.abs(op + np.einsum("jlki->ijkl", op) + np.einsum("likj->ijkl", op))))
    return {
        "riemann_antisymmetry": antisymmetry / scale,
        "riemann_pair_symmetry": pair / scale,
        "first_bianchi": bianchi / scale,
        "ricci_symmetric": float(np.max(np.abs(curv.ricci - curv.ricci.T))) / scale,
    }


@dataclass(frozen=True, eq=False)
class NijTensor:
    upper: np.ndarray  # N^m_{jk}
    g: np.ndarray

    @cached_property
    def g_inv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.einsum("im,mjk->ijk", self.g, self.upper)

    @cached_property
    def norm_sq(self) -> float:
        gi = self.g_inv
        return float(np.einsum("ijk,ia,jb,kc,abc->", self.lower, gi, gi, gi, self.lower, optimize=True))

    def bianchi_residual(self) -> float:
        L = self.lower
        return float(np.max(np.abs(L + np.einsum("jki->ijk", L) + np.einsum("kij->ijk", L))))

    def type02_residual(self, J: np.ndarray) -> float:
        t11, t20, _ = type_split(TMValued2Form(self.upper), J, self.g)
        return max(t11.norm_max(), t20.norm_max())


def nijenhuis(J: np.ndarray, g: np.ndarray, m: LieModel) -> NijTensor:
    """N(X,Y) = 1/4([JX,JY] - J[JX,Y] - J[X,JY] - [X,Y]) on the invariant frame."""
    c = m.structure
    upper = 0.25 * (
        np.einsum("mab,aj,bk->mjk", c, J, J)
        - np.einsum("pq,qak,aj->pjk", J, c, J)
        - np.einsum("pq,qjb,bk->pjk", J, c, J)
        - c
    )
    return NijTensor(upper, np.asarray(g, dtype=float))


def projected_connection(conn: Connection, N: NijTensor) -> Connection:
    """D_i e_j = nabla_i e_j - g^{mk} N_{ijk} e_m; J-parallel with torsion N."""
    return Connection(conn.gamma - np.einsum("mk,ijk->mij", N.g_inv, N.lower))


def n_dagger(N: NijTensor, phi: KForm) -> KForm:
    """(N^dagger . phi)_{kj} = N^m_j^l phi_{mkl} - N^m_k^l phi_{mjl}."""
    A = np.einsum("mja,al,mkl->jk", N.upper, N.g_inv, phi.tensor)
    return KForm.from_tensor(2, A.T - A)


def n_quadratics(N: NijTensor) -> tuple[np.ndarray, np.ndarray]:
    """(N2+, N2-) with N2+_ij = N_{abi} N^{ab}_j and N2-_ij = N_{abi} N^{ba}_j."""
    gi, L = N.g_inv, N.lower
    plus = np.einsum("pa,kb,abi,pkj->ij", gi, gi, L, L, optimize=True)
    minus = np.einsum("ka,pb,abi,pkj->ij", gi, gi, L, L, optimize=True)
    return plus, minus


def r_minus_j(projected: Connection, N: NijTensor) -> np.ndarray:
    """J-anti-invariant Ricci part as D^k(N_ijk + N_jik)."""
    div = np.einsum("lk,lijk->ij", N.g_inv, covariant_derivative(projected, N.lower, "ddd"))
    return div + div.T


def tensor_norm_sq(S: np.ndarray, g_inv: np.ndarray) -> float:
    return float(np.einsum("ij,ia,jb,ab->", S, g_inv, g_inv, S))


def codifferential(a: KForm, conn: Connection, g: np.ndarray) -> KForm:
    """(d^dagger a)_{b...} = -g^{cd} (nabla_d a)_{c b...}."""
    if a.degree == 0:
        return KForm.zero(0)
    nabla = covariant_derivative(conn, a.tensor, "d" * a.degree)
    return KForm.from_tensor(a.degree - 1, -np.tensordot(np.linalg.inv(g), nabla, axes=([0, 1], [1, 0])))


def codifferential_star(a: KForm, g: np.ndarray, orientation: KForm, m: LieModel) -> KForm:
    """-*d* on k-forms (even dimension)."""
    if a.degree == 0:
        return KForm.zero(0)
    return -hodge_star(d_invariant(hodge_star(a, g, orientation), m), g, orientation)


def exterior_from_connection(a: KForm, conn: Connection) -> KForm:
    """Antisymmetrized nabla a; equals da for a torsion-free connection."""
    nabla = covariant_derivative(conn, a.tensor, "d" * a.degree)
    out = sum((-1) ** s * np.moveaxis(nabla, 0, s) for s in range(a.degree + 1))
    return KForm.from_tensor(a.degree + 1, out)


# 1-based representatives of the J-orbits of normal-frame components
NORMAL_FRAME_PAIRS = (
    ((3, 3, 1), (5, 5, 1)),
    ((3, 3, 2), (5, 5, 2)),
    ((1, 1, 3), (5, 5, 3)),
    ((1, 1, 4), (5, 5, 4)),
    ((1, 1, 5), (3, 3, 5)),
    ((1, 1, 6), (3, 3, 6)),
)
NORMAL_FRAME_DIAGONAL = ((1, 3, 5), (1, 3, 6), (3, 1, 5), (3, 1, 6), (5, 1, 3), (5, 1, 4))


@lru_cache(maxsize=1)
def normal_frame_torsion_space() -> np.ndarray:
    """Orthonormal basis (216 x dim) of tensors N_ijk allowed at a point in the normal frame."""
    phi = CANONICAL_PHI.tensor
    J = STANDARD_J

    def constraints(n: np.ndarray) -> np.ndarray:
        return np.concatenate(
            [
                (n + n.transpose(0, 2, 1)).ravel(),
                (n + np.einsum("jki->ijk", n) + np.einsum("kij->ijk", n)).ravel(),
                (_on_slot(n, J, 0) - _on_slot(n, J, 1)).ravel(),
                (_on_slot(n, J, 0) - _on_slot(n, J, 2)).ravel(),
                (np.einsum("pij,pkl->ijkl", n, phi) + np.einsum("pkl,pij->ijkl", n, phi)).ravel(),
            ]
        )

    A = np.column_stack([constraints(e.reshape(DIM, DIM, DIM)) for e in np.eye(DIM**3)])
    return null_space(A)


def _on_slot(tensor: np.ndarray, J: np.ndarray, slot: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(tensor, J, axes=([slot], [0])), -1, slot)


def normal_frame_report(data: HitchinData, N: NijTensor) -> dict[str, float]:
    """N read in the normal frame: membership in the allowed space, orbit norm law and pair magnitudes."""
    P = normal_form(data)
    n = np.einsum("ma,abc,bj,ck->mjk", np.linalg.inv(P), N.upper, P, P)
    basis = normal_frame_torsion_space()
    flat = n.ravel()
    membership = float(np.max(np.abs(flat - basis @ (basis.T @ flat))))

    def at(idx: tuple[int, int, int]) -> float:
        return float(n[idx[0] - 1, idx[1] - 1, idx[2] - 1])

    orbit_sum = 8.0 * sum(at(a) ** 2 + at(b) ** 2 for a, b in NORMAL_FRAME_PAIRS)
    orbit_sum += 8.0 * sum(at(d) ** 2 for d in NORMAL_FRAME_DIAGONAL)
    pairs = max(abs(abs(at(a)) - abs(at(b))) for a, b in NORMAL_FRAME_PAIRS)
    scale = max(1.0, N.norm_sq)
    return {
        "dimension": float(basis.shape[1]),
        "membership": membership / np.sqrt(scale),
        "norm_law": abs(orbit_sum - float(np.sum(n * n))) / scale,
        "pair_magnitudes": pairs / np.sqrt(scale),
    }


@dataclass
class IdentityReport:
    residuals: dict[str, float]
    details: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-9

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.residuals.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.residuals.items() if not v < self.tolerance]


def _max_abs(x: np.ndarray) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def identity_suite(data: HitchinData, m: LieModel, tolerance: float = 1e-9) -> IdentityReport:
    """Evaluate every pointwise Type IIA identity at an invariant point; failures are entries, not exceptions."""
    phi, phi_hat, J, g = data.phi, data.phi_hat, data.J, data.g
    ginv = data.g_inv
    N = nijenhuis(J, g, m)
    conn = levi_civita(g, m)
    proj = projected_connection(conn, N)
    curv = curvature(conn, g, m)
    plus, minus = n_quadratics(N)
    norm_sq = N.norm_sq

    s_phi = data.scale
    s_n = max(1.0, float(np.sqrt(norm_sq)))
    s_n2 = s_n**2
    s_curv = max(s_n2, _max_abs(curv.riemann), 1.0)

    residuals: dict[str, float] = {f"hitchin.{k}": v for k, v in hitchin_checks(data).items()}
    residuals["jacobi"] = m.jacobi_residual()
    residuals["omega_closed"] = d_invariant(m.omega, m).norm_max()
    residuals["phi_closed"] = d_invariant(phi, m).norm_max() / s_phi
    residuals["phi_primitive"] = lambda_contract(phi, data.symplectic).norm_max() / s_phi

    residuals["torsion_free"] = _max_abs(conn.torsion(m)) / s_n
    residuals["metric_compatible"] = _max_abs(covariant_derivative(conn, g, "dd")) / s_n
    residuals.update(curvature_residuals(curv))
    residuals["scalar_curvature"] = abs(curv.scalar + norm_sq) / s_n2

    residuals["nijenhuis_bianchi"] = N.bianchi_residual() / s_n
    residuals["nijenhuis_type02"] = N.type02_residual(J) / s_n
    switch_phi = np.einsum("pij,pkl->ijkl", N.upper, phi.tensor) + np.einsum("pkl,pij->ijkl", N.upper, phi.tensor)
    # the companion form switches with the opposite sign
    switch_hat = np.einsum("pij,pkl->ijkl", N.upper, phi_hat.tensor) - np.einsum(
        "pkl,pij->ijkl", N.upper, phi_hat.tensor
    )
    residuals["switch_phi"] = _max_abs(switch_phi) / (s_n * s_phi)
    residuals["switch_phi_hat"] = _max_abs(switch_hat) / (s_n * s_phi)

    box_hat = boxtimes(N.upper, phi_hat)
    d_hat = d_invariant(phi_hat, m)
    residuals["d_phi_hat_boxtimes"] = (d_hat - box_hat).norm_max() / (s_n * s_phi)
    residuals["boxtimes_phi"] = boxtimes(N.upper, phi).norm_max() / (s_n * s_phi)
    residuals["boxtimes_type22"] = (j_act(box_hat, J) - box_hat).norm_max() / (s_n * s_phi)
    residuals["d_from_connection"] = (d_hat - exterior_from_connection(phi_hat, conn)).norm_max() / (s_n * s_phi)

    residuals["quadratic_relation"] = _max_abs(minus - 2.0 * plus + 0.25 * norm_sq * g) / s_n2
    residuals["quadratic_norm"] = abs(tensor_norm_sq(plus, ginv) - 3.0 / 16.0 * norm_sq**2) / s_n2**2
    bounds = eigh(0.5 * (plus + plus.T), g, eigvals_only=True)
    residuals["quadratic_bounds"] = max(0.0, -float(bounds[0]), float(bounds[-1]) - 0.25 * norm_sq) / s_n2

    ricci_j = 0.5 * (curv.ricci + J.T @ curv.ricci @ J)
    ricci_anti = 0.5 * (curv.ricci - J.T @ curv.ricci @ J)
    rmj = r_minus_j(proj, N)
    residuals["ricci_j_invariant"] = _max_abs(ricci_j + 2.0 * minus) / s_curv
    residuals["ricci_anti_invariant"] = _max_abs(ricci_anti - rmj) / s_curv

    div_proj = np.einsum("lk,lkij->ij", ginv, covariant_derivative(proj, N.lower, "ddd"))
    div_lc = np.einsum("lk,lkij->ij", ginv, covariant_derivative(conn, N.lower, "ddd"))
    residuals["divergence_projected"] = _max_abs(div_proj) / s_curv
    residuals["divergence_levi_civita"] = _max_abs(div_lc) / s_curv

    residuals["projected_j_parallel"] = _max_abs(covariant_derivative(proj, J, "ud")) / s_n
    residuals["projected_torsion"] = _max_abs(proj.torsion(m) - N.upper) / s_n
    nabla_j = covariant_derivative(conn, J, "ud")
    residuals["levi_civita_j"] = _max_abs(nabla_j + 2.0 * np.einsum("pk,aq,pqb->kab", J, ginv, N.lower)) / s_n
    residuals["holonomy_phi"] = _max_abs(covariant_derivative(proj, phi.tensor, "ddd")) / (s_n * s_phi)
    residuals["holonomy_phi_hat"] = _max_abs(covariant_derivative(proj, phi_hat.tensor, "ddd")) / (s_n * s_phi)

    dd_phi = codifferential(phi, conn, g)
    dd_phi_star = codifferential_star(phi, g, data.volume, m)
    dd_hat = codifferential(phi_hat, conn, g)
    dd_hat_star = codifferential_star(phi_hat, g, data.volume, m)
    residuals["codifferential_paths"] = max((dd_phi - dd_phi_star).norm_max(), (dd_hat - dd_hat_star).norm_max()) / (
        s_n * s_phi
    )
    residuals["jd_dagger"] = (j_act(dd_phi, J) + dd_phi - 2.0 * n_dagger(N, phi)).norm_max() / (s_n * s_phi)

    frame = normal_frame_report(data, N)
    residuals["normal_frame_membership"] = frame["membership"]
    residuals["normal_frame_norm_law"] = frame["norm_law"]
    residuals["normal_frame_pairs"] = frame["pair_magnitudes"]

    details = {
        "norm_sq_phi": data.norm_sq,
        "norm_sq_n": norm_sq,
        "scalar_curvature": curv.scalar,
        "r_minus_j_sq": tensor_norm_sq(rmj, ginv),
        "normal_frame_dimension": frame["dimension"],
    }
    report = IdentityReport(residuals, details, tolerance)
    if not report.passed:
        logger.warning(f"Identity suite on {m.name}: failures {report.failures()}")
    return report
