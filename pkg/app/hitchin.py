"""
Hitchin construction for positive primitive 3-forms on a symplectic 6-space.

Order of construction: K -> lambda -> |phi|^2 (from sqrt(-lambda) = |phi|^2/2 in units of w^3/3!)
-> J = K/sqrt(-lambda) -> g_tilde -> g = g_tilde/|phi|^2.
"""

from dataclasses import dataclass
from functools import cached_property
from logging import getLogger
from typing import Union

import numpy as np
from scipy.linalg import expm, null_space

from app.errors import DegreeError, GeometryError, NotPositive, NotPrimitive, NotStable, ZeroCovector
from app.forms6 import (
    DIM,
    KForm,
    Symplectic,
    as_symplectic,
    from_tensor,
    gram,
    hodge_star,
    j_act,
    lambda_contract,
    pullback,
    standard_omega,
    wedge,
    wedge_coeffs,
)

logger = getLogger(__name__)

PRIMITIVE_TOL = 1e-10
STABLE_TOL = 1e-12
POSITIVE_TOL = 1e-10

CANONICAL_PHI = KForm.from_terms({(1, 3, 5): 1.0, (1, 4, 6): -1.0, (2, 4, 5): -1.0, (2, 3, 6): -1.0})
CANONICAL_PHI_HAT = KForm.from_terms({(1, 3, 6): 1.0, (1, 4, 5): 1.0, (2, 3, 5): 1.0, (2, 4, 6): -1.0})
STANDARD_J = np.kron(np.eye(3), np.array([[0.0, -1.0], [1.0, 0.0]]))


def k_map(phi: KForm, orientation: KForm) -> np.ndarray:
    """Matrix K with K_phi(v) = (K v) (x) orientation, K_phi(v) = -iota_v phi ^ phi."""
    if phi.degree != 3:
        raise DegreeError(f"k_map needs a 3-form, got degree {phi.degree}")
    if orientation.degree != DIM or orientation.top() == 0.0:
        raise DegreeError("orientation must be a nonzero 6-form")
    contracted = from_tensor(2, phi.tensor)
    theta = wedge_coeffs(2, contracted, 3, phi.vec)
    # e^i ^ (5-form) picks the coefficient on the tuple without i, with sign (-1)^i
    signs = (-1.0) ** np.arange(DIM)
    return -signs[:, None] * theta[:, ::-1].T / orientation.top()


def lambda_invariant(phi: KForm, orientation: KForm) -> float:
    K = k_map(phi, orientation)
    return float(np.trace(K @ K)) / 6.0


def phi_hat_from(phi: KForm, orientation: KForm) -> KForm:
    """phi_hat computed from phi and the orientation alone."""
    K = k_map(phi, orientation)
    lam = float(np.trace(K @ K)) / 6.0
    if lam >= 0.0:
        raise NotStable(f"lambda = {lam:.3e} is not negative")
    return j_act(phi, K / np.sqrt(-lam))


@dataclass(frozen=True, eq=False)
class HitchinData:
    phi: KForm
    symplectic: Symplectic
    lam: float
    K: np.ndarray
    J: np.ndarray
    phi_hat: KForm
    norm_sq: float
    g: np.ndarray
    g_tilde: np.ndarray

    @property
    def omega(self) -> KForm:
        return self.symplectic.form

    @property
    def volume(self) -> KForm:
        return self.symplectic.volume

    @property
    def u(self) -> float:
        return float(np.log(self.norm_sq))

    @property
    def scale(self) -> float:
        return max(self.phi.norm_max(), 1e-300)

    @cached_property
    def g_inv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @property
    def positivity_margin(self) -> float:
        return float(np.linalg.eigvalsh(self.g)[0])


def build(phi: KForm, omega: Union[Symplectic, KForm, np.ndarray]) -> HitchinData:
    symp = as_symplectic(omega)
    if phi.degree != 3:
        raise DegreeError(f"Hitchin construction needs a 3-form, got degree {phi.degree}")
    scale = phi.norm_max()

    primitivity = wedge(symp.form, phi).norm_max()
    if primitivity > PRIMITIVE_TOL * max(1.0, scale):
        raise NotPrimitive(f"w ^ phi = {primitivity:.3e}")

    K = k_map(phi, symp.volume)
    lam = float(np.trace(K @ K)) / 6.0
    if lam >= -STABLE_TOL * scale**4:
        raise NotStable(f"lambda = {lam:.3e} is not negative")
    root = np.sqrt(-lam)
    J = K / root
    norm_sq = 2.0 * root

    W = symp.inverse
    P = phi.tensor
    g_tilde = -np.einsum("iab,jcd,ac,bd->ij", P, P, W, W, optimize=True)
    g_tilde = 0.5 * (g_tilde + g_tilde.T)
    g = g_tilde / norm_sq
    smallest = float(np.linalg.eigvalsh(g)[0])
    if smallest <= POSITIVE_TOL:
        raise NotPositive(f"g has eigenvalue {smallest:.3e}")

    return HitchinData(
        phi=phi,
        symplectic=symp,
        lam=lam,
        K=K,
        J=J,
        phi_hat=j_act(phi, J),
        norm_sq=float(norm_sq),
        g=g,
        g_tilde=g_tilde,
    )


def random_symplectic_frame(rng: np.random.Generator, omega: Symplectic, scale: float = 0.3) -> np.ndarray:
    """P with P^T w P = w, the exponential of w^{-1} S for a random symmetric S."""
    S = rng.standard_normal((DIM, DIM))
    S = 0.5 * scale * (S + S.T)
    return expm(omega.inverse @ S)


def random_positive_form(
    rng: np.random.Generator, frame_scale: float = 0.3, magnitude: tuple[float, float] = (0.5, 2.0)
) -> KForm:
    """A positive primitive 3-form for the standard w: a scaled canonical form in a random symplectic frame."""
    P = random_symplectic_frame(rng, standard_omega(), frame_scale)
    return rng.uniform(*magnitude) * pullback(CANONICAL_PHI, P)


def normal_form(data: HitchinData) -> np.ndarray:
    """Change of basis (columns = new frame) in which w is standard, g = Id and phi = M phi_can."""
    J, g = data.J, data.g
    frame: list[np.ndarray] = []
    for _ in range(3):
        best, best_norm = None, 0.0
        for v in np.eye(DIM):
            w = v.copy()
            for f in frame:
                w = w - (f @ g @ v) * f
            n = float(np.sqrt(w @ g @ w))
            if n > best_norm:
                best, best_norm = w / n, n
        if best is None:
            raise GeometryError(f"metric is degenerate on the complement of a {len(frame)}-vector frame")
        frame.extend([best, J @ best])
    P = np.column_stack(frame)

    phi_frame = pullback(data.phi, P)
    hat_frame = pullback(data.phi_hat, P)
    theta = np.angle(phi_frame.component(1, 3, 5) + 1j * hat_frame.component(1, 3, 5))
    first = np.cos(theta) * P[:, 0] - np.sin(theta) * P[:, 1]
    P[:, 0] = first
    P[:, 1] = J @ first
    return P


def normal_form_residual(data: HitchinData, P: np.ndarray) -> float:
    """Deviation of (w, g, phi) in the frame P from (w_std, Id, M phi_can) with M = |phi|/2."""
    M = 0.5 * np.sqrt(data.norm_sq)
    omega_frame = P.T @ data.symplectic.matrix @ P
    g_frame = P.T @ data.g @ P
    phi_frame = pullback(data.phi, P)
    return max(
        float(np.max(np.abs(omega_frame - standard_omega().matrix))),
        float(np.max(np.abs(g_frame - np.eye(DIM)))),
        (phi_frame - M * CANONICAL_PHI).norm_max(),
    )


def variation_hat(data: HitchinData, dphi: KForm) -> KForm:
    denominator = wedge(data.phi, data.phi_hat).top()
    along_phi = wedge(dphi, data.phi).top() / denominator
    along_hat = wedge(dphi, data.phi_hat).top() / denominator
    return -j_act(dphi, data.J) + (2.0 * along_phi) * data.phi + (2.0 * along_hat) * data.phi_hat


def linearized_flux(data: HitchinData, dphi: KForm) -> KForm:
    """delta(|phi|^2 phi_hat) = -|phi|^2 J(dphi) - 2(dphi, phi_hat) phi + 4(dphi, phi) phi_hat."""
    G = gram(3, data.g)
    return (
        -data.norm_sq * j_act(dphi, data.J)
        - (2.0 * float(dphi.vec @ G @ data.phi_hat.vec)) * data.phi
        + (4.0 * float(dphi.vec @ G @ data.phi.vec)) * data.phi_hat
    )


@dataclass(frozen=True)
class SymbolReport:
    eigenvalues: tuple[float, ...]

    def matches(self, expected: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 0.0), tol: float = 1e-10) -> bool:
        return len(self.eigenvalues) == len(expected) and all(
            abs(a - b) <= tol for a, b in zip(self.eigenvalues, expected)
        )


def symbol_spectrum(data: HitchinData, xi: np.ndarray) -> SymbolReport:
    xi = np.asarray(xi, dtype=float)
    length = float(np.sqrt(xi @ data.g_inv @ xi))
    if length < 1e-14:
        raise ZeroCovector("symbol needs a nonzero covector")
    covector = KForm(1, xi / length)
    symp = data.symplectic

    basis = [KForm(3, row) for row in np.eye(20)]
    constraints = np.array(
        [np.concatenate([wedge(covector, b).vec, lambda_contract(b, symp).vec]) for b in basis]
    ).T
    Z = null_space(constraints)
    G = gram(3, data.g)
    weights, vectors = np.linalg.eigh(Z.T @ G @ Z)
    Z = Z @ vectors / np.sqrt(weights)

    symbol = np.array(
        [wedge(covector, lambda_contract(wedge(covector, linearized_flux(data, b)), symp)).vec for b in basis]
    ).T
    restricted = Z.T @ G @ symbol @ Z
    eigenvalues = np.sort(np.linalg.eigvals(restricted).real / data.norm_sq)[::-1]
    if len(eigenvalues) != 5:
        logger.warning(f"Constrained space has dimension {len(eigenvalues)}, expected 5")
    return SymbolReport(tuple(float(v) + 0.0 for v in eigenvalues))


def _apply_j(tensor: np.ndarray, J: np.ndarray, slots: tuple[int, ...]) -> np.ndarray:
    # X_{..Ji..} = J^p_i X_{..p..} on each listed slot
    for s in slots:
        tensor = np.moveaxis(np.tensordot(tensor, J, axes=([s], [0])), -1, s)
    return tensor


def _relative(residual: float, reference: float) -> float:
    return residual / max(1.0, reference)


def hitchin_checks(data: HitchinData) -> dict[str, float]:
    """Residuals of the pointwise identities of the construction, relative to the data scale."""
    P, H = data.phi.tensor, data.phi_hat.tensor
    J, g, gt, ginv = data.J, data.g, data.g_tilde, data.g_inv
    w, W = data.symplectic.matrix, data.symplectic.inverse
    quad = data.scale**2

    lhs1 = np.einsum("ij,iab,jcd->abcd", W, P, P, optimize=True)
    rhs1 = 0.25 * (
        np.einsum("ac,bd->abcd", w, gt)
        - np.einsum("bc,ad->abcd", w, gt)
        - np.einsum("ad,bc->abcd", w, gt)
        + np.einsum("bd,ac->abcd", w, gt)
    )
    wt = data.norm_sq * w
    lhs2 = np.einsum("ij,iab,jcd->abcd", ginv, P, P, optimize=True)
    rhs2 = 0.25 * (
        np.einsum("ac,bd->abcd", g, gt)
        - np.einsum("bc,ad->abcd", g, gt)
        + np.einsum("ad,bc->abcd", w, wt)
        - np.einsum("bd,ac->abcd", w, wt)
    )
    lhs3 = np.einsum("ac,bd,iab,jcd->ij", ginv, ginv, P, P, optimize=True)

    relations_phi = [
        _apply_j(H, J, (0,)),
        _apply_j(H, J, (1,)),
        _apply_j(H, J, (2,)),
        -_apply_j(P, J, (0, 1)),
        -_apply_j(P, J, (0, 2)),
        -_apply_j(P, J, (1, 2)),
        -_apply_j(H, J, (0, 1, 2)),
    ]
    relations_hat = [
        -_apply_j(P, J, (0,)),
        -_apply_j(P, J, (1,)),
        -_apply_j(P, J, (2,)),
        -_apply_j(H, J, (0, 1)),
        -_apply_j(H, J, (0, 2)),
        -_apply_j(H, J, (1, 2)),
        _apply_j(P, J, (0, 1, 2)),
    ]
    phihat = max(
        max(float(np.max(np.abs(P - r))) for r in relations_phi),
        max(float(np.max(np.abs(H - r))) for r in relations_hat),
    )

    volume = data.volume
    G3 = gram(3, g)
    return {
        "k_trace": _relative(abs(float(np.trace(data.K))), quad),
        "j_square": float(np.max(np.abs(J @ J + np.eye(DIM)))),
        "compatibility": float(np.max(np.abs(g - w @ J))),
        "contract1_omega": _relative(float(np.max(np.abs(lhs1 - rhs1))), quad),
        "contract1_metric": _relative(float(np.max(np.abs(lhs2 - rhs2))), quad),
        "contract1_tilde": _relative(float(np.max(np.abs(lhs3 - gt))), quad),
        "phihat_relations": _relative(phihat, data.scale),
        "star_phi": _relative((hodge_star(data.phi, g, volume) - data.phi_hat).norm_max(), data.scale),
        "star_phi_hat": _relative((hodge_star(data.phi_hat, g, volume) + data.phi).norm_max(), data.scale),
        "phi_hat_primitive": _relative(lambda_contract(data.phi_hat, data.symplectic).norm_max(), data.scale),
        "norm_sq": _relative(abs(float(data.phi.vec @ G3 @ data.phi.vec) - data.norm_sq), data.norm_sq),
    }
