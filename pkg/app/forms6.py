"""
Exterior algebra on a fixed oriented 6-dimensional vector space.

A k-form is stored by its coefficients on the sorted basis tuples e^{i1...ik}, i1 < ... < ik.
With phi = (1/k!) phi_{i1...ik} e^{i1}^...^e^{ik} the stored coefficient equals the tensor component
at the sorted tuple, so `KForm.tensor` is the fully antisymmetric component array. Index tuples in the
public API are 1-based; arrays are 0-based.
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import combinations, permutations
from math import comb
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from app.errors import DegreeError, GeometryError, MetricError, SingularSymplectic

DIM = 6
TOL = 1e-12

BASIS: dict[int, tuple[tuple[int, ...], ...]] = {k: tuple(combinations(range(DIM), k)) for k in range(DIM + 1)}
INDEX: dict[int, dict[tuple[int, ...], int]] = {k: {idx: n for n, idx in enumerate(BASIS[k])} for k in BASIS}


def permutation_sign(seq: Sequence[int]) -> int:
    """Sign of the permutation sorting `seq` (entries assumed distinct)."""
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class _Expansion:
    flat: np.ndarray
    comp: np.ndarray
    sign: np.ndarray
    sorted_flat: np.ndarray


def _build_expansion(k: int) -> _Expansion:
    if k == 0:
        one = np.zeros(1, dtype=int)
        return _Expansion(one, one, np.ones(1), one)
    shape = (DIM,) * k
    flat, comp, sign = [], [], []
    for n, idx in enumerate(BASIS[k]):
        for perm in permutations(range(k)):
            flat.append(np.ravel_multi_index(tuple(idx[p] for p in perm), shape))
            comp.append(n)
            sign.append(permutation_sign(perm))
    sorted_flat = [np.ravel_multi_index(idx, shape) for idx in BASIS[k]]
    return _Expansion(np.array(flat), np.array(comp), np.array(sign, dtype=float), np.array(sorted_flat))


_EXPANSIONS = {k: _build_expansion(k) for k in range(DIM + 1)}


def to_tensor(k: int, vec: np.ndarray) -> np.ndarray:
    """Dense antisymmetric array of shape batch + (6,)*k from coefficients of shape batch + (C(6,k),)."""
    e = _EXPANSIONS[k]
    batch = vec.shape[:-1]
    out = np.zeros(batch + (DIM**k,))
    out[..., e.flat] = e.sign * vec[..., e.comp]
    return out.reshape(batch + (DIM,) * k)


def from_tensor(k: int, tensor: np.ndarray) -> np.ndarray:
    """Sorted-tuple coefficients of an antisymmetric array (trailing k axes are the slots)."""
    batch = tensor.shape[: tensor.ndim - k]
    return tensor.reshape(batch + (DIM**k,))[..., _EXPANSIONS[k].sorted_flat]


@dataclass(frozen=True)
class _WedgeTable:
    left: np.ndarray
    right: np.ndarray
    scatter: np.ndarray


@lru_cache(maxsize=None)
def _wedge_table(k: int, l: int) -> _WedgeTable:
    size = comb(DIM, k + l)
    left, right, rows = [], [], []
    for i, I in enumerate(BASIS[k]):
        for j, J in enumerate(BASIS[l]):
            if set(I) & set(J):
                continue
            merged = I + J
            row = np.zeros(size)
            row[INDEX[k + l][tuple(sorted(merged))]] = permutation_sign(merged)
            left.append(i)
            right.append(j)
            rows.append(row)
    return _WedgeTable(np.array(left, dtype=int), np.array(right, dtype=int), np.array(rows))


def wedge_coeffs(k: int, a: np.ndarray, l: int, b: np.ndarray) -> np.ndarray:
    """Wedge product on raw coefficient arrays; leading batch axes broadcast."""
    if k + l > DIM:
        raise DegreeError(f"wedge of degrees {k} and {l} exceeds {DIM}")
    table = _wedge_table(k, l)
    return (a[..., table.left] * b[..., table.right]) @ table.scatter


def _transform(tensor: np.ndarray, matrix: np.ndarray, k: int) -> np.ndarray:
    # every slot i becomes matrix^m_i contracted with slot m; after k passes the axis order is restored
    for _ in range(k):
        tensor = np.tensordot(tensor, matrix, axes=([0], [0]))
    return tensor


@dataclass(frozen=True, eq=False)
class KForm:
    """Alternating k-form on R^6, immutable."""

    degree: int
    vec: np.ndarray

    def __post_init__(self):
        if not 0 <= self.degree <= DIM:
            raise DegreeError(f"degree {self.degree} outside 0..{DIM}")
        vec = np.array(self.vec, dtype=float)
        if vec.shape != (comb(DIM, self.degree),):
            raise DegreeError(f"expected {comb(DIM, self.degree)} coefficients for degree {self.degree}, got {vec.shape}")
        vec.setflags(write=False)
        object.__setattr__(self, "vec", vec)

    @classmethod
    def zero(cls, degree: int) -> "KForm":
        return cls(degree, np.zeros(comb(DIM, degree)))

    @classmethod
    def from_terms(cls, terms: Mapping[tuple[int, ...], float], degree: Optional[int] = None) -> "KForm":
        """Build from {(i1,...,ik): coefficient} with 1-based indices in any order."""
        if degree is None:
            if not terms:
                raise DegreeError("degree required for an empty term map")
            degree = len(next(iter(terms)))
        vec = np.zeros(comb(DIM, degree))
        for idx, value in terms.items():
            if len(idx) != degree:
                raise DegreeError(f"term {idx} does not have degree {degree}")
            zero_based = tuple(i - 1 for i in idx)
            if any(not 0 <= i < DIM for i in zero_based):
                raise DegreeError(f"index out of range in {idx}")
            if len(set(zero_based)) < degree:
                continue
            vec[INDEX[degree][tuple(sorted(zero_based))]] += permutation_sign(zero_based) * value
        return cls(degree, vec)

    @classmethod
    def from_tensor(cls, degree: int, tensor: np.ndarray) -> "KForm":
        return cls(degree, from_tensor(degree, np.asarray(tensor, dtype=float)))

    @cached_property
    def tensor(self) -> np.ndarray:
        return to_tensor(self.degree, self.vec)

    @property
    def coeffs(self) -> dict[tuple[int, ...], float]:
        return {tuple(i + 1 for i in idx): float(v) for idx, v in zip(BASIS[self.degree], self.vec) if v != 0.0}

    def component(self, *idx: int) -> float:
        """Tensor component at an arbitrary 1-based index tuple."""
        if len(idx) != self.degree:
            raise DegreeError(f"need {self.degree} indices, got {len(idx)}")
        zero_based = tuple(i - 1 for i in idx)
        if len(set(zero_based)) < len(zero_based):
            return 0.0
        return permutation_sign(zero_based) * float(self.vec[INDEX[self.degree][tuple(sorted(zero_based))]])

    def top(self) -> float:
        """Coefficient on e^{123456} of a 6-form."""
        if self.degree != DIM:
            raise DegreeError(f"top coefficient of a {self.degree}-form")
        return float(self.vec[0])

    def norm_max(self) -> float:
        return float(np.max(np.abs(self.vec))) if self.vec.size else 0.0

    def allclose(self, other: "KForm", atol: float = TOL) -> bool:
        return self.degree == other.degree and bool(np.allclose(self.vec, other.vec, rtol=0.0, atol=atol))

    def _check_same(self, other: "KForm") -> None:
        if self.degree != other.degree:
            raise DegreeError(f"cannot combine degrees {self.degree} and {other.degree}")

    def __add__(self, other: "KForm") -> "KForm":
        self._check_same(other)
        return KForm(self.degree, self.vec + other.vec)

    def __sub__(self, other: "KForm") -> "KForm":
        self._check_same(other)
        return KForm(self.degree, self.vec - other.vec)

    def __neg__(self) -> "KForm":
        return KForm(self.degree, -self.vec)

    def __mul__(self, scalar: float) -> "KForm":
        return KForm(self.degree, self.vec * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "KForm":
        return KForm(self.degree, self.vec / float(scalar))

    def __repr__(self) -> str:
        terms = " ".join(f"{v:+.6g}e^{''.join(map(str, idx))}" for idx, v in self.coeffs.items())
        return f"KForm({self.degree}: {terms or '0'})"


def basis_form(*idx: int) -> KForm:
    """e^{i1...ik} with 1-based indices; unsorted input picks up the permutation sign."""
    return KForm.from_terms({tuple(idx): 1.0}, degree=len(idx))


def random_form(rng: np.random.Generator, degree: int, scale: float = 1.0) -> KForm:
    return KForm(degree, scale * rng.standard_normal(comb(DIM, degree)))


def wedge(a: KForm, b: KForm) -> KForm:
    if a.degree + b.degree > DIM:
        raise DegreeError(f"wedge of degrees {a.degree} and {b.degree} exceeds {DIM}")
    return KForm(a.degree + b.degree, wedge_coeffs(a.degree, a.vec, b.degree, b.vec))


def interior(v: np.ndarray, a: KForm) -> KForm:
    if a.degree == 0:
        raise DegreeError("interior product of a 0-form")
    contracted = np.tensordot(np.asarray(v, dtype=float), a.tensor, axes=([0], [0]))
    return KForm.from_tensor(a.degree - 1, contracted)


@dataclass(frozen=True, eq=False)
class Symplectic:
    """Nondegenerate antisymmetric matrix w_{ij} with its matrix inverse w^{jk} and volume w^3/3!."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (DIM, DIM) or not np.allclose(m, -m.T, atol=1e-12):
            raise SingularSymplectic("symplectic matrix must be a 6x6 antisymmetric array")
        if np.linalg.cond(m) > 1e12:
            raise SingularSymplectic("symplectic matrix is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_form(cls, omega: KForm) -> "Symplectic":
        if omega.degree != 2:
            raise DegreeError(f"symplectic form must have degree 2, got {omega.degree}")
        return cls(omega.tensor)

    @cached_property
    def inverse(self) -> np.ndarray:
        # w^{jk} w_{kl} = delta^j_l; not the index-raised tensor
        return np.linalg.inv(self.matrix)

    @cached_property
    def form(self) -> KForm:
        return KForm.from_tensor(2, self.matrix)

    @cached_property
    def volume(self) -> KForm:
        return wedge(wedge(self.form, self.form), self.form) / 6.0


def standard_omega() -> Symplectic:
    return Symplectic.from_form(KForm.from_terms({(1, 2): 1.0, (3, 4): 1.0, (5, 6): 1.0}))


def as_symplectic(omega: Union[Symplectic, KForm, np.ndarray]) -> Symplectic:
    match omega:
        case Symplectic():
            return omega
        case KForm():
            return Symplectic.from_form(omega)
        case _:
            return Symplectic(np.asarray(omega))


def lambda_coeffs(k: int, vec: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """(Lambda a)_{i3...ik} = 1/2 w^{ji} a_{ij i3...ik} on raw coefficients with batch axes."""
    if k < 2:
        raise DegreeError(f"Lambda needs degree >= 2, got {k}")
    tensor = to_tensor(k, vec)
    nb = vec.ndim - 1
    contracted = 0.5 * np.tensordot(tensor, inverse.T, axes=([nb, nb + 1], [0, 1]))
    return from_tensor(k - 2, contracted)


def lambda_contract(a: KForm, omega: Union[Symplectic, KForm, np.ndarray]) -> KForm:
    symp = as_symplectic(omega)
    if a.degree < 2:
        raise DegreeError(f"Lambda needs degree >= 2, got {a.degree}")
    return KForm(a.degree - 2, lambda_coeffs(a.degree, a.vec, symp.inverse))


def check_metric(g: np.ndarray, floor: float = 0.0) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (DIM, DIM) or not np.allclose(g, g.T, atol=1e-10 * max(1.0, float(np.max(np.abs(g))))):
        raise MetricError("metric must be a symmetric 6x6 array")
    smallest = float(np.linalg.eigvalsh(g)[0])
    if smallest <= floor:
        raise MetricError(f"metric is not positive definite (smallest eigenvalue {smallest:.3e})")
    return g


def check_complex_structure(J: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if J.shape != (DIM, DIM) or not np.allclose(J @ J, -np.eye(DIM), atol=tol):
        raise GeometryError("J does not square to -1")
    return J


def gram(k: int, g: np.ndarray) -> np.ndarray:
    """Inner products of sorted basis k-forms: <e^I, e^J> = det(g^{-1}[I, J])."""
    ginv = np.linalg.inv(g)
    if k == 0:
        return np.ones((1, 1))
    rows = np.array(BASIS[k])
    blocks = ginv[rows[:, None, :, None], rows[None, :, None, :]]
    return np.linalg.det(blocks)


def inner(a: KForm, b: KForm, g: np.ndarray) -> float:
    if a.degree != b.degree:
        raise DegreeError(f"inner product of degrees {a.degree} and {b.degree}")
    return float(a.vec @ gram(a.degree, check_metric(g)) @ b.vec)


@lru_cache(maxsize=None)
def _complements(k: int) -> tuple[np.ndarray, np.ndarray]:
    target, sign = [], []
    for idx in BASIS[k]:
        rest = tuple(i for i in range(DIM) if i not in idx)
        target.append(INDEX[DIM - k][rest])
        sign.append(permutation_sign(idx + rest))
    return np.array(target, dtype=int), np.array(sign, dtype=float)


def hodge_star(a: KForm, g: np.ndarray, orientation: KForm) -> KForm:
    """Defined by b ^ *a = <b, a> vol_g for every b, vol_g oriented by `orientation`."""
    g = check_metric(g)
    if orientation.degree != DIM or orientation.top() == 0.0:
        raise DegreeError("orientation must be a nonzero 6-form")
    volume = np.sign(orientation.top()) * np.sqrt(np.linalg.det(g))
    pairing = gram(a.degree, g) @ a.vec
    target, sign = _complements(a.degree)
    out = np.zeros(comb(DIM, DIM - a.degree))
    out[target] = volume * sign * pairing
    return KForm(DIM - a.degree, out)


def j_act(a: KForm, J: np.ndarray) -> KForm:
    """(Ja)_{i1...ik} = a(J e_{i1}, ..., J e_{ik})."""
    if a.degree == 0:
        return a
    return KForm.from_tensor(a.degree, _transform(a.tensor, np.asarray(J, dtype=float), a.degree))


def pullback(a: KForm, P: np.ndarray) -> KForm:
    """Components of `a` in the frame whose vectors are the columns of P."""
    if a.degree == 0:
        return a
    return KForm.from_tensor(a.degree, _transform(a.tensor, np.asarray(P, dtype=float), a.degree))


@dataclass(frozen=True, eq=False)
class TMValued2Form:
    """T^m_{jk}, stored as comps[m, j, k] and antisymmetric in (j, k)."""

    comps: np.ndarray

    def __post_init__(self):
        comps = np.array(self.comps, dtype=float)
        if comps.shape != (DIM, DIM, DIM):
            raise DegreeError(f"TM-valued 2-form needs shape (6, 6, 6), got {comps.shape}")
        scale = max(1.0, float(np.max(np.abs(comps))))
        if not np.allclose(comps, -comps.transpose(0, 2, 1), atol=1e-12 * scale):
            raise GeometryError("TM-valued 2-form is not antisymmetric in its form slots")
        comps.setflags(write=False)
        object.__setattr__(self, "comps", comps)

    def lower(self, g: np.ndarray) -> np.ndarray:
        return np.einsum("im,mjk->ijk", g, self.comps)

    def norm_max(self) -> float:
        return float(np.max(np.abs(self.comps)))

    def __add__(self, other: "TMValued2Form") -> "TMValued2Form":
        return TMValued2Form(self.comps + other.comps)

    def __sub__(self, other: "TMValued2Form") -> "TMValued2Form":
        return TMValued2Form(self.comps - other.comps)


def _rotate_slots(comps: np.ndarray, J: np.ndarray) -> np.ndarray:
    return np.einsum("pab,aj,bk->pjk", comps, J, J)


def _rotate_first_and_output(comps: np.ndarray, J: np.ndarray) -> np.ndarray:
    # (J^{-1} Psi(J X, Y))^p_{jk} = -J^p_q Psi^q_{ak} J^a_j
    return -np.einsum("pq,qak,aj->pjk", J, comps, J)


def type_split(T: TMValued2Form, J: np.ndarray, g: np.ndarray) -> tuple[TMValued2Form, TMValued2Form, TMValued2Form]:
    """Split into (1,1), (2,0) and (0,2) parts relative to J."""
    J = check_complex_structure(J)
    g = check_metric(g)
    if not np.allclose(J.T @ g @ J, g, atol=1e-10 * max(1.0, float(np.max(np.abs(g))))):
        raise MetricError("J is not orthogonal for g")
    comps = T.comps
    rotated = _rotate_slots(comps, J)
    t11 = 0.5 * (comps + rotated)
    odd = 0.5 * (comps - rotated)
    flipped = _rotate_first_and_output(odd, J)
    return TMValued2Form(t11), TMValued2Form(0.5 * (odd + flipped)), TMValued2Form(0.5 * (odd - flipped))


def boxtimes(T: np.ndarray, mu: KForm) -> KForm:
    """T (x) mu for a TM-valued 2-form T^p_{ij} and mu of degree 2 or 3."""
    m = mu.tensor
    match mu.degree:
        case 2:
            out = (
                np.einsum("pij,pk->ijk", T, m)
                + np.einsum("pjk,pi->ijk", T, m)
                + np.einsum("pki,pj->ijk", T, m)
            )
        case 3:
            out = (
                np.einsum("pij,pkl->ijkl", T, m)
                + np.einsum("pkl,pij->ijkl", T, m)
                - np.einsum("pik,pjl->ijkl", T, m)
                - np.einsum("pjl,pik->ijkl", T, m)
                + np.einsum("pil,pjk->ijkl", T, m)
                + np.einsum("pjk,pil->ijkl", T, m)
            )
        case _:
            raise DegreeError(f"boxtimes is defined for degrees 2 and 3, got {mu.degree}")
    return KForm.from_tensor(mu.degree + 1, out)
