"""
Torus ansatz with coefficients depending on x^1: a 1-D periodic problem on a uniform grid.

Fields are stacked as rows (a, b, c, d) with a = 2e^alpha, b = 2e^beta, c = gamma - delta and
d = gamma + delta. Time stepping uses the heat reduction; the general evaluator rebuilds the
6-dimensional forms at every node and is used as a cross-check.
"""

from dataclasses import dataclass, field
from logging import getLogger
from typing import Optional, Sequence

import numpy as np

from app.ansatz import TORUS_ANSATZ
from app.errors import GeometryError, PositivityLoss
from app.forms6 import INDEX, KForm, lambda_coeffs, standard_omega, wedge_coeffs
from app.hitchin import build

logger = getLogger(__name__)

FIELDS = ("a", "b", "c", "d")
DIFFUSIVITY = 4.0
# first derivative direction dx^1 as a 1-form
_DX1 = np.eye(6)[0]


def _slot(*idx: int) -> int:
    return INDEX[len(idx)][tuple(i - 1 for i in idx)]


def fourier_field(x: np.ndarray, mean: float, modes: Sequence[tuple[int, float, float]]) -> np.ndarray:
    """mean + sum of cos/sin coefficients of the given integer modes."""
    out = np.full_like(x, float(mean))
    for mode, cos_coeff, sin_coeff in modes:
        out += cos_coeff * np.cos(2.0 * np.pi * mode * x) + sin_coeff * np.sin(2.0 * np.pi * mode * x)
    return out


def _lap(f: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis=-1) - 2.0 * f + np.roll(f, 1, axis=-1)) / (h * h)


def _ddx(f: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * h)


@dataclass(frozen=True, eq=False)
class GridState:
    fields: np.ndarray  # (4, n)
    t: float = 0.0

    def __post_init__(self):
        fields = np.array(self.fields, dtype=float)
        if fields.ndim != 2 or fields.shape[0] != 4 or fields.shape[1] < 8:
            raise GeometryError(f"grid fields must have shape (4, n >= 8), got {fields.shape}")
        fields.setflags(write=False)
        object.__setattr__(self, "fields", fields)

    @classmethod
    def from_functions(cls, n: int, a, b, c, d, t: float = 0.0) -> "GridState":
        x = np.arange(n) / n
        return cls(np.stack([np.broadcast_to(np.asarray(f(x), dtype=float), (n,)) for f in (a, b, c, d)]), t)

    @property
    def n(self) -> int:
        return self.fields.shape[1]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    @property
    def a(self) -> np.ndarray:
        return self.fields[0]

    @property
    def b(self) -> np.ndarray:
        return self.fields[1]

    @property
    def c(self) -> np.ndarray:
        return self.fields[2]

    @property
    def d(self) -> np.ndarray:
        return self.fields[3]

    @property
    def determinant(self) -> np.ndarray:
        return self.a * self.b - self.c**2

    @property
    def u(self) -> np.ndarray:
        return np.log(2.0 * np.sqrt(self.determinant))

    def check_positive(self) -> None:
        det = self.determinant
        worst = int(np.argmin(det))
        if not det[worst] > 0.0:
            raise PositivityLoss(
                f"ab - c^2 = {det[worst]:.3e} at node {worst}, t={self.t:.6g}",
                t=self.t,
                worst_node=worst,
                margin=float(det[worst]),
            )

    def node_form(self, i: int) -> KForm:
        return TORUS_ANSATZ.form(self.fields[:, i])


def rhs_reduced(s: GridState) -> np.ndarray:
    """Matrix heat law: (a, b, c) diffuse with coefficient 4, d is frozen."""
    s.check_positive()
    out = DIFFUSIVITY * _lap(s.fields, s.h)
    out[3] = 0.0
    return out


@dataclass
class GeneralPipeline:
    """Per-node coefficient arrays of each stage of d Lambda d(|phi|^2 phi_hat)."""

    flux: np.ndarray  # (n, 20)
    d_flux: np.ndarray  # (n, 15) 4-forms
    lambda_d_flux: np.ndarray  # (n, 15) 2-forms
    rhs: np.ndarray  # (n, 20)
    derivatives: np.ndarray  # (4, n)


def general_pipeline(s: GridState) -> GeneralPipeline:
    s.check_positive()
    omega = standard_omega()
    flux = np.empty((s.n, 20))
    for i in range(s.n):
        data = build(s.node_form(i), omega)
        flux[i] = (data.norm_sq * data.phi_hat).vec
    d_flux = wedge_coeffs(1, _DX1, 3, _ddx(flux, s.h))
    lam = lambda_coeffs(4, d_flux, omega.inverse)
    rhs = wedge_coeffs(1, _DX1, 2, _ddx(lam, s.h))
    derivatives = np.stack(
        [
            2.0 * rhs[:, _slot(1, 3, 5)],
            -2.0 * rhs[:, _slot(1, 4, 6)],
            rhs[:, _slot(1, 3, 6)] - rhs[:, _slot(1, 4, 5)],
            rhs[:, _slot(1, 3, 6)] + rhs[:, _slot(1, 4, 5)],
        ]
    )
    return GeneralPipeline(flux, d_flux, lam, rhs, derivatives)


def rhs_general(s: GridState) -> np.ndarray:
    """The flow evaluated pointwise on 6-dimensional forms, differentiating only in x^1."""
    return general_pipeline(s).derivatives


def displayed_lambda_d_flux(s: GridState, derivative: Optional[np.ndarray] = None) -> np.ndarray:
    """2(a' dx^35 + c'(dx^36 - dx^45) - b' dx^46) from given (or centered-difference) field derivatives."""
    deriv = derivative if derivative is not None else _ddx(s.fields.T, s.h).T
    out = np.zeros((s.n, 15))
    out[:, _slot(3, 5)] = 2.0 * deriv[0]
    out[:, _slot(3, 6)] = 2.0 * deriv[2]
    out[:, _slot(4, 5)] = -2.0 * deriv[2]
    out[:, _slot(4, 6)] = -2.0 * deriv[1]
    return out


def nijenhuis_norm(s: GridState) -> np.ndarray:
    """|N|^2 = 16 e^{-5u}(ab(2c' - cb'/b - ca'/a)^2 + ((ab - c^2)/ab)(ab' - a'b)^2)."""
    s.check_positive()
    a, b, c = s.a, s.b, s.c
    da, db, dc = (_ddx(f, s.h) for f in (a, b, c))
    ab = a * b
    out = 16.0 * np.exp(-5.0 * s.u) * (
        ab * (2.0 * dc - c * db / b - c * da / a) ** 2 + (s.determinant / ab) * (a * db - da * b) ** 2
    )
    return np.maximum(out, 0.0)


def nijenhuis_norm_frame(s: GridState, i: int) -> float:
    """|N|^2 at node i from J and its centered x^1-derivative in the coordinate frame."""
    omega = standard_omega()
    J = build(s.node_form(i), omega).J
    ahead = build(s.node_form((i + 1) % s.n), omega).J
    behind = build(s.node_form((i - 1) % s.n), omega).J
    dJ = (ahead - behind) / (2.0 * s.h)
    JdJ = J @ dJ
    eye = np.eye(6)
    N = 0.25 * (
        np.einsum("j,bk->bjk", J[0], dJ)
        - np.einsum("k,bj->bjk", J[0], dJ)
        + np.einsum("k,bj->bjk", eye[0], JdJ)
        - np.einsum("j,bk->bjk", eye[0], JdJ)
    )
    g = build(s.node_form(i), omega).g
    gi = np.linalg.inv(g)
    return float(np.einsum("ab,jc,kd,ajk,bcd->", g, gi, gi, N, N, optimize=True))


def terminal_residuals(s: GridState) -> dict[str, float]:
    """Closedness, primitivity and x^1-variation of the node forms, relative to their largest coefficient."""
    omega = standard_omega()
    coeffs = np.stack([s.node_form(i).vec for i in range(s.n)])
    scale = max(1.0, float(np.max(np.abs(coeffs))))
    closed = wedge_coeffs(1, _DX1, 3, _ddx(coeffs, s.h))
    primitive = lambda_coeffs(3, coeffs, omega.inverse)
    return {
        "closed": float(np.max(np.abs(closed))) / scale,
        "primitive": float(np.max(np.abs(primitive))) / scale,
        "constant": float(np.max(np.abs(coeffs - coeffs.mean(axis=0)))) / scale,
    }


def rk4_grid(s: GridState, dt: float) -> GridState:
    f = s.fields
    k1 = rhs_reduced(s)
    k2 = rhs_reduced(GridState(f + 0.5 * dt * k1, s.t + 0.5 * dt))
    k3 = rhs_reduced(GridState(f + 0.5 * dt * k2, s.t + 0.5 * dt))
    k4 = rhs_reduced(GridState(f + dt * k3, s.t + dt))
    new = f + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    new[3] = f[3]
    return GridState(new, s.t + dt)


def first_mode_amplitude(f: np.ndarray) -> float:
    return float(2.0 * np.abs(np.fft.rfft(f)[1]) / f.size)


@dataclass
class GridRow:
    t: float
    means: np.ndarray
    deviation: float
    first_mode: float
    sup_norm_n_sq: float
    positivity: float
    e_p: dict[float, float]


def grid_row(s: GridState, p_values: tuple[float, ...]) -> GridRow:
    fields = s.fields[:3]
    means = fields.mean(axis=1)
    u = s.u
    return GridRow(
        t=s.t,
        means=means,
        deviation=float(np.max(np.abs(fields - means[:, None]))),
        first_mode=first_mode_amplitude(s.a),
        sup_norm_n_sq=float(np.max(nijenhuis_norm(s))),
        positivity=float(np.min(s.determinant)),
        e_p={p: float(s.h * np.sum(np.exp(p * u))) for p in p_values},
    )


@dataclass
class GridRun:
    initial: GridState
    final: GridState
    rows: list[GridRow] = field(default_factory=list)
    snapshots: list[GridState] = field(default_factory=list)
    dt: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def e_p_nondecreasing(self, tol: float = 1e-12) -> dict[float, bool]:
        """Integral of e^{pu} along the run, for each recorded p in (0, 1]."""
        verdicts = {}
        for p in self.rows[0].e_p:
            if 0.0 < p <= 1.0:
                e = np.array([r.e_p[p] for r in self.rows])
                verdicts[p] = bool(np.all(np.diff(e) >= -tol * np.maximum(1.0, np.abs(e[1:]))))
        return verdicts

    def decay_rate(self, floor: float = 1e-9) -> float:
        """Fitted exponential rate of the first mode of a over rows where it is resolvable."""
        t = self.column("t")
        amp = self.column("first_mode")
        usable = amp > floor * amp[0]
        if usable.sum() < 3:
            raise GeometryError("too few resolvable samples to fit a decay rate")
        slope, _ = np.polyfit(t[usable], np.log(amp[usable]), 1)
        return float(-slope)


def stable_dt(n: int) -> float:
    return (1.0 / n) ** 2 / 16.0


def run_to_equilibrium(
    s: GridState,
    t_max: float,
    dt: Optional[float] = None,
    snapshot_times: Sequence[float] = (),
    p_values: tuple[float, ...] = (0.5, 1.0),
    rows: int = 400,
) -> GridRun:
    """RK4 on the heat reduction with dt <= h^2/16; about `rows` observable rows are kept."""
    limit = stable_dt(s.n)
    dt = min(dt or limit, limit)
    steps = int(np.ceil(t_max / dt - 1e-9))
    dt = t_max / steps if steps else 0.0
    every = max(1, steps // max(rows, 1))
    pending = sorted(snapshot_times)
    run = GridRun(initial=s, final=s, dt=dt)
    run.rows.append(grid_row(s, p_values))
    logger.info(f"Grid run n={s.n}, dt={dt:.3e}, {steps} steps to t={t_max}")
    t0 = s.t
    for k in range(1, steps + 1):
        s = rk4_grid(s, dt)
        s = GridState(s.fields, t0 + k * dt)
        while pending and s.t >= pending[0] - 0.5 * dt:
            run.snapshots.append(s)
            pending.pop(0)
        if k % every == 0 or k == steps:
            run.rows.append(grid_row(s, p_values))
    run.final = s
    return run
