"""Orthonormal Legendre bases, Gauss quadrature, and projection operators.

Everything lives on tensor-product cells of a Cartesian mesh.  The 1D basis
on an interval of length h is the Legendre family scaled by sqrt((2m+1)/h),
so mass matrices are identity and an L2 norm is a plain sum of squared
coefficients.  One Gauss rule with n_q = 2(k+1) points per direction is used
for every volume and face integral; cubic nonlinearities of Q_k fields are
then integrated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg

__all__ = [
    "Quadrature1D",
    "Basis1D",
    "TensorBasis",
    "gauss_rule",
    "make_quadrature",
    "l2_project_1d",
    "project_onesided",
    "face_project",
    "tensor_project",
    "eval_field",
    "eval_field_grad",
    "restrict_to_face",
]


@dataclass(frozen=True)
class Quadrature1D:
    """Gauss-Legendre rule on the reference interval [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.nodes.size


def gauss_rule(n: int) -> Quadrature1D:
    """n-point Gauss-Legendre rule on [-1, 1], exact through degree 2n-1."""
    if n < 1:
        raise ValueError(f"need at least one quadrature point, got n={n}")
    x, w = npleg.leggauss(n)
    return Quadrature1D(nodes=x, weights=w)


def make_quadrature(k: int) -> Quadrature1D:
    """The solver-wide rule for degree-k spaces: n_q = 2(k+1) points."""
    if k < 1:
        raise ValueError(f"polynomial degree must be >= 1, got k={k}")
    return gauss_rule(2 * (k + 1))


class Basis1D:
    """Orthonormal scaled Legendre basis of degree k on [-1, 1].

    psi_m(x) = sqrt((2m+1)/2) * P_m(x), so int_{-1}^{1} psi_m psi_n = delta_mn.
    """

    def __init__(self, k: int):
        if k < 0:
            raise ValueError(f"degree must be >= 0, got k={k}")
        self.k = k
        self.scales = np.sqrt((2.0 * np.arange(k + 1) + 1.0) / 2.0)

    @property
    def dim(self) -> int:
        return self.k + 1

    def eval(self, x: np.ndarray) -> np.ndarray:
        """Values psi_m(x): shape (len(x), k+1)."""
        x = np.asarray(x, dtype=float)
        return npleg.legvander(x, self.k) * self.scales

    def eval_deriv(self, x: np.ndarray) -> np.ndarray:
        """Derivatives psi_m'(x): shape (len(x), k+1)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((x.size, self.k + 1))
        for m in range(1, self.k + 1):
            coeff = np.zeros(m + 1)
            coeff[m] = self.scales[m]
            out[:, m] = npleg.legval(x, npleg.legder(coeff))
        return out

    def at_left(self) -> np.ndarray:
        """psi_m(-1) = sqrt((2m+1)/2) * (-1)^m."""
        return self.scales * ((-1.0) ** np.arange(self.k + 1))

    def at_right(self) -> np.ndarray:
        """psi_m(+1) = sqrt((2m+1)/2)."""
        return self.scales.copy()


@dataclass(frozen=True)
class TensorBasis:
    """Q_k = span{psi_m(x) psi_n(y)} on a reference cell."""

    bx: Basis1D
    by: Basis1D

    @property
    def dim(self) -> int:
        return self.bx.dim * self.by.dim


@lru_cache(maxsize=None)
def _basis(k: int) -> Basis1D:
    return Basis1D(k)


@lru_cache(maxsize=None)
def _quad(k: int) -> Quadrature1D:
    return make_quadrature(k)


def _map_to(interval, xi):
    a, b = interval
    return 0.5 * (a + b) + 0.5 * (b - a) * np.asarray(xi)


def _scaled_tables(interval, k, quad):
    """Basis values at mapped quadrature nodes, scaled orthonormal on interval."""
    a, b = interval
    h = b - a
    if h <= 0:
        raise ValueError(f"empty interval {interval}")
    s = np.sqrt(2.0 / h)
    basis = _basis(k)
    V = basis.eval(quad.nodes) * s               # (n_q, k+1)
    w = quad.weights * (0.5 * h)                 # physical weights
    return V, w, s


def l2_project_1d(f, interval, k, quad: Quadrature1D | None = None) -> np.ndarray:
    """L2 projection of f onto P_k(interval); coefficients in the scaled basis."""
    if quad is None:
        quad = _quad(max(k, 1))
    V, w, _ = _scaled_tables(interval, k, quad)
    fv = np.asarray(f(_map_to(interval, quad.nodes)), dtype=float)
    return V.T @ (w * fv)


def _onesided_from_values(fv, f_end, interval, k, side, quad) -> np.ndarray:
    """One-sided projection from samples at quadrature nodes + matched endpoint."""
    V, w, s = _scaled_tables(interval, k, quad)
    basis = _basis(k)
    c = np.zeros(k + 1)
    # k moment conditions against P_{k-1} pin the first k orthonormal coefficients
    c[:k] = V[:, :k].T @ (w * fv)
    # endpoint interpolation fixes the top coefficient
    e = (basis.at_left() if side == "plus" else basis.at_right()) * s
    c[k] = (f_end - c[:k] @ e[:k]) / e[k]
    return c


def project_onesided(f, interval, k, side: str, quad: Quadrature1D | None = None) -> np.ndarray:
    """One-sided projection P^+/P^-: k-1 moments plus one endpoint match.

    side "plus" matches f at the left endpoint a; side "minus" matches f at
    the right endpoint b.  k = 0 leaves no free moments and is rejected.
    """
    if k < 1:
        raise ValueError("one-sided projection needs k >= 1")
    if side not in ("plus", "minus"):
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    if quad is None:
        quad = _quad(k)
    a, b = interval
    fv = np.asarray(f(_map_to(interval, quad.nodes)), dtype=float)
    f_end = float(f(np.asarray(a if side == "plus" else b)))
    return _onesided_from_values(fv, f_end, interval, k, side, quad)


def face_project(g, face_interval, k, quad: Quadrature1D | None = None) -> np.ndarray:
    """Facewise L2 projection onto P_k of the face's 1D parameterization."""
    return l2_project_1d(g, face_interval, k, quad=quad)


def tensor_project(f, rect, k, kind: str = "P") -> np.ndarray:
    """Project a bivariate f onto Q_k of the cell rect = ((x0,x1),(y0,y1)).

    kind "P" is the plain tensor L2 projection; "PiMinus"/"PiPlus" compose the
    one-sided 1D projections in both directions (minus matches the right/top
    edges exactly, plus the left/bottom).  Returns coefficients c[m, n] for
    psi_m(x) psi_n(y).
    """
    (x0, x1), (y0, y1) = rect
    quad = _quad(k)
    if kind == "P":
        Vx, wx, _ = _scaled_tables((x0, x1), k, quad)
        Vy, wy, _ = _scaled_tables((y0, y1), k, quad)
        xs = _map_to((x0, x1), quad.nodes)
        ys = _map_to((y0, y1), quad.nodes)
        F = np.asarray(f(xs[:, None], ys[None, :]), dtype=float)
        return np.einsum("qm,q,qr,r,rn->mn", Vx, wx, F, wy, Vy)
    if kind not in ("PiMinus", "PiPlus"):
        raise ValueError(f"unknown projection kind {kind!r}")
    side = "minus" if kind == "PiMinus" else "plus"
    y_end = (y1 if side == "minus" else y0)
    ys = np.append(_map_to((y0, y1), quad.nodes), y_end)
    # one-sided in x along every y sample line, then one-sided in y per x-mode
    cx = np.empty((k + 1, ys.size))
    for j, y in enumerate(ys):
        cx[:, j] = project_onesided(lambda x: f(x, y), (x0, x1), k, side, quad=quad)
    c = np.empty((k + 1, k + 1))
    for m in range(k + 1):
        c[m, :] = _onesided_from_values(cx[m, :-1], cx[m, -1], (y0, y1), k, side, quad)
    return c


def _point_tables(rect, k, x, y, deriv=False):
    (x0, x1), (y0, y1) = rect
    hx, hy = x1 - x0, y1 - y0
    sx, sy = np.sqrt(2.0 / hx), np.sqrt(2.0 / hy)
    basis = _basis(k)
    xi = (2.0 * np.asarray(x, dtype=float) - x0 - x1) / hx
    eta = (2.0 * np.asarray(y, dtype=float) - y0 - y1) / hy
    Vx = basis.eval(np.atleast_1d(xi)) * sx
    Vy = basis.eval(np.atleast_1d(eta)) * sy
    if not deriv:
        return Vx, Vy
    Dx = basis.eval_deriv(np.atleast_1d(xi)) * sx * (2.0 / hx)
    Dy = basis.eval_deriv(np.atleast_1d(eta)) * sy * (2.0 / hy)
    return Vx, Vy, Dx, Dy


def eval_field(coeffs, rect, x, y) -> np.ndarray:
    """Evaluate a Q_k field (coeffs c[m,n]) at paired points (x, y)."""
    coeffs = np.asarray(coeffs)
    xb, yb = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    )
    Vx, Vy = _point_tables(rect, coeffs.shape[0] - 1, xb.ravel(), yb.ravel())
    out = np.einsum("mn,pm,pn->p", coeffs, Vx, Vy)
    return out.reshape(xb.shape) if xb.shape else float(out[0])


def eval_field_grad(coeffs, rect, x, y):
    """Gradient (d/dx, d/dy) of a Q_k field at paired points (x, y)."""
    coeffs = np.asarray(coeffs)
    xb, yb = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    )
    Vx, Vy, Dx, Dy = _point_tables(
        rect, coeffs.shape[0] - 1, xb.ravel(), yb.ravel(), deriv=True
    )
    gx = np.einsum("mn,pm,pn->p", coeffs, Dx, Vy)
    gy = np.einsum("mn,pm,pn->p", coeffs, Vx, Dy)
    if xb.shape:
        return gx.reshape(xb.shape), gy.reshape(xb.shape)
    return float(gx[0]), float(gy[0])


def restrict_to_face(coeffs, rect, side: str) -> np.ndarray:
    """Trace of a Q_k field on one cell face, at the face quadrature nodes.

    side is one of "L", "R", "B", "T".  The trace of a Q_k field is a P_k
    polynomial in the face coordinate; returned are its values at the n_q
    nodes of make_quadrature(k) mapped to the face interval.
    """
    coeffs = np.asarray(coeffs)
    k = coeffs.shape[0] - 1
    (x0, x1), (y0, y1) = rect
    quad = _quad(k)
    basis = _basis(k)
    sx, sy = np.sqrt(2.0 / (x1 - x0)), np.sqrt(2.0 / (y1 - y0))
    if side in ("L", "R"):
        edge = (basis.at_left() if side == "L" else basis.at_right()) * sx
        t = edge @ coeffs                       # P_k coefficients along y
        return (basis.eval(quad.nodes) * sy) @ t
    if side in ("B", "T"):
        edge = (basis.at_left() if side == "B" else basis.at_right()) * sy
        t = coeffs @ edge                       # P_k coefficients along x
        return (basis.eval(quad.nodes) * sx) @ t
    raise ValueError(f"side must be one of L/R/B/T, got {side!r}")
