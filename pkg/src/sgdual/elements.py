"""Reference bases and quadrature on the unit cell [0,1]^2.

The C1 space is the Bogner-Fox-Schmit bicubic rectangle: four Hermite
degrees of freedom per corner node (value, d/dx, d/dy, d2/dxdy), so the
global interpolant is C1 across cell edges and reproduces Q3 exactly.
The transport space is tensor-product Lagrange of degree k on an
equispaced nodal grid.  Quadrature is tensor Gauss-Legendre.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial.legendre import leggauss

__all__ = [
    "N_CELL_DOFS", "CELL_CORNERS", "DOF_KINDS",
    "C1Shapes", "c1_eval",
    "LagrangeShapes", "lagrange_nodes", "lagrange_eval",
    "QuadratureRule", "gauss_1d", "gauss_rule",
]

N_CELL_DOFS = 16  # 4 nodes x (value, dx, dy, dxy)

# corner coordinates in local node order: ll, lr, ur, ul (counterclockwise)
CELL_CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))

# per-node dof kinds as (a, b) derivative orders: value, d/dx, d/dy, d2/dxdy
DOF_KINDS = ((0, 0), (1, 0), (0, 1), (1, 1))


def _hermite_1d(t):
    """Cubic Hermite basis on [0,1] and its first two derivatives.

    Index order: value@0, slope@0, value@1, slope@1.  Shapes (..., 4).
    """
    t = np.asarray(t, dtype=float)
    t2 = t * t
    t3 = t2 * t
    val = np.stack(
        [2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2],
        axis=-1,
    )
    d1 = np.stack(
        [6 * t2 - 6 * t, 3 * t2 - 4 * t + 1, -6 * t2 + 6 * t, 3 * t2 - 2 * t],
        axis=-1,
    )
    d2 = np.stack(
        [12 * t - 6, 6 * t - 4, -12 * t + 6, 6 * t - 2],
        axis=-1,
    )
    return val, d1, d2


class C1Shapes(NamedTuple):
    """Shape data for the 16 cell dofs; every field is shaped (..., 16)."""

    val: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dxx: np.ndarray
    dxy: np.ndarray
    dyy: np.ndarray


def c1_eval(xi, eta, hx: float = 1.0, hy: float = 1.0) -> C1Shapes:
    """Bogner-Fox-Schmit shapes at local points, physically scaled.

    With the scaling, the coefficient multiplying each shape is the
    physical nodal value/derivative: derivative dofs carry hx, hy factors
    and all returned derivatives are with respect to physical coordinates.
    Dof order: nodes ll, lr, ur, ul; per node value, d/dx, d/dy, d2/dxdy.
    """
    X, X1, X2 = _hermite_1d(xi)
    Y, Y1, Y2 = _hermite_1d(eta)
    val, dx, dy, dxx, dxy, dyy = [], [], [], [], [], []
    for cx, cy in CELL_CORNERS:
        for a, b in DOF_KINDS:
            u, u1, u2 = (w[..., 2 * cx + a] for w in (X, X1, X2))
            v, v1, v2 = (w[..., 2 * cy + b] for w in (Y, Y1, Y2))
            s = hx**a * hy**b
            val.append(s * u * v)
            dx.append(s / hx * u1 * v)
            dy.append(s / hy * u * v1)
            dxx.append(s / hx**2 * u2 * v)
            dxy.append(s / (hx * hy) * u1 * v1)
            dyy.append(s / hy**2 * u * v2)
    return C1Shapes(*(np.stack(t, axis=-1) for t in (val, dx, dy, dxx, dxy, dyy)))


def lagrange_nodes(k: int) -> np.ndarray:
    """Equispaced 1-D nodal points for degree k (k in {1, 2, 3})."""
    if k not in (1, 2, 3):
        raise ValueError(f"unsupported Lagrange degree {k}; need k in {{1,2,3}}")
    return np.linspace(0.0, 1.0, k + 1)


def _lagrange_1d(k, t):
    """Nodal Lagrange basis values and derivatives at t; shapes (..., k+1)."""
    nodes = lagrange_nodes(k)
    t = np.asarray(t, dtype=float)
    val = np.empty(t.shape + (k + 1,))
    der = np.empty_like(val)
    for i in range(k + 1):
        li = np.ones_like(t)
        di = np.zeros_like(t)
        for j in range(k + 1):
            if j == i:
                continue
            fac = (t - nodes[j]) / (nodes[i] - nodes[j])
            di = di * fac + li / (nodes[i] - nodes[j])
            li = li * fac
        val[..., i] = li
        der[..., i] = di
    return val, der


class LagrangeShapes(NamedTuple):
    """Tensor Lagrange shape data; every field is shaped (..., (k+1)^2)."""

    val: np.ndarray
    dx: np.ndarray
    dy: np.ndarray


def lagrange_eval(k: int, xi, eta, hx: float = 1.0, hy: float = 1.0) -> LagrangeShapes:
    """Tensor nodal basis on a cell; local index j*(k+1)+i, row-major from ll.

    Gradients are physical when hx, hy are the cell edges.
    """
    u, u1 = _lagrange_1d(k, xi)
    v, v1 = _lagrange_1d(k, eta)
    m = (k + 1) ** 2

    def tp(a, b):  # a varies fastest (xi index), b slowest (eta index)
        return (b[..., :, None] * a[..., None, :]).reshape(a.shape[:-1] + (m,))

    return LagrangeShapes(tp(u, v), tp(u1, v) / hx, tp(u, v1) / hy)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on [0,1]^2; weights sum to one."""

    points: np.ndarray  # (n*n, 2)
    weights: np.ndarray  # (n*n,)
    n: int


def gauss_1d(n: int):
    """n-point Gauss-Legendre rule on [0,1]; exact to degree 2n-1."""
    if not 1 <= n <= 10:
        raise ValueError(f"gauss rule size out of range: {n}")
    p, w = leggauss(n)
    return (p + 1.0) / 2.0, w / 2.0


def gauss_rule(n: int) -> QuadratureRule:
    """Tensor Gauss rule with n points per axis."""
    p, w = gauss_1d(n)
    X, Y = np.meshgrid(p, p)  # Y index slow, matching lagrange_eval ordering
    return QuadratureRule(
        np.column_stack([X.ravel(), Y.ravel()]),
        np.outer(w, w).ravel(),
        n,
    )
