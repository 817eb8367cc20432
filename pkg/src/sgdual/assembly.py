"""Global operator assembly for the coupled Monge-Ampere/transport scheme.

On a uniform mesh every cell sees the same physically-scaled shape
tables, so linear operators reduce to one 16x16 local matrix tiled over
cells, while state-dependent operators (determinant load, cofactor
stiffness) are batched over cells with einsum.  Triplets are emitted in
canonical cell order, fixing the floating-point summation order and
making assembly deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .elements import c1_eval, gauss_1d, gauss_rule, lagrange_eval
from .fields import (
    C1Field,
    LagrangeField,
    c1_cell_dofs,
    c1_constrained_dofs,
    w_cell_dofs,
)
from .mesh import Mesh

__all__ = [
    "quad_tables", "quad_points",
    "assemble_biharmonic", "assemble_stiffness", "assemble_mass_c1",
    "assemble_mass_w", "mean_vector", "volume_load_c1", "volume_load_w",
    "hessians_at_quad", "CofactorEval", "cofactor_at_quad",
    "assemble_det_functional", "assemble_cofactor_stiffness", "assemble_B",
    "assemble_boundary_flux",
    "NeumannData", "apply_neumann_bc", "restrict",
]

SIDES = ("bottom", "right", "top", "left")


# ---------------------------------------------------------------------------
# cached per-mesh quadrature workspaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _C1Tables:
    rule: object
    w: np.ndarray        # physical weights (nq,), include hx*hy
    c1: object           # C1Shapes at the rule points, physical scaling
    lap: np.ndarray      # dxx + dyy, (nq, 16)


def quad_tables(mesh: Mesh, n: int = 4) -> _C1Tables:
    key = ("c1_tables", n)
    if key not in mesh._cache:
        rule = gauss_rule(n)
        sh = c1_eval(rule.points[:, 0], rule.points[:, 1], mesh.hx, mesh.hy)
        w = rule.weights * mesh.hx * mesh.hy
        mesh._cache[key] = _C1Tables(rule, w, sh, sh.dxx + sh.dyy)
    return mesh._cache[key]


def w_quad_tables(mesh: Mesh, k: int, n: int = 4):
    key = ("w_tables", k, n)
    if key not in mesh._cache:
        rule = gauss_rule(n)
        mesh._cache[key] = lagrange_eval(
            k, rule.points[:, 0], rule.points[:, 1], mesh.hx, mesh.hy
        )
    return mesh._cache[key]


def quad_points(mesh: Mesh, n: int = 4):
    """Physical quadrature points, (n_cells, nq) per coordinate."""
    key = ("quad_points", n)
    if key not in mesh._cache:
        rule = gauss_rule(n)
        org = mesh.cell_origins()
        xq = org[:, 0:1] + rule.points[:, 0][None, :] * mesh.hx
        yq = org[:, 1:2] + rule.points[:, 1][None, :] * mesh.hy
        mesh._cache[key] = (xq, yq)
    return mesh._cache[key]


def _scatter_matrix(cd, local, ndof: int) -> sp.csr_matrix:
    """Assemble (n_cells, m, m) or shared (m, m) local blocks into CSR."""
    nc, m = cd.shape
    rows = np.broadcast_to(cd[:, :, None], (nc, m, m)).ravel()
    cols = np.broadcast_to(cd[:, None, :], (nc, m, m)).ravel()
    if local.ndim == 2:
        vals = np.broadcast_to(local[None, :, :], (nc, m, m)).ravel()
    else:
        vals = local.ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()


def _scatter_vector(out, cd, local):
    if local.ndim == 1:
        local = np.broadcast_to(local[None, :], cd.shape)
    np.add.at(out, cd.ravel(), local.ravel())
    return out


# ---------------------------------------------------------------------------
# linear operators (state independent)
# ---------------------------------------------------------------------------

def _shared_local(mesh, local):
    return _scatter_matrix(c1_cell_dofs(mesh), local, 4 * mesh.n_nodes)


def assemble_biharmonic(mesh: Mesh, n: int = 4) -> sp.csr_matrix:
    """Gram matrix of the Laplacians, (lap phi_i, lap phi_j).

    The regularization parameter is applied by the caller; global linear
    fields lie in the kernel.
    """
    key = ("A_biharmonic", n)
    if key not in mesh._cache:
        t = quad_tables(mesh, n)
        loc = np.einsum("q,qi,qj->ij", t.w, t.lap, t.lap)
        mesh._cache[key] = _shared_local(mesh, loc)
    return mesh._cache[key]


def assemble_stiffness(mesh: Mesh, n: int = 4) -> sp.csr_matrix:
    """Gradient Gram matrix (grad phi_i, grad phi_j) on the C1 space."""
    key = ("A_stiffness", n)
    if key not in mesh._cache:
        t = quad_tables(mesh, n)
        loc = np.einsum("q,qi,qj->ij", t.w, t.c1.dx, t.c1.dx)
        loc += np.einsum("q,qi,qj->ij", t.w, t.c1.dy, t.c1.dy)
        mesh._cache[key] = _shared_local(mesh, loc)
    return mesh._cache[key]


def assemble_mass_c1(mesh: Mesh, n: int = 4) -> sp.csr_matrix:
    key = ("A_mass_c1", n)
    if key not in mesh._cache:
        t = quad_tables(mesh, n)
        loc = np.einsum("q,qi,qj->ij", t.w, t.c1.val, t.c1.val)
        mesh._cache[key] = _shared_local(mesh, loc)
    return mesh._cache[key]


def assemble_mass_w(mesh: Mesh, k: int, n: int = 4) -> sp.csr_matrix:
    """SPD Gram matrix of the degree-k Lagrange space."""
    key = ("A_mass_w", k, n)
    if key not in mesh._cache:
        t = quad_tables(mesh, n)
        sh = w_quad_tables(mesh, k, n)
        loc = np.einsum("q,qi,qj->ij", t.w, sh.val, sh.val)
        nw = (k * mesh.nx + 1) * (k * mesh.ny + 1)
        mesh._cache[key] = _scatter_matrix(w_cell_dofs(mesh, k), loc, nw)
    return mesh._cache[key]


def mean_vector(mesh: Mesh, n: int = 4) -> np.ndarray:
    """Load vector of the constant one: entry i is (phi_i, 1)."""
    key = ("c1_mean_vec", n)
    if key not in mesh._cache:
        t = quad_tables(mesh, n)
        loc = t.w @ t.c1.val
        out = np.zeros(4 * mesh.n_nodes)
        mesh._cache[key] = _scatter_vector(out, c1_cell_dofs(mesh), loc)
    return mesh._cache[key]


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------

def _values_at_quad(mesh, f, n):
    """Evaluate a source (callable or field) at quadrature points, (nc, nq)."""
    if isinstance(f, LagrangeField):
        sh = w_quad_tables(mesh, f.degree, n)
        return np.einsum("qj,cj->cq", sh.val, f.dofs[w_cell_dofs(mesh, f.degree)])
    if isinstance(f, C1Field):
        t = quad_tables(mesh, n)
        return np.einsum("qi,ci->cq", t.c1.val, f.dofs[c1_cell_dofs(mesh)])
    xq, yq = quad_points(mesh, n)
    return np.broadcast_to(np.asarray(f(xq, yq), dtype=float), xq.shape)


def volume_load_c1(mesh: Mesh, f, n: int = 4) -> np.ndarray:
    """(f, phi_i) over the C1 test space; f a closure or a field."""
    t = quad_tables(mesh, n)
    fq = _values_at_quad(mesh, f, n)
    F = np.einsum("cq,q,qi->ci", fq, t.w, t.c1.val)
    return _scatter_vector(np.zeros(4 * mesh.n_nodes), c1_cell_dofs(mesh), F)


def volume_load_w(mesh: Mesh, k: int, f, n: int = 4) -> np.ndarray:
    """(f, w_i) over the degree-k Lagrange test space."""
    t = quad_tables(mesh, n)
    sh = w_quad_tables(mesh, k, n)
    fq = _values_at_quad(mesh, f, n)
    F = np.einsum("cq,q,qj->cj", fq, t.w, sh.val)
    nw = (k * mesh.nx + 1) * (k * mesh.ny + 1)
    return _scatter_vector(np.zeros(nw), w_cell_dofs(mesh, k), F)


# ---------------------------------------------------------------------------
# state-dependent operators
# ---------------------------------------------------------------------------

def hessians_at_quad(mesh: Mesh, psi: C1Field, n: int = 4):
    """Second derivatives of psi at quadrature points, each (nc, nq)."""
    t = quad_tables(mesh, n)
    cd = psi.dofs[c1_cell_dofs(mesh)]
    hxx = np.einsum("qi,ci->cq", t.c1.dxx, cd)
    hxy = np.einsum("qi,ci->cq", t.c1.dxy, cd)
    hyy = np.einsum("qi,ci->cq", t.c1.dyy, cd)
    return hxx, hxy, hyy


@dataclass(frozen=True)
class CofactorEval:
    """Cofactor matrix of a Hessian field at quadrature points.

    In 2-D, cof(D^2 psi) = [[psi_yy, -psi_xy], [-psi_xy, psi_xx]]; it is
    symmetric, its trace is the Laplacian and its determinant equals
    det(D^2 psi).
    """

    p11: np.ndarray
    p12: np.ndarray
    p22: np.ndarray

    @classmethod
    def from_hessian(cls, hxx, hxy, hyy) -> "CofactorEval":
        return cls(p11=hyy, p12=-hxy, p22=hxx)

    def trace(self) -> np.ndarray:
        return self.p11 + self.p22

    def det(self) -> np.ndarray:
        return self.p11 * self.p22 - self.p12 * self.p12


def cofactor_at_quad(mesh: Mesh, psi: C1Field, n: int = 4) -> CofactorEval:
    return CofactorEval.from_hessian(*hessians_at_quad(mesh, psi, n))


def det_at_quad(mesh: Mesh, psi: C1Field, n: int = 4) -> np.ndarray:
    hxx, hxy, hyy = hessians_at_quad(mesh, psi, n)
    return hxx * hyy - hxy * hxy


def assemble_det_functional(mesh: Mesh, psi: C1Field, n: int = 4,
                            det: np.ndarray | None = None) -> np.ndarray:
    """(det(D^2 psi), phi_i) over the C1 test space.

    det(D^2 psi_h) has per-axis degree <= 4, so the default n=4 rule is
    exact for the product with a bicubic test function.
    """
    t = quad_tables(mesh, n)
    if det is None:
        det = det_at_quad(mesh, psi, n)
    F = np.einsum("cq,q,qi->ci", det, t.w, t.c1.val)
    return _scatter_vector(np.zeros(4 * mesh.n_nodes), c1_cell_dofs(mesh), F)


def _grad_outer_tables(mesh: Mesh, n: int):
    key = ("grad_outer", n)
    if key not in mesh._cache:
        t = quad_tables(mesh, n)
        oxx = np.einsum("qi,qj->qij", t.c1.dx, t.c1.dx)
        oyy = np.einsum("qi,qj->qij", t.c1.dy, t.c1.dy)
        oxy = np.einsum("qi,qj->qij", t.c1.dx, t.c1.dy)
        oxy = oxy + oxy.transpose(0, 2, 1)
        mesh._cache[key] = (oxx, oxy, oyy)
    return mesh._cache[key]


def assemble_cofactor_stiffness(mesh: Mesh, psi: C1Field, n: int = 4,
                                cof: CofactorEval | None = None) -> sp.csr_matrix:
    """(cof(D^2 psi) grad phi_i, grad phi_j): the second-order part of the
    linearized operator, symmetric because the cofactor matrix is."""
    t = quad_tables(mesh, n)
    if cof is None:
        cof = cofactor_at_quad(mesh, psi, n)
    oxx, oxy, oyy = _grad_outer_tables(mesh, n)
    w = t.w[None, :]
    loc = np.einsum("cq,qij->cij", w * cof.p11, oxx)
    loc += np.einsum("cq,qij->cij", w * cof.p12, oxy)
    loc += np.einsum("cq,qij->cij", w * cof.p22, oyy)
    return _scatter_matrix(c1_cell_dofs(mesh), loc, 4 * mesh.n_nodes)


def assemble_B(mesh: Mesh, psi: C1Field, eps: float, n: int = 4,
               cof: CofactorEval | None = None) -> sp.csr_matrix:
    """Linearized operator eps*(lap, lap) + (cof(D^2 psi) grad, grad)."""
    return eps * assemble_biharmonic(mesh, n) + assemble_cofactor_stiffness(
        mesh, psi, n, cof=cof
    )


# ---------------------------------------------------------------------------
# boundary terms and Neumann constraints
# ---------------------------------------------------------------------------

def _edge_layout(mesh: Mesh, side: str):
    """Edge-cell data for one domain side.

    Returns (points builder, tangential cell size, node pair indices,
    local dof kinds): the boundary trace of a C1 field on a side is the
    1-D Hermite cubic in the (value, tangential-derivative) dofs of the
    edge nodes; normal-derivative dofs have zero trace.
    """
    dom, nx, ny = mesh.domain, mesh.nx, mesh.ny
    if side in ("bottom", "top"):
        j = 0 if side == "bottom" else ny
        ci = np.arange(nx)
        n_a = mesh.node_index(ci, j)
        n_b = mesh.node_index(ci + 1, j)
        yconst = dom.ymin if side == "bottom" else dom.ymax

        def pts(s):
            x = dom.xmin + (ci[:, None] + s[None, :]) * mesh.hx
            return x, np.full_like(x, yconst)

        return pts, mesh.hx, (n_a, n_b), 1  # tangential derivative is d/dx
    if side in ("left", "right"):
        i = 0 if side == "left" else nx
        cj = np.arange(ny)
        n_a = mesh.node_index(i, cj)
        n_b = mesh.node_index(i, cj + 1)
        xconst = dom.xmin if side == "left" else dom.xmax

        def pts(s):
            y = dom.ymin + (cj[:, None] + s[None, :]) * mesh.hy
            return np.full_like(y, xconst), y

        return pts, mesh.hy, (n_a, n_b), 2  # tangential derivative is d/dy
    raise ValueError(f"unknown side {side!r}")


def assemble_boundary_flux(mesh: Mesh, data: Callable, n1d: int = 4,
                           sides=SIDES) -> np.ndarray:
    """Boundary load: entry i is the line integral of data * phi_i over
    the selected sides."""
    from .elements import _hermite_1d

    s, w = gauss_1d(n1d)
    H, _, _ = _hermite_1d(s)  # (n1d, 4): value@0, slope@0, value@1, slope@1
    out = np.zeros(4 * mesh.n_nodes)
    for side in sides:
        pts, ht, (n_a, n_b), tang = _edge_layout(mesh, side)
        x, y = pts(s)
        vals = np.broadcast_to(np.asarray(data(x, y), dtype=float), x.shape)
        # trace shapes: [val_a, ht*slope_a, val_b, ht*slope_b]
        tr = H * np.array([1.0, ht, 1.0, ht])[None, :]
        F = np.einsum("eq,q,qi->ei", vals, w * ht, tr)
        dofs = np.column_stack(
            [4 * n_a, 4 * n_a + tang, 4 * n_b, 4 * n_b + tang]
        )
        _scatter_vector(out, dofs, F)
    return out


@dataclass(frozen=True)
class NeumannData:
    """Boundary data pinning the Hermite normal-derivative dofs.

    gx and gy are boundary traces of the first derivatives of the
    represented potential; gxy is the mixed second derivative (the
    tangential derivative of the normal derivative along each edge).
    Constraining these dofs fixes d(psi)/dnu on the whole boundary.
    """

    gx: Callable
    gy: Callable
    gxy: Callable

    @staticmethod
    def zero() -> "NeumannData":
        z = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))
        return NeumannData(z, z, z)


def constrained_values(mesh: Mesh, data: NeumannData):
    """Values for the constrained dofs, aligned with c1_constrained_dofs."""
    idx = c1_constrained_dofs(mesh)
    nodes = idx // 4
    kind = idx % 4
    xy = mesh.node_coords()[nodes]
    x, y = xy[:, 0], xy[:, 1]
    vals = np.empty(idx.size)
    for t, g in ((1, data.gx), (2, data.gy), (3, data.gxy)):
        m = kind == t
        if m.any():
            vals[m] = np.broadcast_to(np.asarray(g(x[m], y[m]), dtype=float),
                                      (m.sum(),))
    return idx, vals


def apply_neumann_bc(psi: C1Field, data: NeumannData) -> C1Field:
    """Set the Neumann-constrained dofs of psi in place (and return it)."""
    idx, vals = constrained_values(psi.mesh, data)
    psi.dofs[idx] = vals
    return psi


def restrict(A: sp.csr_matrix, idx: np.ndarray) -> sp.csr_matrix:
    """Symmetric restriction of a sparse matrix to an index set."""
    return A[idx][:, idx]
