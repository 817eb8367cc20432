"""Sparse matrix storage and direct solvers, including bordered systems.

Thin layer over scipy.sparse: CSR storage assembled from triplets with
summed duplicates, LU factorization with partial pivoting for square
solves, and a constraint-augmented (bordered) solve used to enforce the
prescribed mean of the potential.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["SparseMatrix", "BorderedSystem", "SolveError", "KernelBorderedLU",
           "from_triplets", "solve", "solve_bordered", "write_matrix_market"]


class SolveError(RuntimeError):
    """Raised when a factorization or solve breaks down."""


class SparseMatrix:
    """Square CSR matrix with strictly increasing column indices per row."""

    def __init__(self, csr: sp.csr_matrix):
        csr = sp.csr_matrix(csr)
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr

    @property
    def n(self) -> int:
        return self._csr.shape[0]

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self._csr @ v

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()


def from_triplets(n: int, entries) -> SparseMatrix:
    """Build an n-by-n matrix from (row, col, value) triplets.

    Duplicate entries are summed in input order; indices out of range are
    rejected.
    """
    entries = list(entries)
    if entries:
        rows, cols, vals = (np.asarray(t) for t in zip(*entries))
    else:
        rows = cols = np.zeros(0, dtype=int)
        vals = np.zeros(0)
    if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
        raise IndexError(f"triplet index out of range for n={n}")
    return SparseMatrix(
        sp.coo_matrix((vals.astype(float), (rows, cols)), shape=(n, n)).tocsr()
    )


def _as_csc(A):
    if isinstance(A, SparseMatrix):
        A = A.csr
    return sp.csc_matrix(A)


def _lu(A_csc, **kwargs):
    try:
        return spla.splu(A_csc, **kwargs)
    except RuntimeError as exc:  # SuperLU reports the zero pivot location
        raise SolveError(f"sparse LU breakdown: {exc}") from exc


def solve(A, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve A x = b via LU with partial pivoting."""
    A_csc = _as_csc(A)
    if A_csc.shape[0] != A_csc.shape[1]:
        raise SolveError(f"matrix is not square: {A_csc.shape}")
    x = _lu(A_csc).solve(np.asarray(b, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SolveError("solve produced non-finite entries (singular system?)")
    return x


@dataclass
class BorderedSystem:
    """[[A, c], [c^T, 0]] (x, lam) = (b, gamma): a one-constraint saddle system.

    A must be nonsingular on the hyperplane {v : c^T v = 0}; the scalar
    multiplier absorbs the component of b not attainable under the
    constraint (for our Newton systems, the constant-test residual).
    """

    A: object  # SparseMatrix or scipy sparse
    c: np.ndarray
    b: np.ndarray
    gamma: float = 0.0

    def matrix(self) -> sp.csc_matrix:
        A = self.A.csr if isinstance(self.A, SparseMatrix) else self.A
        n = A.shape[0]
        col = sp.csc_matrix(self.c.reshape(n, 1))
        return sp.bmat([[A, col], [col.T, None]], format="csc")


def solve_bordered(system: BorderedSystem, kernel: np.ndarray | None = None,
                   pin: int | None = None):
    """Solve the bordered system; returns (x, lam).

    Without ``kernel``, the composed (n+1)-by-(n+1) matrix is factored
    directly; the constraint column is dense, so this is only suitable at
    moderate sizes.  When A is symmetric with the known one-dimensional
    kernel ``kernel`` (e.g. the constants of a pure-Neumann operator),
    pass it to use a fully sparse path: the multiplier is computed from
    the kernel, the right side deflated, one dof with a nonzero kernel
    component pinned, and the constraint restored by a kernel shift.
    """
    if kernel is None:
        M = system.matrix()
        rhs = np.concatenate([system.b, [system.gamma]])
        sol = _lu(M).solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SolveError(
                "bordered solve produced non-finite entries (rank deficiency?)"
            )
        return sol[:-1], float(sol[-1])
    return _solve_bordered_kernel(system, kernel, pin)


def _solve_bordered_kernel(system: BorderedSystem, e: np.ndarray, pin: int | None):
    if pin is None:
        pin = int(np.argmax(np.abs(e)))
    lu = KernelBorderedLU(system.A, system.c, e, pin)
    return lu.solve(np.asarray(system.b, dtype=float), system.gamma)


class KernelBorderedLU:
    """Reusable factorization for bordered systems with a known kernel.

    Factors the pinned matrix once and solves [[A, c], [c^T, 0]] for many
    right-hand sides.  The factorization may also be applied with A
    assembled at a nearby state (quasi-Newton reuse); the caller is
    responsible for judging the resulting step quality.
    """

    def __init__(self, A, c: np.ndarray, kernel: np.ndarray, pin: int,
                 symmetric: bool = False):
        A = A.csr if isinstance(A, SparseMatrix) else A
        self.c = np.asarray(c, dtype=float)
        self.e = np.asarray(kernel, dtype=float)
        self.ce = float(self.c @ self.e)
        if abs(self.ce) < 1e-300:
            raise SolveError("constraint vector is orthogonal to the kernel")
        keep = np.ones(self.e.size, dtype=bool)
        keep[pin] = False
        self.keep = np.flatnonzero(keep)
        Ap = sp.csc_matrix(A[self.keep][:, self.keep])
        if symmetric:
            # symmetric-mode ordering: several-fold less fill than COLAMD on
            # these structurally symmetric operators
            self.lu = _lu(Ap, permc_spec="MMD_AT_PLUS_A",
                          options=dict(SymmetricMode=True, DiagPivotThresh=1e-3))
        else:
            self.lu = _lu(Ap)

    def solve(self, b: np.ndarray, gamma: float = 0.0):
        lam = (self.e @ b) / self.ce
        rhs = b - lam * self.c
        x = np.zeros(self.e.size)
        x[self.keep] = self.lu.solve(rhs[self.keep])
        if not np.all(np.isfinite(x)):
            raise SolveError("pinned solve produced non-finite entries")
        x += ((gamma - self.c @ x) / self.ce) * self.e
        return x, float(lam)


def write_matrix_market(A, path) -> None:
    """Dump a matrix in MatrixMarket coordinate text format (debug aid)."""
    from scipy.io import mmwrite

    mmwrite(str(path), A.csr if isinstance(A, SparseMatrix) else A)
