"""Linear solvers for the assembled systems.

SPD systems go through Jacobi-preconditioned conjugate gradients; general
systems are equilibrated and factorized with SuperLU.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import SolverError
from .assembly import SparseSystem

RESIDUAL_TOL = 1e-10


def pcg(A: sp.csr_matrix, b: np.ndarray, rtol: float = 1e-13, max_iter: int | None = None,
        x0: np.ndarray | None = None) -> np.ndarray:
    """Conjugate gradients with diagonal preconditioning."""
    n = b.shape[0]
    max_iter = max_iter if max_iter is not None else max(10 * n, 100)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has non-positive diagonal entries; not SPD", residual=float("nan"))
    inv_d = 1.0 / diag
    x = np.zeros(n) if x0 is None else x0.astype(float).copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        if np.linalg.norm(r) <= rtol * bnorm:
            return x
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("conjugate gradients hit a non-positive curvature direction",
                              residual=float(np.linalg.norm(r) / bnorm))
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(b - A @ x) / bnorm)
    if res <= rtol:
        return x
    raise SolverError(f"conjugate gradients did not converge in {max_iter} iterations", residual=res)


def equilibration(A: sp.csr_matrix) -> np.ndarray:
    """Symmetric diagonal scaling d with D^-1 A D^-1 having unit diagonal."""
    d = np.sqrt(np.abs(A.diagonal()))
    d[d == 0] = 1.0
    return d


def direct(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    """Sparse LU after symmetric diagonal scaling (fields differ by many orders of magnitude)."""
    d = equilibration(A)
    s = sp.diags(1.0 / d)
    As = (s @ A @ s).tocsc()
    try:
        lu = spla.splu(As)
    except RuntimeError as exc:
        raise SolverError(f"sparse LU failed: {exc}", residual=float("inf")) from exc
    y = lu.solve(b / d)
    x = y / d
    # one step of iterative refinement
    r = b - A @ x
    x += lu.solve(r / d) / d
    return x


def relative_residual(A, b, x) -> float:
    bn = np.linalg.norm(b)
    rn = np.linalg.norm(b - A @ x)
    return float(rn / bn) if bn > 0 else float(rn)


def scaled_residual(A, b, x) -> float:
    """Relative residual of the equilibrated system.

    The blocks of a coupled system carry different units, so the plain
    residual is dominated by whichever block has the largest right-hand side;
    equilibrating first measures every block on the same footing.
    """
    d = equilibration(A)
    r = (b - A @ x) / d
    bn = np.linalg.norm(b / d)
    return float(np.linalg.norm(r) / bn) if bn > 0 else float(np.linalg.norm(r))


def system_residual(system: SparseSystem, x_free: np.ndarray) -> float:
    """The residual measure ``solve_reduced`` enforces."""
    f = relative_residual if system.symmetric else scaled_residual
    return f(system.matrix, system.rhs, x_free)


def solve_reduced(system: SparseSystem) -> np.ndarray:
    """Solve for the free dofs only."""
    A, b = system.matrix, system.rhs
    if b.shape[0] == 0:
        return np.zeros(0)
    x = pcg(A, b) if system.symmetric else direct(A, b)
    res = system_residual(system, x)
    if not np.isfinite(res) or res >= RESIDUAL_TOL:
        raise SolverError(f"relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}", residual=res)
    return x


def solve_sparse(system: SparseSystem) -> np.ndarray:
    """Solve and return the full solution vector including prescribed dofs."""
    return system.dofmap.expand(solve_reduced(system))
