"""
Sparse symmetric solves and the Picard controller

Pure-Neumann and periodic systems are singular; their null space is passed
explicitly and projected out of the right-hand side and the solution.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from ionhom.core.errors import (
    IncompatibleRHSError,
    NotConvergedError,
    PicardDivergenceError,
    SingularSystemError,
)

CG_ITERATION_FACTOR = 10
DEFAULT_MAX_INCOMPATIBILITY = 1e-8


@dataclass
class SparseSystem:
    """
    Matrix, right-hand side and optional null-space basis

    null_space rows are orthonormalized on construction.
    """
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    null_space: Optional[np.ndarray] = None
    symmetric: bool = True

    def __post_init__(self):
        self.matrix = sparse.csr_matrix(self.matrix)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.null_space is not None:
            self.null_space = orthonormalize(self.null_space)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        """Remove the null-space component of x"""
        if self.null_space is None or self.null_space.shape[0] == 0:
            return x
        return x - self.null_space.T @ (self.null_space @ x)


def orthonormalize(basis: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the rows of basis"""
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if basis.shape[0] == 0:
        return basis
    q, r = np.linalg.qr(basis.T)
    keep = np.abs(np.diag(r)) > 1e-14 * max(1.0, np.abs(r).max())
    return q[:, keep].T


def graph_laplacian(size: int, lower: np.ndarray, upper: np.ndarray, weights: np.ndarray) -> sparse.csr_matrix:
    """
    Weighted graph Laplacian of face-connected cells

    Args:
        size: Number of cells
        lower, upper: Cell indices on the two sides of each face
        weights: Face transmissibilities

    Returns:
        Symmetric matrix with rows summing to zero
    """
    weights = np.broadcast_to(np.asarray(weights, dtype=float), lower.shape)
    rows = np.concatenate([lower, upper, lower, upper])
    cols = np.concatenate([lower, upper, upper, lower])
    vals = np.concatenate([weights, weights, -weights, -weights])
    A = sparse.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    A.sum_duplicates()
    return A


def face_incidence(size: int, lower: np.ndarray, upper: np.ndarray) -> sparse.csr_matrix:
    """(cells x faces) matrix with +1 at each face's lower cell and -1 at its upper cell"""
    count = lower.size
    faces = np.arange(count)
    return sparse.coo_matrix(
        (np.concatenate([np.ones(count), -np.ones(count)]), (np.concatenate([lower, upper]), np.concatenate([faces, faces]))),
        shape=(size, count),
    ).tocsr()


def component_null_space(matrix: sparse.spmatrix) -> Tuple[int, np.ndarray]:
    """
    Indicator vectors of the connected components of a graph Laplacian

    Args:
        matrix: Symmetric matrix whose off-diagonal pattern is the graph

    Returns:
        (component count, (count, n) array of 0/1 indicator rows)
    """
    pattern = sparse.csr_matrix(matrix, copy=True)
    pattern.setdiag(0.0)
    pattern.eliminate_zeros()
    count, labels = csgraph.connected_components(pattern, directed=False)
    basis = np.zeros((count, matrix.shape[0]))
    basis[labels, np.arange(matrix.shape[0])] = 1.0
    return int(count), basis


def solve_spd(
    system: SparseSystem,
    tol: float,
    method: str = "cg",
    x0: Optional[np.ndarray] = None,
    max_incompatibility: float = DEFAULT_MAX_INCOMPATIBILITY,
) -> np.ndarray:
    """
    Solve a symmetric positive (semi)definite system

    Args:
        system: Matrix, right-hand side and null space
        tol: Relative residual tolerance
        method: "cg" for Jacobi-preconditioned conjugate gradients, "direct" for LU
        x0: Optional initial guess for CG
        max_incompatibility: Largest fraction of ||b|| the null-space projection may remove

    Returns:
        Solution orthogonal to the declared null space

    Raises:
        IncompatibleRHSError: if the right-hand side has a large null-space component
        NotConvergedError: if CG hits 10*n iterations
    """
    b = system.rhs
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(system.size)

    b_proj = system.project(b)
    removed = float(np.linalg.norm(b - b_proj)) / b_norm
    if removed > max_incompatibility:
        raise IncompatibleRHSError(
            f"projection removed {removed:.3e} of the right-hand side norm",
            {"removed_fraction": removed, "limit": max_incompatibility},
        )
    if float(np.linalg.norm(b_proj)) == 0.0:
        return np.zeros(system.size)

    if method == "direct":
        x = _solve_direct(system, b_proj)
    elif method == "cg":
        x = _solve_cg(system, b_proj, tol, x0)
    else:
        raise ValueError(f"unknown linear solver '{method}'")
    return system.project(x)


def _solve_cg(system: SparseSystem, b: np.ndarray, tol: float, x0: Optional[np.ndarray]) -> np.ndarray:
    A = system.matrix
    n = system.size
    max_iter = CG_ITERATION_FACTOR * n
    diag = A.diagonal()
    inv_diag = 1.0 / np.where(diag != 0.0, diag, 1.0)
    b_norm = float(np.linalg.norm(b))
    target = tol * b_norm

    x = np.zeros(n) if x0 is None else system.project(np.asarray(x0, dtype=float).copy())
    iterations = 0
    # restart once from the current iterate if the recurrence residual drifts from the true one
    for _ in range(2):
        r = b - A @ x
        r = system.project(r)
        if float(np.linalg.norm(r)) <= target:
            return x
        z = inv_diag * r
        z = system.project(z)
        p = z.copy()
        rz = float(r @ z)
        while iterations < max_iter:
            Ap = A @ p
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            iterations += 1
            if float(np.linalg.norm(r)) <= target:
                break
            z = system.project(inv_diag * r)
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        true_residual = float(np.linalg.norm(system.project(b - A @ x)))
        if true_residual <= target:
            logger.debug(f"CG converged in {iterations} iterations, residual {true_residual / b_norm:.2e}")
            return x

    residual = float(np.linalg.norm(system.project(b - A @ x))) / b_norm
    logger.error(f"CG did not converge: {iterations} iterations, relative residual {residual:.3e}")
    raise NotConvergedError(
        f"conjugate gradients did not reach {tol:.1e} within {max_iter} iterations",
        {"iterations": iterations, "relative_residual": residual, "tol": tol},
    )


def _solve_direct(system: SparseSystem, b: np.ndarray) -> np.ndarray:
    """LU of the matrix bordered by the null space, [[A, N^T], [N, 0]]"""
    A = system.matrix
    N = system.null_space
    if N is None or N.shape[0] == 0:
        return factorize(A).solve(b)
    k = N.shape[0]
    Nt = sparse.csr_matrix(N.T)
    bordered = sparse.bmat([[A, Nt], [Nt.T, None]], format="csc")
    rhs = np.concatenate([b, np.zeros(k)])
    return factorize(bordered).solve(rhs)[: system.size]


class FactorizedSystem:
    """Sparse LU of a constant matrix, reused across right-hand sides"""

    def __init__(self, matrix: sparse.spmatrix):
        self.shape = matrix.shape
        try:
            self._lu = splu(sparse.csc_matrix(matrix))
        except RuntimeError as e:
            logger.error(f"Sparse LU failed: {e}")
            raise SingularSystemError(f"matrix is singular: {e}", {"shape": list(matrix.shape)}) from e

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self._lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("LU solve produced non-finite values", {"shape": list(self.shape)})
        return x


def factorize(matrix: sparse.spmatrix) -> FactorizedSystem:
    return FactorizedSystem(matrix)


class PicardSettings(BaseModel):
    """Fixed-point iteration controls"""
    model_config = ConfigDict(frozen=True)

    tol: float = Field(1e-10, gt=0.0, description="Relative-change threshold")
    max_iter: int = Field(50, ge=1, description="Iteration cap")
    damping: float = Field(1.0, gt=0.0, le=1.0, description="Damping factor")


@dataclass
class PicardResult:
    x: np.ndarray
    iterations: int
    change: float
    history: list = field(default_factory=list)


def relative_change(x_old: np.ndarray, x_new: np.ndarray) -> float:
    """max_k |x_new - x_old| / max(|x_new|, 1)"""
    if x_new.size == 0:
        return 0.0
    return float(np.max(np.abs(x_new - x_old) / np.maximum(np.abs(x_new), 1.0)))


def picard_loop(step: Callable[[np.ndarray], np.ndarray], x0: np.ndarray, settings: PicardSettings) -> PicardResult:
    """
    Damped fixed-point iteration x <- (1 - d) x + d step(x)

    Args:
        step: Deterministic map on the packed state vector
        x0: Starting point
        settings: Tolerance, cap and damping

    Returns:
        PicardResult with the fixed point and the iteration count

    Raises:
        PicardDivergenceError: if the cap is hit before the change drops below tol
    """
    x = np.array(x0, dtype=float, copy=True)
    history = []
    change = float("inf")
    for iteration in range(1, settings.max_iter + 1):
        image = np.asarray(step(x), dtype=float)
        x_new = image if settings.damping == 1.0 else (1.0 - settings.damping) * x + settings.damping * image
        change = relative_change(x, x_new)
        history.append(change)
        x = x_new
        if not np.isfinite(change):
            break
        if change <= settings.tol:
            return PicardResult(x=x, iterations=iteration, change=change, history=history)

    logger.error(f"Picard iteration stalled after {len(history)} iterations, last change {change:.3e}")
    raise PicardDivergenceError(
        f"Picard iteration did not reach {settings.tol:.1e} within {settings.max_iter} iterations",
        {"iterations": len(history), "last_change": change, "tol": settings.tol},
    )
