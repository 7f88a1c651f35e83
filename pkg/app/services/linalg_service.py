"""Linear algebra service: sparse assembly with constraint condensation and direct solves"""
import logging
import time
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import norm as sparse_norm, splu

from app.config import settings
from app.models.space import FeSystem
from app.schemas.records import LinearSolveReport
from app.utils.errors import LinearSolveError, SystemTooLargeError

logger = logging.getLogger(__name__)

RESIDUAL_BOUND = 1e-10


class DirectSolver:
    """
    SuperLU factorisation (COLAMD ordering, partial pivoting) of one matrix,
    reusable for several right-hand sides and for transposed solves.
    """

    def __init__(self, matrix: sparse.spmatrix, max_dofs: Optional[int] = None):
        max_dofs = settings.MAX_LINEAR_DOFS if max_dofs is None else max_dofs
        matrix = sparse.csr_matrix(matrix, dtype=float)
        n = matrix.shape[0]
        if matrix.shape != (n, n):
            raise LinearSolveError(f"matrix is not square: {matrix.shape}")
        if n > max_dofs:
            raise SystemTooLargeError(f"system with {n} unknowns exceeds the cap of {max_dofs}")
        LinalgService.check_structure(matrix)
        self.matrix = matrix
        self.frobenius = float(sparse_norm(matrix))
        started = time.perf_counter()
        try:
            self.lu = splu(
                matrix.tocsc(),
                permc_spec="COLAMD",
                diag_pivot_thresh=1.0,
                options={"SymmetricMode": False},
            )
        except RuntimeError as e:
            raise LinearSolveError(f"factorisation failed: {e}") from e
        self.factor_time = time.perf_counter() - started
        max_a = float(np.max(np.abs(matrix.data))) if matrix.nnz else 0.0
        max_u = float(np.max(np.abs(self.lu.U.data))) if self.lu.U.nnz else 0.0
        self.pivot_growth = max_u / max_a if max_a > 0 else np.inf

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> Tuple[np.ndarray, LinearSolveReport]:
        started = time.perf_counter()
        rhs = np.asarray(rhs, dtype=float)
        trans = "T" if transpose else "N"
        op = self.matrix.T if transpose else self.matrix
        x = self.lu.solve(rhs, trans=trans)
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("direct solve produced non-finite values")
        residual = op @ x - rhs
        bound = RESIDUAL_BOUND * (self.frobenius * np.linalg.norm(x) + np.linalg.norm(rhs))
        refined = False
        if np.linalg.norm(residual) > bound:
            x = x - self.lu.solve(residual, trans=trans)
            residual = op @ x - rhs
            refined = True
        res_norm = float(np.linalg.norm(residual))
        if res_norm > bound:
            logger.warning(f"Direct solve residual {res_norm:.3e} above bound {bound:.3e}")
        report = LinearSolveReport(
            n=len(rhs),
            residual_norm=res_norm,
            pivot_growth=self.pivot_growth,
            elapsed=self.factor_time + time.perf_counter() - started,
            refined=refined,
        )
        logger.debug(
            f"linear solve n={report.n} residual={report.residual_norm:.3e} "
            f"growth={report.pivot_growth:.3e} time={report.elapsed:.3f}s"
        )
        return x, report


class LinalgService:
    """Service for sparsity patterns and direct solves"""

    @staticmethod
    def chunk_coo_indices(cell_dofs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Row and column indices of the cell-local couplings of a block of cells"""
        n_local = cell_dofs.shape[1]
        rows = np.repeat(cell_dofs, n_local, axis=1).ravel()
        cols = np.tile(cell_dofs, (1, n_local)).ravel()
        return rows, cols

    @staticmethod
    def assemble_matrix(system: FeSystem, chunks: Iterable[Tuple[slice, np.ndarray]]) -> sparse.csr_matrix:
        """
        Sum cell matrices into a global CSR matrix.

        Args:
            system: Finite element system
            chunks: (cell slice, local matrices (n, n_local, n_local)) pairs

        Returns:
            Unconstrained global matrix
        """
        shape = (system.n_dofs, system.n_dofs)
        total = sparse.csr_matrix(shape)
        for cells, local in chunks:
            rows, cols = LinalgService.chunk_coo_indices(system.cell_dofs[cells])
            total = total + sparse.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
        total.sum_duplicates()
        total.sort_indices()
        return total

    @staticmethod
    def assemble_vector(system: FeSystem, chunks: Iterable[Tuple[slice, np.ndarray]]) -> np.ndarray:
        """Sum cell vectors (n, n_local) into a global vector"""
        total = np.zeros(system.n_dofs)
        for cells, local in chunks:
            total += np.bincount(system.cell_dofs[cells].ravel(), weights=local.ravel(),
                                 minlength=system.n_dofs)
        return total

    @staticmethod
    def assemble_pattern(system: FeSystem) -> sparse.csr_matrix:
        """
        Zeroed condensed matrix covering every cell coupling.

        Args:
            system: Finite element system

        Returns:
            CSR matrix with sorted column indices and explicit zeros
        """
        n_local = system.n_local
        step = max(1, settings.ASSEMBLY_CHUNK_SIZE)
        chunks = (
            (slice(start, start + step), np.ones((min(step, system.n_cells - start), n_local, n_local)))
            for start in range(0, system.n_cells, step)
        )
        ones = LinalgService.assemble_matrix(system, chunks)
        condensed = abs(system.constraints.condense_matrix(ones))
        pattern = ((condensed + condensed.T) != 0).astype(float).tocsr()
        pattern.sort_indices()
        pattern.data[:] = 0.0
        return pattern

    @staticmethod
    def check_structure(matrix: sparse.csr_matrix) -> None:
        """Reject matrices with an all-zero row or column"""
        row_mass = np.asarray(abs(matrix).sum(axis=1)).ravel()
        zero_rows = np.nonzero(row_mass == 0.0)[0]
        if zero_rows.size:
            row = int(zero_rows[0])
            raise LinearSolveError(f"structurally singular matrix: row {row} is zero", row=row)
        col_mass = np.asarray(abs(matrix).sum(axis=0)).ravel()
        zero_cols = np.nonzero(col_mass == 0.0)[0]
        if zero_cols.size:
            col = int(zero_cols[0])
            raise LinearSolveError(f"structurally singular matrix: column {col} is zero", row=col)

    @staticmethod
    def solve_direct(matrix: sparse.spmatrix, rhs: np.ndarray, transpose: bool = False,
                     max_dofs: Optional[int] = None) -> Tuple[np.ndarray, LinearSolveReport]:
        """
        Solve A x = b (or A^T x = b) with a fresh sparse LU factorisation.

        Raises:
            SystemTooLargeError: dimension above the configured cap
            LinearSolveError: singular or structurally deficient matrix
        """
        return DirectSolver(matrix, max_dofs).solve(rhs, transpose=transpose)


# Global instance
linalg_service = LinalgService()


def assemble_pattern(system: FeSystem) -> sparse.csr_matrix:
    return LinalgService.assemble_pattern(system)


def solve_direct(matrix, rhs, transpose: bool = False, max_dofs: Optional[int] = None):
    return LinalgService.solve_direct(matrix, rhs, transpose=transpose, max_dofs=max_dofs)
