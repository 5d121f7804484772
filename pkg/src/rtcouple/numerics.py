"""Shared numerical kernels: sparse linear solves and a damped Newton.

The sparse path is BiCGSTAB with Jacobi (diagonal) preconditioning, which
copes with the non-symmetric matrices produced by upwind advection; systems
of dimension <= 64 go through a dense LU instead.  Newton iterates in the
caller's variable space with step halving (at most 20 times per iteration)
whenever the residual norm fails to decrease.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

_DENSE_LIMIT = 64
_BREAKDOWN = 1e-300
_MAX_HALVINGS = 20


class NoConvergenceError(RuntimeError):
    """Solver failed; carries the last residual norm and iteration count."""

    def __init__(self, message: str, residual_norm: float, iterations: int):
        super().__init__(
            f"{message} (residual {residual_norm:.3e} after {iterations} iterations)")
        self.residual_norm = residual_norm
        self.iterations = iterations


class SparseMatrix:
    """Square sparse matrix in compressed-row storage.

    Thin wrapper over a scipy CSR matrix that guarantees the storage
    invariants (monotone row offsets, strictly increasing column indices
    within each row) and exposes the raw arrays.
    """

    def __init__(self, csr: sps.csr_matrix):
        if csr.shape[0] != csr.shape[1]:
            raise ValueError(f"matrix must be square, got shape {csr.shape}")
        csr = csr.copy()
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr

    @classmethod
    def from_triplets(cls, n: int, rows, cols, values) -> "SparseMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if np.any(rows < 0) or np.any(rows >= n) or np.any(cols < 0) or np.any(cols >= n):
            raise ValueError("triplet index out of range")
        coo = sps.coo_matrix((values, (rows, cols)), shape=(n, n))
        return cls(coo.tocsr())

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls(sps.csr_matrix(np.asarray(a, dtype=np.float64)))

    @property
    def n(self) -> int:
        return self._csr.shape[0]

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def validate(self) -> None:
        off, idx = self.row_offsets, self.col_indices
        if off[0] != 0 or off[-1] != len(idx) or np.any(np.diff(off) < 0):
            raise ValueError("row offsets are not monotone non-decreasing")
        if len(idx) and (idx.min() < 0 or idx.max() >= self.n):
            raise ValueError("column index out of range")
        for i in range(self.n):
            row = idx[off[i]:off[i + 1]]
            if np.any(np.diff(row) <= 0):
                raise ValueError(f"column indices not strictly increasing in row {i}")


def solve_sparse(A: SparseMatrix, b: np.ndarray, tol: float = 1e-12,
                 max_iter: int = 10000) -> np.ndarray:
    """Solve A x = b to a relative residual ||Ax-b||_2 <= tol*||b||_2.

    Dense LU for n <= 64, otherwise Jacobi-preconditioned BiCGSTAB.
    Raises NoConvergenceError on breakdown or iteration exhaustion.
    """
    b = np.asarray(b, dtype=np.float64)
    n = A.n
    if b.shape != (n,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({n},)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)

    if n <= _DENSE_LIMIT:
        try:
            x = np.linalg.solve(A.to_dense(), b)
        except np.linalg.LinAlgError as exc:
            raise NoConvergenceError(f"dense solve failed: {exc}",
                                     np.inf, 0) from exc
        res = np.linalg.norm(A.matvec(x) - b)
        if res > tol * bnorm:
            raise NoConvergenceError("dense solve residual above tolerance",
                                     res, 0)
        return x

    return _bicgstab(A, b, tol * bnorm, max_iter)


def _bicgstab(A: SparseMatrix, b: np.ndarray, atol: float, max_iter: int) -> np.ndarray:
    diag = A.diagonal().copy()
    diag[diag == 0.0] = 1.0  # Jacobi preconditioner, skip empty diagonals

    x = np.zeros_like(b)
    r = b - A.matvec(x)
    rnorm = np.linalg.norm(r)
    if rnorm <= atol:
        return x
    r0 = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    last_restart = np.inf

    it = 0
    while it < max_iter:
        it += 1
        rho = float(r0 @ r)
        degenerate = abs(rho) < _BREAKDOWN or abs(omega) < _BREAKDOWN
        if not degenerate:
            beta = (rho / rho_old) * (alpha / omega)
            p = r + beta * (p - omega * v)
            phat = p / diag
            v = A.matvec(phat)
            denom = float(r0 @ v)
            degenerate = abs(denom) < _BREAKDOWN
        if not degenerate:
            alpha = rho / denom
            s = r - alpha * v
            snorm = np.linalg.norm(s)
            if snorm <= atol:
                x = x + alpha * phat
                rnorm = snorm
                break
            shat = s / diag
            t = A.matvec(shat)
            tt = float(t @ t)
            degenerate = tt < _BREAKDOWN
        if degenerate:
            # the shadow residual lost contact (exact for triangular
            # operators with sparse right-hand sides); restart from x as
            # long as each restart still makes progress
            r = b - A.matvec(x)
            rnorm = np.linalg.norm(r)
            if rnorm <= atol:
                break
            if rnorm >= last_restart:
                raise NoConvergenceError("BiCGSTAB breakdown", rnorm, it)
            last_restart = rnorm
            r0 = r.copy()
            rho_old = alpha = omega = 1.0
            v = np.zeros_like(b)
            p = np.zeros_like(b)
            continue
        omega = float(t @ s) / tt
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        if rnorm <= atol:
            break
        rho_old = rho
    else:
        raise NoConvergenceError("BiCGSTAB did not converge", rnorm, max_iter)

    # the recurrence residual can drift from the true one; verify and polish
    true_res = np.linalg.norm(A.matvec(x) - b)
    if true_res > atol:
        r = b - A.matvec(x)
        correction = _bicgstab(A, r, atol, max_iter)
        x = x + correction
        true_res = np.linalg.norm(A.matvec(x) - b)
        if true_res > atol:
            raise NoConvergenceError("BiCGSTAB stalled above tolerance",
                                     true_res, max_iter)
    return x


@dataclass
class NewtonReport:
    iterations: int
    final_residual_norm: float
    converged: bool


def newton_solve(residual, jacobian, x0: np.ndarray, tol: float = 1e-12,
                 max_iter: int = 50, max_step: float | None = None):
    """Damped Newton for residual(x) = 0; returns (x, NewtonReport).

    Convergence is ||residual(x)||_inf <= tol.  Each step is halved (up to
    20 times) while the residual norm does not decrease; exhausting the
    halvings or max_iter raises NoConvergenceError with the report attached.
    ``max_step`` caps the inf-norm of each update, which keeps solves in
    log variables from overflowing when the start is far off.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x0, dtype=np.float64).copy()
    r = np.asarray(residual(x), dtype=np.float64)
    norm = float(np.max(np.abs(r))) if r.size else 0.0
    if norm <= tol:
        return x, NewtonReport(0, norm, True)

    for it in range(1, max_iter + 1):
        J = jacobian(x)
        if isinstance(J, SparseMatrix):
            J = J.to_dense()
        try:
            dx = np.linalg.solve(np.atleast_2d(J), -r)
        except np.linalg.LinAlgError as exc:
            err = NoConvergenceError(f"singular Jacobian: {exc}", norm, it)
            err.report = NewtonReport(it, norm, False)
            raise err from exc
        if max_step is not None:
            length = float(np.max(np.abs(dx))) if dx.size else 0.0
            if length > max_step:
                dx *= max_step / length

        step = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            x_try = x + step * dx
            r_try = np.asarray(residual(x_try), dtype=np.float64)
            norm_try = float(np.max(np.abs(r_try)))
            if np.isfinite(norm_try) and norm_try < norm:
                break
            step *= 0.5
        else:
            err = NoConvergenceError("Newton damping exhausted", norm, it)
            err.report = NewtonReport(it, norm, False)
            raise err

        x, r, norm = x_try, r_try, norm_try
        if norm <= tol:
            return x, NewtonReport(it, norm, True)

    err = NoConvergenceError("Newton did not converge", norm, max_iter)
    err.report = NewtonReport(max_iter, norm, False)
    raise err
