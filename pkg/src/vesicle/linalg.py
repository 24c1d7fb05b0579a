"""Sparse assembly containers and the linear-solver contract."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from importlib import metadata

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A linear solve failed (singular factor, breakdown or residual above tolerance)."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


def _locate_mkl() -> str | None:
    if os.environ.get("PYPARDISO_MKL_RT"):
        return os.environ["PYPARDISO_MKL_RT"]
    try:
        files = metadata.files("mkl") or []
    except metadata.PackageNotFoundError:
        return None
    for f in files:
        if "mkl_rt" in f.name:
            path = f.locate().resolve()
            if path.exists():
                os.environ["PYPARDISO_MKL_RT"] = str(path)
                return str(path)
    return None


def pardiso_available() -> bool:
    if _locate_mkl() is None:
        return False
    try:
        from pypardiso.pardiso_wrapper import PyPardisoSolver  # noqa: F401
    except ImportError:
        return False
    return True


def default_backend() -> str:
    return "pardiso" if pardiso_available() else "lu"


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    backend: str = "auto"  # "auto", "pardiso", "lu" or "gmres"
    permc_spec: str = "COLAMD"
    maxiter: int = 500
    restart: int = 60
    drop_tol: float = 1e-5
    fill_factor: float = 20.0


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    residual: float
    iterations: int
    wall_time: float


def assemble(rows, cols, vals, shape: tuple[int, int]) -> sp.csr_matrix:
    """Sum a triplet stream into a CSR matrix.

    Duplicates are summed after sorting on (row, col, value), so any
    permutation of the same multiset gives a bitwise identical matrix.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    if not (len(rows) == len(cols) == len(vals)):
        raise ValueError("triplet arrays differ in length")
    nr, nc = shape
    if len(rows) and (rows.min() < 0 or rows.max() >= nr or cols.min() < 0 or cols.max() >= nc):
        raise IndexError(f"triplet index out of range for shape {shape}")
    order = np.lexsort((vals, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    key = rows * nc + cols
    start = np.flatnonzero(np.r_[True, key[1:] != key[:-1]]) if len(key) else np.zeros(0, int)
    summed = np.add.reduceat(vals, start) if len(key) else np.zeros(0)
    # reduceat sums left to right, which is the sorted order
    urows, ucols = rows[start], cols[start]
    indptr = np.zeros(nr + 1, dtype=np.int64)
    np.add.at(indptr, urows + 1, 1)
    return sp.csr_matrix((summed, ucols, np.cumsum(indptr)), shape=shape)


class SparsityPattern:
    """Fixed CSR structure for repeated assembly of element contributions.

    Each block is given as (row dof table, column dof table, row offset,
    column offset) with dof tables of shape (ntri, nloc).  ``matrix``
    accepts local arrays (ntri, nrow_loc, ncol_loc) in block order and
    scatters them with one ``bincount``; the summation order is fixed,
    so repeated assembly with equal inputs is bitwise reproducible.
    """

    def __init__(self, blocks, shape: tuple[int, int], extra_diagonal: bool = True):
        self.shape = shape
        rows, cols = [], []
        self.block_sizes = []
        for rdofs, cdofs, roff, coff in blocks:
            r = np.repeat(rdofs[:, :, None], cdofs.shape[1], axis=2) + roff
            c = np.repeat(cdofs[:, None, :], rdofs.shape[1], axis=1) + coff
            rows.append(r.ravel())
            cols.append(c.ravel())
            self.block_sizes.append(r.size)
        n_elem = sum(self.block_sizes)
        if extra_diagonal:
            # diagonal slots allow Dirichlet rows and pins without changing the structure
            d = np.arange(min(shape), dtype=np.int64)
            rows.append(d)
            cols.append(d)
        rows = np.concatenate(rows).astype(np.int64)
        cols = np.concatenate(cols).astype(np.int64)
        key = rows * shape[1] + cols
        ukey, inverse = np.unique(key, return_inverse=True)
        self.map = inverse.astype(np.int64)
        self.n_elem = n_elem
        self.indices = (ukey % shape[1]).astype(np.int32)
        urows = ukey // shape[1]
        self.indptr = np.searchsorted(urows, np.arange(shape[0] + 1)).astype(np.int32)
        self.nnz = len(ukey)
        self._diag = np.full(shape[0], -1, dtype=np.int64)
        drows = urows[urows == self.indices]
        self._diag[drows] = np.flatnonzero(urows == self.indices)

    def matrix(self, local_blocks) -> sp.csr_matrix:
        parts = []
        for arr, size in zip(local_blocks, self.block_sizes):
            if arr is None:
                parts.append(np.zeros(size))
            else:
                if arr.size != size:
                    raise ValueError("local block does not match the pattern")
                parts.append(np.ascontiguousarray(arr).ravel())
        w = np.concatenate(parts)
        data = np.bincount(self.map[: self.n_elem], weights=w, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)

    def set_identity_rows(self, A: sp.csr_matrix, rows: np.ndarray) -> None:
        """Overwrite ``rows`` of ``A`` in place with unit rows (structure unchanged)."""
        for r in np.asarray(rows):
            A.data[A.indptr[r] : A.indptr[r + 1]] = 0.0
        A.data[self._diag[rows]] = 1.0


class PardisoFactor:
    """MKL PARDISO handle that keeps the symbolic analysis of one sparsity pattern.

    The first solve runs analysis (phase 11); later solves with the same
    structure only refactor numerically (phase 23).  Weighted matching and
    scaling are switched off so that the analysis depends on the pattern
    alone: a run resumed from a checkpoint then factors exactly like the
    uninterrupted run.  Pivot perturbations are cleaned up by iterative
    refinement.
    """

    # 1-based iparm entries: user settings, METIS ordering, up to 10
    # refinement steps, pivot perturbation 1e-13, no scaling, no matching
    _IPARM = ((1, 1), (2, 2), (8, 10), (10, 13), (11, 0), (13, 0))

    def __init__(self):
        _locate_mkl()
        from pypardiso.pardiso_wrapper import PyPardisoSolver

        self._solver = PyPardisoSolver(mtype=11)
        for i, val in self._IPARM:
            self._solver.set_iparm(i, val)
        self._structure = None

    def _same_structure(self, A) -> bool:
        if self._structure is None:
            return False
        indptr, indices = self._structure
        return np.array_equal(indptr, A.indptr) and np.array_equal(indices, A.indices)

    def factor_solve(self, A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
        s = self._solver
        s._check_A(A)
        b = np.asfortranarray(b, dtype=float)
        if not self._same_structure(A):
            s.set_phase(11)
            s._call_pardiso(A, b)
            self._structure = (A.indptr.copy(), A.indices.copy())
        s.set_phase(23)
        return s._call_pardiso(A, b)

    def resolve(self, A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
        s = self._solver
        s.set_phase(33)
        return s._call_pardiso(A, np.asfortranarray(b, dtype=float))

    def __del__(self):
        try:
            self._solver.free_memory(everything=True)
        except Exception:
            pass


def factor_for(cfg: SolverSettings | None) -> PardisoFactor | None:
    """A reusable factor handle when ``cfg`` resolves to the PARDISO backend."""
    backend = (cfg or SolverSettings()).backend
    if backend == "auto":
        backend = default_backend()
    return PardisoFactor() if backend == "pardiso" else None


def _residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def solve(A, b, cfg: SolverSettings | None = None,
          factor: PardisoFactor | None = None) -> tuple[np.ndarray, SolveReport]:
    """Solve ``A x = b``.

    Raises ``SolverError`` on structural singularity or breakdown; a
    solve that finishes above ``cfg.tol`` returns ``converged=False``.
    ``factor`` lets repeated PARDISO solves share one symbolic analysis.
    """
    cfg = cfg or SolverSettings()
    backend = default_backend() if cfg.backend == "auto" else cfg.backend
    b = np.asarray(b, dtype=float)
    if backend == "pardiso":
        A = sp.csr_matrix(A)
    else:
        A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    t0 = time.perf_counter()
    if not np.any(b):
        x = np.zeros_like(b)
        return x, SolveReport(True, 0.0, 0, time.perf_counter() - t0)

    iterations = 0
    if backend == "pardiso":
        from pypardiso.pardiso_wrapper import PyPardisoError

        factor = factor or PardisoFactor()
        try:
            x = factor.factor_solve(A, b)
            res = _residual(A, x, b)
            while res > cfg.tol and iterations < 3 and np.isfinite(res):
                x = x + factor.resolve(A, b - A @ x)
                res = _residual(A, x, b)
                iterations += 1
        except PyPardisoError as exc:
            raise SolverError(f"PARDISO failed: {exc}") from exc
    elif backend == "lu":
        try:
            lu = spla.splu(A, permc_spec=cfg.permc_spec)
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc
        x = lu.solve(b)
        res = _residual(A, x, b)
        if res > cfg.tol and np.isfinite(res):
            # one step of iterative refinement
            x = x + lu.solve(b - A @ x)
            res = _residual(A, x, b)
            iterations = 1
    elif backend == "gmres":
        ilu = spla.spilu(A, drop_tol=cfg.drop_tol, fill_factor=cfg.fill_factor)
        M = spla.LinearOperator(A.shape, ilu.solve)
        counter = [0]

        def cb(_):
            counter[0] += 1

        x, info = spla.gmres(
            A, b, M=M, rtol=cfg.tol, restart=cfg.restart, maxiter=cfg.maxiter,
            callback=cb, callback_type="pr_norm",
        )
        if info < 0:
            raise SolverError(f"gmres breakdown (info={info})")
        iterations = counter[0]
        res = _residual(A, x, b)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    wall = time.perf_counter() - t0
    if not np.all(np.isfinite(x)):
        report = SolveReport(False, float("inf"), iterations, wall)
        raise SolverError("solution contains non-finite values", report)
    report = SolveReport(bool(res <= cfg.tol), res, iterations, wall)
    if not report.converged:
        log.warning("linear solve residual %.3e above tolerance %.1e", res, cfg.tol)
    return x, report


def dump_matrix_market(path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
