"""Linear solvers for the assembled system: diagonally preconditioned
conjugate gradients and a pivot-checked Cholesky positive-definiteness
test.

The CG driver mirrors the study conditions: relative-residual criterion
1e-10, iteration cap equal to the system dimension, diagonal (Jacobi)
scaling.  Failure to converge is a scientific outcome here, so it is
reported, never raised.
"""

import csv
import time

import numpy as np


class SizeLimitError(RuntimeError):
    """Matrix too large for the dense positive-definiteness test."""


class NumericalBreakdownError(RuntimeError):
    """Non-finite quantity encountered inside an iteration."""


class CgSettings:
    """Solver configuration; defaults match the study conditions."""

    def __init__(self, tol=1e-10, maxiter=None, preconditioner="diagonal",
                 record_history=True):
        self.tol = float(tol)
        self.maxiter = maxiter  # None -> system dimension
        self.preconditioner = preconditioner
        self.record_history = record_history


class SolveReport:
    """Outcome of one CG solve."""

    def __init__(self, converged, iterations, relative_residual,
                 residual_history, wall_time, breakdown=False):
        self.converged = bool(converged)
        self.iterations = int(iterations)
        self.relative_residual = float(relative_residual)
        self.residual_history = residual_history
        self.wall_time = float(wall_time)
        self.breakdown = bool(breakdown)

    def write_history_csv(self, path, stride=1):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "relative_residual"])
            for i, r in enumerate(self.residual_history, start=1):
                if (i - 1) % stride == 0 or i == len(self.residual_history):
                    writer.writerow([i, f"{r:.17g}"])


class SpdVerdict:
    """Result of the Cholesky positive-definiteness test."""

    def __init__(self, positive_definite, failing_index=None,
                 failing_pivot=None, dimension=0, pivot_tolerance=0.0):
        self.positive_definite = bool(positive_definite)
        self.failing_index = failing_index
        self.failing_pivot = failing_pivot
        self.dimension = int(dimension)
        self.pivot_tolerance = float(pivot_tolerance)

    def __repr__(self):
        if self.positive_definite:
            return f"SpdVerdict(positive-definite, n={self.dimension})"
        return (f"SpdVerdict(not-positive-definite, pivot "
                f"{self.failing_pivot:.3e} at index {self.failing_index})")


def diagonal_precondition(matrix):
    """Inverse-diagonal application r -> diag(K)^-1 r.

    Raises ValueError on a non-positive diagonal entry, which for this
    bilinear form signals an assembly bug.
    """
    d = matrix.diagonal() if hasattr(matrix, "diagonal") else np.diag(matrix)
    d = np.asarray(d, dtype=float)
    if d.size and d.min() <= 0.0:
        bad = int(np.argmin(d))
        raise ValueError(f"non-positive diagonal entry {d[bad]:.3e} "
                         f"at index {bad}")
    inv = 1.0 / d

    def apply(r):
        return inv * r

    return apply


def _as_matvec(matrix):
    if hasattr(matrix, "matvec"):
        return matrix.matvec, matrix.n if hasattr(matrix, "n") \
            else matrix.shape[0]
    mat = matrix

    def mv(x):
        return mat @ x

    return mv, mat.shape[0]


def cg_solve(matrix, rhs, settings=None):
    """Preconditioned conjugate gradients on K d = F.

    Returns (d, SolveReport).  Convergence means
    ||F - K d||_2 / ||F||_2 <= tol within the iteration cap; a
    non-positive curvature p^T K p flags breakdown (the indefinite /
    singular signal) and stops the iteration unconverged.
    """
    settings = settings or CgSettings()
    matvec, n = _as_matvec(matrix)
    f = np.asarray(rhs.values if hasattr(rhs, "values") else rhs,
                   dtype=float)
    if f.shape[0] != n:
        raise ValueError(f"dimension mismatch: matrix {n}, rhs {f.shape[0]}")
    t0 = time.perf_counter()
    norm_f = np.linalg.norm(f)
    history = []
    if norm_f == 0.0:
        return np.zeros(n), SolveReport(True, 0, 0.0, history,
                                        time.perf_counter() - t0)

    maxiter = settings.maxiter if settings.maxiter is not None else n
    if settings.preconditioner == "diagonal":
        apply_m = diagonal_precondition(matrix)
    else:
        apply_m = lambda r: r

    x = np.zeros(n)
    r = f.copy()
    z = apply_m(r)
    p = z.copy()
    rz = r @ z
    relres = 1.0
    breakdown = False
    it = 0
    for it in range(1, maxiter + 1):
        q = matvec(p)
        curvature = p @ q
        if not np.isfinite(curvature):
            raise NumericalBreakdownError(
                f"non-finite curvature at iteration {it}")
        if curvature <= 0.0:
            breakdown = True
            it -= 1
            break
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * q
        relres = np.linalg.norm(r) / norm_f
        if settings.record_history:
            history.append(relres)
        if not np.isfinite(relres):
            raise NumericalBreakdownError(
                f"non-finite residual at iteration {it}")
        if relres <= settings.tol:
            return x, SolveReport(True, it, relres, history,
                                  time.perf_counter() - t0)
        z = apply_m(r)
        rz_new = r @ z
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
    return x, SolveReport(False, it, relres, history,
                          time.perf_counter() - t0, breakdown=breakdown)


def cholesky_spd_test(matrix, pivot_rtol=1e-12, dense_limit=25000,
                      block=256):
    """Positive-definiteness test by dense lower Cholesky factorization.

    The matrix is positive definite iff every pivot stays above
    pivot_rtol * max(diagonal).  Factorization runs in place on a dense
    copy with blocked updates; the first failing pivot index and value
    are reported otherwise.

    Raises SizeLimitError when the dimension exceeds dense_limit (a
    dense factor of that size would not fit the memory budget; use a
    smaller mesh).
    """
    if hasattr(matrix, "to_dense"):
        n = matrix.n
        if n > dense_limit:
            raise SizeLimitError(
                f"dimension {n} exceeds dense limit {dense_limit}; "
                "use a smaller mesh for the SPD test")
        a = matrix.to_dense()
    else:
        a = np.array(matrix, dtype=float)
        n = a.shape[0]
        if n > dense_limit:
            raise SizeLimitError(
                f"dimension {n} exceeds dense limit {dense_limit}; "
                "use a smaller mesh for the SPD test")
    if a.shape != (n, n):
        raise ValueError("matrix must be square")

    diag_max = np.max(np.diag(a)) if n else 0.0
    tol = pivot_rtol * diag_max
    for k0 in range(0, n, block):
        k1 = min(k0 + block, n)
        panel = a[k0:, k0:k1]
        if k0:
            panel -= a[k0:, :k0] @ a[k0:k1, :k0].T
        for jj in range(k1 - k0):
            piv = panel[jj, jj]
            if not piv > tol:
                return SpdVerdict(False, failing_index=k0 + jj,
                                  failing_pivot=float(piv), dimension=n,
                                  pivot_tolerance=tol)
            ljj = np.sqrt(piv)
            panel[jj, jj] = ljj
            col = panel[jj + 1:, jj]
            col /= ljj
            if jj + 1 < k1 - k0:
                panel[jj + 1:, jj + 1:k1 - k0] -= \
                    col[:, None] * col[None, :k1 - k0 - jj - 1]
    return SpdVerdict(True, dimension=n, pivot_tolerance=tol)
