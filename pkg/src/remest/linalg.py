"""Dense small-matrix routines used throughout the package.

Everything here is self-contained: spectral quantities come from norm/power
iterations and rank/solve/null-space come from Gaussian elimination with
partial pivoting.  No general eigendecomposition is used anywhere.  Matrices
are plain float64 numpy arrays in row-major order; all public operations
reject non-finite input and produce finite output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-9
RANK_TOL = 1e-10


class LinalgError(ValueError):
    """Base class for numerical failures in this module."""


class ConvergenceError(LinalgError):
    """An iteration failed to reach the requested tolerance.

    Carries the last estimate so callers can decide whether it is usable.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class SingularMatrixError(LinalgError):
    pass


@dataclass(frozen=True)
class SpectralEstimate:
    """Result of an iterative spectral computation.

    value     nonnegative estimate
    iterations  iterations (or norm doublings) consumed
    residual  last relative change between successive estimates
    """

    value: float
    iterations: int
    residual: float


def as_matrix(a, name="matrix"):
    """Coerce to a finite float64 2-D array (row vectors stay 2-D)."""
    z = np.asarray(a, dtype=float)
    if z.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got ndim={z.ndim}")
    if z.size and not np.all(np.isfinite(z)):
        raise ValueError(f"{name}: entries must be finite")
    return np.ascontiguousarray(z)


def as_square(a, name="matrix"):
    z = as_matrix(a, name)
    if z.shape[0] != z.shape[1]:
        raise ValueError(f"{name}: expected a square matrix, got shape {z.shape}")
    return z


def max_abs(z):
    """Max absolute entry; 0 for empty input."""
    z = np.asarray(z)
    return float(np.max(np.abs(z))) if z.size else 0.0


def inf_norm(z):
    """Induced infinity norm (max absolute row sum)."""
    z = np.asarray(z)
    if z.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(z), axis=1)))


def symmetrize(z):
    return (z + z.T) / 2.0


def spectral_radius(z, tol=DEFAULT_TOL, max_doublings=64):
    """Spectral radius via norm doubling.

    Uses the limit of ``norm(Z^k)**(1/k)`` along k = 2**j, computed by
    repeated squaring of an infinity-norm-normalized matrix with the scale
    carried in a log accumulator, so powers far beyond float range are safe.
    Defective matrices only slow convergence (the polynomial factor dies off
    like j/2**j per doubling); they never break the iteration.
    """
    z = as_square(z)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if z.shape[0] == 0:
        return SpectralEstimate(0.0, 0, 0.0)
    s = inf_norm(z)
    if s == 0.0:
        return SpectralEstimate(0.0, 0, 0.0)
    b = z / s
    log_scale = math.log(s)
    estimate = math.exp(log_scale)  # k = 1
    residual = math.inf
    settled = 0
    for j in range(1, max_doublings + 1):
        b = b @ b
        s = inf_norm(b)
        if s == 0.0:  # nilpotent: some power vanished exactly
            return SpectralEstimate(0.0, j, 0.0)
        b /= s
        log_scale = 2.0 * log_scale + math.log(s)
        new = math.exp(log_scale / (1 << j))
        residual = abs(new - estimate) / max(new, 1e-300)
        estimate = new
        # two consecutive settled steps guard against the polynomial factor
        # of a defective matrix stalling the estimate at a wrong plateau
        settled = settled + 1 if residual < tol else 0
        if settled >= 2 and j >= 4:
            return SpectralEstimate(estimate, j, residual)
    raise ConvergenceError(
        f"spectral radius did not settle within {max_doublings} doublings "
        f"(last estimate {estimate:.6g}, residual {residual:.3g})",
        estimate=SpectralEstimate(estimate, max_doublings, residual),
    )


_MAX_POWER_ITER = 200_000


def _start_vectors(n):
    yield np.ones(n) / n
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        yield e


def largest_singular_value(z, tol=DEFAULT_TOL):
    """Largest singular value via power iteration on Z^T Z.

    The Rayleigh quotient on the symmetric product converges monotonically,
    so the stopping test is the relative change of the eigenvalue estimate.
    """
    z = as_matrix(z)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if z.size == 0 or max_abs(z) == 0.0:
        return SpectralEstimate(0.0, 0, 0.0)
    g = z.T @ z
    scale = max_abs(g)
    g = g / scale
    for x in _start_vectors(g.shape[0]):
        x = x / math.sqrt(float(x @ x))
        lam = float(x @ (g @ x))
        for it in range(1, _MAX_POWER_ITER + 1):
            y = g @ x
            norm = math.sqrt(float(y @ y))
            if norm == 0.0:
                break  # start vector lies in the null space; try the next
            x = y / norm
            new = float(x @ (g @ x))
            residual = abs(new - lam) / max(abs(new), 1e-300)
            lam = new
            if residual < tol:
                value = math.sqrt(max(lam, 0.0) * scale)
                return SpectralEstimate(value, it, residual)
        else:
            raise ConvergenceError(
                "singular value iteration stalled (degenerate spectrum at "
                "this tolerance)",
                estimate=SpectralEstimate(math.sqrt(max(lam, 0.0) * scale), it, tol),
            )
    # Every start vector was annihilated, which contradicts max_abs(z) > 0
    # for symmetric PSD g; kept for safety.
    raise ConvergenceError("singular value iteration found no usable start vector")


def perron_root(z, tol=DEFAULT_TOL):
    """Dominant eigenvalue of an entrywise nonnegative matrix.

    Power iteration with a positive start vector; the estimate is the 1-norm
    of the iterate, which for nonnegative matrices converges to the dominant
    (real, nonnegative) eigenvalue.
    """
    z = as_square(z)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if z.size == 0:
        return SpectralEstimate(0.0, 0, 0.0)
    if np.min(z) < 0:
        raise ValueError("perron_root requires nonnegative entries")
    n = z.shape[0]
    x = np.ones(n) / n
    lam = 1.0
    for it in range(1, _MAX_POWER_ITER + 1):
        y = z @ x
        new = float(np.sum(y))
        if new == 0.0:
            # x is strictly positive, so Zx = 0 forces Z = 0 on the
            # support reached so far; the dominant eigenvalue is 0.
            return SpectralEstimate(0.0, it, 0.0)
        x = y / new
        residual = abs(new - lam) / max(new, 1e-300)
        lam = new
        if residual < tol:
            return SpectralEstimate(lam, it, residual)
    raise ConvergenceError(
        "perron iteration did not converge (near-degenerate or periodic "
        "dominant eigenvalues)",
        estimate=SpectralEstimate(lam, _MAX_POWER_ITER, residual),
    )


def _elimination(z, tol):
    """Row echelon by Gaussian elimination with partial pivoting.

    Returns (reduced matrix, pivot column list, free column list).  The pivot
    threshold is relative to the largest absolute entry of the input.
    """
    a = z.copy()
    rows, cols = a.shape
    threshold = tol * max_abs(a)
    pivots, free = [], []
    r = 0
    for c in range(cols):
        if r >= rows:
            free.append(c)
            continue
        p = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[p, c]) <= threshold:
            a[r:, c] = 0.0
            free.append(c)
            continue
        if p != r:
            a[[r, p]] = a[[p, r]]
        a[r + 1:, c + 1:] -= np.outer(a[r + 1:, c] / a[r, c], a[r, c + 1:])
        a[r + 1:, c] = 0.0
        pivots.append(c)
        r += 1
    return a, pivots, free


def rank(z, tol=RANK_TOL):
    """Numerical rank; a pivot counts when it exceeds tol times the largest
    absolute entry of the original matrix."""
    z = as_matrix(z)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if z.size == 0 or max_abs(z) == 0.0:
        return 0
    _, pivots, _ = _elimination(z, tol)
    return len(pivots)


def solve_linear(z, b):
    """Solve ZX = B by LU with partial pivoting.

    Raises SingularMatrixError when a pivot falls below the rank tolerance,
    and verifies the residual max|ZX-B| <= 1e-10 * max|B| afterwards.
    """
    z = as_square(z)
    b = np.asarray(b, dtype=float)
    vector_rhs = b.ndim == 1
    bm = as_matrix(b.reshape(-1, 1) if vector_rhs else b, "rhs")
    n = z.shape[0]
    if bm.shape[0] != n:
        raise ValueError(f"rhs has {bm.shape[0]} rows, expected {n}")
    a = np.hstack([z, bm])
    threshold = RANK_TOL * max_abs(z)
    for c in range(n):
        p = c + int(np.argmax(np.abs(a[c:, c])))
        if abs(a[p, c]) <= threshold:
            raise SingularMatrixError(f"singular system (pivot {c})")
        if p != c:
            a[[c, p]] = a[[p, c]]
        a[c + 1:, c:] -= np.outer(a[c + 1:, c] / a[c, c], a[c, c:])
    x = np.zeros_like(bm)
    for r in range(n - 1, -1, -1):
        x[r] = (a[r, n:] - a[r, r + 1: n] @ x[r + 1:]) / a[r, r]
    resid = max_abs(z @ x - bm)
    if resid > 1e-10 * max_abs(bm):
        raise SingularMatrixError(
            f"solution residual {resid:.3g} exceeds 1e-10 * max|B|"
        )
    return x[:, 0] if vector_rhs else x


def null_vector(z, tol=1e-8):
    """One-dimensional null-space vector of a square matrix.

    Requires numerical rank n-1 (raises otherwise).  The result has unit
    1-norm with the sign fixed so its largest-magnitude entry is positive,
    making downstream stationary distributions bit-reproducible.
    """
    z = as_square(z)
    n = z.shape[0]
    if tol <= 0:
        raise ValueError("tol must be positive")
    a, pivots, free = _elimination(z, RANK_TOL)
    if len(pivots) != n - 1 or len(free) != 1:
        raise LinalgError(
            f"null space dimension is {n - len(pivots)}, expected 1"
        )
    fc = free[0]
    v = np.zeros(n)
    v[fc] = 1.0
    # Back-substitute the echelon system over the pivot columns.
    for r in range(len(pivots) - 1, -1, -1):
        c = pivots[r]
        v[c] = -float(a[r, c + 1:] @ v[c + 1:]) / a[r, c]
    imax = int(np.argmax(np.abs(v)))
    if v[imax] < 0:
        v = -v
    v /= float(np.sum(np.abs(v)))
    resid = max_abs(z @ v)
    if resid > tol:
        raise LinalgError(
            f"null vector residual {resid:.3g} exceeds tolerance {tol:.3g}"
        )
    return v
