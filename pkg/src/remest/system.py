"""Linear plant model, steady-state sensor filter and error-growth function.

The plant is ``x_{t+1} = A x_t + w_t`` observed through ``y_t = C x_t + v_t``
with Gaussian noise covariances W and V.  The sensor runs a Kalman filter to
steady state; the remote side only ever needs the converged posterior
covariance, the converged gain, and the open-loop covariance recursion
``v(X) = A X A^T + W`` applied during dropout runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    ConvergenceError,
    as_matrix,
    as_square,
    max_abs,
    rank,
    spectral_radius,
    symmetrize,
)

#: Traces beyond this are reported as saturated instead of overflowing.
SATURATION_LIMIT = 1e250


def sqrt_psd(q, tol=1e-12, name="matrix"):
    """Symmetric square root of a symmetric PSD matrix.

    Computed from the symmetric eigendecomposition with negative round-off
    eigenvalues clipped to zero; works for singular covariances (e.g. rank-1
    process noise), where pure iteration schemes break down.
    """
    q = as_square(q, name)
    if max_abs(q - q.T) > tol * max(max_abs(q), 1.0):
        raise ValueError(f"{name} must be symmetric")
    w, u = np.linalg.eigh(symmetrize(q))
    if w.size and w[0] < -tol * max(abs(w[-1]), 1.0):
        raise ValueError(f"{name} must be positive semidefinite")
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T


def _check_covariance(q, name, definite=False):
    q = as_square(q, name)
    if max_abs(q - q.T) > 1e-10 * max(max_abs(q), 1.0):
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(symmetrize(q))
    floor = 1e-12 * max(abs(w[-1]), 1.0) if w.size else 0.0
    if definite:
        if w.size == 0 or w[0] <= 0.0:
            raise ValueError(f"{name} must be positive definite")
    elif w.size and w[0] < -floor:
        raise ValueError(f"{name} must be positive semidefinite")
    return symmetrize(q)


@dataclass(frozen=True)
class LtiSystem:
    """Plant/sensor quadruple (A, C, W, V).

    A : (n, n) state transition
    C : (m, n) measurement map
    W : (n, n) process noise covariance (PSD)
    V : (m, m) measurement noise covariance (positive definite; its inverse
        appears in the filter gain)
    """

    A: np.ndarray
    C: np.ndarray
    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        a = as_square(self.A, "A")
        c = as_matrix(self.C, "C")
        n = a.shape[0]
        if c.shape[1] != n:
            raise ValueError(f"C has {c.shape[1]} columns, expected {n}")
        w = _check_covariance(self.W, "W")
        v = _check_covariance(self.V, "V", definite=True)
        if w.shape[0] != n:
            raise ValueError(f"W has shape {w.shape}, expected ({n}, {n})")
        if v.shape[0] != c.shape[0]:
            raise ValueError(
                f"V has shape {v.shape}, expected ({c.shape[0]}, {c.shape[0]})"
            )
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "V", v)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class ValidationReport:
    observability_rank: int
    controllability_rank: int
    observable: bool
    controllable: bool
    unstable_plant: bool  # rho(A)^2 >= 1, the regime where stability is at stake
    rho_A: float

    @property
    def passed(self):
        return self.observable and self.controllable


def observability_matrix(a, c):
    """Concatenation [C^T, A^T C^T, ..., (A^n)^T C^T]."""
    a = as_square(a)
    blocks, block = [], as_matrix(c).T
    for _ in range(a.shape[0] + 1):
        blocks.append(block)
        block = a.T @ block
    return np.hstack(blocks)


def controllability_matrix(a, sqrt_q):
    """Concatenation [sqrtQ, A sqrtQ, ..., A^n sqrtQ]."""
    a = as_square(a)
    blocks, block = [], as_matrix(sqrt_q)
    for _ in range(a.shape[0] + 1):
        blocks.append(block)
        block = a @ block
    return np.hstack(blocks)


def validate(sys: LtiSystem, tol=1e-10) -> ValidationReport:
    """Check observability of (A, C) and controllability of (A, sqrt(W))."""
    n = sys.n
    obs_rank = rank(observability_matrix(sys.A, sys.C), tol)
    ctr_rank = rank(controllability_matrix(sys.A, sqrt_psd(sys.W, name="W")), tol)
    rho = spectral_radius(sys.A).value
    return ValidationReport(
        observability_rank=obs_rank,
        controllability_rank=ctr_rank,
        observable=obs_rank == n,
        controllable=ctr_rank == n,
        unstable_plant=rho * rho >= 1.0,
        rho_A=rho,
    )


@dataclass(frozen=True)
class SteadyStateFilter:
    """Converged sensor filter: posterior covariance and gain."""

    P0: np.ndarray  # converged posterior error covariance
    K: np.ndarray  # converged gain
    iterations: int
    residual: float


def riccati_steady_state(sys: LtiSystem, tol=1e-11, max_iter=200_000,
                         initial=None) -> SteadyStateFilter:
    """Iterate the filter covariance recursion to its fixed point.

    Starts from W by default; the fixed point does not depend on the
    initialization.  Convergence is declared when successive posterior
    covariances differ by less than ``tol`` in max-abs norm.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a, c, w, v = sys.A, sys.C, sys.W, sys.V
    p = symmetrize(as_square(initial, "initial")) if initial is not None else w.copy()
    gain = None
    residual = math.inf
    for it in range(1, max_iter + 1):
        pred = symmetrize(a @ p @ a.T + w)
        s = c @ pred @ c.T + v
        try:
            gain = np.linalg.solve(s.T, (pred @ c.T).T).T
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular innovation covariance: {exc}") from exc
        post = symmetrize((np.eye(sys.n) - gain @ c) @ pred)
        residual = max_abs(post - p)
        p = post
        if residual < tol:
            return SteadyStateFilter(P0=p, K=gain, iterations=it, residual=residual)
    raise ConvergenceError(
        f"filter covariance did not converge in {max_iter} iterations "
        "(near-unobservable configuration?)",
        estimate=SteadyStateFilter(P0=p, K=gain, iterations=max_iter,
                                   residual=residual),
    )


def holding_map(sys: LtiSystem, x):
    """Open-loop covariance update A X A^T + W, re-symmetrized."""
    x = as_square(x, "X")
    if x.shape[0] != sys.n:
        raise ValueError(f"X has shape {x.shape}, expected ({sys.n}, {sys.n})")
    return symmetrize(sys.A @ x @ sys.A.T + sys.W)


def error_trace(sys: LtiSystem, filt: SteadyStateFilter, i: int) -> float:
    """Trace of the i-times-held posterior covariance.

    This is the remote error trace after i-1 consecutive dropouts; it is
    monotone nondecreasing in i.  Values past the saturation limit come back
    as math.inf (the growth is geometric for an unstable plant).
    """
    if i < 1:
        raise ValueError("i must be >= 1 (the remote estimate is always at "
                         "least one step old)")
    x = filt.P0
    for _ in range(i):
        x = holding_map(sys, x)
        if float(np.trace(x)) > SATURATION_LIMIT:
            return math.inf
    return float(np.trace(x))


@dataclass
class ErrorTraceTable:
    """Lazy table of error traces c(1), c(2), ... with saturation tracking.

    ``values[i-1]`` holds the trace after i holds of the steady-state
    posterior.  Once a value exceeds SATURATION_LIMIT the table stops and
    ``saturation_index`` records the first saturated index (None otherwise).
    """

    sys: LtiSystem
    filt: SteadyStateFilter
    limit: float = SATURATION_LIMIT
    values: list = field(default_factory=list)
    saturation_index: int | None = None
    _state: np.ndarray | None = None

    def grow(self, upto: int):
        if self._state is None:
            self._state = self.filt.P0.copy()
        while len(self.values) < upto and self.saturation_index is None:
            self._state = holding_map(self.sys, self._state)
            value = float(np.trace(self._state))
            if value > self.limit:
                self.saturation_index = len(self.values) + 1
                break
            self.values.append(value)
        return self

    def c(self, i: int) -> float:
        if i < 1:
            raise ValueError("i must be >= 1")
        self.grow(i)
        if self.saturation_index is not None and i >= self.saturation_index:
            return math.inf
        return self.values[i - 1]

    def as_array(self, upto: int) -> np.ndarray:
        """Finite prefix of length min(upto, saturation point)."""
        self.grow(upto)
        return np.asarray(self.values[:upto], dtype=float)


def gated_kalman_step(sys: LtiSystem, prior_state, prior_cov, measurement,
                      received: bool):
    """One remote-filter step on raw measurements over a lossy link.

    Input is the posterior pair from the previous slot.  When the packet was
    received the full predict+update runs against the delivered measurement;
    otherwise the state is propagated open loop and the covariance through
    the holding map.  Returns the new posterior pair.
    """
    state = np.asarray(prior_state, dtype=float).reshape(sys.n)
    cov = symmetrize(as_square(prior_cov, "prior_cov"))
    pred_state = sys.A @ state
    pred_cov = holding_map(sys, cov)
    if not received:
        return pred_state, pred_cov
    y = np.asarray(measurement, dtype=float).reshape(sys.m)
    s = sys.C @ pred_cov @ sys.C.T + sys.V
    try:
        gain = np.linalg.solve(s.T, (pred_cov @ sys.C.T).T).T
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"singular innovation covariance: {exc}") from exc
    new_state = pred_state + gain @ (y - sys.C @ pred_state)
    new_cov = symmetrize((np.eye(sys.n) - gain @ sys.C) @ pred_cov)
    return new_state, new_cov
