"""Stability verdicts and the analytic average estimation error.

The exact mean-square stability test multiplies the squared spectral radius
of the plant by the dominant eigenvalue of the dropout-weighted channel
transition matrix ``diag(d) @ P``; the product must fall below one.  A more
conservative sufficient test uses the plant's largest singular value and the
worst-state expected dropout instead; it is never less restrictive.

When the exact margin is below one, the long-run average error trace is
finite and computed from renewal segments between consecutive successful
deliveries: segment lengths follow a matrix-geometric distribution driven by
``diag(d) @ P``, segment costs accumulate the error-trace function, and the
average error is (expected segment cost) / (expected segment length).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .channel import MarkovChannel, PostSuccessSet, post_success_set, require_valid
from .linalg import (
    ConvergenceError,
    largest_singular_value,
    null_vector,
    perron_root,
    solve_linear,
    spectral_radius,
    symmetrize,
)
from .system import LtiSystem, SteadyStateFilter
from ._util import parallel_map

#: Guard added to the certified geometric tail ratio; absorbs the polynomial
#: factor that the purely geometric bound misses.
TAIL_GUARD = 1e-6

_MAX_SERIES_TERMS = 5_000_000
_MAX_UNCERTIFIED_TERMS = 100_000


def channel_spectral_radius(channel: MarkovChannel, tol=1e-12) -> float:
    """Dominant eigenvalue of diag(d) @ P.

    Power iteration, with the norm-doubling estimator as a fallback for
    periodic corner cases where power iteration oscillates.
    """
    dm = channel.dropout_scaled()
    try:
        return perron_root(dm, tol).value
    except ConvergenceError:
        return spectral_radius(dm, tol).value


@dataclass(frozen=True)
class MseResult:
    """Analytic average estimation error.

    value is math.inf when the configuration is unstable (a legitimate
    verdict, not an error).  ``uncertain`` marks margins so close to one
    that the geometric tail certificate does not apply; the reported value
    is then a best effort without a remainder bound.
    """

    value: float
    unbounded: bool
    expected_cycle_length: float | None = None
    expected_cycle_cost: float | None = None
    truncation: int | None = None
    tail_bound: float | None = None
    uncertain: bool = False


@dataclass(frozen=True)
class StabilityReport:
    rho_A: float
    sigma_A: float
    channel_rho: float  # dominant eigenvalue of diag(d) @ P
    margin: float  # rho(A)^2 * channel_rho; stable iff < 1
    stable: bool
    margin_sufficient: float  # sigma(A)^2 * worst-state expected dropout
    stable_sufficient: bool
    mse: MseResult | None = None

    def as_dict(self):
        out = {
            "rho_A": self.rho_A,
            "sigma_A": self.sigma_A,
            "channel_rho": self.channel_rho,
            "margin": self.margin,
            "stable": self.stable,
            "margin_sufficient": self.margin_sufficient,
            "stable_sufficient": self.stable_sufficient,
        }
        if self.mse is not None:
            out["mse"] = "unbounded" if self.mse.unbounded else self.mse.value
            out["mse_uncertain"] = self.mse.uncertain
        return out


def stability_margin(a, channel: MarkovChannel, tol=1e-12) -> StabilityReport:
    """Exact and sufficient stability margins (no average-error value)."""
    a = a.A if isinstance(a, LtiSystem) else a
    require_valid(channel)
    rho_a = spectral_radius(a, tol).value
    sigma_a = largest_singular_value(a, tol).value
    channel_rho = channel_spectral_radius(channel, tol)
    margin = rho_a * rho_a * channel_rho
    worst_expected_dropout = float(np.max(channel.P @ channel.d))
    margin_sufficient = sigma_a * sigma_a * worst_expected_dropout
    return StabilityReport(
        rho_A=rho_a,
        sigma_A=sigma_a,
        channel_rho=channel_rho,
        margin=margin,
        stable=margin < 1.0,
        margin_sufficient=margin_sufficient,
        stable_sufficient=margin_sufficient < 1.0,
    )


@dataclass(frozen=True)
class CycleModel:
    """Renewal structure of the success process.

    G maps the channel state right after one success to the state right
    after the next; its columns outside the post-success set are exactly
    zero, so the restriction Gp to that set is the transition matrix of the
    post-success chain, with stationary distribution beta (positive, sums
    to one).  tail_truncation/tail_bound record how G was obtained; the
    closed-form linear solve is exact, so both are zero.
    """

    post_success: PostSuccessSet
    G: np.ndarray
    Gp: np.ndarray
    beta: np.ndarray
    tail_truncation: int = 0
    tail_bound: float = 0.0

    @property
    def beta_padded(self):
        full = np.zeros(self.G.shape[0])
        full[list(self.post_success.indices)] = self.beta
        return full


def cycle_model(channel: MarkovChannel) -> CycleModel:
    """Success-to-success transition matrix and its stationary distribution.

    G solves (I - diag(d) P) G = diag(1-d) P, which sums the geometric
    series of failed slots in closed form; this needs the dropout-weighted
    matrix to be strictly substochastic in spectrum, true whenever some
    state can succeed.
    """
    require_valid(channel)
    bp = post_success_set(channel)  # raises when every state always drops
    m = channel.M
    dm = channel.dropout_scaled()
    g = solve_linear(np.eye(m) - dm, channel.success_scaled())
    ix = list(bp.indices)
    gp = g[np.ix_(ix, ix)]
    beta = null_vector(np.eye(bp.size) - gp.T)
    return CycleModel(post_success=bp, G=g, Gp=gp, beta=beta)


def cycle_length_pmf(channel: MarkovChannel, start_state: int, i: int) -> float:
    """Probability that a renewal segment starting in ``start_state`` has
    length i (i - 1 failures then one success)."""
    if i < 1:
        raise ValueError("segment length must be >= 1")
    bp = post_success_set(channel)
    if start_state not in bp.indices:
        raise ValueError(f"state {start_state} is not a post-success state")
    row = np.zeros(channel.M)
    row[start_state] = 1.0
    dm = channel.dropout_scaled()
    for _ in range(i - 1):
        row = row @ dm
    return float(np.sum(row @ channel.success_scaled()))


def cycle_length_distribution(channel: MarkovChannel, model: CycleModel,
                              upto: int) -> np.ndarray:
    """Marginal segment-length pmf (start state drawn from beta)."""
    dm = channel.dropout_scaled()
    succ = channel.success_scaled()
    row = model.beta_padded
    out = np.empty(upto)
    for i in range(upto):
        out[i] = float(np.sum(row @ succ))
        row = row @ dm
    return out


class ScaledTraceTable:
    """Error traces c(i) scaled by s**-i to stay in float range.

    s is max(1, rho(A)^2); with that choice the scaled traces stay bounded
    (up to a polynomial factor) for unstable plants and exactly equal the
    raw traces for stable ones.
    """

    def __init__(self, sys: LtiSystem, filt: SteadyStateFilter, scale: float):
        self.scale = scale
        self._sys = sys
        self._state = filt.P0.copy()
        self._wfactor = 1.0
        self._lock = threading.Lock()  # shared across concurrent scan cells
        self.values = []  # values[i-1] = c(i) / scale**i

    def grow(self, upto: int):
        a, w = self._sys.A, self._sys.W
        if len(self.values) >= upto:
            return self
        with self._lock:
            while len(self.values) < upto:
                self._wfactor /= self.scale
                self._state = symmetrize(
                    (a @ self._state @ a.T) / self.scale + w * self._wfactor
                )
                self.values.append(float(np.trace(self._state)))
        return self


def expected_cycle_length(channel: MarkovChannel, model: CycleModel) -> float:
    """Mean renewal segment length, in closed form.

    Summing i * (segment-length pmf) gives beta_padded (I - DM)^-2 (1 - d)
    with DM the dropout-weighted transition matrix.
    """
    m = np.eye(channel.M) - channel.dropout_scaled()
    u = solve_linear(m, 1.0 - channel.d)
    u = solve_linear(m, u)
    return float(model.beta_padded @ u)


def open_loop_trace_limit(sys: LtiSystem) -> float:
    """Limit of the error traces for a stable plant.

    Trace of the fixed point X = A X A^T + W, obtained from the vectorized
    linear system; only defined when rho(A) < 1.
    """
    n = sys.n
    lhs = np.eye(n * n) - np.kron(sys.A, sys.A)
    x = solve_linear(lhs, sys.W.reshape(-1)).reshape(n, n)
    return float(np.trace(x))


def analytic_mse(sys: LtiSystem, filt: SteadyStateFilter,
                 channel: MarkovChannel, tol=1e-12,
                 report: StabilityReport | None = None,
                 scaled_traces: ScaledTraceTable | None = None,
                 model: CycleModel | None = None) -> MseResult:
    """Long-run average error trace, or an unbounded verdict.

    The segment-cost series is summed term by term in a scaling where
    neither factor overflows, and truncated once the certified geometric
    tail (ratio = margin + guard) drops below ``tol`` times the partial
    sum.  For a stable plant the cost is first rearranged around the
    finite open-loop trace limit, so the residual series also converges
    at the margin rate (the raw series would converge only at the
    channel's rate, which can sit arbitrarily close to one).  For margins
    within the guard of one the certificate is unavailable; the result is
    then a capped best effort flagged uncertain.
    """
    if report is None:
        report = stability_margin(sys, channel)
    if report.margin >= 1.0:
        return MseResult(value=math.inf, unbounded=True)
    if bool(np.all(channel.d >= 1.0)):
        # nothing is ever delivered; stability (margin < 1 above) forces a
        # stable plant and the average error is the open-loop trace limit
        return MseResult(value=open_loop_trace_limit(sys), unbounded=False,
                         expected_cycle_length=None, expected_cycle_cost=None,
                         truncation=0, tail_bound=0.0, uncertain=False)
    if model is None:
        model = cycle_model(channel)
    ect = expected_cycle_length(channel, model)
    q = report.margin + TAIL_GUARD
    certifiable = q < 1.0
    cap = _MAX_SERIES_TERMS if certifiable else _MAX_UNCERTIFIED_TERMS

    if report.rho_A < 1.0:
        total, truncation, tail, uncertain = _segment_cost_stable(
            sys, filt, channel, model, tol, q, certifiable, cap)
    else:
        total, truncation, tail, uncertain = _segment_cost_growing(
            sys, filt, channel, model, tol, q, certifiable, cap,
            report.rho_A ** 2, scaled_traces)
    return MseResult(
        value=total / ect,
        unbounded=False,
        expected_cycle_length=ect,
        expected_cycle_cost=total,
        truncation=truncation,
        tail_bound=tail,
        uncertain=uncertain,
    )


def _certified_tail(term, ratios, q, certifiable):
    """Remainder bound for a series with eventually-geometric terms.

    Primary rule: once three consecutive term ratios sit below the
    guarded margin q, the remainder is term * q / (1 - q).  Fallback for
    polynomial-times-geometric terms whose ratios creep toward q from
    above: once the last eight ratios are all below one, their maximum
    (slightly inflated) bounds the decay.  Returns None when no
    certificate applies yet.
    """
    if certifiable and len(ratios) >= 3 \
            and all(r <= q for r in ratios[-3:]):
        return term * q / (1.0 - q)
    if len(ratios) >= 8:
        rstar = max(ratios[-8:]) * 1.001
        if rstar < 1.0:
            return term * rstar / (1.0 - rstar)
    return None


def _segment_cost_growing(sys, filt, channel, model, tol, q, certifiable,
                          cap, scale, scaled_traces):
    """E[segment cost] for rho(A) >= 1.

    Terms are g(i) * P(length = i) with g the running cost sum; both
    factors are carried scaled by rho(A)^(2i) so neither overflows, and
    the products are exact.  Term ratios approach the margin.
    """
    if scaled_traces is None:
        scaled_traces = ScaledTraceTable(sys, filt, scale)
    dm_scaled = scale * channel.dropout_scaled()
    succ = channel.success_scaled()
    row = model.beta_padded.copy()
    gtil = 0.0  # g(i) / scale**i, accumulated incrementally
    total = 0.0
    prev_term = None
    ratios = []
    truncation = 0
    i = 0
    while i < cap:
        i += 1
        scaled_traces.grow(i)
        gtil = gtil / scale + scaled_traces.values[i - 1]
        mass = scale * float(np.sum(row @ succ))  # scale**i * P(T = i)
        term = gtil * mass
        total += term
        truncation = i
        if float(np.max(np.abs(row))) == 0.0:
            return total, truncation, 0.0, False  # support exhausted exactly
        if term > 0.0:
            if prev_term is not None and prev_term > 0.0:
                ratios.append(term / prev_term)
            prev_term = term
        tail = _certified_tail(term, ratios, q, certifiable)
        if tail is not None and tail <= tol * total:
            return total, truncation, tail, False
        row = row @ dm_scaled
    return total, truncation, math.nan, True


def _segment_cost_stable(sys, filt, channel, model, tol, q, certifiable, cap):
    """E[segment cost] for rho(A) < 1, rearranged around the trace limit.

    Writing the cost sum over slots as sum_j c(j) * P(length >= j) and
    splitting c(j) = c_lim - r(j) gives a closed-form piece plus a
    residual series whose terms decay at the margin rate even when the
    channel's own rate is close to one.
    """
    m = channel.M
    dm = channel.dropout_scaled()
    u = solve_linear(np.eye(m) - dm, 1.0 - channel.d)
    c_lim = open_loop_trace_limit(sys)
    closed = c_lim * float(model.beta_padded @ solve_linear(np.eye(m) - dm, u))

    state = filt.P0.copy()
    a, w = sys.A, sys.W
    row = model.beta_padded.copy()
    total = closed
    prev_term = None
    ratios = []
    truncation = 0
    i = 0
    while i < cap:
        i += 1
        state = symmetrize(a @ state @ a.T + w)
        resid = c_lim - float(np.trace(state))  # >= 0, decays like rho^(2i)
        term = resid * float(row @ u)  # r(i) * P(length >= i)
        total -= term
        truncation = i
        if float(np.max(np.abs(row))) == 0.0 or term == 0.0:
            return total, truncation, 0.0, False
        if prev_term is not None and prev_term > 0.0:
            ratios.append(abs(term) / prev_term)
        prev_term = abs(term)
        tail = _certified_tail(abs(term), ratios, q, certifiable)
        if tail is not None and tail <= tol * max(total, 1e-300):
            return total, truncation, tail, False
        row = row @ dm
    return total, truncation, math.nan, True


@dataclass(frozen=True)
class ScanAxis:
    """One varied dropout component: 0-based channel state, value range."""

    state: int
    lo: float = 0.0
    hi: float = 1.0

    def grid(self, resolution: int) -> np.ndarray:
        return np.linspace(self.lo, self.hi, resolution)


@dataclass(frozen=True)
class RegionScan:
    axes: tuple
    resolution: int
    grids: tuple  # per-axis value arrays
    margin: np.ndarray  # exact margins, shape (resolution,) * len(axes)
    margin_sufficient: np.ndarray
    mse: np.ndarray  # average error; inf = unbounded, nan = not computed

    @property
    def stable(self):
        return self.margin < 1.0

    @property
    def stable_sufficient(self):
        return self.margin_sufficient < 1.0

    def containment_violations(self) -> int:
        """Cells stable under the sufficient test but not the exact one."""
        return int(np.sum(self.stable_sufficient & ~self.stable))

    def to_csv(self) -> str:
        names = [f"d{ax.state + 1}" for ax in self.axes]
        header = ",".join(
            names
            + ["margin_exact", "stable_exact", "margin_sufficient",
               "stable_sufficient", "J"]
        )
        lines = [header]
        for idx in np.ndindex(self.margin.shape):
            coords = [f"{self.grids[k][idx[k]]:.6g}" for k in range(len(idx))]
            j = self.mse[idx]
            jtxt = "" if not math.isfinite(j) else f"{j:.6g}"
            lines.append(",".join(
                coords
                + [f"{self.margin[idx]:.6g}",
                   "true" if self.margin[idx] < 1.0 else "false",
                   f"{self.margin_sufficient[idx]:.6g}",
                   "true" if self.margin_sufficient[idx] < 1.0 else "false",
                   jtxt]
            ))
        return "\n".join(lines) + "\n"

    def to_svg(self, cell=4) -> str:
        """Heatmap of the exact margin (2-axis scans only).

        Color ramp: margin 0 -> green (0,160,0), 1 -> white, >= 2 -> red
        (180,0,0), linear in between; the stability boundary is the white
        band.  First axis runs left to right, second bottom to top.
        """
        if len(self.axes) != 2:
            raise ValueError("SVG heatmap requires exactly two axes")
        res = self.resolution
        size = res * cell
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
            f'height="{size}" viewBox="0 0 {size} {size}">'
        ]
        for i in range(res):
            for j in range(res):
                t = min(self.margin[i, j], 2.0) / 2.0
                if t <= 0.5:
                    f = t / 0.5
                    r, g, b = (int(0 + 255 * f), int(160 + 95 * f), int(0 + 255 * f))
                else:
                    f = (t - 0.5) / 0.5
                    r, g, b = (int(255 - 75 * f), int(255 * (1 - f)), int(255 * (1 - f)))
                x = i * cell
                y = size - (j + 1) * cell
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                    f'fill="rgb({r},{g},{b})"/>'
                )
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def region_scan(sys: LtiSystem, filt: SteadyStateFilter | None,
                channel_template: MarkovChannel, axes, resolution: int,
                compute_mse: bool = True, tol: float = 1e-12) -> RegionScan:
    """Stability verdicts (and average error) over a dropout grid.

    ``axes`` lists the varied dropout components; the remaining components
    keep the template's values.  Cells are independent and may be evaluated
    concurrently (capped by ME_THREADS); the output ordering is row-major
    over the grid regardless of scheduling.
    """
    axes = tuple(axes)
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if not axes:
        raise ValueError("at least one scan axis is required")
    for ax in axes:
        if not (0 <= ax.state < channel_template.M):
            raise ValueError(f"axis state {ax.state} out of range")
        if not (0.0 <= ax.lo <= ax.hi <= 1.0):
            raise ValueError("axis range must satisfy 0 <= lo <= hi <= 1")
    grids = tuple(ax.grid(resolution) for ax in axes)
    rho_a = spectral_radius(sys.A, tol).value
    sigma_a = largest_singular_value(sys.A, tol).value
    scale = max(1.0, rho_a ** 2)
    traces = None
    if compute_mse:
        if filt is None:
            raise ValueError("a steady-state filter is required to compute "
                             "the average error per cell")
        traces = ScaledTraceTable(sys, filt, scale)

    shape = (resolution,) * len(axes)
    margin = np.empty(shape)
    margin_sufficient = np.empty(shape)
    mse = np.full(shape, math.nan)

    def evaluate(idx):
        d = channel_template.d.copy()
        for k, ax in enumerate(axes):
            d[ax.state] = grids[k][idx[k]]
        cell = MarkovChannel(P=channel_template.P, d=d)
        channel_rho = channel_spectral_radius(cell, tol)
        m_exact = rho_a * rho_a * channel_rho
        m_suff = sigma_a * sigma_a * float(np.max(cell.P @ cell.d))
        j = math.nan
        if compute_mse:
            if m_exact >= 1.0:
                j = math.inf
            else:
                rep = StabilityReport(
                    rho_A=rho_a, sigma_A=sigma_a, channel_rho=channel_rho,
                    margin=m_exact, stable=True,
                    margin_sufficient=m_suff,
                    stable_sufficient=m_suff < 1.0,
                )
                j = analytic_mse(sys, filt, cell, report=rep,
                                 scaled_traces=traces).value
        return idx, m_exact, m_suff, j

    cells = list(np.ndindex(shape))
    for idx, m_exact, m_suff, j in parallel_map(evaluate, cells):
        margin[idx] = m_exact
        margin_sufficient[idx] = m_suff
        mse[idx] = j

    return RegionScan(
        axes=axes,
        resolution=resolution,
        grids=grids,
        margin=margin,
        margin_sufficient=margin_sufficient,
        mse=mse,
    )
