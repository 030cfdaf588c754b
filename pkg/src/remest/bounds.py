"""Numerical verification of matrix-power envelopes on concrete matrices.

The checks here certify, over a finite index range, the asymptotic
element-wise behavior of matrix powers that the stability analysis relies
on: squared entries of Z^i stay under kappa*(rho+eps)^(2i); some entry of
Z^i clears eta*rho^i within every window of a small period; the same for
powers hitting a square-rooted PSD factor, for the dropout-weighted channel
matrix, and for the error-trace function.

All power sequences are tracked as a normalized matrix plus a log-scale
accumulator, so indices in the hundreds are safe even when rho(Z) > 1.
Constants are fitted from the data (the theory only asserts existence) and
then re-verified exhaustively over the declared range in a separate pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import MarkovChannel, require_valid
from .cycles import channel_spectral_radius
from .linalg import as_square, rank, spectral_radius
from .system import LtiSystem, SteadyStateFilter, controllability_matrix, sqrt_psd

NEG_INF = float("-inf")

#: Tolerated downward drift (per index) of the window statistic before a
#: witness is rejected as genuinely decaying rather than flat.
SLOPE_TOL = 0.01


class PreconditionError(ValueError):
    """A check's applicability condition fails; the check is refused."""


@dataclass(frozen=True)
class EnvelopeFit:
    """Fitted envelope for one power sequence.

    base      the exponential base of the envelope
    constant  fitted multiplicative constant (kappa or eta)
    burn_in   first index from which the inequality holds
    period    window length (1 = plain asymptotic bound)
    witness   (row, col) entry the bound refers to, or None for max-entry
    passed    whether a valid fit exists within the range
    detail    short human-readable note
    """

    base: float
    constant: float
    burn_in: int
    period: int
    witness: tuple | None
    passed: bool
    detail: str = ""

    def as_dict(self):
        return {
            "base": self.base,
            "constant": self.constant,
            "burn_in": self.burn_in,
            "period": self.period,
            "witness": None if self.witness is None
            else [self.witness[0] + 1, self.witness[1] + 1],
            "passed": self.passed,
            "detail": self.detail,
        }


def power_logmags(z, last: int, right=None):
    """log|[Z^i B]_{j,k}| for i = 1..last (B defaults to the identity).

    Returns an array of shape (last, rows, cols); exact zeros map to -inf.
    The running product is renormalized by its largest entry whenever it
    leaves a safe range, with the scale kept in a log accumulator.
    """
    z = as_square(z)
    y = z.copy() if right is None else z @ np.asarray(right, dtype=float)
    out = np.empty((last,) + y.shape)
    log_scale = 0.0
    with np.errstate(divide="ignore"):
        for i in range(last):
            out[i] = np.log(np.abs(y)) + log_scale
            if i + 1 < last:
                y = z @ y
                peak = float(np.max(np.abs(y)))
                if peak == 0.0:
                    out[i + 1:] = NEG_INF
                    break
                if peak > 1e100 or peak < 1e-100:
                    y /= peak
                    log_scale += math.log(peak)
    return out


def matrix_power_logmag(z, i: int):
    """log|[Z^i]_{j,k}| via binary exponentiation (independent recomputation
    used to cross-check the iterated-product trail)."""
    z = as_square(z)
    if i < 1:
        raise ValueError("power must be >= 1")
    result = None
    result_log = 0.0
    base = z.copy()
    base_log = 0.0
    k = i
    while k:
        if k & 1:
            result = base.copy() if result is None else result @ base
            result_log += base_log
            peak = float(np.max(np.abs(result)))
            if peak > 0:
                result /= peak
                result_log += math.log(peak)
        k >>= 1
        if k:
            base = base @ base
            base_log *= 2
            peak = float(np.max(np.abs(base)))
            if peak > 0:
                base /= peak
                base_log += math.log(peak)
    with np.errstate(divide="ignore"):
        return np.log(np.abs(result)) + result_log


def _fit_upper(seq_log, base_log):
    """Smallest log-constant and burn-in bounding seq(i) < kappa * base^i.

    The burn-in is the last index where the ratio sequence attains its
    supremum; the fit fails when that supremum sits at the end of the
    range (no evidence the ratio has turned over).
    """
    n = seq_log.shape[0]
    ratios = seq_log - base_log * np.arange(1, n + 1)
    finite = np.isfinite(ratios)
    if not finite.any():
        return -690.0, 1, True  # identically zero sequence: any constant works
    peak = float(np.max(ratios[finite]))
    burn_in = int(np.max(np.nonzero(ratios >= peak - 1e-12)[0])) + 1
    # verify pass, separate from the fit: the strict bound must hold at
    # every index past the burn-in
    passed = burn_in < n and bool(np.all(ratios[burn_in:] < peak + 1e-9))
    return peak, burn_in, passed


def _window_stat(seq_log, base_log, period):
    """m(i) = max over the window {i..i+period-1} of log seq(j) - i*log base."""
    n = seq_log.shape[0]
    count = n - period + 1
    m = np.full(count, NEG_INF)
    for o in range(period):
        m = np.maximum(m, seq_log[o:o + count])
    return m - base_log * np.arange(1, count + 1)


def _fit_periodic_lower(seq_log, base_log, period):
    """Largest log-constant eta with windowed seq >= eta * base^i past a
    burn-in, plus a trend test rejecting genuinely decaying sequences."""
    m = _window_stat(seq_log, base_log, period)
    count = m.shape[0]
    if count < 4:
        return NEG_INF, count, False
    lo = count // 2
    tail = m[lo:]
    if not np.all(np.isfinite(tail)):
        return NEG_INF, count, False
    eta = float(np.min(tail))
    idx = np.arange(tail.shape[0], dtype=float)
    slope = float(np.polyfit(idx, tail, 1)[0]) if tail.shape[0] > 1 else 0.0
    if slope < -SLOPE_TOL:
        return eta, count, False
    # burn-in: first window index from which every later window clears eta
    suffix_min = np.minimum.accumulate(m[::-1])[::-1]
    ok = suffix_min >= eta - 1e-12
    burn_in = int(np.argmax(ok)) + 1 if ok.any() else count
    # verify pass, separate from the fit
    if not np.all(m[burn_in - 1:] >= eta - 1e-9):
        return eta, burn_in, False
    return eta, burn_in, True


def check_upper_bound(z, epsilon: float, index_range=(1, 200)) -> EnvelopeFit:
    """Squared entries of Z^i against kappa * (rho(Z) + epsilon)^(2i)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    z = as_square(z)
    first, last = index_range
    if first != 1 or last < 8:
        raise ValueError("index_range must start at 1 and cover >= 8 powers")
    rho = spectral_radius(z).value
    logs = power_logmags(z, last)
    seq = 2.0 * np.max(logs.reshape(last, -1), axis=1)
    kappa_log, burn_in, passed = _fit_upper(seq, 2.0 * math.log(rho + epsilon))
    return EnvelopeFit(
        base=(rho + epsilon) ** 2,
        constant=math.exp(min(kappa_log + 1e-9, 700.0)),
        burn_in=burn_in,
        period=1,
        witness=None,
        passed=passed,
        detail=f"rho={rho:.12g}",
    )


def _lower_bound_search(logs, rho, power, pairs, max_period):
    """First (minimal-period) passing witness among candidate entries."""
    best = None
    for period in range(1, max_period + 1):
        for (j, k) in pairs:
            seq = power * logs[:, j, k]
            eta_log, burn_in, passed = _fit_periodic_lower(
                seq, power * math.log(rho), period)
            if passed:
                return EnvelopeFit(
                    base=rho ** power,
                    constant=math.exp(max(eta_log, -690.0)),
                    burn_in=burn_in,
                    period=period,
                    witness=(j, k),
                    passed=True,
                )
            if best is None:
                best = EnvelopeFit(
                    base=rho ** power,
                    constant=0.0,
                    burn_in=0,
                    period=period,
                    witness=(j, k),
                    passed=False,
                    detail="no witness cleared the envelope in range",
                )
    return best


def check_periodic_lower_bound(z, index_range=(1, 200)) -> EnvelopeFit:
    """Some squared entry of Z^i clears eta * rho(Z)^(2i) periodically.

    Searches periods in increasing order (so the reported period is
    minimal) and entries in row-major order; a failed result means no
    witness was found within the range, which for short ranges only says
    the range was too short.
    """
    z = as_square(z)
    first, last = index_range
    if first != 1 or last < 8:
        raise ValueError("index_range must start at 1 and cover >= 8 powers")
    rho = spectral_radius(z).value
    if rho <= 0.0:
        raise ValueError("spectral radius must be positive for a lower bound")
    logs = power_logmags(z, last)
    n = z.shape[0]
    pairs = [(j, k) for j in range(n) for k in range(n)]
    return _lower_bound_search(logs, rho, 2, pairs, n)


def check_lower_bound_with_q(z, q, index_range=(1, 200)) -> EnvelopeFit:
    """Like check_periodic_lower_bound but on Z^i sqrt(Q).

    Requires (Z, sqrt(Q)) controllable; raises PreconditionError otherwise
    (the claim does not apply and must not be reported as a pass or fail).
    """
    z = as_square(z)
    root = sqrt_psd(q, name="Q")
    n = z.shape[0]
    if rank(controllability_matrix(z, root)) < n:
        raise PreconditionError(
            "(Z, sqrt(Q)) is not controllable; lower bound not applicable")
    first, last = index_range
    if first != 1 or last < 8:
        raise ValueError("index_range must start at 1 and cover >= 8 powers")
    rho = spectral_radius(z).value
    if rho <= 0.0:
        raise ValueError("spectral radius must be positive for a lower bound")
    logs = power_logmags(z, last, right=root)
    pairs = [(j, k) for j in range(n) for k in range(n)]
    return _lower_bound_search(logs, rho, 2, pairs, n)


check_lower_bound_with_Q = check_lower_bound_with_q


@dataclass(frozen=True)
class DmPropertiesReport:
    """Checks on powers of the dropout-weighted transition matrix."""

    rho: float
    rho_below_one: bool
    zero_dropout_states: tuple
    all_entries_checked: bool  # True when no state has zero dropout
    entry_fits_passed: bool
    worst_entry_fit: EnvelopeFit | None
    product_fit: EnvelopeFit | None  # on (DM)^i (I-D) M
    passed: bool

    def as_dict(self):
        return {
            "rho": self.rho,
            "rho_below_one": self.rho_below_one,
            "zero_dropout_states": [s + 1 for s in self.zero_dropout_states],
            "all_entries_checked": self.all_entries_checked,
            "entry_fits_passed": self.entry_fits_passed,
            "worst_entry_fit": None if self.worst_entry_fit is None
            else self.worst_entry_fit.as_dict(),
            "product_fit": None if self.product_fit is None
            else self.product_fit.as_dict(),
            "passed": self.passed,
        }


def check_dm_properties(channel: MarkovChannel,
                        index_range=(1, 200)) -> DmPropertiesReport:
    """Verify the power behavior of diag(d) @ P.

    The dominant eigenvalue must sit strictly below one.  With every
    dropout positive, every entry of the power sequence must clear a
    periodic lower envelope at that eigenvalue; with some dropouts zero,
    a witness must exist from a nonzero-dropout row into a zero-dropout
    column.  The same lower envelope must hold for some entry of
    (DM)^i (I-D) M.  Channels with all dropouts zero or all one are
    outside the scope of these properties and are refused.
    """
    require_valid(channel)
    d = channel.d
    if np.all(d == 0.0):
        raise PreconditionError("every state always succeeds; power "
                                "properties are vacuous")
    if np.all(d == 1.0):
        raise PreconditionError("every state always drops; no success "
                                "process exists")
    first, last = index_range
    if first != 1 or last < 8:
        raise ValueError("index_range must start at 1 and cover >= 8 powers")
    dm = channel.dropout_scaled()
    rho = channel_spectral_radius(channel)
    rho_ok = rho < 1.0 - 1e-9
    zero_states = tuple(int(i) for i in np.nonzero(d == 0.0)[0])
    m = channel.M
    logs = power_logmags(dm, last)
    if not zero_states:
        worst = None
        all_ok = True
        for j in range(m):
            for k in range(m):
                fit = _lower_bound_search(logs, rho, 1, [(j, k)], m)
                if not fit.passed:
                    all_ok = False
                    worst = fit
                    break
                if worst is None or fit.constant < worst.constant:
                    worst = fit
            if not all_ok:
                break
        entry_ok, worst_fit = all_ok, worst
        all_checked = True
    else:
        nonzero = [j for j in range(m) if d[j] != 0.0]
        pairs = [(j, k) for j in nonzero for k in zero_states]
        fit = _lower_bound_search(logs, rho, 1, pairs, m)
        entry_ok, worst_fit = fit.passed, fit
        all_checked = False
    prod_logs = power_logmags(dm, last, right=channel.success_scaled())
    prod_pairs = [(j, k) for j in range(m) for k in range(m)]
    prod_fit = _lower_bound_search(prod_logs, rho, 1, prod_pairs, m)
    return DmPropertiesReport(
        rho=rho,
        rho_below_one=rho_ok,
        zero_dropout_states=zero_states,
        all_entries_checked=all_checked,
        entry_fits_passed=entry_ok,
        worst_entry_fit=worst_fit,
        product_fit=prod_fit,
        passed=rho_ok and entry_ok and prod_fit.passed,
    )


@dataclass(frozen=True)
class TraceEnvelopeReport:
    """Upper and lower exponential envelopes of the error-trace function."""

    rho_squared: float
    upper: EnvelopeFit
    lower: EnvelopeFit
    passed: bool

    def as_dict(self):
        return {
            "rho_squared": self.rho_squared,
            "upper": self.upper.as_dict(),
            "lower": self.lower.as_dict(),
            "passed": self.passed,
        }


def check_c_envelopes(sys: LtiSystem, filt: SteadyStateFilter, epsilon: float,
                      index_range=(1, 200)) -> TraceEnvelopeReport:
    """Error traces against kappa*(rho^2+eps)^i above and eta*rho^(2i) below.

    The lower envelope holds with period one because the trace sequence is
    monotone nondecreasing.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    first, last = index_range
    if first != 1 or last < 8:
        raise ValueError("index_range must start at 1 and cover >= 8 powers")
    rho = spectral_radius(sys.A).value
    r2 = rho * rho
    scale = max(1.0, r2)
    # scaled recursion keeps the traces representable at large i
    from .cycles import ScaledTraceTable

    table = ScaledTraceTable(sys, filt, scale).grow(last)
    log_scale = math.log(scale)
    seq = np.array([
        math.log(v) + (i + 1) * log_scale if v > 0 else NEG_INF
        for i, v in enumerate(table.values[:last])
    ])
    kappa_log, upper_burn, upper_ok = _fit_upper(seq, math.log(r2 + epsilon))
    upper = EnvelopeFit(
        base=r2 + epsilon,
        constant=math.exp(min(kappa_log + 1e-9, 700.0)),
        burn_in=upper_burn,
        period=1,
        witness=None,
        passed=upper_ok,
    )
    if rho <= 0.0:
        raise ValueError("spectral radius must be positive for the lower "
                         "envelope")
    eta_log, lower_burn, lower_ok = _fit_periodic_lower(seq, math.log(r2), 1)
    lower = EnvelopeFit(
        base=r2,
        constant=math.exp(max(eta_log, -690.0)),
        burn_in=lower_burn,
        period=1,
        witness=None,
        passed=lower_ok,
    )
    return TraceEnvelopeReport(
        rho_squared=r2,
        upper=upper,
        lower=lower,
        passed=upper_ok and lower_ok,
    )
