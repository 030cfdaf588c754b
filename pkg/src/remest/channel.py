"""Finite-state Markov fading channel with state-dependent packet dropouts.

The channel holds an M-state time-homogeneous chain with row-stochastic
transition matrix P (``P[i, j]`` = probability of moving from state i to
state j) and a per-state dropout probability vector d.  The literature often
writes the transition matrix column-wise; everything in this package uses
the row convention, with the dropout matrix applied as a left diagonal
scaling, so ``diag(d) @ P`` scales row i by d[i].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, as_square, null_vector
from .rng import SplitMix64

_ROW_SUM_TOL = 1e-12


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class MarkovChannel:
    """M-state Markov packet-drop channel.

    P     (M, M) row-stochastic transition matrix
    d     (M,) dropout probability per state, each in [0, 1]
    gains optional (M,) per-state SNRs the dropouts were derived from
    """

    P: np.ndarray
    d: np.ndarray
    gains: np.ndarray | None = None

    def __post_init__(self):
        p = as_square(self.P, "transition matrix")
        d = np.asarray(self.d, dtype=float).reshape(-1)
        if d.shape[0] != p.shape[0]:
            raise ChannelError(
                f"dropout vector has length {d.shape[0]}, expected {p.shape[0]}"
            )
        if not np.all(np.isfinite(d)):
            raise ChannelError("dropout probabilities must be finite")
        object.__setattr__(self, "P", p)
        object.__setattr__(self, "d", d)
        if self.gains is not None:
            g = np.asarray(self.gains, dtype=float).reshape(-1)
            if g.shape[0] != p.shape[0]:
                raise ChannelError("gains length does not match state count")
            object.__setattr__(self, "gains", g)

    @property
    def M(self):
        return self.P.shape[0]

    @property
    def D(self):
        return np.diag(self.d)

    def dropout_scaled(self):
        """diag(d) @ P — the dropout-weighted transition matrix."""
        return self.d[:, None] * self.P

    def success_scaled(self):
        """diag(1 - d) @ P — the success-weighted transition matrix."""
        return (1.0 - self.d)[:, None] * self.P


@dataclass(frozen=True)
class ChannelReport:
    row_stochastic: bool
    probabilities_in_range: bool
    irreducible: bool
    aperiodic: bool
    problems: tuple

    @property
    def valid(self):
        """Usable channel: stochastic, in-range and irreducible."""
        return self.row_stochastic and self.probabilities_in_range and self.irreducible

    @property
    def ergodic(self):
        return self.valid and self.aperiodic


@dataclass(frozen=True)
class PostSuccessSet:
    """Channel states reachable in the slot right after a success."""

    indices: tuple  # 0-based, ascending

    @property
    def size(self):
        return len(self.indices)


def _reach(bool_mat, power):
    r = np.eye(bool_mat.shape[0], dtype=bool) | bool_mat
    out = r
    for _ in range(power):
        out = out @ r
    return out


def validate(channel: MarkovChannel) -> ChannelReport:
    """Check stochasticity, ranges, irreducibility and aperiodicity.

    Aperiodicity is tested by primitivity: some power of P up to
    (M-1)^2 + 1 must be entrywise positive.  A periodic-but-irreducible
    chain is flagged (not rejected); a reducible one is unusable.
    """
    p, d, m = channel.P, channel.d, channel.M
    problems = []
    in_range = True
    for i in range(m):
        for j in range(m):
            if not (0.0 <= p[i, j] <= 1.0):
                in_range = False
                problems.append(f"transition[{i + 1}][{j + 1}] = {p[i, j]!r} "
                                "outside [0, 1]")
    for i in range(m):
        if not (0.0 <= d[i] <= 1.0):
            in_range = False
            problems.append(f"dropout[{i + 1}] = {d[i]!r} outside [0, 1]")
    row_stochastic = True
    for i in range(m):
        s = float(np.sum(p[i]))
        if abs(s - 1.0) > _ROW_SUM_TOL:
            row_stochastic = False
            problems.append(f"transition row {i + 1} sums to {s!r}")
    irreducible = aperiodic = False
    if in_range and row_stochastic:
        pos = p > 0.0
        irreducible = bool(np.all(_reach(pos, m)))
        if not irreducible:
            problems.append("chain is reducible")
        else:
            q = pos.copy()
            aperiodic = False
            for _ in range((m - 1) * (m - 1) + 1):
                if np.all(q):
                    aperiodic = True
                    break
                q = q @ pos
            if not aperiodic:
                problems.append("chain is periodic (not ergodic)")
    return ChannelReport(
        row_stochastic=row_stochastic,
        probabilities_in_range=in_range,
        irreducible=irreducible,
        aperiodic=aperiodic,
        problems=tuple(problems),
    )


def require_valid(channel: MarkovChannel) -> ChannelReport:
    report = validate(channel)
    if not report.valid:
        raise ChannelError("; ".join(report.problems))
    return report


def stationary_distribution(channel: MarkovChannel) -> np.ndarray:
    """Unit-1-norm left fixed vector of P (unique for irreducible chains)."""
    require_valid(channel)
    pi = null_vector(np.eye(channel.M) - channel.P.T)
    return pi


def post_success_set(channel: MarkovChannel) -> PostSuccessSet:
    """States j with a positive success-weighted inbound transition.

    State j is post-success exactly when column j of diag(1-d) @ P has a
    positive entry.  Empty only when every state always drops, in which case
    cycle analysis does not apply and an error is raised.
    """
    require_valid(channel)
    cols = np.max(channel.success_scaled(), axis=0)
    indices = tuple(int(j) for j in np.nonzero(cols > 0.0)[0])
    if not indices:
        raise ChannelError(
            "no post-success states: every state drops with probability 1"
        )
    return PostSuccessSet(indices=indices)


def dropout_from_snr(snr: float, blocklength: int, rate: float) -> float:
    """Packet drop probability of a finite-length packet at a given SNR.

    Normal approximation for an AWGN channel at blocklength ``blocklength``
    symbols and ``rate`` bits per symbol:

        eps = Q( sqrt(blocklength / nu) * (cap - rate) )

    with ``cap = log2(1 + snr)`` and dispersion
    ``nu = snr (2 + snr) / (1 + snr)^2 * (log2 e)^2``.  Q is the standard
    normal tail ``0.5 * erfc(x / sqrt 2)``; the result is clamped to [0, 1].
    """
    if snr <= 0:
        raise ChannelError("snr must be positive")
    if blocklength < 1:
        raise ChannelError("blocklength must be >= 1")
    if rate <= 0:
        raise ChannelError("rate must be positive")
    cap = math.log2(1.0 + snr)
    nu = snr * (2.0 + snr) / (1.0 + snr) ** 2 * math.log2(math.e) ** 2
    x = math.sqrt(blocklength / nu) * (cap - rate)
    eps = 0.5 * math.erfc(x / math.sqrt(2.0))
    return min(1.0, max(0.0, eps))


def channel_from_snr(P, gains, blocklength: int, rate: float) -> MarkovChannel:
    """Build a channel whose dropouts follow from per-state SNRs."""
    gains = np.asarray(gains, dtype=float).reshape(-1)
    d = np.array([dropout_from_snr(g, blocklength, rate) for g in gains])
    return MarkovChannel(P=as_matrix(P, "transition matrix"), d=d, gains=gains)


def sample_step(channel: MarkovChannel, current_state: int, rng: SplitMix64):
    """Advance the channel one slot.

    Draw order is fixed: the dropout for the current slot first, then the
    transition to the next state.  Returns ``(next_state, dropped)``.
    """
    if not 0 <= current_state < channel.M:
        raise ChannelError(f"state {current_state} out of range")
    dropped = rng.uniform() < channel.d[current_state]
    r = rng.uniform()
    acc = 0.0
    nxt = channel.M - 1
    for j in range(channel.M):
        acc += channel.P[current_state, j]
        if r < acc:
            nxt = j
            break
    return nxt, dropped
