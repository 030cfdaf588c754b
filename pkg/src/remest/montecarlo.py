"""Trajectory-level simulation of the full estimation loop.

Each run simulates the plant, the sensor filter at steady state, the Markov
channel and the remote estimator, and reports the time-averaged error trace
two ways: through the exact per-slot conditional trace (a table lookup in
the age of the newest delivered packet, the low-variance estimator) and
through the realized squared estimation error (a noisy cross-check).

Two remote-side modes exist.  ``smart`` transmits sensor state estimates;
the remote error trace is then a deterministic function of the dropout run
length.  ``conventional`` transmits raw measurements; the remote side runs
a gated filter whose covariance has no closed form and is tracked
explicitly.  Both modes draw the channel from the same substream, so runs
with equal seeds see identical channel realizations and can be compared
pairwise.

Backend selection: the compiled kernel is used when built; set
``REMEST_BACKEND=python`` to force the pure-Python twin.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _simcore_py
from ._util import parallel_map
from .channel import MarkovChannel, require_valid, stationary_distribution
from .cycles import CycleModel, cycle_length_distribution
from .system import (
    ErrorTraceTable,
    LtiSystem,
    SATURATION_LIMIT,
    SteadyStateFilter,
    riccati_steady_state,
    sqrt_psd,
)

if os.environ.get("REMEST_BACKEND", "").lower() in ("python", "py"):
    _kernel = _simcore_py
else:
    try:
        from . import _simcore as _kernel
    except ImportError:
        _kernel = _simcore_py

BACKEND = _kernel.BACKEND

SMART = "smart"
CONVENTIONAL = "conventional"


@dataclass(frozen=True)
class SimulationConfig:
    """Shared settings for a batch of runs.

    initial_state: 0-based channel state, or "stationary" to draw it from
    the stationary distribution (one extra channel-stream uniform).
    """

    horizon: int = 100_000
    seeds: tuple = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
    initial_state: int | str = "stationary"
    mode: str = SMART
    record_trajectory: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("at least one seed is required")
        object.__setattr__(self, "seeds", seeds)
        if self.mode not in (SMART, CONVENTIONAL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if isinstance(self.initial_state, str):
            if self.initial_state != "stationary":
                raise ValueError("initial_state must be an index or 'stationary'")
        elif self.initial_state < 0:
            raise ValueError("initial_state must be >= 0")


@dataclass(frozen=True)
class RunResult:
    """Aggregates of one seeded run.

    empirical_J is math.inf when the run saturated (error trace exceeded
    the overflow guard); the partial averages then live in ``partial_J``.
    Histograms cover the simulated slots: delta_histogram[k] counts slots
    with age k+1, cycle_length_histogram[L] counts completed
    success-to-success segments of length L (index 0 unused).
    """

    seed: int
    mode: str
    horizon: int
    steps: int
    empirical_J: float
    empirical_J_sq_err: float
    delta_histogram: np.ndarray
    post_success_counts: np.ndarray
    cycle_length_histogram: np.ndarray
    prefix_length: int
    n_success: int
    saturated: bool
    partial_J: float
    trajectory: dict | None = None

    def summary_dict(self):
        return {
            "seed": self.seed,
            "mode": self.mode,
            "steps": self.steps,
            "empirical_J": "unbounded" if self.saturated else self.empirical_J,
            "empirical_J_sq_err": self.empirical_J_sq_err,
            "prefix_length": self.prefix_length,
            "n_success": self.n_success,
            "saturated": self.saturated,
        }


def _prepare_channel(channel: MarkovChannel):
    require_valid(channel)
    pcum = np.cumsum(channel.P, axis=1)
    pcum[:, -1] = 1.0
    picum = np.cumsum(stationary_distribution(channel))
    picum[-1] = 1.0
    return pcum, picum


def _run_mode(mode_id, sys, filt, channel, config, ctable):
    pcum, picum = _prepare_channel(channel)
    sqrt_w = sqrt_psd(sys.W, name="W")
    sqrt_v = sqrt_psd(sys.V, name="V")
    init = -1 if config.initial_state == "stationary" else int(config.initial_state)
    if init >= channel.M:
        raise ValueError(f"initial_state {init} out of range for {channel.M} states")

    def one(seed):
        raw = _kernel.simulate(
            mode_id, config.horizon, seed & ((1 << 64) - 1),
            sys.A, sys.C, filt.K, sqrt_w, sqrt_v, sys.W, sys.V, filt.P0,
            pcum, channel.d, picum, init, ctable, SATURATION_LIMIT,
            config.record_trajectory,
        )
        steps = raw["steps"]
        saturated = raw["saturated"]
        mean_trace = raw["sum_trace"] / steps if steps else math.nan
        mean_sq = raw["sum_sqerr"] / steps if steps else math.nan
        return RunResult(
            seed=seed,
            mode=SMART if mode_id == 0 else CONVENTIONAL,
            horizon=config.horizon,
            steps=steps,
            empirical_J=math.inf if saturated else mean_trace,
            empirical_J_sq_err=mean_sq,
            delta_histogram=raw["delta_counts"],
            post_success_counts=raw["post_counts"],
            cycle_length_histogram=raw["cycle_counts"],
            prefix_length=raw["prefix"],
            n_success=raw["n_success"],
            saturated=saturated,
            partial_J=mean_trace,
            trajectory=raw.get("trajectory"),
        )

    return parallel_map(one, config.seeds)


def error_trace_array(sys: LtiSystem, filt: SteadyStateFilter, horizon: int):
    """Finite prefix of the error-trace table, cut at saturation."""
    table = ErrorTraceTable(sys, filt)
    return table.as_array(horizon + 1)


def simulate_smart(sys: LtiSystem, filt: SteadyStateFilter,
                   channel: MarkovChannel, config: SimulationConfig):
    """One RunResult per seed for the state-estimate-forwarding sensor."""
    if config.mode != SMART:
        raise ValueError(f"config.mode is {config.mode!r}, expected {SMART!r}")
    ctable = error_trace_array(sys, filt, config.horizon)
    return _run_mode(0, sys, filt, channel, config, ctable)


def simulate_conventional(sys: LtiSystem, channel: MarkovChannel,
                          config: SimulationConfig,
                          filt: SteadyStateFilter | None = None):
    """One RunResult per seed for the raw-measurement sensor.

    The remote filter starts from the steady-state posterior so paired
    comparisons with the smart mode begin from the same uncertainty.
    The per-slot trace is the predicted (one-slot-delayed) covariance trace.
    """
    if config.mode != CONVENTIONAL:
        raise ValueError(
            f"config.mode is {config.mode!r}, expected {CONVENTIONAL!r}")
    if filt is None:
        filt = riccati_steady_state(sys)
    ctable = np.zeros(1)  # unused in this mode
    return _run_mode(1, sys, filt, channel, config, ctable)


@dataclass(frozen=True)
class EnsembleSummary:
    mean_J: float
    stderr_J: float
    ci95_low: float
    ci95_high: float
    n_runs: int
    n_saturated: int
    mean_J_sq_err: float
    total_cycles: int
    tv_post_success: float | None = None
    tv_cycle_length: float | None = None

    def as_dict(self):
        out = {
            "mean_J": self.mean_J,
            "stderr_J": self.stderr_J,
            "ci95": [self.ci95_low, self.ci95_high],
            "n_runs": self.n_runs,
            "n_saturated": self.n_saturated,
            "mean_J_sq_err": self.mean_J_sq_err,
            "total_cycles": self.total_cycles,
        }
        if self.tv_post_success is not None:
            out["tv_post_success"] = self.tv_post_success
        if self.tv_cycle_length is not None:
            out["tv_cycle_length"] = self.tv_cycle_length
        return out


def ensemble(results, channel: MarkovChannel | None = None,
             model: CycleModel | None = None,
             pmf_truncation: int = 50) -> EnsembleSummary:
    """Across-seed summary; optionally checks renewal statistics.

    With a channel and its cycle model, reports total-variation distances
    between the empirical post-success state frequencies and the stationary
    distribution, and between the empirical segment-length histogram and
    the analytic pmf truncated at ``pmf_truncation``.
    """
    results = list(results)
    if len(results) < 2:
        raise ValueError("ensemble needs at least two runs")
    live = [r for r in results if not r.saturated]
    if not live:
        raise ValueError("all runs saturated; no finite average to report")
    js = np.array([r.empirical_J for r in live])
    mean = float(np.mean(js))
    stderr = float(np.std(js, ddof=1) / math.sqrt(len(js))) if len(js) > 1 else 0.0
    mean_sq = float(np.mean([r.empirical_J_sq_err for r in live]))

    cycles = 0
    for r in results:
        cycles += int(np.sum(r.cycle_length_histogram))

    tv_post = tv_cycle = None
    if channel is not None and model is not None:
        post = np.zeros(channel.M, dtype=float)
        for r in results:
            post += r.post_success_counts
        total_post = post.sum()
        if total_post > 0:
            tv_post = 0.5 * float(np.sum(np.abs(post / total_post
                                                - model.beta_padded)))
        pmf = cycle_length_distribution(channel, model, pmf_truncation)
        emp = np.zeros(pmf_truncation + 1)
        for r in results:
            hist = r.cycle_length_histogram
            for length in range(1, hist.shape[0]):
                if hist[length]:
                    emp[min(length, pmf_truncation)] += hist[length]
        # index pmf_truncation collects all longer segments
        if cycles > 0:
            emp /= cycles
            pmf_tail = max(0.0, 1.0 - float(np.sum(pmf)))
            tv_cycle = 0.5 * (
                float(np.sum(np.abs(emp[1:pmf_truncation]
                                    - pmf[: pmf_truncation - 1])))
                + abs(emp[pmf_truncation] - (pmf[pmf_truncation - 1] + pmf_tail))
            )
    return EnsembleSummary(
        mean_J=mean,
        stderr_J=stderr,
        ci95_low=mean - 1.96 * stderr,
        ci95_high=mean + 1.96 * stderr,
        n_runs=len(results),
        n_saturated=len(results) - len(live),
        mean_J_sq_err=mean_sq,
        total_cycles=cycles,
        tv_post_success=tv_post,
        tv_cycle_length=tv_cycle,
    )


def trajectory_csv(result: RunResult) -> str:
    """Per-slot dump: ``t,channel_state,gamma,delta,trace_Pt``."""
    if result.trajectory is None:
        raise ValueError("run was not recorded; set record_trajectory")
    tr = result.trajectory
    lines = ["t,channel_state,gamma,delta,trace_Pt"]
    for t in range(result.steps):
        lines.append(
            f"{t},{int(tr['channel_state'][t]) + 1},{int(tr['gamma'][t])},"
            f"{int(tr['delta'][t])},{tr['trace'][t]:.6g}"
        )
    return "\n".join(lines) + "\n"
