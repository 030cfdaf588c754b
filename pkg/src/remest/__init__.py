"""Remote state estimation over finite-state Markov fading channels.

Library layout:

* ``linalg``      dense small-matrix primitives (spectral radius, rank, ...)
* ``system``      plant model, steady-state sensor filter, error traces
* ``channel``     Markov packet-drop channel and SNR-based dropouts
* ``cycles``      stability margins, analytic average error, region scans
* ``montecarlo``  seeded trajectory simulation (compiled or pure Python)
* ``bounds``      numerical matrix-power envelope checks
* ``cli``         the ``remest`` command-line front end
"""

from .channel import (
    MarkovChannel,
    PostSuccessSet,
    channel_from_snr,
    dropout_from_snr,
    post_success_set,
    sample_step,
    stationary_distribution,
)
from .cycles import (
    CycleModel,
    MseResult,
    RegionScan,
    ScanAxis,
    StabilityReport,
    analytic_mse,
    cycle_length_pmf,
    cycle_model,
    region_scan,
    stability_margin,
)
from .linalg import SpectralEstimate, largest_singular_value, perron_root, \
    rank, solve_linear, null_vector, spectral_radius
from .montecarlo import (
    BACKEND,
    EnsembleSummary,
    RunResult,
    SimulationConfig,
    ensemble,
    simulate_conventional,
    simulate_smart,
)
from .system import (
    ErrorTraceTable,
    LtiSystem,
    SteadyStateFilter,
    error_trace,
    gated_kalman_step,
    holding_map,
    riccati_steady_state,
    validate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
