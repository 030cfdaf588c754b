"""Throughput comparison of the compiled and pure-Python trajectory kernels.

Runs the same seeded simulation through both backends and reports slots per
second, plus a cross-check that the outputs agree exactly.

Usage: python benchmarks/bench_backends.py [--horizon N] [--seeds K]
"""

import argparse
import time

import numpy as np

from remest import LtiSystem, MarkovChannel, riccati_steady_state
from remest import _simcore_py
from remest.montecarlo import _prepare_channel, error_trace_array
from remest.system import sqrt_psd

try:
    from remest import _simcore
except ImportError:
    _simcore = None


def pendubot():
    a = np.array([[1.0058, 0.0150, -0.0016, 0.0000],
                  [0.7808, 1.0058, -0.2105, -0.0016],
                  [-0.0060, 0.0000, 1.0077, 0.0150],
                  [-0.7962, -0.0060, 1.0294, 1.0077]])
    c = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
    u = np.array([0.003, 1.0, -0.005, -2.150])
    return LtiSystem(A=a, C=c, W=np.outer(u, u), V=0.001 * np.eye(2))


def run(kernel, mode, horizon, seeds, args):
    t0 = time.perf_counter()
    outs = [kernel.simulate(mode, horizon, s, *args) for s in seeds]
    dt = time.perf_counter() - t0
    return outs, dt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=int, default=100_000)
    ap.add_argument("--seeds", type=int, default=3)
    ns = ap.parse_args()

    sys = pendubot()
    filt = riccati_steady_state(sys)
    channel = MarkovChannel(P=[[0.1, 0.9], [0.5, 0.5]], d=[0.8, 0.1])
    pcum, picum = _prepare_channel(channel)
    ctable = error_trace_array(sys, filt, ns.horizon)
    args = (sys.A, sys.C, filt.K, sqrt_psd(sys.W), sqrt_psd(sys.V),
            sys.W, sys.V, filt.P0, pcum, channel.d, picum, -1, ctable,
            1e250, False)
    seeds = list(range(1, ns.seeds + 1))
    total = ns.horizon * ns.seeds

    print(f"{ns.seeds} seeds x {ns.horizon} slots")
    for mode, label in ((0, "smart"), (1, "conventional")):
        py_out, py_dt = run(_simcore_py, mode, ns.horizon, seeds, args)
        line = f"{label:13s} python   {total / py_dt / 1e6:8.2f} Mslots/s"
        print(line)
        if _simcore is not None:
            c_out, c_dt = run(_simcore, mode, ns.horizon, seeds, args)
            agree = all(
                a["sum_trace"] == b["sum_trace"]
                and a["sum_sqerr"] == b["sum_sqerr"]
                for a, b in zip(py_out, c_out)
            )
            print(f"{label:13s} compiled {total / c_dt / 1e6:8.2f} Mslots/s "
                  f"(speedup {py_dt / c_dt:6.1f}x, outputs identical: {agree})")
        else:
            print(f"{label:13s} compiled kernel not built")


if __name__ == "__main__":
    main()
