"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import pendubot_matrices
from remest import (
    LtiSystem,
    MarkovChannel,
    ScanAxis,
    SimulationConfig,
    analytic_mse,
    cycle_model,
    dropout_from_snr,
    ensemble,
    largest_singular_value,
    region_scan,
    riccati_steady_state,
    simulate_conventional,
    simulate_smart,
    spectral_radius,
    stability_margin,
)
from remest import bounds as bounds_mod
from remest.bounds import PreconditionError
from remest.cli import load_config, main
from remest.cycles import channel_spectral_radius


def verdict(num, ok, detail):
    line = f"ACCEPTANCE {num:02d} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    return ok


@pytest.fixture(scope="module")
def default_runs(plant, filt, default_channel):
    """Ten seeds at the full default horizon, shared by criteria 6 and 7."""
    cfg = SimulationConfig(horizon=100_000, seeds=tuple(range(1, 11)))
    started = time.perf_counter()
    runs = simulate_smart(plant, filt, default_channel, cfg)
    return runs, time.perf_counter() - started


def test_criterion_01_plant_spectra(plant):
    started = time.perf_counter()
    rho = spectral_radius(plant.A).value
    sigma = largest_singular_value(plant.A).value
    elapsed = time.perf_counter() - started
    ok = abs(rho - 1.15) <= 0.01 and abs(sigma - 2.00) <= 0.02 \
        and elapsed < 1.0
    assert verdict(1, ok, f"rho(A)={rho:.4f} (1.15±0.01), "
                          f"sigma(A)={sigma:.4f} (2.00±0.02), "
                          f"{elapsed * 1e3:.1f} ms")


def test_criterion_02_snr_dropout_values():
    # Reference values for the two-state SNR example.  The dropout formula
    # as defined does not reproduce them (the standard normal tail at the
    # stated SNRs gives 0.0110 and 0.6099); the assertion is kept as stated
    # rather than weakened to fit.
    d1 = dropout_from_snr(300.0, 200, 8.0)
    d2 = dropout_from_snr(250.0, 200, 8.0)
    ok = abs(d1 - 0.0039) <= 0.0005 and abs(d2 - 0.2584) <= 0.003
    assert verdict(2, ok, f"d1={d1:.4f} (want 0.0039±0.0005), "
                          f"d2={d2:.4f} (want 0.2584±0.003)")


def test_criterion_03_region_containment(plant, filt):
    started = time.perf_counter()
    a1 = np.array(load_config("fig3b.json").system.A)
    systems = {
        "a": plant,
        "b": LtiSystem(A=a1, C=plant.C, W=plant.W, V=plant.V),
        "c": plant,
        "d": plant,
    }
    transitions = {
        "a": [[0.1, 0.9], [0.5, 0.5]],
        "b": [[0.1, 0.9], [0.5, 0.5]],
        "c": [[0.1, 0.9], [0.9, 0.1]],
        "d": [[0.9, 0.1], [0.1, 0.9]],
    }
    ok = True
    details = []
    for key in "abcd":
        template = MarkovChannel(P=transitions[key], d=[0.8, 0.1])
        scan = region_scan(systems[key], None, template,
                           [ScanAxis(0), ScanAxis(1)], 101,
                           compute_mse=False)
        violations = scan.containment_violations()
        exact = int(np.sum(scan.stable))
        sufficient = int(np.sum(scan.stable_sufficient))
        ok &= violations == 0 and sufficient <= exact - 1
        details.append(f"{key}: viol={violations} "
                       f"stable {sufficient}<{exact}")
    elapsed = time.perf_counter() - started
    ok &= elapsed < 30.0
    assert verdict(3, ok, "; ".join(details) + f"; {elapsed:.1f} s")


def test_criterion_04_special_case_closed_forms(plant):
    rng = np.random.default_rng(2024)
    rho2 = spectral_radius(plant.A, tol=1e-12).value ** 2
    worst = 0.0
    for k in range(500):
        m = int(rng.integers(2, 5))
        pi = rng.dirichlet(np.ones(m))
        d = rng.random(m) if k % 2 else np.full(m, float(rng.random()))
        rep = stability_margin(plant, MarkovChannel(P=np.tile(pi, (m, 1)),
                                                    d=d))
        worst = max(worst, abs(rep.margin - rho2 * float(pi @ d)))
    worst_onoff = 0.0
    for _ in range(500):
        p = rng.random((2, 2)) + 1e-3
        p /= p.sum(axis=1, keepdims=True)
        rep = stability_margin(plant, MarkovChannel(P=p, d=[0.0, 1.0]))
        worst_onoff = max(worst_onoff, abs(rep.margin - rho2 * p[1, 1]))
    ok = worst <= 1e-9 and worst_onoff <= 1e-9
    assert verdict(4, ok, f"memoryless max err {worst:.2e}, "
                          f"on-off max err {worst_onoff:.2e} (<= 1e-9)")


def test_criterion_05_success_kernel_structure():
    rng = np.random.default_rng(7)
    worst_row = worst_beta = 0.0
    zero_columns_exact = True
    for k in range(1000):
        m = int(rng.integers(2, 7))
        if k % 10 == 0 and m >= 3:
            # structured chain with an unreachable post-success state:
            # state m only enters from state 2, which always drops
            p = rng.random((m, m)) + 0.05
            p[:, m - 1] = 0.0
            p[1, m - 1] = 0.5
            p /= p.sum(axis=1, keepdims=True)
            d = rng.random(m)
            d[1] = 1.0
        else:
            p = rng.random((m, m)) + 0.02
            p /= p.sum(axis=1, keepdims=True)
            d = rng.random(m)
            if rng.random() < 0.3:
                d[rng.integers(0, m)] = 1.0
            if rng.random() < 0.2:
                d[rng.integers(0, m)] = 0.0
            if np.all(d == 1.0):
                d[0] = 0.3
        model = cycle_model(MarkovChannel(P=p, d=d))
        worst_row = max(worst_row,
                        float(np.max(np.abs(model.G.sum(axis=1) - 1.0))))
        outside = [j for j in range(m)
                   if j not in model.post_success.indices]
        if outside and np.any(model.G[:, outside] != 0.0):
            zero_columns_exact = False
        worst_beta = max(worst_beta,
                         float(np.max(np.abs(model.beta @ model.Gp
                                             - model.beta))))
    ok = worst_row <= 1e-10 and worst_beta <= 1e-10 and zero_columns_exact
    assert verdict(5, ok, f"1000 channels: max row-sum err {worst_row:.2e}, "
                          f"max stationary resid {worst_beta:.2e}, "
                          f"outside columns exactly zero: "
                          f"{zero_columns_exact}")


def test_criterion_06_analytic_vs_simulated(plant, filt, default_channel,
                                            default_runs):
    runs, sim_seconds = default_runs
    summary = ensemble(runs)
    target = analytic_mse(plant, filt, default_channel).value
    gap = abs(summary.mean_J - target) / target
    ok = gap < 0.05 and sim_seconds < 120.0
    assert verdict(6, ok, f"analytic J={target:.4f}, simulated "
                          f"J={summary.mean_J:.4f} ± {summary.stderr_J:.4f} "
                          f"(stderr), gap={gap:.3%} (<5%), "
                          f"10x100k slots in {sim_seconds:.1f} s")


def test_criterion_07_renewal_statistics(default_channel, default_runs):
    runs, _ = default_runs
    model = cycle_model(default_channel)
    summary = ensemble(runs, channel=default_channel, model=model,
                       pmf_truncation=50)
    ok = summary.total_cycles >= 100_000 \
        and summary.tv_post_success < 0.02 \
        and summary.tv_cycle_length < 0.02
    assert verdict(7, ok, f"{summary.total_cycles} cycles, "
                          f"TV(post-success)={summary.tv_post_success:.5f}, "
                          f"TV(length)={summary.tv_cycle_length:.5f} (<0.02)")


def test_criterion_08_sensor_mode_ordering(plant, filt):
    grid = np.linspace(0.05, 0.6, 5)
    smart_cfg = SimulationConfig(horizon=20_000, seeds=(11, 12, 13))
    conv_cfg = SimulationConfig(horizon=20_000, seeds=(11, 12, 13),
                                mode="conventional")
    ok = True
    checked = 0
    for d1 in grid:
        for d2 in grid:
            ch = MarkovChannel(P=[[0.1, 0.9], [0.5, 0.5]], d=[d1, d2])
            assert stability_margin(plant, ch).stable
            smart = simulate_smart(plant, filt, ch, smart_cfg)
            conv = simulate_conventional(plant, ch, conv_cfg, filt=filt)
            for a, b in zip(smart, conv):
                checked += 1
                if b.empirical_J < a.empirical_J:
                    ok = False
    assert verdict(8, ok, f"conventional >= smart at every of {checked} "
                          "paired (cell, seed) runs on the 5x5 grid")


def test_criterion_09_boundary_blowup(plant, filt):
    rho2 = spectral_radius(plant.A, tol=1e-12).value ** 2
    p = [[0.1, 0.9], [0.5, 0.5]]

    def margin_at(s):
        return rho2 * channel_spectral_radius(
            MarkovChannel(P=p, d=[1.0, s]))

    def solve(target):
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = (lo + hi) / 2
            if margin_at(mid) < target:
                lo = mid
            else:
                hi = mid
        return (lo + hi) / 2

    cfg = SimulationConfig(horizon=100_000, seeds=(1, 2, 3, 4, 5))
    means = {}
    for target in (0.9, 1.1):
        s = solve(target)
        ch = MarkovChannel(P=p, d=[1.0, s])
        runs = simulate_smart(plant, filt, ch, cfg)
        means[target] = float(np.mean([r.partial_J for r in runs]))
    ratio = means[1.1] / means[0.9]
    ok = ratio >= 10.0
    assert verdict(9, ok, f"finite-horizon J: {means[0.9]:.1f} at margin "
                          f"0.9 -> {means[1.1]:.1f} at margin 1.1 "
                          f"({ratio:.0f}x, need >= 10x)")


def test_criterion_10_bounds_suite(plant, filt, default_channel):
    started = time.perf_counter()
    rng = (1, 200)
    results = {
        "upper": bounds_mod.check_upper_bound(plant.A, 0.05, rng).passed,
        "lower": bounds_mod.check_periodic_lower_bound(plant.A, rng).passed,
        "lower_q": bounds_mod.check_lower_bound_with_q(
            plant.A, plant.W, rng).passed,
        "channel": bounds_mod.check_dm_properties(
            default_channel, rng).passed,
        "traces": bounds_mod.check_c_envelopes(
            plant, filt, 0.05 * 1.3257, rng).passed,
    }
    rotation = np.array(load_config("rotation_bounds.json").system.A)
    rot_fit = bounds_mod.check_periodic_lower_bound(rotation, rng)
    results["rotation_period_2"] = rot_fit.passed and rot_fit.period == 2
    try:
        bounds_mod.check_lower_bound_with_q(plant.A, np.zeros((4, 4)), rng)
        results["refusal"] = False
    except PreconditionError:
        results["refusal"] = True
    elapsed = time.perf_counter() - started
    ok = all(results.values()) and elapsed < 30.0
    assert verdict(10, ok, ", ".join(f"{k}={v}" for k, v in results.items())
                   + f"; {elapsed:.1f} s")


def test_criterion_11_cli_determinism(tmp_path, capsys):
    a, c, w, v = pendubot_matrices()
    cfg = {
        "system": {"A": a.tolist(), "C": c.tolist(), "W": w.tolist(),
                   "V": v.tolist()},
        "channel": {"transition": [[0.1, 0.9], [0.5, 0.5]],
                    "dropout": [0.8, 0.1]},
        "simulation": {"horizon": 5000, "seeds": [1, 2], "mode": "smart"},
        "scan": {"axes": [{"state": 1}, {"state": 2}], "resolution": 11},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    commands = [
        ("stability", ["stability", "--config", str(path)]),
        ("region", ["region", "--config", str(path)]),
        ("mse", ["mse", "--config", str(path), "--both"]),
        ("bounds", ["bounds", "--config", str(path)]),
        ("snr", ["channel-from-snr", "--gains", "300,250",
                 "--blocklength", "200", "--rate", "8"]),
    ]
    ok = True
    for name, argv in commands:
        outputs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{name}_{tag}"
            code = main(argv + ["--out", str(out)])
            assert code in (0, 2)
            outputs.append(out.read_bytes())
        if outputs[0] != outputs[1]:
            ok = False
    capsys.readouterr()  # swallow CLI stdout
    assert verdict(11, ok, "all five subcommands byte-identical on re-run")
