import json

import numpy as np
import pytest

from conftest import pendubot_matrices
from remest.cli import (
    ConfigError,
    experiment_to_config,
    fixture_path,
    json_dumps,
    load_config,
    main,
)


def write_config(tmp_path, name="cfg.json", **overrides):
    a, c, w, v = pendubot_matrices()
    cfg = {
        "system": {"A": a.tolist(), "C": c.tolist(), "W": w.tolist(),
                   "V": v.tolist()},
        "channel": {"transition": [[0.1, 0.9], [0.5, 0.5]],
                    "dropout": [0.8, 0.1]},
        "simulation": {"horizon": 3000, "seeds": [1, 2, 3], "mode": "smart"},
        "scan": {"axes": [{"state": 1}, {"state": 2}], "resolution": 5},
    }
    for key, value in overrides.items():
        if value is None:
            cfg.pop(key, None)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestConfigParsing:
    def test_bundled_fixtures_exist(self):
        for name in ("pendubot_default", "fig3a.json", "fig3b", "fig3c",
                     "fig3d", "example2_onoff", "three_state_fig8",
                     "rotation_bounds"):
            assert fixture_path(name) is not None

    def test_loads_bundled_by_name(self):
        exp = load_config("pendubot_default.json")
        assert exp.system.n == 4
        assert exp.channel.M == 2
        assert exp.simulation.horizon == 100_000

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("no_such_config.json")

    def test_malformed_row_names_path(self, tmp_path):
        path = write_config(tmp_path, channel={
            "transition": [[0.1, "x"], [0.5, 0.5]], "dropout": [0.8, 0.1]})
        with pytest.raises(ConfigError, match=r"channel\.transition\[0\]\[1\]"):
            load_config(path)

    def test_non_square_system_rejected(self, tmp_path):
        a, c, w, v = pendubot_matrices()
        path = write_config(tmp_path, system={
            "A": a[:, :3].tolist(), "C": c.tolist(), "W": w.tolist(),
            "V": v.tolist()})
        with pytest.raises(ConfigError, match="system"):
            load_config(path)

    def test_snr_channel_block(self, tmp_path):
        path = write_config(tmp_path, channel={
            "transition": [[0.1, 0.9], [0.5, 0.5]],
            "snr": {"gains": [300, 250], "blocklength": 200, "rate": 8}})
        exp = load_config(path)
        assert exp.channel.gains is not None
        assert 0 < exp.channel.d[0] < exp.channel.d[1] < 1

    def test_round_trip(self, tmp_path):
        path = write_config(tmp_path)
        exp = load_config(path)
        echoed = tmp_path / "echo.json"
        echoed.write_text(json_dumps(experiment_to_config(exp), sig=17))
        again = load_config(str(echoed))
        assert np.array_equal(again.system.A, exp.system.A)
        assert np.array_equal(again.channel.P, exp.channel.P)
        assert np.array_equal(again.channel.d, exp.channel.d)
        assert again.simulation == exp.simulation
        assert again.scan_axes == exp.scan_axes
        assert again.tolerances == exp.tolerances


class TestStabilityCommand:
    def test_stable_default(self, capsys):
        code, out, _ = run_cli(capsys, "stability",
                               "--config", "pendubot_default.json")
        assert code == 0
        report = json.loads(out)
        assert report["stable"] is True
        assert report["margin"] == pytest.approx(0.3385, abs=1e-3)
        assert report["mse"] == pytest.approx(16.302, abs=0.01)

    def test_all_drop_unstable_exit_two(self, capsys, tmp_path):
        path = write_config(tmp_path, channel={
            "transition": [[0.1, 0.9], [0.5, 0.5]], "dropout": [1, 1]})
        code, out, _ = run_cli(capsys, "stability", "--config", path)
        assert code == 2
        assert json.loads(out)["mse"] == "unbounded"

    def test_bad_config_exit_one(self, capsys, tmp_path):
        path = write_config(tmp_path, channel={
            "transition": [[0.1, 0.8], [0.5, 0.5]], "dropout": [0.8, 0.1]})
        code, _, err = run_cli(capsys, "stability", "--config", path)
        assert code == 1
        assert "row 1" in err


class TestRegionCommand:
    def test_tiny_grid_matches_stability(self, capsys, tmp_path):
        path = write_config(tmp_path, scan={
            "axes": [{"state": 1}, {"state": 2}], "resolution": 2})
        out_file = tmp_path / "region.csv"
        code, _, _ = run_cli(capsys, "region", "--config", path,
                             "--out", str(out_file), "--no-mse")
        assert code == 0
        lines = out_file.read_text().strip().split("\n")
        assert len(lines) == 5
        # corner (0, 0) is stable, corner (1, 1) is not
        assert lines[1].split(",")[3] == "true"
        assert lines[4].split(",")[3] == "false"

    def test_svg_output(self, capsys, tmp_path):
        path = write_config(tmp_path, scan={
            "axes": [{"state": 1}, {"state": 2}], "resolution": 3})
        out_file = tmp_path / "region.svg"
        code, _, _ = run_cli(capsys, "region", "--config", path,
                             "--out", str(out_file), "--format", "svg",
                             "--no-mse")
        assert code == 0
        assert out_file.read_text().startswith("<svg")

    def test_memory_shrinks_stable_region(self, capsys, tmp_path):
        # slower channel memory keeps the chain in the bad state longer
        counts = {}
        for name in ("fig3c.json", "fig3d.json"):
            out_file = tmp_path / (name + ".csv")
            code, _, _ = run_cli(capsys, "region", "--config", name,
                                 "--out", str(out_file), "--no-mse",
                                 "--resolution", "41")
            assert code == 0
            rows = out_file.read_text().strip().split("\n")[1:]
            counts[name] = sum(r.split(",")[3] == "true" for r in rows)
        assert counts["fig3d.json"] < counts["fig3c.json"]

    def test_scan_block_required(self, capsys, tmp_path):
        path = write_config(tmp_path, scan=None)
        code, _, err = run_cli(capsys, "region", "--config", path,
                               "--out", str(tmp_path / "x.csv"))
        assert code == 1
        assert "scan" in err


class TestMseCommand:
    def test_analytic_unstable(self, capsys, tmp_path):
        path = write_config(tmp_path, channel={
            "transition": [[0.1, 0.9], [0.5, 0.5]], "dropout": [1, 1]})
        code, out, _ = run_cli(capsys, "mse", "--config", path, "--analytic")
        assert code == 0
        assert json.loads(out)["analytic"]["J"] == "unbounded"

    def test_both_agree(self, capsys, tmp_path):
        path = write_config(tmp_path, simulation={
            "horizon": 50_000, "seeds": [1, 2, 3], "mode": "smart"})
        code, out, _ = run_cli(capsys, "mse", "--config", path, "--both")
        assert code == 0
        report = json.loads(out)
        assert report["comparison"]["within_5pct"] is True

    def test_seed_override_and_trajectory(self, capsys, tmp_path):
        path = write_config(tmp_path, simulation={
            "horizon": 500, "seeds": [9], "mode": "smart"})
        traj = tmp_path / "traj.csv"
        code, out, _ = run_cli(capsys, "mse", "--config", path, "--simulate",
                               "--seed", "4,5", "--trajectory", str(traj))
        assert code == 0
        report = json.loads(out)
        assert [r["seed"] for r in report["simulated"]["per_seed"]] == [4, 5]
        header = traj.read_text().split("\n")[0]
        assert header == "t,channel_state,gamma,delta,trace_Pt"

    def test_conventional_mode(self, capsys, tmp_path):
        path = write_config(tmp_path, simulation={
            "horizon": 2000, "seeds": [1, 2], "mode": "conventional"})
        code, out, _ = run_cli(capsys, "mse", "--config", path, "--simulate")
        assert code == 0
        assert json.loads(out)["simulated"]["mode"] == "conventional"

    def test_all_saturated_exit_two(self, capsys, tmp_path):
        path = write_config(tmp_path,
                            channel={"transition": [[0.1, 0.9], [0.5, 0.5]],
                                     "dropout": [1, 1]},
                            simulation={"horizon": 50_000, "seeds": [1, 2],
                                        "mode": "smart"})
        code, out, _ = run_cli(capsys, "mse", "--config", path, "--simulate")
        assert code == 2
        assert json.loads(out)["simulated"]["all_saturated"] is True


class TestBoundsCommand:
    def test_default_passes(self, capsys):
        code, out, _ = run_cli(capsys, "bounds",
                               "--config", "pendubot_default.json")
        assert code == 0
        report = json.loads(out)
        assert report["all_passed"] is True
        for key in ("matrix_power_upper", "matrix_power_lower",
                    "matrix_power_lower_with_noise", "channel_power",
                    "error_trace_envelopes"):
            assert report[key]["status"] == "pass"

    def test_all_drop_channel_refused(self, capsys, tmp_path):
        path = write_config(tmp_path, channel={
            "transition": [[0.1, 0.9], [0.5, 0.5]], "dropout": [1, 1]})
        code, out, _ = run_cli(capsys, "bounds", "--config", path)
        report = json.loads(out)
        assert report["channel_power"]["status"] == "refused"
        assert code == 0  # a refusal is not a failure

    def test_rotation_fixture_period_two(self, capsys):
        code, out, _ = run_cli(capsys, "bounds",
                               "--config", "rotation_bounds.json")
        assert code == 0
        report = json.loads(out)
        assert report["matrix_power_lower"]["period"] == 2


class TestChannelFromSnr:
    def test_limits(self, capsys):
        code, out, _ = run_cli(capsys, "channel-from-snr", "--gains",
                               "300,250", "--blocklength", "200",
                               "--rate", "0.001")
        assert code == 0
        assert all(d < 1e-9 for d in json.loads(out)["dropout"])
        code, out, _ = run_cli(capsys, "channel-from-snr", "--gains", "300",
                               "--blocklength", "200", "--rate", "50")
        assert json.loads(out)["dropout"] == [1.0]

    def test_bad_gains(self, capsys):
        code, _, err = run_cli(capsys, "channel-from-snr", "--gains",
                               "-3", "--blocklength", "200", "--rate", "8")
        assert code == 1 and "gains" in err


class TestDeterminism:
    def test_byte_identical_reruns(self, capsys, tmp_path):
        path = write_config(tmp_path, simulation={
            "horizon": 2000, "seeds": [1, 2], "mode": "smart"},
            scan={"axes": [{"state": 1}, {"state": 2}], "resolution": 4})
        cases = [
            ("stability", ["stability", "--config", path]),
            ("region", ["region", "--config", path, "--no-mse"]),
            ("region_j", ["region", "--config", path]),
            ("mse", ["mse", "--config", path, "--both"]),
            ("bounds", ["bounds", "--config", path]),
            ("snr", ["channel-from-snr", "--gains", "300,250",
                     "--blocklength", "200", "--rate", "8"]),
        ]
        for name, argv in cases:
            out_a = tmp_path / f"{name}_a"
            out_b = tmp_path / f"{name}_b"
            code_a, _, _ = run_cli(capsys, *argv, "--out", str(out_a))
            code_b, _, _ = run_cli(capsys, *argv, "--out", str(out_b))
            assert code_a == code_b
            assert out_a.read_bytes() == out_b.read_bytes(), name
