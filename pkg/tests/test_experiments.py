import csv
import math
import subprocess
import sys

import numpy as np
import pytest
import tomli

import gaussqi.cli as cli
from gaussqi import __version__
from gaussqi.errors import ConfigError, StarNotFound
from gaussqi.experiments import (
    ExperimentConfig,
    config_from_toml,
    config_to_toml,
    run_experiment,
    with_overrides,
)
from gaussqi.partition import ThetaFunction, saturation_reference


def read_result(path):
    """(comment lines, column names, float table) of one result file."""
    comments, rows = [], []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            comments.append(line)
        elif line:
            rows.append(next(csv.reader([line])))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return comments, rows[0], data


def header_value(path, key):
    for line in path.read_text().splitlines():
        if line.startswith(f"# {key} ="):
            return float(line.split("=", 1)[1])
    raise AssertionError(f"no {key} line in {path}")


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert cfg.experiment == "table1"
        assert cfg.window == (-4.0, 4.0)

    def test_window_must_increase(self):
        with pytest.raises(ConfigError, match="window"):
            ExperimentConfig(window=(1.0, -1.0))

    def test_resolution_floor(self):
        with pytest.raises(ConfigError, match="resolution"):
            ExperimentConfig(resolution=1)

    def test_positive_spacing(self):
        with pytest.raises(ConfigError, match="h must be positive"):
            ExperimentConfig(h=0.0)

    def test_toml_round_trip_is_lossless(self, tmp_path):
        cfg = ExperimentConfig(
            experiment="theta-scan", n=1, h=0.1, H=0.3, D=3.7, D0=2.9, N=4,
            L=3, count=3, kappa1=0.25, kernel="zero", amplitude=1.5,
            gh_order=16, rho_cut=5.5, seed=11, window=(-2.5, 3.5),
            resolution=33, out="results",
        )
        p = tmp_path / "cfg.toml"
        p.write_text(config_to_toml(cfg))
        assert config_from_toml(p) == cfg

    def test_unset_d0_round_trips_as_unset(self, tmp_path):
        cfg = ExperimentConfig()
        text = config_to_toml(cfg)
        assert "D0" not in text
        p = tmp_path / "cfg.toml"
        p.write_text(text)
        assert config_from_toml(p).D0 is None

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg.toml"
        p.write_text('flavour = "plain"\n')
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_toml(p)

    def test_type_mismatches_rejected(self, tmp_path):
        p = tmp_path / "cfg.toml"
        for text, what in [
            ('n = 1.5\n', "integer"),
            ('h = "wide"\n', "number"),
            ('seed = true\n', "integer"),
            ('experiment = 3\n', "string"),
            ('window = [1.0]\n', "two-element"),
        ]:
            p.write_text(text)
            with pytest.raises(ConfigError, match=what):
                config_from_toml(p)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            config_from_toml(tmp_path / "absent.toml")

    def test_invalid_toml_rejected(self, tmp_path):
        p = tmp_path / "cfg.toml"
        p.write_text("n = = 2\n")
        with pytest.raises(ConfigError, match="not valid TOML"):
            config_from_toml(p)

    def test_overrides(self):
        cfg = ExperimentConfig()
        out = with_overrides(cfg, experiment="theta-scan", seed=9, out="/tmp/x")
        assert (out.experiment, out.seed, out.out) == ("theta-scan", 9, "/tmp/x")
        assert with_overrides(cfg) is cfg

    def test_unknown_experiment_rejected(self, tmp_path):
        cfg = ExperimentConfig(experiment="frobnicate", out=str(tmp_path))
        with pytest.raises(ConfigError, match="unknown experiment"):
            run_experiment(cfg)


@pytest.fixture(scope="module")
def scan_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("fmt")
    cfg = ExperimentConfig(
        experiment="theta-scan", n=1, D0=1.5, window=(-2.0, 2.0),
        resolution=41, seed=5, out=str(out),
    )
    return run_experiment(cfg)


class TestOutputFormat:
    def test_version_line_first(self, scan_path):
        first = scan_path.read_text().splitlines()[0]
        assert first == f"# artifact {__version__}"

    def test_header_echoes_resolved_config(self, scan_path):
        comments, _, _ = read_result(scan_path)
        body = "\n".join(
            c[2:] for c in comments[1:]
            if "=" in c and not c.startswith(("# sup", "# wall_time"))
        )
        echoed = tomli.loads(body)
        assert echoed["experiment"] == "theta-scan"
        assert echoed["resolution"] == 41
        assert echoed["seed"] == 5
        assert echoed["D0"] == 1.5

    def test_wall_time_is_last_comment(self, scan_path):
        comments, _, _ = read_result(scan_path)
        assert comments[-1].startswith("# wall_time_s = ")

    def test_crlf_line_endings(self, scan_path):
        raw = scan_path.read_bytes()
        assert raw.count(b"\n") == raw.count(b"\r\n")

    def test_gnuplot_sidecar(self, scan_path):
        gp = scan_path.with_suffix(".gp")
        assert gp.exists()
        text = gp.read_text()
        assert scan_path.name in text
        assert "plot" in text

    def test_reproducible_modulo_wall_time(self, tmp_path):
        cfg = ExperimentConfig(
            experiment="theta-scan", n=1, D0=1.5, window=(-2.0, 2.0),
            resolution=41, seed=5, out=str(tmp_path),
        )
        strip = lambda p: [
            l for l in p.read_text().splitlines()
            if not l.startswith("# wall_time_s")
        ]
        first = strip(run_experiment(cfg))
        second = strip(run_experiment(cfg))
        assert first == second
        third = strip(run_experiment(ExperimentConfig(
            experiment="theta-scan", n=1, D0=1.5, window=(-2.0, 2.0),
            resolution=41, seed=6, out=str(tmp_path),
        )))
        assert first != third


@pytest.fixture(scope="module")
def table(tmp_path_factory):
    out = tmp_path_factory.mktemp("t1")
    cfg = ExperimentConfig(experiment="table1", n=2, seed=0, out=str(out))
    path = run_experiment(cfg)
    _, columns, data = read_result(path)
    return columns, data


class TestTable1Runner:
    def test_layout(self, table):
        columns, data = table
        assert columns == ["h", "D", "error"]
        assert data.shape == (10, 3)
        assert list(data[:, 0]) == [h for k in range(4, 9) for h in (2.0**-k,) * 2]
        assert list(data[:, 1]) == [2.0, 4.0] * 5

    def test_sign_and_published_level(self, table):
        _, data = table
        assert np.all(data[:, 2] < 0)
        published = {
            (2.0**-4, 2.0): -6.2e-3, (2.0**-5, 2.0): -1.6e-3,
            (2.0**-6, 2.0): -3.9e-4, (2.0**-7, 2.0): -9.8e-5,
            (2.0**-8, 2.0): -2.4e-5, (2.0**-4, 4.0): -1.3e-2,
            (2.0**-5, 4.0): -3.3e-3, (2.0**-6, 4.0): -8.3e-4,
            (2.0**-7, 4.0): -2.1e-4, (2.0**-8, 4.0): -5.2e-5,
        }
        for h, D, err in data:
            ratio = err / published[h, D]
            assert 1 / 2.5 <= ratio <= 2.5

    def test_second_order_down_the_column(self, table):
        _, data = table
        for D in (2.0, 4.0):
            col = data[data[:, 1] == D, 2]
            for a, b in zip(col, col[1:]):
                assert 3.3 <= a / b <= 4.8

    def test_needs_two_dimensions(self, tmp_path):
        cfg = ExperimentConfig(experiment="table1", n=1, out=str(tmp_path))
        with pytest.raises(ConfigError, match="two-dimensional"):
            run_experiment(cfg)


class TestThetaScanRunner:
    def scan_sup(self, tmp_path, count, L):
        cfg = ExperimentConfig(
            experiment="theta-scan", n=1, h=1.0, D=2.0, D0=1.5, count=count,
            L=L, seed=2, window=(-4.0, 4.0), resolution=801,
            out=str(tmp_path / f"c{count}L{L}"),
        )
        return run_experiment(cfg)

    def test_columns_and_header_sup(self, tmp_path):
        path = self.scan_sup(tmp_path, 1, 2)
        _, columns, data = read_result(path)
        assert columns == ["x", "theta_minus_1", "saturation"]
        assert header_value(path, "sup_error") == np.abs(data[:, 1]).max()
        ref = saturation_reference(2.0, 6)
        assert np.allclose(data[:, 2], ref(data[:, 0]), atol=1e-15)

    def test_single_node_gains_per_degree_step(self, tmp_path):
        sups = [
            header_value(self.scan_sup(tmp_path, 1, L), "sup_error")
            for L in (1, 2, 3, 4)
        ]
        for a, b in zip(sups, sups[1:]):
            assert 3.0 <= a / b <= 20.0

    def test_three_nodes_gain_per_degree_step(self, tmp_path):
        sups = [
            header_value(self.scan_sup(tmp_path, 3, L), "sup_error")
            for L in (1, 2, 3)
        ]
        for a, b in zip(sups, sups[1:]):
            assert 20.0 <= a / b <= 500.0

    def test_five_nodes_gain_per_degree_step(self, tmp_path):
        sups = [
            header_value(self.scan_sup(tmp_path, 5, L), "sup_error")
            for L in (1, 2)
        ]
        assert 100.0 <= sups[0] / sups[1] <= 5000.0

    def test_five_nodes_degree_four_majorized_by_saturation(self, tmp_path):
        path = self.scan_sup(tmp_path, 5, 4)
        _, _, data = read_result(path)
        amplitude = 2 * sum(math.exp(-2 * math.pi**2 * j * j) for j in range(1, 7))
        assert np.abs(data[:, 1]).max() <= 2 * amplitude

    def test_needs_one_dimension(self, tmp_path):
        cfg = ExperimentConfig(experiment="theta-scan", n=2, out=str(tmp_path))
        with pytest.raises(ConfigError, match="one-dimensional"):
            run_experiment(cfg)


class TestQIFiguresRunner:
    def run_1d(self, tmp_path, N, D):
        cfg = ExperimentConfig(
            experiment="qi-figures", n=1, N=N, D=D, window=(-1.0, 1.0),
            resolution=201, seed=0, out=str(tmp_path),
        )
        return run_experiment(cfg)

    def test_second_order_columns_scale_by_a_quarter(self, tmp_path):
        path = self.run_1d(tmp_path, 2, 2.0)
        _, columns, data = read_result(path)
        assert columns == ["x", "x2_h32", "x2_h64", "runge_h32", "runge_h64"]
        for coarse, fine in ((1, 2), (3, 4)):
            ratio = np.abs(data[:, coarse]).max() / np.abs(data[:, fine]).max()
            assert 3.3 <= ratio <= 4.8

    def test_fourth_order_columns_scale_by_a_sixteenth(self, tmp_path):
        path = self.run_1d(tmp_path, 4, 4.0)
        _, columns, data = read_result(path)
        assert columns == ["x", "x4_h32", "x4_h64", "runge_h32", "runge_h64"]
        for coarse, fine in ((1, 2), (3, 4)):
            ratio = np.abs(data[:, coarse]).max() / np.abs(data[:, fine]).max()
            assert 12.0 <= ratio <= 20.0

    def test_two_dimensional_profile_level(self, tmp_path):
        cfg = ExperimentConfig(
            experiment="qi-figures", n=2, N=2, D=2.0, h=2.0**-7,
            window=(-0.5, 0.5), resolution=101, seed=1, out=str(tmp_path),
        )
        path = run_experiment(cfg)
        _, columns, data = read_result(path)
        assert columns == ["x", "error"]
        origin = data[np.argmin(np.abs(data[:, 0])), 1]
        assert abs(origin) < 1e-4
        assert np.abs(data[:, 1]).max() < 2e-4
        assert header_value(path, "sup_error") == np.abs(data[:, 1]).max()

    def test_order_validation(self, tmp_path):
        with pytest.raises(ConfigError, match="orders 2 and 4"):
            run_experiment(ExperimentConfig(
                experiment="qi-figures", n=1, N=6, out=str(tmp_path)
            ))
        with pytest.raises(ConfigError, match="one or two dimensions"):
            run_experiment(ExperimentConfig(
                experiment="qi-figures", n=3, N=2, out=str(tmp_path)
            ))
        with pytest.raises(ConfigError, match="second-order"):
            run_experiment(ExperimentConfig(
                experiment="qi-figures", n=2, N=4, out=str(tmp_path)
            ))


class TestCubatureDemoRunner:
    def run_demo(self, tmp_path, h, **kw):
        params = dict(
            n=1, h=h, window=(-2.0, 2.0), resolution=17, out=str(tmp_path / f"h{h}")
        )
        params.update(kw)
        path = run_experiment(ExperimentConfig(experiment="cubature-demo", **params))
        return read_result(path)[2]

    def test_columns_match_oracle_layout(self, tmp_path):
        cfg = ExperimentConfig(
            experiment="cubature-demo", n=1, h=0.25, window=(-1.0, 1.0),
            resolution=5, out=str(tmp_path),
        )
        _, columns, data = read_result(run_experiment(cfg))
        assert columns == ["x", "value", "oracle", "error"]
        assert np.allclose(data[:, 1] - data[:, 2], data[:, 3], atol=1e-15)
        ref = math.sqrt(2 * math.pi / 3) * np.exp(-data[:, 0] ** 2 / 3.0)
        assert np.allclose(data[:, 2], ref, atol=1e-15)

    def test_observed_second_order(self, tmp_path):
        sups = [
            np.abs(self.run_demo(tmp_path, h)[:, 3]).max()
            for h in (0.25, 0.125, 0.0625)
        ]
        assert sups[-1] < 2.5e-3
        for a, b in zip(sups, sups[1:]):
            assert 3.3 <= a / b <= 4.8

    def test_doubling_the_density_doubles_the_output(self, tmp_path):
        single = self.run_demo(tmp_path / "a", 0.25, amplitude=1.0, resolution=5)
        double = self.run_demo(tmp_path / "b", 0.25, amplitude=2.0, resolution=5)
        assert np.abs(double[:, 1] - 2.0 * single[:, 1]).max() < 1e-13

    def test_zero_kernel_gives_identical_zero(self, tmp_path):
        data = self.run_demo(tmp_path, 0.25, kernel="zero", resolution=5)
        assert np.all(data[:, 1:] == 0.0)

    def test_kernel_validation(self, tmp_path):
        with pytest.raises(ConfigError, match="demo oracle"):
            run_experiment(ExperimentConfig(
                experiment="cubature-demo", n=1, kernel="unit", out=str(tmp_path)
            ))


class TestCheckConditionsRunner:
    def test_report_and_rows(self, tmp_path):
        cfg = ExperimentConfig(
            experiment="check-conditions", n=1, h=1.0, window=(-4.0, 4.0),
            seed=2, out=str(tmp_path),
        )
        path, report = run_experiment(cfg)
        assert report.passed()
        comments, columns, _ = read_result_text(path)
        assert columns == ["check", "ok", "witness"]
        assert any(c.startswith("# passed = True") for c in comments)


def read_result_text(path):
    """read_result for tables whose cells are not all numeric."""
    comments, rows = [], []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            comments.append(line)
        elif line:
            rows.append(next(csv.reader([line])))
    return comments, rows[0], rows[1:]


class TestThetaBuildRunner:
    def test_output_loads_back(self, tmp_path):
        cfg = ExperimentConfig(
            experiment="theta-build", n=1, h=1.0, D0=1.5, count=1, L=0,
            window=(-3.0, 3.0), seed=2, out=str(tmp_path),
        )
        path = run_experiment(cfg)
        theta = ThetaFunction.from_csv(path)
        assert len(theta.entries) == 7
        assert theta.dim == 1
        assert theta.D == 2.0


class TestCLI:
    def write_cfg(self, tmp_path, text):
        p = tmp_path / "cfg.toml"
        p.write_text(text)
        return str(p)

    def test_success_prints_path(self, tmp_path, capsys):
        cfg = self.write_cfg(
            tmp_path,
            'n = 1\nh = 1.0\nD0 = 1.5\ncount = 1\nL = 0\nwindow = [-3.0, 3.0]\n',
        )
        code = cli.main(["theta-build", "--config", cfg, "--out", str(tmp_path)])
        assert code == 0
        assert str(tmp_path / "theta.csv") in capsys.readouterr().out

    def test_quiet_suppresses_output(self, tmp_path, capsys):
        cfg = self.write_cfg(
            tmp_path,
            'n = 1\nh = 1.0\nD0 = 1.5\ncount = 1\nL = 0\nwindow = [-3.0, 3.0]\n',
        )
        code = cli.main([
            "theta-build", "--config", cfg, "--out", str(tmp_path), "--quiet"
        ])
        assert code == 0
        assert capsys.readouterr().out == ""

    def test_subcommand_overrides_config_experiment(self, tmp_path):
        cfg = self.write_cfg(
            tmp_path,
            'experiment = "table1"\nn = 1\nD0 = 1.5\nresolution = 41\n'
            'window = [-2.0, 2.0]\n',
        )
        code = cli.main(["theta-scan", "--config", cfg, "--out", str(tmp_path), "--quiet"])
        assert code == 0
        assert (tmp_path / "theta_scan.csv").exists()

    def test_seed_override_changes_the_draw(self, tmp_path):
        cfg = self.write_cfg(
            tmp_path, 'n = 1\nD0 = 1.5\nresolution = 41\nwindow = [-2.0, 2.0]\n'
        )
        outs = {}
        for seed, sub in ((3, "a"), (4, "b")):
            out = tmp_path / sub
            assert cli.main([
                "theta-scan", "--config", cfg, "--seed", str(seed),
                "--out", str(out), "--quiet",
            ]) == 0
            outs[seed] = read_result(out / "theta_scan.csv")[2]
        assert not np.array_equal(outs[3][:, 1], outs[4][:, 1])

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, 'flavour = "plain"\n')
        assert cli.main(["table1", "--config", cfg]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_layout_mismatch_exit_code(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, "n = 1\n")
        assert cli.main(["table1", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "two-dimensional" in capsys.readouterr().err

    def test_missing_config_exit_code(self, tmp_path):
        assert cli.main(["table1", "--config", str(tmp_path / "nope.toml")]) == 2

    def test_numerical_failure_exit_code(self, monkeypatch, capsys):
        def boom(cfg):
            raise StarNotFound(7)

        monkeypatch.setattr(cli, "run_experiment", boom)
        assert cli.main(["theta-build"]) == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_check_conditions_exit_zero_on_pass(self, tmp_path, capsys):
        cfg = self.write_cfg(
            tmp_path, 'n = 1\nh = 1.0\nwindow = [-4.0, 4.0]\nseed = 2\n'
        )
        assert cli.main([
            "check-conditions", "--config", cfg, "--out", str(tmp_path), "--quiet"
        ]) == 0
        assert (tmp_path / "conditions.csv").exists()

    def test_module_entry_point(self, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('n = 1\nh = 1.0\nD0 = 1.5\ncount = 1\nL = 0\nwindow = [-3.0, 3.0]\n')
        proc = subprocess.run(
            [sys.executable, "-m", "gaussqi.cli", "theta-build",
             "--config", str(cfg), "--out", str(tmp_path)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert (tmp_path / "theta.csv").exists()
