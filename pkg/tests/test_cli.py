import itertools
import math
import subprocess
import sys

import numpy as np
import pytest

from ncelandscape.cli import main
from ncelandscape.cli.config import OUTPUT_ENV, list_presets, parse_config, parse_config_text
from ncelandscape.cli.experiment import (
    CSV_HEADER,
    ResultTable,
    emit_plot_data,
    read_csv,
    run_experiment,
    write_csv,
)
from ncelandscape.exceptions import ConfigError

SMALL_1D = """
[family]
kind = gaussian_mean_1d
theta_star = 4
theta_q = 0

[objective]
losses = nce, ence
backend = {backend}
batch_size = 64

[optimizer]
algorithms = gd, ngd
steps = {steps}
eta.ngd = 0.5

[run]
runs = 3
seed = {seed}

[output]
prefix = small
"""


def small(steps=5, seed=0, backend="quadrature"):
    return parse_config_text(SMALL_1D.format(steps=steps, seed=seed, backend=backend))


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestConfig:
    def test_gauss1d_r16_preset(self):
        cfg = parse_config("gauss1d_r16")
        assert cfg.family.kind == "gaussian_mean_1d"
        assert (cfg.family.theta_star, cfg.family.theta_q) == (16.0, 0.0)
        assert cfg.steps == 100 and cfg.runs == 5

    def test_gauss16d_preset(self):
        cfg = parse_config("gauss16d")
        f = cfg.family
        assert f.kind == "diag_gaussian" and f.dim == 16
        assert f.mean_star == f.mean_q == (0.0,) * 16
        assert f.var_q == (1.0,) * 16
        assert all(6 <= v <= 12 for v in f.var_star)
        assert len(set(f.var_star)) == 16
        assert parse_config("gauss16d").family.var_star == f.var_star

    def test_empty_file(self, tmp_path):
        with pytest.raises(ConfigError, match=r"missing \[family\] section"):
            parse_config(write(tmp_path, ""))

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match=r"<string>:4: unknown key 'colour'"):
            parse_config_text("[family]\nkind = gaussian_mean_1d\ntheta_star = 2\ncolour = red\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"unknown section \[extras\]"):
            parse_config_text("[family]\nkind = gaussian_mean_1d\ntheta_star = 1\n[extras]\na = 1\n")

    def test_parse_error_line(self):
        with pytest.raises(ConfigError, match=r"<string>:3: parse error"):
            parse_config_text("[family]\nkind = gaussian_mean_1d\nthis line is broken\n")

    def test_lists_every_violation(self):
        text = "[family]\nkind = gaussian_mean_1d\ntheta_star = 1\n[optimizer]\nsteps = 0\n[run]\nruns = 0\n"
        with pytest.raises(ConfigError) as info:
            parse_config_text(text)
        msg = str(info.value)
        assert "budget must be at least 1" in msg and "need at least one run" in msg

    def test_equal_parameters(self):
        text = "[family]\nkind = gaussian_mean_1d\ntheta_star = 2\ntheta_q = 2\n"
        with pytest.raises(ConfigError, match="allow_equal"):
            parse_config_text(text)
        assert parse_config_text(text + "allow_equal = true\n").family.theta_star == 2.0

    def test_qualified_overrides(self):
        text = ("[family]\nkind = gaussian_mean_1d\ntheta_star = 2\n[optimizer]\neta = 0.1\neta.ngd = 2\n"
                "eta.ngd.ence = 3\n[objective]\ngrad_norm_cap.ence = 10\n")
        cfg = parse_config_text(text)
        assert cfg.setting("eta", "gd", "nce") == 0.1
        assert cfg.setting("eta", "ngd", "nce") == 2.0
        assert cfg.setting("eta", "ngd", "ence") == 3.0
        assert cfg.setting("grad_norm_cap", "ngd", "ence") == 10.0
        assert cfg.setting("grad_norm_cap", "ngd", "nce", default=None) is None

    def test_qualifier_order_enforced(self):
        with pytest.raises(ConfigError, match="unknown key 'eta.ence.ngd'"):
            parse_config_text("[family]\nkind = gaussian_mean_1d\ntheta_star = 2\n[optimizer]\neta.ence.ngd = 1\n")

    def test_bad_values(self):
        with pytest.raises(ConfigError, match="expected a number"):
            parse_config_text("[family]\nkind = gaussian_mean_1d\ntheta_star = 2\n[optimizer]\neta = fast\n")
        with pytest.raises(ConfigError, match="var_star_low"):
            parse_config_text("[family]\nkind = diag_gaussian\nvar_star_low = x\n")

    def test_presets_listed(self):
        names = [n for n, _ in list_presets()]
        assert {"gauss1d_r16", "gauss16d", "verify_default"} <= set(names)
        assert all(desc for _, desc in list_presets())

    def test_output_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
        assert small().resolved_output_dir() == tmp_path / "elsewhere"


class TestRunExperiment:
    def test_row_count_one_step(self):
        table = run_experiment(small(steps=1))
        assert len(table) == 3 * 2 * 2 * 2

    def test_row_count_formula_with_early_stop(self):
        cfg = parse_config_text(SMALL_1D.format(steps=400, seed=0, backend="quadrature").replace(
            "algorithms = gd, ngd", "algorithms = newton").replace("runs = 3", "runs = 1"))
        table = run_experiment(cfg)
        for loss, algo in table.cells():
            rows = table.select(loss, algo, 0)
            assert rows[-1].step + 1 == len(rows)
        assert len(table) == sum(len(table.select(*c)) for c in table.cells())

    def test_sorted_and_first_row(self):
        table = run_experiment(small())
        keys = [(r.loss, r.algo, r.run, r.step) for r in table.rows]
        assert keys == sorted(keys)
        first = table.rows[0]
        assert first.step == 0
        assert first.dist == pytest.approx(math.hypot(4, 8), rel=1e-12)

    def test_r16_initial_distance(self):
        cfg = parse_config("gauss1d_r16")
        from ncelandscape.cli.experiment import build_objective
        o = build_objective(cfg, "nce")
        d = np.linalg.norm(o.tau_q.vector - o.tau_star.vector)
        assert d == pytest.approx(math.sqrt(16**2 + 128**2), rel=1e-14)
        assert d == pytest.approx(129.0, abs=0.01)

    def test_min_dist_monotone(self):
        table = run_experiment(small(steps=20))
        for loss, algo in table.cells():
            for k in range(3):
                m = [r.min_dist for r in table.select(loss, algo, k)]
                assert all(b <= a for a, b in itertools.pairwise(m))

    def test_seed_isolation(self):
        q0 = run_experiment(small(seed=0))
        q1 = run_experiment(small(seed=5))
        assert q0.rows == q1.rows
        m0 = run_experiment(small(seed=0, backend="montecarlo"))
        m1 = run_experiment(small(seed=5, backend="montecarlo"))
        assert [r.loss_value for r in m0.rows] != [r.loss_value for r in m1.rows]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_recorded_not_raised(self):
        text = SMALL_1D.format(steps=50, seed=0, backend="montecarlo") + "\n"
        text = text.replace("[optimizer]", "[optimizer]\neta.gd = 1e6").replace(
            "losses = nce, ence", "losses = ence\nlog_ratio_cap = none")
        table = run_experiment(parse_config_text(text))
        statuses = {r.status for r in table.select("ence", "gd")}
        assert "diverged" in statuses
        assert table.select("ence", "ngd")


class TestFiles:
    def test_csv_roundtrip(self, tmp_path):
        table = run_experiment(small(backend="montecarlo"))
        path = write_csv(table, tmp_path / "out.csv")
        back = read_csv(path)
        assert back.rows == table.rows
        assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)

    def test_empty_table(self, tmp_path):
        path = write_csv(ResultTable(), tmp_path / "empty.csv")
        assert path.read_text() == ",".join(CSV_HEADER) + "\n"
        with pytest.raises(ValueError):
            emit_plot_data(ResultTable(), tmp_path)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="cannot write"):
            write_csv(ResultTable(), blocker / "sub" / "out.csv")

    def test_plot_data_identical_runs_have_zero_std(self, tmp_path):
        table = run_experiment(small(steps=10))
        paths = emit_plot_data(table, tmp_path, "p")
        assert len(paths) == 2 * 4
        data = np.loadtxt(tmp_path / "p_nce_ngd_min_dist.dat")
        assert data.shape == (11, 4)
        np.testing.assert_allclose(data[:, 2], 0.0, atol=1e-12 * data[0, 1])
        assert np.all(np.diff(data[:, 1]) <= 0)

    def test_plot_data_pads_short_runs(self, tmp_path):
        from ncelandscape.cli.experiment import Row
        rows = [Row("nce", "gd", 0, s, 1.0, 1.0, 5.0 - s, 5.0 - s, "ok") for s in range(4)]
        rows += [Row("nce", "gd", 1, s, 1.0, 1.0, 5.0 - s, 5.0 - s, "ok") for s in range(2)]
        emit_plot_data(ResultTable(rows=rows), tmp_path, "pad")
        data = np.loadtxt(tmp_path / "pad_nce_gd_min_dist.dat")
        np.testing.assert_allclose(data[:, 1], [5, 4, 3.5, 3])


class TestCommands:
    def _run_twice(self, tmp_path, monkeypatch, argv):
        outputs = []
        for k in range(2):
            d = tmp_path / f"out{k}"
            monkeypatch.setenv(OUTPUT_ENV, str(d))
            status = main(argv)
            outputs.append((status, {p.name: p.read_bytes() for p in sorted(d.iterdir())}))
        return outputs

    def test_run_byte_identical(self, tmp_path, monkeypatch, capsys):
        cfg = write(tmp_path, SMALL_1D.format(steps=8, seed=1, backend="montecarlo"))
        (s0, f0), (s1, f1) = self._run_twice(tmp_path, monkeypatch, ["run", cfg])
        assert s0 == s1 == 0
        assert f0 == f1
        assert {"small_results.csv", "small_settings.txt", "small_nce_gd_min_dist.dat"} <= set(f0)

    def test_verify_byte_identical(self, tmp_path, monkeypatch, capsys):
        text = "[family]\nkind = gaussian_mean_1d\nr_values = 4\n[objective]\nlosses = nce, ence\n[run]\nannulus_points = 5\n"
        (s0, f0), (s1, f1) = self._run_twice(tmp_path, monkeypatch, ["verify", write(tmp_path, text)])
        assert s0 == s1
        assert f0 == f1
        assert set(f0) == {"experiment_report.txt", "experiment_checks.csv"}

    def test_landscape_byte_identical(self, tmp_path, monkeypatch, capsys):
        cfg = write(tmp_path, SMALL_1D.format(steps=1, seed=0, backend="quadrature"))
        (s0, f0), (s1, f1) = self._run_twice(tmp_path, monkeypatch, ["landscape", cfg])
        assert s0 == s1 == 0 and f0 == f1
        data = np.loadtxt(tmp_path / "out0" / "small_nce_segment.dat")
        assert data[0, 1] == pytest.approx(math.log(2), abs=1e-9)
        assert data[-1, 5] == 0.0

    def test_verify_passing_setup(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        text = "[family]\nkind = gaussian_mean_1d\nr_values = 2, 4\n[objective]\nlosses = ence\n"
        assert main(["verify", write(tmp_path, text)]) == 0
        out = capsys.readouterr().out
        assert "PASS ence_kappa[R=4]" in out

    def test_verify_corrupted_bound(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        text = "[family]\nkind = gaussian_mean_1d\nr_values = 4\n[objective]\nlosses = ence\n[run]\nbound_scale = 0.5\n"
        assert main(["verify", write(tmp_path, text)]) == 1
        assert "FAIL" in (tmp_path / "experiment_report.txt").read_text()

    def test_verify_degenerate(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        text = "[family]\nkind = gaussian_mean_1d\nr_values = 0\n[objective]\nlosses = nce, ence\n"
        assert main(["verify", write(tmp_path, text)]) == 0
        assert "SKIP nce_checks[R=0]" in capsys.readouterr().out

    def test_verify_inconclusive(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        text = "[family]\nkind = gaussian_mean_1d\nr_values = 60\n[objective]\nlosses = ence\n"
        assert main(["verify", write(tmp_path, text)]) == 2

    def test_verify_needs_1d(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        assert main(["verify", "gauss16d"]) == 2
        assert "gaussian_mean_1d" in capsys.readouterr().err

    def test_config_error_exit(self, tmp_path, capsys):
        assert main(["run", write(tmp_path, "")]) == 2
        assert "missing [family] section" in capsys.readouterr().err

    def test_missing_file(self, capsys):
        assert main(["run", "/nonexistent/config.ini"]) == 2

    def test_presets_command(self, capsys):
        assert main(["presets"]) == 0
        assert "gauss1d_r16" in capsys.readouterr().out

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "ncelandscape.cli", "presets"], check=False, capture_output=True, text=True)
        assert res.returncode == 0 and "verify_default" in res.stdout
