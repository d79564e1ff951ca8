"""Config file parsing, sweep orchestration, CSV output, CLI exit codes."""

import csv

import numpy as np
import pytest

from underlay_ee import cli
from underlay_ee.config import (ConfigError, SystemConfig, dbm_to_watt,
                                parse_config)

TINY = ["--set", "L=2", "--set", "N=2", "--set", "K_s=2", "--set", "K_p=1",
        "--set", "M=2"]


class TestParseConfig:
    def test_missing_path_gives_defaults(self):
        cfg = parse_config(None)
        assert cfg == SystemConfig()

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("# nothing but comments\n\n")
        assert parse_config(path) == SystemConfig()

    def test_file_values_and_comments(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("L = 3   # fewer access points\nbandwidth_hz = 1e7\n")
        cfg = parse_config(path)
        assert cfg.L == 3
        assert cfg.bandwidth_hz == 1e7

    def test_dbm_override(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("")
        cfg = parse_config(path, overrides=["P_max_dBm=15"])
        assert cfg.p_max_w == pytest.approx(dbm_to_watt(15.0))
        assert cfg.p_max_dbm == pytest.approx(15.0)

    def test_relative_interference_override(self):
        cfg = parse_config(None, overrides=["Ith_over_sigma2_dB=-10"])
        assert cfg.i_th_w == pytest.approx(cfg.sigma2_w * 10 ** (-1.0))

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="foo"):
            parse_config(None, overrides=["foo=1"])

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("just some words\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_bad_number_named(self):
        with pytest.raises(ConfigError, match="L"):
            parse_config(None, overrides=["L=three"])

    def test_out_of_range_value(self):
        with pytest.raises(ConfigError, match="zeta"):
            parse_config(None, overrides=["zeta=0.5"])

    def test_last_assignment_wins(self):
        cfg = parse_config(None, overrides=["P_max_dBm=10", "P_max_dBm=20"])
        assert cfg.p_max_dbm == pytest.approx(20.0)

    def test_render_roundtrip(self, tmp_path):
        from underlay_ee.config import config_to_text
        cfg = SystemConfig(L=3, seed=17, p_max_w=0.25)
        path = tmp_path / "full.cfg"
        path.write_text(config_to_text(cfg))
        assert parse_config(path) == cfg


class TestEmitCsv:
    def test_empty_table_gives_header_only(self, tmp_path):
        path = tmp_path / "out.csv"
        cli.emit_csv([], path)
        assert path.read_text() == cli.SWEEP_CSV_HEADER + "\n"

    def test_row_roundtrip(self, tmp_path):
        row = cli.SweepRow("pmax", 15.0, 3, "optimal", 123456.5, 2.5, True, 4, 9)
        path = tmp_path / "out.csv"
        cli.emit_csv([row], path)
        with open(path, newline="") as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == 1
        rec = parsed[0]
        assert rec["sweep"] == "pmax"
        assert float(rec["grid_value"]) == 15.0
        assert int(rec["seed"]) == 3
        assert float(rec["EE_bit_per_J"]) == 123456.5
        assert rec["feasible"] == "1"
        assert int(rec["iters_outer"]) == 4

    def test_cardinality(self, tmp_path):
        cfg = SystemConfig(L=2, N=2, K_s=2, K_p=1, M=2)
        spec = cli.SweepSpec("pmax", (0.0, 10.0), 3, ("optimal", "equal"), cfg)
        result = cli.run_sweep(spec)
        assert len(result.rows) == 2 * 3 * 2
        path = tmp_path / "out.csv"
        cli.emit_csv(result.rows, path)
        assert len(path.read_text().splitlines()) == 1 + len(result.rows)


class TestSweep:
    def sweep_args(self, out, extra=()):
        return (["sweep", "--kind", "pmax", "--grid", "10,15", "--trials", "2",
                 "--seed", "5", "--out", str(out)] + TINY + list(extra))

    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(self.sweep_args(a)) == 0
        assert cli.main(self.sweep_args(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(self.sweep_args(a)) == 0
        assert cli.main(self.sweep_args(b, ["--jobs", "2"])) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_optimal_dominates_equal_per_cell(self, tmp_path):
        out = tmp_path / "a.csv"
        assert cli.main(self.sweep_args(out)) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        cells = {}
        for r in rows:
            cells.setdefault((r["grid_value"], r["seed"]), {})[r["policy"]] = float(
                r["EE_bit_per_J"])
        assert cells
        for pair in cells.values():
            assert pair["optimal"] >= pair["equal"] - 1e-9

    def test_ith_sweep_kind(self, tmp_path):
        out = tmp_path / "i.csv"
        args = (["sweep", "--kind", "ith", "--grid=-3,0", "--trials", "1",
                 "--seed", "2", "--policy", "equal", "--out", str(out)] + TINY)
        assert cli.main(args) == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["sweep"] for r in rows} == {"ith"}
        assert len(rows) == 2


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert cli.main(["sweep", "--kind", "bogus", "--out", "x.csv"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_missing_subcommand(self):
        assert cli.main([]) == 1

    def test_config_error(self, capsys, tmp_path):
        out = tmp_path / "x.csv"
        code = cli.main(["sweep", "--kind", "pmax", "--out", str(out),
                         "--set", "nonsense=1"])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_numerical_failure(self, monkeypatch, capsys):
        from underlay_ee.optimizer import NumericalError

        def boom(*args, **kwargs):
            raise NumericalError("synthetic failure")

        monkeypatch.setattr(cli, "maximize_energy_efficiency", boom)
        code = cli.main(["solve"] + TINY)
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_unwritable_output(self, tmp_path):
        args = ["sweep", "--kind", "pmax", "--grid", "10", "--trials", "1",
                "--out", str(tmp_path / "nodir" / "x.csv")] + TINY
        assert cli.main(args) == 1


class TestValidateCommand:
    def test_small_reference_run_passes(self, capsys, tmp_path):
        out = tmp_path / "v.csv"
        code = cli.main(["validate", "--trials", "4000", "--seed", "1",
                         "--out", str(out)])
        assert code == 0
        text = out.read_text()
        assert text.startswith("quantity,closed_form,empirical,stderr,rel_err,status")
        assert "validation ok" in capsys.readouterr().out

    def test_tiny_trials_inconclusive_exit_zero(self, capsys):
        code = cli.main(["validate", "--trials", "10", "--seed", "1"])
        assert code == 0

    def test_corrupted_coefficient_fails(self, capsys):
        code = cli.main(["validate", "--trials", "20000", "--seed", "1",
                         "--corrupt-coefficient", "1.5"])
        assert code == 4
        assert "FAILED" in capsys.readouterr().err


class TestSolveCommand:
    def test_prints_metrics(self, capsys):
        assert cli.main(["solve"] + TINY) == 0
        out = capsys.readouterr().out
        assert "EE:" in out and "sum SE:" in out and "feasible: True" in out

    def test_trace_stream(self, capsys):
        assert cli.main(["solve", "--trace"] + TINY) == 0
        err = capsys.readouterr().err
        assert err.startswith("outer_iter,inner_iter,lambda,F_lambda,EE_lb")
        assert len(err.splitlines()) >= 2

    def test_dump_coefficients(self, tmp_path):
        path = tmp_path / "coeffs.csv"
        assert cli.main(["solve", "--dump-coeffs", str(path)] + TINY) == 0
        lines = path.read_text().splitlines()
        assert lines[0] == "tensor,i,j,l,value"
        assert any(line.startswith("mean_gain") for line in lines)
        assert any(line.startswith("primary_noise_w") for line in lines)
