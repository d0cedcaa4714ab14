import json
import os
import subprocess
import sys

import pytest

from optstop.cli import ConfigError, main, parse_config_text


def write(path, text):
    path.write_text(text)
    return str(path)


class TestConfigParsing:
    def test_basic_and_comments(self):
        cfg = parse_config_text("a = 1\n# note\nb = 2, 3  # trailing\n\nc = x\n")
        assert cfg == {"a": "1", "b": "2, 3", "c": "x"}

    def test_malformed_line(self):
        with pytest.raises(ConfigError):
            parse_config_text("just a token\n")


class TestExitCodes:
    def test_exact_markov_defaults(self, tmp_path, capsys):
        cfg = write(tmp_path / "m.cfg", "horizon = 8\nalpha = 0.05, 0.1\nprior_grid = 500\n")
        code = main(["exact-markov", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == 0
        rows = (tmp_path / "out" / "records.csv").read_text().splitlines()
        assert len(rows) == 3  # header + one row per alpha
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["passed"] is True
        assert (tmp_path / "out" / "verdict.txt").read_text().strip().endswith("PASS")

    def test_mc_type1_point_zero_reports_zero(self, tmp_path, capsys):
        cfg = write(
            tmp_path / "t.cfg",
            "alpha = 0.05\ng = 1\nn_trials = 500\nrule_cap = 30\n"
            "effect = point\neffect_delta = 0\n",
        )
        code = main(["mc-type1", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["checks"][0]["rate"] == 0.0

    def test_invalid_alpha_exits_one(self, tmp_path, capsys):
        cfg = write(tmp_path / "bad.cfg", "alpha = 1.5\nhorizon = 6\n")
        code = main(["exact-markov", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == 1
        assert "(0, 1]" in capsys.readouterr().err

    def test_unknown_key_exits_one(self, tmp_path, capsys):
        cfg = write(tmp_path / "u.cfg", "horizon = 6\nmystery_key = 3\n")
        code = main(["exact-markov", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == 1
        assert "mystery_key" in capsys.readouterr().err

    def test_missing_config_exits_one(self, tmp_path, capsys):
        code = main(["exact-markov", "--config", str(tmp_path / "nope.cfg")])
        assert code == 1

    def test_describe_runs_nothing(self, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        code = main(["mc-strong-calibration", "--describe"])
        assert code == 0
        out = capsys.readouterr().out
        assert "strong calibration" in out.lower() or "calibrat" in out.lower()
        assert not (tmp_path / "summary.json").exists()

    def test_contract_failure_exits_two(self, tmp_path, capsys):
        # an identical-hypotheses model never reaches beta >= 3, so a
        # calibration run under an impossible tolerance must fail cleanly:
        # force failure via tol = 0 on a discretized model with residual > 0
        cfg = write(
            tmp_path / "c.cfg",
            "horizon = 6\nprior_grid = 50\nrule = bf-threshold\nrule_upper = 3\n"
            "rule_cap = 6\ntol = 1e-18\n",
        )
        code = main(["exact-calibration", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == 2
        assert "FAIL" in (tmp_path / "out" / "verdict.txt").read_text()


class TestInvarianceCheckCli:
    def test_runs_and_passes(self, tmp_path, capsys):
        cfg = write(tmp_path / "i.cfg", "trials = 300\nrule_cap = 500\n")
        code = main(["invariance-check", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == 0
        text = (tmp_path / "out" / "records.csv").read_text()
        assert "raw-sum-squares" in text


class TestByteIdenticalOutputs:
    def test_same_config_same_bytes(self, tmp_path, capsys):
        cfg = write(
            tmp_path / "b.cfg",
            "g = 0.5, 2\nn_trials = 2000\nrule = bf-threshold\nrule_upper = 10\n"
            "rule_lower = 0.1\nrule_cap = 40\nbins = 8\n",
        )
        for sub in ("o1", "o2"):
            code = main(
                ["mc-strong-calibration", "--config", cfg, "--seed", "5", "--out",
                 str(tmp_path / sub)]
            )
            assert code in (0, 2)  # contract outcome may be either at this tiny N
        for name in ("records.csv", "summary.json", "verdict.txt"):
            assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()

    def test_thread_count_does_not_change_records(self, tmp_path):
        cfg = write(
            tmp_path / "t.cfg",
            "g = 1\nn_trials = 20000\nrule = bf-threshold\nrule_upper = 20\nrule_cap = 50\n",
        )
        outs = {}
        for threads, sub in (("1", "u1"), ("4", "u4")):
            env = dict(os.environ, OPTSTOP_THREADS=threads)
            proc = subprocess.run(
                [sys.executable, "-m", "optstop.cli", "mc-bf-mean", "--config", cfg,
                 "--seed", "7", "--out", str(tmp_path / sub)],
                env=env,
                capture_output=True,
                text=True,
            )
            assert proc.returncode == 0, proc.stderr
            outs[sub] = (tmp_path / sub / "records.csv").read_bytes()
        assert outs["u1"] == outs["u4"]


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run(
            [sys.executable, "-m", "optstop.cli", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "experiment" in proc.stdout
