import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from tunable_wavelets import checks, cli, raster_io
from tunable_wavelets.checks import CheckResult


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def body(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


class TestFilters:
    def test_haar(self):
        code, out, _ = run("filters", "--taps", "2")
        assert code == 0
        h0 = next(line for line in body(out) if line.startswith("h0="))
        values = [float(v) for v in h0[4:-1].split(",")]
        np.testing.assert_allclose(values, [0.70710678118654757] * 2, atol=1e-15)
        assert h0.startswith("h0=[0.70710678")

    def test_prints_frequency_response_csv(self):
        code, out, _ = run("filters", "--taps", "4", "--mode", "free", "--points", "5")
        lines = body(out)
        start = lines.index("omega,abs_h0,abs_h1")
        rows = list(csv.reader(lines[start + 1:]))
        assert len(rows) == 5
        assert float(rows[0][1]) == pytest.approx(np.sqrt(2))
        assert float(rows[-1][1]) == pytest.approx(0.0, abs=1e-12)
        assert not any(line.startswith("angles=") for line in lines)

    def test_save_and_reload(self, tmp_path):
        path = tmp_path / "bank.txt"
        code, first, _ = run("filters", "--taps", "6", "--save", str(path))
        assert code == 0 and path.exists()
        code, second, _ = run("filters", "--bank-file", str(path))
        assert body(first) == body(second)

    def test_bad_taps(self):
        code, _, err = run("filters", "--taps", "5")
        assert code == 1 and "error" in err


class TestCheck:
    def test_passes(self):
        code, out, _ = run("check", "--taps", "8", "--trials", "100")
        assert code == 0
        rows = list(csv.DictReader(body(out)))
        assert {r["check"] for r in rows} >= {"perfect_reconstruction", "operator_orthogonality",
                                              "jacobian_rel_error", "unit_backward_rel_error"}
        assert all(r["status"] == "pass" for r in rows)

    def test_failure_exit_code(self, monkeypatch):
        fake = [CheckResult("perfect_reconstruction", 1e-3, 1e-10),
                CheckResult("operator_orthogonality", 0.0, 1e-10)]
        monkeypatch.setattr(checks, "run_suite", lambda *a, **k: fake)
        code, out, _ = run("check")
        assert code == 2
        assert "FAIL" in out

    def test_all_pass_means_zero(self, monkeypatch):
        monkeypatch.setattr(checks, "run_suite",
                            lambda *a, **k: [CheckResult("x", 1e-4, 1e-4)])
        assert run("check")[0] == 0


class TestUsage:
    def test_unknown_subcommand(self):
        code, _, err = run("bogus")
        assert code == 1
        assert "usage" in err

    def test_unknown_flag(self):
        assert run("filters", "--frobnicate")[0] == 1

    def test_no_arguments(self):
        assert run()[0] == 1

    def test_resolved_config_is_printed(self):
        _, out, _ = run("filters", "--taps", "4")
        assert "# taps=4" in out.splitlines()
        assert "# command=filters" in out.splitlines()

    def test_console_script_module(self):
        proc = subprocess.run([sys.executable, "-m", "tunable_wavelets.cli", "filters"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "h0=[0.70710678" in proc.stdout


class TestConfigFile:
    def test_file_values_and_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# filters defaults\ntaps = 4\nmode=free\n")
        _, out, _ = run("--config", str(cfg), "filters")
        assert "# taps=4" in out and "# mode=free" in out
        _, out, _ = run("--config", str(cfg), "filters", "--taps", "6")
        assert "# taps=6" in out and "# mode=free" in out

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour=blue\n")
        assert run("--config", str(cfg), "filters")[0] == 1

    def test_bad_choice_and_missing_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("mode=wavy\n")
        assert run("--config", str(cfg), "filters")[0] == 1
        assert run("--config", str(tmp_path / "none.cfg"), "filters")[0] == 1

    def test_env_seed(self, monkeypatch):
        monkeypatch.setenv("TWU_SEED", "17")
        _, out, _ = run("check", "--trials", "1", "--taps", "2")
        assert "# seed=17" in out
        _, out, _ = run("check", "--trials", "1", "--taps", "2", "--seed", "3")
        assert "# seed=3" in out
        monkeypatch.setenv("TWU_SEED", "abc")
        assert run("check", "--trials", "1")[0] == 1


class TestPreprocess:
    def make_inputs(self, tmp_path):
        img = np.full((10, 8), 5.0)
        img[3:7] = 200.0
        raster_io.write_pgm(tmp_path / "scan.pgm", img)
        raster_io.write_raw_f32(tmp_path / "scan2.f32", img[:, :6] / 10)
        return img

    def test_directory_run_with_report(self, tmp_path):
        img = self.make_inputs(tmp_path)
        report = tmp_path / "report.csv"
        code, out, _ = run("preprocess", "--input", str(tmp_path), "--a", "0.5",
                           "--wavelet", "haar", "--emit-report", str(report))
        assert code == 0
        prep = raster_io.read_raster(tmp_path / "scan.prep.pgm")
        assert prep.shape == (4, 8)
        np.testing.assert_allclose(prep, img[3:7], atol=0.5)
        prep2 = raster_io.read_raster(tmp_path / "scan2.prep.f32")
        np.testing.assert_allclose(prep2, img[3:7, :6] / 10, atol=1e-4)
        rows = list(csv.DictReader(report.read_text().splitlines()))
        assert [r["image"] for r in rows] == ["scan.pgm", "scan2.f32"]
        assert (rows[0]["first_row"], rows[0]["last_row"]) == ("3", "6")
        # rerunning skips the generated outputs
        code, out, _ = run("preprocess", "--input", str(tmp_path), "--wavelet", "haar")
        assert out.count(" -> ") == 2

    def test_missing_input(self, tmp_path):
        assert run("preprocess", "--input", str(tmp_path / "nothing"))[0] == 1
        assert run("preprocess", "--input", str(tmp_path))[0] == 1

    def test_too_small_for_filter(self, tmp_path):
        raster_io.write_pgm(tmp_path / "s.pgm", np.ones((4, 4)))
        assert run("preprocess", "--input", str(tmp_path / "s.pgm"), "--wavelet", "db4")[0] == 1


class TestTrainEval:
    def test_train_then_eval(self, tmp_path):
        out_dir = tmp_path / "run"
        args = ["train", "--policy", "pr-relax", "--taps", "4", "--epochs", "1",
                "--batch-size", "8", "--channels", "2", "--folds", "2", "--n-samples", "20",
                "--n-test", "10", "--seed", "1", "--out", str(out_dir)]
        code, out, _ = run(*args)
        assert code == 0
        metrics = (out_dir / "metrics.csv").read_text()
        assert metrics.splitlines()[0] == "epoch,fold,seed,split,loss,accuracy,pr_loss_sum"
        assert (out_dir / "fold0.twu").exists() and (out_dir / "fold1.twu").exists()
        assert "test: mean" in out
        run(*args)
        assert (out_dir / "metrics.csv").read_text() == metrics

        code, out, _ = run("eval", "--checkpoint", str(out_dir / "fold0.twu"), "--seed", "1",
                           "--n-test", "10")
        assert code == 0
        lines = body(out)
        acc = float(lines[0].split("=")[1])
        counts = [list(map(int, line.split(",")[1:])) for line in lines[2:4]]
        assert sum(map(sum, counts)) == 10
        assert acc == pytest.approx((counts[0][0] + counts[1][1]) / 10)

    def test_eval_bad_checkpoint(self, tmp_path):
        bad = tmp_path / "x.twu"
        bad.write_bytes(b"junk" * 4)
        assert run("eval", "--checkpoint", str(bad))[0] == 1

    def test_invalid_policy(self):
        assert run("train", "--policy", "dropout")[0] == 1
