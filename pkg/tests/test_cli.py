import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fracvar.cli import default_q, main
from fracvar.config import from_dict, load_config
from fracvar.errors import ConfigError, EllipticityError


def write(tmp_path, **cfg):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_valid(self, tmp_path):
        cfg = load_config(write(tmp_path, task="solve", alpha=0.5, a="1", p="1", f="1", N=256))
        assert cfg.task == "solve" and cfg.N == 256
        assert cfg.header["a0"] == 1.0 and cfg.header["p0"] == 1.0

    def test_alpha_range(self):
        with pytest.raises(ConfigError, match=r"\(0,1\)"):
            from_dict({"task": "solve", "alpha": 1.5})

    def test_nonpositive_p(self):
        with pytest.raises(EllipticityError) as exc:
            from_dict({"task": "solve", "alpha": 0.5, "p": "x-1"})
        assert exc.value.field == "p"
        with pytest.raises(EllipticityError) as exc:
            from_dict({"task": "solve", "alpha": 0.5, "p": "x"})
        assert exc.value.field == "p"

    def test_nonpositive_a(self):
        with pytest.raises(EllipticityError) as exc:
            from_dict({"task": "solve", "alpha": 0.5, "a": "0.5 - x"})
        assert exc.value.field == "a"

    @pytest.mark.parametrize("raw", [
        {"task": "solve", "alpha": 0.5, "bogus": 1},
        {"task": "solve"},
        {"task": "plot", "alpha": 0.5},
        {"task": "solve", "alpha": 0.5, "N": 2.5},
        {"task": "solve", "alpha": 0.5, "N_list": [64, 32]},
        {"task": "solve", "alpha": 0.5, "f": "sin("},
        {"task": "solve", "alpha": 0.5, "f": "1/(x - 0.5)"},
        {"task": "solve", "alpha": "0.5"},
        {"task": "convergence", "alpha": 0.5},
        {"task": "solve", "alpha": 0.5, "outputs": {"solution": "/abs.csv"}},
        {"task": "solve", "alpha": 0.5, "lipschitz_lambda": 0.25},
    ])
    def test_schema_violations(self, raw):
        with pytest.raises((ConfigError, EllipticityError)):
            from_dict(raw)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_overrides(self):
        cfg = from_dict({"task": "solve", "alpha": 0.5}).with_overrides(task="scan", seed=9)
        assert cfg.task == "scan" and cfg.seed == 9

    def test_default_q(self):
        assert default_q(0.75) == pytest.approx(3.0)
        assert default_q(0.25) == 4.0


class TestRun:
    def test_solve_zero_rhs(self, tmp_path):
        cfg = write(tmp_path, task="solve", alpha=0.5, f="0", N=32)
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "solution.csv")
        assert rows[0] == ["node", "value"]
        assert len(rows) == 34
        assert all(float(v) == 0.0 for _, v in rows[1:])
        cert = json.loads((tmp_path / "o" / "certificate.json").read_text())
        for key in ("k1_estimate", "k2_estimate", "k2_predicted", "accretivity_margin",
                    "lambda_used"):
            assert key in cert
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["pass"] is True

    def test_crlf_and_precision(self, tmp_path):
        cfg = write(tmp_path, task="solve", alpha=0.5, f="sin(pi*x)", N=16)
        main(["--config", str(cfg), "--out", str(tmp_path)])
        raw = (tmp_path / "solution.csv").read_bytes()
        assert raw.count(b"\r\n") == 18
        value = read_csv(tmp_path / "solution.csv")[5][1]
        assert len(value.replace("-", "").replace(".", "").lstrip("0")) <= 17

    def test_convergence(self, tmp_path):
        cfg = write(tmp_path, task="convergence", alpha=0.5, a="1", p="1", z_star="x*(1-x)",
                    N_list=[64, 128, 256, 512])
        assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "convergence.csv")
        assert rows[0] == ["N", "l2", "l2_rate", "h1", "h1_rate"]
        assert min(float(r[2]) for r in rows[2:]) >= 1.8

    def test_verify(self, tmp_path):
        cfg = write(tmp_path, task="verify", alpha=0.5)
        assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "verify.json").read_text())
        assert set(report) == {"sbp", "greens", "adjoint", "accretivity"}
        assert all(entry["pass"] for entry in report.values())

    def test_scan(self, tmp_path):
        cfg = write(tmp_path, task="scan", alpha=0.5, q=2.5, N=128)
        assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 0
        data = json.loads((tmp_path / "scan.json").read_text())
        assert data["fitted_K"] > 0 and data["worst_ratio"] == pytest.approx(1.0)
        assert read_csv(tmp_path / "scan.csv")[0] == ["quantity", "value"]

    def test_failed_check_exit_status(self, tmp_path):
        cfg = write(tmp_path, task="convergence", alpha=0.5, z_star="x*(1-x)",
                    N_list=[8, 16], min_rate=5.0)
        assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 1
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["pass"] is False and summary["checks"] == {"l2_rate": False}

    def test_error_record(self, tmp_path):
        cfg = write(tmp_path, task="solve", alpha=0.5, p="x-1")
        assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 2
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["error"] == "EllipticityError" and err["field"] == "p"

    def test_parse_error_record(self, tmp_path):
        cfg = write(tmp_path, task="solve", alpha=0.5, f="2*^x")
        assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 2
        err = json.loads((tmp_path / "error.json").read_text())
        assert "offset 2" in err["message"]

    def test_flags_override_file(self, tmp_path):
        cfg = write(tmp_path, task="solve", alpha=0.5, N=16, seed=1)
        assert main(["--config", str(cfg), "--task", "scan", "--seed", "4",
                     "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["task"] == "scan" and summary["seed"] == 4

    def test_custom_output_names(self, tmp_path):
        cfg = write(tmp_path, task="solve", alpha=0.5, N=8,
                    outputs={"solution": "z.csv", "matrix": "B.coo"})
        assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "z.csv").exists()
        assert len((tmp_path / "B.coo").read_text().splitlines()) == 7 * 8 // 2 + 6

    @pytest.mark.parametrize("task", ["solve", "scan"])
    def test_determinism(self, tmp_path, task):
        cfg = write(tmp_path, task=task, alpha=0.3, a="1 + x", p="2 - x", f="exp(x)", N=64)
        for name in ("a", "b"):
            main(["--config", str(cfg), "--out", str(tmp_path / name), "--seed", "5"])
        out = {"solve": "solution.csv", "scan": "scan.csv"}[task]
        assert (tmp_path / "a" / out).read_bytes() == (tmp_path / "b" / out).read_bytes()

    def test_module_entry_point(self, tmp_path):
        cfg = write(tmp_path, task="solve", alpha=0.5, N=8)
        proc = subprocess.run([sys.executable, "-m", "fracvar", "--config", str(cfg),
                               "--out", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert np.isfinite([float(r[1]) for r in read_csv(tmp_path / "solution.csv")[1:]]).all()

    def test_missing_config_flag(self):
        with pytest.raises(SystemExit):
            main([])
