import hashlib
import json

import pytest

from app.cli import load_run_config, main, parse_points
from app.core.exceptions import ConfigurationException, ValidationException
from app.services.output import read_json, verify_manifest

TEMPERED = ["--catalog", "langevin_tempered", "--param", "alpha=0.2", "--param", "beta=0.3", "--param", "c=1"]


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _error(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith('{"error"')]
    assert lines, "stderr 中没有结构化错误"
    return json.loads(lines[-1])["error"]


@pytest.fixture(scope="module")
def certified_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tempered")
    assert main(["certify", *TEMPERED, "--nodes", "256", "--out", str(out)]) == 0
    return out


def test_parse_points():
    assert parse_points("1,0; 3,0") == [[1.0, 0.0], [3.0, 0.0]]
    with pytest.raises(ValidationException):
        parse_points("1,a")


def test_run_config_scoping(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 5, "param": {"K": 2}, "certify": {"nodes": 256}, "tv": {"bins": 10}}))
    assert load_run_config(str(path), "certify") == {"seed": 5, "param": {"K": 2}, "nodes": 256}
    path.write_text(json.dumps({"certify": 3}))
    with pytest.raises(ConfigurationException):
        load_run_config(str(path), "certify")


def test_certify_writes_verified_run(certified_dir):
    cert = read_json(certified_dir / "certificate.json")
    assert cert["verdict"] == "FINITE"
    assert cert["lambda_est"] == pytest.approx(0.125, rel=1e-3)
    assert (certified_dir / "profile.csv").exists()
    manifest = read_json(certified_dir / "manifest.json")
    assert manifest["commands"][0] == "certify"
    assert manifest["config"]["certify"]["nodes"] == 256
    assert all(verify_manifest(certified_dir).values())


def test_certify_is_reproducible(certified_dir, tmp_path):
    assert main(["certify", *TEMPERED, "--nodes", "256", "--workers", "1", "--out", str(tmp_path)]) == 0
    for name in ("certificate.json", "profile.csv"):
        assert _digest(tmp_path / name) == _digest(certified_dir / name)


def test_lyapunov_after_certify(certified_dir):
    assert main(["lyapunov", *TEMPERED, "--n", "2000", "--out", str(certified_dir)]) == 0
    drift = read_json(certified_dir / "drift_check.json")
    assert drift["pass"] is True
    assert drift["max_exterior_generator"] <= -0.5 + 1e-3
    assert (certified_dir / "lyapunov.csv").exists()


def test_report_after_runs(certified_dir):
    assert main(["report", "--out", str(certified_dir)]) == 0
    text = (certified_dir / "report.md").read_text(encoding="utf-8")
    assert "一致遍历性证书" in text
    assert "report" in read_json(certified_dir / "manifest.json")["commands"]


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 1
    assert _error(capsys)["code"] == "PRECONDITION_ERROR"


def test_certify_infinite_exit_code(tmp_path):
    code = main(["certify", "--catalog", "polynomial_drift", "--param", "K=1", "--param", "kappa=1",
                 "--nodes", "256", "--out", str(tmp_path)])
    assert code == 2
    assert read_json(tmp_path / "certificate.json")["verdict"] == "INFINITE"


def test_lyapunov_refuses_missing_certificate(tmp_path, capsys):
    assert main(["lyapunov", *TEMPERED, "--out", str(tmp_path)]) == 1
    assert _error(capsys)["details"]["field"] == "cert"


def test_degenerate_noise_reports_assumption(tmp_path, capsys):
    model = tmp_path / "flat.json"
    model.write_text(json.dumps({"name": "flat", "d": 1, "n": 1, "x0": [0.0], "r0": 1.0,
                                 "drift": ["-x1"], "diffusion": [["0"]]}))
    assert main(["certify", "--model", str(model), "--out", str(tmp_path / "run")]) == 1
    error = _error(capsys)
    assert error["code"] == "ASSUMPTION_VIOLATION"
    assert error["details"]["assumption"] == "A5"


def test_model_source_required(tmp_path, capsys):
    assert main(["certify", "--out", str(tmp_path)]) == 1
    _error(capsys)


def test_check_assumptions_exit_codes(tmp_path):
    assert main(["check-assumptions", *TEMPERED, "--n", "512", "--out", str(tmp_path / "t")]) == 4
    reports = read_json(tmp_path / "t" / "assumptions.json")
    assert [r["status"] for r in reports if r["assumption"] == "A4"] == ["VIOLATED"]
    code = main(["check-assumptions", "--catalog", "polynomial_drift", "--param", "K=1", "--param", "kappa=2",
                 "--n", "512", "--out", str(tmp_path / "p")])
    assert code == 0


def test_tv_run(tmp_path):
    code = main(["tv", "--catalog", "polynomial_drift", "--param", "K=1", "--param", "kappa=1",
                 "--paths", "1000", "--dt", "0.01", "--t", "1", "--checkpoints", "0.25,0.5,0.75,1",
                 "--starts", "2;-2", "--out", str(tmp_path)])
    assert code == 0
    fit = read_json(tmp_path / "tv_fit.json")
    assert "refused" in fit
    assert fit["metadata"]["grid_proxy"] is True
    for name in ("tv_curve.csv", "sup_tv.csv"):
        assert (tmp_path / name).exists()


def test_hitting_run(tmp_path):
    model = tmp_path / "bm3.json"
    model.write_text(json.dumps({
        "name": "bm3", "d": 3, "n": 3, "x0": [0, 0, 0], "r0": 1.0, "drift": ["0", "0", "0"],
        "diffusion": [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]],
    }))
    code = main(["hitting", "--model", str(model), "--paths", "500", "--dt", "0.01", "--t", "1",
                 "--starts", "4,0,0", "--eps", "0.5", "--out", str(tmp_path / "run")])
    assert code == 0
    rows = read_json(tmp_path / "run" / "hitting.json")
    assert rows[0]["escape_bound"] == pytest.approx(0.875, rel=1e-5)
    # T = 1 远小于进入所需时间，未进入比例高于永不进入的上界
    assert rows[0]["consistent"] is False
    assert rows[0]["p_hat"] < 0.05


def test_lyapunov_outputs_reproducible(tmp_path):
    runs = []
    for name, workers in (("a", "1"), ("b", "2")):
        out = tmp_path / name
        assert main(["certify", *TEMPERED, "--nodes", "256", "--workers", workers, "--out", str(out)]) == 0
        assert main(["lyapunov", *TEMPERED, "--n", "2000", "--workers", workers, "--out", str(out)]) == 0
        runs.append(out)
    for name in ("lyapunov.csv", "lyapunov.json", "drift_check.json"):
        assert _digest(runs[0] / name) == _digest(runs[1] / name)


def test_tv_outputs_reproducible(tmp_path):
    args = ["tv", "--catalog", "polynomial_drift", "--param", "K=1", "--param", "kappa=2",
            "--paths", "2000", "--dt", "0.01", "--t", "2", "--checkpoints", "0.5,1,2", "--starts", "1;-3;6"]
    assert main([*args, "--workers", "1", "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--workers", "3", "--out", str(tmp_path / "b")]) == 0
    for name in ("tv_curve.csv", "sup_tv.csv", "tv_fit.json"):
        assert _digest(tmp_path / "a" / name) == _digest(tmp_path / "b" / name)
