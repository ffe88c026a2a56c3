import numpy as np
import pandas as pd
import pytest

from app.core.exceptions import PreconditionError
from app.schemas.assumption import AssumptionStatus
from app.services.output import MANIFEST_NAME, RunRecorder, read_json, to_jsonable, verify_manifest, write_csv
from app.services.report import build_report


def test_to_jsonable_handles_numpy_and_nonfinite():
    payload = {
        "a": np.float64(0.1),
        "b": np.array([1.0, np.nan, np.inf]),
        "c": (np.int64(3), float("-inf")),
        "d": AssumptionStatus.VIOLATED,
    }
    assert to_jsonable(payload) == {"a": 0.1, "b": [1.0, None, None], "c": [3, None], "d": "VIOLATED"}


def test_json_uses_shortest_repr(tmp_path):
    rec = RunRecorder(tmp_path, "unit", "0.0")
    rec.json("x.json", {"v": 0.1 + 0.2})
    assert '"v": 0.30000000000000004' in (tmp_path / "x.json").read_text(encoding="utf-8")


def test_csv_keeps_full_precision(tmp_path):
    path = write_csv(pd.DataFrame({"x": [1.0 / 3.0]}), tmp_path / "x.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == ["x", "0.33333333333333331"]
    assert float(lines[1]) == 1.0 / 3.0


def test_manifest_merges_commands(tmp_path):
    first = RunRecorder(tmp_path, "certify", "0.0")
    first.json("certificate.json", {"verdict": "FINITE"})
    with first.stage("lambda"):
        pass
    first.finish(0, {"tol": 1e-6})

    second = RunRecorder(tmp_path, "lyapunov", "0.0")
    second.json("drift_check.json", {"pass": True})
    second.json("certificate.json", {"verdict": "FINITE", "c2": 1.0})
    second.finish(5)

    manifest = read_json(tmp_path / MANIFEST_NAME)
    assert manifest["commands"] == ["certify", "lyapunov"]
    assert manifest["command"] == "lyapunov"
    assert manifest["exit_code"] == 5
    assert sorted(f["path"] for f in manifest["files"]) == ["certificate.json", "drift_check.json"]
    assert manifest["config"]["certify"] == {"tol": 1e-6}
    assert "certify.lambda" in manifest["stages"]
    assert all(verify_manifest(tmp_path).values())


def test_verify_manifest_detects_tampering(tmp_path):
    rec = RunRecorder(tmp_path, "unit", "0.0")
    rec.text("notes.md", "原始内容")
    rec.finish(0)
    (tmp_path / "notes.md").write_text("被修改\n", encoding="utf-8")
    assert verify_manifest(tmp_path) == {"notes.md": False}


def test_report_sections(tmp_path):
    rec = RunRecorder(tmp_path, "certify", "0.0")
    rec.json("certificate.json", {
        "model_name": "tempered", "model_checksum": "ab" * 32, "verdict": "FINITE",
        "lambda_est": 0.125, "rel_err_est": 1e-7, "Rmax": 64.0, "doublings": 3, "n_nodes": 2048,
        "tail_outer": {"kind": "power", "slope": -2.0, "rate": None, "divergent": False},
        "c1": 4.0 / 9.0, "c2": 0.3, "c2_samples": 4097, "r1": 4.0,
    })
    rec.json("hitting.json", [{"x": [4.0], "p_hat": 0.5, "ci_low": 0.45, "ci_high": 0.55,
                                "escape_bound": 0.6, "consistent": True}])
    rec.finish(0)
    text = build_report(tmp_path)
    assert "## 一致遍历性证书" in text
    assert "**FINITE**" in text
    assert "[profile.csv](profile.csv)" in text
    assert "## 进入概率与逃逸界" in text
    assert "漂移不等式检验" not in text


def test_report_requires_results(tmp_path):
    with pytest.raises(PreconditionError):
        build_report(tmp_path)
    with pytest.raises(PreconditionError):
        build_report(tmp_path / "missing")
