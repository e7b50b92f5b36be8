import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from meanfield_fluct.cli import main
from meanfield_fluct.config import validate
from meanfield_fluct.experiments import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, fit_rate, run_experiment
from meanfield_fluct.reporting import read_csv, verify_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_fit_rate_exact_power_law():
    s = np.array([16, 64, 256, 1024.0])
    f = fit_rate(s, 3.0 * s ** -0.5)
    assert f.slope == pytest.approx(-0.5, abs=1e-12)
    assert f.intercept == pytest.approx(np.log(3.0), abs=1e-12)
    assert f.r2 == pytest.approx(1.0)
    np.testing.assert_allclose(f.residuals, 0.0, atol=1e-12)


def test_fit_rate_two_term_law_lies_between_exponents():
    # a s^-1/2 + b s^-1: the fitted slope sits strictly between -1 and -1/2 and tends to -1/2
    s = np.array([16, 64, 256, 1024.0])
    slope = fit_rate(s, s ** -0.5 + 2.0 * s ** -1.0).slope
    assert -1.0 < slope < -0.5
    far = 1e6 * s
    assert abs(fit_rate(far, far ** -0.5 + 2.0 * far ** -1.0).slope + 0.5) < abs(slope + 0.5)


def test_fit_rate_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_rate([1, 2, 3], [1, 0, 2])


def test_oracle_suite_through_cli(tmp_path, capsys):
    code = main(["oracle-suite", "--config", str(CONFIGS / "oracle_suite.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["exit_code"] == 0
    assert all(a["pass"] for a in summary["steps"][0]["acceptance"].values())
    assert verify_csv(tmp_path / "tests.csv")


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": "oracle-suite", "bogus": 1}))
    assert main(["oracle-suite", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "unknown key bogus" in capsys.readouterr().err


def test_cli_seed_validation():
    with pytest.raises(SystemExit):
        main(["oracle-suite", "--config", "x.json", "--seed", "-3"])


def test_spde_only_fixture(tmp_path):
    cfg = validate(json.loads((CONFIGS / "spde_only.json").read_text()), {"output": str(tmp_path)})
    assert run_experiment(cfg) == EXIT_OK
    meta, cols, rows = read_csv(tmp_path / "spde_covariance.csv")
    assert cols == ["p", "empirical", "stderr", "predicted"]
    assert meta["config_sha256"] == cfg.sha256()


def test_spde_only_rejects_mismatched_matrices(tmp_path):
    cfg = validate({"experiment": "spde-only", "options": {"A": [[-1.0]], "C": [[1.0, 0.0], [0.0, 1.0]]}},
                   {"output": str(tmp_path)})
    assert run_experiment(cfg) == EXIT_CONFIG


def test_small_rate_run_writes_tables_and_flags_acceptance(tmp_path):
    cfg = validate(json.loads((CONFIGS / "determinism_small.json").read_text()), {"output": str(tmp_path)})
    code = run_experiment(cfg)
    # a three-point sweep at tiny sizes has no acceptance target for N, and the M target may miss
    assert code in (EXIT_OK, EXIT_ACCEPTANCE)
    for name in ("rate_runs", "rate_points", "rate_fits"):
        assert verify_csv(tmp_path / f"{name}.csv")
    assert (tmp_path / "rate.svg").exists()


def test_decoupled_rate_is_skipped_not_fitted(tmp_path):
    raw = json.loads((CONFIGS / "determinism_small.json").read_text())
    raw["model"] = {"name": "decoupled"}
    raw["n_runs"] = 1
    cfg = validate(raw, {"output": str(tmp_path)})
    run_experiment(cfg)
    _, _, rows = read_csv(tmp_path / "rate_fits.csv")
    assert rows[0][-1].startswith("skipped")
    _, _, pts = read_csv(tmp_path / "rate_points.csv")
    assert all(float(r[3]) == 0.0 for r in pts)


def test_console_script_is_installed(tmp_path):
    exe = shutil.which("meanfield-fluct")
    if exe is None:
        pytest.skip("package not installed")
    out = subprocess.run([exe, "oracle-suite", "--config", str(CONFIGS / "oracle_suite.json"),
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
