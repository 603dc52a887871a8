import json

import pytest
import yaml

from collabvar.cli import EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_OK, main


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    return main([*argv, "--out", str(out)]), out


def test_simulate_is_deterministic(tmp_path):
    code1, a = _run(tmp_path, "a", "simulate", "--T", "200", "--seed", "5")
    code2, b = _run(tmp_path, "b", "simulate", "--T", "200", "--seed", "5")
    assert code1 == code2 == EXIT_OK
    assert (a / "panel.csv").read_bytes() == (b / "panel.csv").read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["exit_code"] == 0
    assert set(manifest["outputs"]) == {"panel.csv", "coefficients.csv", "manifest.json"}


def test_manifest_rerun_reproduces_outputs(tmp_path):
    _, a = _run(tmp_path, "a", "simulate", "--scenario", "random", "--n", "3", "--T", "150",
                "--seed", "9")
    code, b = _run(tmp_path, "b", "simulate", "--config", str(a / "manifest.json"))
    assert code == EXIT_OK
    for name in ("panel.csv", "coefficients.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_yaml_config_and_flag_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"T": 100, "seed": 1}))
    _, out = _run(tmp_path, "o", "simulate", "--config", str(cfg), "--T", "120")
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["T"] == 120 and m["config"]["seed"] == 1


def test_invalid_lags_exit_2(tmp_path, capsys):
    code, _ = _run(tmp_path, "o", "simulate", "--lags", "2,1")
    assert code == EXIT_CONFIG
    assert "lags" in capsys.readouterr().err


def test_schema_errors_listed_together(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"bogus": 1, "T": -3, "lags": [0]}))
    code, _ = _run(tmp_path, "o", "simulate", "--config", str(cfg))
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    for field in ("bogus", "T", "lags"):
        assert f"  {field}:" in err


def test_fit_needs_data(tmp_path, capsys):
    code, _ = _run(tmp_path, "o", "fit")
    assert code == EXIT_CONFIG
    assert "data" in capsys.readouterr().err


def test_fit_missing_file_exit_2(tmp_path):
    code, _ = _run(tmp_path, "o", "fit", "--data", str(tmp_path / "none.csv"))
    assert code == EXIT_CONFIG


@pytest.mark.parametrize("estimator", ["ls", "admm_central", "admm_distributed"])
def test_fit_after_simulate(tmp_path, estimator):
    _, sim = _run(tmp_path, "sim", "simulate", "--T", "300")
    code, out = _run(tmp_path, estimator, "fit", "--data", str(sim / "panel.csv"),
                     "--estimator", estimator, "--max-iter", "50", "--transcript")
    assert code == EXIT_OK
    assert (out / "coefficients.csv").exists()
    if estimator == "admm_distributed":
        assert (out / "transcript.jsonl").exists()


def test_predict_example(tmp_path, capsys):
    code, _ = _run(tmp_path, "o", "attack", "--predict", "--attacker", "central", "--T", "1000",
                   "--n", "10", "--p", "3")
    assert code == EXIT_OK
    assert "k=1" in capsys.readouterr().out


def test_predict_bad_regime_exit_2(tmp_path):
    code, _ = _run(tmp_path, "o", "attack", "--predict", "--attacker", "central", "--T", "20",
                   "--n", "10", "--p", "3")
    assert code == EXIT_CONFIG


def test_karr_demo_output(tmp_path, capsys):
    code, _ = _run(tmp_path, "o", "protocol", "--demo", "karr", "--m", "100", "--k", "5",
                   "--s", "5")
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "g* = 50" in out
    assert "NLIE owner1 = 275, NLIE owner2 = 275" in out


@pytest.mark.parametrize("demo", ["ac", "commodity", "inverse"])
def test_protocol_demos(tmp_path, demo):
    code, out = _run(tmp_path, demo, "protocol", "--demo", demo)
    assert code == EXIT_OK
    assert (out / "transcript.jsonl").exists()


def test_reconstruct_below_prediction_exit_4(tmp_path):
    code, out = _run(tmp_path, "o", "attack", "--reconstruct", "--attacker", "owner", "--T", "30",
                     "--n", "2", "--p", "1", "--k", "2")
    assert code == EXIT_INCONCLUSIVE
    assert (out / "attack_report.csv").exists()


def test_reconstruct_at_prediction(tmp_path):
    code, _ = _run(tmp_path, "o", "attack", "--reconstruct", "--attacker", "owner", "--T", "30",
                   "--n", "2", "--p", "1", "--starts", "5")
    assert code == EXIT_OK


def test_output_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("COLLABVAR_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", "--T", "50"]) == EXIT_OK
    assert (tmp_path / "env" / "manifest.json").exists()


def test_bench_small(tmp_path):
    code, out = _run(tmp_path, "o", "bench", "--replications", "2", "--T", "500", "--lam", "1",
                     "--max-iter", "20", "--noise", "laplace:0.2", "--no-plots")
    assert code == EXIT_OK
    assert (out / "metrics.csv").exists() and (out / "coefficient_summary.csv").exists()
