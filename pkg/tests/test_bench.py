import math

import numpy as np
import pandas as pd
import pytest

from collabvar.bench import (ExperimentConfig, MetricRow, ar_win_fraction, chronological_split,
                             improvement_pct, load_solar_csv, noise_label, replication_distortion,
                             run_random_coefficients, run_solar, run_synthetic, summarize, to_frame)
from collabvar.errors import IngestionError
from collabvar.estimators import AdmmConfig
from collabvar.var_core import generate_stationary_coefficients, simulate_var

SMALL = dict(T=600, burn_in=100, replications=3, admm=AdmmConfig(max_iter=30), lam=1.0)


def test_improvement_identity():
    assert improvement_pct(2.0, 1.5) == 25.0
    assert improvement_pct(1.0, 1.2) == pytest.approx(-20.0)
    assert math.isnan(improvement_pct(0.0, 1.0))
    row = MetricRow("s", "o", 0, "VAR", "none", 0.5, 0.8, 1.0, 1.0)
    assert row.improvement_mae == 50.0
    assert row.improvement_rmse == pytest.approx(20.0)


def test_noise_label():
    assert noise_label() == "none"
    assert noise_label("laplace", 0.0) == "none"
    assert noise_label("gaussian", 0.2) == "gaussian:0.2"


def test_chronological_split():
    v = np.arange(20.0)[:, None]
    train, test = chronological_split(v, 0.2)
    assert train.shape[0] == 16 and test.shape[0] == 4
    assert train[-1, 0] < test[0, 0]


def test_synthetic_is_bitwise_reproducible():
    cfg = ExperimentConfig(noise_grid=(("laplace", 0.2),), **SMALL)
    m1, c1, lam1 = run_synthetic(cfg)
    m2, c2, lam2 = run_synthetic(cfg)
    par = run_synthetic(ExperimentConfig(noise_grid=(("laplace", 0.2),), workers=3, **SMALL))
    assert lam1 == lam2 == 1.0
    assert to_frame(m1).equals(to_frame(m2))
    assert to_frame(c1).equals(to_frame(c2))
    assert to_frame(m1).equals(to_frame(par[0]))
    other = run_synthetic(ExperimentConfig(noise_grid=(("laplace", 0.2),), seed=1, **SMALL))
    assert not to_frame(m1).equals(to_frame(other[0]))


def test_row_counts_and_tables():
    cfg = ExperimentConfig(noise_grid=(("gaussian", 0.2), ("uniform", 0.2)), **SMALL)
    metrics, coefs, _ = run_synthetic(cfg)
    assert len(metrics) == 3 * 3 * 2
    assert len(coefs) == 3 * 3 * 8
    tab = summarize(coefs)
    assert set(tab.columns) == {"scenario", "noise", "abs_diff_mean", "abs_diff_sd", "count"}
    assert tab["count"].tolist() == [24, 24, 24]
    dist = replication_distortion(coefs)
    assert len(dist) == 9
    assert 0.0 <= ar_win_fraction(metrics) <= 1.0


def test_heavy_noise_increases_distortion():
    cfg = ExperimentConfig(noise_grid=(("laplace", 0.2), ("laplace", 1.0)), T=3000,
                           burn_in=100, replications=2, admm=AdmmConfig(max_iter=50), lam=1.0)
    _, coefs, _ = run_synthetic(cfg)
    tab = summarize(coefs).set_index("noise")["abs_diff_mean"]
    assert tab["none"] < tab["laplace:0.2"] < tab["laplace:1"]


def test_lambda_selected_from_grid():
    cfg = ExperimentConfig(T=800, burn_in=100, replications=1, admm=AdmmConfig(max_iter=20),
                           lam_grid=(0.0, 10.0))
    _, _, lam = run_synthetic(cfg)
    assert lam in (0.0, 10.0)


def test_random_coefficients_run():
    cfg = ExperimentConfig(model="generated", n=3, lags=(1,), **SMALL)
    rows, _ = run_random_coefficients(cfg)
    assert len(rows) == 3 * 3
    assert all(np.isfinite(r.mae) for r in rows)


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig(replications=0)
    with pytest.raises(ValueError):
        ExperimentConfig(test_fraction=1.0)


def _solar_frame(T=400):
    panel = simulate_var(generate_stationary_coefficients(3, 1, seed=2), T, seed=3)
    df = pd.DataFrame(np.array(panel.values), columns=["plant_a", "plant_b", "plant_c"])
    df.insert(0, "timestamp", pd.date_range("2020-01-01", periods=T, freq="h").astype(str))
    return df


def test_solar_ingestion_drops_missing_rows(tmp_path):
    df = _solar_frame(50)
    df.loc[5, "plant_b"] = np.nan
    df.to_csv(tmp_path / "s.csv", index=False)
    panel = load_solar_csv(tmp_path / "s.csv")
    assert panel.values.shape == (49, 3)
    assert panel.owners == ("plant_a", "plant_b", "plant_c")
    assert df.loc[5, "timestamp"] not in panel.timestamps


@pytest.mark.parametrize("bad", ["abc", "inf"])
def test_solar_ingestion_rejects_bad_cells(tmp_path, bad):
    df = _solar_frame(20).astype(object)
    df.loc[7, "plant_c"] = bad
    df.to_csv(tmp_path / "s.csv", index=False)
    with pytest.raises(IngestionError, match=r"\[7\]"):
        load_solar_csv(tmp_path / "s.csv")


def test_solar_ingestion_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_solar_csv(tmp_path / "nope.csv")


def test_run_solar_on_synthetic_csv(tmp_path):
    _solar_frame().to_csv(tmp_path / "s.csv", index=False)
    cfg = ExperimentConfig(scenario="solar", lags=(1, 2), replications=1, lam=0.1,
                           admm=AdmmConfig(max_iter=40), noise_grid=(("laplace", 0.2),))
    rows, lam = run_solar(tmp_path / "s.csv", cfg)
    assert lam == 0.1
    assert len(rows) == 6
    assert {r.noise for r in rows} == {"none", "laplace:0.2"}
