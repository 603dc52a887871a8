"""Seeded Monte Carlo experiments comparing collaborative VAR with per-owner AR.

Every replication draws its own seed from a ``SeedSequence`` spawned off
the config seed, so outputs are bitwise reproducible and independent of
the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from collabvar.errors import IngestionError
from collabvar.estimators import AdmmConfig, fit_lasso_admm_distributed, parties_from_embedding
from collabvar.privacy import NoiseSpec, add_noise
from collabvar.var_core import (
    TimeSeriesPanel,
    VarModel,
    as_lagspec,
    assemble_var_coefficients,
    build_lag_embedding,
    fit_ar_baseline,
    fixed_var2_2,
    generate_stationary_coefficients,
    simulate_var,
    sparse_var10_3,
)

FIXED_MODELS = {"var2": fixed_var2_2, "var10": sparse_var10_3}
DEFAULT_LAM_GRID = (0.0, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "var2"
    model: str = "fixed"          # "fixed" or "generated"
    n: int = 2
    lags: tuple = (1, 2)
    replications: int = 100
    T: int = 20_000
    noise_grid: tuple = ()        # ((family, b), ...)
    admm: AdmmConfig = AdmmConfig(max_iter=50)
    lam: float | None = None      # None: pick from lam_grid on replication 0
    lam_grid: tuple = DEFAULT_LAM_GRID
    test_fraction: float = 0.2
    burn_in: int = 500
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.model not in ("fixed", "generated"):
            raise ValueError(f"unknown model kind {self.model!r}")
        object.__setattr__(self, "lags", as_lagspec(self.lags).lags)
        object.__setattr__(self, "noise_grid",
                           tuple((str(f), float(b)) for f, b in self.noise_grid))

    def resolved(self) -> dict:
        d = asdict(self)
        d["admm"] = asdict(self.admm)
        return d


@dataclass
class MetricRow:
    scenario: str
    owner: str
    replication: int
    estimator: str
    noise: str
    mae: float
    rmse: float
    mae_ar: float
    rmse_ar: float
    improvement_mae: float = field(init=False)
    improvement_rmse: float = field(init=False)
    seed: int = 0
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        self.improvement_mae = improvement_pct(self.mae_ar, self.mae)
        self.improvement_rmse = improvement_pct(self.rmse_ar, self.rmse)


@dataclass
class CoefficientRow:
    scenario: str
    replication: int
    noise: str
    row: int
    col: int
    true: float
    estimate: float
    abs_diff: float
    seed: int = 0


def improvement_pct(err_ar, err_var) -> float:
    return 100.0 * (err_ar - err_var) / err_ar if err_ar else math.nan


def noise_label(family=None, b=0.0) -> str:
    return "none" if family is None or b == 0 else f"{family}:{b:g}"


def chronological_split(values, test_fraction):
    """First ``1 - test_fraction`` of the rows for fitting, the rest held out."""
    T = values.shape[0]
    cut = T - int(round(test_fraction * T))
    return values[:cut], values[cut:]


def _errors(pred, truth):
    d = pred - truth
    return np.mean(np.abs(d), axis=0), np.sqrt(np.mean(d ** 2, axis=0))


def fit_var_distributed(train, lags, admm: AdmmConfig, owners=None):
    """Fit a LASSO-VAR on ``train`` by feature-split ADMM; returns (model, result)."""
    emb = build_lag_embedding(train, lags)
    parties = parties_from_embedding(emb, owners)
    res = fit_lasso_admm_distributed(parties, emb.Y, admm)
    return assemble_var_coefficients(res.blocks, lags), res


def evaluate_var(model: VarModel, history, test):
    """One-step MAE/RMSE per series on ``test`` using ``history`` for the first lags."""
    L = model.lag_spec.max_lag
    full = np.vstack([history[-L:], test])
    emb = build_lag_embedding(full, model.lag_spec)
    return _errors(emb.Z @ np.asarray(model.coefficients), emb.Y)


def evaluate_ar(train, test, lags):
    """Per-series AR baseline fitted on ``train``, scored one step ahead on ``test``."""
    spec = as_lagspec(lags)
    L = spec.max_lag
    maes, rmses = [], []
    for i in range(train.shape[1]):
        phi = fit_ar_baseline(train[:, i], spec)
        full = np.concatenate([train[-L:, i], test[:, i]])
        emb = build_lag_embedding(full[:, None], spec)
        mae, rmse = _errors(emb.Z @ phi, emb.Y[:, 0])
        maes.append(float(mae))
        rmses.append(float(rmse))
    return np.array(maes), np.array(rmses)


def select_lambda(train, lags, admm: AdmmConfig, grid=DEFAULT_LAM_GRID, test_fraction=0.2):
    """Grid value minimizing mean validation MAE on a chronological inner split."""
    fit_part, valid = chronological_split(np.asarray(train, float), test_fraction)
    best, best_mae = None, math.inf
    for lam in grid:
        model, _ = fit_var_distributed(fit_part, lags, replace(admm, lam=float(lam)))
        mae = float(np.mean(evaluate_var(model, fit_part, valid)[0]))
        if mae < best_mae:
            best, best_mae = float(lam), mae
    return best


def _seeds(seed, count):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def _model_for(config: ExperimentConfig, seed):
    if config.model == "fixed":
        return FIXED_MODELS[config.scenario]()
    return generate_stationary_coefficients(config.n, len(config.lags), seed=seed)


def _noise_settings(config):
    return [(None, 0.0)] + [(f, b) for f, b in config.noise_grid]


def _replication(config: ExperimentConfig, r: int, seed: int, lam: float, model=None):
    rng = np.random.default_rng(seed)
    model = model if model is not None else _model_for(config, int(rng.integers(2**32)))
    panel = simulate_var(model, config.T, burn_in=config.burn_in, seed=int(rng.integers(2**32)))
    values = np.asarray(panel.values)
    train, test = chronological_split(values, config.test_fraction)
    lags = model.lag_spec
    mae_ar, rmse_ar = evaluate_ar(train, test, lags)
    admm = replace(config.admm, lam=lam)
    metrics, coefs = [], []
    B_true = np.asarray(model.coefficients)
    for family, b in _noise_settings(config):
        label = noise_label(family, b)
        fit_on = train if family is None else add_noise(
            train, NoiseSpec(family, b), int(rng.integers(2**32)))
        est, res = fit_var_distributed(fit_on, lags, admm, list(panel.owners))
        mae, rmse = evaluate_var(est, train, test)
        for i, owner in enumerate(panel.owners):
            metrics.append(MetricRow(config.scenario, owner, r, "VAR", label,
                                     float(mae[i]), float(rmse[i]), float(mae_ar[i]),
                                     float(rmse_ar[i]), seed=seed, converged=res.converged,
                                     iterations=res.iterations))
        B_hat = np.asarray(est.coefficients)
        for (i, j), v in np.ndenumerate(B_true):
            coefs.append(CoefficientRow(config.scenario, r, label, i, j, float(v),
                                        float(B_hat[i, j]), float(abs(B_hat[i, j] - v)), seed))
    return metrics, coefs


def _run(config: ExperimentConfig, fixed_model=None):
    seeds = _seeds(config.seed, config.replications)
    lam = config.lam
    if lam is None:
        rng = np.random.default_rng(seeds[0])
        model = fixed_model or _model_for(config, int(rng.integers(2**32)))
        panel = simulate_var(model, config.T, burn_in=config.burn_in,
                             seed=int(rng.integers(2**32)))
        train, _ = chronological_split(np.asarray(panel.values), config.test_fraction)
        lam = select_lambda(train, model.lag_spec, config.admm, config.lam_grid,
                            config.test_fraction)

    def job(r):
        return _replication(config, r, seeds[r], lam, fixed_model)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            parts = list(pool.map(job, range(config.replications)))
    else:
        parts = [job(r) for r in range(config.replications)]
    metrics = [m for part in parts for m in part[0]]
    coefs = [c for part in parts for c in part[1]]
    return metrics, coefs, lam


def run_synthetic(config: ExperimentConfig):
    """Fixed-matrix study; returns ``(metric rows, coefficient rows, lambda)``."""
    if config.model != "fixed":
        raise ValueError("run_synthetic uses a fixed coefficient matrix")
    return _run(config, FIXED_MODELS[config.scenario]())


def run_random_coefficients(config: ExperimentConfig):
    """One freshly generated stationary model per replication."""
    if config.model != "generated":
        config = replace(config, model="generated")
    metrics, _, lam = _run(config)
    return metrics, lam


def ar_win_fraction(rows, noise="none") -> float:
    """Share of (owner, replication) pairs where AR has the lower MAE."""
    sel = [r for r in rows if r.noise == noise]
    return sum(r.mae_ar < r.mae for r in sel) / len(sel) if sel else math.nan


# ------------------------------------------------------------------ solar

SOLAR_LAGS = (1, 2, 24)


def load_solar_csv(path, timestamp_col=None) -> TimeSeriesPanel:
    """Read a timestamp column plus one column per plant.

    Rows with empty cells are dropped panel-wide to keep the lags aligned;
    non-numeric or infinite entries raise :class:`IngestionError` listing the
    offending rows.
    """
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if df.shape[1] < 2:
        raise IngestionError("expected a timestamp column and at least one plant column")
    ts_col = timestamp_col or df.columns[0]
    if ts_col not in df.columns:
        raise IngestionError(f"missing timestamp column {ts_col!r}")
    data = df.drop(columns=[ts_col])
    numeric = data.apply(pd.to_numeric, errors="coerce")
    bad = (numeric.isna() & data.notna()) | np.isinf(numeric.fillna(0.0))
    if bad.to_numpy().any():
        rows = np.flatnonzero(bad.to_numpy().any(axis=1)).tolist()
        raise IngestionError(f"non-finite or non-numeric entries in rows {rows[:20]}")
    keep = numeric.notna().all(axis=1).to_numpy()
    return TimeSeriesPanel(numeric.to_numpy()[keep], tuple(str(c) for c in data.columns),
                           tuple(df[ts_col].astype(str).to_numpy()[keep]))


def run_solar(csv_path, config: ExperimentConfig | None = None, *, mask_b=0.2):
    """Per-plant VAR vs AR improvements, clean and with Laplacian masking."""
    config = config or ExperimentConfig(scenario="solar", lags=SOLAR_LAGS, replications=1,
                                        noise_grid=(("laplace", mask_b),))
    panel = load_solar_csv(csv_path)
    values = np.asarray(panel.values)
    train, test = chronological_split(values, config.test_fraction)
    lags = as_lagspec(config.lags)
    lam = config.lam
    if lam is None:
        lam = select_lambda(train, lags, config.admm, config.lam_grid, config.test_fraction)
    admm = replace(config.admm, lam=lam)
    mae_ar, rmse_ar = evaluate_ar(train, test, lags)
    rng = np.random.default_rng(config.seed)
    rows = []
    for family, b in _noise_settings(config):
        fit_on = train if family is None else add_noise(
            train, NoiseSpec(family, b), int(rng.integers(2**32)))
        est, res = fit_var_distributed(fit_on, lags, admm, list(panel.owners))
        mae, rmse = evaluate_var(est, train, test)
        for i, owner in enumerate(panel.owners):
            rows.append(MetricRow("solar", owner, 0, "VAR", noise_label(family, b),
                                  float(mae[i]), float(rmse[i]), float(mae_ar[i]),
                                  float(rmse_ar[i]), seed=config.seed,
                                  converged=res.converged, iterations=res.iterations))
    return rows, lam


# ---------------------------------------------------------------- tables

def to_frame(rows) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])


def summarize(rows, by=("scenario", "noise"), value="abs_diff") -> pd.DataFrame:
    """Mean and standard deviation of ``value`` per group."""
    df = to_frame(rows) if not isinstance(rows, pd.DataFrame) else rows
    out = df.groupby(list(by), sort=False)[value].agg(["mean", "std", "count"]).reset_index()
    return out.rename(columns={"mean": f"{value}_mean", "std": f"{value}_sd"})


def replication_distortion(coef_rows) -> pd.DataFrame:
    """Mean ``|B_hat - B|`` per replication and noise setting."""
    return summarize(coef_rows, by=("noise", "replication"), value="abs_diff")
