"""VAR model representation, simulation, lag embedding and forecasting.

Conventions follow the row-vector form ``y_t = sum_l y_{t-l} B^(l) + e_t``
with zero intercept. The stacked coefficient matrix ``B`` has one ``n x n``
block per lag (lag-major), so the coefficient of lag ``l`` of series ``i``
for predicting series ``j`` sits at row ``pos(l) * n + i``, column ``j``,
where ``pos(l)`` is the position of ``l`` in the lag list.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from collabvar._linalg import solve_ls
from collabvar.errors import (
    InsufficientHistoryError,
    InvalidLagError,
    ShapeError,
    StationarityError,
)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeSeriesPanel:
    """A ``T x n`` block of observations, one column per data owner."""

    values: np.ndarray
    owners: tuple = ()
    timestamps: tuple | None = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim == 1:
            values = _frozen(values[:, None])
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"panel values must be a non-empty T x n matrix, got {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.unique(np.nonzero(~np.isfinite(values))[0])
            raise ValueError(f"panel contains non-finite values in rows {bad[:10].tolist()}")
        owners = tuple(self.owners) if len(self.owners) else tuple(
            f"owner{i + 1}" for i in range(values.shape[1])
        )
        if len(owners) != values.shape[1]:
            raise ShapeError(f"{len(owners)} owner ids for {values.shape[1]} columns")
        if len(set(owners)) != len(owners):
            raise ValueError("owner identifiers must be distinct")
        if self.timestamps is not None and len(self.timestamps) != values.shape[0]:
            raise ShapeError("timestamps length differs from the number of rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "owners", owners)
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", tuple(self.timestamps))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def slice_rows(self, start=None, stop=None) -> "TimeSeriesPanel":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return TimeSeriesPanel(self.values[start:stop], self.owners, ts)


@dataclass(frozen=True)
class LagSpec:
    """Strictly increasing positive lags, e.g. ``(1, 2, 24)``."""

    lags: tuple

    def __post_init__(self):
        lags = tuple(int(l) for l in np.atleast_1d(self.lags))
        if not lags:
            raise InvalidLagError("lag list is empty")
        if lags[0] < 1 or any(b <= a for a, b in zip(lags, lags[1:])):
            raise InvalidLagError(f"lags must be strictly increasing positive integers, got {lags}")
        object.__setattr__(self, "lags", lags)

    @classmethod
    def consecutive(cls, p: int) -> "LagSpec":
        return cls(tuple(range(1, p + 1)))

    @property
    def p(self) -> int:
        return len(self.lags)

    @property
    def max_lag(self) -> int:
        return self.lags[-1]

    @property
    def is_consecutive(self) -> bool:
        return self.lags == tuple(range(1, self.p + 1))


def as_lagspec(lags) -> LagSpec:
    if isinstance(lags, LagSpec):
        return lags
    if np.isscalar(lags):
        return LagSpec.consecutive(int(lags))
    return LagSpec(tuple(lags))


@dataclass(frozen=True)
class VarModel:
    """Zero-intercept VAR with coefficients stacked lag-major, ``(n*p) x n``."""

    coefficients: np.ndarray
    lag_spec: LagSpec = field(default_factory=lambda: LagSpec((1,)))

    def __post_init__(self):
        B = _frozen(self.coefficients)
        if B.ndim == 0:
            B = _frozen(B.reshape(1, 1))
        lag_spec = as_lagspec(self.lag_spec)
        if B.ndim != 2 or B.shape[0] != B.shape[1] * lag_spec.p:
            raise ShapeError(
                f"coefficients of shape {B.shape} do not match {lag_spec.p} lags"
            )
        object.__setattr__(self, "coefficients", B)
        object.__setattr__(self, "lag_spec", lag_spec)

    @property
    def n_series(self) -> int:
        return self.coefficients.shape[1]

    @property
    def intercept(self) -> np.ndarray:
        return np.zeros(self.n_series)

    def block(self, lag: int) -> np.ndarray:
        """The ``n x n`` coefficient block for ``lag``; zero for skipped lags."""
        n = self.n_series
        if lag not in self.lag_spec.lags:
            return np.zeros((n, n))
        pos = self.lag_spec.lags.index(lag)
        return self.coefficients[pos * n:(pos + 1) * n]

    def coefficient(self, lag: int, i: int, j: int) -> float:
        return float(self.block(lag)[i, j])


@dataclass(frozen=True)
class LagEmbedding:
    """Covariates ``Z`` ((T-L) x n*p) and targets ``Y`` ((T-L) x n)."""

    Z: np.ndarray
    Y: np.ndarray
    lag_spec: LagSpec

    def party_blocks(self):
        """Split ``Z``/``Y`` by owner: ``[(Z_Ai, Y_Ai), ...]``.

        ``Z_Ai`` gathers the lagged columns of series ``i`` in lag order.
        """
        n, p = self.Y.shape[1], self.lag_spec.p
        cols = [np.arange(p) * n + i for i in range(n)]
        return [(self.Z[:, c], self.Y[:, [i]]) for i, c in enumerate(cols)]


def build_lag_embedding(panel, lags) -> LagEmbedding:
    values = panel.values if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, float)
    if values.ndim == 1:
        values = values[:, None]
    lag_spec = as_lagspec(lags)
    T = values.shape[0]
    L = lag_spec.max_lag
    if L >= T:
        raise InvalidLagError(f"max lag {L} must be below the panel length {T}")
    Y = values[L:]
    Z = np.hstack([values[L - l:T - l] for l in lag_spec.lags])
    return LagEmbedding(Z=Z, Y=Y.copy(), lag_spec=lag_spec)


def companion_matrix(model: VarModel) -> np.ndarray:
    n, L = model.n_series, model.lag_spec.max_lag
    C = np.zeros((n * L, n * L))
    for l in range(1, L + 1):
        C[:n, (l - 1) * n:l * n] = model.block(l).T
    C[n:, :-n] = np.eye(n * (L - 1))
    return C


def companion_spectral_radius(model: VarModel) -> float:
    C = companion_matrix(model)
    if not C.size:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(C))))


def simulate_var(
    model: VarModel,
    T: int,
    error_cov=None,
    burn_in: int = 500,
    seed=None,
    owners: Sequence[str] = (),
) -> TimeSeriesPanel:
    """Simulate ``T`` observations after discarding ``burn_in`` transient rows.

    The recursion starts from a zero presample and Gaussian innovations with
    covariance ``error_cov`` (identity by default).
    """
    n = model.n_series
    rho = companion_spectral_radius(model)
    if rho >= 1.0:
        raise StationarityError(f"companion spectral radius {rho:.6g} >= 1")
    cov = np.eye(n) if error_cov is None else np.asarray(error_cov, dtype=float)
    if cov.shape != (n, n) or not np.allclose(cov, cov.T):
        raise ValueError("error_cov must be a symmetric n x n matrix")
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("error_cov is not positive definite") from exc

    rng = np.random.default_rng(seed)
    L = model.lag_spec.max_lag
    total = L + burn_in + T
    eps = rng.standard_normal((total, n)) @ chol.T
    y = np.zeros((total, n))
    lags = np.asarray(model.lag_spec.lags)
    B = np.asarray(model.coefficients)
    for t in range(L, total):
        y[t] = y[t - lags].reshape(-1) @ B + eps[t]
    return TimeSeriesPanel(y[L + burn_in:], tuple(owners))


def _unconstrained_to_pacf(A: np.ndarray) -> np.ndarray:
    # P = (I + A A')^{-1/2} A in Cholesky form; singular values of P are < 1
    n = A.shape[0]
    chol = linalg.cholesky(np.eye(n) + A @ A.T, lower=True)
    return linalg.solve_triangular(chol, A, lower=True)


def _pacf_to_coefficients(pacfs: list[np.ndarray]) -> list[np.ndarray]:
    """Forward Levinson-type recursion from partial autocorrelations.

    Returns ``phi_1..phi_p`` for the column convention
    ``y_t = sum_k phi_k y_{t-k} + e_t`` with unit initial variance.
    """
    n = pacfs[0].shape[0]
    sigma = np.eye(n)
    sigma_star = np.eye(n)
    fwd: list[np.ndarray] = []
    bwd: list[np.ndarray] = []
    for P in pacfs:
        low = linalg.cholesky(sigma, lower=True)
        low_star = linalg.cholesky(sigma_star, lower=True)
        head = low @ P @ np.linalg.inv(low_star)
        head_star = low_star @ P.T @ np.linalg.inv(low)
        s = len(fwd)
        new_fwd = [fwd[k] - head @ bwd[s - 1 - k] for k in range(s)] + [head]
        new_bwd = [bwd[k] - head_star @ fwd[s - 1 - k] for k in range(s)] + [head_star]
        sigma, sigma_star = (
            sigma - head @ sigma_star @ head.T,
            sigma_star - head_star @ sigma @ head_star.T,
        )
        fwd, bwd = new_fwd, new_bwd
    return fwd


def generate_stationary_coefficients(n: int, lag_count: int, seed=None) -> VarModel:
    """Draw a random stationary VAR_n(p) via the Ansley-Kohn parametrization.

    Unconstrained standard-normal matrices are contracted to partial
    autocorrelation matrices (all singular values < 1) and mapped to VAR
    coefficients by the forward recursion; every output is stationary.
    """
    if n < 1 or lag_count < 1:
        raise ValueError("n and lag_count must be positive")
    rng = np.random.default_rng(seed)
    pacfs = [_unconstrained_to_pacf(rng.standard_normal((n, n))) for _ in range(lag_count)]
    phis = _pacf_to_coefficients(pacfs)
    B = np.vstack([phi.T for phi in phis])
    return VarModel(B, LagSpec.consecutive(lag_count))


def forecast(model: VarModel, history, horizon: int) -> np.ndarray:
    """Recursive ``horizon``-step forecast, feeding back its own predictions."""
    values = history.values if isinstance(history, TimeSeriesPanel) else np.asarray(history, float)
    if values.ndim == 1:
        values = values[:, None]
    L = model.lag_spec.max_lag
    if values.shape[0] < L:
        raise InsufficientHistoryError(f"need at least {L} rows of history, got {values.shape[0]}")
    if values.shape[1] != model.n_series:
        raise ShapeError("history width differs from the model dimension")
    buf = np.vstack([values[-L:], np.zeros((horizon, model.n_series))])
    lags = np.asarray(model.lag_spec.lags)
    B = np.asarray(model.coefficients)
    for h in range(horizon):
        t = L + h
        buf[t] = buf[t - lags].reshape(-1) @ B
    return buf[L:]


def one_step_predictions(model: VarModel, values) -> np.ndarray:
    """In-sample one-step-ahead predictions for rows ``L..T-1`` of ``values``."""
    emb = build_lag_embedding(values, model.lag_spec)
    return emb.Z @ model.coefficients


def fit_ar_baseline(series, lags, *, strict: bool = False) -> np.ndarray:
    """Least-squares AR coefficients of a single series on its own lags."""
    x = np.asarray(series, dtype=float).reshape(-1)
    lag_spec = as_lagspec(lags)
    if x.size <= lag_spec.p:
        raise InvalidLagError(f"series of length {x.size} too short for {lag_spec.p} lags")
    emb = build_lag_embedding(x[:, None], lag_spec)
    return solve_ls(emb.Z, emb.Y, strict=strict).reshape(-1)


def fixed_var2_2() -> VarModel:
    """Two owners, two lags, the coefficient matrix used in the synthetic study."""
    B = np.array([
        [0.5, 0.3],
        [0.3, 0.75],
        [-0.3, -0.05],
        [-0.1, -0.4],
    ])
    return VarModel(B, LagSpec((1, 2)))


# (lag, source series, target series, value); 42 of 300 entries non-zero
_VAR10_3_ENTRIES = (
    [(1, i, i, v) for i, v in enumerate([0.5, 0.45, 0.55, 0.4, 0.6, 0.5, 0.45, 0.35, 0.5, 0.4])]
    + [(2, i, i, v) for i, v in enumerate([-0.2, 0.15, -0.1, 0.2, -0.15, 0.1, -0.2, 0.15, -0.1, 0.1])]
    + [(3, i, i, v) for i, v in enumerate([0.1, -0.1, 0.15, -0.05, 0.1, -0.1, 0.05, 0.1, -0.05, 0.1])]
    + [
        (1, 1, 0, 0.4), (1, 2, 0, 0.3), (1, 0, 1, 0.3), (1, 3, 2, 0.25),
        (1, 4, 3, 0.3), (2, 5, 4, 0.2), (1, 6, 5, 0.25), (1, 7, 6, 0.3),
        (2, 0, 2, -0.2), (1, 8, 3, 0.2), (2, 9, 6, 0.15), (1, 2, 1, -0.15),
    ]
)


def sparse_var10_3() -> VarModel:
    """Stand-in VAR_10(3) with ~86% null coefficients and dominant diagonals.

    Seven owners (series 0-6) receive cross-series terms; series 7-9 are
    purely autoregressive.
    """
    n = 10
    B = np.zeros((3 * n, n))
    for lag, i, j, v in _VAR10_3_ENTRIES:
        B[(lag - 1) * n + i, j] = v
    return VarModel(B, LagSpec((1, 2, 3)))


def assemble_var_coefficients(blocks, lags) -> VarModel:
    """Interleave per-owner ``p x n`` blocks into the lag-major VAR matrix."""
    lag_spec = as_lagspec(lags)
    n, p = len(blocks), lag_spec.p
    B = np.zeros((n * p, np.asarray(blocks[0]).shape[1]))
    for i, block in enumerate(blocks):
        B[np.arange(p) * n + i] = block
    return VarModel(B, lag_spec)


def split_var_coefficients(model: VarModel) -> list:
    """Inverse of :func:`assemble_var_coefficients`."""
    n, p = model.n_series, model.lag_spec.p
    return [np.asarray(model.coefficients)[np.arange(p) * n + i] for i in range(n)]
