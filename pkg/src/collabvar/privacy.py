"""Data-transformation privacy mechanisms.

Covers calibrated noise addition (Laplace, Gaussian, Uniform), masking by
random pre- and post-multiplication, and the masked outsourcing of a ridge
solve to an untrusted server.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from collabvar._linalg import random_invertible, solve_ls
from collabvar.errors import CalibrationError, ShapeError

FAMILIES = ("laplace", "gaussian", "uniform")


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean noise: ``N(0, b^2)``, ``Laplace(0, b)`` or ``U(-b, b)``."""

    family: str = "laplace"
    scale: float = 0.0
    epsilon: float | None = None
    delta: float | None = None
    sensitivity: float | None = None

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if self.scale < 0:
            raise ValueError("noise scale must be non-negative")
        if self.delta is not None and not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if fam == "gaussian" and self.epsilon is not None and not self.delta:
            raise CalibrationError("Gaussian (epsilon, delta) calibration needs delta > 0")

    @classmethod
    def laplace_for(cls, epsilon: float, sensitivity: float) -> "NoiseSpec":
        return cls("laplace", sensitivity / epsilon, epsilon=epsilon, sensitivity=sensitivity)

    @classmethod
    def gaussian_for(cls, epsilon: float, delta: float, sensitivity: float) -> "NoiseSpec":
        return cls("gaussian", gaussian_sigma(sensitivity, epsilon, delta),
                   epsilon=epsilon, delta=delta, sensitivity=sensitivity)

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.family == "laplace":
            return rng.laplace(0.0, self.scale, size=shape)
        if self.family == "gaussian":
            return rng.normal(0.0, self.scale, size=shape)
        return rng.uniform(-self.scale, self.scale, size=shape)


def laplace_epsilon(sensitivity: float, scale: float) -> float:
    """Privacy budget achieved by ``Laplace(0, scale)`` noise: ``eps = df1 / b``."""
    if sensitivity <= 0 or scale <= 0:
        raise ValueError("sensitivity and scale must be positive")
    return sensitivity / scale


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Smallest sigma with ``sigma >= sqrt(2 log(1.25/delta)) * df2 / eps``."""
    if not 0 < delta < 1:
        raise CalibrationError(f"Gaussian calibration requires 0 < delta < 1, got {delta}")
    if epsilon <= 0 or sensitivity <= 0:
        raise ValueError("epsilon and sensitivity must be positive")
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon


def empirical_sensitivity(values) -> float:
    """L1 sensitivity of a single bounded entry: the observed range."""
    values = np.asarray(values, dtype=float)
    return float(values.max() - values.min())


def add_noise(data, spec: NoiseSpec, seed=None):
    """Return ``data + W`` with i.i.d. draws from ``spec``.

    Accepts an array or a :class:`~collabvar.var_core.TimeSeriesPanel`; the
    return type matches the input.
    """
    from collabvar.var_core import TimeSeriesPanel

    is_panel = isinstance(data, TimeSeriesPanel)
    X = np.asarray(data.values if is_panel else data, dtype=float)
    if spec.scale == 0:
        out = X.copy()
    else:
        out = X + spec.draw(np.random.default_rng(seed), X.shape)
    if is_panel:
        return TimeSeriesPanel(out, data.owners, data.timestamps)
    return out


@dataclass(frozen=True)
class MaskingKey:
    """Private masking matrices; never written to a transcript."""

    kind: str
    matrices: dict = field(default_factory=dict)
    max_cond: float = 1e8
    secret: bool = True

    def __post_init__(self):
        if self.kind not in ("pre_record", "post_feature", "ridge_outsource"):
            raise ValueError(f"unknown masking kind {self.kind!r}")


class RankLossWarning(RuntimeWarning):
    pass


def random_record_masks(sizes, k, seed=None, *, orthogonal=False, max_cond=1e8):
    """Column blocks ``M_Ai`` (``k x T_Ai``) of one random ``k x sum(T_Ai)`` mask.

    With ``orthogonal=True`` (requires ``k == sum(sizes)``) the stacked mask
    is orthogonal; otherwise it is standard normal, and when square it is
    regenerated until its condition number is below ``max_cond``.
    """
    rng = np.random.default_rng(seed)
    total = int(sum(sizes))
    if orthogonal and k != total:
        raise ShapeError("an orthogonal record mask must be square (k == total rows)")
    if k == total:
        M = random_invertible(rng, total, max_cond=max_cond, orthogonal=orthogonal)
    else:
        M = rng.standard_normal((k, total))
    edges = np.cumsum([0, *sizes])
    return [M[:, a:b] for a, b in zip(edges[:-1], edges[1:])]


def premultiply_mask(record_parties, k=None):
    """Sum of locally masked records: ``MZ = sum_i M_Ai Z_Ai`` (same for ``Y``).

    ``record_parties`` holds ``(Z_r, Y_r, M_Ai)`` triples; each ``M_Ai`` has
    ``k`` rows.
    """
    if not record_parties:
        raise ShapeError("no record parties given")
    k = record_parties[0][2].shape[0] if k is None else k
    MZ = MY = 0.0
    for Zr, Yr, M in record_parties:
        Zr, Yr, M = (np.atleast_2d(np.asarray(a, float)) for a in (Zr, Yr, M))
        if Yr.shape[0] != Zr.shape[0] and Yr.shape[1] == Zr.shape[0]:
            Yr = Yr.T
        if M.shape != (k, Zr.shape[0]) or Yr.shape[0] != Zr.shape[0]:
            raise ShapeError(
                f"mask {M.shape} incompatible with a {Zr.shape[0]}-row block and k={k}"
            )
        MZ = MZ + M @ Zr
        MY = MY + M @ Yr
    if k < MZ.shape[1] or np.linalg.matrix_rank(MZ) < min(MZ.shape):
        warnings.warn(
            f"masked covariates lost rank (k={k}, {MZ.shape[1]} columns)",
            RankLossWarning, stacklevel=2,
        )
    return MZ, MY


@dataclass(frozen=True)
class PostMaskDiagnostic:
    masked_estimate: np.ndarray
    unmasked_estimate: np.ndarray
    predicted_from_keys: np.ndarray
    identity_error: float


def random_feature_keys(n_cols_z, n_cols_y, seed=None, *, max_cond=1e8):
    rng = np.random.default_rng(seed)
    Nz = random_invertible(rng, n_cols_z, max_cond=max_cond)
    Ny = random_invertible(rng, n_cols_y, max_cond=max_cond)
    return MaskingKey("post_feature", {"N_z": Nz, "N_y": Ny}, max_cond)


def postmultiply_mask(Z, Y, N_z, N_y):
    """Share ``Z N_z`` and ``Y N_y``; check ``B' = N_z^{-1} B N_y``.

    The diagnostic shows that the estimate fitted on the masked data lives in
    a rotated space, recoverable only with both keys.
    """
    Z, Y = np.asarray(Z, float), np.asarray(Y, float)
    N_z, N_y = np.asarray(N_z, float), np.asarray(N_y, float)
    ZN, YN = Z @ N_z, Y @ N_y
    B_masked = solve_ls(ZN, YN)
    B = solve_ls(Z, Y)
    predicted = np.linalg.solve(N_z, B @ N_y)
    err = float(np.linalg.norm(B_masked - predicted))
    return ZN, YN, PostMaskDiagnostic(B_masked, B, predicted, err)


def random_ridge_keys(dim, seed=None, *, max_cond=1e8):
    rng = np.random.default_rng(seed)
    M = random_invertible(rng, dim, max_cond=max_cond)
    N = random_invertible(rng, dim, max_cond=max_cond)
    r = rng.standard_normal(dim)
    return MaskingKey("ridge_outsource", {"M": M, "N": N, "r": r}, max_cond)


def ridge_outsource(A, b_vec, lam=None, keys: MaskingKey | None = None, seed=None,
                    *, transcript=None, max_retries=5):
    """Ridge solve delegated to a server that only sees masked matrices.

    The owner sends ``MAN`` and ``M(b + A r)``; the server returns
    ``beta' = (MAN)^{-1} M(b + A r)``; the owner unmasks ``beta = N beta' - r``.
    ``A = Z'Z + lam I`` and ``b_vec = Z'y`` are precomputed by the owner
    (``lam`` is informational only).
    """
    A = np.asarray(A, float)
    b_vec = np.asarray(b_vec, float)
    rng = np.random.default_rng(seed)
    for attempt in range(max_retries):
        if keys is None or attempt > 0:
            keys = random_ridge_keys(A.shape[0], rng)
        M, N, r = (np.asarray(keys.matrices[k], float) for k in ("M", "N", "r"))
        masked_A = M @ A @ N
        masked_b = M @ (b_vec + A @ r)
        if np.linalg.cond(masked_A) >= keys.max_cond:
            continue
        if transcript is not None:
            transcript.log("owner", "server", "MAN", masked_A)
            transcript.log("owner", "server", "M(b+Ar)", masked_b)
        beta_masked = np.linalg.solve(masked_A, masked_b)
        if transcript is not None:
            transcript.log("server", "owner", "beta_masked", beta_masked)
        return N @ beta_masked - r
    raise np.linalg.LinAlgError("masked ridge system stayed singular after retries")
