"""Coefficient estimators for (LASSO-)VAR models.

Closed-form least squares and ridge, a centralized ADMM for the LASSO, the
feature-split ADMM in which owners talk to a central node, the record-split
consensus ADMM, and gradient descent with optional noisy updates.

All LASSO solvers target ``0.5 * ||Y - Z B||_F^2 + lam * ||B||_1``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from collabvar._linalg import solve_ls
from collabvar.errors import ShapeError
from collabvar.privacy import NoiseSpec
from collabvar.transcript import BROADCAST, ProtocolTranscript


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    lam: float = 0.0
    max_iter: int = 1000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    # agent count in the 1/(N + rho) scaling of the central-node update;
    # None means the number of parties
    n_agents: int | None = None
    inner_tol: float = 1e-8
    inner_max_iter: int = 5000

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class AdmmState:
    B: np.ndarray
    H: np.ndarray
    U: np.ndarray
    iteration: int
    primal_residual: float
    dual_residual: float
    lagrangian: float = float("nan")


@dataclass
class AdmmResult:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    lagrangians: list = field(default_factory=list)
    states: list = field(default_factory=list)

    @property
    def final_state(self):
        return self.states[-1] if self.states else None


def _check_shapes(Z, Y):
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Z.ndim != 2:
        raise ShapeError(f"Z must be 2-D, got shape {Z.shape}")
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != Z.shape[0]:
        raise ShapeError(f"Z has {Z.shape[0]} rows but Y has {Y.shape[0]}")
    return Z, Y


def soft_threshold(X, kappa):
    X = np.asarray(X, dtype=float)
    return np.sign(X) * np.maximum(np.abs(X) - kappa, 0.0)


def lasso_objective(Z, Y, B, lam) -> float:
    R = np.asarray(Y) - np.asarray(Z) @ B
    return 0.5 * float(np.sum(R * R)) + lam * float(np.abs(B).sum())


def fit_ls(Z, Y) -> np.ndarray:
    """Multivariate least squares ``argmin ||Y - Z B||^2``.

    Falls back to the minimum-norm pseudo-inverse solution (with a warning)
    when ``Z`` is rank deficient.
    """
    Z, Y = _check_shapes(Z, Y)
    return solve_ls(Z, Y)


def fit_ridge(Z, y, lam: float) -> np.ndarray:
    """``(Z'Z + lam I)^{-1} Z'y``."""
    if lam <= 0:
        raise ValueError("ridge penalty must be positive")
    Z, Y = _check_shapes(Z, y)
    A = Z.T @ Z + lam * np.eye(Z.shape[1])
    beta = linalg.solve(A, Z.T @ Y, assume_a="pos")
    return beta.reshape(-1) if np.ndim(y) == 1 else beta


def _prox_gradient(gram, cross, kappa, B0, lipschitz, tol, max_iter):
    """FISTA with backtracking on ``0.5 B'GB - <C, B> + kappa ||B||_1``.

    ``gram = Z'Z`` and ``cross = Z'V`` so the smooth part matches
    ``0.5 ||V - Z B||^2`` up to a constant.
    """

    def smooth(B):
        return 0.5 * float(np.sum(B * (gram @ B))) - float(np.sum(cross * B))

    x = B0.copy()
    y = x.copy()
    t = 1.0
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0
    for _ in range(max_iter):
        grad = gram @ y - cross
        fy = smooth(y)
        while True:
            x_new = soft_threshold(y - step * grad, step * kappa)
            d = x_new - y
            if smooth(x_new) <= fy + float(np.sum(grad * d)) + 0.5 / step * float(np.sum(d * d)) + 1e-12 * abs(fy):
                break
            step *= 0.5
        change = np.linalg.norm(x_new - x)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        # restart momentum when it stops helping
        if float(np.sum((y - x_new) * (x_new - x))) > 0:
            t_new = 1.0
            y = x_new.copy()
        else:
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if change <= tol * max(1.0, np.linalg.norm(x)):
            break
    return x


class _LassoSubproblem:
    """Repeated solves of ``0.5||V - Z B||^2 + kappa||B||_1`` for one fixed ``Z``."""

    def __init__(self, Z, kappa, tol=1e-8, max_iter=5000):
        self.Z = np.asarray(Z, dtype=float)
        self.gram = self.Z.T @ self.Z
        self.kappa = kappa
        self.tol = tol
        self.max_iter = max_iter
        self.lipschitz = float(np.linalg.eigvalsh(self.gram)[-1]) if self.gram.size else 0.0
        self._chol = None
        if kappa == 0 and np.linalg.matrix_rank(self.gram) == self.gram.shape[0]:
            self._chol = linalg.cho_factor(self.gram)

    def solve(self, V, B0=None):
        cross = self.Z.T @ V
        if self._chol is not None:
            return linalg.cho_solve(self._chol, cross)
        if self.gram.shape[0] == 1:
            g = self.gram[0, 0]
            if g == 0:
                return np.zeros_like(cross)
            return soft_threshold(cross / g, self.kappa / g)
        if B0 is None:
            B0 = np.zeros_like(cross)
        return _prox_gradient(self.gram, cross, self.kappa, B0, self.lipschitz,
                              self.tol, self.max_iter)


def fit_lasso_prox(Z, Y, lam, B0=None, tol=1e-10, max_iter=100000) -> np.ndarray:
    """Accelerated proximal-gradient LASSO solve."""
    Z, Y = _check_shapes(Z, Y)
    return _LassoSubproblem(Z, lam, tol, max_iter).solve(Y, B0)


def fit_lasso_admm_central(Z, Y, config: AdmmConfig = AdmmConfig(), *,
                           keep_states: bool = False):
    """Centralized ADMM for the LASSO with the split ``B = H``.

    Returns ``(H, result)``; ``H`` is the soft-thresholded (sparse) iterate.
    Stops when ``||B - H|| < tol_primal`` and ``rho ||H - H_prev|| < tol_dual``,
    otherwise returns the last iterate with ``converged=False``.
    """
    Z, Y = _check_shapes(Z, Y)
    rho, lam = config.rho, config.lam
    m = Z.shape[1]
    # iteration-invariant factorization
    chol = linalg.cho_factor(Z.T @ Z + rho * np.eye(m))
    ZtY = Z.T @ Y
    B = np.zeros((m, Y.shape[1]))
    H = np.zeros_like(B)
    U = np.zeros_like(B)
    result = AdmmResult(H, False, 0)
    for k in range(1, config.max_iter + 1):
        B = linalg.cho_solve(chol, ZtY + rho * (H - U))
        H_prev = H
        H = soft_threshold(B + U, lam / rho)
        U = U + B - H
        r = float(np.linalg.norm(B - H))
        s = float(rho * np.linalg.norm(H - H_prev))
        R = Y - Z @ B
        lag = (0.5 * float(np.sum(R * R)) + lam * float(np.abs(H).sum())
               + 0.5 * rho * float(np.sum((B - H + U) ** 2)) - 0.5 * rho * float(np.sum(U * U)))
        result.primal_residuals.append(r)
        result.dual_residuals.append(s)
        result.lagrangians.append(lag)
        if keep_states:
            result.states.append(AdmmState(B.copy(), H.copy(), U.copy(), k, r, s, lag))
        result.iterations = k
        if r < config.tol_primal and s < config.tol_dual:
            result.converged = True
            break
    if not keep_states:
        result.states.append(AdmmState(B, H, U, result.iterations,
                                       result.primal_residuals[-1], result.dual_residuals[-1],
                                       result.lagrangians[-1]))
    result.coefficients = H
    return H, result


@dataclass
class PartyView:
    """What owner ``owner`` holds in the feature-split setting."""

    owner: str
    Z: np.ndarray
    Y: np.ndarray | None = None
    B: np.ndarray | None = None

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        if self.Y is not None:
            self.Y = np.asarray(self.Y, dtype=float).reshape(self.Z.shape[0], -1)


def parties_from_embedding(embedding, owners: Sequence[str] | None = None) -> list:
    blocks = embedding.party_blocks()
    owners = owners or [f"owner{i + 1}" for i in range(len(blocks))]
    return [PartyView(o, Z, Y) for o, (Z, Y) in zip(owners, blocks)]


@dataclass
class DistributedResult:
    blocks: list
    converged: bool
    iterations: int
    transcript: ProtocolTranscript
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    block_history: list = field(default_factory=list)
    rho: float = 1.0
    n_agents: int = 1
    initial_dual: np.ndarray | None = None

    @property
    def coefficients(self) -> np.ndarray:
        """Party blocks stacked in party order."""
        return np.vstack(self.blocks)


CENTRAL = "central"


def fit_lasso_admm_distributed(
    parties: list,
    Y,
    config: AdmmConfig = AdmmConfig(),
    *,
    coef_noise: NoiseSpec | None = None,
    intermediate_noise: NoiseSpec | None = None,
    noise_in_span: bool = True,
    initial_dual=None,
    seed=None,
    keep_blocks: bool = False,
    callback: Callable | None = None,
) -> DistributedResult:
    """Feature-split LASSO by ADMM between owners and a central node.

    Each iteration ``k``:

    1. owner ``i`` solves its local LASSO against ``Z_i B_i^{k-1} + M^{k-1}``;
    2. owner ``i`` sends ``Z_i B_i^k`` to the central node;
    3. the node sets ``H^k = (Y + rho*ZB^k + rho*U^{k-1}) / (N + rho)`` and
       ``U^k = U^{k-1} + ZB^k - H^k`` with ``ZB^k`` the mean of the products;
    4. the node broadcasts ``M^k = H^k - ZB^k - U^k``.

    Iteration 0 logs the initial products and ``M^0``. With
    ``coef_noise`` each owner transmits ``Z_i (B_i^k + W)``; with
    ``intermediate_noise`` each owner instead sends its additive share
    ``I_Yi/(N+rho) + (rho/(N+rho) - 1) Z_i B_i^k / n + W`` and the node needs
    no access to ``Y``. With ``noise_in_span`` the intermediate noise is
    drawn as ``Z_i W`` so it stays in the column space of ``Z_i``; otherwise
    it is i.i.d. over the whole ``T x n`` share.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T, n_cols = Y.shape
    n = len(parties)
    if n == 0:
        raise ShapeError("no parties")
    for pv in parties:
        if pv.Z.shape[0] != T:
            raise ShapeError(f"party {pv.owner} has {pv.Z.shape[0]} rows, target has {T}")
    if intermediate_noise is not None and n != n_cols:
        raise ShapeError("intermediate shares need one target column per party")
    rho, lam = config.rho, config.lam
    N = config.n_agents or n
    c = 1.0 / (N + rho)
    rng = np.random.default_rng(seed)
    tr = ProtocolTranscript("distributed_admm")

    solvers = [_LassoSubproblem(pv.Z, lam / rho, config.inner_tol, config.inner_max_iter)
               for pv in parties]
    blocks = [np.zeros((pv.Z.shape[1], n_cols)) if pv.B is None else np.array(pv.B, float)
              for pv in parties]
    U = np.zeros((T, n_cols)) if initial_dual is None else np.array(initial_dual, float)
    U0 = U.copy()
    H = np.zeros((T, n_cols))

    def own_target(i):
        if parties[i].Y is not None:
            col = parties[i].Y[:, 0]
        else:
            col = Y[:, i]
        IY = np.zeros((T, n_cols))
        IY[:, i] = col
        return IY

    def transmit(i, B_i, k):
        """Owner-side message for block ``B_i``; returns (sent, clean product)."""
        clean = parties[i].Z @ B_i
        if intermediate_noise is not None:
            share = c * own_target(i) + (c * rho - 1.0) / n * clean
            if noise_in_span:
                share = share + parties[i].Z @ intermediate_noise.draw(rng, B_i.shape)
            else:
                share = share + intermediate_noise.draw(rng, share.shape)
            tr.log(parties[i].owner, CENTRAL, "share", share, k)
            return share, clean
        if coef_noise is not None:
            sent = parties[i].Z @ (B_i + coef_noise.draw(rng, B_i.shape))
        else:
            sent = clean
        tr.log(parties[i].owner, CENTRAL, "ZB", sent, k)
        return sent, clean

    msgs = [transmit(i, blocks[i], 0)[0] for i in range(n)]
    if intermediate_noise is None:
        ZB = sum(msgs) / n
    else:
        ZB = sum(pv.Z @ b for pv, b in zip(parties, blocks)) / n
    M = H - ZB - U
    tr.log(CENTRAL, BROADCAST, "H-ZB-U", M, 0)

    result = DistributedResult(blocks, False, 0, tr, rho=rho, n_agents=N, initial_dual=U0)
    if keep_blocks:
        result.block_history.append([b.copy() for b in blocks])
    for k in range(1, config.max_iter + 1):
        new_blocks = [
            solvers[i].solve(parties[i].Z @ blocks[i] + M, blocks[i]) for i in range(n)
        ]
        sent = [transmit(i, new_blocks[i], k) for i in range(n)]
        blocks = new_blocks
        ZB_clean = sum(s[1] for s in sent) / n
        H_prev = H
        if intermediate_noise is None:
            ZB = sum(s[0] for s in sent) / n
            H = c * (Y + rho * ZB + rho * U)
            U_new = U + ZB - H
            M = H - ZB - U_new
        else:
            total = sum(s[0] for s in sent)
            U_new = (1.0 - c * rho) * U - total
            M = total + c * rho * U - U_new
            H = M + ZB_clean + U_new
            ZB = ZB_clean
        U = U_new
        tr.log(CENTRAL, BROADCAST, "H-ZB-U", M, k)
        r = float(np.linalg.norm(ZB - H))
        s = float(rho * np.linalg.norm(H - H_prev))
        result.primal_residuals.append(r)
        result.dual_residuals.append(s)
        result.iterations = k
        if keep_blocks:
            result.block_history.append([b.copy() for b in blocks])
        if callback is not None:
            callback(k, blocks)
        if r < config.tol_primal and s < config.tol_dual:
            result.converged = True
            break
    result.blocks = blocks
    for pv, b in zip(parties, blocks):
        pv.B = b
    return result


def fit_consensus_admm(record_parties, config: AdmmConfig = AdmmConfig()):
    """Record-split consensus ADMM; returns ``(H, result)``.

    Owner ``i`` updates ``B_i`` from its own rows, the coordinator averages
    ``B_i + U_i`` and soft-thresholds at ``lam / (rho * n)``.
    """
    if not record_parties:
        raise ShapeError("no record parties")
    blocks = [_check_shapes(Zr, Yr) for Zr, Yr in record_parties]
    m = blocks[0][0].shape[1]
    q = blocks[0][1].shape[1]
    if any(Z.shape[1] != m or Y.shape[1] != q for Z, Y in blocks):
        raise ShapeError("record blocks must share column counts")
    n = len(blocks)
    rho, lam = config.rho, config.lam
    factors = [linalg.cho_factor(Z.T @ Z + rho * np.eye(m)) for Z, _ in blocks]
    ZtY = [Z.T @ Y for Z, Y in blocks]
    Bs = [np.zeros((m, q)) for _ in range(n)]
    Us = [np.zeros((m, q)) for _ in range(n)]
    H = np.zeros((m, q))
    result = AdmmResult(H, False, 0)
    for k in range(1, config.max_iter + 1):
        Bs = [linalg.cho_solve(f, zy + rho * (H - u)) for f, zy, u in zip(factors, ZtY, Us)]
        H_prev = H
        H = soft_threshold(sum(b + u for b, u in zip(Bs, Us)) / n, lam / (rho * n))
        Us = [u + b - H for u, b in zip(Us, Bs)]
        r = float(math.sqrt(sum(np.sum((b - H) ** 2) for b in Bs)))
        s = float(rho * math.sqrt(n) * np.linalg.norm(H - H_prev))
        result.primal_residuals.append(r)
        result.dual_residuals.append(s)
        result.iterations = k
        if r < config.tol_primal and s < config.tol_dual:
            result.converged = True
            break
    result.coefficients = H
    return H, result


class LipschitzWarning(RuntimeWarning):
    pass


@dataclass
class GradientResult:
    coefficients: np.ndarray
    step_ok: bool
    lipschitz: float
    eta: float


def fit_gd_noisy(Z, Y, eta: float, noise: NoiseSpec | None = None, iters: int = 1000,
                 seed=None, B0=None) -> GradientResult:
    """Gradient descent on ``0.5||Y - Z B||^2`` with optional noisy updates.

    ``B <- B - eta * (grad + W)`` where ``W`` is a fresh draw from ``noise``.
    A step above ``1/L`` (``L`` the top eigenvalue of ``Z'Z``) is flagged.
    """
    Z, Y = _check_shapes(Z, Y)
    gram = Z.T @ Z
    cross = Z.T @ Y
    L = float(np.linalg.eigvalsh(gram)[-1])
    step_ok = eta <= 1.0 / L
    if not step_ok:
        warnings.warn(f"step {eta:g} exceeds 1/L = {1.0 / L:g}", LipschitzWarning, stacklevel=2)
    rng = np.random.default_rng(seed)
    B = np.zeros((Z.shape[1], Y.shape[1])) if B0 is None else np.array(B0, float)
    noisy = noise is not None and noise.scale > 0
    for _ in range(iters):
        grad = gram @ B - cross
        if noisy:
            grad = grad + noise.draw(rng, grad.shape)
        B = B - eta * grad
    return GradientResult(B, step_ok, L, eta)
