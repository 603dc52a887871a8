"""Confidentiality-breach analysis for collaborative VAR fitting.

Two layers:

* equation counting: closed-form iterations-to-breach for a central node
  and for a semi-trusted owner, with the matching inequality checks;
* reconstruction: attacks that recover another owner's data from the
  messages in a :class:`~collabvar.transcript.ProtocolTranscript`.

Reconstructions are validated against ground truth when it is supplied,
but the ``solved`` flag never looks at the truth.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from collabvar.errors import InvalidRegimeError
from collabvar.estimators import CENTRAL
from collabvar.transcript import BROADCAST, ProtocolTranscript
from collabvar.var_core import as_lagspec

CENTRAL_NODE = "central_node"
OWNER = "semi_trusted_owner"
PLACEMENTS = ("none", "coefficients", "intermediate")


@dataclass(frozen=True)
class BreachPrediction:
    attacker: str
    T: int
    n: int
    p: int
    k_breach: float
    equations_at_k: int | None
    unknowns_at_k: int | None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.k_breach)


@dataclass
class BreachReport:
    prediction: BreachPrediction | None
    reconstruction_error: float
    iterations_used: int
    solved: bool
    status: str = ""
    residual: float = math.nan
    ambiguous: bool = False
    underdetermined: bool = False
    equations: int = 0
    unknowns: int = 0
    converged_starts: int = 0
    recovered: dict = field(default_factory=dict, repr=False)

    def to_row(self) -> dict:
        pred = self.prediction
        return {
            "attacker": pred.attacker if pred else "",
            "T": pred.T if pred else "",
            "n": pred.n if pred else "",
            "p": pred.p if pred else "",
            "k_breach": pred.k_breach if pred else "",
            "iterations_used": self.iterations_used,
            "equations": self.equations,
            "unknowns": self.unknowns,
            "solved": self.solved,
            "ambiguous": self.ambiguous,
            "underdetermined": self.underdetermined,
            "converged_starts": self.converged_starts,
            "residual": self.residual,
            "reconstruction_error": self.reconstruction_error,
            "status": self.status,
        }

    def summary(self) -> str:
        verdict = "solved" if self.solved else self.status or "not solved"
        return (f"{verdict}: k={self.iterations_used}, equations={self.equations}, "
                f"unknowns={self.unknowns}, residual={self.residual:.3g}, "
                f"error={self.reconstruction_error:.3g}")


# ---------------------------------------------------------------- counting

def central_equations(T, n, p, k) -> int:
    return T * n * k


def central_unknowns(T, n, p, k) -> int:
    return p * n * k + T * p


def owner_equations(T, n, p, k) -> int:
    return T * n * k


def owner_unknowns(T, n, p, k, placement="none", rewritten=True) -> int:
    """Unknowns facing one owner after ``k`` broadcasts.

    Raw intermediate noise adds a ``T x n`` unknown per competitor and
    iteration; once the noise is folded into the coefficients it costs the
    same ``p x n`` per iteration as coefficient noise.
    """
    if placement not in PLACEMENTS:
        raise ValueError(f"unknown noise placement {placement!r}")
    per_iter = p * n
    if placement == "intermediate" and not rewritten:
        per_iter = p * n + T * n
    return T * n + (n - 1) * (k * per_iter + T * p + T)


def _ceil_div(num: int, den: int) -> int:
    return -(-num // den)


def _check_counts(T, n, p):
    for name, v in (("T", T), ("n", n), ("p", p)):
        if int(v) != v or v < 1:
            raise InvalidRegimeError(f"{name} must be a positive integer, got {v}")


def predict_breach_central(T: int, n: int, p: int) -> BreachPrediction:
    """Iterations after which the central node holds enough equations.

    ``k = ceil(T p / (T n - p n))``; requires ``T > n p``.
    """
    _check_counts(T, n, p)
    if T <= n * p:
        raise InvalidRegimeError(f"T={T} must exceed n*p={n * p}")
    den = T * n - p * n
    if den <= 0:
        return BreachPrediction(CENTRAL_NODE, T, n, p, math.inf, None, None)
    k = max(1, _ceil_div(T * p, den))
    return BreachPrediction(CENTRAL_NODE, T, n, p, k,
                            central_equations(T, n, p, k), central_unknowns(T, n, p, k))


def predict_breach_owner(T: int, n: int, p: int) -> BreachPrediction:
    """Iterations after which a semi-trusted owner can solve for a competitor.

    ``k = ceil((T n + (n-1)(T p + T)) / (T n - (n-1) p n))``, infinite when
    the denominator is not positive. That gate is checked first: with
    ``T > n p`` the denominator is always positive.
    """
    _check_counts(T, n, p)
    den = T * n - (n - 1) * p * n
    if den <= 0:
        return BreachPrediction(OWNER, T, n, p, math.inf, None, None)
    if T <= n * p:
        raise InvalidRegimeError(f"T={T} must exceed n*p={n * p}")
    k = max(1, _ceil_div(T * n + (n - 1) * (T * p + T), den))
    return BreachPrediction(OWNER, T, n, p, k,
                            owner_equations(T, n, p, k), owner_unknowns(T, n, p, k))


def predict_breach(attacker: str, T: int, n: int, p: int) -> BreachPrediction:
    if attacker in (CENTRAL_NODE, "central"):
        return predict_breach_central(T, n, p)
    if attacker in (OWNER, "owner"):
        return predict_breach_owner(T, n, p)
    raise ValueError(f"unknown attacker {attacker!r}")


def breach_grid(Ts, ns, ps, attackers=(CENTRAL_NODE, OWNER)) -> list:
    """Long-format rows ``(T, n, p, attacker, k)``; invalid regimes are skipped."""
    rows = []
    for attacker in attackers:
        for n in ns:
            for p in ps:
                for T in Ts:
                    try:
                        pred = predict_breach(attacker, T, n, p)
                    except InvalidRegimeError:
                        continue
                    rows.append({"T": T, "n": n, "p": p, "attacker": pred.attacker,
                                 "k": pred.k_breach})
    return rows


# ------------------------------------------------------ lag structure

def lag_matrix(series, lags) -> np.ndarray:
    """``T x p`` block of lagged values of one series, columns in lag order."""
    spec = as_lagspec(lags)
    s = np.asarray(series, float)
    L = spec.max_lag
    T = s.shape[0] - L
    return np.column_stack([s[L - l:L - l + T] for l in spec.lags])


def lag_operator(T, lags) -> np.ndarray:
    """Matrix ``A`` with ``vec(lag_matrix(s)) = A s`` (column-major vec)."""
    spec = as_lagspec(lags)
    L = spec.max_lag
    A = np.zeros((T * spec.p, T + L))
    for c, l in enumerate(spec.lags):
        for t in range(T):
            A[c * T + t, L - l + t] = 1.0
    return A


# ------------------------------------------- linear-algebra protocol attack

def attack_linear_algebra_protocol(run, lags, *, masks=None, truth=None, tol=1e-8):
    """Owner 2 recovers owner 1's lag block and target from the cross products.

    ``run`` is a :class:`~collabvar.protocols.CrossProductRun`; ``masks``
    defaults to the jointly generated matrices stored on it. Pass
    ``masks={}`` to model an owner who does not know them.
    """
    spec = as_lagspec(lags)
    masks = run.masks if masks is None else masks
    tr = run.transcript
    sent = tr.select(sender="owner1", receiver="owner2", label="A@M_right")
    back = tr.select(sender="owner1", receiver="owner2", label="Minv_top@C")
    missing = [k for k in ("Z1tZ2", "Z1tY2", "Z2tY1") if k not in masks]
    if missing or len(sent) < 2 or not back:
        return BreachReport(None, math.inf, 0, False,
                            status=f"inconclusive: masks unknown ({', '.join(missing)})")
    M1, M2, M3 = (np.asarray(masks[k], float) for k in ("Z1tZ2", "Z1tY2", "Z2tY1"))
    T = M1.shape[0]
    h = T // 2
    stacked = np.hstack([M1[:, h:], M2[:, h:]])
    if np.linalg.matrix_rank(stacked) < T:
        return BreachReport(None, math.inf, 0, False, status="inconclusive: singular stacked mask")
    R = np.hstack([sent[0].values, sent[1].values])
    Z1 = np.linalg.solve(stacked.T, R.T)

    # series unknowns: lag block entries plus the top-half equations on Y1
    L = spec.max_lag
    A_lag = lag_operator(T, spec)
    top = np.linalg.inv(M3)[:h]
    A_y = np.zeros((T, T + L))
    A_y[np.arange(T), L + np.arange(T)] = 1.0
    system = np.vstack([A_lag, top @ A_y])
    rhs = np.concatenate([Z1.reshape(-1, order="F"), back[0].values.reshape(-1)])
    if np.linalg.matrix_rank(system) < T + L:
        return BreachReport(None, math.inf, 0, False, status="inconclusive: series not identified")
    series, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    Y1 = series[L:]
    recovered = {"Z": Z1, "Y": Y1, "series": series}
    err = math.nan
    if truth is not None:
        Zt, Yt = (np.asarray(a, float) for a in truth)
        err = float(np.linalg.norm(Z1 - Zt) + np.linalg.norm(Y1 - Yt.reshape(-1)))
    resid = float(np.linalg.norm(system @ series - rhs))
    return BreachReport(None, err, 3, resid < tol * (1 + np.linalg.norm(rhs)),
                        status="recovered", residual=resid, recovered=recovered)


# ------------------------------------------------- ADMM transcript attack

def _party_order(tr: ProtocolTranscript) -> list:
    order = []
    for e in tr.entries:
        if e.receiver == CENTRAL and e.iteration == 0 and e.sender not in order:
            order.append(e.sender)
    return order


def _broadcasts(tr, K):
    out = {}
    for e in tr.entries:
        if e.sender == CENTRAL and e.receiver == BROADCAST and e.iteration is not None:
            out[e.iteration] = e.values
    return [out[k] for k in range(1, K + 1)]


def _own_messages(tr, owner, K):
    out = {}
    for e in tr.entries:
        if e.sender == owner and e.receiver == CENTRAL and e.iteration is not None:
            out[e.iteration] = e.values
    return [out[k] for k in range(1, K + 1)]


def _last_iteration(tr):
    its = [e.iteration for e in tr.entries if e.sender == CENTRAL and e.iteration is not None]
    return max(its) if its else 0


class _TranscriptModel:
    """Forward replay of the central node driven by guessed competitor data."""

    def __init__(self, M_obs, own_msgs, own_series, a, n_parties, lags, rho, N, mode):
        self.M_obs = M_obs
        self.own = own_msgs
        self.spec = as_lagspec(lags)
        self.L = self.spec.max_lag
        self.T, self.q = M_obs[0].shape
        self.a = a
        self.n = n_parties
        self.others = [j for j in range(n_parties) if j != a]
        self.rho = rho
        self.c = 1.0 / (N + rho)
        self.mode = mode
        self.K = len(M_obs)
        self.own_series = np.asarray(own_series, float)
        self.p = self.spec.p
        self.n_u = self.T * self.q
        self.n_s = self.T + self.L
        self.n_b = self.p * self.q
        self.size = self.n_u + len(self.others) * (self.n_s + self.K * self.n_b)
        self.series_mask = np.zeros(self.size, bool)
        pos = self.n_u
        for _ in self.others:
            self.series_mask[pos:pos + self.n_s] = True
            pos += self.n_s + self.K * self.n_b

    def unpack(self, x):
        U0 = x[:self.n_u].reshape(self.T, self.q)
        pos = self.n_u
        series, blocks = [], []
        for _ in self.others:
            series.append(x[pos:pos + self.n_s])
            pos += self.n_s
            bs = []
            for _ in range(self.K):
                bs.append(x[pos:pos + self.n_b].reshape(self.p, self.q))
                pos += self.n_b
            blocks.append(bs)
        return U0, series, blocks

    def residual(self, x):
        U, series, blocks = self.unpack(x)
        Y = np.empty((self.T, self.q))
        Y[:, self.a] = self.own_series[self.L:]
        Zs = []
        for j, s in zip(self.others, series):
            Y[:, j] = s[self.L:]
            Zs.append(lag_matrix(s, self.spec))
        c, rho = self.c, self.rho
        out = []
        for k in range(self.K):
            if self.mode == "intermediate":
                total = self.own[k].copy()
                for idx, (j, Z) in enumerate(zip(self.others, Zs)):
                    share = (c * rho - 1.0) / self.n * (Z @ blocks[idx][k])
                    share[:, j] += c * Y[:, j]
                    total += share
                U_new = (1.0 - c * rho) * U - total
                M = total + c * rho * U - U_new
            else:
                S = self.own[k].copy()
                for idx, Z in enumerate(Zs):
                    S += Z @ blocks[idx][k]
                S /= self.n
                H = c * (Y + rho * S + rho * U)
                U_new = U + S - H
                M = H - S - U_new
            out.append((M - self.M_obs[k]).ravel())
            U = U_new
        return np.concatenate(out)


def _solve_start(model, x0, max_nfev):
    res = least_squares(model.residual, x0, method="lm", xtol=1e-15, ftol=1e-15,
                        gtol=1e-15, max_nfev=max_nfev)
    return res


def attack_admm_transcript(transcript: ProtocolTranscript, attacker: str, own_series, lags, *,
                           rho: float = 1.0, n_agents: int | None = None, k: int | None = None,
                           mode: str = "none", truth=None, n_starts: int = 20, seed=None,
                           tol: float = 1e-3, residual_tol: float = 1e-10,
                           max_nfev: int | None = None, workers: int = 1) -> BreachReport:
    """Reconstruct competitors' series from the broadcasts an owner observes.

    Unknowns are the initial dual ``U^0``, each competitor's full series
    (tied into its lag block and target column) and its transmitted
    coefficients at every iteration. Iterations ``1..k`` are replayed
    through the node's update rule and fitted with Levenberg-Marquardt from
    ``n_starts`` random starts. ``mode`` is ``"none"``/``"coefficients"``
    (messages ``Z_j B'_j``) or ``"intermediate"`` (additive shares with the
    noise folded into the coefficients).

    The report is flagged underdetermined, without running the solver, when
    ``k`` is below the owner breach prediction; it is ambiguous when distinct
    starts fit equally well or the Jacobian is rank deficient at the fit.
    """
    if mode not in PLACEMENTS:
        raise ValueError(f"unknown mode {mode!r}")
    view = transcript.view_of(attacker)
    order = _party_order(transcript)
    if attacker not in order:
        raise ValueError(f"{attacker!r} did not take part in the transcript")
    spec = as_lagspec(lags)
    n = len(order)
    K = _last_iteration(view) if k is None else int(k)
    M_obs = _broadcasts(view, K)
    T = M_obs[0].shape[0]
    p = spec.p
    pred = predict_breach_owner(T, n, p)
    equations = owner_equations(T, n, p, K)
    unknowns = owner_unknowns(T, n, p, K, mode)
    if equations < unknowns:
        return BreachReport(pred, math.inf, K, False, status="underdetermined",
                            underdetermined=True, equations=equations, unknowns=unknowns)

    model = _TranscriptModel(M_obs, _own_messages(view, attacker, K), own_series,
                             order.index(attacker), n, spec, rho, n_agents or n,
                             "intermediate" if mode == "intermediate" else "none")
    rng = np.random.default_rng(seed)
    scale = float(np.std(own_series)) or 1.0
    starts = []
    for _ in range(n_starts):
        x0 = rng.standard_normal(model.size) * 0.5
        x0[:model.n_u] *= scale
        starts.append(x0)
    nfev = max_nfev or 200 * (model.size + 1)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            fits = list(pool.map(lambda x0: _solve_start(model, x0, nfev), starts))
    else:
        fits = [_solve_start(model, x0, nfev) for x0 in starts]

    ref = 1.0 + float(np.linalg.norm(np.concatenate([m.ravel() for m in M_obs])))
    norms = [float(np.linalg.norm(f.fun)) for f in fits]
    ok = [f for f, r in zip(fits, norms) if r <= residual_tol * ref]
    best = fits[int(np.argmin(norms))]
    _, series_best, blocks_best = model.unpack(best.x)
    recovered = {
        "series": {order[j]: s for j, s in zip(model.others, series_best)},
        "coefficients": {order[j]: b for j, b in zip(model.others, blocks_best)},
    }

    ambiguous = False
    if ok:
        # U^0 and the coefficients keep a gauge along col(Z_j); only a null
        # direction that moves the series makes the data ambiguous
        _, sv, Vt = np.linalg.svd(best.jac)
        sv = np.concatenate([sv, np.zeros(Vt.shape[0] - sv.size)])
        null = Vt[sv <= 1e-9 * sv[0]]
        if null.size and np.abs(null[:, model.series_mask]).max() > 1e-6:
            ambiguous = True
        base = np.concatenate(model.unpack(best.x)[1])
        for f in ok:
            other = np.concatenate(model.unpack(f.x)[1])
            if np.linalg.norm(other - base) > 1e-6 * (1 + np.linalg.norm(base)):
                ambiguous = True
                break

    err = math.nan
    if truth is not None:
        err = 0.0
        for j, s in zip(model.others, series_best):
            true_s = np.asarray(truth[order[j]], float)
            err += float(np.linalg.norm(lag_matrix(s, spec) - lag_matrix(true_s, spec)) ** 2
                         + np.linalg.norm(s[spec.max_lag:] - true_s[spec.max_lag:]) ** 2)
        err = math.sqrt(err)

    if not ok:
        status = "solver did not converge"
    elif ambiguous:
        status = "ambiguous"
    else:
        status = "recovered"
    return BreachReport(pred, err, K, bool(ok) and not ambiguous, status=status,
                        residual=min(norms), ambiguous=ambiguous, equations=equations,
                        unknowns=unknowns, converged_starts=len(ok), recovered=recovered)


def attack_noisy_variants(transcript, attacker, own_series, lags, placement="coefficients",
                          **kwargs) -> BreachReport:
    """The owner attack when messages carry noise.

    Coefficient noise only changes which coefficients are transmitted, so
    the unknowns are ``B + W``. Intermediate noise drawn inside the column
    space of ``Z_j`` is rewritten the same way.
    """
    if placement not in ("coefficients", "intermediate"):
        raise ValueError(f"unknown noise placement {placement!r}")
    return attack_admm_transcript(transcript, attacker, own_series, lags, mode=placement,
                                  **kwargs)


# ----------------------------------------------------- central-node attack

def attack_central_node(transcript: ProtocolTranscript, target: str, lags, *, k=None,
                        known_target=None, truth=None, tol=1e-3) -> BreachReport:
    """Central node recovers ``target``'s series from its inbound products.

    The stacked products ``[Z_j B_j^1 ... Z_j B_j^k]`` span the column space
    of ``Z_j``; the lag ties leave ``Z_j`` determined up to scale. The scale
    is fixed by ``known_target`` (the target column, which the node sees in
    the plain scheme); without it the report is ambiguous. The error is on
    ``Z_j`` after the best rescaling.
    """
    spec = as_lagspec(lags)
    msgs = {e.iteration: e.values for e in transcript.entries
            if e.sender == target and e.receiver == CENTRAL and e.iteration}
    if not msgs:
        raise ValueError(f"no products from {target!r} in transcript")
    K = max(msgs) if k is None else int(k)
    prods = np.hstack([msgs[i] for i in range(1, K + 1)])
    T, q = msgs[1].shape
    p, L = spec.p, spec.max_lag
    n = len(_party_order(transcript)) or q
    pred = predict_breach_central(T, n, p)
    equations = central_equations(T, n, p, K)
    unknowns = central_unknowns(T, n, p, K)
    if equations < unknowns:
        return BreachReport(pred, math.inf, K, False, status="underdetermined",
                            underdetermined=True, equations=equations, unknowns=unknowns)
    U, sv, _ = np.linalg.svd(prods, full_matrices=False)
    rank = int(np.sum(sv > 1e-9 * sv[0])) if sv[0] > 0 else 0
    if rank < p:
        return BreachReport(pred, math.inf, K, False, status="inconclusive: products rank deficient",
                            ambiguous=True, equations=equations, unknowns=unknowns)
    Q = U[:, :rank]
    proj = np.eye(T) - Q @ Q.T
    A = lag_operator(T, spec)
    # values after the last lagged row never enter Z_j
    used = np.flatnonzero(A.any(axis=0))
    system = np.kron(np.eye(p), proj) @ A[:, used]
    _, s2, Vt = np.linalg.svd(system)
    s2 = np.concatenate([s2, np.zeros(Vt.shape[0] - s2.size)])
    null = Vt[s2 <= 1e-8 * max(s2[0], 1.0)]
    if null.shape[0] != 1:
        return BreachReport(pred, math.inf, K, False, status="ambiguous", ambiguous=True,
                            equations=equations, unknowns=unknowns)
    series = np.full(T + L, np.nan)
    series[used] = null[0]
    ambiguous = True
    if known_target is not None:
        y = np.asarray(known_target, float).reshape(-1)
        overlap = used[used >= L]
        est = series[overlap]
        alpha = float(est @ y[overlap - L] / (est @ est))
        series = alpha * series
        series[L:] = y
        ambiguous = False
    Z = lag_matrix(np.nan_to_num(series), spec)
    err = math.nan
    if truth is not None:
        Zt = lag_matrix(np.asarray(truth, float), spec)
        alpha = float(np.sum(Z * Zt) / np.sum(Z * Z))
        err = float(np.linalg.norm(alpha * Z - Zt))
    B, *_ = np.linalg.lstsq(Z, prods, rcond=None)
    recovered = {"series": series, "Z": Z, "coefficients": B}
    return BreachReport(pred, err, K, not ambiguous,
                        status="ambiguous: scale" if ambiguous else "recovered",
                        ambiguous=ambiguous, equations=equations, unknowns=unknowns,
                        recovered=recovered)
