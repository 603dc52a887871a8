"""Secure linear-algebra protocols between two owners, with full transcripts.

* ``ac_two_party``: product ``A C`` split into additive shares using a
  jointly generated invertible ``M`` cut into halves.
* ``ac_commodity``: the same product with a third entity that deals
  correlated randomness.
* ``sum_inverse``: shares of ``(A + C)^{-1}`` built from four products.
* ``karr_multiply``: ``A'C`` through a projection ``I - W W'`` with
  ``W' A = 0``, plus the balancing of linearly independent equations.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from collabvar._linalg import random_invertible
from collabvar.errors import ProtocolAbort, ShapeError
from collabvar.transcript import ProtocolTranscript


@dataclass(frozen=True)
class ShareSplit:
    """Additive shares; ``V_a + V_c`` equals the protected result."""

    V_a: np.ndarray
    V_c: np.ndarray

    def combine(self) -> np.ndarray:
        return self.V_a + self.V_c


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def joint_mask(s: int, seed=None, *, max_cond=1e8) -> np.ndarray:
    """The ``s x s`` invertible matrix both owners derive from a shared seed."""
    return random_invertible(_rng(seed), s, max_cond=max_cond)


def ac_two_party(A, C, seed=None, *, M=None, pad=False, a_party="owner1",
                 c_party="owner2", transcript: ProtocolTranscript | None = None):
    """Two-party product protocol without a third entity.

    With ``M = [M_left, M_right]`` and ``M^{-1} = [top; bottom]``, the
    ``A``-holder receives ``top @ C`` and keeps ``V_a = A M_left top C``;
    the ``C``-holder receives ``A M_right`` and keeps
    ``V_c = A M_right bottom C``. The inner dimension ``s`` must be even
    unless ``pad=True`` appends a zero column/row (changing the transcript
    shapes).
    """
    A = np.atleast_2d(np.asarray(A, float))
    C = np.asarray(C, float)
    if C.ndim == 1:
        C = C[:, None]
    if A.shape[1] != C.shape[0]:
        raise ShapeError(f"cannot multiply {A.shape} by {C.shape}")
    s = A.shape[1]
    if s % 2:
        if not pad:
            raise ShapeError(f"inner dimension {s} is odd; pass pad=True to zero-pad")
        A = np.hstack([A, np.zeros((A.shape[0], 1))])
        C = np.vstack([C, np.zeros((1, C.shape[1]))])
        s += 1
    tr = transcript if transcript is not None else ProtocolTranscript("ac_two_party")
    if M is None:
        M = joint_mask(s, seed)
    M = np.asarray(M, float)
    if M.shape != (s, s):
        raise ShapeError(f"mask must be {s}x{s}")
    Minv = np.linalg.inv(M)
    h = s // 2
    M_left, M_right = M[:, :h], M[:, h:]
    top, bottom = Minv[:h], Minv[h:]

    AMr = tr.log(a_party, c_party, "A@M_right", A @ M_right).values
    topC = tr.log(c_party, a_party, "Minv_top@C", top @ C).values
    V_a = A @ M_left @ topC
    V_c = AMr @ bottom @ C
    return ShareSplit(V_a, V_c), tr


@dataclass(frozen=True)
class Commodity:
    R_a: np.ndarray
    r_a: np.ndarray
    R_c: np.ndarray
    r_c: np.ndarray


def deal_commodity(m, s, k, seed=None) -> Commodity:
    """Third-entity randomness with ``r_a + r_c = R_a R_c``."""
    rng = _rng(seed)
    R_a = rng.standard_normal((m, s))
    R_c = rng.standard_normal((s, k))
    r_a = rng.standard_normal((m, k))
    return Commodity(R_a, r_a, R_c, R_a @ R_c - r_a)


def ac_commodity(A, C, seed=None, *, commodity: Commodity | None = None, V_c=None,
                 a_party="owner1", c_party="owner2",
                 transcript: ProtocolTranscript | None = None):
    """Product protocol assisted by a commodity server.

    Owners swap ``A + R_a`` and ``C + R_c``; the ``C``-holder draws ``V_c``
    and sends ``T = (A + R_a) C + (r_c - V_c)``; the ``A``-holder keeps
    ``V_a = T + r_a - R_a (C + R_c)``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    C = np.asarray(C, float)
    if C.ndim == 1:
        C = C[:, None]
    if A.shape[1] != C.shape[0]:
        raise ShapeError(f"cannot multiply {A.shape} by {C.shape}")
    m, s = A.shape
    k = C.shape[1]
    rng = _rng(seed)
    com = commodity if commodity is not None else deal_commodity(m, s, k, rng)
    if (com.R_a.shape != (m, s) or com.R_c.shape != (s, k)
            or com.r_a.shape != (m, k) or com.r_c.shape != (m, k)):
        raise ProtocolAbort("commodity matrices have the wrong shapes")
    if not np.allclose(com.r_a + com.r_c, com.R_a @ com.R_c, rtol=1e-10, atol=1e-10):
        raise ProtocolAbort("commodity server sent r_a + r_c != R_a R_c")
    tr = transcript if transcript is not None else ProtocolTranscript("ac_commodity")
    tr.log("commodity", a_party, "R_a", com.R_a)
    tr.log("commodity", a_party, "r_a", com.r_a)
    tr.log("commodity", c_party, "R_c", com.R_c)
    tr.log("commodity", c_party, "r_c", com.r_c)
    A_masked = tr.log(a_party, c_party, "A+R_a", A + com.R_a).values
    C_masked = tr.log(c_party, a_party, "C+R_c", C + com.R_c).values
    V_c = rng.standard_normal((m, k)) if V_c is None else np.asarray(V_c, float)
    T = tr.log(c_party, a_party, "T", A_masked @ C + (com.r_c - V_c)).values
    V_a = T + com.r_a - com.R_a @ C_masked
    return ShareSplit(V_a, V_c), tr


def _product(variant, A, C, rng, a_party, c_party, tr):
    if variant == "two_party":
        return ac_two_party(A, C, rng, a_party=a_party, c_party=c_party, transcript=tr)[0]
    if variant == "commodity":
        return ac_commodity(A, C, rng, a_party=a_party, c_party=c_party, transcript=tr)[0]
    raise ValueError(f"unknown product variant {variant!r}")


def sum_inverse(A, C, seed=None, *, variant="two_party", a_party="owner1",
                c_party="owner2", transcript: ProtocolTranscript | None = None):
    """Shares of ``(A + C)^{-1}``; ``A`` from the first owner, ``C`` from the second.

    Step 1 forms ``X = P (A + C) Q`` at the first owner with ``P``, ``Q``
    private to the second; step 2 strips them: ``(A + C)^{-1} = Q X^{-1} P``.
    Each step runs two product protocols.
    """
    A = np.asarray(A, float)
    C = np.asarray(C, float)
    if A.shape != C.shape or A.shape[0] != A.shape[1]:
        raise ShapeError("A and C must be square matrices of equal size")
    m = A.shape[0]
    rng = _rng(seed)
    tr = transcript if transcript is not None else ProtocolTranscript("sum_inverse")
    P = random_invertible(rng, m)
    Q = random_invertible(rng, m)

    # step 1: X = PAQ + PCQ
    PA = _product(variant, P, A, rng, c_party, a_party, tr)          # V_a at owner 2
    V1Q = _product(variant, PA.V_c, Q, rng, a_party, c_party, tr)     # PA.V_c held by owner 1
    to_owner1 = V1Q.V_c + PA.V_a @ Q + P @ C @ Q
    tr.log(c_party, a_party, "P(A+C)Q share", to_owner1)
    X = V1Q.V_a + to_owner1
    # the shares cancel to roundoff when A + C is singular
    scale = max(np.linalg.norm(V1Q.V_a), np.linalg.norm(to_owner1))
    if np.linalg.matrix_rank(X, tol=1e-10 * scale) < m:
        raise np.linalg.LinAlgError("A + C is singular; inverse protocol aborted for both owners")
    X_inv = np.linalg.inv(X)

    # step 2: Q X^{-1} P
    QX = _product(variant, Q, X_inv, rng, c_party, a_party, tr)
    SP = _product(variant, QX.V_c, P, rng, a_party, c_party, tr)
    return ShareSplit(SP.V_a, SP.V_c + QX.V_a @ P), tr


@dataclass(frozen=True)
class NlieBalance:
    g_star: Fraction
    nlie_owner1: Fraction
    nlie_owner2: Fraction

    @property
    def gap(self) -> Fraction:
        return abs(self.nlie_owner1 - self.nlie_owner2)


def nlie_counts(m: int, k: int, s: int, g) -> tuple:
    """``(k s + k g, k s + s (m - g))`` for a given ``g``."""
    g = Fraction(g)
    return k * s + k * g, k * s + s * (m - g)


def nlie_optimal_g(m: int, k: int, s: int) -> NlieBalance:
    """``g* = s m / (k + s)``, where both owners hold equally many equations."""
    if min(m, k, s) <= 0:
        raise ValueError("m, k and s must be positive")
    g = Fraction(s * m, k + s)
    n1, n2 = nlie_counts(m, k, s, g)
    return NlieBalance(g, n1, n2)


@dataclass(frozen=True)
class KarrResult:
    product: np.ndarray
    W: np.ndarray
    projected_rank: int
    degenerate: bool


def orthogonal_complement_basis(A, g: int) -> np.ndarray:
    """``g`` orthonormal columns orthogonal to the column space of ``A``.

    Taken from the trailing columns of the complete QR factor of ``A``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    m = A.shape[0]
    if g == 0:
        return np.zeros((m, 0))
    Q, _ = np.linalg.qr(A, mode="complete")
    return Q[:, m - g:]


def karr_multiply(A, C, g=None, seed=None, *, a_party="owner1", c_party="owner2",
                  transcript: ProtocolTranscript | None = None):
    """``A'C`` via the projection protocol; ``A`` is ``m x k``, ``C`` is ``m x s``.

    The ``A``-holder sends ``W`` with ``W'A = 0``; the ``C``-holder returns
    ``(I - W W')C``; the ``A``-holder computes ``A'(I - W W')C = A'C``.
    ``g`` defaults to the rounded balancing value ``s m / (k + s)``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    C = np.asarray(C, float)
    if C.ndim == 1:
        C = C[:, None]
    m, k = A.shape
    s = C.shape[1]
    if C.shape[0] != m:
        raise ShapeError("A and C must have the same number of rows")
    if g is None:
        g = int(round(nlie_optimal_g(m, k, s).g_star))
        g = min(g, m - np.linalg.matrix_rank(A))
    rank_a = np.linalg.matrix_rank(A)
    if g < 0 or g > m - rank_a:
        raise ShapeError(f"g={g} exceeds the {m - rank_a} dimensions orthogonal to A")
    tr = transcript if transcript is not None else ProtocolTranscript("karr")
    W = tr.log(a_party, c_party, "W", orthogonal_complement_basis(A, g)).values
    projected = C - W @ (W.T @ C)
    sent = tr.log(c_party, a_party, "(I-WW')C", projected).values
    product = A.T @ sent
    return KarrResult(product, W, int(np.linalg.matrix_rank(sent)), g == 0), tr


@dataclass
class CrossProductRun:
    """Outcome of the three products two feature-split owners need for LS.

    ``masks`` holds the jointly generated matrices keyed by product name;
    both owners know them, which is what the reconstruction exploits.
    """

    Z1tZ2: np.ndarray
    Z1tY2: np.ndarray
    Z2tY1: np.ndarray
    masks: dict
    transcript: ProtocolTranscript


def secure_cross_products(Z1, Y1, Z2, Y2, seed=None) -> CrossProductRun:
    """Cross terms of ``[Z1 Z2]'[Z1 Z2]`` and ``[Z1 Z2]'[Y1 Y2]`` via ``ac_two_party``.

    Owner 1 holds ``(Z1, Y1)`` and owner 2 holds ``(Z2, Y2)``; the record
    count ``T`` is the inner dimension and must be even.
    """
    rng = _rng(seed)
    Z1, Y1, Z2, Y2 = (np.asarray(a, float) for a in (Z1, Y1, Z2, Y2))
    T = Z1.shape[0]
    tr = ProtocolTranscript("secure_cross_products")
    masks = {name: joint_mask(T, rng) for name in ("Z1tZ2", "Z1tY2", "Z2tY1")}
    s1, _ = ac_two_party(Z1.T, Z2, M=masks["Z1tZ2"], transcript=tr)
    s2, _ = ac_two_party(Z1.T, Y2, M=masks["Z1tY2"], transcript=tr)
    s3, _ = ac_two_party(Z2.T, Y1, M=masks["Z2tY1"], a_party="owner2",
                         c_party="owner1", transcript=tr)
    return CrossProductRun(s1.combine(), s2.combine(), s3.combine(), masks, tr)
