import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collabvar.adversary import (CENTRAL_NODE, OWNER, attack_admm_transcript,
                                 attack_central_node, attack_linear_algebra_protocol,
                                 attack_noisy_variants, breach_grid, lag_matrix, lag_operator,
                                 owner_unknowns, predict_breach_central, predict_breach_owner)
from collabvar.errors import InvalidRegimeError
from collabvar.estimators import AdmmConfig, fit_lasso_admm_distributed, parties_from_embedding
from collabvar.privacy import NoiseSpec
from collabvar.protocols import secure_cross_products
from collabvar.var_core import build_lag_embedding, generate_stationary_coefficients, simulate_var

from oracles import brute_central_k, brute_owner_k

NO_STOP = dict(tol_primal=1e-300, tol_dual=1e-300)


def test_central_prediction_examples():
    pred = predict_breach_central(1000, 10, 3)
    assert pred.k_breach == 1 == brute_central_k(1000, 10, 3)
    assert pred.equations_at_k >= pred.unknowns_at_k
    # large-T limit ceil(p/n)
    assert predict_breach_central(10**7, 10, 3).k_breach == math.ceil(3 / 10)
    assert predict_breach_central(10**7, 2, 5).k_breach == math.ceil(5 / 2)
    for T in (4, 7, 50):
        assert predict_breach_central(T, 1, 3).k_breach == math.ceil(T * 3 / (T - 3))
    with pytest.raises(InvalidRegimeError):
        predict_breach_central(30, 10, 3)


def test_owner_prediction_examples():
    assert predict_breach_owner(30, 2, 1).k_breach == 3
    # denominator T n - (n-1) p n <= 0
    pred = predict_breach_owner(15, 4, 5)
    assert pred.k_breach == math.inf and not pred.finite
    assert brute_owner_k(15, 4, 5, k_max=5000) == math.inf
    # with T > n p the denominator is always positive
    assert predict_breach_owner(21, 4, 5).k_breach == brute_owner_k(21, 4, 5)
    with pytest.raises(InvalidRegimeError):
        predict_breach_owner(18, 4, 5)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 400), st.integers(1, 12), st.integers(1, 8))
def test_closed_forms_match_counting(T, n, p):
    if T <= n * p:
        return
    assert predict_breach_central(T, n, p).k_breach == brute_central_k(T, n, p)
    den = T * n - (n - 1) * p * n
    brute = brute_owner_k(T, n, p, k_max=100_000 if den > 0 else 200)
    assert predict_breach_owner(T, n, p).k_breach == brute


def test_grid_monotone_in_T():
    rows = breach_grid(range(500, 5001, 500), range(2, 21), range(1, 9))
    for att in (CENTRAL_NODE, OWNER):
        for n in range(2, 21):
            for p in range(1, 9):
                ks = [r["k"] for r in rows if r["attacker"] == att and r["n"] == n and r["p"] == p]
                assert all(a >= b for a, b in zip(ks, ks[1:]))


def test_unknown_counts_after_rewrite_agree():
    for T, n, p, k in [(30, 2, 1, 3), (60, 3, 2, 5)]:
        assert owner_unknowns(T, n, p, k, "coefficients") == owner_unknowns(T, n, p, k, "intermediate")
        assert owner_unknowns(T, n, p, k, "intermediate", rewritten=False) > owner_unknowns(T, n, p, k)


def test_lag_operator_matches_lag_matrix():
    s = np.arange(12.0)
    for lags in [(1,), (1, 2), (1, 3)]:
        Z = lag_matrix(s, lags)
        T = Z.shape[0]
        np.testing.assert_array_equal(lag_operator(T, lags) @ s, Z.reshape(-1, order="F"))


def _cross_instance(seed, T, lags):
    rng = np.random.default_rng(seed)
    L = max(lags)
    s1, s2 = rng.standard_normal(T + L), rng.standard_normal(T + L)
    Z1, Z2 = lag_matrix(s1, lags), lag_matrix(s2, lags)
    Y1, Y2 = s1[L:], s2[L:]
    return Z1, Y1, Z2, Y2


def test_linear_algebra_attack_recovers_exactly():
    Z1, Y1, Z2, Y2 = _cross_instance(0, 8, (1, 2))
    run = secure_cross_products(Z1, Y1[:, None], Z2, Y2[:, None], 1)
    rep = attack_linear_algebra_protocol(run, (1, 2), truth=(Z1, Y1))
    assert rep.solved and rep.reconstruction_error < 1e-8
    # T + p - 1 distinct values sit in the T x p lag block
    assert len(np.unique(Z1)) == 8 + 2 - 1 < 8 * 2


def test_linear_algebra_attack_without_masks_fails():
    Z1, Y1, Z2, Y2 = _cross_instance(1, 8, (1,))
    run = secure_cross_products(Z1, Y1[:, None], Z2, Y2[:, None], 1)
    rep = attack_linear_algebra_protocol(run, (1,), masks={})
    assert not rep.solved and rep.status.startswith("inconclusive")
    bad = dict(run.masks)
    bad["Z1tY2"] = run.masks["Z1tZ2"]
    rep = attack_linear_algebra_protocol(run, (1,), masks=bad)
    assert not rep.solved and "singular" in rep.status


def _admm_run(seed, T=30, n=2, p=1, k=3, **noise):
    model = generate_stationary_coefficients(n, p, seed=seed)
    panel = simulate_var(model, T + p, seed=seed + 100)
    emb = build_lag_embedding(panel, p)
    res = fit_lasso_admm_distributed(parties_from_embedding(emb), emb.Y,
                                     AdmmConfig(lam=0.5, max_iter=k, **NO_STOP),
                                     seed=seed, **noise)
    return panel, emb, res


def test_owner_attack_at_predicted_k():
    panel, _, res = _admm_run(3)
    v = np.asarray(panel.values)
    rep = attack_admm_transcript(res.transcript, "owner1", v[:, 0], 1,
                                 truth={"owner2": v[:, 1]}, seed=0)
    assert rep.iterations_used == rep.prediction.k_breach == 3
    assert rep.solved
    assert rep.reconstruction_error < 1e-4
    np.testing.assert_allclose(rep.recovered["series"]["owner2"], v[:, 1], atol=1e-6)


def test_owner_attack_below_prediction_is_underdetermined():
    panel, _, res = _admm_run(3, k=2)
    v = np.asarray(panel.values)
    rep = attack_admm_transcript(res.transcript, "owner1", v[:, 0], 1)
    assert rep.underdetermined and not rep.solved
    assert rep.equations < rep.unknowns


def test_coefficient_noise_attack_recovers_data_not_coefficients():
    panel, _, res = _admm_run(4, coef_noise=NoiseSpec("laplace", 0.3), keep_blocks=True)
    v = np.asarray(panel.values)
    rep = attack_noisy_variants(res.transcript, "owner1", v[:, 0], 1, "coefficients",
                                truth={"owner2": v[:, 1]}, seed=0)
    assert rep.solved and rep.reconstruction_error < 1e-3
    # the fitted transmitted coefficients include the noise
    B_true = res.block_history[-1][1]
    assert np.abs(rep.recovered["coefficients"]["owner2"][-1] - B_true).max() > 1e-3


def test_zero_noise_matches_plain_attack():
    panel, _, plain = _admm_run(5)
    _, _, zero = _admm_run(5, coef_noise=NoiseSpec("laplace", 0.0))
    v = np.asarray(panel.values)
    a = attack_admm_transcript(plain.transcript, "owner1", v[:, 0], 1, seed=0)
    b = attack_noisy_variants(zero.transcript, "owner1", v[:, 0], 1, "coefficients", seed=0)
    assert a.solved == b.solved
    np.testing.assert_array_equal(a.recovered["series"]["owner2"], b.recovered["series"]["owner2"])


def test_intermediate_noise_in_span_attack():
    panel, _, res = _admm_run(6, intermediate_noise=NoiseSpec("laplace", 0.3))
    v = np.asarray(panel.values)
    rep = attack_noisy_variants(res.transcript, "owner1", v[:, 0], 1, "intermediate",
                                truth={"owner2": v[:, 1]}, seed=0)
    assert rep.solved and rep.reconstruction_error < 1e-3


def test_attack_never_solved_when_fit_fails():
    # noise outside col(Z_j) breaks the rewrite; the report must not claim success
    panel, _, res = _admm_run(6, intermediate_noise=NoiseSpec("laplace", 0.3),
                              noise_in_span=False)
    v = np.asarray(panel.values)
    rep = attack_noisy_variants(res.transcript, "owner1", v[:, 0], 1, "intermediate",
                                truth={"owner2": v[:, 1]}, seed=0, n_starts=5)
    assert not rep.solved


def test_central_node_attack_scale_gauge():
    panel, emb, res = _admm_run(7, k=2)
    v = np.asarray(panel.values)
    amb = attack_central_node(res.transcript, "owner2", 1, truth=v[:, 1])
    assert amb.ambiguous and not amb.solved
    assert amb.reconstruction_error < 1e-8  # correct up to scale
    known = attack_central_node(res.transcript, "owner2", 1, known_target=emb.Y[:, 1],
                                truth=v[:, 1])
    assert known.solved
    np.testing.assert_allclose(known.recovered["series"], v[:, 1], atol=1e-8)
