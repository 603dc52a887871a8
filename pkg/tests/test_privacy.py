import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collabvar.errors import CalibrationError, ShapeError
from collabvar.privacy import (MaskingKey, NoiseSpec, RankLossWarning, add_noise,
                               empirical_sensitivity, gaussian_sigma, laplace_epsilon,
                               postmultiply_mask, premultiply_mask, random_feature_keys,
                               random_record_masks, random_ridge_keys, ridge_outsource)
from collabvar.transcript import ProtocolTranscript
from collabvar.var_core import TimeSeriesPanel

# sqrt(2 ln 25), evaluated with mpmath at 30 digits
SIGMA_D1_E1_D005 = 2.5372724823590393


def test_laplace_budget_values():
    assert laplace_epsilon(12, 0.6) == pytest.approx(20.0, rel=1e-15)
    assert laplace_epsilon(12, 0.8) == pytest.approx(15.0, rel=1e-15)
    spec = NoiseSpec.laplace_for(20.0, 12.0)
    assert spec.scale == pytest.approx(0.6)


def test_gaussian_sigma_value_and_domain():
    assert gaussian_sigma(1.0, 1.0, 0.05) == pytest.approx(SIGMA_D1_E1_D005, rel=1e-14)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(CalibrationError):
            gaussian_sigma(1.0, 1.0, bad)
    with pytest.raises(CalibrationError):
        NoiseSpec("gaussian", 1.0, epsilon=1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 10), st.floats(1e-6, 0.5))
def test_gaussian_sigma_scaling(sens, eps, delta):
    s = gaussian_sigma(sens, eps, delta)
    assert s == pytest.approx(sens * gaussian_sigma(1.0, 1.0, delta) / eps, rel=1e-12)
    assert gaussian_sigma(sens, eps, delta / 2) > s


def test_noise_families_moments():
    rng = np.random.default_rng(0)
    b = 0.6
    draws = {f: NoiseSpec(f, b).draw(rng, 200_000) for f in ("laplace", "gaussian", "uniform")}
    assert draws["laplace"].var() == pytest.approx(2 * b * b, rel=0.02)
    assert draws["gaussian"].var() == pytest.approx(b * b, rel=0.02)
    assert draws["uniform"].var() == pytest.approx(b * b / 3, rel=0.02)
    assert np.abs(draws["uniform"]).max() <= b
    with pytest.raises(ValueError):
        NoiseSpec("cauchy", 1.0)


def test_add_noise_keeps_type_and_zero_scale():
    panel = TimeSeriesPanel(np.arange(6.0).reshape(3, 2), owners=("a", "b"))
    same = add_noise(panel, NoiseSpec("laplace", 0.0), seed=1)
    assert isinstance(same, TimeSeriesPanel) and same.owners == ("a", "b")
    np.testing.assert_array_equal(same.values, panel.values)
    noisy = add_noise(panel.values, NoiseSpec("gaussian", 1.0), seed=1)
    again = add_noise(panel.values, NoiseSpec("gaussian", 1.0), seed=1)
    np.testing.assert_array_equal(noisy, again)
    assert empirical_sensitivity([3.0, -1.0, 2.0]) == 4.0


def test_premultiply_keeps_least_squares():
    rng = np.random.default_rng(2)
    Z = rng.standard_normal((30, 3))
    Y = rng.standard_normal((30, 1))
    masks = random_record_masks([10, 20], 30, seed=3, orthogonal=True)
    parties = [(Z[:10], Y[:10], masks[0]), (Z[10:], Y[10:], masks[1])]
    MZ, MY = premultiply_mask(parties)
    ref = np.linalg.lstsq(Z, Y, rcond=None)[0]
    np.testing.assert_allclose(np.linalg.lstsq(MZ, MY, rcond=None)[0], ref, atol=1e-10)


def test_premultiply_rank_loss_warns():
    rng = np.random.default_rng(4)
    Z = rng.standard_normal((10, 4))
    masks = random_record_masks([10], 2, seed=1)
    with pytest.warns(RankLossWarning):
        premultiply_mask([(Z, np.zeros((10, 1)), masks[0])])
    with pytest.raises(ShapeError):
        random_record_masks([3, 3], 4, orthogonal=True)


def test_postmultiply_rotates_estimate():
    rng = np.random.default_rng(5)
    Z = rng.standard_normal((50, 3))
    Y = rng.standard_normal((50, 2))
    keys = random_feature_keys(3, 2, seed=6)
    assert keys.secret
    _, _, diag = postmultiply_mask(Z, Y, keys.matrices["N_z"], keys.matrices["N_y"])
    assert diag.identity_error < 1e-8
    assert np.linalg.norm(diag.masked_estimate - diag.unmasked_estimate) > 1e-3


def test_ridge_outsourcing_roundtrip_and_transcript():
    rng = np.random.default_rng(7)
    Z = rng.standard_normal((40, 4))
    y = rng.standard_normal(40)
    lam = 0.5
    A = Z.T @ Z + lam * np.eye(4)
    b = Z.T @ y
    tr = ProtocolTranscript("ridge")
    beta = ridge_outsource(A, b, lam, random_ridge_keys(4, seed=8), transcript=tr)
    np.testing.assert_allclose(beta, np.linalg.solve(A, b), atol=1e-9)
    assert [e.label for e in tr] == ["MAN", "M(b+Ar)", "beta_masked"]
    # the server never sees the unmasked system
    assert not any(np.allclose(e.values, A) for e in tr if e.values.shape == A.shape)


def test_masking_key_kind_checked():
    with pytest.raises(ValueError):
        MaskingKey("bogus")
    assert math.isfinite(MaskingKey("pre_record").max_cond)
