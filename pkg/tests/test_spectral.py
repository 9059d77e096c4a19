import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqalign.spectral import (
    FrequencyGradientRegularizer,
    RadialFilter,
    SpectralStack,
    TokenDCT,
    apply_fgr,
    dct2,
    dct_tokens,
    idct2,
    idct_tokens,
    modulate_spectrum,
    radial_distance,
    radial_grid,
)
from freqalign.validation import DomainError

from conftest import dct2_direct, dct_direct, idct2_direct, idct_direct

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def matrices(max_rows=64, max_cols=8):
    return st.tuples(st.integers(1, max_rows), st.integers(1, max_cols)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite)
    )


# --- dct_tokens / idct_tokens ---------------------------------------------------


def test_constant_sequence_has_only_dc(rng):
    c = rng.standard_normal(5)
    coeffs = dct_tokens(np.tile(c, (12, 1))).coeffs
    np.testing.assert_allclose(coeffs[0], math.sqrt(12) * c, atol=1e-12)
    np.testing.assert_allclose(coeffs[1:], 0.0, atol=1e-12)


def test_single_token_is_identity(rng):
    E = rng.standard_normal((1, 7))
    np.testing.assert_array_equal(dct_tokens(E).coeffs, E)


def test_tokens_match_direct_summation(rng):
    E = rng.standard_normal((8, 3))
    np.testing.assert_allclose(dct_tokens(E).coeffs, dct_direct(E), atol=1e-12)


def test_energy_is_row_norm(rng):
    stack = dct_tokens(rng.standard_normal((9, 4)))
    np.testing.assert_allclose(stack.energy, np.sqrt(np.sum(stack.coeffs**2, axis=1)), rtol=1e-14)


def test_inverse_examples(rng):
    E = rng.standard_normal((16, 4))
    assert np.abs(idct_tokens(dct_tokens(E)) - E).max() < 1e-10

    c = rng.standard_normal(3)
    coeffs = np.zeros((6, 3))
    coeffs[0] = math.sqrt(6) * c
    np.testing.assert_allclose(idct_tokens(SpectralStack.from_coeffs(coeffs)), np.tile(c, (6, 1)), atol=1e-12)

    E8 = rng.standard_normal((8, 3))
    np.testing.assert_allclose(idct_direct(dct_direct(E8)), E8, atol=1e-12)
    np.testing.assert_allclose(idct_tokens(SpectralStack.from_coeffs(dct_direct(E8))), E8, atol=1e-12)


def test_non_finite_rejected():
    with pytest.raises(DomainError):
        dct_tokens(np.array([[1.0, np.nan]]))
    with pytest.raises(DomainError):
        dct2(np.array([[np.inf]]))


@given(matrices())
def test_token_round_trip_and_parseval(E):
    stack = dct_tokens(E)
    scale = max(1.0, np.abs(E).max())
    assert np.abs(idct_tokens(stack) - E).max() < 1e-10 * scale
    assert abs(np.linalg.norm(stack.coeffs) - np.linalg.norm(E)) < 1e-10 * scale * math.sqrt(E.size)


@given(matrices(), arrays(np.float64, 8, elements=finite))
def test_dc_row_and_shift_invariance(E, shift):
    P, d = E.shape
    F = dct_tokens(E).coeffs
    np.testing.assert_allclose(F[0], math.sqrt(P) * E.mean(axis=0), atol=1e-12 * max(1.0, np.abs(E).max()) * math.sqrt(P))
    G = dct_tokens(E + shift[:d]).coeffs
    np.testing.assert_allclose(G[1:], F[1:], atol=1e-9)


# --- dct2 / idct2 ----------------------------------------------------------------


def test_constant_plane_has_single_coefficient():
    out = dct2(np.full((4, 6), 0.3))
    expected = np.zeros((4, 6))
    expected[0, 0] = math.sqrt(24) * 0.3
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_one_by_one_plane_is_identity():
    assert dct2(np.array([[2.5]]))[0, 0] == pytest.approx(2.5, abs=1e-15)


def test_plane_matches_direct_summation(rng):
    X = rng.standard_normal((4, 4))
    np.testing.assert_allclose(dct2(X), dct2_direct(X), atol=1e-12)
    Y = rng.standard_normal((3, 5))
    np.testing.assert_allclose(dct2(Y), dct2_direct(Y), atol=1e-12)
    np.testing.assert_allclose(idct2(dct2_direct(Y)), Y, atol=1e-12)


@given(st.tuples(st.integers(1, 32), st.integers(1, 32)).flatmap(lambda s: arrays(np.float64, s, elements=finite)))
def test_plane_round_trip_and_parseval(X):
    scale = max(1.0, np.abs(X).max())
    C = dct2(X)
    assert np.abs(idct2(C) - X).max() < 1e-10 * scale
    assert abs(np.linalg.norm(C) - np.linalg.norm(X)) < 1e-10 * scale * math.sqrt(X.size)


def test_batched_planes_transform_independently(rng):
    X = rng.standard_normal((2, 3, 5, 6))
    C = dct2(X)
    for b in range(2):
        for c in range(3):
            np.testing.assert_allclose(C[b, c], dct2(X[b, c]), atol=1e-14)


# --- radial_distance -------------------------------------------------------------


@pytest.mark.parametrize("H,W", [(1, 1), (7, 3), (32, 32)])
def test_dc_distance_is_zero(H, W):
    assert radial_distance(0, 0, H, W) == 0.0


def test_distance_examples():
    assert radial_distance(3, 4, 6, 8) == 0.5
    # the (H, W) "corner" is outside the plane; check the formula itself via the grid extension
    assert math.hypot(6, 8) / math.hypot(6, 8) == 1.0
    assert radial_grid(6, 8)[3, 4] == 0.5


def test_distance_out_of_range_rejected():
    with pytest.raises(DomainError):
        radial_distance(6, 0, 6, 8)


# --- filters ---------------------------------------------------------------------


def test_polynomial_p0_is_identity(rng):
    G = rng.standard_normal((2, 3, 8, 8))
    np.testing.assert_allclose(apply_fgr(G, RadialFilter("polynomial", p=0.0)), G, atol=1e-10)


def test_dc_only_gradient_unchanged():
    G = idct2(np.pad(np.array([[1.7]]), ((0, 7), (0, 7))))[None, None]
    np.testing.assert_allclose(apply_fgr(G, RadialFilter("polynomial", p=1.5)), G, atol=1e-10)


def test_polynomial_matches_mask_oracle(rng):
    G = rng.standard_normal((1, 1, 8, 8))
    mask = np.array([[(1 - math.hypot(u, v) / math.hypot(8, 8)) ** 1.5 for v in range(8)] for u in range(8)])
    expected = idct2_direct(dct2_direct(G[0, 0]) * mask)
    np.testing.assert_allclose(apply_fgr(G, RadialFilter("polynomial", p=1.5))[0, 0], expected, atol=1e-10)


def test_identity_filter_is_a_copy(rng):
    G = rng.standard_normal((1, 2, 4, 4))
    out = apply_fgr(G, RadialFilter("identity"))
    np.testing.assert_array_equal(out, G)
    assert out is not G


def _equal_radius_pairs(n):
    """Index pairs with identical u^2 + v^2 on an n x n plane (including (u,v) vs (v,u))."""
    groups = {}
    for u in range(n):
        for v in range(n):
            groups.setdefault(u * u + v * v, []).append((u, v))
    return [(g[i], g[j]) for g in groups.values() for i in range(len(g)) for j in range(i + 1, len(g))]


@pytest.mark.parametrize("kind", ["polynomial", "reciprocal", "sigmoid"])
def test_equal_radius_ratio_preserved(kind, rng):
    filt = RadialFilter(kind)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 17))
        G = rng.standard_normal((n, n))
        Gt = modulate_spectrum(G, filt)
        for a, b in _equal_radius_pairs(n):
            ratio = G[a] / G[b]
            worst = max(worst, abs(Gt[a] / Gt[b] - ratio) / abs(ratio))
    assert worst < 1e-12


def test_band_clip_distorts_direction():
    # a single dominant low-band coefficient gets clipped by band-clip but only rescaled by the smooth filter
    C = np.full((8, 8), 0.01)
    C[0, 1] = 5.0
    C[1, 2] = -0.5
    G = idct2(C)[None, None]
    smooth = apply_fgr(G, RadialFilter("polynomial")).ravel()
    clipped = apply_fgr(G, RadialFilter("band-clip")).ravel()
    cos = smooth @ clipped / (np.linalg.norm(smooth) * np.linalg.norm(clipped))
    assert cos < 1.0 - 1e-3


@pytest.mark.parametrize(
    "filt",
    [RadialFilter("polynomial", p=0.5), RadialFilter("polynomial", p=3.0), RadialFilter("reciprocal"), RadialFilter("sigmoid")],
)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_smooth_factors_non_increasing(filt, d1, d2):
    lo, hi = sorted((d1, d2))
    assert filt.factor(hi) <= filt.factor(lo)


def test_top_k_keeps_ceil_fraction_per_band(rng):
    filt = RadialFilter("top-k-sparse", top_k=(50.0, 30.0, 10.0))
    C = rng.standard_normal((8, 8))
    out = modulate_spectrum(C, filt)
    d = radial_grid(8, 8)
    bands = np.where(d < 1 / 3, 0, np.where(d < 2 / 3, 1, 2))
    for b, pct in enumerate((50.0, 30.0, 10.0)):
        members = bands == b
        kept = np.count_nonzero(out[members])
        assert kept == math.ceil(pct / 100 * members.sum())
        # kept coefficients are the largest in magnitude and unchanged
        thresh = np.sort(np.abs(C[members]))[::-1][kept - 1]
        assert np.all(np.abs(out[members][out[members] != 0]) >= thresh)
        np.testing.assert_array_equal(out[members][out[members] != 0], C[members][out[members] != 0])


def test_top_k_ties_prefer_lower_raster_index():
    C = np.ones((4, 4))
    out = modulate_spectrum(C, RadialFilter("top-k-sparse", top_k=(50.0, 50.0, 50.0)))
    d = radial_grid(4, 4)
    low = [(u, v) for u in range(4) for v in range(4) if d[u, v] < 1 / 3]
    keep = math.ceil(0.5 * len(low))
    assert [out[i] for i in low] == [1.0] * keep + [0.0] * (len(low) - keep)


def test_band_clip_bounds(rng):
    C = rng.standard_normal((16, 16)) * 3
    out = modulate_spectrum(C, RadialFilter("band-clip"))
    d = radial_grid(16, 16)
    bands = np.where(d < 1 / 3, 0, np.where(d < 2 / 3, 1, 2))
    for b, g in enumerate((1.5, 1.0, 0.5)):
        vals = C[bands == b]
        lo, hi = vals.mean() - g * vals.std(), vals.mean() + g * vals.std()
        assert out[bands == b].min() >= lo - 1e-12 and out[bands == b].max() <= hi + 1e-12


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="lowpass"), dict(kind="polynomial", p=-1.0), dict(kind="band-clip", tau_low=0.7, tau_high=0.5), dict(kind="top-k-sparse", top_k=(120, 1, 1))],
)
def test_invalid_filters_rejected(kwargs):
    with pytest.raises(DomainError):
        RadialFilter(**kwargs)


def test_apply_fgr_requires_4d():
    with pytest.raises(DomainError):
        apply_fgr(np.zeros((8, 8)), RadialFilter())


# --- estimators ------------------------------------------------------------------


def test_token_dct_estimator(rng):
    E = rng.standard_normal((10, 3))
    est = TokenDCT().fit(E)
    assert est.n_tokens_ == 10
    np.testing.assert_allclose(est.inverse_transform(est.transform(E)), E, atol=1e-12)


def test_fgr_estimator_params_round_trip(rng):
    est = FrequencyGradientRegularizer(kind="sigmoid", beta=2.0)
    assert est.get_params()["beta"] == 2.0
    clone = FrequencyGradientRegularizer(**est.get_params())
    G = rng.standard_normal((1, 3, 8, 8))
    np.testing.assert_array_equal(est.fit().transform(G), clone.fit_transform(G))
    np.testing.assert_allclose(est.transform(G), apply_fgr(G, RadialFilter("sigmoid", beta=2.0)))
