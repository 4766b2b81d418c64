import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from filterfool.filters import (
    FilterKind,
    FilterSpec,
    apply_filter,
    enhance_lightness,
    filter_residual,
    gamma_correct,
    l0_smooth,
    linear_detail_enhance,
    log_transform,
    nonlinear_detail_enhance,
)

images = arrays(np.float64, (6, 6, 3), elements=st.floats(0.0, 1.0))


def test_filter_spec_aliases_and_validation():
    assert FilterSpec("LT").kind is FilterKind.LOG
    assert FilterSpec("nd").kind is FilterKind.NONLINEAR_DETAIL
    with pytest.raises(ValueError):
        FilterSpec("blur")
    with pytest.raises(ValueError):
        FilterSpec("gamma", gamma=0.05)
    with pytest.raises(ValueError):
        FilterSpec("ld", kappa=1.0)
    spec = FilterSpec("nd", sigmoid_params=(40, 2, 10))
    assert FilterSpec.from_dict(spec.to_dict()) == spec


def test_gamma_properties(rng):
    img = rng.uniform(size=(5, 5, 3))
    assert np.array_equal(gamma_correct(img, 1.0), img)
    # exponent 1/gamma: gamma < 1 darkens, gamma > 1 brightens
    assert np.all(gamma_correct(img, 0.5) <= img)
    assert np.all(gamma_correct(img, 2.0) >= img)
    assert gamma_correct(np.array([0.25]), 0.5)[0] == 0.0625
    assert gamma_correct(np.array([0.25]), 2.0)[0] == 0.5
    with pytest.raises(ValueError):
        gamma_correct(img, 0.0)


def test_log_transform_fixed_points():
    out = log_transform(np.array([0.0, 1.0, 0.5]))
    assert out[0] == 0.0 and out[1] == 1.0
    assert abs(out[2] - np.log(128.5) / np.log(256)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(images)
def test_filters_stay_in_range(img):
    for kind in FilterKind:
        out = apply_filter(img, FilterSpec(kind))
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_residual_is_preclip(rng):
    img = rng.uniform(size=(8, 8, 3))
    spec = FilterSpec("ld", alpha=3.0)
    res = filter_residual(img, spec)
    assert (img + res).max() > 1.0 or (img + res).min() < 0.0
    clipped = filter_residual(img, FilterSpec("ld", alpha=3.0, clip_residual=True))
    assert np.allclose(img + clipped, apply_filter(img, spec))


def test_l0_constant_and_dense_oracle(rng):
    const = np.full((8, 8), 0.37)
    assert np.abs(l0_smooth(const) - const).max() <= 1e-12
    ch = rng.uniform(size=(8, 8))
    assert np.abs(l0_smooth(ch, lam=0.01) - oracles.l0_smooth_dense(ch, lam=0.01)).max() < 1e-9


def test_l0_removes_noise_from_flat_regions(rng):
    clean = np.kron(rng.uniform(size=(4, 4)), np.ones((8, 8)))
    noisy = clean + rng.normal(0, 0.02, clean.shape)
    out = l0_smooth(noisy, lam=0.001)
    assert np.abs(out - clean).mean() < 0.5 * np.abs(noisy - clean).mean()


def test_l0_channels_independent(rng):
    img = rng.uniform(size=(8, 8, 3))
    out = l0_smooth(img)
    for c in range(3):
        assert np.allclose(out[..., c], l0_smooth(img[..., c]))


def test_linear_detail_with_identity_smoother(rng):
    img = rng.uniform(size=(6, 6, 3))
    # an identity smoother leaves no detail to boost
    assert np.array_equal(linear_detail_enhance(img, 2.0, smooth=lambda x: x), img)


def test_enhance_lightness_midpoint():
    # flat lightness at v1 stays at v1
    L = np.full((3, 3), 56.0)
    assert np.allclose(enhance_lightness(L, L), 56.0)


def test_nonlinear_matches_pixel_oracle(rng):
    img = rng.uniform(0.1, 0.9, size=(6, 6, 3))
    ref = oracles.nonlinear_detail_px(img)
    assert np.abs(nonlinear_detail_enhance(img) - ref).max() <= 1e-8
