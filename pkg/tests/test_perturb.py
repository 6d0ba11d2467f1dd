import numpy as np
import pytest

from nfa_vit.errors import ConfigError, DimensionError
from nfa_vit.perturb import (
    LUMA_TABLE, blur_radius, column_name, gauss_blur, gauss_noise, jpeg_luma, perturb, protocol_columns,
    quant_table,
)
from nfa_vit.synth import gen_base_image


def test_protocol_columns_order():
    names = [column_name(k, s) for k, s in protocol_columns()]
    assert names == ["gauss_noise_1", "gauss_noise_3", "gauss_blur_1", "gauss_blur_3", "jpeg_95", "jpeg_75"]


def test_quant_table_scaling():
    np.testing.assert_array_equal(quant_table(50), LUMA_TABLE)
    np.testing.assert_array_equal(quant_table(100), np.ones((8, 8)))
    assert np.all(quant_table(75) <= quant_table(50))
    with pytest.raises(ConfigError):
        quant_table(0)


@pytest.mark.parametrize("kind, severity", [("gauss_noise", 2), ("jpeg", 50), ("median", 3)])
def test_unsupported_perturbations(kind, severity):
    with pytest.raises(ConfigError):
        perturb(np.zeros((3, 8, 8)), kind, severity)


def test_perturb_needs_rgb_image():
    with pytest.raises(DimensionError):
        perturb(np.zeros((8, 8)), "gauss_blur", 1)


def test_noise_is_seeded_and_scaled():
    image = np.full((3, 64, 64), 0.5, dtype=np.float32)
    a = gauss_noise(image, 3, seed=4)
    np.testing.assert_array_equal(a, gauss_noise(image, 3, seed=4))
    assert not np.array_equal(a, gauss_noise(image, 3, seed=5))
    assert float((a - image).std()) == pytest.approx(3 / 255, rel=0.1)


def test_blur_keeps_constants():
    flat = np.full((3, 16, 16), 0.3, dtype=np.float32)
    np.testing.assert_allclose(gauss_blur(flat, 3), flat, atol=1e-6)


@pytest.mark.parametrize("sigma, radius", [(1, 3), (3, 9)])
def test_blur_support_matches_radius(sigma, radius):
    impulse = np.zeros((3, 32, 32), dtype=np.float32)
    impulse[:, 16, 16] = 1.0
    out = gauss_blur(impulse, sigma)
    r = blur_radius(sigma)
    assert r == radius
    support = np.argwhere(out[0] > 0)
    assert np.abs(support - 16).max() == r
    assert out[0].sum() == pytest.approx(1.0, abs=1e-5)


def test_jpeg_leaves_mid_gray_unchanged():
    gray = np.full((3, 16, 16), 128 / 255, dtype=np.float32)
    np.testing.assert_allclose(jpeg_luma(gray, 75), gray, atol=1e-6)


def test_jpeg_quality_controls_distortion():
    image = gen_base_image(2, 64)
    mild = np.abs(perturb(image, "jpeg", 95) - image).mean()
    harsh = np.abs(perturb(image, "jpeg", 75) - image).mean()
    assert 0 < mild < harsh


def test_jpeg_handles_sizes_off_the_block_grid(rng):
    image = rng.random((3, 20, 13)).astype(np.float32)
    out = jpeg_luma(image, 75)
    assert out.shape == image.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("kind, severity", protocol_columns())
def test_every_protocol_cell_is_deterministic(kind, severity):
    image = gen_base_image(1, 32)
    np.testing.assert_array_equal(perturb(image, kind, severity, seed=3), perturb(image, kind, severity, seed=3))
