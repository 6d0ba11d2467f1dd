import numpy as np
import pytest

from nfa_vit.autograd import Tensor
from nfa_vit.errors import DimensionError, ParameterError
from nfa_vit.noise import LaplacianResidual, extract_noise, get_extractor, mean_abs_trace, noise_statistics
from nfa_vit.synth import CorpusSpec, forge_region, gen_base_image, gen_region_mask, plan_corpus, render_sample


def test_trace_shape_and_extractor_id(rng):
    trace = extract_noise(Tensor(rng.random((3, 16, 24))))
    assert trace.map.shape == (1, 16, 24)
    assert trace.extractor_id == "laplacian3x3"
    assert trace.array.shape == (16, 24)


def test_constant_image_has_zero_trace():
    trace = extract_noise(np.full((3, 8, 8), 0.4, dtype=np.float32))
    np.testing.assert_allclose(trace.array, 0.0, atol=1e-7)


def test_trace_is_zero_mean(rng):
    trace = extract_noise(rng.random((3, 20, 20)))
    assert abs(float(trace.array.mean())) < 1e-6


def test_trace_is_deterministic(rng):
    image = rng.random((3, 12, 12)).astype(np.float32)
    np.testing.assert_array_equal(extract_noise(image).array, extract_noise(image.copy()).array)


@pytest.mark.parametrize("shape", [(3, 2, 2), (1, 8, 8), (8, 8)])
def test_bad_image_shapes_are_rejected(shape):
    with pytest.raises(DimensionError):
        extract_noise(np.zeros(shape, dtype=np.float32))


def test_unknown_extractor():
    with pytest.raises(ParameterError):
        get_extractor("srm-learned")


def test_smoothed_forgery_carries_less_residual_energy():
    base = gen_base_image(5, 64)
    mask = gen_region_mask("object", 0.2, 11, 64)
    forged = forge_region(base, mask, 11, "diffusion", texture_seed=5)
    inside, outside = noise_statistics(extract_noise(forged), mask)
    assert inside < outside


def test_noise_statistics_needs_both_regions(rng):
    trace = extract_noise(rng.random((3, 8, 8)))
    with pytest.raises(ParameterError):
        noise_statistics(trace, np.zeros((8, 8)))
    with pytest.raises(DimensionError):
        noise_statistics(trace, np.ones((4, 4)))


def test_mean_abs_trace_grows_with_noise(rng):
    base = np.full((3, 16, 16), 0.5)
    quiet = mean_abs_trace(extract_noise(base + 0.001 * rng.standard_normal(base.shape)))
    loud = mean_abs_trace(extract_noise(base + 0.05 * rng.standard_normal(base.shape)))
    assert loud > quiet


def test_single_white_pixel_stamps_the_kernel():
    image = np.zeros((3, 9, 9))
    image[:, 4, 4] = 1.0
    trace = extract_noise(image).array
    np.testing.assert_allclose(trace[3:6, 3:6], LaplacianResidual.KERNEL, atol=1e-7)
    assert trace[4, 4] == 1.0
    outside = np.ones((9, 9), dtype=bool)
    outside[3:6, 3:6] = False
    assert np.all(trace[outside] == 0.0)


def test_trace_is_linear(rng):
    a, b = 0.5 * rng.random((3, 16, 16)), 0.5 * rng.random((3, 16, 16))
    np.testing.assert_allclose(extract_noise(a).array + extract_noise(b).array, extract_noise(a + b).array,
                               atol=1e-5)


def test_translation_moves_the_trace_on_interiors(rng):
    scene = rng.random((3, 40, 40))
    first = extract_noise(scene[:, 0:32, 0:32]).array
    shifted = extract_noise(scene[:, 2:34, 3:35]).array
    # scene rows 3..30 and columns 4..30 are interior in both crops
    np.testing.assert_array_equal(first[3:31, 4:31], shifted[1:29, 1:28])


def test_zero_mean_without_centering(rng):
    for shape in ((3, 5, 7), (3, 32, 32), (3, 17, 40)):
        assert abs(float(extract_noise(rng.random(shape)).array.astype(np.float64).mean())) < 1e-6


def test_forged_regions_carry_less_residual_across_the_corpus():
    spec = CorpusSpec(counts=(200, 2, 2), image_size=64, master_seed=4)
    forged = [p for p in plan_corpus(spec) if p.label][:100]
    assert len(forged) == 100
    lower = 0
    for plan in forged:
        sample = render_sample(plan, spec.image_size, spec.fingerprint_amplitude)
        inside, outside = noise_statistics(extract_noise(sample.image), sample.mask)
        lower += inside < outside
    assert lower >= 90
