import math

import numpy as np
import pytest

from nfa_vit import autograd as ag
from nfa_vit.autograd.gradcheck import check_inputs
from nfa_vit.autograd.io import decode_tensor, encode_tensor
from nfa_vit.errors import ConfigError, DimensionError, ParameterError, ShapeError, TensorFileError


def test_add_broadcast_gradient_sums_out_leading_axis():
    with ag.Tape() as tape:
        a = tape.leaf(np.ones((2, 3)))
        b = tape.leaf(np.ones(3))
        loss = ag.sum_all(ag.add(a, b))
    grads = ag.backward(tape, loss)
    np.testing.assert_array_equal(grads[a.node_id], np.ones((2, 3)))
    np.testing.assert_array_equal(grads[b.node_id], np.full(3, 2.0))


def test_operations_outside_a_tape_are_not_tracked():
    out = ag.matmul(ag.Tensor(np.ones((2, 3))), ag.Tensor(np.ones((3, 4))))
    assert out.node_id is None
    assert out.shape == (2, 4)
    assert out.data.dtype == np.float32


def test_matmul_rejects_misaligned_shapes():
    with pytest.raises(DimensionError):
        ag.matmul(ag.Tensor(np.ones((2, 3))), ag.Tensor(np.ones((4, 2))))


def test_backward_needs_scalar_loss():
    with ag.Tape() as tape:
        x = tape.leaf(np.ones((2, 2)))
        y = ag.scale(x, 2.0)
    with pytest.raises(ShapeError):
        ag.backward(tape, y)


def test_softmax_masked_entries_and_empty_rows_are_zero():
    x = ag.Tensor(np.array([[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]]))
    mask = np.array([[0.0, -np.inf, 0.0], [-np.inf, -np.inf, -np.inf]])
    y = ag.softmax_lastdim(x, mask).data
    assert y[0, 1] == 0.0
    assert y[0].sum() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_array_equal(y[1], np.zeros(3))


def test_softmax_rejects_non_binary_additive_mask():
    with pytest.raises(ParameterError):
        ag.softmax_lastdim(ag.Tensor(np.ones((1, 2))), np.array([[0.0, -1.0]]))


def test_parameter_gradients_accumulate_when_requested():
    param = ag.Parameter("w", ag.Tensor(np.array([1.0, 2.0])))
    for _ in range(2):
        with ag.Tape() as tape:
            loss = ag.sum_all(ag.mul(ag.track(param), ag.Tensor(np.array([3.0, 4.0]))))
        ag.backward(tape, loss, accumulate=True)
    np.testing.assert_allclose(param.grad, [6.0, 8.0])


def test_unreached_watched_parameter_gets_zero_gradient():
    used = ag.Parameter("used", ag.Tensor(np.ones(2)))
    unused = ag.Parameter("unused", ag.Tensor(np.ones(2)))
    unused.grad = np.full(2, 5.0, dtype=np.float32)
    with ag.Tape() as tape:
        ag.track(unused)
        loss = ag.sum_all(ag.track(used))
    ag.backward(tape, loss)
    np.testing.assert_array_equal(unused.grad, np.zeros(2))


@pytest.mark.parametrize("name, fn, shapes", [
    ("gelu", lambda a: ag.gelu(a), [(2, 5)]),
    ("layer_norm", lambda a, g, b: ag.layer_norm(a, g, b), [(3, 4), (4,), (4,)]),
    ("softmax", lambda a: ag.softmax_lastdim(a), [(2, 4)]),
    ("bilinear", lambda a: ag.bilinear_upsample(a, 2), [(1, 2, 3)]),
    ("im2col", lambda a: ag.im2col(a, 3), [(2, 3, 3)]),
])
def test_backward_rules_match_finite_differences(name, fn, shapes, rng):
    inputs = [rng.standard_normal(s) for s in shapes]
    weights = np.random.default_rng(1).standard_normal(fn(*(ag.Tensor(a) for a in inputs)).shape)

    def weighted_sum(*tensors):
        return ag.sum_all(ag.mul(fn(*tensors), ag.Tensor(weights)))

    result = check_inputs(weighted_sum, inputs, name=name, step=1e-2)
    assert result.passed, result.failures[:3]


def test_gelu_is_monotone_above_its_minimum():
    x = np.linspace(-0.7, 4.0, 200)
    y = ag.gelu(ag.Tensor(x)).data
    assert np.all(np.diff(y) >= 0)


def test_bce_with_logits_matches_closed_form():
    logits = np.array([[-2.0, 0.0, 3.0]])
    targets = np.array([[0.0, 1.0, 1.0]])
    want = np.mean(np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits))))
    assert ag.bce_with_logits(ag.Tensor(logits), targets).item() == pytest.approx(want, rel=1e-6)


def test_bilinear_upsample_preserves_constants():
    out = ag.bilinear_upsample(ag.Tensor(np.full((1, 3, 3), 0.25)), 4).data
    assert out.shape == (1, 12, 12)
    np.testing.assert_allclose(out, 0.25, atol=1e-7)


def test_adam_first_step_moves_by_learning_rate():
    param = ag.Parameter("p", ag.Tensor(np.array([1.0, -2.0])))
    state = ag.AdamState(lr_base=0.1)
    ag.adam_step([param], [np.array([0.5, -0.1], dtype=np.float32)], state, 0.1)
    np.testing.assert_allclose(param.value.data, [0.9, -1.9], atol=1e-5)
    assert state.step == 1


def test_adam_weight_decay_is_decoupled():
    param = ag.Parameter("p", ag.Tensor(np.array([2.0])))
    state = ag.AdamState(lr_base=0.1, weight_decay=0.5)
    ag.adam_step([param], [np.zeros(1, dtype=np.float32)], state, 0.1)
    np.testing.assert_allclose(param.value.data, [2.0 * (1 - 0.1 * 0.5)], rtol=1e-6)


def test_adam_rejects_gradient_of_wrong_shape():
    param = ag.Parameter("p", ag.Tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        ag.adam_step([param], [np.zeros(2, dtype=np.float32)], ag.AdamState(lr_base=0.1), 0.1)


def test_lr_schedule_warmup_then_cosine():
    total, warmup = 100, 5
    assert ag.lr_schedule(0, total, warmup, 1.0) == 0.0
    assert ag.lr_schedule(warmup, total, warmup, 1.0) == pytest.approx(1.0)
    mid = warmup + (total - warmup) // 2
    progress = (mid - warmup) / (total - warmup)
    assert ag.lr_schedule(mid, total, warmup, 1.0) == pytest.approx(0.5 * (1 + math.cos(math.pi * progress)))
    assert ag.lr_schedule(total, total, warmup, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_lr_schedule_rejects_warmup_covering_the_run():
    with pytest.raises(ConfigError):
        ag.lr_schedule(0, 10, 10, 1.0)
    assert ag.warmup_steps_for(1, 0.5) == 0


@pytest.mark.parametrize("shape", [(), (3,), (2, 3, 4)])
def test_tensor_file_roundtrip(tmp_path, rng, shape):
    array = rng.standard_normal(shape).astype(np.float32)
    path = str(tmp_path / "t.nfat")
    ag.write_tensor(path, array)
    back = ag.read_tensor(path)
    assert back.shape == shape
    np.testing.assert_array_equal(back, array)


def test_tensor_file_layout_is_little_endian():
    blob = encode_tensor(np.array([[1.0, 2.0]], dtype=np.float32))
    assert blob[:4] == b"NFAT"
    assert blob[4] == 2
    assert blob[5:13] == bytes([1, 0, 0, 0, 2, 0, 0, 0])
    assert len(blob) == 13 + 8


def test_truncated_tensor_file_is_rejected():
    blob = encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(TensorFileError):
        decode_tensor(blob[:-1])
    with pytest.raises(TensorFileError):
        decode_tensor(b"XXXX" + blob[4:])
