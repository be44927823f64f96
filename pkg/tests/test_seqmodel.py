import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitscreen import seqmodel as S
from bitscreen.bitstream import SEGMENT_LEN
from bitscreen.features import N_FEATURES

SMALL = S.ConvSpec((3, 5), 4, 8)


def with_identity_scaler(model):
    model.scaler_mean = np.zeros(N_FEATURES)
    model.scaler_std = np.ones(N_FEATURES)
    return model


def toy_data(n, seed=0):
    """Two separable classes: a bright motif in the bytes and a shifted feature block."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.integers(0, 60, (n, SEGMENT_LEN), dtype=np.uint8)
    for i in np.flatnonzero(y):
        at = rng.integers(0, SEGMENT_LEN - 16)
        x[i, at : at + 16] = rng.integers(200, 256, 16)
    fv = rng.normal(0, 1, (n, N_FEATURES)) + 1.5 * y[:, None]
    return S.SeqDataset(x, fv, y)


@pytest.fixture(scope="module")
def trained():
    data = toy_data(64)
    model, log = S.train(data, SMALL, S.TrainConfig(epochs=4, seed=3))
    return model, data


def test_zero_segment_zero_embedding():
    model = S.new_model(SMALL)
    assert not np.any(S.embed(np.zeros(SEGMENT_LEN, np.uint8), model))


def test_identity_kernel_picks_max():
    spec = S.ConvSpec((3,), 1, 1)
    model = S.new_model(spec)
    model.params["conv0_w"][:] = [[0.0, 1.0, 0.0]]
    model.params["proj_w"][:] = 1.0
    ramp = (np.arange(SEGMENT_LEN) % 201).astype(np.uint8)
    assert S.embed(ramp, model)[0] == 200 / 255


def test_embed_deterministic():
    x = np.random.default_rng(5).integers(0, 256, SEGMENT_LEN, dtype=np.uint8)
    a = S.embed(x, S.new_model(seed=9))
    b = S.embed(x, S.new_model(seed=9))
    assert a.tobytes() == b.tobytes()


@given(
    kernels=st.lists(st.sampled_from([1, 3, 5, 9]), min_size=1, max_size=3),
    channels=st.integers(1, 4),
    dim=st.integers(1, 16),
)
@settings(max_examples=15)
def test_embed_shape(kernels, channels, dim):
    model = S.new_model(S.ConvSpec(tuple(kernels), channels, dim))
    assert S.embed(np.ones(SEGMENT_LEN, np.uint8), model).shape == (dim,)


def test_embed_rejects_wrong_length():
    with pytest.raises(S.ModelError):
        S.embed(np.zeros(100, np.uint8), S.new_model(SMALL))


@pytest.mark.parametrize("shift", [1, 17, 500, -300])
def test_circular_shift_invariance(shift):
    x = np.zeros(SEGMENT_LEN, np.uint8)
    x[2000:2010] = [9, 250, 3, 77, 180, 1, 255, 40, 40, 128]
    model = S.new_model(seed=2)
    a = S.embed(x, model)
    b = S.embed(np.roll(x, shift), model)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_zero_params_half():
    model = with_identity_scaler(S.new_model(SMALL))
    for p in model.params.values():
        p[:] = 0
    x = np.random.default_rng(0).integers(0, 256, SEGMENT_LEN, dtype=np.uint8)
    assert S.predict(x, np.random.default_rng(1).normal(size=N_FEATURES), model) == 0.5


def test_missing_scaler_is_error():
    with pytest.raises(S.ModelError):
        S.predict(np.zeros(SEGMENT_LEN, np.uint8), np.zeros(N_FEATURES), S.new_model(SMALL))


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=10)
def test_probability_open_interval(seed):
    rng = np.random.default_rng(seed)
    model = with_identity_scaler(S.new_model(SMALL, seed))
    x = rng.integers(0, 256, (3, SEGMENT_LEN), dtype=np.uint8)
    p = S.predict_proba(model, x, rng.normal(0, 3, (3, N_FEATURES)))
    assert np.all((p > 0) & (p < 1))


def test_zeroed_head_loss_is_ln2():
    model = with_identity_scaler(S.new_model(SMALL))
    model.params["head_w"][:] = 0
    data = toy_data(10)
    loss, _ = S.loss_and_grads(model, S.normalize_bytes(data.x), data.fv, data.y.astype(float))
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_separable_toy_fits(trained):
    model, data = trained
    p = S.predict_proba(model, data.x, data.fv)
    assert np.mean((p >= 0.5) == data.y) == 1.0


def test_loss_decreases_first_epochs():
    data = toy_data(200, seed=1)
    _, log = S.train(data, SMALL, S.TrainConfig(epochs=20, seed=0))
    first = log.epoch_loss[:5]
    assert all(b < a for a, b in zip(first, first[1:]))


def test_single_class_is_error():
    data = toy_data(8)
    data.y[:] = 1
    with pytest.raises(S.ModelError):
        S.train(data, SMALL, S.TrainConfig(epochs=1))


def test_zero_lr_leaves_params():
    data = toy_data(16)
    start = S.new_model(SMALL, seed=4)
    model, _ = S.train(data, SMALL, S.TrainConfig(epochs=2, lr=0.0), model=start)
    for k in start.params:
        assert np.array_equal(model.params[k], start.params[k])


def test_training_deterministic_and_copy_invariant():
    data = toy_data(32)
    dup = S.SeqDataset(data.x.copy(), data.fv.copy(), data.y.copy())
    a, la = S.train(data, SMALL, S.TrainConfig(epochs=2, seed=7))
    b, lb = S.train(dup, SMALL, S.TrainConfig(epochs=2, seed=7))
    assert a.to_bytes() == b.to_bytes()
    assert la.epoch_loss == lb.epoch_loss


def test_grad_check_trained(trained):
    model, data = trained
    assert S.grad_check(model, data.x[:6], data.fv[:6], data.y[:6], n_params=100) <= 1e-4


def test_grad_check_head_only(trained):
    model, data = trained
    err = S.grad_check(model, data.x[:6], data.fv[:6], data.y[:6], n_params=100, only=("head_w", "head_b"))
    assert err <= 1e-7


def test_grad_check_step_range(trained):
    model, data = trained
    with pytest.raises(S.ModelError):
        S.grad_check(model, data.x[:2], data.fv[:2], data.y[:2], h=1e-3)


def test_zero_input_conv_grad_exact_zero():
    model = with_identity_scaler(S.new_model(SMALL, seed=1))
    x = np.zeros((4, SEGMENT_LEN))
    f = np.random.default_rng(0).normal(size=(4, N_FEATURES))
    _, g = S.loss_and_grads(model, x, f, np.array([0.0, 1.0, 0.0, 1.0]))
    for i in range(len(SMALL.kernel_sizes)):
        assert not np.any(g[f"conv{i}_w"])


def test_checkpoint_roundtrip(trained, tmp_path):
    model, data = trained
    model.save(tmp_path / "m.blnn")
    back = S.HybridModel.load(tmp_path / "m.blnn")
    assert back.to_bytes() == model.to_bytes()
    assert np.array_equal(S.predict_proba(back, data.x, data.fv), S.predict_proba(model, data.x, data.fv))


def test_checkpoint_corruption(trained):
    blob = trained[0].to_bytes()
    with pytest.raises(S.ModelError):
        S.HybridModel.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(S.ModelError):
        S.HybridModel.from_bytes(blob[:-5])
    with pytest.raises(S.ModelError):
        S.HybridModel.from_bytes(blob + b"\0")


def test_full_scale_preset():
    assert S.ConvSpec.full_scale().embedding_dim == 512
    with pytest.raises(S.ModelError):
        S.ConvSpec((4,))
