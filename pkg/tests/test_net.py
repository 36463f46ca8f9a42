"""Classifier network: init, forward math, gradients, checkpoint format."""

from __future__ import annotations

import numpy as np
import pytest

from lidarseg import NUM_CLASSES
from lidarseg.net import (
    ArchConfig,
    ClassifierParams,
    ParamsChecksumError,
    ParamsFormatError,
    ParamsVersionError,
    backward_batch,
    forward,
    forward_batch,
    init,
    load,
    preprocess,
    save,
)

TINY = ArchConfig(input_channels=2, input_size=8, pool=1,
                  conv_specs=((2, 3, 2), (3, 3, 2)), num_classes=3)


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def test_init_is_seed_deterministic():
    a = init(7).to_vector()
    b = init(7).to_vector()
    c = init(8).to_vector()
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_init_respects_uniform_bounds():
    p = init(0)
    channels = p.arch.input_channels
    for (filters, kernel, _), w, b in zip(p.arch.conv_specs, p.conv_w, p.conv_b):
        limit = np.sqrt(6.0 / ((channels + filters) * kernel * kernel))
        assert np.abs(w).max() < limit
        assert np.all(b == 0.0)
        channels = filters
    fc_limit = np.sqrt(6.0 / (channels + p.arch.num_classes))
    assert np.abs(p.fc_w).max() < fc_limit
    assert np.all(p.fc_b == 0.0)


def test_vector_roundtrip():
    p = init(3, TINY)
    vec = p.to_vector()
    q = ClassifierParams.from_vector(TINY, vec)
    assert q.to_vector().tobytes() == vec.tobytes()
    with pytest.raises(ValueError):
        ClassifierParams.from_vector(TINY, vec[:-1])


def test_arch_validation():
    with pytest.raises(ValueError):
        # the first conv shrinks a 4-wide input below the second kernel
        ArchConfig(input_size=4, conv_specs=((8, 3, 2), (16, 3, 2))).validate()
    with pytest.raises(ValueError):
        ArchConfig(num_classes=1).validate()


# --------------------------------------------------------------------------
# forward math
# --------------------------------------------------------------------------

def test_zero_params_give_uniform_probabilities():
    p = init(0)
    p = ClassifierParams.from_vector(p.arch, np.zeros(p.to_vector().size))
    channels = np.random.default_rng(0).integers(0, 256, (3, 256, 256),
                                                 dtype=np.uint8)
    probs = forward(p, channels)
    np.testing.assert_allclose(probs, np.full(NUM_CLASSES, 1.0 / NUM_CLASSES),
                               atol=1e-15)


def test_bias_only_logits_hit_known_softmax():
    p = init(0)
    vec = np.zeros(p.to_vector().size)
    p = ClassifierParams.from_vector(p.arch, vec)
    p.fc_b[0] = 1.0  # logits (1, 0, 0, 0, 0, 0, 0)
    probs = forward(p, np.zeros((3, 256, 256), dtype=np.uint8))
    want = np.e / (np.e + 6.0)
    assert probs[0] == pytest.approx(want, abs=1e-12)
    np.testing.assert_allclose(probs[1:], (1.0 - want) / 6.0, atol=1e-12)


def test_probabilities_are_normalized():
    p = init(5, TINY)
    x = np.random.default_rng(1).normal(size=(4, 2, 8, 8))
    probs = forward_batch(p, x)
    assert probs.shape == (4, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs > 0)


def test_softmax_shift_invariance_no_overflow():
    p = init(2, TINY)
    p.fc_b[:] = [1000.0, 1000.0, 999.0]
    x = np.zeros((1, 2, 8, 8))
    probs = forward_batch(p, x)
    assert np.isfinite(probs).all()
    assert probs[0, 0] == pytest.approx(probs[0, 1])


def test_batch_forward_matches_single():
    p = init(9, TINY)
    x = np.random.default_rng(2).normal(size=(5, 2, 8, 8))
    batch = forward_batch(p, x)
    for i in range(5):
        single = forward_batch(p, x[i:i + 1])
        np.testing.assert_allclose(batch[i], single[0], atol=1e-14)


def test_preprocess_pools_and_scales():
    channels = np.zeros((3, 256, 256), dtype=np.uint8)
    channels[0, :4, :4] = 255       # one full pooling block
    channels[1, 4:8, 0:4] = 51      # a block at pooled cell (1, 0)
    channels[2, 8, 8] = 255         # lone splat inside block (2, 2)
    x = preprocess(channels)
    assert x.shape == (3, 64, 64)
    # block mean times pool^2: a filled block keeps its byte value / 255
    # scaled by 16, a lone pixel keeps v / 255 undiluted.
    assert x[0, 0, 0] == pytest.approx(16.0)
    assert x[1, 1, 0] == pytest.approx(51 / 255 * 16)
    assert x[2, 2, 2] == pytest.approx(1.0)
    assert x[2].sum() == pytest.approx(1.0)
    assert x.dtype == np.float64


def test_preprocess_rejects_wrong_shape():
    with pytest.raises(ValueError):
        preprocess(np.zeros((3, 128, 256), dtype=np.uint8))


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------

def _loss_and_grad(params, x, target):
    probs, cache = forward_batch(params, x, want_cache=True)
    eps = 1e-12
    loss = -np.log(max(probs[0, target], eps))
    dprobs = np.zeros_like(probs)
    dprobs[0, target] = -1.0 / max(probs[0, target], eps)
    return loss, backward_batch(params, cache, dprobs)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(21)
    for draw in range(3):
        params = init(100 + draw, TINY)
        x = rng.normal(size=(1, 2, 8, 8))
        target = int(rng.integers(0, 3))
        _, grad = _loss_and_grad(params, x, target)
        vec = params.to_vector()
        assert grad.shape == vec.shape

        eps = 1e-6
        idx = rng.choice(vec.size, size=25, replace=False)
        for k in idx:
            bumped = vec.copy()
            bumped[k] += eps
            lp, _ = _loss_and_grad(ClassifierParams.from_vector(TINY, bumped),
                                   x, target)
            bumped[k] -= 2 * eps
            lm, _ = _loss_and_grad(ClassifierParams.from_vector(TINY, bumped),
                                   x, target)
            fd = (lp - lm) / (2 * eps)
            assert grad[k] == pytest.approx(fd, abs=1e-6, rel=1e-5)


def test_gradient_of_constant_loss_is_zero():
    params = init(42, TINY)
    x = np.random.default_rng(3).normal(size=(2, 2, 8, 8))
    probs, cache = forward_batch(params, x, want_cache=True)
    grad = backward_batch(params, cache, np.zeros_like(probs))
    assert np.all(grad == 0.0)


def test_relu_blocks_gradient_for_dead_units():
    params = init(1, TINY)
    for w in params.conv_w:
        w[:] = 0.0
    params.conv_b[0][:] = -1.0  # first conv output always negative
    x = np.abs(np.random.default_rng(4).normal(size=(1, 2, 8, 8)))
    probs, cache = forward_batch(params, x, want_cache=True)
    dprobs = np.ones_like(probs)
    grad = backward_batch(params, cache, dprobs)
    p = ClassifierParams.from_vector(TINY, grad)
    assert np.all(p.conv_w[0] == 0.0)  # nothing flows past the dead ReLU
    assert np.all(p.conv_b[0] == 0.0)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    p = init(77)
    path = str(tmp_path / "model.ckpt")
    save(path, p)
    q = load(path)
    assert q.to_vector().tobytes() == p.to_vector().tobytes()
    assert q.arch == p.arch


def test_checkpoint_detects_corruption(tmp_path):
    p = init(1, TINY)
    path = tmp_path / "model.ckpt"
    save(str(path), p)
    blob = bytearray(path.read_bytes())
    blob[-20] ^= 0xFF  # flip a payload byte, checksum goes stale
    path.write_bytes(bytes(blob))
    with pytest.raises(ParamsChecksumError):
        load(str(path))


def test_checkpoint_rejects_bad_magic(tmp_path):
    p = init(1, TINY)
    path = tmp_path / "model.ckpt"
    save(str(path), p)
    blob = bytearray(path.read_bytes())
    blob[0] = ord("X")
    path.write_bytes(bytes(blob))
    with pytest.raises(ParamsFormatError):
        load(str(path))


def test_checkpoint_rejects_future_version(tmp_path):
    import struct
    import zlib

    p = init(1, TINY)
    path = tmp_path / "model.ckpt"
    save(str(path), p)
    body = bytearray(path.read_bytes()[:-4])
    body[8:12] = (99).to_bytes(4, "little")  # keep the checksum honest
    path.write_bytes(bytes(body) + struct.pack("<I", zlib.crc32(bytes(body))))
    with pytest.raises(ParamsVersionError):
        load(str(path))


def test_checkpoint_rejects_truncation(tmp_path):
    p = init(1, TINY)
    path = tmp_path / "model.ckpt"
    save(str(path), p)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(ParamsChecksumError):
        load(str(path))
    path.write_bytes(blob[:10])  # below even the fixed header
    with pytest.raises(ParamsFormatError):
        load(str(path))
