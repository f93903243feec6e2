"""Transformer denoiser: shapes, determinism, gradients, weight transfer."""

import numpy as np
import pytest

from policydiff import autodiff as ad
from policydiff.autodiff import Tensor
from policydiff.denoiser import (
    N_TOKENS,
    TOKEN_WIDTH,
    Denoiser,
    DenoiserConfig,
    _Block,
    timestep_embedding,
)
from policydiff.errors import DimensionError
from policydiff.nn import grad_check

RNG = np.random.default_rng(0)
TINY = DenoiserConfig(width=16, depth=1, heads=2, cond_len=8)


def _batch(b=3, cond_len=8):
    x = RNG.normal(size=(b, N_TOKENS, TOKEN_WIDTH))
    t = RNG.integers(1, 1001, size=b)
    cond = RNG.normal(size=(b, cond_len))
    return x, t, cond


def test_config_validates_head_divisibility():
    with pytest.raises(DimensionError):
        DenoiserConfig(width=10, heads=3)


def test_timestep_embedding_shape_and_range():
    emb = timestep_embedding(np.array([1, 500, 1000]), 16)
    assert emb.shape == (3, 16)
    assert np.all(np.abs(emb) <= 1.0)
    odd = timestep_embedding(np.array([1]), 15)
    assert odd.shape == (1, 15) and odd[0, -1] == 0.0
    # distinct timesteps embed distinctly
    assert not np.allclose(emb[0], emb[1])


def test_forward_shapes_and_vhat_range():
    net = Denoiser(TINY, seed=0)
    x, t, cond = _batch()
    eps_hat, v_hat = net.forward(x, t, cond)
    assert eps_hat.shape == (3, N_TOKENS, TOKEN_WIDTH)
    assert v_hat.shape == (3, N_TOKENS, TOKEN_WIDTH)
    assert np.all(v_hat.value > 0.0) and np.all(v_hat.value < 1.0)
    assert np.all(np.isfinite(eps_hat.value))


def test_forward_rejects_bad_shapes():
    net = Denoiser(TINY, seed=0)
    x, t, cond = _batch()
    with pytest.raises(DimensionError):
        net.forward(x[:, :, :40], t, cond)
    with pytest.raises(DimensionError):
        net.forward(x, t, cond[:, :5])


def test_forward_depends_on_inputs():
    net = Denoiser(TINY, seed=0)
    x, t, cond = _batch()
    base, _ = net.forward(x, t, cond)
    other_t, _ = net.forward(x, t + 1, cond)
    other_c, _ = net.forward(x, t, cond + 0.5)
    assert not np.allclose(base.value, other_t.value)
    assert not np.allclose(base.value, other_c.value)


def test_init_deterministic_by_seed():
    a = Denoiser(TINY, seed=3)
    b = Denoiser(TINY, seed=3)
    c = Denoiser(TINY, seed=4)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.value, pb.value)
    assert any(
        not np.array_equal(pa.value, pc.value)
        for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_weight_arrays_round_trip():
    src = Denoiser(TINY, seed=5)
    dst = Denoiser(TINY, seed=6)
    dst.load_weight_arrays(src.weight_arrays())
    x, t, cond = _batch()
    eps_a, v_a = src.forward(x, t, cond)
    eps_b, v_b = dst.forward(x, t, cond)
    assert np.array_equal(eps_a.value, eps_b.value)
    assert np.array_equal(v_a.value, v_b.value)


def test_load_weight_arrays_shape_check():
    net = Denoiser(TINY, seed=0)
    arrays = net.weight_arrays()
    arrays["p0"] = np.zeros((3, 3))
    with pytest.raises(DimensionError):
        net.load_weight_arrays(arrays)


def test_parameter_count_scales_with_depth():
    shallow = Denoiser(DenoiserConfig(width=16, depth=1, heads=2), seed=0)
    deep = Denoiser(DenoiserConfig(width=16, depth=3, heads=2), seed=0)
    per_block = len(_Block(TINY, np.random.default_rng(0)).parameters())
    assert len(deep.parameters()) - len(shallow.parameters()) == 2 * per_block


def test_denoiser_gradients():
    net = Denoiser(TINY, seed=1)
    x, t, cond = _batch(b=2)
    target = RNG.normal(size=(2, N_TOKENS, TOKEN_WIDTH))

    def loss_fn():
        eps_hat, v_hat = net.forward(x, t, cond)
        return ad.add(
            ad.tmean(ad.square(ad.sub(eps_hat, target))),
            ad.tmean(ad.square(v_hat)),
        )

    err = grad_check(loss_fn, net.parameters(), max_coords_per_tensor=3)
    assert err < 1e-4


def test_attention_block_gradients():
    block = _Block(TINY, np.random.default_rng(2))
    h = RNG.normal(size=(2, 4, TINY.width))

    def loss_fn():
        return ad.tmean(ad.square(block(Tensor(h))))

    err = grad_check(loss_fn, block.parameters(), max_coords_per_tensor=4)
    assert err < 1e-4
