import numpy as np
import pytest

from mmfuse import autodiff as ad
from mmfuse.autodiff import ContractError, DimensionError, ParamStore, Tape, constant, grad_check
from mmfuse.blocks import (ChannelAttention, Conv1x1, Conv3x3, Downsample, GatedFFN,
                           Initializer, SEBlock, TransformerBlock, Upsample)


def rand(shape, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=shape).astype(np.float32)


def make(seed=0):
    return ParamStore(), Initializer(seed)


class TestConv1x1:
    def test_identity_weight(self):
        store, init = make()
        layer = Conv1x1(store, "c", 3, 3, init)
        layer.weight.value[...] = np.eye(3, dtype=np.float32)
        x = rand((2, 3, 4, 4), seed=1)
        with Tape():
            out = layer(constant(x))
        assert np.allclose(out.value, x)

    def test_zero_weight_constant_bias(self):
        store, init = make()
        layer = Conv1x1(store, "c", 3, 2, init)
        layer.weight.value[...] = 0.0
        layer.bias.value[...] = np.array([0.5, -1.0], dtype=np.float32)
        with Tape():
            out = layer(constant(rand((1, 3, 2, 2), seed=2)))
        assert np.allclose(out.value[0, 0], 0.5)
        assert np.allclose(out.value[0, 1], -1.0)

    def test_summation_map(self):
        store, init = make()
        layer = Conv1x1(store, "c", 2, 1, init)
        layer.weight.value[...] = np.array([[1.0, 1.0]], dtype=np.float32)
        layer.bias.value[...] = 0.0
        x = rand((1, 2, 3, 3), seed=3)
        with Tape():
            out = layer(constant(x))
        assert np.allclose(out.value[0, 0], x[0, 0] + x[0, 1], atol=1e-6)

    def test_channel_mismatch(self):
        store, init = make()
        layer = Conv1x1(store, "c", 4, 2, init)
        with Tape():
            with pytest.raises(DimensionError):
                layer(constant(rand((1, 3, 2, 2))))


class TestSEBlock:
    def test_zero_weights_give_half(self):
        store, init = make()
        se = SEBlock(store, "se", 8, init)
        se.fc1.weight.value[...] = 0.0
        se.fc2.weight.value[...] = 0.0
        with Tape():
            out = se(constant(rand((2, 8, 4, 4), seed=4)))
        assert out.value.shape == (2, 8)
        assert np.all(out.value == 0.5)

    def test_output_in_open_unit_interval(self):
        store, init = make()
        se = SEBlock(store, "se", 8, init)
        with Tape():
            out = se(constant(rand((3, 8, 5, 5), seed=5)))
        assert np.all(out.value > 0.0) and np.all(out.value < 1.0)

    def test_reduction_must_divide(self):
        store, init = make()
        with pytest.raises(ContractError):
            SEBlock(store, "se", 6, init, reduction=4)

    def test_gradients_match_fd(self):
        store, init = make()
        se = SEBlock(store, "se", 8, init)
        x = rand((1, 8, 4, 4), seed=6)
        r = np.random.default_rng(7).uniform(0.5, 1.5, (1, 8)).astype(np.float32)

        def fn():
            return ad.sum_all(ad.mul(se(constant(x)), constant(r)))

        assert grad_check(fn, store, eps=1e-5, max_coords_per_param=3) <= 1e-3


class TestTransformerBlock:
    def test_fresh_block_is_identity(self):
        store, init = make()
        blk = TransformerBlock(store, "t", 8, 2, init)
        x = rand((1, 8, 6, 6), seed=8)
        with Tape():
            out = blk(constant(x))
        assert np.array_equal(out.value, x)

    def test_shape_preserved_after_perturbation(self):
        store, init = make(seed=1)
        blk = TransformerBlock(store, "t", 8, 2, init)
        for p in store:
            if p.value.ndim >= 2 and not p.value.any():
                p.value[...] = rand(p.value.shape, seed=9) * 0.1
        x = rand((1, 8, 16, 16), seed=10)
        with Tape():
            out = blk(constant(x))
        assert out.value.shape == (1, 8, 16, 16)
        assert not np.array_equal(out.value, x)

    def test_attention_rows_sum_to_one(self):
        store, init = make(seed=2)
        attn = ChannelAttention(store, "a", 8, 2, init)
        x = rand((1, 8, 5, 5), seed=11)
        with Tape():
            _, attn_map = attn(constant(x), constant(x), return_attn=True)
        sums = attn_map.value.sum(axis=-1)
        assert np.allclose(sums, 1.0, atol=1e-5)

    def test_heads_must_divide_channels(self):
        store, init = make()
        with pytest.raises(ContractError):
            ChannelAttention(store, "a", 9, 2, init)


class TestGatedFFN:
    def test_zero_out_projection_returns_zero(self):
        store, init = make()
        ffn = GatedFFN(store, "f", 6, init)
        with Tape():
            out = ffn(constant(rand((1, 6, 3, 3), seed=12)))
        assert np.all(out.value == 0.0)


class TestResampling:
    def test_downsample_contract(self):
        store, init = make()
        down = Downsample(store, "d", 8, init)
        with Tape():
            out = down(constant(rand((1, 8, 32, 32), seed=13)))
        assert out.value.shape == (1, 16, 16, 16)

    def test_upsample_contract(self):
        store, init = make()
        up = Upsample(store, "u", 16, init)
        with Tape():
            out = up(constant(rand((1, 16, 16, 16), seed=14)))
        assert out.value.shape == (1, 8, 32, 32)

    def test_down_up_preserves_constant_with_delta_kernels(self):
        store, init = make()
        down = Downsample(store, "d", 4, init)
        up = Upsample(store, "u", 8, init)
        # averaging-normalized delta init: downsample forwards the center
        # pixel per 2x2 cell, upsample averages channel pairs back
        down.conv.weight.value[...] = 0.0
        for o in range(8):
            down.conv.weight.value[o, o % 4, 1, 1] = 1.0
        down.conv.bias.value[...] = 0.0
        up.conv.weight.value[...] = 0.0
        for o in range(4):
            up.conv.weight.value[o, o] = 0.5
            up.conv.weight.value[o, o + 4] = 0.5
        up.conv.bias.value[...] = 0.0
        x = np.full((1, 4, 8, 8), 0.75, dtype=np.float32)
        with Tape():
            out = up(down(constant(x)))
        assert out.value.shape == x.shape
        assert np.allclose(out.value, 0.75)

    def test_downsample_rejects_tiny_input(self):
        store, init = make()
        down = Downsample(store, "d", 4, init)
        with Tape():
            with pytest.raises(DimensionError):
                down(constant(rand((1, 4, 1, 4))))


class TestInit:
    def test_seeded_init_reproducible(self):
        s1, i1 = make(seed=42)
        s2, i2 = make(seed=42)
        c1 = Conv3x3(s1, "c", 4, 8, i1)
        c2 = Conv3x3(s2, "c", 4, 8, i2)
        assert np.array_equal(c1.weight.value, c2.weight.value)

    def test_fan_in_bound(self):
        store, init = make(seed=3)
        conv = Conv3x3(store, "c", 4, 8, init)
        bound = 1.0 / np.sqrt(4 * 9)
        assert np.abs(conv.weight.value).max() <= bound
