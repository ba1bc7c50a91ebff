"""Reusable network blocks: convolutions, channel attention (SE),
per-channel normalization, channel-transposed multi-head attention,
gated feed-forward, transformer blocks and down/upsampling.

All blocks register their parameters in a shared ParamStore under a
dotted prefix and are pure functions of (input, parameters) at forward
time. Attention and feed-forward output projections are zero-initialized
so a freshly built residual block is an exact identity.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError

NORM_EPS = 1e-6


class Initializer:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight init."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def uniform(self, shape, fan_in):
        s = 1.0 / np.sqrt(max(fan_in, 1))
        return self.rng.uniform(-s, s, size=shape).astype(np.float32)


class Conv1x1:
    def __init__(self, store, name, c_in, c_out, init, zero=False):
        self.c_in, self.c_out = c_in, c_out
        if zero:
            w = np.zeros((c_out, c_in), dtype=np.float32)
        else:
            w = init.uniform((c_out, c_in), c_in)
        self.weight = store.create(f"{name}.weight", w)
        self.bias = store.create(f"{name}.bias", np.zeros(c_out, dtype=np.float32))

    def __call__(self, x):
        tape = ad.active_tape()
        return ad.conv1x1(x, tape.watch(self.weight), tape.watch(self.bias))


class Conv3x3:
    def __init__(self, store, name, c_in, c_out, init, stride=1):
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        w = init.uniform((c_out, c_in, 3, 3), c_in * 9)
        self.weight = store.create(f"{name}.weight", w)
        self.bias = store.create(f"{name}.bias", np.zeros(c_out, dtype=np.float32))

    def __call__(self, x):
        tape = ad.active_tape()
        return ad.conv3x3(x, tape.watch(self.weight), tape.watch(self.bias), stride=self.stride)


class LinearLayer:
    def __init__(self, store, name, d_in, d_out, init):
        self.d_in, self.d_out = d_in, d_out
        self.weight = store.create(f"{name}.weight", init.uniform((d_out, d_in), d_in))
        self.bias = store.create(f"{name}.bias", np.zeros(d_out, dtype=np.float32))

    def __call__(self, x):
        tape = ad.active_tape()
        return ad.linear(x, tape.watch(self.weight), tape.watch(self.bias))


class SEBlock:
    """Squeeze-and-excitation: GAP -> fc -> ReLU -> fc -> sigmoid.

    Produces one weight in (0,1) per channel, shape (n, c).
    """

    def __init__(self, store, name, channels, init, reduction=4):
        if channels % reduction != 0:
            raise ContractError(
                f"SE reduction {reduction} must divide channel count {channels}")
        self.channels = channels
        self.reduction = reduction
        hidden = channels // reduction
        self.fc1 = LinearLayer(store, f"{name}.fc1", channels, hidden, init)
        self.fc2 = LinearLayer(store, f"{name}.fc2", hidden, channels, init)

    def __call__(self, x):
        if x.shape[1] != self.channels:
            raise DimensionError(
                f"SE block built for {self.channels} channels, got {x.shape[1]}")
        pooled = ad.global_avg_pool(x)
        flat = ad.reshape(pooled, (x.shape[0], self.channels))
        return ad.sigmoid(self.fc2(ad.relu(self.fc1(flat))))


class ChannelNorm:
    """Per-channel normalization over spatial dims with learnable affine."""

    def __init__(self, store, name, channels):
        self.channels = channels
        self.scale = store.create(f"{name}.scale", np.ones((1, channels, 1, 1), dtype=np.float32))
        self.shift = store.create(f"{name}.shift", np.zeros((1, channels, 1, 1), dtype=np.float32))

    def __call__(self, x):
        tape = ad.active_tape()
        mu = ad.global_avg_pool(x)
        centered = ad.sub(x, mu)
        var = ad.global_avg_pool(ad.mul(centered, centered))
        inv = ad.rsqrt(ad.add(var, NORM_EPS))
        normed = ad.mul(centered, inv)
        return ad.add(ad.mul(normed, tape.watch(self.scale)), tape.watch(self.shift))


def _to_heads(x, heads):
    n, c, h, w = x.shape
    return ad.reshape(x, (n, heads, c // heads, h * w))


def _from_heads(x, shape):
    return ad.reshape(x, shape)


class ChannelAttention:
    """Multi-head attention across channel tokens (token dim = h*w).

    Queries and keys are L2-normalized along the pixel axis and scaled by
    a learnable per-head temperature; cost is linear in pixel count.
    Output projection is zero-initialized.
    """

    def __init__(self, store, name, channels, heads, init):
        if channels % heads != 0:
            raise ContractError(f"heads {heads} must divide channels {channels}")
        self.channels, self.heads = channels, heads
        self.q = Conv1x1(store, f"{name}.q", channels, channels, init)
        self.k = Conv1x1(store, f"{name}.k", channels, channels, init)
        self.v = Conv1x1(store, f"{name}.v", channels, channels, init)
        self.out = Conv1x1(store, f"{name}.out", channels, channels, init, zero=True)
        self.temperature = store.create(
            f"{name}.temperature", np.ones((1, heads, 1, 1), dtype=np.float32))

    def __call__(self, query_src, kv_src, return_attn=False):
        if query_src.shape != kv_src.shape:
            raise DimensionError(
                f"attention query/kv shapes differ: {query_src.shape} vs {kv_src.shape}")
        tape = ad.active_tape()
        shape = query_src.shape
        q = _to_heads(self.q(query_src), self.heads)
        k = _to_heads(self.k(kv_src), self.heads)
        v = _to_heads(self.v(kv_src), self.heads)
        q = ad.l2_normalize_lastdim(q)
        k = ad.l2_normalize_lastdim(k)
        logits = ad.mul(ad.matmul(q, ad.transpose_last2(k)), tape.watch(self.temperature))
        attn = ad.softmax_lastdim(logits)
        mixed = _from_heads(ad.matmul(attn, v), shape)
        out = self.out(mixed)
        if return_attn:
            return out, attn
        return out


class GatedFFN:
    """Two 1x1 convolutions with an elementwise sigmoid gate between.

    Projects to 2*expansion*c, gates one half with the other, projects
    back with a zero-initialized convolution.
    """

    def __init__(self, store, name, channels, init, expansion=2):
        hidden = channels * expansion
        self.hidden = hidden
        self.inp = Conv1x1(store, f"{name}.in", channels, 2 * hidden, init)
        self.out = Conv1x1(store, f"{name}.out", hidden, channels, init, zero=True)

    def __call__(self, x):
        both = self.inp(x)
        u, gate = ad.split_channels(both, self.hidden)
        return self.out(ad.mul(u, ad.sigmoid(gate)))


class TransformerBlock:
    """x + Attn(Norm(x)), then + FFN(Norm(.)); shape preserving."""

    def __init__(self, store, name, channels, heads, init):
        self.norm1 = ChannelNorm(store, f"{name}.norm1", channels)
        self.attn = ChannelAttention(store, f"{name}.attn", channels, heads, init)
        self.norm2 = ChannelNorm(store, f"{name}.norm2", channels)
        self.ffn = GatedFFN(store, f"{name}.ffn", channels, init)

    def __call__(self, x):
        h = self.norm1(x)
        x = ad.add(x, self.attn(h, h))
        x = ad.add(x, self.ffn(self.norm2(x)))
        return x


class CrossAttentionBlock:
    """Query stream attends to a key/value stream, then a gated FFN.

    Residuals are taken on the query stream; zero-initialized output
    projections make the untrained block return the query unchanged.
    """

    def __init__(self, store, name, channels, heads, init):
        self.norm_q = ChannelNorm(store, f"{name}.norm_q", channels)
        self.norm_kv = ChannelNorm(store, f"{name}.norm_kv", channels)
        self.attn = ChannelAttention(store, f"{name}.attn", channels, heads, init)
        self.norm2 = ChannelNorm(store, f"{name}.norm2", channels)
        self.ffn = GatedFFN(store, f"{name}.ffn", channels, init)

    def __call__(self, query, kv):
        x = ad.add(query, self.attn(self.norm_q(query), self.norm_kv(kv)))
        x = ad.add(x, self.ffn(self.norm2(x)))
        return x


class Downsample:
    """Stride-2 3x3 convolution: channels x2, spatial /2 (ceil)."""

    def __init__(self, store, name, channels, init):
        self.conv = Conv3x3(store, name, channels, channels * 2, init, stride=2)

    def __call__(self, x):
        if x.shape[2] < 2 or x.shape[3] < 2:
            raise DimensionError(f"downsample needs h,w >= 2, got {x.shape}")
        return self.conv(x)


class Upsample:
    """Nearest x2 then 1x1 convolution: channels /2, spatial x2."""

    def __init__(self, store, name, channels, init):
        if channels % 2 != 0:
            raise ContractError(f"upsample needs even channel count, got {channels}")
        self.conv = Conv1x1(store, name, channels, channels // 2, init)

    def __call__(self, x):
        return self.conv(ad.nearest_upsample2(x))


class TransformerStack:
    def __init__(self, store, name, channels, heads, depth, init):
        self.blocks = [
            TransformerBlock(store, f"{name}.b{i}", channels, heads, init)
            for i in range(depth)
        ]

    def __call__(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x
