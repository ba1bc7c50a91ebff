"""Semantic-aware channel pruning.

Channel ranking weights combine an SE attention score with a sigmoid-
squashed semantic score scaled by a learnable balance: w = a + alpha *
sigmoid(s). The top ceil(keep_ratio * c) channels survive, each scaled
by its ranking weight so the attention parameters receive gradient, then
a 1x1 convolution restores the original channel count and the result is
partitioned into two equal modality streams.

Index selection is not differentiable; gradients flow through the kept
values only. A `plan` dict can freeze the selected indices (and the
semantic embedding) so that finite-difference checks see a locally
smooth function.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError
from .blocks import Conv1x1, LinearLayer, SEBlock
from .providers import EMBED_DIM


class ChannelSelection:
    """Kept channel indices (ascending) plus the weights that ranked them."""

    __slots__ = ("kept", "ranking_weights")

    def __init__(self, kept, ranking_weights):
        self.kept = list(kept)
        self.ranking_weights = np.asarray(ranking_weights, dtype=np.float32)


def top_k_indices(weights, ratio):
    """Indices of the k = ceil(ratio * c) largest weights, ascending.

    Ties break toward the lower original index (stable descending sort).
    """
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    c = weights.size
    if c == 0:
        raise DimensionError("cannot rank zero channels")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"keep ratio must be in (0, 1], got {ratio}")
    k = math.ceil(ratio * c)
    order = np.argsort(-weights, kind="stable")
    return sorted(int(i) for i in order[:k])


def fuse_channel_weights(omega_attention, omega_semantic, alpha):
    """w = attention + alpha * sigmoid(semantic), coordinate-wise."""
    if omega_attention.shape[-1] != omega_semantic.shape[-1]:
        raise DimensionError(
            f"weight length mismatch: {omega_attention.shape} vs {omega_semantic.shape}")
    return ad.add(omega_attention, ad.mul(alpha, ad.sigmoid(omega_semantic)))


def prune_channels(x, weights, ratio, plan=None, plan_key="prune.kept"):
    """Keep the top channels of `x` ranked by `weights`, scaled by them.

    `weights` is an (n, c) or (1, c) graph tensor; ranking uses its
    batch-mean value, so one index set applies to the whole batch.
    Returns (pruned tensor, ChannelSelection).
    """
    c = x.shape[1]
    if c == 0:
        raise DimensionError("cannot prune a tensor with zero channels")
    ranking = weights.value.mean(axis=0)
    if plan is not None and plan_key in plan:
        kept = plan[plan_key]
    else:
        kept = top_k_indices(ranking, ratio)
        if plan is not None:
            plan[plan_key] = kept
    gathered = ad.gather_channels(x, kept)
    w_kept = ad.gather_channels(ad.reshape(weights, (weights.shape[0], c, 1, 1)), kept)
    return ad.mul(gathered, w_kept), ChannelSelection(kept, ranking)


def partition(x):
    """Split channels evenly into two modality streams."""
    c = x.shape[1]
    if c % 2 != 0:
        raise ad.ContractError(f"partition needs an even channel count, got {c}")
    return ad.split_channels(x, c // 2)


class SemanticChannelPruning:
    """Rank, prune, re-expand and partition a pre-fused feature map."""

    def __init__(self, store, name, channels, init, keep_ratio=0.7,
                 use_attention=True, use_semantic=True):
        self.channels = channels
        self.keep_ratio = keep_ratio
        self.use_attention = use_attention
        self.use_semantic = use_semantic
        self.kept_channels = math.ceil(keep_ratio * channels)
        self.name = name
        if use_attention:
            self.se = SEBlock(store, f"{name}.se", channels, init)
        if use_semantic:
            self.semantic_map = LinearLayer(store, f"{name}.map", EMBED_DIM, channels, init)
            self.alpha = store.create(f"{name}.alpha", np.asarray(1.0, dtype=np.float32))
        self.expand = Conv1x1(store, f"{name}.expand", self.kept_channels, channels, init)

    def ranking_weights(self, x, embedding):
        """(n, c) or (1, c) graph tensor of combined channel weights."""
        tape = ad.active_tape()
        omega_a = self.se(x) if self.use_attention else None
        omega_s = None
        if self.use_semantic:
            emb = ad.constant(embedding.values.reshape(1, EMBED_DIM))
            omega_s = self.semantic_map(emb)
        if omega_a is not None and omega_s is not None:
            return fuse_channel_weights(omega_a, omega_s, tape.watch(self.alpha))
        if omega_a is not None:
            return omega_a
        if omega_s is not None:
            return ad.mul(tape.watch(self.alpha), ad.sigmoid(omega_s))
        # both guidance paths ablated: uniform weights, tie rule keeps the
        # leading channels unscaled
        return ad.constant(np.ones((1, self.channels), dtype=np.float32))

    def __call__(self, x, embedding, plan=None):
        if x.shape[1] != self.channels:
            raise DimensionError(
                f"pruning built for {self.channels} channels, got {x.shape[1]}")
        weights = self.ranking_weights(x, embedding)
        pruned, selection = prune_channels(
            x, weights, self.keep_ratio, plan, f"{self.name}.kept")
        restored = self.expand(pruned)
        fuse_a, fuse_b = partition(restored)
        return fuse_a, fuse_b, selection
