"""Text-guided channel perturbation.

Two feature streams are concatenated, filtered down to the top half of
channels by attention score, re-expanded to twice the kept width by a
1x1 convolution, and permuted along channels by an index derived from a
text embedding: the embedding passes through a two-layer mapping and the
channel order is the stable descending argsort of the mapped weights.
The permuted features then query the unpermuted ones through cross
attention and a gated feed-forward refines the result.

The permutation is a pure index operation: gradients flow through the
moved values, never through the ordering itself. As with pruning, a
`plan` dict can freeze both the kept-channel set and the permutation.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError
from .blocks import Conv1x1, CrossAttentionBlock, LinearLayer, SEBlock
from .providers import EMBED_DIM
from .pruning import ChannelSelection, top_k_indices

TEXT_MAP_HIDDEN = 256


class PerturbationIndex:
    """A permutation of 0..c-1 plus the weights that produced it."""

    __slots__ = ("perm", "source_weights")

    def __init__(self, perm, source_weights):
        perm = [int(i) for i in perm]
        if sorted(perm) != list(range(len(perm))):
            raise ContractError("perturbation index must be a permutation of 0..c-1")
        self.perm = perm
        self.source_weights = np.asarray(source_weights, dtype=np.float32)

    def __len__(self):
        return len(self.perm)

    def inverse(self):
        inv = [0] * len(self.perm)
        for pos, src in enumerate(self.perm):
            inv[src] = pos
        return PerturbationIndex(inv, self.source_weights)


def perturbation_index(weights):
    """Stable descending argsort of `weights` as a PerturbationIndex."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    order = np.argsort(-w, kind="stable")
    return PerturbationIndex([int(i) for i in order], w)


def perturb(x, index):
    """Reorder channels: output channel i = input channel perm[i]."""
    if len(index) != x.shape[1]:
        raise DimensionError(
            f"permutation length {len(index)} != channel count {x.shape[1]}")
    return ad.gather_channels(x, index.perm)


def select_channels(x, se, ratio, plan=None, plan_key="select.kept"):
    """Keep the top ceil(ratio*c) channels by SE score, scaled by it."""
    c = x.shape[1]
    if c == 0:
        raise DimensionError("cannot select from zero channels")
    scores = se(x)
    ranking = scores.value.mean(axis=0)
    if plan is not None and plan_key in plan:
        kept = plan[plan_key]
    else:
        kept = top_k_indices(ranking, ratio)
        if plan is not None:
            plan[plan_key] = kept
    gathered = ad.gather_channels(x, kept)
    w_kept = ad.gather_channels(ad.reshape(scores, (scores.shape[0], c, 1, 1)), kept)
    return ad.mul(gathered, w_kept), ChannelSelection(kept, ranking)


class TextGuidedPerturbation:
    """select -> expand x2 -> text-indexed permute -> cross attention."""

    def __init__(self, store, name, cat_channels, heads, init,
                 keep_ratio=0.5, use_attention=True):
        self.name = name
        self.cat_channels = cat_channels
        self.use_attention = use_attention
        self.kept_channels = math.ceil(keep_ratio * cat_channels) if use_attention else cat_channels
        self.out_channels = 2 * self.kept_channels
        self.keep_ratio = keep_ratio
        if use_attention:
            self.se = SEBlock(store, f"{name}.se", cat_channels, init)
        self.expand = Conv1x1(store, f"{name}.expand", self.kept_channels, self.out_channels, init)
        self.map1 = LinearLayer(store, f"{name}.map1", EMBED_DIM, TEXT_MAP_HIDDEN, init)
        self.map2 = LinearLayer(store, f"{name}.map2", TEXT_MAP_HIDDEN, self.out_channels, init)
        self.cross = CrossAttentionBlock(store, f"{name}.cross", self.out_channels, heads, init)

    def guide_weights(self, embedding):
        emb = ad.constant(embedding.values.reshape(1, EMBED_DIM))
        return self.map2(ad.relu(self.map1(emb)))

    def __call__(self, feat_a, feat_b, embedding, plan=None):
        if feat_a.shape != feat_b.shape:
            raise DimensionError(f"stream shapes differ: {feat_a.shape} vs {feat_b.shape}")
        if feat_a.shape[1] + feat_b.shape[1] != self.cat_channels:
            raise DimensionError(
                f"module built for {self.cat_channels} concatenated channels, "
                f"got {feat_a.shape[1] + feat_b.shape[1]}")
        cat = ad.concat_channels(feat_a, feat_b)
        if self.use_attention:
            kept, _ = select_channels(
                cat, self.se, self.keep_ratio, plan, f"{self.name}.kept")
        else:
            kept = cat
        expanded = self.expand(kept)

        plan_key = f"{self.name}.perm"
        guide = self.guide_weights(embedding)
        if plan is not None and plan_key in plan:
            index = PerturbationIndex(plan[plan_key], guide.value[0])
        else:
            index = perturbation_index(guide.value[0])
            if plan is not None:
                plan[plan_key] = index.perm
        perturbed = perturb(expanded, index)
        return self.cross(perturbed, expanded)
