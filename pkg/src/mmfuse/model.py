"""Full fusion network: shallow convolutions, channel pruning, affine
modulation, a dual-branch 4-level transformer encoder, a channel
perturbation bottleneck, and a 4-level decoder whose skip connections
are fused through per-stage perturbation modules.

Inputs are single-channel luminance maps with spatial dims divisible by
8 (three stride-2 stages). The output passes through a sigmoid head, so
every fused pixel lies in [0, 1]. Given (config, seed, inputs, prompt)
the result is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .blocks import Conv1x1, Conv3x3, Downsample, Initializer, TransformerStack, Upsample
from .modulation import GlobalAffineModulation
from .perturbation import TextGuidedPerturbation
from .providers import StubSemanticProvider, StubTextProvider
from .pruning import SemanticChannelPruning

LEVELS = 4
DOWNSAMPLES = LEVELS - 1
SPATIAL_MULTIPLE = 2 ** DOWNSAMPLES

DEFAULT_PROMPT = "multi-modality image fusion"


class ConfigError(ValueError):
    pass


class InputSizeError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    base_channels: int = 8
    enc_blocks: tuple = (1, 1, 1, 1)
    dec_blocks: tuple = (1, 1, 1, 1)
    heads: tuple = (1, 2, 4, 8)
    prune_keep_ratio: float = 0.7
    select_keep_ratio: float = 0.5
    use_pruning: bool = True
    use_modulation: bool = True
    use_perturbation: bool = True
    use_pruning_attention: bool = True
    use_perturbation_attention: bool = True
    use_semantic_guide: bool = True
    seed: int = 0
    prompt: str = DEFAULT_PROMPT

    @classmethod
    def desk(cls, **overrides):
        return replace(cls(), **overrides)

    @classmethod
    def paper_scale(cls, **overrides):
        cfg = cls(base_channels=48, enc_blocks=(4, 6, 6, 8), dec_blocks=(2, 2, 2, 2))
        return replace(cfg, **overrides)

    def level_width(self, level):
        return self.base_channels * (2 ** level)

    def validate(self):
        if len(self.enc_blocks) != LEVELS or len(self.dec_blocks) != LEVELS:
            raise ConfigError(
                f"enc_blocks/dec_blocks must have {LEVELS} entries, got "
                f"{len(self.enc_blocks)}/{len(self.dec_blocks)}")
        if len(self.heads) != LEVELS:
            raise ConfigError(f"heads must have {LEVELS} entries, got {len(self.heads)}")
        if self.base_channels < 4 or self.base_channels % 4 != 0:
            raise ConfigError(
                f"base_channels must be a positive multiple of 4, got {self.base_channels}")
        for i in range(LEVELS):
            if self.level_width(i) % self.heads[i] != 0:
                raise ConfigError(
                    f"level {i}: heads {self.heads[i]} does not divide width {self.level_width(i)}")
        for name, r in (("prune_keep_ratio", self.prune_keep_ratio),
                        ("select_keep_ratio", self.select_keep_ratio)):
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {r}")
        if not self.prompt:
            raise ConfigError("prompt must be a non-empty string")
        return self

    def ablation_flags(self):
        return {
            "use_pruning": self.use_pruning,
            "use_modulation": self.use_modulation,
            "use_perturbation": self.use_perturbation,
            "use_pruning_attention": self.use_pruning_attention,
            "use_perturbation_attention": self.use_perturbation_attention,
            "use_semantic_guide": self.use_semantic_guide,
        }

    def digest(self):
        from hashlib import sha256
        payload = repr(sorted(self.__dict__.items())).encode()
        return sha256(payload).hexdigest()[:16]


@dataclass
class EncoderState:
    """Per-level feature pairs plus the bottleneck tensor."""

    level_features: list = field(default_factory=list)   # [(feat_a, feat_b)] per level
    bottleneck: object = None
    text_embedding: object = None


class _SkipFusion:
    """Perturbation-free skip: channel concat + 1x1 mixing."""

    def __init__(self, store, name, cat_channels, init):
        self.out_channels = cat_channels
        self.conv = Conv1x1(store, name, cat_channels, cat_channels, init)

    def __call__(self, feat_a, feat_b, embedding, plan=None):
        return self.conv(ad.concat_channels(feat_a, feat_b))


class FusionModel:
    def __init__(self, config, semantic_provider=None, text_provider=None):
        self.config = config.validate()
        self.semantic_provider = semantic_provider or StubSemanticProvider(config.seed)
        self.text_provider = text_provider or StubTextProvider(config.seed)
        self.params = ParamStore()
        self._build()

    # -- construction -------------------------------------------------

    def _build(self):
        cfg = self.config
        init = Initializer(cfg.seed)
        store = self.params
        base = cfg.base_channels

        self.conv_a = Conv3x3(store, "stem.a", 1, base, init)
        self.conv_b = Conv3x3(store, "stem.b", 1, base, init)

        if cfg.use_pruning:
            self.pruning = SemanticChannelPruning(
                store, "prune", 2 * base, init, cfg.prune_keep_ratio,
                use_attention=cfg.use_pruning_attention,
                use_semantic=cfg.use_semantic_guide)
        else:
            self.pruning = None

        if cfg.use_modulation:
            self.modulate_a = GlobalAffineModulation(store, "affine.a", base, init)
            self.modulate_b = GlobalAffineModulation(store, "affine.b", base, init)

        self.enc_stacks = {"a": [], "b": []}
        self.enc_down = {"a": [], "b": []}
        for branch in ("a", "b"):
            for lvl in range(LEVELS):
                width = cfg.level_width(lvl)
                self.enc_stacks[branch].append(TransformerStack(
                    store, f"enc.{branch}{lvl}", width, cfg.heads[lvl],
                    cfg.enc_blocks[lvl], init))
                if lvl < LEVELS - 1:
                    self.enc_down[branch].append(
                        Downsample(store, f"down.{branch}{lvl}", width, init))

        self.skips = []
        for lvl in range(LEVELS):
            cat = 2 * cfg.level_width(lvl)
            if cfg.use_perturbation:
                self.skips.append(TextGuidedPerturbation(
                    store, f"mix{lvl}", cat, cfg.heads[lvl], init,
                    cfg.select_keep_ratio,
                    use_attention=cfg.use_perturbation_attention))
            else:
                self.skips.append(_SkipFusion(store, f"mix{lvl}", cat, init))

        self.dec_compress = []
        self.dec_stacks = []
        self.dec_up = []
        for lvl in range(LEVELS):
            width = cfg.level_width(lvl)
            skip_c = self.skips[lvl].out_channels
            in_c = skip_c if lvl == LEVELS - 1 else width + skip_c
            self.dec_compress.append(Conv1x1(store, f"dec.compress{lvl}", in_c, width, init))
            self.dec_stacks.append(TransformerStack(
                store, f"dec.{lvl}", width, cfg.heads[lvl], cfg.dec_blocks[lvl], init))
            if lvl < LEVELS - 1:
                # transition from level lvl+1 down into level lvl
                self.dec_up.append(Upsample(store, f"up.{lvl}", 2 * width, init))
        self.head = Conv3x3(store, "head", base, 1, init)

    def parameter_count(self):
        return self.params.num_values()

    # -- embeddings  ---------------------------------------------------

    def _semantic_embedding(self, features_value, plan, key):
        if plan is not None and "semantic_embedding" in plan:
            return plan["semantic_embedding"]
        emb = self.semantic_provider.semantic_vector(features_value, key=key)
        if plan is not None:
            plan["semantic_embedding"] = emb
        return emb

    def _text_embedding(self, prompt, plan):
        if plan is not None and "text_embedding" in plan:
            return plan["text_embedding"]
        emb = self.text_provider.text_vector(prompt)
        if plan is not None:
            plan["text_embedding"] = emb
        return emb

    # -- forward -------------------------------------------------------

    def _check_inputs(self, image_a, image_b):
        for name, img in (("a", image_a), ("b", image_b)):
            if img.value.ndim != 4 or img.shape[1] != 1:
                raise InputSizeError(
                    f"input {name} must be (n,1,h,w), got {img.shape}")
        if image_a.shape != image_b.shape:
            raise InputSizeError(
                f"input shapes differ: {image_a.shape} vs {image_b.shape}")
        h, w = image_a.shape[2], image_a.shape[3]
        if h % SPATIAL_MULTIPLE or w % SPATIAL_MULTIPLE:
            raise InputSizeError(
                f"spatial dims must be divisible by {SPATIAL_MULTIPLE}, got {h}x{w}")

    def encode(self, image_a, image_b, prompt=None, plan=None, semantic_key=None):
        cfg = self.config
        self._check_inputs(image_a, image_b)
        fa0 = self.conv_a(image_a)
        fb0 = self.conv_b(image_b)

        cat = ad.concat_channels(fa0, fb0)
        if self.pruning is not None:
            embedding = None
            if cfg.use_semantic_guide:
                embedding = self._semantic_embedding(cat.value, plan, semantic_key)
            fa, fb, _ = self.pruning(cat, embedding, plan)
        else:
            fa, fb = ad.split_channels(cat, cfg.base_channels)

        if cfg.use_modulation:
            fa = self.modulate_a(fa, fa0)
            fb = self.modulate_b(fb, fb0)

        state = EncoderState()
        for lvl in range(LEVELS):
            fa = self.enc_stacks["a"][lvl](fa)
            fb = self.enc_stacks["b"][lvl](fb)
            state.level_features.append((fa, fb))
            if lvl < LEVELS - 1:
                fa = self.enc_down["a"][lvl](fa)
                fb = self.enc_down["b"][lvl](fb)

        text_emb = self._text_embedding(prompt or cfg.prompt, plan)
        deep_a, deep_b = state.level_features[-1]
        state.bottleneck = self.skips[-1](deep_a, deep_b, text_emb, plan)
        state.text_embedding = text_emb
        return state

    def decode(self, state, plan=None):
        text_emb = state.text_embedding
        x = self.dec_compress[-1](state.bottleneck)
        x = self.dec_stacks[-1](x)
        for lvl in range(LEVELS - 2, -1, -1):
            x = self.dec_up[lvl](x)
            fa, fb = state.level_features[lvl]
            skip = self.skips[lvl](fa, fb, text_emb, plan)
            x = self.dec_compress[lvl](ad.concat_channels(x, skip))
            x = self.dec_stacks[lvl](x)
        return ad.sigmoid(self.head(x))

    def fuse(self, image_a, image_b, prompt=None, plan=None, semantic_key=None):
        """Full pipeline on graph tensors; returns the fused (n,1,h,w) map."""
        state = self.encode(image_a, image_b, prompt, plan, semantic_key)
        return self.decode(state, plan)

    def fuse_arrays(self, array_a, array_b, prompt=None, plan=None, semantic_key=None):
        """Convenience wrapper: numpy in, numpy out, own tape."""
        with ad.Tape():
            out = self.fuse(ad.constant(array_a), ad.constant(array_b),
                            prompt, plan, semantic_key)
        return out.value.copy()


def build_model(config, semantic_provider=None, text_provider=None):
    return FusionModel(config, semantic_provider, text_provider)
