"""Feature backends: pretrained models, plus a deterministic offline
stand-in with identical interfaces for machines without model weights.

An image backend maps a float RGB array (3, 224, 224), already
normalized, to a 1-D feature vector of `feature_dim`. A text backend
maps a prompt string straight to a 512-dim vector.
"""

from __future__ import annotations

import numpy as np

TEXT_DIM = 512

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class ModelWeightsError(RuntimeError):
    """Pretrained weights unavailable; message carries a download hint."""


# ---------------------------------------------------------------------------
# Pretrained backends

class PretrainedImageBackbone:
    """ConvNeXt-base, final globally pooled features (1024-dim)."""

    feature_dim = 1024

    def __init__(self):
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise ModelWeightsError(
                "torch/torchvision not installed; pip install torch torchvision "
                "or use --backend offline") from exc
        try:
            weights = torchvision.models.ConvNeXt_Base_Weights.IMAGENET1K_V1
            model = torchvision.models.convnext_base(weights=weights)
        except Exception as exc:
            raise ModelWeightsError(
                "could not load ConvNeXt-base weights; pre-download them with "
                "torchvision (hub cache ~/.cache/torch) or use --backend offline"
            ) from exc
        self._torch = torch
        model.eval()
        self._features = model.features
        self._pool = model.avgpool

    def features(self, image):
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(image[None]).float()
            pooled = self._pool(self._features(x))
        return pooled.reshape(-1).numpy().astype(np.float32)


class PretrainedTextEncoder:
    """CLIP ViT-B/32 text tower, raw 512-dim output."""

    def __init__(self):
        try:
            import torch
            from transformers import CLIPTextModelWithProjection, CLIPTokenizer
        except ImportError as exc:
            raise ModelWeightsError(
                "transformers not installed; pip install transformers "
                "or use --backend offline") from exc
        name = "openai/clip-vit-base-patch32"
        try:
            self._tokenizer = CLIPTokenizer.from_pretrained(name)
            self._model = CLIPTextModelWithProjection.from_pretrained(name)
        except Exception as exc:
            raise ModelWeightsError(
                f"could not load {name}; pre-download it with "
                f"`huggingface-cli download {name}` or use --backend offline") from exc
        self._torch = torch
        self._model.eval()

    def encode(self, prompt):
        torch = self._torch
        with torch.no_grad():
            tokens = self._tokenizer([prompt], padding=True, return_tensors="pt")
            out = self._model(**tokens).text_embeds
        return out.reshape(-1).numpy().astype(np.float32)


# ---------------------------------------------------------------------------
# Offline deterministic backends

_MASK64 = (1 << 64) - 1


def _fnv1a64(data, seed=0):
    h = (0xCBF29CE484222325 ^ seed) & _MASK64
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def _mix_stream(seed, count):
    idx = np.arange(1, count + 1, dtype=np.uint64)
    state = np.uint64(seed & _MASK64) + idx * np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z / 2.0**63 - 1.0).astype(np.float32)


class OfflineImageBackbone:
    """Deterministic stand-in: seeded projection of a coarse luminance grid.

    Content-sensitive and reproducible everywhere; no pretrained weights.
    """

    feature_dim = 1024
    _GRID = 16

    def __init__(self, seed=0):
        stream = _mix_stream(_fnv1a64(b"offline-image", seed), self.feature_dim * self._GRID ** 2)
        self._proj = stream.reshape(self.feature_dim, self._GRID ** 2) / self._GRID

    def features(self, image):
        gray = image.mean(axis=0)
        h, w = gray.shape
        ys = (np.arange(self._GRID) * h) // self._GRID
        xs = (np.arange(self._GRID) * w) // self._GRID
        coarse = gray[np.ix_(ys, xs)].reshape(-1).astype(np.float32)
        return (self._proj @ coarse).astype(np.float32)


class OfflineTextEncoder:
    """Deterministic stand-in: hash of the prompt expanded to 512 floats."""

    def __init__(self, seed=0):
        self.seed = seed

    def encode(self, prompt):
        return _mix_stream(_fnv1a64(prompt.encode("utf-8"), self.seed), TEXT_DIM)


def make_backends(kind, seed=0):
    if kind == "pretrained":
        return PretrainedImageBackbone(), PretrainedTextEncoder()
    if kind == "offline":
        return OfflineImageBackbone(seed), OfflineTextEncoder(seed)
    raise ValueError(f"unknown backend kind {kind!r}")
