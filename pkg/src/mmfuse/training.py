"""Losses, optimizer, schedule, data pipeline and the training loop.

The gradient loss compares the Sobel magnitude of the fused image with
the elementwise maximum of the source magnitudes; the intensity loss is
the summed L1 distance to both sources. Both are normalized per pixel
(1/HW) and the total is their plain sum, with no extra weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, NumericError
from .model import ConfigError
from .providers import dumps_embedding, parse_embedding_blob

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float32)
SOBEL_Y = SOBEL_X.T.copy()


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Losses

def sobel_grad(x):
    """|G_x| + |G_y| of a single-channel map, reflect padded; >= 0."""
    if x.shape[1] != 1:
        raise DimensionError(f"sobel_grad expects a single channel, got {x.shape}")
    kernels = np.stack([SOBEL_X, SOBEL_Y])[:, None, :, :]  # (2,1,3,3)
    padded = ad.pad_reflect1(x)
    both = ad.conv3x3(padded, ad.constant(kernels),
                      ad.constant(np.zeros(2, dtype=np.float32)), stride=1, pad=0)
    gx, gy = ad.split_channels(ad.absolute(both), 1)
    return ad.add(gx, gy)


def grad_loss(fused, image_a, image_b):
    """(1/HW) * || grad(F) - max(grad(A), grad(B)) ||_1, batch-averaged."""
    if fused.shape != image_a.shape or fused.shape != image_b.shape:
        raise DimensionError(
            f"loss inputs must share shape: {fused.shape}, {image_a.shape}, {image_b.shape}")
    target = ad.maximum(sobel_grad(image_a), sobel_grad(image_b))
    return ad.mean_all(ad.absolute(ad.sub(sobel_grad(fused), target)))


def l1_loss(fused, image_a, image_b):
    """(1/HW) * (||F - A||_1 + ||F - B||_1), batch-averaged."""
    if fused.shape != image_a.shape or fused.shape != image_b.shape:
        raise DimensionError(
            f"loss inputs must share shape: {fused.shape}, {image_a.shape}, {image_b.shape}")
    return ad.add(ad.mean_all(ad.absolute(ad.sub(fused, image_a))),
                  ad.mean_all(ad.absolute(ad.sub(fused, image_b))))


def total_loss(fused, image_a, image_b):
    """Returns (l_total, l_grad, l_l1) graph nodes."""
    lg = grad_loss(fused, image_a, image_b)
    ll = l1_loss(fused, image_a, image_b)
    return ad.add(lg, ll), lg, ll


@dataclass
class LossReport:
    step: int
    lr: float
    l_grad: float
    l_l1: float
    l_total: float


# ---------------------------------------------------------------------------
# Optimizer and schedule

class Adam:
    """Standard Adam with bias correction; state persists across steps."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {p.name!r}")
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.value -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype)


def cosine_lr(step, total_steps, lr0=1e-4, lr_end=1e-5):
    """Cosine decay from lr0 (step 0) to lr_end (step total_steps)."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return lr_end + 0.5 * (lr0 - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 100
    batch: int = 2
    crop: int = 192
    lr0: float = 1e-4
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def with_overrides(self, **kw):
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# Data pipeline

def random_crop_pair(image_a, image_b, size, rng):
    """Aligned random crops of two (h, w) arrays; same window for both."""
    a = np.asarray(image_a)
    b = np.asarray(image_b)
    if a.shape != b.shape or a.ndim != 2:
        raise DataError(f"crop expects two equal (h,w) images, got {a.shape} and {b.shape}")
    h, w = a.shape
    if h < size or w < size:
        raise DataError(f"image {h}x{w} smaller than crop size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return (a[top:top + size, left:left + size].copy(),
            b[top:top + size, left:left + size].copy())


# ---------------------------------------------------------------------------
# Training loop

def train(model, dataset, schedule, steps=None, log_path=None, checkpoint_path=None,
          optimizer=None, rng_seed=None):
    """Optimize `model` on aligned (a, b) image pairs.

    `dataset` is a sequence of (h,w) float pairs in [0,1]. Runs
    `steps` optimizer steps if given, otherwise `schedule.epochs` passes
    over the dataset. Returns the list of per-step LossReport records.
    """
    dataset = list(dataset)
    if not dataset:
        raise DataError("empty dataset")
    cfg = model.config
    rng = np.random.default_rng(cfg.seed if rng_seed is None else rng_seed)
    opt = optimizer or Adam(model.params, schedule.beta1, schedule.beta2, schedule.eps)

    steps_per_epoch = max(1, math.ceil(len(dataset) / schedule.batch))
    total_steps = steps if steps is not None else schedule.epochs * steps_per_epoch
    if total_steps <= 0:
        raise ConfigError("training needs at least one step")

    crop = schedule.crop
    if crop % 8 != 0:
        raise ConfigError(f"crop size must be divisible by 8, got {crop}")

    log = []
    order = []
    for step in range(total_steps):
        batch_a, batch_b = [], []
        for _ in range(schedule.batch):
            if not order:
                order = list(rng.permutation(len(dataset)))
            a, b = dataset[order.pop(0)]
            a, b = random_crop_pair(a, b, crop, rng)
            batch_a.append(a)
            batch_b.append(b)
        arr_a = np.stack(batch_a)[:, None, :, :]
        arr_b = np.stack(batch_b)[:, None, :, :]

        lr = cosine_lr(step, total_steps, schedule.lr0, schedule.lr_end)
        with ad.Tape() as tape:
            ia, ib = ad.constant(arr_a), ad.constant(arr_b)
            fused = model.fuse(ia, ib)
            lt, lg, ll = total_loss(fused, ia, ib)
        if not np.isfinite(lt.value):
            raise NumericError(f"non-finite loss at step {step + 1}")
        model.params.zero_grad()
        ad.backward(tape, lt, model.params)
        opt.step(lr)
        log.append(LossReport(step + 1, lr, float(lg.value), float(ll.value), float(lt.value)))

    if log_path is not None:
        write_training_log(log_path, log)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, opt)
    return log


def write_training_log(path, records):
    import os

    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("step lr l_grad l_l1 l_total\n")
        for r in records:
            fh.write(f"{r.step} {r.lr:.10g} {r.l_grad:.10g} {r.l_l1:.10g} {r.l_total:.10g}\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Checkpoints: one text header line, then the embedding-archive container
# with parameter rows padded to a common width.

def _pack_rows(named_arrays):
    arrays = {name: np.asarray(a, dtype=np.float32).reshape(-1) for name, a in named_arrays}
    width = max((a.size for a in arrays.values()), default=1)
    entries = []
    for name, a in arrays.items():
        row = np.zeros(width, dtype=np.float32)
        row[: a.size] = a
        entries.append((name, row))
    return entries


def save_checkpoint(path, model, optimizer=None):
    named = [(f"param/{p.name}", p.value) for p in model.params]
    if optimizer is not None:
        named += [(f"adam.m/{k}", v) for k, v in optimizer.m.items()]
        named += [(f"adam.v/{k}", v) for k, v in optimizer.v.items()]
        named += [("adam.t", np.array([optimizer.t], dtype=np.float32))]
    blob = dumps_embedding(_pack_rows(named))
    header = f"digest={model.config.digest()}\n".encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + blob)
    import os

    os.replace(tmp, path)


def load_checkpoint(path, model, optimizer=None):
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    if nl < 0 or not data[:nl].startswith(b"digest="):
        raise DataError(f"checkpoint {path} missing config digest header")
    digest = data[7:nl].decode()
    if digest != model.config.digest():
        raise ConfigError(
            f"checkpoint config digest {digest} does not match model {model.config.digest()}")
    table = parse_embedding_blob(data[nl + 1:], origin=path)
    for p in model.params:
        key = f"param/{p.name}"
        if key not in table:
            raise DataError(f"checkpoint {path} missing parameter {p.name!r}")
        p.value[...] = table[key][: p.value.size].reshape(p.value.shape)
    if optimizer is not None:
        for p in model.params:
            mk, vk = f"adam.m/{p.name}", f"adam.v/{p.name}"
            if mk in table:
                optimizer.m[p.name][...] = table[mk][: p.value.size].reshape(p.value.shape)
                optimizer.v[p.name][...] = table[vk][: p.value.size].reshape(p.value.shape)
        if "adam.t" in table:
            optimizer.t = int(table["adam.t"][0])
