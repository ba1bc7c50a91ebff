"""Finite-difference gradient suite.

Two layers of checking: a per-op screen that validates every registered
backward rule on tiny random inputs, and composite checks that push
central differences through the channel modules, the encoder, the
decoder and both losses at desk scale (index selections and provider
embeddings frozen, float64 shadow evaluation).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, grad_check
from .blocks import Initializer
from .model import LEVELS, FusionConfig, FusionModel
from .modulation import GlobalAffineModulation
from .perturbation import TextGuidedPerturbation
from .providers import EmbeddingVector, StubTextProvider
from .pruning import SemanticChannelPruning
from .training import grad_loss, l1_loss

TOLERANCE = 1e-3
FD_EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self):
        return self.worst <= self.tolerance


@contextmanager
def corrupted_backward(op):
    """Test fixture: scale the named op's backward output by 1.5."""
    ad._CORRUPTED_OPS.add(op)
    try:
        yield
    finally:
        ad._CORRUPTED_OPS.discard(op)


def _probe(out, rng_key):
    """Scalar probe with distinct per-coordinate weights."""
    r = np.random.default_rng(rng_key).uniform(0.5, 1.5, size=out.shape).astype(np.float32)
    return ad.sum_all(ad.mul(out, ad.constant(r)))


def _param(store, name, rng, shape, low=-1.0, high=1.0):
    return store.create(name, rng.uniform(low, high, size=shape).astype(np.float32))


# ---------------------------------------------------------------------------
# Per-op screen

def _op_cases():
    """op name -> (store, fn) builders on tiny tensors."""
    cases = {}

    def case(name):
        def wrap(builder):
            cases[name] = builder
            return builder
        return wrap

    @case("add")
    def _add():
        store, rng = ParamStore(), np.random.default_rng(1)
        x = _param(store, "x", rng, (1, 4, 3, 3))
        y = _param(store, "y", rng, (1, 4, 1, 1))
        return store, lambda t: _probe(ad.add(t.watch(x), t.watch(y)), 11)

    @case("sub")
    def _sub():
        store, rng = ParamStore(), np.random.default_rng(2)
        x = _param(store, "x", rng, (1, 4, 3, 3))
        y = _param(store, "y", rng, (1, 4, 3, 3))
        return store, lambda t: _probe(ad.sub(t.watch(x), t.watch(y)), 12)

    @case("mul")
    def _mul():
        store, rng = ParamStore(), np.random.default_rng(3)
        x = _param(store, "x", rng, (2, 4, 3, 3))
        y = _param(store, "y", rng, (1, 4, 1, 1))
        return store, lambda t: _probe(ad.mul(t.watch(x), t.watch(y)), 13)

    @case("maximum")
    def _maximum():
        store, rng = ParamStore(), np.random.default_rng(4)
        base = rng.uniform(-1, 1, size=(1, 4, 3, 3)).astype(np.float32)
        gap = (rng.uniform(0.3, 1.0, size=base.shape) *
               rng.choice([-1.0, 1.0], size=base.shape)).astype(np.float32)
        x = store.create("x", base)
        y = store.create("y", base + gap)
        return store, lambda t: _probe(ad.maximum(t.watch(x), t.watch(y)), 14)

    @case("relu")
    def _relu():
        store, rng = ParamStore(), np.random.default_rng(5)
        vals = (rng.uniform(0.25, 1.0, size=(1, 4, 3, 3)) *
                rng.choice([-1.0, 1.0], size=(1, 4, 3, 3))).astype(np.float32)
        x = store.create("x", vals)
        return store, lambda t: _probe(ad.relu(t.watch(x)), 15)

    @case("sigmoid")
    def _sigmoid():
        store, rng = ParamStore(), np.random.default_rng(6)
        x = _param(store, "x", rng, (1, 4, 3, 3), -2, 2)
        return store, lambda t: _probe(ad.sigmoid(t.watch(x)), 16)

    @case("tanh")
    def _tanh():
        store, rng = ParamStore(), np.random.default_rng(7)
        x = _param(store, "x", rng, (1, 4, 3, 3), -2, 2)
        return store, lambda t: _probe(ad.tanh(t.watch(x)), 17)

    @case("abs")
    def _abs():
        store, rng = ParamStore(), np.random.default_rng(8)
        vals = (rng.uniform(0.25, 1.0, size=(1, 4, 3, 3)) *
                rng.choice([-1.0, 1.0], size=(1, 4, 3, 3))).astype(np.float32)
        x = store.create("x", vals)
        return store, lambda t: _probe(ad.absolute(t.watch(x)), 18)

    @case("rsqrt")
    def _rsqrt():
        store, rng = ParamStore(), np.random.default_rng(9)
        x = _param(store, "x", rng, (1, 4, 2, 2), 0.5, 2.0)
        return store, lambda t: _probe(ad.rsqrt(t.watch(x)), 19)

    @case("sum_all")
    def _sum_all():
        store, rng = ParamStore(), np.random.default_rng(10)
        x = _param(store, "x", rng, (1, 3, 3, 3))
        return store, lambda t: ad.sum_all(ad.mul(t.watch(x), t.watch(x)))

    @case("mean_all")
    def _mean_all():
        store, rng = ParamStore(), np.random.default_rng(11)
        x = _param(store, "x", rng, (1, 3, 3, 3))
        return store, lambda t: ad.mean_all(ad.mul(t.watch(x), t.watch(x)))

    @case("spatial_mean")
    def _spatial_mean():
        store, rng = ParamStore(), np.random.default_rng(12)
        x = _param(store, "x", rng, (2, 3, 4, 4))
        return store, lambda t: _probe(ad.global_avg_pool(t.watch(x)), 20)

    @case("reshape")
    def _reshape():
        store, rng = ParamStore(), np.random.default_rng(13)
        x = _param(store, "x", rng, (1, 4, 2, 2))
        return store, lambda t: _probe(ad.reshape(t.watch(x), (1, 2, 2, 4)), 21)

    @case("concat_ch")
    def _concat():
        store, rng = ParamStore(), np.random.default_rng(14)
        x = _param(store, "x", rng, (1, 2, 3, 3))
        y = _param(store, "y", rng, (1, 3, 3, 3))
        return store, lambda t: _probe(ad.concat_channels(t.watch(x), t.watch(y)), 22)

    @case("slice_ch")
    def _slice():
        store, rng = ParamStore(), np.random.default_rng(15)
        x = _param(store, "x", rng, (1, 6, 3, 3))
        return store, lambda t: _probe(ad.slice_channels(t.watch(x), 1, 4), 23)

    @case("gather_ch")
    def _gather():
        store, rng = ParamStore(), np.random.default_rng(16)
        x = _param(store, "x", rng, (1, 5, 3, 3))
        # duplicated index exercises gradient accumulation
        return store, lambda t: _probe(ad.gather_channels(t.watch(x), [4, 0, 0, 2]), 24)

    @case("transpose_last2")
    def _transpose():
        store, rng = ParamStore(), np.random.default_rng(17)
        x = _param(store, "x", rng, (1, 2, 3, 4))
        return store, lambda t: _probe(ad.transpose_last2(t.watch(x)), 25)

    @case("nearest_up2")
    def _up2():
        store, rng = ParamStore(), np.random.default_rng(18)
        x = _param(store, "x", rng, (1, 3, 2, 2))
        return store, lambda t: _probe(ad.nearest_upsample2(t.watch(x)), 26)

    @case("pad_reflect1")
    def _pad():
        store, rng = ParamStore(), np.random.default_rng(19)
        x = _param(store, "x", rng, (1, 2, 4, 4))
        return store, lambda t: _probe(ad.pad_reflect1(t.watch(x)), 27)

    @case("matmul")
    def _matmul():
        store, rng = ParamStore(), np.random.default_rng(20)
        a = _param(store, "a", rng, (1, 2, 3, 4))
        b = _param(store, "b", rng, (1, 2, 4, 5))
        return store, lambda t: _probe(ad.matmul(t.watch(a), t.watch(b)), 28)

    @case("linear")
    def _linear():
        store, rng = ParamStore(), np.random.default_rng(21)
        x = _param(store, "x", rng, (2, 6))
        w = _param(store, "w", rng, (4, 6))
        b = _param(store, "b", rng, (4,))
        return store, lambda t: _probe(ad.linear(t.watch(x), t.watch(w), t.watch(b)), 29)

    @case("softmax_last")
    def _softmax():
        store, rng = ParamStore(), np.random.default_rng(22)
        x = _param(store, "x", rng, (1, 2, 3, 5), -2, 2)
        return store, lambda t: _probe(ad.softmax_lastdim(t.watch(x)), 30)

    @case("l2norm_last")
    def _l2norm():
        store, rng = ParamStore(), np.random.default_rng(23)
        x = _param(store, "x", rng, (1, 2, 3, 5))
        return store, lambda t: _probe(ad.l2_normalize_lastdim(t.watch(x)), 31)

    @case("conv1x1")
    def _conv1x1():
        store, rng = ParamStore(), np.random.default_rng(24)
        x = _param(store, "x", rng, (1, 3, 4, 4))
        w = _param(store, "w", rng, (5, 3))
        b = _param(store, "b", rng, (5,))
        return store, lambda t: _probe(ad.conv1x1(t.watch(x), t.watch(w), t.watch(b)), 32)

    @case("conv3x3")
    def _conv3x3():
        store, rng = ParamStore(), np.random.default_rng(25)
        x = _param(store, "x", rng, (1, 3, 5, 5))
        w = _param(store, "w", rng, (4, 3, 3, 3))
        b = _param(store, "b", rng, (4,))

        def fn(t):
            y1 = ad.conv3x3(t.watch(x), t.watch(w), t.watch(b), stride=1)
            y2 = ad.conv3x3(t.watch(x), t.watch(w), t.watch(b), stride=2)
            return ad.add(_probe(y1, 33), _probe(y2, 34))
        return store, fn

    return cases


def check_op(name):
    store, fn = _op_cases()[name]()
    return grad_check(lambda: fn(ad.active_tape()), store,
                      eps=FD_EPS, max_coords_per_param=3, seed=100)


# ---------------------------------------------------------------------------
# Composite module checks

def check_pruning(seed=0):
    store = ParamStore()
    init = Initializer(seed)
    rng = np.random.default_rng(seed + 50)
    module = SemanticChannelPruning(store, "p", 8, init, 0.7)
    x = rng.uniform(0, 1, size=(1, 8, 8, 8)).astype(np.float32)
    emb = EmbeddingVector(rng.uniform(-1, 1, size=512).astype(np.float32), "stub")
    plan = {}

    def fn():
        fa, fb, _ = module(ad.constant(x), emb, plan)
        return _probe(ad.concat_channels(fa, fb), 41)

    return grad_check(fn, store, eps=FD_EPS, max_coords_per_param=3, seed=101)


def check_modulation(seed=0):
    store = ParamStore()
    init = Initializer(seed)
    rng = np.random.default_rng(seed + 51)
    module = GlobalAffineModulation(store, "g", 8, init)
    fused = rng.uniform(-1, 1, size=(1, 8, 6, 6)).astype(np.float32)
    original = rng.uniform(-1, 1, size=(1, 8, 6, 6)).astype(np.float32)
    # zero-init head has zero gradient through relu at exactly zero; nudge it
    store["g.fc2.weight"].value[...] = rng.uniform(
        -0.1, 0.1, size=store["g.fc2.weight"].value.shape).astype(np.float32)

    def fn():
        return _probe(module(ad.constant(fused), ad.constant(original)), 42)

    return grad_check(fn, store, eps=FD_EPS, max_coords_per_param=3, seed=102)


def check_perturbation(seed=0):
    store = ParamStore()
    init = Initializer(seed)
    rng = np.random.default_rng(seed + 52)
    module = TextGuidedPerturbation(store, "t", 16, 2, init, 0.5)
    fa = rng.uniform(0, 1, size=(1, 8, 4, 4)).astype(np.float32)
    fb = rng.uniform(0, 1, size=(1, 8, 4, 4)).astype(np.float32)
    emb = StubTextProvider(seed).text_vector("module check prompt")
    plan = {}

    def fn():
        return _probe(module(ad.constant(fa), ad.constant(fb), emb, plan), 43)

    return grad_check(fn, store, eps=FD_EPS, max_coords_per_param=3, seed=103)


def _subsample(names, limit):
    if len(names) <= limit:
        return names
    stride = len(names) / limit
    return [names[int(i * stride)] for i in range(limit)]


def _warm_zero_projections(model, seed=123):
    """Fill the zero-initialized output projections with small values.

    At init those projections gate off every residual branch, which
    leaves many gradients near the 1e-8 relative-error floor where
    finite differences are pure noise; warming them makes the composite
    checks exercise real gradient paths.
    """
    rng = np.random.default_rng(seed)
    for p in model.params:
        if p.value.ndim >= 2 and not p.value.any():
            fan_in = int(np.prod(p.value.shape[1:]))
            s = 0.3 / np.sqrt(max(fan_in, 1))
            p.value[...] = rng.uniform(-s, s, size=p.value.shape).astype(np.float32)


def _model_fixture(config, size=16):
    model = FusionModel(config)
    _warm_zero_projections(model)
    rng = np.random.default_rng(config.seed + 99)
    a = rng.uniform(0, 1, size=(1, 1, size, size)).astype(np.float32)
    b = rng.uniform(0, 1, size=(1, 1, size, size)).astype(np.float32)
    return model, a, b


def check_encoder(config=None, name_limit=24):
    config = config or FusionConfig.desk()
    model, a, b = _model_fixture(config)
    plan = {}

    def fn():
        state = model.encode(ad.constant(a), ad.constant(b), plan=plan)
        return _probe(state.bottleneck, 44)

    prefixes = ("stem", "prune", "affine", "enc", "down", f"mix{LEVELS - 1}")
    names = [n for n in model.params.names() if n.startswith(prefixes)]
    return grad_check(fn, model.params, eps=FD_EPS, max_coords_per_param=2,
                      seed=104, param_names=_subsample(names, name_limit))


def check_decoder(config=None, name_limit=24):
    config = config or FusionConfig.desk()
    model, a, b = _model_fixture(config)
    plan = {}

    def fn():
        out = model.fuse(ad.constant(a), ad.constant(b), plan=plan)
        return _probe(out, 45)

    prefixes = tuple(["dec", "up", "head"] + [f"mix{i}" for i in range(LEVELS - 1)])
    names = [n for n in model.params.names() if n.startswith(prefixes)]
    return grad_check(fn, model.params, eps=FD_EPS, max_coords_per_param=2,
                      seed=105, param_names=_subsample(names, name_limit))


def _check_loss(kind, config=None, name_limit=16):
    config = config or FusionConfig.desk()
    model, a, b = _model_fixture(config)
    plan = {}
    loss_fn = grad_loss if kind == "grad" else l1_loss

    def fn():
        ia, ib = ad.constant(a), ad.constant(b)
        return loss_fn(model.fuse(ia, ib, plan=plan), ia, ib)

    names = _subsample(model.params.names(), name_limit)
    return grad_check(fn, model.params, eps=FD_EPS, max_coords_per_param=2,
                      seed=106, param_names=names)


def check_grad_loss(config=None):
    return _check_loss("grad", config)


def check_l1_loss(config=None):
    return _check_loss("l1", config)


# ---------------------------------------------------------------------------
# Suite

MODULE_CHECKS = (
    ("pruning", lambda cfg: check_pruning(cfg.seed)),
    ("modulation", lambda cfg: check_modulation(cfg.seed)),
    ("perturbation", lambda cfg: check_perturbation(cfg.seed)),
    ("encoder", check_encoder),
    ("decoder", check_decoder),
    ("grad_loss", check_grad_loss),
    ("l1_loss", check_l1_loss),
)


def run_suite(config=None, include_ops=True):
    config = config or FusionConfig.desk()
    results = []
    if include_ops:
        for op in sorted(_op_cases()):
            results.append(CheckResult(f"op:{op}", check_op(op), TOLERANCE))
    for name, fn in MODULE_CHECKS:
        results.append(CheckResult(name, fn(config), TOLERANCE))
    return results
