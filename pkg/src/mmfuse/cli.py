"""Command-line surface: fuse / train / eval / gradcheck / selftest.

Configuration lives in a flat key=value text file ('#' starts a comment;
unknown keys are rejected). Every command prints the fully resolved
configuration and its digest, so runs are attributable. Exit codes:
0 success, 1 check failure, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import checks, imageio, metrics, training
from .model import SPATIAL_MULTIPLE, ConfigError, FusionConfig, FusionModel, InputSizeError
from .providers import FileSemanticProvider, FileTextProvider

_BOOL_KEYS = ("use_pruning", "use_modulation", "use_perturbation",
              "use_pruning_attention", "use_perturbation_attention",
              "use_semantic_guide")
_INT_KEYS = ("base_channels", "seed")
_TUPLE_KEYS = ("enc_blocks", "dec_blocks", "heads")
_FLOAT_KEYS = ("prune_keep_ratio", "select_keep_ratio")
_STR_KEYS = ("prompt",)
_PATH_KEYS = ("checkpoint", "semantic_file", "text_file", "semantic_key",
              "data_a", "data_b")

KNOWN_KEYS = set(_BOOL_KEYS + _INT_KEYS + _TUPLE_KEYS + _FLOAT_KEYS + _STR_KEYS + _PATH_KEYS)


class UsageError(ValueError):
    pass


def parse_config_file(path):
    """Flat key=value lines, '#' comments; unknown keys rejected."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in KNOWN_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in values:
                raise UsageError(f"{path}:{lineno}: duplicate config key {key!r}")
            values[key] = val
    return values


def _parse_bool(key, val):
    low = val.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"config key {key}: expected a boolean, got {val!r}")


def config_from_mapping(values):
    kwargs = {}
    for key, val in values.items():
        if key in _PATH_KEYS:
            continue
        if key in _BOOL_KEYS:
            kwargs[key] = _parse_bool(key, val)
        elif key in _INT_KEYS:
            kwargs[key] = int(val)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(val)
        elif key in _TUPLE_KEYS:
            kwargs[key] = tuple(int(tok) for tok in val.split(",") if tok.strip())
        else:
            kwargs[key] = val
    return FusionConfig.desk(**kwargs)


def _load_setup(args):
    values = parse_config_file(args.config) if args.config else {}
    config = config_from_mapping(values)
    if getattr(args, "prompt", None):
        config = FusionConfig.desk(**{**config.__dict__, "prompt": args.prompt})
    config.validate()
    paths = {k: values.get(k) for k in _PATH_KEYS}
    if getattr(args, "checkpoint", None):
        paths["checkpoint"] = args.checkpoint
    return config, paths


def _print_resolved(config, paths):
    print(f"config digest: {config.digest()}")
    for key, val in sorted(config.__dict__.items()):
        print(f"  {key} = {val}")
    for key, val in sorted(paths.items()):
        if val:
            print(f"  {key} = {val}")


def _build_model(config, paths):
    semantic = FileSemanticProvider(paths["semantic_file"]) if paths.get("semantic_file") else None
    text = FileTextProvider(paths["text_file"]) if paths.get("text_file") else None
    model = FusionModel(config, semantic, text)
    if paths.get("checkpoint"):
        training.load_checkpoint(paths["checkpoint"], model)
    return model


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


# ---------------------------------------------------------------------------
# Commands

def cmd_fuse(args):
    config, paths = _load_setup(args)
    _print_resolved(config, paths)
    img_a = imageio.load_image(args.a)
    img_b = imageio.load_image(args.b)
    if img_a.shape[1:] != img_b.shape[1:]:
        raise UsageError(
            f"input sizes differ: {img_a.shape[1:]} vs {img_b.shape[1:]}")

    def split_color(img):
        if img.shape[0] == 3:
            ycc = imageio.rgb_to_ycbcr(img)
            return ycc[0], ycc[1:]
        return img[0], None

    y_a, chroma_a = split_color(img_a)
    y_b, chroma_b = split_color(img_b)
    chroma = chroma_a if chroma_a is not None else chroma_b

    model = _build_model(config, paths)
    semantic_key = paths.get("semantic_key") or f"{_stem(args.a)}|{_stem(args.b)}"

    pad_a, size = imageio.pad_to_multiple(y_a, SPATIAL_MULTIPLE)
    pad_b, _ = imageio.pad_to_multiple(y_b, SPATIAL_MULTIPLE)
    start = time.perf_counter()
    fused = model.fuse_arrays(pad_a[None, None], pad_b[None, None],
                              prompt=args.prompt, semantic_key=semantic_key)
    elapsed = time.perf_counter() - start
    fused_y = imageio.crop_to(fused[0, 0], size)

    if chroma is not None and os.path.splitext(args.out)[1].lower() in (".ppm", ".png", ".nfi"):
        out = imageio.ycbcr_to_rgb(np.stack([fused_y, chroma[0], chroma[1]]))
    else:
        out = fused_y[None]
    imageio.save_image(args.out, out)
    print(f"fused {size[0]}x{size[1]} in {elapsed:.3f}s -> {args.out}")
    return 0


def cmd_train(args):
    config, paths = _load_setup(args)
    _print_resolved(config, paths)
    dir_a = args.data_a or paths.get("data_a")
    dir_b = args.data_b or paths.get("data_b")
    if not dir_a or not dir_b:
        raise UsageError("training needs --data-a and --data-b directories")

    def listing(d):
        return {_stem(n): os.path.join(d, n) for n in sorted(os.listdir(d))
                if os.path.splitext(n)[1].lower() in (".nfi", ".pgm", ".ppm", ".png")}

    la, lb = listing(dir_a), listing(dir_b)
    common = sorted(set(la) & set(lb))
    if not common:
        raise training.DataError("no matching image stems between the two data directories")
    dataset = [(imageio.load_gray(la[s]), imageio.load_gray(lb[s])) for s in common]

    schedule = training.TrainSchedule(
        epochs=args.epochs, batch=args.batch, crop=args.crop,
        lr0=args.lr0, lr_end=args.lr_end)
    model = _build_model(config, paths)
    log = training.train(model, dataset, schedule, steps=args.steps,
                         log_path=args.log, checkpoint_path=args.out)
    first, last = log[0], log[-1]
    print(f"trained {len(log)} steps: loss {first.l_total:.5f} -> {last.l_total:.5f}")
    print(f"checkpoint -> {args.out}")
    return 0


def cmd_eval(args):
    config, paths = _load_setup(args)
    print(f"config digest: {config.digest()}")
    report = metrics.eval_dir(args.dir_a, args.dir_b, args.dir_f, report_path=args.report)
    print(report.format_table())
    if args.report:
        print(f"report -> {args.report}")
    return 0


def cmd_gradcheck(args):
    config, paths = _load_setup(args)
    _print_resolved(config, paths)
    results = checks.run_suite(config, include_ops=not args.skip_ops)
    failures = []
    for r in results:
        marker = "PASS" if r.passed else "FAIL"
        print(f"{marker} {r.name:<22} worst={r.worst:.3e} tol={r.tolerance:.0e}")
        if not r.passed:
            failures.append(r.name)
    if failures:
        print(f"gradient check FAILED for: {', '.join(failures)}")
        return 1
    print("all gradient checks passed")
    return 0


def cmd_selftest(args):
    from . import autodiff as ad

    config = FusionConfig.desk()
    print(f"config digest: {config.digest()}")
    model = FusionModel(config)
    rng = np.random.default_rng(7)
    a = rng.uniform(0, 1, size=(1, 1, 32, 32)).astype(np.float32)
    b = rng.uniform(0, 1, size=(1, 1, 32, 32)).astype(np.float32)

    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        if not ok:
            failures.append(name)

    with ad.Tape() as tape:
        out = model.fuse(ad.constant(a), ad.constant(b))
    check("output shape matches input", out.value.shape == a.shape)
    check("output in [0,1]", bool((out.value >= 0).all() and (out.value <= 1).all()))
    check("tape replay is bit-exact", tape.replay() == 0.0)
    out2 = FusionModel(config).fuse_arrays(a, b)
    check("deterministic rebuild", np.array_equal(out.value, out2))
    with ad.Tape():
        ia, ib = ad.constant(a), ad.constant(b)
        lt, lg, ll = training.total_loss(ia, ia, ia)
    check("losses vanish at F=A=B", float(lt.value) == 0.0)
    return 1 if failures else 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmfuse",
        description="multi-modality image fusion: fuse, train, evaluate, gradcheck")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse two aligned images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--prompt")
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("train", help="train on aligned image pair directories")
    p.add_argument("--config", required=True)
    p.add_argument("--data-a")
    p.add_argument("--data-b")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--crop", type=int, default=192)
    p.add_argument("--lr0", type=float, default=1e-4)
    p.add_argument("--lr-end", type=float, default=1e-5)
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run the five fusion metrics over directories")
    p.add_argument("--dir-a", required=True)
    p.add_argument("--dir-b", required=True)
    p.add_argument("--dir-f", required=True)
    p.add_argument("--report")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config")
    p.add_argument("--skip-ops", action="store_true",
                   help="skip the per-op screen, run composite checks only")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("selftest", help="fast structural sanity checks")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, InputSizeError, imageio.ImageFormatError,
            metrics.DataError, training.DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
