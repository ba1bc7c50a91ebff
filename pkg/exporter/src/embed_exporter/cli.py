"""Command line: export embeddings described by a manifest file."""

from __future__ import annotations

import argparse
import sys

from .backends import ModelWeightsError, make_backends
from .export import ManifestError, export, parse_manifest


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="embed-exporter",
        description="export image/text embeddings to a fusion archive")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="encode manifest entries into an archive")
    p.add_argument("--manifest", required=True,
                   help="text file, one '<key>\\t<kind>\\t<source>' per line")
    p.add_argument("--out", required=True)
    p.add_argument("--keep-partial", action="store_true",
                   help="write the archive even if some entries fail")
    p.add_argument("--backend", choices=("pretrained", "offline"), default="pretrained")
    p.add_argument("--seed", type=int, default=0, help="seed for the offline backend")
    args = parser.parse_args(argv)

    try:
        entries = parse_manifest(args.manifest)
        image_backend, text_backend = make_backends(args.backend, args.seed)
        written, failures = export(entries, args.out, image_backend, text_backend,
                                   keep_partial=args.keep_partial)
    except (ManifestError, ModelWeightsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for key, reason in failures:
        print(f"skipped {key}: {reason}", file=sys.stderr)
    print(f"wrote {len(written)} embeddings -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
