"""Offline exporter: pretrained image/text features into the fusion
embedding archive format (512-dim vectors, binary container)."""

from .archive import dump_archive, read_archive, write_archive
from .backends import ModelWeightsError, make_backends
from .export import EntryError, ManifestError, export, orthonormal_projection, parse_manifest

__version__ = "0.1.0"
