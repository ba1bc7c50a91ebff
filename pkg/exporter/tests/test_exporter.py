import struct

import numpy as np
import pytest

from embed_exporter.archive import dump_archive, read_archive, write_archive
from embed_exporter.backends import OfflineImageBackbone, OfflineTextEncoder, make_backends
from embed_exporter.export import (PROJECTION_PREFIX, ManifestError, export,
                                   orthonormal_projection, parse_manifest)


def write_pgm(path, arr):
    data = np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8)
    h, w = data.shape
    path.write_bytes(b"P5\n" + f"{w} {h}\n255\n".encode() + data.tobytes())


def scene(seed, size=64):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 1, (size, size))
    img[10:30, 10:30] = 0.9
    return img


@pytest.fixture
def manifest(tmp_path):
    write_pgm(tmp_path / "vis.pgm", scene(1))
    write_pgm(tmp_path / "ir.pgm", scene(2))
    path = tmp_path / "manifest.txt"
    path.write_text(
        "# exported pairs and prompts\n"
        "infrared and visible image fusion\ttext\tinfrared and visible image fusion\n"
        f"vis|ir\timage\t{tmp_path / 'vis.pgm'},{tmp_path / 'ir.pgm'}\n"
        f"vis-solo\timage\t{tmp_path / 'vis.pgm'}\n")
    return path, tmp_path


class TestManifest:
    def test_parses_entries(self, manifest):
        path, _ = manifest
        entries = parse_manifest(path)
        assert [e[0] for e in entries] == [
            "infrared and visible image fusion", "vis|ir", "vis-solo"]
        assert entries[1][1] == "image"

    def test_missing_image_rejected(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("k\timage\t/nonexistent/img.pgm\n")
        with pytest.raises(ManifestError):
            parse_manifest(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("k\ttext\ta\nk\ttext\tb\n")
        with pytest.raises(ManifestError):
            parse_manifest(path)

    def test_bad_kind_rejected(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("k\taudio\tx\n")
        with pytest.raises(ManifestError):
            parse_manifest(path)

    def test_reserved_key_rejected(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("__proj\ttext\tx\n")
        with pytest.raises(ManifestError):
            parse_manifest(path)


class TestArchive:
    def test_round_trip(self, tmp_path):
        entries = [("a", np.arange(4, dtype=np.float32)),
                   ("b", np.ones(4, dtype=np.float32))]
        path = tmp_path / "x.upemb"
        write_archive(path, entries)
        table = read_archive(path)
        assert np.array_equal(table["a"], entries[0][1])
        assert np.array_equal(table["b"], entries[1][1])

    def test_magic_and_layout(self):
        blob = dump_archive([("k", np.zeros(2, dtype=np.float32))])
        assert blob[:6] == b"UPEMB1"
        dim, count = struct.unpack_from("<II", blob, 6)
        assert (dim, count) == (2, 1)


class TestOfflineBackends:
    def test_image_features_deterministic_and_content_sensitive(self):
        backend = OfflineImageBackbone(seed=0)
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, (3, 224, 224)).astype(np.float32)
        f1, f2 = backend.features(x), backend.features(x.copy())
        assert np.array_equal(f1, f2)
        assert f1.size == backend.feature_dim
        y = x + 0.1
        assert not np.array_equal(backend.features(y), f1)

    def test_text_encoder_deterministic(self):
        enc = OfflineTextEncoder(seed=0)
        v1 = enc.encode("some prompt")
        v2 = enc.encode("some prompt")
        assert np.array_equal(v1, v2)
        assert v1.size == 512
        assert not np.array_equal(v1, enc.encode("another prompt"))

    def test_unknown_backend_kind(self):
        with pytest.raises(ValueError):
            make_backends("quantum")


class TestProjection:
    def test_orthonormal_columns(self):
        proj = orthonormal_projection(1024)
        gram = proj.T @ proj
        assert np.allclose(gram, np.eye(512), atol=1e-3)

    def test_fixed_seed_reproducible(self):
        assert np.array_equal(orthonormal_projection(1024), orthonormal_projection(1024))


class TestExport:
    def test_export_writes_all_entries(self, manifest, tmp_path):
        path, _ = manifest
        out = tmp_path / "out.upemb"
        image_b, text_b = make_backends("offline")
        written, failures = export(parse_manifest(path), out, image_b, text_b)
        assert failures == []
        table = read_archive(out)
        assert len(written) == 3
        for key in written:
            assert table[key].size == 512
        proj_rows = [k for k in table if k.startswith(PROJECTION_PREFIX)]
        assert len(proj_rows) == image_b.feature_dim

    def test_repeated_export_byte_identical(self, manifest, tmp_path):
        path, _ = manifest
        image_b, text_b = make_backends("offline")
        blobs = []
        for name in ("o1.upemb", "o2.upemb"):
            out = tmp_path / name
            export(parse_manifest(path), out, image_b, text_b)
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]

    def test_unreadable_image_aborts_without_keep_partial(self, tmp_path):
        good = tmp_path / "good.pgm"
        write_pgm(good, scene(4))
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"P5\n4 4\n255\n")  # truncated
        entries = [("ok", "image", str(good)), ("broken", "image", str(bad))]
        out = tmp_path / "x.upemb"
        image_b, text_b = make_backends("offline")
        with pytest.raises(Exception):
            export(entries, out, image_b, text_b, keep_partial=False)

    def test_keep_partial_writes_remaining(self, tmp_path):
        good = tmp_path / "good.pgm"
        write_pgm(good, scene(5))
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"P5\n4 4\n255\n")
        entries = [("broken", "image", str(bad)), ("ok", "image", str(good))]
        out = tmp_path / "partial.upemb"
        image_b, text_b = make_backends("offline")
        written, failures = export(entries, out, image_b, text_b, keep_partial=True)
        assert written == ["ok"]
        assert failures and failures[0][0] == "broken"
        assert "ok" in read_archive(out)


class TestCli:
    def test_cli_offline_export(self, manifest, tmp_path, capsys):
        from embed_exporter.cli import main

        path, _ = manifest
        out = tmp_path / "cli.upemb"
        assert main(["export", "--manifest", str(path), "--out", str(out),
                     "--backend", "offline"]) == 0
        assert "wrote 3 embeddings" in capsys.readouterr().out

    def test_cli_bad_manifest_exit2(self, tmp_path, capsys):
        from embed_exporter.cli import main

        bad = tmp_path / "bad.txt"
        bad.write_text("only-two-fields\ttext\n")
        assert main(["export", "--manifest", str(bad), "--out", str(tmp_path / "x.upemb"),
                     "--backend", "offline"]) == 2


class TestSecondaryAcceptance:
    def test_round_trip_into_primary_and_fuse(self, tmp_path, capsys):
        """Exported archive (>=1 text, >=1 image entry) parses in the
        fusion package, vectors are 512-dim, repeated export is
        byte-identical, and an end-to-end CLI fuse with the file
        providers succeeds."""
        mmfuse_providers = pytest.importorskip("mmfuse.providers")
        from mmfuse import cli as fusion_cli
        from mmfuse.imageio import save_nfi

        import time
        start = time.perf_counter()

        rng = np.random.default_rng(9)
        vis = np.clip(scene(6) + 0.05 * rng.standard_normal((64, 64)), 0, 1)
        ir = np.clip(1.0 - scene(6) * 0.8, 0, 1)
        write_pgm(tmp_path / "vis.pgm", vis)
        write_pgm(tmp_path / "ir.pgm", ir)

        manifest = tmp_path / "m.txt"
        manifest.write_text(
            "infrared and visible image fusion\ttext\tinfrared and visible image fusion\n"
            f"vis|ir\timage\t{tmp_path / 'vis.pgm'},{tmp_path / 'ir.pgm'}\n")

        from embed_exporter.cli import main as export_main
        archives = []
        for name in ("e1.upemb", "e2.upemb"):
            out = tmp_path / name
            assert export_main(["export", "--manifest", str(manifest), "--out", str(out),
                                "--backend", "offline"]) == 0
            archives.append(out.read_bytes())
        assert archives[0] == archives[1]

        table = mmfuse_providers.load_embedding_file(tmp_path / "e1.upemb")
        assert table["infrared and visible image fusion"].size == 512
        assert table["vis|ir"].size == 512

        config = tmp_path / "desk.cfg"
        config.write_text(
            "seed = 4\n"
            "prompt = infrared and visible image fusion\n"
            f"semantic_file = {tmp_path / 'e1.upemb'}\n"
            f"text_file = {tmp_path / 'e1.upemb'}\n"
            f"semantic_key = vis|ir\n")
        save_nfi(tmp_path / "vis.nfi", vis[None].astype(np.float32))
        save_nfi(tmp_path / "ir.nfi", ir[None].astype(np.float32))
        fused_path = tmp_path / "fused.nfi"
        assert fusion_cli.main(["fuse", "--a", str(tmp_path / "vis.nfi"),
                                "--b", str(tmp_path / "ir.nfi"),
                                "--out", str(fused_path), "--config", str(config)]) == 0
        assert fused_path.exists()
        elapsed = time.perf_counter() - start
        print(f"PASS: exporter round trip into fusion package ({elapsed:.1f}s)")
        assert elapsed < 120.0
