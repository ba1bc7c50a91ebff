import numpy as np
import pytest

from mmfuse import imageio as io


class TestNfi:
    def test_round_trip_bit_exact(self, tmp_path):
        arr = np.random.default_rng(0).uniform(-10, 10, (3, 8, 6)).astype(np.float32)
        path = tmp_path / "x.nfi"
        io.save_nfi(path, arr)
        back = io.load_nfi(path)
        assert back.tobytes() == arr.tobytes()

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "t.nfi"
        io.save_nfi(path, np.zeros((1, 4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(io.ImageFormatError):
            io.load_nfi(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.nfi"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(io.ImageFormatError):
            io.load_nfi(path)


class TestPnm:
    def test_pgm_round_trip_on_representable_levels(self, tmp_path):
        levels = np.arange(256, dtype=np.float32).reshape(16, 16) / 255.0
        path = tmp_path / "g.pgm"
        io.save_pnm(path, levels[None])
        back = io.load_pnm(path)
        assert back.shape == (1, 16, 16)
        assert np.array_equal(back, levels[None])

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = (rng.integers(0, 256, (3, 5, 7)).astype(np.float32)) / 255.0
        path = tmp_path / "c.ppm"
        io.save_pnm(path, img)
        assert np.array_equal(io.load_pnm(path), img)

    def test_endpoint_mapping(self, tmp_path):
        img = np.array([[0.0, 1.0]], dtype=np.float32)[None]
        path = tmp_path / "e.pgm"
        io.save_pnm(path, img)
        raw = path.read_bytes()
        assert raw.endswith(bytes([0, 255]))
        back = io.load_pnm(path)
        assert back[0, 0, 0] == 0.0 and back[0, 0, 1] == 1.0

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "h.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x00\xff")
        img = io.load_pnm(path)
        assert img.shape == (1, 1, 2)

    def test_unsupported_maxval(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n2 1\n65535\n\x00\x00\x00\x00")
        with pytest.raises(io.ImageFormatError):
            io.load_pnm(path)


class TestColor:
    def test_bt601_red_luma(self):
        rgb = np.zeros((3, 1, 1), dtype=np.float32)
        rgb[0] = 1.0
        ycc = io.rgb_to_ycbcr(rgb)
        assert ycc[0, 0, 0] == pytest.approx(0.299, abs=1e-6)

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        rgb = rng.uniform(0, 1, (3, 6, 6)).astype(np.float32)
        back = io.ycbcr_to_rgb(io.rgb_to_ycbcr(rgb))
        assert np.allclose(back, rgb, atol=1e-5)

    def test_load_gray_uses_luma(self, tmp_path):
        rgb = np.zeros((3, 4, 4), dtype=np.float32)
        rgb[1] = 1.0  # pure green
        path = tmp_path / "g.ppm"
        io.save_pnm(path, rgb)
        gray = io.load_gray(path)
        assert gray.shape == (4, 4)
        assert np.allclose(gray, 0.587, atol=2e-3)


class TestPadding:
    def test_pad_to_multiple_and_crop_back(self):
        img = np.random.default_rng(3).uniform(0, 1, (30, 37))
        padded, size = io.pad_to_multiple(img, 8)
        assert padded.shape == (32, 40)
        assert np.array_equal(io.crop_to(padded, size), img)

    def test_already_aligned_untouched(self):
        img = np.random.default_rng(4).uniform(0, 1, (32, 32))
        padded, size = io.pad_to_multiple(img, 8)
        assert padded is img


class TestPng:
    def test_round_trip_when_pillow_available(self, tmp_path):
        pytest.importorskip("PIL")
        rng = np.random.default_rng(5)
        img = (rng.integers(0, 256, (3, 6, 8)).astype(np.float32)) / 255.0
        path = tmp_path / "c.png"
        io.save_png(path, img)
        assert np.array_equal(io.load_png(path), img)


class TestDispatch:
    def test_unknown_extension(self, tmp_path):
        with pytest.raises(io.ImageFormatError):
            io.load_image(tmp_path / "x.bmp")

    def test_missing_file(self, tmp_path):
        with pytest.raises(io.ImageFormatError):
            io.load_image(tmp_path / "nope.pgm")

    def test_no_partial_output_on_save(self, tmp_path):
        # atomic rename: a failed save must not leave the target file
        path = tmp_path / "out.pgm"
        with pytest.raises(io.ImageFormatError):
            io.save_pnm(path, np.zeros((2, 4, 4), dtype=np.float32))  # 2 channels invalid
        assert not path.exists()
