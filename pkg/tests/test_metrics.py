import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

import oracles as orc
from conftest import synthetic_scene
from mmfuse import metrics as M
from mmfuse.imageio import save_nfi
from mmfuse.metrics import DataError


def uniform_histogram_ramp(size=64):
    """Every 256-level bin equally occupied: the Q_NCIE identity image."""
    return (np.arange(size * size).reshape(size, size) % 256) / 255.0


@pytest.fixture(scope="module")
def triple():
    a, b = synthetic_scene(5), synthetic_scene(11)
    f = np.clip(0.55 * a + 0.45 * b, 0, 1)
    return a, b, f


class TestSSIM:
    def test_identity(self, triple):
        a, _, _ = triple
        assert M.ssim_fusion(a, a, a) == pytest.approx(1.0, abs=1e-6)

    def test_inversion_scores_lower(self, triple):
        a, _, _ = triple
        assert M.ssim_fusion(a, a, 1.0 - a) < 1.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b, f = (rng.uniform(0, 1, (16, 16)) for _ in range(3))
        assert M.ssim_fusion(a, b, f) == pytest.approx(orc.ssim_fusion_ref(a, b, f), abs=1e-6)

    def test_swap_invariance(self, triple):
        a, b, f = triple
        assert M.ssim_fusion(a, b, f) == M.ssim_fusion(b, a, f)

    def test_too_small_rejected(self):
        small = np.zeros((8, 8))
        with pytest.raises(DataError):
            M.ssim_fusion(small, small, small)


class TestQNCIE:
    def test_identity_on_uniform_histogram(self):
        ramp = uniform_histogram_ramp()
        assert M.q_ncie(ramp, ramp, ramp) == pytest.approx(1.0, abs=1e-6)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        a, b, f = (rng.uniform(0, 1, (32, 32)) for _ in range(3))
        assert M.q_ncie(a, b, f) == pytest.approx(orc.q_ncie_ref(a, b, f), abs=1e-9)

    def test_independent_noise_near_floor(self):
        rng = np.random.default_rng(3)
        a, b, f = (rng.uniform(0, 1, (64, 64)) for _ in range(3))
        got = M.q_ncie(a, b, f)
        # independent signals: R ~ identity, floor = 1 - log(3)/log(256)
        floor = 1.0 - np.log(3.0) / np.log(256.0)
        assert got == pytest.approx(orc.q_ncie_ref(a, b, f), abs=1e-9)
        assert abs(got - floor) < 0.06

    def test_swap_invariance(self, triple):
        a, b, f = triple
        assert M.q_ncie(a, b, f) == pytest.approx(M.q_ncie(b, a, f), abs=1e-12)

    def test_constant_images_defined(self):
        const = np.full((32, 32), 0.5)
        value = M.q_ncie(const, const, const)
        assert np.isfinite(value)


class TestQABF:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        a, b, f = (rng.uniform(0, 1, (32, 32)) for _ in range(3))
        assert M.qabf(a, b, f) == pytest.approx(orc.qabf_ref(a, b, f), abs=1e-12)

    def test_identity_value_matches_oracle(self, triple):
        a, _, _ = triple
        got = M.qabf(a, a, a)
        assert got == pytest.approx(orc.qabf_ref(a, a, a), abs=1e-12)
        assert 0.9 < got <= 1.0  # strength/orientation sigmoid ceiling regime

    def test_constant_images_zero_by_rule(self):
        const = np.full((16, 16), 0.3)
        assert M.qabf(const, const, const) == 0.0

    def test_swap_invariance(self, triple):
        a, b, f = triple
        assert M.qabf(a, b, f) == M.qabf(b, a, f)


class TestVIF:
    def test_identity(self, triple):
        a, _, _ = triple
        assert M.vif_fusion(a, a, a) == pytest.approx(1.0, abs=1e-3)

    def test_blur_loses_information(self, triple):
        a, _, _ = triple
        blurred = gaussian_filter(a, 2.0)
        assert M.vif_fusion(a, a, blurred) < 1.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        a, b = synthetic_scene(21), synthetic_scene(22)
        f = np.clip(0.5 * a + 0.5 * b + 0.02 * rng.standard_normal(a.shape), 0, 1)
        assert M.vif_fusion(a, b, f) == pytest.approx(orc.vif_fusion_ref(a, b, f), abs=1e-5)

    def test_swap_invariance(self, triple):
        a, b, f = triple
        assert M.vif_fusion(a, b, f) == M.vif_fusion(b, a, f)

    def test_too_small_rejected(self):
        img = np.zeros((24, 24))
        with pytest.raises(DataError):
            M.vif_fusion(img, img, img)


class TestQP:
    def test_identity_exact(self, triple):
        a, _, _ = triple
        assert M.q_p(a, a, a) == pytest.approx(1.0, abs=1e-3)

    def test_noise_fusion_scores_near_zero(self, triple):
        a, _, _ = triple
        noise = np.random.default_rng(6).uniform(0, 1, a.shape)
        value = M.q_p(a, a, noise)
        ref = orc.q_p_ref(a, a, noise)
        assert value == pytest.approx(ref, abs=1e-9)
        assert value < 0.1

    def test_matches_independent_dft_oracle(self, triple):
        a, b, f = triple
        assert M.q_p(a, b, f) == pytest.approx(orc.q_p_ref(a, b, f), abs=1e-9)

    def test_swap_invariance(self, triple):
        a, b, f = triple
        assert M.q_p(a, b, f) == pytest.approx(M.q_p(b, a, f), abs=1e-12)

    def test_constant_degenerate_defined(self):
        const = np.full((32, 32), 0.5)
        assert M.q_p(const, const, const) == 0.0


class TestEvalDir:
    def _populate(self, tmp_path, stems=("one", "two", "three")):
        dirs = {}
        for name in ("a", "b", "f"):
            d = tmp_path / name
            d.mkdir()
            dirs[name] = d
        for i, stem in enumerate(stems):
            a, b = synthetic_scene(30 + i), synthetic_scene(60 + i)
            f = np.clip(0.5 * a + 0.5 * b, 0, 1)
            save_nfi(dirs["a"] / f"{stem}.nfi", a[None].astype(np.float32))
            save_nfi(dirs["b"] / f"{stem}.nfi", b[None].astype(np.float32))
            save_nfi(dirs["f"] / f"{stem}.nfi", f[None].astype(np.float32))
        return dirs

    def test_report_rows_and_mean(self, tmp_path):
        dirs = self._populate(tmp_path)
        report = M.eval_dir(dirs["a"], dirs["b"], dirs["f"], report_path=tmp_path / "r.txt")
        assert report.count == 3
        assert len(report.per_image) == 3
        lines = (tmp_path / "r.txt").read_text().splitlines()
        assert len(lines) == 4
        assert lines[-1].startswith("MEAN ")

    def test_means_match_hand_average(self, tmp_path):
        dirs = self._populate(tmp_path)
        report = M.eval_dir(dirs["a"], dirs["b"], dirs["f"])
        for name in M.METRIC_NAMES:
            hand = sum(report.per_image[s][name] for s in report.per_image) / 3.0
            assert report.means[name] == pytest.approx(hand, abs=1e-9)

    def test_missing_counterpart_lists_stems(self, tmp_path):
        dirs = self._populate(tmp_path)
        (dirs["f"] / "extra.nfi").write_bytes((dirs["f"] / "one.nfi").read_bytes())
        with pytest.raises(DataError) as err:
            M.eval_dir(dirs["a"], dirs["b"], dirs["f"])
        assert "extra" in str(err.value)

    def test_identical_duplicate_leaves_means_unchanged(self, tmp_path):
        dirs = self._populate(tmp_path, stems=("solo",))
        base = M.eval_dir(dirs["a"], dirs["b"], dirs["f"]).means
        for d in dirs.values():
            (d / "copy.nfi").write_bytes((d / "solo.nfi").read_bytes())
        doubled = M.eval_dir(dirs["a"], dirs["b"], dirs["f"]).means
        for name in M.METRIC_NAMES:
            assert doubled[name] == pytest.approx(base[name], abs=1e-12)

    def test_pure_function(self, triple):
        a, b, f = triple
        v1 = M.evaluate_triple(a, b, f)
        v2 = M.evaluate_triple(a, b, f)
        assert v1 == v2
