import numpy as np
import pytest

from conftest import synthetic_scene
from mmfuse import cli
from mmfuse.checks import corrupted_backward
from mmfuse.imageio import load_nfi, save_nfi, save_pnm


@pytest.fixture
def workspace(tmp_path):
    config = tmp_path / "desk.cfg"
    config.write_text(
        "# desk-scale configuration\n"
        "base_channels = 8\n"
        "enc_blocks = 1,1,1,1\n"
        "dec_blocks = 1,1,1,1\n"
        "heads = 1,2,4,8\n"
        "seed = 3\n"
        "prompt = infrared and visible image fusion\n")
    a = synthetic_scene(5, 64).astype(np.float32)
    b = synthetic_scene(11, 64).astype(np.float32)
    pa, pb = tmp_path / "a.nfi", tmp_path / "b.nfi"
    save_nfi(pa, a[None])
    save_nfi(pb, b[None])
    return tmp_path, config, pa, pb


class TestConfigFile:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("base_channels = 8\nmystery_knob = 3\n")
        with pytest.raises(cli.UsageError) as err:
            cli.parse_config_file(cfg)
        assert "mystery_knob" in str(err.value)

    def test_duplicate_key_rejected(self, tmp_path):
        cfg = tmp_path / "dup.cfg"
        cfg.write_text("seed = 1\nseed = 2\n")
        with pytest.raises(cli.UsageError):
            cli.parse_config_file(cfg)

    def test_comments_and_blanks_ignored(self, tmp_path):
        cfg = tmp_path / "ok.cfg"
        cfg.write_text("\n# comment\nseed = 5  # trailing\n\n")
        assert cli.parse_config_file(cfg) == {"seed": "5"}

    def test_bool_parsing(self):
        assert cli._parse_bool("use_pruning", "true") is True
        assert cli._parse_bool("use_pruning", "0") is False
        with pytest.raises(cli.UsageError):
            cli._parse_bool("use_pruning", "maybe")


class TestFuseCommand:
    def test_fuse_writes_output(self, workspace, capsys):
        tmp, config, pa, pb = workspace
        out = tmp / "fused.nfi"
        code = cli.main(["fuse", "--a", str(pa), "--b", str(pb),
                         "--out", str(out), "--config", str(config)])
        assert code == 0
        fused = load_nfi(out)
        assert fused.shape == (1, 64, 64)
        assert fused.min() >= 0.0 and fused.max() <= 1.0
        assert "config digest" in capsys.readouterr().out

    def test_fuse_deterministic_bytes(self, workspace):
        tmp, config, pa, pb = workspace
        out1, out2 = tmp / "f1.nfi", tmp / "f2.nfi"
        for out in (out1, out2):
            assert cli.main(["fuse", "--a", str(pa), "--b", str(pb),
                             "--out", str(out), "--config", str(config)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_mismatched_sizes_exit2_no_output(self, workspace):
        tmp, config, pa, _ = workspace
        small = tmp / "small.nfi"
        save_nfi(small, np.zeros((1, 32, 32), dtype=np.float32))
        out = tmp / "never.nfi"
        code = cli.main(["fuse", "--a", str(pa), "--b", str(small),
                         "--out", str(out), "--config", str(config)])
        assert code == 2
        assert not out.exists()

    def test_missing_checkpoint_exit2(self, workspace):
        tmp, config, pa, pb = workspace
        code = cli.main(["fuse", "--a", str(pa), "--b", str(pb),
                         "--out", str(tmp / "o.nfi"), "--config", str(config),
                         "--checkpoint", str(tmp / "missing.ckpt")])
        assert code == 2

    def test_non_multiple_of_8_padded_and_cropped(self, workspace):
        tmp, config, _, _ = workspace
        a = synthetic_scene(7, 64)[:50, :45].astype(np.float32)
        b = synthetic_scene(8, 64)[:50, :45].astype(np.float32)
        pa, pb = tmp / "odda.nfi", tmp / "oddb.nfi"
        save_nfi(pa, a[None])
        save_nfi(pb, b[None])
        out = tmp / "odd.nfi"
        assert cli.main(["fuse", "--a", str(pa), "--b", str(pb),
                         "--out", str(out), "--config", str(config)]) == 0
        assert load_nfi(out).shape == (1, 50, 45)

    def test_color_input_preserves_chroma_path(self, workspace):
        tmp, config, _, pb = workspace
        rgb = np.stack([synthetic_scene(21, 64), synthetic_scene(22, 64),
                        synthetic_scene(23, 64)]).astype(np.float32)
        pa = tmp / "color.ppm"
        save_pnm(pa, rgb)
        out = tmp / "color_fused.ppm"
        assert cli.main(["fuse", "--a", str(pa), "--b", str(pb),
                         "--out", str(out), "--config", str(config)]) == 0
        from mmfuse.imageio import load_pnm
        assert load_pnm(out).shape == (3, 64, 64)


class TestTrainEvalCommands:
    def test_train_then_fuse_with_checkpoint(self, workspace):
        tmp, config, pa, pb = workspace
        da, db = tmp / "da", tmp / "db"
        da.mkdir()
        db.mkdir()
        (da / "pair.nfi").write_bytes(pa.read_bytes())
        (db / "pair.nfi").write_bytes(pb.read_bytes())
        ckpt = tmp / "model.ckpt"
        log = tmp / "train.log"
        code = cli.main(["train", "--config", str(config), "--data-a", str(da),
                         "--data-b", str(db), "--out", str(ckpt), "--log", str(log),
                         "--steps", "2", "--crop", "64", "--batch", "1"])
        assert code == 0
        assert ckpt.exists() and log.exists()
        out = tmp / "ck.nfi"
        assert cli.main(["fuse", "--a", str(pa), "--b", str(pb), "--out", str(out),
                         "--config", str(config), "--checkpoint", str(ckpt)]) == 0

    def test_eval_command(self, workspace, capsys):
        tmp, config, pa, pb = workspace
        dirs = {}
        for name in ("ea", "eb", "ef"):
            d = tmp / name
            d.mkdir()
            dirs[name] = d
        a, b = synthetic_scene(31), synthetic_scene(32)
        f = np.clip(0.5 * (a + b), 0, 1)
        save_nfi(dirs["ea"] / "s.nfi", a[None].astype(np.float32))
        save_nfi(dirs["eb"] / "s.nfi", b[None].astype(np.float32))
        save_nfi(dirs["ef"] / "s.nfi", f[None].astype(np.float32))
        report = tmp / "report.txt"
        code = cli.main(["eval", "--dir-a", str(dirs["ea"]), "--dir-b", str(dirs["eb"]),
                         "--dir-f", str(dirs["ef"]), "--report", str(report)])
        assert code == 0
        assert "MEAN" in capsys.readouterr().out
        assert report.exists()


class TestGradcheckCommand:
    def test_composite_suite_passes(self, workspace, capsys):
        _, config, _, _ = workspace
        code = cli.main(["gradcheck", "--config", str(config), "--skip-ops"])
        out = capsys.readouterr().out
        assert code == 0
        for name in ("pruning", "modulation", "perturbation", "encoder", "decoder",
                     "grad_loss", "l1_loss"):
            assert f"PASS {name}" in out

    def test_corrupted_backward_rule_detected(self, workspace, capsys):
        _, config, _, _ = workspace
        with corrupted_backward("conv1x1"):
            code = cli.main(["gradcheck", "--config", str(config)])
        out = capsys.readouterr().out
        assert code == 1
        assert "FAIL op:conv1x1" in out


class TestSelftest:
    def test_selftest_passes(self, capsys):
        assert cli.main(["selftest"]) == 0
        assert "FAIL" not in capsys.readouterr().out
