import json
import time

import numpy as np
import pytest

from nirshape import cli
from nirshape import formats as F
from nirshape import synthdata as S


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A tiny dataset and a short training run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cliwork")
    data = root / "data"
    manifest = S.DatasetManifest(counts={"train": 12, "val": 0, "test": 3},
                                 seed=31, albedo_mode="constant-one")
    (root / "manifest.json").write_text(manifest.to_json())
    rc = cli.main(["generate", "--manifest", str(root / "manifest.json"),
                   "--out", str(data)])
    assert rc == 0
    config = {"batch_size": 4, "total_iterations": 6, "lr0": 1e-3,
              "checkpoint_every": 100, "seed": 0,
              "g_filters": [6, 8, 8, 6], "d_filters": [6, 8, 8, 12, 8]}
    (root / "config.json").write_text(json.dumps(config))
    run = root / "run"
    rc = cli.main(["train", "--config", str(root / "config.json"),
                   "--data", str(data), "--out", str(run)])
    assert rc == 0
    return root, data, run / "ckpt_6.bin", run / "losses.jsonl"


class TestGenerate:
    def test_writes_files_and_echo(self, trained):
        root, data, _, _ = trained
        assert (data / "train" / "00000_nir.png").exists()
        assert (data / "generate_config.json").exists()
        assert (data / "manifest.json").exists()

    def test_malformed_json_exit_2_with_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n  "patch_size": 64,\n  broken\n}\n')
        rc = cli.main(["generate", "--manifest", str(bad), "--out", str(tmp_path / "o")])
        assert rc == cli.EXIT_BAD_JSON
        assert "line 3" in capsys.readouterr().err

    def test_unknown_manifest_key_exit_2(self, tmp_path):
        bad = tmp_path / "bad2.json"
        bad.write_text('{"no_such_field": 1}')
        assert cli.main(["generate", "--manifest", str(bad),
                         "--out", str(tmp_path / "o")]) == cli.EXIT_BAD_JSON

    def test_unwritable_outdir_exit_3(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("a file, not a directory")
        manifest = tmp_path / "m.json"
        manifest.write_text(S.DatasetManifest(counts={"train": 1}).to_json())
        rc = cli.main(["generate", "--manifest", str(manifest),
                       "--out", str(blocker / "sub")])
        assert rc == cli.EXIT_BAD_OUTDIR


class TestTrain:
    def test_outputs_exist(self, trained):
        root, _, ckpt, log = trained
        assert ckpt.exists()
        assert ckpt.with_suffix(".json").exists()
        assert log.exists()
        assert (root / "run" / "train_config.json").exists()

    def test_bad_config_key_exit_2(self, trained, tmp_path):
        root, data, _, _ = trained
        cfg = tmp_path / "c.json"
        cfg.write_text('{"hyperdrive": true}')
        assert cli.main(["train", "--config", str(cfg), "--data", str(data),
                         "--out", str(tmp_path / "o")]) == cli.EXIT_BAD_JSON

    def test_resume_with_foreign_checkpoint_exit_4(self, trained, tmp_path):
        root, data, _, _ = trained
        fake = tmp_path / "fake.bin"
        fake.write_bytes(b"garbage")
        rc = cli.main(["train", "--config", str(root / "config.json"),
                       "--data", str(data), "--out", str(tmp_path / "o"),
                       "--resume", str(fake)])
        assert rc == cli.EXIT_BAD_CKPT


class TestEval:
    def test_report_written(self, trained, tmp_path):
        root, data, ckpt, _ = trained
        out = tmp_path / "report.json"
        rc = cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                       "--split", "test", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["images"] == 3
        assert 0 <= doc["raw"]["mean_angular_deg"] <= 180

    def test_missing_checkpoint_exit_4(self, trained, tmp_path):
        root, data, _, _ = trained
        rc = cli.main(["eval", "--ckpt", str(tmp_path / "none.bin"),
                       "--data", str(data), "--out", str(tmp_path / "r.json")])
        assert rc == cli.EXIT_BAD_CKPT


class TestInfer:
    def test_estimates_normals_and_mesh(self, trained, tmp_path):
        root, data, ckpt, _ = trained
        rc = cli.main(["infer", "--ckpt", str(ckpt),
                       "--image", str(data / "test" / "00000_nir.png"),
                       "--out", str(tmp_path / "est"), "--mesh"])
        assert rc == 0
        nrm = F.load_normal_png(tmp_path / "est_nrm.png")
        assert nrm.shape == (3, 64, 64)
        verts, _, faces = F.load_obj(tmp_path / "est.obj")
        assert len(verts) == 64 * 64
        assert len(faces) == 2 * 63 * 63

    def test_deterministic_output_bytes(self, trained, tmp_path):
        root, data, ckpt, _ = trained
        img = data / "test" / "00001_nir.png"
        for name in ("one", "two"):
            assert cli.main(["infer", "--ckpt", str(ckpt), "--image", str(img),
                             "--out", str(tmp_path / name)]) == 0
        assert ((tmp_path / "one_nrm.png").read_bytes()
                == (tmp_path / "two_nrm.png").read_bytes())

    def test_arbitrary_size_input(self, trained, tmp_path):
        root, data, ckpt, _ = trained
        F.save_nir_png(tmp_path / "wide.png", np.random.default_rng(0).uniform(
            0, 1, (40, 80)).astype(np.float32))
        rc = cli.main(["infer", "--ckpt", str(ckpt),
                       "--image", str(tmp_path / "wide.png"),
                       "--out", str(tmp_path / "wide")])
        assert rc == 0
        assert F.load_normal_png(tmp_path / "wide_nrm.png").shape == (3, 40, 80)

    def test_tiny_image_rejected(self, trained, tmp_path):
        root, data, ckpt, _ = trained
        F.save_nir_png(tmp_path / "tiny.png", np.zeros((8, 8), np.float32))
        rc = cli.main(["infer", "--ckpt", str(ckpt),
                       "--image", str(tmp_path / "tiny.png"),
                       "--out", str(tmp_path / "t")])
        assert rc == cli.EXIT_FAIL

    @pytest.mark.slow
    def test_256px_inference_within_budget(self, trained, tmp_path):
        root, data, ckpt, _ = trained
        F.save_nir_png(tmp_path / "big.png", np.random.default_rng(0).uniform(
            0, 1, (256, 256)).astype(np.float32))
        t0 = time.time()
        rc = cli.main(["infer", "--ckpt", str(ckpt),
                       "--image", str(tmp_path / "big.png"),
                       "--out", str(tmp_path / "big")])
        assert rc == 0
        assert time.time() - t0 <= 10.0


class TestIntegrate:
    def test_depth_and_mesh_written(self, trained, tmp_path):
        root, data, _, _ = trained
        rc = cli.main(["integrate", "--normals",
                       str(data / "test" / "00000_nrm.png"),
                       "--out", str(tmp_path / "rec")])
        assert rc == 0
        depth = F.load_pfm(tmp_path / "rec_depth.pfm")
        assert depth.shape == (64, 64)
        assert abs(float(depth.mean())) < 1e-3


class TestPlot:
    def test_plot_written(self, trained, tmp_path):
        root, _, _, log = trained
        out = tmp_path / "curves.png"
        rc = cli.main(["plot", "--log", str(log), "--out", str(out)])
        assert rc == 0
        assert out.stat().st_size > 0

    def test_empty_log_exit_5(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        assert cli.main(["plot", "--log", str(empty),
                         "--out", str(tmp_path / "x.png")]) == cli.EXIT_EMPTY_LOG

    def test_corrupt_lines_skipped_with_count(self, trained, tmp_path, capsys):
        root, _, _, log = trained
        mixed = tmp_path / "mixed.jsonl"
        mixed.write_text(log.read_text() + "{broken json!\n")
        rc = cli.main(["plot", "--log", str(mixed), "--out", str(tmp_path / "m.png"),
                       "--json"])
        assert rc == 0
        err = capsys.readouterr()
        assert "skipped 1 corrupt" in err.err
        assert json.loads(err.out)["corrupt"] == 1

    def test_missing_term_warns_and_omits(self, tmp_path, capsys):
        log = tmp_path / "partial.jsonl"
        rows = [{"iteration": i, "d_loss": 0.5, "g_bce": 0.7, "l_p": 0.1,
                 "l_ang": 0.2} for i in range(10)]  # no l_curl
        log.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        rc = cli.main(["plot", "--log", str(log), "--out", str(tmp_path / "p.png")])
        assert rc == 0
        assert "l_curl" in capsys.readouterr().err


class TestJsonMode:
    def test_machine_readable_stdout(self, trained, tmp_path, capsys):
        root, data, ckpt, _ = trained
        rc = cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                       "--out", str(tmp_path / "r.json"), "--json"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert "mean_angular_deg" in doc
