import json

import numpy as np
import pytest

from docvo import cli, dataio
from docvo.ablation import ABLATION_ROWS, ablation_config


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    assert cli.main(["synth", "--out", str(out), "--frames", "4", "--seed", "3"]) == 0
    return out


def files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSynth:
    def test_byte_identical(self, tmp_path, bundle):
        assert cli.main(["synth", "--out", str(tmp_path), "--frames", "4", "--seed", "3"]) == 0
        assert files(tmp_path) == files(bundle)

    def test_minimal_bundle_loads(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path), "--frames", "2"]) == 0
        seq = dataio.load_sequence(dataio.load_manifest(tmp_path / "manifest.json"))
        assert len(seq.frames) == 2 and seq.frames[0].image.shape == (72, 96, 1)

    def test_occluder_sidecar(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path), "--frames", "3", "--occluder", "--motion", "0", "0", "0", "0.2", "0", "0"]) == 0
        occ = dataio.load_mask(tmp_path / "occlusion" / "000001.png")
        assert occ.any() and set(np.unique(occ)) <= {0.0, 1.0}

    def test_invalid_geometry(self, tmp_path, capsys):
        assert cli.main(["synth", "--out", str(tmp_path), "--depth", "-3"]) == 1
        assert cli.main(["synth", "--out", str(tmp_path), "--frames", "1"]) == 1


class TestRun:
    def test_passthrough(self, tmp_path, bundle):
        assert cli.main(["run", str(bundle / "manifest.json"), "--out", str(tmp_path), "--mode", "none"]) == 0
        init = dataio.absolute_from_relative(dataio.load_relative_poses(bundle / "init_relative.txt"))
        assert np.array_equal(dataio.load_poses_kitti(tmp_path / "trajectory_kitti.txt"), init)

    def test_doc_energy_decreases_and_reproducible(self, tmp_path, bundle):
        args = ["run", str(bundle / "manifest.json"), "--iterations", "10"]
        assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
        assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
        rows = np.genfromtxt(tmp_path / "a" / "frames.csv", delimiter=",", names=True, dtype=None, encoding=None)
        assert np.all(rows["final_energy"] <= rows["initial_energy"])
        for name in ("trajectory_kitti.txt", "trajectory_tum.txt", "frames.csv", "run.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        timing = json.loads((tmp_path / "a" / "timing.json").read_text())
        assert set(timing) >= {"load_s", "ray_precompute_s", "optimize_s"}

    def test_report_records_resolved_config(self, tmp_path, bundle):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"iterations": 3, "loss": "ssim", "lr_rotation": 0.002}))
        argv = ["run", str(bundle / "manifest.json"), "--out", str(tmp_path / "o"), "--config", str(cfg), "--iterations", "2"]
        assert cli.main(argv) == 0
        rec = json.loads((tmp_path / "o" / "run.json").read_text())["config"]
        assert rec["iterations"] == 2 and rec["loss"] == "ssim" and rec["lr_rotation"] == 0.002
        assert set(rec) == set(cli.DEFAULTS)
        rows = np.genfromtxt(tmp_path / "o" / "frames.csv", delimiter=",", names=True, dtype=None, encoding=None)
        assert np.all(rows["iterations"] == 2)

    def test_missing_depth(self, tmp_path, bundle, capsys):
        import shutil

        shutil.copytree(bundle, tmp_path / "b")
        (tmp_path / "b" / "depth" / "000002.bin").unlink()
        assert cli.main(["run", str(tmp_path / "b" / "manifest.json"), "--out", str(tmp_path / "o")]) == 1
        assert "000002.bin" in capsys.readouterr().err

    def test_inconsistent_config(self, tmp_path, bundle):
        m = str(bundle / "manifest.json")
        assert cli.main(["run", m, "--out", str(tmp_path), "--alpha", "0.5"]) == 1
        assert cli.main(["run", m, "--out", str(tmp_path), "--iterations", "0"]) == 1
        bad = tmp_path / "c.json"
        bad.write_text('{"bogus": 1}')
        assert cli.main(["run", m, "--out", str(tmp_path), "--config", str(bad)]) == 1


class TestEval:
    def test_identical_files(self, tmp_path, bundle, capsys):
        gt = str(bundle / "gt_poses.txt")
        assert cli.main(["eval", gt, gt, "--lengths", "0.5", "--csv", str(tmp_path / "e.csv")]) == 0
        out = capsys.readouterr().out
        assert "RTE (%):         0.0000" in out and "ATE (m):         0.0000" in out
        assert (tmp_path / "e.csv").exists()

    def test_fixture_pair(self, tmp_path, capsys):
        gt = np.tile(np.eye(4), (1001, 1, 1))
        gt[:, 2, 3] = np.arange(1001.0)
        est = gt.copy()
        est[:, 2, 3] *= 1.02
        dataio.save_poses_kitti(tmp_path / "gt.txt", gt)
        dataio.save_poses_kitti(tmp_path / "est.txt", est)
        assert cli.main(["eval", str(tmp_path / "est.txt"), str(tmp_path / "gt.txt")]) == 0
        assert "RTE (%):         2.0000" in capsys.readouterr().out

    def test_length_mismatch(self, tmp_path, bundle):
        dataio.save_poses_kitti(tmp_path / "short.txt", np.tile(np.eye(4), (2, 1, 1)))
        assert cli.main(["eval", str(tmp_path / "short.txt"), str(bundle / "gt_poses.txt")]) == 1


class TestGradcheck:
    def test_passes(self, capsys):
        assert cli.main(["gradcheck", "--trials", "4"]) == 0

    def test_corrupted_gradient_fails(self):
        assert cli.main(["gradcheck", "--trials", "2", "--corrupt-gradient", "0.01"]) == 2

    def test_zero_trials(self):
        assert cli.main(["gradcheck", "--trials", "0"]) == 1


class TestAblate:
    def test_rows_f_and_h(self):
        f, h = ablation_config("f"), ablation_config("h")
        assert f.use_occlusion_mask and f.use_explainability_mask and f.loss == "truncated_l1" and f.frames == 2
        assert h.use_occlusion_mask and h.use_explainability_mask and h.loss == "truncated_l1" and h.frames == 3
        a = ablation_config("a")
        assert not a.use_occlusion_mask and not a.use_explainability_mask
        assert ablation_config("d").loss == "l1_untruncated" and ablation_config("g").loss == "ssim"
        assert sorted(ABLATION_ROWS) == list("abcdefgh")

    def test_unknown_row(self, tmp_path, bundle):
        assert cli.main(["ablate", str(bundle / "manifest.json"), "--out", str(tmp_path), "--rows", "az"]) == 1

    def test_masks_help_with_occluder(self, tmp_path):
        b = tmp_path / "occ"
        assert cli.main(["synth", "--out", str(b), "--frames", "6", "--seed", "1", "--occluder"]) == 0
        argv = ["ablate", str(b / "manifest.json"), "--out", str(tmp_path / "ab"), "--rows", "af", "--iterations", "40", "--lengths", "1"]
        assert cli.main(argv) == 0
        rows = np.genfromtxt(tmp_path / "ab" / "ablation.csv", delimiter=",", names=True, dtype=None, encoding=None)
        ate = dict(zip(rows["row"], rows["ate_m"]))
        assert ate["f"] <= ate["a"]
