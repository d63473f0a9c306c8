"""CLI tests: run, augment, and condition subcommands end to end."""

import json

import numpy as np
import pytest

from abatre import imaging
from abatre.cli import main
from abatre.imaging import BoxLabel, LabeledImage, RasterImage


def read(path):
    return path.read_bytes()


@pytest.fixture(scope="module")
def run_outputs(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_seed0")
    code = main(["run", "--scene", "benchmark", "--seed", "0", "--out", str(out)])
    return code, out


class TestRun:
    def test_exit_zero_and_metrics(self, run_outputs):
        code, out = run_outputs
        assert code == 0
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "target,category,execution_time_s,detection_score_pct,success"
        assert len(lines) == 13
        cats = [ln.split(",")[1] for ln in lines[1:]]
        assert cats == ["Bolt"] * 6 + ["Cable"] * 2 + ["Module"] * 4
        assert all(ln.endswith(",yes") for ln in lines[1:])

    def test_summary_json(self, run_outputs):
        code, out = run_outputs
        summary = json.loads((out / "summary.json").read_text())
        assert summary["tasks"] == 12
        assert summary["succeeded"] == 12
        assert summary["all_success"] is True
        assert summary["seed"] == 0
        assert summary["gripper_switches"] == 1
        assert summary["total_execution_time_s"] > 0

    def test_rerun_byte_identical(self, run_outputs, tmp_path):
        _, first = run_outputs
        second = tmp_path / "again"
        code = main(["run", "--scene", "benchmark", "--seed", "0", "--out", str(second)])
        assert code == 0
        assert read(second / "metrics.csv") == read(first / "metrics.csv")
        assert read(second / "summary.json") == read(first / "summary.json")

    def test_missing_scene_file(self, tmp_path):
        code = main(["run", "--scene", str(tmp_path / "missing.json"), "--out", str(tmp_path)])
        assert code == 2

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ABATRE_SEED", "4")
        out = tmp_path / "env_run"
        code = main(["run", "--scene", "benchmark", "--out", str(out)])
        assert code == 0
        assert json.loads((out / "summary.json").read_text())["seed"] == 4

    def test_planner_flag_override(self, tmp_path):
        out = tmp_path / "tuned"
        code = main([
            "run", "--scene", "benchmark", "--seed", "0", "--out", str(out),
            "--planner.goal-bias", "0.3", "--planner.i-max", "5000",
        ])
        assert code == 0


class TestTrajectoryDump:
    def test_dump_writes_csvs(self, tmp_path):
        out = tmp_path / "dump"
        code = main([
            "run", "--scene", "benchmark", "--seed", "0", "--out", str(out),
            "--dump-trajectories",
        ])
        assert code == 0
        files = sorted((out / "trajectories").glob("*.csv"))
        assert len(files) > 70
        header = files[0].read_text().splitlines()[0]
        assert header == "t,q1,q2,q3,q4,q5,q6,qd1,qd2,qd3,qd4,qd5,qd6,qdd1,qdd2,qdd3,qdd4,qdd5,qdd6"


class TestSnapshots:
    def test_before_after_written(self, tmp_path):
        out = tmp_path / "snaps"
        code = main([
            "run", "--scene", "benchmark", "--seed", "0", "--out", str(out),
            "--snapshots", "--condition", "dust",
        ])
        assert code == 0
        before = imaging.load_png(out / "before.png")
        after = imaging.load_png(out / "after.png")
        assert (before.width, before.height) == (640, 480)
        assert not before.same_pixels(after)  # the pack is gone afterwards


def make_dataset(root, n_images=2, w=32, h=24):
    rng = np.random.default_rng(0)
    pairs = []
    for i in range(n_images):
        img = RasterImage(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
        lab = LabeledImage(img, (BoxLabel("bolt", (2, 2, 10, 9)),))
        img_name = f"img{i}.png"
        csv_name = f"img{i}.csv"
        imaging.save_png(lab.image, root / img_name)
        (root / csv_name).write_text(imaging.labels_to_csv(lab.labels))
        pairs.append((img_name, csv_name))
    imaging.write_manifest(pairs, root / "manifest.json")


class TestAugment:
    def test_expansion_counts(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        make_dataset(src, n_images=2)
        out = tmp_path / "aug"
        code = main(["augment", "--input", str(src), "--out", str(out), "--seed", "1"])
        assert code == 0
        pairs = imaging.read_manifest(out / "manifest.json")
        assert len(pairs) == 12  # 2 inputs x 6 default variants
        for img_name, csv_name in pairs:
            img = imaging.load_png(out / img_name)
            labels = imaging.labels_from_csv((out / csv_name).read_text())
            LabeledImage(img, labels).validate()

    def test_rerun_identical(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        make_dataset(src, n_images=1)
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert main(["augment", "--input", str(src), "--out", str(out1), "--seed", "3"]) == 0
        assert main(["augment", "--input", str(src), "--out", str(out2), "--seed", "3"]) == 0
        for img_name, csv_name in imaging.read_manifest(out1 / "manifest.json"):
            assert read(out1 / img_name) == read(out2 / img_name)
            assert read(out1 / csv_name) == read(out2 / csv_name)

    def test_zero_variants_usage_error(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        make_dataset(src, n_images=1)
        with pytest.raises(SystemExit) as exc:
            main(["augment", "--input", str(src), "--out", str(tmp_path / "o"), "--variants", "0"])
        assert exc.value.code == 2

    def test_missing_manifest(self, tmp_path):
        code = main(["augment", "--input", str(tmp_path), "--out", str(tmp_path / "o")])
        assert code == 1

    def test_label_file_missing(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        make_dataset(src, n_images=1)
        (src / "img0.csv").unlink()
        code = main(["augment", "--input", str(src), "--out", str(tmp_path / "o")])
        assert code == 1


class TestCondition:
    @pytest.mark.parametrize("name", ["deformation", "contamination", "dust", "scratches"])
    def test_all_condition_names(self, tmp_path, name):
        rng = np.random.default_rng(0)
        img = RasterImage(rng.integers(0, 256, size=(24, 32, 3), dtype=np.uint8))
        src = tmp_path / "in.png"
        imaging.save_png(img, src)
        out = tmp_path / f"out_{name}.png"
        code = main(["condition", str(src), name, "--seed", "1", "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_deterministic_output(self, tmp_path):
        rng = np.random.default_rng(0)
        img = RasterImage(rng.integers(0, 256, size=(24, 32, 3), dtype=np.uint8))
        src = tmp_path / "in.png"
        imaging.save_png(img, src)
        outs = []
        for tag in ("x", "y"):
            out = tmp_path / f"{tag}.png"
            assert main(["condition", str(src), "dust", "--seed", "7", "--out", str(out)]) == 0
            outs.append(read(out))
        assert outs[0] == outs[1]

    def test_unknown_condition_usage_error(self, tmp_path):
        src = tmp_path / "in.png"
        imaging.save_png(RasterImage(np.zeros((8, 8, 3), dtype=np.uint8)), src)
        with pytest.raises(SystemExit) as exc:
            main(["condition", str(src), "rust"])
        assert exc.value.code == 2

    def test_unreadable_image(self, tmp_path):
        code = main(["condition", str(tmp_path / "ghost.png"), "dust"])
        assert code == 1
