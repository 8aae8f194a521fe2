"""CLI subcommands driven end to end through main()."""

import numpy as np
import pytest

from motionprob import cli
from motionprob.ba import load_problem, save_problem
from motionprob.dataset import load_manifest, load_rgb_png
from motionprob.evaluation import Trajectory
from motionprob.geometry import PoseSE3

from test_ba import synthetic_pose_problem


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    """Small rendered dataset shared by the estimate tests.

    The object is sped up so its 2-frame displacement saturates the motion
    normalization even at this reduced resolution."""
    out = tmp_path_factory.mktemp("scene")
    spec = out / "scene.txt"
    spec.write_text("width = 96\nheight = 72\nframes = 12\nseed = 3\nobject_speed = 0.045\n")
    assert cli.main(["synth", "--scene", str(spec), "--output", str(out / "data")]) == 0
    return out / "data"


@pytest.fixture(scope="module")
def static_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("static")
    spec = out / "scene.txt"
    spec.write_text("width = 96\nheight = 72\nframes = 6\nseed = 3\nmoving = 0\nshadow = 0\n")
    assert cli.main(["synth", "--scene", str(spec), "--output", str(out / "data")]) == 0
    return out / "data"


def run_estimate(synth_dir, out_dir, *extra):
    args = [
        "estimate",
        "--manifest",
        str(synth_dir / "manifest.txt"),
        "--output-dir",
        str(out_dir),
        *extra,
    ]
    return cli.main(args)


def test_synth_outputs(synth_dir):
    assert (synth_dir / "dynamic" / "rgb.txt").is_file()
    assert (synth_dir / "background" / "rgb.txt").is_file()
    assert (synth_dir / "dynamic" / "groundtruth.txt").is_file()
    assert len(list((synth_dir / "gt_prob").glob("*.png"))) == 12
    manifest = load_manifest(synth_dir / "manifest.txt")
    assert len(manifest) == 12


def test_estimate_writes_probability_maps(synth_dir, tmp_path):
    out = tmp_path / "run"
    assert run_estimate(synth_dir, out) == 0
    probs = sorted(out.glob("*_prob.png"))
    assert len(probs) == 12
    assert (out / "manifest.txt").is_file()


def test_estimate_rerun_bit_identical(synth_dir, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run_estimate(synth_dir, out_a) == 0
    assert run_estimate(synth_dir, out_b) == 0
    for pa in sorted(out_a.glob("*_prob.png")):
        pb = out_b / pa.name
        assert pa.read_bytes() == pb.read_bytes()


def test_estimate_static_scene_all_black(static_dir, tmp_path):
    out = tmp_path / "static_run"
    assert run_estimate(static_dir, out) == 0
    for p in out.glob("*_prob.png"):
        img = load_rgb_png(p)
        assert img.channels.max() == 0


def test_estimate_highlights_moving_blob(synth_dir, tmp_path):
    out = tmp_path / "blob_run"
    assert run_estimate(synth_dir, out) == 0
    import cv2

    means = []
    for i in (2, 3, 9, 10):  # frames away from the sweep reversal
        prob = cv2.imread(str(out / f"{i:06d}_prob.png"), cv2.IMREAD_GRAYSCALE) / 255.0
        mask = cv2.imread(str(synth_dir / "gt_prob" / f"{i:06d}.png"), cv2.IMREAD_GRAYSCALE) > 0
        means.append(prob[mask].mean())
    assert np.mean(means) >= 0.5


def test_estimate_debug_outputs(synth_dir, tmp_path):
    out = tmp_path / "debug_run"
    assert run_estimate(synth_dir, out, "--debug", "1", "--dump-float", "1") == 0
    assert (out / "000003_movable.png").is_file()
    assert (out / "000003_motion.png").is_file()
    assert (out / "000003_splat+02.png").is_file()
    assert (out / "000003_prob.npy").is_file()
    values = np.load(out / "000003_prob.npy")
    assert values.dtype == np.float32 and values.shape == (72, 96)


def test_estimate_config_file_with_flag_override(synth_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"manifest = {synth_dir / 'manifest.txt'}\n"
        f"output_dir = {tmp_path / 'cfg_out'}\n"
        "mag_hi = 4.0  # overridden below\n"
    )
    assert cli.main(["estimate", "--config", str(cfg), "--mag-hi", "3.0"]) == 0
    assert len(list((tmp_path / "cfg_out").glob("*_prob.png"))) == 12


def test_estimate_config_errors_exit_2(tmp_path):
    assert cli.main(["estimate", "--layout", "manifest"]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key = 1\n")
    assert cli.main(["estimate", "--config", str(bad)]) == cli.EXIT_CONFIG


def test_estimate_missing_manifest_exits_3(tmp_path):
    assert cli.main(["estimate", "--manifest", str(tmp_path / "nope.txt")]) == cli.EXIT_IO


def test_ba_subcommand(tmp_path):
    rng = np.random.default_rng(0)
    problem, true_pose = synthetic_pose_problem(rng, n=60, outliers=18)
    path = tmp_path / "problem.txt"
    save_problem(problem, path)
    out = tmp_path / "solved.txt"
    assert cli.main(["ba", str(path), "--output", str(out)]) == 0
    solved = load_problem(out)
    assert np.allclose(solved.poses[0].matrix(), true_pose.matrix(), atol=1e-5)


def test_ba_degenerate_exits_4(tmp_path):
    path = tmp_path / "degenerate.txt"
    path.write_text(
        "BAPROBLEM 1 1 1\n"
        "INTRINSICS 100 100 50 50 100 100\n"
        "POSE 0 0 1 0 0 0 0 0 0\n"
        "POINT 0 1 0.1 0.2 3.0 0\n"
        "OBS 0 0 150 150\n"
    )
    assert cli.main(["ba", str(path), "--output", str(path) + ".out"]) == cli.EXIT_NUMERIC


def test_eval_subcommand(tmp_path, capsys):
    rng = np.random.default_rng(1)
    stamps = np.arange(20) * 0.1
    poses = [PoseSE3(np.eye(3), rng.normal(0, 0.5, 3)) for _ in range(20)]
    Trajectory(stamps, poses).save(tmp_path / "gt.txt")
    Trajectory(stamps, poses).save(tmp_path / "est.txt")
    out = tmp_path / "report.txt"
    code = cli.main(
        ["eval", str(tmp_path / "est.txt"), str(tmp_path / "gt.txt"), "--output", str(out)]
    )
    assert code == 0
    text = out.read_text()
    assert "ate_rmse 0.000000" in text
    assert "tracking_rate 1.000000" in text


def test_eval_missing_file_exits_3(tmp_path):
    assert cli.main(["eval", str(tmp_path / "a.txt"), str(tmp_path / "b.txt")]) == cli.EXIT_IO


def test_splat_debug_subcommand(synth_dir, tmp_path):
    out = tmp_path / "sd"
    code = cli.main(
        [
            "splat-debug",
            "--manifest",
            str(synth_dir / "manifest.txt"),
            "--frame",
            "3",
            "--offset",
            "2",
            "--output",
            str(out),
        ]
    )
    assert code == 0
    assert (out / "000003_splat+02.png").is_file()
    assert (out / "000003_coverage+02.png").is_file()


def test_synth_rejects_bad_scene_key(tmp_path):
    spec = tmp_path / "bad.txt"
    spec.write_text("zoom = 9\n")
    assert cli.main(["synth", "--scene", str(spec), "--output", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_estimate_frame_failures_exit_4(tmp_path):
    spec = tmp_path / "scene.txt"
    spec.write_text("width = 64\nheight = 48\nframes = 3\nseed = 1\n")
    data = tmp_path / "data"
    assert cli.main(["synth", "--scene", str(spec), "--output", str(data)]) == 0
    # corrupt one depth file: it still exists, so loading fails per frame
    victim = sorted((data / "dynamic" / "depth").glob("*.png"))[2]
    import cv2

    cv2.imwrite(str(victim), np.zeros((48, 64), dtype=np.uint8))
    code = cli.main(
        [
            "estimate",
            "--manifest",
            str(data / "manifest.txt"),
            "--output-dir",
            str(tmp_path / "run"),
        ]
    )
    assert code == cli.EXIT_NUMERIC


def test_estimate_tum_layout(synth_dir, tmp_path):
    """The rendered trees double as a TUM-layout dataset pair."""
    out = tmp_path / "tum_run"
    code = cli.main(
        [
            "estimate",
            "--layout",
            "tum",
            "--dataset-root",
            str(synth_dir / "dynamic"),
            "--background-root",
            str(synth_dir / "background"),
            "--intrinsics",
            "91.2,91.2,47.5,35.5,96,72",
            "--output-dir",
            str(out),
        ]
    )
    assert code == 0
    assert len(list(out.glob("*_prob.png"))) == 12
