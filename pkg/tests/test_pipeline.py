"""Pipeline orchestration: neighbor handling, pose plumbing, flow sources,
and configuration validation."""

import numpy as np
import pytest

from motionprob import flowio
from motionprob.geometry import PoseSE3, se3_exp
from motionprob.motion import BlockMatchingFlow, FlowRequest, PrecomputedFlow
from motionprob.pipeline import (
    ConfigError,
    PipelineConfig,
    PipelineParams,
    estimate_frame,
    estimate_sequence,
    parse_config_file,
    relative_pose,
)
from motionprob.splatting import splat_frame
from motionprob.synthetic import desk_scene, render_synthetic_sequence


@pytest.fixture(scope="module")
def tiny_sequence():
    return render_synthetic_sequence(desk_scene(96, 72, n_frames=6, seed=2))


def test_relative_pose_identity_without_poses(tiny_sequence):
    frame = tiny_sequence.frames[0].replace(pose=None)
    rel = relative_pose(frame, tiny_sequence.frames[1])
    assert np.array_equal(rel.matrix(), np.eye(4))


def test_relative_pose_composition():
    a = se3_exp([0.1, 0.0, 0.0, 0.5, 0.0, 0.0])
    b = se3_exp([0.0, 0.2, 0.0, 0.0, -0.3, 0.0])
    fa = _with_pose(a)
    fb = _with_pose(b)
    rel = relative_pose(fa, fb)
    expected = b.inverse().compose(a)
    assert np.allclose(rel.matrix(), expected.matrix(), atol=1e-12)


def _with_pose(pose: PoseSE3):
    seq = render_synthetic_sequence(desk_scene(32, 24, n_frames=1, seed=0, moving=False))
    return seq.frames[0].replace(pose=pose)


def test_single_frame_sequence_returns_prior(tiny_sequence):
    frame = tiny_sequence.frames[2]
    res = estimate_frame([frame], 0, tiny_sequence.scene.intrinsics,
                         BlockMatchingFlow(), PipelineParams())
    assert res.motion is None
    assert np.array_equal(res.probability.values, res.movable.values)


def test_boundary_frames_use_available_neighbors(tiny_sequence):
    seq = tiny_sequence
    res = estimate_frame(seq.frames, 0, seq.scene.intrinsics,
                         BlockMatchingFlow(), PipelineParams())
    assert res.motion is not None
    assert res.probability.values.min() >= 0.0
    assert res.probability.values.max() <= 1.0


def test_estimate_sequence_covers_all_frames(tiny_sequence):
    seq = tiny_sequence
    results = estimate_sequence(seq.frames, seq.scene.intrinsics,
                                BlockMatchingFlow(), PipelineParams())
    assert [r.index for r in results] == list(range(6))


def test_precomputed_flow_reproduces_baseline(tiny_sequence, tmp_path):
    """Dumping the baseline flows to .flo files and re-reading them through the
    file provider must give identical probability maps."""
    seq = tiny_sequence
    k = seq.scene.intrinsics
    params = PipelineParams()
    baseline = BlockMatchingFlow()
    index = 3

    class RecordingProvider:
        def flow(self, a, b, request: FlowRequest):
            field = baseline.flow(a, b, request)
            flowio.write_flo(
                tmp_path / f"{request.frame_index:06d}_{request.offset:+03d}_{request.layer}.flo",
                field.du.astype(np.float32),
                field.dv.astype(np.float32),
                field.validity,
            )
            # float32 on disk: re-read so both runs see identical precision
            du, dv, valid = flowio.read_flo(
                tmp_path / f"{request.frame_index:06d}_{request.offset:+03d}_{request.layer}.flo"
            )
            from motionprob.motion import FlowField

            return FlowField(du, dv, valid)

    recorded = estimate_frame(seq.frames, index, k, RecordingProvider(), params)
    replayed = estimate_frame(seq.frames, index, k, PrecomputedFlow(tmp_path), params)
    assert np.array_equal(recorded.probability.values, replayed.probability.values)


def test_keep_splats_collects_debug_frames(tiny_sequence):
    seq = tiny_sequence
    res = estimate_frame(seq.frames, 3, seq.scene.intrinsics, BlockMatchingFlow(),
                         PipelineParams(), keep_splats=True)
    assert set(res.splats) == {2, -2}
    direct = splat_frame(
        seq.frames[5], relative_pose(seq.frames[5], seq.frames[3]), seq.scene.intrinsics
    )
    assert np.array_equal(res.splats[2].image, direct.image)


# --- configuration -------------------------------------------------------------


def test_parse_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nmag_hi = 4.5\noffsets = 1,3\n\njobs = 2 # trailing\n")
    values = parse_config_file(cfg)
    assert values == {"mag_hi": "4.5", "offsets": "1,3", "jobs": "2"}


def test_parse_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config_file(cfg)


def test_parse_config_rejects_malformed_line(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("jobs 2\n")
    with pytest.raises(ConfigError):
        parse_config_file(cfg)


def test_config_requires_source():
    with pytest.raises(ConfigError):
        PipelineConfig.build(overrides={"layout": "manifest"})
    with pytest.raises(ConfigError):
        PipelineConfig.build(overrides={"layout": "tum", "dataset_root": "x"})
    with pytest.raises(ConfigError):
        PipelineConfig.build(overrides={"manifest": "m", "flow_source": "files"})


def test_config_parameter_ranges():
    base = {"manifest": "m"}
    with pytest.raises(ConfigError):
        PipelineConfig.build(overrides={**base, "mag_lo": "9", "mag_hi": "1"})
    with pytest.raises(ConfigError):
        PipelineConfig.build(overrides={**base, "offsets": "0"})
    with pytest.raises(ConfigError):
        PipelineConfig.build(overrides={**base, "jobs": "0"})
    with pytest.raises(ConfigError):
        PipelineConfig.build(overrides={**base, "intrinsics": "1,2,3"})


def test_config_intrinsics_preset_and_explicit():
    cfg = PipelineConfig.build(overrides={"manifest": "m"})
    assert cfg.intrinsics().fx == 535.4
    explicit = PipelineConfig.build(
        overrides={"manifest": "m", "intrinsics": "100,100,31.5,23.5,64,48"}
    )
    k = explicit.intrinsics()
    assert (k.fx, k.width, k.height) == (100.0, 64, 48)


def test_config_builds_providers(tmp_path):
    cfg = PipelineConfig.build(overrides={"manifest": "m"})
    assert isinstance(cfg.provider(), BlockMatchingFlow)
    files = PipelineConfig.build(
        overrides={"manifest": "m", "flow_source": "files", "flow_dir": str(tmp_path)}
    )
    assert isinstance(files.provider(), PrecomputedFlow)
