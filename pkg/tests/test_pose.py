import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dancegen.errors import ConfigurationError, FileFormatError, SequenceRejected
from dancegen.pose import (
    HandGroup,
    PoseSequence,
    SequenceMeta,
    SkeletonSpec,
    check_frame_rate,
    inter_frame_diff,
    interpolate_invisible,
    read_pose_stream,
    read_skeleton_json,
    scale_hands,
    segment_by_shot_change,
    sequence_from_frames,
    unscale_hands,
    validate_sequence,
    write_pose_stream,
)

HAND_SKEL = SkeletonSpec(
    joint_names=("head", "wrist", "thumb", "pinky"),
    hand_groups=(HandGroup(wrist=1, members=(2, 3)),),
    edge_list=((0, 1), (1, 2), (1, 3)),
)


def seq_of(frames, fps=30.0):
    return sequence_from_frames(np.asarray(frames, dtype=np.float64), fps)


def random_seq(rng, t=12, k=4):
    data = rng.uniform(0.0, 1.0, size=(t, k, 3))
    return sequence_from_frames(data, 30.0)


# ---------------------------------------------------------------------------
# types


def test_meta_rejects_bad_fps_and_counts():
    with pytest.raises(ConfigurationError):
        SequenceMeta(fps=0.0, frame_count=10)
    with pytest.raises(ConfigurationError):
        SequenceMeta(fps=-1.0, frame_count=10)
    with pytest.raises(ConfigurationError):
        SequenceMeta(fps=30.0, frame_count=-1)


def test_meta_duration():
    assert SequenceMeta(fps=30.0, frame_count=90).duration == pytest.approx(3.0)


def test_sequence_rejects_shape_and_count_mismatch():
    with pytest.raises(ConfigurationError):
        PoseSequence(SequenceMeta(fps=30.0, frame_count=2), np.zeros((2, 4, 2)))
    with pytest.raises(ConfigurationError):
        PoseSequence(SequenceMeta(fps=30.0, frame_count=3), np.zeros((2, 4, 3)))


def test_keypoint_accessor():
    seq = seq_of([[[0.1, 0.2, 0.9]]])
    kp = seq.keypoint(0, 0)
    assert (kp.x, kp.y, kp.s) == (0.1, 0.2, 0.9)


def test_skeleton_validation():
    with pytest.raises(ConfigurationError):  # wrist id out of range
        SkeletonSpec(("a",), hand_groups=(HandGroup(wrist=1, members=()),))
    with pytest.raises(ConfigurationError):  # wrist inside its own members
        SkeletonSpec(("a", "b"), hand_groups=(HandGroup(wrist=0, members=(0,)),))
    with pytest.raises(ConfigurationError):  # member out of range
        SkeletonSpec(("a", "b"), hand_groups=(HandGroup(wrist=0, members=(5,)),))
    with pytest.raises(ConfigurationError):  # member shared across groups
        SkeletonSpec(
            ("a", "b", "c", "d"),
            hand_groups=(
                HandGroup(wrist=0, members=(2,)),
                HandGroup(wrist=1, members=(2,)),
            ),
        )
    with pytest.raises(ConfigurationError):  # edge out of range
        SkeletonSpec(("a", "b"), edge_list=((0, 7),))


# ---------------------------------------------------------------------------
# validation


def test_all_invisible_sequence_is_valid():
    seq = seq_of(np.zeros((4, 3, 3)))
    assert validate_sequence(seq) == []


def test_out_of_range_coordinate_is_named():
    data = np.full((2, 2, 3), 0.5)
    data[1, 0, 0] = 1.5
    out = validate_sequence(seq_of(data))
    assert len(out) == 1
    v = out[0]
    assert (v.frame, v.joint, v.field) == (1, 0, "x")


def test_nan_coordinate_is_a_violation():
    data = np.full((1, 1, 3), 0.5)
    data[0, 0, 1] = np.nan
    out = validate_sequence(seq_of(data))
    assert [v.field for v in out] == ["y"]


def test_joint_count_mismatch_violation():
    seq = seq_of(np.full((2, 3, 3), 0.5))
    out = validate_sequence(seq, HAND_SKEL)
    assert [v.field for v in out] == ["joint_count"]


# ---------------------------------------------------------------------------
# hand scaling


def test_scale_moves_fingertip_along_ray():
    # wrist (0.5,0.5), thumb (0.5,0.6), factor 2 -> thumb (0.5,0.7)
    data = np.full((1, 4, 3), 0.5)
    data[0, 2, :2] = (0.5, 0.6)
    out = scale_hands(seq_of(data), HAND_SKEL, 2.0)
    assert tuple(out.seq.data[0, 2, :2]) == (0.5, 0.7)
    assert not out.clamp_flags.any()


def test_scale_factor_one_is_identity():
    rng = np.random.default_rng(0)
    seq = random_seq(rng)
    out = scale_hands(seq, HAND_SKEL, 1.0)
    assert np.array_equal(out.seq.data, seq.data)


def test_scale_clamps_and_flags():
    # wrist (0.5,0.5), thumb (0.9,0.5), factor 2 -> x=1.3 clamps to 1.0
    data = np.full((1, 4, 3), 0.5)
    data[0, 2, :2] = (0.9, 0.5)
    out = scale_hands(seq_of(data), HAND_SKEL, 2.0)
    assert tuple(out.seq.data[0, 2, :2]) == (1.0, 0.5)
    assert out.clamp_flags[0, 2]
    assert out.clamp_flags.sum() == 1


def test_scale_never_touches_wrist_nonhand_or_confidence():
    rng = np.random.default_rng(1)
    seq = random_seq(rng)
    out = scale_hands(seq, HAND_SKEL, 3.0)
    assert np.array_equal(out.seq.data[:, 0], seq.data[:, 0])  # non-hand joint
    assert np.array_equal(out.seq.data[:, 1], seq.data[:, 1])  # wrist
    assert np.array_equal(out.seq.data[:, :, 2], seq.data[:, :, 2])  # confidences


def test_scale_requires_hand_groups_and_positive_factor():
    seq = seq_of(np.full((1, 2, 3), 0.5))
    bare = SkeletonSpec(("a", "b"))
    with pytest.raises(ConfigurationError):
        scale_hands(seq, bare, 2.0)
    with pytest.raises(ConfigurationError):
        scale_hands(seq, HAND_SKEL, 0.0)
    with pytest.raises(ConfigurationError):
        unscale_hands(seq, bare, 2.0)


@settings(deadline=None, max_examples=60)
@given(
    st.integers(min_value=0, max_value=2**31 - 1),
    st.floats(min_value=0.5, max_value=4.0, allow_nan=False),
)
def test_roundtrip_exact_on_unclamped_joints(seed, factor):
    rng = np.random.default_rng(seed)
    seq = random_seq(rng, t=6)
    scaled = scale_hands(seq, HAND_SKEL, factor)
    back = unscale_hands(scaled.seq, HAND_SKEL, factor)
    # wrists and non-hand joints never move: bitwise equality
    assert np.array_equal(back.data[:, 0], seq.data[:, 0])
    assert np.array_equal(back.data[:, 1], seq.data[:, 1])
    # unclamped hand joints: the forward map is not injective in floating
    # point (adjacent doubles can scale to one value), so the inverse is
    # pinned to <= 1e-15 absolute rather than bitwise
    free = ~scaled.clamp_flags
    err = np.abs(back.data[:, :, :2] - seq.data[:, :, :2]).max(axis=2)
    assert err[free].max() <= 1e-15


# ---------------------------------------------------------------------------
# invisibility


def test_interpolate_fills_midpoint_with_min_confidence():
    data = np.zeros((3, 1, 3))
    data[0, 0] = (0.2, 0.2, 0.8)
    data[2, 0] = (0.4, 0.4, 0.6)
    out = interpolate_invisible(seq_of(data))
    assert np.allclose(out.data[1, 0], (0.3, 0.3, 0.6))


def test_interpolate_identity_on_fully_visible():
    rng = np.random.default_rng(2)
    seq = random_seq(rng)
    seq.data[:, :, 2] = 1.0
    out = interpolate_invisible(seq)
    assert np.array_equal(out.data, seq.data)


def test_interpolate_respects_max_gap():
    data = np.zeros((6, 1, 3))
    data[0, 0] = (0.1, 0.1, 1.0)
    data[5, 0] = (0.6, 0.6, 1.0)
    out = interpolate_invisible(seq_of(data), max_gap=4, max_invisible_fraction=0.9)
    assert (out.data[1:5, 0, 2] == 0.0).all()  # 5-frame gap > max_gap: untouched
    out2 = interpolate_invisible(seq_of(data), max_gap=5, max_invisible_fraction=0.9)
    assert (out2.data[1:5, 0, 2] > 0.0).all()


def test_interpolate_rejects_mostly_invisible():
    data = np.full((10, 1, 3), 0.5)
    data[4:, 0, 2] = 0.0  # 60% invisible, no fillable gap (no right endpoint)
    with pytest.raises(SequenceRejected) as err:
        interpolate_invisible(seq_of(data), max_invisible_fraction=0.5)
    assert err.value.fraction == pytest.approx(0.6)


@settings(deadline=None, max_examples=40)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_interpolate_never_touches_visible_keypoints(seed):
    rng = np.random.default_rng(seed)
    seq = random_seq(rng, t=10)
    seq.data[:, :, 2] = rng.choice([0.0, 1.0], size=(10, 4), p=[0.4, 0.6])
    visible = seq.data[:, :, 2] > 0
    try:
        out = interpolate_invisible(seq)
    except SequenceRejected:
        return
    assert np.array_equal(out.data[visible], seq.data[visible])


# ---------------------------------------------------------------------------
# shot changes and frame rate


def test_inter_frame_diff_mean_over_common_visible():
    data = np.zeros((2, 2, 3))
    data[0, 0] = (0.0, 0.0, 1.0)
    data[1, 0] = (0.3, 0.4, 1.0)  # distance 0.5
    data[0, 1] = (0.5, 0.5, 1.0)
    data[1, 1] = (0.5, 0.5, 0.0)  # invisible in second frame: excluded
    diff = inter_frame_diff(seq_of(data))
    assert diff.shape == (1,)
    assert diff[0] == pytest.approx(0.5)


def test_inter_frame_diff_no_common_joint_is_infinite():
    data = np.zeros((2, 1, 3))
    data[0, 0] = (0.2, 0.2, 1.0)
    diff = inter_frame_diff(seq_of(data))
    assert np.isinf(diff[0])


def _jumpy_sequence(t_total, jump_at):
    data = np.full((t_total, 2, 3), 0.3)
    for t in jump_at:
        data[t:, :, 0] += 0.4  # everything after the cut shifts far away
    return seq_of(data)


def test_static_sequence_is_one_segment():
    segs = segment_by_shot_change(_jumpy_sequence(300, []), 0.1, min_len=256)
    assert [s.T for s in segs] == [300]


def test_mid_jump_drops_both_short_halves():
    segs = segment_by_shot_change(_jumpy_sequence(300, [150]), 0.1, min_len=256)
    assert segs == []


def test_jump_at_260_of_600_keeps_both_sides():
    segs = segment_by_shot_change(_jumpy_sequence(600, [260]), 0.1, min_len=256)
    assert [s.T for s in segs] == [260, 340]


def test_segments_concatenate_to_subsequence():
    seq = _jumpy_sequence(900, [260, 600])
    segs = segment_by_shot_change(seq, 0.1, min_len=100)
    joined = np.concatenate([s.data for s in segs], axis=0)
    assert joined.shape[0] == 900
    assert np.array_equal(joined, seq.data)


def test_empty_sequence_yields_no_segments():
    assert segment_by_shot_change(seq_of(np.zeros((0, 2, 3))), 0.1) == []


def test_frame_rate_bounds_inclusive():
    assert check_frame_rate(SequenceMeta(fps=30.0, frame_count=1))
    assert check_frame_rate(SequenceMeta(fps=20.0, frame_count=1))
    assert check_frame_rate(SequenceMeta(fps=60.0, frame_count=1))
    assert not check_frame_rate(SequenceMeta(fps=19.9, frame_count=1))
    assert not check_frame_rate(SequenceMeta(fps=60.1, frame_count=1))


# ---------------------------------------------------------------------------
# stream files


def test_pose_stream_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    seq = random_seq(rng, t=7, k=3)
    path = tmp_path / "seq.poses.txt"
    write_pose_stream(path, seq)
    back = read_pose_stream(path, expect_k=3)
    assert back.meta.fps == seq.meta.fps
    assert back.T == seq.T
    assert np.allclose(back.data, seq.data, atol=1e-9)  # %.9g serialization


def test_pose_stream_header_and_k_checks(tmp_path):
    path = tmp_path / "seq.poses.txt"
    write_pose_stream(path, seq_of(np.full((2, 2, 3), 0.5)))
    with pytest.raises(FileFormatError):
        read_pose_stream(path, expect_k=5)
    bad = tmp_path / "bad.poses.txt"
    bad.write_text("#wrong v9\n0 0 0\n")
    with pytest.raises(FileFormatError):
        read_pose_stream(bad)


def test_pose_stream_rejects_short_rows(tmp_path):
    path = tmp_path / "short.poses.txt"
    path.write_text("#pose2d v1 K=2 fps=30\n0.1 0.2 0.3\n")
    with pytest.raises(FileFormatError) as err:
        read_pose_stream(path)
    assert ":2:" in str(err.value)  # names the offending line


def test_skeleton_json_roundtrip(tmp_path):
    path = tmp_path / "skel.json"
    path.write_text(
        '{"joint_names": ["head", "wrist", "thumb", "pinky"],'
        ' "hand_groups": [{"wrist": 1, "members": [2, 3]}],'
        ' "edge_list": [[0, 1], [1, 2]]}'
    )
    spec = read_skeleton_json(path)
    assert spec == SkeletonSpec(
        ("head", "wrist", "thumb", "pinky"),
        hand_groups=(HandGroup(wrist=1, members=(2, 3)),),
        edge_list=((0, 1), (1, 2)),
    )


def test_skeleton_json_malformed(tmp_path):
    path = tmp_path / "skel.json"
    path.write_text('{"hand_groups": []}')
    with pytest.raises(FileFormatError):
        read_skeleton_json(path)
