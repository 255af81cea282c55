"""
Tests for Sim(3) alignment and loop-closure drift evaluation
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from errors import DegenerateConfigurationError, TrajectoryError
from evaluation import (DriftReport, SegmentGroundTruth, Sim3, Trajectory, align_sim3, alignment_error, associate,
                        cumulative_distribution, evaluate_sequence, inject_drift, joint_alignment, joint_rmse,
                        normalize_gt_scale, path_length, reverse, scale_multiplier)


def random_sim3(rng):
    R = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    return Sim3(rng.uniform(0.2, 5.0), R, rng.uniform(-10, 10, 3))


def segment_spread(gt):
    centred = gt.positions - gt.positions.mean(axis=0)
    return math.sqrt(np.mean(np.sum(centred * centred, axis=1)))


# ---------------------------------------------------------------------------
# Sim(3)
# ---------------------------------------------------------------------------

def test_alignment_recovers_random_similarities(rng):
    for _ in range(1000):
        T = random_sim3(rng)
        source = rng.normal(size=(10, 3))
        estimate, rmse = align_sim3(source, T.apply(source))
        np.testing.assert_allclose(estimate.matrix(), T.matrix(), rtol=0, atol=1e-9)
        assert rmse < 1e-9


def test_alignment_rejects_degenerate_inputs():
    with pytest.raises(DegenerateConfigurationError):
        align_sim3(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        align_sim3(line, line)


def test_sim3_composition_and_inverse(rng):
    T = random_sim3(rng)
    identity = T @ T.inverse()
    np.testing.assert_allclose(identity.matrix(), np.eye(4), atol=1e-12)
    points = rng.normal(size=(5, 3))
    np.testing.assert_allclose(T.inverse().apply(T.apply(points)), points, atol=1e-9)


def test_rotation_angle():
    R = Rotation.from_rotvec([0.0, 0.0, math.radians(30.0)]).as_matrix()
    assert Sim3(1.0, R, np.zeros(3)).rotation_angle_deg() == pytest.approx(30.0)
    assert Sim3.identity().rotation_angle_deg() == 0.0


def test_rotation_angle_agrees_with_trace_formula(rng):
    for _ in range(20):
        R = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
        trace_angle = math.degrees(math.acos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))
        assert Sim3(1.0, R, np.zeros(3)).rotation_angle_deg() == pytest.approx(trace_angle, abs=1e-5)


def test_rotation_angle_resolves_tiny_rotations():
    R = Rotation.from_rotvec([0.0, 1e-9, 0.0]).as_matrix()
    assert Sim3(1.0, R, np.zeros(3)).rotation_angle_deg() == pytest.approx(math.degrees(1e-9), rel=1e-6)


def test_sim3_validation():
    with pytest.raises(DegenerateConfigurationError):
        Sim3(0.0, np.eye(3), np.zeros(3))
    with pytest.raises(DegenerateConfigurationError):
        Sim3(1.0, np.diag([1.0, 1.0, -1.0]), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_alignment_left_invariant(seed):
    """Pre-transforming the targets by Q turns the alignment T into Q T"""
    rng = np.random.default_rng(seed)
    source = rng.normal(size=(8, 3))
    target = random_sim3(rng).apply(source) + rng.normal(scale=0.1, size=(8, 3))
    Q = random_sim3(rng)

    T, _ = align_sim3(source, target)
    T_moved, _ = align_sim3(source, Q.apply(target))
    np.testing.assert_allclose(T_moved.matrix(), (Q @ T).matrix(), rtol=1e-9, atol=1e-9)


def test_alignment_error_matches_explicit_sum(rng):
    positions = rng.normal(size=(100, 3))
    T_s, T_e = random_sim3(rng), random_sim3(rng)

    def apply(T, p):
        return [T.scale * sum(T.rotation[i, j] * p[j] for j in range(3)) + T.translation[i] for i in range(3)]

    total = 0.0
    for p in positions:
        a, b = apply(T_s, p), apply(T_e, p)
        total += sum((a[i] - b[i]) ** 2 for i in range(3))
    assert alignment_error(positions, T_s, T_e) == pytest.approx(math.sqrt(total / 100), rel=1e-12)


def test_alignment_error_zero_only_for_equal_alignments(loop, rng):
    traj, _ = loop
    T = random_sim3(rng)
    assert alignment_error(traj, T, T) == 0.0

    small_turn = Rotation.from_rotvec([0.0, 0.0, 1e-6]).as_matrix()
    for other in (Sim3(1.0 + 1e-6, np.eye(3), np.zeros(3)), Sim3(1.0, small_turn, np.zeros(3)),
                  Sim3(1.0, np.eye(3), [0.0, 1e-6, 0.0])):
        assert alignment_error(traj, T, T @ other) > 0.0


# ---------------------------------------------------------------------------
# Drift evaluation
# ---------------------------------------------------------------------------

def test_drift_free_loop(loop):
    traj, gt = loop
    report = evaluate_sequence(traj, gt)
    assert report.e_align < 1e-9
    assert report.e_s == pytest.approx(1.0, abs=1e-9)
    assert report.e_r == pytest.approx(0.0, abs=1e-6)
    assert report.e_t < 1e-9
    assert report.e_rmse < 1e-9


@pytest.mark.parametrize('jump, expected', [(1.25, 0.8), (0.8, 1.25)])
def test_scale_jump_reported_as_inverse(loop, jump, expected):
    """A jump by lambda is corrected by the end alignment, so the drift scale is 1 / lambda"""
    traj, gt = loop
    drifted = inject_drift(traj, len(traj) // 2, 'scale', jump)
    report = evaluate_sequence(drifted, gt)
    assert report.e_s == pytest.approx(expected, abs=1e-6)
    assert report.e_s_sym == pytest.approx(1.25, abs=1e-6)
    assert report.e_align > 0.1


def test_rotation_jump_angle(loop):
    traj, gt = loop
    drifted = inject_drift(traj, len(traj) // 2, 'rotation', 10.0, axis=(0.0, 0.0, 1.0))
    report = evaluate_sequence(drifted, gt)
    assert report.e_r == pytest.approx(10.0, abs=1e-6)
    assert report.e_s == pytest.approx(1.0, abs=1e-9)


def test_alignment_error_less_sensitive_to_drift_location(loop):
    traj, gt = loop
    n = len(traj)
    e_t, e_align = [], []
    for j in range(10):
        at = int((0.1 + 0.8 * (j + 0.5) / 10) * n)
        report = evaluate_sequence(inject_drift(traj, at, 'rotation', 5.0), gt)
        e_t.append(report.e_t)
        e_align.append(report.e_align)
    spread_t = np.ptp(e_t) / np.mean(e_t)
    spread_align = np.ptp(e_align) / np.mean(e_align)
    assert spread_t > 2 * spread_align


def test_joint_alignment_collapses_under_translation_drift(loop):
    """A single Sim(3) over both segments shrinks the trajectory instead of reporting drift"""
    traj, gt = loop
    sigma = segment_spread(gt)
    drifted = inject_drift(traj, len(traj) // 2, 'translation', [10 * sigma, 0.0, 0.0])

    T, _ = joint_alignment(drifted, gt)
    assert T.scale < 0.1
    report = evaluate_sequence(drifted, gt)
    assert report.e_s == pytest.approx(1.0, abs=1e-9)
    assert report.e_t == pytest.approx(10 * sigma, rel=1e-9)


def test_missing_end_segment(loop):
    traj, gt = loop
    cut = int(0.6 * len(traj))
    report = evaluate_sequence(Trajectory(traj.timestamps[:cut], traj.positions[:cut]), gt)
    assert not report.has_estimate
    assert math.isinf(report.e_align)
    assert math.isfinite(report.rmse_start)
    assert report.note


def test_missing_start_segment(loop):
    traj, gt = loop
    cut = int(0.4 * len(traj))
    report = evaluate_sequence(Trajectory(traj.timestamps[cut:], traj.positions[cut:]), gt)
    assert all(math.isinf(v) for k, v in report.to_dict().items())


def test_metrics_invariant_to_trajectory_frame(loop, rng):
    """Expressing the tracked trajectory in another similarity frame changes nothing"""
    traj, gt = loop
    drifted = inject_drift(traj, len(traj) // 2, 'rotation', 7.0, axis=(1.0, 1.0, 0.0))
    drifted = inject_drift(drifted, 3 * len(traj) // 4, 'scale', 1.1)
    G = random_sim3(rng)
    moved = drifted.with_positions(G.apply(drifted.positions))

    before = evaluate_sequence(drifted, gt).to_dict()
    after = evaluate_sequence(moved, gt).to_dict()
    for key in DriftReport.METRICS:
        assert after[key] == pytest.approx(before[key], rel=1e-6, abs=1e-9), key


def test_rigid_motion_of_trajectory_and_ground_truth(loop, rng):
    """Moving both frames rigidly keeps every metric except the gt-frame translation"""
    traj, gt = loop
    drifted = inject_drift(traj, len(traj) // 2, 'rotation', 7.0, axis=(1.0, 1.0, 0.0))
    drifted = inject_drift(drifted, 3 * len(traj) // 4, 'scale', 1.1)
    G = Sim3(1.0, Rotation.from_rotvec(rng.normal(size=3)).as_matrix(), rng.uniform(-10, 10, 3))
    moved_traj = drifted.with_positions(G.apply(drifted.positions))
    moved_gt = SegmentGroundTruth(gt.timestamps, G.apply(gt.positions), gt.segments)

    before = evaluate_sequence(drifted, gt).to_dict()
    after = evaluate_sequence(moved_traj, moved_gt).to_dict()
    for key in ('e_s', 'e_r', 'e_align', 'e_rmse', 'rmse_start', 'rmse_end'):
        assert after[key] == pytest.approx(before[key], rel=1e-6, abs=1e-9), key


def test_joint_rmse_is_single_alignment_over_both_segments(loop):
    traj, gt = loop
    drifted = inject_drift(traj, len(traj) // 2, 'scale', 1.25)
    match = associate(drifted.timestamps, gt.timestamps)
    assert np.all(match >= 0)

    _, expected = align_sim3(drifted.positions[match], gt.positions)
    assert expected > 0
    assert joint_rmse(drifted, gt) == pytest.approx(expected, rel=1e-12)
    assert evaluate_sequence(drifted, gt).e_rmse == pytest.approx(expected, rel=1e-12)


def test_reverse_swaps_segments(loop):
    traj, gt = loop
    rev_traj, rev_gt = reverse(traj, gt)
    assert rev_traj.timestamps[0] == 0.0
    np.testing.assert_array_equal(rev_traj.positions[0], traj.positions[-1])
    assert np.count_nonzero(rev_gt.start_mask) == np.count_nonzero(gt.end_mask)
    assert evaluate_sequence(rev_traj, rev_gt).e_align < 1e-9

    assert isinstance(reverse(traj), Trajectory)


def test_reversed_scale_jump_inverts(loop):
    traj, gt = loop
    drifted = inject_drift(traj, len(traj) // 2, 'scale', 1.25)
    forward = evaluate_sequence(drifted, gt)
    backward = evaluate_sequence(*reverse(drifted, gt))
    assert backward.e_s == pytest.approx(1.0 / forward.e_s, rel=1e-6)


def test_inject_drift_validation(loop):
    traj, _ = loop
    with pytest.raises(TrajectoryError):
        inject_drift(traj, len(traj), 'scale', 1.1)
    with pytest.raises(TrajectoryError):
        inject_drift(traj, 5, 'shear', 1.1)
    with pytest.raises(TrajectoryError):
        inject_drift(traj, 5, 'scale', -1.0)
    unchanged = inject_drift(traj, 5, 'translation', 2.0)
    np.testing.assert_array_equal(unchanged.positions[:6], traj.positions[:6])
    np.testing.assert_allclose(unchanged.positions[6:, 2] - traj.positions[6:, 2], 2.0)


# ---------------------------------------------------------------------------
# Trajectories, association and scale
# ---------------------------------------------------------------------------

def test_trajectory_requires_increasing_stamps():
    with pytest.raises(TrajectoryError):
        Trajectory([0.0, 1.0, 1.0], np.zeros((3, 3)))
    with pytest.raises(TrajectoryError):
        Trajectory([0.0], np.zeros((1, 3)))


def test_ground_truth_needs_both_segments():
    square = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    with pytest.raises(TrajectoryError):
        SegmentGroundTruth([0, 1, 2, 3], square, ['S'] * 4)
    with pytest.raises(DegenerateConfigurationError):
        SegmentGroundTruth([0, 1, 2, 3, 4, 5],
                           np.vstack([square[:3], [[0, 0, 0], [1, 0, 0], [2, 0, 0]]]),
                           ['S'] * 3 + ['E'] * 3)


def test_associate_window():
    traj = np.array([0.0, 1.0, 2.0])
    np.testing.assert_array_equal(associate(traj, [0.004, 1.5, 2.02], window=0.01), [0, -1, -1])
    np.testing.assert_array_equal(associate(traj, [0.004, 1.5, 2.02], window=0.5), [0, 1, 2])


def test_normalize_gt_scale(loop):
    _, gt = loop
    points = gt.positions[gt.start_mask]
    scaled = normalize_gt_scale(points, path_length(points))
    assert path_length(scaled) == pytest.approx(100.0, abs=1e-9)
    assert isinstance(normalize_gt_scale(gt, 50.0), SegmentGroundTruth)
    with pytest.raises(TrajectoryError):
        normalize_gt_scale(points, None)
    with pytest.raises(TrajectoryError):
        normalize_gt_scale(points, 0.0)


def test_scale_multiplier_symmetric():
    assert scale_multiplier(0.8) == pytest.approx(1.25)
    assert scale_multiplier(1.25) == pytest.approx(1.25)
    np.testing.assert_allclose(scale_multiplier([0.5, 2.0]), [2.0, 2.0])


# ---------------------------------------------------------------------------
# Cumulative distributions
# ---------------------------------------------------------------------------

def test_cumulative_distribution_counts():
    dist = cumulative_distribution([0.3, math.inf, 0.1, 0.2, 0.2])
    np.testing.assert_array_equal(dist.thresholds, [0.1, 0.2, 0.2, 0.3])
    np.testing.assert_array_equal(dist.counts, [1, 3, 3, 4])
    assert dist.total == 5


def test_cumulative_distribution_treats_nan_as_failure():
    dist = cumulative_distribution([float('nan'), 1.0])
    assert dist.pairs() == [(1.0, 1)]
    assert dist.total == 2


def test_cumulative_distribution_matches_naive_count(rng):
    errors = rng.exponential(1.0, 200)
    errors[::7] = math.inf
    dist = cumulative_distribution(errors)
    for threshold, count in dist.pairs():
        assert count == np.count_nonzero(errors <= threshold)


def test_scale_jump_spread_larger_in_translation_drift(loop):
    """A x0.8 jump at ten time-points: e_t varies more (max/min) than e_align"""
    traj, gt = loop
    n = len(traj)
    e_t, e_align = [], []
    for j in range(10):
        at = int((0.1 + 0.8 * (j + 0.5) / 10) * n)
        report = evaluate_sequence(inject_drift(traj, at, 'scale', 0.8), gt)
        e_t.append(report.e_t)
        e_align.append(report.e_align)
    assert max(e_t) / min(e_t) > max(e_align) / min(e_align)
