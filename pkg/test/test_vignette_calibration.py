"""
Tests for dense vignette calibration from posed plane observations
"""
import math

import numpy as np
import pytest

from errors import CalibrationError, DegenerateConfigurationError
from photometry import ResponseLUT, VignetteMap
from synthetic_oracle import SyntheticScene, flat_vignette, gen_plane_observations
from vignette_calibration import (PlaneGrid, PlaneObservation, VignetteCalibrator, VignetteOptions,
                                  _collect_samples, apply_homography, calibrate_vignette, energy_vignette,
                                  pose_from_correspondences, round_half_away)

H_TRUE = np.array([[60.0, 8.0, 5.0],
                   [-4.0, 55.0, 3.0],
                   [0.05, 0.02, 1.0]])


def fast_options(**overrides):
    values = dict(tol=0.0, max_iters=10, grid_resolution=64, overexposure=255)
    values.update(overrides)
    return VignetteOptions(**values)


def test_options_take_overexposure_override():
    opts = VignetteOptions.from_config(overexposure=254, grid_resolution=32)
    assert opts.overexposure == 254
    assert opts.grid_resolution == 32
    assert not hasattr(opts, 'stride')


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away([0.5, 1.5, 2.49, -0.5, -1.5]), [1, 2, 2, -1, -2])


def test_homography_recovered_from_exact_correspondences(rng):
    plane = rng.uniform(0, 1, (12, 2))
    pixels = apply_homography(H_TRUE, plane)
    estimate = pose_from_correspondences(plane, pixels)
    np.testing.assert_allclose(estimate.matrix, H_TRUE, atol=1e-8)
    assert estimate.rms_residual < 1e-9


def test_four_corners_determine_homography():
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    estimate = pose_from_correspondences(corners, apply_homography(H_TRUE, corners))
    np.testing.assert_allclose(estimate.matrix, H_TRUE, atol=1e-8)


def test_identity_correspondences_give_identity(rng):
    points = rng.uniform(0, 1, (8, 2))
    estimate = pose_from_correspondences(points, points)
    np.testing.assert_allclose(estimate.matrix, np.eye(3), atol=1e-9)


def test_degenerate_correspondences_rejected():
    with pytest.raises(DegenerateConfigurationError):
        pose_from_correspondences([[0, 0], [1, 0], [0, 1]], [[0, 0], [1, 0], [0, 1]])
    collinear = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DegenerateConfigurationError):
        pose_from_correspondences(collinear, apply_homography(H_TRUE, collinear))


def test_negative_homography_scale_normalized():
    obs = PlaneObservation(np.zeros((4, 4), dtype=np.uint8), 1.0, -H_TRUE)
    assert obs.homography[2, 2] > 0
    np.testing.assert_allclose(obs.project([[0.5, 0.5]]), apply_homography(H_TRUE, [[0.5, 0.5]]))


def test_energy_trace_non_increasing(small_scene):
    for seed in range(5):
        observations, truth = gen_plane_observations(small_scene, n_poses=10, seed=seed)
        result = calibrate_vignette(observations, truth.response, fast_options())
        energies = np.asarray(result.energies)
        assert np.all(np.diff(energies) <= 1e-9 * energies[0]), f"seed {seed}"


def test_plane_is_stationary_after_calibration(small_scene):
    """One more plane update leaves the returned plane unchanged"""
    observations, truth = gen_plane_observations(small_scene, n_poses=10)
    opts = fast_options(max_iters=20)
    result = calibrate_vignette(observations, truth.response, opts)

    s = _collect_samples(observations, truth.response, opts.grid_resolution, opts.plane_size, 255)
    C = result.plane.values.ravel()
    C_next = VignetteCalibrator.update_plane(result.vignette.values.ravel(), C, s)
    seen = result.plane.observed.ravel()
    np.testing.assert_allclose(C_next[seen], C[seen], rtol=1e-9)


def test_plane_and_vignette_stationary_at_convergence(small_scene):
    """Both closed-form updates reproduce the returned C and V"""
    observations, truth = gen_plane_observations(small_scene, n_poses=10)
    # a negative tolerance never stops early: all max_iters alternations run
    opts = fast_options(tol=-1.0, max_iters=500)
    result = calibrate_vignette(observations, truth.response, opts)
    assert result.iterations == 500

    s = _collect_samples(observations, truth.response, opts.grid_resolution, opts.plane_size, 255)
    V = result.vignette.values.ravel()
    C = result.plane.values.ravel()
    seen_cells = result.plane.observed.ravel()
    seen_pixels = result.vignette.valid.ravel()
    np.testing.assert_allclose(VignetteCalibrator.update_plane(V, C, s)[seen_cells], C[seen_cells], rtol=1e-9)
    np.testing.assert_allclose(VignetteCalibrator.update_vignette(V, C, s)[seen_pixels], V[seen_pixels],
                               rtol=1e-9)


def test_energy_gauge_invariance(small_scene, rng):
    observations, truth = gen_plane_observations(small_scene, n_poses=6)
    s = _collect_samples(observations, truth.response, 64, 1.0, 255)
    V = rng.uniform(0.5, 1.0, s.n_pixels)
    C = rng.uniform(50.0, 150.0, s.n_cells)
    base = VignetteCalibrator.energy(V, C, s)
    for lam in (0.25, 3.0, 40.0):
        assert VignetteCalibrator.energy(V / lam, C * lam, s) == pytest.approx(base, rel=1e-12)


def test_normalized_vignette_independent_of_irradiance_scale(small_scene):
    """Scaling U by 3 scales C by 3 and leaves the max-normalized V unchanged"""
    observations, truth = gen_plane_observations(small_scene, n_poses=6)
    result = calibrate_vignette(observations, truth.response, fast_options())
    scaled = calibrate_vignette(observations, ResponseLUT(3.0 * truth.response.values), fast_options())

    np.testing.assert_allclose(scaled.vignette.values, result.vignette.values, rtol=1e-9, atol=1e-12)
    seen = result.plane.observed
    np.testing.assert_allclose(scaled.plane.values[seen], 3.0 * result.plane.values[seen], rtol=1e-9)


def loop_energy(C, V, observations, U, threshold=255):
    """Residual sum by explicit iteration over images and plane cells"""
    resolution = C.shape[0]
    total = 0.0
    for obs in observations:
        H = obs.homography
        height, width = obs.image.shape
        for r in range(resolution):
            for c in range(resolution):
                x, y = (c + 0.5) / resolution, (r + 0.5) / resolution
                w = H[2, 0] * x + H[2, 1] * y + H[2, 2]
                if w <= 0:
                    continue
                u = (H[0, 0] * x + H[0, 1] * y + H[0, 2]) / w
                v = (H[1, 0] * x + H[1, 1] * y + H[1, 2]) / w
                col = int(math.copysign(math.floor(abs(u) + 0.5), u))
                row = int(math.copysign(math.floor(abs(v) + 0.5), v))
                if not (0 <= col < width and 0 <= row < height):
                    continue
                k = int(obs.image[row, col])
                if k >= threshold:
                    continue
                residual = obs.exposure_ms * V[row, col] * C[r, c] - U[k]
                total += residual * residual
    return total


def test_energy_matches_explicit_loop(small_scene, rng):
    observations, truth = gen_plane_observations(small_scene, n_poses=3)
    plane = PlaneGrid(rng.uniform(50.0, 150.0, (10, 10)))
    vignette = VignetteMap(rng.uniform(0.5, 1.0, (small_scene.height, small_scene.width)))

    expected = loop_energy(plane.values, vignette.values, observations, truth.response.values)
    assert expected > 0
    assert energy_vignette(plane, vignette, observations, truth.response) == pytest.approx(expected, rel=1e-9)


def test_recovers_flat_vignette_under_constant_plane():
    """V = 1 and constant C, 200 poses: V = 1 at every observed pixel to 1e-3"""
    scene = SyntheticScene(width=32, height=24, response=ResponseLUT.identity(),
                           vignette=flat_vignette(32, 24), plane_pattern='constant', plane_level=200.0)
    observations, _ = gen_plane_observations(scene, n_poses=200)
    result = calibrate_vignette(observations, scene.response, fast_options(tol=1e-12, max_iters=100))

    valid = result.vignette.valid
    assert valid.all()
    assert np.max(np.abs(result.vignette.values[valid] - 1.0)) < 1e-3


def test_returned_energy_matches_independent_evaluation(small_scene):
    observations, truth = gen_plane_observations(small_scene, n_poses=8)
    result = calibrate_vignette(observations, truth.response, fast_options())
    recomputed = energy_vignette(result.plane, result.vignette, observations, truth.response)
    assert recomputed == pytest.approx(result.energies[-1], rel=1e-9)


def test_vignette_peaks_at_one(small_scene):
    observations, truth = gen_plane_observations(small_scene, n_poses=10)
    result = calibrate_vignette(observations, truth.response, fast_options())
    assert result.vignette.values[result.vignette.valid].max() == pytest.approx(1.0)
    assert result.n_components == 1


def test_single_observation_normalizes_each_component(small_scene):
    observations, truth = gen_plane_observations(small_scene, n_poses=1)
    result = calibrate_vignette(observations, truth.response, fast_options())

    assert result.n_components > 1
    labels = result.component_labels
    values = result.vignette.values
    for label in np.unique(labels[labels >= 0]):
        assert values[labels == label].max() == pytest.approx(1.0)


def test_no_observations_raises():
    with pytest.raises(CalibrationError):
        calibrate_vignette([], np.arange(256, dtype=float), fast_options())


def test_fully_saturated_observations_raise(small_scene):
    observations, truth = gen_plane_observations(small_scene.with_(plane_level=1e6), n_poses=2)
    with pytest.raises(CalibrationError, match='no valid observations'):
        calibrate_vignette(observations, truth.response, fast_options())


@pytest.mark.slow
def test_recovers_cos4_vignette():
    """50 poses on a 200x200 grid: every pixel within 0.02 of the true attenuation"""
    scene = SyntheticScene.default(seed=0)
    observations, truth = gen_plane_observations(scene)
    opts = VignetteOptions(tol=1e-12, max_iters=500, grid_resolution=200, overexposure=255)
    result = calibrate_vignette(observations, truth.response, opts)

    assert result.vignette.valid.all()
    assert np.max(np.abs(result.vignette.values - truth.vignette.values)) < 0.02


@pytest.mark.slow
def test_energy_trace_non_increasing_many_seeds(small_scene):
    for seed in range(100):
        scene = small_scene.with_(seed=seed, noise_sigma=1.0)
        observations, truth = gen_plane_observations(scene, n_poses=5)
        result = calibrate_vignette(observations, truth.response,
                                    fast_options(grid_resolution=32, max_iters=5))
        energies = np.asarray(result.energies)
        assert np.all(np.diff(energies) <= 1e-9 * energies[0]), f"seed {seed}"
