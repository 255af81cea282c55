"""
Synthetic Oracle Module
Ground-truth-known exposure sweeps, posed plane observations and loop trajectories.
Every generator is deterministic given its seed and returns the truth it rendered from.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

import config
from evaluation import SegmentGroundTruth, Trajectory
from photometry import (ExposureLog, IrradianceImage, ResponseLUT, VignetteMap, forward_model,
                        quantize_8bit)
from response_calibration import ExposureSweep
from vignette_calibration import PlaneGrid, PlaneObservation, apply_homography, pose_from_correspondences

logger = logging.getLogger(__name__)

PATTERNS = ('gradient', 'texture', 'constant')
PLANE_PATTERNS = ('smooth', 'constant')


# ---------------------------------------------------------------------------
# Scene factories
# ---------------------------------------------------------------------------

def gamma_response(gamma=2.2):
    """U(k) = 255 (k / 255)^gamma"""
    k = np.arange(256, dtype=np.float64)
    return ResponseLUT(255.0 * (k / 255.0) ** gamma)


def cos4_vignette(width, height, f=None):
    """Natural cos^4 falloff of a pinhole with focal length f (pixels), max-normalized"""
    f = float(width) if f is None else float(f)
    us, vs = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    r = np.hypot(us - (width - 1) / 2.0, vs - (height - 1) / 2.0)
    return VignetteMap.from_attenuation(np.cos(np.arctan(r / f)) ** 4)


def flat_vignette(width, height):
    return VignetteMap.flat(width, height)


def _smooth_field(xs, ys, rng, terms=4, max_freq=2.0):
    """Seeded sum of low-frequency sinusoids in [-1, 1]"""
    out = np.zeros(np.broadcast(xs, ys).shape)
    for _ in range(terms):
        fx, fy = rng.uniform(0.25 * max_freq, max_freq, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        out += np.sin(2 * math.pi * (fx * xs + fy * ys) + phase)
    return out / terms


@dataclass(frozen=True)
class SyntheticScene:
    """Everything a generator renders from: image size, true response and vignette, patterns, seed"""
    width: int
    height: int
    response: ResponseLUT
    vignette: VignetteMap
    pattern: str = 'gradient'
    irradiance_range: tuple = (0.005, 5000.0)
    plane_pattern: str = 'smooth'
    plane_level: float = 120.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown irradiance pattern '{self.pattern}'")
        if self.plane_pattern not in PLANE_PATTERNS:
            raise ValueError(f"unknown plane pattern '{self.plane_pattern}'")
        if self.vignette.shape != (self.height, self.width):
            raise ValueError("vignette does not match the scene size")

    @classmethod
    def default(cls, seed=0, **overrides):
        """Gamma-2.2 response and cos^4 vignette at the configured size"""
        width = overrides.pop('width', config.SYNTH_CONFIG['width'])
        height = overrides.pop('height', config.SYNTH_CONFIG['height'])
        values = dict(
            width=width, height=height,
            response=gamma_response(2.2),
            vignette=cos4_vignette(width, height),
            irradiance_range=config.SYNTH_CONFIG['irradiance_range'],
            noise_sigma=config.SYNTH_CONFIG['noise_sigma'],
            seed=seed,
        )
        values.update(overrides)
        return cls(**values)

    def with_(self, **changes):
        return replace(self, **changes)

    def irradiance(self):
        """Scene irradiance B for the static sweep"""
        lo, hi = self.irradiance_range
        n = self.width * self.height
        if self.pattern == 'constant':
            values = np.full((self.height, self.width), math.sqrt(lo * hi))
        elif self.pattern == 'gradient':
            values = np.geomspace(lo, hi, n).reshape(self.height, self.width)
        else:
            rng = np.random.default_rng(self.seed)
            us, vs = np.meshgrid(np.linspace(0, 1, self.width), np.linspace(0, 1, self.height))
            log_mid, log_half = 0.5 * math.log(lo * hi), 0.5 * math.log(hi / lo)
            values = np.exp(log_mid + log_half * _smooth_field(us, vs, rng))
        return IrradianceImage(values)

    def plane_irradiance(self, points):
        """Analytic plane irradiance C at plane coordinates (..., 2)"""
        points = np.asarray(points, dtype=np.float64)
        if self.plane_pattern == 'constant':
            return np.full(points.shape[:-1], float(self.plane_level))
        rng = np.random.default_rng([self.seed, 1])
        field_ = _smooth_field(points[..., 0], points[..., 1], rng, terms=2, max_freq=1.0)
        return self.plane_level * (1.0 + 0.25 * field_)

    def plane_grid(self, resolution, size=1.0):
        centres = PlaneGrid.cell_centres(resolution, size)
        return PlaneGrid(self.plane_irradiance(centres).reshape(resolution, resolution), size=size)

    def render(self, irradiance, exposure_ms, rng=None):
        """I = G(t V B) with optional Gaussian noise in gray levels, quantized to 8 bits"""
        if self.noise_sigma > 0 and rng is not None:
            values = forward_model(irradiance, self.response, self.vignette, exposure_ms, quantize=False)
            return quantize_8bit(values + rng.normal(0.0, self.noise_sigma, size=values.shape))
        return forward_model(irradiance, self.response, self.vignette, exposure_ms)


def _frame_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# Exposure sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepTruth:
    response: ResponseLUT
    vignette: VignetteMap
    irradiance: IrradianceImage
    attenuated: IrradianceImage
    exposure_log: ExposureLog = field(default=None)


def exposure_times(n_exposures, t_min_ms, ratio):
    if n_exposures < 2:
        raise ValueError("an exposure sweep needs at least two exposures")
    if ratio <= 1:
        raise ValueError("exposure ratio must exceed 1")
    return t_min_ms * ratio ** np.arange(n_exposures, dtype=np.float64)


def gen_exposure_sweep(scene, n_exposures=None, t_min_ms=None, ratio=None):
    """Static scene rendered at geometrically increasing exposure times"""
    cfg = config.SYNTH_CONFIG
    exposures = exposure_times(n_exposures or cfg['n_exposures'], t_min_ms or cfg['t_min_ms'],
                               ratio or cfg['exposure_ratio'])
    irradiance = scene.irradiance()
    rngs = _frame_rngs(scene.seed, exposures.size)
    images = np.stack([scene.render(irradiance, t, rng) for t, rng in zip(exposures, rngs)])

    logger.info(f"Rendered exposure sweep: {exposures.size} images, "
                f"{exposures[0]:.3g}..{exposures[-1]:.3g} ms")
    truth = SweepTruth(
        response=scene.response, vignette=scene.vignette, irradiance=irradiance,
        attenuated=IrradianceImage(irradiance.values * scene.vignette.values),
        exposure_log=ExposureLog(np.arange(exposures.size),
                                 np.arange(exposures.size) * cfg['frame_interval_s'], exposures))
    return ExposureSweep(images, exposures), truth


# ---------------------------------------------------------------------------
# Plane observations
# ---------------------------------------------------------------------------

@dataclass
class PlaneTruth:
    response: ResponseLUT
    vignette: VignetteMap
    homographies: list
    exposures_ms: np.ndarray
    scene: SyntheticScene = field(repr=False, default=None)

    def plane(self, resolution, size=1.0):
        return self.scene.plane_grid(resolution, size)


def _sample_plane_corners(rng, width, height):
    """Image positions of the plane corners: a rotated, shifted, perspective-jittered square"""
    half = width * rng.uniform(0.85, 1.15)
    centre = np.array([(width - 1) / 2.0, (height - 1) / 2.0]) + rng.uniform(-0.15, 0.15, size=2) * width
    angle = rng.uniform(0, 2 * math.pi)
    c, s = math.cos(angle), math.sin(angle)
    square = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]) * half
    if rng.random() < 0.5:
        square[:, 0] *= -1.0
    corners = square @ np.array([[c, -s], [s, c]]).T + centre
    return corners + rng.uniform(-0.05, 0.05, size=(4, 2)) * width


def gen_plane_observations(scene, n_poses=None, seed=None, plane_size=1.0):
    """Random plane poses with bounded perspective, rendered through true vignette and response"""
    n_poses = config.SYNTH_CONFIG['n_poses'] if n_poses is None else n_poses
    if n_poses < 1:
        raise ValueError("need at least one plane pose")
    seed = scene.seed if seed is None else seed
    lo, hi = config.SYNTH_CONFIG['plane_exposure_ms']

    plane_corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) * plane_size
    us, vs = np.meshgrid(np.arange(scene.width, dtype=np.float64), np.arange(scene.height, dtype=np.float64))
    pixels = np.stack([us.ravel(), vs.ravel()], axis=1)

    observations, homographies, exposures = [], [], []
    for i, rng in enumerate(_frame_rngs(seed, n_poses)):
        corners = _sample_plane_corners(rng, scene.width, scene.height)
        H = pose_from_correspondences(plane_corners, corners).matrix
        exposure = float(rng.uniform(lo, hi))

        plane_points = apply_homography(np.linalg.inv(H), pixels)
        irradiance = scene.plane_irradiance(plane_points).reshape(scene.height, scene.width)
        image = scene.render(irradiance, exposure, rng)

        observations.append(PlaneObservation(image, exposure, H, source=f"synthetic:{i:05d}"))
        homographies.append(H)
        exposures.append(exposure)

    logger.info(f"Rendered {n_poses} plane observations of {scene.width}x{scene.height}")
    truth = PlaneTruth(response=scene.response, vignette=scene.vignette, homographies=homographies,
                       exposures_ms=np.asarray(exposures), scene=scene)
    return observations, truth


# ---------------------------------------------------------------------------
# Loop trajectories
# ---------------------------------------------------------------------------

def segment_size(n_points):
    return max(config.THRESHOLDS['min_segment_poses'], math.ceil(0.1 * n_points))


def gen_loop_trajectory(n_points=None, seed=0, frame_interval_s=None):
    """
    One large loop that returns to its start. The first and last 10% of the path
    run the same small loop at the start location (the S and E segments); a
    smaller wobble keeps the motion loopy in between. Ground truth for S and E
    is an exact copy of the trajectory.
    """
    n_points = n_points or config.SYNTH_CONFIG['trajectory_points']
    if n_points < 20:
        raise ValueError("a loop trajectory needs at least 20 points")
    interval = frame_interval_s or config.SYNTH_CONFIG['frame_interval_s']
    rng = np.random.default_rng(seed)
    R = rng.uniform(8.0, 12.0)
    r = rng.uniform(0.8, 1.2)

    s = np.linspace(0.0, 1.0, n_points)
    phi = 2 * math.pi * np.clip((s - 0.1) / 0.8, 0.0, 1.0)
    big = np.stack([R - R * np.cos(phi), R * np.sin(phi), np.zeros_like(s)], axis=1)
    wobble = 2 * math.pi * s / 0.1
    small = np.stack([r * np.cos(wobble) - r, r * np.sin(wobble), 0.3 * r * np.sin(2 * wobble)], axis=1)
    positions = big + small

    stamps = np.arange(n_points) * interval
    traj = Trajectory(stamps, positions)

    m = segment_size(n_points)
    idx = np.r_[np.arange(m), np.arange(n_points - m, n_points)]
    tags = np.array(['S'] * m + ['E'] * m)
    gt = SegmentGroundTruth(stamps[idx], positions[idx].copy(), tags)
    logger.debug(f"Loop trajectory: {n_points} poses, radius {R:.3f}, segments of {m}")
    return traj, gt
