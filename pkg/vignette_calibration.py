"""
Vignette Calibration Module
Dense attenuation map V and plane irradiance C from posed images of a planar Lambertian
target, by alternating the closed-form minimizers of
    E(C, V) = sum_i sum_x (t_i V([pi_i(x)]) C(x) - U(I_i(pi_i(x))))^2
"""
import logging
from dataclasses import dataclass, field

import numpy as np

import config
from errors import (CalibrationError, DegenerateConfigurationError, DimensionMismatchError,
                    ModelDomainError)
from observability import BipartiteResidualGraph, connectivity
from photometry import ResponseLUT, VignetteMap

logger = logging.getLogger(__name__)


def round_half_away(values):
    values = np.asarray(values, dtype=np.float64)
    return (np.sign(values) * np.floor(np.abs(values) + 0.5)).astype(np.int64)


# ---------------------------------------------------------------------------
# Plane-to-image homographies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HomographyEstimate:
    matrix: np.ndarray
    rms_residual: float


def _conditioning(points):
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)"""
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - centroid, axis=1))
    if mean_dist <= 0:
        raise DegenerateConfigurationError("all correspondence points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0, -s * centroid[0]],
                     [0, s, -s * centroid[1]],
                     [0, 0, 1.0]])


def apply_homography(H, points):
    points = np.asarray(points, dtype=np.float64)
    homog = points @ H[:, :2].T + H[:, 2]
    return homog[..., :2] / homog[..., 2:3]


def _has_collinear_triple(points, tol):
    n = len(points)
    scale = max(np.ptp(points, axis=0).max(), 1e-300)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a, b = points[j] - points[i], points[k] - points[i]
                if abs(a[0] * b[1] - a[1] * b[0]) <= tol * scale * scale:
                    return True
    return False


def pose_from_correspondences(plane_points, pixels):
    """Least-squares plane-to-image homography by the normalized direct linear transform"""
    src = np.asarray(plane_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise DimensionMismatchError("plane points and pixels must correspond one to one")
    if len(src) < 4:
        raise DegenerateConfigurationError(f"a homography needs at least 4 correspondences, got {len(src)}")
    tol = config.THRESHOLDS['collinearity']
    if len(src) == 4 and _has_collinear_triple(src, tol):
        raise DegenerateConfigurationError("three of the four plane points are collinear")

    T_src = _conditioning(src)
    T_dst = _conditioning(dst)
    s = apply_homography(T_src, src)
    d = apply_homography(T_dst, dst)

    rows = []
    for (x, y), (u, v) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    A = np.asarray(rows)
    _, sing, Vt = np.linalg.svd(A)
    if sing.size >= 9 and sing[-2] <= config.THRESHOLDS['homography_degeneracy'] * sing[0]:
        raise DegenerateConfigurationError("correspondences do not determine a unique homography")

    H = np.linalg.inv(T_dst) @ Vt[-1].reshape(3, 3) @ T_src
    if abs(H[2, 2]) > 1e-12:
        H = H / H[2, 2]
    else:
        H = H / np.linalg.norm(H)
    if abs(np.linalg.det(H)) < 1e-300:
        raise DegenerateConfigurationError("estimated homography is singular")

    residual = apply_homography(H, src) - dst
    rms = float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))
    return HomographyEstimate(matrix=H, rms_residual=rms)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaneGrid:
    """Square discretisation of the calibration plane; cell centres span [0, size]^2"""
    values: np.ndarray
    size: float = 1.0
    observed: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 2:
            raise DimensionMismatchError("plane grid must be square with resolution >= 2")
        observed = np.ones(values.shape, dtype=bool) if self.observed is None else np.asarray(self.observed, dtype=bool)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'observed', observed)

    @property
    def resolution(self):
        return self.values.shape[0]

    @staticmethod
    def cell_centres(resolution, size=1.0):
        """(resolution^2, 2) plane coordinates in row-major cell order"""
        coords = (np.arange(resolution, dtype=np.float64) + 0.5) * (size / resolution)
        xs, ys = np.meshgrid(coords, coords)
        return np.stack([xs.ravel(), ys.ravel()], axis=1)


@dataclass(frozen=True)
class PlaneObservation:
    """One 8-bit image of the plane, its exposure and the plane-to-pixel homography"""
    image: np.ndarray
    exposure_ms: float
    homography: np.ndarray
    source: str = ''

    def __post_init__(self):
        H = np.asarray(self.homography, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(H)) < 1e-300:
            raise ModelDomainError("plane homography must be invertible")
        if H[2, 2] < 0:
            H = -H
        if self.exposure_ms <= 0:
            raise ModelDomainError("exposure time must be positive")
        image = np.asarray(self.image)
        if image.ndim != 2:
            raise DimensionMismatchError("plane observations must be single-channel images")
        object.__setattr__(self, 'homography', H)
        object.__setattr__(self, 'image', image.astype(np.uint8, copy=False))

    @property
    def shape(self):
        return self.image.shape

    def project(self, points):
        """pi_i: plane coordinates to sub-pixel image coordinates; NaN behind the camera"""
        points = np.asarray(points, dtype=np.float64)
        homog = points @ self.homography[:, :2].T + self.homography[:, 2]
        w = homog[:, 2]
        with np.errstate(divide='ignore', invalid='ignore'):
            px = homog[:, :2] / w[:, None]
        px[w <= 0] = np.nan
        return px

    def visible_samples(self, centres, overexposure=None):
        """Cell indices, rounded pixel indices and intensities of usable samples"""
        threshold = config.THRESHOLDS['overexposure'] if overexposure is None else overexposure
        height, width = self.shape
        px = self.project(centres)
        finite = np.all(np.isfinite(px), axis=1)
        cols = np.full(len(px), -1, dtype=np.int64)
        rows = np.full(len(px), -1, dtype=np.int64)
        cols[finite] = round_half_away(px[finite, 0])
        rows[finite] = round_half_away(px[finite, 1])
        inside = finite & (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)

        cells = np.flatnonzero(inside)
        intensity = self.image[rows[inside], cols[inside]]
        usable = intensity < threshold
        pixels = rows[inside] * width + cols[inside]
        return cells[usable], pixels[usable], intensity[usable]


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VignetteOptions:
    tol: float = 1e-6
    max_iters: int = 100
    overexposure: int = 255
    grid_resolution: int = 1000
    plane_size: float = 1.0
    check_observability: bool = True

    @classmethod
    def from_config(cls, section=None, **overrides):
        values = dict(config.VIGNETTE_CONFIG if section is None else section)
        values['overexposure'] = config.THRESHOLDS['overexposure']
        values.update({k: v for k, v in overrides.items() if v is not None})
        fields_ = ('tol', 'max_iters', 'overexposure', 'grid_resolution', 'plane_size', 'check_observability')
        return cls(**{k: values[k] for k in fields_ if k in values})


@dataclass
class VignetteCalibrationResult:
    vignette: VignetteMap
    plane: PlaneGrid
    energies: list
    iterations: int
    converged: bool
    n_components: int = 1
    component_labels: np.ndarray = field(default=None)


@dataclass
class _Samples:
    cells: np.ndarray
    pixels: np.ndarray
    exposures: np.ndarray
    targets: np.ndarray
    n_cells: int
    n_pixels: int
    shape: tuple


def _collect_samples(observations, response, resolution, plane_size, overexposure):
    if not observations:
        raise CalibrationError("vignette calibration needs at least one observation")
    shapes = {obs.shape for obs in observations}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"observations differ in image size: {sorted(shapes)}")
    shape = shapes.pop()

    centres = PlaneGrid.cell_centres(resolution, plane_size)
    cells, pixels, exposures, targets = [], [], [], []
    for obs in observations:
        c, p, intensity = obs.visible_samples(centres, overexposure)
        cells.append(c)
        pixels.append(p)
        exposures.append(np.full(c.size, float(obs.exposure_ms)))
        targets.append(response.values[intensity.astype(np.intp)])

    return _Samples(
        cells=np.concatenate(cells), pixels=np.concatenate(pixels),
        exposures=np.concatenate(exposures), targets=np.concatenate(targets),
        n_cells=resolution * resolution, n_pixels=shape[0] * shape[1], shape=shape)


def residual_graph(observations, response=None, resolution=None, plane_size=None, overexposure=None):
    """Plane cells and pixels linked by at least one usable sample; unobserved nodes dropped"""
    resolution = resolution or config.VIGNETTE_CONFIG['grid_resolution']
    plane_size = plane_size or config.VIGNETTE_CONFIG['plane_size']
    threshold = config.THRESHOLDS['overexposure'] if overexposure is None else overexposure
    s = _collect_samples(observations, response or ResponseLUT.identity(), resolution, plane_size, threshold)
    graph, _, _ = BipartiteResidualGraph.from_samples(s.cells, s.pixels, s.n_cells, s.n_pixels)
    return graph


class VignetteCalibrator:
    """Alternating closed-form estimation of C and V"""

    def __init__(self, options=None):
        self.options = options or VignetteOptions.from_config()

    @staticmethod
    def update_plane(V, C, s):
        """C*(x) = sum t V U / sum (t V)^2 per cell; unobserved cells keep their value"""
        a = s.exposures * V[s.pixels]
        num = np.bincount(s.cells, weights=a * s.targets, minlength=s.n_cells)
        den = np.bincount(s.cells, weights=a * a, minlength=s.n_cells)
        C_new = C.copy()
        seen = den > 0
        C_new[seen] = num[seen] / den[seen]
        return C_new

    @staticmethod
    def update_vignette(V, C, s):
        """V*(x) = sum t C U / sum (t C)^2 per pixel; unobserved pixels keep their value"""
        a = s.exposures * C[s.cells]
        num = np.bincount(s.pixels, weights=a * s.targets, minlength=s.n_pixels)
        den = np.bincount(s.pixels, weights=a * a, minlength=s.n_pixels)
        V_new = V.copy()
        seen = den > 0
        V_new[seen] = num[seen] / den[seen]
        return V_new

    @staticmethod
    def energy(V, C, s):
        residual = s.exposures * V[s.pixels] * C[s.cells] - s.targets
        return float(np.dot(residual, residual))

    def _component_labels(self, s):
        """Per-pixel component ids of the residual graph (-1 for unobserved pixels)"""
        graph, cell_ids, pixel_ids = BipartiteResidualGraph.from_samples(
            s.cells, s.pixels, s.n_cells, s.n_pixels, observed_only=True)
        report = connectivity(graph)
        pixel_labels = np.full(s.n_pixels, -1, dtype=np.int64)
        cell_labels = np.full(s.n_cells, -1, dtype=np.int64)
        cell_labels[cell_ids] = report.labels[:graph.n_a]
        pixel_labels[pixel_ids] = report.labels[graph.n_a:]
        return report.n_components, cell_labels, pixel_labels

    def calibrate(self, observations, response):
        opts = self.options
        if not isinstance(response, ResponseLUT):
            response = ResponseLUT(response)
        s = _collect_samples(observations, response, opts.grid_resolution, opts.plane_size, opts.overexposure)
        logger.info(f"Calibrating vignette from {len(observations)} observations, "
                    f"{s.cells.size} samples on a {opts.grid_resolution}^2 grid")
        if s.cells.size == 0:
            raise CalibrationError("no valid observations: no visible, non-saturated plane samples")

        seen_pixels = np.bincount(s.pixels, minlength=s.n_pixels) > 0
        seen_cells = np.bincount(s.cells, minlength=s.n_cells) > 0

        V = np.ones(s.n_pixels)
        C = self.update_plane(V, np.zeros(s.n_cells), s)
        energies = [self.energy(V, C, s)]
        converged = False
        iterations = 0

        for iterations in range(1, opts.max_iters + 1):
            V = self.update_vignette(V, C, s)
            C = self.update_plane(V, C, s)
            energies.append(self.energy(V, C, s))

            previous, current = energies[-2], energies[-1]
            if previous <= 0 or (previous - current) / previous < opts.tol:
                converged = True
                break

        n_components, cell_labels, pixel_labels = 1, None, None
        if opts.check_observability:
            n_components, cell_labels, pixel_labels = self._component_labels(s)
            if n_components > 1:
                logger.warning(f"Residual graph has {n_components} components; the relative scale "
                               "between components is unobservable, normalizing each separately")

        V, C = self._normalize(V, C, seen_pixels, seen_cells, n_components, cell_labels, pixel_labels)

        height, width = s.shape
        vignette = VignetteMap(np.where(seen_pixels, V, 0.0).reshape(height, width),
                               seen_pixels.reshape(height, width))
        plane = PlaneGrid(np.where(seen_cells, C, 0.0).reshape(opts.grid_resolution, -1),
                          size=opts.plane_size,
                          observed=seen_cells.reshape(opts.grid_resolution, -1))

        unobserved = int(np.count_nonzero(~seen_pixels))
        if unobserved:
            logger.warning(f"{unobserved} vignette pixels were never observed")
        logger.info(f"Vignette calibration finished after {iterations} iterations "
                    f"(energy {energies[-1]:.6g}, converged={converged})")
        labels = None if pixel_labels is None else pixel_labels.reshape(height, width)
        return VignetteCalibrationResult(
            vignette=vignette, plane=plane, energies=energies, iterations=iterations,
            converged=converged, n_components=n_components, component_labels=labels)

    @staticmethod
    def _normalize(V, C, seen_pixels, seen_cells, n_components, cell_labels, pixel_labels):
        """max(V) = 1, per residual-graph component when the graph is disconnected"""
        V, C = V.copy(), C.copy()
        if n_components <= 1 or pixel_labels is None:
            peak = V[seen_pixels].max()
            return V / peak, C * peak
        for label in np.unique(pixel_labels[pixel_labels >= 0]):
            in_component = pixel_labels == label
            peak = V[in_component].max()
            V[in_component] /= peak
            C[cell_labels == label] *= peak
        return V, C


def calibrate_vignette(observations, response, opts=None):
    return VignetteCalibrator(opts).calibrate(observations, response)


def energy_vignette(plane, vignette, observations, response, overexposure=None):
    """Exact residual sum over visible, non-saturated samples"""
    threshold = config.THRESHOLDS['overexposure'] if overexposure is None else overexposure
    if not isinstance(response, ResponseLUT):
        response = ResponseLUT(response)
    s = _collect_samples(observations, response, plane.resolution, plane.size, threshold)
    if tuple(s.shape) != tuple(vignette.shape):
        raise DimensionMismatchError("vignette map does not match the observation images")
    return VignetteCalibrator.energy(vignette.values.ravel(), plane.values.ravel(), s)
