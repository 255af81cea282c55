"""
FOV Camera Model Module
Pinhole projection with single-coefficient FOV distortion, its closed-form inverse,
and pinhole rectification maps
"""
import logging
import math
from dataclasses import dataclass

import cv2
import numpy as np

import config
from errors import DatasetFormatError, DimensionMismatchError, ModelDomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FovIntrinsics:
    """Pinhole parameters plus FOV distortion coefficient omega (radians), absolute pixel units"""
    fx: float
    fy: float
    cx: float
    cy: float
    omega: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ModelDomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ModelDomainError(f"image size must be positive, got {self.width}x{self.height}")
        if not 0 <= self.omega < math.pi:
            raise ModelDomainError(f"omega must lie in [0, pi), got {self.omega}")


@dataclass(frozen=True)
class PinholeIntrinsics:
    """Ideal pinhole target of a rectification"""
    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.f <= 0:
            raise ModelDomainError(f"focal length must be positive, got {self.f}")
        if self.width <= 0 or self.height <= 0:
            raise ModelDomainError(f"image size must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class RectificationMap:
    """Source coordinates per target pixel; invalid entries hold -1"""
    map_x: np.ndarray
    map_y: np.ndarray
    valid: np.ndarray

    @property
    def valid_fraction(self):
        return float(np.mean(self.valid))


def _distortion_factor(r_u, omega):
    """arctan(2 r tan(w/2)) / (r w) with its removable singularities filled in"""
    eps = config.THRESHOLDS['pinhole_limit']
    r_u = np.asarray(r_u, dtype=np.float64)
    if abs(omega) < eps:
        return np.ones_like(r_u)
    two_tan = 2.0 * math.tan(omega / 2.0)
    small = r_u < eps
    r_safe = np.where(small, 1.0, r_u)
    factor = np.arctan(r_safe * two_tan) / (r_safe * omega)
    return np.where(small, two_tan / omega, factor)


def _undistortion_factor(r_d, omega):
    """tan(r w) / (2 r tan(w/2)), inverse of _distortion_factor along the radius"""
    eps = config.THRESHOLDS['pinhole_limit']
    r_d = np.asarray(r_d, dtype=np.float64)
    if abs(omega) < eps:
        return np.ones_like(r_d)
    two_tan = 2.0 * math.tan(omega / 2.0)
    small = r_d < eps
    r_safe = np.where(small, 1.0, r_d)
    factor = np.tan(r_safe * omega) / (r_safe * two_tan)
    return np.where(small, omega / two_tan, factor)


def project(p, k):
    """Project camera-frame points (..., 3) to distorted pixel coordinates (..., 2)"""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 3:
        raise DimensionMismatchError(f"expected points with 3 coordinates, got shape {p.shape}")
    z = p[..., 2]
    if np.any(z <= 0):
        raise ModelDomainError("cannot project points with non-positive depth")

    xn = p[..., 0] / z
    yn = p[..., 1] / z
    r_u = np.sqrt(xn * xn + yn * yn)
    factor = _distortion_factor(r_u, k.omega)

    u = factor * k.fx * xn + k.cx
    v = factor * k.fy * yn + k.cy
    return np.stack([u, v], axis=-1)


def unproject(px, d, k):
    """Back-project distorted pixels (..., 2) at depth d to camera-frame points (..., 3)"""
    px = np.asarray(px, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if px.shape[-1] != 2:
        raise DimensionMismatchError(f"expected pixels with 2 coordinates, got shape {px.shape}")
    if np.any(d <= 0):
        raise ModelDomainError("depth must be positive")

    ud = (px[..., 0] - k.cx) / k.fx
    vd = (px[..., 1] - k.cy) / k.fy
    r_d = np.sqrt(ud * ud + vd * vd)
    if np.any(r_d * k.omega >= math.pi / 2):
        raise ModelDomainError("pixel lies outside the valid field of the FOV model")

    factor = _undistortion_factor(r_d, k.omega)
    return np.stack([d * factor * ud, d * factor * vd, d * np.ones_like(ud)], axis=-1)


def pinhole_for_fov(src, f=None, width=None, height=None):
    """Pinhole target with the source principal-point ratio, optionally resized"""
    width = int(width or src.width)
    height = int(height or src.height)
    if f is None:
        f = 0.5 * (src.fx + src.fy) * width / src.width
    cx = (src.cx + 0.5) * width / src.width - 0.5
    cy = (src.cy + 0.5) * height / src.height - 0.5
    return PinholeIntrinsics(f=float(f), cx=cx, cy=cy, width=width, height=height)


def horizontal_fov_deg(pinhole):
    return math.degrees(2.0 * math.atan(pinhole.width / (2.0 * pinhole.f)))


def build_rectification_map(src, dst):
    """For each target pixel: pinhole back-projection, then FOV forward projection into the source"""
    us, vs = np.meshgrid(np.arange(dst.width, dtype=np.float64),
                         np.arange(dst.height, dtype=np.float64))
    rays = np.stack([(us - dst.cx) / dst.f, (vs - dst.cy) / dst.f, np.ones_like(us)], axis=-1)
    src_px = project(rays, src)

    map_x = src_px[..., 0]
    map_y = src_px[..., 1]
    valid = (map_x >= 0) & (map_x <= src.width - 1) & (map_y >= 0) & (map_y <= src.height - 1)
    map_x = np.where(valid, map_x, -1.0)
    map_y = np.where(valid, map_y, -1.0)

    logger.debug(f"Rectification map {dst.width}x{dst.height}: {np.mean(valid):.1%} valid")
    return RectificationMap(map_x=map_x, map_y=map_y, valid=valid)


def rectify(image, rect_map):
    """Bilinear resampling through a rectification map; invalid target pixels are 0"""
    image = np.asarray(image)
    if image.ndim != 2:
        raise DimensionMismatchError("rectify expects a single-channel image")
    work = image.astype(np.float32)
    out = cv2.remap(work, rect_map.map_x.astype(np.float32), rect_map.map_y.astype(np.float32),
                    interpolation=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    out[~rect_map.valid] = 0
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        out = np.clip(np.floor(out + 0.5), info.min, info.max).astype(image.dtype)
    return out, rect_map.valid.copy()


def load_fov_calibration(path, units=None):
    """
    Read "fx fy cx cy omega" / "width height", optional third line naming the units.
    Normalized files are converted to absolute pixels on load.
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = [(i, ln.split('#', 1)[0].strip()) for i, ln in enumerate(f, 1)]
    except OSError as e:
        raise DatasetFormatError(path, f"cannot read calibration: {e}")
    lines = [(i, ln) for i, ln in lines if ln]
    if len(lines) < 2:
        raise DatasetFormatError(path, "expected intrinsics line and image size line")

    line_no, text = lines[0]
    try:
        fx, fy, cx, cy, omega = (float(v) for v in text.split())
    except ValueError:
        raise DatasetFormatError(path, "expected 'fx fy cx cy omega'", line_no)
    line_no, text = lines[1]
    try:
        width, height = (int(v) for v in text.split())
    except ValueError:
        raise DatasetFormatError(path, "expected 'width height'", line_no)

    if len(lines) > 2:
        declared = lines[2][1].lower()
        if declared not in ('absolute', 'normalized'):
            raise DatasetFormatError(path, f"unknown units flag '{declared}'", lines[2][0])
        units = declared
    units = (units or config.CALIBRATION_UNITS).lower()
    if units not in ('absolute', 'normalized'):
        raise ValueError(f"unknown calibration units '{units}'")

    if units == 'normalized':
        # normalized files address the pixel corner, absolute ones the pixel centre
        fx, fy = fx * width, fy * height
        cx, cy = cx * width - 0.5, cy * height - 0.5

    try:
        return FovIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, omega=omega, width=width, height=height)
    except ModelDomainError as e:
        raise DatasetFormatError(path, str(e))


def write_fov_calibration(path, k):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"{k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r} {k.omega!r}\n")
        f.write(f"{k.width} {k.height}\n")
        f.write("absolute\n")
