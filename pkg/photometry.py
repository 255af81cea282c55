"""
Photometric Image Formation Module
I(x) = G(t V(x) B(x)) and its inversion B(x) = U(I(x)) / (t V(x)), with U = G^-1
"""
import logging
from dataclasses import dataclass, field

import numpy as np

import config
from errors import DimensionMismatchError, ModelDomainError

logger = logging.getLogger(__name__)


def quantize_8bit(values):
    """Round half away from zero and clip to the 8-bit range"""
    values = np.asarray(values, dtype=np.float64)
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ResponseLUT:
    """Inverse response U over the 256 pixel values; strictly increasing"""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.shape != (256,):
            raise DimensionMismatchError(f"response LUT needs 256 entries, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ModelDomainError("response LUT contains non-finite values")
        if np.any(np.diff(values) <= 0):
            raise ModelDomainError("response LUT must be strictly increasing to be invertible")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def identity(cls):
        return cls(np.arange(256, dtype=np.float64))

    @property
    def is_normalized(self):
        return bool(np.isclose(self.values[255], 255.0, rtol=0, atol=1e-9))

    def normalized(self):
        """Rescaled copy with U(255) = 255"""
        return ResponseLUT(self.values * (255.0 / self.values[255]))

    def irradiance(self, image):
        """U(I) for an integer image"""
        return self.values[np.asarray(image, dtype=np.intp)]

    def response(self, energy):
        """G(e) by monotone lookup with linear interpolation, clamped to [0, 255]"""
        return np.interp(np.asarray(energy, dtype=np.float64), self.values,
                         np.arange(256, dtype=np.float64))


@dataclass(frozen=True)
class VignetteMap:
    """Per-pixel attenuation in [0, 1]; observed pixels are max-normalized to 1"""
    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatchError("vignette map must be two-dimensional")
        valid = np.ones(values.shape, dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if valid.shape != values.shape:
            raise DimensionMismatchError("vignette validity mask does not match the map")
        observed = values[valid]
        if observed.size and (observed.min() < 0 or observed.max() > 1 + 1e-9):
            raise ModelDomainError("vignette values must lie in [0, 1]")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'valid', valid)

    @classmethod
    def flat(cls, width, height):
        return cls(np.ones((height, width)))

    @classmethod
    def from_attenuation(cls, attenuation, valid=None):
        """Max-normalize arbitrary non-negative factors"""
        attenuation = np.asarray(attenuation, dtype=np.float64)
        mask = np.ones(attenuation.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        peak = attenuation[mask].max()
        values = np.where(mask, attenuation / peak, 0.0)
        return cls(values, mask)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class ExposureLog:
    """Per-frame exposure times in milliseconds"""
    frame_ids: np.ndarray
    timestamps: np.ndarray
    exposures_ms: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.frame_ids, dtype=np.int64)
        stamps = np.asarray(self.timestamps, dtype=np.float64)
        exposures = np.asarray(self.exposures_ms, dtype=np.float64)
        if not (ids.shape == stamps.shape == exposures.shape):
            raise DimensionMismatchError("exposure log columns differ in length")
        if np.any(exposures <= 0):
            raise ModelDomainError("exposure times must be positive")
        object.__setattr__(self, 'frame_ids', ids)
        object.__setattr__(self, 'timestamps', stamps)
        object.__setattr__(self, 'exposures_ms', exposures)

    def __len__(self):
        return len(self.frame_ids)

    def shifted(self, offset):
        """
        Exposure of frame i taken from frame i + offset (edge values repeated).
        Models the occasional one-frame lag of the logged exposure.
        """
        if offset == 0 or len(self) == 0:
            return self
        idx = np.clip(np.arange(len(self)) + offset, 0, len(self) - 1)
        return ExposureLog(self.frame_ids, self.timestamps, self.exposures_ms[idx])


@dataclass(frozen=True)
class IrradianceImage:
    """Irradiance B (or B' = V B) up to scale; invalid pixels hold NaN"""
    values: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.isfinite(values) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if valid.shape != values.shape:
            raise DimensionMismatchError("irradiance validity mask does not match the image")
        values = np.where(valid, values, np.nan)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'valid', valid)

    @property
    def shape(self):
        return self.values.shape


def _check_shapes(image_shape, vignette):
    if tuple(image_shape) != tuple(vignette.shape):
        raise DimensionMismatchError(
            f"image {tuple(image_shape)} and vignette {tuple(vignette.shape)} differ in size")


def forward_model(irradiance, response, vignette, exposure_ms, quantize=True):
    """Render I = G(t V B); energies beyond U(255) clamp to 255"""
    if exposure_ms <= 0:
        raise ModelDomainError("exposure time must be positive")
    values = irradiance.values if isinstance(irradiance, IrradianceImage) else np.asarray(irradiance, dtype=np.float64)
    _check_shapes(values.shape, vignette)

    energy = exposure_ms * vignette.values * np.nan_to_num(values, nan=0.0)
    image = response.response(energy)
    return quantize_8bit(image) if quantize else image


def photometric_correct(image, response, vignette, exposure_ms, overexposure=None):
    """Invert the formation model; saturated pixels and zero attenuation are flagged invalid"""
    if exposure_ms <= 0:
        raise ModelDomainError("exposure time must be positive")
    image = np.asarray(image)
    _check_shapes(image.shape, vignette)
    threshold = config.THRESHOLDS['overexposure'] if overexposure is None else overexposure

    if np.issubdtype(image.dtype, np.integer):
        energy = response.irradiance(image)
        saturated = image >= threshold
    else:
        # unquantized renders: read U by interpolation
        energy = np.interp(image, np.arange(256, dtype=np.float64), response.values)
        saturated = image >= threshold

    attenuation = vignette.values
    valid = ~saturated & (attenuation > 0) & vignette.valid
    with np.errstate(divide='ignore', invalid='ignore'):
        values = energy / (exposure_ms * attenuation)
    return IrradianceImage(values, valid)
