"""
Response Calibration Module
Estimates the inverse response U and the attenuated irradiance B' from a static-scene
exposure sweep by alternating the two closed-form minimizers of
    E(U, B') = sum_i sum_x (U(I_i(x)) - t_i B'(x))^2
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.isotonic import IsotonicRegression

import config
from errors import CalibrationError, DimensionMismatchError, ModelDomainError
from photometry import IrradianceImage, ResponseLUT

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExposureSweep:
    """8-bit images of one static scene with their exposure times (ms)"""
    images: np.ndarray
    exposures_ms: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images)
        exposures = np.asarray(self.exposures_ms, dtype=np.float64).reshape(-1)
        if images.ndim != 3:
            raise DimensionMismatchError("sweep images must be stacked as (frames, height, width)")
        if images.shape[0] != exposures.size:
            raise DimensionMismatchError(
                f"{images.shape[0]} images but {exposures.size} exposure times")
        if np.any(exposures <= 0):
            raise ModelDomainError("exposure times must be positive")
        if np.unique(exposures).size < 2:
            raise CalibrationError("an exposure sweep needs at least two distinct exposure times")
        object.__setattr__(self, 'images', images.astype(np.uint8, copy=False))
        object.__setattr__(self, 'exposures_ms', exposures)

    def __len__(self):
        return self.images.shape[0]

    def strided(self, stride):
        if stride <= 1:
            return self
        return ExposureSweep(self.images[:, ::stride, ::stride], self.exposures_ms)


@dataclass(frozen=True)
class CalibrationOptions:
    tol: float = 1e-6
    max_iters: int = 50
    stride: int = 1
    overexposure: int = 255

    @classmethod
    def from_config(cls, section, **overrides):
        values = dict(section)
        values['overexposure'] = config.THRESHOLDS['overexposure']
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {k: values[k] for k in ('tol', 'max_iters', 'stride', 'overexposure') if k in values}
        return cls(**known)


@dataclass
class ResponseCalibrationResult:
    lut: ResponseLUT
    irradiance: IrradianceImage
    energies: list
    iterations: int
    converged: bool
    bin_counts: np.ndarray
    unobserved_ranges: list = field(default_factory=list)
    monotonicity_repaired: bool = False


def _intensity_ranges(bins):
    """Collapse sorted intensity values into inclusive (lo, hi) runs"""
    ranges = []
    for k in bins:
        if ranges and k == ranges[-1][1] + 1:
            ranges[-1] = (ranges[-1][0], int(k))
        else:
            ranges.append((int(k), int(k)))
    return ranges


class ResponseCalibrator:
    """Alternating closed-form estimation of U and B'"""

    def __init__(self, options=None):
        self.options = options or CalibrationOptions.from_config(config.RESPONSE_CONFIG)

    def _observations(self, sweep):
        images = sweep.images.astype(np.intp)
        valid = images < self.options.overexposure
        t = sweep.exposures_ms[:, None, None]
        return images, valid, t

    def update_irradiance(self, U, images, valid, t):
        """B'(x) = sum_i t_i U(I_i(x)) / sum_i t_i^2 over non-saturated observations"""
        num = np.sum(np.where(valid, t * U[images], 0.0), axis=0)
        den = np.sum(np.where(valid, t * t, 0.0), axis=0)
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.where(den > 0, num / den, np.nan)

    def update_response(self, U, B, images, valid, t):
        """U(k) = mean of t_i B'(x) over the bin Omega_k; empty bins keep their value"""
        usable = valid & np.isfinite(B)[None, :, :]
        k = images[usable]
        predicted = (t * np.nan_to_num(B)[None, :, :])[usable]
        counts = np.bincount(k, minlength=256)
        sums = np.bincount(k, weights=predicted, minlength=256)
        U_new = U.copy()
        observed = counts > 0
        U_new[observed] = sums[observed] / counts[observed]
        return U_new, counts

    def energy(self, U, B, images, valid, t):
        usable = valid & np.isfinite(B)[None, :, :]
        residual = U[images] - t * np.nan_to_num(B)[None, :, :]
        return float(np.sum(np.where(usable, residual * residual, 0.0)))

    def _fill_unobserved(self, U, counts):
        """Interpolate interior gaps, extrapolate the ends linearly, then U(255) from U(253), U(254)"""
        limit = min(self.options.overexposure, 255)
        observed = np.flatnonzero(counts[:limit] > 0)
        if observed.size < 2:
            raise CalibrationError(
                f"only {observed.size} intensity value(s) observed; the response is unobservable")

        bins = np.arange(256, dtype=np.float64)
        filled = np.interp(bins, observed, U[observed])
        lo, hi = observed[0], observed[-1]
        if lo > 0:
            slope = (U[observed[1]] - U[lo]) / (observed[1] - lo)
            filled[:lo] = U[lo] + slope * (bins[:lo] - lo)
        if hi < 254:
            slope = (U[hi] - U[observed[-2]]) / (hi - observed[-2])
            filled[hi + 1:] = U[hi] + slope * (bins[hi + 1:] - hi)
        filled[255] = 2.0 * filled[254] - filled[253]

        missing = np.setdiff1d(np.arange(limit), observed)
        return filled, _intensity_ranges(missing)

    def _repair_monotonicity(self, U, counts):
        """Isotonic projection, then a minimal strict increase to make the LUT invertible"""
        weights = np.maximum(counts.astype(np.float64), 1.0)
        iso = IsotonicRegression(increasing=True)
        repaired = iso.fit_transform(np.arange(256), U, sample_weight=weights)
        step = 1e-9 * max(abs(repaired[-1]), 1.0)
        return repaired + step * np.arange(256)

    def calibrate(self, sweep):
        """Main calibration loop"""
        sweep = sweep.strided(self.options.stride)
        images, valid, t = self._observations(sweep)
        logger.info(f"Calibrating response from {len(sweep)} images of "
                    f"{images.shape[2]}x{images.shape[1]} pixels")

        if not np.any(valid):
            raise CalibrationError("no valid observations: every pixel of the sweep is overexposed")

        U = np.arange(256, dtype=np.float64)
        B = self.update_irradiance(U, images, valid, t)
        energies = [self.energy(U, B, images, valid, t)]
        counts = np.zeros(256, dtype=np.int64)
        converged = False
        iterations = 0

        for iterations in range(1, self.options.max_iters + 1):
            U, counts = self.update_response(U, B, images, valid, t)
            B = self.update_irradiance(U, images, valid, t)
            energies.append(self.energy(U, B, images, valid, t))

            previous, current = energies[-2], energies[-1]
            if previous <= 0 or (previous - current) / previous < self.options.tol:
                converged = True
                break

        U, unobserved = self._fill_unobserved(U, counts)
        if unobserved:
            logger.warning(f"Unobserved intensity ranges filled by interpolation: {unobserved}")

        repaired = False
        if np.any(np.diff(U) <= 0):
            logger.warning("Converged response is not strictly increasing; applying isotonic repair")
            U = self._repair_monotonicity(U, counts)
            repaired = True

        if U[255] <= 0:
            raise CalibrationError("extrapolated U(255) is not positive; cannot normalize the response")
        scale = 255.0 / U[255]
        lut = ResponseLUT(U * scale)
        irradiance = IrradianceImage(B * scale)
        energies = [e * scale * scale for e in energies]

        logger.info(f"Response calibration finished after {iterations} iterations "
                    f"(energy {energies[-1]:.6g}, converged={converged})")
        return ResponseCalibrationResult(
            lut=lut, irradiance=irradiance, energies=energies, iterations=iterations,
            converged=converged, bin_counts=counts, unobserved_ranges=unobserved,
            monotonicity_repaired=repaired)


def calibrate_response(sweep, opts=None):
    return ResponseCalibrator(opts).calibrate(sweep)


def energy_response(U, B, sweep, overexposure=None):
    """Exact residual sum over non-saturated observations"""
    threshold = config.THRESHOLDS['overexposure'] if overexposure is None else overexposure
    lut = U.values if isinstance(U, ResponseLUT) else np.asarray(U, dtype=np.float64)
    values = B.values if isinstance(B, IrradianceImage) else np.asarray(B, dtype=np.float64)
    if values.shape != sweep.images.shape[1:]:
        raise DimensionMismatchError("irradiance image does not match the sweep images")
    calibrator = ResponseCalibrator(CalibrationOptions(overexposure=threshold))
    images, valid, t = calibrator._observations(sweep)
    return calibrator.energy(lut, values, images, valid, t)


def compare_to_truth(lut, true_lut):
    """Largest deviation from a reference response, in gray levels and in fraction of range"""
    diff = np.abs(lut.values - true_lut.values)
    full_range = true_lut.values[255] - true_lut.values[0]
    return {
        'max_abs': float(diff.max()),
        'max_fraction': float(diff.max() / full_range),
        'worst_bin': int(np.argmax(diff)),
    }
