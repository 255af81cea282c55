"""
Configuration settings for the Photometric Calibration & Drift Evaluation Toolkit
"""
import logging
import os

# Application Settings
APP_NAME = "Photocal - Photometric Calibration & Drift Evaluation Toolkit"
VERSION = "1.0.0"
DEBUG = os.getenv('PHOTOCAL_DEBUG', 'False').lower() == 'true'
LOG_LEVEL = os.getenv('PHOTOCAL_LOG_LEVEL', 'DEBUG' if DEBUG else 'INFO').upper()

# Worker pool size for embarrassingly parallel stages (Monte-Carlo trials, per-sequence evaluation)
WORKERS = max(1, int(os.getenv('PHOTOCAL_WORKERS', os.cpu_count() or 1)))

# Calibration file units: 'absolute' (pixels) or 'normalized' (divided by image size)
CALIBRATION_UNITS = os.getenv('PHOTOCAL_CALIB_UNITS', 'absolute').lower()

# Report Settings
REPORT_FOLDER = os.getenv('PHOTOCAL_REPORT_FOLDER', 'reports')
REPORT_FORMAT = 'pdf'

# File Settings
ALLOWED_IMAGE_EXTENSIONS = {'png', 'pgm', 'bmp', 'tif', 'tiff'}
EXPOSURE_FILE = 'times.txt'
CAMERA_FILE = 'camera.txt'
RESPONSE_FILE = 'pcalib.txt'
VIGNETTE_FILE = 'vignette.png'
VIGNETTE_MASK_SUFFIX = '_mask'  # vignette.png -> vignette_mask.png
IMAGE_FOLDER = 'images'
OBSERVATION_MANIFEST = 'observations.txt'
TRAJECTORY_FILE = 'trajectory.txt'
GROUNDTRUTH_FILE = 'groundtruth.txt'
DRIFT_REPORT_SUFFIX = '.drift.txt'

# Numeric thresholds
THRESHOLDS = {
    # pixels >= this value are treated as saturated; 254 for jpeg-damaged data
    'overexposure': min(255, max(1, int(os.getenv('PHOTOCAL_OVEREXPOSURE', 255)))),
    'pinhole_limit': 1e-8,  # |omega| or radius below this uses the analytic limit
    'homography_degeneracy': 1e-10,  # relative singular value gap of the DLT system
    'collinearity': 1e-9,  # relative second singular value of centred point sets
    'association_window_s': 0.010,  # trajectory <-> ground truth timestamp window
    'min_segment_poses': 3,
}

# Response calibration (alternating closed-form updates)
RESPONSE_CONFIG = {
    'tol': 1e-6,
    'max_iters': 50,
    'stride': 1,
}

# Vignette calibration
VIGNETTE_CONFIG = {
    'tol': 1e-6,
    'max_iters': 100,
    'grid_resolution': 1000,
    'plane_size': 1.0,
    'check_observability': True,
}

# Loop-closure evaluation
EVALUATION_CONFIG = {
    'gt_length': 100.0,  # ground truth is normalized to this path length
    'reference_length': None,  # must be supplied, never inferred
}

# Synthetic oracle defaults
SYNTH_CONFIG = {
    'width': 80,
    'height': 60,
    'n_exposures': 120,
    't_min_ms': 0.05,
    'exposure_ratio': 1.05,
    'irradiance_range': (0.005, 5000.0),
    'n_poses': 50,
    'grid_resolution': 200,
    'plane_exposure_ms': (0.8, 1.2),
    'trajectory_points': 400,
    'frame_interval_s': 0.05,
    'noise_sigma': 0.0,
}


class _MarkerFormatter(logging.Formatter):
    """Console formatter keeping the [*]/[!]/[-] status markers"""

    MARKERS = {
        logging.DEBUG: '[.]',
        logging.INFO: '[*]',
        logging.WARNING: '[!]',
        logging.ERROR: '[-]',
        logging.CRITICAL: '[-]',
    }

    def format(self, record):
        marker = self.MARKERS.get(record.levelno, '[*]')
        if DEBUG:
            return f"{marker} {record.name}: {record.getMessage()}"
        return f"{marker} {record.getMessage()}"


def configure_logging(level=None):
    """Install the console handler once; later calls only change the level"""
    root = logging.getLogger()
    root.setLevel(level or LOG_LEVEL)
    if not any(getattr(h, '_photocal', False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(_MarkerFormatter())
        handler._photocal = True
        root.addHandler(handler)
    return root
