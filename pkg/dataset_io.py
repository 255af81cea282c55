"""
Dataset IO Module
Readers and writers for every on-disk format of the toolkit, and lazy sequence loading
"""
import csv
import logging
import math
import os
import queue
import threading
from dataclasses import dataclass, field

import cv2
import numpy as np
from PIL import Image

import config
from camera_model import FovIntrinsics, load_fov_calibration, write_fov_calibration
from errors import DatasetFormatError, DimensionMismatchError, PhotocalError
from evaluation import DriftReport, SegmentGroundTruth, Trajectory
from observability import BipartiteResidualGraph
from photometry import ExposureLog, ResponseLUT, VignetteMap
from vignette_calibration import PlaneObservation

logger = logging.getLogger(__name__)

VIGNETTE_SCALE = 65535


def format_value(value):
    """Shortest decimal that reads back to the same float"""
    value = float(value)
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return repr(value)


def _read_rows(path, min_fields):
    """(line number, fields) of every non-empty line; '#' starts a comment"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.readlines()
    except OSError as e:
        raise DatasetFormatError(path, f"cannot read file: {e}")
    for line_no, line in enumerate(lines, 1):
        text = line.split('#', 1)[0].strip()
        if not text:
            continue
        fields_ = text.split()
        if len(fields_) < min_fields:
            raise DatasetFormatError(path, f"expected at least {min_fields} fields, got {len(fields_)}", line_no)
        yield line_no, fields_


def _parse(path, line_no, parser, text, what):
    try:
        return parser(text)
    except ValueError:
        raise DatasetFormatError(path, f"invalid {what} '{text}'", line_no)


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

def read_image(path):
    """8-bit grayscale frame"""
    try:
        with Image.open(path) as img:
            if img.mode not in ('L', 'P', '1'):
                logger.debug(f"Converting {os.path.basename(path)} from {img.mode} to grayscale")
            return np.asarray(img.convert('L'), dtype=np.uint8)
    except OSError as e:
        raise DatasetFormatError(path, f"cannot decode image: {e}")


def image_size(path):
    """(width, height) from the header only"""
    try:
        with Image.open(path) as img:
            return img.size
    except OSError as e:
        raise DatasetFormatError(path, f"cannot decode image: {e}")


def write_image(path, image):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise DimensionMismatchError("frames are stored as 8-bit single-channel images")
    Image.fromarray(image).save(path, format='PNG')


def _list_images(folder):
    if not os.path.isdir(folder):
        raise DatasetFormatError(folder, "image folder not found")
    names = sorted(n for n in os.listdir(folder)
                   if n.rsplit('.', 1)[-1].lower() in config.ALLOWED_IMAGE_EXTENSIONS)
    return [os.path.join(folder, n) for n in names]


# ---------------------------------------------------------------------------
# Exposure log, response, vignette
# ---------------------------------------------------------------------------

def read_exposure_log(path):
    """Lines of 'frame_id timestamp_seconds exposure_ms'"""
    ids, stamps, exposures = [], [], []
    for line_no, (fid, stamp, exposure, *_) in _read_rows(path, 3):
        ids.append(_parse(path, line_no, int, fid, 'frame id'))
        stamps.append(_parse(path, line_no, float, stamp, 'timestamp'))
        value = _parse(path, line_no, float, exposure, 'exposure time')
        if not value > 0:
            raise DatasetFormatError(path, f"exposure time must be positive, got {exposure}", line_no)
        exposures.append(value)
    if not ids:
        raise DatasetFormatError(path, "exposure log is empty")
    return ExposureLog(ids, stamps, exposures)


def write_exposure_log(path, log):
    with open(path, 'w', encoding='utf-8') as f:
        f.write("# frame_id timestamp_seconds exposure_ms\n")
        for fid, stamp, exposure in zip(log.frame_ids, log.timestamps, log.exposures_ms):
            f.write(f"{int(fid)} {format_value(stamp)} {format_value(exposure)}\n")


def read_response(path):
    """256 values of U, whitespace separated (one or more lines)"""
    values = []
    for line_no, fields_ in _read_rows(path, 1):
        values.extend(_parse(path, line_no, float, v, 'response value') for v in fields_)
    if len(values) != 256:
        raise DatasetFormatError(path, f"response file needs 256 values, got {len(values)}")
    try:
        return ResponseLUT(values)
    except PhotocalError as e:
        raise DatasetFormatError(path, str(e))


def write_response(path, lut):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(' '.join(format_value(v) for v in lut.values) + '\n')


def _mask_path(path):
    root, ext = os.path.splitext(os.fspath(path))
    return f"{root}{config.VIGNETTE_MASK_SUFFIX}{ext}"


def read_vignette(path, mask_path=None):
    """16-bit PNG scaled by 65535, optional 8-bit validity mask next to it"""
    path = os.fspath(path)
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetFormatError(path, "cannot decode vignette image")
    if raw.ndim != 2:
        raise DatasetFormatError(path, "vignette must be a single-channel image")
    scale = VIGNETTE_SCALE if raw.dtype == np.uint16 else 255
    values = raw.astype(np.float64) / scale

    mask_path = os.fspath(mask_path) if mask_path else _mask_path(path)
    valid = None
    if os.path.exists(mask_path):
        mask = cv2.imread(mask_path, cv2.IMREAD_UNCHANGED)
        if mask is None or mask.shape != raw.shape:
            raise DatasetFormatError(mask_path, "vignette mask does not match the vignette image")
        valid = mask > 0
    return VignetteMap(values, valid)


def write_vignette(path, vignette, mask_path=None):
    """16-bit image plus its 8-bit validity mask (255 = observed)"""
    path = os.fspath(path)
    mask_path = os.fspath(mask_path) if mask_path else _mask_path(path)
    values = np.clip(np.where(vignette.valid, vignette.values, 0.0), 0.0, 1.0)
    encoded = np.floor(values * VIGNETTE_SCALE + 0.5).astype(np.uint16)
    if not cv2.imwrite(path, encoded):
        raise DatasetFormatError(path, "cannot write vignette image")
    if not cv2.imwrite(mask_path, vignette.valid.astype(np.uint8) * 255):
        raise DatasetFormatError(mask_path, "cannot write vignette mask")


# ---------------------------------------------------------------------------
# Plane observations
# ---------------------------------------------------------------------------

def read_observations(path):
    """Manifest lines 'image exposure_ms h00 h01 h02 h10 h11 h12 h20 h21 h22'; images relative to the manifest"""
    base = os.path.dirname(os.path.abspath(path))
    observations = []
    for line_no, fields_ in _read_rows(path, 11):
        image_path = os.path.join(base, fields_[0])
        exposure = _parse(path, line_no, float, fields_[1], 'exposure time')
        H = np.array([_parse(path, line_no, float, v, 'homography entry') for v in fields_[2:11]])
        try:
            observations.append(PlaneObservation(read_image(image_path), exposure, H.reshape(3, 3),
                                                 source=fields_[0]))
        except PhotocalError as e:
            if isinstance(e, DatasetFormatError):
                raise
            raise DatasetFormatError(path, str(e), line_no)
    if not observations:
        raise DatasetFormatError(path, "observation manifest is empty")
    return observations


def write_observations(path, observations, image_folder=config.IMAGE_FOLDER):
    base = os.path.dirname(os.path.abspath(path))
    os.makedirs(os.path.join(base, image_folder), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write("# image exposure_ms h00 h01 h02 h10 h11 h12 h20 h21 h22\n")
        for i, obs in enumerate(observations):
            rel = os.path.join(image_folder, f"{i:05d}.png")
            write_image(os.path.join(base, rel), obs.image)
            entries = ' '.join(format_value(v) for v in obs.homography.ravel())
            f.write(f"{rel} {format_value(obs.exposure_ms)} {entries}\n")


# ---------------------------------------------------------------------------
# Trajectories and ground truth
# ---------------------------------------------------------------------------

def read_trajectory(path):
    """'timestamp x y z [...]' per line; extra columns (orientation) are ignored"""
    rows = [(line_no, f) for line_no, f in _read_rows(path, 4)]
    stamps = [_parse(path, n, float, f[0], 'timestamp') for n, f in rows]
    positions = [[_parse(path, n, float, v, 'coordinate') for v in f[1:4]] for n, f in rows]
    try:
        return Trajectory(stamps, positions)
    except PhotocalError as e:
        raise DatasetFormatError(path, str(e))


def write_trajectory(path, traj):
    with open(path, 'w', encoding='utf-8') as f:
        f.write("# timestamp x y z\n")
        for stamp, p in zip(traj.timestamps, traj.positions):
            f.write(f"{format_value(stamp)} {format_value(p[0])} {format_value(p[1])} {format_value(p[2])}\n")


def read_groundtruth(path):
    """'timestamp x y z [qx qy qz qw] S|E' per line; the orientation is ignored"""
    stamps, positions, tags = [], [], []
    for line_no, fields_ in _read_rows(path, 5):
        if len(fields_) not in (5, 9):
            raise DatasetFormatError(path, f"expected 5 or 9 fields, got {len(fields_)}", line_no)
        stamps.append(_parse(path, line_no, float, fields_[0], 'timestamp'))
        positions.append([_parse(path, line_no, float, v, 'coordinate') for v in fields_[1:4]])
        if fields_[-1] not in ('S', 'E'):
            raise DatasetFormatError(path, f"segment tag must be S or E, got '{fields_[-1]}'", line_no)
        tags.append(fields_[-1])
    try:
        return SegmentGroundTruth(stamps, positions, tags)
    except PhotocalError as e:
        raise DatasetFormatError(path, str(e))


def write_groundtruth(path, gt):
    with open(path, 'w', encoding='utf-8') as f:
        f.write("# timestamp x y z segment\n")
        for stamp, p, tag in zip(gt.timestamps, gt.positions, gt.segments):
            f.write(f"{format_value(stamp)} {format_value(p[0])} {format_value(p[1])} {format_value(p[2])} {tag}\n")


# ---------------------------------------------------------------------------
# Reports and tables
# ---------------------------------------------------------------------------

def write_drift_report(path, report):
    with open(path, 'w', encoding='utf-8') as f:
        for key, value in report.to_dict().items():
            f.write(f"{key} {format_value(value)}\n")
        if report.note:
            f.write(f"# {report.note}\n")


def format_drift_report(report):
    return ''.join(f"{key} {format_value(value)}\n" for key, value in report.to_dict().items())


def read_drift_report(path):
    values = {}
    for line_no, (key, value, *_) in _read_rows(path, 2):
        values[key] = _parse(path, line_no, float, value, key)
    missing = [k for k in DriftReport.METRICS if k not in values]
    if missing:
        raise DatasetFormatError(path, f"drift report lacks {', '.join(missing)}")
    return DriftReport.from_dict(values)


def write_drift_csv(path, report, name=''):
    row = report.to_dict()
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['sequence'] + list(row))
        writer.writerow([name] + [format_value(v) for v in row.values()])


def find_drift_reports(folder):
    """All drift reports below folder, in sorted path order"""
    found = []
    for root, _, files in os.walk(folder):
        found.extend(os.path.join(root, n) for n in files if n.endswith(config.DRIFT_REPORT_SUFFIX))
    return sorted(found)


def write_energy_csv(path, energies):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['iteration', 'energy'])
        for i, energy in enumerate(energies):
            writer.writerow([i, format_value(energy)])


def write_cumulative_csv(folder, distributions):
    """One '<metric>.csv' of threshold,count rows per metric; returns {metric: path}"""
    folder = os.fspath(folder)
    os.makedirs(folder, exist_ok=True)
    written = {}
    for metric, dist in distributions.items():
        path = os.path.join(folder, f"{metric}.csv")
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['threshold', 'count'])
            for threshold, count in dist.pairs():
                writer.writerow([format_value(threshold), count])
        written[metric] = path
    return written


def read_cumulative_csv(path):
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return [(float(row['threshold']), int(row['count'])) for row in csv.DictReader(f)]


def write_edge_list(path, graph):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"{graph.n_a} {graph.n_b}\n")
        for a, b in graph.edges.tolist():
            f.write(f"{a} {b}\n")


def read_edge_list(path):
    rows = list(_read_rows(path, 2))
    if not rows:
        raise DatasetFormatError(path, "edge list is empty")
    line_no, header = rows[0]
    n_a, n_b = (_parse(path, line_no, int, v, 'node count') for v in header[:2])
    edges = [[_parse(path, n, int, v, 'node id') for v in f[:2]] for n, f in rows[1:]]
    try:
        return BipartiteResidualGraph(n_a, n_b, np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    except PhotocalError as e:
        raise DatasetFormatError(path, str(e))


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------

_END = object()


@dataclass
class SequenceDataset:
    """Image frames with their exposure log and optional calibrations; frames decode lazily"""
    root: str
    image_paths: list
    exposure_log: ExposureLog
    calibration: FovIntrinsics = None
    response: ResponseLUT = None
    vignette: VignetteMap = None
    size: tuple = field(default=None)

    def __post_init__(self):
        if len(self.image_paths) != len(self.exposure_log):
            raise DatasetFormatError(
                os.path.join(self.root, config.EXPOSURE_FILE),
                f"{len(self.exposure_log)} exposure entries but {len(self.image_paths)} images")
        if self.image_paths and self.size is None:
            self.size = image_size(self.image_paths[0])
        if self.size is None:
            return
        width, height = self.size
        if self.calibration is not None and (self.calibration.width, self.calibration.height) != (width, height):
            raise DatasetFormatError(
                os.path.join(self.root, config.CAMERA_FILE),
                f"calibration is {self.calibration.width}x{self.calibration.height}, images are {width}x{height}")
        if self.vignette is not None and self.vignette.shape != (height, width):
            raise DatasetFormatError(
                os.path.join(self.root, config.VIGNETTE_FILE),
                f"vignette is {self.vignette.shape[1]}x{self.vignette.shape[0]}, images are {width}x{height}")

    def __len__(self):
        return len(self.image_paths)

    def frame(self, index):
        image = read_image(self.image_paths[index])
        if image.shape[::-1] != tuple(self.size):
            raise DatasetFormatError(self.image_paths[index], "frame size differs from the first frame")
        return image

    def exposure(self, index):
        return float(self.exposure_log.exposures_ms[index])

    def iter_frames(self, prefetch=4):
        """Yield (index, image, exposure_ms) in order; a background thread decodes ahead"""
        if prefetch <= 0:
            for i in range(len(self)):
                yield i, self.frame(i), self.exposure(i)
            return

        slots = queue.Queue(maxsize=prefetch)
        stop = threading.Event()

        def produce():
            try:
                for i in range(len(self)):
                    if stop.is_set():
                        return
                    slots.put((i, self.frame(i)))
            except Exception as e:
                slots.put(e)
            finally:
                slots.put(_END)

        worker = threading.Thread(target=produce, name='frame-decoder', daemon=True)
        worker.start()
        try:
            while True:
                item = slots.get()
                if item is _END:
                    break
                if isinstance(item, Exception):
                    raise item
                i, image = item
                yield i, image, self.exposure(i)
        finally:
            stop.set()
            while worker.is_alive():
                try:
                    slots.get_nowait()
                except queue.Empty:
                    worker.join(timeout=0.01)

    def frames(self):
        return np.stack([image for _, image, _ in self.iter_frames()])


def load_sequence(path, exposure_shift=0):
    """Validated dataset handle for a sequence directory"""
    if not os.path.isdir(path):
        raise DatasetFormatError(path, "sequence directory not found")
    images = _list_images(os.path.join(path, config.IMAGE_FOLDER))
    log = read_exposure_log(os.path.join(path, config.EXPOSURE_FILE))
    if exposure_shift:
        logger.info(f"Shifting exposure times by {exposure_shift} frame(s)")
        log = log.shifted(exposure_shift)

    def optional(name, reader):
        full = os.path.join(path, name)
        return reader(full) if os.path.exists(full) else None

    dataset = SequenceDataset(
        root=path, image_paths=images, exposure_log=log,
        calibration=optional(config.CAMERA_FILE, load_fov_calibration),
        response=optional(config.RESPONSE_FILE, read_response),
        vignette=optional(config.VIGNETTE_FILE, read_vignette))
    logger.info(f"Loaded sequence {path}: {len(dataset)} frames")
    return dataset


def write_sequence(path, images, exposure_log, calibration=None, response=None, vignette=None):
    """Write a sequence directory readable by load_sequence"""
    images = list(images)
    if len(images) != len(exposure_log):
        raise DimensionMismatchError(f"{len(images)} images but {len(exposure_log)} exposure entries")
    folder = os.path.join(path, config.IMAGE_FOLDER)
    os.makedirs(folder, exist_ok=True)
    for fid, image in zip(exposure_log.frame_ids, images):
        write_image(os.path.join(folder, f"{int(fid):05d}.png"), image)
    write_exposure_log(os.path.join(path, config.EXPOSURE_FILE), exposure_log)
    if calibration is not None:
        write_fov_calibration(os.path.join(path, config.CAMERA_FILE), calibration)
    if response is not None:
        write_response(os.path.join(path, config.RESPONSE_FILE), response)
    if vignette is not None:
        write_vignette(os.path.join(path, config.VIGNETTE_FILE), vignette)
    logger.info(f"Wrote sequence {path}: {len(images)} frames")
