"""
Loop-Closure Drift Evaluation Module
Sim(3) alignment of the tracked trajectory to start- and end-segment ground truth,
drift decomposition, alignment error, joint RMSE and cumulative error distributions
"""
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.spatial.transform import Rotation

import config
from errors import DegenerateConfigurationError, DimensionMismatchError, TrajectoryError

logger = logging.getLogger(__name__)

INF = math.inf


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Tracked positions with strictly increasing timestamps (seconds)"""
    timestamps: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        stamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if stamps.size != positions.shape[0]:
            raise DimensionMismatchError("trajectory timestamps and positions differ in length")
        if stamps.size < 2:
            raise TrajectoryError("a trajectory needs at least two poses")
        if np.any(np.diff(stamps) <= 0):
            raise TrajectoryError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, 'timestamps', stamps)
        object.__setattr__(self, 'positions', positions)

    def __len__(self):
        return self.timestamps.size

    def with_positions(self, positions):
        return Trajectory(self.timestamps, positions)


@dataclass(frozen=True)
class SegmentGroundTruth:
    """Ground-truth positions of the start (S) and end (E) segments, tagged per pose"""
    timestamps: np.ndarray
    positions: np.ndarray
    segments: np.ndarray

    def __post_init__(self):
        stamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        tags = np.asarray(self.segments).astype(str).reshape(-1)
        if not (stamps.size == positions.shape[0] == tags.size):
            raise DimensionMismatchError("ground truth columns differ in length")
        if not np.all(np.isin(tags, ('S', 'E'))):
            raise TrajectoryError("segment tags must be 'S' or 'E'")
        start, end = stamps[tags == 'S'], stamps[tags == 'E']
        if start.size == 0 or end.size == 0:
            raise TrajectoryError("ground truth needs both a start and an end segment")
        if np.intersect1d(start, end).size:
            raise TrajectoryError("start and end segments share timestamps")
        for name, pts in (('start', positions[tags == 'S']), ('end', positions[tags == 'E'])):
            if pts.shape[0] < config.THRESHOLDS['min_segment_poses'] or _is_collinear(pts):
                raise DegenerateConfigurationError(
                    f"{name} segment needs at least 3 non-collinear positions")
        object.__setattr__(self, 'timestamps', stamps)
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'segments', tags)

    @property
    def start_mask(self):
        return self.segments == 'S'

    @property
    def end_mask(self):
        return self.segments == 'E'

    def scaled(self, factor):
        return SegmentGroundTruth(self.timestamps, self.positions * factor, self.segments)


def _is_collinear(points):
    points = np.asarray(points, dtype=np.float64)
    centred = points - points.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    return sv[0] == 0 or sv[1] <= config.THRESHOLDS['collinearity'] * sv[0]


def path_length(points):
    points = np.asarray(points, dtype=np.float64)
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def normalize_gt_scale(positions, reference_length, target_length=None):
    """Scale ground truth so that a trajectory of reference_length becomes target_length (100)"""
    if reference_length is None or reference_length <= 0:
        raise TrajectoryError("reference length must be positive")
    target = config.EVALUATION_CONFIG['gt_length'] if target_length is None else target_length
    factor = target / reference_length
    if isinstance(positions, SegmentGroundTruth):
        return positions.scaled(factor)
    return np.asarray(positions, dtype=np.float64) * factor


def associate(traj_stamps, gt_stamps, window=None):
    """Index of the nearest trajectory stamp per ground-truth stamp, -1 outside the window"""
    window = config.THRESHOLDS['association_window_s'] if window is None else window
    traj_stamps = np.asarray(traj_stamps, dtype=np.float64)
    gt_stamps = np.asarray(gt_stamps, dtype=np.float64)
    right = np.clip(np.searchsorted(traj_stamps, gt_stamps), 0, traj_stamps.size - 1)
    left = np.clip(right - 1, 0, traj_stamps.size - 1)
    pick_left = np.abs(traj_stamps[left] - gt_stamps) <= np.abs(traj_stamps[right] - gt_stamps)
    nearest = np.where(pick_left, left, right)
    matched = np.abs(traj_stamps[nearest] - gt_stamps) <= window
    return np.where(matched, nearest, -1)


def reverse(traj, gt=None):
    """Play a sequence backwards: time runs from the end, start and end segments swap roles"""
    t_end = traj.timestamps[-1]
    rev_traj = Trajectory(t_end - traj.timestamps[::-1], traj.positions[::-1])
    if gt is None:
        return rev_traj
    order = np.argsort(t_end - gt.timestamps)
    swapped = np.where(gt.segments == 'S', 'E', 'S')
    rev_gt = SegmentGroundTruth((t_end - gt.timestamps)[order], gt.positions[order], swapped[order])
    return rev_traj, rev_gt


# ---------------------------------------------------------------------------
# Sim(3)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sim3:
    """p -> scale * rotation @ p + translation"""
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not self.scale > 0:
            raise DegenerateConfigurationError(f"Sim(3) scale must be positive, got {self.scale}")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
            raise DegenerateConfigurationError("Sim(3) rotation must be orthonormal with det +1")
        object.__setattr__(self, 'scale', float(self.scale))
        object.__setattr__(self, 'rotation', R)
        object.__setattr__(self, 'translation', t)

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation

    def __matmul__(self, other):
        return Sim3(self.scale * other.scale, self.rotation @ other.rotation,
                    self.scale * self.rotation @ other.translation + self.translation)

    def inverse(self):
        R_inv = self.rotation.T
        return Sim3(1.0 / self.scale, R_inv, -(R_inv @ self.translation) / self.scale)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M

    def rotation_angle_deg(self):
        """Angle of the rotation in degrees; atan2 form stays exact near 0"""
        R = self.rotation
        skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return math.degrees(math.atan2(0.5 * np.linalg.norm(skew), 0.5 * (np.trace(R) - 1.0)))


def align_sim3(source, target):
    """Closed-form similarity minimizing sum |T source_i - target_i|^2; returns (Sim3, rmse)"""
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise DimensionMismatchError("source and target must correspond one to one")
    if src.shape[0] < 3:
        raise DegenerateConfigurationError(f"Sim(3) alignment needs at least 3 points, got {src.shape[0]}")
    if _is_collinear(src):
        raise DegenerateConfigurationError("source points are collinear")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst

    cov = dst_c.T @ src_c / src.shape[0]
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt

    var_src = np.mean(np.sum(src_c * src_c, axis=1))
    scale = float(np.trace(np.diag(D) @ S) / var_src)
    if scale <= 0:
        raise DegenerateConfigurationError("target points carry no structure to align to")
    t = mu_dst - scale * R @ mu_src

    T = Sim3(scale, R, t)
    residual = T.apply(src) - dst
    rmse = float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))
    return T, rmse


def drift(T_s, T_e):
    """T_drift = T_e T_s^-1 and its scale, rotation angle (degrees) and translation norm"""
    T_drift = T_e @ T_s.inverse()
    return T_drift, T_drift.scale, T_drift.rotation_angle_deg(), float(np.linalg.norm(T_drift.translation))


def alignment_error(traj, T_s, T_e):
    """RMSE between the full trajectory aligned to the start and to the end segment"""
    positions = traj.positions if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    diff = T_s.apply(positions) - T_e.apply(positions)
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def _segment_correspondences(traj, gt, mask, window=None):
    match = associate(traj.timestamps, gt.timestamps, window)
    use = mask & (match >= 0)
    return traj.positions[match[use]], gt.positions[use]


def joint_alignment(traj, gt, window=None):
    src, dst = _segment_correspondences(traj, gt, gt.start_mask | gt.end_mask, window)
    return align_sim3(src, dst)


def joint_rmse(traj, gt, window=None):
    """RMSE of a single Sim(3) alignment over the union of both segments"""
    return joint_alignment(traj, gt, window)[1]


def inject_drift(traj, at, kind, value, axis=(0.0, 0.0, 1.0)):
    """
    Transform every position after index `at` about the position at `at`:
    kind 'scale' multiplies by value, 'rotation' turns by value degrees about axis,
    'translation' shifts by value (a 3-vector, or a distance along axis).
    """
    n = len(traj)
    if not 0 <= at < n:
        raise TrajectoryError(f"injection index {at} outside trajectory of {n} poses")
    positions = traj.positions.copy()
    pivot = positions[at].copy()
    after = slice(at + 1, n)

    if kind == 'scale':
        if value <= 0:
            raise TrajectoryError("scale jump must be positive")
        positions[after] = pivot + value * (positions[after] - pivot)
    elif kind == 'rotation':
        axis = np.asarray(axis, dtype=np.float64)
        R = Rotation.from_rotvec(axis / np.linalg.norm(axis) * math.radians(value)).as_matrix()
        positions[after] = pivot + (positions[after] - pivot) @ R.T
    elif kind == 'translation':
        delta = np.asarray(value, dtype=np.float64)
        if delta.ndim == 0:
            axis = np.asarray(axis, dtype=np.float64)
            delta = float(value) * axis / np.linalg.norm(axis)
        positions[after] = positions[after] + delta
    else:
        raise TrajectoryError(f"unknown drift kind '{kind}'")
    return traj.with_positions(positions)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def scale_multiplier(e_s):
    """Symmetrized scale error max(e_s, 1/e_s)"""
    e_s = np.asarray(e_s, dtype=np.float64)
    with np.errstate(divide='ignore'):
        sym = np.maximum(e_s, 1.0 / e_s)
    return float(sym) if sym.ndim == 0 else sym


@dataclass
class DriftReport:
    e_s: float = INF
    e_r: float = INF
    e_t: float = INF
    e_align: float = INF
    e_rmse: float = INF
    rmse_start: float = INF
    rmse_end: float = INF
    note: str = ''
    T_s: Sim3 = field(default=None, repr=False)
    T_e: Sim3 = field(default=None, repr=False)

    METRICS = ('e_s', 'e_r', 'e_t', 'e_align', 'e_rmse', 'rmse_start', 'rmse_end')

    @property
    def has_estimate(self):
        return math.isfinite(self.e_align)

    @property
    def e_s_sym(self):
        return scale_multiplier(self.e_s)

    def to_dict(self):
        values = {name: float(getattr(self, name)) for name in self.METRICS}
        values['e_s_sym'] = self.e_s_sym
        return values

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)} & set(cls.METRICS)
        return cls(**{k: float(v) for k, v in values.items() if k in known})


def evaluate_sequence(traj, gt, window=None):
    """Full loop-closure evaluation of one tracked sequence"""
    match = associate(traj.timestamps, gt.timestamps, window)
    dropped = int(np.count_nonzero(match < 0))
    if dropped:
        logger.warning(f"{dropped} ground-truth poses have no tracked pose within the window; dropped")

    min_poses = config.THRESHOLDS['min_segment_poses']
    start = gt.start_mask & (match >= 0)
    end = gt.end_mask & (match >= 0)

    if np.count_nonzero(start) < min_poses:
        logger.warning("Trajectory does not cover the start segment; no estimate")
        return DriftReport(note='start segment not covered')
    try:
        T_s, rmse_start = align_sim3(traj.positions[match[start]], gt.positions[start])
    except DegenerateConfigurationError as e:
        return DriftReport(note=f'start segment degenerate: {e}')

    if np.count_nonzero(end) < min_poses:
        logger.warning("Trajectory does not cover the end segment; no estimate")
        return DriftReport(rmse_start=rmse_start, note='end segment not covered', T_s=T_s)
    try:
        T_e, rmse_end = align_sim3(traj.positions[match[end]], gt.positions[end])
    except DegenerateConfigurationError as e:
        return DriftReport(rmse_start=rmse_start, note=f'end segment degenerate: {e}', T_s=T_s)

    _, e_s, e_r, e_t = drift(T_s, T_e)
    e_align = alignment_error(traj, T_s, T_e)
    e_rmse = joint_rmse(traj, gt, window)

    report = DriftReport(e_s=e_s, e_r=e_r, e_t=e_t, e_align=e_align, e_rmse=e_rmse,
                         rmse_start=rmse_start, rmse_end=rmse_end, T_s=T_s, T_e=T_e)
    logger.info(f"e_align={e_align:.4g}  e_s={e_s:.4g}  e_r={e_r:.4g} deg  e_t={e_t:.4g}")
    return report


@dataclass(frozen=True)
class CumulativeDistribution:
    """Number of runs with error <= threshold, for every finite error value"""
    thresholds: np.ndarray
    counts: np.ndarray
    total: int

    def pairs(self):
        return list(zip(self.thresholds.tolist(), self.counts.tolist()))


def cumulative_distribution(errors):
    values = np.asarray(list(errors), dtype=np.float64)
    values = np.where(np.isnan(values), INF, values)
    ordered = np.sort(values)
    finite = ordered[np.isfinite(ordered)]
    counts = np.searchsorted(ordered, finite, side='right')
    return CumulativeDistribution(thresholds=finite, counts=counts.astype(np.int64), total=int(values.size))
