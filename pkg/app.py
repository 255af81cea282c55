"""
Photocal - Main Application
Command-line surface tying calibration, rectification, correction and drift evaluation together
"""
import argparse
import logging
import os
import sys

import numpy as np

import config
import dataset_io
from camera_model import (FovIntrinsics, build_rectification_map, horizontal_fov_deg, load_fov_calibration,
                          pinhole_for_fov, rectify)
from errors import DatasetFormatError, PhotocalError
from evaluation import (cumulative_distribution, evaluate_sequence, inject_drift, normalize_gt_scale,
                        path_length, reverse)
from observability import connectivity, connectivity_probability, edges_for_offset, monte_carlo_connectivity
from photometry import ResponseLUT, VignetteMap, photometric_correct
from report_generator import ReportGenerator, plot_cumulative
from response_calibration import CalibrationOptions, ExposureSweep, calibrate_response, compare_to_truth
from synthetic_oracle import (SyntheticScene, gamma_response, gen_exposure_sweep, gen_loop_trajectory,
                              gen_plane_observations)
from vignette_calibration import VignetteOptions, calibrate_vignette, residual_graph

logger = logging.getLogger(__name__)

CUMDIST_METRICS = ('e_align', 'e_rmse', 'e_s_sym', 'e_r', 'e_t')


def _emit(key, value):
    """One 'key value' result line on stdout"""
    if isinstance(value, float):
        value = dataset_io.format_value(value)
    print(f"{key} {value}")


def _report_generator(args):
    return ReportGenerator(os.path.dirname(os.path.abspath(args.pdf)))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    """Write a synthetic sweep sequence, plane observations, a loop trajectory and their truth"""
    out = args.out
    scene = SyntheticScene.default(seed=args.seed, width=args.width, height=args.height,
                                   response=gamma_response(args.gamma), noise_sigma=args.noise)
    truth_dir = os.path.join(out, 'truth')
    os.makedirs(truth_dir, exist_ok=True)

    sweep, sweep_truth = gen_exposure_sweep(scene, n_exposures=args.exposures)
    dataset_io.write_sequence(os.path.join(out, 'sweep'), sweep.images, sweep_truth.exposure_log,
                              calibration=_synthetic_camera(scene))
    dataset_io.write_response(os.path.join(truth_dir, config.RESPONSE_FILE), scene.response)
    dataset_io.write_vignette(os.path.join(truth_dir, config.VIGNETTE_FILE), scene.vignette)

    observations, _ = gen_plane_observations(scene, n_poses=args.poses, seed=args.seed)
    plane_dir = os.path.join(out, 'plane')
    os.makedirs(plane_dir, exist_ok=True)
    dataset_io.write_observations(os.path.join(plane_dir, config.OBSERVATION_MANIFEST), observations)

    traj, gt = gen_loop_trajectory(args.points, seed=args.seed)
    traj_dir = os.path.join(out, 'trajectory')
    os.makedirs(traj_dir, exist_ok=True)
    dataset_io.write_trajectory(os.path.join(traj_dir, config.TRAJECTORY_FILE), traj)
    dataset_io.write_groundtruth(os.path.join(traj_dir, config.GROUNDTRUTH_FILE), gt)

    _emit('sweep_frames', len(sweep))
    _emit('plane_observations', len(observations))
    _emit('trajectory_points', len(traj))
    _emit('trajectory_length', path_length(traj.positions))
    return 0


def _synthetic_camera(scene):
    f = 0.6 * scene.width
    return FovIntrinsics(fx=f, fy=f, cx=(scene.width - 1) / 2.0, cy=(scene.height - 1) / 2.0,
                         omega=0.9, width=scene.width, height=scene.height)


def cmd_calibrate_response(args):
    dataset = dataset_io.load_sequence(args.sequence, exposure_shift=args.exposure_shift)
    sweep = ExposureSweep(dataset.frames(), dataset.exposure_log.exposures_ms)
    opts = CalibrationOptions.from_config(config.RESPONSE_CONFIG, tol=args.tol,
                                          max_iters=args.max_iters, stride=args.stride,
                                          overexposure=args.overexposure)
    result = calibrate_response(sweep, opts)

    dataset_io.write_response(args.out, result.lut)
    if args.energy_csv:
        dataset_io.write_energy_csv(args.energy_csv, result.energies)

    _emit('iterations', result.iterations)
    _emit('converged', str(result.converged).lower())
    _emit('energy', result.energies[-1])
    _emit('unobserved_ranges', ','.join(f"{lo}-{hi}" for lo, hi in result.unobserved_ranges) or 'none')
    _emit('monotonicity_repaired', str(result.monotonicity_repaired).lower())

    truth = None
    if args.truth:
        truth = compare_to_truth(result.lut, dataset_io.read_response(args.truth))
        for key, value in truth.items():
            _emit(key, value)
    if args.pdf:
        _report_generator(args).generate_calibration_report(result, 'response', truth, report_path=args.pdf)
    return 0


def cmd_calibrate_vignette(args):
    observations = dataset_io.read_observations(args.manifest)
    response = dataset_io.read_response(args.response)
    opts = VignetteOptions.from_config(tol=args.tol, max_iters=args.max_iters,
                                       grid_resolution=args.grid,
                                       check_observability=not args.no_observability,
                                       overexposure=args.overexposure)
    result = calibrate_vignette(observations, response, opts)

    dataset_io.write_vignette(args.out, result.vignette)
    if args.energy_csv:
        dataset_io.write_energy_csv(args.energy_csv, result.energies)

    _emit('iterations', result.iterations)
    _emit('converged', str(result.converged).lower())
    _emit('energy', result.energies[-1])
    _emit('components', result.n_components)
    _emit('unobserved_pixels', int(np.count_nonzero(~result.vignette.valid)))

    truth = None
    if args.truth:
        true_v = dataset_io.read_vignette(args.truth)
        if true_v.shape != result.vignette.shape:
            raise DatasetFormatError(args.truth, "truth vignette does not match the observations")
        both = result.vignette.valid & true_v.valid
        truth = {'max_abs': float(np.max(np.abs(result.vignette.values[both] - true_v.values[both])))}
        _emit('max_abs', truth['max_abs'])
    if args.pdf:
        _report_generator(args).generate_calibration_report(result, 'vignette', truth, report_path=args.pdf)
    return 0


def cmd_check_observability(args):
    if args.random is not None:
        n, c = args.random, args.offset
        fraction = monte_carlo_connectivity(n, c, args.trials, seed=args.seed)
        _emit('nodes_per_side', n)
        _emit('edges', edges_for_offset(n, c))
        _emit('connected_fraction', fraction)
        _emit('predicted', connectivity_probability(c))
        return 0

    if not args.manifest:
        raise DatasetFormatError('-', "either an observation manifest or --random is required")
    observations = dataset_io.read_observations(args.manifest)
    response = dataset_io.read_response(args.response) if args.response else None
    graph = residual_graph(observations, response or ResponseLUT.identity(), resolution=args.grid)
    report = connectivity(graph)
    if args.edges:
        dataset_io.write_edge_list(args.edges, graph)

    _emit('cells', graph.n_a)
    _emit('pixels', graph.n_b)
    _emit('edges', int(graph.edges.shape[0]))
    _emit('components', report.n_components)
    _emit('largest_fraction', report.largest_fraction)
    _emit('connected', str(report.connected).lower())
    return 0


def cmd_rectify(args):
    calib = load_fov_calibration(args.camera, units=args.units)
    target = pinhole_for_fov(calib, f=args.focal, width=args.width, height=args.height)
    rect_map = build_rectification_map(calib, target)

    if os.path.isdir(args.input):
        dataset = dataset_io.load_sequence(args.input)
        os.makedirs(args.out, exist_ok=True)
        for i, image, _ in dataset.iter_frames():
            rectified, _ = rectify(image, rect_map)
            dataset_io.write_image(os.path.join(args.out, f"{i:05d}.png"), rectified)
        frames = len(dataset)
    else:
        rectified, _ = rectify(dataset_io.read_image(args.input), rect_map)
        dataset_io.write_image(args.out, rectified)
        frames = 1

    _emit('frames', frames)
    _emit('focal', target.f)
    _emit('horizontal_fov_deg', horizontal_fov_deg(target))
    _emit('valid_fraction', rect_map.valid_fraction)
    return 0


def cmd_correct(args):
    dataset = dataset_io.load_sequence(args.sequence, exposure_shift=args.exposure_shift)
    response = dataset_io.read_response(args.response) if args.response else dataset.response
    vignette = dataset_io.read_vignette(args.vignette) if args.vignette else dataset.vignette
    if response is None:
        raise DatasetFormatError(args.sequence, "no response calibration given or found in the sequence")
    if vignette is None:
        width, height = dataset.size
        logger.warning("No vignette calibration; assuming no attenuation")
        vignette = VignetteMap.flat(width, height)

    os.makedirs(args.out, exist_ok=True)
    invalid = 0
    for i, image, exposure in dataset.iter_frames():
        corrected = photometric_correct(image, response, vignette, exposure, overexposure=args.overexposure)
        np.save(os.path.join(args.out, f"{i:05d}.npy"), corrected.values.astype(np.float32))
        invalid += int(np.count_nonzero(~corrected.valid))

    _emit('frames', len(dataset))
    _emit('invalid_pixels', invalid)
    return 0


def cmd_evaluate(args):
    traj = dataset_io.read_trajectory(args.trajectory)
    gt = dataset_io.read_groundtruth(args.groundtruth)
    if args.reference_length is not None:
        gt = normalize_gt_scale(gt, args.reference_length)
    if args.reverse:
        traj, gt = reverse(traj, gt)

    report = evaluate_sequence(traj, gt, window=args.window)
    print(dataset_io.format_drift_report(report), end='')
    if args.out:
        dataset_io.write_drift_report(args.out, report)
    if args.csv:
        dataset_io.write_drift_csv(args.csv, report, name=os.path.basename(os.path.dirname(
            os.path.abspath(args.trajectory))))
    if args.pdf:
        _report_generator(args).generate_drift_report(report, name=args.trajectory, traj=traj, gt=gt,
                                                      report_path=args.pdf)
    return 0


def cmd_inject_drift(args):
    traj = dataset_io.read_trajectory(args.trajectory)
    index = args.at if args.at is not None else int(round(args.at_fraction * (len(traj) - 1)))
    value = args.value if len(args.value) > 1 else args.value[0]
    drifted = inject_drift(traj, index, args.kind, value, axis=args.axis)
    dataset_io.write_trajectory(args.out, drifted)
    _emit('index', index)
    _emit('timestamp', float(traj.timestamps[index]))
    return 0


def cmd_cumdist(args):
    paths = dataset_io.find_drift_reports(args.reports)
    if not paths:
        raise DatasetFormatError(args.reports, f"no *{config.DRIFT_REPORT_SUFFIX} files found")
    reports = [dataset_io.read_drift_report(p) for p in paths]
    metrics = CUMDIST_METRICS if args.metric == 'all' else (args.metric,)
    distributions = {m: cumulative_distribution([r.to_dict()[m] for r in reports]) for m in metrics}

    if args.out:
        written = dataset_io.write_cumulative_csv(args.out, distributions)
        _emit('reports', len(reports))
        for metric, path in written.items():
            _emit(metric, path)
    else:
        print('metric,threshold,count,total')
        for metric, dist in distributions.items():
            for threshold, count in dist.pairs():
                print(f"{metric},{dataset_io.format_value(threshold)},{count},{dist.total}")
    if args.plot or args.pdf:
        if args.plot:
            plot_cumulative(distributions, args.plot)
        if args.pdf:
            ReportGenerator(os.path.dirname(os.path.abspath(args.pdf))).generate_cumulative_report(
                distributions, source=args.reports, report_path=args.pdf)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog='photocal', description=config.APP_NAME)
    parser.add_argument('--version', action='version', version=f"%(prog)s {config.VERSION}")
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    parser.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--seed', type=int, default=0, help='seed for every random choice')
    shared.add_argument('--tol', type=float, default=None, help='relative energy decrease to stop at')
    shared.add_argument('--max-iters', type=int, default=None)

    saturation = argparse.ArgumentParser(add_help=False)
    saturation.add_argument('--overexposure', type=int, choices=range(1, 256), metavar='K', default=None,
                            help='gray levels >= K are saturated (default PHOTOCAL_OVEREXPOSURE or 255)')

    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', parents=[shared], help='write a synthetic dataset with ground truth')
    p.add_argument('out')
    p.add_argument('--width', type=int, default=config.SYNTH_CONFIG['width'])
    p.add_argument('--height', type=int, default=config.SYNTH_CONFIG['height'])
    p.add_argument('--exposures', type=int, default=config.SYNTH_CONFIG['n_exposures'])
    p.add_argument('--poses', type=int, default=config.SYNTH_CONFIG['n_poses'])
    p.add_argument('--points', type=int, default=config.SYNTH_CONFIG['trajectory_points'])
    p.add_argument('--gamma', type=float, default=2.2)
    p.add_argument('--noise', type=float, default=config.SYNTH_CONFIG['noise_sigma'],
                   help='Gaussian noise sigma in gray levels')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('calibrate-response', parents=[shared, saturation],
                       help='estimate U from an exposure sweep')
    p.add_argument('sequence')
    p.add_argument('--out', required=True, help='response file to write')
    p.add_argument('--stride', type=int, default=None)
    p.add_argument('--exposure-shift', type=int, default=0)
    p.add_argument('--truth', help='reference response to compare against')
    p.add_argument('--energy-csv')
    p.add_argument('--pdf')
    p.set_defaults(func=cmd_calibrate_response)

    p = sub.add_parser('calibrate-vignette', parents=[shared, saturation],
                       help='estimate V from posed plane images')
    p.add_argument('manifest')
    p.add_argument('--response', required=True)
    p.add_argument('--out', required=True, help='vignette image to write')
    p.add_argument('--grid', type=int, default=config.VIGNETTE_CONFIG['grid_resolution'])
    p.add_argument('--no-observability', action='store_true')
    p.add_argument('--truth', help='reference vignette to compare against')
    p.add_argument('--energy-csv')
    p.add_argument('--pdf')
    p.set_defaults(func=cmd_calibrate_vignette)

    p = sub.add_parser('check-observability', parents=[shared],
                       help='residual graph connectivity, or a random-graph Monte-Carlo run')
    p.add_argument('manifest', nargs='?')
    p.add_argument('--response')
    p.add_argument('--grid', type=int, default=config.VIGNETTE_CONFIG['grid_resolution'])
    p.add_argument('--edges', help='write the residual graph as an edge list')
    p.add_argument('--random', type=int, metavar='N', help='nodes per side of a random bipartite graph')
    p.add_argument('--offset', type=float, default=0.0, help='c in |E| = n (ln n + c)')
    p.add_argument('--trials', type=int, default=500)
    p.set_defaults(func=cmd_check_observability)

    p = sub.add_parser('rectify', parents=[shared], help='resample to an ideal pinhole camera')
    p.add_argument('input', help='image file or sequence directory')
    p.add_argument('--camera', required=True)
    p.add_argument('--units', choices=('absolute', 'normalized'))
    p.add_argument('--out', required=True)
    p.add_argument('--focal', type=float)
    p.add_argument('--width', type=int)
    p.add_argument('--height', type=int)
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser('correct', parents=[shared, saturation], help='photometrically correct a sequence')
    p.add_argument('sequence')
    p.add_argument('--out', required=True)
    p.add_argument('--response')
    p.add_argument('--vignette')
    p.add_argument('--exposure-shift', type=int, default=0)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser('evaluate', parents=[shared], help='loop-closure drift of a tracked trajectory')
    p.add_argument('trajectory')
    p.add_argument('groundtruth')
    p.add_argument('--reference-length', type=float, default=config.EVALUATION_CONFIG['reference_length'])
    p.add_argument('--window', type=float, default=config.THRESHOLDS['association_window_s'])
    p.add_argument('--reverse', action='store_true', help='evaluate the sequence played backwards')
    p.add_argument('--out', help=f"drift report file (*{config.DRIFT_REPORT_SUFFIX})")
    p.add_argument('--csv')
    p.add_argument('--pdf')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('inject-drift', parents=[shared], help='apply a synthetic drift to a trajectory')
    p.add_argument('trajectory')
    p.add_argument('--out', required=True)
    where = p.add_mutually_exclusive_group(required=True)
    where.add_argument('--at', type=int)
    where.add_argument('--at-fraction', type=float)
    p.add_argument('--kind', choices=('scale', 'rotation', 'translation'), required=True)
    p.add_argument('--value', type=float, nargs='+', required=True)
    p.add_argument('--axis', type=float, nargs=3, default=(0.0, 0.0, 1.0))
    p.set_defaults(func=cmd_inject_drift)

    p = sub.add_parser('cumdist', parents=[shared], help='cumulative error counts over drift reports')
    p.add_argument('reports', help='directory searched for drift reports')
    p.add_argument('--metric', choices=CUMDIST_METRICS + ('all',), default='all')
    p.add_argument('--out', help='directory for one <metric>.csv per metric; stdout table when omitted')
    p.add_argument('--plot')
    p.add_argument('--pdf')
    p.set_defaults(func=cmd_cumdist)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = 'DEBUG' if args.verbose else ('WARNING' if args.quiet else None)
    config.configure_logging(level)
    logger.debug(f"{config.APP_NAME} v{config.VERSION}: {args.command}")

    try:
        return args.func(args)
    except (PhotocalError, ValueError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
