"""Command-line entry point: ``spadsim <command> [options]``.

Every command that writes results also writes ``manifest.json`` into its
output directory. Exit codes:

    0  success
    1  unexpected internal error
    2  usage error (unknown command, bad flag)
    3  invalid configuration or argument value
    4  missing input file
    5  frame count exceeds counter capacity
    6  output at saturation, cannot be linearised
    7  array dimensions disagree
    8  verify found digest mismatches
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, formats, hdr, sensor, tof
from .config import load_config, load_scene
from .errors import CapacityError, ConfigError, DimensionError, SaturationError, SpadError
from .gate import SkewParams, generate_pixel_maps, measure_gate_stats
from .manifest import RunManifest, verify

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_CAPACITY = 5
EXIT_SATURATION = 6
EXIT_DIMENSION = 7
EXIT_VERIFY = 8


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _int_list(text, n, name):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"expected {n} comma-separated integers, got {text!r}", name) from exc
    if len(vals) != n:
        raise ConfigError(f"expected {n} comma-separated integers, got {text!r}", name)
    return vals


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, out, outputs):
    m = RunManifest(
        command=args.command,
        argv=list(args.argv),
        seed=getattr(args, "seed", None),
        out_dir=str(out),
        config_path=str(args.config) if getattr(args, "config", None) else None,
        scene_path=str(args.scene) if getattr(args, "scene", None) else None,
    )
    m.add_input(getattr(args, "config", None))
    m.add_input(getattr(args, "scene", None))
    m.add_input(getattr(args, "samples", None))
    m.add_outputs(outputs)
    m.write()


def _schedule(args, config, frames):
    if args.mode == "single":
        return sensor.ExposureSchedule.single(config.frame_exposure_ns, frames)
    return sensor.ExposureSchedule.matched_dual(config.frame_exposure_ns, args.ratio, frames)


def _auto_gate(scene, config):
    # centre the plateau on the median return delay
    delays = scene.delays[scene.amplitudes > 0]
    if delays.size == 0:
        return 0.0
    return float(np.median(delays)) + config.gate.length / 2.0


# --------------------------------------------------------------------------
# Commands


def cmd_simulate_2d(args):
    config = load_config(args.config)
    scene = load_scene(args.scene, config.width, config.height)
    frames = args.frames if args.frames is not None else config.n_sat
    schedule = _schedule(args, config, frames)
    gate = args.gate_position if args.gate_position is not None else _auto_gate(scene, config)
    out = _out_dir(args)
    image = sensor.accumulate_frames(scene, config, gate, schedule, args.seed)
    names = ["image.pgm", "image.csv"]
    formats.write_pgm16(out / "image.pgm", image)
    formats.write_image_csv(out / "image.csv", image)
    if args.save_frames:
        stack = sensor.simulate_frame_stack(scene, config, gate, schedule, args.seed)
        formats.write_spdf(out / "frames.spdf", stack)
        names.append("frames.spdf")
    formats.write_json(out / "summary.json", {
        "frames": frames, "mode": args.mode, "gate_position_ns": gate,
        "exposures_ns": list(schedule.exposures), "mean_count": float(image.mean()),
    })
    names.append("summary.json")
    _manifest(args, out, names)


def cmd_analyze_hdr(args):
    n_sat = args.n_sat
    if args.config:
        n_sat = load_config(args.config).n_sat
    modes = ["single", "dual"] if args.mode == "both" else [args.mode]
    out = _out_dir(args)
    params = {
        "single": hdr.ResponseParams.single(n_sat, 1.0),
        "dual": hdr.ResponseParams.dual(n_sat, 2.0 / (1 + args.ratio), 2.0 * args.ratio / (1 + args.ratio)),
    }
    definition = hdr.DRDefinition(args.threshold)
    mc_grid = np.logspace(np.log10(args.mc_low), np.log10(args.mc_high), args.points)
    summary = {"n_sat": n_sat, "ratio": args.ratio, "definition": definition.describe(),
               "threshold_db": args.threshold, "trials": args.trials, "modes": {}}
    names = []
    for mode in modes:
        p = params[mode]
        curve = hdr.analytic_noise_curve(p)
        res = hdr.snr_and_dynamic_range(curve, definition)
        formats.write_noise_csv(out / f"noise_analytic_{mode}.csv", curve)
        names.append(f"noise_analytic_{mode}.csv")
        entry = {"max_snr_db": res.max_snr_db, "dr_db": res.dr_db, "n_low": res.n_low, "n_high": res.n_high}
        if args.trials:
            mc = hdr.monte_carlo_noise_curve(p, mc_grid, args.trials, args.seed)
            formats.write_noise_csv(out / f"noise_mc_{mode}.csv", mc)
            names.append(f"noise_mc_{mode}.csv")
        summary["modes"][mode] = entry
    if len(modes) == 2:
        summary["dr_improvement_db"] = summary["modes"]["dual"]["dr_db"] - summary["modes"]["single"]["dr_db"]
    formats.write_json(out / "summary.json", summary)
    names.append("summary.json")
    _manifest(args, out, names)


def _plan(args, config):
    plan = tof.ScanPlan.parse(args.plan, frames=args.frames)
    plan.check_capacity(config)
    return plan


def _scan(args):
    config = load_config(args.config)
    scene = load_scene(args.scene, config.width, config.height)
    plan = _plan(args, config)
    stack = tof.scan_gate(scene, config, plan, args.seed)
    return config, scene, plan, stack


def cmd_scan_3d(args):
    config, scene, plan, stack = _scan(args)
    out = _out_dir(args)
    names = ["stack.spdf", "stack_positions.csv", "depth.csv", "depth.pgm", "depth.pgm.json", "accuracy.csv"]
    formats.write_profile_stack(out / "stack", stack)
    depth = tof.reconstruct_depth(stack, config.maps, args.window, args.floor)
    formats.write_depth_csv(out / "depth.csv", depth.distance)
    formats.write_depth_pgm(out / "depth.pgm", depth.distance)

    h, w = config.shape
    if args.roi:
        roi = _int_list(args.roi, 4, "roi")
    else:
        s = min(20, h, w)
        roi = [(h - s) // 2, (w - s) // 2, (h - s) // 2 + s, (w - s) // 2 + s]
    if args.truth is not None:
        truth = args.truth
    elif scene.true_depth is not None:
        truth = scene.true_depth[0]
    else:
        raise ConfigError("no ground truth: pass --truth or use a primitive scene", "truth")
    try:
        acc, prec = tof.evaluate_accuracy_precision(depth, truth, roi)
        row = f"{acc!r},{prec!r},{plan.lsb_m!r},{roi[0]},{roi[1]},{roi[2]},{roi[3]}\n"
    except ConfigError:
        row = f"nan,nan,{plan.lsb_m!r},{roi[0]},{roi[1]},{roi[2]},{roi[3]}\n"
    (out / "accuracy.csv").write_text("accuracy_m,precision_m,lsb_m,row0,col0,row1,col1\n" + row)
    _manifest(args, out, names)


def cmd_multi_object(args):
    config, scene, plan, stack = _scan(args)
    ranges = tof.parse_ranges(args.ranges)
    out = _out_dir(args)
    names = ["stack.spdf", "stack_positions.csv"]
    formats.write_profile_stack(out / "stack", stack)
    maps = tof.build_depth_maps(stack, config.maps, plan, ranges, args.window, args.vwindow, args.k)
    summary = []
    for j, dm in enumerate(maps):
        stem = f"depth_range{j}"
        formats.write_depth_csv(out / f"{stem}.csv", dm.distance)
        a, b = dm.range_m
        formats.write_depth_pgm(out / f"{stem}.pgm", dm.distance, a, b)
        names += [f"{stem}.csv", f"{stem}.pgm", f"{stem}.pgm.json"]
        det = dm.detected
        summary.append({"range_m": [a, b], "detected_fraction": float(det.mean()),
                        "median_m": float(np.median(dm.distance[det])) if det.any() else None})
    formats.write_json(out / "summary.json", {"ranges": summary, "vwindow": args.vwindow, "k": args.k})
    names.append("summary.json")
    _manifest(args, out, names)


def cmd_gen_maps(args):
    if args.config:
        cfg = load_config(args.config)
        width, height = cfg.width, cfg.height
    else:
        width, height = args.width, args.height
    params = SkewParams(position_fwhm=args.position_fwhm, length_fwhm=args.length_fwhm,
                        nominal_length=args.length, bin_width=args.bin)
    maps = generate_pixel_maps(width, height, params, args.seed)
    stats = measure_gate_stats(maps, args.bin)
    out = _out_dir(args)
    formats.write_map_csv(out / "position.csv", maps.position)
    formats.write_map_csv(out / "length.csv", maps.length)
    formats.write_map_raw(out / "position.f32", maps.position)
    formats.write_map_raw(out / "length.f32", maps.length)
    formats.write_histogram_csv(out / "position_hist.csv", stats.position_histogram)
    formats.write_histogram_csv(out / "length_hist.csv", stats.length_histogram)
    formats.write_json(out / "stats.json", {
        "width": width, "height": height, "bin_width_ns": args.bin,
        "position_fwhm_ns": stats.position_fwhm, "length_fwhm_ns": stats.length_fwhm,
        "degenerate": stats.degenerate,
    })
    _manifest(args, out, ["position.csv", "length.csv", "position.f32", "length.f32",
                          "position_hist.csv", "length_hist.csv", "stats.json"])


def cmd_fit_dcr(args):
    path = Path(args.samples)
    rows = [line.split(",") for line in path.read_text().splitlines() if line.strip()]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    try:
        samples = np.array([[float(a), float(b)] for a, b, *_ in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: expected temperature_k,dcr_cps rows", "samples") from exc
    if args.tmin is not None:
        samples = samples[samples[:, 0] >= args.tmin]
    fit = sensor.fit_arrhenius(samples, args.floor)
    out = _out_dir(args)
    formats.write_json(out / "fit.json", {
        "activation_energy_ev": fit.activation_energy, "prefactor_cps": fit.prefactor,
        "r_squared": fit.r_squared, "tunneling_floor_cps": args.floor, "samples": int(len(samples)),
    })
    _manifest(args, out, ["fit.json"])


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def cmd_verify(args):
    problems = verify(args.out)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return EXIT_VERIFY
    print(f"{args.out}: all digests match")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def build_parser():
    p = _Parser(prog="spadsim", description="Time-gated SPAD sensor simulation and reconstruction")
    p.add_argument("--version", action="version", version=f"spadsim {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker threads for the Monte Carlo kernels")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, scene=True):
        sp.add_argument("--config", required=True, help="sensor config JSON")
        if scene:
            sp.add_argument("--scene", required=True, help="scene JSON")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("simulate-2d", help="accumulate binary frames into one intensity image")
    common(sp)
    sp.add_argument("--frames", type=int, default=None, help="frames per image (default n_sat)")
    sp.add_argument("--mode", choices=["single", "dual"], default="single")
    sp.add_argument("--ratio", type=float, default=8.0, help="tau_L / tau_S in dual mode")
    sp.add_argument("--gate-position", type=float, default=None, help="ns; default centres the gate on the scene")
    sp.add_argument("--save-frames", action="store_true", help="also write the binary frames (SPDF)")
    sp.set_defaults(func=cmd_simulate_2d)

    sp = sub.add_parser("analyze-hdr", help="noise, SNR and dynamic range of single/dual exposure")
    sp.add_argument("--config", default=None, help="take n_sat from this config")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["single", "dual", "both"], default="both")
    sp.add_argument("--n-sat", type=int, default=4080)
    sp.add_argument("--ratio", type=float, default=8.0)
    sp.add_argument("--trials", type=int, default=10000, help="Monte Carlo pixels per grid point; 0 skips")
    sp.add_argument("--points", type=int, default=20, help="Monte Carlo grid points")
    sp.add_argument("--mc-low", type=float, default=10.0)
    sp.add_argument("--mc-high", type=float, default=3 * 4080.0)
    sp.add_argument("--threshold", type=float, default=0.0, help="SNR threshold (dB) for the DR band")
    sp.set_defaults(func=cmd_analyze_hdr)

    for name, func, help_ in (("scan-3d", cmd_scan_3d, "gate scan and single-return depth map"),
                              ("multi-object", cmd_multi_object, "gate scan and range-windowed depth maps")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--plan", default="0.6:0.036:351", help="start:step:count in ns")
        sp.add_argument("--frames", type=int, default=255, help="frames per gate position")
        sp.add_argument("--window", type=int, default=15, help="moving-average window (samples, odd)")
        if name == "scan-3d":
            sp.add_argument("--roi", default=None, help="row0,col0,row1,col1 (default central 20x20)")
            sp.add_argument("--truth", type=float, default=None, help="true distance in m")
            sp.add_argument("--floor", type=float, default=0.0, help="minimum plateau for a detection")
        else:
            sp.add_argument("--ranges", default="0.3:0.6,0.6:0.9", help="a:b,c:d in m")
            sp.add_argument("--vwindow", type=int, default=60, help="virtual window (samples)")
            sp.add_argument("--k", type=float, default=3.0, help="edge sensitivity in noise units")
        sp.set_defaults(func=func)

    sp = sub.add_parser("gen-maps", help="synthesise gate skew/length maps")
    sp.add_argument("--config", default=None, help="take dimensions from this config")
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--position-fwhm", type=float, default=0.41, help="ns")
    sp.add_argument("--length-fwhm", type=float, default=0.12, help="ns")
    sp.add_argument("--length", type=float, default=3.8, help="nominal gate length, ns")
    sp.add_argument("--bin", type=float, default=0.036, help="histogram bin width, ns")
    sp.set_defaults(func=cmd_gen_maps)

    sp = sub.add_parser("fit-dcr", help="activation energy from DCR-vs-temperature samples")
    sp.add_argument("--samples", required=True, help="CSV of temperature_k,dcr_cps")
    sp.add_argument("--floor", type=float, default=0.0, help="tunneling floor (cps) to subtract")
    sp.add_argument("--tmin", type=float, default=None, help="ignore samples below this temperature (K)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fit_dcr)

    sp = sub.add_parser("verify", help="re-check the digests recorded in an output directory")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_verify)
    return p


def run_command(argv):
    """Run the CLI with ``argv`` (without the program name); returns the exit status."""
    argv = list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    args.argv = argv
    if args.threads is not None:
        import numba

        if args.threads < 1:
            print("spadsim: error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        status = args.func(args)
        return EXIT_OK if status is None else status
    except FileNotFoundError as exc:
        print(f"spadsim: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except CapacityError as exc:
        print(f"spadsim: error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except SaturationError as exc:
        print(f"spadsim: error: {exc}", file=sys.stderr)
        return EXIT_SATURATION
    except DimensionError as exc:
        print(f"spadsim: error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (ConfigError, SpadError) as exc:
        print(f"spadsim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"spadsim: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
