"""Command-line entry points: gen, run, eval, sweep."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluate, mcl, sensing, sim, worldmap
from .errors import SpectralMclError
from .motion import MotionNoise, Pose2
from .sensing import BEAM, LIKELIHOOD_FIELD, SensorModelConfig
from .spectral import MetricKind, NoiseConfig

_MODEL_NAMES = {"beam": BEAM, "field": LIKELIHOOD_FIELD}
_METRIC_CHOICES = [k.value for k in MetricKind]
_EPS_R_GRID = [0.2, 0.4, 0.5, 0.6, 0.8]


def build_manifest(args: argparse.Namespace) -> dict:
    return {
        "map": str(args.map),
        "log": str(args.log),
        "gt": str(args.gt) if args.gt else str(Path(args.log).parent / "gt.tum"),
        "out": str(args.out),
        "model": args.model,
        "metric": args.metric,
        "slk_window": args.slk_window,
        "eps_m": args.eps_m,
        "sigma_o": args.sigma_o,
        "max_range": args.max_range,
        "k_beams": args.k_beams,
        "use_ranges": not args.no_ranges,
        "particles": args.particles,
        "n_min": min(args.n_min, args.particles),
        "init": args.init,
        "init_std_xy": args.init_std_xy,
        "init_std_theta": args.init_std_theta,
        "odom_sigma_xy": args.odom_sigma_xy,
        "odom_sigma_theta": args.odom_sigma_theta,
        "no_noise": args.no_noise,
        "resample_threshold": args.resample_threshold,
        "kld_epsilon": args.kld_epsilon,
        "kld_delta": args.kld_delta,
        "adapt": not args.no_adapt,
        "baseline_order": args.baseline_order,
        "seed": args.seed,
    }


def run_pipeline(manifest: dict) -> dict:
    """Localise a recorded log against a map and evaluate the trajectory.

    Writes est.tum, gt.tum, ate.json, rpe.json, trajectory.svg and
    manifest.resolved.json into the output directory. The reported wall
    clock covers the filter loop only.
    """
    out = Path(manifest["out"])
    out.mkdir(parents=True, exist_ok=True)
    m = worldmap.load_map_meta(manifest["map"])
    gt = evaluate.read_tum(manifest["gt"])
    records = sim.read_scan_log(manifest["log"], m.library)
    if not records:
        raise SpectralMclError("scan log is empty")

    kind = MetricKind(manifest["metric"])
    metric = sensing.calibrated_metric_for_map(
        m, kind, manifest["slk_window"], manifest["baseline_order"])
    fields = sensing.build_fields(m, metric, manifest["baseline_order"])
    eps_m = float(manifest["eps_m"])
    sensor_cfg = SensorModelConfig(
        model=_MODEL_NAMES[manifest["model"]],
        eps_range=1.0 - eps_m,
        eps_material=eps_m,
        sigma_o=manifest["sigma_o"],
        metric=metric,
        max_range=manifest["max_range"],
        use_ranges=manifest["use_ranges"],
        beams_per_scan=manifest["k_beams"],
        baseline_order=manifest["baseline_order"],
    )
    init = manifest["init"]
    if init == "center":
        init_mean = Pose2(m.width * m.resolution / 2.0, m.height * m.resolution / 2.0, 0.0)
    elif init == "uniform":
        init_mean = None
    else:
        init_mean = gt.pose(0)
    filter_cfg = mcl.FilterConfig(
        n_min=manifest["n_min"],
        n_max=manifest["particles"],
        init_mode=mcl.UNIFORM_INIT if init == "uniform" else mcl.GAUSSIAN_INIT,
        init_mean=init_mean,
        init_std_xy=0.0 if init == "gt" else manifest["init_std_xy"],
        init_std_theta=0.0 if init == "gt" else manifest["init_std_theta"],
        resample_threshold=manifest["resample_threshold"],
        kld_epsilon=manifest["kld_epsilon"],
        kld_delta=manifest["kld_delta"],
        adapt=manifest["adapt"],
        rng_seed=manifest["seed"],
    )
    if manifest["no_noise"]:
        motion_noise = MotionNoise.zero()
    else:
        motion_noise = MotionNoise.from_stds(
            manifest["odom_sigma_xy"], manifest["odom_sigma_xy"],
            manifest["odom_sigma_theta"])

    filt = mcl.MCLFilter(m, fields, sensor_cfg, filter_cfg, motion_noise)
    samples = []
    t0 = time.perf_counter()
    for rec in records:
        pose, _ = filt.step(rec.odom, rec.scan)
        samples.append((rec.t, pose))
    filter_seconds = time.perf_counter() - t0

    est = evaluate.TrajectoryLog.from_poses(samples)
    evaluate.write_tum(out / "est.tum", est)
    evaluate.write_tum(out / "gt.tum", gt)
    ate = evaluate.compute_ate(est, gt)
    rpe_trans, rpe_rot = evaluate.compute_rpe(est, gt, delta=1)
    (out / "ate.json").write_text(json.dumps(ate.as_dict(), indent=2, sort_keys=True) + "\n")
    (out / "rpe.json").write_text(json.dumps({
        "delta": 1,
        "translational": rpe_trans.as_dict(),
        "rotational": rpe_rot.as_dict(),
    }, indent=2, sort_keys=True) + "\n")
    (out / "trajectory.svg").write_text(render_overhead_svg(m, gt, est))
    (out / "manifest.resolved.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {
        "ate": ate.as_dict(),
        "rpe_translational": rpe_trans.as_dict(),
        "rpe_rotational": rpe_rot.as_dict(),
        "filter_seconds": filter_seconds,
        "out": str(out),
    }


def render_overhead_svg(m: worldmap.MaterialMap, gt, est) -> str:
    """Overhead view: occupancy cells plus ground-truth and estimated paths."""
    res = m.resolution
    w_m = m.width * res
    h_m = m.height * res
    scale = 600.0 / max(w_m, h_m)

    def sx(x):
        return x * scale

    def sy(y):
        return (h_m - y) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{sx(w_m):.0f}" '
        f'height="{sy(0):.0f}" viewBox="0 0 {sx(w_m):.2f} {sy(0):.2f}">',
        f'<rect width="{sx(w_m):.2f}" height="{sy(0):.2f}" fill="#ffffff"/>',
    ]
    colors = {worldmap.OCCUPIED: "#222222", worldmap.UNKNOWN: "#bbbbbb"}
    for value, color in colors.items():
        for iy, ix in np.argwhere(m.occupancy == value):
            parts.append(
                f'<rect x="{sx(ix * res):.2f}" y="{sy((iy + 1) * res):.2f}" '
                f'width="{res * scale:.2f}" height="{res * scale:.2f}" fill="{color}"/>')
    for log, color, dash in ((gt, "#2277cc", ""), (est, "#cc3322", ' stroke-dasharray="4 3"')):
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(log.xs, log.ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"{dash}/>')
    parts.append(f'<text x="6" y="14" font-size="12" fill="#2277cc">ground truth</text>')
    parts.append(f'<text x="6" y="28" font-size="12" fill="#cc3322">estimate</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _sweep_worker(job: tuple[str, dict]) -> dict:
    label, manifest = job
    try:
        result = run_pipeline(manifest)
        return {"config": label, "status": "ok",
                "ate": result["ate"], "wall_clock_s": result["filter_seconds"]}
    except Exception as exc:  # failed rows are recorded, not fatal
        return {"config": label, "status": type(exc).__name__, "ate": None,
                "wall_clock_s": float("nan")}


def run_sweep(base_manifest: dict, axis: str) -> list[dict]:
    """Run the pipeline once per axis value with shared seeds; returns CSV rows."""
    jobs: list[tuple[str, dict]] = []
    out_root = Path(base_manifest["out"])
    if axis == "metric":
        for kind in _METRIC_CHOICES:
            jobs.append((kind, dict(base_manifest, metric=kind,
                                    out=str(out_root / f"metric_{kind}"))))
    elif axis == "eps":
        for eps_r in _EPS_R_GRID:
            label = f"eps_r_{eps_r:g}"
            jobs.append((label, dict(base_manifest, eps_m=1.0 - eps_r,
                                     out=str(out_root / label))))
    elif axis == "model":
        for model in ("beam", "field"):
            jobs.append((model, dict(base_manifest, model=model,
                                     out=str(out_root / f"model_{model}"))))
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")

    workers = int(os.environ.get("SPECTRAL_MCL_THREADS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(job) for job in jobs]

    ok = sorted((r for r in rows if r["status"] == "ok"),
                key=lambda r: (r["ate"]["rmse"], r["config"]))
    failed = sorted((r for r in rows if r["status"] != "ok"), key=lambda r: r["config"])
    return ok + failed


def write_sweep_csv(path: Path, rows: list[dict]) -> None:
    lines = ["config,rmse,mean,median,sd,min,max,wall_clock_s,status"]
    for r in rows:
        if r["ate"] is not None:
            a = r["ate"]
            stats = ",".join(repr(a[k]) for k in ("rmse", "mean", "median", "sd", "min", "max"))
        else:
            stats = ",,,,,"
        lines.append(f"{r['config']},{stats},{r['wall_clock_s']:.3f},{r['status']}")
    path.write_text("\n".join(lines) + "\n")


def _cmd_gen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = sim.WorldSpec(
        layout=args.layout, size=args.size, resolution=args.resolution,
        n_materials=args.materials, material_assignment=args.assignment,
        library_path=args.library, seed=args.seed,
    )
    m = sim.generate_world(spec)
    worldmap.save_map(m, out)
    script = sim.default_script(spec, args.speed, args.angular_speed, args.scan_period)
    if args.no_noise:
        noise = NoiseConfig(0.0, 0.0, 0.0, args.seed)
        odom_noise = MotionNoise.zero()
        range_sigma = 0.0
        outlier_prob = 0.0
    else:
        noise = NoiseConfig(args.shot_scale, args.read_sigma, args.baseline_sigma, args.seed)
        odom_noise = MotionNoise.from_stds(args.odom_sigma_xy, args.odom_sigma_xy,
                                           args.odom_sigma_theta)
        range_sigma = args.range_sigma
        outlier_prob = args.range_outlier_prob
    cfg = sim.SensorTruthConfig(k_beams=args.k_beams, max_range=args.max_range,
                                range_sigma=range_sigma, range_outlier_prob=outlier_prob,
                                noise=noise, odom_noise=odom_noise)
    gt, records = sim.generate_dataset(m, script, cfg, args.seed)
    sim.write_scan_log(out / "scans.jsonl", records)
    evaluate.write_tum(out / "gt.tum", gt)
    resolved = dict(vars(args))
    resolved.pop("func", None)
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in resolved.items()}
    (out / "gen.resolved.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    print(f"wrote map, {len(records)} scan records to {out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        if args.out:
            manifest["out"] = str(args.out)
    else:
        if not (args.map and args.log):
            raise SpectralMclError("run needs --map and --log (or --manifest)")
        if not args.out:
            args.out = str(Path(args.log).parent / "run")
        manifest = build_manifest(args)
    result = run_pipeline(manifest)
    print(f"ate rmse {result['ate']['rmse']:.4f} m "
          f"({result['filter_seconds']:.2f} s filter time) -> {result['out']}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    est = evaluate.read_tum(args.est)
    gt = evaluate.read_tum(args.gt)
    out = Path(args.out) if args.out else Path(args.est).parent
    out.mkdir(parents=True, exist_ok=True)
    ate = evaluate.compute_ate(est, gt, max_dt=args.max_dt)
    rpe_trans, rpe_rot = evaluate.compute_rpe(est, gt, delta=args.rpe_delta,
                                              max_dt=args.max_dt)
    (out / "ate.json").write_text(json.dumps(ate.as_dict(), indent=2, sort_keys=True) + "\n")
    (out / "rpe.json").write_text(json.dumps({
        "delta": args.rpe_delta,
        "translational": rpe_trans.as_dict(),
        "rotational": rpe_rot.as_dict(),
    }, indent=2, sort_keys=True) + "\n")
    print(f"ate rmse {ate.rmse:.4f} m -> {out}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    if not (args.map and args.log and args.out):
        raise SpectralMclError("sweep needs --map, --log and --out")
    manifest = build_manifest(args)
    rows = run_sweep(manifest, args.axis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out / "sweep.csv", rows)
    for r in rows:
        rmse = f"{r['ate']['rmse']:.4f}" if r["ate"] else "-"
        print(f"{r['config']:>14}  rmse {rmse}  {r['status']}")
    return 0


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--map", help="map directory (or map.meta path)")
    p.add_argument("--log", help="scan/odometry JSONL log")
    p.add_argument("--gt", help="ground-truth TUM file (default: gt.tum next to the log)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", choices=list(_MODEL_NAMES), default="field")
    p.add_argument("--metric", choices=_METRIC_CHOICES, default="mod-l2")
    p.add_argument("--slk-window", type=int, default=5)
    p.add_argument("--eps-m", type=float, default=1.0,
                   help="material weight; range weight is 1 - eps_m")
    p.add_argument("--sigma-o", type=float, default=0.15)
    p.add_argument("--max-range", type=float, default=2.0)
    p.add_argument("--k-beams", type=int, default=16)
    p.add_argument("--no-ranges", action="store_true",
                   help="ignore ranges (bearing + spectrum only)")
    p.add_argument("--particles", type=int, default=1000)
    p.add_argument("--n-min", type=int, default=50)
    p.add_argument("--init", choices=["coarse", "center", "uniform", "gt"], default="coarse",
                   help="coarse: Gaussian at the first ground-truth pose; "
                        "center: Gaussian at the map centre; gt: exact start pose")
    p.add_argument("--init-std-xy", type=float, default=2.0)
    p.add_argument("--init-std-theta", type=float, default=2.0)
    p.add_argument("--odom-sigma-xy", type=float, default=0.03)
    p.add_argument("--odom-sigma-theta", type=float, default=0.03)
    p.add_argument("--no-noise", action="store_true",
                   help="zero the filter's motion noise (noise-free replay)")
    p.add_argument("--resample-threshold", type=float, default=0.5)
    p.add_argument("--kld-epsilon", type=float, default=0.05)
    p.add_argument("--kld-delta", type=float, default=0.01)
    p.add_argument("--no-adapt", action="store_true")
    p.add_argument("--baseline-order", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectral-mcl")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic world and sensor log")
    gen.add_argument("--out", required=True)
    gen.add_argument("--layout", choices=[sim.CORRIDOR_LOOP, sim.ROOMS, sim.SYMMETRIC_TWIN],
                     default=sim.CORRIDOR_LOOP)
    gen.add_argument("--size", type=int, default=64)
    gen.add_argument("--resolution", type=float, default=0.05)
    gen.add_argument("--materials", type=int, default=5)
    gen.add_argument("--assignment", choices=[sim.PER_WALL_SEGMENT, sim.RANDOM_PATCHES],
                     default=sim.PER_WALL_SEGMENT)
    gen.add_argument("--library", help="use this spectra library file instead of synthesising")
    gen.add_argument("--speed", type=float, default=0.5)
    gen.add_argument("--angular-speed", type=float, default=1.0)
    gen.add_argument("--scan-period", type=float, default=0.25)
    gen.add_argument("--k-beams", type=int, default=16)
    gen.add_argument("--max-range", type=float, default=8.0)
    gen.add_argument("--range-sigma", type=float, default=0.02)
    gen.add_argument("--range-outlier-prob", type=float, default=0.1)
    gen.add_argument("--odom-sigma-xy", type=float, default=0.01)
    gen.add_argument("--odom-sigma-theta", type=float, default=0.01)
    gen.add_argument("--shot-scale", type=float, default=5e3)
    gen.add_argument("--read-sigma", type=float, default=0.01)
    gen.add_argument("--baseline-sigma", type=float, default=0.05)
    gen.add_argument("--no-noise", action="store_true")
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=_cmd_gen)

    run = sub.add_parser("run", help="localise a log against a map and evaluate")
    _add_run_options(run)
    run.add_argument("--manifest", help="rerun from a manifest.resolved.json")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="evaluate an estimated trajectory")
    ev.add_argument("--est", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--out")
    ev.add_argument("--max-dt", type=float, default=None)
    ev.add_argument("--rpe-delta", type=int, default=1)
    ev.set_defaults(func=_cmd_eval)

    sweep = sub.add_parser("sweep", help="run the pipeline across one config axis")
    _add_run_options(sweep)
    sweep.add_argument("--axis", choices=["metric", "eps", "model"], required=True)
    sweep.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (SpectralMclError, FileNotFoundError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
