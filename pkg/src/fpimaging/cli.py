"""Command-line interface.

Subcommands cover the full pipeline: ``simulate`` (particle frames from a
potential), ``bin`` (frames to density sequences), ``reconstruct`` (windowed
potential estimation from densities), ``evaluate`` (cross-correlation against
a reference), and ``target`` (build the radial test potential). Options
resolve as CLI flag > JSON config file > built-in default, and every run
writes a JSON manifest next to its outputs.

Exit codes: 0 success, 1 numerical or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .analysis import TargetSpec, make_target, resolution_verdict, scaled_cross_correlation
from .binning import bin_sequence
from .fields import Domain, Grid2D, ScalarField
from .fileio import (
    load_density,
    load_field,
    load_frames,
    load_potential_image,
    save_density,
    save_field,
    save_field_image,
    save_frames,
    write_manifest,
)
from .fokker_planck import FpConfig
from .inverse import InverseConfig, LineSearchError
from .sde import SdeConfig, simulate
from .windows import WindowPlan, run_windows

__all__ = ["cli_main", "main"]

_DEFAULT_DOMAIN = Domain()

DEFAULTS: dict[str, dict] = {
    "simulate": {
        "potential": None,
        "sigma": 0.268,
        "tau": 0.03,
        "substeps": 1,
        "particles": 1000,
        "frames": 3000,
        "seed": 0,
    },
    "bin": {"bins": 50},
    "reconstruct": {
        "grid": 100,
        "sigma_fp": 0.7,
        "alpha": 1e-4,
        "xi": 1.0,
        "windows": 5,
        "tol": 1e-4,
        "max_iter": 100,
        "reference": None,
    },
    "evaluate": {"threshold": 0.8},
    "target": {"A": 0.05, "d": 0.05, "grid": 100},
}


class UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpimaging",
        description="Potential reconstruction from particle-position movies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file with option defaults")

    p = sub.add_parser("simulate", help="generate particle frames by overdamped dynamics")
    p.add_argument("--potential", help="potential field (image or .bin field file)")
    p.add_argument("--sigma", type=float, help="noise amplitude")
    p.add_argument("--tau", type=float, help="frame spacing")
    p.add_argument("--substeps", type=int, help="integrator steps per frame")
    p.add_argument("--particles", type=int, help="ensemble size")
    p.add_argument("--frames", type=int, help="number of recorded frames")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", required=True, help="output frame file")
    add_config(p)

    p = sub.add_parser("bin", help="histogram frames into density sequences")
    p.add_argument("--frames", required=True, help="input frame file")
    p.add_argument("--bins", type=int, help="bins per axis")
    p.add_argument("--out", required=True, help="output density file")
    add_config(p)

    p = sub.add_parser("reconstruct", help="estimate the potential from a density sequence")
    p.add_argument("--density", required=True, help="input density file")
    p.add_argument("--grid", type=int, help="solver grid points per axis")
    p.add_argument("--sigma-fp", type=float, dest="sigma_fp", help="model noise amplitude")
    p.add_argument("--alpha", type=float, help="regularization weight")
    p.add_argument("--xi", type=float, help="terminal misfit weight")
    p.add_argument("--windows", type=int, help="number of time windows")
    p.add_argument("--tol", type=float, help="relative gradient tolerance")
    p.add_argument("--max-iter", type=int, dest="max_iter", help="iteration cap per window")
    p.add_argument("--reference", help="optional reference potential for per-window cc")
    p.add_argument("--out-dir", required=True, dest="out_dir", help="output directory")
    add_config(p)

    p = sub.add_parser("evaluate", help="cross-correlate a reconstruction with a reference")
    p.add_argument("--reconstruction", required=True, help="reconstructed field (image or .bin)")
    p.add_argument("--reference", required=True, help="reference field (image or .bin)")
    p.add_argument("--threshold", type=float, help="resolution threshold")
    add_config(p)

    p = sub.add_parser("target", help="write the concentric-ring test potential")
    p.add_argument("--A", type=float, dest="A", help="amplitude")
    p.add_argument("--d", type=float, dest="d", help="ring-spacing fraction")
    p.add_argument("--grid", type=int, help="grid points per axis")
    p.add_argument("--out", required=True, help="output field file (image or .bin)")
    add_config(p)

    return parser


def _resolve_options(args: argparse.Namespace) -> dict:
    """Merge CLI flags over config-file values over built-in defaults."""
    defaults = DEFAULTS[args.command]
    config: dict = {}
    if getattr(args, "config", None):
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read config file {args.config}: {err}") from err
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(config) - set(defaults)
        if unknown:
            raise UsageError(
                f"config keys {sorted(unknown)} not recognized for '{args.command}'"
            )

    options = {}
    for key, fallback in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            options[key] = flag
        elif key in config:
            value = config[key]
            if isinstance(fallback, int) and not isinstance(fallback, bool):
                value = int(value)
            elif isinstance(fallback, float):
                value = float(value)
            options[key] = value
        else:
            options[key] = fallback
    return options


def _load_any_field(path: str) -> ScalarField:
    if Path(path).suffix.lower() == ".bin":
        return load_field(path)
    return load_potential_image(path)


def _save_any_field(field: ScalarField, path: str, scale_mode: str) -> None:
    if Path(path).suffix.lower() == ".bin":
        save_field(field, path)
    else:
        save_field_image(field, path, scale_mode=scale_mode)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_simulate(args: argparse.Namespace) -> int:
    opt = _resolve_options(args)
    started = time.perf_counter()
    potential = _load_any_field(opt["potential"]) if opt["potential"] else None
    cfg = SdeConfig(
        sigma_mc=opt["sigma"],
        tau=opt["tau"],
        n_particles=opt["particles"],
        n_frames=opt["frames"],
        substeps_per_frame=opt["substeps"],
        seed=opt["seed"],
        domain=potential.grid.domain if potential is not None else _DEFAULT_DOMAIN,
    )
    traj = simulate(cfg, potential)
    save_frames(traj, args.out)
    write_manifest(
        Path(args.out).with_suffix(".manifest.json"),
        {
            "command": "simulate",
            "options": opt,
            "outputs": {"frames": str(args.out)},
            "wall_seconds": round(time.perf_counter() - started, 3),
        },
    )
    print(f"wrote {traj.n_frames} frames x {traj.n_particles} particles to {args.out}")
    return 0


def _cmd_bin(args: argparse.Namespace) -> int:
    opt = _resolve_options(args)
    started = time.perf_counter()
    traj = load_frames(args.frames)
    grid = Grid2D(traj.domain, opt["bins"], opt["bins"])
    fs = bin_sequence(traj, grid)
    save_density(fs, args.out)
    write_manifest(
        Path(args.out).with_suffix(".manifest.json"),
        {
            "command": "bin",
            "options": opt,
            "inputs": {"frames": str(args.frames)},
            "outputs": {"density": str(args.out)},
            "wall_seconds": round(time.perf_counter() - started, 3),
        },
    )
    print(f"binned {fs.n_frames} frames onto a {grid.nx}x{grid.ny} grid -> {args.out}")
    return 0


def _cmd_reconstruct(args: argparse.Namespace) -> int:
    opt = _resolve_options(args)
    started = time.perf_counter()
    fd = load_density(args.density)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    grid = Grid2D(fd.grid.domain, opt["grid"], opt["grid"])
    fp_cfg = FpConfig(sigma_fp=opt["sigma_fp"], grid=grid, dt=fd.dt, n_steps=1)
    inv_cfg = InverseConfig(
        alpha=opt["alpha"], xi=opt["xi"], tol=opt["tol"], n_max=opt["max_iter"]
    )
    plan = WindowPlan.uniform(opt["windows"], fd.n_frames)
    result = run_windows(fd, plan, inv_cfg, fp_cfg)

    window_files = []
    for k, (raw, scaled) in enumerate(zip(result.window_potentials, result.scaled_potentials)):
        stem = out_dir / f"window_{k:02d}"
        save_field(raw, f"{stem}.bin")
        save_field_image(scaled, f"{stem}.pgm", scale_mode="unit")
        window_files.append(str(stem) + ".bin")
    save_field(result.mean, out_dir / "mean.bin")
    save_field_image(result.mean, out_dir / "mean.pgm", scale_mode="unit")
    save_field(result.sd, out_dir / "sd.bin")

    log_files = []
    for k, report in enumerate(result.reports):
        log_path = out_dir / f"iterations_window_{k:02d}.tsv"
        lines = ["iteration\tobjective\tgrad_norm\tstep\tbacktracks"]
        for rec in report.iterates:
            lines.append(
                f"{rec.iteration}\t{rec.objective:.10e}\t{rec.grad_norm:.10e}"
                f"\t{rec.step:.6e}\t{rec.backtracks}"
            )
        log_path.write_text("\n".join(lines) + "\n")
        log_files.append(str(log_path))

    correlation = None
    if opt["reference"]:
        reference = _load_any_field(opt["reference"])
        per_window = [
            scaled_cross_correlation(field, reference) for field in result.window_potentials
        ]
        correlation = {
            "per_window": [round(c, 6) for c in per_window],
            "mean_potential": round(scaled_cross_correlation(result.mean, reference), 6),
        }

    write_manifest(
        out_dir / "manifest.json",
        {
            "command": "reconstruct",
            "options": opt,
            "inputs": {"density": str(args.density)},
            "outputs": {
                "mean": str(out_dir / "mean.bin"),
                "sd": str(out_dir / "sd.bin"),
                "windows": window_files,
                "iteration_logs": log_files,
            },
            "window_boundaries": list(result.plan.boundaries),
            "converged": [r.converged for r in result.reports],
            "iterations": [r.n_iter for r in result.reports],
            "degenerate_windows": list(result.degenerate_windows),
            "failed_window": result.failed_window,
            "cross_correlation": correlation,
            "wall_seconds": round(time.perf_counter() - started, 3),
        },
    )
    print(f"reconstructed {plan.n_windows} windows -> {out_dir}")
    if not result.complete:
        print(f"line search failed in window {result.failed_window}; partial result", file=sys.stderr)
        return 1
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    opt = _resolve_options(args)
    recon = _load_any_field(args.reconstruction)
    reference = _load_any_field(args.reference)
    cc = scaled_cross_correlation(recon, reference)
    resolved = resolution_verdict(cc, threshold=opt["threshold"])
    write_manifest(
        Path(args.reconstruction).with_suffix(".eval.json"),
        {
            "command": "evaluate",
            "options": opt,
            "inputs": {"reconstruction": str(args.reconstruction), "reference": str(args.reference)},
            "cross_correlation": round(cc, 6),
            "resolved": resolved,
        },
    )
    print(f"cc = {cc:.4f}")
    print("resolved" if resolved else "not resolved")
    return 0


def _cmd_target(args: argparse.Namespace) -> int:
    opt = _resolve_options(args)
    grid = Grid2D(_DEFAULT_DOMAIN, opt["grid"], opt["grid"])
    spec = TargetSpec(A=opt["A"], d=opt["d"], l=_DEFAULT_DOMAIN.width)
    field = make_target(spec, grid)
    _save_any_field(field, args.out, scale_mode="minmax")
    write_manifest(
        Path(args.out).with_suffix(".manifest.json"),
        {"command": "target", "options": opt, "outputs": {"field": str(args.out)}},
    )
    print(f"wrote target potential ({grid.nx}x{grid.ny}) to {args.out}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "bin": _cmd_bin,
    "reconstruct": _cmd_reconstruct,
    "evaluate": _cmd_evaluate,
    "target": _cmd_target,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except LineSearchError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
