"""Command-line interface and end-to-end pipeline.

Subcommands cover each stage (basis, detect, match, refine, eval, export)
plus ``run``, which chains them from a flat ``key = value`` config file.
Every config key can be overridden by the flag of the same name.  Exit
codes: 0 success, 1 computational failure, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .evaluate import (correspondence_error, error_curve, export_colored_ply,
                       save_error_curve)
from .matcher import match, write_match_report
from .mesh import (MeshParseError, MeshValidationError, load_mesh,
                   shape_diameter)
from .pursuit import SolverOptions, default_weights
from .refine import load_point_map, refine_icp, save_point_map
from .regions import (DetectorParams, detect_stable_regions, load_regions,
                      region_coefficients, save_regions)
from .spectral import (DEFAULT_BASIS_SIZE, cotangent_laplacian, eigenbasis,
                       load_basis, save_basis)

__all__ = ["PipelineConfig", "PipelineError", "load_config", "run_pipeline", "main"]

_FMAP_FMT = "%.17g"


class PipelineError(Exception):
    """A stage failure carrying the stage name and the process exit code."""

    def __init__(self, stage, message, exit_code=1):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
        self.exit_code = exit_code


@dataclass
class PipelineConfig:
    """Flat pipeline configuration; field names double as config keys."""

    mesh_x: str = ""
    mesh_y: str = ""
    out_dir: str = "out"
    basis_size: int = DEFAULT_BASIS_SIZE
    basis_cache_x: str = ""
    basis_cache_y: str = ""
    region_source: str = "detect"  # "detect" or "files"
    regions_x: str = ""
    regions_y: str = ""
    num_functions: int = 8
    levels: int = 64
    stability_tol: float = 0.05
    stability_window: int = 5
    min_area_frac: float = 0.05
    dedup_overlap: float = 0.8
    lam: float | None = None
    mu: float | None = None
    tol: float = 1e-8
    max_iter: int = 2000
    accel: bool = True
    weight_p: float = 1.0
    prune_ratio: float = 3.0
    max_outer: int = 10
    outer_tol: float = 1e-6
    refine_iters: int = 30
    truth: str = ""
    diameter_samples: int = 32
    threshold_max: float = 0.25
    threshold_step: float = 0.01


# config keys appearing under a different flag spelling
_KEY_ALIASES = {"lambda": "lam"}


def _parse_value(key, raw, kind):
    raw = raw.strip()
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def load_config(path):
    """Parse a flat ``key = value`` config file into a PipelineConfig."""
    known = {f.name: f for f in fields(PipelineConfig)}
    config = PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PipelineError("config", str(exc), exit_code=2) from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PipelineError(
                "config", f"{path}:{lineno}: expected 'key = value'", exit_code=2)
        key, _, value = line.partition("=")
        key = key.strip()
        key = _KEY_ALIASES.get(key, key)
        if key not in known:
            raise PipelineError(
                "config", f"{path}:{lineno}: unknown key {key!r}", exit_code=2)
        field = known[key]
        kind = {"int": int, "float": float, "bool": bool, "str": str,
                "float | None": float}.get(field.type if isinstance(field.type, str)
                                           else field.type.__name__, str)
        try:
            setattr(config, key, _parse_value(key, value, kind))
        except ValueError as exc:
            raise PipelineError("config", f"{path}:{lineno}: {exc}", exit_code=2) from exc
    return config


def _detector_params(config):
    return DetectorParams(num_functions=config.num_functions,
                          levels=config.levels,
                          stability_tol=config.stability_tol,
                          stability_window=config.stability_window,
                          min_area_frac=config.min_area_frac,
                          dedup_overlap=config.dedup_overlap)


def _solver_options(config):
    return SolverOptions(lam=config.lam, mu=config.mu, tol=config.tol,
                         max_iter=config.max_iter, accelerated=config.accel)


def save_functional_map(functional_map, path):
    np.savetxt(path, np.asarray(functional_map), fmt=_FMAP_FMT)


def load_functional_map(path):
    mat = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{path}: functional map must be square, got {mat.shape}")
    return mat


def _guard(stage):
    """Translate stage exceptions into PipelineError with an exit code."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is None or isinstance(exc, PipelineError):
                return False
            if isinstance(exc, (FileNotFoundError, IsADirectoryError,
                                PermissionError, MeshParseError,
                                MeshValidationError)):
                raise PipelineError(stage, str(exc), exit_code=2) from exc
            if isinstance(exc, (ValueError, RuntimeError, FloatingPointError,
                                ArithmeticError)):
                raise PipelineError(stage, str(exc), exit_code=1) from exc
            return False

    return _Ctx()


def _mesh_basis(mesh, cache_path, size):
    """Basis from cache when available, else computed (and cached if asked)."""
    if cache_path and Path(cache_path).exists():
        basis = load_basis(cache_path)
        if basis.num_vertices != mesh.num_vertices:
            raise ValueError(
                f"{cache_path}: cache has {basis.num_vertices} vertices, "
                f"mesh has {mesh.num_vertices}")
        if basis.size < size:
            raise ValueError(
                f"{cache_path}: cache holds {basis.size} functions, need {size}")
        if basis.size > size:
            basis = type(basis)(functions=basis.functions[:, :size],
                                eigenvalues=basis.eigenvalues[:size],
                                masses=basis.masses)
        return basis
    stiffness, masses = cotangent_laplacian(mesh)
    basis = eigenbasis(stiffness, masses, size)
    if cache_path:
        save_basis(basis, cache_path)
    return basis


def run_pipeline(config, until="end"):
    """Execute load, basis, regions, match, refine, evaluate, export.

    ``until="match"`` stops after the matching stage (the ``match``
    subcommand); the default runs everything.  Returns a dict with
    artifact paths, the timing breakdown, and summary numbers.  All report
    artifacts are deterministic functions of the config; timings live in
    their own file so reports stay byte-stable.
    """
    if until not in ("match", "end"):
        raise ValueError(f"unknown pipeline stop point {until!r}")
    t_total = time.perf_counter()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with _guard("load"):
        if not config.mesh_x or not config.mesh_y:
            raise PipelineError("load", "mesh_x and mesh_y are required", exit_code=2)
        for path in (config.mesh_x, config.mesh_y):
            if not Path(path).exists():
                raise FileNotFoundError(f"mesh file not found: {path}")
        mesh_x = load_mesh(config.mesh_x)
        mesh_y = load_mesh(config.mesh_y)

    t0 = time.perf_counter()
    with _guard("basis"):
        basis_x = _mesh_basis(mesh_x, config.basis_cache_x, config.basis_size)
        basis_y = _mesh_basis(mesh_y, config.basis_cache_y, config.basis_size)
    t_basis = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _guard("regions"):
        if config.region_source == "files":
            if not config.regions_x or not config.regions_y:
                raise PipelineError(
                    "regions", "region_source=files needs regions_x and regions_y",
                    exit_code=2)
            regions_x = load_regions(config.regions_x, mesh_x)
            regions_y = load_regions(config.regions_y, mesh_y)
        elif config.region_source == "detect":
            params = _detector_params(config)
            regions_x = detect_stable_regions(mesh_x, basis_x, params)
            regions_y = detect_stable_regions(mesh_y, basis_y, params)
        else:
            raise PipelineError(
                "regions", f"unknown region_source {config.region_source!r}",
                exit_code=2)
        save_regions(regions_x, out_dir / "regions_x.txt")
        save_regions(regions_y, out_dir / "regions_y.txt")
    t_regions = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _guard("match"):
        coeffs_x = region_coefficients(regions_x, basis_x)
        coeffs_y = region_coefficients(regions_y, basis_y)
        weights = default_weights(config.basis_size, config.weight_p)
        result = match(coeffs_x, coeffs_y, regions_x, regions_y,
                       weights=weights, options=_solver_options(config),
                       prune_ratio=config.prune_ratio,
                       max_outer=config.max_outer, outer_tol=config.outer_tol)
        write_match_report(result, out_dir / "match_report.txt")
        save_functional_map(result.functional_map, out_dir / "functional_map.txt")
    t_match = time.perf_counter() - t0

    t_refine = 0.0
    mean_error = None
    if until == "end":
        t0 = time.perf_counter()
        with _guard("refine"):
            refined = refine_icp(basis_x, basis_y, result.functional_map,
                                 max_iters=config.refine_iters)
            save_point_map(refined.point_map, out_dir / "point_map.txt")
            save_functional_map(refined.functional_map,
                                out_dir / "functional_map_refined.txt")
        t_refine = time.perf_counter() - t0

        with _guard("evaluate"):
            if config.truth:
                truth = load_point_map(config.truth,
                                       num_targets=mesh_y.num_vertices)
                diameter = shape_diameter(mesh_y, config.diameter_samples)
                errors = correspondence_error(refined.point_map, truth,
                                              mesh_y, diameter)
                thresholds = np.arange(0.0, config.threshold_max + 1e-9,
                                       config.threshold_step)
                curve = error_curve(errors, thresholds)
                save_error_curve(curve, out_dir / "error_curve.txt")
                mean_error = float(errors.mean())
                (out_dir / "eval_summary.txt").write_text(
                    f"mean_error = {mean_error:.12f}\n"
                    f"median_error = {float(np.median(errors)):.12f}\n")

        with _guard("export"):
            export_colored_ply(mesh_x, mesh_y, refined.point_map,
                               out_dir / "x_colored.ply", out_dir / "y_colored.ply")

    timings = {
        "Basis": t_basis,
        "Regions": t_regions,
        "Opt.": t_match,
        "Ref.": t_refine,
        "Tot.": time.perf_counter() - t_total,
    }
    with open(out_dir / "timings.txt", "w") as fh:
        for name, seconds in timings.items():
            fh.write(f"{name:<8s} {seconds:8.2f}\n")

    return {
        "out_dir": out_dir,
        "timings": timings,
        "outer_iterations": result.outer_iterations,
        "mean_error": mean_error,
    }


# -- subcommands -------------------------------------------------------------


def _cmd_basis(args):
    mesh = load_mesh(args.mesh)
    stiffness, masses = cotangent_laplacian(mesh)
    basis = eigenbasis(stiffness, masses, args.basis_size)
    save_basis(basis, args.output)
    print(f"wrote {args.output} ({basis.num_vertices} vertices, "
          f"{basis.size} functions)")
    return 0


def _cmd_detect(args):
    mesh = load_mesh(args.mesh)
    basis = _mesh_basis(mesh, args.basis_cache, args.basis_size)
    params = DetectorParams(num_functions=args.num_functions,
                            levels=args.levels,
                            stability_tol=args.stability_tol,
                            stability_window=args.stability_window,
                            min_area_frac=args.min_area_frac,
                            dedup_overlap=args.dedup_overlap)
    regions = detect_stable_regions(mesh, basis, params)
    save_regions(regions, args.output)
    print(f"wrote {args.output} ({len(regions)} regions)")
    return 0


def _config_from_args(args):
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = PipelineConfig()
    for f in fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(config, f.name, value)
    return config


def _cmd_match(args):
    config = _config_from_args(args)
    if args.regions_x or args.regions_y:
        config.region_source = "files"
    result = run_pipeline(config, until="match")
    _print_result(result)
    return 0


def _cmd_run(args):
    config = _config_from_args(args)
    result = run_pipeline(config)
    _print_result(result)
    return 0


def _print_result(result):
    print(f"artifacts in {result['out_dir']}")
    for name, seconds in result["timings"].items():
        print(f"{name:<8s} {seconds:8.2f}")
    if result["mean_error"] is not None:
        print(f"mean normalized error: {result['mean_error']:.6f}")


def _cmd_refine(args):
    basis_x = load_basis(args.basis_x)
    basis_y = load_basis(args.basis_y)
    initial = load_functional_map(args.fmap)
    refined = refine_icp(basis_x, basis_y, initial, max_iters=args.refine_iters)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_point_map(refined.point_map, out_dir / "point_map.txt")
    save_functional_map(refined.functional_map,
                        out_dir / "functional_map_refined.txt")
    print(f"wrote {out_dir / 'point_map.txt'} ({refined.iterations} iterations)")
    return 0


def _cmd_eval(args):
    mesh_y = load_mesh(args.mesh_y)
    predicted = load_point_map(args.map, num_targets=mesh_y.num_vertices)
    truth = load_point_map(args.truth, num_targets=mesh_y.num_vertices)
    diameter = shape_diameter(mesh_y, args.diameter_samples)
    errors = correspondence_error(predicted, truth, mesh_y, diameter)
    thresholds = np.arange(0.0, args.threshold_max + 1e-9, args.threshold_step)
    curve = error_curve(errors, thresholds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_error_curve(curve, out_dir / "error_curve.txt")
    print(f"mean_error = {errors.mean():.12f}")
    print(f"median_error = {np.median(errors):.12f}")
    print(f"wrote {out_dir / 'error_curve.txt'}")
    return 0


def _cmd_export(args):
    mesh_x = load_mesh(args.mesh_x)
    mesh_y = load_mesh(args.mesh_y)
    predicted = load_point_map(args.map, num_targets=mesh_y.num_vertices)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_colored_ply(mesh_x, mesh_y, predicted,
                       out_dir / "x_colored.ply", out_dir / "y_colored.ply")
    print(f"wrote {out_dir / 'x_colored.ply'} and {out_dir / 'y_colored.ply'}")
    return 0


def _add_pipeline_flags(sub):
    """One flag per config key, default None so only set flags override."""
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--mesh-x", dest="mesh_x")
    sub.add_argument("--mesh-y", dest="mesh_y")
    sub.add_argument("--out-dir", dest="out_dir")
    sub.add_argument("--basis-size", dest="basis_size", type=int)
    sub.add_argument("--basis-cache-x", dest="basis_cache_x")
    sub.add_argument("--basis-cache-y", dest="basis_cache_y")
    sub.add_argument("--region-source", dest="region_source",
                     choices=("detect", "files"))
    sub.add_argument("--regions-x", dest="regions_x")
    sub.add_argument("--regions-y", dest="regions_y")
    sub.add_argument("--num-functions", dest="num_functions", type=int)
    sub.add_argument("--levels", dest="levels", type=int)
    sub.add_argument("--stability-tol", dest="stability_tol", type=float)
    sub.add_argument("--stability-window", dest="stability_window", type=int)
    sub.add_argument("--min-area-frac", dest="min_area_frac", type=float)
    sub.add_argument("--dedup-overlap", dest="dedup_overlap", type=float)
    sub.add_argument("--lambda", dest="lam", type=float)
    sub.add_argument("--mu", dest="mu", type=float)
    sub.add_argument("--tol", dest="tol", type=float)
    sub.add_argument("--max-iter", dest="max_iter", type=int)
    sub.add_argument("--no-accel", dest="accel", action="store_false",
                     default=None)
    sub.add_argument("--weight-p", dest="weight_p", type=float)
    sub.add_argument("--prune-ratio", dest="prune_ratio", type=float)
    sub.add_argument("--max-outer", dest="max_outer", type=int)
    sub.add_argument("--outer-tol", dest="outer_tol", type=float)
    sub.add_argument("--refine-iters", dest="refine_iters", type=int)
    sub.add_argument("--truth", dest="truth")
    sub.add_argument("--diameter-samples", dest="diameter_samples", type=int)
    sub.add_argument("--threshold-max", dest="threshold_max", type=float)
    sub.add_argument("--threshold-step", dest="threshold_step", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shapecorr",
        description="Dense correspondence between near-isometric triangle meshes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basis", help="compute and cache an eigenbasis")
    p.add_argument("mesh")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--basis-size", dest="basis_size", type=int,
                   default=DEFAULT_BASIS_SIZE)

    p = sub.add_parser("detect", help="detect stable regions")
    p.add_argument("mesh")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--basis-cache", dest="basis_cache", default="")
    p.add_argument("--basis-size", dest="basis_size", type=int,
                   default=DEFAULT_BASIS_SIZE)
    p.add_argument("--num-functions", dest="num_functions", type=int, default=8)
    p.add_argument("--levels", dest="levels", type=int, default=64)
    p.add_argument("--stability-tol", dest="stability_tol", type=float, default=0.05)
    p.add_argument("--stability-window", dest="stability_window", type=int, default=5)
    p.add_argument("--min-area-frac", dest="min_area_frac", type=float, default=0.05)
    p.add_argument("--dedup-overlap", dest="dedup_overlap", type=float, default=0.8)

    p = sub.add_parser("match", help="run the pipeline through matching and refinement")
    _add_pipeline_flags(p)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    _add_pipeline_flags(p)

    p = sub.add_parser("refine", help="refine a functional map to a point map")
    p.add_argument("--basis-x", dest="basis_x", required=True)
    p.add_argument("--basis-y", dest="basis_y", required=True)
    p.add_argument("--fmap", required=True)
    p.add_argument("-o", "--out-dir", dest="out_dir", default="out")
    p.add_argument("--refine-iters", dest="refine_iters", type=int, default=30)

    p = sub.add_parser("eval", help="score a point map against ground truth")
    p.add_argument("--map", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mesh-y", dest="mesh_y", required=True)
    p.add_argument("-o", "--out-dir", dest="out_dir", default="out")
    p.add_argument("--diameter-samples", dest="diameter_samples", type=int, default=32)
    p.add_argument("--threshold-max", dest="threshold_max", type=float, default=0.25)
    p.add_argument("--threshold-step", dest="threshold_step", type=float, default=0.01)

    p = sub.add_parser("export", help="write color-matched PLY pairs")
    p.add_argument("--mesh-x", dest="mesh_x", required=True)
    p.add_argument("--mesh-y", dest="mesh_y", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("-o", "--out-dir", dest="out_dir", default="out")

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "basis": lambda: _cmd_basis(args),
        "detect": lambda: _cmd_detect(args),
        "match": lambda: _cmd_match(args),
        "run": lambda: _cmd_run(args),
        "refine": lambda: _cmd_refine(args),
        "eval": lambda: _cmd_eval(args),
        "export": lambda: _cmd_export(args),
    }
    try:
        return handlers[args.command]()
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (MeshParseError, MeshValidationError, FileNotFoundError,
            IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
