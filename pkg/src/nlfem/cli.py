"""Batch driver: single solves and refinement studies from a JSON config.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures.  Re-running a config with the same seed reproduces all CSV
outputs byte for byte (timing columns are written as zero unless
``record_timings`` is set, since wall-clock times are not reproducible).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .assembly import (FESpace, assemble_system, dump_matrix_market,
                       dump_solution_csv, reconstruct, solve_system)
from .convergence import (ConvergenceReport, ErrorRecord, h1_error, l2_error)
from .exceptions import ConfigError, MeshError, NlfemError
from .geometry import (BallNorm, BoxDomain, PerturbationSpec,
                       build_uniform_mesh, perturb_mesh)
from .kernels import Kernel, KernelKind
from .problems import get_case
from .quadrature import InnerGridSpec, full_ball_rule
from .svgplot import write_convergence_svg

_KEYS = {
    "dimension", "kernel", "scaling", "case", "m", "h", "h0", "levels",
    "extension", "outer_points", "load_points", "points_per_radius",
    "mesh", "epsilon", "seed", "error_points", "ball_norm", "record_timings",
}
_DEFAULT_LEVELS = 4


@dataclass
class RunConfig:
    dimension: int
    kernel_kind: KernelKind
    scaling: float | None
    case: str
    m: int
    h_values: list[float]
    extension_mode: str  # "zero" | "delta"
    outer_points: int
    load_points: int
    points_per_radius: int
    mesh_mode: str  # "uniform" | "perturbed"
    epsilon: float
    seed: int
    error_points: int | None
    ball_norm: BallNorm
    record_timings: bool

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - _KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def require(key):
            if key not in raw:
                raise ConfigError(f"missing required config key {key!r}")
            return raw[key]

        dimension = require("dimension")
        if dimension not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {dimension!r}")
        try:
            kind = KernelKind(require("kernel"))
        except ValueError:
            raise ConfigError(f"kernel must be 'constant' or 'rational', got {raw['kernel']!r}") from None
        case = require("case")
        m = require("m")
        if not isinstance(m, int) or isinstance(m, bool) or m < 1:
            raise ConfigError(f"m must be a positive integer (horizon = m * h), got {m!r}")

        if "h" in raw and ("h0" in raw or "levels" in raw):
            raise ConfigError("give either 'h' or 'h0'/'levels', not both")
        if "h" in raw:
            hs = raw["h"]
            if not isinstance(hs, list) or not hs:
                raise ConfigError("'h' must be a non-empty list of element sizes")
            hs = [float(v) for v in hs]
            if any(v <= 0 for v in hs):
                raise ConfigError("element sizes must be positive")
            if any(a <= b for a, b in zip(hs, hs[1:])):
                raise ConfigError("'h' must be sorted in strictly descending order")
        elif "h0" in raw:
            h0 = float(raw["h0"])
            if h0 <= 0:
                raise ConfigError("'h0' must be positive")
            levels = raw.get("levels", _DEFAULT_LEVELS)
            if not isinstance(levels, int) or isinstance(levels, bool) or levels < 1:
                raise ConfigError(f"'levels' must be a positive integer, got {levels!r}")
            hs = [h0 / 2**k for k in range(levels)]
        else:
            raise ConfigError("config needs 'h' (list) or 'h0' (+ optional 'levels')")

        ext = raw.get("extension", "delta")
        if ext not in ("zero", "delta"):
            raise ConfigError(f"extension must be 'zero' or 'delta', got {ext!r}")
        n_q = raw.get("outer_points", 40 if dimension == 1 else 16)
        n_b = raw.get("load_points", n_q)
        n_bar = raw.get("points_per_radius", 10 if dimension == 1 else 4)
        for name, val in (("outer_points", n_q), ("load_points", n_b),
                          ("points_per_radius", n_bar)):
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ConfigError(f"{name!r} must be a positive integer, got {val!r}")

        mesh_mode = raw.get("mesh", "uniform")
        if mesh_mode not in ("uniform", "perturbed"):
            raise ConfigError(f"mesh must be 'uniform' or 'perturbed', got {mesh_mode!r}")
        epsilon = float(raw.get("epsilon", 0.1))
        if mesh_mode == "perturbed" and not 0.0 <= epsilon < 0.5:
            raise ConfigError(f"epsilon must lie in [0, 0.5), got {epsilon}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError(f"seed must be an integer, got {seed!r}")

        error_points = raw.get("error_points")
        if error_points is not None and (not isinstance(error_points, int)
                                         or isinstance(error_points, bool)
                                         or error_points < 1):
            raise ConfigError(f"error_points must be a positive integer, got {error_points!r}")
        try:
            ball_norm = BallNorm(raw.get("ball_norm", "euclidean"))
        except ValueError:
            raise ConfigError(f"ball_norm must be 'euclidean' or 'max', got {raw['ball_norm']!r}") from None
        scaling = raw.get("scaling")
        if scaling is not None:
            scaling = float(scaling)
            if scaling <= 0:
                raise ConfigError("scaling must be positive")
        record_timings = raw.get("record_timings", False)
        if not isinstance(record_timings, bool):
            raise ConfigError("record_timings must be a boolean")

        case_obj = get_case(case)  # also validates the name
        if case_obj.dim != dimension:
            raise ConfigError(
                f"case {case!r} is {case_obj.dim}D but dimension is {dimension}")
        return cls(dimension, kind, scaling, case, m, hs, ext, n_q, n_b,
                   n_bar, mesh_mode, epsilon, seed, error_points, ball_norm,
                   record_timings)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)


def _solution_name(h: float) -> str:
    return f"solution_h{h!r}.csv"


@dataclass
class SingleResult:
    record: ErrorRecord
    field: "object"  # assembly.Field
    system: "object"  # assembly.DiscreteSystem
    kernel: Kernel
    spec: InnerGridSpec


def _execute(config: RunConfig, h: float) -> SingleResult:
    """Mesh, assemble, solve, and measure errors for one element size."""
    delta = config.m * h
    extension = delta if config.extension_mode == "delta" else 0.0
    domain = BoxDomain.unit(config.dimension, delta, extension)
    mesh = build_uniform_mesh(h, domain)
    if config.mesh_mode == "perturbed":
        mesh = perturb_mesh(mesh, PerturbationSpec(config.epsilon, config.seed))
    case = get_case(config.case)
    kernel = Kernel.make(config.kernel_kind, config.dimension, delta,
                         config.scaling, config.ball_norm)
    spec = InnerGridSpec(config.points_per_radius, config.dimension)
    space = FESpace(mesh)

    t0 = time.perf_counter()
    system = assemble_system(space, kernel, spec, config.outer_points,
                             config.load_points, case.source, case.boundary)
    t1 = time.perf_counter()
    u = solve_system(system)
    t2 = time.perf_counter()

    field_ = reconstruct(space, u, case.boundary)
    record = ErrorRecord(
        h=h, delta=delta, m=config.m, dofs=mesh.num_interior,
        l2=l2_error(field_, case, mesh, config.error_points),
        h1=h1_error(field_, case, mesh, config.error_points),
        assembly_ms=1e3 * (t1 - t0), solve_ms=1e3 * (t2 - t1),
    )
    return SingleResult(record, field_, system, kernel, spec)


def _dump_result(result: SingleResult, out_dir: Path | None,
                 dump_matrix: Path | None, dump_inner_rule: Path | None) -> None:
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_solution_csv(result.field, out_dir / _solution_name(result.record.h))
    if dump_matrix is not None:
        dump_matrix_market(result.system, dump_matrix)
    if dump_inner_rule is not None:
        full_ball_rule(result.kernel, result.spec).dump_csv(dump_inner_rule)


def run_single(config: RunConfig, h: float, out_dir: Path | None = None,
               dump_matrix: Path | None = None,
               dump_inner_rule: Path | None = None) -> ErrorRecord:
    """One solve: build -> assemble -> solve -> errors (+ optional dumps)."""
    result = _execute(config, h)
    _dump_result(result, out_dir, dump_matrix, dump_inner_rule)
    return result.record


def _run_level(args) -> SingleResult:
    config, h = args
    return _execute(config, h)


def run_study(config: RunConfig, out_dir: Path, threads: int = 1,
              dump_matrix: Path | None = None,
              dump_inner_rule: Path | None = None) -> ConvergenceReport:
    """Run every level of the refinement ladder and write report + plot.

    Levels may run in parallel; all files are written afterwards, in level
    order, so outputs are identical regardless of the worker count.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    levels = config.h_values
    if threads > 1 and len(levels) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_level, [(config, h) for h in levels]))
    else:
        results = [_execute(config, h) for h in levels]

    report = ConvergenceReport.from_records([r.record for r in results])
    report.write_csv(out_dir / "report.csv", include_timings=config.record_timings)
    label = f"{config.kernel_kind.value}, {config.case}, m={config.m}, t_e={config.extension_mode}"
    series = [{
        "label": "L2, " + label,
        "h": [r.h for r in report.records],
        "error": [r.l2 for r in report.records],
        "slope": report.l2_fit.slope if report.l2_fit else None,
    }, {
        "label": "H1, " + label,
        "h": [r.h for r in report.records],
        "error": [r.h1 for r in report.records],
        "slope": report.h1_fit.slope if report.h1_fit else None,
    }]
    write_convergence_svg(out_dir / "convergence.svg", series,
                          title=f"{config.case} ({config.mesh_mode})")
    multi = len(levels) > 1
    for result in results:
        suffix = f"_h{result.record.h!r}" if multi else ""
        _dump_result(result, out_dir,
                     _with_suffix(dump_matrix, suffix),
                     _with_suffix(dump_inner_rule, suffix))
    return report


def _with_suffix(path: Path | None, suffix: str) -> Path | None:
    if path is None or not suffix:
        return path
    return path.with_name(path.stem + suffix + path.suffix)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlfem",
        description="Nonlocal Poisson finite element solver with ball-grid inner quadrature",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a single solve or a refinement study")
    run_p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    run_p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    run_p.add_argument("--dump-matrix", type=Path, default=None,
                       help="write the stiffness matrix in Matrix Market format")
    run_p.add_argument("--dump-inner-rule", type=Path, default=None,
                       help="write the full-ball inner quadrature rule as CSV")
    run_p.add_argument("--threads", type=int, default=1,
                       help="parallel workers for study levels")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return 2
    try:
        if len(config.h_values) == 1:
            record = run_single(config, config.h_values[0], out_dir=args.out,
                                dump_matrix=args.dump_matrix,
                                dump_inner_rule=args.dump_inner_rule)
            report = ConvergenceReport.from_records([record])
            report.write_csv(args.out / "report.csv",
                             include_timings=config.record_timings)
            print(f"h={record.h!r} dofs={record.dofs} l2={record.l2:.6e} h1={record.h1:.6e}")
        else:
            report = run_study(config, args.out, threads=args.threads,
                               dump_matrix=args.dump_matrix,
                               dump_inner_rule=args.dump_inner_rule)
            for r in report.records:
                print(f"h={r.h!r} dofs={r.dofs} l2={r.l2:.6e} h1={r.h1:.6e}")
            if report.l2_fit is not None:
                print(f"l2 slope {report.l2_fit.slope:.3f}, "
                      f"h1 slope {report.h1_fit.slope:.3f}")
    except (ConfigError, MeshError) as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return 2
    except NlfemError as exc:
        print(f"[numerical] {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
