"""
Command-line front door: build tables, run single solves, run benchmark suites and inspect tables.

Exit codes: 0 success, 1 usage/config/format error, 2 numerical failure.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np

# Add parent directory to path to import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(__file__))))

import config
from src.api import easy_api
from src.fem.assembly import StabilizationMethod
from src.services.calibration_service import functional_surface, write_surface, write_trace, calibrate_peclet
from src.services.table_service import TableBuildSpec
from src.utils.errors import CalibrationError, SolverError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


def _floats(text: str) -> List[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stabfem", description="Stabilized advection-diffusion solver")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    build = commands.add_parser("build-table", help="calibrate phi on a Peclet grid and write a table file")
    build.add_argument("--dim", type=int, default=2, choices=(1, 2))
    build.add_argument("--degree", type=int, default=1, choices=(1, 2, 3))
    build.add_argument("--pmax", type=float, default=config.TABLE_PMAX)
    build.add_argument("--nodes", type=int, default=config.TABLE_NODES, help="intervals per axis")
    build.add_argument("--refine", type=_floats, default=list(config.TABLE_REFINE_NODES),
                       help="extra low-Peclet nodes, comma separated")
    build.add_argument("--kind", default="tbt")
    build.add_argument("--cells", type=int, help="training mesh cells per direction")
    build.add_argument("--fine-factor", type=int)
    build.add_argument("--out", required=True)
    build.add_argument("--log", help="per-node build log CSV (default: <out>.log.csv)")
    build.add_argument("--jobs", type=int, default=1)
    build.add_argument("--skip-failed", action="store_true")
    build.add_argument("--db", help="ledger database URL recording every node")

    solve = commands.add_parser("solve", help="solve one catalog problem")
    solve.add_argument("--config", required=True)
    solve.add_argument("--formula")
    solve.add_argument("--table")

    bench = commands.add_parser("bench", help="run a benchmark suite")
    bench.add_argument("--suite", required=True, choices=("test1", "test2", "unstructured", "convergence"))
    bench.add_argument("--scale", default="desk", choices=("desk", "full"))
    bench.add_argument("--degree", type=int, default=1, choices=(1, 2, 3))
    bench.add_argument("--formulas", type=lambda text: [part for part in text.split(",") if part])
    bench.add_argument("--table")
    bench.add_argument("--method", default="tbt")
    bench.add_argument("--mesh")
    bench.add_argument("--velocity")
    bench.add_argument("--viscosities", type=_floats)
    bench.add_argument("--jobs", type=int, default=1)
    bench.add_argument("--out")
    bench.add_argument("--record", action="store_true", help="store rows in the ledger")

    inspect = commands.add_parser("inspect-table", help="print axes, metadata and phi along each axis")
    inspect.add_argument("table")

    calibrate = commands.add_parser("calibrate", help="calibrate phi at one Peclet vector")
    calibrate.add_argument("--peclet", type=_floats, required=True, help="comma separated components")
    calibrate.add_argument("--degree", type=int, default=1, choices=(1, 2, 3))
    calibrate.add_argument("--kind", default="tbt")
    calibrate.add_argument("--trace", help="iterate trace CSV")

    surface = commands.add_parser("surface", help="J(tau) on a grid of tau values and velocity angles")
    surface.add_argument("--angles", type=_floats, required=True, help="radians, comma separated")
    surface.add_argument("--taus", type=_floats, help="explicit tau values")
    surface.add_argument("--tau-range", type=_floats, help="lo,hi,count (log spaced)")
    surface.add_argument("--mu", type=float, default=1.0)
    surface.add_argument("--magnitude", type=float, default=1.0)
    surface.add_argument("--cells", type=int, default=20)
    surface.add_argument("--degree", type=int, default=1, choices=(1, 2, 3))
    surface.add_argument("--out", required=True)
    return parser


def cmd_build_table(args) -> int:
    spec = TableBuildSpec(dimension=args.dim, degree=args.degree, kind=args.kind, pmax=args.pmax, nodes=args.nodes,
                          refinement=tuple(args.refine), jobs=args.jobs, skip_failed=args.skip_failed,
                          cells=args.cells, fine_factor=args.fine_factor)
    log_path = args.log or f"{args.out}.log.csv"
    table = easy_api.build_phi_table(spec, args.out, log_path=log_path, db_url=args.db)
    print(f"Wrote {args.out}: {table.dimension}D P{table.degree} {table.kind}, nodes {table.shape}")
    if "monotonicity" in table.metadata:
        print(f"  {table.metadata['monotonicity']}")
    return EXIT_OK


def cmd_solve(args) -> int:
    outcome = easy_api.solve_from_config(args.config, formula=args.formula, table_path=args.table)
    low, high = outcome['peclet']
    print(f"Solved with {outcome['formula']}: {outcome['solution'].space.num_dofs} dofs, Pe in [{low:.4g}, {high:.4g}]")
    report = outcome['errors']
    if report is not None:
        print(f"  L2 error {report.l2:.6e}  Linf error {report.linf:.6e}")
    return EXIT_OK


def cmd_bench(args) -> int:
    result = easy_api.run_benchmark(args.suite, scale=args.scale, degree=args.degree, formulas=args.formulas,
                                    table_path=args.table, jobs=args.jobs, method=args.method,
                                    mesh_path=args.mesh, velocity_path=args.velocity,
                                    viscosities=args.viscosities, out=args.out, record=args.record)
    if args.suite == "convergence":
        for degree, mode, cells, h, error in result.rows():
            print(f"  n={cells:4d}  h={h:.4e}  L2 {error:.6e}")
        print(f"P{result.degree} {result.mode} slope {result.slope:.3f}")
        return EXIT_OK
    for line in result.summary():
        print(line)
    (raw_lo, raw_hi), (scaled_lo, scaled_hi) = result.pe_range()
    print(f"Pe (h_K) in [{raw_lo:.4g}, {raw_hi:.4g}], Pe (h_K/l) in [{scaled_lo:.4g}, {scaled_hi:.4g}]")
    return EXIT_OK


def cmd_inspect_table(args) -> int:
    for line in easy_api.describe_table(easy_api.load_phi_table(args.table)):
        print(line)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    result = calibrate_peclet(args.peclet, args.degree, StabilizationMethod.from_name(args.kind))
    if args.trace:
        write_trace(args.trace, result)
    status = "converged" if result.converged else "not converged"
    flag = ", bracket end" if result.boundary_hit else ""
    print(f"P={args.peclet}: tau {result.tau_opt:.8e}  phi {result.phi:.8e}  J {result.J_min:.6e}  "
          f"({result.iterations} iterations, {status}{flag})")
    return EXIT_OK


def cmd_surface(args) -> int:
    if args.taus:
        taus = args.taus
    elif args.tau_range and len(args.tau_range) == 3:
        low, high, count = args.tau_range
        taus = np.geomspace(low, high, int(count)).tolist()
    else:
        raise ValueError("Give either --taus or --tau-range lo,hi,count")
    rows = functional_surface(args.angles, taus, mu=args.mu, magnitude=args.magnitude, cells=args.cells,
                              degree=args.degree)
    write_surface(args.out, rows)
    print(f"Wrote {len(rows)} samples to {args.out}")
    return EXIT_OK


COMMANDS = {
    "build-table": cmd_build_table,
    "solve": cmd_solve,
    "bench": cmd_bench,
    "inspect-table": cmd_inspect_table,
    "calibrate": cmd_calibrate,
    "surface": cmd_surface,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SolverError, CalibrationError) as e:
        print(f"Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
