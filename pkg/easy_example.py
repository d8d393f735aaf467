"""
Example script walking through the easy API: a single solve, a small calibration table,
a benchmark sweep using it, and the calibration ledger
"""

import os
import tempfile

from src.api.easy_api import (
    setup_database,
    ProblemData,
    solve_problem,
    build_phi_table,
    load_phi_table,
    describe_table,
    calibrate,
    get_calibration_history,
    run_benchmark,
)
from src.services.table_service import TableBuildSpec


def main():
    print("Setting up the ledger database...")
    setup_database()
    workdir = tempfile.mkdtemp(prefix="stabfem_")

    # 1. One stabilized solve with an analytic coefficient
    print("\n1. Solving the angle sweep problem with Codina's coefficient...")
    problem = ProblemData(name="test1", degree=1, cells=20, angle=2, magnitude=1600.0)
    print(f"  {problem}")
    outcome = solve_problem(problem, formula="codina", fine_factor=4)
    low, high = outcome['peclet']
    print(f"  Element Peclet numbers in [{low:.3g}, {high:.3g}]")
    print(f"  L2 error {outcome['errors'].l2:.4e}, Linf error {outcome['errors'].linf:.4e}")

    # 2. Calibrate a single Peclet number and keep it in the ledger
    print("\n2. Calibrating phi at Pe = 10 in 1D...")
    try:
        run = calibrate([10.0], degree=1, record=True)
        print(f"  tau = {run['tau']:.6e}, phi = {run['phi']:.6f} after {run['iterations']} iterations")
    except ValueError as e:
        print(f"  Error: {e}")

    # 3. Build a small 1D table
    print("\n3. Building a small 1D table...")
    table_path = os.path.join(workdir, "phi_1d.tab")
    spec = TableBuildSpec(dimension=1, degree=1, pmax=50.0, nodes=10, refinement=(0.5, 1.0, 2.0), cells=20,
                          fine_factor=4)
    build_phi_table(spec, table_path, log_path=os.path.join(workdir, "phi_1d.log.csv"))
    for line in describe_table(load_phi_table(table_path))[:8]:
        print(f"  {line}")

    # 4. Build a coarse 2D table and use it in a benchmark sweep
    print("\n4. Building a coarse 2D table and comparing formulas on the rotating flow...")
    table_path_2d = os.path.join(workdir, "phi_2d.tab")
    spec_2d = TableBuildSpec(dimension=2, degree=1, pmax=100.0, nodes=4, refinement=(1.0,), cells=10,
                             fine_factor=3, jobs=2)
    build_phi_table(spec_2d, table_path_2d)
    result = run_benchmark("test2", degree=1, table_path=table_path_2d, jobs=2,
                           out=os.path.join(workdir, "test2.csv"))
    for line in result.summary():
        print(f"  {line}")

    # 5. Calibration history from the ledger
    print("\n5. Calibration runs stored in the ledger:")
    for entry in get_calibration_history(kind="tbt", degree=1):
        print(f"  Pe={entry['peclet']}: phi={entry['phi']:.6f} (converged: {entry['converged']})")

    print(f"\nOutputs written to {workdir}")


if __name__ == "__main__":
    main()
