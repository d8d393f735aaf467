DATABASE_URL = "sqlite:///stabfem.db"

# Quadrature order per purpose, as a function of the Lagrange degree l
QUADRATURE_ORDERS = {
    "mass": lambda degree: 2 * degree + 2,
    "stiffness": lambda degree: 2 * degree + 1,
    "stabilization": lambda degree: 2 * degree + 1,
}

ASSEMBLY_CHUNK = 20000  # elements per vectorized assembly block

SOLVER_METHOD = "direct"
SOLVER_RTOL = 1e-10
ITERATIVE_MAXITER = 2000
ILU_DROP_TOL = 1e-5
ILU_FILL_FACTOR = 20

TOL_TAU = 1e-8
TOL_GRAD_FACTOR = 1e-12
MAX_NEWTON_ITERATIONS = 60
GOLDEN_MAX_ITERATIONS = 200
BRACKET_EXPANSION = 100.0
# J turns concave a few analytic coefficients above the optimum
BRACKET_UPPER_FACTOR = 2.0

TRAINING_CELLS = {1: 40, 2: 20, 3: 14}
TABLE_FINE_FACTORS = {1: 10, 2: 6, 3: 4}
TEST1_FINE_FACTORS = {1: 10, 2: 6, 3: 10}
TEST2_FINE_FACTORS = {1: 12, 2: 6, 3: 4}
UNSTRUCTURED_FINE_FACTOR = 2

TABLE_PMAX = 700.0
TABLE_NODES = 35
TABLE_REFINE_NODES = (0.5, 1.0, 2.0, 4.0, 8.0)
TABLE_FLATNESS = 0.02

TEST1_MESH = {1: 120, 2: 60, 3: 40}
TEST1_MAGNITUDES = [400 * 2 ** j for j in range(9)]
TEST1_ANGLES = list(range(0, 20, 2))
TEST2_CELLS = 96
TEST2_VISCOSITIES = [1.25e-05 * 2 ** j for j in range(8)]
TEST3_VISCOSITIES = [5.0e-06, 7.5e-06, 1.0e-05, 2.5e-05, 5.0e-05, 7.5e-05, 1.0e-04, 2.5e-04, 5.0e-04]

DESK_SCALE = {
    "test1": {"cells": {1: 40, 2: 20, 3: 14}, "magnitudes": [1600, 6400, 25600], "fine_factor": 6},
    "test2": {"cells": 32, "viscosities": TEST2_VISCOSITIES[::2], "fine_factor": 4},
    "convergence": {"cells": [8, 16, 32, 64]},
}
