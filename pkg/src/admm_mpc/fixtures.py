"""The discretized double integrator used throughout the benchmark."""

import numpy as np

from .mpc_core import MpcProblem

DOUBLE_INTEGRATOR = {
    "A": [[1.0, 1.0], [0.0, 1.0]],
    "B": [[0.5], [1.0]],
    "x_max": [25.0, 5.0],
    "u_max": [1.0],
    "Q": [[1.0, 0.0], [0.0, 1.0]],
    "R": [[0.1]],
    "N": 5,
}

RHOS = (1.0, 10.0, 100.0)
ITERATIONS = (1, 5, 10)

# x0 highlighted in the trajectory plots of the benchmark
FIGURE_X0 = np.array([-18.680, 3.646])


def double_integrator(N: int = 5) -> MpcProblem:
    d = dict(DOUBLE_INTEGRATOR, N=N)
    return MpcProblem.from_data(**d)
