import numpy as np

from hjvariance.env_lattice import environment_from_mask, sample_environment
from hjvariance.hjb_solver import SolverParams, solver_box


def small_params(horizon=4.0, q_max=2, h=1.0, start=(0.0, 0.0)):
    return SolverParams(dt=1.0, h=h, q_max=q_max, horizon=horizon, start=start)


def random_env(params, seed, alpha=0.5, levels=(0.0, 1.0), margin=0):
    return sample_environment(solver_box(params, params.q_max, margin), alpha, levels, seed)


def constant_env(params, high, levels=(0.0, 1.0)):
    box = solver_box(params, params.q_max)
    shape = tuple(hi - lo for lo, hi in box)
    return environment_from_mask(box, np.full(shape, high), 0.5, levels)
