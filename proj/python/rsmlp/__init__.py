"""Python bindings for the rsmlp solvers."""

import json

from ._rsmlp import (
    ConfigError,
    ConvergenceError,
    NumericError,
    activation_info,
    activation_names,
    generalized_mp_density,
    mmse_rectangular,
    mmse_symmetric,
    mutual_information,
    observation_density,
    parse_alpha_range,
)
from ._rsmlp import run_task as _run_task

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "NumericError",
    "activation_info",
    "activation_names",
    "generalized_mp_density",
    "mmse_rectangular",
    "mmse_symmetric",
    "mutual_information",
    "observation_density",
    "parse_alpha_range",
    "run",
    "solve_l1",
]


def run(config):
    """Run a task described by the same dictionary the CLI reads from --config."""
    return json.loads(_run_task(json.dumps(config)))


def solve_l1(alpha, activation="relu", readouts="homogeneous", gamma=0.5, delta=0.1, **extra):
    cfg = {"task": "l1", "activation": activation, "priors": {"readouts": readouts},
           "gamma": gamma, "delta": delta, "alpha": alpha}
    cfg.update(extra)
    return run(cfg)
