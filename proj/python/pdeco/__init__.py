"""Python front end for the pdeco core library."""

from ._core import (
    ConfigError,
    DimensionError,
    FormatError,
    Model,
    PathError,
    PdecoError,
    ProblemSpec,
    SolverError,
    UsageError,
    adjoint_sensitivity,
    evaluate_state,
    generate_store,
    gradcheck,
    instance_sampler,
    load_store,
    numerical_trajectory,
    objective,
    optimize,
    solve,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "Model",
    "PathError",
    "PdecoError",
    "ProblemSpec",
    "SolverError",
    "UsageError",
    "adjoint_sensitivity",
    "evaluate_state",
    "generate_store",
    "gradcheck",
    "instance_sampler",
    "load_store",
    "numerical_trajectory",
    "objective",
    "optimize",
    "solve",
]
