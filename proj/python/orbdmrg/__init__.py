"""Two-site DMRG with local fermionic mode transformations."""

from ._orbdmrg import (
    Error,
    Operator,
    PreconditionError,
    __version__,
    config_keys,
    cost_f1,
    cost_f4,
    default_config,
    exact_energy,
    fiedler_order,
    gaussian_unitary,
    householder,
    hubbard,
    load_operator,
    run,
    seriation_cost,
)

__all__ = [
    "Error",
    "Operator",
    "PreconditionError",
    "__version__",
    "config_keys",
    "cost_f1",
    "cost_f4",
    "default_config",
    "exact_energy",
    "fiedler_order",
    "gaussian_unitary",
    "householder",
    "hubbard",
    "load_operator",
    "run",
    "seriation_cost",
]
