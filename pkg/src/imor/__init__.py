"""Index-aware decoupling, simulation and model reduction of descriptor systems.

Submodules:

``pencil``      projector chains, kernels, finite spectra
``decouple``    descriptor systems and their explicit/implicit decoupling
``gasnet``      gas pipeline networks assembled into index-1 systems
``integrate``   implicit Euler, decoupled marching, steady states
``mor``         POD, DEIM, index-aware and Galerkin reduced models
``cli``         the ``imor`` command
"""

from .decouple import (
    ComponentwiseNonlinearity,
    DecoupledSystem,
    DescriptorSystem,
    FunctionNonlinearity,
    ZeroNonlinearity,
    consistent_initialize,
    explicit_decouple,
    implicit_decouple,
    recompose_state,
)
from .errors import IMORError, NumericalError, ValidationError
from .gasnet import (
    GasNetwork,
    assemble_dae,
    assemble_ode,
    chain_network,
    parse_network,
    structured_decouple,
    tree_network,
)
from .integrate import TimeGrid, Trajectory, implicit_euler, simulate_decoupled, steady_state
from .mor import (
    block_pod_basis,
    build_irom,
    baseline_pod_reduce,
    deim_interpolant,
    pod_basis,
    relative_error,
)
from .pencil import build_projector_chain, finite_spectrum
from .signals import Constant, InputSignal, PiecewiseLinear, Sine, step

__version__ = "0.1.0"

__all__ = [
    "ComponentwiseNonlinearity", "DecoupledSystem", "DescriptorSystem", "FunctionNonlinearity",
    "ZeroNonlinearity", "consistent_initialize", "explicit_decouple", "implicit_decouple",
    "recompose_state", "IMORError", "NumericalError", "ValidationError", "GasNetwork", "assemble_dae",
    "assemble_ode", "chain_network", "parse_network", "structured_decouple", "tree_network", "TimeGrid",
    "Trajectory", "implicit_euler", "simulate_decoupled", "steady_state", "block_pod_basis", "build_irom",
    "baseline_pod_reduce", "deim_interpolant", "pod_basis", "relative_error", "build_projector_chain",
    "finite_spectrum", "Constant", "InputSignal", "PiecewiseLinear", "Sine", "step",
]
