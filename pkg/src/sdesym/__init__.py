"""Symbolic-numeric Lie symmetry analysis for scalar Ito SDEs."""

from .expr import Expr, parse, diff, substitute, evaluate, simplify, to_str
from .determining import (
    Sde,
    VectorField,
    DeterminingSystem,
    classical_system,
    stochastic_system,
    deterministic_ode_system,
)
from .ansatz import Ansatz, SymmetryBasis, nullspace, solve_symmetries
from .lie import StructureConstants, BasisMatch, bracket, structure_constants, match_basis
from .transform import TransformMap, PairedSymmetries, transformation_system, solve_map
from .numeric import (
    PathEnsemble,
    FlowMap,
    euler_maruyama,
    residual_check,
    flow_apply,
    verify_symmetry,
    verify_map,
)

__all__ = [
    "Expr", "parse", "diff", "substitute", "evaluate", "simplify", "to_str",
    "Sde", "VectorField", "DeterminingSystem",
    "classical_system", "stochastic_system", "deterministic_ode_system",
    "Ansatz", "SymmetryBasis", "nullspace", "solve_symmetries",
    "StructureConstants", "BasisMatch", "bracket", "structure_constants", "match_basis",
    "TransformMap", "PairedSymmetries", "transformation_system", "solve_map",
    "PathEnsemble", "FlowMap", "euler_maruyama", "residual_check",
    "flow_apply", "verify_symmetry", "verify_map",
]

__version__ = "0.1.0"
