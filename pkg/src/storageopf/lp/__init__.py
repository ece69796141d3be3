"""Linear model container, simplex, branch-and-bound and LP-file export."""
from .model import INF, EQ, GE, LE, LinearModel, ModelError, Solution, Status, relative_gap
from .simplex import Basis, LPSolver, solve_lp
from .bnb import solve_mip
from .lpformat import export_lp_format

__all__ = [
    "INF", "EQ", "GE", "LE", "LinearModel", "ModelError", "Solution", "Status",
    "relative_gap", "Basis", "LPSolver", "solve_lp", "solve_mip", "export_lp_format",
]
