"""AC power flow: Newton-Raphson and inexact Newton-Krylov (GMRES) solvers."""

from gridsan.powerflow.gmres import GmresResult, gmres
from gridsan.powerflow.solvers import (
    ORDERINGS,
    KrylovStagnation,
    NonConvergence,
    PfProblem,
    PfSolution,
    PowerFlowError,
    SingularJacobian,
    SolverOptions,
    VoltageState,
    bus_order,
    inject_fault,
    jacobian,
    real_system,
    residual,
    solve,
    solve_ink_gmres,
    solve_newton_raphson,
)

__all__ = [
    "ORDERINGS", "GmresResult", "KrylovStagnation", "NonConvergence", "PfProblem", "PfSolution",
    "PowerFlowError", "SingularJacobian", "SolverOptions", "VoltageState", "bus_order", "gmres",
    "inject_fault", "jacobian", "real_system", "residual", "solve", "solve_ink_gmres",
    "solve_newton_raphson",
]
