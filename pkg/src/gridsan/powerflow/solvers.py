"""Power flow problem: power balance residual, its real polar form, and solvers."""

from __future__ import annotations

import contextlib
import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gridsan.grid import AdmittanceMatrix, Grid, build_ybus
from gridsan.powerflow._kernels import bus_power, jacobian_matrix
from gridsan.powerflow.gmres import gmres

ORDERINGS = ("natural", "bfs_from_slack", "degree_ascending")
_ORDERING_ALIASES = {"bfs": "bfs_from_slack", "degree": "degree_ascending"}
METHODS = ("newton_raphson", "ink_gmres")
_METHOD_ALIASES = {"nr": "newton_raphson", "ink": "ink_gmres"}

_faults: set[str] = set()


class PowerFlowError(RuntimeError):
    pass


class NonConvergence(PowerFlowError):
    def __init__(self, iters: int, residual: float):
        self.iters = iters
        self.residual = residual
        super().__init__(f"no convergence after {iters} iterations (residual {residual:.3e})")


class SingularJacobian(PowerFlowError):
    def __init__(self, iter: int):
        self.iter = iter
        super().__init__(f"singular Jacobian at iteration {iter}")


class KrylovStagnation(PowerFlowError):
    def __init__(self, newton_iter: int):
        self.newton_iter = newton_iter
        super().__init__(f"GMRES stagnated during Newton iteration {newton_iter}")


@dataclass(frozen=True)
class VoltageState:
    magnitudes: np.ndarray
    angles: np.ndarray

    @classmethod
    def flat(cls, n: int, slack: int = 0, slack_voltage: complex = 1.0) -> "VoltageState":
        mag = np.ones(n)
        ang = np.zeros(n)
        mag[slack] = abs(slack_voltage)
        ang[slack] = np.angle(slack_voltage)
        return cls(mag, ang)

    @classmethod
    def from_complex(cls, v: np.ndarray) -> "VoltageState":
        return cls(np.abs(v), np.angle(v))

    @property
    def complex(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.angles)


@dataclass(frozen=True)
class PfProblem:
    ybus: sp.csr_matrix
    injections: np.ndarray
    slack: int = 0
    slack_voltage: complex = 1.0 + 0j

    @property
    def n(self) -> int:
        return self.ybus.shape[0]

    @classmethod
    def from_grid(cls, grid: Grid, injections: np.ndarray, ybus: AdmittanceMatrix | None = None) -> "PfProblem":
        y = (ybus or build_ybus(grid)).entries
        return cls(ybus=y, injections=np.asarray(injections, dtype=complex), slack=grid.slack,
                   slack_voltage=grid.slack_voltage)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_newton_iters: int = 20
    method: str = "newton_raphson"
    forcing: str = "constant"
    eta: float = 1e-2
    gmres_restart: int = 30
    gmres_max_cycles: int = 50
    ordering: str = "natural"
    jacobian: str = "analytic"
    preconditioner: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "method", _METHOD_ALIASES.get(self.method, self.method))
        object.__setattr__(self, "ordering", _ORDERING_ALIASES.get(self.ordering, self.ordering))
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")
        if self.forcing not in ("constant", "adaptive"):
            raise ValueError(f"unknown forcing {self.forcing!r}")
        if self.jacobian not in ("analytic", "matrix_free"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")
        if self.preconditioner not in ("none", "jacobi", "ilu"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class PfSolution:
    voltage: VoltageState
    newton_iters: int
    total_krylov_iters: int
    final_residual: float
    krylov_per_newton: list[int] = field(default_factory=list)


# -- orderings -----------------------------------------------------------------

def bus_order(p: PfProblem, ordering: str = "natural") -> np.ndarray:
    """Non-slack buses in equation order."""
    ordering = _ORDERING_ALIASES.get(ordering, ordering)
    n = p.n
    y = p.ybus
    if ordering == "natural":
        return np.array([i for i in range(n) if i != p.slack], dtype=np.int64)
    neighbours = [sorted(set(y.indices[y.indptr[i]:y.indptr[i + 1]]) - {i}) for i in range(n)]
    if ordering == "bfs_from_slack":
        seen = {p.slack}
        out = []
        queue = deque([p.slack])
        while queue:
            b = queue.popleft()
            for nb in neighbours[b]:
                if nb not in seen:
                    seen.add(nb)
                    out.append(nb)
                    queue.append(nb)
        out += [i for i in range(n) if i not in seen]
        return np.array(out, dtype=np.int64)
    if ordering == "degree_ascending":
        rest = [i for i in range(n) if i != p.slack]
        return np.array(sorted(rest, key=lambda i: (len(neighbours[i]), i)), dtype=np.int64)
    raise ValueError(f"unknown ordering {ordering!r}")


def _unknowns(v: VoltageState, order: np.ndarray) -> np.ndarray:
    return np.concatenate([v.angles[order], v.magnitudes[order]])


def _state(x: np.ndarray, base: VoltageState, order: np.ndarray) -> VoltageState:
    m = len(order)
    mag = base.magnitudes.copy()
    ang = base.angles.copy()
    ang[order] = x[:m]
    mag[order] = x[m:]
    return VoltageState(mag, ang)


# -- system ------------------------------------------------------------------

def residual(v: VoltageState, p: PfProblem) -> np.ndarray:
    """Power balance ``G_i = S_bus_i - injection_i`` for every bus."""
    if len(v.magnitudes) != p.n or len(p.injections) != p.n:
        raise ValueError("voltage, injection and Y_bus dimensions disagree")
    return bus_power(p.ybus, v.complex) - p.injections


def real_system(v: VoltageState, p: PfProblem, ordering: str = "natural") -> np.ndarray:
    """Active then reactive mismatches of the non-slack buses, in ``ordering``."""
    order = bus_order(p, ordering)
    g = residual(v, p)[order]
    return np.concatenate([g.real, g.imag])


def jacobian(v: VoltageState, p: PfProblem, ordering: str = "natural") -> sp.csr_matrix:
    """Analytic Jacobian of :func:`real_system` w.r.t. ``[angles; magnitudes]``."""
    if np.any(v.magnitudes <= 0):
        raise ValueError("voltage magnitudes must be positive")
    return _jacobian_at(p, v, bus_order(p, ordering))


def _jacobian_at(p: PfProblem, v: VoltageState, order: np.ndarray) -> sp.csr_matrix:
    jac = jacobian_matrix(p.ybus, v.complex, order)
    if "jacobian" in _faults:
        jac = jac.copy()
        jac.data = jac.data * 1.01 + 1e-3
    return jac


@contextlib.contextmanager
def inject_fault(name: str):
    """Test hook: corrupt a kernel output while the context is active."""
    _faults.add(name)
    try:
        yield
    finally:
        _faults.discard(name)


# -- solvers -----------------------------------------------------------------

class _System:
    def __init__(self, p: PfProblem, ordering: str, initial: VoltageState | None):
        self.p = p
        self.order = bus_order(p, ordering)
        base = initial or VoltageState.flat(p.n, p.slack, p.slack_voltage)
        mag = np.array(base.magnitudes, dtype=float)
        ang = np.array(base.angles, dtype=float)
        mag[p.slack] = abs(p.slack_voltage)
        ang[p.slack] = np.angle(p.slack_voltage)
        self.base = VoltageState(mag, ang)

    def x0(self) -> np.ndarray:
        return _unknowns(self.base, self.order)

    def state(self, x: np.ndarray) -> VoltageState:
        return _state(x, self.base, self.order)

    def f(self, x: np.ndarray) -> np.ndarray:
        g = residual(self.state(x), self.p)[self.order]
        return np.concatenate([g.real, g.imag])

    def jac(self, x: np.ndarray) -> sp.csr_matrix:
        return _jacobian_at(self.p, self.state(x), self.order)


def _norm(f: np.ndarray) -> float:
    return float(np.max(np.abs(f))) if f.size else 0.0


def solve_newton_raphson(p: PfProblem, opts: SolverOptions | None = None,
                         initial: VoltageState | None = None) -> PfSolution:
    """Newton-Raphson with an exact sparse LU solve per update.

    ``newton_iters`` counts Newton updates; a start that already meets ``tol``
    returns with zero.
    """
    opts = opts or SolverOptions()
    sys_ = _System(p, opts.ordering, initial)
    x = sys_.x0()
    f = sys_.f(x)
    res = _norm(f)
    it = 0
    while res > opts.tol:
        if it >= opts.max_newton_iters or not np.isfinite(res):
            raise NonConvergence(it, res)
        it += 1
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                dx = spla.splu(sys_.jac(x).tocsc()).solve(-f)
        except (RuntimeError, spla.MatrixRankWarning):
            raise SingularJacobian(it) from None
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(it)
        x = x + dx
        f = sys_.f(x)
        res = _norm(f)
    return PfSolution(sys_.state(x), it, 0, res)


def _preconditioner(kind: str, jac: sp.csr_matrix) -> Callable[[np.ndarray], np.ndarray] | None:
    if kind == "none":
        return None
    if kind == "jacobi":
        d = jac.diagonal()
        d = np.where(d == 0, 1.0, d)
        return lambda v: v / d
    lu = spla.spilu(jac.tocsc(), permc_spec="NATURAL", drop_tol=1e-6, fill_factor=10)
    return lu.solve


def solve_ink_gmres(p: PfProblem, opts: SolverOptions | None = None,
                    initial: VoltageState | None = None) -> PfSolution:
    """Inexact Newton: each update solves ``J dx = -F`` by GMRES to relative tolerance ``eta_k``.

    With ``jacobian="matrix_free"`` the products ``J v`` are forward differences of F.
    """
    opts = opts or SolverOptions(method="ink_gmres")
    sys_ = _System(p, opts.ordering, initial)
    x = sys_.x0()
    f = sys_.f(x)
    res = _norm(f)
    prev_norm = None
    eta = opts.eta
    it = 0
    krylov = 0
    per_newton = []
    sqrt_eps = np.sqrt(np.finfo(float).eps)
    while res > opts.tol:
        if it >= opts.max_newton_iters or not np.isfinite(res):
            raise NonConvergence(it, res)
        it += 1
        fnorm = np.linalg.norm(f)
        if opts.forcing == "adaptive" and prev_norm is not None:
            eta = min(0.9, fnorm / prev_norm)
        need_matrix = opts.jacobian == "analytic" or opts.preconditioner != "none"
        jac = sys_.jac(x) if need_matrix else None
        if opts.jacobian == "analytic":
            matvec = jac.__matmul__
        else:
            fx = f
            xnorm = np.linalg.norm(x)

            def matvec(v, x=x, fx=fx, xnorm=xnorm):
                vnorm = np.linalg.norm(v)
                if vnorm == 0:
                    return np.zeros_like(v)
                h = sqrt_eps * (1.0 + xnorm) / vnorm
                return (sys_.f(x + h * v) - fx) / h
        try:
            precond = _preconditioner(opts.preconditioner, jac) if need_matrix else None
        except RuntimeError:
            raise SingularJacobian(it) from None
        out = gmres(matvec, -f, rtol=eta, restart=opts.gmres_restart, max_cycles=opts.gmres_max_cycles,
                    precond=precond)
        krylov += out.iterations
        per_newton.append(out.iterations)
        if out.stagnated:
            raise KrylovStagnation(it)
        if not np.all(np.isfinite(out.x)):
            raise SingularJacobian(it)
        x = x + out.x
        prev_norm = fnorm
        f = sys_.f(x)
        res = _norm(f)
    return PfSolution(sys_.state(x), it, krylov, res, per_newton)


def solve(p: PfProblem, opts: SolverOptions | None = None, initial: VoltageState | None = None) -> PfSolution:
    opts = opts or SolverOptions()
    if opts.method == "newton_raphson":
        return solve_newton_raphson(p, opts, initial)
    return solve_ink_gmres(p, opts, initial)


def with_method(opts: SolverOptions, **changes) -> SolverOptions:
    return replace(opts, **changes)
