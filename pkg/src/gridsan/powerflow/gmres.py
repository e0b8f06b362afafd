"""Restarted GMRES with right preconditioning.

Right preconditioning keeps the monitored residual equal to the true residual of
the unpreconditioned system, which is what the inexact-Newton forcing test needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    stagnated: bool = False


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres(matvec: Operator, b: np.ndarray, x0: np.ndarray | None = None, rtol: float = 1e-2,
          restart: int = 30, max_cycles: int = 50, precond: Operator | None = None,
          atol: float = 0.0) -> GmresResult:
    """Solve ``A x = b`` until ``||b - A x|| <= max(rtol * ||b||, atol)``.

    ``stagnated`` is set when a whole restart cycle fails to reduce the residual.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    apply_m = precond if precond is not None else (lambda v: v)
    bnorm = np.linalg.norm(b)
    target = max(rtol * bnorm, atol)
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    total = 0
    if beta <= target or bnorm == 0.0:
        return GmresResult(x, 0, beta, True)
    m = min(restart, n)
    for _ in range(max_cycles):
        cycle_start = beta
        basis = np.zeros((m + 1, n))
        hess = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        basis[0] = r / beta
        k_used = 0
        for k in range(m):
            w = matvec(apply_m(basis[k]))
            for j in range(k + 1):
                hess[j, k] = w @ basis[j]
                w = w - hess[j, k] * basis[j]
            hess[k + 1, k] = np.linalg.norm(w)
            breakdown = hess[k + 1, k] <= 1e-14 * max(1.0, abs(hess[k, k]))
            if not breakdown:
                basis[k + 1] = w / hess[k + 1, k]
            for j in range(k):
                h0, h1 = hess[j, k], hess[j + 1, k]
                hess[j, k] = cs[j] * h0 + sn[j] * h1
                hess[j + 1, k] = -sn[j] * h0 + cs[j] * h1
            cs[k], sn[k] = _givens(hess[k, k], hess[k + 1, k])
            hess[k, k] = cs[k] * hess[k, k] + sn[k] * hess[k + 1, k]
            hess[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            if abs(g[k + 1]) <= target or breakdown:
                break
        y = np.linalg.solve(np.triu(hess[:k_used, :k_used]), g[:k_used]) if k_used else np.zeros(0)
        x = x + apply_m(basis[:k_used].T @ y)
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta <= target:
            return GmresResult(x, total, beta, True)
        if not beta < cycle_start * (1.0 - 1e-12):
            return GmresResult(x, total, beta, False, stagnated=True)
    return GmresResult(x, total, beta, False)
