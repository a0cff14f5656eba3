"""Log-barrier interior-point method for smooth objectives under linear inequalities.

Solves ``min f(x)  s.t.  lb <= x <= ub,  A x <= b`` by minimizing
``t f(x) - sum log(slacks)`` for an increasing sequence of ``t``.  The caller
supplies the objective value, gradient and a positive semidefinite Hessian
model (Gauss-Newton for least-squares objectives).
"""
from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

Objective = Callable[[np.ndarray, bool], tuple]


class BarrierError(RuntimeError):
    pass


@dataclass
class BarrierResult:
    x: np.ndarray
    fun: float
    outer_iterations: int
    newton_iterations: int
    t_final: float
    converged: bool
    history: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class LinearConstraints:
    lb: np.ndarray
    ub: np.ndarray
    A: np.ndarray
    b: np.ndarray

    @property
    def count(self) -> int:
        return int(np.isfinite(self.lb).sum() + np.isfinite(self.ub).sum() + self.b.size)

    def slacks(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return x - self.lb, self.ub - x, self.b - self.A @ x

    def strictly_feasible(self, x: np.ndarray) -> bool:
        return all(np.all(s > 0) for s in self.slacks(x))

    def max_violation(self, x: np.ndarray) -> float:
        return float(max(np.max(-s, initial=0.0) for s in self.slacks(x)))


def _barrier_terms(cons: LinearConstraints, x: np.ndarray):
    s_lo, s_hi, s_a = cons.slacks(x)
    lo, hi = np.isfinite(cons.lb), np.isfinite(cons.ub)
    phi = -np.sum(np.log(s_lo[lo])) - np.sum(np.log(s_hi[hi])) - np.sum(np.log(s_a))
    g = np.zeros_like(x)
    g[lo] -= 1.0 / s_lo[lo]
    g[hi] += 1.0 / s_hi[hi]
    g += cons.A.T @ (1.0 / s_a)
    hdiag = np.zeros_like(x)
    hdiag[lo] += s_lo[lo] ** -2
    hdiag[hi] += s_hi[hi] ** -2
    H = (cons.A.T * s_a**-2) @ cons.A
    H[np.diag_indices_from(H)] += hdiag
    return phi, g, H


def _max_feasible_step(cons: LinearConstraints, x: np.ndarray, dx: np.ndarray) -> float:
    """Largest step keeping every slack positive (times 0.99)."""
    s_lo, s_hi, s_a = cons.slacks(x)
    steps = [1.0]
    lo = np.isfinite(cons.lb) & (dx < 0)
    if lo.any():
        steps.append(np.min(s_lo[lo] / -dx[lo]))
    hi = np.isfinite(cons.ub) & (dx > 0)
    if hi.any():
        steps.append(np.min(s_hi[hi] / dx[hi]))
    Adx = cons.A @ dx
    pos = Adx > 0
    if pos.any():
        steps.append(np.min(s_a[pos] / Adx[pos]))
    return min(1.0, 0.99 * min(steps))


def barrier_minimize(
    fun: Objective,
    x0: np.ndarray,
    cons: LinearConstraints,
    mu: float = 10.0,
    t0: float | None = None,
    inner_tol: float = 1e-8,
    gap_tol: float = 1e-9,
    max_outer: int = 30,
    max_inner: int = 100,
) -> BarrierResult:
    """``fun(x, need_derivs)`` returns ``f`` or ``(f, grad, hess)``."""
    x = np.array(x0, dtype=float)
    if not cons.strictly_feasible(x):
        raise BarrierError("starting point is not strictly feasible")
    ncons = max(cons.count, 1)
    f, g, H = fun(x, True)
    if t0 is None:
        # balance the objective and barrier gradients at the start
        _, gb, _ = _barrier_terms(cons, x)
        t0 = max(np.linalg.norm(gb) / max(np.linalg.norm(g), 1e-12), 1e-3)
        t0 = min(t0, 1e3)
    t = t0
    newton_total = 0
    history = []
    for outer in range(1, max_outer + 1):
        for _ in range(max_inner):
            phi, gb, Hb = _barrier_terms(cons, x)
            grad = t * g + gb
            Htot = t * H + Hb
            try:
                cho = scipy.linalg.cho_factor(Htot, check_finite=False)
                dx = -scipy.linalg.cho_solve(cho, grad, check_finite=False)
            except np.linalg.LinAlgError:
                reg = 1e-10 * np.trace(Htot) / x.size
                dx = -np.linalg.solve(Htot + reg * np.eye(x.size), grad)
            dec2 = -grad @ dx
            if dec2 / 2.0 <= inner_tol:
                break
            step = _max_feasible_step(cons, x, dx)
            val = t * f + phi
            while True:
                xn = x + step * dx
                if cons.strictly_feasible(xn):
                    fn = fun(xn, False)
                    phin = _barrier_terms(cons, xn)[0]
                    if np.isfinite(fn) and t * fn + phin <= val - 0.25 * step * dec2:
                        break
                step *= 0.5
                if step < 1e-12:
                    break
            newton_total += 1
            if step < 1e-12:
                # Hessian model too crude for further progress at this t
                break
            x = xn
            f, g, H = fun(x, True)
        history.append((t, f))
        if ncons / t < gap_tol:
            return BarrierResult(x, f, outer, newton_total, t, True, history)
        t *= mu
    return BarrierResult(x, f, max_outer, newton_total, t / mu, False, history)
