"""Projected-Newton solver for ``min 1/2 x'Hx + g'x  s.t.  lower <= x <= upper``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.linalg import LinAlgError


class BoxQPError(RuntimeError):
    pass


# smallest squared Cholesky pivot allowed, relative to the largest diagonal entry
PD_RTOL = 1e-13


def is_positive_definite(H, rtol=PD_RTOL) -> bool:
    """Cholesky test that also rejects numerically singular matrices."""
    try:
        L = np.linalg.cholesky(H)
    except LinAlgError:
        return False
    pivots = np.diagonal(L)
    return bool(pivots.min() ** 2 > rtol * np.abs(np.diagonal(H)).max())


@dataclass
class BoxQPResult:
    x: np.ndarray
    free: np.ndarray  # bool mask
    H_free: np.ndarray | None  # H[free][:, free], positive definite; None when nothing is free
    iterations: int

    def solve_free(self, rhs):
        """``H_free^{-1} rhs`` for right-hand sides restricted to the free rows."""
        return np.linalg.solve(self.H_free, rhs)


def solve_box_qp(H, g, lower, upper, x0=None, max_iter=100, tol=1e-9,
                 armijo=0.1, backtrack=0.5, min_step=1e-22) -> BoxQPResult:
    """Minimise a convex quadratic over a box by projected Newton steps.

    A coordinate is clamped when it sits on a bound and the gradient pushes
    outward; an on-bound coordinate with zero or inward gradient stays free.
    Raises :class:`BoxQPError` if the free block of ``H`` is not positive
    definite or the iteration cap is hit.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = len(g)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x = np.clip(x, lower, upper)

    if n == 1:
        return _solve_scalar(H[0, 0], g[0], lower[0], upper[0])

    # interior optimum: one factorization, no active set
    if is_positive_definite(H):
        x_star = -np.linalg.solve(H, g)
        if np.all(x_star >= lower) and np.all(x_star <= upper):
            return BoxQPResult(x_star, np.ones(n, dtype=bool), H, 0)

    def objective(z):
        return z @ g + 0.5 * z @ H @ z

    value = objective(x)
    clamped_prev = None
    H_free = None
    free = np.ones(n, dtype=bool)
    for it in range(1, max_iter + 1):
        grad = g + H @ x
        clamped = ((x <= lower) & (grad > 0)) | ((x >= upper) & (grad < 0))
        free = ~clamped
        if not free.any():
            return BoxQPResult(x, free, None, it)
        if clamped_prev is None or np.any(clamped != clamped_prev):
            H_free = H[np.ix_(free, free)]
            if not is_positive_definite(H_free):
                raise BoxQPError("free block of the Hessian is not positive definite")
        clamped_prev = clamped

        if np.max(np.abs(grad[free])) < tol:
            return BoxQPResult(x, free, H_free, it)

        # Newton target on the free face, clamped coordinates held fixed
        g_free = g[free] + H[np.ix_(free, clamped)] @ x[clamped]
        search = np.zeros(n)
        search[free] = -np.linalg.solve(H_free, g_free) - x[free]
        sdotg = search @ grad
        if sdotg >= 0:
            return BoxQPResult(x, free, H_free, it)

        step = 1.0
        while True:
            candidate = np.clip(x + step * search, lower, upper)
            cand_value = objective(candidate)
            if (cand_value - value) / (step * sdotg) > armijo:
                break
            step *= backtrack
            if step < min_step:
                return BoxQPResult(x, free, H_free, it)
        converged = step == 1.0 and np.array_equal(candidate, x + search)
        x, value = candidate, cand_value
        if converged:
            # exact minimiser of the current face; confirm the partition next pass
            grad = g + H @ x
            clamped = ((x <= lower) & (grad > 0)) | ((x >= upper) & (grad < 0))
            if np.array_equal(clamped, clamped_prev):
                return BoxQPResult(x, ~clamped, H_free, it)
    raise BoxQPError(f"box QP did not converge in {max_iter} iterations")


def _solve_scalar(h, g, lo, hi):
    if not h > 0:
        raise BoxQPError("free block of the Hessian is not positive definite")
    x = min(max(-g / h, lo), hi)
    grad = g + h * x
    free = not ((x <= lo and grad > 0) or (x >= hi and grad < 0))
    mask = np.array([free])
    return BoxQPResult(np.array([x]), mask, np.array([[h]]) if free else None, 1)


def box_qp(Quu, Qu, u_ref, lower, upper, x0=None):
    """Step ``du`` minimising ``1/2 du'Quu du + Qu'du`` with ``lower <= u_ref + du <= upper``."""
    u_ref = np.asarray(u_ref, dtype=float)
    return solve_box_qp(Quu, Qu, np.asarray(lower) - u_ref, np.asarray(upper) - u_ref, x0=x0)
