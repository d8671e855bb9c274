r"""Differential dynamic programming with box-limited controls.

Sign conventions follow the classic presentation: the backward pass
produces ``k = Quu^{-1} Qu`` and ``K = Quu^{-1} Qux`` and the forward pass
applies

.. math::

    \hat u_t = u_t - \alpha k_t - K_t (\hat x_t \ominus x_t).

By default the Q-model is Gauss-Newton (iLQR): the ``V'_x . f_xx`` style
tensor terms are left out unless ``use_second_order_dynamics`` is set and
the model supplies them.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np
from numpy.linalg import LinAlgError

from .boxqp import BoxQPError, is_positive_definite, solve_box_qp
from .costs import CostBreakdown, CostBundle
from .dynamics import SystemModel

log = logging.getLogger(__name__)


class LimitMode(str, enum.Enum):
    NONE = "none"
    CLAMP = "clamp"
    BOXQP = "boxqp"


class BackwardPassError(RuntimeError):
    def __init__(self, message, knot=None):
        super().__init__(message)
        self.knot = knot


@dataclass
class SolverConfig:
    max_iterations: int = 500
    cost_tolerance: float = 1e-9
    gradient_tolerance: float = 1e-8
    mu_init: float = 1e-6
    mu_min: float = 1e-6
    mu_max: float = 1e10
    mu_scale_up: float = 10.0
    mu_scale_down: float = 2.0
    line_search_steps: tuple = tuple(2.0 ** -i for i in range(11))
    armijo: float = 1e-4
    easy_step: float = 0.5  # accepted alpha at or above this lowers mu
    hard_step: float = 0.0625  # accepted alpha at or below this raises mu
    limit_mode: LimitMode = LimitMode.BOXQP
    use_second_order_dynamics: bool = False
    jacobian_mode: str = "analytic"

    def __post_init__(self):
        self.limit_mode = LimitMode(self.limit_mode)
        self.line_search_steps = tuple(float(a) for a in self.line_search_steps)
        if self.cost_tolerance <= 0 or self.gradient_tolerance <= 0:
            raise ValueError("solver tolerances must be positive")
        if not 0 <= self.mu_min <= self.mu_init <= self.mu_max:
            raise ValueError("regularization bounds must satisfy mu_min <= mu_init <= mu_max")
        if self.mu_scale_up <= 1 or self.mu_scale_down <= 1:
            raise ValueError("regularization scale factors must exceed 1")
        if not self.line_search_steps or any(not 0 < a <= 1 for a in self.line_search_steps):
            raise ValueError("line-search steps must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.jacobian_mode not in ("analytic", "fd"):
            raise ValueError("jacobian_mode must be 'analytic' or 'fd'")

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["limit_mode"] = self.limit_mode.value
        out["line_search_steps"] = list(self.line_search_steps)
        return out


@dataclass
class Problem:
    """Shooting problem: initial state, horizon of ``N`` knots, model and costs."""

    model: SystemModel
    costs: CostBundle
    x0: np.ndarray
    horizon: int

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.model.validate(self.x0)
        if self.horizon < 1:
            raise ValueError("horizon must contain at least one knot")

    def rollout(self, U):
        return self.model.rollout(self.x0, U)


@dataclass
class Trajectory:
    X: np.ndarray  # (N, nx)
    U: np.ndarray  # (N-1, nu)
    dt: float

    def __post_init__(self):
        if len(self.X) != len(self.U) + 1:
            raise ValueError("trajectory needs N states and N-1 controls")

    @property
    def times(self):
        return np.arange(len(self.X)) * self.dt


@dataclass
class QModel:
    Qx: np.ndarray
    Qu: np.ndarray
    Qxx: np.ndarray
    Quu: np.ndarray
    Qux: np.ndarray


@dataclass
class ValueModel:
    V: float
    Vx: np.ndarray
    Vxx: np.ndarray


@dataclass
class BackwardResult:
    k: np.ndarray  # (N-1, nu)
    K: np.ndarray  # (N-1, nu, ndx)
    values: list  # ValueModel per knot, terminal last
    d1: float  # sum k'Qu
    d2: float  # sum k'Quu k
    grad_norm: float  # max |Qu| over free coordinates
    free: np.ndarray  # (N-1, nu) bool

    def expected_reduction(self, alpha):
        return alpha * self.d1 - 0.5 * alpha * alpha * self.d2


@dataclass
class Linearization:
    """Dynamics and cost derivatives stacked over the control knots."""

    fx: np.ndarray  # (N-1, ndx, ndx)
    fu: np.ndarray  # (N-1, ndx, nu)
    l: np.ndarray  # (N-1,)
    lx: np.ndarray
    lu: np.ndarray
    lxx: np.ndarray
    luu: np.ndarray  # (N-1, nu) diagonal
    terminal: tuple
    second_order: list | None = None


@dataclass
class SolveResult:
    trajectory: Trajectory
    k: np.ndarray
    K: np.ndarray
    converged: bool
    iterations: int
    cost_trace: list  # cost after each accepted iteration, initial rollout first
    iteration_times: list  # seconds per backward pass, final convergence check included
    exit_reason: str
    cost: CostBreakdown
    mu: float = 0.0
    accepted: int = 0

    def summary(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "accepted_iterations": self.accepted,
            "exit_reason": self.exit_reason,
            "total_cost": self.cost.total,
            "task_cost": self.cost.task,
            "regularization_cost": self.cost.regularization,
            "final_task_cost": self.cost.terminal,
            "cost_trace": list(self.cost_trace),
            "iteration_times": list(self.iteration_times),
            "wall_time": float(sum(self.iteration_times)),
            "final_mu": self.mu,
        }


def linearize(problem: Problem, X, U, config: SolverConfig | None = None) -> Linearization:
    config = config or SolverConfig()
    model, costs = problem.model, problem.costs
    fx, fu = model.jacobians_batch(X, U, config.jacobian_mode)
    l, lx, lu, lxx, luu = costs.running_batch(X, U)
    tensors = None
    if config.use_second_order_dynamics and model.has_second_order:
        tensors = [model.second_order(X[t], U[t]) for t in range(len(U))]
    return Linearization(fx, fu, l, lx, lu, lxx, luu, costs.terminal_cost(X[-1]), tensors)


def _bounds(problem, config):
    if config.limit_mode is LimitMode.NONE:
        return None
    m = problem.model
    return (m.u_lower, m.u_upper) if m.has_bounds else None


def backward_pass(problem: Problem, traj: Trajectory, mu: float,
                  config: SolverConfig | None = None,
                  lin: Linearization | None = None) -> BackwardResult:
    """Riccati-like sweep from the last knot to the first.

    Raises :class:`BackwardPassError` (with the offending knot) when the
    regularized ``Quu`` is not positive definite or derivatives are not
    finite.
    """
    config = config or SolverConfig()
    X, U = traj.X, traj.U
    if lin is None:
        lin = linearize(problem, X, U, config)
    model = problem.model
    n_ctrl = len(U)
    ndx, nu = model.ndx, model.nu
    bounds = _bounds(problem, config) if config.limit_mode is LimitMode.BOXQP else None

    h, hx, hxx = lin.terminal
    V, Vx, Vxx = h, np.asarray(hx, dtype=float), 0.5 * (hxx + hxx.T)
    values = [None] * (n_ctrl + 1)
    values[n_ctrl] = ValueModel(V, Vx, Vxx)
    k = np.zeros((n_ctrl, nu))
    K = np.zeros((n_ctrl, nu, ndx))
    free_all = np.ones((n_ctrl, nu), dtype=bool)
    d1 = d2 = 0.0
    grad_norm = 0.0
    eye_u = np.eye(nu)
    diag_u = np.diag_indices(nu)

    for t in range(n_ctrl - 1, -1, -1):
        fx, fu = lin.fx[t], lin.fu[t]
        Qx = lin.lx[t] + fx.T @ Vx
        Qu = lin.lu[t] + fu.T @ Vx
        VxxFx = Vxx @ fx
        Qxx = lin.lxx[t] + fx.T @ VxxFx
        Quu = fu.T @ (Vxx @ fu)
        Quu[diag_u] += lin.luu[t]
        Qux = fu.T @ VxxFx
        if lin.second_order is not None:
            fxx, fuu, fux = lin.second_order[t]
            Qxx = Qxx + np.tensordot(Vx, fxx, axes=1)
            Quu = Quu + np.tensordot(Vx, fuu, axes=1)
            Qux = Qux + np.tensordot(Vx, fux, axes=1)
        # a NaN or inf anywhere survives the sum
        if not math.isfinite(Qu.sum() + Quu.sum() + Qux.sum()):
            raise BackwardPassError(f"non-finite derivatives at knot {t}", knot=t)
        Quu = 0.5 * (Quu + Quu.T)
        Quu_reg = Quu + mu * eye_u

        if bounds is not None and nu == 1:
            # scalar box QP inline: the common single-input case
            h = Quu_reg[0, 0]
            if not h > 0:
                raise BackwardPassError(f"box QP failed at knot {t}: Quu not positive", knot=t)
            lo, hi = bounds[0][0] - U[t, 0], bounds[1][0] - U[t, 0]
            g = Qu[0]
            du = min(max(-g / h, lo), hi)
            grad = g + h * du
            is_free = not ((du <= lo and grad > 0) or (du >= hi and grad < 0))
            k_t = np.array([-du])
            if is_free:
                K_t = Qux / h
                grad_norm = max(grad_norm, abs(g))
            else:
                K_t = np.zeros((1, ndx))
            free_all[t, 0] = is_free
        elif bounds is not None:
            try:
                res = solve_box_qp(Quu_reg, Qu, bounds[0] - U[t], bounds[1] - U[t])
            except BoxQPError as exc:
                raise BackwardPassError(f"box QP failed at knot {t}: {exc}", knot=t) from exc
            k_t = -res.x
            free = res.free
            K_t = np.zeros((nu, ndx))
            if free.all():
                K_t = res.solve_free(Qux)
            elif free.any():
                K_t[free] = res.solve_free(Qux[free])
            if free.any():
                grad_norm = max(grad_norm, float(np.max(np.abs(Qu[free]))))
            free_all[t] = free
        else:
            if not is_positive_definite(Quu_reg):
                raise BackwardPassError(f"Quu not positive definite at knot {t}", knot=t)
            sol = np.linalg.solve(Quu_reg, np.column_stack([Qu, Qux]))
            k_t, K_t = sol[:, 0], sol[:, 1:]
            grad_norm = max(grad_norm, float(np.max(np.abs(Qu))))

        k[t] = k_t
        K[t] = K_t
        Quu_k = Quu @ k_t
        d1 += float(k_t @ Qu)
        d2 += float(k_t @ Quu_k)
        # valid for clamped rows too: du = -k - K dx
        Vx = Qx + K_t.T @ (Quu_k - Qu) - Qux.T @ k_t
        cross = K_t.T @ (0.5 * (Quu @ K_t) - Qux)
        Vxx = Qxx + cross + cross.T
        Vxx = 0.5 * (Vxx + Vxx.T)
        V = values[t + 1].V + lin.l[t] - float(k_t @ Qu) + 0.5 * float(k_t @ Quu_k)
        values[t] = ValueModel(V, Vx, Vxx)

    return BackwardResult(k, K, values, d1, d2, grad_norm, free_all)


def forward_pass(problem: Problem, traj: Trajectory, k, K, alpha: float,
                 config: SolverConfig | None = None):
    """Roll out the updated policy; returns ``(trajectory, CostBreakdown)``.

    A rollout that produces non-finite values gets infinite cost instead of
    raising, so the line search can reject it.
    """
    config = config or SolverConfig()
    model, costs = problem.model, problem.costs
    bounds = _bounds(problem, config)
    X0, U0 = traj.X, traj.U
    X = np.empty_like(X0)
    U = np.empty_like(U0)
    X[0] = X0[0]
    inf = float("inf")
    euclidean = model.euclidean
    if bounds is not None:
        lo, hi = bounds
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            for t in range(len(U0)):
                dx = X[t] - X0[t] if euclidean else model.state_diff(X[t], X0[t])
                u = U0[t] - alpha * k[t] - K[t] @ dx
                if bounds is not None:
                    u = np.minimum(np.maximum(u, lo), hi)
                U[t] = u
                X[t + 1] = model._step(X[t], u)
            if not np.all(np.isfinite(X)):
                return Trajectory(X, U, traj.dt), CostBreakdown(inf, inf, inf, inf)
            cost = costs.total_cost(X, U)
    except (FloatingPointError, OverflowError, ValueError, np.linalg.LinAlgError):
        return Trajectory(X, U, traj.dt), CostBreakdown(inf, inf, inf, inf)
    if not np.isfinite(cost.total):
        return Trajectory(X, U, traj.dt), CostBreakdown(inf, inf, inf, inf)
    return Trajectory(X, U, traj.dt), cost


def solve(problem: Problem, initial_controls=None, config: SolverConfig | None = None) -> SolveResult:
    """Iterate backward pass and line-searched forward pass until converged.

    Stops when the cost change (actual or predicted) drops below
    ``cost_tolerance``, when the largest free ``|Qu|`` drops below
    ``gradient_tolerance``, or at the iteration cap.  Running out of
    regularization returns a non-converged result instead of raising.

    ``iterations`` counts step attempts: a backward pass that only confirms
    convergence is not one, so an already-optimal input reports 0.
    ``iteration_times`` has one entry per backward pass, that final check
    included.
    """
    config = config or SolverConfig()
    model = problem.model
    n_ctrl = problem.horizon - 1
    if initial_controls is None:
        U = np.zeros((n_ctrl, model.nu))
    else:
        U = np.array(initial_controls, dtype=float).reshape(n_ctrl, model.nu)
    bounds = _bounds(problem, config)
    if bounds is not None:
        U = np.clip(U, bounds[0], bounds[1])
    traj = Trajectory(problem.rollout(U), U, model.dt)
    cost = problem.costs.total_cost(traj.X, traj.U)
    if not np.isfinite(cost.total):
        raise ValueError("initial rollout has non-finite cost")

    mu = config.mu_init
    cost_trace = [cost.total]
    times = []
    k = np.zeros((n_ctrl, model.nu))
    K = np.zeros((n_ctrl, model.nu, model.ndx))
    converged = False
    exit_reason = "iteration limit"
    lin = None
    accepted = 0
    iteration = 0

    # once mu = 0 has failed, decreases stop at mu_min instead of cycling through 0
    allow_zero_mu = True

    def raise_mu(current):
        return max(config.mu_min, current * config.mu_scale_up)

    while True:
        tic = time.perf_counter()
        if lin is None:
            lin = linearize(problem, traj.X, traj.U, config)
        try:
            back = backward_pass(problem, traj, mu, config, lin)
        except BackwardPassError as exc:
            iteration += 1
            log.debug("iteration %d: %s (mu=%g)", iteration, exc, mu)
            if mu == 0.0:
                allow_zero_mu = False
            mu = raise_mu(mu)
            times.append(time.perf_counter() - tic)
            if mu > config.mu_max:
                exit_reason = f"regularization limit: {exc}"
                break
            if iteration >= config.max_iterations:
                break
            continue
        k, K = back.k, back.K

        if back.grad_norm < config.gradient_tolerance:
            times.append(time.perf_counter() - tic)
            converged, exit_reason = True, "gradient tolerance"
            break
        if back.expected_reduction(1.0) < config.cost_tolerance:
            times.append(time.perf_counter() - tic)
            converged, exit_reason = True, "cost tolerance (predicted)"
            break
        if iteration >= config.max_iterations:
            times.append(time.perf_counter() - tic)
            break
        iteration += 1

        step_taken = None
        for alpha in config.line_search_steps:
            cand, cand_cost = forward_pass(problem, traj, k, K, alpha, config)
            actual = cost.total - cand_cost.total
            expected = back.expected_reduction(alpha)
            if expected > 0 and actual >= config.armijo * expected:
                step_taken = (alpha, cand, cand_cost, actual)
                break
        times.append(time.perf_counter() - tic)

        if step_taken is None:
            mu = raise_mu(mu)
            log.debug("iteration %d: line search failed, mu -> %g", iteration, mu)
            if mu > config.mu_max:
                exit_reason = "regularization limit: line search failed"
                break
            continue

        alpha, traj, cost, actual = step_taken
        lin = None
        accepted += 1
        cost_trace.append(cost.total)
        if alpha >= config.easy_step:
            mu = mu / config.mu_scale_down
            if mu < config.mu_min:
                mu = 0.0 if allow_zero_mu else config.mu_min
        elif alpha <= config.hard_step:
            mu = raise_mu(mu)
        log.debug("iteration %d: cost %.10g alpha %g mu %g", iteration, cost.total, alpha, mu)
        if abs(actual) < config.cost_tolerance:
            converged, exit_reason = True, "cost tolerance"
            break

    return SolveResult(traj, k, K, converged, iteration, cost_trace, times, exit_reason, cost,
                       mu, accepted)
