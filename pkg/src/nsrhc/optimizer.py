"""Finite-horizon open-loop problem solved by a spectral gradient method.

Controls are piecewise constant per time step, stored as an ``(N_T, N)``
array. The objective is

    J(u) = 1/2 sum_n omega_n |v^n|_M^2 + beta/2 sum_n dt |u^n|^2

with trapezoidal weights ``omega_n``. Step lengths come from Barzilai-Borwein
secant information in the L2(0,T) inner product, safeguarded by a
Grippo-Lampariello-Lucidi nonmonotone backtracking line search.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizerError, SolverError
from .flow import Trajectory, run_adjoint, run_translated, trapezoid_weights

log = logging.getLogger(__name__)

__all__ = [
    "SgOptions",
    "ObjectiveReport",
    "OptimizerTrace",
    "evaluate_objective",
    "evaluate_gradient",
    "solve_open_loop",
    "shift_controls",
]


@dataclass(frozen=True)
class SgOptions:
    """Spectral gradient settings.

    The solve stops when ``|g| <= grad_tol`` or ``|g| <= grad_rtol |g_0|``,
    with ``g_0`` the gradient at the starting control. ``grad_rtol = 0``
    (the default) disables the relative test.
    """

    grad_tol: float = 1e-6
    grad_rtol: float = 0.0
    max_iter: int = 500
    memory: int = 10
    bb_variant: str = "alternating"  # BB1 | BB2 | alternating
    alpha_min: float = 1e-10
    alpha_max: float = 1e10
    sufficient_decrease: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    initial_step: float = 1.0

    def __post_init__(self):
        if not self.alpha_min > 0 or self.alpha_max < self.alpha_min:
            raise ValueError("need 0 < alpha_min <= alpha_max")
        if not 0 < self.sufficient_decrease < 1:
            raise ValueError("sufficient_decrease must lie in (0, 1)")
        if self.bb_variant not in ("BB1", "BB2", "alternating"):
            raise ValueError(f"bb_variant must be BB1, BB2 or alternating, got {self.bb_variant!r}")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 <= self.grad_rtol < 1:
            raise ValueError("grad_rtol must lie in [0, 1)")
        if self.memory < 1:
            raise ValueError("memory must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class ObjectiveReport:
    J: float
    state_term: float
    control_term: float
    gradient_norm: float
    iterations: int
    evaluations: int
    converged: bool = True
    message: str = ""


@dataclass
class OptimizerTrace:
    """Per-iterate records: (iteration, J, gradient norm, accepted step)
    plus, when ``keep_trajectories`` is set, the state and adjoint
    trajectories of each accepted iterate (used for POD snapshots).

    ``max_trajectories`` keeps only the newest iterates, which bounds memory
    when the snapshot set is capped anyway. With ``keep_adjoints`` unset the
    adjoint trajectories are dropped.
    """

    keep_trajectories: bool = False
    max_trajectories: int | None = None
    keep_adjoints: bool = True
    rows: list = field(default_factory=list)
    states: list = field(default_factory=list)
    adjoints: list = field(default_factory=list)

    def record(self, it, J, gnorm, step, states=None, adjoints=None):
        self.rows.append((it, J, gnorm, step))
        if self.keep_trajectories:
            self.states.append(states)
            self.adjoints.append(adjoints if self.keep_adjoints else None)
            if self.max_trajectories is not None and len(self.states) > self.max_trajectories:
                del self.states[0], self.adjoints[0]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "J", "grad_norm", "step"])
            w.writerows(self.rows)


def _terms(model, V, u, beta):
    dt = model.dt
    om = trapezoid_weights(V.shape[0] - 1, dt)
    if hasattr(model, "norm2_rows"):
        n2 = model.norm2_rows(V)
    else:
        n2 = np.array([model.norm2(v) for v in V])
    state = 0.5 * float(om @ n2)
    control = 0.5 * beta * dt * float(np.sum(u * u))
    return state, control


def evaluate_objective(model, v0: np.ndarray, u: np.ndarray, beta: float) -> tuple[float, Trajectory]:
    """Objective value and the forward trajectory it was computed from."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    traj = run_translated(model, v0, u)
    s, c = _terms(model, traj.velocity, u, beta)
    return s + c, traj


def evaluate_gradient(model, forward: Trajectory, u: np.ndarray, beta: float, *, adjoint: Trajectory | None = None):
    """Euclidean gradient ``dJ/du`` (shape of ``u``) and the adjoint trajectory.

    Row ``n-1`` holds ``dt * (beta u^n - B^T w^{n-1})``.
    """
    W = adjoint if adjoint is not None else run_adjoint(model, forward)
    Wv = W.velocity[:-1]
    if hasattr(model, "adjoint_load_T_rows"):
        BtW = model.adjoint_load_T_rows(Wv)
    else:
        BtW = np.array([model.adjoint_load_T(w) for w in Wv])
    return model.dt * (beta * u - BtW), W


def shift_controls(u: np.ndarray, k: int) -> np.ndarray:
    """Drop the first ``k`` steps and pad with zeros (warm start)."""
    out = np.zeros_like(u)
    if k < len(u):
        out[: len(u) - k] = u[k:]
    return out


def solve_open_loop(
    model,
    v0: np.ndarray,
    beta: float,
    n_steps: int,
    opts: SgOptions = SgOptions(),
    warm_start: np.ndarray | None = None,
    trace: OptimizerTrace | None = None,
    raise_on_failure: bool = True,
):
    """Minimize the horizon objective over piecewise-constant controls.

    Returns ``(u, forward trajectory, report)``. The gradient norm is the
    L2(0,T; R^N) norm of the Riesz representative ``beta u - B^T w``.
    """
    dt = model.dt
    N = model.n_controls
    u = np.zeros((n_steps, N)) if warm_start is None else np.array(warm_start, dtype=float)
    if u.shape != (n_steps, N):
        raise ValueError(f"warm start must have shape {(n_steps, N)}")

    def inner(a, b):
        return dt * float(np.sum(a * b))

    evals = 0

    def objective(uu):
        nonlocal evals
        evals += 1
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                traj = run_translated(model, v0, uu)
                s, c = _terms(model, traj.velocity, uu, beta)
        except SolverError:
            # an overly long trial step blew the state up; let the search backtrack
            return np.inf, np.inf, np.inf, None
        if not np.isfinite(s + c):
            return np.inf, np.inf, np.inf, None
        return s + c, s, c, traj

    J, s_term, c_term, traj = objective(u)
    if traj is None:
        raise OptimizerError("initial control produces a non-finite state", {"iteration": 0})
    geu, W = evaluate_gradient(model, traj, u, beta)
    g = geu / dt
    gnorm = np.sqrt(inner(g, g))
    if trace is not None:
        trace.record(0, J, gnorm, 0.0, traj.velocity, W.velocity)
    hist = deque([J], maxlen=opts.memory)
    alpha = min(max(opts.initial_step, opts.alpha_min), opts.alpha_max)
    it = 0
    tol = max(opts.grad_tol, opts.grad_rtol * gnorm)
    converged = gnorm <= tol
    message = "converged" if converged else ""
    while not converged:
        if it >= opts.max_iter:
            message = "max_iter reached"
            log.warning("open-loop solve stopped at max_iter=%d, |g|=%.3e", opts.max_iter, gnorm)
            break
        it += 1
        ref = max(hist)
        t = alpha
        g2 = gnorm * gnorm
        for _ in range(opts.max_backtracks):
            u_new = u - t * g
            J_new, s_new, c_new, traj_new = objective(u_new)
            if J_new <= ref - opts.sufficient_decrease * t * g2:
                break
            t *= opts.backtrack
        else:
            diag = {"iteration": it, "J": J, "grad_norm": gnorm, "last_step": t}
            if raise_on_failure:
                raise OptimizerError("nonmonotone line search failed", diag)
            message = "line search failed"
            log.warning("line search failed at iteration %d (|g|=%.3e)", it, gnorm)
            break
        geu, W = evaluate_gradient(model, traj_new, u_new, beta)
        g_new = geu / dt
        s = u_new - u
        y = g_new - g
        sy = inner(s, y)
        if sy <= 0:
            alpha = opts.alpha_max
        else:
            use_bb1 = opts.bb_variant == "BB1" or (opts.bb_variant == "alternating" and it % 2 == 1)
            alpha = inner(s, s) / sy if use_bb1 else sy / inner(y, y)
        alpha = min(max(alpha, opts.alpha_min), opts.alpha_max)
        u, g, J, s_term, c_term, traj = u_new, g_new, J_new, s_new, c_new, traj_new
        gnorm = np.sqrt(inner(g, g))
        hist.append(J)
        if trace is not None:
            trace.record(it, J, gnorm, t, traj.velocity, W.velocity)
        converged = gnorm <= tol
        if converged:
            message = "converged"
    report = ObjectiveReport(J, s_term, c_term, gnorm, max(it, 1), evals, converged, message)
    return u, traj, report
