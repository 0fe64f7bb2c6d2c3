"""Semi-implicit time stepping of the translated, full and adjoint systems.

Every step solves the constant saddle-point system

    [ M/dt + nu A   -D ] [v]   [rhs]
    [ -D^T           0 ] [p] = [ 0 ]

on the free (non-Dirichlet) velocity dofs with convection treated
explicitly. The adjoint sweep is the exact transpose of the discrete forward
map, so gradients built from it are exact for the discrete objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DimensionError, SolverError
from .fem import (
    FeSpace,
    apply_convection,
    convection_from_fields,
    convection_transpose_from_fields,
    qp_fields,
    assemble_convection_jacobian,
    assemble_divergence,
    assemble_mass,
    assemble_stiffness,
)

log = logging.getLogger(__name__)

__all__ = [
    "TimeGrid",
    "Trajectory",
    "Discretization",
    "SaddleSolver",
    "FomModel",
    "discretize",
    "solve_stationary_reference",
    "step_translated",
    "run_translated",
    "run_adjoint",
    "run_full_ns",
    "trapezoid_weights",
    "cfl_number",
    "stationary_residual",
]


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1 or not self.T > 0:
            raise ValueError("time grid needs T > 0 and at least one step")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


def trapezoid_weights(n_steps: int, dt: float) -> np.ndarray:
    w = np.full(n_steps + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass
class Trajectory:
    """Velocity coefficients at the ``n_steps + 1`` grid points (rows)."""

    grid: TimeGrid
    velocity: np.ndarray
    pressure: np.ndarray | None = None

    def __post_init__(self):
        if self.velocity.shape[0] != self.grid.n_steps + 1:
            raise DimensionError("trajectory length does not match the time grid")

    def __len__(self):
        return self.velocity.shape[0]


@dataclass(frozen=True, eq=False)
class Discretization:
    """Assembled FE matrices of a space, built once and shared."""

    space: FeSpace
    M: sp.csr_matrix
    A: sp.csr_matrix
    D: sp.csr_matrix

    def norm_h(self, v: np.ndarray) -> np.ndarray:
        """H-norm of one vector or of each row of a 2-D array."""
        v = np.asarray(v)
        if v.ndim == 1:
            return float(np.sqrt(max(v @ (self.M @ v), 0.0)))
        return np.sqrt(np.maximum(np.einsum("ij,ij->i", v, (self.M @ v.T).T), 0.0))


def discretize(space: FeSpace) -> Discretization:
    return Discretization(space, assemble_mass(space), assemble_stiffness(space), assemble_divergence(space))


class SaddleSolver:
    """Factorized saddle-point matrix ``[[K, -D], [-D^T, 0]]`` on the free dofs.

    ``K`` is ``mass_coef * M + nu * A + extra``. With pure Dirichlet boundaries
    the first pressure dof is pinned and the returned pressure is shifted to
    zero mean.
    """

    def __init__(self, disc: Discretization, nu: float, mass_coef: float, extra: sp.spmatrix | None = None):
        space = disc.space
        self.disc = disc
        self.free = space.free_dofs
        self.fixed = np.flatnonzero(space.dirichlet_mask)
        K = mass_coef * disc.M + nu * disc.A
        if extra is not None:
            K = K + extra
        K = K.tocsr()
        self.pin = not space.has_natural_boundary
        pcols = np.arange(1, space.n_p) if self.pin else np.arange(space.n_p)
        self.pcols = pcols
        Kff = K[self.free][:, self.free]
        Df = disc.D[self.free][:, pcols]
        self.K_fb = K[self.free][:, self.fixed]
        self.D_b = disc.D[self.fixed][:, pcols]
        S = sp.bmat([[Kff, -Df], [-Df.T, None]], format="csc")
        try:
            self.lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SolverError(f"saddle-point factorization failed: {exc}") from exc
        self.nf = len(self.free)
        # P1 mass row sums for the zero-mean pressure normalization
        self._pweights = _p1_lumped(space)
        # largest |D^T v|_inf over all solves, tracked when monitor is set
        self.monitor = False
        self.max_divergence = 0.0

    def solve(self, rhs: np.ndarray, lift: np.ndarray | None = None, *, pressure: bool = False):
        """Velocity (and optionally pressure) for load ``rhs``; boundary dofs
        take the values of ``lift`` (zero if omitted)."""
        n_v = self.disc.space.n_v
        b = np.empty(self.nf + len(self.pcols))
        b[: self.nf] = rhs[self.free]
        b[self.nf :] = 0.0
        if lift is not None:
            g = lift[self.fixed]
            b[: self.nf] -= self.K_fb @ g
            b[self.nf :] += self.D_b.T @ g
        x = self.lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite saddle-point solution")
        v = np.zeros(n_v) if lift is None else lift.copy()
        v[self.free] = x[: self.nf]
        if self.monitor:
            self.max_divergence = max(self.max_divergence, float(np.abs(self.disc.D.T @ v).max()))
        if not pressure:
            return v
        p = np.zeros(self.disc.space.n_p)
        p[self.pcols] = x[self.nf :]
        if self.pin:
            p -= (self._pweights @ p) / self._pweights.sum()
        return v, p


def _p1_lumped(space: FeSpace) -> np.ndarray:
    return np.bincount(space.mesh.triangles.ravel(), np.repeat(space.areas / 3.0, 3), minlength=space.n_p)


class FomModel:
    """Full-order translated dynamics on one prediction horizon.

    ``yhat`` is either a single velocity vector (stationary reference) or an
    array with one row per global time step; ``offset`` is the global index
    of the horizon's first grid point.
    """

    def __init__(
        self,
        disc: Discretization,
        nu: float,
        dt: float,
        B: np.ndarray,
        yhat: np.ndarray,
        offset: int = 0,
        saddle: SaddleSolver | None = None,
        linearized: bool = False,
    ):
        self.disc = disc
        self.space = disc.space
        self.nu = nu
        self.dt = dt
        self.B = np.asarray(B)
        self.yhat = np.asarray(yhat)
        if self.B.shape[0] != self.space.n_v:
            raise DimensionError("actuator matrix has the wrong number of rows")
        if self.yhat.shape[-1] != self.space.n_v:
            raise DimensionError("reference has the wrong length")
        self.offset = offset
        self.linearized = linearized
        self._yhat_fields = None
        self.saddle = saddle or SaddleSolver(disc, nu, 1.0 / dt)

    def at_offset(self, offset: int) -> "FomModel":
        return FomModel(self.disc, self.nu, self.dt, self.B, self.yhat, offset, self.saddle, self.linearized)

    @property
    def n_state(self) -> int:
        return self.space.n_v

    @property
    def n_controls(self) -> int:
        return self.B.shape[1]

    def reference(self, n: int) -> np.ndarray:
        if self.yhat.ndim == 1:
            return self.yhat
        return self.yhat[self.offset + n]

    def _reference_fields(self, n: int) -> np.ndarray:
        if self.yhat.ndim == 1:
            if self._yhat_fields is None:
                self._yhat_fields = qp_fields(self.space, self.yhat)
            return self._yhat_fields
        return qp_fields(self.space, self.reference(n))

    def mass(self, x: np.ndarray) -> np.ndarray:
        return self.disc.M @ x

    def norm2(self, x: np.ndarray) -> float:
        return float(x @ (self.disc.M @ x))

    def norm2_rows(self, X: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", X, (self.disc.M @ X.T).T)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.saddle.solve(rhs)

    def load(self, u: np.ndarray) -> np.ndarray:
        return self.B @ u

    def load_T(self, w: np.ndarray) -> np.ndarray:
        return self.B.T @ w

    def adjoint_load_T_rows(self, W: np.ndarray) -> np.ndarray:
        return W @ self.B

    def explicit(self, v: np.ndarray, n: int) -> np.ndarray:
        """C((v + yhat) kron v) + C(v kron yhat) with the reference at step ``n``.

        The linearized model drops the quadratic term C(v kron v).
        """
        Y = self._reference_fields(n)
        V = qp_fields(self.space, v)
        Z = Y if self.linearized else V + Y
        return convection_from_fields(self.space, Z, V) + convection_from_fields(self.space, V, Y)

    def explicit_adjoint(self, v: np.ndarray, n: int, w: np.ndarray) -> np.ndarray:
        """Transpose of the derivative of :meth:`explicit` at ``v`` applied to ``w``."""
        Y = self._reference_fields(n)
        Z = Y if self.linearized else qp_fields(self.space, v) + Y
        return convection_transpose_from_fields(self.space, Z, qp_fields(self.space, w))

    # adjoint-side hooks; identical to the state side for the full model
    adjoint_solve = solve
    adjoint_mass = mass
    adjoint_load_T = load_T

    def adjoint_data(self, v: np.ndarray) -> np.ndarray:
        return self.disc.M @ v

    def adjoint_explicit(self, v: np.ndarray, n: int, w: np.ndarray) -> np.ndarray:
        return self.explicit_adjoint(v, n, w)


def step_translated(model: FomModel, v_prev: np.ndarray, u_n: np.ndarray, n: int, *, pressure: bool = False):
    """One semi-implicit step from local index ``n - 1`` to ``n``.

    Returns ``(v, p)``; the reference enters at step ``n - 1``.
    """
    if np.shape(u_n) != (model.n_controls,):
        raise DimensionError(f"control vector must have length {model.n_controls}")
    rhs = model.mass(v_prev) / model.dt + model.load(u_n) - model.explicit(v_prev, n - 1)
    if pressure:
        return model.saddle.solve(rhs, pressure=True)
    return model.solve(rhs), None


def run_translated(model, v0: np.ndarray, controls: np.ndarray, *, t0: float = 0.0, pressure: bool = False) -> Trajectory:
    """Forward sweep for ``controls`` of shape (N_T, N); works for any model
    exposing the stepping protocol (full or reduced)."""
    controls = np.asarray(controls, dtype=float)
    n_steps = controls.shape[0]
    if controls.ndim != 2 or controls.shape[1] != model.n_controls:
        raise DimensionError(f"controls must have shape (N_T, {model.n_controls})")
    if np.shape(v0) != (model.n_state,):
        raise DimensionError("initial state has the wrong length")
    grid = TimeGrid(t0, n_steps * model.dt, n_steps)
    V = np.empty((n_steps + 1, model.n_state))
    V[0] = v0
    P = None
    if pressure:
        P = np.empty((n_steps, model.space.n_p))
    for n in range(1, n_steps + 1):
        if pressure:
            V[n], P[n - 1] = step_translated(model, V[n - 1], controls[n - 1], n, pressure=True)
        else:
            rhs = model.mass(V[n - 1]) / model.dt + model.load(controls[n - 1]) - model.explicit(V[n - 1], n - 1)
            V[n] = model.solve(rhs)
    return Trajectory(grid, V, P)


def run_adjoint(model, forward: Trajectory) -> Trajectory:
    """Backward sweep of the discrete adjoint, ``w[N_T] = 0``.

    ``w[n-1]`` pairs with the control ``u^n``: the objective gradient with
    respect to ``u^n`` is ``dt * (beta u^n - B^T w[n-1])``.
    """
    V = forward.velocity
    n_steps = V.shape[0] - 1
    dt = model.dt
    W = np.zeros_like(V) if not hasattr(model, "adjoint_dim") else np.zeros((n_steps + 1, model.adjoint_dim))
    # data weight of the trapezoidal state term divided by dt
    omega = trapezoid_weights(n_steps, dt) / dt
    for n in range(n_steps, 0, -1):
        rhs = -omega[n] * model.adjoint_data(V[n])
        if n < n_steps:
            rhs += model.adjoint_mass(W[n]) / dt - model.adjoint_explicit(V[n], n, W[n])
        W[n - 1] = model.adjoint_solve(rhs)
    return Trajectory(forward.grid, W)


def solve_stationary_reference(
    disc: Discretization,
    lift: np.ndarray,
    nu: float,
    tol: float = 1e-10,
    max_iter: int = 30,
    continuation: bool = True,
    forcing: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Newton's method for the stationary Navier-Stokes system.

    ``lift`` carries the Dirichlet data (its free entries are ignored).
    Low viscosities are reached by continuation from ``nu = 0.1``.
    Converges when the Euclidean norm of the momentum residual on the free
    dofs is at most ``tol``.
    """
    space = disc.space
    f = np.zeros(space.n_v) if forcing is None else forcing
    if continuation and nu < 0.1:
        k = int(np.ceil(np.log10(0.1 / nu) / 0.25))
        nus = list(np.geomspace(0.1, nu, k + 1))
    else:
        nus = [nu]
    # Stokes start: satisfies the discrete divergence constraint, which the
    # Newton corrections then preserve
    y, p = SaddleSolver(disc, nus[0], 0.0).solve(f, lift, pressure=True)
    for stage, nu_k in enumerate(nus):
        last = stage == len(nus) - 1
        stage_tol = tol if last else max(tol, 1e-6)
        y, p = _newton(disc, lift, nu_k, f, y, p, stage_tol, max_iter)
    return y, p


def _momentum_residual(disc, nu, f, y, p):
    r = nu * (disc.A @ y) + apply_convection(disc.space, y, y) - disc.D @ p - f
    return r[disc.space.free_dofs]


def stationary_residual(
    disc: Discretization, y: np.ndarray, p: np.ndarray, nu: float, forcing: np.ndarray | None = None
) -> tuple[float, float]:
    """Euclidean norm of the stationary momentum residual on the free dofs and
    ``|D^T y|_inf``, the quantities the Newton solver drives to zero."""
    f = np.zeros(disc.space.n_v) if forcing is None else forcing
    return float(np.linalg.norm(_momentum_residual(disc, nu, f, y, p))), float(np.abs(disc.D.T @ y).max())


def _newton(disc, lift, nu, f, y, p, tol, max_iter):
    space = disc.space

    def residual(y, p):
        return _momentum_residual(disc, nu, f, y, p)

    r = residual(y, p)
    rn = np.linalg.norm(r)
    zero = np.zeros(space.n_v)
    for it in range(max_iter + 1):
        log.debug("newton nu=%.3g it=%d residual=%.3e", nu, it, rn)
        if rn <= tol:
            return y, p
        if it == max_iter:
            break
        J = assemble_convection_jacobian(space, y)
        solver = SaddleSolver(disc, nu, 0.0, extra=J)
        rfull = np.zeros(space.n_v)
        rfull[space.free_dofs] = -r
        dy, dp = solver.solve(rfull, zero, pressure=True)
        # divergence of the current iterate is already satisfied, so only the
        # momentum residual drives the damping
        step = 1.0
        while step > 1e-4:
            yn, pn = y + step * dy, p + step * dp
            rn_new = np.linalg.norm(residual(yn, pn))
            if rn_new < (1 - 1e-4 * step) * rn or rn_new <= tol:
                break
            step *= 0.5
        y, p, rn = yn, pn, rn_new
        r = residual(y, p)
    raise ConvergenceError(f"Newton did not converge at nu={nu:g}", rn)


def run_full_ns(
    disc: Discretization,
    nu: float,
    lift: np.ndarray,
    y0: np.ndarray,
    grid: TimeGrid,
    forcing: Callable[[int], np.ndarray] | np.ndarray | None = None,
    saddle: SaddleSolver | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
    store: bool = True,
) -> Trajectory:
    """Same scheme applied to the untranslated equations with Dirichlet data
    ``lift``. ``forcing`` may be a load vector or ``n -> load vector``.

    With ``store=False`` only the first and last states are kept.
    """
    space = disc.space
    dt = grid.dt
    saddle = saddle or SaddleSolver(disc, nu, 1.0 / dt)
    y = y0.copy()
    y[space.dirichlet_mask] = lift[space.dirichlet_mask]
    Y = np.empty((grid.n_steps + 1, space.n_v)) if store else None
    if store:
        Y[0] = y
    first = y.copy()
    for n in range(1, grid.n_steps + 1):
        rhs = disc.M @ y / dt - apply_convection(space, y, y)
        if forcing is not None:
            rhs += forcing(n) if callable(forcing) else forcing
        y = saddle.solve(rhs, lift)
        if store:
            Y[n] = y
        if callback is not None:
            callback(n, y)
    if not store:
        Y = np.vstack([first, y])
        return Trajectory(TimeGrid(grid.t0, grid.T, 1), Y)
    return Trajectory(grid, Y)


def cfl_number(space: FeSpace, y: np.ndarray, dt: float) -> float:
    """max |y| dt / h over the nodes, a diagnostic for the explicit convection."""
    ns = space.n_scalar
    speed = np.hypot(y[:ns], y[ns:]).max()
    return float(speed * dt / space.mesh.h_min())
