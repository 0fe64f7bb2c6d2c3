"""Fast invariant checks run by ``nsrhc check``.

Each check builds a tiny problem, so the whole suite takes a few seconds. It
is a smoke test of an installation, not a replacement for the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fem import Rect, apply_convection, boundary_values, build_actuators, build_space
from .flow import FomModel, discretize, run_translated, solve_stationary_reference, stationary_residual
from .mesh import generate_rectangle
from .optimizer import SgOptions, evaluate_gradient, evaluate_objective, solve_open_loop
from .pod import RomModel, compute_pod, project_operators, trajectory_snapshots

__all__ = ["CheckResult", "run_checks"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<32} value={self.value:.3e}  tol={self.tol:.1e}  ({self.seconds:.2f}s)"


def _problem(nu=0.05, dt=0.02, n=4):
    mesh = generate_rectangle(0.0, 1.0, 0.0, 1.0, n, n)
    space = build_space(mesh, {"walls"})
    disc = discretize(space)
    lift = boundary_values(space, {"walls": lambda x, y: (y - 0.5, 0.5 - x)})
    yhat, phat = solve_stationary_reference(disc, lift, nu, 1e-12)
    acts = build_actuators(space, Rect(0.25, 0.75, 0.25, 0.75), 2, 2)
    model = FomModel(disc, nu, dt, acts.B, yhat)
    return disc, yhat, phat, model


def _gradient(disc, yhat, phat, model, rng):
    u = 0.3 * rng.standard_normal((10, model.n_controls))
    v0 = -yhat
    beta = 1e-2
    J, traj = evaluate_objective(model, v0, u, beta)
    g, _ = evaluate_gradient(model, traj, u, beta)
    worst = 0.0
    for _ in range(5):
        d = rng.standard_normal(u.shape)
        h = 1e-5
        fd = (evaluate_objective(model, v0, u + h * d, beta)[0] - evaluate_objective(model, v0, u - h * d, beta)[0]) / (2 * h)
        worst = max(worst, abs(fd - np.sum(g * d)) / abs(fd))
    return worst


def run_checks(seed: int = 0) -> list[CheckResult]:
    """Run the invariant suite; returns one result per check."""
    rng = np.random.default_rng(seed)
    out = []

    def record(name, fn, tol):
        t = time.perf_counter()
        value = float(fn())
        out.append(CheckResult(name, bool(value <= tol), value, tol, time.perf_counter() - t))

    t = time.perf_counter()
    disc, yhat, phat, model = _problem()
    res, div = stationary_residual(disc, yhat, phat, model.nu)
    out.append(CheckResult("stationary residual", res <= 1e-10, res, 1e-10, time.perf_counter() - t))
    out.append(CheckResult("stationary divergence", div <= 1e-10, div, 1e-10, 0.0))

    record("adjoint gradient vs FD", lambda: _gradient(disc, yhat, phat, model, rng), 1e-5)

    def zero_fom():
        V = run_translated(model, np.zeros(model.n_state), np.zeros((100, model.n_controls))).velocity
        return float(np.abs(V).max())

    record("FOM zero fixed point", zero_fom, 1e-12)

    def zero_rhc():
        u, _, _ = solve_open_loop(model, np.zeros(model.n_state), 1e-2, 10, SgOptions())
        return float(np.abs(u).max())

    record("open loop at zero state", zero_rhc, 1e-12)

    state = {}

    def pod():
        V = run_translated(model, -yhat, 0.5 * rng.standard_normal((20, model.n_controls))).velocity
        snaps = trajectory_snapshots(V[1:], model.dt).admissible(disc.space.dirichlet_mask)
        basis = compute_pod(snaps, disc.M, 5)
        Z = snaps.snapshots
        R = Z - basis.modes @ (basis.modes.T @ (disc.M @ Z))
        lhs = float(np.sum(snaps.weights * np.einsum("ij,ij->j", R, disc.M @ R)))
        rhs = float(np.sum(basis.spectrum[5:] ** 2))
        state["basis"] = basis
        return max(basis.orthonormality_error(disc.M), abs(lhs - rhs))

    record("POD orthonormality/identity", pod, 1e-10)

    def rom():
        basis = state["basis"]
        ops = project_operators(disc, basis, model.B, yhat)
        err = float(np.abs(ops.M_l - np.eye(ops.ell)).max())
        for _ in range(5):
            a, b = rng.standard_normal((2, ops.ell))
            ref = basis.modes.T @ apply_convection(disc.space, basis.modes @ a, basis.modes @ b)
            err = max(err, float(np.abs(ops.convection(a, b) - ref).max()))
        state["rom"] = RomModel(ops, model.nu, model.dt)
        return err

    record("ROM projection consistency", rom, 1e-10)

    def zero_rom():
        rm = state["rom"]
        A = run_translated(rm, np.zeros(rm.n_state), np.zeros((100, rm.n_controls))).velocity
        return float(np.abs(A).max())

    record("ROM zero fixed point", zero_rom, 1e-12)
    return out
