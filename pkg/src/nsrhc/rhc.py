"""Receding-horizon control of the translated system.

Each iteration solves the open-loop problem on ``(t_i, t_i + T)`` from the
current state, applies the first ``delta`` of the optimal control and hands
the state reached at ``t_i + delta`` to the next iteration. With ``v = y - yhat``
this is the same feedback as driving the untranslated system to ``yhat``.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OptimizerError, ParameterError, SolverError
from .flow import run_translated, trapezoid_weights
from .optimizer import SgOptions, shift_controls, solve_open_loop

log = logging.getLogger(__name__)

__all__ = [
    "RhcConfig",
    "RhcResult",
    "run_rhc",
    "run_uncontrolled",
    "evaluate_total_cost",
    "steps_of",
    "decay_rate",
    "horizon_count",
]


def steps_of(length: float, dt: float, what: str) -> int:
    """Number of time steps in ``length``; it must be a multiple of ``dt``."""
    k = int(round(length / dt))
    if k < 1 or abs(k * dt - length) > 1e-9 * max(1.0, length):
        raise ParameterError(f"{what} = {length} is not a positive multiple of dt = {dt}")
    return k


@dataclass(frozen=True)
class RhcConfig:
    T_inf: float
    delta: float
    T: float
    beta: float
    dt: float
    sg: SgOptions = SgOptions()

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError("beta must be positive")
        if not 0 < self.delta <= self.T:
            raise ParameterError("need 0 < delta <= T")
        if not self.T_inf > 0:
            raise ParameterError("T_inf must be positive")
        for name in ("T_inf", "delta", "T"):
            steps_of(getattr(self, name), self.dt, name)

    @property
    def n_total(self) -> int:
        return steps_of(self.T_inf, self.dt, "T_inf")

    @property
    def n_delta(self) -> int:
        return steps_of(self.delta, self.dt, "delta")

    @property
    def n_horizon(self) -> int:
        return steps_of(self.T, self.dt, "T")

    def horizon_starts(self) -> list[int]:
        """Global step index of every horizon start ``t_i``."""
        return list(range(0, self.n_total, self.n_delta))


@dataclass
class RhcResult:
    """Closed-loop record on the global grid ``t_n = n dt``, ``n = 0..N``.

    ``control[n-1]`` is the control applied on ``(t_{n-1}, t_n]``.
    ``timings`` maps phase name to wall-clock seconds.
    """

    dt: float
    beta: float
    starts: list
    control: np.ndarray
    state_norms: np.ndarray
    states: np.ndarray | None
    reports: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    status: str = "ok"
    label: str = "fom_rhc"

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.state_norms.size)

    @property
    def J_total(self) -> float:
        return evaluate_total_cost(self, self.beta)

    def cost_terms(self) -> tuple[float, float]:
        om = trapezoid_weights(self.state_norms.size - 1, self.dt)
        state = 0.5 * float(om @ self.state_norms**2)
        control = 0.5 * self.beta * self.dt * float(np.sum(self.control**2))
        return state, control

    def write_csv(self, outdir) -> None:
        """``state_norm.csv``, ``control.csv``, ``cost.csv`` and ``timing.csv``."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        t = self.times
        with open(out / "state_norm.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "norm_H"])
            w.writerows(zip(_fmt(t), _fmt(self.state_norms)))
        with open(out / "control.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"u{j + 1}" for j in range(self.control.shape[1])])
            for n in range(self.control.shape[0]):
                w.writerow(_fmt([t[n]]) + _fmt(self.control[n]))
        with open(out / "cost.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["horizon", "t_start", "J_open_loop", "grad_norm", "iterations", "evaluations", "converged"])
            for i, (k, r) in enumerate(zip(self.starts, self.reports)):
                if r is None:
                    w.writerow([i, _fmt([k * self.dt])[0], "", "", 0, 0, "fallback"])
                    continue
                w.writerow(
                    [i, _fmt([k * self.dt])[0], repr(float(r.J)), repr(float(r.gradient_norm)),
                     r.iterations, r.evaluations, int(bool(r.converged))]
                )
            s, c = self.cost_terms()
            w.writerow(["total", "", repr(s + c), "", "", "", ""])
            w.writerow(["state_term", "", repr(s), "", "", "", ""])
            w.writerow(["control_term", "", repr(c), "", "", "", ""])
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "seconds"])
            for k, v in self.timings.items():
                w.writerow([k, f"{v:.6f}"])


def _fmt(values) -> list[str]:
    return [repr(float(x)) for x in values]


def evaluate_total_cost(result: RhcResult, beta: float) -> float:
    """Closed-loop cost: trapezoid rule on ``|v|_H^2`` plus the rectangle rule
    on the piecewise-constant control, as in the open-loop objective."""
    om = trapezoid_weights(result.state_norms.size - 1, result.dt)
    return 0.5 * float(om @ result.state_norms**2) + 0.5 * beta * result.dt * float(np.sum(result.control**2))


def decay_rate(result: RhcResult, skip: float = 0.0) -> float:
    """Least-squares slope of ``log |v(t)|_H^2`` against ``t`` for ``t >= skip``."""
    t = result.times
    sel = (t >= skip) & (result.state_norms > 0)
    if sel.sum() < 2:
        return 0.0
    return float(np.polyfit(t[sel], np.log(result.state_norms[sel] ** 2), 1)[0])


def run_uncontrolled(model, v0: np.ndarray, T_inf: float, beta: float = 1.0, keep_states: bool = True) -> RhcResult:
    """The translated system with zero control on ``(0, T_inf)``."""
    n = steps_of(T_inf, model.dt, "T_inf")
    t = time.perf_counter()
    u = np.zeros((n, model.n_controls))
    traj = run_translated(model, v0, u)
    norms = np.sqrt(np.maximum(model.norm2_rows(traj.velocity), 0.0))
    return RhcResult(
        model.dt, beta, [], u, norms, traj.velocity if keep_states else None,
        timings={"total": time.perf_counter() - t}, label="uncontrolled",
    )


def run_rhc(model, v0: np.ndarray, cfg: RhcConfig, keep_states: bool = True, progress=None) -> RhcResult:
    """Full-order receding-horizon loop.

    ``model`` is a :class:`nsrhc.flow.FomModel` whose ``dt`` must equal
    ``cfg.dt``. Each horizon is warm started with the previous control
    shifted by ``delta``. The state handed to the next horizon is the stored
    trajectory value at ``t_{i+1}``. If an open-loop solve fails the loop
    stops and the partial result is flagged in ``status``.
    """
    if abs(model.dt - cfg.dt) > 1e-14:
        raise ParameterError("model and configuration use different time steps")
    N, kd, nT = cfg.n_total, cfg.n_delta, cfg.n_horizon
    control = np.zeros((N, model.n_controls))
    V = np.empty((N + 1, model.n_state)) if keep_states else None
    norms = np.empty(N + 1)
    norms[0] = np.sqrt(model.norm2(v0))
    if keep_states:
        V[0] = v0
    vbar = np.array(v0, dtype=float)
    warm = None
    reports, starts = [], []
    timings = {"first_horizon": 0.0, "pod_assembly": 0.0, "other_horizons": 0.0}
    status = "ok"
    t_all = time.perf_counter()
    for i, k in enumerate(cfg.horizon_starts()):
        t0 = time.perf_counter()
        try:
            u, traj, rep = solve_open_loop(model.at_offset(k), vbar, cfg.beta, nT, cfg.sg, warm_start=warm)
        except (OptimizerError, SolverError) as exc:
            status = f"failed at horizon {i}: {exc}"
            log.error("RHC %s", status)
            N = k
            break
        n_apply = min(kd, cfg.n_total - k)
        control[k : k + n_apply] = u[:n_apply]
        Vh = traj.velocity[1 : n_apply + 1]
        norms[k + 1 : k + n_apply + 1] = np.sqrt(np.maximum(model.norm2_rows(Vh), 0.0))
        if keep_states:
            V[k + 1 : k + n_apply + 1] = Vh
        vbar = traj.velocity[n_apply]
        warm = shift_controls(u, kd)
        reports.append(rep)
        starts.append(k)
        timings["first_horizon" if i == 0 else "other_horizons"] += time.perf_counter() - t0
        if progress is not None:
            progress(i, k, rep, norms[k + n_apply])
    timings["total"] = time.perf_counter() - t_all
    res = RhcResult(
        cfg.dt, cfg.beta, starts, control[:N], norms[: N + 1], V[: N + 1] if keep_states else None,
        reports, timings, status,
    )
    return res


def horizon_count(cfg: RhcConfig) -> int:
    return len(cfg.horizon_starts())

