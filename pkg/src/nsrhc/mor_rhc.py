"""Receding-horizon control with POD reduced-order models.

The first horizon is solved at full order while every accepted optimizer
iterate is recorded. Those trajectories give the initial POD basis. Later
horizons solve the open-loop problem on the reduced model, apply the reduced
control to the full-order system, and take the next initial state from that
full-order trajectory. Optionally the basis is recomputed after every
horizon from the accumulated full-order snapshots.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OptimizerError, ParameterError, SolverError
from .flow import TimeGrid, Trajectory, run_adjoint, run_translated
from .optimizer import OptimizerTrace, shift_controls, solve_open_loop
from .pod import (
    RomModel,
    SnapshotSet,
    collect_snapshots,
    compute_pod,
    project_operators,
    solve_rom_open_loop,
    trajectory_snapshots,
)
from .rhc import RhcConfig, RhcResult

log = logging.getLogger(__name__)

__all__ = ["MorRhcConfig", "MorRhcResult", "run_mor_rhc", "report_speedup"]


@dataclass(frozen=True)
class MorRhcConfig(RhcConfig):
    """RHC settings plus the reduced-model options.

    ``snapshot_cap`` bounds the accumulated snapshot count (oldest columns
    are evicted first). ``dual_basis`` propagates the reduced adjoint in a
    separate adjoint POD basis instead of the state basis.
    """

    ell: int = 20
    update_basis: bool = False
    adjoint_enrichment: bool = False
    snapshot_cap: int | None = None
    dual_basis: bool = False

    def __post_init__(self):
        super().__post_init__()
        if self.ell < 1:
            raise ParameterError("ell must be at least 1")
        if self.snapshot_cap is not None and self.snapshot_cap < 1:
            raise ParameterError("snapshot_cap must be positive")

    def rhc(self) -> RhcConfig:
        return RhcConfig(self.T_inf, self.delta, self.T, self.beta, self.dt, self.sg)


@dataclass
class MorRhcResult(RhcResult):
    """:class:`nsrhc.rhc.RhcResult` plus the basis log and per-horizon
    projection data. ``basis_log`` rows are ``(horizon, ell, rank, energy)``;
    ``projection`` rows are ``(horizon, |P v0 - v0|_M, |v0|_M)``."""

    basis_log: list = field(default_factory=list)
    projection: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)
    bases: list = field(default_factory=list)

    def write_csv(self, outdir) -> None:
        super().write_csv(outdir)
        out = Path(outdir)
        with open(out / "phases.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "seconds"])
            for k in ("first_horizon", "pod_assembly", "other_horizons"):
                w.writerow([k, f"{self.timings.get(k, 0.0):.6f}"])
        with open(out / "basis_log.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["horizon", "ell", "d_V", "energy_captured"])
            for h, l, r, e in self.basis_log:
                w.writerow([h, l, r, repr(float(e))])


def _build_rom(model, cfg, S_v, S_w):
    basis = compute_pod(S_v, model.disc.M, cfg.ell, allow_smaller=True)
    wbasis = None
    if cfg.dual_basis:
        wbasis = compute_pod(S_w, model.disc.M, cfg.ell, allow_smaller=True)
    ops = project_operators(model.disc, basis, model.B, model.reference(0), adjoint_basis=wbasis)
    return basis, RomModel(ops, model.nu, model.dt, dual=cfg.dual_basis)


def run_mor_rhc(model, v0: np.ndarray, cfg: MorRhcConfig, keep_states: bool = True, progress=None) -> MorRhcResult:
    """MOR-based receding-horizon loop around the full-order ``model``.

    Horizon 0 is the full-order solve of :func:`nsrhc.rhc.run_rhc`; while
    all snapshots are zero (zero state) later horizons stay at full order as
    well. On reduced-solve failure the horizon falls back to zero control and
    the run continues; the horizon index is recorded in ``fallbacks``. If the basis
    size exceeds the snapshot rank, the largest feasible ``ell`` is used and
    logged.
    """
    if abs(model.dt - cfg.dt) > 1e-14:
        raise ParameterError("model and configuration use different time steps")
    if model.yhat.ndim != 1:
        raise ParameterError("the reduced model needs a stationary reference")
    M = model.disc.M
    mask = model.space.dirichlet_mask
    N, kd, nT = cfg.n_total, cfg.n_delta, cfg.n_horizon
    control = np.zeros((N, model.n_controls))
    V = np.empty((N + 1, model.n_state)) if keep_states else None
    norms = np.empty(N + 1)
    norms[0] = np.sqrt(model.norm2(v0))
    if keep_states:
        V[0] = v0
    timings = {"first_horizon": 0.0, "pod_assembly": 0.0, "other_horizons": 0.0}
    res = MorRhcResult(cfg.dt, cfg.beta, [], control, norms, V, [], timings, label="mor_rhc")
    t_all = time.perf_counter()

    def store(k, Vh):
        n = Vh.shape[0]
        norms[k + 1 : k + n + 1] = np.sqrt(np.maximum(model.norm2_rows(Vh), 0.0))
        if keep_states:
            V[k + 1 : k + n + 1] = Vh

    vbar = np.array(v0, dtype=float)
    warm = None
    rom = basis = None
    S_v = S_w = None
    for i, k in enumerate(cfg.horizon_starts()):
        fom = model.at_offset(k)
        n_apply = min(kd, N - k)
        if rom is None:
            # full-order horizon; a zero state has no snapshots to build a
            # basis from, so this repeats until the flow is nonzero
            t0 = time.perf_counter()
            # iterates older than the snapshot cap would be evicted anyway; each
            # block has at least nT admissible columns, plus one spare block
            keep = None if cfg.snapshot_cap is None else -(-cfg.snapshot_cap // nT) + 1
            trace = OptimizerTrace(keep_trajectories=True, max_trajectories=keep, keep_adjoints=cfg.dual_basis)
            try:
                u, traj, rep = solve_open_loop(fom, vbar, cfg.beta, nT, cfg.sg, trace=trace)
            except (OptimizerError, SolverError) as exc:
                res.status = f"failed at horizon {i}: {exc}"
                log.error("MOR-RHC %s", res.status)
                res.control, res.state_norms = control[:k], norms[: k + 1]
                res.states = V[: k + 1] if keep_states else None
                break
            timings["first_horizon" if i == 0 else "other_horizons"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            S_v, S_w = collect_snapshots(trace, cfg.dt)
            del trace
            S_v = S_v.admissible(mask).capped(cfg.snapshot_cap)
            if S_w is not None:
                S_w = S_w.capped(cfg.snapshot_cap)
            if not np.any(S_v.snapshots):
                log.info("horizon %d: snapshots are all zero; staying at full order", i)
            else:
                basis, rom = _build_rom(model, cfg, S_v, S_w)
                res.basis_log.append((i, basis.ell, basis.rank, basis.energy_captured))
                res.bases.append(basis)
            timings["pod_assembly"] += time.perf_counter() - t0
            res.reports.append(rep)
            Vfull = traj.velocity
        else:
            t0 = time.perf_counter()
            a0 = rom.project(vbar, M)
            proj_err = np.sqrt(max(model.norm2(rom.lift(a0) - vbar), 0.0))
            res.projection.append((i, proj_err, np.sqrt(model.norm2(vbar))))
            try:
                u, _, rep = solve_rom_open_loop(rom, a0, cfg.beta, nT, cfg.sg, warm_start=warm)
            except (OptimizerError, SolverError) as exc:
                log.warning("reduced solve failed on horizon %d (%s); applying zero control", i, exc)
                res.fallbacks.append(i)
                u, rep = np.zeros((nT, model.n_controls)), None
            # full-order replay; the whole horizon is needed only for snapshots
            n_replay = nT if cfg.update_basis else n_apply
            Vfull = run_translated(fom, vbar, u[:n_replay]).velocity
            timings["other_horizons"] += time.perf_counter() - t0
            res.reports.append(rep)
            if cfg.update_basis:
                t0 = time.perf_counter()
                new_v = trajectory_snapshots(Vfull, cfg.dt).admissible(mask)
                S_v = S_v.extend(new_v, cfg.snapshot_cap)
                if cfg.adjoint_enrichment:
                    W = run_adjoint(fom, Trajectory(TimeGrid(0.0, nT * cfg.dt, nT), Vfull)).velocity
                    new_w = trajectory_snapshots(W, cfg.dt, "adjoint")
                    if cfg.dual_basis:
                        S_w = S_w.extend(new_w, cfg.snapshot_cap)
                    else:
                        new_w = new_w.admissible(mask)
                        S_v = S_v.extend(SnapshotSet(new_w.snapshots, new_w.weights), cfg.snapshot_cap)
                basis, rom = _build_rom(model, cfg, S_v, S_w)
                res.basis_log.append((i, basis.ell, basis.rank, basis.energy_captured))
                res.bases.append(basis)
                timings["pod_assembly"] += time.perf_counter() - t0
        control[k : k + n_apply] = u[:n_apply]
        store(k, Vfull[1 : n_apply + 1])
        # the hand-off always comes from the full-order trajectory
        vbar = Vfull[n_apply]
        warm = shift_controls(u, kd)
        res.starts.append(k)
        if progress is not None:
            progress(i, k, rep, norms[k + n_apply])
    timings["total"] = time.perf_counter() - t_all
    return res


def report_speedup(fom: RhcResult, mor: RhcResult) -> dict:
    """Wall-time ratios ``fom / mor`` for the total and per phase.

    Both results must come from the same grid (dt, horizon starts, length).
    """
    if (
        abs(fom.dt - mor.dt) > 1e-14
        or list(fom.starts) != list(mor.starts)
        or fom.state_norms.size != mor.state_norms.size
    ):
        raise ParameterError("speedup needs two runs of the same scenario")

    def ratio(a, b):
        return a / b if b > 0 else float("inf")

    tf, tm = fom.timings, mor.timings
    return {
        "total": ratio(tf.get("total", 0.0), tm.get("total", 0.0)),
        "first_horizon": ratio(tf.get("first_horizon", 0.0), tm.get("first_horizon", 0.0)),
        "other_horizons": ratio(tf.get("other_horizons", 0.0), tm.get("other_horizons", 0.0)),
        "fom_seconds": dict(tf),
        "mor_seconds": dict(tm),
    }
