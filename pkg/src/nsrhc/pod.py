"""Snapshot POD and Galerkin reduced-order models of the translated system.

Snapshots are weighted by a trapezoidal rule in time. The POD basis is the
M-orthonormal solution of the weighted best-approximation problem

    min sum_k alpha_k |z_k - sum_{i<=l} (z_k, psi_i)_M psi_i|_M^2,

computed by the method of snapshots: eigenvectors of the Gram matrix
``D^(1/2) Z^T M Z D^(1/2)``. No square root of M is ever formed.

The reduced model keeps the explicit convection split of the full scheme:

    (I/dt + nu A_l) a^n = a^(n-1)/dt + B_l u^n - L_l a^(n-1) - C_l(a^(n-1), a^(n-1))

with ``L_l = Psi^T (c(yhat, Psi .) + c(Psi ., yhat))``. The reference has
nonzero boundary values, so it is not in the span of the modes and its
coupling terms are projected exactly instead of through ``yhat_l``.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, ParameterError, SolverError
from .fem import FeSpace, modes_qp_fields, project_convection
from .flow import Discretization, Trajectory, run_translated, trapezoid_weights
from .optimizer import OptimizerTrace, SgOptions, solve_open_loop

log = logging.getLogger(__name__)

__all__ = [
    "SnapshotSet",
    "PodBasis",
    "RomOperators",
    "RomModel",
    "collect_snapshots",
    "trajectory_snapshots",
    "compute_pod",
    "project_operators",
    "run_rom_translated",
    "solve_rom_open_loop",
    "save_basis",
    "load_basis",
    "MAX_ELL",
]

MAX_ELL = 128
_DEDUP_TOL = 1e-12
_GRAM_CHUNK = 300


@dataclass
class SnapshotSet:
    """Snapshot columns ``Z`` (n_v, N_s) with positive quadrature weights."""

    snapshots: np.ndarray
    weights: np.ndarray
    kind: str = "state"

    def __post_init__(self):
        self.snapshots = np.asarray(self.snapshots, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.snapshots.ndim != 2 or self.snapshots.shape[1] != self.weights.size:
            raise DimensionError("one weight per snapshot column is required")
        if np.any(self.weights <= 0):
            raise ParameterError("snapshot weights must be positive")
        if self.kind not in ("state", "adjoint"):
            raise ParameterError(f"unknown snapshot kind {self.kind!r}")

    @property
    def count(self) -> int:
        return self.weights.size

    def extend(self, other: "SnapshotSet", cap: int | None = None) -> "SnapshotSet":
        """Append ``other``; with ``cap`` the oldest columns are evicted first."""
        Z = np.hstack([self.snapshots, other.snapshots])
        w = np.concatenate([self.weights, other.weights])
        return SnapshotSet(Z, w, self.kind).capped(cap)

    def capped(self, cap: int | None) -> "SnapshotSet":
        """Keep at most the ``cap`` newest columns."""
        if cap is None or self.count <= cap:
            return self
        return SnapshotSet(self.snapshots[:, -cap:], self.weights[-cap:], self.kind)

    def admissible(self, dirichlet_mask: np.ndarray, tol: float = 1e-12) -> "SnapshotSet":
        """Drop columns that violate the homogeneous Dirichlet condition.

        Only an initial state such as ``-yhat`` does; every computed step
        vanishes on the Dirichlet dofs, and the reduced model assumes modes
        that do as well.
        """
        Z = self.snapshots
        bad = np.abs(Z[dirichlet_mask]).max(axis=0, initial=0.0) > tol * np.abs(Z).max(axis=0, initial=0.0)
        if not np.any(bad):
            return self
        if np.all(bad):
            raise ParameterError("no snapshot satisfies the homogeneous boundary condition")
        return SnapshotSet(Z[:, ~bad], self.weights[~bad], self.kind)


def trajectory_snapshots(V: np.ndarray, dt: float, kind: str = "state") -> SnapshotSet:
    """Snapshots of one trajectory (rows are time steps) with trapezoid weights."""
    V = np.asarray(V)
    return SnapshotSet(V.T.copy(), trapezoid_weights(V.shape[0] - 1, dt), kind)


def collect_snapshots(trace: OptimizerTrace, dt: float) -> tuple[SnapshotSet, SnapshotSet]:
    """State and adjoint snapshot sets from a recorded optimizer run.

    Columns are ordered iterate-major, time-minor. Every iterate block
    carries its own trapezoidal weights. The adjoint set is None when the
    trace did not keep adjoints.
    """
    if not trace.keep_trajectories or not trace.states:
        raise ParameterError("optimizer trace holds no trajectories")
    Vs = np.vstack(trace.states)
    w = np.concatenate([trapezoid_weights(s.shape[0] - 1, dt) for s in trace.states])
    S_w = None
    if trace.keep_adjoints:
        S_w = SnapshotSet(np.vstack(trace.adjoints).T.copy(), w.copy(), "adjoint")
    return SnapshotSet(Vs.T.copy(), w, "state"), S_w


@dataclass
class PodBasis:
    """M-orthonormal modes with their singular values.

    ``singular_values`` holds the ``ell`` retained values;
    ``spectrum`` holds all ``rank`` nonzero ones.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    spectrum: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def ell(self) -> int:
        return self.modes.shape[1]

    @property
    def rank(self) -> int:
        return self.spectrum.size

    @property
    def energy_captured(self) -> float:
        s2 = self.spectrum**2
        return float(np.sum(s2[: self.ell]) / np.sum(s2))

    def orthonormality_error(self, M) -> float:
        return float(np.abs(self.modes.T @ (M @ self.modes) - np.eye(self.ell)).max())


def _dedup(G: np.ndarray, w: np.ndarray):
    """Merge near-duplicate and drop zero columns given their M-Gram matrix.

    Returns the kept indices and their merged weights.
    """
    d = np.diag(G).copy()
    scale = max(d.max(), 0.0)
    keep, weights = [], []
    for k in range(d.size):
        if d[k] <= (_DEDUP_TOL**2) * scale:
            continue  # zero column
        if keep:
            idx = np.array(keep)
            dist2 = d[idx] + d[k] - 2.0 * G[idx, k]
            hit = np.nonzero(dist2 <= (_DEDUP_TOL**2) * np.maximum(d[idx], d[k]))[0]
            if hit.size:
                weights[hit[0]] += w[k]
                continue
        keep.append(k)
        weights.append(w[k])
    return np.array(keep, dtype=int), np.array(weights)


def _cholqr2(Q: np.ndarray, M) -> np.ndarray:
    for _ in range(2):
        R = sla.cholesky(Q.T @ (M @ Q))
        Q = sla.solve_triangular(R, Q.T, trans="T").T
    return Q


def _gram_modes(Y: np.ndarray, MY: np.ndarray):
    """Eigen-pairs of the Gram matrix of the already weighted columns ``Y``."""
    G = Y.T @ MY
    G = 0.5 * (G + G.T)
    lam, U = np.linalg.eigh(G)
    lam, U = lam[::-1], np.ascontiguousarray(U[:, ::-1])
    tol = max(lam[0], 0.0) * G.shape[0] * np.finfo(float).eps * 10
    r = int(np.sum(lam > tol))
    sig = np.sqrt(lam[:r])
    return sig, (Y @ U[:, :r]) / sig


def compute_pod(snaps: SnapshotSet, M, ell: int, allow_smaller: bool = False) -> PodBasis:
    """Weighted POD of ``snaps`` in the M inner product, truncated to ``ell`` modes.

    Near-duplicate columns are merged (weights added) before the Gram
    eigen-solve. Large snapshot sets are processed in column blocks: the
    basis of the blocks seen so far is carried as ``U diag(sigma)``, whose
    Gram matrix equals that of the original columns, so the result is the
    same as a single solve.

    Raises
    ------
    ParameterError
        If ``ell`` exceeds the numerical rank of the snapshot set (the
        message reports the rank) or :data:`MAX_ELL`.
    """
    if not 1 <= ell <= MAX_ELL:
        raise ParameterError(f"ell must lie in [1, {MAX_ELL}]")
    Z, w = snaps.snapshots, snaps.weights
    if Z.shape[0] != M.shape[0]:
        raise DimensionError("snapshot length does not match the mass matrix")
    carry = None  # U * sigma of blocks processed so far
    for start in range(0, Z.shape[1], _GRAM_CHUNK):
        Zb = Z[:, start : start + _GRAM_CHUNK]
        MZ = M @ Zb
        keep, wk = _dedup(Zb.T @ MZ, w[start : start + _GRAM_CHUNK])
        if keep.size == 0:
            continue
        sw = np.sqrt(wk)
        Y = Zb[:, keep] * sw
        MY = MZ[:, keep] * sw
        if carry is not None:
            Y = np.hstack([carry, Y])
            MY = np.hstack([M @ carry, MY])
        spectrum, U = _gram_modes(Y, MY)
        carry = U * spectrum
    if carry is None:
        raise ParameterError("snapshot set has rank 0")
    rank = spectrum.size
    if ell > rank and allow_smaller:
        log.warning("snapshot rank %d is below ell = %d; using %d modes", rank, ell, rank)
        ell = rank
    if ell > rank:
        raise ParameterError(f"ell = {ell} exceeds the snapshot rank d_V = {rank}")
    modes = _cholqr2(carry[:, :ell] / spectrum[:ell], M)
    meta = {"snapshots": int(snaps.count), "kind": snaps.kind}
    return PodBasis(modes, spectrum[:ell].copy(), spectrum, meta)


# --------------------------------------------------------------------------
# reduced operators and model


@dataclass
class RomOperators:
    """Galerkin operators on ``ell`` M-orthonormal modes.

    ``C_l[i, j, k] = psi_i . c(psi_j, psi_k)``; ``L_l`` is the exact
    projection of the reference coupling terms and ``yhat_l = Psi^T M yhat``.
    The ``*_w`` entries are set only for a separate adjoint basis.
    """

    M_l: np.ndarray
    A_l: np.ndarray
    B_l: np.ndarray
    C_l: np.ndarray
    L_l: np.ndarray
    yhat_l: np.ndarray
    Psi: np.ndarray
    adjoint: dict | None = None

    @property
    def ell(self) -> int:
        return self.M_l.shape[0]

    def convection(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``C_l (a kron b)``."""
        l = self.ell
        return (self.C_l.reshape(l * l, l) @ b).reshape(l, l) @ a


def _reference_coupling(space: FeSpace, test: np.ndarray, trial: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """``test^T (c(yhat, trial .) + c(trial ., yhat))`` as a dense matrix."""
    w = space.qp_weights[:, None]
    T = modes_qp_fields(space, test)
    P = modes_qp_fields(space, trial)
    Y = modes_qp_fields(space, yhat[:, None])[:, :, 0][:, :, None]
    fx = Y[0] * P[2] + Y[1] * P[4] + P[0] * Y[2] + P[1] * Y[4]
    fy = Y[0] * P[3] + Y[1] * P[5] + P[0] * Y[3] + P[1] * Y[5]
    return (T[0] * w).T @ fx + (T[1] * w).T @ fy


def project_operators(
    disc: Discretization,
    basis: PodBasis,
    B: np.ndarray,
    yhat: np.ndarray,
    adjoint_basis: PodBasis | None = None,
) -> RomOperators:
    """Reduced operators for the translated system around a stationary ``yhat``.

    ``B`` is the actuator load matrix, so ``B_l = Psi^T B`` is the projected
    control operator. With ``adjoint_basis`` the operators needed to
    propagate a reduced adjoint in a second basis are added.
    """
    space = disc.space
    Psi = basis.modes
    if Psi.shape[0] != space.n_v:
        raise DimensionError("basis does not match the discretization")
    yhat = np.asarray(yhat)
    if yhat.ndim != 1:
        raise ParameterError("reduced models require a stationary reference")
    MPsi = disc.M @ Psi
    M_l = Psi.T @ MPsi
    A_l = Psi.T @ (disc.A @ Psi)
    A_l = 0.5 * (A_l + A_l.T)
    ops = RomOperators(
        M_l=M_l,
        A_l=A_l,
        B_l=Psi.T @ B,
        C_l=project_convection(space, Psi, Psi, Psi),
        L_l=_reference_coupling(space, Psi, Psi, yhat),
        yhat_l=MPsi.T @ yhat,
        Psi=Psi,
    )
    if adjoint_basis is not None:
        Phi = adjoint_basis.modes
        A_w = Phi.T @ (disc.A @ Phi)
        ops.adjoint = {
            "Phi": Phi,
            "A_w": 0.5 * (A_w + A_w.T),
            "B_w": Phi.T @ B,
            "mix": Phi.T @ MPsi,  # Phi^T M Psi
            "L_w": _reference_coupling(space, Phi, Phi, yhat),
            # T1[i, j, k] = phi_i . c(phi_j, psi_k), T2[i, j, k] = phi_i . c(psi_j, phi_k)
            "T1": project_convection(space, Phi, Phi, Psi),
            "T2": project_convection(space, Phi, Psi, Phi),
        }
    return ops


def _finite(x):
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite reduced state")
    return x


class RomModel:
    """Reduced translated dynamics with the same stepping protocol as
    :class:`nsrhc.flow.FomModel`, so the forward/adjoint sweeps and the
    optimizer apply unchanged.

    By default the adjoint lives in the state basis and the reduced gradient
    is exact. With ``dual=True`` the adjoint is propagated in the separate
    adjoint basis stored in ``ops.adjoint``.
    """

    def __init__(self, ops: RomOperators, nu: float, dt: float, dual: bool = False, linearized: bool = False):
        self.ops = ops
        self.nu = nu
        self.dt = dt
        self.linearized = linearized
        l = ops.ell
        K = ops.M_l / dt + nu * ops.A_l
        try:
            self._lu = sla.cho_factor(K)
        except np.linalg.LinAlgError as exc:
            raise SolverError("reduced system matrix is not positive definite") from exc
        self._C2 = ops.C_l.reshape(l * l, l)
        self.dual = dual
        if dual:
            if ops.adjoint is None:
                raise ParameterError("dual mode needs operators built with an adjoint basis")
            ad = ops.adjoint
            self._lu_w = sla.cho_factor(np.eye(ad["A_w"].shape[0]) / dt + nu * ad["A_w"])

    @property
    def n_state(self) -> int:
        return self.ops.ell

    @property
    def n_controls(self) -> int:
        return self.ops.B_l.shape[1]

    @property
    def adjoint_dim(self) -> int:
        return self.ops.adjoint["A_w"].shape[0] if self.dual else self.ops.ell

    def mass(self, a):
        return self.ops.M_l @ a

    def norm2(self, a) -> float:
        return float(a @ (self.ops.M_l @ a))

    def norm2_rows(self, X):
        return np.einsum("ij,ij->i", X, X @ self.ops.M_l)

    def solve(self, rhs):
        return sla.cho_solve(self._lu, _finite(rhs))

    def load(self, u):
        return self.ops.B_l @ u

    def load_T(self, w):
        return self.ops.B_l.T @ w

    def explicit(self, a, n):
        out = self.ops.L_l @ a
        if not self.linearized:
            out += (self._C2 @ a).reshape(self.ops.ell, self.ops.ell) @ a
        return out

    def explicit_adjoint(self, a, n, w):
        out = self.ops.L_l.T @ w
        if not self.linearized:
            l = self.ops.ell
            Tw = (w @ self.ops.C_l.reshape(l, l * l)).reshape(l, l)  # sum_i w_i C[i, j, k]
            out += Tw @ a + Tw.T @ a
        return out

    # adjoint hooks
    def adjoint_solve(self, rhs):
        return sla.cho_solve(self._lu_w if self.dual else self._lu, _finite(rhs))

    def adjoint_mass(self, w):
        return w if self.dual else self.ops.M_l @ w

    def adjoint_data(self, a):
        return self.ops.adjoint["mix"] @ a if self.dual else self.ops.M_l @ a

    def adjoint_explicit(self, a, n, w):
        if not self.dual:
            return self.explicit_adjoint(a, n, w)
        ad = self.ops.adjoint
        J = ad["L_w"].copy()
        if not self.linearized:
            # d/dd of c(d, Psi a) + c(Psi a, d) in the adjoint basis
            J += np.tensordot(ad["T1"], a, axes=([2], [0])) + np.tensordot(ad["T2"], a, axes=([1], [0]))
        return J.T @ w

    def adjoint_load_T(self, w):
        return (self.ops.adjoint["B_w"] if self.dual else self.ops.B_l).T @ w

    def adjoint_load_T_rows(self, W):
        return W @ (self.ops.adjoint["B_w"] if self.dual else self.ops.B_l)

    def project(self, v: np.ndarray, M) -> np.ndarray:
        """Reduced coordinates ``Psi^T M v`` of a full state."""
        return self.ops.Psi.T @ (M @ v)

    def lift(self, a: np.ndarray) -> np.ndarray:
        return a @ self.ops.Psi.T if a.ndim == 2 else self.ops.Psi @ a


def run_rom_translated(model: RomModel, a0: np.ndarray, controls: np.ndarray, t0: float = 0.0) -> Trajectory:
    """Reduced forward sweep (no pressure: the modes are discretely divergence free)."""
    return run_translated(model, a0, controls, t0=t0)


def solve_rom_open_loop(
    model: RomModel,
    a0: np.ndarray,
    beta: float,
    n_steps: int,
    opts: SgOptions = SgOptions(),
    warm_start: np.ndarray | None = None,
    raise_on_failure: bool = True,
):
    """Open-loop problem for the reduced model; see :func:`nsrhc.optimizer.solve_open_loop`."""
    return solve_open_loop(model, a0, beta, n_steps, opts, warm_start=warm_start, raise_on_failure=raise_on_failure)


# --------------------------------------------------------------------------
# basis persistence

_MAGIC = b"PODB"


def save_basis(basis: PodBasis, path, provenance: dict | None = None) -> None:
    """Write ``basis`` to ``path`` and a JSON sidecar ``path + '.json'``.

    Binary layout (little-endian): ``b'PODB'``, then ``n_v, ell, d_V`` as
    int64, then the ``d_V`` singular values, then the modes column-major, all
    IEEE-754 doubles.
    """
    path = Path(path)
    n_v, ell = basis.modes.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqq", n_v, ell, basis.rank))
        fh.write(basis.spectrum.astype("<f8").tobytes())
        fh.write(np.asfortranarray(basis.modes).astype("<f8").tobytes(order="F"))
    side = dict(basis.meta)
    side.update(provenance or {})
    side.update({"n_v": n_v, "ell": ell, "rank": basis.rank, "energy_captured": basis.energy_captured})
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def load_basis(path) -> PodBasis:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ParameterError(f"{path}: not a POD basis file")
    n_v, ell, rank = struct.unpack("<qqq", raw[4:28])
    off = 28
    spectrum = np.frombuffer(raw, "<f8", rank, off).copy()
    off += 8 * rank
    if len(raw) != off + 8 * n_v * ell:
        raise ParameterError(f"{path}: truncated basis file")
    modes = np.frombuffer(raw, "<f8", n_v * ell, off).reshape((n_v, ell), order="F").copy()
    meta = {}
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return PodBasis(modes, spectrum[:ell].copy(), spectrum, meta)
