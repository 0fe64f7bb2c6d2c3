"""Taylor-Hood P2/P1 discretization: DOF maps, matrices, convection, actuators.

Velocity coefficient vectors are stored component-blocked: entries
``0..n_s-1`` hold the x-component at the P2 nodes (vertices first, then edge
midpoints), entries ``n_s..2 n_s-1`` the y-component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ParameterError
from .mesh import Mesh

__all__ = [
    "QUAD_POINTS",
    "QUAD_WEIGHTS",
    "FeSpace",
    "Rect",
    "ActuatorSet",
    "build_space",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_divergence",
    "assemble_convection_jacobian",
    "apply_convection",
    "apply_convection_jacobian",
    "apply_convection_transpose_weighted",
    "qp_fields",
    "modes_qp_fields",
    "convection_from_fields",
    "convection_transpose_from_fields",
    "project_convection",
    "build_actuators",
    "build_actuator_layout",
    "interpolate",
    "boundary_values",
    "p2_basis",
]

# 7-point degree-5 rule (Radon), barycentric points, weights sum to one.
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
QUAD_POINTS = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_a1, _b1, _b1],
        [_b1, _a1, _b1],
        [_b1, _b1, _a1],
        [_a2, _b2, _b2],
        [_b2, _a2, _b2],
        [_b2, _b2, _a2],
    ]
)
QUAD_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def p2_basis(lam: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points ``lam`` (..., 3) -> (..., 6).

    Order: three vertex functions, then edges opposite vertex 0, 1, 2.
    """
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1],
        axis=-1,
    )


def _p2_dlam(lam: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 shape functions w.r.t. the barycentrics, (..., 6, 3)."""
    out = np.zeros(lam.shape[:-1] + (6, 3))
    for a in range(3):
        out[..., a, a] = 4 * lam[..., a] - 1
    for a, (i, j) in enumerate([(1, 2), (2, 0), (0, 1)]):
        out[..., 3 + a, i] = 4 * lam[..., j]
        out[..., 3 + a, j] = 4 * lam[..., i]
    return out


@dataclass(frozen=True, eq=False)
class FeSpace:
    """P2 velocity / P1 pressure space on a mesh.

    ``dirichlet_labels`` lists the boundary tags on which the velocity is
    prescribed; everything else is a natural (do-nothing) boundary.
    """

    mesh: Mesh
    dirichlet_labels: frozenset[str] = field(default_factory=frozenset)

    @cached_property
    def n_scalar(self) -> int:
        return self.mesh.n_vertices + len(self.mesh.edges)

    @property
    def n_v(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_p(self) -> int:
        return self.mesh.n_vertices

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(m, 6) scalar P2 node indices per triangle."""
        return np.hstack([self.mesh.triangles, self.mesh.n_vertices + self.mesh.triangle_edges()])

    @cached_property
    def node_coordinates(self) -> np.ndarray:
        v = self.mesh.vertices
        mid = 0.5 * (v[self.mesh.edges[:, 0]] + v[self.mesh.edges[:, 1]])
        return np.vstack([v, mid])

    @property
    def dof_coordinates(self) -> np.ndarray:
        return np.vstack([self.node_coordinates, self.node_coordinates])

    @cached_property
    def _boundary_nodes_by_label(self) -> dict[str, np.ndarray]:
        m = self.mesh
        nv = m.n_vertices
        ukey = m.edges[:, 0] * nv + m.edges[:, 1]
        out = {}
        for tag in m.tags:
            be = np.sort(m.edges_with_tag(tag), axis=1)
            eidx = np.searchsorted(ukey, be[:, 0] * nv + be[:, 1])
            out[tag] = np.unique(np.concatenate([be.ravel(), nv + eidx]))
        return out

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        nodes = [self._boundary_nodes_by_label[t] for t in sorted(self.dirichlet_labels)]
        return np.unique(np.concatenate(nodes)) if nodes else np.zeros(0, dtype=np.int64)

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_scalar, dtype=bool)
        mask[self.dirichlet_nodes] = True
        return np.concatenate([mask, mask])

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)

    @property
    def has_natural_boundary(self) -> bool:
        return bool(self.mesh.tags - set(self.dirichlet_labels))

    # geometry and quadrature data, shared by every assembly routine
    @cached_property
    def areas(self) -> np.ndarray:
        return self.mesh.signed_areas()

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """(m, 3, 2) gradients of the barycentric coordinates."""
        p = self.mesh.vertices[self.mesh.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.areas
        g = np.empty(p.shape[:1] + (3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            g[:, a, 0] = (y[:, b] - y[:, c]) / two_a
            g[:, a, 1] = (x[:, c] - x[:, b]) / two_a
        return g

    @cached_property
    def phi_q(self) -> np.ndarray:
        """(7, 6) P2 basis values at the quadrature points."""
        return p2_basis(QUAD_POINTS)

    @cached_property
    def psi_q(self) -> np.ndarray:
        """(7, 3) P1 basis values at the quadrature points."""
        return QUAD_POINTS.copy()

    @cached_property
    def grad_phi_q(self) -> np.ndarray:
        """(m, 7, 6, 2) physical gradients of the P2 basis at quadrature points."""
        dl = _p2_dlam(QUAD_POINTS)
        return np.einsum("qal,eld->eqad", dl, self.grad_lambda)

    @cached_property
    def wdet(self) -> np.ndarray:
        """(m, 7) quadrature weights scaled by the triangle area."""
        return self.areas[:, None] * QUAD_WEIGHTS[None, :]

    @cached_property
    def _qp_ops(self):
        nq = self.wdet.size
        rows = np.repeat(np.arange(nq), 6)
        cols = np.repeat(self.cell_dofs, 7, axis=0).ravel()
        shape = (nq, self.n_scalar)
        ev = sp.csr_matrix((np.tile(self.phi_q, (len(self.areas), 1)).ravel(), (rows, cols)), shape=shape)
        g = self.grad_phi_q.reshape(nq, 6, 2)
        dx = sp.csr_matrix((g[..., 0].ravel(), (rows, cols)), shape=shape)
        dy = sp.csr_matrix((g[..., 1].ravel(), (rows, cols)), shape=shape)
        eye = sp.identity(2, format="csr")
        full = sp.vstack([sp.kron(eye, ev), sp.kron(eye, dx), sp.kron(eye, dy)], format="csr")
        return full, full.T.tocsr(), sp.kron(eye, ev, format="csr").T.tocsr()

    @property
    def qp_fields_op(self) -> sp.csr_matrix:
        """(6 nq, n_v) map from velocity coefficients to quadrature-point data.

        Row blocks: values (x, y), x-derivatives (x, y), y-derivatives (x, y).
        """
        return self._qp_ops[0]

    @property
    def qp_fields_op_T(self) -> sp.csr_matrix:
        return self._qp_ops[1]

    @property
    def qp_values_op_T(self) -> sp.csr_matrix:
        return self._qp_ops[2]

    @property
    def n_qp(self) -> int:
        return self.wdet.size

    @cached_property
    def qp_weights(self) -> np.ndarray:
        return self.wdet.ravel()

    def split(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell local coefficients of both components, each (m, 6, ...)."""
        ns = self.n_scalar
        return v[:ns][self.cell_dofs], v[ns:][self.cell_dofs]

    def scatter(self, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
        ns = self.n_scalar
        idx = self.cell_dofs.ravel()
        out = np.empty(2 * ns)
        out[:ns] = np.bincount(idx, fx.ravel(), minlength=ns)
        out[ns:] = np.bincount(idx, fy.ravel(), minlength=ns)
        return out

    def check_vector(self, *vs) -> None:
        for v in vs:
            if np.shape(v) != (self.n_v,):
                raise DimensionError(f"expected velocity vector of length {self.n_v}, got shape {np.shape(v)}")


def build_space(mesh: Mesh, dirichlet_labels: Sequence[str] | set[str]) -> FeSpace:
    labels = frozenset(dirichlet_labels)
    unknown = labels - mesh.tags
    if unknown:
        raise ParameterError(f"unknown boundary labels {sorted(unknown)}; mesh has {sorted(mesh.tags)}")
    return FeSpace(mesh, labels)


def interpolate(space: FeSpace, f: Callable[[np.ndarray, np.ndarray], tuple]) -> np.ndarray:
    """Nodal P2 interpolant of a vector field ``f(x, y) -> (fx, fy)``."""
    x, y = space.node_coordinates.T
    fx, fy = f(x, y)
    return np.concatenate([np.broadcast_to(fx, x.shape), np.broadcast_to(fy, x.shape)]).astype(float)


def boundary_values(space: FeSpace, data: Mapping[str, Callable]) -> np.ndarray:
    """Velocity vector that is zero except on Dirichlet nodes, where it
    interpolates ``data[label]``. Labels missing from ``data`` get zero."""
    out = np.zeros(space.n_v)
    ns = space.n_scalar
    x, y = space.node_coordinates.T
    for tag in sorted(space.dirichlet_labels):
        f = data.get(tag)
        if f is None:
            continue
        nodes = space._boundary_nodes_by_label[tag]
        fx, fy = f(x[nodes], y[nodes])
        out[nodes] = fx
        out[ns + nodes] = fy
    return out


def _assemble_scalar(space: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    d = space.cell_dofs
    rows = np.repeat(d, 6, axis=1).ravel()
    cols = np.tile(d, (1, 6)).ravel()
    n = space.n_scalar
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_mass(space: FeSpace) -> sp.csr_matrix:
    local = np.einsum("eq,qa,qb->eab", space.wdet, space.phi_q, space.phi_q)
    # exact entry-wise symmetry regardless of summation order
    local = 0.5 * (local + local.transpose(0, 2, 1))
    ms = _assemble_scalar(space, local)
    return sp.block_diag([ms, ms], format="csr")


def assemble_stiffness(space: FeSpace) -> sp.csr_matrix:
    g = space.grad_phi_q
    local = np.einsum("eq,eqad,eqbd->eab", space.wdet, g, g)
    local = 0.5 * (local + local.transpose(0, 2, 1))
    ks = _assemble_scalar(space, local)
    return sp.block_diag([ks, ks], format="csr")


def assemble_divergence(space: FeSpace) -> sp.csr_matrix:
    """D with entries (xi_j, div phi_i), shape (n_v, n_p)."""
    g = space.grad_phi_q
    d = space.cell_dofs
    ns = space.n_scalar
    tri = space.mesh.triangles
    blocks = []
    for comp in range(2):
        local = np.einsum("eq,qj,eqa->eaj", space.wdet, space.psi_q, g[..., comp])
        rows = (comp * ns + np.repeat(d, 3, axis=1)).ravel()
        cols = np.tile(tri, (1, 6)).ravel()
        blocks.append((local.ravel(), rows, cols))
    vals = np.concatenate([b[0] for b in blocks])
    rows = np.concatenate([b[1] for b in blocks])
    cols = np.concatenate([b[2] for b in blocks])
    return sp.csr_matrix((vals, (rows, cols)), shape=(space.n_v, space.n_p))


def _qp_values(space: FeSpace, v: np.ndarray):
    """Values (2, m, 7) and gradients (2, m, 7, 2) of a velocity field at qps."""
    vx, vy = space.split(v)
    val = np.stack([vx @ space.phi_q.T, vy @ space.phi_q.T])
    grad = np.stack(
        [np.einsum("eqad,ea->eqd", space.grad_phi_q, vx), np.einsum("eqad,ea->eqd", space.grad_phi_q, vy)]
    )
    return val, grad


def qp_fields(space: FeSpace, v: np.ndarray) -> np.ndarray:
    """(6, nq) values and partial derivatives of a velocity field at all
    quadrature points: ``[vx, vy, dx vx, dx vy, dy vx, dy vy]``."""
    return (space.qp_fields_op @ v).reshape(6, -1)


def convection_from_fields(space: FeSpace, Y: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``apply_convection`` given precomputed :func:`qp_fields` of both arguments."""
    w = space.qp_weights
    integ = np.concatenate([(Y[0] * V[2] + Y[1] * V[4]) * w, (Y[0] * V[3] + Y[1] * V[5]) * w])
    return space.qp_values_op_T @ integ


def convection_transpose_from_fields(space: FeSpace, Z: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``apply_convection_transpose_weighted`` from fields of ``y`` (all six
    rows) and of ``w`` (value rows are enough)."""
    wx = W[0] * space.qp_weights
    wy = W[1] * space.qp_weights
    r = np.concatenate(
        [
            Z[2] * wx + Z[3] * wy,  # (grad y)^T w, x test component
            Z[4] * wx + Z[5] * wy,
            Z[0] * wx,  # (y . grad phi) w
            Z[0] * wy,
            Z[1] * wx,
            Z[1] * wy,
        ]
    )
    return space.qp_fields_op_T @ r


def apply_convection(space: FeSpace, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Load vector of ((y . grad) v, phi_i), i.e. C (y kron v) without the tensor."""
    space.check_vector(y, v)
    return convection_from_fields(space, qp_fields(space, y), qp_fields(space, v))


def apply_convection_jacobian(space: FeSpace, z: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Derivative of ``apply_convection(space, v, v)`` at ``v = z`` in direction ``d``:
    ``c(d, z) + c(z, d)``."""
    return apply_convection(space, d, z) + apply_convection(space, z, d)


def apply_convection_transpose_weighted(space: FeSpace, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Transpose of :func:`apply_convection_jacobian` at ``y`` applied to ``w``.

    Entry ``i`` is ``((grad y)^T w, phi_i) + ((y . grad) phi_i, w)``.
    """
    space.check_vector(y, w)
    return convection_transpose_from_fields(space, qp_fields(space, y), qp_fields(space, w))


def assemble_convection_jacobian(space: FeSpace, z: np.ndarray, *, oseen_only: bool = False) -> sp.csr_matrix:
    """Sparse matrix of ``d -> c(z, d) + c(d, z)`` (or just ``c(z, d)``)."""
    space.check_vector(z)
    zv, gz = _qp_values(space, z)
    wd = space.wdet
    phi = space.phi_q
    d = space.cell_dofs
    ns = space.n_scalar
    # c(z, d): block diagonal, local[a, b] = int (z . grad phi_b) phi_a
    zg = np.einsum("deq,eqbd->eqb", zv, space.grad_phi_q)
    oseen = np.einsum("eq,qa,eqb->eab", wd, phi, zg)
    rows, cols, vals = [], [], []
    r = np.repeat(d, 6, axis=1).ravel()
    c = np.tile(d, (1, 6)).ravel()
    for comp in range(2):
        rows.append(comp * ns + r)
        cols.append(comp * ns + c)
        vals.append(oseen.ravel())
    if not oseen_only:
        # c(d, z): test comp c, trial comp k: int phi_b d_k z_c phi_a
        for ci in range(2):
            for k in range(2):
                loc = np.einsum("eq,qa,qb,eq->eab", wd, phi, phi, gz[ci, :, :, k])
                rows.append(ci * ns + r)
                cols.append(k * ns + c)
                vals.append(loc.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(space.n_v, space.n_v)
    )


def modes_qp_fields(space: FeSpace, Psi: np.ndarray) -> np.ndarray:
    """:func:`qp_fields` for every column of ``Psi``: shape (6, nq, l)."""
    return (space.qp_fields_op @ Psi).reshape(6, space.n_qp, Psi.shape[1])


def project_convection(
    space: FeSpace, test: np.ndarray, first: np.ndarray, second: np.ndarray
) -> np.ndarray:
    """Dense tensor ``T[i, j, k] = test_i . c(first_j, second_k)``."""
    w = space.qp_weights[:, None]
    tv = modes_qp_fields(space, test)
    wt = [tv[0] * w, tv[1] * w]
    fv = modes_qp_fields(space, first)
    sg = modes_qp_fields(space, second)
    out = np.empty((test.shape[1], first.shape[1], second.shape[1]))
    for j in range(first.shape[1]):
        ax = fv[0][:, j, None]
        ay = fv[1][:, j, None]
        # (first_j . grad) second, x and y components at the qps
        out[:, j, :] = wt[0].T @ (ax * sg[2] + ay * sg[4]) + wt[1].T @ (ax * sg[3] + ay * sg[5])
    return out


# --------------------------------------------------------------------------
# actuators


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ParameterError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def corners(self) -> np.ndarray:
        return np.array([[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]])

    def overlaps(self, other: "Rect") -> bool:
        return min(self.x1, other.x1) > max(self.x0, other.x0) and min(self.y1, other.y1) > max(self.y0, other.y0)

    def grid(self, d1: int, d2: int) -> list["Rect"]:
        if d1 < 1 or d2 < 1:
            raise ParameterError("grid counts must be >= 1")
        xs = np.linspace(self.x0, self.x1, d1 + 1)
        ys = np.linspace(self.y0, self.y1, d2 + 1)
        return [Rect(xs[i], xs[i + 1], ys[j], ys[j + 1]) for j in range(d2) for i in range(d1)]


@dataclass(frozen=True, eq=False)
class ActuatorSet:
    """Normalized indicator actuators; ``B`` holds FE load vectors column-wise.

    Column ``2j`` acts on the x-component of rectangle ``j``, column ``2j+1``
    on the y-component.
    """

    rectangles: tuple[Rect, ...]
    regions: tuple[Rect, ...]
    B: np.ndarray
    measures: np.ndarray  # |R_j intersect Omega_h|

    @property
    def count(self) -> int:
        return len(self.rectangles)

    @property
    def n_controls(self) -> int:
        return 2 * len(self.rectangles)


def _clip(poly: list, rect: Rect) -> list:
    """Sutherland-Hodgman clip of a convex polygon against an axis-aligned box."""
    for axis, bound, keep_less in ((0, rect.x0, False), (0, rect.x1, True), (1, rect.y0, False), (1, rect.y1, True)):
        if not poly:
            break
        out = []
        n = len(poly)
        for i in range(n):
            p, q = poly[i], poly[(i + 1) % n]
            pin = p[axis] <= bound if keep_less else p[axis] >= bound
            qin = q[axis] <= bound if keep_less else q[axis] >= bound
            if pin:
                out.append(p)
            if pin != qin:
                t = (bound - p[axis]) / (q[axis] - p[axis])
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        poly = out
    return poly


def _indicator_load(space: FeSpace, rect: Rect) -> tuple[np.ndarray, float]:
    """Scalar load vector of the (unnormalized) indicator of ``rect`` and the
    measure of its intersection with the mesh, both integrated exactly."""
    verts = space.mesh.vertices
    tris = space.mesh.triangles
    p = verts[tris]
    lo, hi = p.min(axis=1), p.max(axis=1)
    cand = np.flatnonzero(
        (hi[:, 0] > rect.x0) & (lo[:, 0] < rect.x1) & (hi[:, 1] > rect.y0) & (lo[:, 1] < rect.y1)
    )
    load = np.zeros(space.n_scalar)
    measure = 0.0
    for e in cand:
        tri = [tuple(x) for x in p[e]]
        poly = _clip(tri, rect)
        if len(poly) < 3:
            continue
        # barycentric map of the parent triangle
        x0 = p[e, 0]
        J = np.column_stack([p[e, 1] - x0, p[e, 2] - x0])
        Jinv = np.linalg.inv(J)
        loc = np.zeros(6)
        for k in range(1, len(poly) - 1):
            a, b, c = np.array(poly[0]), np.array(poly[k]), np.array(poly[k + 1])
            area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
            if area == 0.0:
                continue
            pts = QUAD_POINTS @ np.vstack([a, b, c])
            st = (pts - x0) @ Jinv.T
            lam = np.column_stack([1 - st.sum(axis=1), st])
            loc += area * (QUAD_WEIGHTS @ p2_basis(lam))
            measure += area
        np.add.at(load, space.cell_dofs[e], loc)
    return load, measure


def _inside_domain(space: FeSpace, pts: np.ndarray) -> np.ndarray:
    verts = space.mesh.vertices
    tris = space.mesh.triangles
    inside = np.zeros(len(pts), dtype=bool)
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    area2 = 2.0 * space.areas
    for i, x in enumerate(pts):
        l1 = ((b[:, 0] - x[0]) * (c[:, 1] - x[1]) - (b[:, 1] - x[1]) * (c[:, 0] - x[0])) / area2
        l2 = ((c[:, 0] - x[0]) * (a[:, 1] - x[1]) - (c[:, 1] - x[1]) * (a[:, 0] - x[0])) / area2
        l3 = 1.0 - l1 - l2
        inside[i] = np.any((l1 >= -1e-12) & (l2 >= -1e-12) & (l3 >= -1e-12))
    return inside


def _make_actuators(space: FeSpace, regions: Sequence[Rect], rects: Sequence[Rect]) -> ActuatorSet:
    ns = space.n_scalar
    B = np.zeros((space.n_v, 2 * len(rects)))
    meas = np.zeros(len(rects))
    for j, r in enumerate(rects):
        load, m = _indicator_load(space, r)
        # rectangle must be covered by the mesh (it lies in Omega_h)
        if not math.isclose(m, r.area, rel_tol=1e-9, abs_tol=1e-14):
            raise ParameterError(f"actuator rectangle {r} is not contained in the domain")
        load /= math.sqrt(m)
        B[:ns, 2 * j] = load
        B[ns:, 2 * j + 1] = load
        meas[j] = m
    B.flags.writeable = False
    return ActuatorSet(tuple(rects), tuple(regions), B, meas)


def build_actuators(space: FeSpace, omega: Rect, d1: int, d2: int) -> ActuatorSet:
    """Uniform ``d1 x d2`` partition of the rectangle ``omega``."""
    if not _inside_domain(space, omega.corners()).all():
        raise ParameterError(f"control region {omega} is not inside the domain")
    return _make_actuators(space, [omega], omega.grid(d1, d2))


def build_actuator_layout(space: FeSpace, layout: Sequence[tuple[Rect, int, int]]) -> ActuatorSet:
    """Union of per-rectangle grids; sub-regions must not overlap."""
    regions = [r for r, _, _ in layout]
    for i, a in enumerate(regions):
        for b in regions[i + 1 :]:
            if a.overlaps(b):
                raise ParameterError(f"overlapping actuator regions {a} and {b}")
        if not _inside_domain(space, a.corners()).all():
            raise ParameterError(f"control region {a} is not inside the domain")
    rects = [cell for r, d1, d2 in layout for cell in r.grid(d1, d2)]
    return _make_actuators(space, regions, rects)
