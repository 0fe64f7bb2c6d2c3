"""Triangular meshes for the benchmark geometries.

Meshes are generated as constrained Delaunay triangulations of a polygonal
outline (via the ``triangle`` bindings to Shewchuk's Triangle) and stored
in a small line-oriented text format::

    mesh v1
    vertices N
    x y
    ...
    triangles M
    i j k
    ...
    boundary K
    i j tagname
    ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import triangle

from .errors import MeshParseError, ParameterError

__all__ = [
    "Mesh",
    "generate_disc_with_hole",
    "generate_channel_with_cylinder",
    "generate_rectangle",
    "import_mesh",
    "export_mesh",
]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming, positively oriented triangulation with tagged boundary edges.

    Parameters
    ----------
    vertices : (n, 2) float array
    triangles : (m, 3) int array, counter-clockwise vertex order
    boundary_edges : (k, 2) int array of vertex pairs
    boundary_tags : length-k sequence of tag names
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple[str, ...]
    _edges: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        b = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        if not np.all(np.isfinite(v)):
            raise ParameterError("vertex coordinates must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ParameterError("triangle references a missing vertex")
        if b.size and (b.min() < 0 or b.max() >= len(v)):
            raise ParameterError("boundary edge references a missing vertex")
        if len(self.boundary_tags) != len(b):
            raise ParameterError("one tag per boundary edge required")
        v.flags.writeable = False
        t.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary_edges", b)
        object.__setattr__(self, "boundary_tags", tuple(self.boundary_tags))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def tags(self) -> set[str]:
        return set(self.boundary_tags)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs, in a fixed order."""
        if self._edges is None:
            e = np.sort(self.triangles[:, [1, 2, 2, 0, 0, 1]].reshape(-1, 2), axis=1)
            uniq = np.unique(e, axis=0)
            uniq.flags.writeable = False
            object.__setattr__(self, "_edges", uniq)
        return self._edges

    def triangle_edges(self) -> np.ndarray:
        """(m, 3) indices into :attr:`edges`; local edge ``a`` is opposite vertex ``a``."""
        e = np.sort(self.triangles[:, [1, 2, 2, 0, 0, 1]].reshape(-1, 2), axis=1)
        key = e[:, 0] * self.n_vertices + e[:, 1]
        ukey = self.edges[:, 0] * self.n_vertices + self.edges[:, 1]
        return np.searchsorted(ukey, key).reshape(-1, 3)

    def edges_with_tag(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]

    def inradius_ratio(self) -> float:
        """max/min triangle inradius, a quasi-uniformity diagnostic."""
        p = self.vertices[self.triangles]
        la = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        lb = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        lc = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        r = 2.0 * self.signed_areas() / (la + lb + lc)
        return float(r.max() / r.min())

    def h_min(self) -> float:
        p = self.vertices[self.edges]
        return float(np.linalg.norm(p[:, 0] - p[:, 1], axis=1).min())

    def h_max(self) -> float:
        p = self.vertices[self.edges]
        return float(np.linalg.norm(p[:, 0] - p[:, 1], axis=1).max())

    def check(self) -> None:
        """Raise ``ParameterError`` unless all structural invariants hold."""
        if np.any(self.signed_areas() <= 0.0):
            raise ParameterError("triangle with non-positive signed area")
        e = np.sort(self.triangles[:, [1, 2, 2, 0, 0, 1]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise ParameterError("edge shared by more than two triangles")
        open_edges = {tuple(x) for x in uniq[counts == 1]}
        tagged = [tuple(sorted(x)) for x in self.boundary_edges.tolist()]
        if len(set(tagged)) != len(tagged):
            raise ParameterError("boundary edge tagged twice")
        if set(tagged) != open_edges:
            raise ParameterError("boundary edges do not match the triangulation boundary")
        # closed loops: every boundary vertex has even degree
        deg = np.bincount(self.boundary_edges.ravel(), minlength=self.n_vertices)
        if np.any(deg % 2):
            raise ParameterError("boundary edges do not form closed loops")

    def structurally_equal(self, other: "Mesh") -> bool:
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and self.boundary_tags == other.boundary_tags
        )


def _circle(center, radius, target_h, start=0):
    n = max(8, math.ceil(2.0 * math.pi * radius / target_h))
    # chord length 2 r sin(pi/n) <= target_h by the choice of n
    th = 2.0 * math.pi * np.arange(n) / n
    pts = np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])
    segs = np.column_stack([np.arange(n), (np.arange(n) + 1) % n]) + start
    return pts, segs


def _polyline(corners, target_h, start=0):
    """Closed polygon through ``corners`` with edges subdivided to <= target_h.

    Returns points, segments and the index of the side each segment lies on.
    """
    pts, side = [], []
    k = len(corners)
    for i in range(k):
        a = np.asarray(corners[i], dtype=float)
        b = np.asarray(corners[(i + 1) % k], dtype=float)
        n = max(1, math.ceil(np.linalg.norm(b - a) / target_h))
        s = np.arange(n)[:, None] / n
        pts.append(a + s * (b - a))
        side += [i] * n
    pts = np.vstack(pts)
    m = len(pts)
    segs = np.column_stack([np.arange(m), (np.arange(m) + 1) % m]) + start
    return pts, segs, np.array(side)


def _triangulate(points, segments, seg_tags, holes, target_h, tag_names):
    max_area = math.sqrt(3.0) / 4.0 * target_h**2
    geom = {
        "vertices": points,
        "segments": segments,
        "segment_markers": np.asarray(seg_tags, dtype=np.int32)[:, None] + 1,
    }
    if holes:
        geom["holes"] = np.asarray(holes, dtype=float)
    # p: PSLG, q: quality, a: area bound, Y: no Steiner points on segments
    out = triangle.triangulate(geom, f"pq30Ya{max_area:.12g}")
    verts = out["vertices"]
    tris = out["triangles"].astype(np.int64)
    d1 = verts[tris[:, 1]] - verts[tris[:, 0]]
    d2 = verts[tris[:, 2]] - verts[tris[:, 0]]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    # map input segments (vertex indices preserved by 'Y') to tags
    edges = np.asarray(segments, dtype=np.int64)
    tags = tuple(tag_names[t] for t in seg_tags)
    mesh = Mesh(verts, tris, edges, tags)
    mesh.check()
    return mesh


def generate_disc_with_hole(radius: float, half_width: float, target_h: float) -> Mesh:
    """Disc of ``radius`` minus the square ``[-half_width, half_width]^2``.

    Outer boundary is tagged ``disc``, the square ``rect``.
    """
    if not (radius > 0 and 0 < half_width < radius / math.sqrt(2.0)):
        raise ParameterError("need 0 < half_width < radius/sqrt(2)")
    if not target_h > 0:
        raise ParameterError("target_h must be positive")
    if target_h > half_width:
        raise ParameterError(f"target_h={target_h} larger than the hole half width {half_width}")
    outer, oseg = _circle((0.0, 0.0), radius, target_h)
    hw = half_width
    inner, iseg, _ = _polyline([(-hw, -hw), (hw, -hw), (hw, hw), (-hw, hw)], target_h, start=len(outer))
    pts = np.vstack([outer, inner])
    segs = np.vstack([oseg, iseg])
    tags = [0] * len(oseg) + [1] * len(iseg)
    return _triangulate(pts, segs, tags, [(0.0, 0.0)], target_h, ["disc", "rect"])


def generate_channel_with_cylinder(
    length: float,
    height: float,
    center: tuple[float, float],
    cyl_radius: float,
    target_h: float,
    cyl_h: float | None = None,
) -> Mesh:
    """Channel ``(0,length) x (0,height)`` minus a disc.

    Tags: ``inflow`` (x=0), ``outflow`` (x=length), ``walls``, ``cylinder``.
    ``cyl_h`` optionally sets a finer edge length on the cylinder.
    """
    cx, cy = center
    if not (length > 0 and height > 0 and cyl_radius > 0 and target_h > 0):
        raise ParameterError("lengths must be positive")
    if not (cx - cyl_radius > 0 and cx + cyl_radius < length and cy - cyl_radius > 0 and cy + cyl_radius < height):
        raise ParameterError("cylinder must lie strictly inside the channel")
    if target_h > height / 2:
        raise ParameterError(f"target_h={target_h} too large for channel height {height}")
    ch = min(target_h, cyl_h or target_h)
    rect, rseg, side = _polyline([(0, 0), (length, 0), (length, height), (0, height)], target_h)
    circ, cseg = _circle(center, cyl_radius, ch, start=len(rect))
    # side 0: bottom, 1: outflow, 2: top, 3: inflow
    side_tag = np.array([2, 1, 2, 0])[side]
    pts = np.vstack([rect, circ])
    segs = np.vstack([rseg, cseg])
    tags = list(side_tag) + [3] * len(cseg)
    return _triangulate(pts, segs, tags, [center], target_h, ["inflow", "outflow", "walls", "cylinder"])


def generate_rectangle(
    x0: float, x1: float, y0: float, y1: float, nx: int, ny: int, tag: str = "walls"
) -> Mesh:
    """Structured criss-cross-free rectangle mesh, mostly for small tests."""
    if nx < 1 or ny < 1 or x1 <= x0 or y1 <= y0:
        raise ParameterError("invalid rectangle")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    ring = list(idx[0, :]) + list(idx[1:, -1]) + list(idx[-1, -2::-1]) + list(idx[-2:0:-1, 0])
    edges = np.column_stack([ring, ring[1:] + ring[:1]])
    mesh = Mesh(verts, tris, edges, (tag,) * len(edges))
    mesh.check()
    return mesh


def export_mesh(mesh: Mesh, path) -> None:
    lines = ["mesh v1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [f"{i} {j} {t}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def import_mesh(path) -> Mesh:
    text = Path(path).read_text().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(text):
            line = text[pos].strip()
            pos += 1
            if line and not line.startswith("#"):
                return line.split(), pos
        raise MeshParseError("unexpected end of file", pos)

    def section(name):
        tok, ln = next_line()
        if len(tok) != 2 or tok[0] != name:
            raise MeshParseError(f"expected '{name} <count>'", ln)
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshParseError(f"bad count {tok[1]!r}", ln) from None
        if n < 0:
            raise MeshParseError("negative count", ln)
        return n

    tok, ln = next_line()
    if tok != ["mesh", "v1"]:
        raise MeshParseError("missing 'mesh v1' header", ln)

    nv = section("vertices")
    verts = []
    for _ in range(nv):
        tok, ln = next_line()
        try:
            x, y = (float(s) for s in tok)
        except ValueError:
            raise MeshParseError("vertex line must be 'x y'", ln) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise MeshParseError("non-finite coordinate", ln)
        verts.append((x, y))

    nt = section("triangles")
    tris = []
    for _ in range(nt):
        tok, ln = next_line()
        try:
            i, j, k = (int(s) for s in tok)
        except ValueError:
            raise MeshParseError("triangle line must be 'i j k'", ln) from None
        if min(i, j, k) < 0 or max(i, j, k) >= nv:
            raise MeshParseError(f"triangle references missing vertex (have {nv})", ln)
        tris.append((i, j, k))

    nb = section("boundary")
    edges, tags = [], []
    for _ in range(nb):
        tok, ln = next_line()
        if len(tok) != 3:
            raise MeshParseError("boundary line must be 'i j tag'", ln)
        try:
            i, j = int(tok[0]), int(tok[1])
        except ValueError:
            raise MeshParseError("bad boundary vertex index", ln) from None
        if min(i, j) < 0 or max(i, j) >= nv:
            raise MeshParseError(f"boundary edge references missing vertex (have {nv})", ln)
        edges.append((i, j))
        tags.append(tok[2])

    return Mesh(
        np.array(verts, dtype=float).reshape(-1, 2),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        tuple(tags),
    )
