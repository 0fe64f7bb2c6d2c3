"""Legacy VTK (ASCII) output of velocity and pressure fields.

The file is an ``UNSTRUCTURED_GRID`` on the mesh vertices with linear
triangle cells (type 5). ``POINT_DATA`` holds ``velocity`` (VECTORS, the P2
field sampled at the vertices, z = 0) and, when given, ``pressure`` (SCALARS,
the P1 field). Extra named vertex fields may be appended as SCALARS.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fem import FeSpace

__all__ = ["write_vtk"]


def write_vtk(path, space: FeSpace, velocity: np.ndarray, pressure: np.ndarray | None = None,
              title: str = "nsrhc field", extra: dict | None = None) -> None:
    space.check_vector(velocity)
    mesh = space.mesh
    nv = mesh.n_vertices
    ns = space.n_scalar
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {nv} double")
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices]
    tri = mesh.triangles
    lines.append(f"CELLS {len(tri)} {4 * len(tri)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in tri]
    lines.append(f"CELL_TYPES {len(tri)}")
    lines += ["5"] * len(tri)
    lines.append(f"POINT_DATA {nv}")
    lines.append("VECTORS velocity double")
    ux, uy = velocity[:nv], velocity[ns : ns + nv]
    lines += [f"{a!r} {b!r} 0.0" for a, b in zip(ux.tolist(), uy.tolist())]
    fields = {}
    if pressure is not None:
        if np.shape(pressure) != (space.n_p,):
            raise ValueError("pressure must have one value per vertex")
        fields["pressure"] = pressure
    fields.update(extra or {})
    for name, vals in fields.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [repr(float(v)) for v in np.asarray(vals)[:nv]]
    Path(path).write_text("\n".join(lines) + "\n")
