"""Triangulated moving surfaces.

A :class:`SurfaceMesh` is an immutable snapshot: vertex positions, triangle
connectivity, boundary flags and the time it belongs to. Motions produce new
snapshots with the same connectivity.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .exceptions import DegenerateTriangle, WrongMotionKind

logger = logging.getLogger(__name__)

AREA_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    vertices: np.ndarray  # (J, 3)
    triangles: np.ndarray  # (K, 3) int
    boundary: np.ndarray = field(default=None)  # (J,) bool
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        if self.boundary is None:
            object.__setattr__(self, "boundary", boundary_vertices(self.triangles, len(self.vertices)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def with_vertices(self, vertices, time) -> "SurfaceMesh":
        return replace(self, vertices=vertices, time=float(time))

    def edges(self) -> np.ndarray:
        return unique_edges(self.triangles)

    def h(self) -> float:
        """Maximum edge length."""
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1).max())

    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.areas().sum())


def unique_edges(triangles) -> np.ndarray:
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def boundary_edges(triangles) -> np.ndarray:
    e = np.sort(np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts == 1]


def boundary_vertices(triangles, n) -> np.ndarray:
    flags = np.zeros(n, dtype=bool)
    flags[boundary_edges(triangles).ravel()] = True
    return flags


def vertex_adjacency(triangles, n) -> sp.csr_matrix:
    e = unique_edges(triangles)
    a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return (a + a.T).tocsr()


# ---------------------------------------------------------------------------
# Macro triangulations
# ---------------------------------------------------------------------------


def _octahedron():
    v = np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    t = np.array(
        [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4], [1, 0, 5], [2, 1, 5], [3, 2, 5], [0, 3, 5]]
    )
    return v, t


def _hemi_octahedron():
    v, t = _octahedron()
    return v[:5], t[:4]


def _icosahedron():
    p = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        float,
    )
    v /= np.linalg.norm(v, axis=1)[:, None]
    t = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v, t


def _disc_fan():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]], float)
    t = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]])
    return v, t


MACROS = {
    "octahedron": _octahedron,
    "icosahedron": _icosahedron,
    "disc-fan": _disc_fan,
}


def macro_mesh(surface: geo.LevelSetSurface, kind: str, t: float = 0.0) -> SurfaceMesh:
    if kind not in MACROS:
        raise ValueError(f"unknown macro mesh {kind!r}; expected one of {sorted(MACROS)}")
    if kind == "octahedron" and surface.halfspace:
        v, tri = _hemi_octahedron()
    else:
        v, tri = MACROS[kind]()
    return SurfaceMesh(_project(surface, v, t, boundary_vertices(tri, len(v)), kind), tri, time=t)


def _project(surface, points, t, on_boundary, kind):
    """Move points onto the surface; boundary points follow the boundary curve."""
    p = np.array(points, dtype=float)
    if isinstance(surface, geo.GraphSurface):
        if on_boundary.any():
            q = p[on_boundary, :2]
            p[on_boundary, :2] = q / np.linalg.norm(q, axis=1)[:, None]
        return surface.project_vertical(p, t)
    if surface.halfspace:
        p[on_boundary, 2] = 0.0
    return geo.closest_point(surface, p, t)


def refine(mesh: SurfaceMesh) -> tuple[SurfaceMesh, np.ndarray]:
    """Uniform red refinement; new vertices sit at straight edge midpoints.

    Returns the refined mesh and a boolean mask of the inserted vertices.
    """
    tri = mesh.triangles
    n = mesh.n_vertices
    e = np.sort(np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1), axis=2)
    uniq, inv = np.unique(e.reshape(-1, 2), axis=0, return_inverse=True)
    inv = inv.reshape(-1, 3) + n
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, bc, ca = inv[:, 0], inv[:, 1], inv[:, 2]
    new = np.concatenate(
        [
            np.stack([a, ab, ca], 1),
            np.stack([ab, b, bc], 1),
            np.stack([ca, bc, c], 1),
            np.stack([ab, bc, ca], 1),
        ]
    )
    # keep children of one parent adjacent in memory
    new = new.reshape(4, -1, 3).transpose(1, 0, 2).reshape(-1, 3)
    inserted = np.zeros(len(verts), dtype=bool)
    inserted[n:] = True
    return SurfaceMesh(verts, new, time=mesh.time), inserted


def prolongation(coarse: SurfaceMesh) -> sp.csr_matrix:
    """Nodal P1 prolongation from ``coarse`` to ``refine(coarse)``.

    Old vertices keep their values; an inserted vertex takes the mean of the
    endpoints of its parent edge (numbering as in :func:`refine`).
    """
    n = coarse.n_vertices
    e = unique_edges(coarse.triangles)
    m = len(e)
    rows = np.concatenate([np.arange(n), n + np.arange(m), n + np.arange(m)])
    cols = np.concatenate([np.arange(n), e[:, 0], e[:, 1]])
    vals = np.concatenate([np.ones(n), np.full(2 * m, 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + m, n))


def refine_project(surface: geo.LevelSetSurface, macro: str, levels: int, t: float = 0.0) -> SurfaceMesh:
    """Refine a macro triangulation ``levels`` times, projecting new nodes onto the surface."""
    if levels < 0:
        raise ValueError("levels must be nonnegative")
    mesh = macro_mesh(surface, macro, t)
    for _ in range(levels):
        fine, inserted = refine(mesh)
        verts = fine.vertices.copy()
        verts[inserted] = _project(surface, verts[inserted], t, fine.boundary[inserted], macro)
        mesh = SurfaceMesh(verts, fine.triangles, fine.boundary, t)
    return mesh


def marching_cubes_mesh(
    surface: geo.LevelSetSurface,
    spacing: float,
    bounds,
    t: float = 0.0,
    smoothing_iterations: int = 30,
) -> SurfaceMesh:
    """Triangulate a closed level set of arbitrary genus.

    Marching cubes on a uniform grid, then tangential Laplacian smoothing with
    projection back to the surface to remove the slivers marching cubes
    produces. Triangles are oriented so the normals point to ``d > 0``.
    """
    from skimage.measure import marching_cubes

    lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    axes = [np.arange(lo[i], hi[i] + 0.5 * spacing, spacing) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = surface.value(grid, t)
    if (vals[0] <= 0).any() or (vals[-1] <= 0).any() or (vals[:, 0] <= 0).any() \
            or (vals[:, -1] <= 0).any() or (vals[:, :, 0] <= 0).any() or (vals[:, :, -1] <= 0).any():
        raise ValueError("bounding box cuts the surface")
    verts, faces, _, _ = marching_cubes(vals, 0.0, spacing=(spacing,) * 3)
    verts = verts + lo
    verts, faces = _weld(verts, faces, 1e-9 * spacing)
    verts = geo.closest_point(surface, verts, t)
    adj = vertex_adjacency(faces, len(verts))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    for _ in range(smoothing_iterations):
        nu = geo.normal(surface, verts, t)
        dv = adj @ verts / deg[:, None] - verts
        dv -= np.sum(dv * nu, axis=1)[:, None] * nu
        verts = geo.closest_point(surface, verts + 0.5 * dv, t)
    c = verts[faces]
    nrm = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    outward = np.sum(nrm * geo.normal(surface, c.mean(axis=1), t), axis=1)
    if np.sum(outward) < 0:
        faces = faces[:, ::-1]
    return SurfaceMesh(verts, faces, time=t)


def _weld(verts, faces, tol):
    """Merge coincident vertices and drop collapsed faces."""
    key = np.round(verts / tol).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    faces = inv[faces]
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 2] != faces[:, 0])
    faces = faces[ok]
    used = np.unique(faces)
    remap = -np.ones(len(first), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return verts[first][used], remap[faces]


def euler_characteristic(mesh: SurfaceMesh) -> int:
    return mesh.n_vertices - len(mesh.edges()) + mesh.n_triangles


# ---------------------------------------------------------------------------
# Motion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeshMotion:
    """How mesh vertices move in time.

    ``kind == "trajectory"``: closed-form ``trajectory(x0, t)`` from the
    initial vertices. ``kind == "ode"``: vertices integrate ``velocity`` with
    classical RK4 (``substeps`` per step) and are projected back to
    ``surface``. ``velocity`` is the mesh velocity in both cases.
    """

    kind: str
    velocity: geo.VelocityField
    trajectory: Callable | None = None
    surface: geo.LevelSetSurface | None = None
    substeps: int = 1

    def __post_init__(self):
        if self.kind not in ("trajectory", "ode"):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.kind == "trajectory" and self.trajectory is None:
            raise ValueError("trajectory motion needs a trajectory")
        if self.kind == "ode" and self.surface is None:
            raise ValueError("ODE motion needs a surface to project onto")

    def advance(self, mesh: SurfaceMesh, initial: SurfaceMesh, t_new: float) -> SurfaceMesh:
        if self.kind == "trajectory":
            return move_mesh(initial, self, t_new)
        return lagrangian_advance(
            mesh, self.surface, mesh.time, t_new, self.substeps, velocity=self.velocity
        )


def move_mesh(mesh: SurfaceMesh, motion: MeshMotion, t: float) -> SurfaceMesh:
    """Map the initial mesh along a closed-form trajectory to time ``t``."""
    if motion.kind != "trajectory":
        raise WrongMotionKind("move_mesh needs a closed-form trajectory; use lagrangian_advance")
    return mesh.with_vertices(motion.trajectory(mesh.vertices, t), t)


def rk4(velocity, x, t0, t1, substeps):
    x = np.array(x, dtype=float)
    dt = (t1 - t0) / substeps
    for i in range(substeps):
        t = t0 + (t1 - t0) * i / substeps
        k1 = velocity(x, t)
        k2 = velocity(x + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = velocity(x + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = velocity(x + dt * k3, t + dt)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def lagrangian_advance(
    mesh: SurfaceMesh,
    surface: geo.LevelSetSurface,
    t0: float,
    t1: float,
    substeps: int = 1,
    velocity: geo.VelocityField | None = None,
    project: bool = True,
) -> SurfaceMesh:
    """Advance vertices with RK4 and project them back onto ``surface`` at ``t1``."""
    if velocity is None:
        if isinstance(surface, geo.GraphSurface):
            velocity = geo.graph_lagrangian_velocity(surface)
        else:
            velocity = geo.normal_velocity_field(surface)
    x = rk4(velocity, mesh.vertices, t0, t1, max(1, int(substeps)))
    if project:
        x = _project_nodes(surface, x, t1, mesh.boundary)
    return mesh.with_vertices(x, t1)


def _project_nodes(surface, x, t, boundary):
    if isinstance(surface, geo.GraphSurface):
        return surface.project_vertical(x, t)
    if surface.halfspace:
        x = x.copy()
        x[boundary, 2] = 0.0
    return geo.closest_point(surface, x, t)


# ---------------------------------------------------------------------------
# Quality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QualityReport:
    time: float
    h: float
    min_angle: float  # degrees
    max_aspect: float
    min_area: float
    max_area: float


def triangle_angles(corners) -> np.ndarray:
    """Interior angles in degrees, shape ``(K, 3)``."""
    out = []
    for i in range(3):
        a = corners[:, (i + 1) % 3] - corners[:, i]
        b = corners[:, (i + 2) % 3] - corners[:, i]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        out.append(np.degrees(np.arctan2(cross, np.sum(a * b, axis=1))))
    return np.stack(out, axis=1)


def quality_metrics(mesh: SurfaceMesh) -> QualityReport:
    c = mesh.corners
    areas = mesh.areas()
    if (areas < AREA_FLOOR).any():
        raise DegenerateTriangle(f"{int((areas < AREA_FLOOR).sum())} triangles with area < {AREA_FLOOR}")
    lengths = np.stack([np.linalg.norm(c[:, (i + 1) % 3] - c[:, i], axis=1) for i in range(3)], axis=1)
    # longest edge over inradius, normalised to 1 for the equilateral triangle
    aspect = lengths.max(axis=1) * lengths.sum(axis=1) / (4.0 * np.sqrt(3.0) * areas)
    return QualityReport(
        time=float(mesh.time),
        h=float(lengths.max()),
        min_angle=float(triangle_angles(c).min()),
        max_aspect=float(aspect.max()),
        min_area=float(areas.min()),
        max_area=float(areas.max()),
    )


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def write_vtk(path, mesh: SurfaceMesh, point_data: dict | None = None, title: str = "esfem") -> str:
    """Legacy ASCII VTK POLYDATA with optional per-vertex scalars."""
    path = os.fspath(path)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    lines = ["# vtk DataFile Version 3.0", f"{title} t={mesh.time:.10g}", "ASCII", "DATASET POLYDATA"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    k = mesh.n_triangles
    lines.append(f"POLYGONS {k} {4 * k}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_vertices,):
                raise ValueError(f"point data {name!r} has shape {values.shape}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_vtk(path) -> tuple[SurfaceMesh, dict]:
    """Parse files written by :func:`write_vtk`."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    i = 0
    verts = tris = None
    data = {}
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            verts = np.array([list(map(float, tokens[i + 1 + j].split())) for j in range(n)])
            i += n
        elif line.startswith("POLYGONS"):
            k = int(line.split()[1])
            tris = np.array([list(map(int, tokens[i + 1 + j].split()[1:])) for j in range(k)])
            i += k
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            n = len(verts)
            data[name] = np.array([float(tokens[i + 2 + j]) for j in range(n)])
            i += n + 1
        i += 1
    return SurfaceMesh(verts, tris), data
