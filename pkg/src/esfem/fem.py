"""Piecewise linear finite elements on a triangulated surface.

Matrices are assembled in CSR form. The sparsity pattern depends only on the
connectivity, which never changes while the mesh moves, so an
:class:`Assembler` computes it once and refills values each time step.
Duplicate entries are summed with ``np.bincount`` which adds in a fixed order,
so repeated assemblies are bit-identical.

Index convention: ``B[i, j] = int chi_i T . grad chi_j`` and
``S[i, j] = int grad chi_i . grad chi_j``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import geometry as geo
from .exceptions import DegenerateTriangle
from .mesh import AREA_FLOOR, SurfaceMesh
from .quadrature import QuadratureRule, triangle_rule

_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def element_geometry(corners: np.ndarray):
    """Areas ``(K,)``, unit normals ``(K, 3)`` and basis gradients ``(K, 3, 3)``.

    ``grads[k, i]`` is the (tangential) gradient of the i-th barycentric
    coordinate on element ``k``.
    """
    n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    twice_area = np.linalg.norm(n, axis=1)
    if (twice_area < 2.0 * AREA_FLOOR).any():
        raise DegenerateTriangle("triangle with (numerically) zero area")
    nhat = n / twice_area[:, None]
    grads = np.empty_like(corners)
    for i in range(3):
        opposite = corners[:, (i + 2) % 3] - corners[:, (i + 1) % 3]
        grads[:, i] = np.cross(nhat, opposite) / twice_area[:, None]
    return 0.5 * twice_area, nhat, grads


class Assembler:
    """CSR assembly for a fixed connectivity."""

    def __init__(self, triangles: np.ndarray, n_vertices: int):
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.n = int(n_vertices)
        tri = self.triangles
        k = len(tri)
        rows = np.broadcast_to(tri[:, :, None], (k, 3, 3)).ravel()
        cols = np.broadcast_to(tri[:, None, :], (k, 3, 3)).ravel()
        keys = rows * self.n + cols
        uniq, self._slot = np.unique(keys, return_inverse=True)
        self._slot = self._slot.ravel()
        self.indices = (uniq % self.n).astype(np.int32)
        counts = np.bincount(uniq // self.n, minlength=self.n)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self.nnz = len(uniq)

    @classmethod
    def for_mesh(cls, mesh: SurfaceMesh) -> "Assembler":
        return cls(mesh.triangles, mesh.n_vertices)

    def matrix(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum element matrices ``local[k, i, j]`` into a CSR matrix."""
        data = np.bincount(self._slot, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))

    def vector(self, local: np.ndarray) -> np.ndarray:
        """Sum element vectors ``local[k, i]``."""
        return np.bincount(self.triangles.ravel(), weights=local.ravel(), minlength=self.n)

    # -- bilinear forms ---------------------------------------------------

    def mass(self, mesh: SurfaceMesh) -> sp.csr_matrix:
        areas, _, _ = element_geometry(mesh.corners)
        return self.matrix(areas[:, None, None] * _LOCAL_MASS)

    def stiffness(self, mesh: SurfaceMesh) -> sp.csr_matrix:
        areas, _, grads = element_geometry(mesh.corners)
        return self.matrix(areas[:, None, None] * np.einsum("kid,kjd->kij", grads, grads))

    def advection(self, mesh: SurfaceMesh, velocity: np.ndarray) -> sp.csr_matrix:
        """``B[i, j] = int chi_i T_h . grad chi_j`` with ``T_h`` the P1 interpolant."""
        areas, _, grads = element_geometry(mesh.corners)
        tv = np.asarray(velocity, dtype=float)[self.triangles]  # (K, 3 nodes, 3)
        tg = np.einsum("kmd,kjd->kmj", tv, grads)
        local = areas[:, None, None] * np.einsum("im,kmj->kij", _LOCAL_MASS, tg)
        return self.matrix(local)

    def weighted_mass(self, mesh: SurfaceMesh, velocity: np.ndarray) -> sp.csr_matrix:
        """``G[i, j] = int chi_i chi_j div_h W_h``; ``div_h W_h`` is elementwise constant."""
        areas, _, grads = element_geometry(mesh.corners)
        div = divergence_p1(self.triangles, grads, velocity)
        return self.matrix((areas * div)[:, None, None] * _LOCAL_MASS)

    # -- linear forms -----------------------------------------------------

    def load(
        self,
        mesh: SurfaceMesh,
        source,
        t: float,
        rule: QuadratureRule | None = None,
        lift=None,
    ) -> np.ndarray:
        """``F_i = int f(p(x), t) chi_i`` with quadrature points lifted by ``lift``."""
        rule = rule or triangle_rule(6)
        xq = rule.physical_points(mesh.corners)
        pts = xq if lift is None else lift(xq, t)
        return self.load_values(mesh, np.asarray(source(pts, t), dtype=float), rule)

    def load_values(self, mesh: SurfaceMesh, fq: np.ndarray, rule: QuadratureRule) -> np.ndarray:
        """Load vector from source values ``fq[k, q]`` already evaluated at quadrature points."""
        areas, _, _ = element_geometry(mesh.corners)
        local = areas[:, None] * np.einsum("q,kq,qi->ki", rule.weights, fq, rule.points)
        return self.vector(local)


def divergence_p1(triangles, grads, velocity) -> np.ndarray:
    v = np.asarray(velocity, dtype=float)[triangles]
    return np.einsum("kid,kid->k", v, grads)


def surface_lift(surface: geo.LevelSetSurface):
    """Inverse lift ``x -> p(x, t)``: normal projection, vertical for graphs."""
    if isinstance(surface, geo.GraphSurface):
        return surface.project_vertical

    def lift(x, t):
        return geo.closest_point(surface, x, t)

    return lift


def assemble_mass(mesh: SurfaceMesh, assembler: Assembler | None = None):
    return (assembler or Assembler.for_mesh(mesh)).mass(mesh)


def assemble_stiffness(mesh: SurfaceMesh, assembler: Assembler | None = None):
    return (assembler or Assembler.for_mesh(mesh)).stiffness(mesh)


def assemble_advection(mesh: SurfaceMesh, velocity, assembler: Assembler | None = None):
    return (assembler or Assembler.for_mesh(mesh)).advection(mesh, velocity)


def assemble_weighted_mass(mesh: SurfaceMesh, velocity, assembler: Assembler | None = None):
    return (assembler or Assembler.for_mesh(mesh)).weighted_mass(mesh, velocity)


def assemble_load(mesh: SurfaceMesh, source, t, rule=None, lift=None, assembler=None):
    return (assembler or Assembler.for_mesh(mesh)).load(mesh, source, t, rule, lift)


def interpolate_nodal(mesh: SurfaceMesh, field, t: float) -> np.ndarray:
    """Nodal values ``field(X_j, t)``."""
    return np.asarray(field(mesh.vertices, t), dtype=float).copy()


def dump_matrix_market(path, matrix) -> None:
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(matrix))
