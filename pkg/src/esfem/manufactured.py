"""Exact solutions, source terms and initial data for the four experiments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry as geo
from .exceptions import NoExactSolution
from .mesh import MeshMotion


@dataclass(frozen=True)
class ManufacturedProblem:
    """A moving-surface advection-diffusion problem.

    ``velocity`` is the material velocity of the surface, ``ale_velocity`` the
    velocity of the ALE mesh nodes (``None`` if the problem has no ALE
    variant). ``source`` is ``None`` for homogeneous problems.
    """

    name: str
    surface: geo.LevelSetSurface
    velocity: geo.VelocityField
    exact: geo.AmbientField | None = None
    ale_velocity: geo.VelocityField | None = None
    ale_trajectory: Callable | None = None
    source_override: Callable | None = None
    initial: Callable | None = None
    time_interval: tuple[float, float] = (0.0, 1.0)
    macro: str = "octahedron"

    @property
    def closed(self) -> bool:
        return self.surface.closed

    @property
    def has_source(self) -> bool:
        return self.exact is not None or self.source_override is not None

    def source(self, x, t):
        if self.source_override is not None:
            return self.source_override(x, t)
        if self.exact is None:
            return np.zeros(np.shape(x)[:-1])
        return manufactured_rhs(self, x, t)

    def initial_value(self, x):
        if self.initial is not None:
            return self.initial(x)
        return exact_solution(self, x, self.time_interval[0])

    def motion(self, mode: str, substeps: int = 1) -> MeshMotion:
        """Mesh motion for ``mode`` in ``{"lagrangian", "ale"}``."""
        if mode == "ale":
            if self.ale_trajectory is None:
                raise ValueError(f"{self.name} has no ALE motion")
            return MeshMotion("trajectory", self.ale_velocity, trajectory=self.ale_trajectory)
        if mode == "lagrangian":
            if self.velocity.kind == "zero":
                return MeshMotion("trajectory", self.velocity, trajectory=lambda x, t: np.array(x))
            return MeshMotion("ode", self.velocity, surface=self.surface, substeps=substeps)
        raise ValueError(f"unknown mode {mode!r}")

    def tangential_velocity(self, mode: str, x, t):
        """Nodal ``a_T = v_a - v``; ``None`` when it vanishes identically."""
        if mode != "ale":
            return None
        return self.ale_velocity(x, t) - self.velocity(x, t)


def manufactured_rhs(problem: ManufacturedProblem, x, t):
    """``f = d_t u + v . grad u + u div_G v - lap_G u`` at surface points ``x``."""
    u, v, s = problem.exact, problem.velocity, problem.surface
    if u is None:
        raise NoExactSolution(problem.name)
    return (
        u.dt(x, t)
        + np.sum(v(x, t) * u.grad(x, t), axis=-1)
        + u.value(x, t) * geo.surface_divergence(v, s, x, t)
        - geo.laplace_beltrami(u, s, x, t)
    )


def exact_solution(problem: ManufacturedProblem, x, t):
    if problem.exact is None:
        raise NoExactSolution(problem.name)
    return problem.exact.value(x, t)


# ---------------------------------------------------------------------------
# Example-4 initial data
# ---------------------------------------------------------------------------


def initial_conditions(variant: int, x):
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    pi = np.pi
    if variant == 1:
        return np.ones(x.shape[:-1])
    if variant == 2:
        return 1.0 + np.sin(2 * pi * x1)
    if variant == 3:
        return 1.0 + 4 * np.sin(8 * pi * x1) + 3 * np.cos(6 * pi * x2) + 2 * np.sin(8 * pi * x3)
    if variant == 4:
        return 1.0 + 8 * np.sin(16 * pi * x1) + 7 * np.cos(14 * pi * x2) + 6 * np.sin(24 * pi * x3)
    raise ValueError(f"initial condition variant must be 1..4, got {variant}")


def mass_matched_initial(mesh, mass_matrix, variant: int) -> np.ndarray:
    """Nodal interpolant shifted by a constant so its mass equals the area of ``mesh``."""
    values = initial_conditions(variant, mesh.vertices)
    if variant == 1:
        return values
    ones = np.ones(mesh.n_vertices)
    area = ones @ (mass_matrix @ ones)
    return values + (area - ones @ (mass_matrix @ values)) / area


# ---------------------------------------------------------------------------
# Problem catalogue
# ---------------------------------------------------------------------------


def example1() -> ManufacturedProblem:
    """Hemiellipsoid benchmark, ``u = sin(t) x1 x2`` on ``[0, 2]``."""
    s = geo.benchmark_hemiellipsoid()
    return ManufacturedProblem(
        name="example1",
        surface=s,
        velocity=geo.normal_velocity_field(s),
        exact=geo.monomial_field((1, 1, 0), np.sin, np.cos),
        ale_velocity=geo.benchmark_ale_velocity(),
        ale_trajectory=geo.ale_trajectory_benchmark,
        time_interval=(0.0, 2.0),
    )


def example2() -> ManufacturedProblem:
    """Genus-4 plate, ``u = cos(pi t) x1 x2 x3`` on ``[0, 1]``."""
    s = geo.ComplexSurface()
    return ManufacturedProblem(
        name="example2",
        surface=s,
        velocity=geo.normal_velocity_field(s),
        exact=geo.monomial_field(
            (1, 1, 1), lambda t: np.cos(np.pi * t), lambda t: -np.pi * np.sin(np.pi * t)
        ),
        ale_velocity=geo.complex_ale_velocity(),
        ale_trajectory=geo.ale_trajectory_complex,
        time_interval=(0.0, 1.0),
        macro="marching-cubes",
    )


def example3() -> ManufacturedProblem:
    """Graph over the unit disc with source ``10 sin(2 pi x3^2)`` and zero data."""
    s = geo.GraphSurface()

    def source(x, t):
        x = np.asarray(x, dtype=float)
        return 10.0 * np.sin(2.0 * np.pi * x[..., 2] ** 2)

    return ManufacturedProblem(
        name="example3",
        surface=s,
        velocity=geo.graph_lagrangian_velocity(s),
        ale_velocity=geo.graph_ale_velocity(s),
        ale_trajectory=lambda x0, t: geo.ale_trajectory_graph(s, x0, t),
        source_override=source,
        initial=lambda x: np.zeros(np.shape(x)[:-1]),
        time_interval=(0.0, 0.25),
        macro="disc-fan",
    )


def example4(variant: int = 1) -> ManufacturedProblem:
    """Periodically deforming ellipsoid, no source, Lagrangian motion."""
    s = geo.periodic_ellipsoid()
    return ManufacturedProblem(
        name=f"example4-ic{variant}",
        surface=s,
        velocity=geo.normal_velocity_field(s),
        initial=lambda x: initial_conditions(variant, x),
        time_interval=(0.0, 6.0),
    )


def stationary_sphere_decay() -> ManufacturedProblem:
    """Unit sphere at rest, ``u = exp(-6t) x1 x2`` (eigenfunction of ``-lap_G``)."""
    s = geo.sphere()
    return ManufacturedProblem(
        name="sphere-decay",
        surface=s,
        velocity=geo.zero_velocity(),
        exact=geo.monomial_field((1, 1, 0), lambda t: np.exp(-6 * t), lambda t: -6 * np.exp(-6 * t)),
        time_interval=(0.0, 0.1),
    )
