"""Closed-form moving surfaces and ambient surface calculus.

Every surface is the zero set of a level-set function ``d(x, t)`` with
closed-form spatial gradient, Hessian, time derivative and the gradient of
the time derivative. All evaluators are vectorised over leading axes: points
have shape ``(..., 3)`` and results have shapes ``(...)``, ``(..., 3)`` or
``(..., 3, 3)``.

Surface calculus uses the level-set extension of the normal
``nu = grad d / |grad d|``, so that

* tangential gradient   ``grad_G u = P grad u`` with ``P = I - nu nu^T``
* Laplace-Beltrami      ``lap_G u = lap u - nu^T D^2u nu - H (grad u . nu)``
* surface divergence    ``div_G w = tr(P Dw)``

where ``H = tr(P D^2 d) / |grad d|`` is the (summed) mean curvature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .exceptions import DegenerateGradient, NoConvergence

Array = NDArray[np.float64]

GRADIENT_FLOOR = 1e-14
FD_STEP = 1e-6
MAX_HALVINGS = 8
# Newton iterations before stalled points are handed to the robust fallback
NEWTON_FIRST_PASS = 15


# ---------------------------------------------------------------------------
# Surfaces
# ---------------------------------------------------------------------------


class LevelSetSurface:
    """Base class for a moving surface ``{x : d(x, t) = 0}``.

    Subclasses implement :meth:`value`, :meth:`grad`, :meth:`hess`,
    :meth:`dt` and :meth:`grad_dt`.

    Attributes:
        halfspace: restrict the surface to ``x3 >= 0`` (hemiellipsoid).
        closed: whether the surface has empty boundary.
        time_interval: nominal ``(0, T)`` of the experiment using it.
    """

    halfspace: bool = False
    closed: bool = True
    time_interval: tuple[float, float] = (0.0, 1.0)

    def value(self, x: Array, t: float) -> Array:
        raise NotImplementedError

    def grad(self, x: Array, t: float) -> Array:
        raise NotImplementedError

    def hess(self, x: Array, t: float) -> Array:
        raise NotImplementedError

    def dt(self, x: Array, t: float) -> Array:
        raise NotImplementedError

    def grad_dt(self, x: Array, t: float) -> Array:
        raise NotImplementedError

    def __call__(self, x: Array, t: float) -> Array:
        return self.value(x, t)


class Ellipsoid(LevelSetSurface):
    """``d = sum_i x_i^2 / A_i(t)^2 - 1`` with time dependent semi-axes.

    Args:
        axes: ``t -> (A1, A2, A3)``.
        axes_dot: ``t -> (A1', A2', A3')``.
        halfspace: keep only ``x3 >= 0``.
    """

    def __init__(
        self,
        axes: Callable[[float], Array],
        axes_dot: Callable[[float], Array],
        halfspace: bool = False,
        time_interval: tuple[float, float] = (0.0, 1.0),
        name: str = "ellipsoid",
    ):
        self.axes = axes
        self.axes_dot = axes_dot
        self.halfspace = halfspace
        self.closed = not halfspace
        self.time_interval = time_interval
        self.name = name

    def _a(self, t):
        return np.asarray(self.axes(t), dtype=float)

    def value(self, x, t):
        x = np.asarray(x, dtype=float)
        return np.sum(x**2 / self._a(t) ** 2, axis=-1) - 1.0

    def grad(self, x, t):
        x = np.asarray(x, dtype=float)
        return 2.0 * x / self._a(t) ** 2

    def hess(self, x, t):
        x = np.asarray(x, dtype=float)
        h = np.diag(2.0 / self._a(t) ** 2)
        return np.broadcast_to(h, x.shape + (3,)).copy()

    def dt(self, x, t):
        x = np.asarray(x, dtype=float)
        a, ad = self._a(t), np.asarray(self.axes_dot(t), dtype=float)
        return np.sum(-2.0 * x**2 * ad / a**3, axis=-1)

    def grad_dt(self, x, t):
        x = np.asarray(x, dtype=float)
        a, ad = self._a(t), np.asarray(self.axes_dot(t), dtype=float)
        return -4.0 * x * ad / a**3

    def as_level_set(self) -> LevelSetSurface:
        """The same surface seen only through the generic level-set interface."""
        return _GenericView(self)

    def __repr__(self):
        return f"Ellipsoid({self.name!r})"


class _GenericView(LevelSetSurface):
    """Delegating wrapper that hides the concrete surface type."""

    def __init__(self, inner: LevelSetSurface):
        self.inner = inner
        self.halfspace, self.closed = inner.halfspace, inner.closed
        self.time_interval = inner.time_interval

    def value(self, x, t):
        return self.inner.value(x, t)

    def grad(self, x, t):
        return self.inner.grad(x, t)

    def hess(self, x, t):
        return self.inner.hess(x, t)

    def dt(self, x, t):
        return self.inner.dt(x, t)

    def grad_dt(self, x, t):
        return self.inner.grad_dt(x, t)


def sphere(
    radius: Callable[[float], float] | float = 1.0,
    radius_dot: Callable[[float], float] | None = None,
) -> Ellipsoid:
    """Sphere of (possibly time dependent) radius centred at the origin."""
    if callable(radius):
        if radius_dot is None:
            raise ValueError("radius_dot is required for a moving sphere")
        r, rd = radius, radius_dot
    else:
        r0 = float(radius)
        r, rd = (lambda t: r0), (lambda t: 0.0)
    return Ellipsoid(
        lambda t: np.full(3, r(t)), lambda t: np.full(3, rd(t)), name="sphere"
    )


def benchmark_a(t):
    return 1.0 + 0.25 * np.sin(t)


def benchmark_a_dot(t):
    return 0.25 * np.cos(t)


def benchmark_hemiellipsoid() -> Ellipsoid:
    """``x1^2/a(t) + x2^2 + x3^2 = 1``, ``x3 >= 0``, ``a = 1 + sin(t)/4``."""

    def axes(t):
        return np.array([np.sqrt(benchmark_a(t)), 1.0, 1.0])

    def axes_dot(t):
        return np.array([benchmark_a_dot(t) / (2.0 * np.sqrt(benchmark_a(t))), 0.0, 0.0])

    return Ellipsoid(axes, axes_dot, halfspace=True, time_interval=(0.0, 2.0),
                     name="benchmark-hemiellipsoid")


def periodic_ellipsoid() -> Ellipsoid:
    """Ellipsoid with axes ``1 - sin(pi t)/10, 1 - sin(pi t)/5, 1 + sin(pi t)/10``."""
    amp = np.array([-0.1, -0.2, 0.1])

    def axes(t):
        return 1.0 + amp * np.sin(np.pi * t)

    def axes_dot(t):
        return amp * np.pi * np.cos(np.pi * t)

    return Ellipsoid(axes, axes_dot, time_interval=(0.0, 6.0), name="periodic-ellipsoid")


def _G(s):
    return 31.25 * s * (s - 0.36) * (s - 0.95)


def _G1(s):
    return 31.25 * (3.0 * s**2 - 2.62 * s + 0.342)


def _G2(s):
    return 31.25 * (6.0 * s - 2.62)


class ComplexSurface(LevelSetSurface):
    """``x1^2/a^2 + G(x2^2) + G(x3^2/L^2) - 1``, ``G(s) = 31.25 s(s-0.36)(s-0.95)``.

    ``a(t) = 0.1 + 0.01 sin(2 pi t)``, ``L(t) = 1 + 0.3 sin(4 pi t)``. The zero
    set is a thin closed plate with four holes (genus 4); both ``a`` and
    ``L`` have period one.
    """

    closed = True
    time_interval = (0.0, 1.0)

    @staticmethod
    def a(t):
        return 0.1 + 0.01 * np.sin(2.0 * np.pi * t)

    @staticmethod
    def a_dot(t):
        return 0.02 * np.pi * np.cos(2.0 * np.pi * t)

    @staticmethod
    def L(t):
        return 1.0 + 0.3 * np.sin(4.0 * np.pi * t)

    @staticmethod
    def L_dot(t):
        return 1.2 * np.pi * np.cos(4.0 * np.pi * t)

    def value(self, x, t):
        x = np.asarray(x, dtype=float)
        a, L = self.a(t), self.L(t)
        return x[..., 0] ** 2 / a**2 + _G(x[..., 1] ** 2) + _G(x[..., 2] ** 2 / L**2) - 1.0

    def grad(self, x, t):
        x = np.asarray(x, dtype=float)
        a, L = self.a(t), self.L(t)
        s3 = x[..., 2] ** 2 / L**2
        return np.stack(
            [
                2.0 * x[..., 0] / a**2,
                2.0 * x[..., 1] * _G1(x[..., 1] ** 2),
                2.0 * x[..., 2] / L**2 * _G1(s3),
            ],
            axis=-1,
        )

    def hess(self, x, t):
        x = np.asarray(x, dtype=float)
        a, L = self.a(t), self.L(t)
        s2 = x[..., 1] ** 2
        s3 = x[..., 2] ** 2 / L**2
        h = np.zeros(x.shape + (3,))
        h[..., 0, 0] = 2.0 / a**2
        h[..., 1, 1] = 2.0 * _G1(s2) + 4.0 * s2 * _G2(s2)
        h[..., 2, 2] = 2.0 / L**2 * _G1(s3) + (2.0 * x[..., 2] / L**2) ** 2 * _G2(s3)
        return h

    def dt(self, x, t):
        x = np.asarray(x, dtype=float)
        a, ad, L, Ld = self.a(t), self.a_dot(t), self.L(t), self.L_dot(t)
        s3 = x[..., 2] ** 2 / L**2
        return -2.0 * x[..., 0] ** 2 * ad / a**3 + _G1(s3) * (-2.0 * s3 * Ld / L)

    def grad_dt(self, x, t):
        x = np.asarray(x, dtype=float)
        a, ad, L, Ld = self.a(t), self.a_dot(t), self.L(t), self.L_dot(t)
        x3 = x[..., 2]
        s3 = x3**2 / L**2
        ds3 = 2.0 * x3 / L**2
        g3 = _G2(s3) * ds3 * (-2.0 * s3 * Ld / L) + _G1(s3) * (-2.0 * ds3 * Ld / L)
        return np.stack([-4.0 * x[..., 0] * ad / a**3, np.zeros_like(x3), g3], axis=-1)

    def __repr__(self):
        return "ComplexSurface()"


class GraphSurface(LevelSetSurface):
    """Graph ``x3 = z(x1, x2, t) = 2 sin(2 pi t)(1 - x1^2 - x2^2)`` over the unit disc.

    Viewed as the level set ``d = x3 - z(x1, x2, t)``. The boundary circle
    ``|theta| = 1`` is fixed for all time.
    """

    halfspace = False
    closed = False
    time_interval = (0.0, 0.25)

    @staticmethod
    def amplitude(t):
        return 2.0 * np.sin(2.0 * np.pi * t)

    @staticmethod
    def amplitude_dot(t):
        return 4.0 * np.pi * np.cos(2.0 * np.pi * t)

    def z(self, theta, t):
        theta = np.asarray(theta, dtype=float)
        return self.amplitude(t) * (1.0 - np.sum(theta[..., :2] ** 2, axis=-1))

    def grad_z(self, theta, t):
        theta = np.asarray(theta, dtype=float)
        return -2.0 * self.amplitude(t) * theta[..., :2]

    def dt_z(self, theta, t):
        theta = np.asarray(theta, dtype=float)
        return self.amplitude_dot(t) * (1.0 - np.sum(theta[..., :2] ** 2, axis=-1))

    def value(self, x, t):
        x = np.asarray(x, dtype=float)
        return x[..., 2] - self.z(x, t)

    def grad(self, x, t):
        x = np.asarray(x, dtype=float)
        g = np.empty(x.shape)
        g[..., :2] = -self.grad_z(x, t)
        g[..., 2] = 1.0
        return g

    def hess(self, x, t):
        x = np.asarray(x, dtype=float)
        h = np.zeros(x.shape + (3,))
        h[..., 0, 0] = h[..., 1, 1] = 2.0 * self.amplitude(t)
        return h

    def dt(self, x, t):
        return -self.dt_z(x, t)

    def grad_dt(self, x, t):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        g[..., :2] = 2.0 * self.amplitude_dot(t) * x[..., :2]
        return g

    def project_vertical(self, x, t):
        """Snap ``x3`` onto the graph, keeping ``(x1, x2)``."""
        p = np.array(x, dtype=float, copy=True)
        p[..., 2] = self.z(p, t)
        return p

    def __repr__(self):
        return "GraphSurface()"


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AmbientField:
    """Scalar field on R^3 x [0, T] with closed-form derivatives."""

    value: Callable[[Array, float], Array]
    grad: Callable[[Array, float], Array]
    hess: Callable[[Array, float], Array]
    dt: Callable[[Array, float], Array]

    def __call__(self, x, t):
        return self.value(x, t)


def constant_field(c: float) -> AmbientField:
    def value(x, t):
        return np.full(np.shape(x)[:-1], float(c))

    def grad(x, t):
        return np.zeros(np.shape(x))

    def hess(x, t):
        return np.zeros(np.shape(x) + (3,))

    def dt(x, t):
        return np.zeros(np.shape(x)[:-1])

    return AmbientField(value, grad, hess, dt)


def monomial_field(
    powers: tuple[int, int, int],
    time_factor: Callable[[float], float] = lambda t: 1.0,
    time_factor_dot: Callable[[float], float] = lambda t: 0.0,
) -> AmbientField:
    """``c(t) * x1^p1 x2^p2 x3^p3`` with closed-form derivatives."""
    p = np.asarray(powers, dtype=int)

    def mono(x, q):
        out = np.ones(np.shape(x)[:-1])
        for i in range(3):
            if q[i] < 0:
                return np.zeros(np.shape(x)[:-1])
            if q[i] > 0:
                out = out * x[..., i] ** q[i]
        return out

    def value(x, t):
        x = np.asarray(x, dtype=float)
        return time_factor(t) * mono(x, p)

    def grad(x, t):
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(3):
            q = p.copy()
            q[i] -= 1
            cols.append(p[i] * mono(x, q))
        return time_factor(t) * np.stack(cols, axis=-1)

    def hess(x, t):
        x = np.asarray(x, dtype=float)
        h = np.zeros(x.shape + (3,))
        for i in range(3):
            for j in range(3):
                q = p.copy()
                q[i] -= 1
                c = p[i]
                c = c * q[j]
                q[j] -= 1
                if c:
                    h[..., i, j] = c * mono(x, q)
        return time_factor(t) * h

    def dt(x, t):
        x = np.asarray(x, dtype=float)
        return time_factor_dot(t) * mono(x, p)

    return AmbientField(value, grad, hess, dt)


@dataclass(frozen=True)
class VelocityField:
    """Vector field ``(x, t) -> R^3``.

    ``jacobian`` returns ``Dw`` with ``Dw[..., i, j] = d w_i / d x_j``; when it
    is ``None`` the Jacobian is taken by central differences.
    """

    kind: str
    func: Callable[[Array, float], Array]
    jacobian: Callable[[Array, float], Array] | None = None

    def __call__(self, x, t):
        return self.func(x, t)

    def jac(self, x, t):
        if self.jacobian is not None:
            return self.jacobian(x, t)
        return fd_jacobian(self.func, x, t)


def fd_jacobian(func, x, t, step: float = FD_STEP):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        cols.append((func(x + e, t) - func(x - e, t)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def zero_velocity() -> VelocityField:
    return VelocityField(
        "zero", lambda x, t: np.zeros(np.shape(x)), lambda x, t: np.zeros(np.shape(x) + (3,))
    )


def normal_velocity_field(surface: LevelSetSurface) -> VelocityField:
    """Material velocity with zero tangential part, ``v = -d_t grad d / |grad d|^2``."""

    def func(x, t):
        return normal_velocity(surface, x, t)

    def jac(x, t):
        g = surface.grad(x, t)
        h = surface.hess(x, t)
        s = surface.dt(x, t)[..., None, None]
        gs = surface.grad_dt(x, t)
        q = np.sum(g * g, axis=-1)[..., None, None]
        hg = (h @ g[..., None])[..., 0]
        return -_outer(g, gs) / q - s * h / q + 2.0 * s * _outer(g, hg) / q**2

    return VelocityField("normal-from-level-set", func, jac)


def benchmark_ale_velocity() -> VelocityField:
    """Mesh velocity ``(x1 a'/(2a), 0, 0)`` of the benchmark ALE motion."""

    def func(x, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        out[..., 0] = x[..., 0] * benchmark_a_dot(t) / (2.0 * benchmark_a(t))
        return out

    def jac(x, t):
        out = np.zeros(np.shape(x) + (3,))
        out[..., 0, 0] = benchmark_a_dot(t) / (2.0 * benchmark_a(t))
        return out

    return VelocityField("closed-form-ALE", func, jac)


def complex_ale_velocity() -> VelocityField:
    """Mesh velocity ``(x1 a'/a, 0, x3 L'/L)`` of the periodic scaling motion."""
    cs = ComplexSurface

    def func(x, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        out[..., 0] = x[..., 0] * cs.a_dot(t) / cs.a(t)
        out[..., 2] = x[..., 2] * cs.L_dot(t) / cs.L(t)
        return out

    def jac(x, t):
        out = np.zeros(np.shape(x) + (3,))
        out[..., 0, 0] = cs.a_dot(t) / cs.a(t)
        out[..., 2, 2] = cs.L_dot(t) / cs.L(t)
        return out

    return VelocityField("closed-form-ALE", func, jac)


def graph_lagrangian_velocity(surface: GraphSurface) -> VelocityField:
    def func(x, t):
        return graph_velocities(surface, x, t)[0]

    return VelocityField("graph-normal", func)


def graph_ale_velocity(surface: GraphSurface) -> VelocityField:
    def func(x, t):
        return graph_velocities(surface, x, t)[1]

    def jac(x, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (3,))
        out[..., 2, :2] = -2.0 * surface.amplitude_dot(t) * x[..., :2]
        return out

    return VelocityField("graph-vertical", func, jac)


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def _quadratic(v, m):
    """``v^T m v`` over leading axes."""
    return np.sum(v * (m @ v[..., None])[..., 0], axis=-1)


def _trace(m):
    return m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2]


# ---------------------------------------------------------------------------
# Surface calculus
# ---------------------------------------------------------------------------


def _unit_normal(g):
    n = np.linalg.norm(g, axis=-1)
    if np.any(n < GRADIENT_FLOOR):
        raise DegenerateGradient("level-set gradient vanishes")
    return g / n[..., None], n


def normal(surface: LevelSetSurface, x, t) -> Array:
    """Unit normal ``grad d / |grad d|``."""
    return _unit_normal(surface.grad(x, t))[0]


def normal_velocity(surface: LevelSetSurface, x, t) -> Array:
    """Normal velocity ``(-d_t / |grad d|) nu`` of the moving zero set."""
    nu, n = _unit_normal(surface.grad(x, t))
    return (-surface.dt(x, t) / n)[..., None] * nu


def projector(nu):
    return np.eye(3) - _outer(nu, nu)


def mean_curvature(surface: LevelSetSurface, x, t) -> Array:
    """``H = tr(P D^2 d) / |grad d|`` (sum of principal curvatures)."""
    nu, n = _unit_normal(surface.grad(x, t))
    h = surface.hess(x, t)
    trace = _trace(h) - _quadratic(nu, h)
    return trace / n


def tangential_gradient(u: AmbientField, surface: LevelSetSurface, x, t) -> Array:
    nu = normal(surface, x, t)
    g = u.grad(x, t)
    return g - np.sum(g * nu, axis=-1)[..., None] * nu


def laplace_beltrami(u: AmbientField, surface: LevelSetSurface, x, t) -> Array:
    nu = normal(surface, x, t)
    hu = u.hess(x, t)
    gu = u.grad(x, t)
    lap = _trace(hu)
    nhn = _quadratic(nu, hu)
    return lap - nhn - mean_curvature(surface, x, t) * np.sum(gu * nu, axis=-1)


def surface_divergence(w: VelocityField, surface: LevelSetSurface, x, t) -> Array:
    nu = normal(surface, x, t)
    dw = w.jac(x, t)
    return _trace(dw) - _quadratic(nu, dw)


def closest_point(
    surface: LevelSetSurface,
    x,
    t: float,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> Array:
    """Foot point ``p`` with ``x = p + lambda grad d(p)`` and ``d(p) = 0``.

    Newton iteration on the 4-unknown system, starting from ``p = x``,
    ``lambda = 0``. A step that does not reduce the residual norm is halved
    (at most ``MAX_HALVINGS`` times); near the surface full steps are always
    accepted, so the quadratic convergence is untouched.

    Points close to the focal set (inside thin, strongly curved rims such as
    the edges of the genus-4 plate) can stall Newton. Those are moved onto
    the surface by alternating projections and Newton is restarted from there.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape
    xf = x.reshape(-1, 3)
    first = min(max_iter, NEWTON_FIRST_PASS)
    if isinstance(surface, Ellipsoid):
        p, ok = _ellipsoid_foot(surface, xf, t, tol, max_iter)
        if ok.all():
            return p.reshape(shape)
        sub = np.flatnonzero(~ok)
        p[sub] = closest_point(surface.as_level_set(), xf[sub], t, tol, max_iter)
        return p.reshape(shape)
    p, lam, ok = _closest_point_newton(surface, xf, t, xf.copy(), np.zeros(len(xf)), tol, first)
    if not ok.all():
        bad = np.flatnonzero(~ok)
        p0, lam0 = _alternating_projection(surface, xf[bad], t)
        pb, lb, okb = _closest_point_newton(surface, xf[bad], t, p0, lam0, tol, max_iter)
        if not okb.all():
            raise NoConvergence(
                f"closest point did not converge in {max_iter} iterations for {int((~okb).sum())} points"
            )
        p[bad] = pb
    return p.reshape(shape)


def _ellipsoid_foot(surface: "Ellipsoid", xf, t, tol, max_iter):
    """Foot points on an axis-aligned ellipsoid via one scalar equation per point.

    With ``s = 2 lambda`` the optimality condition gives
    ``p_i = x_i A_i^2 / (A_i^2 + s)`` and ``s`` solves
    ``F(s) = sum_i (x_i A_i / (A_i^2 + s))^2 - 1 = 0``. ``F`` is convex and
    decreasing on ``s > -min A_i^2``; Newton starts at ``s = 0`` and a step
    leaving that interval is replaced by bisection towards its left end.
    Returns ``(p, ok)``; points with ``ok = False`` need the general solver.
    """
    a2 = surface._a(t) ** 2
    lo = -a2.min()
    s = np.zeros(len(xf))
    xa2 = xf**2 * a2
    for _ in range(max_iter):
        q = a2 + s[:, None]
        f = np.sum(xa2 / q**2, axis=-1) - 1.0
        df = -2.0 * np.sum(xa2 / q**3, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_new = s - f / df
        bad = ~np.isfinite(s_new) | (s_new <= lo)
        s_new[bad] = 0.5 * (s[bad] + lo)
        if np.all(np.abs(s_new - s) <= 1e-15 * (1.0 + np.abs(s))):
            s = s_new
            break
        s = s_new
    p = xf * a2 / (a2 + s[:, None])
    scale = 1.0 + np.abs(xf).max(axis=-1)
    r1 = p + (0.5 * s)[:, None] * surface.grad(p, t) - xf
    ok = (np.abs(r1).max(axis=-1) <= tol * scale) & (np.abs(surface.value(p, t)) <= tol)
    return p, ok


def _closest_point_newton(surface, xf, t, p, lam, tol, max_iter):
    scale = 1.0 + np.abs(xf).max(axis=-1)
    g = surface.grad(p, t)
    r1 = p + lam[:, None] * g - xf
    r2 = surface.value(p, t)

    def converged(i):
        return (np.abs(r1[i]).max(axis=-1) <= tol * scale[i]) & (np.abs(r2[i]) <= tol)

    done = converged(slice(None))
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if len(act) == 0:
            break
        pa, la = p[act], lam[act]
        h = surface.hess(pa, t)
        ga = g[act]
        step = _kkt_step(np.eye(3) + la[:, None, None] * h, ga, r1[act], r2[act])
        rhs = np.concatenate([r1[act], r2[act, None]], axis=-1)
        merit = np.sum(rhs**2, axis=-1)
        alpha = np.ones(len(act))
        pending = np.arange(len(act))
        for halving in range(MAX_HALVINGS + 1):
            idx = act[pending]
            p_try = pa[pending] + alpha[pending, None] * step[pending, :3]
            l_try = la[pending] + alpha[pending] * step[pending, 3]
            g_try = surface.grad(p_try, t)
            r1_try = p_try + l_try[:, None] * g_try - xf[idx]
            r2_try = surface.value(p_try, t)
            ok = np.sum(r1_try**2, axis=-1) + r2_try**2 < merit[pending]
            if halving == MAX_HALVINGS:
                ok[:] = True
            sel = idx[ok]
            p[sel], lam[sel], g[sel], r1[sel], r2[sel] = p_try[ok], l_try[ok], g_try[ok], r1_try[ok], r2_try[ok]
            pending = pending[~ok]
            if len(pending) == 0:
                break
            alpha[pending] *= 0.5
        done[act] = converged(act)
    return p, lam, done


def _kkt_step(a, g, r1, r2):
    """Newton step for ``[[A, g], [g^T, 0]] (dp, dlam) = -(r1, r2)``, batched.

    Schur complement with the cofactor inverse of the 3x3 block; nearly
    singular systems fall back to a least-squares solve of the full 4x4 system.
    """
    c = np.empty_like(a)
    c[:, 0, 0] = a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1]
    c[:, 0, 1] = a[:, 0, 2] * a[:, 2, 1] - a[:, 0, 1] * a[:, 2, 2]
    c[:, 0, 2] = a[:, 0, 1] * a[:, 1, 2] - a[:, 0, 2] * a[:, 1, 1]
    c[:, 1, 0] = a[:, 1, 2] * a[:, 2, 0] - a[:, 1, 0] * a[:, 2, 2]
    c[:, 1, 1] = a[:, 0, 0] * a[:, 2, 2] - a[:, 0, 2] * a[:, 2, 0]
    c[:, 1, 2] = a[:, 0, 2] * a[:, 1, 0] - a[:, 0, 0] * a[:, 1, 2]
    c[:, 2, 0] = a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0]
    c[:, 2, 1] = a[:, 0, 1] * a[:, 2, 0] - a[:, 0, 0] * a[:, 2, 1]
    c[:, 2, 2] = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    det = np.einsum("ki,ki->k", a[:, 0, :], c[:, :, 0])
    # with adj = c:  A^{-1} = c / det
    y = np.einsum("kij,kj->ki", c, r1)
    z = np.einsum("kij,kj->ki", c, g)
    gz = np.sum(g * z, axis=-1)
    gg = np.sum(g * g, axis=-1)
    anorm = np.abs(a).max(axis=(1, 2))
    good = (np.abs(det) > 1e-10 * anorm**3) & (np.abs(gz) > 1e-10 * gg * anorm**2)
    step = np.empty((len(a), 4))
    dlam = (det[good] * r2[good] - np.sum(g[good] * y[good], axis=-1)) / gz[good]
    step[good, 3] = dlam
    step[good, :3] = -(y[good] + z[good] * dlam[:, None]) / det[good, None]
    bad = np.flatnonzero(~good)
    for k in bad:
        full = np.zeros((4, 4))
        full[:3, :3] = a[k]
        full[:3, 3] = g[k]
        full[3, :3] = g[k]
        step[k] = np.linalg.lstsq(full, -np.append(r1[k], r2[k]), rcond=None)[0]
    return step


def _alternating_projection(surface, xf, t, iterations: int = 500, tol: float = 1e-8):
    """Slow but robust foot-point estimate.

    Alternates a Newton projection onto ``{d = 0}`` along ``grad d`` with a
    damped tangential move towards ``x``. Returns ``(p, lambda)`` for a
    Newton restart.
    """
    p = xf.copy()
    for _ in range(iterations):
        for _inner in range(3):
            g = surface.grad(p, t)
            p = p - (surface.value(p, t) / np.sum(g * g, axis=-1))[:, None] * g
        nu = _unit_normal(surface.grad(p, t))[0]
        dx = xf - p
        tang = dx - np.sum(dx * nu, axis=-1)[:, None] * nu
        if np.abs(tang).max() < tol:
            break
        p = p + 0.5 * tang
    g = surface.grad(p, t)
    lam = np.sum((xf - p) * g, axis=-1) / np.sum(g * g, axis=-1)
    return p, lam


# ---------------------------------------------------------------------------
# Prescribed trajectories
# ---------------------------------------------------------------------------


def ale_trajectory_benchmark(x0, t) -> Array:
    """Exact trajectory ``(x0_1 sqrt(a(t)), x0_2, x0_3)`` of the benchmark ALE velocity."""
    x = np.array(x0, dtype=float, copy=True)
    x[..., 0] *= np.sqrt(benchmark_a(t))
    return x


def ale_trajectory_complex(x0, t) -> Array:
    """Scaling ``X a(t)/a(0)``, ``Y``, ``Z L(t)/L(0)`` for the genus-4 surface."""
    cs = ComplexSurface
    x = np.array(x0, dtype=float, copy=True)
    x[..., 0] *= cs.a(t) / cs.a(0.0)
    x[..., 2] *= cs.L(t) / cs.L(0.0)
    return x


def ale_trajectory_graph(surface: GraphSurface, x0, t) -> Array:
    """Vertical motion: keep ``(x1, x2)``, follow the graph height."""
    return surface.project_vertical(x0, t)


def graph_velocities(surface: GraphSurface, theta, t) -> tuple[Array, Array]:
    """Lagrangian (normal) and ALE (vertical) velocities of the graph."""
    theta = np.asarray(theta, dtype=float)
    zt = surface.dt_z(theta, t)
    gz = surface.grad_z(theta, t)
    denom = 1.0 + np.sum(gz**2, axis=-1)
    lag = np.empty(theta.shape[:-1] + (3,))
    lag[..., :2] = -(zt / denom)[..., None] * gz
    lag[..., 2] = zt / denom
    ale = np.zeros(theta.shape[:-1] + (3,))
    ale[..., 2] = zt
    return lag, ale
