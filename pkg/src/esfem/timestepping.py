"""BDF1 and BDF2 fully discrete schemes on a moving triangulated surface.

Matrix form (``K = B^T``, see below)::

    BDF1:  (M1 + tau (S1 + K1)) U1 = M0 U0 + tau F1
    BDF2:  (3/2 M2 + tau (S2 + K2)) U2 = 2 M1 U1 - 1/2 M0 U0 + tau F2

The advection term of the weak form tests ``U`` against ``T_h . grad chi_j``,
so row ``j`` of the system holds ``sum_i U_i int chi_i T_h . grad chi_j``,
which is the transpose of ``B[i, j] = int chi_i T_h . grad chi_j``. With this
orientation ``1^T K = 0`` and the schemes conserve ``1^T M U`` exactly when
there is no source.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import step_errors
from .exceptions import SolverDiverged
from .fem import Assembler, surface_lift
from .manufactured import ManufacturedProblem
from .mesh import SurfaceMesh
from .quadrature import triangle_rule

logger = logging.getLogger(__name__)

DIRECT_LIMIT = 50_000


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int
    t0: float = 0.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")

    @property
    def tau(self) -> float:
        return (self.T - self.t0) / self.N

    def time(self, n: int) -> float:
        return self.t0 + n * self.tau

    @classmethod
    def from_step(cls, T: float, tau: float, t0: float = 0.0) -> "TimeGrid":
        """Uniform grid with the largest step not exceeding ``tau``."""
        return cls(T, max(1, int(math.ceil((T - t0) / tau - 1e-9))), t0)


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "auto"  # auto | direct | gmres | bicgstab
    tol: float = 1e-10
    max_iter: int = 1000
    restart: int = 50

    def __post_init__(self):
        if self.kind not in ("auto", "direct", "gmres", "bicgstab"):
            raise ValueError(f"unknown solver kind {self.kind!r}")


def solve_linear(A, b, tol: float = 1e-10, kind: str = "auto", max_iter: int = 1000, restart: int = 50):
    """Solve ``A x = b`` with ``||A x - b|| <= tol ||b||`` (column-wise for 2-D ``b``)."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    if kind == "auto":
        kind = "direct" if A.shape[0] <= DIRECT_LIMIT else "gmres"
    if kind == "direct":
        x = spla.splu(A.tocsc()).solve(b)
    else:
        x = np.column_stack([_krylov(A, col, tol, kind, max_iter, restart) for col in b.reshape(len(b), -1).T])
        x = x.reshape(b.shape)
    _check_residual(A, x, b, tol)
    return x


def _krylov(A, b, tol, kind, max_iter, restart):
    diag = A.diagonal()
    diag = np.where(diag == 0, 1.0, diag)
    precond = spla.LinearOperator(A.shape, matvec=lambda v: v / diag)
    # ask for a little more than needed: the Krylov stopping test is on the
    # preconditioned or recursively updated residual
    rtol = 0.1 * tol
    if kind == "gmres":
        x, info = spla.gmres(A, b, rtol=rtol, atol=0.0, restart=restart, maxiter=max_iter, M=precond)
    elif kind == "bicgstab":
        x, info = spla.bicgstab(A, b, rtol=rtol, atol=0.0, maxiter=max_iter, M=precond)
    else:
        raise ValueError(f"unknown solver kind {kind!r}")
    if info < 0:
        raise SolverDiverged(f"{kind} breakdown (info={info})")
    return x


def _check_residual(A, x, b, tol):
    r = A @ x - b
    rn = np.linalg.norm(r, axis=0)
    bn = np.linalg.norm(b, axis=0)
    bad = rn > tol * np.maximum(bn, np.finfo(float).tiny)
    if np.any(bad & (bn > 0)) or np.any(rn[bn == 0] > 0):
        raise SolverDiverged(f"relative residual {float(np.max(rn / np.maximum(bn, 1e-300))):.3e} > {tol:.1e}")


def system_matrix(M, S, B, tau: float, lead: float = 1.0):
    A = lead * M + tau * S
    if B is not None:
        A = A + tau * B.T
    return A.tocsr()


def bdf1_step(M_new, S_new, B_new, M_old, U_old, tau, F_new=None, solver: SolverConfig = SolverConfig()):
    rhs = M_old @ U_old
    if F_new is not None:
        rhs = rhs + tau * F_new
    A = system_matrix(M_new, S_new, B_new, tau)
    return solve_linear(A, rhs, solver.tol, solver.kind, solver.max_iter, solver.restart)


def bdf2_step(M_new, S_new, B_new, M_cur, U_cur, M_prev, U_prev, tau, F_new=None,
              solver: SolverConfig = SolverConfig()):
    rhs = 2.0 * (M_cur @ U_cur) - 0.5 * (M_prev @ U_prev)
    if F_new is not None:
        rhs = rhs + tau * F_new
    A = system_matrix(M_new, S_new, B_new, tau, lead=1.5)
    return solve_linear(A, rhs, solver.tol, solver.kind, solver.max_iter, solver.restart)


@dataclass
class SchemeState:
    scheme: str
    n: int
    t: float
    mesh: SurfaceMesh
    U: np.ndarray
    M: sp.csr_matrix
    prev_mesh: SurfaceMesh | None = None
    U_prev: np.ndarray | None = None
    M_prev: sp.csr_matrix | None = None


@dataclass
class SimulationResult:
    times: list[float] = field(default_factory=list)
    mass: list = field(default_factory=list)
    l2: list[float] = field(default_factory=list)
    h1: list[float] = field(default_factory=list)
    final_state: SchemeState | None = None
    h_final: float = float("nan")

    @property
    def mass_array(self) -> np.ndarray:
        return np.asarray(self.mass)


class Stepper:
    """Advances a :class:`ManufacturedProblem` on a moving mesh.

    Args:
        problem: PDE data, velocities and surface.
        mesh0: initial triangulation at ``grid.t0``.
        grid: uniform time grid.
        scheme: ``"bdf1"`` or ``"bdf2"``.
        mode: ``"lagrangian"`` or ``"ale"``.
        rk_substeps: RK4 substeps per time step for ODE-driven motion.
        quadrature_degree: rule used for load vectors and error norms.
        track_errors: evaluate lifted errors at every step (needs an exact solution).
        start_substeps: BDF1 substeps for the second BDF2 starting value when
            no exact solution is available.
    """

    def __init__(
        self,
        problem: ManufacturedProblem,
        mesh0: SurfaceMesh,
        grid: TimeGrid,
        scheme: str = "bdf2",
        mode: str = "lagrangian",
        solver: SolverConfig = SolverConfig(),
        rk_substeps: int = 1,
        quadrature_degree: int = 6,
        track_errors: bool = False,
        start_substeps: int = 16,
    ):
        if scheme not in ("bdf1", "bdf2"):
            raise ValueError(f"unknown scheme {scheme!r}")
        if scheme == "bdf2" and grid.N < 2:
            raise ValueError("BDF2 needs at least two steps")
        self.problem = problem
        self.mesh0 = mesh0
        self.grid = grid
        self.scheme = scheme
        self.mode = mode
        self.solver = solver
        self.motion = problem.motion(mode, rk_substeps)
        self.rule = triangle_rule(quadrature_degree)
        self.lift = surface_lift(problem.surface)
        self.assembler = Assembler.for_mesh(mesh0)
        self.track_errors = track_errors and problem.exact is not None
        self.start_substeps = start_substeps

    # -- per-time-level data ----------------------------------------------

    def matrices(self, mesh: SurfaceMesh):
        """Mass, stiffness, advection (``None`` when ``T_h = 0``) and load at ``mesh.time``."""
        t = mesh.time
        asm = self.assembler
        M = asm.mass(mesh)
        S = asm.stiffness(mesh)
        tv = self.problem.tangential_velocity(self.mode, mesh.vertices, t)
        B = None if tv is None else asm.advection(mesh, tv)
        F = lifted = None
        need_points = self.problem.has_source or self.track_errors
        if need_points:
            lifted = self.lift(self.rule.physical_points(mesh.corners), t)
        if self.problem.has_source:
            F = asm.load_values(mesh, np.asarray(self.problem.source(lifted, t), dtype=float), self.rule)
        return M, S, B, F, lifted

    def _advance_mesh(self, mesh, t_new):
        return self.motion.advance(mesh, self.mesh0, t_new)

    # -- driver -----------------------------------------------------------

    def run(
        self,
        U0: np.ndarray | None = None,
        U1: np.ndarray | None = None,
        callback: Callable[[SchemeState], None] | None = None,
    ) -> SimulationResult:
        """Integrate over the whole grid.

        ``U0`` defaults to the nodal interpolant of the initial data. For BDF2
        ``U1`` defaults to the interpolant of the exact solution, or a
        substepped BDF1 step without one. ``callback`` sees every state,
        including the initial one.
        """
        p, g = self.problem, self.grid
        res = SimulationResult()
        mesh = self.mesh0
        if U0 is None:
            U0 = np.asarray(p.initial_value(mesh.vertices), dtype=float)
        M, S, B, F, lifted = self.matrices(mesh)
        state = SchemeState(self.scheme, 0, g.time(0), mesh, np.asarray(U0, dtype=float), M)
        self._record(res, state, lifted)
        if callback:
            callback(state)

        for n in range(g.N):
            t_new = g.time(n + 1)
            if self.scheme == "bdf2" and n == 0:
                new_mesh, U_new, M_new, lifted = self._start_bdf2(state, U1, t_new)
            else:
                new_mesh = self._advance_mesh(state.mesh, t_new)
                M_new, S_new, B_new, F_new, lifted = self.matrices(new_mesh)
                if self.scheme == "bdf1":
                    U_new = bdf1_step(M_new, S_new, B_new, state.M, state.U, g.tau, F_new, self.solver)
                else:
                    U_new = bdf2_step(M_new, S_new, B_new, state.M, state.U, state.M_prev,
                                      state.U_prev, g.tau, F_new, self.solver)
            state = SchemeState(self.scheme, n + 1, t_new, new_mesh, U_new, M_new,
                                prev_mesh=state.mesh, U_prev=state.U, M_prev=state.M)
            self._record(res, state, lifted)
            if callback:
                callback(state)
        res.final_state = state
        res.h_final = state.mesh.h()
        return res

    def _start_bdf2(self, state, U1, t1):
        p = self.problem
        if U1 is not None or p.exact is not None:
            mesh1 = self._advance_mesh(state.mesh, t1)
            M1, _, _, _, lifted = self.matrices(mesh1)
            if U1 is None:
                U1 = p.exact.value(mesh1.vertices, t1)
            return mesh1, np.asarray(U1, dtype=float), M1, lifted
        sub = max(1, int(self.start_substeps))
        dt = (t1 - state.t) / sub
        mesh, U, M = state.mesh, state.U, state.M
        lifted = None
        for k in range(sub):
            mesh = self._advance_mesh(mesh, state.t + (k + 1) * dt)
            M_new, S_new, B_new, F_new, lifted = self.matrices(mesh)
            U = bdf1_step(M_new, S_new, B_new, M, U, dt, F_new, self.solver)
            M = M_new
        return mesh, U, M, lifted

    def _record(self, res, state, lifted):
        ones = np.ones(state.mesh.n_vertices)
        res.times.append(state.t)
        res.mass.append(ones @ (state.M @ state.U))
        if self.track_errors:
            l2, h1 = step_errors(state.U, state.mesh, self.problem.exact, self.problem.surface,
                                 state.t, self.rule, lifted=lifted)
            res.l2.append(l2)
            res.h1.append(h1)
