from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from esfem import geometry as geo
from esfem import manufactured as mf
from esfem.exceptions import SolverDiverged
from esfem.fem import Assembler, assemble_mass, assemble_stiffness
from esfem.manufactured import ManufacturedProblem
from esfem.mesh import refine_project
from esfem.timestepping import (
    SolverConfig,
    Stepper,
    TimeGrid,
    bdf1_step,
    bdf2_step,
    solve_linear,
    system_matrix,
)


def constant_problem(c=2.0):
    return ManufacturedProblem(
        name="constant",
        surface=geo.sphere(),
        velocity=geo.zero_velocity(),
        initial=lambda x: np.full(np.shape(x)[:-1], c),
    )


def benchmark_bdf2_system(level=2):
    p = mf.example1()
    st = Stepper(p, refine_project(p.surface, "octahedron", level), TimeGrid(1.0, 10), mode="ale")
    mesh = st.motion.advance(st.mesh0, st.mesh0, 0.3)
    M, S, B, F, _ = st.matrices(mesh)
    A = system_matrix(M, S, B, 0.05, lead=1.5)
    b = 2 * M @ np.cos(mesh.vertices[:, 0]) - 0.5 * M @ np.ones(mesh.n_vertices) + 0.05 * F
    return A, b


# -- grid and config ------------------------------------------------------


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.tau == 0.25 and g.time(8) == 2.0
    assert TimeGrid.from_step(1.0, 0.3).N == 4
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_solver_config_rejects_unknown_kind():
    with pytest.raises(ValueError):
        SolverConfig(kind="cholmod")


# -- linear solver --------------------------------------------------------


def test_identity_solve(rng):
    b = rng.normal(size=7)
    np.testing.assert_allclose(solve_linear(sp.identity(7), b), b)


@pytest.mark.parametrize("kind", ["direct", "gmres", "bicgstab"])
def test_two_by_two(kind):
    x = solve_linear(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]), kind=kind)
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-10)


@pytest.mark.parametrize("kind", ["gmres", "bicgstab"])
def test_krylov_matches_dense_oracle(kind):
    A, b = benchmark_bdf2_system()
    x = solve_linear(A, b, kind=kind)
    oracle = np.linalg.solve(A.toarray(), b)
    np.testing.assert_allclose(x, oracle, rtol=0, atol=1e-9 * np.abs(oracle).max())


def test_multiple_right_hand_sides(rng):
    A, b = benchmark_bdf2_system()
    B = np.column_stack([b, rng.normal(size=len(b))])
    X = solve_linear(A, B)
    np.testing.assert_allclose(X[:, 0], solve_linear(A, b), rtol=1e-12)
    X2 = solve_linear(A, B, kind="gmres")
    np.testing.assert_allclose(X2, X, atol=1e-8)


def test_solver_divergence_is_reported():
    A, b = benchmark_bdf2_system(3)
    with pytest.raises(SolverDiverged):
        solve_linear(A, b, tol=1e-14, kind="gmres", max_iter=1, restart=2)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        solve_linear(sp.identity(3), np.ones(4))


def test_system_matrix_is_positive_definite(rng):
    p = mf.example1()
    m0 = refine_project(p.surface, "octahedron", 3)
    st = Stepper(p, m0, TimeGrid(2.0, 40), mode="ale")
    tau = 0.1 * m0.h()
    for t in (0.0, 0.7, 1.5):
        mesh = st.motion.advance(m0, m0, t)
        M, S, B, _, _ = st.matrices(mesh)
        for lead in (1.0, 1.5):
            A = system_matrix(M, S, B, tau, lead)
            x = rng.normal(size=(m0.n_vertices, 100))
            assert np.all(np.einsum("ij,ij->j", x, A @ x) > 0)


# -- single steps ---------------------------------------------------------


def flat_disc():
    s = geo.GraphSurface()
    m = refine_project(s, "disc-fan", 3)
    return m, assemble_mass(m), assemble_stiffness(m)


def test_bdf1_preserves_constants():
    m, M, S = flat_disc()
    U = np.full(m.n_vertices, 1.7)
    np.testing.assert_allclose(bdf1_step(M, S, None, M, U, 0.1), U, rtol=1e-13)


def test_bdf2_preserves_constants():
    m, M, S = flat_disc()
    U = np.full(m.n_vertices, -0.4)
    np.testing.assert_allclose(bdf2_step(M, S, None, M, U, M, U, 0.1), U, rtol=1e-13)


def test_sphere_eigen_decay_one_step():
    defects = []
    tau = 1e-3
    for lv in (3, 4, 5):
        m = refine_project(geo.sphere(), "octahedron", lv)
        M, S = assemble_mass(m), assemble_stiffness(m)
        U0 = m.vertices[:, 0] * m.vertices[:, 1]
        U1 = bdf1_step(M, S, None, M, U0, tau)
        d = U1 - U0 / (1 + 6 * tau)
        defects.append(np.sqrt(d @ M @ d / (U0 @ M @ U0)))
    assert defects[-1] < 1e-4
    assert defects[0] / defects[1] > 3 and defects[1] / defects[2] > 3


def test_scalar_ode_bdf2_is_second_order():
    lam = 1.0
    one = sp.csr_matrix([[1.0]])
    S = sp.csr_matrix([[lam]])
    errs = []
    for N in (10, 20, 40, 80):
        tau = 1.0 / N
        prev, cur = np.array([1.0]), np.array([np.exp(-lam * tau)])
        for _ in range(N - 1):
            prev, cur = cur, bdf2_step(one, S, None, one, cur, one, prev, tau)
        errs.append(abs(cur[0] - np.exp(-lam)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2) < 0.1), orders


def test_scalar_ode_bdf1_is_first_order():
    one, S = sp.csr_matrix([[1.0]]), sp.csr_matrix([[1.0]])
    errs = []
    for N in (20, 40, 80):
        u = np.array([1.0])
        for _ in range(N):
            u = bdf1_step(one, S, None, one, u, 1.0 / N)
        errs.append(abs(u[0] - np.exp(-1.0)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 1) < 0.1), orders


# -- full runs ------------------------------------------------------------


@pytest.mark.parametrize("scheme", ["bdf1", "bdf2"])
def test_constant_solution_is_preserved(scheme):
    p = constant_problem()
    m = refine_project(p.surface, "octahedron", 3)
    res = Stepper(p, m, TimeGrid(0.5, 10), scheme=scheme).run()
    np.testing.assert_allclose(res.final_state.U, 2.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("scheme,bound", [("bdf1", 1e-10), ("bdf2", 1e-9)])
def test_mass_conservation_on_closed_surface(scheme, bound):
    p = mf.example4(3)
    m = refine_project(p.surface, "octahedron", 2)
    res = Stepper(p, m, TimeGrid(0.3, 100), scheme=scheme).run()
    mass = res.mass_array
    assert np.abs(mass - mass[0]).max() <= bound * abs(mass[0])


def test_bdf2_mass_recurrence_per_step():
    p = mf.example4(2)
    m = refine_project(p.surface, "octahedron", 2)
    mass = Stepper(p, m, TimeGrid(0.2, 40), scheme="bdf2").run().mass_array
    tol = SolverConfig().tol
    rec = 1.5 * mass[2:] - 2 * mass[1:-1] + 0.5 * mass[:-2]
    assert np.abs(rec).max() <= 10 * tol * abs(mass[0])
    n = np.arange(len(mass))
    assert np.all(np.abs(mass - mass[0]) <= np.maximum(n, 1) * 10 * tol * abs(mass[0]))


def test_direct_and_iterative_runs_agree():
    p = mf.example1()
    m = refine_project(p.surface, "octahedron", 2)
    grid = TimeGrid.from_step(2.0, 0.1 * m.h())
    runs = [Stepper(p, m, grid, mode="ale", solver=SolverConfig(kind=k), track_errors=True).run()
            for k in ("direct", "gmres")]
    np.testing.assert_allclose(runs[0].final_state.U, runs[1].final_state.U, rtol=0, atol=1e-8)
    np.testing.assert_allclose(runs[0].l2, runs[1].l2, rtol=1e-8)


def test_multi_rhs_run_matches_separate_runs():
    p = mf.example4(1)
    m = refine_project(p.surface, "octahedron", 2)
    grid = TimeGrid(0.1, 5)
    U0 = np.column_stack([np.ones(m.n_vertices), 1 + np.sin(2 * np.pi * m.vertices[:, 0])])
    both = Stepper(p, m, grid, scheme="bdf1").run(U0).final_state.U
    single = Stepper(p, m, grid, scheme="bdf1").run(U0[:, 1]).final_state.U
    np.testing.assert_allclose(both[:, 1], single, atol=1e-13)


def test_bdf2_start_without_exact_solution_uses_substeps():
    p = mf.example4(2)
    m = refine_project(p.surface, "octahedron", 2)
    states = []
    Stepper(p, m, TimeGrid(0.02, 2), scheme="bdf2", start_substeps=4).run(callback=states.append)
    assert [s.n for s in states] == [0, 1, 2]
    assert states[1].U_prev is states[0].U


def test_callback_sees_all_states_and_errors_are_tracked():
    p = mf.example1()
    m = refine_project(p.surface, "octahedron", 2)
    seen = []
    res = Stepper(p, m, TimeGrid(0.2, 4), mode="ale", track_errors=True).run(callback=seen.append)
    assert len(seen) == 5 == len(res.l2) == len(res.times)
    assert res.l2[0] == pytest.approx(0.0, abs=1e-12)
    assert res.h_final == pytest.approx(res.final_state.mesh.h())


def test_bdf2_needs_two_steps():
    p = constant_problem()
    with pytest.raises(ValueError):
        Stepper(p, refine_project(p.surface, "octahedron", 1), TimeGrid(1.0, 1), scheme="bdf2")


def test_assembler_reuse_in_stepper():
    p = constant_problem()
    m = refine_project(p.surface, "octahedron", 2)
    st = Stepper(p, m, TimeGrid(1.0, 2))
    assert isinstance(st.assembler, Assembler)
    M, S, B, F, lifted = st.matrices(m)
    assert B is None and F is None and lifted is None
