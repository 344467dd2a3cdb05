import numpy as np
import pytest
import scipy.linalg as sla

from conftest import (cvt, eight_cell, energy_error, jump_fixture, rnd, sinker_fixture, smooth_gradient,
                      smooth_load, smooth_velocity, Fixture)
from vembddc.assembly import (
    SolverError,
    apply_dirichlet,
    assemble_global,
    back_substitute,
    build_dof_map,
    direct_solve_reference,
    interpolate_velocity,
    lid_velocity,
    project_pressure,
)
from vembddc.decomp import partition_mesh
from vembddc.mesh import unit_square_grid
from vembddc.vem import VemCell


def patch_velocity(p):
    return np.column_stack([p[:, 0] ** 2, -2 * p[:, 0] * p[:, 1]])


def patch_pressure(p):
    return p[:, 0] - 0.5


PATCH_MESHES = {
    "structured": lambda: unit_square_grid(4),
    "cvt64": lambda: cvt(64),
    "rnd64": lambda: rnd(64),
}


def test_single_square_counts():
    dm = build_dof_map(unit_square_grid(1))
    assert dm.n_velocity == 18
    assert dm.n_pressure == 3


def test_two_cell_counts_share_an_edge():
    m = unit_square_grid(2, 1)
    dm = build_dof_map(m)
    assert (m.n_vertices, m.n_edges) == (6, 7)
    assert dm.n_velocity == 2 * 6 + 2 * 7 + 2 * 2
    shared = np.intersect1d(dm.cell_velocity_dofs(0), dm.cell_velocity_dofs(1))
    # two vertices and one edge node, two components each
    assert len(shared) == 6


def test_counts_follow_entity_formula():
    m = cvt(100)
    dm = build_dof_map(m)
    assert dm.n_velocity == 2 * m.n_vertices + 2 * m.n_edges + 2 * m.n_cells
    assert dm.n_pressure == 3 * m.n_cells
    every = np.concatenate([dm.cell_velocity_dofs(c) for c in range(m.n_cells)])
    assert np.array_equal(np.unique(every), np.arange(dm.n_velocity))


def test_one_cell_global_blocks_are_local_blocks():
    m = unit_square_grid(1)
    dm = build_dof_map(m)
    s = assemble_global(m, dm, 1.0)
    cell = VemCell(m.cell_coords(0), 0)
    g = dm.cell_velocity_dofs(0)
    np.testing.assert_allclose(s.A.toarray()[np.ix_(g, g)], cell.stiffness(1.0), atol=1e-13)
    np.testing.assert_allclose(s.B.toarray()[:, g], cell.divergence, atol=1e-13)


def test_global_stiffness_symmetric_psd():
    fx = sinker_fixture()
    A = fx.system.A
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    Aff = fx.system.A_ff.toarray()
    lam = np.linalg.eigvalsh(Aff)
    assert lam[0] > 0


@pytest.mark.parametrize("name", sorted(PATCH_MESHES))
def test_patch_quadratic_flow_is_exact(name):
    m = PATCH_MESHES[name]()
    dm = build_dof_map(m)
    s = apply_dirichlet(assemble_global(m, dm, 1.0, lambda x: np.array([-3.0, 0.0])), patch_velocity)
    sol = direct_solve_reference(s)
    ui = interpolate_velocity(dm, patch_velocity)
    pi = project_pressure(dm, patch_pressure)
    assert np.abs(sol.u - ui).max() <= 1e-8 * np.abs(ui).max()
    assert np.abs(sol.p - pi).max() <= 1e-8 * np.abs(pi).max()


def test_zero_boundary_data_leaves_load_alone():
    m = cvt(40)
    dm = build_dof_map(m)
    s = apply_dirichlet(assemble_global(m, dm, 2.0, lambda x: np.array([1.0, -1.0])))
    np.testing.assert_array_equal(s.rhs_u, s.f[s.free])
    assert not s.rhs_p.any()


def test_translation_is_admissible_outflow_is_not():
    m = cvt(40)
    dm = build_dof_map(m)
    s = assemble_global(m, dm, 1.0)
    apply_dirichlet(s, lambda p: np.tile([1.0, 0.5], (len(p), 1)))
    with pytest.raises(SolverError, match="net flux"):
        apply_dirichlet(s, lambda p: np.column_stack([p[:, 0], 0 * p[:, 0]]))


def test_lid_rhs_matches_dense_elimination():
    m = unit_square_grid(2)
    dm = build_dof_map(m)
    s = apply_dirichlet(assemble_global(m, dm, 1.0, lambda x: np.array([0.2, -1.0])), lid_velocity)
    A, B = s.A.toarray(), s.B.toarray()
    K = np.block([[A, B.T], [B, np.zeros((dm.n_pressure, dm.n_pressure))]])
    rhs = np.concatenate([s.f, np.zeros(dm.n_pressure)])
    known = np.flatnonzero(s.dirichlet)
    keep = np.concatenate([s.free, dm.n_velocity + np.arange(dm.n_pressure)])
    expect = rhs[keep] - K[np.ix_(keep, known)] @ s.dirichlet_values[known]
    np.testing.assert_allclose(np.concatenate([s.rhs_u, s.rhs_p]), expect, atol=1e-13)
    # the lid moves the top edge nodes only
    top = np.isclose(dm.position[:, 1], 1.0) & (dm.position[:, 0] > 0) & (dm.position[:, 0] < 1)
    assert np.all(s.dirichlet_values[top & (dm.component == 0)] == 1.0)


def test_direct_solve_of_zero_problem_is_zero():
    m = cvt(40)
    dm = build_dof_map(m)
    sol = direct_solve_reference(apply_dirichlet(assemble_global(m, dm, 1.0)))
    assert not np.any(sol.u) and not np.any(sol.p)


def test_direct_solve_residual_small():
    fx = sinker_fixture()
    sol = direct_solve_reference(fx.system)
    assert sol.residual <= 1e-10
    assert abs(fx.system.pressure_mean @ sol.p) <= 1e-10 * np.abs(sol.p).max()


def test_velocity_converges_at_second_order():
    errs = []
    for n in (64, 256):
        m = cvt(n)
        dm = build_dof_map(m)
        sol = direct_solve_reference(apply_dirichlet(assemble_global(m, dm, 1.0, smooth_load)))
        errs.append(energy_error(m, dm, sol.u, smooth_gradient))
    order = np.log2(errs[0] / errs[1])  # h ~ cells^(-1/2), four times the cells halves h
    assert 1.7 <= order <= 2.3


def _eliminated_schur(fx):
    """Dense oracle: eliminate interior velocities and mean-free pressures from the global system."""
    s, cls = fx.system, fx.cls
    A, B = s.A.toarray(), s.B.toarray()
    ng = len(cls.interface)
    interior = np.concatenate(cls.sub_interior)
    cols_q, cols_0 = [], []
    for op in fx.subops:
        e0 = np.zeros(s.dofmap.n_pressure)
        e0[op.pressure[0::3]] = 1.0
        N = sla.null_space(op.w.reshape(1, -1))
        Q = np.zeros((s.dofmap.n_pressure, N.shape[1]))
        Q[op.pressure] = N
        cols_q.append(Q)
        cols_0.append(e0)
    T = np.column_stack(cols_q + cols_0)
    nq = T.shape[1] - len(cols_0)
    vel = np.concatenate([interior, cls.interface])
    nI = len(interior)
    Avv = A[np.ix_(vel, vel)]
    Bt = T.T @ B[:, vel]
    K = np.block([[Avv, Bt.T], [Bt, np.zeros((T.shape[1], T.shape[1]))]])
    # unknown order: interior u, interface u, q, p0
    inner = np.concatenate([np.arange(nI), nI + ng + np.arange(nq)])
    outer = np.concatenate([nI + np.arange(ng), nI + ng + nq + np.arange(len(cols_0))])
    g = s.dirichlet_values
    fu = s.f - A @ g
    fp = T.T @ (-(B @ g))
    rhs = np.concatenate([fu[vel], fp])
    Kii = K[np.ix_(inner, inner)]
    Koi = K[np.ix_(outer, inner)]
    S = K[np.ix_(outer, outer)] - Koi @ np.linalg.solve(Kii, Koi.T)
    r = rhs[outer] - Koi @ np.linalg.solve(Kii, rhs[inner])
    return S, r


def test_subdomain_schur_matches_global_elimination():
    fx = eight_cell()
    S_ref, r_ref = _eliminated_schur(fx)
    S = fx.problem.dense()
    assert np.abs(S - S_ref).max() <= 1e-9 * np.abs(S_ref).max()
    assert np.abs(fx.problem.rhs - r_ref).max() <= 1e-9 * np.abs(r_ref).max()


def test_subdomain_schur_matches_elimination_with_jumps():
    fx = jump_fixture(60, 3)
    S_ref, r_ref = _eliminated_schur(fx)
    S = fx.problem.dense()
    assert np.abs(S - S_ref).max() <= 1e-9 * np.abs(S_ref).max()
    assert np.abs(fx.problem.rhs - r_ref).max() <= 1e-9 * np.abs(r_ref).max()


def test_local_schur_symmetric_semidefinite():
    for op in jump_fixture().subops:
        assert np.abs(op.S - op.S.T).max() == 0.0
        lam = np.linalg.eigvalsh(op.S)
        assert lam[0] >= -1e-10 * lam[-1]
        assert not np.any(op.apply_schur(np.zeros(len(op.interface))))


def _interface_vector(fx, ref):
    x = np.zeros(fx.problem.size)
    x[: fx.problem.n_gamma] = ref.u[fx.cls.interface]
    for op in fx.subops:
        x[fx.problem.n_gamma + op.sub] = (op.w @ ref.p[op.pressure]) / op.area
    return x


def test_direct_solution_solves_interface_problem():
    fx = jump_fixture()
    ref = direct_solve_reference(fx.system)
    x = _interface_vector(fx, ref)
    r = fx.problem.apply(x) - fx.problem.rhs
    assert np.abs(r).max() <= 1e-9 * np.abs(fx.problem.rhs).max()


def test_back_substitution_recovers_direct_solution():
    fx = jump_fixture()
    ref = direct_solve_reference(fx.system)
    u, p = back_substitute(fx.problem, _interface_vector(fx, ref), fx.system)
    assert np.abs(u - ref.u).max() <= 1e-9 * np.abs(ref.u).max()
    assert np.abs(p - ref.p).max() <= 1e-8 * np.abs(ref.p).max()


def test_single_subdomain_has_no_interface():
    m = cvt(30)
    fx = Fixture(m, partition_mesh(m, 1))
    assert fx.problem.n_gamma == 0 and fx.problem.size == 1
    ref = direct_solve_reference(fx.system)
    u, p = back_substitute(fx.problem, np.zeros(1), fx.system)
    np.testing.assert_allclose(u, ref.u, atol=1e-10)
    np.testing.assert_allclose(p, ref.p, atol=1e-8 * np.abs(ref.p).max())


def test_substructuring_requires_boundary_elimination():
    from vembddc.assembly import build_subdomain_operators

    fx = eight_cell()
    raw = assemble_global(fx.mesh, fx.dofmap, 1.0)
    with pytest.raises(ValueError):
        build_subdomain_operators(raw, fx.cls)
