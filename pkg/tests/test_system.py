from dataclasses import replace

import numpy as np
import pytest

from wg_stokes.cases import get_case
from wg_stokes.mesh import build_structured
from wg_stokes.settings import Settings
from wg_stokes.system import SolverError, assemble, build_dof_map, solve, write_system
from wg_stokes.weakops import build_element_operators, project_Qh


def _scaled(case, alpha):
    def f(x, y):
        return tuple(alpha * c for c in case.f(x, y))

    return replace(case, f=f)


# ── DOF map ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("k,total", [(0, 11), (1, 25)])
def test_unit_square_unknown_count(unit_mesh, k, total):
    assert build_dof_map(unit_mesh, k).total == total


@pytest.mark.parametrize("k", [0, 1, 2])
def test_dof_map_is_a_bijection(k):
    mesh = build_structured(3)
    dofs = build_dof_map(mesh, k)
    vel = dofs.velocity_indices(mesh)
    unknown = np.unique(np.concatenate([vel[vel < dofs.total], dofs.pressure_indices().ravel(), [dofs.multiplier]]))
    np.testing.assert_array_equal(unknown, np.arange(dofs.total))
    boundary = np.unique(vel[vel >= dofs.total])
    np.testing.assert_array_equal(boundary, dofs.total + np.arange(dofs.num_boundary))


def test_dof_counts_quadruple_under_refinement():
    coarse, fine = build_dof_map(build_structured(8), 1), build_dof_map(build_structured(16), 1)
    assert fine.total / coarse.total == pytest.approx(4.0, rel=0.05)


# ── Assembly ──────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("k", [0, 1])
def test_assembled_matrix_is_exactly_symmetric(mesh4, paper_case, settings, k):
    system = assemble(mesh4, k, paper_case, settings=settings)
    diff = system.matrix - system.matrix.T
    assert abs(diff).max() == 0.0


@pytest.mark.parametrize("k", [0, 1])
def test_velocity_block_is_positive_definite(k):
    mesh = build_structured(2)
    a, b, c = assemble(mesh, k, get_case("paper")).blocks()
    assert np.linalg.eigvalsh(a.toarray()).min() > 0
    dofs = build_dof_map(mesh, k)
    assert b.shape == (dofs.num_pressure, dofs.num_velocity)
    ops = build_element_operators(mesh, k)
    np.testing.assert_allclose(c, ops.basis_integrals.ravel())


def test_boundary_data_must_be_evaluable(mesh4, paper_case):
    def broken(x, y):
        raise RuntimeError("no boundary data here")

    with pytest.raises(ValueError):
        assemble(mesh4, 0, replace(paper_case, g=broken))


def test_write_system(tmp_path, unit_mesh, paper_case):
    system = assemble(unit_mesh, 0, paper_case)
    path = tmp_path / "system.txt"
    write_system(system, path)
    entries = path.read_text().splitlines()
    assert len(entries) == system.matrix.nnz
    row, col, value = entries[0].split()
    assert 0 <= int(row) < system.size and 0 <= int(col) < system.size
    float(value)
    rhs = (tmp_path / "system.txt.rhs").read_text().splitlines()
    np.testing.assert_array_equal([float(v) for v in rhs], system.rhs)


# ── Solve ─────────────────────────────────────────────────────────────────────

def test_zero_data_gives_zero_solution(mesh4, paper_case):
    zero = replace(paper_case.homogenized(), f=lambda x, y: (0 * x, 0 * y))
    solution = solve(assemble(mesh4, 1, zero))
    assert solution.diagnostics.path == "zero"
    assert not np.any(solution.velocity.interior)
    assert not np.any(solution.pressure.coefficients)


@pytest.mark.parametrize("k", [0, 1])
def test_linear_solution_is_reproduced(k, settings):
    mesh = build_structured(2)
    case = get_case("linear")
    solution = solve(assemble(mesh, k, case, settings=settings), settings=settings)
    expected = project_Qh(case.u, mesh, k)
    np.testing.assert_allclose(solution.velocity.interior, expected.interior, atol=1e-9)
    np.testing.assert_allclose(solution.velocity.trace, expected.trace, atol=1e-9)
    np.testing.assert_allclose(solution.pressure.coefficients, 0.0, atol=1e-9)


@pytest.mark.parametrize("k", [0, 1])
def test_solution_meets_contract(mesh4, paper_case, settings, k):
    system = assemble(mesh4, k, paper_case, settings=settings)
    solution = solve(system, settings=settings)
    assert solution.diagnostics.path == "direct"
    assert solution.diagnostics.residual <= 1e-10
    assert solution.diagnostics.unknowns == system.size
    assert solution.pressure.mean_zero
    assert abs(solution.pressure.integral(system.ops)) <= 1e-10
    np.testing.assert_array_equal(solution.velocity.trace[mesh4.boundary_edges], system.boundary_values)

    local = solution.velocity.local(mesh4).reshape(mesh4.num_triangles, -1)
    moments = np.einsum("tij,tj->ti", system.ops.coupling, local)
    assert np.abs(moments).max() <= 1e-8
    # the multiplier absorbs only the rounding of the boundary flux
    assert abs(solution.multiplier) <= 1e-8


def test_solution_scales_with_force(mesh4, paper_case):
    base = paper_case.homogenized()
    one = solve(assemble(mesh4, 1, base))
    three = solve(assemble(mesh4, 1, _scaled(base, 3.0)))
    assert one.velocity.homogeneous
    for scaled, unit in [
        (three.velocity.interior, one.velocity.interior),
        (three.velocity.trace, one.velocity.trace),
        (three.pressure.coefficients, one.pressure.coefficients),
    ]:
        assert np.linalg.norm(scaled - 3.0 * unit) <= 1e-10 * np.linalg.norm(3.0 * unit)


def test_minres_path_agrees_with_direct(mesh4, paper_case):
    iterative = Settings(threads=1, direct_limit=1, solver_tol=1e-10)
    system = assemble(mesh4, 0, paper_case, settings=iterative)
    fast = solve(system, settings=iterative)
    exact = solve(system, deterministic=True, settings=iterative)
    assert fast.diagnostics.path == "minres"
    assert fast.diagnostics.iterations > 0
    assert exact.diagnostics.path == "direct"
    np.testing.assert_allclose(fast.pressure.coefficients, exact.pressure.coefficients, atol=1e-7)
    np.testing.assert_allclose(fast.velocity.interior, exact.velocity.interior, atol=1e-8)


def test_unreachable_tolerance_raises(mesh4, paper_case):
    system = assemble(mesh4, 0, paper_case, tol=1e-30)
    with pytest.raises(SolverError) as info:
        solve(system, deterministic=True)
    assert info.value.path == "direct"
    assert 0 <= info.value.residual < 1e-8
