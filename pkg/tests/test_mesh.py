import math
from dataclasses import replace

import numpy as np
import pytest

from wg_stokes.mesh import build_structured, outward_normal, refine, validate, write_mesh


def _canonical_triangles(mesh, scale):
    coords = np.rint(mesh.vertices * scale).astype(int)
    return {frozenset(map(tuple, coords[t])) for t in mesh.triangles}


@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_structured_counts(n):
    mesh = build_structured(n)
    assert mesh.num_vertices == (n + 1) ** 2
    assert mesh.num_triangles == 2 * n * n
    assert mesh.num_edges == 3 * n * n + 2 * n
    assert len(mesh.boundary_edges) == 4 * n
    assert len(mesh.interior_edges) == 3 * n * n - 2 * n
    assert mesh.pitch == pytest.approx(1.0 / n)
    assert mesh.h == pytest.approx(np.sqrt(2.0) / n)


def test_unit_square_has_one_interior_edge(unit_mesh):
    assert unit_mesh.num_edges == 5
    assert len(unit_mesh.interior_edges) == 1
    a, b = unit_mesh.edges[unit_mesh.interior_edges[0]]
    # lower-left to upper-right diagonal
    assert {tuple(unit_mesh.vertices[a]), tuple(unit_mesh.vertices[b])} == {(0.0, 0.0), (1.0, 1.0)}


def test_build_structured_rejects_zero():
    with pytest.raises(ValueError):
        build_structured(0)


@pytest.mark.parametrize("n", [1, 3, 8])
def test_structured_mesh_is_valid(n):
    report = validate(build_structured(n))
    assert report.ok, report.violations


def test_edges_stored_low_high_and_signs(mesh4):
    assert np.all(mesh4.edges[:, 0] < mesh4.edges[:, 1])
    local_start = mesh4.triangles
    local_end = np.roll(mesh4.triangles, -1, axis=1)
    expected = np.where(local_start < local_end, 1, -1)
    np.testing.assert_array_equal(mesh4.tri_edge_signs, expected)


def test_interior_edges_have_opposite_signs(mesh4):
    for e in mesh4.interior_edges:
        t, j = np.nonzero(mesh4.tri_edges == e)
        assert len(t) == 2
        assert mesh4.tri_edge_signs[t[0], j[0]] == -mesh4.tri_edge_signs[t[1], j[1]]


def test_outward_normal_is_signed_global_normal(mesh4):
    outward = mesh4.geometry.outward_normals
    global_normals = mesh4.edge_normals[mesh4.tri_edges]
    np.testing.assert_allclose(outward, mesh4.tri_edge_signs[..., None] * global_normals, atol=1e-14)


def test_outward_normal_points_out(unit_mesh):
    # triangle 0 is (0,0), (1,0), (1,1); its first edge lies on y = 0
    np.testing.assert_allclose(outward_normal(unit_mesh, 0, 0), [0.0, -1.0], atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(unit_mesh.geometry.outward_normals, axis=-1), 1.0)


def test_outward_normal_out_of_range(unit_mesh):
    with pytest.raises(IndexError):
        outward_normal(unit_mesh, 0, 3)
    with pytest.raises(IndexError):
        outward_normal(unit_mesh, 2, 0)


# ── Refinement ────────────────────────────────────────────────────────────────

def test_refine_quarters_area_and_tracks_lineage(unit_mesh):
    fine = refine(unit_mesh)
    assert fine.num_triangles == 4 * unit_mesh.num_triangles
    assert fine.level == 1
    assert fine.n == 2
    np.testing.assert_array_equal(fine.parent, np.repeat(np.arange(unit_mesh.num_triangles), 4))
    np.testing.assert_allclose(fine.geometry.area, np.repeat(unit_mesh.geometry.area / 4, 4), rtol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_refine_reproduces_structured_pattern(n):
    fine = refine(build_structured(n))
    assert validate(fine).ok
    assert _canonical_triangles(fine, 2 * n) == _canonical_triangles(build_structured(2 * n), 2 * n)


def test_refine_twice_counts():
    mesh = refine(refine(build_structured(2)))
    assert mesh.num_triangles == 2 * 8 * 8
    assert mesh.num_edges == 3 * 64 + 16
    assert mesh.level == 2


# ── Validation ────────────────────────────────────────────────────────────────

def test_validate_flags_swapped_vertices(mesh4):
    triangles = np.array(mesh4.triangles)
    triangles[0, [1, 2]] = triangles[0, [2, 1]]
    broken = replace(mesh4, triangles=triangles)
    assert "negative area" in validate(broken).kinds()


def test_validate_flags_dangling_edge(mesh4):
    edges = np.vstack([mesh4.edges, [[0, mesh4.num_vertices - 1]]])
    broken = replace(
        mesh4,
        edges=edges,
        boundary=np.append(mesh4.boundary, True),
        edge_triangles=np.vstack([mesh4.edge_triangles, [[-1, -1]]]),
    )
    report = validate(broken)
    assert "incidence count" in report.kinds()
    assert any(v.entities == (len(edges) - 1,) for v in report.violations if v.kind == "incidence count")


@pytest.mark.parametrize("mesh", [build_structured(1), build_structured(10), build_structured(80),
                                  refine(refine(build_structured(3)))], ids=["n1", "n10", "n80", "refined"])
def test_areas_cover_the_square(mesh):
    assert abs(math.fsum(mesh.geometry.area.tolist()) - 1.0) <= 1e-14
    assert validate(mesh).ok


def test_validate_flags_stretched_domain(mesh4):
    stretched = replace(mesh4, vertices=mesh4.vertices * 1.001)
    assert "coverage" in validate(stretched).kinds()


def test_validate_flags_wrong_boundary_flag(mesh4):
    boundary = np.array(mesh4.boundary)
    boundary[mesh4.interior_edges[0]] = True
    assert validate(replace(mesh4, boundary=boundary)).kinds() == {"boundary flag"}


# ── Renumbering and dump ──────────────────────────────────────────────────────

def test_renumbered_keeps_the_triangulation(mesh4, rng):
    shuffled = mesh4.renumbered(rng.permutation(mesh4.num_vertices), rng.permutation(mesh4.num_triangles))
    assert validate(shuffled).ok
    assert shuffled.num_edges == mesh4.num_edges
    assert _canonical_triangles(shuffled, 4) == _canonical_triangles(mesh4, 4)


def test_write_mesh(tmp_path, unit_mesh):
    path = tmp_path / "mesh.txt"
    write_mesh(unit_mesh, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "4 5 2"
    assert len(lines) == 1 + 4 + 5 + 2
    assert sum(int(line.split()[2]) for line in lines[5:10]) == 4
