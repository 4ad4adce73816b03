"""
Conforming triangulations of the unit square.

Local edge j of a triangle runs from its vertex j to vertex j+1 (mod 3).
Global edges are stored lower vertex index first; the per-(triangle, local
edge) sign is +1 when the counterclockwise traversal of the triangle agrees
with that global orientation.  The global edge normal is the tangent
rotated clockwise, so outward normal = sign * global normal.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from wg_stokes.polyquad import EdgeGeometry, ElementGeometry

logger = logging.getLogger(__name__)

AREA_TOL = 1e-14


def _readonly(arr, dtype) -> np.ndarray:
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray        # (V, 2)
    triangles: np.ndarray       # (T, 3) counterclockwise
    edges: np.ndarray           # (E, 2) lower index first
    tri_edges: np.ndarray       # (T, 3) global edge of local edge j
    tri_edge_signs: np.ndarray  # (T, 3) +1 / -1
    edge_triangles: np.ndarray  # (E, 2) incident triangles, -1 when absent
    boundary: np.ndarray        # (E,) bool
    n: Optional[int] = None     # grid count of a structured mesh
    parent: Optional[np.ndarray] = field(default=None, repr=False)
    level: int = 0

    @classmethod
    def from_triangles(cls, vertices, triangles, n: Optional[int] = None,
                       parent=None, level: int = 0) -> "Mesh":
        """Derive edges, incidence, signs and boundary flags from the element list."""
        vertices = _readonly(vertices, np.float64)
        triangles = _readonly(triangles, np.int64)
        nt = len(triangles)

        local = np.stack([triangles, np.roll(triangles, -1, axis=1)], axis=-1).reshape(-1, 2)
        ordered = np.sort(local, axis=1)
        edges, inverse = np.unique(ordered, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        tri_edges = inverse.reshape(nt, 3)
        signs = np.where(local[:, 0] < local[:, 1], 1, -1).reshape(nt, 3)

        edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
        owners = np.repeat(np.arange(nt), 3)
        # first incidence goes to slot 0, second to slot 1
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_triangles[sorted_edges[first], 0] = owners[order][first]
        edge_triangles[sorted_edges[~first], 1] = owners[order][~first]

        return cls(
            vertices=vertices,
            triangles=triangles,
            edges=_readonly(edges, np.int64),
            tri_edges=_readonly(tri_edges, np.int64),
            tri_edge_signs=_readonly(signs, np.int64),
            edge_triangles=_readonly(edge_triangles, np.int64),
            boundary=_readonly(edge_triangles[:, 1] < 0, bool),
            n=n,
            parent=None if parent is None else _readonly(parent, np.int64),
            level=level,
        )

    # ── Sizes ────────────────────────────────────────────────────────────────

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    # ── Geometry ─────────────────────────────────────────────────────────────

    @cached_property
    def geometry(self) -> ElementGeometry:
        return ElementGeometry(self.vertices[self.triangles])

    @cached_property
    def edge_geometry(self) -> EdgeGeometry:
        """Global edges, parametrised along their global orientation."""
        return EdgeGeometry(self.vertices[self.edges[:, 0]], self.vertices[self.edges[:, 1]])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """(E, 2) unit normals of the global edges (tangent rotated clockwise)."""
        t = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.stack([t[:, 1], -t[:, 0]], axis=-1) / self.edge_geometry.length[:, None]

    @property
    def h(self) -> float:
        """Maximum element diameter (longest edge)."""
        return float(self.geometry.diameter.max())

    @property
    def pitch(self) -> Optional[float]:
        """Grid pitch 1/n of a structured mesh."""
        return None if self.n is None else 1.0 / self.n

    def renumbered(self, vertex_perm, triangle_perm) -> "Mesh":
        """Same triangulation with vertex i moved to vertex_perm[i] and triangles reordered."""
        vertex_perm = np.asarray(vertex_perm, dtype=np.int64)
        vertices = np.empty_like(self.vertices)
        vertices[vertex_perm] = self.vertices
        triangles = vertex_perm[self.triangles][np.asarray(triangle_perm, dtype=np.int64)]
        return Mesh.from_triangles(vertices, triangles, n=self.n, level=self.level)


# ── Construction ──────────────────────────────────────────────────────────────

def build_structured(n: int) -> Mesh:
    """n x n squares on [0,1]^2, each cut by its lower-left to upper-right diagonal."""
    if n < 1:
        raise ValueError(f"grid count must be >= 1, got {n}")
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.stack([xx.ravel(), yy.ravel()], axis=-1)

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i
    b, c, d = a + 1, a + n + 2, a + n + 1
    triangles = np.concatenate([np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)])
    mesh = Mesh.from_triangles(vertices, triangles, n=n)
    logger.debug("structured mesh n=%d: %d vertices, %d edges, %d triangles",
                 n, mesh.num_vertices, mesh.num_edges, mesh.num_triangles)
    return mesh


def refine(mesh: Mesh) -> Mesh:
    """Red refinement: bisect every edge and split each triangle into four congruent children."""
    nv = mesh.num_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.concatenate([mesh.vertices, midpoints])

    v0, v1, v2 = mesh.triangles.T
    m01, m12, m20 = (nv + mesh.tri_edges[:, j] for j in range(3))
    children = np.stack([
        np.stack([v0, m01, m20], axis=1),
        np.stack([m01, v1, m12], axis=1),
        np.stack([m20, m12, v2], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.num_triangles), 4)
    n = None if mesh.n is None else 2 * mesh.n
    return Mesh.from_triangles(vertices, children, n=n, parent=parent, level=mesh.level + 1)


def outward_normal(mesh: Mesh, triangle: int, local_edge: int) -> np.ndarray:
    if not 0 <= triangle < mesh.num_triangles:
        raise IndexError(f"triangle {triangle} out of range (0..{mesh.num_triangles - 1})")
    if not 0 <= local_edge < 3:
        raise IndexError(f"local edge {local_edge} out of range (0..2)")
    return mesh.geometry.outward_normals[triangle, local_edge].copy()


# ── Validation ────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Violation:
    kind: str
    entities: tuple[int, ...]
    message: str


@dataclass(frozen=True)
class MeshReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def validate(mesh: Mesh) -> MeshReport:
    """Check every Mesh invariant; violations come back as data."""
    found: list[Violation] = []

    area = mesh.geometry.signed_area
    for t in np.flatnonzero(area <= 0):
        found.append(Violation("negative area", (int(t),), f"triangle {t} has signed area {area[t]:.3e}"))

    counts = np.bincount(mesh.tri_edges.ravel(), minlength=mesh.num_edges)
    for e in np.flatnonzero((counts < 1) | (counts > 2)):
        found.append(Violation("incidence count", (int(e),), f"edge {e} is incident to {counts[e]} triangles"))
    for e in np.flatnonzero((counts == 1) != mesh.boundary[: len(counts)]):
        found.append(Violation("boundary flag", (int(e),), f"edge {e} boundary flag disagrees with incidence"))

    for e in np.flatnonzero(mesh.edges[:, 0] >= mesh.edges[:, 1]):
        found.append(Violation("edge orientation", (int(e),), f"edge {e} is not stored lower index first"))

    sign_sum = np.zeros(mesh.num_edges, dtype=np.int64)
    np.add.at(sign_sum, mesh.tri_edges.ravel(), mesh.tri_edge_signs.ravel())
    for e in np.flatnonzero((counts == 2) & (sign_sum != 0)):
        found.append(Violation("incidence sign", (int(e),), f"interior edge {e} has equal incidence signs"))

    euler = mesh.num_vertices - mesh.num_edges + mesh.num_triangles
    if euler != 1:
        found.append(Violation("euler", (), f"V - E + T = {euler}, expected 1"))

    total = math.fsum(area.tolist())
    if abs(total - 1.0) > AREA_TOL:
        found.append(Violation("coverage", (), f"triangle areas sum to {total!r}, expected 1"))

    return MeshReport(tuple(found))


# ── Dump ──────────────────────────────────────────────────────────────────────

def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: 'nv ne nt', vertices, 'a b boundary' edges, triangles."""
    lines = [f"{mesh.num_vertices} {mesh.num_edges} {mesh.num_triangles}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{a} {b} {int(flag)}" for (a, b), flag in zip(mesh.edges.tolist(), mesh.boundary.tolist())]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
    logger.info("mesh written to %s", path)
