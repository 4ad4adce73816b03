"""
Polynomial bases and quadrature rules on triangles and edges.

Interior spaces P_l(K) use monomials in scaled, centred coordinates
((x - x_K) / h_K, (y - y_K) / h_K); edge spaces P_m(e) use Legendre
polynomials in the normalised arc-length parameter of the globally
oriented edge.  Every integral in the package is a weighted sum over the
physical points produced by ElementGeometry / EdgeGeometry.
"""

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import modepy
import numpy as np
from numpy.polynomial import legendre

logger = logging.getLogger(__name__)

MAX_TRI_EXACTNESS = 20
MAX_EDGE_POINTS = 16


class QuadratureError(ValueError):
    """Requested rule is unavailable or too weak for the integrand."""


def dim_pk(k: int) -> int:
    return (k + 1) * (k + 2) // 2


# Exactness used across the package: assembly integrands are polynomials of
# degree <= 2k+2, error integrands are smooth and get extra headroom.
def assembly_exactness(k: int) -> int:
    return 2 * k + 4


def error_exactness(k: int) -> int:
    return 2 * k + 8


def edge_points(k: int) -> int:
    return k + 3


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


# ── Quadrature ────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray     # (nq, 2) on the reference triangle, or (nq,) in [0, 1]
    weights: np.ndarray    # (nq,)
    exactness: int


@lru_cache(maxsize=None)
def tri_quadrature(exactness: int) -> QuadratureRule:
    """Symmetric rule on the reference triangle (0,0), (1,0), (0,1).

    Weights sum to 1/2; all monomials of total degree <= exactness are
    integrated to rounding error.
    """
    if not 1 <= exactness <= MAX_TRI_EXACTNESS:
        raise QuadratureError(
            f"triangle quadrature of exactness {exactness} not supported (1..{MAX_TRI_EXACTNESS})"
        )
    rule = modepy.XiaoGimbutasSimplexQuadrature(exactness, 2)
    # modepy places its nodes on the biunit triangle (-1,-1), (1,-1), (-1,1)
    points = (np.asarray(rule.nodes, dtype=np.float64).T + 1.0) / 2.0
    weights = np.asarray(rule.weights, dtype=np.float64) / 4.0
    return QuadratureRule(_readonly(points), _readonly(weights), exactness)


@lru_cache(maxsize=None)
def edge_quadrature(points: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1], exact to degree 2*points - 1."""
    if not 1 <= points <= MAX_EDGE_POINTS:
        raise QuadratureError(f"edge quadrature with {points} points not supported (1..{MAX_EDGE_POINTS})")
    nodes, weights = legendre.leggauss(points)
    return QuadratureRule(_readonly((nodes + 1.0) / 2.0), _readonly(weights / 2.0), 2 * points - 1)


# ── Bases ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TriBasis:
    """Scaled monomial basis of P_k(K), ordered by total degree."""

    degree: int

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"polynomial degree must be >= 0, got {self.degree}")

    @cached_property
    def exponents(self) -> np.ndarray:
        return _readonly(np.array(
            [(d - j, j) for d in range(self.degree + 1) for j in range(d + 1)], dtype=np.int64,
        ))

    @property
    def dim(self) -> int:
        return dim_pk(self.degree)

    def evaluate(self, points: np.ndarray, centroid: np.ndarray, diameter: np.ndarray):
        """Values (..., dim) and gradients (..., dim, 2) at physical points (..., 2).

        ``centroid`` (..., 2) and ``diameter`` (...) must broadcast against the
        leading axes of ``points``.
        """
        diameter = np.asarray(diameter, dtype=np.float64)[..., None]
        x = ((points[..., 0] - centroid[..., 0]) / diameter[..., 0])[..., None]
        y = ((points[..., 1] - centroid[..., 1]) / diameter[..., 0])[..., None]
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        xa, yb = x ** a, y ** b
        values = xa * yb
        dx = a * x ** np.maximum(a - 1, 0) * yb / diameter
        dy = b * xa * y ** np.maximum(b - 1, 0) / diameter
        return values, np.stack([dx, dy], axis=-1)


@dataclass(frozen=True)
class EdgeBasis:
    """Legendre basis of P_m(e) in the edge parameter sigma in [0, 1]."""

    degree: int

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"polynomial degree must be >= 0, got {self.degree}")

    @property
    def dim(self) -> int:
        return self.degree + 1

    def evaluate(self, sigma: np.ndarray) -> np.ndarray:
        return legendre.legvander(2.0 * np.asarray(sigma, dtype=np.float64) - 1.0, self.degree)

    def norms(self) -> np.ndarray:
        """Diagonal of the mass matrix on a unit-length edge: 1 / (2m + 1)."""
        return 1.0 / (2.0 * np.arange(self.dim) + 1.0)


# ── Geometry ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """Batched triangles; vertices (T, 3, 2) in counterclockwise order."""

    vertices: np.ndarray

    def __len__(self) -> int:
        return len(self.vertices)

    def __getitem__(self, index) -> "ElementGeometry":
        return ElementGeometry(self.vertices[index])

    @cached_property
    def jacobian(self) -> np.ndarray:
        v = self.vertices
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)

    @cached_property
    def signed_area(self) -> np.ndarray:
        return 0.5 * np.linalg.det(self.jacobian)

    @cached_property
    def area(self) -> np.ndarray:
        return np.abs(self.signed_area)

    @cached_property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """(T, 3); local edge j runs from vertex j to vertex j+1."""
        return np.linalg.norm(np.roll(self.vertices, -1, axis=1) - self.vertices, axis=-1)

    @cached_property
    def diameter(self) -> np.ndarray:
        return self.edge_lengths.max(axis=1)

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """(T, 3, 2) outward unit normals of the local edges."""
        t = np.roll(self.vertices, -1, axis=1) - self.vertices
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / self.edge_lengths[..., None]

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """(T, 3, 2) constant gradients of the barycentric coordinates."""
        inv_t = np.linalg.inv(self.jacobian).transpose(0, 2, 1)
        g1 = inv_t[:, :, 0]
        g2 = inv_t[:, :, 1]
        return np.stack([-g1 - g2, g1, g2], axis=1)

    def map(self, ref_points: np.ndarray) -> np.ndarray:
        """Reference coordinates (nq, 2) -> physical points (T, nq, 2)."""
        return self.vertices[:, None, 0, :] + np.einsum("tij,qj->tqi", self.jacobian, ref_points)

    def points(self, rule: QuadratureRule) -> np.ndarray:
        return self.map(rule.points)

    def weights(self, rule: QuadratureRule) -> np.ndarray:
        return 2.0 * self.area[:, None] * rule.weights[None, :]

    def local_edges(self) -> "EdgeGeometry":
        """(T, 3) batch of local edges, each oriented counterclockwise."""
        return EdgeGeometry(self.vertices, np.roll(self.vertices, -1, axis=1))


@dataclass(frozen=True, eq=False)
class EdgeGeometry:
    """Batched segments; start/end (..., 2)."""

    start: np.ndarray
    end: np.ndarray

    @cached_property
    def length(self) -> np.ndarray:
        return np.linalg.norm(self.end - self.start, axis=-1)

    def map(self, params: np.ndarray) -> np.ndarray:
        """Parameters (nq,) in [0, 1] -> physical points (..., nq, 2)."""
        return self.start[..., None, :] + params[:, None] * (self.end - self.start)[..., None, :]

    def points(self, rule: QuadratureRule) -> np.ndarray:
        return self.map(rule.points)

    def weights(self, rule: QuadratureRule) -> np.ndarray:
        return self.length[..., None] * rule.weights


# ── Evaluation and mass matrices ──────────────────────────────────────────────

def eval_tri_basis(basis: TriBasis, geometry: ElementGeometry, points: np.ndarray):
    """Basis values (T, np, dim) and gradients (T, np, dim, 2) at physical points (T, np, 2)."""
    return basis.evaluate(points, geometry.centroid[:, None, :], geometry.diameter[:, None])


def local_mass_matrix(basis, geometry, rule: QuadratureRule | None = None) -> np.ndarray:
    """Batched Gram matrices M_ij = int phi_i phi_j over each element or edge.

    TriBasis pairs with ElementGeometry (result (T, dim, dim)); EdgeBasis
    pairs with EdgeGeometry, parameter running from start to end.
    """
    if isinstance(basis, TriBasis):
        rule = rule or tri_quadrature(max(2 * basis.degree, 1))
        _require_exactness(rule, 2 * basis.degree)
        values, _ = eval_tri_basis(basis, geometry, geometry.points(rule))
        mass = np.einsum("tq,tqa,tqb->tab", geometry.weights(rule), values, values)
    elif isinstance(basis, EdgeBasis):
        rule = rule or edge_quadrature(basis.degree + 1)
        _require_exactness(rule, 2 * basis.degree)
        values = basis.evaluate(rule.points)
        reference = np.einsum("q,qa,qb->ab", rule.weights, values, values)
        mass = geometry.length[..., None, None] * reference
    else:
        raise TypeError(f"unsupported basis {type(basis).__name__}")
    return 0.5 * (mass + np.swapaxes(mass, -1, -2))


def _require_exactness(rule: QuadratureRule, degree: int) -> None:
    if rule.exactness < degree:
        raise QuadratureError(f"rule exact to degree {rule.exactness}, integrand needs {degree}")
