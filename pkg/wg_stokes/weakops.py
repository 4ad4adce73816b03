"""
Element-local weak operators and projections.

A scalar weak function on K has local DOFs
    [v0 (dim P_k) | v^b on local edge 0 (k+2) | edge 1 | edge 2],
with trace coefficients stored per global edge in the edge's own
(global) orientation.  The weak gradient lives in [P_{k+1}(K)]^2 and is
stored component-major: [d/dx coefficients (dim P_{k+1}), d/dy ...].
Vector weak functions concatenate the local DOFs of both components.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from wg_stokes.mesh import Mesh
from wg_stokes.polyquad import (
    MAX_EDGE_POINTS,
    EdgeBasis,
    ElementGeometry,
    TriBasis,
    assembly_exactness,
    dim_pk,
    edge_points,
    edge_quadrature,
    error_exactness,
    eval_tri_basis,
    local_mass_matrix,
    tri_quadrature,
)
from wg_stokes.settings import Settings, get_settings

logger = logging.getLogger(__name__)

PI_DEGREES = (0, 1)


class DegenerateElementError(ArithmeticError):
    """A local Gram or moment system is singular."""


def local_dof_count(k: int) -> int:
    return dim_pk(k) + 3 * (k + 2)


def constant_local_dofs(k: int) -> np.ndarray:
    """Local DOFs of the weak function v0 = v^b = 1."""
    dofs = np.zeros(local_dof_count(k))
    dofs[0] = 1.0
    dofs[dim_pk(k)::k + 2] = 1.0
    return dofs


# ── Weak functions ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class WeakFunctionVector:
    """v = {v0, v^b} with c components: interior (T, c, dim P_k), trace (E, c, k+2)."""

    k: int
    interior: np.ndarray
    trace: np.ndarray
    homogeneous: bool = False

    def __post_init__(self):
        if self.interior.ndim != 3 or self.trace.ndim != 3:
            raise ValueError("interior and trace must be 3-d arrays (entity, component, coefficient)")
        if self.interior.shape[1] != self.trace.shape[1]:
            raise ValueError("interior and trace component counts differ")
        if self.interior.shape[2] != dim_pk(self.k) or self.trace.shape[2] != self.k + 2:
            raise ValueError(f"coefficient counts do not match degree k={self.k}")

    @property
    def components(self) -> int:
        return self.interior.shape[1]

    def homogenized(self, mesh: Mesh) -> "WeakFunctionVector":
        trace = self.trace.copy()
        trace[mesh.boundary] = 0.0
        return replace(self, trace=trace, homogeneous=True)

    def satisfies_boundary_flag(self, mesh: Mesh) -> bool:
        return not self.homogeneous or not np.any(self.trace[mesh.boundary])

    def local(self, mesh: Mesh) -> np.ndarray:
        """Gather local DOFs, shape (T, c, local_dof_count(k))."""
        t = mesh.num_triangles
        edge_part = self.trace[mesh.tri_edges].transpose(0, 2, 1, 3).reshape(t, self.components, -1)
        return np.concatenate([self.interior, edge_part], axis=-1)


@dataclass(frozen=True, eq=False)
class PressureVector:
    """Piecewise P_k pressure, coefficients (T, dim P_k)."""

    k: int
    coefficients: np.ndarray
    mean_zero: bool = False

    def integral(self, ops: "ElementOperators") -> float:
        return float(np.sum(self.coefficients * ops.basis_integrals))


def random_weak_function(mesh: Mesh, k: int, components: int, rng: np.random.Generator,
                         homogeneous: bool = False) -> WeakFunctionVector:
    v = WeakFunctionVector(
        k,
        rng.standard_normal((mesh.num_triangles, components, dim_pk(k))),
        rng.standard_normal((mesh.num_edges, components, k + 2)),
    )
    return v.homogenized(mesh) if homogeneous else v


# ── Field evaluation ──────────────────────────────────────────────────────────

def _stack_components(raw, shape):
    if isinstance(raw, (tuple, list)):
        return np.stack([_stack_components(c, shape) for c in raw])
    return np.broadcast_to(np.asarray(raw, dtype=np.float64), shape)


def evaluate_field(u: Callable, points: np.ndarray) -> np.ndarray:
    """Evaluate u(x, y) at points (..., 2); components (flattened) go last: (..., c)."""
    x, y = points[..., 0], points[..., 1]
    raw = u(x, y)
    if isinstance(raw, (tuple, list)):
        values = _stack_components(raw, x.shape)
    else:
        values = np.asarray(raw, dtype=np.float64)
        if values.shape[values.ndim - x.ndim:] != x.shape:
            values = np.broadcast_to(values, x.shape)
    if values.shape == x.shape:
        return values[..., None]
    return np.moveaxis(values.reshape(-1, *x.shape), 0, -1)


# ── Element operators ─────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ElementOperators:
    k: int
    gradient: np.ndarray         # G (T, 2 dim P_{k+1}, nloc)
    divergence: np.ndarray       # D (T, dim P_{k+1}, 2 nloc)
    mass: np.ndarray             # P_{k+1} mass (T, n1, n1)
    pressure_mass: np.ndarray    # P_k mass (T, nk, nk)
    stiffness: np.ndarray        # G^T diag(M, M) G (T, nloc, nloc)
    coupling: np.ndarray         # (div_w v, q_i)_K (T, nk, 2 nloc)
    basis_integrals: np.ndarray  # int_K q_i (T, nk)

    def __len__(self) -> int:
        return len(self.gradient)


def _symmetric(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _solve_local(matrix: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateElementError(f"singular local {what} system: {exc}") from exc


def edge_traces(geometry: ElementGeometry, signs: np.ndarray, basis: TriBasis, degree: int, points: int):
    """Quadrature data on the local edges of every element.

    Returns physical points (T,3,nq,2), weights (T,3,nq), interior basis
    values there (T,3,nq,dim) and edge basis values (T,3,nq,degree+1) in
    the global edge orientation.
    """
    edges = geometry.local_edges()
    rule = edge_quadrature(points)
    pts = edges.points(rule)
    sigma = np.where(signs[..., None] > 0, rule.points, 1.0 - rule.points)
    chi = EdgeBasis(degree).evaluate(sigma)
    inner, _ = basis.evaluate(pts, geometry.centroid[:, None, None, :], geometry.diameter[:, None, None])
    return pts, edges.weights(rule), inner, chi


def _local_operators(geometry: ElementGeometry, signs: np.ndarray, k: int) -> dict:
    if np.any(geometry.area <= 0):
        raise DegenerateElementError("element with zero area")
    t = len(geometry)
    inner, outer = TriBasis(k), TriBasis(k + 1)
    n1 = outer.dim

    rule = tri_quadrature(assembly_exactness(k))
    pts, w = geometry.points(rule), geometry.weights(rule)
    phi, _ = eval_tri_basis(inner, geometry, pts)
    psi, dpsi = eval_tri_basis(outer, geometry, pts)

    mass = _symmetric(np.einsum("tq,tqa,tqb->tab", w, psi, psi))
    pressure_mass = _symmetric(np.einsum("tq,tqi,tqj->tij", w, phi, phi))
    mixed = np.einsum("tq,tqa,tqi->tai", w, psi, phi)

    # int grad_w v . q = -int v0 div q + int_dK v^b q.n, q = psi_a e_c
    volume = -np.einsum("tq,tqac,tqi->tcai", w, dpsi, phi)
    _, ew, psi_e, chi = edge_traces(geometry, signs, outer, k + 1, edge_points(k))
    moments = np.einsum("tjq,tjqa,tjqm->tjam", ew, psi_e, chi)
    surface = np.einsum("tjc,tjam->tcajm", geometry.outward_normals, moments).reshape(t, 2, n1, -1)
    rhs = np.concatenate([volume, surface], axis=-1)

    per_component = _solve_local(mass[:, None], rhs, "weak gradient")
    gradient = per_component.reshape(t, 2 * n1, -1)
    # div_w takes the x-rows of the first component's right side plus the
    # y-rows of the second's, so D is the trace of the vector weak gradient.
    divergence = np.concatenate([per_component[:, 0], per_component[:, 1]], axis=-1)

    stiffness = _symmetric(np.einsum("tcai,tab,tcbj->tij", per_component, mass, per_component))
    coupling = np.einsum("tai,taj->tij", mixed, divergence)
    return {
        "gradient": gradient,
        "divergence": divergence,
        "mass": mass,
        "pressure_mass": pressure_mass,
        "stiffness": stiffness,
        "coupling": coupling,
        "basis_integrals": np.einsum("tq,tqi->ti", w, phi),
    }


def map_element_chunks(func: Callable[[slice], dict], count: int,
                       settings: Optional[Settings] = None) -> dict:
    """Run func over fixed-size element slices in a thread pool; concatenate in order."""
    settings = settings or get_settings()
    chunks = [slice(s, min(s + settings.chunk_size, count)) for s in range(0, count, settings.chunk_size)]
    workers = max(1, min(settings.threads, len(chunks)))
    if workers == 1:
        parts = [func(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(func, chunks))
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def build_element_operators(mesh: Mesh, k: int, settings: Optional[Settings] = None) -> ElementOperators:
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    geometry, signs = mesh.geometry, mesh.tri_edge_signs
    arrays = map_element_chunks(
        lambda chunk: _local_operators(geometry[chunk], signs[chunk], k), mesh.num_triangles, settings,
    )
    logger.debug("element operators built: k=%d, %d elements", k, mesh.num_triangles)
    return ElementOperators(k=k, **arrays)


def _select(mesh: Mesh, elements) -> tuple[ElementGeometry, np.ndarray]:
    index = slice(None) if elements is None else np.atleast_1d(np.asarray(elements, dtype=np.int64))
    return mesh.geometry[index], mesh.tri_edge_signs[index]


def weak_gradient_op(mesh: Mesh, k: int, elements=None) -> np.ndarray:
    """G per element, (T_sel, 2 dim P_{k+1}, local_dof_count(k))."""
    return _local_operators(*_select(mesh, elements), k)["gradient"]


def weak_divergence_op(mesh: Mesh, k: int, elements=None) -> np.ndarray:
    """D per element, (T_sel, dim P_{k+1}, 2 local_dof_count(k))."""
    return _local_operators(*_select(mesh, elements), k)["divergence"]


def weak_gradient(v: WeakFunctionVector, mesh: Mesh, ops: ElementOperators) -> np.ndarray:
    """Coefficients of grad_w v, shape (T, c, 2, dim P_{k+1})."""
    g = np.einsum("tdi,tci->tcd", ops.gradient, v.local(mesh))
    return g.reshape(mesh.num_triangles, v.components, 2, -1)


def weak_divergence(v: WeakFunctionVector, mesh: Mesh, ops: ElementOperators) -> np.ndarray:
    """Coefficients of div_w v, shape (T, dim P_{k+1})."""
    if v.components != 2:
        raise ValueError("weak divergence needs a 2-component weak function")
    return np.einsum("tai,ti->ta", ops.divergence, v.local(mesh).reshape(mesh.num_triangles, -1))


# ── Projections ───────────────────────────────────────────────────────────────

def project_interior(u: Callable, mesh: Mesh, degree: int, exactness: Optional[int] = None) -> np.ndarray:
    """Local L2 projection P_h^l u, coefficients (T, c, dim P_l)."""
    basis = TriBasis(degree)
    rule = tri_quadrature(exactness or error_exactness(degree))
    geometry = mesh.geometry
    pts = geometry.points(rule)
    values = evaluate_field(u, pts)
    phi, _ = eval_tri_basis(basis, geometry, pts)
    rhs = np.einsum("tq,tqc,tqi->tci", geometry.weights(rule), values, phi)
    mass = local_mass_matrix(basis, geometry, rule)
    return _solve_local(mass[:, None], rhs[..., None], "interior projection")[..., 0]


def project_edge(u: Callable, mesh: Mesh, degree: int, edges=None) -> np.ndarray:
    """L2(e) projection onto P_m(e) in the global edge orientation, (E_sel, c, m+1)."""
    geometry = mesh.edge_geometry
    if edges is not None:
        index = np.atleast_1d(np.asarray(edges, dtype=np.int64))
        geometry = type(geometry)(geometry.start[index], geometry.end[index])
    basis = EdgeBasis(degree)
    rule = edge_quadrature(min(degree + 5, MAX_EDGE_POINTS))
    values = evaluate_field(u, geometry.points(rule))
    chi = basis.evaluate(rule.points)
    # Legendre modes are orthogonal with norm |e| / (2m + 1)
    return np.einsum("q,eqc,qm->ecm", rule.weights, values, chi) / basis.norms()


def project_Qh(u: Callable, mesh: Mesh, k: int) -> WeakFunctionVector:
    """Q_h u = {P_h^k u, P_dK^{k+1} u}."""
    interior = project_interior(u, mesh, k)
    trace = project_edge(u, mesh, k + 1)
    return WeakFunctionVector(k, interior, trace, homogeneous=not np.any(trace[mesh.boundary]))


def project_pi(u: Callable, mesh: Mesh, k: int) -> np.ndarray:
    """H(div) projection into [P_{k+1}(K)]^2, coefficients (T, 2, dim P_{k+1}).

    Matches normal moments against P_{k+1}(e) on every edge; for k >= 1 also
    gradient moments against P_k(K) and curl moments against the bubbles
    lambda_1 lambda_2 lambda_3 P_{k-1}(K).  The local system is square.
    """
    if k not in PI_DEGREES:
        raise ValueError(f"pi_h is available for k in {PI_DEGREES}, got {k}")
    geometry, signs = mesh.geometry, mesh.tri_edge_signs
    t = len(geometry)
    outer = TriBasis(k + 1)

    rule = tri_quadrature(error_exactness(k))
    pts, w = geometry.points(rule), geometry.weights(rule)
    psi, _ = eval_tri_basis(outer, geometry, pts)
    values = evaluate_field(u, pts)

    epts, ew, psi_e, chi = edge_traces(geometry, signs, outer, k + 1, min(k + 6, MAX_EDGE_POINTS))
    normals = geometry.outward_normals
    moments = np.einsum("tjq,tjqa,tjqm->tjma", ew, psi_e, chi)
    rows = [np.einsum("tjc,tjma->tjmca", normals, moments).reshape(t, -1, 2 * outer.dim)]
    normal_flux = np.einsum("tjqc,tjc->tjq", evaluate_field(u, epts), normals)
    rhs = [np.einsum("tjq,tjq,tjqm->tjm", ew, normal_flux, chi).reshape(t, -1)]

    if k >= 1:
        _, dphi = eval_tri_basis(TriBasis(k), geometry, pts)
        dphi = dphi[:, :, 1:]  # constants add no gradient condition
        rows.append(np.einsum("tq,tqic,tqa->tica", w, dphi, psi).reshape(t, -1, 2 * outer.dim))
        rhs.append(np.einsum("tq,tqic,tqc->ti", w, dphi, values))

        xi, eta = rule.points[:, 0], rule.points[:, 1]
        lam = np.stack([1.0 - xi - eta, xi, eta], axis=-1)
        bubble = lam.prod(axis=-1)
        others = np.stack([lam[:, 1] * lam[:, 2], lam[:, 0] * lam[:, 2], lam[:, 0] * lam[:, 1]], axis=-1)
        dbubble = np.einsum("qi,tic->tqc", others, geometry.barycentric_gradients)
        low, dlow = eval_tri_basis(TriBasis(k - 1), geometry, pts)
        dq = dbubble[:, :, None, :] * low[..., None] + bubble[None, :, None, None] * dlow
        curl = np.stack([dq[..., 1], -dq[..., 0]], axis=-1)
        rows.append(np.einsum("tq,tqic,tqa->tica", w, curl, psi).reshape(t, -1, 2 * outer.dim))
        rhs.append(np.einsum("tq,tqic,tqc->ti", w, curl, values))

    system = np.concatenate(rows, axis=1)
    if system.shape[1] != system.shape[2]:
        raise DegenerateElementError(f"pi_h moment system is {system.shape[1]}x{system.shape[2]}")
    coefficients = _solve_local(system, np.concatenate(rhs, axis=1)[..., None], "pi_h")[..., 0]
    return coefficients.reshape(t, 2, outer.dim)
