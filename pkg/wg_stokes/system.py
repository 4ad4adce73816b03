"""
Global DOF numbering, assembly of the weak Galerkin Stokes saddle system and
its linear solve.

Unknown ordering:
    velocity interiors   t * 2 dim P_k + c * dim P_k + i
    velocity traces      off_b + s * 2 (k+2) + c (k+2) + m   (s = interior-edge slot)
    pressures            off_p + t * dim P_k + i
    multiplier           total - 1
Boundary-edge traces are numbered after the unknowns (extended index space)
so every element scatters through one index table; their columns are moved
to the right-hand side after assembly.

The assembled matrix is
    [ A   -B^T  0  ]
    [ -B   0    c^T]
    [ 0    c    0  ]
with A = (grad_w u, grad_w v)_h, B[q, v] = (div_w v, q)_h and c_q = int q.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, minres, splu

from wg_stokes.mesh import Mesh
from wg_stokes.polyquad import TriBasis, dim_pk, error_exactness, eval_tri_basis, tri_quadrature
from wg_stokes.settings import Settings, get_settings
from wg_stokes.weakops import (
    ElementOperators,
    PressureVector,
    WeakFunctionVector,
    build_element_operators,
    evaluate_field,
    project_edge,
)

logger = logging.getLogger(__name__)

MINRES_MAXITER = 5000
MINRES_RESTARTS = 3


class SolverError(RuntimeError):
    """The linear solve did not reach the residual contract."""

    def __init__(self, message: str, path: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.path = path
        self.residual = residual
        self.iterations = iterations


class StokesProblem(Protocol):
    f: Callable
    g: Optional[Callable]


# ── DOF map ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DofMap:
    k: int
    num_triangles: int
    interior_edges: np.ndarray   # global ids of edges carrying trace unknowns
    boundary_edges: np.ndarray   # global ids of eliminated edges
    edge_slot: np.ndarray        # (E,) slot among interior edges, or among boundary edges

    @property
    def interior_dim(self) -> int:
        return dim_pk(self.k)

    @property
    def trace_dim(self) -> int:
        return self.k + 2

    @property
    def velocity_interior(self) -> int:
        return 2 * self.num_triangles * self.interior_dim

    @property
    def velocity_trace(self) -> int:
        return 2 * len(self.interior_edges) * self.trace_dim

    @property
    def num_velocity(self) -> int:
        return self.velocity_interior + self.velocity_trace

    @property
    def num_pressure(self) -> int:
        return self.num_triangles * self.interior_dim

    @property
    def pressure_offset(self) -> int:
        return self.num_velocity

    @property
    def multiplier(self) -> int:
        return self.num_velocity + self.num_pressure

    @property
    def total(self) -> int:
        return self.multiplier + 1

    @property
    def num_boundary(self) -> int:
        return 2 * len(self.boundary_edges) * self.trace_dim

    def velocity_indices(self, mesh: Mesh) -> np.ndarray:
        """(T, 2 * local DOFs) extended indices, component-major like WeakFunctionVector.local."""
        nk, nt = self.interior_dim, self.trace_dim
        comp = np.arange(2)
        interior = (np.arange(self.num_triangles) * 2 * nk)[:, None, None] + comp[None, :, None] * nk + np.arange(nk)
        on_boundary = np.zeros(len(self.edge_slot), dtype=bool)
        on_boundary[self.boundary_edges] = True
        edge_base = np.where(
            on_boundary,
            self.total + self.edge_slot * 2 * nt,
            self.velocity_interior + self.edge_slot * 2 * nt,
        )
        edges = edge_base[mesh.tri_edges][:, None, :, None] + comp[None, :, None, None] * nt + np.arange(nt)
        edges = edges.reshape(self.num_triangles, 2, -1)
        return np.concatenate([interior, edges], axis=-1).reshape(self.num_triangles, -1)

    def pressure_indices(self) -> np.ndarray:
        nk = self.interior_dim
        return self.pressure_offset + np.arange(self.num_triangles * nk).reshape(-1, nk)


def build_dof_map(mesh: Mesh, k: int) -> DofMap:
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    interior, boundary = mesh.interior_edges, mesh.boundary_edges
    slot = np.empty(mesh.num_edges, dtype=np.int64)
    slot[interior] = np.arange(len(interior))
    slot[boundary] = np.arange(len(boundary))
    return DofMap(k, mesh.num_triangles, interior, boundary, slot)


# ── Assembly ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SaddleSystem:
    mesh: Mesh
    k: int
    dofs: DofMap
    ops: ElementOperators
    matrix: sp.csr_matrix
    rhs: np.ndarray
    boundary_values: np.ndarray   # (E_b, 2, k+2) lifted trace coefficients
    tol: float = 1e-10

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def blocks(self):
        """(A, B, c): velocity stiffness, divergence coupling B[q, v], constraint row."""
        nv, mult = self.dofs.num_velocity, self.dofs.multiplier
        a = self.matrix[:nv, :nv]
        b = -self.matrix[nv:mult, :nv]
        c = self.matrix[mult, nv:mult].toarray().ravel()
        return a.tocsr(), b.tocsr(), c


def _load_vector(f: Callable, mesh: Mesh, k: int) -> np.ndarray:
    rule = tri_quadrature(error_exactness(k))
    geometry = mesh.geometry
    pts = geometry.points(rule)
    phi, _ = eval_tri_basis(TriBasis(k), geometry, pts)
    values = evaluate_field(f, pts)
    if values.shape[-1] != 2:
        raise ValueError(f"force must have 2 components, got {values.shape[-1]}")
    return np.einsum("tq,tqc,tqi->tci", geometry.weights(rule), values, phi).reshape(-1)


def _boundary_values(g: Optional[Callable], mesh: Mesh, dofs: DofMap) -> np.ndarray:
    shape = (len(dofs.boundary_edges), 2, dofs.trace_dim)
    if g is None or not len(dofs.boundary_edges):
        return np.zeros(shape)
    try:
        values = project_edge(g, mesh, dofs.trace_dim - 1, edges=dofs.boundary_edges)
    except Exception as exc:
        raise ValueError(f"boundary data could not be evaluated: {exc}") from exc
    if values.shape != shape:
        raise ValueError(f"boundary data has {values.shape[1]} components, expected 2")
    return values


def assemble(mesh: Mesh, k: int, problem: StokesProblem, ops: Optional[ElementOperators] = None,
             tol: Optional[float] = None, settings: Optional[Settings] = None) -> SaddleSystem:
    settings = settings or get_settings()
    started = time.perf_counter()
    ops = ops or build_element_operators(mesh, k, settings)
    dofs = build_dof_map(mesh, k)
    vel = dofs.velocity_indices(mesh)
    pres = dofs.pressure_indices()
    t, nloc = mesh.num_triangles, ops.stiffness.shape[-1]

    stiffness = np.zeros((t, 2 * nloc, 2 * nloc))
    stiffness[:, :nloc, :nloc] = ops.stiffness
    stiffness[:, nloc:, nloc:] = ops.stiffness
    mult = np.full((t, 1), dofs.multiplier)

    rows, cols, vals = [], [], []

    def scatter(r, c, v):
        r, c = np.broadcast_arrays(r, c)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    scatter(vel[:, :, None], vel[:, None, :], stiffness)
    scatter(pres[:, :, None], vel[:, None, :], -ops.coupling)
    scatter(vel[:, :, None], pres[:, None, :], -np.swapaxes(ops.coupling, 1, 2))
    scatter(pres, mult, ops.basis_integrals)
    scatter(mult, pres, ops.basis_integrals)

    extended = dofs.total + dofs.num_boundary
    full = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(extended, extended),
    ).tocsr()
    full = (0.5 * (full + full.T)).tocsr()

    boundary_values = _boundary_values(problem.g, mesh, dofs)
    rhs = np.zeros(dofs.total)
    rhs[: dofs.velocity_interior] = _load_vector(problem.f, mesh, k)
    if dofs.num_boundary:
        rhs -= full[: dofs.total, dofs.total:] @ boundary_values.reshape(-1)

    matrix = full[: dofs.total, : dofs.total].tocsr()
    logger.info("assembled k=%d: %d unknowns, %d nonzeros in %.2fs",
                k, dofs.total, matrix.nnz, time.perf_counter() - started)
    return SaddleSystem(mesh, k, dofs, ops, matrix, rhs, boundary_values,
                        tol=tol if tol is not None else settings.solver_tol)


# ── Solve ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SolverDiagnostics:
    path: str          # "direct", "minres" or "zero"
    residual: float    # ||S x - b|| / ||b||
    iterations: int
    unknowns: int
    seconds: float


@dataclass(frozen=True, eq=False)
class Solution:
    velocity: WeakFunctionVector
    pressure: PressureVector
    multiplier: float
    diagnostics: SolverDiagnostics


def _direct(system: SaddleSystem) -> tuple[np.ndarray, int]:
    try:
        lu = splu(system.matrix.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"direct factorization failed: {exc}", path="direct") from exc
    x = lu.solve(system.rhs)
    # two rounds of iterative refinement recover digits lost to pivoting
    steps = 0
    for _ in range(2):
        r = system.rhs - system.matrix @ x
        if np.linalg.norm(r) <= 0.1 * system.tol * np.linalg.norm(system.rhs):
            break
        x = x + lu.solve(r)
        steps += 1
    return x, steps


def _minres(system: SaddleSystem) -> tuple[np.ndarray, int]:
    a, _, _ = system.blocks()
    dofs = system.dofs
    try:
        a_lu = splu(a.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"velocity block factorization failed: {exc}", path="minres") from exc
    mass_inv = np.linalg.inv(system.ops.pressure_mass)
    nv, mult = dofs.num_velocity, dofs.multiplier

    def precondition(r):
        r = np.asarray(r).ravel()
        z = np.empty_like(r)
        z[:nv] = a_lu.solve(r[:nv])
        z[nv:mult] = np.einsum("tij,tj->ti", mass_inv, r[nv:mult].reshape(dofs.num_triangles, -1)).ravel()
        z[mult] = r[mult]
        return z

    m = LinearOperator(system.matrix.shape, matvec=precondition, dtype=np.float64)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    # MINRES stops on the preconditioned residual; restart tighter until the true one passes
    x, rtol = None, system.tol
    target = system.tol * np.linalg.norm(system.rhs)
    for _ in range(MINRES_RESTARTS):
        x, info = minres(system.matrix, system.rhs, x0=x, rtol=rtol, M=m, maxiter=MINRES_MAXITER, callback=count)
        if info < 0:
            raise SolverError(f"MINRES breakdown (info={info})", path="minres", iterations=iterations)
        if np.linalg.norm(system.matrix @ x - system.rhs) <= target:
            break
        rtol *= 1e-2
    return x, iterations


def solve(system: SaddleSystem, deterministic: bool = False, settings: Optional[Settings] = None) -> Solution:
    """Solve the saddle system; raises SolverError unless ||Sx - b|| <= tol ||b||."""
    settings = settings or get_settings()
    started = time.perf_counter()
    b_norm = float(np.linalg.norm(system.rhs))

    if b_norm == 0.0:
        x, path, iterations, residual = np.zeros(system.size), "zero", 0, 0.0
    else:
        path = "direct" if deterministic or system.size <= settings.direct_limit else "minres"
        x, iterations = _direct(system) if path == "direct" else _minres(system)
        residual = float(np.linalg.norm(system.matrix @ x - system.rhs)) / b_norm
        if not np.isfinite(residual) or residual > system.tol:
            raise SolverError(
                f"{path} solve reached relative residual {residual:.3e} > {system.tol:.1e}",
                path=path, residual=residual, iterations=iterations,
            )

    elapsed = time.perf_counter() - started
    logger.info("solve: %d unknowns via %s, residual %.2e, %.2fs", system.size, path, residual, elapsed)
    diagnostics = SolverDiagnostics(path, residual, iterations, system.size, elapsed)
    return _unpack(system, x, diagnostics)


def _unpack(system: SaddleSystem, x: np.ndarray, diagnostics: SolverDiagnostics) -> Solution:
    dofs, mesh, k = system.dofs, system.mesh, system.k
    nk, nt = dofs.interior_dim, dofs.trace_dim
    interior = x[: dofs.velocity_interior].reshape(mesh.num_triangles, 2, nk)
    trace = np.zeros((mesh.num_edges, 2, nt))
    trace[dofs.interior_edges] = x[dofs.velocity_interior: dofs.num_velocity].reshape(-1, 2, nt)
    trace[dofs.boundary_edges] = system.boundary_values
    velocity = WeakFunctionVector(k, interior, trace, homogeneous=not np.any(system.boundary_values))
    pressure = PressureVector(k, x[dofs.pressure_offset: dofs.multiplier].reshape(mesh.num_triangles, nk),
                              mean_zero=True)
    return Solution(velocity, pressure, float(x[dofs.multiplier]), diagnostics)


# ── Dump ──────────────────────────────────────────────────────────────────────

def write_system(system: SaddleSystem, path) -> None:
    """'row col value' per stored entry; the right-hand side goes to '<path>.rhs'."""
    coo = system.matrix.tocoo()
    lines = [f"{r} {c} {v!r}" for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
    Path(f"{path}.rhs").write_text("\n".join(repr(v) for v in system.rhs.tolist()) + "\n")
    logger.info("system written to %s (%d entries)", path, coo.nnz)
