"""
Error norms, convergence rates and the numerical checks that monitor the
scheme: inf-sup constant, stability ratio, discrete divergence defect and
the norm equivalences of the weak gradient.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from wg_stokes.mesh import Mesh
from wg_stokes.polyquad import TriBasis, edge_points, error_exactness, eval_tri_basis, tri_quadrature
from wg_stokes.settings import Settings, get_settings
from wg_stokes.system import SaddleSystem, Solution, StokesProblem, assemble
from wg_stokes.weakops import (
    ElementOperators,
    WeakFunctionVector,
    build_element_operators,
    edge_traces,
    evaluate_field,
    map_element_chunks,
    project_interior,
    project_pi,
    random_weak_function,
    weak_gradient,
)

logger = logging.getLogger(__name__)

ERROR_COLUMNS = ("energy", "pressure", "superclose")


class InfSupError(RuntimeError):
    """The pressure Schur complement eigenproblem could not be solved."""


# ── Reports ───────────────────────────────────────────────────────────────────

@dataclass
class ErrorReport:
    h: float                    # grid pitch 1/n
    n: int
    energy: float               # ||grad u - grad_w u_h||_h
    pressure: float             # ||p - p_h||
    superclose: float           # ||Q_h^0 u - u_h^0||
    unknowns: int = 0
    solver_path: str = ""
    residual: float = 0.0
    divergence_defect: float = 0.0
    infsup: Optional[float] = None
    stability: Optional[float] = None

    def error(self, column: str) -> float:
        return getattr(self, column)


@dataclass
class ConvergenceRecord:
    reports: list[ErrorReport]
    rates: dict[str, list[Optional[float]]] = field(default_factory=dict)

    def rate(self, column: str, level: int) -> Optional[float]:
        """Rate between level-1 and level; None on the first level or when undefined."""
        return None if level == 0 else self.rates[column][level - 1]

    def final_rates(self) -> dict[str, Optional[float]]:
        return {c: (self.rates[c][-1] if self.rates[c] else None) for c in ERROR_COLUMNS}


def observed_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> Optional[float]:
    """ln(e_h / e_h') / ln(h / h'); None when either error is not positive and finite."""
    values = (e_coarse, e_fine, h_coarse, h_fine)
    if not all(math.isfinite(v) and v > 0 for v in values) or h_coarse == h_fine:
        return None
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def convergence_rates(reports: Sequence[ErrorReport]) -> ConvergenceRecord:
    reports = list(reports)
    rates = {
        column: [
            observed_rate(a.error(column), b.error(column), a.h, b.h)
            for a, b in zip(reports, reports[1:])
        ]
        for column in ERROR_COLUMNS
    }
    return ConvergenceRecord(reports, rates)


# ── Error norms ───────────────────────────────────────────────────────────────

def _squared_l2(mesh: Mesh, k: int, difference: Callable, settings: Optional[Settings]) -> float:
    """sqrt(sum_K int_K |difference|^2) with the error-norm rule, element-chunked."""
    rule = tri_quadrature(error_exactness(k))

    def chunk(sl):
        geometry = mesh.geometry[sl]
        diff = difference(sl, geometry, geometry.points(rule))
        return {"sq": np.einsum("tq,tqc->t", geometry.weights(rule), diff * diff)}

    per_element = map_element_chunks(chunk, mesh.num_triangles, settings)["sq"]
    return float(math.sqrt(per_element.sum()))


def energy_error(solution: Solution, grad_u: Callable, mesh: Mesh, ops: Optional[ElementOperators] = None,
                 settings: Optional[Settings] = None) -> float:
    """||grad u - grad_w u_h||_h; grad_u returns ((u1_x, u1_y), (u2_x, u2_y))."""
    k = solution.velocity.k
    ops = ops or build_element_operators(mesh, k, settings)
    coefficients = weak_gradient(solution.velocity, mesh, ops).reshape(mesh.num_triangles, 4, -1)
    outer = TriBasis(k + 1)

    def difference(sl, geometry, pts):
        psi, _ = eval_tri_basis(outer, geometry, pts)
        return evaluate_field(grad_u, pts) - np.einsum("tqa,tca->tqc", psi, coefficients[sl])

    return _squared_l2(mesh, k, difference, settings)


def pressure_error(solution: Solution, p: Callable, mesh: Mesh, settings: Optional[Settings] = None) -> float:
    k = solution.pressure.k
    basis = TriBasis(k)
    coefficients = solution.pressure.coefficients

    def difference(sl, geometry, pts):
        phi, _ = eval_tri_basis(basis, geometry, pts)
        return evaluate_field(p, pts) - np.einsum("tqi,ti->tq", phi, coefficients[sl])[..., None]

    return _squared_l2(mesh, k, difference, settings)


def superclose_error(solution: Solution, u: Callable, mesh: Mesh, ops: Optional[ElementOperators] = None,
                     settings: Optional[Settings] = None) -> float:
    """||P_h^k u - u_h^0||, exact through the local P_k mass matrices."""
    k = solution.velocity.k
    ops = ops or build_element_operators(mesh, k, settings)
    diff = project_interior(u, mesh, k) - solution.velocity.interior
    return float(math.sqrt(max(np.einsum("tci,tij,tcj->", diff, ops.pressure_mass, diff), 0.0)))


def weak_gradient_norm(v: WeakFunctionVector, mesh: Mesh, ops: ElementOperators) -> float:
    """||grad_w v||_h summed over components."""
    g = weak_gradient(v, mesh, ops)
    return float(math.sqrt(max(np.einsum("tcda,tab,tcdb->", g, ops.mass, g), 0.0)))


def interior_l2_norm(v: WeakFunctionVector, ops: ElementOperators) -> float:
    """||v^0|| summed over components."""
    return float(math.sqrt(max(np.einsum("tci,tij,tcj->", v.interior, ops.pressure_mass, v.interior), 0.0)))


def pressure_l2_norm(solution: Solution, ops: ElementOperators) -> float:
    q = solution.pressure.coefficients
    return float(math.sqrt(max(np.einsum("ti,tij,tj->", q, ops.pressure_mass, q), 0.0)))


def discrete_h1_norm(v: WeakFunctionVector, mesh: Mesh) -> float:
    """(||grad v^0||_h^2 + sum_K h_K^-1 ||v^0 - v^b||_dK^2)^(1/2), summed over components."""
    k = v.k
    geometry = mesh.geometry
    basis = TriBasis(k)

    rule = tri_quadrature(max(2 * k, 1))
    _, dphi = eval_tri_basis(basis, geometry, geometry.points(rule))
    grad = np.einsum("tqid,tci->tqcd", dphi, v.interior)
    volume = np.einsum("tq,tqcd->", geometry.weights(rule), grad * grad)

    _, ew, phi_e, chi = edge_traces(geometry, mesh.tri_edge_signs, basis, k + 1, edge_points(k))
    inner = np.einsum("tjqi,tci->tjqc", phi_e, v.interior)
    trace = np.einsum("tjqm,tjcm->tjqc", chi, v.trace[mesh.tri_edges])
    jump = (inner - trace) ** 2
    boundary = np.einsum("tjq,tjqc,t->", ew, jump, 1.0 / geometry.diameter)
    return float(math.sqrt(volume + boundary))


# ── Monitors ──────────────────────────────────────────────────────────────────

def force_norm(f: Callable, mesh: Mesh, k: int, settings: Optional[Settings] = None) -> float:
    return _squared_l2(mesh, k, lambda sl, geometry, pts: evaluate_field(f, pts), settings)


def stability_ratio(solution: Solution, problem: StokesProblem, mesh: Mesh, ops: ElementOperators,
                    settings: Optional[Settings] = None) -> float:
    """(||grad_w u_h||_h + ||p_h||) / ||f||."""
    f_norm = force_norm(problem.f, mesh, solution.velocity.k, settings)
    if f_norm == 0.0:
        return float("nan")
    return (weak_gradient_norm(solution.velocity, mesh, ops) + pressure_l2_norm(solution, ops)) / f_norm


def divergence_defect(solution: Solution, system: SaddleSystem) -> float:
    """max over pressure basis functions q_i of |(div_w u_h, q_i)_h|."""
    mesh = system.mesh
    local = solution.velocity.local(mesh).reshape(mesh.num_triangles, -1)
    moments = np.einsum("tij,tj->ti", system.ops.coupling, local)
    return float(np.abs(moments).max(initial=0.0))


def embedding_ratio(v: WeakFunctionVector, mesh: Mesh, ops: ElementOperators) -> float:
    """||v^0|| / ||grad_w v||_h, bounded on S_h^0 independently of h."""
    return interior_l2_norm(v, ops) / weak_gradient_norm(v, mesh, ops)


def norm_equivalence_ratio(v: WeakFunctionVector, mesh: Mesh, ops: ElementOperators) -> float:
    """||grad_w v||_h / ||v||_{1,h}."""
    return weak_gradient_norm(v, mesh, ops) / discrete_h1_norm(v, mesh)


def norm_equivalence_ratios(mesh: Mesh, k: int, samples: int = 20, seed: int = 0,
                            ops: Optional[ElementOperators] = None) -> dict[str, tuple[float, float]]:
    """Observed (min, max) of the equivalence and embedding ratios over random v in S_h^0."""
    ops = ops or build_element_operators(mesh, k)
    rng = np.random.default_rng(seed)
    equivalence, embedding = [], []
    for _ in range(samples):
        v = random_weak_function(mesh, k, 1, rng, homogeneous=True)
        equivalence.append(norm_equivalence_ratio(v, mesh, ops))
        embedding.append(embedding_ratio(v, mesh, ops))
    return {
        "equivalence": (min(equivalence), max(equivalence)),
        "embedding": (min(embedding), max(embedding)),
    }


def projection_error_pi(u: Callable, mesh: Mesh, k: int, settings: Optional[Settings] = None) -> float:
    """||u - pi_h u||."""
    coefficients = project_pi(u, mesh, k)
    outer = TriBasis(k + 1)

    def difference(sl, geometry, pts):
        psi, _ = eval_tri_basis(outer, geometry, pts)
        return evaluate_field(u, pts) - np.einsum("tqa,tca->tqc", psi, coefficients[sl])

    return _squared_l2(mesh, k, difference, settings)


def pi_divergence_moments(u: Callable, div_u: Callable, mesh: Mesh, k: int) -> np.ndarray:
    """(div(u - pi_h u), q_i)_K for the P_k basis, shape (T, dim P_k)."""
    coefficients = project_pi(u, mesh, k)
    geometry = mesh.geometry
    rule = tri_quadrature(error_exactness(k))
    pts = geometry.points(rule)
    _, dpsi = eval_tri_basis(TriBasis(k + 1), geometry, pts)
    phi, _ = eval_tri_basis(TriBasis(k), geometry, pts)
    div_pi = np.einsum("tqac,tca->tq", dpsi, coefficients)
    residual = evaluate_field(div_u, pts)[..., 0] - div_pi
    return np.einsum("tq,tq,tqi->ti", geometry.weights(rule), residual, phi)


# ── Inf-sup ───────────────────────────────────────────────────────────────────

class _ZeroProblem:
    g = None

    @staticmethod
    def f(x, y):
        return (0.0 * x, 0.0 * x)


def infsup_from_blocks(a: sp.spmatrix, b: sp.spmatrix, pressure_mass, constant: np.ndarray,
                       settings: Optional[Settings] = None) -> float:
    """sqrt of the smallest eigenvalue of B A^-1 B^T against M_p on the mean-zero complement."""
    settings = settings or get_settings()
    n_p = b.shape[0]
    if n_p > settings.dense_infsup_limit:
        raise InfSupError(f"{n_p} pressure unknowns exceed the dense eigensolve limit {settings.dense_infsup_limit}")
    try:
        lu = splu(sp.csc_matrix(a))
    except RuntimeError as exc:
        raise InfSupError(f"velocity block is singular: {exc}") from exc

    bt = sp.csr_matrix(b).T.toarray()
    schur = np.asarray(b @ lu.solve(bt))
    schur = 0.5 * (schur + schur.T)
    mass = pressure_mass.toarray() if sp.issparse(pressure_mass) else np.asarray(pressure_mass)

    try:
        chol = scipy.linalg.cholesky(mass, lower=True)
        half = scipy.linalg.solve_triangular(chol, schur, lower=True)
        reduced = scipy.linalg.solve_triangular(chol, half.T, lower=True)
        reduced = 0.5 * (reduced + reduced.T)
        # lift the constant pressure (kernel of B^T) to the top of the spectrum
        w0 = chol.T @ constant
        w0 /= np.linalg.norm(w0)
        shift = 1.0 + np.abs(reduced).sum(axis=1).max()
        lowest = scipy.linalg.eigh(reduced + shift * np.outer(w0, w0), eigvals_only=True, subset_by_index=[0, 0])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        raise InfSupError(f"eigensolve failed: {exc}") from exc

    lam = float(lowest[0])
    if lam <= 0.0:
        raise InfSupError(f"pressure Schur complement is singular on the mean-zero space (lambda={lam:.3e})")
    return math.sqrt(lam)


def estimate_infsup(mesh: Mesh, k: int, ops: Optional[ElementOperators] = None,
                    settings: Optional[Settings] = None) -> float:
    """Discrete inf-sup constant beta_h over V_h x M_h."""
    settings = settings or get_settings()
    ops = ops or build_element_operators(mesh, k, settings)
    system = assemble(mesh, k, _ZeroProblem(), ops=ops, settings=settings)
    a, b, _ = system.blocks()
    constant = np.zeros(system.dofs.num_pressure)
    constant[:: system.dofs.interior_dim] = 1.0
    beta = infsup_from_blocks(a, b, sp.block_diag(list(ops.pressure_mass)), constant, settings)
    logger.info("inf-sup k=%d on %d elements: beta_h=%.6f", k, mesh.num_triangles, beta)
    return beta
