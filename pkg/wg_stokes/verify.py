"""
Operator-level property suite behind `wg-stokes verify`.

Each check returns a CheckResult instead of raising, so one failing
property does not hide the others.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from wg_stokes.analysis import estimate_infsup, norm_equivalence_ratios, pi_divergence_moments
from wg_stokes.mesh import build_structured, refine
from wg_stokes.polyquad import TriBasis, error_exactness, eval_tri_basis, tri_quadrature
from wg_stokes.weakops import (
    build_element_operators,
    constant_local_dofs,
    evaluate_field,
    project_interior,
    project_pi,
    project_Qh,
    weak_divergence,
    weak_gradient,
    weak_gradient_op,
)

logger = logging.getLogger(__name__)

DEGREES = (0, 1)
KERNEL_TOL = 1e-12
COMMUTING_TOL = 1e-10
PI_TOL = 1e-11
DIV_BOUND_SAMPLES = 1000
DIV_BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def smooth_field(x, y):
    return (np.sin(x) * y + x ** 2, np.cos(x + 2 * y) - x * y ** 2)


def smooth_field_grad(x, y):
    return (
        (np.cos(x) * y + 2 * x, np.sin(x)),
        (-np.sin(x + 2 * y) - y ** 2, -2 * np.sin(x + 2 * y) - 2 * x * y),
    )


def smooth_field_div(x, y):
    return np.cos(x) * y + 2 * x - 2 * np.sin(x + 2 * y) - 2 * x * y


# ── Checks ────────────────────────────────────────────────────────────────────

def check_gradient_kernel(k: int) -> CheckResult:
    """grad_w v = 0 exactly for constants, and nothing else."""
    mesh = build_structured(2)
    g = weak_gradient_op(mesh, k)
    ones = constant_local_dofs(k)
    defect = float(np.abs(g @ ones).max() / max(np.abs(g).max(), 1.0))
    ranks = {int(np.linalg.matrix_rank(gt, tol=1e-10 * np.abs(gt).max())) for gt in g}
    expected = len(ones) - 1
    passed = defect <= KERNEL_TOL and ranks == {expected}
    return CheckResult(f"kernel of weak gradient (k={k})", passed,
                       f"|G 1| / |G| = {defect:.2e}, ranks {sorted(ranks)}, expected {expected}")


def check_divergence_bound(k: int, seed: int = 0) -> CheckResult:
    """||div_w v||_K <= sqrt(2) ||grad_w v||_K on every element shape."""
    mesh = build_structured(1)
    ops = build_element_operators(mesh, k)
    rng = np.random.default_rng(seed)
    nloc = ops.stiffness.shape[-1]
    worst = -math.inf
    violations = 0
    for t in range(mesh.num_triangles):
        v = rng.standard_normal((DIV_BOUND_SAMPLES, 2 * nloc))
        d = v @ ops.divergence[t].T
        div_sq = np.einsum("sa,ab,sb->s", d, ops.mass[t], d)
        grad_sq = np.einsum("si,ij,sj->s", v[:, :nloc], ops.stiffness[t], v[:, :nloc]) + \
            np.einsum("si,ij,sj->s", v[:, nloc:], ops.stiffness[t], v[:, nloc:])
        slack = 2.0 * grad_sq - div_sq
        violations += int(np.sum(slack < -DIV_BOUND_SLACK * np.maximum(grad_sq, 1.0)))
        worst = max(worst, float(np.max(div_sq / np.maximum(grad_sq, 1e-300))))
    return CheckResult(f"divergence bounded by weak gradient (k={k})", violations == 0,
                       f"{violations} violations in {DIV_BOUND_SAMPLES * mesh.num_triangles} samples, "
                       f"max ||div||^2/||grad||^2 = {worst:.4f} <= 2")


def check_commuting(k: int) -> CheckResult:
    """grad_w Q_h u = P^{k+1} grad u and div_w Q_h u = P^{k+1} div u."""
    mesh = build_structured(8)
    ops = build_element_operators(mesh, k)
    qu = project_Qh(smooth_field, mesh, k)
    grad = weak_gradient(qu, mesh, ops).reshape(mesh.num_triangles, 4, -1)
    grad_exact = project_interior(smooth_field_grad, mesh, k + 1)
    div = weak_divergence(qu, mesh, ops)
    div_exact = project_interior(smooth_field_div, mesh, k + 1)[:, 0, :]
    grad_err = float(np.abs(grad - grad_exact).max() / np.abs(grad_exact).max())
    div_err = float(np.abs(div - div_exact).max() / max(np.abs(div_exact).max(), 1.0))
    return CheckResult(f"commuting identities (k={k})", max(grad_err, div_err) <= COMMUTING_TOL,
                       f"gradient {grad_err:.2e}, divergence {div_err:.2e}")


def _random_polynomial_field(degree: int, rng: np.random.Generator) -> Callable:
    exponents = TriBasis(degree).exponents
    coefficients = rng.standard_normal((2, len(exponents)))

    def field(x, y):
        monomials = [x ** a * y ** b for a, b in exponents]
        return tuple(sum(c * m for c, m in zip(row, monomials)) for row in coefficients)

    return field


def check_pi_reproduction(k: int, seed: int = 0) -> CheckResult:
    """pi_h u = u for u in [P_{k+1}]^2."""
    mesh = build_structured(2)
    u = _random_polynomial_field(k + 1, np.random.default_rng(seed))
    coefficients = project_pi(u, mesh, k)
    geometry = mesh.geometry
    pts = geometry.points(tri_quadrature(error_exactness(k)))
    psi, _ = eval_tri_basis(TriBasis(k + 1), geometry, pts)
    exact = evaluate_field(u, pts)
    err = float(np.abs(np.einsum("tqa,tca->tqc", psi, coefficients) - exact).max() / np.abs(exact).max())
    return CheckResult(f"pi_h reproduces [P_{k + 1}]^2 (k={k})", err <= PI_TOL, f"max relative error {err:.2e}")


def check_pi_divergence(k: int) -> CheckResult:
    """(div(u - pi_h u), q)_K = 0 for q in P_k."""
    mesh = build_structured(4)
    moments = pi_divergence_moments(smooth_field, smooth_field_div, mesh, k)
    worst = float(np.abs(moments).max())
    return CheckResult(f"pi_h divergence moments (k={k})", worst <= PI_TOL, f"max |moment| = {worst:.2e}")


def check_norm_monitors(k: int) -> CheckResult:
    """Equivalence and embedding constants do not degrade under two refinements."""
    mesh = build_structured(2)
    observed = []
    for _ in range(3):
        observed.append(norm_equivalence_ratios(mesh, k, samples=10, seed=1))
        mesh = refine(mesh)
    lo0, hi0 = observed[0]["equivalence"]
    emb0 = observed[0]["embedding"][1]
    lo = min(o["equivalence"][0] for o in observed)
    hi = max(o["equivalence"][1] for o in observed)
    emb = max(o["embedding"][1] for o in observed)
    passed = lo > 0.5 * lo0 and hi < 2.0 * hi0 and emb <= 1.5 * emb0
    return CheckResult(f"norm equivalence and embedding (k={k})", passed,
                       f"||grad_w v||/||v||_1,h in [{lo:.4f}, {hi:.4f}], max ||v0||/||grad_w v|| = {emb:.4f}")


def check_infsup(k: int) -> CheckResult:
    beta = estimate_infsup(build_structured(4), k)
    return CheckResult(f"inf-sup constant positive (k={k})", beta > 0, f"beta_h = {beta:.6f} on n=4")


CHECKS: list[Callable[[int], CheckResult]] = [
    check_gradient_kernel,
    check_divergence_bound,
    check_commuting,
    check_pi_reproduction,
    check_pi_divergence,
    check_norm_monitors,
    check_infsup,
]


def run_verify() -> list[CheckResult]:
    results = []
    started = time.perf_counter()
    for k in DEGREES:
        for check in CHECKS:
            try:
                result = check(k)
            except Exception as exc:
                result = CheckResult(f"{check.__name__} (k={k})", False, f"raised {type(exc).__name__}: {exc}")
            logger.info("%s %s: %s", "PASS" if result.passed else "FAIL", result.name, result.detail)
            results.append(result)
    logger.info("verify: %d/%d checks passed in %.1fs",
                sum(r.passed for r in results), len(results), time.perf_counter() - started)
    return results
