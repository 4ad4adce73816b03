"""
Manufactured Stokes problems on the unit square.

Every case carries the exact velocity, its gradient, the exact pressure and
the force f = -Laplace(u) + grad p; the Dirichlet data is g = u on the boundary.
Callables take coordinate arrays x, y and return arrays (or tuples of arrays)
of the same shape.
"""

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class ProblemCase:
    name: str
    f: Callable
    g: Optional[Callable]
    u: Optional[Callable] = None
    grad_u: Optional[Callable] = None
    p: Optional[Callable] = None
    notes: str = ""

    @property
    def has_exact_solution(self) -> bool:
        return self.u is not None and self.grad_u is not None and self.p is not None

    def div_u(self, x, y):
        (u1x, _), (_, u2y) = self.grad_u(x, y)
        return u1x + u2y

    def homogenized(self) -> "ProblemCase":
        """Same force with zero boundary data; the exact solution no longer applies."""
        return replace(self, name=f"{self.name}-homogenized", g=None, u=None, grad_u=None, p=None,
                       notes="zero boundary data")


# ── paper ─────────────────────────────────────────────────────────────────────

def _paper_u(x, y):
    return (x * np.cos(y), np.cos(x) - np.sin(y))


def _paper_grad_u(x, y):
    return ((np.cos(y), -x * np.sin(y)), (-np.sin(x), -np.cos(y)))


def _paper_p(x, y):
    return x ** 3 * y - y ** 3 + 1.0 / 8.0


def _paper_f(x, y):
    return (x * np.cos(y) + 3 * x ** 2 * y, np.cos(x) - np.sin(y) + x ** 3 - 3 * y ** 2)


def registry_paper_case() -> ProblemCase:
    return ProblemCase(
        name="paper",
        f=_paper_f,
        g=_paper_u,
        u=_paper_u,
        grad_u=_paper_grad_u,
        p=_paper_p,
        notes="u = (x cos y, cos x - sin y), p = x^3 y - y^3 + 1/8; smooth, inhomogeneous boundary",
    )


# ── linear ────────────────────────────────────────────────────────────────────

def _linear_u(x, y):
    return (y + 0.0 * x, x + 0.0 * y)


def _linear_grad_u(x, y):
    zero, one = np.zeros_like(x), np.ones_like(x)
    return ((zero, one), (one, zero))


def _zero_scalar(x, y):
    return np.zeros_like(x)


def _zero_vector(x, y):
    return (np.zeros_like(x), np.zeros_like(x))


def linear_case() -> ProblemCase:
    return ProblemCase(
        name="linear",
        f=_zero_vector,
        g=_linear_u,
        u=_linear_u,
        grad_u=_linear_grad_u,
        p=_zero_scalar,
        notes="u = (y, x), p = 0, f = 0; the discrete spaces contain the solution",
    )


# ── bubble ────────────────────────────────────────────────────────────────────
# u = curl psi with psi = a(x) a(y), a(t) = t^2 (1 - t)^2

def _a(t):
    return t ** 2 * (1 - t) ** 2


def _da(t):
    return 2 * t * (1 - t) * (1 - 2 * t)


def _d2a(t):
    return 2 * (1 - 6 * t + 6 * t ** 2)


def _d3a(t):
    return 12 * (2 * t - 1)


def _bubble_u(x, y):
    return (_a(x) * _da(y), -_da(x) * _a(y))


def _bubble_grad_u(x, y):
    return ((_da(x) * _da(y), _a(x) * _d2a(y)), (-_d2a(x) * _a(y), -_da(x) * _da(y)))


def _bubble_p(x, y):
    return x ** 3 - 0.25 + 0.0 * y


def _bubble_f(x, y):
    return (
        -(_d2a(x) * _da(y) + _a(x) * _d3a(y)) + 3 * x ** 2,
        _d3a(x) * _a(y) + _da(x) * _d2a(y),
    )


def bubble_case() -> ProblemCase:
    return ProblemCase(
        name="bubble",
        f=_bubble_f,
        g=_bubble_u,
        u=_bubble_u,
        grad_u=_bubble_grad_u,
        p=_bubble_p,
        notes="u = curl of x^2(1-x)^2 y^2(1-y)^2, p = x^3 - 1/4; u vanishes on the boundary",
    )


CASES: dict[str, Callable[[], ProblemCase]] = {
    "paper": registry_paper_case,
    "linear": linear_case,
    "bubble": bubble_case,
}


def get_case(name: str) -> ProblemCase:
    try:
        return CASES[name]()
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {', '.join(sorted(CASES))}") from None
