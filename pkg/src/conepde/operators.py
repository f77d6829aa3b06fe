"""Pointwise residuals of the degenerate p-Laplace operator, the direction
matrix Q, Pucci extremal operators, sub/supersolution classification, and the
exponential substitution used by the comparison machinery.

The strong operator, acting on u(t, x) with cone gradient g and cone
Hessian H, is

    t^-p |g|^(p-2) tr(Q H) + t^-p (n-p) |g|^(p-2) g_a - f(t, x),

with Q = I + (p-2) g g^T / |g|^2.  In the log chart the same expression
without the t^-p factor equals

    |g|^(p-2) tr(Q H) + (n-p) |g|^(p-2) g_a - f(e^a, x) e^(a p),

and the two residuals agree after the t^-p scaling.  Near critical points
the gradient magnitude is smoothed to sqrt(|g|^2 + eps_reg^2); the smoothed
direction matrix keeps its eigenvalues inside [1, p-1], so the Pucci
bracketing survives regularization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from conepde.calculus import (
    GridFunction,
    LogGrid,
    b_gradient,
    b_hessian,
    first_diff,
    gradient_field,
    hessian_field,
)

__all__ = [
    "PDEProblem",
    "PucciParams",
    "TransformParams",
    "q_matrix",
    "pucci_plus",
    "pucci_minus",
    "residual_full",
    "residual_log",
    "pucci_lower_residual",
    "pucci_upper_residual",
    "classify_point",
    "psi",
    "psi_inverse",
    "transformed_residual",
    "full_residual_from_derivs",
    "log_residual_from_derivs",
    "transformed_residual_from_derivs",
    "residual_log_field",
    "residual_full_field",
    "divergence_part_field",
    "constant_field",
    "separable_exponential_field",
    "log_polynomial_field",
    "gridfunction_field",
]

SYMMETRY_TOL = 1e-12


# ---------------------------------------------------------------------------
# problem data

@dataclass(eq=False)
class PDEProblem:
    """Exponent, dimension, forcing and Dirichlet data of one Dirichlet problem.

    ``f`` and ``dirichlet`` are samplers f(t, xs) where t is an array and xs a
    tuple of base-coordinate arrays of the same shape.  ``omega`` is an
    asserted positive floor for t^p f used by the comparison harness.
    """

    p: float
    n: int
    f: Callable
    dirichlet: Callable
    omega: float = 0.0

    def __post_init__(self):
        if self.p < 2.0:
            raise ValueError("exponents p < 2 are outside the supported range")
        if self.n < 2:
            raise ValueError("dimension n must be >= 2")
        if self.omega < 0.0:
            raise ValueError("omega must be >= 0")

    def f_values(self, grid: LogGrid) -> np.ndarray:
        t = grid.t_field
        return np.broadcast_to(self.f(t, grid.mesh[1:]), grid.shape).astype(float)

    def dirichlet_values(self, grid: LogGrid) -> np.ndarray:
        t = grid.t_field
        return np.broadcast_to(self.dirichlet(t, grid.mesh[1:]), grid.shape).astype(float)

    def validate_omega(self, grid: LogGrid) -> None:
        """Check t^p f >= omega at every node; no-op when omega == 0."""
        if self.omega <= 0.0:
            return
        floor = grid.t_field ** self.p * self.f_values(grid)
        worst = float(np.min(floor))
        if worst < self.omega - 1e-12:
            raise ValueError(
                f"t^p f dips to {worst:.6g} below the asserted floor omega={self.omega}"
            )


def constant_field(c: float) -> Callable:
    def fn(t, xs):
        return np.full_like(np.asarray(t, dtype=float), c)
    return fn


def separable_exponential_field(c: float, t_power: float, x_coeffs) -> Callable:
    """f(t, x) = c * t^q * exp(sum k_i x_i)."""
    ks = tuple(float(k) for k in x_coeffs)

    def fn(t, xs):
        out = c * np.asarray(t, dtype=float) ** t_power
        for k, x in zip(ks, xs):
            out = out * np.exp(k * np.asarray(x, dtype=float))
        return out
    return fn


def log_polynomial_field(terms) -> Callable:
    """Polynomial in (a, x) with a = ln t; ``terms`` is a list of
    (coefficient, power_a, power_x1, ...)."""
    terms = [tuple(term) for term in terms]

    def fn(t, xs):
        a = np.log(np.asarray(t, dtype=float))
        out = np.zeros_like(a)
        for coef, pa, *pxs in terms:
            mono = coef * a ** pa
            for px, x in zip(pxs, xs):
                mono = mono * np.asarray(x, dtype=float) ** px
            out = out + mono
        return out
    return fn


def gridfunction_field(u: GridFunction) -> Callable:
    """Sampler backed by multilinear interpolation of a stored grid function."""
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator(
        u.grid.axes, u.values, method="linear", bounds_error=False, fill_value=None
    )

    def fn(t, xs):
        a = np.log(np.asarray(t, dtype=float))
        pts = np.stack([a] + [np.asarray(x, dtype=float) for x in xs], axis=-1)
        return interp(pts)
    return fn


# ---------------------------------------------------------------------------
# direction matrix and Pucci operators

def q_matrix(grad: np.ndarray, p: float) -> np.ndarray:
    """Q = I + (p-2) g g^T / |g|^2; eigenvalues are {p-1, 1, ..., 1}."""
    g = np.asarray(grad, dtype=float)
    ng2 = float(g @ g)
    if ng2 == 0.0:
        raise ValueError("direction matrix is undefined at a zero gradient")
    return np.eye(g.size) + (p - 2.0) * np.outer(g, g) / ng2


@dataclass(frozen=True)
class PucciParams:
    """Ellipticity bounds; the p-Laplace direction matrix satisfies
    lam I <= Q <= Lam I with lam = 1 and Lam = p - 1."""

    lam: float = 1.0
    Lam: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.lam <= self.Lam):
            raise ValueError("need 0 < lam <= Lam")

    @classmethod
    def from_p(cls, p: float) -> "PucciParams":
        return cls(lam=1.0, Lam=max(p - 1.0, 1.0))


def _check_symmetric(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(X - X.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric within 1e-12")
    return X


def pucci_plus(X: np.ndarray, params: PucciParams) -> float:
    """sup of tr(A X) over lam I <= A <= Lam I, via the eigenvalues of X."""
    e = np.linalg.eigvalsh(_check_symmetric(X))
    return float(params.Lam * e[e > 0].sum() + params.lam * e[e < 0].sum())


def pucci_minus(X: np.ndarray, params: PucciParams) -> float:
    """inf of tr(A X) over lam I <= A <= Lam I."""
    e = np.linalg.eigvalsh(_check_symmetric(X))
    return float(params.lam * e[e > 0].sum() + params.Lam * e[e < 0].sum())


# ---------------------------------------------------------------------------
# residual algebra on explicit derivatives

def _diffusion(grad: np.ndarray, hess: np.ndarray, p: float, eps_reg: float,
               extremal: str | None = None) -> tuple:
    """Return (|g|_d^(p-2) * tr-like term, |g|_d^(p-2)).

    tr-like is tr(Q_d H) for extremal None, or the Pucci upper/lower value
    of H.  Zero regularized gradient with p > 2 kills both factors; p == 2
    keeps the unit coefficient (the operator is linear there).
    """
    g = np.asarray(grad, dtype=float)
    H = np.asarray(hess, dtype=float)
    s2 = float(g @ g) + eps_reg ** 2
    if p == 2.0:
        coef = 1.0
    elif s2 == 0.0:
        return 0.0, 0.0
    else:
        coef = s2 ** ((p - 2.0) / 2.0)
    if extremal is None:
        tr_like = float(np.trace(H))
        if p != 2.0:
            tr_like += (p - 2.0) * float(g @ H @ g) / s2
    elif extremal == "upper":
        tr_like = pucci_plus(H, PucciParams.from_p(p))
    elif extremal == "lower":
        tr_like = pucci_minus(H, PucciParams.from_p(p))
    else:
        raise ValueError(f"unknown extremal mode {extremal!r}")
    return coef * tr_like, coef


def full_residual_from_derivs(t: float, grad, hess, p: float, n: int,
                              f_value: float, eps_reg: float = 0.0,
                              extremal: str | None = None) -> float:
    """Strong-form residual from explicit derivatives at one point."""
    diff, coef = _diffusion(grad, hess, p, eps_reg, extremal)
    return t ** (-p) * (diff + (n - p) * coef * float(grad[0])) - f_value


def log_residual_from_derivs(a: float, grad, hess, p: float, n: int,
                             f_value: float, eps_reg: float = 0.0,
                             extremal: str | None = None) -> float:
    """Log-chart residual from explicit derivatives at one point; equals
    t^p times the strong residual."""
    diff, coef = _diffusion(grad, hess, p, eps_reg, extremal)
    return diff + (n - p) * coef * float(grad[0]) - f_value * math.exp(a * p)


def transformed_residual_from_derivs(t: float, z_value: float, grad, hess,
                                     p: float, n: int, f_value: float,
                                     K: float, eps_reg: float = 0.0) -> float:
    """Residual of the exponentially substituted equation from explicit
    derivatives of the substituted field z."""
    g = np.asarray(grad, dtype=float)
    s2 = float(g @ g) + eps_reg ** 2
    diff, coef = _diffusion(grad, hess, p, eps_reg)
    return (
        diff
        - (p - 1.0) * s2 ** (p / 2.0)
        + (n - p) * coef * float(g[0])
        - f_value * t ** p * math.exp(z_value * (p - 1.0)) / K ** (p - 1.0)
    )


# ---------------------------------------------------------------------------
# pointwise residuals on grid functions

def _point_data(u: GridFunction, node, prob: PDEProblem):
    node = tuple(node)
    coords = u.grid.node_coords(node)
    a = float(coords[0])
    t = math.exp(a)
    xs = tuple(np.asarray(c) for c in coords[1:])
    fval = float(np.asarray(prob.f(np.asarray(t), xs)))
    return node, a, t, fval


def residual_full(u: GridFunction, node, prob: PDEProblem,
                  eps_reg: float = 0.0) -> float:
    """Strong-form residual at a node using the log-chart stencils."""
    node, a, t, fval = _point_data(u, node, prob)
    g = b_gradient(u, node)
    H = b_hessian(u, node)
    return full_residual_from_derivs(t, g, H, prob.p, prob.n, fval, eps_reg)


def residual_log(u: GridFunction, node, prob: PDEProblem,
                 eps_reg: float = 0.0) -> float:
    """Log-chart residual at a node; t^p times ``residual_full`` there."""
    node, a, t, fval = _point_data(u, node, prob)
    g = b_gradient(u, node)
    H = b_hessian(u, node)
    return log_residual_from_derivs(a, g, H, prob.p, prob.n, fval, eps_reg)


def pucci_lower_residual(u: GridFunction, node, prob: PDEProblem,
                         eps_reg: float = 0.0) -> float:
    node, a, t, fval = _point_data(u, node, prob)
    g = b_gradient(u, node)
    H = b_hessian(u, node)
    return full_residual_from_derivs(t, g, H, prob.p, prob.n, fval, eps_reg,
                                     extremal="lower")


def pucci_upper_residual(u: GridFunction, node, prob: PDEProblem,
                         eps_reg: float = 0.0) -> float:
    node, a, t, fval = _point_data(u, node, prob)
    g = b_gradient(u, node)
    H = b_hessian(u, node)
    return full_residual_from_derivs(t, g, H, prob.p, prob.n, fval, eps_reg,
                                     extremal="upper")


SUPER_CONSISTENT = "supersolution-consistent"
SUB_CONSISTENT = "subsolution-consistent"
SOLUTION_CONSISTENT = "solution-consistent"
INCONSISTENT = "inconsistent"


def classify_point(u: GridFunction, node, prob: PDEProblem, eps_reg: float,
                   tol: float) -> str:
    """Smooth-point surrogate of the viscosity classification.

    A supersolution must keep the lower Pucci residual <= tol, a subsolution
    the upper Pucci residual >= -tol; both together are solution-consistent.
    """
    lower_ok = pucci_lower_residual(u, node, prob, eps_reg) <= tol
    upper_ok = pucci_upper_residual(u, node, prob, eps_reg) >= -tol
    if lower_ok and upper_ok:
        return SOLUTION_CONSISTENT
    if lower_ok:
        return SUPER_CONSISTENT
    if upper_ok:
        return SUB_CONSISTENT
    return INCONSISTENT


# ---------------------------------------------------------------------------
# exponential substitution

@dataclass(frozen=True)
class TransformParams:
    """Scale of the exponential substitution v = K (1 - e^-z); built from a
    bound M on the fields being compared via K = 2 M."""

    K: float
    M: float

    def __post_init__(self):
        if not self.K > 0.0:
            raise ValueError("substitution scale K must be positive")

    @classmethod
    def from_bound(cls, M: float) -> "TransformParams":
        if not M > 0.0:
            raise ValueError("field bound M must be positive")
        return cls(K=2.0 * M, M=M)


def psi(s, params: TransformParams):
    """psi(s) = K (1 - e^-s); strictly increasing onto (-inf, K)."""
    return -params.K * np.expm1(-np.asarray(s, dtype=float))


def psi_inverse(v, params: TransformParams):
    """Inverse of psi on (-inf, K)."""
    v = np.asarray(v, dtype=float)
    if np.any(v >= params.K):
        raise ValueError("psi_inverse is only defined below K")
    return -np.log1p(-v / params.K)


def transformed_residual(z: GridFunction, node, prob: PDEProblem,
                         params: TransformParams, eps_reg: float = 0.0) -> float:
    """Residual of the substituted equation at a node of the z field."""
    node, a, t, fval = _point_data(z, node, prob)
    g = b_gradient(z, node)
    H = b_hessian(z, node)
    return transformed_residual_from_derivs(
        t, float(z.values[node]), g, H, prob.p, prob.n, fval, params.K, eps_reg
    )


# ---------------------------------------------------------------------------
# vectorized residual fields (shared with the solver)

def _drift_field(u: GridFunction, drift: str) -> np.ndarray:
    """Radial first derivative: central, or one-sided against the drift sign."""
    h = u.grid.h[0]
    v = u.values
    if drift == "central":
        return first_diff(v, 0, h)
    out = np.empty_like(v)
    if drift == "upwind-forward":
        out[:-1] = (v[1:] - v[:-1]) / h
        out[-1] = (v[-1] - v[-2]) / h
    elif drift == "upwind-backward":
        out[1:] = (v[1:] - v[:-1]) / h
        out[0] = (v[1] - v[0]) / h
    else:
        raise ValueError(f"unknown drift mode {drift!r}")
    return out


def divergence_part_field(u: GridFunction, p: float, n: int,
                          eps_reg: float = 0.0,
                          drift: str = "central") -> np.ndarray:
    """|g|_d^(p-2) (tr(Q_d H) + (n-p) g_a) at every node (no forcing term)."""
    g = gradient_field(u)
    H = hessian_field(u)
    nd = u.grid.n
    s2 = np.sum(g * g, axis=0) + eps_reg ** 2
    trH = np.einsum("kk...->...", H)
    gHg = np.einsum("k...,kl...,l...->...", g, H, g)
    if p == 2.0:
        return trH + (n - p) * _drift_field(u, drift)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(s2 > 0.0, s2 ** ((p - 2.0) / 2.0), 0.0)
        aniso = np.where(s2 > 0.0, gHg / s2, 0.0)
    return coef * (trH + (p - 2.0) * aniso) + (n - p) * coef * _drift_field(u, drift)


def residual_log_field(u: GridFunction, prob: PDEProblem, eps_reg: float = 0.0,
                       drift: str = "central",
                       f_values: np.ndarray | None = None) -> np.ndarray:
    """Log-chart residual at every node (boundary rows use one-sided stencils)."""
    if f_values is None:
        f_values = prob.f_values(u.grid)
    A = u.grid.mesh[0]
    forcing = f_values * np.exp(A * prob.p)
    return divergence_part_field(u, prob.p, prob.n, eps_reg, drift) - forcing


def residual_full_field(u: GridFunction, prob: PDEProblem, eps_reg: float = 0.0,
                        drift: str = "central",
                        f_values: np.ndarray | None = None) -> np.ndarray:
    """Strong-form residual at every node; the log residual scaled by t^-p."""
    if f_values is None:
        f_values = prob.f_values(u.grid)
    A = u.grid.mesh[0]
    scale = np.exp(-A * prob.p)
    return scale * divergence_part_field(u, prob.p, prob.n, eps_reg, drift) - f_values
