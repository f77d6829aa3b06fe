"""Empirical verification harness for the operator's structural estimates:
the interior bound by boundary data plus forcing, weighted Hoelder
continuity, weak and local Harnack ratios, oscillation decay, the
comparison principle with its pair-maximization diagnostic, and the
weak-form residual.

All constants are empirical: checks report the minimal constant making the
corresponding inequality an equality, and acceptance asserts stability of
those constants across refinement rather than absolute values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from conepde.calculus import (
    GridFunction,
    LogGrid,
    gradient_field,
    hoelder_norm,
    quadrature_weights,
)
from conepde.geometry import ConeDomain, ConePoint
from conepde.operators import PDEProblem

__all__ = [
    "AbpReport",
    "abp_check",
    "HoelderReport",
    "hoelder_check",
    "hoelder_sweep",
    "empirical_alpha1",
    "HarnackReport",
    "harnack_ratio",
    "WeakHarnackConfig",
    "weak_harnack_check",
    "OscillationReport",
    "oscillation_decay",
    "ComparisonReport",
    "comparison_check",
    "DoublingDiagnostic",
    "doubling_diagnostic",
    "CosineBump",
    "cosine_bumps",
    "weak_form_residual",
]

_CHUNK = int(5e6)


# ---------------------------------------------------------------------------
# shared helpers

def _ball_sup_forcing(grid: LogGrid, weight_values: np.ndarray, p: float,
                      radius_field: np.ndarray) -> float:
    """sup over nodes z of the sup of ``weight_values`` over the metric ball
    of per-node radius around z, raised to 1/(p-1)."""
    pts = grid.log_points
    w = weight_values.ravel()
    r = radius_field.ravel()
    m = pts.shape[0]
    best = 0.0
    chunk = max(1, _CHUNK // max(m, 1))
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        d2 = np.sum((pts[start:stop, None, :] - pts[None, :, :]) ** 2, axis=2)
        inside = d2 <= (r[start:stop, None]) ** 2
        sup = np.max(np.where(inside, w[None, :], -np.inf), axis=1)
        best = max(best, float(np.max(sup)))
    return best ** (1.0 / (p - 1.0)) if best > 0.0 else 0.0


def _ball_mask(grid: LogGrid, center: ConePoint, radius: float) -> np.ndarray:
    pts = grid.log_points
    c = center.as_log()
    d2 = np.sum((pts - c[None, :]) ** 2, axis=1)
    return (d2 < radius * radius).reshape(grid.shape)


def _require_ball_resolved(mask: np.ndarray, what: str) -> None:
    if not np.any(mask):
        raise ValueError(f"{what} contains no grid nodes; refine the grid")


# ---------------------------------------------------------------------------
# interior bound by boundary data plus forcing

@dataclass
class AbpReport:
    """Constituents of the interior-sup estimate for one orientation.

    ``variant`` is "subsolution" (positive part against the negative part of
    the forcing) or "two-sided" (absolute values on both sides).  The
    empirical constant makes the inequality an equality; ``holds_with``
    re-evaluates it for any reference constant.
    """

    variant: str
    interior_sup_vplus: float
    boundary_sup_vplus: float
    forcing: float
    geometry_factor: float
    C_emp: float | None
    forcing_zero: bool
    bottom_face_active: bool
    vacuous: bool = False  # the positive-part maximum sits on the boundary

    def holds_with(self, C: float, slack: float = 0.0) -> bool:
        rhs = self.boundary_sup_vplus + C * self.geometry_factor * self.forcing
        return self.interior_sup_vplus <= rhs + slack

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant,
            "interior_sup_vplus": self.interior_sup_vplus,
            "boundary_sup_vplus": self.boundary_sup_vplus,
            "forcing": self.forcing,
            "geometry_factor": self.geometry_factor,
            "C_emp": self.C_emp,
            "forcing_zero": self.forcing_zero,
            "bottom_face_active": self.bottom_face_active,
            "vacuous": self.vacuous,
        }


def _abp_variant(v: GridFunction, prob: PDEProblem, domain: ConeDomain,
                 signed_part: np.ndarray, forcing_part: np.ndarray,
                 variant: str) -> AbpReport:
    grid = v.grid
    bmask = grid.analytic_boundary_mask
    interior = ~bmask & ~grid.artificial_bottom_mask
    if not np.any(bmask):
        raise ValueError("the grid carries no analytic boundary nodes")
    K0, d0 = domain.g_params.K0, domain.g_params.d0
    radius = 2.0 * K0 * np.minimum(grid.boundary_distance_field, d0)
    tpf = grid.t_field ** prob.p * forcing_part
    forcing = _ball_sup_forcing(grid, tpf, prob.p, radius)
    geometry = (K0 * d0) ** (prob.p / (prob.p - 1.0))
    interior_sup = float(np.max(signed_part[interior]))
    boundary_sup = float(np.max(signed_part[bmask]))
    forcing_zero = forcing <= 0.0
    C_emp = None
    if not forcing_zero:
        C_emp = (interior_sup - boundary_sup) / (geometry * forcing)
    flat = np.argmax(np.where(interior, signed_part, -np.inf))
    bottom_active = bool(np.unravel_index(flat, grid.shape)[0] == 0)
    return AbpReport(
        variant=variant,
        interior_sup_vplus=interior_sup,
        boundary_sup_vplus=boundary_sup,
        forcing=forcing,
        geometry_factor=geometry,
        C_emp=C_emp,
        forcing_zero=forcing_zero,
        bottom_face_active=bottom_active,
        vacuous=bool(interior_sup < boundary_sup - 1e-13),
    )


def abp_check(v: GridFunction, prob: PDEProblem, domain: ConeDomain) -> tuple:
    """Interior-sup reports: (subsolution variant with v^+ against f^-,
    two-sided variant with |v| against |f|)."""
    f = prob.f_values(v.grid)
    one = _abp_variant(v, prob, domain, np.maximum(v.values, 0.0),
                       np.maximum(-f, 0.0), "subsolution")
    two = _abp_variant(v, prob, domain, np.abs(v.values), np.abs(f), "two-sided")
    return one, two


# ---------------------------------------------------------------------------
# weighted Hoelder estimate

@dataclass
class HoelderReport:
    rho: float
    norm: float
    forcing: float
    ratio: float | None
    vacuous: bool
    inconsistent: bool

    def to_json_dict(self) -> dict:
        return {"rho": self.rho, "norm": self.norm, "forcing": self.forcing,
                "ratio": self.ratio, "vacuous": self.vacuous,
                "inconsistent": self.inconsistent}


def hoelder_check(v: GridFunction, prob: PDEProblem, rho: float,
                  domain: ConeDomain) -> HoelderReport:
    """Ratio of the weighted Hoelder norm of a zero-boundary solve to the
    two-sided forcing supremum.

    Boundary-attached pairs enter through the grid's boundary nodes, where a
    zero-boundary solve stores exact zeros.
    """
    grid = v.grid
    norm = float(hoelder_norm(v, rho))
    K0, d0 = domain.g_params.K0, domain.g_params.d0
    radius = 2.0 * K0 * np.minimum(grid.boundary_distance_field, d0)
    tpf = grid.t_field ** prob.p * np.abs(prob.f_values(grid))
    forcing = _ball_sup_forcing(grid, tpf, prob.p, radius)
    vacuous = norm == 0.0
    inconsistent = forcing == 0.0 and norm > 0.0
    ratio = None if forcing == 0.0 else norm / forcing
    return HoelderReport(rho=rho, norm=norm, forcing=forcing, ratio=ratio,
                         vacuous=vacuous, inconsistent=inconsistent)


def hoelder_sweep(v: GridFunction, prob: PDEProblem, rhos: Sequence[float],
                  domain: ConeDomain) -> list:
    return [hoelder_check(v, prob, rho, domain) for rho in rhos]


def empirical_alpha1(coarse: Sequence[HoelderReport], fine: Sequence[HoelderReport],
                     rel_tol: float = 0.2) -> float | None:
    """Largest swept exponent whose ratio is finite on both grids and moves
    by at most rel_tol under the refinement."""
    best = None
    for rc, rf in zip(coarse, fine):
        if rc.ratio is None or rf.ratio is None or rc.ratio == 0.0:
            continue
        if abs(rf.ratio / rc.ratio - 1.0) <= rel_tol:
            best = rc.rho if best is None else max(best, rc.rho)
    return best


# ---------------------------------------------------------------------------
# Harnack ratios

@dataclass
class HarnackReport:
    sup: float
    inf: float
    forcing: float
    C_emp: float

    def to_json_dict(self) -> dict:
        return {"sup": self.sup, "inf": self.inf, "forcing": self.forcing,
                "C_emp": self.C_emp}


def harnack_ratio(u: GridFunction, prob: PDEProblem, center: ConePoint,
                  d: float, domain: ConeDomain) -> HarnackReport:
    """Minimal constant in sup <= C (inf + d^(p/(p-1)) forcing^(1/(p-1)))
    with both extrema over the half ball."""
    K0, d0 = domain.g_params.K0, domain.g_params.d0
    if not d > 0.0:
        raise ValueError("ball radius must be positive")
    if d > K0 * d0 + 1.0:
        raise ValueError("ball radius exceeds the admissible K0 d0 + 1")
    grid = u.grid
    c = center.as_log()
    if (c[0] - d < grid.a[0] - 1e-12 or c[0] + d > grid.a[-1] + 1e-12
            or any(c[1 + k] - d < grid.xs[k][0] - 1e-12
                   or c[1 + k] + d > grid.xs[k][-1] + 1e-12
                   for k in range(grid.n - 1))):
        raise ValueError("the ball is not compactly contained in the grid")
    ball = _ball_mask(grid, center, d)
    half = _ball_mask(grid, center, d / 2.0)
    _require_ball_resolved(half, "the half ball")
    if float(np.min(u.values[ball])) < -1e-12:
        raise ValueError("the field is negative inside the ball")
    sup = float(np.max(u.values[half]))
    inf = float(np.min(u.values[half]))
    tpf = grid.t_field ** prob.p * prob.f_values(grid)
    forcing = d ** (prob.p / (prob.p - 1.0)) * float(
        np.max(np.abs(tpf[ball]))) ** (1.0 / (prob.p - 1.0))
    denom = inf + forcing
    C_emp = 1.0 if sup == 0.0 and denom == 0.0 else (
        math.inf if denom == 0.0 else sup / denom)
    return HarnackReport(sup=sup, inf=inf, forcing=forcing, C_emp=C_emp)


@dataclass(frozen=True)
class WeakHarnackConfig:
    p0_sweep: tuple
    center: ConePoint
    d: float

    def __post_init__(self):
        if not self.d > 0.0:
            raise ValueError("ball radius must be positive")
        if any(not (0.0 < p0 <= 1.0) for p0 in self.p0_sweep):
            raise ValueError("p0 values must lie in (0, 1]")


@dataclass
class WeakHarnackRow:
    p0: float
    mean: float
    inf: float
    C_emp_minus: float
    C_emp_plus: float

    def to_json_dict(self) -> dict:
        return {"p0": self.p0, "mean": self.mean, "inf": self.inf,
                "C_emp_minus": self.C_emp_minus, "C_emp_plus": self.C_emp_plus}


def weak_harnack_check(u: GridFunction, prob: PDEProblem,
                       cfg: WeakHarnackConfig, domain: ConeDomain) -> list:
    """Normalized p0-means of a nonnegative supersolution against its
    infimum plus forcing, per swept p0.

    Both forcing sign conventions are reported: the negative part appears in
    the stated estimate, the positive part in its derivation.
    """
    K0, d0 = domain.g_params.K0, domain.g_params.d0
    if cfg.d > K0 * d0 + 1.0:
        raise ValueError("ball radius exceeds the admissible K0 d0 + 1")
    grid = u.grid
    ball = _ball_mask(grid, cfg.center, cfg.d)
    double = _ball_mask(grid, cfg.center, 2.0 * cfg.d)
    _require_ball_resolved(ball, "the ball")
    if float(np.min(u.values[ball])) < -1e-12:
        raise ValueError("the field is negative inside the ball")
    w = quadrature_weights(grid)
    volume = float(np.sum(w * ball))
    inf_u = float(np.min(u.values[ball]))
    tpf = grid.t_field ** prob.p * prob.f_values(grid)
    scale = cfg.d ** (prob.p / (prob.p - 1.0))
    f_minus = scale * float(np.max(np.maximum(-tpf, 0.0)[double])) ** (1.0 / (prob.p - 1.0))
    f_plus = scale * float(np.max(np.maximum(tpf, 0.0)[double])) ** (1.0 / (prob.p - 1.0))
    rows = []
    uvals = np.maximum(u.values, 0.0)
    for p0 in cfg.p0_sweep:
        mean = (float(np.sum(w * ball * uvals ** p0)) / volume) ** (1.0 / p0)
        rows.append(WeakHarnackRow(
            p0=p0,
            mean=mean,
            inf=inf_u,
            C_emp_minus=mean / (inf_u + f_minus) if inf_u + f_minus > 0 else math.inf,
            C_emp_plus=mean / (inf_u + f_plus) if inf_u + f_plus > 0 else math.inf,
        ))
    return rows


# ---------------------------------------------------------------------------
# oscillation decay

@dataclass
class OscillationReport:
    rows: list                   # (radius, oscillation)
    exponent: float | None
    vacuous: bool

    def to_json_dict(self) -> dict:
        return {"rows": [{"radius": r, "oscillation": o} for r, o in self.rows],
                "exponent": self.exponent, "vacuous": self.vacuous}


def oscillation_decay(v: GridFunction, center: ConePoint,
                      radii: Sequence[float]) -> OscillationReport:
    """Oscillation sup - inf over shrinking metric balls and the fitted
    log-log decay exponent."""
    radii = list(radii)
    if len(radii) < 3:
        raise ValueError("need at least three radii")
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    rows = []
    for r in radii:
        mask = _ball_mask(v.grid, center, r)
        _require_ball_resolved(mask, f"the radius-{r} ball")
        rows.append((float(r), float(np.max(v.values[mask]) - np.min(v.values[mask]))))
    positive = [(r, o) for r, o in rows if o > 0.0]
    if len(positive) < 2:
        return OscillationReport(rows=rows, exponent=None, vacuous=True)
    lr = np.log([r for r, _ in positive])
    lo = np.log([o for _, o in positive])
    exponent = float(np.polyfit(lr, lo, 1)[0])
    return OscillationReport(rows=rows, exponent=exponent, vacuous=False)


# ---------------------------------------------------------------------------
# comparison principle

@dataclass
class ComparisonReport:
    violations: int
    worst_gap: float
    location: tuple | None

    def to_json_dict(self) -> dict:
        return {"violations": self.violations, "worst_gap": self.worst_gap,
                "location": list(self.location) if self.location else None}


def comparison_check(u: GridFunction, v: GridFunction, prob: PDEProblem,
                     tol: float) -> ComparisonReport:
    """Count interior nodes where the subsolution exceeds the supersolution
    beyond tol; the boundary ordering and the forcing floor are preconditions."""
    if u.grid is not v.grid and u.grid.shape != v.grid.shape:
        raise ValueError("fields must share a grid")
    grid = u.grid
    if prob.omega <= 0.0:
        raise ValueError("comparison requires a positive forcing floor omega")
    prob.validate_omega(grid)
    bmask = grid.boundary_mask
    bad = (u.values > v.values + tol) & bmask
    if np.any(bad):
        nodes = np.argwhere(bad)[:20]
        raise ValueError(
            "boundary ordering violated at nodes " + ", ".join(map(str, map(tuple, nodes)))
        )
    gap = u.values - v.values
    interior = ~bmask
    violations = int(np.sum(gap[interior] > tol))
    worst = float(np.max(gap[interior]))
    location = None
    if violations > 0:
        flat = int(np.argmax(np.where(interior, gap, -np.inf)))
        location = tuple(int(i) for i in np.unravel_index(flat, grid.shape))
    return ComparisonReport(violations=violations, worst_gap=worst, location=location)


# ---------------------------------------------------------------------------
# pair-maximization diagnostic

@dataclass
class DoublingDiagnostic:
    alpha: float
    M_alpha: float
    argmax_pair: tuple
    penalty: float
    diagonal_gap: float

    def to_json_dict(self) -> dict:
        return {"alpha": self.alpha, "M_alpha": self.M_alpha,
                "argmax_pair": [list(self.argmax_pair[0]), list(self.argmax_pair[1])],
                "penalty": self.penalty, "diagonal_gap": self.diagonal_gap}


def doubling_diagnostic(z1: GridFunction, z2: GridFunction,
                        alphas: Sequence[float]) -> list:
    """Maximize z1(z) - z2(w) - (alpha/2) d(z, w)^2 over node pairs.

    The search is windowed: a pair can only beat the diagonal supremum D
    when (alpha/2) d^2 < (max z1 - min z2) - D, so pairs beyond twice that
    radius are skipped exactly.  Ties break lexicographically in (z, w).
    """
    if z1.grid.shape != z2.grid.shape:
        raise ValueError("fields must share a grid")
    grid = z1.grid
    pts = grid.log_points
    a1 = z1.values.ravel()
    a2 = z2.values.ravel()
    diag_sup = float(np.max(a1 - a2))
    headroom = max(float(np.max(a1) - np.min(a2)) - diag_sup, 0.0)
    out = []
    m = pts.shape[0]
    chunk = max(1, _CHUNK // max(m, 1))
    for alpha in alphas:
        if alpha <= 0.0:
            raise ValueError("alpha must be positive")
        r2 = 4.0 * 2.0 * headroom / alpha  # (2 sqrt(2 headroom / alpha))^2
        best = -math.inf
        best_pair = (0, 0)
        for start in range(0, m, chunk):
            stop = min(start + chunk, m)
            d2 = np.sum((pts[start:stop, None, :] - pts[None, :, :]) ** 2, axis=2)
            val = a1[start:stop, None] - a2[None, :] - 0.5 * alpha * d2
            val[d2 > r2] = -math.inf
            i, j = np.unravel_index(int(np.argmax(val)), val.shape)
            if val[i, j] > best:
                best = float(val[i, j])
                best_pair = (start + int(i), int(j))
        zi, wi = best_pair
        d = float(np.linalg.norm(pts[zi] - pts[wi]))
        out.append(DoublingDiagnostic(
            alpha=float(alpha),
            M_alpha=best,
            argmax_pair=(
                tuple(int(k) for k in np.unravel_index(zi, grid.shape)),
                tuple(int(k) for k in np.unravel_index(wi, grid.shape)),
            ),
            penalty=0.5 * alpha * d * d,
            diagonal_gap=d,
        ))
    return out


# ---------------------------------------------------------------------------
# weak-form residual

@dataclass(frozen=True)
class CosineBump:
    """Tensor cosine-squared bump with closed-form gradient; compactly
    supported on the box center +- widths."""

    center: np.ndarray
    widths: np.ndarray

    def value(self, pts_axes) -> np.ndarray:
        out = None
        for c, w, q in zip(self.center, self.widths, pts_axes):
            s = (np.asarray(q, dtype=float) - c) / w
            piece = np.where(np.abs(s) < 1.0, np.cos(0.5 * math.pi * s) ** 2, 0.0)
            out = piece if out is None else out * piece
        return out

    def grad(self, pts_axes) -> np.ndarray:
        n = len(self.center)
        base = []
        dbase = []
        for c, w, q in zip(self.center, self.widths, pts_axes):
            s = (np.asarray(q, dtype=float) - c) / w
            inside = np.abs(s) < 1.0
            base.append(np.where(inside, np.cos(0.5 * math.pi * s) ** 2, 0.0))
            dbase.append(np.where(inside,
                                  -0.5 * math.pi / w * np.sin(math.pi * s), 0.0))
        g = []
        for k in range(n):
            piece = dbase[k]
            for l in range(n):
                if l != k:
                    piece = piece * base[l]
            g.append(piece)
        return np.stack(g)


def cosine_bumps(grid: LogGrid, count: int, seed: int = 0,
                 min_width_cells: float = 3.0, snap: bool = True) -> list:
    """Deterministic family of admissible bumps strictly inside the grid.

    With ``snap`` the centers and widths are rounded to node multiples so
    the support edges (where the bump curvature jumps) fall on grid nodes;
    that keeps the quadrature error of bump integrals clean second order,
    also on nested refinements of the same grid.
    """
    rng = np.random.default_rng(seed)
    los = np.array([ax[0] for ax in grid.axes])
    his = np.array([ax[-1] for ax in grid.axes])
    hs = np.array(grid.h)
    bumps = []
    for _ in range(count):
        widths = np.maximum(
            (his - los) * (0.12 + 0.18 * rng.random(grid.n)), min_width_cells * hs
        )
        lo = los + widths + hs
        hi = his - widths - hs
        center = lo + rng.random(grid.n) * np.maximum(hi - lo, 0.0)
        if snap:
            widths = np.maximum(np.round(widths / hs), min_width_cells) * hs
            center = los + np.round((center - los) / hs) * hs
            center = np.minimum(np.maximum(center, los + widths + hs),
                                his - widths - hs)
        bumps.append(CosineBump(center=center, widths=widths))
    return bumps


def _check_support(grid: LogGrid, bump: CosineBump) -> None:
    los = np.array([ax[0] for ax in grid.axes])
    his = np.array([ax[-1] for ax in grid.axes])
    if np.any(bump.center - bump.widths <= los) or np.any(bump.center + bump.widths >= his):
        raise ValueError("test bump support is not compactly inside the grid interior")


def weak_form_residual(u: GridFunction, prob: PDEProblem,
                       test_family: Sequence[CosineBump],
                       eps_reg: float = 0.0) -> tuple:
    """Residual of the scaled weak form over a family of nonnegative tests.

    For each test: int |g|^(p-2) g . grad(psi) - int (-t^p f + (n-p)
    |g|^(p-2) g_a) psi, all against dt/t dx.  The unscaled divergence-form
    variant is evaluated with the analytically weighted test t^p psi and
    reported alongside; the two agree identically in exact arithmetic.
    """
    grid = u.grid
    g = gradient_field(u)
    s2 = np.sum(g * g, axis=0) + eps_reg ** 2
    p, n = prob.p, prob.n
    if p == 2.0:
        coef = np.ones(grid.shape)
    else:
        coef = np.where(s2 > 0.0, s2 ** ((p - 2.0) / 2.0), 0.0)
    flux = coef * g                       # |g|^(p-2) g, shape (n, ...)
    f = prob.f_values(grid)
    t = grid.t_field
    tpf = t ** p * f
    w = quadrature_weights(grid)
    axes_pts = grid.mesh

    rows = []
    worst = 0.0
    for bump in test_family:
        _check_support(grid, bump)
        psi = bump.value(axes_pts)
        gpsi = bump.grad(axes_pts)
        lhs = float(np.sum(w * np.sum(flux * gpsi, axis=0)))
        rhs = float(np.sum(w * (-tpf + (n - p) * flux[0]) * psi))
        residual = lhs - rhs
        # divergence-form variant with the weighted test t^p psi
        psi_w = t ** p * psi
        gpsi_w = t ** p * gpsi
        gpsi_w[0] = gpsi_w[0] + p * t ** p * psi
        lhs2 = float(np.sum(w * t ** (-p) * np.sum(flux * gpsi_w, axis=0)))
        rhs2 = float(np.sum(w * (-f + n * t ** (-p) * flux[0]) * psi_w))
        residual_div = lhs2 - rhs2
        rows.append({
            "center": [float(c) for c in bump.center],
            "widths": [float(wd) for wd in bump.widths],
            "residual": residual,
            "residual_divergence_form": residual_div,
            "form_gap": abs(residual - residual_div),
        })
        worst = max(worst, abs(residual))
    return worst, rows
