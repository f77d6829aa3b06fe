"""Damped Newton solver for the Dirichlet problem in the log chart, with
gradient-regularization continuation, manufactured problems, a convergence
study helper, and the domain-exhaustion existence procedure.

The discrete unknown is the flattened field on the full tensor grid; boundary
rows are identities pinned to the Dirichlet data and interior rows carry the
log-chart residual.  The radial drift term is discretized centrally unless
the mesh Peclet rule requests one-sided differencing, which preserves the
sign structure needed by the discrete comparison checks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conepde.calculus import GridFunction, LogGrid
from conepde.geometry import ConeDomain, exhaustion
from conepde.operators import PDEProblem, divergence_part_field

__all__ = [
    "SolverConfig",
    "StageRecord",
    "SolveReport",
    "AnalyticField",
    "power_of_t_field",
    "log_t_field",
    "quadratic_field",
    "make_exact_solution",
    "solve_dirichlet",
    "manufactured_problem",
    "exact_solution_values",
    "solve_by_exhaustion",
    "ExhaustionReport",
    "convergence_study",
    "StudyRow",
]


def default_eps_schedule(start: float = 1e-1, floor: float = 1e-6) -> tuple:
    """Halving continuation schedule from ``start`` down to exactly ``floor``."""
    vals = []
    e = start
    while e > floor:
        vals.append(e)
        e *= 0.5
    vals.append(floor)
    return tuple(vals)


@dataclass(frozen=True)
class SolverConfig:
    eps_reg_schedule: tuple = field(default_factory=default_eps_schedule)
    tol: float = 1e-9
    max_iter: int = 200
    damping: float = 0.5
    drift_upwind_threshold: float | None = None  # None: upwind iff |n-p| h_a > 2(p-1)

    def __post_init__(self):
        sched = tuple(self.eps_reg_schedule)
        object.__setattr__(self, "eps_reg_schedule", sched)
        if not sched or any(e <= 0.0 for e in sched):
            raise ValueError("eps_reg schedule must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("eps_reg schedule must be strictly decreasing")
        if not self.tol > 0.0:
            raise ValueError("tolerance must be positive")
        if not (0.0 < self.damping < 1.0):
            raise ValueError("damping factor must lie in (0, 1)")


@dataclass(frozen=True)
class StageRecord:
    p: float
    eps_reg: float
    iterations: int
    residual_norm: float


@dataclass
class SolveReport:
    stages: list
    converged: bool
    wall_time: float
    drift: str
    final_residual: float
    final_eps_reg: float

    def to_json_dict(self, include_timing: bool = False) -> dict:
        d = {
            "stages": [
                {"p": s.p, "eps_reg": s.eps_reg, "iterations": s.iterations,
                 "residual_norm": s.residual_norm}
                for s in self.stages
            ],
            "converged": self.converged,
            "drift": self.drift,
            "final_residual": self.final_residual,
            "final_eps_reg": self.final_eps_reg,
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


# ---------------------------------------------------------------------------
# analytic fields and manufactured problems

@dataclass(frozen=True)
class AnalyticField:
    """Closed-form field in the log chart with exact derivatives.

    ``value(a, xs)`` maps meshgrid arrays to values; ``grad`` and ``hess``
    return stacked arrays of shape (n, ...) and (n, n, ...).
    """

    n: int
    value: Callable
    grad: Callable
    hess: Callable

    def as_txy(self) -> Callable:
        """The field as a sampler in (t, x) coordinates."""
        def fn(t, xs):
            return self.value(np.log(np.asarray(t, dtype=float)), xs)
        return fn


def power_of_t_field(kappa: float, n: int) -> AnalyticField:
    """u = t^kappa, i.e. e^(kappa a) in the log chart."""
    def value(a, xs):
        return np.exp(kappa * np.asarray(a, dtype=float))

    def grad(a, xs):
        a = np.asarray(a, dtype=float)
        g = np.zeros((n,) + a.shape)
        g[0] = kappa * np.exp(kappa * a)
        return g

    def hess(a, xs):
        a = np.asarray(a, dtype=float)
        H = np.zeros((n, n) + a.shape)
        H[0, 0] = kappa**2 * np.exp(kappa * a)
        return H

    return AnalyticField(n=n, value=value, grad=grad, hess=hess)


def log_t_field(n: int) -> AnalyticField:
    """u = ln t, the radial-coordinate field itself."""
    def value(a, xs):
        return np.asarray(a, dtype=float).copy()

    def grad(a, xs):
        a = np.asarray(a, dtype=float)
        g = np.zeros((n,) + a.shape)
        g[0] = 1.0
        return g

    def hess(a, xs):
        a = np.asarray(a, dtype=float)
        return np.zeros((n, n) + a.shape)

    return AnalyticField(n=n, value=value, grad=grad, hess=hess)


def quadratic_field(n: int, coef_a: float = 1.0, coef_x: float = 1.0) -> AnalyticField:
    """u = coef_a a^2 + coef_x sum x_i^2 in the log chart."""
    def value(a, xs):
        a = np.asarray(a, dtype=float)
        out = coef_a * a**2
        for x in xs:
            out = out + coef_x * np.asarray(x, dtype=float) ** 2
        return out

    def grad(a, xs):
        a = np.asarray(a, dtype=float)
        g = np.zeros((n,) + a.shape)
        g[0] = 2.0 * coef_a * a
        for k, x in enumerate(xs):
            g[1 + k] = 2.0 * coef_x * np.asarray(x, dtype=float)
        return g

    def hess(a, xs):
        a = np.asarray(a, dtype=float)
        H = np.zeros((n, n) + a.shape)
        H[0, 0] = 2.0 * coef_a
        for k in range(n - 1):
            H[1 + k, 1 + k] = 2.0 * coef_x
        return H

    return AnalyticField(n=n, value=value, grad=grad, hess=hess)


def make_exact_solution(p: float, n: int) -> AnalyticField:
    """A forcing-free solution of the operator: t^((p-n)/(p-1)), or ln t
    when p == n (the drift coefficient vanishes there)."""
    if p == n:
        return log_t_field(n)
    return power_of_t_field((p - n) / (p - 1.0), n)


def _divergence_part_from_derivs(g: np.ndarray, H: np.ndarray, p: float,
                                 n: int) -> np.ndarray:
    """Vectorized |g|^(p-2) (tr(Q H) + (n-p) g_a) on explicit derivatives."""
    s2 = np.sum(g * g, axis=0)
    trH = np.einsum("kk...->...", H)
    if p == 2.0:
        return trH + (n - p) * g[0]
    gHg = np.einsum("k...,kl...,l...->...", g, H, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(s2 > 0.0, s2 ** ((p - 2.0) / 2.0), 0.0)
        aniso = np.where(s2 > 0.0, gHg / np.where(s2 > 0.0, s2, 1.0), 0.0)
    return coef * (trH + (p - 2.0) * aniso + (n - p) * g[0])


def manufactured_problem(u_star: AnalyticField, p: float, n: int) -> PDEProblem:
    """Problem whose exact solution is ``u_star``: the forcing is the analytic
    strong-form residual of the field and the Dirichlet data is its trace."""
    def forcing(t, xs):
        t = np.asarray(t, dtype=float)
        a = np.log(t)
        g = u_star.grad(a, xs)
        H = u_star.hess(a, xs)
        return _divergence_part_from_derivs(g, H, p, n) * t ** (-p)

    return PDEProblem(p=p, n=n, f=forcing, dirichlet=u_star.as_txy(), omega=0.0)


def exact_solution_values(u_star: AnalyticField, grid: LogGrid) -> GridFunction:
    return GridFunction.from_callable(grid, lambda A, XS: u_star.value(A, XS))


# ---------------------------------------------------------------------------
# discretization

def _drift_mode(p: float, n: int, h_a: float, threshold: float | None) -> str:
    thr = 2.0 * (p - 1.0) if threshold is None else threshold
    if abs(n - p) * h_a <= thr or n == p:
        return "central"
    return "upwind-forward" if n > p else "upwind-backward"


def _interior_shift(values: np.ndarray, offset) -> np.ndarray:
    sl = tuple(
        slice(1 + o, s - 1 + o if s - 1 + o != 0 else None)
        for o, s in zip(offset, values.shape)
    )
    return values[sl]


def _assemble_jacobian(values: np.ndarray, grid: LogGrid, p: float, n: int,
                       eps_reg: float, drift: str) -> sp.csr_matrix:
    """Jacobian of the log-chart residual w.r.t. all node values; boundary
    rows are identities."""
    nd = grid.n
    shape = grid.shape
    h = grid.h
    ntot = int(np.prod(shape))
    zero = (0,) * nd

    def e(k, s=1):
        off = [0] * nd
        off[k] = s
        return tuple(off)

    center = _interior_shift(values, zero)
    g = [
        (_interior_shift(values, e(k, +1)) - _interior_shift(values, e(k, -1)))
        / (2.0 * h[k])
        for k in range(nd)
    ]
    D2 = [
        (_interior_shift(values, e(k, +1)) - 2.0 * center
         + _interior_shift(values, e(k, -1))) / h[k] ** 2
        for k in range(nd)
    ]

    def cross(k, l):
        okl = [0] * nd
        okl[k], okl[l] = 1, 1
        okml = [0] * nd
        okml[k], okml[l] = 1, -1
        return (
            _interior_shift(values, tuple(okl))
            - _interior_shift(values, tuple(okml))
            - _interior_shift(values, tuple(-o for o in okml))
            + _interior_shift(values, tuple(-o for o in okl))
        ) / (4.0 * h[k] * h[l])

    Dx = {(k, l): cross(k, l) for k in range(nd) for l in range(k + 1, nd)}

    if drift == "central":
        drift_val = g[0]
    elif drift == "upwind-forward":
        drift_val = (_interior_shift(values, e(0, +1)) - center) / h[0]
    else:
        drift_val = (center - _interior_shift(values, e(0, -1))) / h[0]

    s2 = sum(gk * gk for gk in g) + eps_reg**2
    trH = sum(D2)
    Hg = [
        D2[k] * g[k]
        + sum(Dx[(min(k, l), max(k, l))] * g[l] for l in range(nd) if l != k)
        for k in range(nd)
    ]
    gHg = sum(Hg[k] * g[k] for k in range(nd))

    if p == 2.0:
        coef = np.ones_like(s2)
        inv = np.zeros_like(s2)
    else:
        coef = s2 ** ((p - 2.0) / 2.0)
        inv = coef / s2

    A_kk = [coef + (p - 2.0) * inv * g[k] ** 2 for k in range(nd)]
    A_kl = {kl: 2.0 * (p - 2.0) * inv * g[kl[0]] * g[kl[1]] for kl in Dx}
    B = (n - p) * coef
    C = [
        (p - 2.0) * inv * (
            g[k] * trH
            + (p - 4.0) * np.where(s2 > 0, g[k] / s2, 0.0) * gHg
            + 2.0 * Hg[k]
            + (n - p) * g[k] * drift_val
        )
        for k in range(nd)
    ]

    coeffs: dict = {}

    def add(offset, arr):
        if offset in coeffs:
            coeffs[offset] = coeffs[offset] + arr
        else:
            coeffs[offset] = arr.copy() if isinstance(arr, np.ndarray) else arr

    for k in range(nd):
        add(e(k, +1), A_kk[k] / h[k] ** 2 + C[k] / (2.0 * h[k]))
        add(e(k, -1), A_kk[k] / h[k] ** 2 - C[k] / (2.0 * h[k]))
        add(zero, -2.0 * A_kk[k] / h[k] ** 2)
    for (k, l), arr in A_kl.items():
        q = 1.0 / (4.0 * h[k] * h[l])
        for sk in (+1, -1):
            for sl_ in (+1, -1):
                off = [0] * nd
                off[k], off[l] = sk, sl_
                add(tuple(off), (sk * sl_ * q) * arr)
    if drift == "central":
        add(e(0, +1), B / (2.0 * h[0]))
        add(e(0, -1), -B / (2.0 * h[0]))
    elif drift == "upwind-forward":
        add(e(0, +1), B / h[0])
        add(zero, -B / h[0])
    else:
        add(e(0, -1), -B / h[0])
        add(zero, B / h[0])

    interior_idx = np.meshgrid(*[np.arange(1, s - 1) for s in shape], indexing="ij")
    rows_int = np.ravel_multi_index([ix.ravel() for ix in interior_idx], shape)

    rows, cols, data = [], [], []
    for offset, arr in coeffs.items():
        neigh = [ix + o for ix, o in zip(interior_idx, offset)]
        cols_off = np.ravel_multi_index([ix.ravel() for ix in neigh], shape)
        rows.append(rows_int)
        cols.append(cols_off)
        data.append(np.broadcast_to(arr, interior_idx[0].shape).ravel())

    bmask = grid.boundary_mask.ravel()
    bidx = np.nonzero(bmask)[0]
    rows.append(bidx)
    cols.append(bidx)
    data.append(np.ones(bidx.size))

    J = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ntot, ntot),
    )
    return J.tocsr()


def _interior_residual(values: np.ndarray, grid: LogGrid, p: float, n: int,
                       F_log: np.ndarray, eps_reg: float, drift: str) -> np.ndarray:
    u = GridFunction(grid, values, check_finite=False)
    res = divergence_part_field(u, p, n, eps_reg, drift) - F_log
    res[grid.boundary_mask] = 0.0
    return res


def _newton_stage(values: np.ndarray, grid: LogGrid, p: float, n: int,
                  F_log: np.ndarray, eps_reg: float, drift: str,
                  cfg: SolverConfig) -> tuple:
    """Damped Newton at one continuation stage; returns (values, iters, norm)."""
    res = _interior_residual(values, grid, p, n, F_log, eps_reg, drift)
    if np.any(np.isnan(res)):
        raise FloatingPointError("NaN in discrete residual")
    norm = float(np.max(np.abs(res)))
    iters = 0
    while norm > cfg.tol and iters < cfg.max_iter:
        J = _assemble_jacobian(values, grid, p, n, eps_reg, drift)
        du = spla.spsolve(J, -res.ravel()).reshape(grid.shape)
        lam = 1.0
        accepted = False
        while lam >= 1e-12:
            trial = values + lam * du
            tres = _interior_residual(trial, grid, p, n, F_log, eps_reg, drift)
            if np.any(np.isnan(tres)):
                raise FloatingPointError("NaN in discrete residual")
            tnorm = float(np.max(np.abs(tres)))
            if tnorm <= (1.0 - 1e-4 * lam) * norm or tnorm <= cfg.tol:
                accepted = True
                break
            lam *= cfg.damping
        iters += 1
        if not accepted:
            break
        values, res, norm = trial, tres, tnorm
    return values, iters, norm


def solve_dirichlet(prob: PDEProblem, grid: LogGrid,
                    cfg: SolverConfig | None = None) -> tuple:
    """Solve the Dirichlet problem on the grid; returns (GridFunction, SolveReport).

    Boundary values (including the artificial truncation face) are pinned to
    the problem's Dirichlet sampler.  The solve is deterministic; failure to
    converge is reported, never raised, except for NaN residuals.
    """
    cfg = cfg or SolverConfig()
    t_start = time.perf_counter()
    p, n = prob.p, prob.n
    F_log = prob.f_values(grid) * np.exp(grid.mesh[0] * p)
    drift = _drift_mode(p, n, grid.h[0], cfg.drift_upwind_threshold)

    values = np.zeros(grid.shape)
    bmask = grid.boundary_mask
    values[bmask] = prob.dirichlet_values(grid)[bmask]

    stages: list = []
    if p > 2.0:
        # linearized presolve: unit diffusion with the target drift strength
        values, _, _ = _newton_stage(values, grid, 2.0, 2 + (n - p), F_log,
                                     cfg.eps_reg_schedule[0], drift, cfg)

    p_path = [p] if p <= 3.0 else [*np.arange(3.0, p, 0.5), p]
    norm = math.inf
    insertions = 0
    for p_cur in p_path:
        queue = [cfg.eps_reg_schedule[-1]] if p_cur == 2.0 else list(cfg.eps_reg_schedule)
        prev_eps = None
        i = 0
        while i < len(queue):
            eps = queue[i]
            values, iters, norm = _newton_stage(values, grid, p_cur, n, F_log,
                                                eps, drift, cfg)
            stages.append(StageRecord(p=p_cur, eps_reg=eps, iterations=iters,
                                      residual_norm=norm))
            if norm > cfg.tol:
                # stalled stage: refine the continuation by retrying through
                # the geometric midpoint of the last good step
                ref = prev_eps if prev_eps is not None else 4.0 * eps
                if insertions < 24 and ref / eps > 1.05:
                    queue.insert(i, math.sqrt(ref * eps))
                    insertions += 1
                    continue
            prev_eps = eps
            i += 1

    report = SolveReport(
        stages=stages,
        converged=bool(norm <= cfg.tol),
        wall_time=time.perf_counter() - t_start,
        drift=drift,
        final_residual=norm,
        final_eps_reg=cfg.eps_reg_schedule[-1],
    )
    return GridFunction(grid, values), report


# ---------------------------------------------------------------------------
# exhaustion and convergence studies

@dataclass
class ExhaustionReport:
    members: list                 # (ConeDomain, GridFunction) per stage
    diffs: list                   # (j, sup_{H_{j-1}} |u_j - u_{j-1}|)
    monotone: bool
    solve_reports: list


def _interpolator(u: GridFunction):
    from scipy.interpolate import RegularGridInterpolator

    method = "cubic" if all(s >= 4 for s in u.grid.shape) else "linear"
    return RegularGridInterpolator(u.grid.axes, u.values, method=method)


def solve_by_exhaustion(prob: PDEProblem, domain: ConeDomain, j_max: int,
                        grid_density: float,
                        cfg: SolverConfig | None = None) -> ExhaustionReport:
    """Zero-boundary solves on the nested subdomain sequence.

    The Cauchy record holds the sup differences of consecutive solutions on
    the previous (smaller) member, each evaluated by interpolating the newer
    solution onto the older grid.  A solver failure propagates with the
    stage index.
    """
    if j_max < 2:
        raise ValueError("need at least two exhaustion stages")
    members, reports = [], []
    for j in range(1, j_max + 1):
        dom_j = exhaustion(domain, j)
        counts = [
            max(5, int(round((dom_j.a_max - dom_j.a_min) * grid_density)) + 1)
        ] + [
            max(5, int(round((dom_j.base_hi[k] - dom_j.base_lo[k]) * grid_density)) + 1)
            for k in range(domain.n - 1)
        ]
        grid_j = LogGrid.build(dom_j, counts)
        prob_j = PDEProblem(p=prob.p, n=prob.n, f=prob.f,
                            dirichlet=lambda t, xs: np.zeros_like(np.asarray(t)),
                            omega=prob.omega)
        u_j, rep = solve_dirichlet(prob_j, grid_j, cfg)
        if not rep.converged:
            raise RuntimeError(f"exhaustion stage j={j} failed to converge")
        members.append((dom_j, u_j))
        reports.append(rep)

    diffs = []
    for j in range(2, j_max + 1):
        _, u_prev = members[j - 2]
        _, u_cur = members[j - 1]
        interp = _interpolator(u_cur)
        pts = u_prev.grid.log_points
        gap = float(np.max(np.abs(interp(pts) - u_prev.values.ravel())))
        diffs.append((j, gap))
    gaps = [g for _, g in diffs]
    monotone = all(b <= a for a, b in zip(gaps, gaps[1:]))
    return ExhaustionReport(members=members, diffs=diffs, monotone=monotone,
                            solve_reports=reports)


@dataclass(frozen=True)
class StudyRow:
    h: float
    error: float
    order: float | None


def convergence_study(prob: PDEProblem, u_star: AnalyticField,
                      grids: Sequence[LogGrid],
                      cfg: SolverConfig | None = None) -> list:
    """Max-norm errors against the exact field over a grid sequence; the
    observed order on each refined row is log2(e_coarse / e_fine)."""
    rows = []
    prev_err = None
    for grid in grids:
        u, rep = solve_dirichlet(prob, grid, cfg)
        exact = exact_solution_values(u_star, grid)
        err = float(np.max(np.abs(u.values - exact.values)))
        if prev_err is None:
            order = None
        elif err > 0.0 and prev_err > 0.0:
            order = math.log2(prev_err / err)
        else:
            order = math.inf
        rows.append(StudyRow(h=max(grid.h), error=err, order=order))
        prev_err = err
    return rows
