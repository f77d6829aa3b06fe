"""Batch front end: config parsing, subcommand dispatch, file and report I/O.

The config is a line-oriented ``section.key = value`` text file.  Exit codes:
0 success, 2 validation error, 3 solver non-convergence, 4 verification
verdict failure.  Reports are byte-deterministic for a fixed config and
seed; wall-clock metadata goes to a separate ``*_meta.json`` file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from conepde import analysis
from conepde.calculus import GridFunction, LogGrid, read_gridfunction, write_gridfunction
from conepde.geometry import ConeDomain, ConePoint, GConditionParams, estimate_g_condition
from conepde.operators import (
    PDEProblem,
    TransformParams,
    constant_field,
    gridfunction_field,
    log_polynomial_field,
    psi_inverse,
    separable_exponential_field,
)
from conepde.regularization import inf_convolution, upper_envelope
from conepde.solver import (
    SolverConfig,
    convergence_study,
    log_t_field,
    make_exact_solution,
    manufactured_problem,
    power_of_t_field,
    quadratic_field,
    solve_by_exhaustion,
    solve_dirichlet,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERDICT = 4

VERIFY_CHECKS = (
    "abp", "hoelder", "harnack", "weakharnack", "oscillation",
    "comparison", "doubling", "weakform",
)


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    entries: dict
    lines: dict
    text: str

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]

    def _fail(self, key: str, message: str):
        line = self.lines.get(key)
        where = f"line {line}: " if line else ""
        raise ConfigError(f"{where}{key}: {message}")

    def get(self, key: str, default=None, required: bool = False) -> str | None:
        if key in self.entries:
            return self.entries[key]
        if required:
            raise ConfigError(f"missing required key {key}")
        return default

    def get_float(self, key: str, default=None, required: bool = False):
        raw = self.get(key, None, required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            self._fail(key, f"expected a number, got {raw!r}")

    def get_int(self, key: str, default=None, required: bool = False):
        raw = self.get(key, None, required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            self._fail(key, f"expected an integer, got {raw!r}")

    def get_floats(self, key: str, default=None):
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            self._fail(key, f"expected a comma list of numbers, got {raw!r}")

    def get_ints(self, key: str, default=None):
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return [int(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            self._fail(key, f"expected a comma list of integers, got {raw!r}")


def parse_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    entries, lines = {}, {}
    with open(path) as fh:
        text = fh.read()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} lacks a section prefix")
        entries[key] = value
        lines[key] = lineno
    return RunConfig(entries=entries, lines=lines, text=text)


# ---------------------------------------------------------------------------
# builders

def build_domain(cfg: RunConfig) -> ConeDomain:
    n = cfg.get_int("domain.n", required=True)
    base_raw = cfg.get("domain.base", required=True)
    lo, hi = [], []
    for axis_spec in base_raw.split(";"):
        parts = [p.strip() for p in axis_spec.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"domain.base: expected 'lo,hi' per axis, got {axis_spec!r}")
        lo.append(float(parts[0]))
        hi.append(float(parts[1]))
    t_min = cfg.get_float("domain.t_min", required=True)
    K0 = cfg.get_float("domain.k0", 2.0)
    d0 = cfg.get_float("domain.d0", 1.0)
    sigma = cfg.get_float("domain.sigma", 0.5)
    try:
        return ConeDomain(n=n, base_lo=np.array(lo), base_hi=np.array(hi),
                          t_min=t_min,
                          g_params=GConditionParams(K0=K0, d0=d0, sigma=sigma))
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from exc


def _parse_field_spec(spec: str, label: str):
    name, _, args = spec.partition(":")
    name = name.strip().lower()
    try:
        if name == "zero":
            return constant_field(0.0)
        if name == "constant":
            return constant_field(float(args))
        if name == "exp":
            vals = [float(v) for v in args.split(",")]
            return separable_exponential_field(vals[0], vals[1], vals[2:])
        if name == "poly":
            terms = [[float(v) for v in term.split(",")] for term in args.split(";")]
            return log_polynomial_field(terms)
        if name == "gridfile":
            return gridfunction_field(read_gridfunction(args.strip()))
        if name == "tpower":
            kappa = float(args)
            def fn(t, xs):
                return np.asarray(t, dtype=float) ** kappa
            return fn
        if name == "logt":
            def fn(t, xs):
                return np.log(np.asarray(t, dtype=float))
            return fn
        if name == "quadratic":
            def fn(t, xs):
                out = np.log(np.asarray(t, dtype=float)) ** 2
                for x in xs:
                    out = out + np.asarray(x, dtype=float) ** 2
                return out
            return fn
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{label}: malformed spec {spec!r} ({exc})") from exc
    raise ConfigError(f"{label}: unknown field kind {name!r}")


def _parse_exact_spec(spec: str, n: int, p: float):
    name, _, args = spec.partition(":")
    name = name.strip().lower()
    if name == "auto":
        return make_exact_solution(p, n)
    if name == "tpower":
        return power_of_t_field(float(args), n)
    if name == "logt":
        return log_t_field(n)
    if name == "quadratic":
        return quadratic_field(n)
    raise ConfigError(f"unknown exact-solution spec {spec!r}")


def build_problem(cfg: RunConfig, domain: ConeDomain) -> PDEProblem:
    p = cfg.get_float("problem.p", required=True)
    f = _parse_field_spec(cfg.get("problem.f", "zero"), "problem.f")
    g = _parse_field_spec(cfg.get("problem.dirichlet", "zero"), "problem.dirichlet")
    omega = cfg.get_float("problem.omega", 0.0)
    try:
        return PDEProblem(p=p, n=domain.n, f=f, dirichlet=g, omega=omega)
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from exc


def build_grid(cfg: RunConfig, domain: ConeDomain) -> LogGrid:
    counts = cfg.get_ints("grid.nodes")
    if counts is None:
        raise ConfigError("missing required key grid.nodes")
    if len(counts) != domain.n:
        raise ConfigError(f"grid.nodes: need {domain.n} counts, got {len(counts)}")
    try:
        return LogGrid.build(domain, counts)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def build_solver_config(cfg: RunConfig) -> SolverConfig:
    from conepde.solver import default_eps_schedule

    kwargs = {}
    tol = cfg.get_float("solver.tol")
    if tol is not None:
        kwargs["tol"] = tol
    max_iter = cfg.get_int("solver.max_iter")
    if max_iter is not None:
        kwargs["max_iter"] = max_iter
    damping = cfg.get_float("solver.damping")
    if damping is not None:
        kwargs["damping"] = damping
    start = cfg.get_float("solver.eps_reg_start", 1e-1)
    floor = cfg.get_float("solver.eps_reg_floor", 1e-6)
    kwargs["eps_reg_schedule"] = default_eps_schedule(start, floor)
    thr = cfg.get_float("solver.drift_upwind_threshold")
    if thr is not None:
        kwargs["drift_upwind_threshold"] = thr
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc


# ---------------------------------------------------------------------------
# output plumbing

def _py(obj):
    if isinstance(obj, dict):
        return {k: _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_py(v) for v in obj.tolist()]
    if isinstance(obj, float) and math.isnan(obj):
        return "nan"
    return obj


def write_json(path: str, payload: dict, config_hash: str) -> None:
    payload = dict(payload)
    payload["config_hash"] = config_hash
    with open(path, "w") as fh:
        json.dump(_py(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path: str, header: list, rows: list, config_hash: str) -> None:
    lines = [f"# config_hash={config_hash}", ",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else f"{v:.17g}" if isinstance(v, float)
                              else str(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_meta(outdir: str, name: str, wall: float, config_hash: str) -> None:
    meta = {
        "config_hash": config_hash,
        "wall_time_seconds": wall,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(outdir, f"{name}_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(cfg: RunConfig) -> str:
    path = cfg.get("output.dir", "out")
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# subcommands

def _cmd_solve(cfg: RunConfig, seed: int) -> int:
    t0 = time.perf_counter()
    domain = build_domain(cfg)
    prob = build_problem(cfg, domain)
    grid = build_grid(cfg, domain)
    scfg = build_solver_config(cfg)
    u, report = solve_dirichlet(prob, grid, scfg)
    outdir = _outdir(cfg)
    write_gridfunction(os.path.join(outdir, "solution.gf"), u)
    write_json(os.path.join(outdir, "solve_report.json"),
               report.to_json_dict(include_timing=False), cfg.config_hash)
    write_meta(outdir, "solve", time.perf_counter() - t0, cfg.config_hash)
    return EXIT_OK if report.converged else EXIT_SOLVER


def _cmd_manufacture(cfg: RunConfig, seed: int) -> int:
    t0 = time.perf_counter()
    domain = build_domain(cfg)
    p = cfg.get_float("problem.p", required=True)
    u_star = _parse_exact_spec(cfg.get("problem.exact", "auto"), domain.n, p)
    prob = manufactured_problem(u_star, p, domain.n)
    grid = build_grid(cfg, domain)
    exact = GridFunction.from_callable(grid, lambda A, XS: u_star.value(A, XS))
    forcing = GridFunction(grid, prob.f_values(grid))
    outdir = _outdir(cfg)
    write_gridfunction(os.path.join(outdir, "exact.gf"), exact)
    write_gridfunction(os.path.join(outdir, "forcing.gf"), forcing)
    write_json(os.path.join(outdir, "manufacture_report.json"),
               {"p": p, "n": domain.n,
                "max_abs_exact": float(np.max(np.abs(exact.values))),
                "max_abs_forcing": float(np.max(np.abs(forcing.values)))},
               cfg.config_hash)
    write_meta(outdir, "manufacture", time.perf_counter() - t0, cfg.config_hash)
    return EXIT_OK


def _cmd_exhaust(cfg: RunConfig, seed: int) -> int:
    t0 = time.perf_counter()
    domain = build_domain(cfg)
    prob = build_problem(cfg, domain)
    scfg = build_solver_config(cfg)
    j_max = cfg.get_int("exhaust.j_max", 4)
    density = cfg.get_float("exhaust.density", 16.0)
    try:
        report = solve_by_exhaustion(prob, domain, j_max, density, scfg)
    except RuntimeError as exc:
        print(f"exhaustion failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    outdir = _outdir(cfg)
    for j, (dom_j, u_j) in enumerate(report.members, start=1):
        write_gridfunction(os.path.join(outdir, f"exhaust_u{j}.gf"), u_j)
    write_csv(os.path.join(outdir, "exhaust_diffs.csv"), ["j", "sup_diff"],
              [(j, g) for j, g in report.diffs], cfg.config_hash)
    write_json(os.path.join(outdir, "exhaust_report.json"),
               {"j_max": j_max, "diffs": [{"j": j, "sup_diff": g} for j, g in report.diffs],
                "monotone": report.monotone}, cfg.config_hash)
    write_meta(outdir, "exhaust", time.perf_counter() - t0, cfg.config_hash)
    return EXIT_OK


def _cmd_convolve(cfg: RunConfig, seed: int) -> int:
    t0 = time.perf_counter()
    direction = cfg.get("convolve.direction", "inf").lower()
    eps = cfg.get_float("convolve.eps", required=True)
    metric = cfg.get("convolve.metric", "log")
    inpath = cfg.get("convolve.input", required=True)
    u = read_gridfunction(inpath)
    outdir = _outdir(cfg)
    if direction == "inf":
        out = inf_convolution(u, eps, metric=metric)
        write_gridfunction(os.path.join(outdir, "convolved.gf"), out)
        payload = {"direction": "inf", "eps": eps, "metric": metric}
    elif direction == "sup":
        env = upper_envelope(u, eps, metric=metric)
        filled = GridFunction(u.grid, np.where(env.mask, env.field.values, 0.0))
        write_gridfunction(os.path.join(outdir, "convolved.gf"), filled)
        write_csv(os.path.join(outdir, "convolved_mask.csv"), ["mask"],
                  [(int(v),) for v in env.mask.ravel()], cfg.config_hash)
        payload = {"direction": "sup", "eps": eps, "metric": metric,
                   "masked_nodes": int(env.mask.sum()),
                   "max_offset": env.max_offset}
    else:
        raise ConfigError(f"convolve.direction must be inf or sup, got {direction!r}")
    write_json(os.path.join(outdir, "convolve_report.json"), payload, cfg.config_hash)
    write_meta(outdir, "convolve", time.perf_counter() - t0, cfg.config_hash)
    return EXIT_OK


def _cmd_convergence_study(cfg: RunConfig, seed: int) -> int:
    t0 = time.perf_counter()
    domain = build_domain(cfg)
    p = cfg.get_float("problem.p", required=True)
    u_star = _parse_exact_spec(cfg.get("problem.exact", "auto"), domain.n, p)
    prob = manufactured_problem(u_star, p, domain.n)
    scfg = build_solver_config(cfg)
    base_counts = cfg.get_ints("grid.nodes")
    if base_counts is None:
        raise ConfigError("missing required key grid.nodes")
    levels = cfg.get_int("study.levels", 3)
    grids = []
    for lev in range(levels):
        counts = [(c - 1) * 2**lev + 1 for c in base_counts]
        grids.append(LogGrid.build(domain, counts))
    rows = convergence_study(prob, u_star, grids, scfg)
    outdir = _outdir(cfg)
    write_csv(os.path.join(outdir, "convergence.csv"), ["h", "max_error", "order"],
              [(r.h, r.error, r.order) for r in rows], cfg.config_hash)
    write_json(os.path.join(outdir, "convergence_report.json"),
               {"rows": [{"h": r.h, "max_error": r.error, "order": r.order}
                         for r in rows]}, cfg.config_hash)
    write_meta(outdir, "convergence-study", time.perf_counter() - t0, cfg.config_hash)
    return EXIT_OK


def _cmd_gcondition(cfg: RunConfig, seed: int) -> int:
    t0 = time.perf_counter()
    domain = build_domain(cfg)
    samples = cfg.get_int("verify.samples", 200)
    params = estimate_g_condition(domain, samples, seed)
    outdir = _outdir(cfg)
    write_json(os.path.join(outdir, "gcondition_report.json"),
               {"K0": params.K0, "d0": params.d0, "sigma_est": params.sigma,
                "samples": samples, "seed": seed,
                "degenerate": params.sigma == 0.0}, cfg.config_hash)
    write_meta(outdir, "gcondition", time.perf_counter() - t0, cfg.config_hash)
    return EXIT_OK


def _get_solution(cfg: RunConfig, prob: PDEProblem, grid: LogGrid,
                  scfg: SolverConfig) -> GridFunction:
    path = cfg.get("verify.solution")
    if path:
        return read_gridfunction(path, domain=grid.domain)
    u, report = _solve_or_raise(prob, grid, scfg)
    return u


def _solve_or_raise(prob, grid, scfg):
    u, report = solve_dirichlet(prob, grid, scfg)
    if not report.converged:
        raise RuntimeError("solver failed to converge")
    return u, report


def _ball_from_config(cfg: RunConfig, grid: LogGrid) -> tuple:
    spec = cfg.get_floats("verify.ball")
    if spec is None:
        # default: centered ball covering a third of the shortest extent
        c = [0.5 * (ax[0] + ax[-1]) for ax in grid.axes]
        extent = min(ax[-1] - ax[0] for ax in grid.axes)
        return ConePoint(t=math.exp(c[0]), x=np.array(c[1:])), extent / 3.0
    if len(spec) != grid.n + 1:
        raise ConfigError(f"verify.ball: need {grid.n + 1} numbers (a, x..., d)")
    return ConePoint(t=math.exp(spec[0]), x=np.array(spec[1:-1])), spec[-1]


def _cmd_verify(check: str, cfg: RunConfig, seed: int) -> int:
    t0 = time.perf_counter()
    domain = build_domain(cfg)
    prob = build_problem(cfg, domain)
    grid = build_grid(cfg, domain)
    scfg = build_solver_config(cfg)
    outdir = _outdir(cfg)
    h2 = max(grid.h) ** 2
    slack = cfg.get_float("verify.slack", 10.0 * h2)
    payload: dict = {"check": check, "seed": seed}
    verdict = True

    if check == "abp":
        u = _get_solution(cfg, prob, grid, scfg)
        one, two = analysis.abp_check(u, prob, domain)
        payload["subsolution"] = one.to_json_dict()
        payload["two_sided"] = two.to_json_dict()
        c_ref = cfg.get_float("verify.c_ref")
        if c_ref is not None:
            verdict = one.holds_with(c_ref, slack)
        elif one.forcing_zero:
            verdict = one.interior_sup_vplus <= one.boundary_sup_vplus + slack
        rows = [(k, v) for k, v in sorted(one.to_json_dict().items())
                if isinstance(v, (int, float)) and v is not None]
        write_csv(os.path.join(outdir, "verify_abp.csv"), ["quantity", "value"],
                  rows, cfg.config_hash)

    elif check == "hoelder":
        u = _get_solution(cfg, prob, grid, scfg)
        rhos = cfg.get_floats("verify.rhos", [cfg.get_float("verify.rho", 0.25)])
        reports = analysis.hoelder_sweep(u, prob, rhos, domain)
        payload["sweep"] = [r.to_json_dict() for r in reports]
        verdict = not any(r.inconsistent for r in reports)
        write_csv(os.path.join(outdir, "verify_hoelder.csv"),
                  ["rho", "norm", "forcing", "ratio"],
                  [(r.rho, r.norm, r.forcing, r.ratio) for r in reports],
                  cfg.config_hash)

    elif check == "harnack":
        u = _get_solution(cfg, prob, grid, scfg)
        center, d = _ball_from_config(cfg, grid)
        rep = analysis.harnack_ratio(u, prob, center, d, domain)
        payload["harnack"] = rep.to_json_dict()
        verdict = math.isfinite(rep.C_emp)
        write_csv(os.path.join(outdir, "verify_harnack.csv"),
                  ["sup", "inf", "forcing", "C_emp"],
                  [(rep.sup, rep.inf, rep.forcing, rep.C_emp)], cfg.config_hash)

    elif check == "weakharnack":
        u = _get_solution(cfg, prob, grid, scfg)
        center, d = _ball_from_config(cfg, grid)
        p0s = cfg.get_floats("verify.p0s", [0.25, 0.5, 0.75, 1.0])
        wcfg = analysis.WeakHarnackConfig(p0_sweep=tuple(p0s), center=center, d=d)
        rows = analysis.weak_harnack_check(u, prob, wcfg, domain)
        payload["rows"] = [r.to_json_dict() for r in rows]
        verdict = any(math.isfinite(r.C_emp_minus) or math.isfinite(r.C_emp_plus)
                      for r in rows)
        write_csv(os.path.join(outdir, "verify_weakharnack.csv"),
                  ["p0", "mean", "inf", "C_emp_minus", "C_emp_plus"],
                  [(r.p0, r.mean, r.inf, r.C_emp_minus, r.C_emp_plus) for r in rows],
                  cfg.config_hash)

    elif check == "oscillation":
        u = _get_solution(cfg, prob, grid, scfg)
        center, d = _ball_from_config(cfg, grid)
        radii = cfg.get_floats("verify.radii", [d, d / 2.0, d / 4.0])
        rep = analysis.oscillation_decay(u, center, radii)
        payload["oscillation"] = rep.to_json_dict()
        verdict = rep.vacuous or (rep.exponent is not None and rep.exponent > 0.0)
        write_csv(os.path.join(outdir, "verify_oscillation.csv"),
                  ["radius", "oscillation"], rep.rows, cfg.config_hash)

    elif check == "comparison":
        margin = cfg.get_float("verify.margin", 0.5)
        f_low = prob.f

        def f_high(t, xs):
            return f_low(t, xs) + margin * np.asarray(t, dtype=float) ** (-prob.p)

        prob_high = PDEProblem(p=prob.p, n=prob.n, f=f_high,
                               dirichlet=prob.dirichlet, omega=prob.omega + margin)
        u_sub, _ = _solve_or_raise(prob_high, grid, scfg)   # larger forcing: subsolution
        v_super, _ = _solve_or_raise(prob, grid, scfg)
        rep = analysis.comparison_check(u_sub, v_super, prob, tol=slack)
        payload["comparison"] = rep.to_json_dict()
        verdict = rep.violations == 0
        write_csv(os.path.join(outdir, "verify_comparison.csv"),
                  ["violations", "worst_gap"],
                  [(rep.violations, rep.worst_gap)], cfg.config_hash)

    elif check == "doubling":
        margin = cfg.get_float("verify.margin", 0.5)
        f_low = prob.f

        def f_high(t, xs):
            return f_low(t, xs) + margin * np.asarray(t, dtype=float) ** (-prob.p)

        prob_high = PDEProblem(p=prob.p, n=prob.n, f=f_high,
                               dirichlet=prob.dirichlet, omega=prob.omega + margin)
        u1, _ = _solve_or_raise(prob_high, grid, scfg)
        u2, _ = _solve_or_raise(prob, grid, scfg)
        bound = max(float(np.max(np.abs(u1.values))),
                    float(np.max(np.abs(u2.values))), 1e-6)
        params = TransformParams.from_bound(bound)
        z1 = GridFunction(grid, np.asarray(psi_inverse(u1.values * 0.5, params)))
        z2 = GridFunction(grid, np.asarray(psi_inverse(u2.values * 0.5, params)))
        alphas = cfg.get_floats("verify.alphas", [1.0, 10.0, 100.0, 1000.0])
        diags = analysis.doubling_diagnostic(z1, z2, alphas)
        payload["diagnostics"] = [d.to_json_dict() for d in diags]
        ms = [d.M_alpha for d in diags]
        verdict = all(b <= a + 1e-12 for a, b in zip(ms, ms[1:]))
        write_csv(os.path.join(outdir, "verify_doubling.csv"),
                  ["alpha", "M_alpha", "penalty", "diagonal_gap"],
                  [(d.alpha, d.M_alpha, d.penalty, d.diagonal_gap) for d in diags],
                  cfg.config_hash)

    elif check == "weakform":
        u = _get_solution(cfg, prob, grid, scfg)
        count = cfg.get_int("verify.bumps", 10)
        bumps = analysis.cosine_bumps(grid, count, seed=seed)
        tol = cfg.get_float("verify.weakform_tol", 10.0 * h2)
        worst, rows = analysis.weak_form_residual(u, prob, bumps)
        payload["max_residual"] = worst
        payload["tolerance"] = tol
        payload["tests"] = rows
        verdict = worst <= tol
        write_csv(os.path.join(outdir, "verify_weakform.csv"),
                  ["residual", "residual_divergence_form", "form_gap"],
                  [(r["residual"], r["residual_divergence_form"], r["form_gap"])
                   for r in rows], cfg.config_hash)

    else:
        raise ConfigError(f"unknown verify check {check!r}")

    payload["verdict"] = bool(verdict)
    write_json(os.path.join(outdir, f"verify_{check}.json"), payload, cfg.config_hash)
    write_meta(outdir, f"verify_{check}", time.perf_counter() - t0, cfg.config_hash)
    return EXIT_OK if verdict else EXIT_VERDICT


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conepde",
        description="Finite-difference laboratory for a degenerate p-Laplace "
                    "equation on a stretched cone.",
    )
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for all randomized checks")
    sub = parser.add_subparsers(dest="command")
    for name in ("solve", "manufacture", "exhaust", "convolve",
                 "convergence-study", "gcondition"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
    pv = sub.add_parser("verify")
    pv.add_argument("check", choices=VERIFY_CHECKS)
    pv.add_argument("--config", required=True)
    return parser


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0,) else 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
        if args.command == "solve":
            return _cmd_solve(cfg, args.seed)
        if args.command == "manufacture":
            return _cmd_manufacture(cfg, args.seed)
        if args.command == "exhaust":
            return _cmd_exhaust(cfg, args.seed)
        if args.command == "convolve":
            return _cmd_convolve(cfg, args.seed)
        if args.command == "convergence-study":
            return _cmd_convergence_study(cfg, args.seed)
        if args.command == "gcondition":
            return _cmd_gcondition(cfg, args.seed)
        if args.command == "verify":
            return _cmd_verify(args.check, cfg, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser.print_usage(sys.stderr)
    return EXIT_CONFIG


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
