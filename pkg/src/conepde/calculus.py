"""Discrete calculus in the flattened chart (a, x), a = ln t.

The cone gradient (t d/dt, d/dx) and cone Hessian coincide with the plain
gradient and Hessian of the flattened field u(a, x) = u(e^a, x), and the
measure dt/t dx is Lebesgue in (a, x).  Everything here is therefore
ordinary second-order finite differences and trapezoidal quadrature on a
tensor grid; the t -> 0 degeneracy never enters a stencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Callable, NamedTuple

import numpy as np

from conepde.geometry import ConeDomain, ConePoint

__all__ = [
    "LogGrid",
    "GridFunction",
    "NormParams",
    "NormReport",
    "first_diff",
    "second_diff",
    "b_gradient",
    "b_hessian",
    "gradient_field",
    "hessian_field",
    "cone_integral",
    "weighted_Lp_norm",
    "weighted_sobolev_norm",
    "hoelder_norm",
    "write_gridfunction",
    "read_gridfunction",
]

HOELDER_NODE_CAP = 5000


@dataclass(frozen=True, eq=False)
class LogGrid:
    """Uniform tensor grid on [a_min, a_max] x base in the log chart."""

    domain: ConeDomain
    a: np.ndarray
    xs: tuple

    def __post_init__(self):
        for nodes in (self.a, *self.xs):
            if nodes.size < 3:
                raise ValueError("need at least 3 nodes per axis")
            steps = np.diff(nodes)
            if not np.allclose(steps, steps[0], rtol=1e-12, atol=1e-15):
                raise ValueError("grid axes must be uniform")

    @classmethod
    def build(cls, domain: ConeDomain, counts) -> "LogGrid":
        counts = tuple(int(c) for c in counts)
        if len(counts) != domain.n:
            raise ValueError(f"need {domain.n} node counts, got {len(counts)}")
        a = np.linspace(domain.a_min, domain.a_max, counts[0])
        xs = tuple(
            np.linspace(domain.base_lo[k], domain.base_hi[k], counts[1 + k])
            for k in range(domain.n - 1)
        )
        return cls(domain=domain, a=a, xs=xs)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def axes(self) -> tuple:
        return (self.a, *self.xs)

    @property
    def shape(self) -> tuple:
        return tuple(ax.size for ax in self.axes)

    @property
    def h(self) -> tuple:
        return tuple(float(ax[1] - ax[0]) for ax in self.axes)

    @cached_property
    def mesh(self) -> tuple:
        """Meshgrid arrays (A, X1, ...) of shape ``shape`` (ij indexing)."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def t_field(self) -> np.ndarray:
        return np.exp(self.mesh[0])

    @cached_property
    def log_points(self) -> np.ndarray:
        """All node coordinates, shape (N, n), row-major with the a-axis slowest."""
        return np.stack([m.ravel() for m in self.mesh], axis=1)

    def node_coords(self, node) -> np.ndarray:
        node = tuple(node)
        return np.array([ax[i] for ax, i in zip(self.axes, node)])

    def node_point(self, node) -> ConePoint:
        c = self.node_coords(node)
        return ConePoint(t=math.exp(c[0]), x=c[1:])

    def is_interior(self, node) -> bool:
        return all(0 < i < s - 1 for i, s in zip(node, self.shape))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """True at nodes on any grid face (including the artificial one)."""
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.n):
            sl = [slice(None)] * self.n
            sl[axis] = 0
            mask[tuple(sl)] = True
            sl[axis] = -1
            mask[tuple(sl)] = True
        return mask

    @cached_property
    def analytic_boundary_mask(self) -> np.ndarray:
        """True at nodes on faces of the analytic boundary.

        The face a = a_min is the artificial truncation and is excluded
        unless the domain declares its bottom a true boundary.
        """
        mask = np.zeros(self.shape, dtype=bool)
        sl = [slice(None)] * self.n
        sl[0] = -1
        mask[tuple(sl)] = True
        if self.domain.bottom_is_boundary:
            sl[0] = 0
            mask[tuple(sl)] = True
        for axis in range(1, self.n):
            sl = [slice(None)] * self.n
            sl[axis] = 0
            mask[tuple(sl)] = True
            sl[axis] = -1
            mask[tuple(sl)] = True
        return mask

    @cached_property
    def artificial_bottom_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if not self.domain.bottom_is_boundary:
            sl = [slice(None)] * self.n
            sl[0] = 0
            mask[tuple(sl)] = True
        return mask

    @cached_property
    def boundary_distance_field(self) -> np.ndarray:
        """Distance of each node to the analytic boundary, in the cone metric."""
        A = self.mesh[0]
        d = self.domain.a_max - A
        for k in range(self.n - 1):
            X = self.mesh[1 + k]
            d = np.minimum(d, X - self.domain.base_lo[k])
            d = np.minimum(d, self.domain.base_hi[k] - X)
        if self.domain.bottom_is_boundary:
            d = np.minimum(d, A - self.domain.a_min)
        return np.maximum(d, 0.0)


class GridFunction:
    """Scalar field sampled on a LogGrid, values row-major with a slowest."""

    def __init__(self, grid: LogGrid, values: np.ndarray, check_finite: bool = True):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {grid.shape}")
        if check_finite and not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: LogGrid) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_callable(cls, grid: LogGrid, fn: Callable) -> "GridFunction":
        """Sample fn(A, (X1, ...)) given meshgrid arrays in the log chart."""
        A = grid.mesh[0]
        vals = np.broadcast_to(fn(A, grid.mesh[1:]), grid.shape).astype(float)
        return cls(grid, vals.copy())

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy(), check_finite=False)


# ---------------------------------------------------------------------------
# stencils

def first_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second-order first derivative: central inside, one-sided at the faces."""
    return np.gradient(values, h, axis=axis, edge_order=2)


def second_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second-order pure second derivative along one axis."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    if v.shape[0] >= 4:
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def gradient_field(u: GridFunction) -> np.ndarray:
    """Discrete cone gradient at every node, shape (n, *grid.shape).

    Component 0 is the radial derivative t du/dt = du/da.  Face nodes use
    one-sided second-order stencils; ``grid.boundary_mask`` flags them.
    """
    h = u.grid.h
    return np.stack([first_diff(u.values, k, h[k]) for k in range(u.grid.n)])


def hessian_field(u: GridFunction) -> np.ndarray:
    """Discrete cone Hessian at every node, shape (n, n, *grid.shape).

    Cross derivatives are symmetrized compositions of first-difference
    operators, so the matrix is symmetric by construction.
    """
    n = u.grid.n
    h = u.grid.h
    out = np.empty((n, n) + u.grid.shape)
    firsts = [first_diff(u.values, k, h[k]) for k in range(n)]
    for k in range(n):
        out[k, k] = second_diff(u.values, k, h[k])
        for l in range(k + 1, n):
            cross = 0.5 * (
                first_diff(firsts[l], k, h[k]) + first_diff(firsts[k], l, h[l])
            )
            out[k, l] = cross
            out[l, k] = cross
    return out


def _line(values: np.ndarray, node, axis: int) -> tuple:
    idx = list(node)
    idx[axis] = slice(None)
    return values[tuple(idx)], node[axis]


def _first_diff_at(values: np.ndarray, node, axis: int, h: float) -> float:
    line, i = _line(values, node, axis)
    m = line.size
    if 0 < i < m - 1:
        return (line[i + 1] - line[i - 1]) / (2.0 * h)
    if i == 0:
        return (-3.0 * line[0] + 4.0 * line[1] - line[2]) / (2.0 * h)
    return (3.0 * line[-1] - 4.0 * line[-2] + line[-3]) / (2.0 * h)


def _second_diff_at(values: np.ndarray, node, axis: int, h: float) -> float:
    line, i = _line(values, node, axis)
    m = line.size
    if 0 < i < m - 1:
        return (line[i + 1] - 2.0 * line[i] + line[i - 1]) / h**2
    if m < 4:
        j = 1 if i == 0 else m - 2
        return (line[j + 1] - 2.0 * line[j] + line[j - 1]) / h**2
    if i == 0:
        return (2.0 * line[0] - 5.0 * line[1] + 4.0 * line[2] - line[3]) / h**2
    return (2.0 * line[-1] - 5.0 * line[-2] + 4.0 * line[-3] - line[-4]) / h**2


def _cross_diff_at(values: np.ndarray, node, ax1: int, ax2: int, h1: float, h2: float) -> float:
    # D1(D2 u) evaluated by applying the ax1 first-difference stencil to
    # pointwise ax2 first differences (mirrors the field composition).
    shape = values.shape
    i = node[ax1]
    m = shape[ax1]

    def d2_at(j):
        nd = list(node)
        nd[ax1] = j
        return _first_diff_at(values, tuple(nd), ax2, h2)

    if 0 < i < m - 1:
        return (d2_at(i + 1) - d2_at(i - 1)) / (2.0 * h1)
    if i == 0:
        return (-3.0 * d2_at(0) + 4.0 * d2_at(1) - d2_at(2)) / (2.0 * h1)
    return (3.0 * d2_at(m - 1) - 4.0 * d2_at(m - 2) + d2_at(m - 3)) / (2.0 * h1)


def b_gradient(u: GridFunction, node) -> np.ndarray:
    """Discrete cone gradient at one node (length n, radial component first)."""
    node = tuple(node)
    h = u.grid.h
    return np.array(
        [_first_diff_at(u.values, node, k, h[k]) for k in range(u.grid.n)]
    )


def b_hessian(u: GridFunction, node) -> np.ndarray:
    """Discrete cone Hessian at one node; symmetric by construction."""
    node = tuple(node)
    n = u.grid.n
    h = u.grid.h
    H = np.empty((n, n))
    for k in range(n):
        H[k, k] = _second_diff_at(u.values, node, k, h[k])
        for l in range(k + 1, n):
            c = 0.5 * (
                _cross_diff_at(u.values, node, k, l, h[k], h[l])
                + _cross_diff_at(u.values, node, l, k, h[l], h[k])
            )
            H[k, l] = c
            H[l, k] = c
    return H


# ---------------------------------------------------------------------------
# quadrature and norms

def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    h = nodes[1] - nodes[0]
    w = np.full(nodes.size, h)
    w[0] = w[-1] = 0.5 * h
    return w


def quadrature_weights(grid: LogGrid) -> np.ndarray:
    """Tensor trapezoid weights for the measure dt/t dx (Lebesgue in (a, x))."""
    w = _trapezoid_weights(grid.a)
    out = w
    for xn in grid.xs:
        out = np.multiply.outer(out, _trapezoid_weights(xn))
    return out


def cone_integral(g: GridFunction) -> float:
    """Trapezoidal approximation of the integral of g against dt/t dx."""
    return float(np.sum(quadrature_weights(g.grid) * g.values))


def _masked_integral(grid: LogGrid, integrand: np.ndarray) -> float:
    return float(np.sum(quadrature_weights(grid) * integrand))


@dataclass(frozen=True)
class NormParams:
    """Weight data for the weighted Lebesgue/Sobolev norms and the
    Hoelder exponent rho."""

    m: int = 0
    gamma: float = 0.0
    p: float = 2.0
    rho: float = 1.0

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("derivative order m must be >= 0")
        if self.p < 1.0:
            raise ValueError("integrability exponent p must be >= 1")
        if not (0.0 < self.rho <= 1.0):
            raise ValueError("Hoelder exponent rho must lie in (0, 1]")


class NormReport(NamedTuple):
    value: float
    weight_exponent: float
    diverges: bool

    def __float__(self) -> float:
        return self.value


def _weight_factor(grid: LogGrid) -> np.ndarray:
    """The factor t (1 - t) dist(x, dX) at every node (zero on its faces)."""
    t = grid.t_field
    f = t * (1.0 - t)
    for k in range(grid.n - 1):
        X = grid.mesh[1 + k]
        f = f * np.minimum(X - grid.domain.base_lo[k], grid.domain.base_hi[k] - X)
    return np.maximum(f, 0.0)


def weighted_Lp_norm(u: GridFunction, params: NormParams) -> NormReport:
    """Weighted L^p norm with weight (t (1-t) dist(x, dX))^(n/p - gamma).

    The truncation at t_min keeps the integral finite on the grid; the
    ``diverges`` flag records that the untruncated integral would be
    infinite, which happens when the weight exponent times p is <= 0 while
    u does not vanish on the deepest radial slab.
    """
    grid = u.grid
    e = grid.n / params.p - params.gamma
    factor = _weight_factor(grid)
    zero = factor == 0.0
    with np.errstate(divide="ignore"):
        w = np.where(zero, 1.0, factor) ** e
    if e > 0:
        w = np.where(zero, 0.0, w)
    elif e < 0:
        w = np.where(zero, np.inf, w)
    integrand = np.abs(w * u.values) ** params.p
    # inf * 0 at a vanishing-u boundary node is the honest limit 0
    integrand = np.where(np.isinf(w) & (u.values == 0.0), 0.0, integrand)
    value = _masked_integral(grid, integrand) ** (1.0 / params.p)
    diverges = (e * params.p <= 0.0) and bool(np.max(np.abs(u.values[0])) > 0.0)
    return NormReport(value=value, weight_exponent=e, diverges=diverges)


def _derivative_field(u: GridFunction, alpha: int, beta: tuple) -> np.ndarray:
    """(t d/dt)^alpha d_x^beta u via the log-chart stencils."""
    h = u.grid.h
    vals = u.values
    if alpha == 2:
        vals = second_diff(vals, 0, h[0])
    elif alpha == 1:
        vals = first_diff(vals, 0, h[0])
    for k, bk in enumerate(beta):
        if bk == 2:
            vals = second_diff(vals, 1 + k, h[1 + k])
        elif bk == 1:
            vals = first_diff(vals, 1 + k, h[1 + k])
    return vals


def weighted_sobolev_norm(u: GridFunction, params: NormParams) -> NormReport:
    """Weighted Sobolev norm summing all (t d/dt)^alpha d_x^beta u with
    alpha + |beta| <= m, each measured in the weighted L^p norm."""
    if params.m > 2:
        raise ValueError("derivative orders m > 2 are unsupported")
    grid = u.grid
    total = 0.0
    diverges = False
    exponent = grid.n / params.p - params.gamma
    for alpha in range(params.m + 1):
        for beta in product(range(params.m + 1), repeat=grid.n - 1):
            if alpha + sum(beta) > params.m:
                continue
            deriv = GridFunction(grid, _derivative_field(u, alpha, beta),
                                 check_finite=False)
            rep = weighted_Lp_norm(deriv, params)
            total += rep.value ** params.p
            diverges = diverges or rep.diverges
    return NormReport(value=total ** (1.0 / params.p), weight_exponent=exponent,
                      diverges=diverges)


def _subsample_flat(n_total: int, cap: int) -> np.ndarray:
    stride = max(1, int(math.ceil(n_total / cap)))
    return np.arange(0, n_total, stride)


def hoelder_norm(u: GridFunction, rho: float, node_cap: int = HOELDER_NODE_CAP,
                 with_detail: bool = False):
    """sup |u| plus the rho-Hoelder seminorm in the cone metric.

    The seminorm maximizes |u(z) - u(w)| / d(z, w)^rho over node pairs;
    when the grid exceeds ``node_cap`` nodes the pair set is restricted to
    a deterministic stride subsample.
    """
    if not (0.0 < rho <= 1.0):
        raise ValueError("rho must lie in (0, 1]")
    sup = float(np.max(np.abs(u.values)))
    pts = u.grid.log_points
    vals = u.values.ravel()
    keep = _subsample_flat(pts.shape[0], node_cap)
    pts = pts[keep]
    vals = vals[keep]
    m = pts.shape[0]
    semi = 0.0
    arg = (0, 0)
    chunk = max(1, int(5e6 / max(m, 1)))
    for start in range(0, m - 1, chunk):
        stop = min(start + chunk, m - 1)
        block = pts[start:stop]                      # (b, n)
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        dv = np.abs(vals[start:stop, None] - vals[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = dv / np.sqrt(d2) ** rho
        q[d2 == 0.0] = 0.0
        i, j = np.unravel_index(np.argmax(q), q.shape)
        if q[i, j] > semi:
            semi = float(q[i, j])
            arg = (int(keep[start + i]), int(keep[j]))
    if with_detail:
        return sup + semi, {"sup": sup, "seminorm": semi, "argmax_flat_pair": arg}
    return sup + semi


# ---------------------------------------------------------------------------
# file format

def write_gridfunction(path, u: GridFunction) -> None:
    """Text format: one header line
    n,a_count,x_counts...,a_min,t_min,base_lo,base_hi,...,a_max
    followed by the row-major values (a-axis slowest), one per line,
    printed at 17 significant digits for a bit-exact round trip.
    """
    grid = u.grid
    dom = grid.domain
    head = [str(grid.n), str(grid.a.size)]
    head += [str(x.size) for x in grid.xs]
    head.append(f"{grid.a[0]:.17g}")
    head.append(f"{dom.t_min:.17g}")
    for k in range(grid.n - 1):
        head.append(f"{grid.xs[k][0]:.17g}")
        head.append(f"{grid.xs[k][-1]:.17g}")
    head.append(f"{grid.a[-1]:.17g}")
    lines = [",".join(head)]
    lines += [f"{v:.17g}" for v in u.values.ravel()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_gridfunction(path, domain: ConeDomain | None = None) -> GridFunction:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        n = int(header[0])
        counts = [int(c) for c in header[1:1 + n]]
        rest = [float(v) for v in header[1 + n:]]
        a_min = rest[0]
        t_min = rest[1]
        lo = np.array(rest[2:2 + 2 * (n - 1):2])
        hi = np.array(rest[3:3 + 2 * (n - 1):2])
        a_max = rest[2 + 2 * (n - 1)] if len(rest) > 2 + 2 * (n - 1) else 0.0
        values = np.array([float(line) for line in fh if line.strip()])
    if domain is None:
        domain = ConeDomain(n=n, base_lo=lo, base_hi=hi, t_min=t_min,
                            t_max=min(math.exp(a_max), 1.0))
    # the header axis endpoints are authoritative so the round trip is exact
    grid = LogGrid(
        domain=domain,
        a=np.linspace(a_min, a_max, counts[0]),
        xs=tuple(np.linspace(lo[k], hi[k], counts[1 + k]) for k in range(n - 1)),
    )
    if values.size != int(np.prod(grid.shape)):
        raise ValueError("value count does not match the header grid shape")
    return GridFunction(grid, values.reshape(grid.shape))
