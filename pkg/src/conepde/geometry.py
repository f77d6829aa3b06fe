"""Stretched-cone geometry: metric, balls, boundary distance, exterior-mass
condition, nested exhaustion subdomains, and ball rescaling.

Points live on the cylinder (0, 1] x X with X an axis-aligned box.  In the
logarithmic radial coordinate a = ln t the cone metric is the flat Euclidean
metric on (a, x) and the singular measure dt/t dx is Lebesgue measure, so
every computation below reduces to Euclidean geometry on a box.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConePoint",
    "ConeDomain",
    "GConditionParams",
    "cone_distance",
    "cone_ball_contains",
    "boundary_distance",
    "estimate_g_condition",
    "exhaustion",
    "ball_rescale",
]


@dataclass(frozen=True, eq=False)
class ConePoint:
    """A point (t, x) on the stretched cone, t > 0, x in the base."""

    t: float
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        if not (self.t > 0.0 and math.isfinite(self.t)):
            raise ValueError(f"radial coordinate must be positive and finite, got t={self.t}")

    @property
    def a(self) -> float:
        """Logarithmic radial coordinate ln t."""
        return math.log(self.t)

    def as_log(self) -> np.ndarray:
        """Coordinates (a, x_1, ..., x_{n-1}) in the flattened chart."""
        return np.concatenate(([self.a], self.x))


@dataclass(frozen=True)
class GConditionParams:
    """Parameters of the uniform exterior-mass condition.

    K0 scales the probe-ball radius relative to the boundary distance, d0
    caps the boundary distance entering that radius, sigma is the exterior
    mass fraction.  sigma == 0.0 is only produced by the estimator on
    degenerate inputs and is reported together with a warning.
    """

    K0: float
    d0: float
    sigma: float

    def __post_init__(self):
        if not (self.K0 > 0.0 and self.d0 > 0.0):
            raise ValueError("K0 and d0 must be strictly positive")
        if not (0.0 <= self.sigma <= 1.0):
            raise ValueError("sigma must lie in [0, 1]")


_DEFAULT_G = GConditionParams(K0=2.0, d0=1.0, sigma=0.5)


@dataclass(frozen=True, eq=False)
class ConeDomain:
    """The (possibly truncated) stretched cone (t_min, t_max) x base.

    The analytic boundary consists of the top face {t_max} x X and the
    lateral face (0, t_max] x dX.  The bottom face t = t_min is an artificial
    numerical truncation unless ``bottom_is_boundary`` is set, which is the
    case for the compactly contained exhaustion subdomains.
    """

    n: int
    base_lo: np.ndarray
    base_hi: np.ndarray
    t_min: float
    t_max: float = 1.0
    bottom_is_boundary: bool = False
    g_params: GConditionParams = field(default=_DEFAULT_G)

    def __post_init__(self):
        object.__setattr__(self, "base_lo", np.atleast_1d(np.asarray(self.base_lo, dtype=float)))
        object.__setattr__(self, "base_hi", np.atleast_1d(np.asarray(self.base_hi, dtype=float)))
        if self.n < 2:
            raise ValueError("total dimension n must be >= 2")
        if self.base_lo.shape != (self.n - 1,) or self.base_hi.shape != (self.n - 1,):
            raise ValueError("base box must have n-1 axes")
        if not np.all(self.base_hi > self.base_lo):
            raise ValueError("base box must have positive side lengths")
        if not (0.0 < self.t_min < self.t_max <= 1.0):
            raise ValueError("need 0 < t_min < t_max <= 1")

    @property
    def a_min(self) -> float:
        return math.log(self.t_min)

    @property
    def a_max(self) -> float:
        return math.log(self.t_max)

    def contains(self, z: ConePoint, tol: float = 1e-12) -> bool:
        """Membership in the closure of the truncated domain."""
        if z.x.shape != (self.n - 1,):
            return False
        if not (self.t_min * (1 - tol) <= z.t <= self.t_max * (1 + tol)):
            return False
        return bool(
            np.all(z.x >= self.base_lo - tol) and np.all(z.x <= self.base_hi + tol)
        )

    def base_distance(self, x: np.ndarray) -> float:
        """Distance from x to the boundary of the base box (x inside)."""
        return float(min(np.min(x - self.base_lo), np.min(self.base_hi - x)))


def cone_distance(z: ConePoint, z0: ConePoint) -> float:
    """Distance induced by the cone metric: Euclidean in (ln t, x)."""
    if z.x.shape != z0.x.shape:
        raise ValueError("points have mismatched base dimensions")
    dx = z.x - z0.x
    return math.sqrt((z.a - z0.a) ** 2 + float(dx @ dx))


def cone_ball_contains(center: ConePoint, r: float, z: ConePoint) -> bool:
    """Membership in the open metric ball of radius r about center."""
    if not r > 0.0:
        raise ValueError(f"ball radius must be positive, got r={r}")
    return cone_distance(z, center) < r


def boundary_distance(z: ConePoint, domain: ConeDomain) -> float:
    """Distance from z to the analytic boundary of the domain.

    Closed form: the top-face minimizer keeps the base coordinate and the
    lateral minimizer keeps the radial coordinate, so the distance is the
    minimum of |ln(t/t_max)| and the base box distance (plus |ln(t/t_min)|
    when the bottom face is a true boundary).  The untruncated bottom
    {t -> 0} is at infinite metric distance and never contributes.
    """
    if not domain.contains(z):
        raise ValueError("point lies outside the closure of the domain")
    d_top = domain.a_max - z.a
    d_lat = domain.base_distance(z.x)
    d = min(d_top, d_lat)
    if domain.bottom_is_boundary:
        d = min(d, z.a - domain.a_min)
    return max(d, 0.0)


def _nearest_boundary_direction(z_log: np.ndarray, domain: ConeDomain) -> np.ndarray:
    """Unit vector in (a, x) from z toward its nearest analytic boundary point."""
    a = z_log[0]
    x = z_log[1:]
    candidates = [(domain.a_max - a, 0, +1.0)]
    for k in range(domain.n - 1):
        candidates.append((x[k] - domain.base_lo[k], 1 + k, -1.0))
        candidates.append((domain.base_hi[k] - x[k], 1 + k, +1.0))
    if domain.bottom_is_boundary:
        candidates.append((a - domain.a_min, 0, -1.0))
    _, axis, sign = min(candidates, key=lambda c: c[0])
    e = np.zeros(domain.n)
    e[axis] = sign
    return e


def estimate_g_condition(domain: ConeDomain, samples: int, seed: int,
                         mc_points: int = 4096) -> GConditionParams:
    """Empirical exterior-mass fraction of the domain.

    For each sampled interior point a probe ball of radius K0 * min(d, d0)
    is centered on the segment toward the nearest boundary point, and the
    fraction of ball volume (in the dt/t dx measure, i.e. Lebesgue in the
    log chart) falling outside the analytic domain is estimated by Monte
    Carlo.  The returned sigma is the infimum over the sample; it is 0 only
    for degenerate setups (probe ball never reaching the complement), which
    triggers a warning.  Deterministic for a fixed seed.
    """
    if samples < 1:
        raise ValueError("need at least one sample point")
    rng = np.random.default_rng(seed)
    K0, d0 = domain.g_params.K0, domain.g_params.d0
    n = domain.n
    lo = np.concatenate(([domain.a_min], domain.base_lo))
    hi = np.concatenate(([domain.a_max], domain.base_hi))
    sigma = 1.0
    for _ in range(samples):
        z = lo + rng.random(n) * (hi - lo)
        point = ConePoint(t=math.exp(z[0]), x=z[1:])
        d = boundary_distance(point, domain)
        radius = K0 * min(d, d0)
        if radius <= 0.0:
            sigma = 0.0
            continue
        offset = min(d, 0.999 * radius)
        center = z + offset * _nearest_boundary_direction(z, domain)
        # uniform sample in the n-ball around the shifted center
        dirs = rng.standard_normal((mc_points, n))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        radii = radius * rng.random(mc_points) ** (1.0 / n)
        pts = center[None, :] + radii[:, None] * dirs
        outside = pts[:, 0] > domain.a_max
        if domain.bottom_is_boundary:
            outside |= pts[:, 0] < domain.a_min
        for k in range(n - 1):
            outside |= (pts[:, 1 + k] < domain.base_lo[k]) | (pts[:, 1 + k] > domain.base_hi[k])
        sigma = min(sigma, float(np.mean(outside)))
    if sigma <= 0.0:
        warnings.warn("probe balls never reached the complement; "
                      "exterior-mass fraction reported as 0", RuntimeWarning)
        sigma = 0.0
    return GConditionParams(K0=K0, d0=d0, sigma=sigma)


def exhaustion(domain: ConeDomain, j: int) -> ConeDomain:
    """The j-th member of a nested sequence of compactly contained subdomains.

    Margins are powers of two, which makes strict nesting and exhaustion of
    the truncated domain immediate: the radial interval is
    (max(e^-(j+1), t_min (1 + 2^-j)), 1 - 2^-(j+2)) and the base box shrinks
    by 2^-(j+2) on each side.  All faces of a member are true boundaries.
    """
    if j < 1:
        raise ValueError("exhaustion index must be >= 1")
    if domain.t_max != 1.0:
        raise ValueError("exhaustion is defined for the full cone t_max = 1")
    t_lo = max(math.exp(-(j + 1)), domain.t_min * (1.0 + 2.0 ** (-j)))
    t_hi = 1.0 - 2.0 ** (-(j + 2))
    margin = 2.0 ** (-(j + 2))
    lo = domain.base_lo + margin
    hi = domain.base_hi - margin
    if not (t_lo < t_hi) or not np.all(lo < hi):
        raise ValueError(f"exhaustion member j={j} is empty for this domain")
    return ConeDomain(
        n=domain.n,
        base_lo=lo,
        base_hi=hi,
        t_min=t_lo,
        t_max=t_hi,
        bottom_is_boundary=True,
        g_params=domain.g_params,
    )


def ball_rescale(center: ConePoint, d: float, w: ConePoint) -> ConePoint:
    """Stretching map sending the unit metric ball about center onto the
    radius-d ball: (s, y) -> (s^d t0^(1-d), x0 + d (y - x0)).

    In the log chart this is the dilation a -> a0 + d (a - a0), so distances
    from the center scale exactly by d.
    """
    if not d > 0.0:
        raise ValueError("scaling factor d must be positive")
    t_new = w.t ** d * center.t ** (1.0 - d)
    x_new = center.x + d * (w.x - center.x)
    return ConePoint(t=t_new, x=x_new)
