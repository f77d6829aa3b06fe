import math
import os

import numpy as np
import pytest
from scipy.integrate import quad

from conepde.calculus import (
    GridFunction,
    LogGrid,
    NormParams,
    b_gradient,
    b_hessian,
    cone_integral,
    first_diff,
    gradient_field,
    hessian_field,
    hoelder_norm,
    read_gridfunction,
    second_diff,
    weighted_Lp_norm,
    weighted_sobolev_norm,
    write_gridfunction,
)
from conepde.geometry import ConeDomain


def unit_grid(counts=(17, 17), t_min=math.exp(-1.0), n=2):
    dom = ConeDomain(n=n, base_lo=[0.0] * (n - 1), base_hi=[1.0] * (n - 1),
                     t_min=t_min)
    return LogGrid.build(dom, counts)


class TestStencils:
    def test_gradient_of_constant(self):
        grid = unit_grid()
        u = GridFunction(grid, np.full(grid.shape, 3.7))
        np.testing.assert_array_equal(b_gradient(u, (5, 5)), np.zeros(2))

    def test_gradient_exact_on_linear(self):
        grid = unit_grid()
        A, X = grid.mesh
        u = GridFunction(grid, A.copy())
        g = b_gradient(u, (8, 8))
        assert g[0] == pytest.approx(1.0, abs=1e-13)
        assert g[1] == pytest.approx(0.0, abs=1e-13)

    def test_gradient_exact_on_quadratic(self):
        # central differences are exact on quadratics: d/da a^2 at a=-0.5 is -1
        grid = unit_grid()
        A, X = grid.mesh
        u = GridFunction(grid, A**2)
        node = (8, 8)  # a = -0.5 on the 17-node grid over [-1, 0]
        assert grid.a[8] == pytest.approx(-0.5)
        assert b_gradient(u, node)[0] == pytest.approx(-1.0, abs=1e-12)

    def test_hessian_of_constant(self):
        grid = unit_grid()
        u = GridFunction(grid, np.full(grid.shape, -2.0))
        np.testing.assert_allclose(b_hessian(u, (4, 9)), np.zeros((2, 2)), atol=1e-12)

    def test_hessian_exact_on_quadratic(self):
        grid = unit_grid()
        A, X = grid.mesh
        u = GridFunction(grid, A**2)
        H = b_hessian(u, (8, 8))
        np.testing.assert_allclose(H, np.diag([2.0, 0.0]), atol=1e-11)

    def test_cross_term_exact_on_bilinear(self):
        grid = unit_grid()
        A, X = grid.mesh
        u = GridFunction(grid, A * X)
        H = b_hessian(u, (8, 8))
        assert H[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert H[1, 0] == H[0, 1]

    def test_pointwise_matches_field_versions(self):
        grid = unit_grid((9, 11))
        rng = np.random.default_rng(0)
        u = GridFunction(grid, rng.standard_normal(grid.shape))
        g_field = gradient_field(u)
        h_field = hessian_field(u)
        for node in [(0, 0), (0, 5), (4, 0), (4, 5), (8, 10), (8, 3), (1, 1)]:
            np.testing.assert_allclose(b_gradient(u, node),
                                       g_field[(slice(None),) + node], rtol=1e-13, atol=1e-13)
            np.testing.assert_allclose(b_hessian(u, node),
                                       h_field[(slice(None), slice(None)) + node],
                                       rtol=1e-12, atol=1e-12)

    def test_second_order_convergence_incl_boundary(self):
        # smooth analytic field: observed order under halving >= 1.9
        def field(A, X):
            return np.sin(2.0 * A) * np.exp(0.5 * X) + np.cos(A + X)

        def grad_a(A, X):
            return 2.0 * np.cos(2.0 * A) * np.exp(0.5 * X) - np.sin(A + X)

        def hess_ax(A, X):
            return np.cos(2.0 * A) * np.exp(0.5 * X) - np.cos(A + X)

        errs_g, errs_h = [], []
        for c in (17, 33, 65):
            grid = unit_grid((c, c))
            A, X = grid.mesh
            u = GridFunction(grid, field(A, X))
            g = gradient_field(u)
            H = hessian_field(u)
            errs_g.append(np.max(np.abs(g[0] - grad_a(A, X))))
            errs_h.append(np.max(np.abs(H[0, 1] - hess_ax(A, X))))
        for errs in (errs_g, errs_h):
            orders = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
            assert min(orders) >= 1.9


class TestConeIntegral:
    def test_unit_box(self):
        grid = unit_grid()
        assert cone_integral(GridFunction(grid, np.ones(grid.shape))) == pytest.approx(1.0, abs=1e-13)

    def test_zero(self):
        grid = unit_grid()
        assert cone_integral(GridFunction.zeros(grid)) == 0.0

    def test_exponential_against_quadrature(self):
        # int e^a da dx over [-1,0]x[0,1] -> 1 - 1/e as h -> 0, order 2
        exact = 1.0 - math.exp(-1.0)
        errs = []
        for c in (9, 17, 33):
            grid = unit_grid((c, c))
            A, _ = grid.mesh
            errs.append(abs(cone_integral(GridFunction(grid, np.exp(A))) - exact))
        assert errs[-1] < 1e-4
        assert math.log2(errs[0] / errs[1]) > 1.9

    def test_linear_and_monotone(self):
        grid = unit_grid((9, 9))
        rng = np.random.default_rng(1)
        f = GridFunction(grid, rng.random(grid.shape))
        g = GridFunction(grid, rng.random(grid.shape))
        lhs = cone_integral(GridFunction(grid, 2.0 * f.values - 3.0 * g.values))
        assert lhs == pytest.approx(2 * cone_integral(f) - 3 * cone_integral(g), abs=1e-12)
        assert cone_integral(GridFunction(grid, np.abs(f.values))) >= 0.0


class TestWeightedNorms:
    def test_zero_function(self):
        grid = unit_grid()
        assert weighted_Lp_norm(GridFunction.zeros(grid), NormParams()).value == 0.0

    def test_constant_against_quadrature_oracle(self):
        # weight (t (1-t) min(x, 1-x)); oracle by 1-d adaptive quadrature on
        # the truncated radial interval, exact 1/12 * 1/12 in the limit
        t_min = 1e-3
        grid = unit_grid((129, 129), t_min=t_min)
        rep = weighted_Lp_norm(GridFunction(grid, np.ones(grid.shape)),
                               NormParams(p=2.0, gamma=0.0))
        radial, _ = quad(lambda t: t * (1.0 - t) ** 2, t_min, 1.0)
        lateral, _ = quad(lambda x: min(x, 1.0 - x) ** 2, 0.0, 1.0)
        assert rep.value**2 == pytest.approx(radial * lateral, rel=2e-3)
        assert not rep.diverges
        # untruncated limit: 1/12 each factor
        assert radial == pytest.approx(1.0 / 12.0, rel=5e-3)
        assert lateral == pytest.approx(1.0 / 12.0, rel=1e-10)

    def test_divergence_flag(self):
        grid = unit_grid()
        rep = weighted_Lp_norm(GridFunction(grid, np.ones(grid.shape)),
                               NormParams(p=2.0, gamma=1.0))  # gamma = n/p
        assert rep.weight_exponent == 0.0
        assert rep.diverges

    def test_homogeneity_and_triangle(self):
        grid = unit_grid((9, 9))
        rng = np.random.default_rng(2)
        params = NormParams(p=2.0, gamma=0.3)
        for _ in range(20):
            u = rng.standard_normal(grid.shape)
            v = rng.standard_normal(grid.shape)
            c = rng.uniform(-3, 3)
            nu = weighted_Lp_norm(GridFunction(grid, u), params).value
            nv = weighted_Lp_norm(GridFunction(grid, v), params).value
            ncu = weighted_Lp_norm(GridFunction(grid, c * u), params).value
            nsum = weighted_Lp_norm(GridFunction(grid, u + v), params).value
            assert ncu == pytest.approx(abs(c) * nu, rel=1e-12, abs=1e-14)
            assert nsum <= nu + nv + 1e-12

    def test_sobolev_m0_collapse(self):
        grid = unit_grid((9, 9))
        rng = np.random.default_rng(3)
        u = GridFunction(grid, rng.standard_normal(grid.shape))
        params = NormParams(m=0, p=2.0, gamma=0.2)
        assert weighted_sobolev_norm(u, params).value == pytest.approx(
            weighted_Lp_norm(u, params).value, rel=1e-14)

    def test_sobolev_constant_m1(self):
        grid = unit_grid()
        u = GridFunction(grid, np.full(grid.shape, 2.0))
        p0 = NormParams(m=0, p=2.0)
        p1 = NormParams(m=1, p=2.0)
        assert weighted_sobolev_norm(u, p1).value == pytest.approx(
            weighted_Lp_norm(u, p0).value, rel=1e-13)

    def test_sobolev_linear_field_oracle(self):
        # u = a: norm^p = ||a||^p + ||1||^p with the gamma = 0 weight
        grid = unit_grid((65, 65), t_min=math.exp(-1.0))
        A, _ = grid.mesh
        u = GridFunction(grid, A.copy())
        params = NormParams(m=1, p=2.0, gamma=0.0)
        got = weighted_sobolev_norm(u, params).value

        def w2(t):
            return (t * (1.0 - t)) ** 2

        radial_a, _ = quad(lambda t: w2(t) * math.log(t) ** 2 / t, math.exp(-1.0), 1.0)
        radial_1, _ = quad(lambda t: w2(t) / t, math.exp(-1.0), 1.0)
        lateral, _ = quad(lambda x: min(x, 1.0 - x) ** 2, 0.0, 1.0)
        expected = math.sqrt(radial_a * lateral + radial_1 * lateral)
        assert got == pytest.approx(expected, rel=2e-3)

    def test_sobolev_rejects_high_order(self):
        grid = unit_grid((9, 9))
        with pytest.raises(ValueError):
            weighted_sobolev_norm(GridFunction.zeros(grid), NormParams(m=3))


class TestHoelderNorm:
    def test_zero(self):
        grid = unit_grid((9, 9))
        assert hoelder_norm(GridFunction.zeros(grid), 0.5) == 0.0

    def test_constant(self):
        grid = unit_grid((9, 9))
        assert hoelder_norm(GridFunction(grid, np.full(grid.shape, -1.5)), 0.5) == pytest.approx(1.5)

    def test_linear_radial_field_brute_force(self):
        # u = a on [-1,0]x[0,1]: sup|u| = 1; the rho = 1 seminorm is the
        # Lipschitz constant 1, attained on pairs with equal base coordinate
        grid = unit_grid((17, 17))
        A, _ = grid.mesh
        u = GridFunction(grid, A.copy())
        # independent brute force over every pair
        pts = grid.log_points
        vals = u.values.ravel()
        best = 0.0
        for i in range(len(vals)):
            d = np.linalg.norm(pts - pts[i], axis=1)
            mask = d > 0
            best = max(best, np.max(np.abs(vals - vals[i])[mask] / d[mask]))
        assert best == pytest.approx(1.0, abs=1e-12)
        assert hoelder_norm(u, 1.0) == pytest.approx(2.0, abs=1e-12)

    def test_nonincreasing_in_rho_for_wide_domains(self):
        # attaining pairs sit at distance 2 >= 1, so the norm decreases in rho
        dom = ConeDomain(n=2, base_lo=[0.0], base_hi=[1.0], t_min=math.exp(-2.0))
        grid = LogGrid.build(dom, (17, 9))
        A, _ = grid.mesh
        u = GridFunction(grid, A.copy())
        norms = [hoelder_norm(u, rho) for rho in (0.25, 0.5, 0.75, 1.0)]
        assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))

    def test_subsampling_cap_is_deterministic(self):
        grid = unit_grid((33, 33))
        rng = np.random.default_rng(5)
        u = GridFunction(grid, rng.standard_normal(grid.shape))
        v1 = hoelder_norm(u, 0.5, node_cap=200)
        v2 = hoelder_norm(u, 0.5, node_cap=200)
        assert v1 == v2


class TestSummationByParts:
    def test_radial_sbp_with_compact_test(self):
        # int (D_a u) v + int u (D_a v) -> 0 at second order for compactly
        # supported v
        # central differences against uniform interior weights telescope, so
        # the discrete identity holds to rounding, well inside the O(h^2)
        # budget the weak-form machinery relies on
        def bump(q, center, width):
            s = (q - center) / width
            return np.where(np.abs(s) < 1.0, np.cos(0.5 * math.pi * s) ** 4, 0.0)

        for c in (17, 33, 65):
            grid = unit_grid((c, c))
            A, X = grid.mesh
            u = np.exp(A) * np.cos(X)
            v = bump(A, -0.5, 0.35) * bump(X, 0.5, 0.35)
            h = grid.h[0]
            du = first_diff(u, 0, h)
            dv = first_diff(v, 0, h)
            total = cone_integral(GridFunction(grid, du * v)) + cone_integral(
                GridFunction(grid, u * dv))
            assert abs(total) < 1e-14


class TestFileFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        grid = unit_grid((9, 11), t_min=0.217)
        rng = np.random.default_rng(8)
        u = GridFunction(grid, rng.standard_normal(grid.shape) * 1e3)
        path = os.path.join(tmp_path, "u.gf")
        write_gridfunction(path, u)
        v = read_gridfunction(path)
        np.testing.assert_array_equal(u.values, v.values)
        np.testing.assert_array_equal(u.grid.a, v.grid.a)
        for xs_u, xs_v in zip(u.grid.xs, v.grid.xs):
            np.testing.assert_array_equal(xs_u, xs_v)

    def test_rewrite_is_byte_identical(self, tmp_path):
        grid = unit_grid((7, 7))
        rng = np.random.default_rng(9)
        u = GridFunction(grid, rng.standard_normal(grid.shape))
        p1 = os.path.join(tmp_path, "a.gf")
        p2 = os.path.join(tmp_path, "b.gf")
        write_gridfunction(p1, u)
        write_gridfunction(p2, read_gridfunction(p1))
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            assert f1.read() == f2.read()

    def test_truncated_top_face_round_trip(self, tmp_path):
        dom = ConeDomain(n=2, base_lo=[0.25], base_hi=[0.75], t_min=0.1,
                         t_max=0.9, bottom_is_boundary=True)
        grid = LogGrid.build(dom, (9, 9))
        u = GridFunction(grid, np.ones(grid.shape))
        path = os.path.join(tmp_path, "c.gf")
        write_gridfunction(path, u)
        v = read_gridfunction(path)
        np.testing.assert_array_equal(u.grid.a, v.grid.a)
