import math

import numpy as np
import pytest
from scipy.integrate import quad

from gaussqi.errors import StarNotFound
from gaussqi.gridded import (
    GriddedQIConfig,
    blend_qi_1d,
    evaluate_gridded,
    generating_eta,
    lambda_j,
)
from gaussqi.nodes import (
    NodeSet,
    build_star,
    build_stencil_stars,
    generate_perturbed_grid,
)

BOX2 = ((-14, 14), (-14, 14))


def runge2(p):
    return 1.0 / (1.0 + np.sum(p * p, axis=1))


def centered_error_2d(h, D, seed):
    ns = generate_perturbed_grid(2, h, 0.5, BOX2, seed=seed)
    stars = build_stencil_stars(ns, 2, ((1, 0), (0, 1)))
    cfg = GriddedQIConfig(h, D, 2, BOX2)
    return evaluate_gridded(runge2, ns, cfg, np.zeros(2), stars=stars) - 1.0


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            GriddedQIConfig(0.0, 2.0, 2, ((-5, 5),))
        with pytest.raises(ValueError):
            GriddedQIConfig(0.1, -1.0, 2, ((-5, 5),))
        with pytest.raises(ValueError):
            GriddedQIConfig(0.1, 2.0, 3, ((-5, 5),))
        with pytest.raises(ValueError):
            GriddedQIConfig(0.1, 2.0, 2, ((-5, 5),), rho_cut=2.0)

    def test_dim(self):
        assert GriddedQIConfig(0.1, 2.0, 2, ((-5, 5), (0, 3))).dim == 2


class TestGeneratingEta:
    def test_order_two_is_normalized_gaussian(self):
        eta = generating_eta(1, 1)
        x = np.linspace(-2, 2, 9)
        assert eta(x) == pytest.approx(np.exp(-(x**2)) / math.sqrt(math.pi), rel=1e-14)
        mass, _ = quad(eta, -np.inf, np.inf)
        assert abs(mass - 1.0) <= 1e-12

    def test_order_four_second_moment_vanishes(self):
        eta = generating_eta(2, 1)
        moment, _ = quad(lambda x: x * x * eta(x), -np.inf, np.inf)
        assert abs(moment) <= 1e-10
        mass, _ = quad(eta, -np.inf, np.inf)
        assert abs(mass - 1.0) <= 1e-12

    def test_order_four_closed_form(self):
        eta = generating_eta(2, 1)
        x = np.array([0.0, 0.5, -1.3])
        want = (1.5 - x**2) * np.exp(-(x**2)) / math.sqrt(math.pi)
        assert eta(x) == pytest.approx(want, rel=1e-13)

    def test_plane_gaussian_2d(self):
        eta = generating_eta(1, 2)
        pts = np.array([[0.0, 0.0], [0.3, -0.4], [1.0, 2.0]])
        want = np.exp(-np.sum(pts**2, axis=1)) / math.pi
        assert eta(pts) == pytest.approx(want, rel=1e-14)

    def test_higher_orders_pass_construction_check(self):
        assert generating_eta(3, 2).order == 6

    def test_validation(self):
        with pytest.raises(ValueError):
            generating_eta(0, 1)
        with pytest.raises(ValueError):
            generating_eta(1, 0)


class TestLambdaJ:
    def test_constant_reproduced(self):
        ns = generate_perturbed_grid(2, 0.25, 0.5, ((0, 8), (0, 8)), seed=31)
        star = build_star(ns, ns.grid_index[(4, 4)], 2, 0.25)
        assert lambda_j(np.ones(len(ns)), star, (4, 4), 0.25) == pytest.approx(1.0, abs=1e-14)

    def test_linear_data_gives_grid_value(self):
        h = 0.125
        ns = generate_perturbed_grid(1, h, 0.5, ((0, 16),), seed=7)
        star = build_star(ns, ns.grid_index[(9,)], 2, h)
        vals = 3.0 * ns.points[:, 0] - 2.0
        assert lambda_j(vals, star, (9,), h) == pytest.approx(3.0 * h * 9 - 2.0, rel=1e-12)

    def test_linear_data_gives_grid_value_2d(self):
        h = 0.25
        ns = generate_perturbed_grid(2, h, 0.5, ((0, 8), (0, 8)), seed=5)
        star = build_star(ns, ns.grid_index[(3, 5)], 2, h)
        vals = ns.points[:, 0] - 2.0 * ns.points[:, 1]
        assert lambda_j(vals, star, (3, 5), h) == pytest.approx(3 * h - 2.0 * 5 * h, rel=1e-12)

    def test_node_on_grid_point_passes_through(self):
        h = 0.5
        pts = (h * np.arange(5))[:, None]
        ns = NodeSet(1, pts, np.full(5, h), h=h, grid_index={(i,): i for i in range(5)})
        star = build_star(ns, 2, 2, h, members=(3,))
        vals = np.array([5.0, -1.0, 7.5, 2.0, 0.0])
        assert lambda_j(vals, star, (2,), h) == 7.5

    def test_order_mismatch_rejected(self):
        ns = generate_perturbed_grid(1, 0.1, 0.5, ((0, 10),), seed=1)
        star = build_star(ns, ns.grid_index[(5,)], 2, 0.1)
        with pytest.raises(ValueError):
            lambda_j(np.ones(len(ns)), star, (5,), 0.1, N=4)


class TestEvaluateGridded:
    def test_lattice_sum_of_ones_hits_poisson_level(self):
        h = 1 / 16
        ns = generate_perturbed_grid(1, h, 0.5, ((-30, 30),), seed=3)
        cfg = GriddedQIConfig(h, 2.0, 2, ((-30, 30),))
        ref = 2 * sum(math.exp(-2 * math.pi**2 * m * m) for m in range(1, 4))
        assert evaluate_gridded(np.ones(len(ns)), ns, cfg, 0.0) - 1.0 == pytest.approx(
            ref, abs=1e-12
        )
        xs = np.linspace(-0.4, 0.4, 17)
        vals = evaluate_gridded(np.ones(len(ns)), ns, cfg, xs)
        assert np.abs(vals - 1.0).max() <= ref + 1e-12

    @pytest.mark.parametrize(
        "h,D,paper",
        [
            (2**-4, 2.0, -6.2e-3),
            (2**-6, 2.0, -3.9e-4),
            (2**-4, 4.0, -1.3e-2),
            (2**-8, 4.0, -5.2e-5),
        ],
    )
    def test_centered_runge_error_matches_published_level(self, h, D, paper):
        got = centered_error_2d(h, D, seed=0)
        assert got < 0
        assert 1 / 2.5 <= got / paper <= 2.5

    def test_second_order_ratio_2d(self):
        e4 = centered_error_2d(2**-4, 2.0, seed=2)
        e5 = centered_error_2d(2**-5, 2.0, seed=2)
        assert 3.3 <= e4 / e5 <= 4.8

    def test_saturation_floor_between_d_columns(self):
        e2 = centered_error_2d(2**-6, 2.0, seed=1)
        e4 = centered_error_2d(2**-6, 4.0, seed=1)
        assert abs(e4) <= 3 * abs(e2)
        assert abs(e4) >= abs(e2) / 3

    def test_observed_order_1d_second(self):
        errs = {}
        for h in (1 / 32, 1 / 64):
            half = int(0.3 / h) + 11
            box = ((-half, half),)
            ns = generate_perturbed_grid(1, h, 0.5, box, seed=12)
            stars = build_stencil_stars(ns, 2, ((1,),))
            cfg = GriddedQIConfig(h, 2.0, 2, box)
            xs = np.linspace(-0.25, 0.25, 41)
            vals = evaluate_gridded(lambda p: p[:, 0] ** 2, ns, cfg, xs, stars=stars)
            errs[h] = np.abs(vals - xs**2).max()
        order = math.log2(errs[1 / 32] / errs[1 / 64])
        assert 1.5 <= order <= 2.5

    def test_observed_order_1d_fourth(self):
        errs = {}
        for h in (1 / 32, 1 / 64):
            half = int(0.3 / h) + 14
            box = ((-half, half),)
            ns = generate_perturbed_grid(1, h, 0.5, box, seed=12)
            stars = build_stencil_stars(ns, 4, ((-2,), (-1,), (1,)))
            cfg = GriddedQIConfig(h, 4.0, 4, box)
            xs = np.linspace(-0.25, 0.25, 41)
            vals = evaluate_gridded(lambda p: p[:, 0] ** 4, ns, cfg, xs, stars=stars)
            errs[h] = np.abs(vals - xs**4).max()
        order = math.log2(errs[1 / 32] / errs[1 / 64])
        assert 3.5 <= order <= 4.5

    @pytest.mark.parametrize("D", [2.0, 4.0])
    def test_truncation_doubling_within_stated_budget(self, D):
        h = 1 / 16
        ns = generate_perturbed_grid(1, h, 0.5, ((-30, 30),), seed=3)
        vals = {}
        for rho in (4.0, 8.0):
            cfg = GriddedQIConfig(h, D, 2, ((-30, 30),), rho_cut=rho)
            vals[rho] = evaluate_gridded(lambda p: 1.0 / (1.0 + p[:, 0] ** 2), ns, cfg, 0.05)
        assert abs(vals[8.0] - vals[4.0]) <= 1e-10 * abs(vals[8.0])

    @pytest.mark.parametrize("D", [2.0, 4.0])
    def test_truncation_doubling_from_default(self, D):
        h = 1 / 16
        ns = generate_perturbed_grid(1, h, 0.5, ((-30, 30),), seed=3)
        vals = {}
        for rho in (6.0, 12.0):
            cfg = GriddedQIConfig(h, D, 2, ((-30, 30),), rho_cut=rho)
            vals[rho] = evaluate_gridded(lambda p: 1.0 / (1.0 + p[:, 0] ** 2), ns, cfg, 0.05)
        assert abs(vals[12.0] - vals[6.0]) <= 1e-10 * abs(vals[12.0])

    def test_star_failure_carries_index(self):
        pts = np.zeros((4, 1))
        ns = NodeSet(1, pts, np.ones(4), grid_index={(0,): 0})
        cfg = GriddedQIConfig(1.0, 2.0, 2, ((0, 0),))
        with pytest.raises(StarNotFound) as err:
            evaluate_gridded(np.ones(4), ns, cfg, 0.1)
        assert err.value.owner == 0

    def test_shapes(self):
        h = 0.25
        ns = generate_perturbed_grid(2, h, 0.5, ((-4, 4), (-4, 4)), seed=2)
        cfg = GriddedQIConfig(h, 2.0, 2, ((-4, 4), (-4, 4)))
        one = evaluate_gridded(np.ones(len(ns)), ns, cfg, np.zeros(2))
        assert isinstance(one, float)
        batch = evaluate_gridded(np.ones(len(ns)), ns, cfg, np.zeros((3, 2)))
        assert batch.shape == (3,)

    def test_dimension_mismatch(self):
        ns = generate_perturbed_grid(1, 0.5, 0.5, ((0, 4),), seed=0)
        cfg = GriddedQIConfig(0.5, 2.0, 2, ((0, 4), (0, 4)))
        with pytest.raises(ValueError):
            evaluate_gridded(np.ones(len(ns)), ns, cfg, np.zeros(2))


def hat(t):
    return np.maximum(0.0, 1.0 - np.abs(t))


class TestBlend:
    def test_exact_partition_reproduces_one(self):
        points = np.arange(-2, 20, dtype=float)
        data = (points, np.ones_like(points))
        for x in (0.01, 0.37, 0.93):
            assert blend_qi_1d(data, hat, 1 / 16, x) == pytest.approx(1.0, abs=1e-14)

    def test_exact_partition_reproduces_linears(self):
        h = 1 / 16
        points = np.arange(-2, 20, dtype=float)
        u = lambda x: 2.5 * x - 0.75
        data = (points, u(h * points))
        xs = np.linspace(0.0, 1.0, 23)
        got = blend_qi_1d(data, hat, h, xs)
        assert got == pytest.approx(u(xs), rel=1e-12)

    def test_second_order_for_quadratic(self):
        u = lambda x: x * x
        errs = {}
        for h in (1 / 16, 1 / 32):
            points = np.arange(-2, int(1 / h) + 3, dtype=float)
            data = (points, u(h * points))
            xs = np.linspace(0.0, 1.0, 257)
            errs[h] = np.abs(blend_qi_1d(data, hat, h, xs) - u(xs)).max()
        assert 3.5 <= errs[1 / 16] / errs[1 / 32] <= 4.5

    def test_gap_validation(self):
        with pytest.raises(ValueError):
            blend_qi_1d((np.array([0.0, 2.0]), np.zeros(2)), hat, 0.1, 0.05)
        with pytest.raises(ValueError):
            blend_qi_1d((np.array([0.0, 0.0]), np.zeros(2)), hat, 0.1, 0.05)
