"""Tests for bid clearing, supply-curve sampling, and N-pair extraction."""

import numpy as np
import pytest

from hdb_bidder.bids import (BidBounds, Hdb, SupplyCurve, clear, clear_many,
                             clearing_gap_on_grid, constant_bid, discretization_error,
                             discretize, generate_hdb, monotonize, price_grid,
                             sample_supply_curve)

from conftest import const_head_policy
from oracles import best_discretization_error, brute_force_discretization_error

BOUNDS = BidBounds(-50.0, 200.0, -1.0, 1.0)


def step_curve(grid, jumps):
    """Piecewise-constant curve: ``jumps`` maps start price -> level."""
    grid = np.asarray(grid, dtype=float)
    powers = np.zeros_like(grid)
    for start, level in sorted(jumps.items()):
        powers[grid >= start] = level
    return SupplyCurve(grid, powers)


class TestClear:
    def setup_method(self):
        self.hdb = Hdb(np.array([0.0, 50.0, 100.0]), np.array([0.2, 0.6, 1.0]), BOUNDS)

    def test_interior(self):
        assert clear(self.hdb, 60.0) == 0.6

    def test_pair_accepted_at_equality(self):
        assert clear(self.hdb, 100.0) == 1.0

    def test_below_first_pair_clears_left_segment(self):
        hdb = Hdb(self.hdb.prices, self.hdb.powers, BOUNDS, p_left=-1.0)
        assert clear(hdb, -10.0) == -1.0

    def test_clear_many_matches_scalar(self):
        lams = np.linspace(-50, 200, 77)
        np.testing.assert_array_equal(clear_many(self.hdb, lams),
                                      [clear(self.hdb, l) for l in lams])


class TestHdbValidation:
    def test_rejects_decreasing_prices(self):
        with pytest.raises(ValueError):
            Hdb(np.array([10.0, 5.0]), np.array([0.1, 0.2]), BOUNDS)

    def test_rejects_decreasing_powers(self):
        with pytest.raises(ValueError):
            Hdb(np.array([5.0, 10.0]), np.array([0.2, 0.1]), BOUNDS)

    def test_rejects_out_of_bounds(self):
        with pytest.raises(ValueError):
            Hdb(np.array([5.0]), np.array([2.0]), BOUNDS)
        with pytest.raises(ValueError):
            Hdb(np.array([500.0]), np.array([0.5]), BOUNDS)

    def test_rejects_left_power_above_first_pair(self):
        with pytest.raises(ValueError):
            Hdb(np.array([0.0, 50.0]), np.array([0.0, 0.5]), BOUNDS, p_left=0.3)


def test_price_grid_spacing():
    grid = price_grid(-50.0, 200.0, 512)
    assert len(grid) == 512
    assert grid[0] == -50.0 and grid[-1] == 200.0
    assert grid[1] - grid[0] == pytest.approx(250.0 / 511.0)  # ~0.489 USD/MWh


class TestSampleSupplyCurve:
    def test_constant_zero_network(self):
        policy = const_head_policy([-1.0, 1.0, 0.0, 0.0])
        curve = sample_supply_curve(policy, np.zeros(15), price_grid(-50, 200, 64))
        np.testing.assert_array_equal(curve.powers, np.zeros(64))

    def test_deterministic(self, zero_band_policy):
        rng = np.random.default_rng(5)
        obs = rng.uniform(-1, 1, 15)
        grid = price_grid(-50, 200, 128)
        a = sample_supply_curve(zero_band_policy, obs, grid)
        b = sample_supply_curve(zero_band_policy, obs, grid)
        assert np.array_equal(a.powers, b.powers)

    def test_batched_equals_serial(self):
        rng = np.random.default_rng(6)
        policy = const_head_policy([-0.2, 0.3, 0.5, 0.9])
        # a non-constant net: re-randomize weights for a wiggly curve
        for w in policy.mlp.weights:
            w[:] = rng.normal(0, 0.3, w.shape)
        obs = rng.uniform(-1, 1, 15)
        grid = price_grid(-50, 200, 100)
        full = sample_supply_curve(policy, obs, grid)
        for width in (1, 7, 100):
            part = sample_supply_curve(policy, obs, grid, batch_width=width)
            np.testing.assert_allclose(part.powers, full.powers, atol=1e-12)

    def test_power_scaling(self, zero_band_policy):
        grid = price_grid(-50, 200, 32)
        curve = sample_supply_curve(zero_band_policy, np.zeros(15), grid, p_scale=2.5)
        assert curve.powers.max() == pytest.approx(2.5)
        assert curve.powers.min() == pytest.approx(-2.5)


class TestMonotonize:
    def test_running_maximum(self):
        curve = SupplyCurve(np.arange(4.0), [0.1, 0.3, 0.2, 0.5])
        np.testing.assert_array_equal(monotonize(curve).powers, [0.1, 0.3, 0.3, 0.5])

    def test_already_monotone_unchanged(self):
        curve = SupplyCurve(np.arange(5.0), [0.0, 0.1, 0.1, 0.4, 0.9])
        np.testing.assert_array_equal(monotonize(curve).powers, curve.powers)

    def test_initial_peak_floods(self):
        curve = SupplyCurve(np.arange(3.0), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(monotonize(curve).powers, [1.0, 1.0, 1.0])

    def test_idempotent_and_dominating(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            powers = rng.uniform(-1, 1, rng.integers(2, 60))
            curve = SupplyCurve(np.arange(float(len(powers))), powers)
            mono = monotonize(curve)
            assert np.all(np.diff(mono.powers) >= 0)
            assert np.all(mono.powers >= curve.powers)
            np.testing.assert_array_equal(monotonize(mono).powers, mono.powers)


class TestDiscretize:
    def test_single_anchor_finds_step(self):
        grid = np.linspace(0.0, 10.0, 21)
        curve = step_curve(grid, {0.0: 0.0, 5.0: 1.0})
        hdb = discretize(curve, 1)
        assert hdb.prices[0] == pytest.approx(5.0)
        assert hdb.powers[0] == pytest.approx(1.0)
        assert discretization_error(curve, hdb) <= 1e-12
        # matches the exhaustive placement oracle exactly
        oracle = best_discretization_error(curve.powers, 1, curve.step,
                                           p_left=curve.powers.min())
        assert discretization_error(curve, hdb) == pytest.approx(oracle, abs=1e-12)

    def test_constant_curve_any_n(self):
        grid = np.linspace(0.0, 10.0, 33)
        curve = SupplyCurve(grid, np.full(33, 0.7))
        for n in (1, 2, 5):
            hdb = discretize(curve, n)
            np.testing.assert_allclose(hdb.powers, 0.7, atol=1e-12)

    def test_plateau_recovery_with_spare_anchors(self):
        grid = np.linspace(-50.0, 200.0, 64)
        curve = step_curve(grid, {-50.0: 0.0, 40.0: 0.9})
        for n in (2, 3, 4):
            hdb = discretize(curve, n, p_bounds=(-1.0, 1.0))
            assert discretization_error(curve, hdb) <= 1e-12
            assert clearing_gap_on_grid(curve, hdb) == 0.0

    def test_rejects_non_monotone(self):
        curve = SupplyCurve(np.arange(4.0), [0.0, 0.5, 0.3, 0.8])
        with pytest.raises(ValueError):
            discretize(curve, 2)

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        powers = np.maximum.accumulate(rng.uniform(-1, 1, 80))
        curve = SupplyCurve(np.linspace(-50, 200, 80), powers)
        a = discretize(curve, 5)
        b = discretize(curve, 5)
        assert np.array_equal(a.prices, b.prices) and np.array_equal(a.powers, b.powers)

    def test_never_worse_than_uniform_init(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            m = int(rng.integers(16, 120))
            n = int(rng.integers(1, 9))
            powers = np.maximum.accumulate(rng.uniform(-1, 1, m))
            curve = SupplyCurve(np.linspace(-50, 200, m), powers)
            hdb = discretize(curve, n)
            k0 = np.round(np.arange(1, n + 1) * (m - 1) / (n + 1)).astype(int)
            init = Hdb(curve.prices[k0], powers[k0], hdb.bounds, p_left=hdb.bounds.p_min)
            assert discretization_error(curve, hdb) \
                <= discretization_error(curve, init) + 1e-12

    def test_upper_boundary_anchor_not_below_curve_top(self):
        # interior pairs may sit below p_max; bounds only cap them
        grid = np.linspace(0.0, 10.0, 41)
        curve = step_curve(grid, {0.0: -0.8, 3.0: 0.1, 7.0: 0.6})
        hdb = discretize(curve, 3, p_bounds=(-1.0, 1.0))
        assert hdb.powers.max() <= 1.0


class TestFreeLeftMode:
    def test_recovers_unsaturated_bottom_plateau(self):
        # pinned left segment cannot express a bottom level above p_min;
        # the free mode optimizes it and reaches zero error
        grid = np.linspace(-50.0, 200.0, 64)
        curve = step_curve(grid, {-50.0: -0.8, 10.0: 0.0, 120.0: 0.9})
        hdb = discretize(curve, 3, p_bounds=(-1.0, 1.0), free_left=True)
        assert discretization_error(curve, hdb) <= 1e-12
        oracle = best_discretization_error(curve.powers, 3, curve.step, p_left=None)
        assert oracle <= 1e-12

    def test_free_mode_optimum_never_worse_than_pinned_optimum(self):
        # the greedy sweep only finds local optima, so the "free left helps"
        # claim is asserted on the exhaustive placement optima
        rng = np.random.default_rng(13)
        for _ in range(10):
            powers = np.maximum.accumulate(rng.uniform(-1, 1, 40))
            best_free = best_discretization_error(powers, 3, 0.5, p_left=None)
            best_pinned = best_discretization_error(powers, 3, 0.5, p_left=-1.0)
            assert best_free <= best_pinned + 1e-12


class TestDiscretizationError:
    def test_exact_match_is_zero(self):
        grid = np.linspace(0.0, 10.0, 21)
        curve = step_curve(grid, {0.0: 0.0, 5.0: 1.0})
        hdb = Hdb(np.array([0.0, 5.0]), np.array([0.0, 1.0]),
                  BidBounds(0.0, 10.0, 0.0, 1.0), p_left=0.0)
        assert discretization_error(curve, hdb) == 0.0

    def test_constant_offset(self):
        eps, m = 0.125, 251
        grid = np.linspace(0.0, 10.0, m)
        curve = SupplyCurve(grid, np.full(m, 0.5 + eps))
        hdb = Hdb(np.array([0.0]), np.array([0.5]), BidBounds(0.0, 10.0, 0.0, 1.0),
                  p_left=0.0)
        err = discretization_error(curve, hdb)
        assert err == pytest.approx(eps ** 2 * curve.step * m, abs=1e-12)
        assert err == pytest.approx(eps ** 2 * 10.0, rel=2.0 / m)

    def test_misplaced_anchor_is_penalized(self):
        grid = np.linspace(0.0, 10.0, 21)
        curve = step_curve(grid, {0.0: 0.0, 5.0: 1.0})
        off = Hdb(np.array([5.5]), np.array([1.0]), BidBounds(0.0, 10.0, 0.0, 1.0),
                  p_left=0.0)
        assert discretization_error(curve, off) > 0.0


class TestOracleAgreement:
    """The interval-DP placement oracle must agree with raw enumeration."""

    def test_dp_oracle_matches_brute_force(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            m = int(rng.integers(5, 12))
            n = int(rng.integers(1, 3))
            powers = np.maximum.accumulate(rng.uniform(-1, 1, m))
            for p_left in (None, float(powers.min()), -1.0):
                a = best_discretization_error(powers, n, 0.5, p_left=p_left)
                b = brute_force_discretization_error(powers, n, 0.5, p_left=p_left)
                assert a == pytest.approx(b, abs=1e-12)


class TestGenerateHdb:
    def test_emits_n_legal_pairs(self):
        rng = np.random.default_rng(15)
        policy = const_head_policy([0.0, 0.0, 0.0, 0.0])
        for w in policy.mlp.weights:
            w[:] = rng.normal(0, 0.5, w.shape)
        grid = price_grid(-50, 200, 256)
        hdb = generate_hdb(policy, rng.uniform(-1, 1, 15), grid, 10)
        assert hdb.n_pairs == 10
        assert np.all(np.diff(hdb.prices) >= 0)
        assert np.all(np.diff(hdb.powers) >= 0)
        assert hdb.powers.min() >= -1.0 and hdb.powers.max() <= 1.0

    def test_two_plateau_network_recovered(self):
        # zero charge power -> plateaus {0, p_d}; N=2 recovers them exactly
        policy = const_head_policy([-0.3, 0.25, 0.0, 0.8])
        grid = price_grid(-50, 200, 64)
        hdb = generate_hdb(policy, np.zeros(15), grid, 2)
        curve = monotonize(sample_supply_curve(policy, np.zeros(15), grid))
        assert discretization_error(curve, hdb) <= 1e-12
        # zero up to float rounding of plateau means
        assert clearing_gap_on_grid(curve, hdb) <= 1e-12

    def test_constant_output_network(self):
        policy = const_head_policy([-1.0, -1.0, 0.0, 0.6])  # discharge everywhere
        grid = price_grid(-50, 200, 64)
        hdb = generate_hdb(policy, np.zeros(15), grid, 5)
        np.testing.assert_allclose(hdb.powers, 0.6, atol=1e-9)


def test_constant_bid_clears_quantity_at_any_price():
    bid = constant_bid(-0.4, BOUNDS, 10)
    for lam in (-50.0, -10.0, 0.0, 55.5, 200.0):
        assert clear(bid, lam) == -0.4
