import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats
from scipy.integrate import quad

from utils.error_handlers import ContractViolation, TruncationError, ValidationError
from utils.poissonctl import (IntegerMap, IntensityPolicy, MarkovPrimitive, ValueFunction, compensated_check,
                              constant_policy, cost, fixed_point_solve, hjb_residual, intensity_identity_check,
                              legendre_gap, load_payoff, load_policy, log_poisson_integral, mc_functional,
                              ode_policy_value, optimal_policy, sample_noise, semigroup_apply, simulate_batch,
                              simulate_counting, supermartingale_check, table_policy, truncation_level)

LOG2_AT_ZERO = IntegerMap.indicator(0, math.log(2.0))
IDENTITY = IntegerMap(tuple(float(n) for n in range(40)), 40.0)


def last_jump_policy():
    """rate 1 before the first jump, 1/2 afterwards; summary is the last jump time"""
    return IntensityPolicy(bound=1.0, rule=lambda t, x, s: np.where(x == 0, 1.0, 0.5) * np.ones_like(t),
                           fold=lambda s, t: np.asarray(t, dtype=np.float64), initial=0.0, name='last-jump')


class TestIntegerMap:
    def test_from_dict(self):
        g = IntegerMap.from_dict({'0': 1.0, '2': 3.0, 'beyond': -1.0})
        assert g.values == (1.0, -1.0, 3.0)
        assert_array_equal(g([0, 1, 2, 3, 100]), [1.0, -1.0, 3.0, -1.0, -1.0])
        assert (g.sup, g.inf, g.osc) == (3.0, -1.0, 4.0)
        assert IntegerMap.from_dict(g.to_dict()) == g

    @pytest.mark.parametrize('data', [{'0': 1.0}, {'-1': 1.0, 'beyond': 0.0}, {'a': 1.0, 'beyond': 0.0}])
    def test_rejects(self, data):
        with pytest.raises(ValidationError):
            IntegerMap.from_dict(data)

    def test_non_finite(self):
        with pytest.raises(ValidationError):
            IntegerMap((math.inf,), 0.0)

    def test_load(self, write_json):
        assert load_payoff(write_json('f.json', {'0': 2.0, 'beyond': 0.0})) == IntegerMap((2.0,), 0.0)


def test_cost_and_legendre_gap():
    assert cost(0.0) == 1.0
    assert cost(1.0) == 0.0
    xs, ys = np.meshgrid(np.linspace(-5, 5, 101), np.linspace(0, 20, 201))
    assert np.min(legendre_gap(xs, ys)) >= -1e-11
    x = np.linspace(-5, 5, 41)
    y = np.exp(x)
    assert np.all(np.abs(legendre_gap(x, y)) <= 1e-12 * (1.0 + y * (1.0 + np.abs(x))))


class TestSemigroup:
    def test_examples(self):
        g = IntegerMap((1.0, 3.0, -2.0), 0.5)
        assert_array_equal(semigroup_apply(g, 0.0, [0, 1, 2, 5]), g([0, 1, 2, 5]))
        assert semigroup_apply(IntegerMap.constant(1.0), 2.5, 3) == pytest.approx(1.0, abs=1e-15)
        assert semigroup_apply(IntegerMap.indicator(0, 1.0), 1.0, 0) == pytest.approx(math.exp(-1.0), rel=1e-14)

    def test_against_direct_series(self):
        g = IntegerMap((1.0, 3.0, -2.0, 0.0, 4.0), 0.5)
        for t in (0.3, 1.0, 4.0):
            for x in range(7):
                n = np.arange(400)
                direct = np.sum(g(x + n) * stats.poisson.pmf(n, t))
                assert semigroup_apply(g, t, x) == pytest.approx(direct, rel=1e-12)

    def test_broadcast(self):
        out = semigroup_apply(IntegerMap.indicator(0, 1.0), np.array([[0.5], [1.0]]), np.array([0, 1]))
        assert out.shape == (2, 2)
        assert out[1, 0] == pytest.approx(math.exp(-1.0))
        assert out[1, 1] == 0.0

    def test_rejects_negative_time(self):
        with pytest.raises(ValidationError):
            semigroup_apply(IntegerMap.constant(1.0), -1.0, 0)


class TestValueFunction:
    def test_log_poisson_integral(self):
        assert log_poisson_integral(IntegerMap.constant(-3.0), 2.0) == pytest.approx(-3.0, abs=1e-14)
        assert log_poisson_integral(LOG2_AT_ZERO, 1.0) == pytest.approx(math.log(1 + math.exp(-1)), rel=1e-13)
        assert log_poisson_integral(LOG2_AT_ZERO, 1.0) == pytest.approx(0.313262, abs=1e-6)
        assert log_poisson_integral(IntegerMap(tuple(-float(n) for n in range(60)), -60.0), 1.0) == \
            pytest.approx(math.exp(-1.0) - 1.0, rel=1e-12)

    def test_terminal_condition(self):
        vf = ValueFunction(IntegerMap((0.5, -1.0, 2.0), 0.0), 2.0)
        assert_allclose(vf(2.0, [0, 1, 2, 3]), [0.5, -1.0, 2.0, 0.0], atol=1e-14)

    def test_rejects_horizon(self):
        with pytest.raises(ValidationError):
            ValueFunction(LOG2_AT_ZERO, 0.0)

    @pytest.mark.parametrize('f', [LOG2_AT_ZERO, IntegerMap((0.3, -1.2, 2.0, 0.7), -0.4),
                                   IntegerMap(tuple(np.sin(np.arange(10))), 0.0)])
    def test_hjb_residual(self, f):
        vf = ValueFunction(f, 1.0)
        assert hjb_residual(vf, np.linspace(0.1, 0.9, 9), range(8)) <= 1e-5


class TestPolicies:
    def test_optimal_constant_payoff(self):
        policy = optimal_policy(IntegerMap.constant(2.0), 1.0)
        assert_allclose(policy.rate([0.0, 0.5, 0.9], [0, 3, 7]), 1.0, rtol=1e-14)

    def test_optimal_two_point_payoff(self):
        T = 1.0
        policy = optimal_policy(LOG2_AT_ZERO, T)
        ts = np.array([0.0, 0.25, 0.5, 0.99])
        assert_allclose(policy.rate(ts, 0), 1.0 / (1.0 + np.exp(-(T - ts))), rtol=1e-12)
        assert_allclose(policy.rate(ts, 1), 1.0, rtol=1e-12)
        assert policy.bound == pytest.approx(2.0)

    def test_optimal_rates_within_oscillation_bounds(self, rng):
        f = IntegerMap(tuple(rng.uniform(-1, 1, 8)), 0.0)
        rates = optimal_policy(f, 1.5).rate(*np.meshgrid(np.linspace(0, 1.5, 7), np.arange(12)))
        assert np.all(rates >= math.exp(-f.osc) * (1 - 1e-12))
        assert np.all(rates <= math.exp(f.osc) * (1 + 1e-12))

    def test_contract_violation(self):
        liar = IntensityPolicy(bound=1.0, rule=lambda t, x: np.full(np.broadcast(t, x).shape, 2.0), name='liar')
        with pytest.raises(ContractViolation):
            liar.rate(0.5, 0)
        with pytest.raises(ContractViolation):
            simulate_counting(constant_policy(3.0), sample_noise(1.0, 2.0, seed=1))

    def test_load_policy(self, write_json):
        assert load_policy('constant:2', LOG2_AT_ZERO, 1.0).bound == 2.0
        assert load_policy('optimal', LOG2_AT_ZERO, 1.0).name == 'optimal'
        table = load_policy('file:' + write_json('rates.json', {'0': 2.0, 'beyond': 0.5}), LOG2_AT_ZERO, 1.0)
        assert_array_equal(table.rate(0.3, [0, 1, 9]), [2.0, 0.5, 0.5])
        for spec in ('bogus', 'constant:x', 'constant:-1'):
            with pytest.raises(ValidationError):
                load_policy(spec, LOG2_AT_ZERO, 1.0)


class TestThinning:
    def test_trivial_policies(self):
        noise = sample_noise(2.0, 3.0, seed=7)
        assert simulate_counting(constant_policy(3.0), noise).terminal == len(noise)
        assert simulate_counting(constant_policy(0.0), noise).terminal == 0

    def test_substreams(self):
        a, b = sample_noise(1.0, 5.0, seed=3, index=0), sample_noise(1.0, 5.0, seed=3, index=0)
        assert_array_equal(a.times, b.times)
        assert_array_equal(a.heights, b.heights)
        c = sample_noise(1.0, 5.0, seed=3, index=1)
        assert len(a) != len(c) or not np.array_equal(a.times, c.times)
        assert np.all(np.diff(a.times) >= 0)

    def test_predictable_rates(self):
        path = simulate_counting(table_policy(IntegerMap((2.0, 1.0), 0.5)), sample_noise(3.0, 2.0, seed=11))
        assert [snap['count_before'] for snap in path.snapshots] == list(range(path.terminal))
        assert all(snap['rate'] == (2.0, 1.0)[snap['count_before']] if snap['count_before'] < 2
                   else snap['rate'] == 0.5 for snap in path.snapshots)

    @pytest.mark.parametrize('policy', [table_policy(IntegerMap((2.0, 1.0, 0.5), 0.25)), last_jump_policy()])
    def test_batch_matches_single_path(self, policy):
        T, seed = 2.0, 19
        batch = simulate_batch(policy, T, 25, seed)
        singles = [simulate_counting(policy, sample_noise(T, policy.bound, seed, i)).terminal for i in range(25)]
        assert_array_equal(batch.terminal, singles)

    def test_batch_deterministic(self):
        policy = optimal_policy(LOG2_AT_ZERO, 1.0)
        first = simulate_batch(policy, 1.0, 50, seed=5)
        second = simulate_batch(policy, 1.0, 50, seed=5)
        assert_array_equal(first.terminal, second.terminal)
        assert_array_equal(first.accepted, second.accepted)


class TestFunctional:
    def test_unit_rate_zero_payoff(self):
        est = mc_functional(constant_policy(1.0), IntegerMap.constant(0.0), 1.0, 200, seed=1)
        assert est.estimate == 0.0
        assert est.se == 0.0

    def test_zero_rate(self):
        est = mc_functional(constant_policy(0.0), IntegerMap.constant(0.0), 1.5, 10, seed=1)
        assert est.estimate == pytest.approx(-1.5, rel=1e-12)
        assert supermartingale_check(constant_policy(0.0), IntegerMap.constant(0.0), 1.5, 10, seed=1)['pass']

    def test_unit_rate_identity_payoff(self):
        est = mc_functional(constant_policy(1.0), IDENTITY, 1.0, 4000, seed=2)
        assert abs(est.estimate - 1.0) <= 4.0 * est.se
        assert log_poisson_integral(IDENTITY, 1.0) == pytest.approx(math.e - 1.0, rel=1e-10)

    def test_optimal_equality(self):
        report = supermartingale_check(optimal_policy(LOG2_AT_ZERO, 1.0), LOG2_AT_ZERO, 1.0, 2000, seed=4,
                                       optimal=True)
        assert report['verdict'] == 'equality'
        assert abs(report['estimate'] - math.log(1 + math.exp(-1))) <= 4.0 * report['se']

    def test_intensity_identity(self):
        report = compensated_check(constant_policy(2.0), 1.0, 2000, seed=6)
        assert report['pass']
        assert report['jump_sum'] == pytest.approx(2.0, abs=4.0 * report['jump_sum_se'])
        assert report['compensator'] == pytest.approx(2.0, rel=1e-12)

        report = intensity_identity_check(constant_policy(1.0), lambda t, x: x.astype(float), 1.0, 2000, seed=8)
        assert report['pass']
        assert report['compensator'] == pytest.approx(0.5, abs=4.0 * report['compensator_se'])

    def test_path_dependent_compensator(self):
        assert compensated_check(last_jump_policy(), 2.0, 1000, seed=9)['pass']


class TestOde:
    def test_unit_rate_zero_payoff(self):
        x_max = truncation_level(1.0, 1.0)
        value = ode_policy_value(constant_policy(1.0), IntegerMap.constant(0.0), 1.0, x_max)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_identity_payoff(self):
        x_max = truncation_level(1.0, 1.0)
        assert ode_policy_value(constant_policy(1.0), IDENTITY, 1.0, x_max) == pytest.approx(1.0, abs=1e-8)

    def test_optimal_policy_value(self):
        policy = optimal_policy(LOG2_AT_ZERO, 1.0)
        value = ode_policy_value(policy, LOG2_AT_ZERO, 1.0, truncation_level(policy.bound, 1.0))
        assert value == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-8)

    def test_truncation_level(self):
        level = truncation_level(2.0, 1.5)
        assert stats.poisson.sf(level - 1, 3.0) <= 1e-10
        with pytest.raises(TruncationError):
            ode_policy_value(constant_policy(1.0), IDENTITY, 1.0, 3)

    def test_rejects_path_dependent(self):
        with pytest.raises(ValidationError):
            ode_policy_value(last_jump_policy(), IDENTITY, 1.0, 20)


class TestFixedPoint:
    def test_constant_rule_converges_in_one_step(self):
        report = fixed_point_solve(lambda t, x: np.full(np.broadcast(t, x).shape, 1.5), 1.5, 1.0,
                                   n_iter=3, n_traj=50, seed=2)
        assert report['distances'][0] > 0
        assert report['distances'][1] == 0.0
        assert report['converged']
        assert report['max_ratio'] == 0.0

    def test_state_dependent_rule_decays(self):
        report = fixed_point_solve(lambda t, x: np.minimum(1.0 + x, 4.0), 4.0, 0.5, n_iter=4, n_traj=2000, seed=3)
        d = report['distances']
        assert d[-1] < d[0]
        assert report['pass']
        assert report['max_ratio'] <= 0.6

    def test_returns_the_iterated_policy(self):
        report = fixed_point_solve(lambda t, x: np.full(np.broadcast(t, x).shape, 1.5), 1.5, 1.0,
                                   n_iter=2, n_traj=20, seed=2)
        policy = report['policy']
        assert isinstance(policy, IntensityPolicy)
        assert policy.bound == 1.5
        assert_allclose(policy.rate(np.array([0.1, 0.9]), np.array([0, 3])), [1.5, 1.5])

    def test_parity_rule_without_discount_does_not_contract(self):
        # rate flips between 20 and 10 with the parity of X; C = 0 removes the time discount
        def parity(t, x):
            return np.where(np.asarray(x) % 2 == 0, 20.0, 10.0) * np.ones_like(t)
        report = fixed_point_solve(parity, 20.0, 1.0, n_iter=4, n_traj=1000, seed=5, C=0.0)
        assert report['pass'] is False
        assert not report['converged']
        assert report['max_ratio'] > 0.6
        assert len(report['ratios']) <= 4


class TestMarkovPrimitive:
    def test_matches_quadrature_on_segments(self):
        policy = optimal_policy(LOG2_AT_ZERO, 1.0)
        prim = MarkovPrimitive(lambda t, x: cost(policy.rate(t, x)), 1.0, 2)
        starts = np.array([[0.0, 0.13], [0.4, 0.5]])
        ends = np.array([[0.13, 0.71], [0.5, 1.0]])
        levels = np.array([[0, 1], [2, 0]])
        got = prim.segment_integrals(starts, ends, levels)
        for idx in np.ndindex(starts.shape):
            x = int(levels[idx])
            want, _ = quad(lambda s: float(cost(policy.rate(s, x))), starts[idx], ends[idx], epsabs=1e-13)
            assert got[idx] == pytest.approx(want, abs=1e-9)
