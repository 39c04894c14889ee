import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils.error_handlers import ValidationError
from utils.halfmeasure import (ZERO_MEASURE, HalfLineMeasure, LOG_CONCAVE_LIBRARY, dirac, exponential,
                               interval_mass, named_measure, uniform)
from utils.laplace import (GtDensity, MeasurementFn, derivative_decomposition, equivalence_check,
                           euler_maclaurin_check, measurement, measurement_curve, poisson_limit,
                           post_inversion_sum, propagation_check, root_convexity_check, signed_derivative,
                           signed_derivative_terms, signed_derivative_with_scale, taylor_coeffs,
                           taylor_shift_consistency)
from utils.seqcore import Quadruple, enumerate_quadruples

Q0112 = Quadruple(0, 1, 1, 2)


class SqrtSource:
    """a_t(0) = t^(-1/2), so h(t) = sqrt(t) is concave"""

    def log_moments(self, t, ns):
        ns = np.atleast_1d(np.asarray(ns, dtype=np.float64))
        return np.full(ns.shape, -0.5 * math.log(t)), np.ones(ns.shape)


class TestTaylorCoefficients:
    def test_exponential(self):
        assert_allclose(taylor_coeffs(exponential(1), 1.0, 2).values, [0.5, 0.25, 0.125], rtol=1e-13)

    def test_dirac(self):
        x0, t = 1.5, 0.7
        expected = [x0 ** n * math.exp(-t * x0) / math.factorial(n) for n in range(8)]
        assert_allclose(taylor_coeffs(dirac(x0), t, 7).values, expected, rtol=1e-13)

    def test_zero_measure(self):
        assert taylor_coeffs(ZERO_MEASURE, 1.0, 4).values == (0.0,) * 5

    def test_rejects(self):
        with pytest.raises(ValidationError):
            taylor_coeffs(uniform(1, 2), 0.0, 3)
        with pytest.raises(ValidationError):
            taylor_coeffs(uniform(1, 2), 1.0, -1)


class TestMeasurement:
    @pytest.mark.parametrize('alpha', [0.5, 1.0, 2.0])
    def test_exponential_vanishes(self, alpha):
        mu = exponential(alpha)
        for t in (0.5, 1.0, 3.0):
            for q in enumerate_quadruples(6):
                scale = taylor_coeffs(mu, t, q.n)
                assert abs(measurement(mu, q, t)) <= 1e-14 * scale[q.l] * scale[q.m]

    def test_dirac(self):
        assert measurement(dirac(1), Q0112, 1.0) == pytest.approx(math.exp(-2.0) / 2.0, rel=1e-13)

    def test_degenerate(self):
        assert measurement(uniform(1, 2), Quadruple(1, 1, 3, 3), 1.0) == 0.0

    def test_curve(self):
        frame = measurement_curve(uniform(1, 2), Q0112, [0.5, 1.0])
        assert list(frame.columns) == ['t', 'c']
        assert frame['c'].iloc[1] == measurement(uniform(1, 2), Q0112, 1.0)

    def test_cached_function(self):
        fn = MeasurementFn(uniform(1, 2), Q0112)
        assert fn(2.0) == fn(2.0)
        assert 2.0 in fn._cache


class TestDerivatives:
    def test_decomposition_examples(self):
        assert derivative_decomposition(Q0112) == [(1, Quadruple(1, 1, 2, 2)), (3, Quadruple(0, 1, 2, 3))]
        assert derivative_decomposition(Quadruple(2, 2, 4, 4)) == []
        assert [c for c, _ in derivative_decomposition(Quadruple(0, 1, 2, 3))] == [1, 1, 3]

    def test_zeroth_derivative(self):
        assert signed_derivative(uniform(1, 2), Q0112, 1.3, 0) == pytest.approx(
            measurement(uniform(1, 2), Q0112, 1.3), rel=1e-14)
        assert signed_derivative_terms(Q0112, 0) == {Q0112: 1}
        with pytest.raises(ValidationError):
            signed_derivative_terms(Q0112, -1)

    def test_exponential_derivatives_vanish(self):
        for j in range(5):
            value, scale = signed_derivative_with_scale(exponential(1), Quadruple(0, 1, 2, 3), 1.0, j)
            assert abs(value) <= 1e-13 * scale

    def test_first_derivative_against_finite_difference(self):
        mu, t, h = uniform(1, 2), 1.0, 1e-4
        fd = -(measurement(mu, Q0112, t + h) - measurement(mu, Q0112, t - h)) / (2 * h)
        assert signed_derivative(mu, Q0112, t, 1) == pytest.approx(fd, rel=1e-6)

    def test_random_finite_difference_cross_check(self, rng):
        names = [name for name in LOG_CONCAVE_LIBRARY if not name.startswith('exponential')]
        quads = enumerate_quadruples(6)
        h = 1e-4
        for _ in range(50):
            mu = named_measure(names[int(rng.integers(len(names)))])
            q = quads[int(rng.integers(len(quads)))]
            t = float(rng.uniform(0.5, 2.0))
            fd = -(measurement(mu, q, t + h) - measurement(mu, q, t - h)) / (2 * h)
            value, scale = signed_derivative_with_scale(mu, q, t, 1)
            assert abs(value - fd) <= 1e-6 * scale, (mu, q, t)

    def test_library_complete_monotonicity(self, library_measures):
        quads = enumerate_quadruples(8)
        for name, mu in library_measures.items():
            for q in quads:
                for t in (0.5, 1.0, 2.0):
                    for j in range(5):
                        value, scale = signed_derivative_with_scale(mu, q, t, j)
                        assert value >= -1e-12 * scale, (name, q, t, j)


class TestPostInversion:
    def test_dirac_tails(self):
        assert post_inversion_sum(dirac(1), 100.0, 2.0) >= 1.0 - 1e-10
        assert post_inversion_sum(dirac(1), 100.0, 0.5) <= 1e-10
        assert post_inversion_sum(dirac(1), 1e4, 1.0) == pytest.approx(0.5, abs=0.02)

    def test_poisson_limit(self):
        assert poisson_limit(2.0, 100.0) > 1.0 - 1e-10
        assert poisson_limit(0.5, 100.0) < 1e-10
        assert poisson_limit(1.0, 1e4) == pytest.approx(0.5, abs=0.01)

    def test_uniform_recovery(self):
        mu = uniform(1, 2)
        for R in (1.2, 1.5, 1.8):
            target = interval_mass(mu, 0.0, R, half_weight_at_hi=True)
            assert abs(post_inversion_sum(mu, 400.0, R) - target) <= 0.05

    def test_rejects(self):
        with pytest.raises(ValidationError):
            post_inversion_sum(dirac(1), 10.0, 0.0)

    def test_euler_maclaurin(self):
        for t in (10.0, 50.0, 100.0):
            report = euler_maclaurin_check(uniform(1, 2), t, 3.0 if t == 50.0 else 1.5)
            assert report['pass'], report

    @pytest.mark.parametrize('t', [1.0, 10.0, 100.0])
    def test_gt_log_concave(self, t):
        assert GtDensity(uniform(1, 2), t).certify_log_concave()['pass']

    def test_gt_needs_mass_off_zero(self):
        with pytest.raises(ValidationError):
            GtDensity(ZERO_MEASURE, 1.0)
        with pytest.raises(ValidationError):
            GtDensity(dirac(0.0), 1.0)

    def test_gt_interval_beyond_table(self):
        gt = GtDensity(uniform(1, 2), 1.0, n_max=10)
        with pytest.raises(ValidationError):
            gt.interval_mass(20.0)
        assert gt(-1.0)[0] == 0.0


class TestRootConvexity:
    @pytest.mark.parametrize('n', [1, 3])
    def test_exponential_affine(self, n):
        report = root_convexity_check(exponential(1), n)
        assert report['pass']
        assert abs(report['min_second_difference']) <= 1e-9

    def test_uniform(self):
        grid = np.geomspace(0.1, 5.0, 33)
        assert root_convexity_check(uniform(1, 2), 2, grid)['pass']

    def test_concave_root_detected(self):
        report = root_convexity_check(SqrtSource(), 1)
        assert not report['pass']
        assert report['violation_t'] is not None

    def test_rejects(self):
        with pytest.raises(ValidationError):
            root_convexity_check(dirac(0.0), 2)
        with pytest.raises(ValidationError):
            root_convexity_check(uniform(1, 2), 0)
        with pytest.raises(ValidationError):
            root_convexity_check(uniform(1, 2), 1, [0.5, 1.0])


class TestStructuralChecks:
    def test_propagation(self):
        report = propagation_check(uniform(1, 2), 2.0)
        assert report['pass'] and report['base_pass']
        assert len(report['checked']) == 3

    def test_taylor_shift(self):
        report = taylor_shift_consistency(uniform(1, 2), 1.0, 2.0, N=80)
        assert report['pass'], report
        assert report['compared'] == 41
        with pytest.raises(ValidationError):
            taylor_shift_consistency(uniform(1, 2), 2.0, 1.0)

    def test_equivalence(self):
        for name in ('uniform(1,2)', 'triangle(0,2)', 'dirac(2.5)'):
            report = equivalence_check(named_measure(name), 1.0)
            assert report['pass'] and report['sequence_pass'] and report['measurements_pass']

    def test_equivalence_on_bimodal_source(self):
        report = equivalence_check(HalfLineMeasure(atoms=((0.1, 1.0), (10.0, 1.0))), 0.1)
        assert report['pass']
        assert not report['sequence_pass']
        assert report['first_negative'] is not None
