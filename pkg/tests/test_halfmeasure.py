import math

import numpy as np
import pytest
import sympy
from numpy.testing import assert_allclose
from scipy import integrate

from utils.error_handlers import DivergenceError, ValidationError
from utils.halfmeasure import (ZERO_MEASURE, GammaMoments, HalfLineMeasure, MomentTable, Piece, as_unsigned,
                               certify_log_concave_measure, certify_nonnegative, combine, convolve, density,
                               dirac, exact_convolution_density, exponential, exponential_tilt, gamma,
                               interval_mass, load_measure, load_source, measure_from_dict, moment, moments,
                               monomial_reweight, named_measure, named_source, power, scale, total_mass,
                               total_variation, triangle, uniform)
from utils.seqcore import is_log_concave


class TestConstruction:
    def test_piece_bounds(self):
        with pytest.raises(ValidationError):
            Piece(2.0, 1.0, (1.0,))
        with pytest.raises(DivergenceError):
            Piece(0.0, math.inf, (1.0,), 0.0)

    def test_global_and_local_coefficients(self):
        piece = Piece.from_global(1.0, 2.0, (0.0, 0.0, 1.0))
        assert_allclose(piece.coeffs, (1.0, 2.0, 1.0))
        assert_allclose(piece.global_coeffs(), (0.0, 0.0, 1.0), atol=1e-15)
        assert piece.evaluate(1.5) == pytest.approx(2.25)

    def test_overlap_rejected(self):
        with pytest.raises(ValidationError):
            HalfLineMeasure(pieces=(Piece(0, 2, (1.0,)), Piece(1, 3, (1.0,))))

    def test_negative_density_needs_signed_flag(self):
        pieces = (Piece(0.0, 1.0, (1.0, -2.0)),)
        with pytest.raises(ValidationError):
            HalfLineMeasure(pieces=pieces)
        mu = HalfLineMeasure(pieces=pieces, signed=True)
        report = certify_nonnegative(mu)
        assert not report['pass']
        assert report['most_negative'] == pytest.approx(-1.0)
        assert total_variation(mu) == pytest.approx(0.5)
        with pytest.raises(ValidationError):
            as_unsigned(mu)

    def test_atoms_merge(self):
        mu = HalfLineMeasure(atoms=((1.0, 0.25), (1.0, 0.25), (2.0, 0.0)))
        assert mu.atoms == ((1.0, 0.5),)

    def test_named_measures(self):
        assert named_measure('dirac(2)').atoms == ((2.0, 1.0),)
        assert total_mass(named_measure('triangle(0, 2)')) == pytest.approx(1.0)
        assert isinstance(named_source('gamma(2.5,1)'), GammaMoments)
        assert isinstance(load_source('gamma(2,1)'), HalfLineMeasure)
        for bad in ('foo(1)', 'uniform(1)', 'uniform(a,b)', 'uniform 1,2'):
            with pytest.raises(ValidationError):
                named_measure(bad)
        with pytest.raises(ValidationError):
            gamma(2.5, 1.0)

    def test_measure_file(self, write_json):
        path = write_json('mu.json', {'atoms': [{'x': 0.5, 'w': 1}],
                                      'pieces': [{'a': 1, 'b': 2, 'coeffs': [0, 1]},
                                                 {'a': 2, 'b': 'inf', 'coeffs': [1], 'rate': 1}]})
        mu = load_measure(path)
        assert mu.atoms == ((0.5, 1.0),)
        assert_allclose(density(mu, [1.5, 3.0]), [1.5, math.exp(-3.0)])
        with pytest.raises(ValidationError):
            measure_from_dict({'pieces': [{'a': 1, 'coeffs': [1]}]})


class TestMoments:
    def test_examples(self):
        assert moment(dirac(2), 1.0, 3) == pytest.approx(4.0 / 3.0 * math.exp(-2.0), rel=1e-14)
        assert moment(exponential(1), 1.0, 2) == pytest.approx(1.0 / 8.0, rel=1e-13)
        assert moment(uniform(1, 2), 1.0, 0) == pytest.approx(math.exp(-1) - math.exp(-2), rel=1e-13)

    def test_zero_t_on_compact_support(self):
        assert moment(uniform(1, 2), 0.0, 1) == pytest.approx(1.5, rel=1e-13)

    def test_exponential_closed_form(self):
        for t in (0.25, 1.0, 4.0):
            expected = (1.0 + t) ** -(np.arange(31) + 1.0)
            assert_allclose(moments(exponential(1), t, 30), expected, rtol=1e-12)

    def test_gamma_closed_form_matches_pieces(self):
        for t in (0.5, 2.0):
            assert_allclose(moments(GammaMoments(3, 2), t, 20), moments(gamma(3, 2), t, 20), rtol=1e-12)
        assert moment(GammaMoments(2, 1), 1.0, 0) == pytest.approx(0.25)
        with pytest.raises(ValidationError):
            GammaMoments(0.0, 1.0)

    def test_zero_measure(self):
        assert_allclose(moments(ZERO_MEASURE, 1.0, 5), np.zeros(6))

    def test_linearity(self, rng):
        mu1, mu2 = uniform(1, 2), triangle(0, 2)
        for _ in range(20):
            alpha, beta = rng.uniform(0.1, 3.0, 2)
            mixed = combine(mu1, mu2, alpha, beta)
            t = rng.uniform(0.1, 4.0)
            n = int(rng.integers(0, 15))
            expected = alpha * moment(mu1, t, n) + beta * moment(mu2, t, n)
            assert moment(mixed, t, n) == pytest.approx(expected, rel=1e-12)

    def test_unbounded_divergence(self):
        with pytest.raises(DivergenceError):
            moment(exponential(1), -2.0, 0)

    def test_moment_table(self):
        table = MomentTable.build(exponential(2), 0.0, 3)
        assert_allclose(table.values, [0.5 ** n for n in range(4)], rtol=1e-13)
        with pytest.raises(ValidationError):
            MomentTable.build(exponential(2), -1.0, 3)

    def test_library_tables_are_log_concave(self, library_measures):
        for name, mu in library_measures.items():
            for t in (0.25, 0.5, 1.0, 2.0, 4.0):
                report = is_log_concave(moments(mu, t, 50), 1e-12)
                assert report['pass'], (name, t, report['violation_index'])


class TestTransforms:
    def test_monomial_reweight(self):
        assert monomial_reweight(uniform(1, 2), 0) == uniform(1, 2)
        assert_allclose(density(monomial_reweight(uniform(1, 2), 1), [1.25, 1.75]), [1.25, 1.75])
        assert monomial_reweight(dirac(3), 2).atoms == ((3.0, 4.5),)
        with pytest.raises(ValidationError):
            monomial_reweight(dirac(3), -1)

    def test_exponential_tilt(self):
        assert exponential_tilt(uniform(1, 2), 0.0) == uniform(1, 2)
        assert exponential_tilt(dirac(1), 2.0).atoms == ((1.0, math.exp(-2.0)),)
        twice = exponential_tilt(exponential_tilt(uniform(1, 2), 1.0), 1.0)
        once = exponential_tilt(uniform(1, 2), 2.0)
        assert total_mass(twice) == pytest.approx(total_mass(once), rel=1e-12)
        assert interval_mass(twice, 1.0, 1.5) == pytest.approx(interval_mass(once, 1.0, 1.5), rel=1e-12)
        with pytest.raises(DivergenceError):
            exponential_tilt(exponential(1), -2.0)

    def test_scale_marks_signed(self):
        assert scale(uniform(0, 1), -1.0).signed
        assert total_mass(scale(uniform(0, 1), 3.0)) == pytest.approx(3.0)


class TestConvolution:
    def test_atoms(self):
        assert convolve(dirac(1.5), dirac(2)).atoms == ((3.5, 1.0),)
        shifted = convolve(dirac(1), uniform(0, 1))
        assert_allclose(density(shifted, [1.5, 0.5]), [1.0, 0.0])

    def test_uniform_triangle(self):
        conv = convolve(uniform(0, 1), uniform(0, 1))
        assert_allclose(density(conv, [0.25, 0.5, 1.5, 1.75]), [0.25, 0.5, 0.5, 0.25], atol=1e-14)
        assert total_mass(conv) == pytest.approx(1.0, rel=1e-13)

    def test_linear_pieces(self):
        mu = power(1, 1, 2)
        assert density(convolve(mu, mu), 3.0)[0] == pytest.approx(13.0 / 6.0, rel=1e-12)
        exact = exact_convolution_density([(1, 2, [0, 1])], [(1, 2, [0, 1])], 3)
        assert exact == sympy.Rational(13, 6)

    def test_common_rate_required(self):
        with pytest.raises(ValidationError):
            convolve(exponential(1), uniform(0, 1))

    def test_laplace_of_convolution(self):
        pairs = [(uniform(1, 2), triangle(0, 2)), (power(2, 1, 3), uniform(0, 1)), (exponential(1), gamma(2, 1)),
                 (dirac(0.5), uniform(1, 2))]
        for mu1, mu2 in pairs:
            conv = convolve(mu1, mu2)
            for t in (0.5, 1.0, 2.0):
                assert moment(conv, t, 0) == pytest.approx(moment(mu1, t, 0) * moment(mu2, t, 0), rel=1e-10)

    def test_against_quadrature(self, rng):
        def random_measure():
            a = rng.uniform(0.0, 2.0)
            mid = a + rng.uniform(0.2, 1.5)
            b = mid + rng.uniform(0.2, 1.5)
            return HalfLineMeasure(pieces=(Piece(a, mid, tuple(rng.uniform(0.0, 2.0, rng.integers(1, 4)))),
                                           Piece(mid, b, tuple(rng.uniform(0.0, 2.0, rng.integers(1, 4))))))

        for _ in range(100):
            mu1, mu2 = random_measure(), random_measure()
            conv = convolve(mu1, mu2)
            lo = mu1.pieces[0].a + mu2.pieces[0].a
            hi = mu1.pieces[-1].b + mu2.pieces[-1].b
            breaks1 = [p.a for p in mu1.pieces] + [mu1.pieces[-1].b]
            breaks2 = [p.a for p in mu2.pieces] + [mu2.pieces[-1].b]
            for s in rng.uniform(lo, hi, 5):
                cuts = sorted(x for x in breaks1 + [s - y for y in breaks2] if 0.0 < x < s)
                oracle, _ = integrate.quad(lambda x: density(mu1, x)[0] * density(mu2, s - x)[0], 0.0, s,
                                           points=cuts or None, epsabs=1e-13, epsrel=1e-12, limit=200)
                assert density(conv, s)[0] == pytest.approx(oracle, rel=1e-8, abs=1e-10)


class TestLogConcaveCertificate:
    @pytest.mark.parametrize('mu', [dirac(5), uniform(1, 2), power(1, 0, 1), exponential(1), gamma(2, 1),
                                    triangle(0, 2), ZERO_MEASURE])
    def test_pass(self, mu):
        assert certify_log_concave_measure(mu)['pass']

    def test_mixed(self):
        mu = HalfLineMeasure(atoms=((0.0, 1.0),), pieces=power(2, 0, 1).pieces)
        report = certify_log_concave_measure(mu)
        assert not report['pass']
        assert report['kind'] == 'mixed'

    def test_failures(self):
        assert 'gap' in certify_log_concave_measure(combine(uniform(0, 1), uniform(2, 3)))['reason']
        assert certify_log_concave_measure(HalfLineMeasure(atoms=((1.0, 1.0), (2.0, 1.0))))['reason'] == '2 atoms'
        dip = HalfLineMeasure(pieces=(Piece(0.0, 2.0, (1.0, -2.0, 1.5)),))
        assert certify_log_concave_measure(dip)['reason'] == 'log-density is not concave'


class TestIntervalMass:
    def test_examples(self):
        assert interval_mass(dirac(1.2), 0.0, 1.2, half_weight_at_hi=True) == 0.5
        assert interval_mass(dirac(1.2), 0.0, 1.2) == 0.0
        assert interval_mass(uniform(1, 2), 0.0, 1.5) == pytest.approx(0.5)
        assert interval_mass(ZERO_MEASURE, 0.0, 3.0) == 0.0
        assert total_mass(exponential(2)) == pytest.approx(1.0, rel=1e-13)

    def test_invalid_interval(self):
        with pytest.raises(ValidationError):
            interval_mass(uniform(1, 2), 2.0, 1.0)
