import math

import pytest

from utils.berwald import (FIGURE1_QUAD, batch_certify, bb_transform, complete_monotonicity_certificate,
                           figure1_exact, figure1_table, gamma_case_check, gamma_measurement_constant,
                           nu_density_frame, tilt_equivariance_check, verify_laplace_identity)
from utils.error_handlers import CertificationError, PreconditionError
from utils.halfmeasure import (HalfLineMeasure, dirac, exponential, gamma, total_mass, total_variation,
                               uniform)
from utils.laplace import measurement
from utils.seqcore import Quadruple, enumerate_quadruples

BIMODAL = HalfLineMeasure(atoms=((0.1, 1.0), (10.0, 1.0)))


class TestTransform:
    def test_uniform_shape(self):
        report = figure1_table(n_points=21)
        assert report['pass']
        assert report['max_abs_error'] <= 1e-8
        assert report['density_at_3'] == pytest.approx(1.0, abs=1e-10)
        assert report['rational_exact']
        assert len(report['table']) == 21

    def test_exact_density(self):
        assert figure1_exact(3) == 1
        assert figure1_exact(2) == 0
        assert figure1_exact(5) == 0
        assert figure1_exact('5/2') * 8 == 3

    def test_uniform_mass_equals_measurement_at_zero_rate(self):
        bb = bb_transform(uniform(1, 2), FIGURE1_QUAD)
        assert bb.certified
        # a_0(1)^2 - a_0(0) a_0(2) for uniform[1,2]
        assert total_mass(bb.nu) == pytest.approx(1.5 ** 2 - 7.0 / 6.0, rel=1e-12)

    def test_dirac(self):
        nu = bb_transform(dirac(1), FIGURE1_QUAD).nu
        assert not nu.pieces
        assert len(nu.atoms) == 1
        x, w = nu.atoms[0]
        assert x == pytest.approx(2.0)
        assert w == pytest.approx(0.5)

    @pytest.mark.parametrize('q', enumerate_quadruples(4))
    def test_exponential_transform_vanishes(self, q):
        assert total_variation(bb_transform(exponential(1), q).nu) <= 1e-12

    def test_requires_log_concave_source(self):
        with pytest.raises(PreconditionError):
            bb_transform(BIMODAL, FIGURE1_QUAD)

    def test_negative_transform_rejected(self):
        with pytest.raises(CertificationError) as info:
            bb_transform(BIMODAL, FIGURE1_QUAD, require_log_concave=False)
        assert info.value.value < 0

    def test_density_frame(self):
        frame = nu_density_frame(bb_transform(uniform(1, 2), FIGURE1_QUAD), n_points=5)
        assert list(frame['x']) == [2.0, 2.5, 3.0, 3.5, 4.0]
        assert frame['density'].iloc[2] == pytest.approx(1.0)
        assert nu_density_frame(bb_transform(dirac(1), FIGURE1_QUAD)).empty


class TestLaplaceIdentity:
    @pytest.mark.parametrize('q', enumerate_quadruples(4))
    def test_uniform(self, q):
        report = verify_laplace_identity(bb_transform(uniform(1, 2), q))
        assert report['pass'], report

    def test_gamma_source(self):
        report = verify_laplace_identity(bb_transform(gamma(2, 1), Quadruple(0, 1, 2, 3)))
        assert report['pass'], report

    def test_tilt_equivariance(self):
        assert tilt_equivariance_check(uniform(1, 2), FIGURE1_QUAD)['pass']


class TestCompleteMonotonicity:
    def test_uniform(self):
        report = complete_monotonicity_certificate(uniform(1, 2), Quadruple(0, 1, 2, 3))
        assert report['pass']
        assert report['failures'] == []
        assert report['min_relative_value'] >= -1e-12

    def test_bimodal_fails(self):
        report = complete_monotonicity_certificate(BIMODAL, FIGURE1_QUAD, t_grid=(0.1,), j_max=0)
        assert not report['pass']
        assert report['failures'][0]['j'] == 0


class TestGammaCase:
    @pytest.mark.parametrize('p', [0.5, 1.5, 2.5])
    def test_closed_form(self, p):
        report = gamma_case_check(p, Quadruple(0, 1, 2, 3), [0.25, 1.0, 4.0])
        assert report['pass'], report
        # p < 1 is not log-concave
        assert (report['constant'] > 0) == (p > 1)

    def test_constant_matches_piece_form(self):
        q, t = Quadruple(0, 1, 1, 2), 1.5
        const = gamma_measurement_constant(2.0, q, beta=2.0)
        assert measurement(gamma(2, 2), q, t) == pytest.approx(const * (t + 2.0) ** -(q.l + q.m + 4), rel=1e-10)

    def test_exponential_constant_is_zero(self):
        assert gamma_measurement_constant(1.0, Quadruple(0, 1, 1, 2)) == pytest.approx(0.0, abs=1e-15)


class TestBatch:
    def test_quads_override(self):
        report = batch_certify(['uniform(1,2)', 'dirac(1)'], quads=[FIGURE1_QUAD], j_max=2)
        assert report['pass']
        assert report['count'] == 2
        assert [row['measure'] for row in report['rows']] == ['uniform(1,2)', 'dirac(1)']

    def test_threads_preserve_order(self):
        measures = ['uniform(1,2)', 'triangle(0,2)', 'exponential(1)']
        serial = batch_certify(measures, n_max=3, j_max=2)
        threaded = batch_certify(measures, n_max=3, j_max=2, threads=3)
        assert [(r['measure'], r['q']) for r in serial['rows']] == [(r['measure'], r['q']) for r in threaded['rows']]
        assert serial['pass'] and threaded['pass']
        assert serial['count'] == 3 * len(enumerate_quadruples(3))
        assert math.isclose(serial['rows'][0]['laplace_rel_error'], threaded['rows'][0]['laplace_rel_error'])
