import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import exp1

from fracflood.welltest import (
    DimensionlessParams,
    DomainError,
    laplace_pwd,
    stehfest_coefficients,
    stehfest_invert,
    type_curve,
)


def invert(params, t, n_terms=12):
    return stehfest_invert(lambda s: laplace_pwd(s, params), t, n_terms)


class TestStehfestCoefficients:
    def test_n8_matches_classical_table(self):
        expected = [
            Fraction(-1, 3), Fraction(145, 3), -906, Fraction(16394, 3),
            Fraction(-43130, 3), 18730, Fraction(-35840, 3), Fraction(8960, 3),
        ]
        got = stehfest_coefficients(8)
        for g, e in zip(got, expected):
            assert g == pytest.approx(float(e), rel=1e-14)

    def test_weight_identities(self):
        # both identities hold exactly in rational arithmetic; the float
        # residual scales with the alternating coefficient magnitudes
        for n in (4, 8, 12, 16):
            w = stehfest_coefficients(n)
            scale = sum(abs(v) for v in w)
            assert abs(math.fsum(w)) < 1e-14 * scale
            assert abs(math.fsum(v / i for i, v in enumerate(w, 1)) - 1.0) < 1e-14 * scale

    def test_odd_count_rejected(self):
        with pytest.raises(ValueError):
            stehfest_coefficients(11)

    def test_range_enforced(self):
        for n in (2, 22):
            with pytest.raises(ValueError):
                stehfest_coefficients(n)


class TestStehfestInversion:
    def test_one_over_s_is_constant_one(self):
        for t in (0.01, 1.0, 3.7, 1e6):
            assert stehfest_invert(lambda s: 1.0 / s, t) == pytest.approx(1.0, abs=1e-9)

    def test_one_over_s_squared_is_t(self):
        # intrinsic N=12 method error for this pair is 9.6222e-7
        # (exact rational arithmetic), so 2e-6 is the honest bound
        assert stehfest_invert(lambda s: 1.0 / s**2, 1.0) == pytest.approx(1.0, rel=2e-6)
        assert stehfest_invert(lambda s: 1.0 / s**2, 1.0, 16) == pytest.approx(1.0, rel=1e-7)

    def test_exponential_decay(self):
        # relative accuracy degrades as e^-t shrinks below the method's
        # resolution; absolute error stays bounded (measured max 1.9e-4)
        assert stehfest_invert(lambda s: 1.0 / (s + 1.0), 0.1) == pytest.approx(
            math.exp(-0.1), rel=1e-6
        )
        assert stehfest_invert(lambda s: 1.0 / (s + 1.0), 1.0) == pytest.approx(
            math.exp(-1.0), rel=5e-5
        )
        for t in np.linspace(0.1, 10, 34):
            got = stehfest_invert(lambda s: 1.0 / (s + 1.0), t)
            assert got == pytest.approx(math.exp(-t), abs=3e-4)

    def test_nonpositive_time_rejected(self):
        with pytest.raises(ValueError):
            stehfest_invert(lambda s: 1.0 / s, 0.0)


class TestDimensionlessParams:
    def test_from_fractions_complements(self):
        q = DimensionlessParams.from_fractions(0.1, 1e-5, kf0=0.9)
        assert q.omega_m == pytest.approx(0.9)
        assert q.km0 == pytest.approx(0.1)

    def test_storage_sum_enforced(self):
        with pytest.raises(DomainError):
            DimensionlessParams(0.3, 0.6, 1e-5, 1.0, 0.0)

    def test_mobility_sum_enforced(self):
        with pytest.raises(DomainError):
            DimensionlessParams(0.1, 0.9, 1e-5, 0.8, 0.1)

    def test_fracture_must_flow(self):
        with pytest.raises(DomainError):
            DimensionlessParams(0.1, 0.9, 1e-5, 0.0, 1.0)

    def test_crossflow_positive(self):
        with pytest.raises(DomainError):
            DimensionlessParams.from_fractions(0.1, 0.0)

    def test_storage_nonnegative(self):
        with pytest.raises(DomainError):
            DimensionlessParams.from_fractions(0.1, 1e-5, cd=-1.0)

    def test_laplace_variable_positive(self):
        with pytest.raises(DomainError):
            laplace_pwd(0.0, DimensionlessParams.from_fractions(0.1, 1e-5))


# Reference values from an independent arbitrary-precision solve of the
# same Laplace-space system (40-digit Bessel evaluation) inverted with
# Talbot's complex-contour method; disagreement would implicate either
# the Laplace solution or the inversion.
TALBOT_ORACLE = [
    (dict(omega_f=0.1, lambda_ip=1e-5), 1e2, 3.85567820011),
    (dict(omega_f=0.1, lambda_ip=1e-5), 1e4, 5.78262505604),
    (dict(omega_f=0.1, lambda_ip=1e-5), 1e6, 7.31229949779),
    (dict(omega_f=0.1, lambda_ip=1e-5), 1e8, 9.6148797707),
    (dict(omega_f=0.05, lambda_ip=1e-6, cd=1000.0, skin=5.0), 1e4, 6.52916928878),
    (dict(omega_f=0.05, lambda_ip=1e-6, cd=1000.0, skin=5.0), 1e6, 12.4047611078),
    (dict(omega_f=0.05, lambda_ip=1e-6, cd=1000.0, skin=5.0), 1e8, 14.6147336381),
    (dict(omega_f=0.1, lambda_ip=1e-5, kf0=0.9), 1e2, 3.39677982203),
    (dict(omega_f=0.1, lambda_ip=1e-5, kf0=0.9), 1e4, 5.53038367589),
    (dict(omega_f=0.1, lambda_ip=1e-5, kf0=0.9), 1e6, 7.31298699799),
    (dict(omega_f=0.2, lambda_ip=1e-4, kf0=0.8, cd=100.0, skin=2.0), 1e3, 4.68449737391),
    (dict(omega_f=0.2, lambda_ip=1e-4, kf0=0.8, cd=100.0, skin=2.0), 1e5, 8.15335133195),
    (dict(omega_f=0.2, lambda_ip=1e-4, kf0=0.8, cd=100.0, skin=2.0), 1e7, 10.4634830432),
]


class TestPressureSolution:
    @pytest.mark.parametrize("kw,t,expected", TALBOT_ORACLE)
    def test_against_independent_inversion(self, kw, t, expected):
        q = DimensionlessParams.from_fractions(**kw)
        assert invert(q, t) == pytest.approx(expected, rel=1e-4)

    def test_late_time_log_approximation(self):
        q = DimensionlessParams.from_fractions(0.5, 1e8)
        approx = 0.5 * (math.log(1e8) + 0.80907)
        assert invert(q, 1e8) == pytest.approx(approx, rel=1e-2)

    def test_strong_crossflow_limit_is_line_source(self):
        # exponential-integral solution; finite wellbore radius keeps the
        # two apart by ~0.5% at t_D=100, decaying as t_D grows
        q = DimensionlessParams.from_fractions(0.5, 1e8)
        for td in (150.0, 1e3, 1e4, 1e6):
            oracle = 0.5 * exp1(1.0 / (4.0 * td))
            assert invert(q, td) == pytest.approx(oracle, rel=5e-3)

    def test_skin_is_additive_at_late_time(self):
        base = DimensionlessParams.from_fractions(0.1, 1e-5)
        skinned = DimensionlessParams.from_fractions(0.1, 1e-5, skin=5.0)
        assert invert(skinned, 1e8) - invert(base, 1e8) == pytest.approx(5.0, abs=1e-6)

    def test_crossflow_relieves_drawdown(self):
        for td in (1e4, 1e5, 1e6):
            ps = [
                invert(DimensionlessParams.from_fractions(0.1, lam), td)
                for lam in (1e-7, 1e-6, 1e-5, 1e-4, 1e-3)
            ]
            assert all(b <= a + 1e-9 for a, b in zip(ps, ps[1:]))

    def test_two_mode_converges_to_single_mode(self):
        near = DimensionlessParams.from_fractions(0.1, 1e-5, kf0=1.0 - 1e-6)
        limit = DimensionlessParams.from_fractions(0.1, 1e-5, kf0=1.0)
        for t in np.logspace(1, 9, 17):
            pa, pb = invert(near, t), invert(limit, t)
            assert abs(pa - pb) / pb < 1e-3

    def test_storage_flattens_early_response(self):
        stored = DimensionlessParams.from_fractions(0.1, 1e-5, cd=1e4)
        free = DimensionlessParams.from_fractions(0.1, 1e-5)
        assert invert(stored, 10.0) < invert(free, 10.0)


class TestTypeCurve:
    def test_drawdown_monotone(self):
        q = DimensionlessParams.from_fractions(0.1, 1e-5, kf0=0.9)
        tc = type_curve(q, np.logspace(0, 9, 91))
        assert np.all(np.diff(tc[:, 1]) > 0.0)

    def test_dual_porosity_derivative_signature(self):
        q = DimensionlessParams.from_fractions(0.1, 1e-5)
        td = np.logspace(0, 9, 181)
        tc = type_curve(q, td)
        deriv = tc[:, 2]
        early = deriv[(td >= 50) & (td <= 500)]
        late = deriv[td >= 1e8]
        trough = deriv[(td > 500) & (td < 1e8)].min()
        assert np.any(np.abs(early - 0.5) < 0.01)
        assert np.all(np.abs(late - 0.5) < 0.01)
        assert trough < 0.25

    def test_input_validation(self):
        q = DimensionlessParams.from_fractions(0.1, 1e-5)
        with pytest.raises(ValueError):
            type_curve(q, [1.0])
        with pytest.raises(ValueError):
            type_curve(q, [10.0, 5.0])
        with pytest.raises(ValueError):
            type_curve(q, [-1.0, 5.0])

    def test_row_layout(self):
        q = DimensionlessParams.from_fractions(0.1, 1e-5)
        td = np.logspace(2, 4, 9)
        tc = type_curve(q, td)
        assert tc.shape == (9, 3)
        assert np.array_equal(tc[:, 0], td)
        assert tc[4, 1] == pytest.approx(invert(q, td[4]), rel=1e-12)
