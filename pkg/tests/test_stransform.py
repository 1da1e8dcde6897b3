import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import binom

from djs.activations import get_activation, nu_K, q_fixed_point
from djs.errors import ConfigError
from djs.measures import SpectralMeasure, dirac, mp_reference, stieltjes
from djs.solver import diamond
from djs.stransform import (
    MomentSeries,
    branch_range,
    check_product_law,
    functional_inverse,
    moment_gen,
    penfo_moments,
    psi,
    s_transform,
    solve_penfo,
)

D1 = dirac(1.0)


# -- truncated power series oracle ----------------------------------------------


def _mul(a, b, n):
    return np.convolve(a, b)[:n]


def _pow(a, p, n):
    """``a**p`` for a series with ``a[0] > 0``."""
    u = np.zeros(n)
    u[1:] = a[1:n] / a[0]
    out = np.zeros(n)
    term = np.zeros(n)
    term[0] = 1.0
    for j in range(n):
        out += binom(p, j) * term
        term = _mul(term, u, n)
    return a[0] ** p * out


def _compose_mgen(mu, w, n):
    """``sum_k m_k(mu) w^k`` for a series ``w`` without constant term."""
    out = np.zeros(n)
    wk = np.zeros(n)
    wk[0] = 1.0
    for k in range(1, n):
        wk = _mul(wk, w, n)
        out += mu.moment(k) * wk
    return out


def series_moments(mu, L, order):
    """Moments of the L-layer law from the equal-width equation.

    With ``g = m / z`` the argument ``z^{1/L} Psi_L(m)`` equals
    ``z (1 + m)^{1/L} g^{1 - 1/L}``, which has no fractional powers of ``z``.
    Iterating the equation on truncated series contracts every coefficient
    geometrically (rate about ``1 - 1/L``), so a few hundred passes reach
    machine precision.
    """
    n = order + 1
    g = np.zeros(n)
    g[0] = mu.moment(1) ** L
    for _ in range(400):
        m = np.concatenate([[0.0], g[:-1]])
        onep = m.copy()
        onep[0] += 1.0
        w = _mul(_pow(onep, 1.0 / L, n), _pow(g, 1.0 - 1.0 / L, n), n)
        w = np.concatenate([[0.0], w[:-1]])
        m_new = _compose_mgen(mu, w, n)
        g = np.append(m_new[1:], 0.0)
    return g[:order].tolist()


def fuss_catalan(L, k):
    return math.comb((L + 1) * k, k) / (L * k + 1)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_series_oracle_gives_fuss_catalan(L):
    got = series_moments(D1, L, 5)
    assert got == pytest.approx([fuss_catalan(L, k) for k in range(1, 6)], rel=1e-12)


# -- moment generating function ------------------------------------------------


class TestMomentGen:
    def test_examples(self):
        assert moment_gen(D1, 0.5) == pytest.approx(1.0)
        assert moment_gen(dirac(0.0), 0.3 + 0.2j) == 0

    def test_stieltjes_identity(self):
        mp = mp_reference(1.0)
        z = -0.1
        assert abs(moment_gen(mp, z) - (-1 - stieltjes(mp, 1 / z) / z)) < 1e-12

    def test_pole_raises(self):
        from djs.errors import NumericalError

        with pytest.raises(NumericalError):
            moment_gen(dirac(2.0), 0.5)

    def test_moment_series(self):
        ms = MomentSeries.from_measure(mp_reference(1.0))
        assert ms[0] == 1 and ms[2] == pytest.approx(2.0, abs=1e-8)
        assert ms.hankel_ok()
        assert ms.evaluate(0.01) == pytest.approx(moment_gen(mp_reference(1.0), 0.01), abs=1e-12)
        with pytest.raises(ConfigError):
            MomentSeries((1.0, 2.0))

    def test_hankel_detects_bad_sequence(self):
        assert not MomentSeries((1.0, 0.5) + (1.0,) * 6).hankel_ok()


class TestFunctionalInverse:
    def test_dirac(self):
        assert functional_inverse(D1, 1.0) == pytest.approx(0.5, abs=1e-12)
        assert functional_inverse(dirac(2.0), 1.0) == pytest.approx(0.25, abs=1e-12)

    def test_mp(self):
        assert functional_inverse(mp_reference(1.0), 1.0) == pytest.approx(0.25, abs=1e-9)

    def test_out_of_branch(self):
        # delta_1: m ranges over (-1, inf) on z < 1
        with pytest.raises(ConfigError, match="branch"):
            functional_inverse(D1, -1.5)
        mu = SpectralMeasure([0.0, 1.0], [0.5, 0.5])
        assert branch_range(mu)[0] == pytest.approx(-0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-0.9, 20.0))
    def test_round_trip(self, m):
        mu = SpectralMeasure([0.2, 1.0, 3.0], [0.3, 0.3, 0.4])
        z = functional_inverse(mu, m, tol=1e-12)
        assert abs(moment_gen(mu, z) - m) < 10 * 1e-12 * max(1, abs(m)) + 4 * np.finfo(float).eps * abs(
            z) * 1e3


class TestSTransform:
    def test_dirac(self):
        for m in (0.1, 0.5, 2.0):
            assert s_transform(D1, m) == pytest.approx(1.0, abs=1e-12)
            assert s_transform(dirac(3.0), m) == pytest.approx(1 / 3, abs=1e-12)

    def test_mp(self):
        mp = mp_reference(1.0)
        for m in (0.1, 0.5, 1.0):
            assert abs(s_transform(mp, m) - 1 / (1 + m)) < 1e-6

    def test_zero_m(self):
        with pytest.raises(ConfigError):
            s_transform(D1, 0.0)


class TestProductLaw:
    def test_identity_chain(self):
        rep = check_product_law(D1, D1, diamond(D1, D1))
        assert rep.max_residual < 1e-3
        assert len(rep.to_dict()["residuals"]) == len(rep.m_points)

    def test_hard_tanh_one_layer(self):
        K = nu_K(get_activation("hard-tanh"), 0.7)
        assert check_product_law(K, D1, diamond(K, D1)).max_residual < 5e-3

    def test_small_m_limit(self):
        K = SpectralMeasure([0.5, 1.0], [0.5, 0.5])
        rep = check_product_law(K, D1, diamond(K, D1), m_points=(1e-3, 1e-2))
        assert rep.residuals[0] < rep.residuals[1] + 1e-4
        assert rep.residuals[0] < 1e-3


class TestPenfo:
    def test_psi(self):
        assert psi(1.0, 1) == pytest.approx(2.0)
        assert psi(1.0, 2) == pytest.approx(math.sqrt(2))

    @pytest.mark.parametrize("L", [1, 2, 3])
    def test_unit_moments(self, L):
        got = penfo_moments(D1, L, order=4)
        assert got == pytest.approx([fuss_catalan(L, k) for k in range(1, 5)], rel=1e-8)

    def test_matches_series_oracle(self):
        K = nu_K(get_activation("tanh"), 0.9)
        for L in (1, 2):
            assert penfo_moments(K, L, order=4) == pytest.approx(series_moments(K, L, 4), rel=1e-7)

    @pytest.mark.parametrize("L", [1, 2, 3])
    def test_dirac_scaling(self, L):
        a = 2.0
        assert penfo_moments(dirac(a), L, order=1)[0] == pytest.approx(a ** L, rel=1e-10)

    def test_first_moment_power(self):
        K = nu_K(get_activation("hard-tanh"), q_fixed_point(get_activation("hard-tanh"), 0.05))
        for L in (1, 2, 3):
            assert penfo_moments(K, L, order=1)[0] == pytest.approx(K.moment(1) ** L, rel=1e-3)

    def test_small_z_behaviour(self):
        K = SpectralMeasure([0.5, 1.0], [0.5, 0.5])
        z = 1e-6
        assert solve_penfo(K, 2, z) == pytest.approx(K.moment(1) ** 2 * z, rel=1e-5)

    def test_matches_diamond_on_one_layer(self):
        K = nu_K(get_activation("hard-tanh"), 0.8)
        mu = diamond(K, D1)
        for z in (0.05, 0.1 + 0.05j, -0.3):
            assert abs(solve_penfo(K, 1, z) - moment_gen(mu, z)) < 1e-3

    def test_negative_axis_far_out(self):
        # m(z) = -1 - f(1/z) / z with f(-1) the golden-ratio root
        golden = (math.sqrt(5) - 1) / 2
        assert solve_penfo(D1, 1, -1.0) == pytest.approx(golden - 1, abs=1e-10)

    def test_errors(self):
        with pytest.raises(ConfigError):
            solve_penfo(D1, 0, 0.1)
        with pytest.raises(ConfigError):
            solve_penfo(dirac(0.0), 1, 0.1)
        assert solve_penfo(D1, 2, 0.0) == 0
