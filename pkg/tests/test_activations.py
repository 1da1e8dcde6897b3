import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from djs.activations import (
    QSchedule,
    gauss_expect,
    get_activation,
    load_activation_json,
    nu_K,
    piecewise_linear,
    q_fixed_point,
    q_map,
    q_schedule,
)
from djs.errors import ConfigError, ConvergenceError, NumericalError

BUILTIN = ("tanh", "hard-tanh", "erf", "scaled-shifted-tanh")


def quad_expect(f, q):
    """Adaptive quadrature of E f(sqrt(q) g), independent of the Gauss rules."""
    s = math.sqrt(q)
    val, _ = integrate.quad(lambda g: f(s * g) * norm.pdf(g), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)
    return val


TANH2_Q1 = quad_expect(lambda x: np.tanh(x) ** 2, 1.0)


def test_tanh_oracle_is_near_reference_value():
    assert TANH2_Q1 == pytest.approx(0.3943, abs=5e-5)


class TestActivations:
    @pytest.mark.parametrize("name", BUILTIN)
    def test_bounds_hold(self, name):
        assert get_activation(name).check()

    @pytest.mark.parametrize("name", BUILTIN)
    def test_derivative_matches_finite_difference(self, name):
        act = get_activation(name)
        x = np.linspace(-3, 3, 61) + 0.013  # avoid hard-tanh kinks
        h = 1e-6
        fd = (act.phi(x + h) - act.phi(x - h)) / (2 * h)
        np.testing.assert_allclose(act.dphi(x), fd, atol=1e-6)

    def test_erf_has_unit_slope(self):
        assert get_activation("erf").dphi(np.array([0.0]))[0] == pytest.approx(1.0)

    def test_relu_gated(self):
        with pytest.raises(ConfigError, match="unsafe-unbounded"):
            get_activation("relu")
        assert not get_activation("relu", unsafe_unbounded=True).bounded

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            get_activation("swish")

    def test_piecewise_linear_from_json(self):
        act = load_activation_json('{"knots": [[-1, -1], [1, 1]]}')
        ht = get_activation("hard-tanh")
        x = np.linspace(-3, 3, 37)
        np.testing.assert_allclose(act.phi(x), ht.phi(x))
        assert act.breakpoints == (-1.0, 1.0)
        with pytest.raises(ConfigError):
            piecewise_linear([[1, 0], [0, 1]])


class TestGaussExpect:
    def test_second_moment(self):
        assert gauss_expect(lambda x: x ** 2, 2.0) == pytest.approx(2.0, abs=1e-12)

    def test_constant(self):
        assert gauss_expect(lambda x: np.ones_like(x), 0.7) == pytest.approx(1.0, abs=1e-14)

    def test_tanh_squared(self):
        assert gauss_expect(lambda x: np.tanh(x) ** 2, 1.0) == pytest.approx(TANH2_Q1, abs=1e-6)

    @pytest.mark.parametrize("q", [0.1, 1.0, 4.0])
    def test_split_rule_on_kinked_integrand(self, q):
        # hard-tanh^2 has a closed form in terms of the Gaussian CDF and density
        a = 1 / math.sqrt(q)
        inside = q * ((2 * norm.cdf(a) - 1) - 2 * a * norm.pdf(a))
        exact = inside + 2 * norm.sf(a)
        ht = get_activation("hard-tanh")
        assert gauss_expect(lambda x: ht.phi(x) ** 2, q, breakpoints=ht.breakpoints) == pytest.approx(exact, abs=1e-10)

    @pytest.mark.parametrize("name", BUILTIN)
    def test_order_doubling_converged(self, name):
        act = get_activation(name)
        f = lambda x: act.phi(x) ** 2
        a = gauss_expect(f, 1.3, order=201, breakpoints=act.breakpoints)
        b = gauss_expect(f, 1.3, order=402, breakpoints=act.breakpoints)
        assert abs(a - b) < 1e-9

    def test_errors(self):
        with pytest.raises(ConfigError):
            gauss_expect(lambda x: x, 1.0, order=1)
        with pytest.raises(NumericalError), np.errstate(divide="ignore"):
            gauss_expect(lambda x: 1.0 / (x - x), 1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.05, 5.0), st.floats(-2, 2), st.floats(-2, 2))
    def test_linear_and_monotone(self, q, a, b):
        f, g = (lambda x: np.tanh(x) ** 2), (lambda x: np.cos(x))
        lin = gauss_expect(lambda x: a * f(x) + b * g(x), q)
        assert lin == pytest.approx(a * gauss_expect(f, q) + b * gauss_expect(g, q), abs=1e-12)
        assert gauss_expect(f, q) <= gauss_expect(lambda x: f(x) + 0.1, q)


class TestQSchedule:
    def test_single_layer(self):
        assert q_schedule(0.7, 1, get_activation("tanh"), 0.0).q == (0.7,)

    def test_tanh_second_layer(self):
        s = q_schedule(1.0, 2, get_activation("tanh"), 0.0)
        assert s.q[1] == pytest.approx(TANH2_Q1, abs=1e-6)

    def test_hard_tanh_bounded(self):
        s = q_schedule(5.0, 6, get_activation("hard-tanh"), 0.1)
        assert all(0.1 < q <= 1.1 for q in s.q[1:])

    def test_matches_independent_recurrence(self):
        act = get_activation("erf")
        s = q_schedule(2.0, 4, act, 0.2)
        q = 2.0
        for got in s.q[1:]:
            q = quad_expect(lambda x: act.phi(x) ** 2, q) + 0.2
            assert got == pytest.approx(q, abs=1e-9)

    def test_without_bias_switch(self):
        act = get_activation("tanh")
        a = q_schedule(1.0, 2, act, 0.3, with_bias=True)
        b = q_schedule(1.0, 2, act, 0.3, with_bias=False)
        assert a.q[1] - b.q[1] == pytest.approx(0.3)

    def test_errors(self):
        act = get_activation("tanh")
        with pytest.raises(ConfigError):
            q_schedule(0.1, 2, act, 0.2)
        with pytest.raises(ConfigError):
            q_schedule(1.0, 0, act, 0.0)

    def test_round_trip(self):
        s = q_schedule(1.0, 3, get_activation("tanh"), 0.05)
        assert QSchedule.from_json(s.to_json()) == s


class TestFixedPoint:
    def test_tanh_no_bias_goes_to_zero(self):
        # brute force: 10^4 plain steps of the map
        act = get_activation("tanh")
        q = 1.0
        for _ in range(10_000):
            q = q_map(act, q, 0.0)
        assert q < 1e-3
        assert q_fixed_point(act, 0.0) == pytest.approx(0.0, abs=1e-6)

    def test_tanh_with_bias(self):
        act = get_activation("tanh")
        q = q_fixed_point(act, 0.25)
        assert q > 0.25
        assert abs(q - q_map(act, q, 0.25)) < 1e-10

    def test_constant_square(self):
        # phi^2 == 1 everywhere the Gaussian puts mass beyond round-off
        act = piecewise_linear([[-1e-9, -1.0], [1e-9, 1.0]], name="sign")
        assert q_fixed_point(act, 0.5) == pytest.approx(1.5, abs=1e-8)

    def test_restart_invariance(self):
        act = get_activation("hard-tanh")
        a = q_fixed_point(act, 0.05)
        b = q_fixed_point(act, 0.05, q0=0.3)
        assert abs(a - b) < 1e-10

    def test_no_convergence_reports_residual(self):
        with pytest.raises(ConvergenceError) as info:
            q_fixed_point(get_activation("tanh"), 0.25, max_iter=1, damping=0.01)
        assert info.value.residual > 0


class TestNuK:
    @pytest.mark.parametrize("q", [0.3, 1.0, 3.0])
    def test_hard_tanh_atoms(self, q):
        mu = nu_K(get_activation("hard-tanh"), q)
        assert set(mu.locations.tolist()) == {0.0, 1.0}
        assert mu.mass_at(1.0) == pytest.approx(2 * norm.cdf(1 / math.sqrt(q)) - 1, abs=1e-8)

    def test_identity_slope_gives_dirac(self):
        act = piecewise_linear([[-1e3, -2e3], [1e3, 2e3]])
        mu = nu_K(act, 1.0)
        assert mu.atoms == [(4.0, 1.0)]

    @pytest.mark.parametrize("name", BUILTIN)
    def test_mean_and_support(self, name):
        act = get_activation(name)
        mu = nu_K(act, 0.8)
        assert mu.moment(1) == pytest.approx(
            gauss_expect(lambda x: act.dphi(x) ** 2, 0.8, breakpoints=act.breakpoints), rel=1e-12)
        assert mu.max_location <= act.dphi_bound ** 2 * (1 + 1e-12)

    def test_vanishing_derivative(self):
        act = piecewise_linear([[-1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(NumericalError):
            nu_K(act, 1.0)
