"""Observable dictionaries: evaluation, construction, gradients, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopfuse.dictionary import (
    AffineInputDictionary, Dictionary, IdentityDictionary, MonomialDictionary,
    NeuralDictionary, StackedDictionary, StateInclusiveDictionary,
    append_constant, elu, elu_prime, make_monomial, make_neural, nonlinear_part,
)
from koopfuse.errors import ConfigError

EXAMPLE1_EXPONENTS = [(2, 0), (1, 1), (3, 0)]  # x1^2, x1*x2, x1^3


class TestElu:
    def test_values(self):
        assert elu(2.0) == 2.0
        assert elu(-1.0) == pytest.approx(np.exp(-1) - 1)
        assert elu(0.0) == 0.0

    def test_continuity_at_zero(self):
        for eps in (1e-3, 1e-6, 1e-9):
            assert abs(elu(eps) - elu(-eps)) < 2.5 * eps

    def test_c1_at_zero(self):
        h = 1e-7
        fd = (elu(h) - elu(-h)) / (2 * h)
        assert fd == pytest.approx(elu_prime(0.0), abs=1e-6)


class TestEval:
    def test_identity(self):
        dic = IdentityDictionary(3)
        x = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(dic(x), x)

    def test_monomial_hand_case(self):
        dic = make_monomial(2, EXAMPLE1_EXPONENTS)
        np.testing.assert_array_equal(dic(np.array([2.0, 3.0])), [2, 3, 4, 6, 8])

    def test_zero_weights_propagate_zero(self):
        dic = NeuralDictionary(2, [4, 4], 3, seed=0)
        dic.set_params_vec(np.zeros(dic.n_params))
        np.testing.assert_array_equal(dic(np.array([1.0, -1.0])), np.zeros(3))

    def test_column_batch_matches_single(self):
        dic = make_neural(2, 2, 5, 3, seed=1)
        X = np.random.default_rng(0).normal(size=(2, 7))
        batch = dic(X)
        for j in range(7):
            np.testing.assert_allclose(dic(X[:, j]), batch[:, j])

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ConfigError):
            IdentityDictionary(2)(np.array([1.0, 2.0, 3.0]))


class TestMakeMonomial:
    def test_empty_gives_identity(self):
        dic = make_monomial(3, [])
        assert isinstance(dic, IdentityDictionary)

    def test_benchmark_set(self):
        dic = make_monomial(2, EXAMPLE1_EXPONENTS)
        assert dic.n_L == 5
        assert dic.is_state_inclusive

    def test_constant_exponent(self):
        dic = make_monomial(2, [(0, 0)])
        np.testing.assert_array_equal(dic(np.array([4.0, 9.0])), [4, 9, 1])

    def test_negative_exponent_rejected(self):
        with pytest.raises(ConfigError):
            MonomialDictionary(2, [(1, -1)])


class TestMakeNeural:
    def test_seeded_determinism(self):
        a = make_neural(2, 3, 4, 2, seed=5)
        b = make_neural(2, 3, 4, 2, seed=5)
        np.testing.assert_array_equal(a.params_vec(), b.params_vec())

    def test_architecture_sizes(self):
        dic = make_neural(2, 7, 5, 3, seed=0)
        assert dic.inner.widths == [5] * 7
        assert dic.n_L == 2 + 3
        assert dic.is_state_inclusive

    def test_parameter_count(self):
        net = NeuralDictionary(2, [4], 3, seed=0)
        assert net.n_params == (2 * 4 + 4) + (4 * 3 + 3)

    def test_init_scale(self):
        net = NeuralDictionary(100, [50], 1, seed=0)
        assert np.max(np.abs(net.W[0])) <= 1.0 / np.sqrt(100)
        assert np.max(np.abs(net.W[1])) <= 1.0 / np.sqrt(50)


class TestStateInclusive:
    def test_prefix_is_state_bitwise(self):
        dic = make_neural(3, 2, 4, 2, seed=2)
        x = np.random.default_rng(3).normal(size=3)
        assert np.array_equal(dic(x)[:3], x)

    def test_constant_after_inclusion_order(self):
        with pytest.raises(ConfigError):
            StateInclusiveDictionary(append_constant(NeuralDictionary(2, [3], 2, seed=0)))


class TestAppendConstant:
    def test_trailing_one(self):
        dic = append_constant(make_neural(2, 1, 3, 2, seed=0))
        x = np.random.default_rng(0).normal(size=2)
        assert dic(x)[-1] == 1.0
        assert dic.n_L == 2 + 2 + 1

    def test_monomial_count(self):
        assert append_constant(make_monomial(2, EXAMPLE1_EXPONENTS)).n_L == 6

    def test_double_append_rejected(self):
        dic = append_constant(IdentityDictionary(2))
        with pytest.raises(ConfigError):
            append_constant(dic)


class TestParamGradient:
    def _fd_gradient(self, dic, X, C, h=1e-5):
        theta = dic.params_vec()
        g = np.empty_like(theta)
        for i in range(theta.size):
            for sign, store in ((1, 0), (-1, 1)):
                t = theta.copy()
                t[i] += sign * h
                dic.set_params_vec(t)
                val = np.sum(C * dic(X))
                if store == 0:
                    plus = val
                else:
                    minus = val
            g[i] = (plus - minus) / (2 * h)
        dic.set_params_vec(theta)
        return g

    def test_zero_cotangent(self):
        dic = make_neural(2, 2, 3, 2, seed=0)
        X = np.random.default_rng(0).normal(size=(2, 4))
        g = dic.param_gradient(X, np.zeros((dic.n_L, 4)))
        np.testing.assert_array_equal(g, np.zeros(dic.n_params))

    def test_identity_block_gradient_zero(self):
        dic = make_neural(2, 1, 3, 2, seed=1)
        X = np.random.default_rng(1).normal(size=(2, 5))
        C = np.zeros((dic.n_L, 5))
        C[:2] = np.random.default_rng(2).normal(size=(2, 5))  # state rows only
        np.testing.assert_array_equal(dic.param_gradient(X, C), np.zeros(dic.n_params))

    def test_finite_difference_two_layer(self):
        dic = NeuralDictionary(2, [4], 3, seed=3)
        rng = np.random.default_rng(4)
        X = rng.normal(size=(2, 6))
        C = rng.normal(size=(3, 6))
        g = dic.param_gradient(X, C)
        fd = self._fd_gradient(dic, X, C)
        denom = max(np.max(np.abs(fd)), 1.0)
        assert np.max(np.abs(g - fd)) / denom < 1e-5

    def test_finite_difference_100_draws(self):
        rng = np.random.default_rng(7)
        for draw in range(100):
            widths = [int(rng.integers(1, 5))] * int(rng.integers(1, 3))
            dic = NeuralDictionary(2, widths, int(rng.integers(1, 4)), seed=draw)
            dic.set_params_vec(rng.normal(scale=0.5, size=dic.n_params))
            X = rng.normal(size=(2, 3))
            C = rng.normal(size=(dic.n_L, 3))
            g = dic.param_gradient(X, C)
            fd = self._fd_gradient(dic, X, C)
            denom = max(np.max(np.abs(fd)), 1.0)
            assert np.max(np.abs(g - fd)) / denom < 1e-5

    def test_wrapped_gradients(self):
        inner = NeuralDictionary(2, [3], 2, seed=5)
        for dic in (append_constant(StateInclusiveDictionary(inner)),
                    StackedDictionary([IdentityDictionary(2), inner]),
                    AffineInputDictionary(inner, np.diag([2.0, 0.5]), np.array([1.0, -1.0]))):
            rng = np.random.default_rng(6)
            X = rng.normal(size=(2, 4))
            C = rng.normal(size=(dic.n_L, 4))
            g = dic.param_gradient(X, C)
            fd = TestParamGradient._fd_gradient(self, dic, X, C)
            denom = max(np.max(np.abs(fd)), 1.0)
            assert np.max(np.abs(g - fd)) / denom < 1e-5

    def test_cotangent_shape_checked(self):
        dic = make_neural(2, 1, 3, 1, seed=0)
        with pytest.raises(ConfigError):
            dic.param_gradient(np.zeros((2, 4)), np.zeros((dic.n_L, 3)))


class TestSerialization:
    @pytest.mark.parametrize("build", [
        lambda: IdentityDictionary(3),
        lambda: make_monomial(2, EXAMPLE1_EXPONENTS),
        lambda: make_neural(2, 2, 4, 3, seed=9),
        lambda: append_constant(make_neural(2, 1, 3, 2, seed=2)),
        lambda: StackedDictionary([append_constant(make_neural(2, 1, 3, 1, seed=0)),
                                   NeuralDictionary(2, [2], 2, seed=1)]),
        lambda: AffineInputDictionary(NeuralDictionary(2, [3], 2, seed=4),
                                      np.diag([2.0, 3.0]), np.array([0.1, -0.2])),
    ])
    def test_round_trip_eval(self, build):
        dic = build()
        back = Dictionary.from_dict(dic.to_dict())
        X = np.random.default_rng(11).normal(size=(2, 1000) if dic.n == 2 else (3, 1000))
        np.testing.assert_array_equal(dic(X), back(X))


class TestNonlinearPart:
    def test_neural_split(self):
        dic = make_neural(2, 1, 3, 2, seed=0)
        phi = nonlinear_part(dic)
        x = np.array([0.3, -0.7])
        np.testing.assert_array_equal(dic(x)[2:], phi(x))

    def test_monomial_split(self):
        phi = nonlinear_part(make_monomial(2, EXAMPLE1_EXPONENTS))
        np.testing.assert_array_equal(phi(np.array([2.0, 3.0])), [4, 6, 8])

    def test_constant_must_be_stripped(self):
        with pytest.raises(ConfigError):
            nonlinear_part(append_constant(IdentityDictionary(2)))


@settings(deadline=None, max_examples=30)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_state_inclusivity_bitwise(xs):
    dic = make_neural(2, 2, 3, 2, seed=0)
    x = np.array(xs)
    assert np.array_equal(dic(x)[:2], x)


@settings(deadline=None, max_examples=30)
@given(u=st.floats(-20, 20))
def test_elu_definition(u):
    import math
    expected = u if u >= 0 else math.expm1(u)
    assert elu(u) == pytest.approx(expected, rel=1e-12, abs=0.0) or elu(u) == expected
