import math
import zlib

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaca import diffcalc as dc
from vaca.diffcalc import NonFiniteError, ShapeError, Tensor, check_gradients, concat, parameter


def test_square_gradient():
    x = parameter(3.0)
    x.square().backward()
    assert x.grad == pytest.approx(6.0)


def test_sigmoid_value_and_gradient():
    x = parameter(0.0)
    y = x.sigmoid()
    y.backward()
    assert y.item() == 0.5
    assert x.grad == pytest.approx(0.25)


def test_matmul_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 4))
    B = Tensor(rng.normal(size=(4, 2)))
    W = rng.normal(size=(3, 2))
    assert check_gradients(lambda a: ((a @ B) * W).sum(), A, h=1e-6) <= 1e-6
    assert check_gradients(lambda b: ((Tensor(A) @ b) * W).sum(), B.data, h=1e-6) <= 1e-6


def test_linear_function_gradient_is_exact():
    c = np.array([1.5, -2.0, 0.25])
    assert check_gradients(lambda x: (x * c).sum(), np.array([0.3, 0.1, 2.0])) < 1e-9


UNARY = {
    "exp": lambda t: t.exp(),
    "log": lambda t: t.log(),
    "abs": lambda t: t.abs(),
    "relu": lambda t: t.relu(),
    "sigmoid": lambda t: t.sigmoid(),
    "softplus": lambda t: t.softplus(),
    "square": lambda t: t.square(),
    "tanh": lambda t: t.tanh(),
    "sqrt": lambda t: t.sqrt(),
    "lgamma": lambda t: t.lgamma(),
    "digamma": lambda t: t.digamma(),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_pass_gradient_check_at_random_points(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    op = UNARY[name]
    weights = rng.normal(size=10)
    for _ in range(10):
        # positive domain keeps log/lgamma/digamma/sqrt valid and abs/relu away from the kink
        x = rng.uniform(0.2, 3.0, size=10)
        assert check_gradients(lambda t: (op(t) * weights).sum(), x) <= 1e-5


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_ops_with_broadcasting(name):
    rng = np.random.default_rng(7)
    op = BINARY[name]
    W = rng.normal(size=(3, 4))
    for _ in range(10):
        a = rng.uniform(0.5, 2.0, size=(3, 4))
        b = rng.uniform(0.5, 2.0, size=(1, 4))
        assert check_gradients(lambda t: (op(t, Tensor(b)) * W).sum(), a) <= 1e-5
        assert check_gradients(lambda t: (op(Tensor(a), t) * W).sum(), b) <= 1e-5


def test_reductions_shapes_and_gather():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 4))
    W = rng.normal(size=(3,))
    assert check_gradients(lambda t: (t.sum(axis=(0, 2)) * W).sum(), x) <= 1e-6
    assert check_gradients(lambda t: (t.mean(axis=2) ** 2).sum(), x) <= 1e-6
    assert check_gradients(lambda t: (t.transpose(2, 0, 1).reshape(4, 6) ** 2).sum(), x) <= 1e-6
    idx = np.array([[0, 0], [1, 0]])
    assert check_gradients(lambda t: (t.take(idx, axis=0) ** 2).sum(), x) <= 1e-6
    assert check_gradients(lambda t: (t[:, 1:, ::2] ** 2).sum(), x) <= 1e-6
    assert check_gradients(lambda t: (concat([t, t * 2.0], axis=1) ** 2).sum(), x) <= 1e-6


def test_repeated_gather_accumulates():
    x = parameter(np.array([1.0, 2.0]))
    x.take(np.array([0, 0, 0, 1])).sum().backward()
    np.testing.assert_array_equal(x.grad, [3.0, 1.0])


def test_tape_replay_gives_identical_gradients():
    rng = np.random.default_rng(1)
    w = parameter(rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(5, 4)))

    def run():
        w.zero_grad()
        ((x @ w).sigmoid().square().sum() + (w * w).sum()).backward()
        return w.grad.copy()

    np.testing.assert_array_equal(run(), run())


def test_shared_subexpression_gets_both_paths():
    x = parameter(2.0)
    y = x * x
    (y + y * 3.0).backward()  # d/dx 4x^2 = 8x
    assert x.grad == pytest.approx(16.0)


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


def test_non_finite_trips_error():
    with pytest.raises(NonFiniteError):
        parameter(np.array([1000.0])).exp()
    with pytest.raises(NonFiniteError):
        parameter(np.array([0.0])).log()


def test_no_grad_builds_no_graph():
    x = parameter(1.0)
    with dc.no_grad():
        y = x * 2.0
    assert not y.requires_grad


# -- special functions -------------------------------------------------------------


def test_lgamma_spot_values():
    assert dc.lgamma(1.0) == 0.0
    assert dc.lgamma(2.0) == pytest.approx(0.0, abs=1e-15)


def test_digamma_one_is_minus_euler_gamma():
    # oracle: mpmath's independent series evaluation
    assert dc.digamma(1.0) == pytest.approx(float(-mpmath.euler), abs=1e-12)
    assert dc.digamma(1.0) == pytest.approx(-0.5772156649, abs=1e-10)


def test_trigamma_one_is_zeta_two():
    oracle = sum(1.0 / (k * k) for k in range(1, 200_000)) + 1.0 / 200_000  # tail ~ 1/N
    assert dc.trigamma(1.0) == pytest.approx(math.pi**2 / 6, abs=1e-12)
    assert dc.trigamma(1.0) == pytest.approx(oracle, abs=1e-9)


@pytest.mark.parametrize("x", [1e-3, 0.1, 0.5, 1.5, 7.0, 123.4, 1e4, 1e6])
def test_lgamma_accuracy_against_mpmath(x):
    assert dc.lgamma(x) == pytest.approx(float(mpmath.loggamma(x)), abs=1e-12, rel=1e-15)


@pytest.mark.parametrize("x", [0.5, 1.0, 2.5, 10.0])
def test_digamma_recurrence(x):
    assert dc.digamma(x + 1) == pytest.approx(dc.digamma(x) + 1 / x, abs=1e-12)


def test_lgamma_derivative_chain():
    for x in [0.3, 1.0, 4.2]:
        assert check_gradients(lambda t: t.lgamma().sum(), np.array([x])) < 1e-6
        assert check_gradients(lambda t: t.digamma().sum(), np.array([x])) < 1e-6


@pytest.mark.parametrize("fn", [dc.lgamma, dc.digamma, dc.trigamma])
def test_special_functions_reject_nonpositive(fn):
    with pytest.raises(ValueError):
        fn(0.0)
    with pytest.raises(ValueError):
        fn(-1.5)


def test_gamma_cdf_basics():
    assert dc.gamma_cdf(0.0, 2.0, 3.0) == 0.0
    assert dc.gamma_cdf(1.0, 1.0, 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    with pytest.raises(ValueError):
        dc.gamma_cdf(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        dc.gamma_cdf(1.0, 0.0, 1.0)


@given(
    alpha=st.floats(0.05, 50.0),
    beta=st.floats(0.05, 20.0),
)
@settings(max_examples=50, deadline=None)
def test_gamma_cdf_monotone_and_bounded(alpha, beta):
    z = np.linspace(0.0, 10.0 * (alpha + 1) / beta, 200)
    F = dc.gamma_cdf(z, alpha, beta)
    assert np.all(np.diff(F) >= 0)
    assert np.all((F >= 0) & (F <= 1))


@pytest.mark.parametrize("alpha,beta", [(0.5, 1.0), (2.0, 1.0), (5.0, 3.0)])
def test_gamma_cdf_against_mpmath_quadrature(alpha, beta):
    for z in [0.01, 0.3, 1.0, 2.5, 6.0]:
        with mpmath.workdps(30):
            oracle = mpmath.quad(
                lambda t: beta**alpha * t ** (alpha - 1) * mpmath.e ** (-beta * t) / mpmath.gamma(alpha), [0, z]
            )
        assert dc.gamma_cdf(z, alpha, beta) == pytest.approx(float(oracle), abs=1e-10)


@pytest.mark.parametrize("alpha,beta", [(0.5, 1.0), (2.0, 1.0), (5.0, 3.0)])
def test_gamma_cdf_against_monte_carlo(alpha, beta):
    rng = np.random.default_rng(11)
    samples = rng.gamma(alpha, 1.0 / beta, size=1_000_000)
    qs = np.quantile(samples, [0.1, 0.3, 0.5, 0.7, 0.9])
    empirical = np.array([np.mean(samples <= q) for q in qs])
    # a 1e6-sample empirical CDF carries ~5e-4 binomial noise; compare at that resolution
    np.testing.assert_allclose(dc.gamma_cdf(qs, alpha, beta), empirical, atol=2e-3)
