import numpy as np
import pytest
from hypothesis import given, strategies as st

from bofpinn.optim import AdamState, LbfgsState, NonFiniteGradient, adam_step, lbfgs_minimize


def test_adam_first_step():
    st_ = AdamState()
    x = adam_step(st_, np.zeros(1), np.array([2.0]))
    assert x[0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_zero_grad_first_step():
    x = adam_step(AdamState(), np.array([1.5, -2.0]), np.zeros(2))
    np.testing.assert_array_equal(x, [1.5, -2.0])


def test_adam_decay():
    assert AdamState(lr=1e-3).effective_lr(1000) == pytest.approx(9e-4)
    assert AdamState(lr=1e-3).effective_lr(999) == pytest.approx(1e-3)


def test_adam_nan_leaves_state():
    s = AdamState()
    x0 = np.ones(2)
    adam_step(s, x0, np.ones(2))
    m, v, k = s.m.copy(), s.v.copy(), s.step
    with pytest.raises(NonFiniteGradient):
        adam_step(s, x0, np.array([np.nan, 1.0]))
    assert s.step == k
    np.testing.assert_array_equal(s.m, m)
    np.testing.assert_array_equal(s.v, v)


@given(st.integers(1, 50))
def test_adam_zero_grad_identity(n):
    s = AdamState()
    x = np.array([0.3, -1.0, 2.0])
    for _ in range(n):
        x = adam_step(s, x, np.zeros(3))
    np.testing.assert_array_equal(x, [0.3, -1.0, 2.0])


def test_adam_step_counter_increases():
    s = AdamState()
    x = np.zeros(2)
    for k in range(1, 4):
        x = adam_step(s, x, np.ones(2))
        assert s.step == k


def test_lbfgs_scalar_quadratic():
    x, rep = lbfgs_minimize(lambda v: ((v[0] - 2) ** 2, np.array([2 * (v[0] - 2)])), np.zeros(1))
    assert abs(x[0] - 2) < 1e-8
    assert rep.iterations >= 1


@pytest.mark.parametrize("seed", range(5))
def test_lbfgs_quadratic_5d(seed):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(5, 5))
    A = Q @ Q.T + 5 * np.eye(5)
    b = rng.normal(size=5)
    f = lambda v: (0.5 * v @ A @ v - b @ v, A @ v - b)
    x, rep = lbfgs_minimize(f, np.zeros(5), LbfgsState(c2=0.01, gtol=1e-10))
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-7)
    assert rep.iterations <= 7


def test_lbfgs_rosenbrock():
    def f(v):
        x, y = v
        return (1 - x) ** 2 + 100 * (y - x * x) ** 2, np.array([-2 * (1 - x) - 400 * x * (y - x * x),
                                                                 200 * (y - x * x)])
    x, rep = lbfgs_minimize(f, np.array([-1.2, 1.0]), LbfgsState(gtol=1e-12, max_iter=500))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-5)


def test_lbfgs_monotone():
    rng = np.random.default_rng(3)
    Q = rng.normal(size=(8, 8))
    A = Q @ Q.T + np.eye(8)

    def f(v):
        return float(0.5 * v @ A @ v + np.sum(v ** 4)), A @ v + 4 * v ** 3

    fs = []
    lbfgs_minimize(f, rng.normal(size=8), LbfgsState(max_iter=50), callback=lambda k, x, fx: fs.append(fx))
    assert all(b <= a + 1e-15 for a, b in zip(fs, fs[1:]))


def test_lbfgs_f_target_stops():
    f = lambda v: (float(np.sum((v - 1) ** 2)), 2 * (v - 1))
    x, rep = lbfgs_minimize(f, np.zeros(3), LbfgsState(max_iter=100), f_target=0.5)
    assert rep.f <= 0.5


def test_lbfgs_history_bound():
    s = LbfgsState(history=3, max_iter=20)
    f = lambda v: (float(np.sum(np.arange(1, 7) * v ** 2)), 2 * np.arange(1, 7) * v)
    lbfgs_minimize(f, np.ones(6), s)
    assert len(s.s_hist) <= 3
