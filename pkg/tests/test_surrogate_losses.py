import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bofpinn.autodiff import constant
from bofpinn.losses import (InverseParams, LossContext, LossWeights, Observations, OffGridPoints, TERMS,
                            dynamic_weight_update, ic_targets_deterministic, ic_targets_from_provider,
                            loss_bc, loss_bo, loss_ic, loss_strong, loss_terms, loss_weak, make_training_sets,
                            residual, total_loss, weak_residuals)
from bofpinn.nn import value_and_grad
from bofpinn.problems import (FunctionForcing, ManufacturedBO, ZeroForcing, appd_problem, forcing_static_problem,
                              manufactured_problem)
from bofpinn.surrogate import (Architecture, ArchitectureMismatch, BOSurrogate, Components, ExactBOProvider,
                               assemble, surrogate_eval)
from bofpinn.train import predict_stats


def tiny(problem=None, N=2, n_x=16, n_t=4, lifting=False, seed=0, n_xi=8):
    p = problem or manufactured_problem(1.5)
    sets = make_training_sets(p, n_x, n_t, n_xi=n_xi, seed=seed, gauss_per_dim=3)
    arch = Architecture(N, 1, p.xi_dim, (2, 6), (1, 3), (2, 6), (2, 6), lifting)
    s = BOSurrogate(arch, p.domain, (0.0, p.T), p.xi_law, seed=seed)
    return p, sets, s


def exact_setup(n_x=256):
    p = manufactured_problem(1.5, M=50)
    sets = make_training_sets(p, n_x, 20, seed=0)
    return p, sets, LossContext(p, sets), ExactBOProvider()


# -- surrogate

def test_n0_is_mean():
    p, sets, s = tiny(N=0)
    x = np.linspace(0, 1, 7)
    u = surrogate_eval(s, x, [0.3], np.random.default_rng(0).random((5, 2)))
    m, _ = s.eval_mean(x, [0.3])
    np.testing.assert_array_equal(u[:, 0, :], m.data)


def test_exact_provider_reproduces_solution():
    rng = np.random.default_rng(1)
    x, t, xi = rng.random(9), rng.uniform(0, 3, 3), rng.random((6, 2))
    u = surrogate_eval(ExactBOProvider(), x, t, xi)
    for k, tt in enumerate(t):
        np.testing.assert_allclose(u[k], ManufacturedBO.u(x, tt, xi), rtol=0, atol=1e-12)


def test_scale_invariance():
    rng = np.random.default_rng(2)
    x, xi = rng.random(9), rng.random((6, 2))
    a = surrogate_eval(ExactBOProvider(), x, [0.5], xi)
    b = surrogate_eval(ExactBOProvider(scale=2.0), x, [0.5], xi)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


@given(st.integers(0, 1000))
def test_affine_in_y(seed):
    p, sets, s = tiny(seed=seed % 7)
    c = s.components(sets.x, sets.t[:2], sets.samples.xi, derivs=False)
    rng = np.random.default_rng(seed)
    Y1, Y2 = rng.normal(size=c.Y.shape), rng.normal(size=c.Y.shape)
    f = lambda Y: assemble(Components(c.mean, c.A, c.U, constant(Y))).data
    np.testing.assert_allclose(f(Y1 + Y2) + f(0 * Y1), f(Y1) + f(Y2), atol=1e-11)


@given(st.integers(0, 10_000))
def test_lifting_zero_boundary(seed):
    p = forcing_static_problem(n_kl=3, length=0.4)
    p2, sets, s = tiny(p, N=2, lifting=True, seed=seed % 5)
    s.params = s.params.with_flat(np.random.default_rng(seed).normal(size=s.params.size))
    c = s.components(sets.x, sets.t, sets.samples.xi)
    assert np.all(c.mean.data[:, [0, -1]] == 0) and np.all(c.U.data[..., [0, -1]] == 0)
    assert loss_bc(c, LossContext(p, sets)).data == 0.0


def test_mode_count_mismatch():
    c = ExactBOProvider().components(np.linspace(0, 1, 5), [0.1], np.random.default_rng(0).random((3, 2)),
                                     derivs=False)
    bad = Components(c.mean, c.A, c.U, constant(c.Y.data[..., :1]))
    with pytest.raises(ArchitectureMismatch):
        assemble(bad)


# -- weak / strong / BO / BC / IC terms on exact components

@pytest.mark.xfail(strict=True, reason="GL boundary layer: the exact sin modes leave an O(h^(1-alpha)) residual "
                   "at the first interior nodes; eps_3 alone is about 0.2 (see the decision ledger)")
def test_weak_exact_floor():
    p, sets, ctx, prov = exact_setup()
    c = prov.components(sets.x, sets.t, sets.samples.xi)
    assert loss_weak(c, ctx).data <= 1e-4


def test_weak_mean_projection_small_on_exact():
    # eps_1 and eps_2 average the boundary layer away; eps_3 does not
    p, sets, ctx, prov = exact_setup()
    c = prov.components(sets.x, sets.t, sets.samples.xi)
    e1, e2, e3 = weak_residuals(c, residual(c, ctx), ctx)
    assert e1.square().mean().data <= 1e-4
    assert e2.square().mean().data <= 1e-4
    inner = slice(25, -25)
    assert e3.data[..., inner].__pow__(2).mean() <= 1e-4


def test_bo_exact():
    p, sets, ctx, prov = exact_setup()
    c = prov.components(sets.x, sets.t, sets.samples.xi)
    assert loss_bo(c, ctx).data <= 1e-6
    ic = ic_targets_from_provider(prov, sets)
    assert loss_ic(prov, None, ic, sets).data == 0.0
    assert loss_bc(c, ctx).data <= 1e-25


def test_zero_everything():
    p = manufactured_problem(1.5).with_(forcing=ZeroForcing(), reaction=None)
    p, sets, s = tiny(p, N=2)
    s.params = s.params.with_flat(np.zeros(s.params.size))
    ctx = LossContext(p, sets)
    c = s.components(sets.x, sets.t, sets.samples.xi)
    assert loss_weak(c, ctx).data == 0.0
    assert loss_strong(c, ctx).data == 0.0


def test_eps2_orthogonal_residual():
    p, sets, ctx, _ = exact_setup(64)
    x = sets.x[:, 0]
    n_t, n_l = len(sets.t), sets.samples.n
    U = math.sqrt(2) * np.sin(np.pi * x)
    c = Components(constant(np.zeros((n_t, len(x)))), constant(np.ones((n_t, 1))),
                   constant(np.broadcast_to(U, (n_t, 1, len(x))).copy()), constant(np.ones((n_t, n_l, 1))))
    R = constant(np.broadcast_to(np.sin(2 * np.pi * x[1:-1]), (n_t, n_l, len(x) - 2)).copy())
    _, e2, _ = weak_residuals(c, R, ctx)
    assert e2.square().mean().data <= 1e-12


def test_bc_examples():
    p = manufactured_problem(1.5)
    p, sets, s = tiny(p, N=1)
    ctx = LossContext(p, sets)
    c = s.components(sets.x, sets.t, sets.samples.xi)
    n_t, n_x = c.mean.shape
    const = Components(constant(np.full((n_t, n_x), 0.7)), constant(np.zeros((n_t, 1))), c.U, c.Y)
    assert loss_bc(const, ctx).data == pytest.approx(0.49, rel=1e-14)
    c0 = Components(constant(np.zeros((n_t, n_x))), c.A, c.U, c.Y)
    c2 = Components(c0.mean, c.A * 2.0, c.U, c.Y)
    assert loss_bc(c2, ctx).data == pytest.approx(4 * loss_bc(c0, ctx).data, rel=1e-12)


def test_bo_constant_y_one():
    p, sets, ctx, _ = exact_setup(32)
    n_t, n_l, n_x = len(sets.t), sets.samples.n, sets.n_x
    z = lambda *s: constant(np.zeros(s))
    U = np.broadcast_to(math.sqrt(2) * np.sin(np.pi * sets.x[:, 0]), (n_t, 1, n_x)).copy()
    c = Components(z(n_t, n_x), constant(np.ones((n_t, 1))), constant(U), constant(np.ones((n_t, n_l, 1))),
                   z(n_t, n_x), z(n_t, 1), z(n_t, 1, n_x), z(n_t, n_l, 1))
    assert loss_bo(c, ctx).data == pytest.approx(1.0, rel=1e-14)


def test_off_grid_rejected():
    p, sets, s = tiny()
    with pytest.raises(OffGridPoints):
        sets.check_aligned(np.array([0.01234]))


def test_ic_examples():
    p = forcing_static_problem(n_kl=5, length=0.4, sensors=True)
    sets = make_training_sets(p, 20, 4, n_xi=16)
    ic = ic_targets_deterministic(p, sets, 3)
    assert np.all(ic.a == 0) and ic.mode == "sensor" and len(ic.mean) == 30
    arch = Architecture(3, 1, 5, (2, 6), (1, 3), (2, 6), (2, 6))
    s = BOSurrogate(arch, p.domain, (0.0, p.T), p.xi_law, seed=0)
    full = loss_ic(s, None, ic, sets).data
    m = s.eval_mean_points(ic.mean_x, np.zeros(30)).data
    c = s.components(sets.x, [0.0], sets.samples.xi, derivs=False)
    rest = (np.mean((c.U.data[0] - ic.U) ** 2) + np.mean((c.A.data[0] - ic.a) ** 2)
            + np.mean((c.Y.data[0] - ic.Y) ** 2))
    assert full == pytest.approx(np.mean((m - ic.mean) ** 2) + rest, rel=1e-12)
    with pytest.raises(ValueError):
        type(ic)(0.0, np.zeros((1, 1)), np.zeros(1), ic.U, ic.a, ic.Y, "sensor")


# -- weights

def test_weights_examples():
    w = LossWeights(1, 1, 1, 1, 1, dynamic=True)
    assert dynamic_weight_update(w, {k: 3.0 for k in TERMS}).as_dict() == w.as_dict()
    off = LossWeights(1, 1, 1, 1, 0.0, dynamic=True)
    assert dynamic_weight_update(off, {k: 3.0 for k in TERMS}).g == 0.0
    w2 = dynamic_weight_update(LossWeights(dynamic=True), {"w": 10.0, "ic": 1.0, "bc": 1.0, "bo": 1.0, "g": 1.0})
    assert w2.ic == pytest.approx(1.9)
    w3 = dynamic_weight_update(LossWeights(dynamic=True), {"w": 1e10, "ic": 1e-3, "bc": 0.0, "bo": 1.0, "g": 1.0})
    assert w3.ic == 1e6 and w3.bc == 1.0 and w3.w == 1.0
    with pytest.raises(ValueError):
        LossWeights(ic=-1.0)
    assert LossWeights.from_mapping({"lambda_0": 0.5}).g == 0.5


def test_total_loss_linearity_and_zero():
    p, sets, s = tiny()
    ctx = LossContext(p, sets)
    ic = ic_targets_from_provider(ExactBOProvider(), sets)
    terms = loss_terms(s, s.params, ctx, ic)
    zero = LossWeights(0, 0, 0, 0, 0)
    assert total_loss(terms, zero).data == 0.0
    w = LossWeights(1, 10, 100, 10, 0.01)
    w2 = LossWeights(1, 10, 100, 20, 0.01)
    diff = total_loss(terms, w2).data - total_loss(terms, w).data
    assert diff == pytest.approx(terms["bo"].data * 10, rel=1e-12)


def test_total_loss_permutation_invariant():
    p, sets, s = tiny()
    ic = ic_targets_from_provider(ExactBOProvider(), sets)
    w = LossWeights(1, 10, 100, 10, 0.01)
    a = total_loss(loss_terms(s, s.params, LossContext(p, sets), ic), w).data
    ps = sets.permuted(3)
    ic2 = ic_targets_from_provider(ExactBOProvider(), ps)
    b = total_loss(loss_terms(s, s.params, LossContext(p, ps), ic2), w).data
    assert a == pytest.approx(b, rel=1e-12)


def test_strong_reduces_to_fpinn_residual():
    from bofpinn.fpinn import FpinnData, FpinnModel, fpinn_loss
    from bofpinn.fracops import GLStencil

    p = appd_problem(1.5)
    sets = make_training_sets(p, 16, 5)
    arch = Architecture(0, 1, 0, (2, 8), lifting=True)
    s = BOSurrogate(arch, p.domain, (0.0, p.T), "unit", seed=0)
    strong = loss_strong(s.components(sets.x, sets.t, sets.samples.xi), LossContext(p, sets)).data
    g = sets.grids[0]
    # same residual through the fPINN assembly with an empty initial term
    model = FpinnModel(s.mean_net, g, GLStencil(g, 1.5), p.T, lifting=True, params=s.params)

    def exact(x, t):
        m, mt = s.eval_mean(np.asarray(x)[: g.n_nodes], np.unique(t), derivs=True)
        return m.data.ravel(), mt.data.ravel()

    data = FpinnData(g.nodes[1:-1], sets.t, np.array([0.5]), np.array([0.0]))
    val = fpinn_loss(model, s.params, p, data, exact=exact).data
    u0 = s.eval_mean([0.5], [0.0])[0].data.ravel()[0]
    assert val - u0 ** 2 == pytest.approx(strong, rel=1e-10)


# -- inverse parameters

def test_inverse_alpha_map():
    assert InverseParams.alpha_of(0.2) == pytest.approx(0.5 * math.tanh(0.2) + 1.5)
    assert InverseParams.alpha_of(0.2) == pytest.approx(1.5986876601124521, rel=1e-15)


@given(st.floats(-1e3, 1e3))
def test_inverse_alpha_range(theta):
    a = InverseParams.alpha_of(theta)
    assert 1.0 <= a <= 2.0
    if abs(theta) < 18:
        assert 1.0 < a < 2.0


def test_observations_validate():
    with pytest.raises(ValueError):
        Observations([], [], [])


# -- statistics

def test_predict_stats_exact():
    from bofpinn.stochastic import SampleSet, gauss_legendre_rule, tensor_quadrature

    s = SampleSet.from_quadrature(tensor_quadrature([gauss_legendre_rule(8, (0, 1))] * 2))
    st_ = predict_stats(ExactBOProvider(), np.array([0.5]), [math.pi], s)
    assert st_.mean[0, 0] == pytest.approx(100 * math.sin(3 * math.pi / 4) * 0.5 ** 6, abs=1e-3)
    assert st_.variance[0, 0] == pytest.approx(2.25, abs=1e-3)


def test_predict_stats_n0():
    p, sets, s = tiny(N=0)
    st_ = predict_stats(s, np.linspace(0, 1, 5), [0.1, 0.2], sets.samples)
    assert np.all(st_.variance == 0)
    np.testing.assert_array_equal(st_.mean, s.eval_mean(np.linspace(0, 1, 5), [0.1, 0.2])[0].data)


@given(st.integers(0, 100))
def test_predict_stats_nonneg(seed):
    p, sets, s = tiny(seed=seed % 4)
    st_ = predict_stats(s, np.linspace(0, 1, 9), [0.3], sets.samples)
    assert np.all(st_.variance >= 0)


# -- gradients

def test_full_loss_gradient_fd():
    p, sets, s = tiny(n_x=16, n_t=4)
    sets = make_training_sets(p, 16, 4, gauss_per_dim=3)
    ctx = LossContext(p, sets)
    ic = ic_targets_from_provider(ExactBOProvider(), sets)
    w = LossWeights(1, 10, 100, 10, 0.01)
    fn = lambda leaves: total_loss(loss_terms(s, leaves, ctx, ic), w)
    f0, g = value_and_grad(fn, s.params)
    x0 = s.params.flatten()
    rng = np.random.default_rng(0)
    for _ in range(5):
        d = rng.normal(size=x0.size)
        d /= np.linalg.norm(d)
        h = 1e-5
        fp = fn(s.params.with_flat(x0 + h * d).leaves()).data
        fm = fn(s.params.with_flat(x0 - h * d).leaves()).data
        fd = (fp - fm) / (2 * h)
        assert abs(fd - g @ d) <= 1e-5 * max(abs(fd), 1e-8)


@pytest.mark.xfail(strict=True, reason="same GL boundary layer as the weak floor: 0.42 over all nodes")
def test_strong_exact_floor():
    p, sets, ctx, prov = exact_setup()
    c = prov.components(sets.x, sets.t, sets.samples.xi)
    assert loss_strong(c, ctx).data <= 1e-4


def test_strong_exact_floor_interior():
    p, sets, ctx, prov = exact_setup()
    c = prov.components(sets.x, sets.t, sets.samples.xi)
    R = residual(c, ctx).data[..., 25:-25]
    assert np.mean(R ** 2) <= 1e-4
