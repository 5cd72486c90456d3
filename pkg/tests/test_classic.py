import math

import numpy as np
import pytest

from bofpinn.classic import (BOState, CrossingDetected, ab3_solve, bo_rhs, bo_step_ab3, fdm_solve_1d,
                             fdm_solve_2d_adi, kl_restart, qmc_bo_solve, qmc_ensemble_solve, trapezoid_inner)
from bofpinn.fracops import Grid1D, riesz_2d_apply
from bofpinn.problems import (AppDForcing, FunctionForcing, InitialCondition, ManufacturedBO, ProblemSpec,
                              ZeroForcing, appd_problem, forcing_static_problem, manufactured_problem)
from bofpinn.stochastic import SampleSet, gauss_legendre_rule, tensor_quadrature


def _gauss8():
    return SampleSet.from_quadrature(tensor_quadrature([gauss_legendre_rule(8, (0, 1))] * 2))


def _quiet(alpha=1.5, ic=None, T=0.1):
    ic = ic or (lambda x, xi=None: np.zeros_like(np.asarray(x, dtype=float)))
    return ProblemSpec("zero", 1, ((0.0, 1.0),), alpha, ZeroForcing(), InitialCondition(ic), T, 0, "unit",
                       reaction=None)


def test_zero_problem_stays_zero():
    _, U = fdm_solve_1d(_quiet(), 32, 0.01)
    assert np.all(U == 0)


def test_dt_validation():
    with pytest.raises(ValueError):
        fdm_solve_1d(_quiet(), 32, 0.0)
    with pytest.raises(ValueError):
        fdm_solve_1d(_quiet(), 32, -1e-3)


def _appd_err(N):
    p = appd_problem(1.5)
    tt, U = fdm_solve_1d(p, N, 1e-3, times=[1.0])
    x = Grid1D(0, 1, N).nodes
    ex = AppDForcing.exact(x, 1.0)
    return np.linalg.norm(U[-1] - ex) / np.linalg.norm(ex)


def test_appd_fdm_accuracy():
    assert _appd_err(512) <= 1e-3


def test_appd_fdm_ratio():
    r = _appd_err(128) / _appd_err(256)
    assert 3.2 <= r <= 4.8


def test_dissipative_energy():
    p = _quiet(ic=lambda x, xi=None: np.sin(np.pi * np.asarray(x)) + 0.3 * np.sin(3 * np.pi * np.asarray(x)))
    dt = 1e-3
    tt, U = fdm_solve_1d(p, 64, dt, times=[k * dt for k in range(101)])
    e = (U ** 2).sum(axis=1)
    assert np.all(np.diff(e) < 0)


def _sep2d(sym=True):
    g1 = Grid1D(0, 1, 64)
    beta = 1.5 if sym else 1.7
    ex = lambda t: math.exp(-t) * np.outer(np.sin(2 * np.pi * g1.nodes), np.sin(2 * np.pi * g1.nodes))

    def forcing(x, t):
        u = ex(t)
        L = np.zeros_like(u)
        L[1:-1, 1:-1] = riesz_2d_apply(u, g1, g1, 1.5, beta)
        return -u - L

    ic = lambda x, xi=None: np.outer(np.sin(2 * np.pi * x[0]), np.sin(2 * np.pi * x[1]))
    p = ProblemSpec("sep2d", 2, ((0.0, 1.0), (0.0, 1.0)), 1.5, FunctionForcing(forcing), InitialCondition(ic),
                    0.5, 0, "unit", beta=beta, reaction=None)
    return p, ex


def test_adi_manufactured():
    p, ex = _sep2d(sym=False)
    _, U = fdm_solve_2d_adi(p, 64, 5e-3)
    assert np.linalg.norm(U[-1] - ex(0.5)) / np.linalg.norm(ex(0.5)) <= 5e-3


def test_adi_symmetry_and_zero():
    p, _ = _sep2d(sym=True)
    _, U = fdm_solve_2d_adi(p, 64, 5e-3)
    assert np.max(np.abs(U[-1] - U[-1].T)) <= 1e-10
    z = p.with_(forcing=ZeroForcing(2), ic=InitialCondition(lambda x, xi=None: np.zeros((65, 65))))
    _, Z = fdm_solve_2d_adi(z, 64, 5e-3)
    assert np.all(Z == 0)


def test_qmc_deterministic_forcing_no_variance():
    p = appd_problem(1.5, T=0.1)
    s = SampleSet.equal(np.zeros((5, 0)))
    st_ = qmc_ensemble_solve(p, s, 32, 1e-2)
    assert np.all(st_.variance <= 1e-20)


def test_qmc_linear_mean_matches_mean_forcing():
    p = forcing_static_problem(n_kl=5, length=0.4, eps=0.0, T=0.2).with_(reaction=None)
    xi = p.sample_xi(256, seed=1)
    s = SampleSet.equal(xi, "sobol", 1)
    st_ = qmc_ensemble_solve(p, s, 40, 1e-2, keep_final=True)
    mean_forcing = p.with_(forcing=FunctionForcing(lambda x, t: p.forcing.mean(x, t)), xi_dim=0)
    _, U = fdm_solve_1d(mean_forcing, 40, 1e-2)
    se = np.sqrt(st_.variance[-1] / s.n)
    assert np.all(np.abs(st_.mean[-1] - U[-1]) <= 2 * se + 1e-14)


def test_qmc_manufactured_variance_at_pi():
    p = manufactured_problem(1.5)
    dt = math.pi / 1000
    st_ = qmc_ensemble_solve(p, _gauss8(), 64, dt)
    v = st_.variance[-1][32]
    assert abs(v - 2.25) <= 0.03 * 2.25
    assert np.all(st_.variance >= 0)


def test_workers_bitwise():
    p = forcing_static_problem(n_kl=5, length=0.4, T=0.05)
    s = SampleSet.equal(p.sample_xi(40, seed=2), "sobol", 2)
    a = qmc_ensemble_solve(p, s, 30, 1e-2, workers=1, chunk=8)
    b = qmc_ensemble_solve(p, s, 30, 1e-2, workers=3, chunk=8)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.variance, b.variance)


# -- BO system on exact components of the crossing benchmark

def _exact_state(t, grid):
    mb = ManufacturedBO
    s = _gauss8()
    x = grid.nodes
    a = mb.a(t)
    order = np.argsort(-a)
    modes = (a[:, None] * mb.modes(x))[order]
    Y = mb.Y(s.xi)[:, order]
    return BOState(t, mb.mean(x, t), modes, Y, s.weights, s.xi), a[order], mb.a_t(t)[order]


def test_bo_rhs_exact_components():
    # sin modes have a kinked zero extension; 512 cells puts the GL error well under 1%
    grid = Grid1D(0, 1, 512)
    p = manufactured_problem(1.5)
    st_, a, a_t = _exact_state(0.1, grid)
    r = bo_rhs(st_, p, grid)
    assert np.all(np.diag(r.M) == 0)
    np.testing.assert_allclose(np.diag(r.S), a * a_t, rtol=1e-2)
    mb = ManufacturedBO
    order = np.argsort(-mb.a(0.1))
    du_exact = (a_t[:, None] * mb.modes(grid.nodes)[order])
    x = grid.nodes
    inner = (x > 0.1) & (x < 0.9)
    rel = np.linalg.norm((r.d_modes - du_exact)[:, inner]) / np.linalg.norm(du_exact[:, inner])
    assert rel <= 1e-2
    assert np.max(np.abs(r.d_Y)) <= 1e-2 * np.max(np.abs(st_.Y))
    rel_mean = np.linalg.norm(r.d_mean - mb.mean_t(x, 0.1)) / np.linalg.norm(mb.mean_t(x, 0.1))
    assert rel_mean <= 1e-2


@pytest.mark.xfail(strict=True, reason="GL boundary layer: the zero extension of sin(pi x) has a kink, so the "
                   "discrete operator misses the x^(1-alpha) singularity at x_1 and the full-grid L2 "
                   "mismatch stays near 100% under refinement")
def test_bo_rhs_exact_components_full_grid():
    grid = Grid1D(0, 1, 512)
    st_, a, a_t = _exact_state(0.1, grid)
    r = bo_rhs(st_, manufactured_problem(1.5), grid)
    order = np.argsort(-ManufacturedBO.a(0.1))
    du = a_t[:, None] * ManufacturedBO.modes(grid.nodes)[order]
    assert np.linalg.norm(r.d_modes - du) / np.linalg.norm(du) <= 1e-2


def test_bo_rhs_s_matches_fd_of_lambda():
    grid = Grid1D(0, 1, 256)
    p = manufactured_problem(1.5)
    h = 1e-4
    st_, _, _ = _exact_state(0.2, grid)
    lam = lambda t: _exact_state(t, grid)[0].lam(grid.trapezoid_weights())
    dlam = (lam(0.2 + h) - lam(0.2 - h)) / (2 * h)
    r = bo_rhs(st_, p, grid)
    np.testing.assert_allclose(np.diag(r.S), 0.5 * dlam, rtol=1e-2)


def test_bo_rhs_crossing_guard():
    grid = Grid1D(0, 1, 32)
    st_, _, _ = _exact_state(math.pi / 8, grid)
    st_.modes[1] = st_.modes[1] * math.sqrt(st_.lam(grid.trapezoid_weights())[0] /
                                            st_.lam(grid.trapezoid_weights())[1])
    with pytest.raises(CrossingDetected, match="crossing detected"):
        bo_rhs(st_, manufactured_problem(1.5), grid)


# -- AB3

def test_ab3_scalar_decay():
    y = ab3_solve(lambda t, y: -y, np.array([1.0]), 0.0, 1e-3, 1000)
    assert abs(y[0] - math.exp(-1)) <= 1e-8


def test_ab3_quadratic_rhs_exact():
    y = ab3_solve(lambda t, y: np.array([3 * t * t - 2 * t + 1]), np.array([0.0]), 0.0, 0.01, 100)
    assert abs(y[0] - (1 - 1 + 1)) <= 1e-12


def test_ab3_slope():
    errs = [abs(ab3_solve(lambda t, y: -y, np.array([1.0]), 0.0, dt, int(round(1 / dt)))[0] - math.exp(-1))
            for dt in (4e-3, 2e-3, 1e-3)]
    slope = np.polyfit(np.log([4e-3, 2e-3, 1e-3]), np.log(errs), 1)[0]
    assert abs(slope - 3.0) <= 0.3


def test_ab3_needs_history():
    with pytest.raises(ValueError):
        bo_step_ab3([np.zeros(1)] * 2, np.zeros(1), 0.1)


# -- restart

def test_restart_zero_variance():
    grid = Grid1D(0, 1, 20)
    U = np.tile(np.sin(np.pi * grid.nodes), (10, 1))
    with pytest.raises(ValueError, match="zero-variance"):
        kl_restart(U, np.full(10, 0.1), grid, 1)


def test_restart_too_many_modes():
    grid = Grid1D(0, 1, 20)
    rng = np.random.default_rng(0)
    U = rng.normal(size=(3, 1)) * np.sin(np.pi * grid.nodes)[None]
    with pytest.raises(ValueError, match="only 1"):
        kl_restart(U, np.full(3, 1 / 3), grid, 2)


def test_restart_reconstruction_and_signs():
    grid = Grid1D(0, 1, 40)
    rng = np.random.default_rng(1)
    x = grid.nodes
    base = np.stack([np.sin(k * np.pi * x) / k for k in range(1, 7)])
    U = rng.normal(size=(200, 6)) @ base + x * (1 - x)
    w = np.full(200, 1 / 200)
    st_ = kl_restart(U, w, grid, 3)
    wx = grid.trapezoid_weights()
    lam_all = kl_restart(U, w, grid, 6).lam(wx)
    energy = lam_all[:3].sum() / lam_all.sum()
    D = U - st_.ensemble()
    mse = np.mean(trapezoid_inner(wx, D, D))
    assert mse <= (1 - energy) * lam_all.sum() * (1 + 1e-6)
    for m in st_.modes:
        k = np.nonzero(np.abs(m) > 1e-8 * np.abs(m).max())[0][0]
        assert m[k] > 0
    cov = (st_.Y * w[:, None]).T @ st_.Y
    np.testing.assert_allclose(cov, np.eye(3), atol=1e-10)


def test_restart_recovers_exact_amplitudes():
    grid = Grid1D(0, 1, 128)
    s = _gauss8()
    ts = math.pi / 10
    U = ManufacturedBO.u(grid.nodes, ts, s.xi)
    st_ = kl_restart(U, s.weights, grid, 2)
    a = np.sqrt(st_.lam(grid.trapezoid_weights()))
    np.testing.assert_allclose(np.sort(a), np.sort(ManufacturedBO.a(ts)), rtol=1e-2)


# -- hybrid solver

def test_qmc_bo_crossing_near_pi_over_8():
    p = manufactured_problem(1.5)
    with pytest.raises(CrossingDetected) as ei:
        qmc_bo_solve(p, _gauss8(), 64, 2, t_s=0.05, dt=1e-4, T=0.6)
    assert abs(ei.value.t - math.pi / 8) <= 0.02


def test_qmc_bo_mean_continuous_and_drift():
    p = forcing_static_problem(n_kl=5, length=0.4, T=0.1)
    s = SampleSet.equal(p.sample_xi(128, seed=0), "sobol", 0)
    ts = 0.02
    traj = qmc_bo_solve(p, s, 50, 4, t_s=ts, dt=1e-3, times=[ts, 0.1])
    pre = qmc_ensemble_solve(p, s, 50, 1e-3, times=[ts], T=ts)
    assert np.max(np.abs(traj.mean[0] - pre.mean[0])) <= 1e-10
    assert traj.drift["orth"] <= 1e-3
    assert traj.drift["cov"] <= 2e-2
    ref = qmc_ensemble_solve(p, s, 50, 1e-3, times=[0.1], T=0.1)
    rel = np.linalg.norm(traj.stats.mean[-1] - ref.mean[-1]) / np.linalg.norm(ref.mean[-1])
    assert rel <= 2e-2


def test_qmc_bo_needs_positive_switch():
    p = forcing_static_problem(n_kl=5, length=0.4, T=0.1)
    with pytest.raises(ValueError):
        qmc_bo_solve(p, SampleSet.equal(p.sample_xi(8)), 20, 2, t_s=0.0)
