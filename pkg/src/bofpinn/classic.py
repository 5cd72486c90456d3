"""Reference solvers: fractional FDM (CN, CN-ADI), QMC ensembles and the BO equations.

Time stepping for the deterministic solver is Crank-Nicolson on the linear
fractional term with the reaction extrapolated to the half step
(``1.5 N(u^n) - 0.5 N(u^{n-1})``, a predictor-corrector start on the first
step) and the forcing evaluated exactly at ``t_{n+1/2}``.  The scheme is
second order in time.

The BO system integrates ``(mean, u_i, Y_i)`` with scaled modes
``<u_i, u_j> = lam_i delta_ij`` and ``E[Y_i Y_j] = delta_ij``:

    d mean/dt   = E[L]
    lam_i dY_i  = -sum_j S_ij Y_j + <L - E L, u_i>
    d u_i/dt    = -sum_j M_ij u_j + E[L Y_i]

with ``L = mu D u + eps K f(u) + g``, ``G_ij = <E[L Y_j], u_i>``,
``M_ij = (G_ij + G_ji)/(lam_j - lam_i)`` and ``S_ij = G_ij + lam_i M_ij``
(``S_ii = G_ii``).
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .fracops import Grid1D, gl_matrix
from .problems import ProblemSpec, reaction
from .stochastic import SampleSet, kl_decompose

__all__ = [
    "EnsembleStats",
    "BOState",
    "BOTrajectory",
    "CrossingDetected",
    "SampleFailure",
    "fdm_solve_1d",
    "fdm_solve_2d_adi",
    "qmc_ensemble_solve",
    "bo_rhs",
    "bo_step_ab3",
    "ab3_solve",
    "rk4_step",
    "kl_restart",
    "qmc_bo_solve",
    "trapezoid_inner",
]

CHUNK = 64


class CrossingDetected(RuntimeError):
    """BO eigenvalues met or changed order; the closed-form S/M matrices are singular."""

    def __init__(self, t, lam, reason="crossing detected"):
        self.t, self.lam = float(t), np.array(lam)
        super().__init__(f"{reason} at t={self.t:.6g} (lambda={np.array2string(self.lam, precision=4)})")


class SampleFailure(RuntimeError):
    def __init__(self, index, msg="non-finite solution"):
        self.index = int(index)
        super().__init__(f"sample {self.index}: {msg}")


@dataclass
class EnsembleStats:
    times: np.ndarray
    mean: np.ndarray  # (n_times, *space)
    variance: np.ndarray
    final: Optional[np.ndarray] = None  # ensemble at the last time, (n_samples, *space)


def _grid(problem: ProblemSpec, N) -> Grid1D:
    a, b = problem.domain[0]
    return Grid1D(a, b, N)


def _step_count(T, dt):
    if dt <= 0:
        raise ValueError("time step must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"final time {T} is not a multiple of dt={dt}")
    return n


def _save_steps(times, dt, n_steps):
    if times is None:
        return {n_steps: 0}, np.array([n_steps * dt])
    out = {}
    for k, t in enumerate(times):
        s = int(round(t / dt))
        if abs(s * dt - t) > 1e-9 * max(1.0, abs(t)) or s < 0 or s > n_steps:
            raise ValueError(f"save time {t} is not on the time grid")
        if s in out:
            raise ValueError(f"duplicate save time {t}")
        out[s] = k
    return out, np.array([float(t) for t in times])


def _nonlinear(problem, u, kfac):
    if problem.reaction is None or problem.eps == 0:
        return np.zeros_like(u)
    shape = (-1,) + (1,) * (u.ndim - 1)
    return kfac.reshape(shape) * reaction(u)


# ---------------------------------------------------------------------------
# deterministic FDM


def _cn_batch_1d(problem, grid, dt, xi, n_steps, save, order=2, mu=None, alpha=None):
    """Crank-Nicolson for a batch of samples; returns ``(n_save, n_batch, n_nodes)``."""
    mu = problem.mu if mu is None else mu
    alpha = problem.alpha if alpha is None else alpha
    x = grid.nodes
    Li = mu * gl_matrix(grid, alpha, order)[1:-1, 1:-1]
    n_int = grid.N - 1
    I = np.eye(n_int)
    lu = lu_factor(I - 0.5 * dt * Li)
    B = I + 0.5 * dt * Li
    n_b = xi.shape[0]
    kfac = problem.reaction_factor(xi) if problem.reaction else np.zeros(n_b)
    u = problem.ic(x, xi)
    u = np.array(np.broadcast_to(u, (n_b, grid.n_nodes)), dtype=np.float64)
    u[:, 0] = u[:, -1] = 0.0
    out = np.empty((len(save), n_b, grid.n_nodes))
    if 0 in save:
        out[save[0]] = u
    static = not getattr(problem.forcing, "time_dependent", True)
    g_static = problem.forcing(x, 0.0, xi)[:, 1:-1] if static else None
    Nprev = None
    for n in range(n_steps):
        t_mid = (n + 0.5) * dt
        g = g_static if static else problem.forcing(x, t_mid, xi)[:, 1:-1]
        ui = u[:, 1:-1]
        Nn = _nonlinear(problem, ui, kfac)
        if Nprev is None:
            # predictor for the first step gives a second-order start
            rhs = ui @ B.T + dt * (Nn + g)
            up = lu_solve(lu, rhs.T).T
            Nh = _nonlinear(problem, 0.5 * (ui + up), kfac)
        else:
            Nh = 1.5 * Nn - 0.5 * Nprev
        rhs = ui @ B.T + dt * (Nh + g)
        u = np.zeros_like(u)
        u[:, 1:-1] = lu_solve(lu, rhs.T).T
        Nprev = Nn
        if n + 1 in save:
            out[save[n + 1]] = u
    return out


def fdm_solve_1d(problem: ProblemSpec, N: int, dt: float, xi=None, times: Optional[Sequence] = None,
                 order: int = 2, T: Optional[float] = None):
    """Deterministic solve for one random input ``xi`` (or the only one).

    Returns ``(times, U)`` with ``U`` of shape ``(n_times, N+1)``.
    """
    if problem.dim != 1:
        raise ValueError("fdm_solve_1d needs a 1D problem")
    grid = _grid(problem, N)
    T = problem.T if T is None else T
    n_steps = _step_count(T, dt)
    xi = np.zeros((1, problem.xi_dim)) if xi is None else np.atleast_2d(np.asarray(xi, dtype=np.float64))
    if xi.shape[0] != 1:
        raise ValueError("fdm_solve_1d takes a single random input; use qmc_ensemble_solve for batches")
    save, tt = _save_steps(times, dt, n_steps)
    U = _cn_batch_1d(problem, grid, dt, xi, n_steps, save, order)[:, 0]
    if not np.all(np.isfinite(U)):
        raise FloatingPointError("FDM solution became non-finite")
    return tt, U


def _adi_batch(problem, grids, dt, xi, n_steps, save, order=2):
    g1, g2 = grids
    mu = problem.mu
    A1 = mu * gl_matrix(g1, problem.alpha, order)[1:-1, 1:-1]
    A2 = mu * gl_matrix(g2, problem.beta, order)[1:-1, 1:-1]
    I1, I2 = np.eye(g1.N - 1), np.eye(g2.N - 1)
    lu1 = lu_factor(I1 - 0.5 * dt * A1)
    lu2 = lu_factor(I2 - 0.5 * dt * A2)
    P1, P2 = I1 + 0.5 * dt * A1, I2 + 0.5 * dt * A2
    x = (g1.nodes, g2.nodes)
    n_b = xi.shape[0]
    kfac = problem.reaction_factor(xi) if problem.reaction else np.zeros(n_b)
    u = np.array(np.broadcast_to(problem.ic(x, xi), (n_b, g1.n_nodes, g2.n_nodes)), dtype=np.float64)
    u[:, 0, :] = u[:, -1, :] = u[:, :, 0] = u[:, :, -1] = 0.0
    out = np.empty((len(save), n_b, g1.n_nodes, g2.n_nodes))
    if 0 in save:
        out[save[0]] = u
    static = not getattr(problem.forcing, "time_dependent", True)
    g_static = problem.forcing(x, 0.0, xi)[:, 1:-1, 1:-1] if static else None
    n1, n2 = g1.N - 1, g2.N - 1

    def solve_x1(rhs):  # (b, n1, n2): (I - dt/2 A1) along axis 1
        r = np.moveaxis(rhs, 1, 0).reshape(n1, -1)
        return np.moveaxis(lu_solve(lu1, r).reshape(n1, n_b, n2), 0, 1)

    def solve_x2(rhs):
        r = np.moveaxis(rhs, 2, 0).reshape(n2, -1)
        return np.moveaxis(lu_solve(lu2, r).reshape(n2, n_b, n1), 0, 2)

    def half(ui, F):
        # Peaceman-Rachford: implicit x1 then implicit x2
        s = ui @ P2.T + 0.5 * dt * F
        us = solve_x1(s)
        s2 = np.einsum("ij,bjk->bik", P1, us) + 0.5 * dt * F
        return solve_x2(s2)

    Nprev = None
    for n in range(n_steps):
        t_mid = (n + 0.5) * dt
        g = g_static if static else problem.forcing(x, t_mid, xi)[:, 1:-1, 1:-1]
        ui = u[:, 1:-1, 1:-1]
        Nn = _nonlinear(problem, ui, kfac)
        if Nprev is None:
            up = half(ui, Nn + g)
            Nh = _nonlinear(problem, 0.5 * (ui + up), kfac)
        else:
            Nh = 1.5 * Nn - 0.5 * Nprev
        u = np.zeros_like(u)
        u[:, 1:-1, 1:-1] = half(ui, Nh + g)
        Nprev = Nn
        if n + 1 in save:
            out[save[n + 1]] = u
    return out


def fdm_solve_2d_adi(problem: ProblemSpec, N: int | tuple, dt: float, xi=None,
                     times: Optional[Sequence] = None, order: int = 2, T: Optional[float] = None):
    """CN-ADI (Peaceman-Rachford) solve of a 2D instance; ``U`` is ``(n_times, n1, n2)``."""
    if problem.dim != 2:
        raise ValueError("fdm_solve_2d_adi needs a 2D problem")
    N1, N2 = (N, N) if np.isscalar(N) else N
    grids = (Grid1D(*problem.domain[0], N1), Grid1D(*problem.domain[1], N2))
    T = problem.T if T is None else T
    n_steps = _step_count(T, dt)
    xi = np.zeros((1, problem.xi_dim)) if xi is None else np.atleast_2d(np.asarray(xi, dtype=np.float64))
    save, tt = _save_steps(times, dt, n_steps)
    U = _adi_batch(problem, grids, dt, xi[:1], n_steps, save, order)[:, 0]
    if not np.all(np.isfinite(U)):
        raise FloatingPointError("ADI solution became non-finite")
    return tt, U


# ---------------------------------------------------------------------------
# ensembles


def _weighted_stats(samples_w, U):
    # U: (n_save, n_samples, ...) ; fixed-order reductions
    w = samples_w / samples_w.sum()
    mean = np.tensordot(w, U, axes=(0, 1))
    dev = U - mean[:, None]
    var = np.tensordot(w, dev * dev, axes=(0, 1))
    return mean, var


def qmc_ensemble_solve(problem: ProblemSpec, samples: SampleSet, N, dt: float,
                       times: Optional[Sequence] = None, order: int = 2, T: Optional[float] = None,
                       workers: int = 1, keep_final: bool = False, chunk: int = CHUNK) -> EnsembleStats:
    """Per-sample deterministic solves with weighted mean/variance.

    Samples are processed in fixed chunks of ``chunk`` so the statistics do not
    depend on ``workers``.
    """
    T = problem.T if T is None else T
    n_steps = _step_count(T, dt)
    save, tt = _save_steps(times, dt, n_steps)
    xi = samples.xi
    if xi.shape[1] < problem.xi_dim:
        raise ValueError(f"samples have dimension {xi.shape[1]}, problem needs {problem.xi_dim}")
    if problem.dim == 1:
        grid = _grid(problem, N)
        run = lambda b: _cn_batch_1d(problem, grid, dt, b, n_steps, save, order)
    else:
        N1, N2 = (N, N) if np.isscalar(N) else N
        grids = (Grid1D(*problem.domain[0], N1), Grid1D(*problem.domain[1], N2))
        run = lambda b: _adi_batch(problem, grids, dt, b, n_steps, save, order)
    starts = list(range(0, xi.shape[0], chunk))
    batches = [xi[s:s + chunk] for s in starts]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    U = np.concatenate(parts, axis=1)
    bad = ~np.all(np.isfinite(U.reshape(U.shape[0], U.shape[1], -1)), axis=(0, 2))
    if np.any(bad):
        raise SampleFailure(int(np.nonzero(bad)[0][0]))
    mean, var = _weighted_stats(samples.weights, U)
    return EnsembleStats(tt, mean, var, U[-1] if keep_final else None)


# ---------------------------------------------------------------------------
# BO system


def trapezoid_inner(w, f, g):
    """``<f, g>`` with trapezoid weights ``w`` along the last axis."""
    return np.sum(f * g * w, axis=-1)


@dataclass
class BOState:
    t: float
    mean: np.ndarray  # (n_x,)
    modes: np.ndarray  # (N, n_x), <u_i, u_j> = lam_i delta_ij
    Y: np.ndarray  # (M, N)
    weights: np.ndarray  # sample weights, sum 1
    xi: np.ndarray  # (M, d) random inputs carried with the samples

    @property
    def N(self) -> int:
        return self.modes.shape[0]

    def lam(self, w) -> np.ndarray:
        return trapezoid_inner(w, self.modes, self.modes)

    def ensemble(self) -> np.ndarray:
        return self.mean + self.Y @ self.modes

    def copy(self) -> "BOState":
        return BOState(self.t, self.mean.copy(), self.modes.copy(), self.Y.copy(), self.weights, self.xi)


@dataclass
class BORhs:
    d_mean: np.ndarray
    d_modes: np.ndarray
    d_Y: np.ndarray
    G: np.ndarray
    S: np.ndarray
    M: np.ndarray
    lam: np.ndarray


class _BOContext:
    def __init__(self, problem, grid, order=2):
        self.problem, self.grid = problem, grid
        self.L = problem.mu * gl_matrix(grid, problem.alpha, order)
        self.w = grid.trapezoid_weights()
        self.x = grid.nodes
        self._g_static = None

    def forcing(self, t, xi):
        f = self.problem.forcing
        if not getattr(f, "time_dependent", True):
            if self._g_static is None:
                self._g_static = f(self.x, 0.0, xi)
            return self._g_static
        return f(self.x, t, xi)


def _check_gap(t, lam, gap_tol, prev_order=True):
    if lam.size < 2:
        return
    scale = max(lam[0], np.max(lam))
    if np.any(np.diff(lam) >= 0):
        raise CrossingDetected(t, lam)
    if np.min(-np.diff(lam)) < gap_tol * scale:
        raise CrossingDetected(t, lam)


def bo_rhs(state: BOState, problem: ProblemSpec, grid: Grid1D, gap_tol: float = 1e-6,
           ctx: Optional[_BOContext] = None) -> BORhs:
    """Time derivatives of the BO unknowns plus the matrices ``G, S, M``.

    Eigenvalues must be strictly decreasing with relative gaps above
    ``gap_tol``; otherwise :class:`CrossingDetected` is raised.
    """
    ctx = ctx or _BOContext(problem, grid)
    w, wq = ctx.w, state.weights
    lam = state.lam(w)
    _check_gap(state.t, lam, gap_tol)
    u = state.ensemble()
    Lu = ctx.L @ state.mean + state.Y @ (state.modes @ ctx.L.T)
    total = Lu[None, :] if Lu.ndim == 1 else Lu
    total = total + _nonlinear(problem, u, problem.reaction_factor(state.xi) if problem.reaction else
                               np.zeros(u.shape[0])) + ctx.forcing(state.t, state.xi)
    total[:, 0] = total[:, -1] = 0.0
    EL = wq @ total
    F = (total * wq[:, None]).T @ state.Y  # (n_x, N): E[L Y_j]
    F = F.T
    G = trapezoid_inner(w, state.modes[:, None, :], F[None, :, :])  # G_ij = <F_j, u_i>
    Nm = state.N
    M = np.zeros((Nm, Nm))
    S = np.zeros((Nm, Nm))
    for i in range(Nm):
        for j in range(Nm):
            if i != j:
                M[i, j] = (G[i, j] + G[j, i]) / (lam[j] - lam[i])
    for i in range(Nm):
        for j in range(Nm):
            S[i, j] = G[i, i] if i == j else G[i, j] + lam[i] * M[i, j]
    d_mean = EL
    d_modes = -M @ state.modes + F
    proj = trapezoid_inner(w, (total - EL)[:, None, :], state.modes[None, :, :])  # (M, N)
    d_Y = (-state.Y @ S.T + proj) / lam[None, :]
    return BORhs(d_mean, d_modes, d_Y, G, S, M, lam)


def rk4_step(f: Callable, t, y, dt):
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def bo_step_ab3(history, y, dt):
    """Third-order Adams-Bashforth update from the last three derivatives (newest last)."""
    if len(history) < 3:
        raise ValueError("AB3 needs three stored derivative evaluations")
    f0, f1, f2 = history[-3], history[-2], history[-1]
    return y + dt * (23.0 * f2 - 16.0 * f1 + 5.0 * f0) / 12.0


def ab3_solve(f: Callable, y0, t0: float, dt: float, n_steps: int, callback=None):
    """Integrate ``y' = f(t, y)``: two RK4 steps, then AB3.  Returns the final ``y``."""
    y = np.asarray(y0, dtype=np.float64)
    t = t0
    hist = deque(maxlen=3)
    hist.append(f(t, y))
    for n in range(n_steps):
        if n < 2:
            y = rk4_step(f, t, y, dt)
        else:
            y = bo_step_ab3(hist, y, dt)
        t = t0 + (n + 1) * dt
        if callback is not None:
            callback(n + 1, t, y)
        if n + 1 < n_steps:
            hist.append(f(t, y))
    return y


def kl_restart(U, weights, grid: Grid1D, N: int, t: float = 0.0, xi=None, rel_tol: float = 1e-12) -> BOState:
    """BO state from an ensemble ``U`` (``(M, n_x)``) by discrete KL.

    Modes are flipped so their first significant entry (from the left) is
    positive.
    """
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] == 0:
        raise ValueError("ensemble must be a nonempty (M, n_x) array")
    wq = np.asarray(weights, dtype=np.float64)
    wq = wq / wq.sum()
    mean = wq @ U
    D = U - mean
    C = (D * wq[:, None]).T @ D
    w = grid.trapezoid_weights()
    basis = kl_decompose(0.5 * (C + C.T), w)
    lam = basis.eigvals
    # round-off in the centring leaves ~eps^2 eigenvalues for identical members
    scale = max(float(trapezoid_inner(w, mean, mean)), float(np.max(np.abs(U))) ** 2, 1e-300)
    if lam[0] <= 1e-24 * scale:
        raise ValueError("zero-variance ensemble: no BO modes can be built")
    attainable = int(np.sum(lam > rel_tol * lam[0]))
    if N > attainable:
        raise ValueError(f"requested {N} modes but only {attainable} have nonzero variance")
    V = basis.modes[:N].copy()
    for i in range(N):
        k = np.nonzero(np.abs(V[i]) > 1e-8 * np.max(np.abs(V[i])))[0][0]
        if V[i, k] < 0:
            V[i] = -V[i]
    modes = np.sqrt(lam[:N])[:, None] * V
    Y = trapezoid_inner(w, D[:, None, :], V[None, :, :]) / np.sqrt(lam[:N])[None, :]
    xi = np.zeros((U.shape[0], 0)) if xi is None else xi
    return BOState(t, mean, modes, Y, wq, xi)


@dataclass
class BOTrajectory:
    times: np.ndarray
    mean: np.ndarray  # (n_times, n_x)
    modes: np.ndarray  # (n_times, N, n_x)
    Y: np.ndarray  # (n_times, M, N)
    stats: EnsembleStats
    drift: dict = field(default_factory=dict)


def _pack(s: BOState):
    return np.concatenate([s.mean, s.modes.ravel(), s.Y.ravel()])


def _unpack(y, s: BOState, t):
    nx, N, M = s.mean.size, s.N, s.Y.shape[0]
    return BOState(t, y[:nx].copy(), y[nx:nx + N * nx].reshape(N, nx).copy(),
                   y[nx + N * nx:].reshape(M, N).copy(), s.weights, s.xi)


def qmc_bo_solve(problem: ProblemSpec, samples: SampleSet, N_grid: int, n_modes: int, t_s: float,
                 dt: float = 5e-5, T: Optional[float] = None, times: Optional[Sequence] = None,
                 gap_tol: float = 1e-6, order: int = 2, workers: int = 1) -> BOTrajectory:
    """QMC up to ``t_s``, KL restart, then AB3 on the BO system (RK4 start).

    Statistics at stored times are taken from the reconstructed ensemble
    ``mean + sum_i Y_i u_i``.  Raises :class:`CrossingDetected` (with the time
    stamp) if two eigenvalues meet.
    """
    if problem.dim != 1:
        raise ValueError("qmc_bo_solve is implemented for 1D problems")
    if t_s <= 0:
        raise ValueError("switch time must be positive")
    T = problem.T if T is None else T
    times = [T] if times is None else list(times)
    grid = _grid(problem, N_grid)
    pre = qmc_ensemble_solve(problem, samples, N_grid, dt, times=[t_s], T=t_s, order=order,
                             workers=workers, keep_final=True)
    state = kl_restart(pre.final, samples.weights, grid, n_modes, t=t_s, xi=samples.xi)
    ctx = _BOContext(problem, grid, order)
    w = ctx.w
    n_steps = _step_count(T - t_s, dt) if T > t_s else 0
    save = {}
    for k, tv in enumerate(times):
        s = int(round((tv - t_s) / dt))
        if s < 0 or s > n_steps or abs(s * dt + t_s - tv) > 1e-8:
            raise ValueError(f"save time {tv} is not on the BO time grid")
        save[s] = k
    out_mean = np.zeros((len(times), grid.n_nodes))
    out_modes = np.zeros((len(times), n_modes, grid.n_nodes))
    out_Y = np.zeros((len(times), samples.n, n_modes))
    ens = np.zeros((len(times), samples.n, grid.n_nodes))
    drift = {"orth": 0.0, "cov": 0.0}

    def record(k, s):
        out_mean[k], out_modes[k], out_Y[k] = s.mean, s.modes, s.Y
        ens[k] = s.ensemble()

    def measure(s):
        lam = s.lam(w)
        gram = trapezoid_inner(w, s.modes[:, None, :], s.modes[None, :, :])
        off = gram - np.diag(np.diag(gram))
        drift["orth"] = max(drift["orth"], float(np.max(np.abs(off))) / float(np.max(lam)))
        Yc = s.Y
        cov = (Yc * s.weights[:, None]).T @ Yc
        drift["cov"] = max(drift["cov"], float(np.max(np.abs(cov - np.eye(s.N)))))

    if 0 in save:
        record(save[0], state)

    def f(t, y):
        s = _unpack(y, state, t)
        r = bo_rhs(s, problem, grid, gap_tol, ctx)
        return np.concatenate([r.d_mean, r.d_modes.ravel(), r.d_Y.ravel()])

    def cb(n, t, y):
        s = _unpack(y, state, t)
        if not np.all(np.isfinite(y)):
            raise CrossingDetected(t, s.lam(w), "non-finite BO state")
        _check_gap(t, s.lam(w), gap_tol)
        measure(s)
        if n in save:
            record(save[n], s)

    if n_steps:
        ab3_solve(f, _pack(state), t_s, dt, n_steps, callback=cb)
    mean, var = _weighted_stats(samples.weights, ens)
    stats = EnsembleStats(np.array(times, dtype=np.float64), mean, var)
    return BOTrajectory(np.array(times, dtype=np.float64), out_mean, out_modes, out_Y, stats, drift)
