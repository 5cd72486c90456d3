"""Training sets, loss context and the five BO-fPINN loss terms.

The residual of the equation

    R = du/dt - mu L_h u - eps K(xi) f(u) - g

is formed on the interior grid nodes only (``L_h`` is the shifted GL matrix
restricted to interior rows).  The three weak residuals are

    eps1[t, x]    = E[R]
    eps2[t, l, i] = <R(., t; xi_l), U_i(., t)>      (trapezoid, R = 0 on the boundary)
    eps3[t, i, x] = E[R Y_i]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .autodiff import Tensor, constant, custom_op
from .fracops import Grid1D, gl_matrix, gl_matrix_dalpha, riesz_2d_matrix
from .problems import ProblemSpec, xi_normalized
from .stochastic import SampleSet, gauss_legendre_rule, tensor_quadrature
from .surrogate import Components

__all__ = [
    "LossWeights",
    "TrainingSets",
    "LossContext",
    "ICTargets",
    "InverseParams",
    "PhysParams",
    "Observations",
    "make_training_sets",
    "residual",
    "weak_residuals",
    "loss_weak",
    "loss_ic",
    "loss_bc",
    "loss_bo",
    "loss_strong",
    "loss_terms",
    "total_loss",
    "dynamic_weight_update",
    "frac_apply",
    "orthonormal_basis",
    "ic_targets_deterministic",
    "ic_targets_from_provider",
    "ic_targets_from_ensemble",
    "OffGridPoints",
    "TERMS",
]

TERMS = ("w", "ic", "bc", "bo", "g")


class OffGridPoints(ValueError):
    pass


# ---------------------------------------------------------------------------
# weights


@dataclass
class LossWeights:
    w: float = 1.0
    ic: float = 1.0
    bc: float = 1.0
    bo: float = 1.0
    g: float = 0.0
    data: float = 100.0
    dynamic: bool = False
    interval: int = 100
    rho: float = 0.1
    lo: float = 1e-2
    hi: float = 1e6

    def __post_init__(self):
        for k in TERMS + ("data",):
            v = getattr(self, k)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight lambda_{k}={v} must be finite and nonnegative")

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in TERMS}

    def copy(self) -> "LossWeights":
        return LossWeights(**{f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def from_mapping(cls, m: dict) -> "LossWeights":
        kw = {}
        for k, v in m.items():
            k = k.replace("lambda_", "")
            if k == "0":
                k = "g"
            kw[k] = v
        return cls(**kw)


def dynamic_weight_update(w: LossWeights, norms: dict) -> LossWeights:
    """``lam_k <- (1 - rho) lam_k + rho |grad MSE_w| / |grad MSE_k|`` (clamped).

    ``lambda_w`` is the anchor and never changes; terms with a zero gradient
    norm keep their weight, and terms switched off (weight 0) stay off.
    """
    if not w.dynamic:
        raise ValueError("dynamic weighting is off")
    out = w.copy()
    gw = float(norms["w"])
    for k in TERMS[1:]:
        gk = float(norms.get(k, 0.0))
        if gk == 0.0 or not np.isfinite(gk) or getattr(w, k) == 0.0:
            continue
        lam = (1.0 - w.rho) * getattr(w, k) + w.rho * gw / gk
        setattr(out, k, float(np.clip(lam, w.lo, w.hi)))
    return out


# ---------------------------------------------------------------------------
# training sets


def _xi_rule(law: str, n: int):
    if law == "normal":
        x, w = np.polynomial.hermite_e.hermegauss(n)
        return x, w / w.sum()
    intervals = {"unit": (0.0, 1.0), "uniform1": (-1.0, 1.0), "uniform3": (-math.sqrt(3), math.sqrt(3))}
    r = gauss_legendre_rule(n, intervals[law])
    return r.nodes[:, 0], r.weights / r.weights.sum()


@dataclass
class TrainingSets:
    grids: tuple  # one Grid1D per spatial dimension
    t: np.ndarray
    samples: SampleSet
    t0: float

    @property
    def dim(self) -> int:
        return len(self.grids)

    @property
    def x(self) -> np.ndarray:
        """Spatial nodes ``(n_x, d)`` (row-major over the grid axes)."""
        if self.dim == 1:
            return self.grids[0].nodes[:, None]
        g1, g2 = self.grids
        X1, X2 = np.meshgrid(g1.nodes, g2.nodes, indexing="ij")
        return np.stack([X1.ravel(), X2.ravel()], axis=1)

    @property
    def n_x(self) -> int:
        return int(np.prod([g.n_nodes for g in self.grids]))

    @property
    def wx(self) -> np.ndarray:
        w = self.grids[0].trapezoid_weights()
        for g in self.grids[1:]:
            w = np.outer(w, g.trapezoid_weights()).ravel()
        return w

    @property
    def boundary_mask(self) -> np.ndarray:
        if self.dim == 1:
            m = np.zeros(self.n_x, dtype=bool)
            m[[0, -1]] = True
            return m
        n1, n2 = (g.n_nodes for g in self.grids)
        b = np.zeros((n1, n2), dtype=bool)
        b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = True
        return b.ravel()

    def check_aligned(self, x) -> None:
        """Reject spatial points that are not nodes of the GL grid."""
        x = np.asarray(x, dtype=np.float64)
        x = x[:, None] if x.ndim == 1 else x
        for d, g in enumerate(self.grids):
            k = (x[:, d] - g.a) / g.dx
            if np.max(np.abs(k - np.round(k)), initial=0.0) > 1e-9 or np.any(k < -1e-9) or np.any(k > g.N + 1e-9):
                raise OffGridPoints("equation points must coincide with GL grid nodes")

    def permuted(self, seed: int) -> "TrainingSets":
        rng = np.random.default_rng(seed)
        pt = rng.permutation(len(self.t))
        pl = rng.permutation(self.samples.n)
        s = SampleSet(self.samples.xi[pl], self.samples.weights[pl], self.samples.generator, self.samples.seed,
                      dict(self.samples.meta))
        return TrainingSets(self.grids, self.t[pt], s, self.t0)


def make_training_sets(problem: ProblemSpec, N_grid, n_t: int, n_xi: int = 64, seed: int = 0,
                       window: Optional[tuple] = None, estimator: str = "auto", gauss_per_dim: int = 8,
                       t_split: Optional[list] = None, samples: Optional[SampleSet] = None) -> TrainingSets:
    """Grid-aligned spatial nodes, random-uniform time nodes and random-space nodes.

    ``estimator='auto'`` picks a Gauss tensor rule (``gauss_per_dim`` per axis)
    when the random dimension is at most 3 and equal-weight scrambled Sobol
    samples otherwise.  ``t_split`` is a list of ``(lo, hi, count)`` strata.
    """
    Ns = (N_grid,) * problem.dim if np.isscalar(N_grid) else tuple(N_grid)
    grids = tuple(Grid1D(a, b, int(n)) for (a, b), n in zip(problem.domain, Ns))
    t0, t1 = (0.0, problem.T) if window is None else (float(window[0]), float(window[1]))
    rng = np.random.default_rng([seed, 101])
    if t_split:
        t = np.concatenate([rng.uniform(lo, hi, int(c)) for lo, hi, c in t_split])
    else:
        t = rng.uniform(t0, t1, int(n_t))
    t = np.sort(t)
    if samples is None:
        d = problem.xi_dim
        if d == 0:
            samples = SampleSet.equal(np.zeros((1, 0)), "none")
        elif estimator == "gauss" or (estimator == "auto" and d <= 3):
            x1, w1 = _xi_rule(problem.xi_law, gauss_per_dim)
            grids_xi = np.meshgrid(*([x1] * d), indexing="ij")
            wts = np.ones_like(grids_xi[0])
            for W in np.meshgrid(*([w1] * d), indexing="ij"):
                wts = wts * W
            pts = np.stack([g.ravel() for g in grids_xi], axis=1)
            samples = SampleSet(pts, wts.ravel() / wts.sum(), "quadrature", None, {"kind": "gauss"})
        else:
            samples = SampleSet.equal(problem.sample_xi(int(n_xi), seed=seed, generator="sobol"), "sobol", seed)
    return TrainingSets(grids, t, samples, t0)


# ---------------------------------------------------------------------------
# physical parameters


@dataclass
class PhysParams:
    mu: object
    eps: object
    alpha: object

    @classmethod
    def of(cls, problem: ProblemSpec) -> "PhysParams":
        return cls(problem.mu, problem.eps, problem.alpha)

    def values(self) -> tuple:
        f = lambda v: float(v.data.ravel()[0]) if isinstance(v, Tensor) else float(v)
        return f(self.mu), f(self.eps), f(self.alpha)


class InverseParams:
    """Raw trainable scalars with ``mu = t_mu``, ``eps = t_eps`` and
    ``alpha = 0.5 tanh(t_alpha) + 1.5``."""

    names = ("inv_mu", "inv_eps", "inv_alpha")

    def __init__(self, mu0: float = 1.0, eps0: float = 1.0, theta_alpha0: float = 0.2):
        self.init = (float(mu0), float(eps0), float(theta_alpha0))

    def add_to(self, store) -> None:
        for n, v in zip(self.names, self.init):
            store[n] = np.array([v])

    @staticmethod
    def alpha_of(theta) -> float:
        return 0.5 * math.tanh(float(theta)) + 1.5

    def phys(self, params) -> PhysParams:
        mu, eps, th = (params[n] for n in self.names)
        if isinstance(th, Tensor):
            alpha = th.tanh() * 0.5 + 1.5
        else:
            alpha = 0.5 * np.tanh(th) + 1.5
        return PhysParams(mu, eps, alpha)

    @classmethod
    def recovered(cls, params) -> tuple:
        mu, eps, th = (float(np.asarray(params[n]).ravel()[0]) for n in cls.names)
        return mu, eps, cls.alpha_of(th)


@dataclass
class Observations:
    x: np.ndarray
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.t = np.asarray(self.t, dtype=np.float64).ravel()
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.x.size == 0:
            raise ValueError("observation set is empty")
        if not (self.x.size == self.t.size == self.values.size):
            raise ValueError("observation arrays must have equal length")


# ---------------------------------------------------------------------------
# context


def _take_last(V: Tensor, idx: np.ndarray) -> Tensor:
    # gather along the last axis with unique indices
    shape = V.shape

    def bw(g):
        full = np.zeros(shape)
        full[..., idx] = g
        return (full,)

    return custom_op(V.data[..., idx], (V,), bw, "take")


class LossContext:
    """Everything the loss needs that does not depend on the network parameters."""

    def __init__(self, problem: ProblemSpec, sets: TrainingSets, order: int = 2):
        self.problem, self.sets, self.order = problem, sets, order
        if problem.dim != sets.dim:
            raise ValueError("training grid dimension does not match the problem")
        self.x = sets.x
        self.wx = sets.wx
        bmask = sets.boundary_mask
        self.interior = np.nonzero(~bmask)[0]
        self.boundary = np.nonzero(bmask)[0]
        self.wx_int = self.wx[self.interior]
        self.wq = sets.samples.weights / sets.samples.weights.sum()
        xi = sets.samples.xi
        self.K = (problem.reaction_factor(xi) / problem.eps if problem.eps != 0 else
                  problem.with_(eps=1.0).reaction_factor(xi))
        self.reaction = problem.reaction is not None
        self._L = {}
        self.G = self._forcing()

    def _forcing(self) -> np.ndarray:
        p, s = self.problem, self.sets
        f = p.forcing
        xi = s.samples.xi if p.xi_dim else None

        def at(t):
            if p.dim == 1:
                v = f(s.grids[0].nodes, t, xi)
            else:
                v = f((s.grids[0].nodes, s.grids[1].nodes), t, xi)
            v = np.asarray(v, dtype=np.float64)
            n_l = s.samples.n
            v = v.reshape(-1, s.n_x) if v.ndim > 1 else v[None, :]
            return np.broadcast_to(v, (n_l, s.n_x))[:, self.interior]

        if not getattr(f, "time_dependent", True):
            return at(0.0)[None]
        return np.stack([at(t) for t in s.t])

    def L_int(self, alpha: float) -> np.ndarray:
        key = ("L", float(alpha))
        if key not in self._L:
            if len(self._L) > 8:
                self._L.clear()
            g = self.sets.grids
            if self.problem.dim == 1:
                M = gl_matrix(g[0], alpha, self.order)
            else:
                beta = self.problem.beta if self.problem.beta != self.problem.alpha else alpha
                M = riesz_2d_matrix(g[0], g[1], alpha, beta, self.order)
            self._L[key] = np.ascontiguousarray(M[self.interior].T)
        return self._L[key]

    def dL_int(self, alpha: float) -> np.ndarray:
        if self.problem.dim != 1:
            raise NotImplementedError("trainable alpha is supported in 1D only")
        key = ("dL", float(alpha))
        if key not in self._L:
            self._L[key] = np.ascontiguousarray(gl_matrix_dalpha(self.sets.grids[0], alpha, self.order)[
                self.interior].T)
        return self._L[key]


def frac_apply(V: Tensor, ctx: LossContext, alpha) -> Tensor:
    """Interior values of ``L_h V`` along the last axis; differentiable in ``alpha`` too."""
    if not isinstance(alpha, Tensor) or not alpha.requires_grad:
        a = float(alpha.data.ravel()[0]) if isinstance(alpha, Tensor) else float(alpha)
        return V @ constant(ctx.L_int(a))
    a = float(alpha.data.ravel()[0])
    LT, dLT = ctx.L_int(a), ctx.dL_int(a)
    Vd = V.data

    def bw(g):
        gV = g @ LT.T if V.requires_grad else None
        ga = np.array(np.sum(g * (Vd @ dLT))).reshape(alpha.shape)
        return gV, ga

    return custom_op(Vd @ LT, (V, alpha), bw, "frac")


# ---------------------------------------------------------------------------
# residual and losses


def _interior(V: Tensor, ctx: LossContext) -> Tensor:
    if ctx.problem.dim == 1:
        return V[..., 1:-1]
    return _take_last(V, ctx.interior)


def residual(c: Components, ctx: LossContext, phys: Optional[PhysParams] = None) -> Tensor:
    """Strong residual ``(n_t, n_xi, n_interior)``."""
    phys = phys or PhysParams.of(ctx.problem)
    n_t = c.mean.shape[0]
    mean_i = _interior(c.mean, ctx)
    mean_ti = _interior(c.mean_t, ctx)
    Lm = frac_apply(c.mean, ctx, phys.alpha)
    u = mean_i.reshape(n_t, 1, -1)
    u_t = mean_ti.reshape(n_t, 1, -1)
    Lu = Lm.reshape(n_t, 1, -1)
    if c.N:
        A = c.A.reshape(n_t, c.N, 1)
        P = A * c.U
        P_t = c.A_t.reshape(n_t, c.N, 1) * c.U + A * c.U_t
        Pi, P_ti = _interior(P, ctx), _interior(P_t, ctx)
        u = u + c.Y @ Pi
        u_t = u_t + c.Y @ P_ti + c.Y_t @ Pi
        Lu = Lu + c.Y @ frac_apply(P, ctx, phys.alpha)
    n_l = ctx.sets.samples.n
    if u.shape[1] != n_l:
        u = u.broadcast_to((n_t, n_l, u.shape[2]))
    R = u_t - Lu * phys.mu
    if ctx.reaction:
        f = u - u * u * u
        R = R - f * constant(ctx.K[None, :, None]) * phys.eps
    return R - constant(ctx.G)


def _wq(ctx, shape):
    return constant(ctx.wq.reshape(shape))


def weak_residuals(c: Components, R: Tensor, ctx: LossContext):
    e1 = (R * _wq(ctx, (1, -1, 1))).sum(axis=1)
    if c.N == 0:
        return e1, None, None
    Ui = _interior(c.U, ctx)
    e2 = R @ (Ui * constant(ctx.wx_int[None, None, :])).transpose(0, 2, 1)
    e3 = (c.Y * _wq(ctx, (1, -1, 1))).transpose(0, 2, 1) @ R
    return e1, e2, e3


def loss_weak(c: Components, ctx: LossContext, phys=None, R=None) -> Tensor:
    R = residual(c, ctx, phys) if R is None else R
    e1, e2, e3 = weak_residuals(c, R, ctx)
    out = e1.square().mean()
    if e2 is not None:
        out = out + e2.square().mean() + e3.square().mean()
    return out


def loss_strong(c: Components, ctx: LossContext, phys=None, R=None) -> Tensor:
    R = residual(c, ctx, phys) if R is None else R
    # expectation weights over xi, plain mean over (t, x)
    return (R.square() * _wq(ctx, (1, -1, 1))).sum(axis=1).mean()


def loss_bc(c: Components, ctx: LossContext) -> Tensor:
    if ctx.problem.dim == 1:
        mb = c.mean[:, ::c.mean.shape[1] - 1] if c.mean.shape[1] > 1 else c.mean
        idx = None
    else:
        idx = ctx.boundary
        mb = _take_last(c.mean, idx)
    out = mb.square().mean()
    if c.N:
        P = c.A.reshape(c.A.shape[0], c.N, 1) * c.U
        Pb = P[..., ::P.shape[2] - 1] if idx is None else _take_last(P, idx)
        out = out + Pb.square().mean()
    return out


def loss_bo(c: Components, ctx: LossContext) -> Tensor:
    if c.N == 0:
        return constant(0.0)
    n_t, N = c.A.shape
    EY = (c.Y * _wq(ctx, (1, -1, 1))).sum(axis=1)
    t1 = EY.square().mean()
    B = (c.U_t * constant(ctx.wx[None, None, :])) @ c.U.transpose(0, 2, 1)
    SB = B + B.transpose(0, 2, 1)
    t2 = SB.square().sum() * (1.0 / (N * N * n_t))
    C = (c.Y * _wq(ctx, (1, -1, 1))).transpose(0, 2, 1) @ c.Y_t
    SC = C + C.transpose(0, 2, 1)
    t3 = SC.square().sum() * (1.0 / (N * n_t))
    return t1 + t2 + t3


# ---------------------------------------------------------------------------
# initial condition


@dataclass
class ICTargets:
    """Targets at ``t0``: ubar at ``mean_x`` (grid nodes or sensors), ``U (N, n_x)``
    on the grid, ``a (N,)`` and ``Y (n_xi, N)`` at the training samples."""

    t0: float
    mean_x: np.ndarray
    mean: np.ndarray
    U: np.ndarray
    a: np.ndarray
    Y: np.ndarray
    mode: str = "function"
    on_grid: bool = True

    def __post_init__(self):
        if self.mode == "sensor" and np.asarray(self.mean_x).shape[0] < 2:
            raise ValueError("sensor initial condition needs at least two sensors")


def orthonormal_basis(sets: TrainingSets, N: int) -> np.ndarray:
    """``N`` sine modes vanishing on the boundary, orthonormal in L2 (continuous)."""
    if sets.dim == 1:
        g = sets.grids[0]
        L = g.b - g.a
        s = (sets.x[:, 0] - g.a) / L
        return np.stack([math.sqrt(2.0 / L) * np.sin(k * math.pi * s) for k in range(1, N + 1)])
    (g1, g2) = sets.grids
    L1, L2 = g1.b - g1.a, g2.b - g2.a
    pairs = sorted(((p, q) for p in range(1, N + 2) for q in range(1, N + 2)),
                   key=lambda pq: (pq[0] ** 2 / L1 ** 2 + pq[1] ** 2 / L2 ** 2, pq))
    x = sets.x
    out = []
    for p, q in pairs[:N]:
        out.append(2.0 / math.sqrt(L1 * L2) * np.sin(p * math.pi * (x[:, 0] - g1.a) / L1)
                   * np.sin(q * math.pi * (x[:, 1] - g2.a) / L2))
    return np.stack(out)


def ic_targets_deterministic(problem: ProblemSpec, sets: TrainingSets, N: int, xi_order=None,
                             use_sensors: bool = True) -> ICTargets:
    """Targets for a deterministic initial condition: sine bases, ``a = 0`` and
    unit-variance first-degree chaos of the individual random inputs."""
    x = sets.x
    mode = "function"
    if problem.dim == 1:
        mean_full = np.asarray(problem.ic.deterministic(x[:, 0]), dtype=np.float64)
    else:
        mean_full = np.asarray(problem.ic.deterministic((sets.grids[0].nodes, sets.grids[1].nodes))).ravel()
    mean_x, mean = x, mean_full
    on_grid = True
    if use_sensors and problem.ic.sensors is not None:
        xs, vals, _ = problem.ic.sensors
        mean_x, mean, mode, on_grid = np.asarray(xs)[:, None], np.asarray(vals), "sensor", False
    U = orthonormal_basis(sets, N) if N else np.zeros((0, sets.n_x))
    order = list(range(problem.xi_dim)) if xi_order is None else list(xi_order)
    if N > len(order):
        raise ValueError(f"{N} modes need {N} random inputs, problem has {len(order)}")
    xin = xi_normalized(sets.samples.xi, problem.xi_law) if problem.xi_dim else np.zeros((sets.samples.n, 0))
    Y = xin[:, order[:N]] if N else np.zeros((sets.samples.n, 0))
    return ICTargets(sets.t0, mean_x, mean, U, np.zeros(N), Y, mode, on_grid)


def ic_targets_from_provider(provider, sets: TrainingSets, t0: Optional[float] = None, mode="exact") -> ICTargets:
    """Targets read off another component provider (exact closed forms or the
    surrogate of the previous time window)."""
    t0 = sets.t0 if t0 is None else t0
    c = provider.components(sets.x, np.array([t0]), sets.samples.xi, derivs=False)
    N = c.N
    U = c.U.data[0] if N else np.zeros((0, sets.n_x))
    a = c.A.data[0] if N else np.zeros(0)
    Y = c.Y.data[0] if N else np.zeros((sets.samples.n, 0))
    return ICTargets(t0, sets.x, c.mean.data[0], U, a, Y, mode)


def ic_targets_from_ensemble(U0: np.ndarray, sets: TrainingSets, N: int) -> ICTargets:
    """BO targets of a random initial field ``U0 (n_xi, n_x)`` via its discrete KL."""
    from .classic import kl_restart

    if sets.dim != 1:
        raise NotImplementedError("ensemble initial conditions are supported in 1D")
    st = kl_restart(U0, sets.samples.weights, sets.grids[0], N, sets.t0)
    lam = st.lam(sets.wx)
    a = np.sqrt(lam)
    return ICTargets(sets.t0, sets.x, st.mean, st.modes / a[:, None], a, st.Y, "ensemble")


def loss_ic(s, params, ic: ICTargets, sets: TrainingSets, c: Optional[Components] = None) -> Tensor:
    """Initial-condition mismatch; ``c`` optionally holds components already
    evaluated at ``t0`` on the training nodes."""
    N = s.N
    if ic.U.shape[0] != N:
        raise ValueError(f"initial targets carry {ic.U.shape[0]} modes, surrogate has {N}")
    if c is None:
        c = s.components(sets.x, np.array([ic.t0]), sets.samples.xi, params=params, derivs=False)
    if ic.on_grid:
        m = c.mean.reshape(-1)
    else:
        m = s.eval_mean_points(ic.mean_x, np.full(len(ic.mean_x), ic.t0), params)
    out = (m - constant(ic.mean)).square().mean()
    if N:
        out = out + (c.U.reshape(N, -1) - constant(ic.U)).square().mean()
        out = out + (c.A.reshape(N) - constant(ic.a)).square().mean()
        out = out + (c.Y.reshape(-1, N) - constant(ic.Y)).square().mean()
    return out


# ---------------------------------------------------------------------------
# totals


def loss_terms(s, params, ctx: LossContext, ic: Optional[ICTargets], phys: Optional[PhysParams] = None,
               obs: Optional[Observations] = None) -> dict:
    """All loss components as graph tensors (keys ``w, ic, bc, bo, g`` and ``data``)."""
    sets = ctx.sets
    if ic is not None:
        # one pass over [t0] + training times; the first slice feeds the IC term
        call = s.components(sets.x, np.concatenate([[ic.t0], sets.t]), sets.samples.xi, params=params,
                            derivs=True)
        c0 = Components(*(None if v is None else v[:1] for v in (call.mean, call.A, call.U, call.Y)))
        c = Components(*(None if v is None else v[1:] for v in (call.mean, call.A, call.U, call.Y, call.mean_t,
                                                                call.A_t, call.U_t, call.Y_t)))
    else:
        c = s.components(sets.x, sets.t, sets.samples.xi, params=params, derivs=True)
    R = residual(c, ctx, phys)
    out = {
        "w": loss_weak(c, ctx, phys, R),
        "ic": loss_ic(s, params, ic, sets, c0) if ic is not None else constant(0.0),
        "bc": loss_bc(c, ctx),
        "bo": loss_bo(c, ctx),
        "g": loss_strong(c, ctx, phys, R),
    }
    if obs is not None:
        pred = s.eval_mean_points(obs.x, obs.t, params)
        out["data"] = (pred - constant(obs.values)).square().mean()
    return out


def total_loss(terms: dict, w: LossWeights) -> Tensor:
    tot = terms["w"] * w.w
    for k in TERMS[1:]:
        tot = tot + terms[k] * getattr(w, k)
    if "data" in terms:
        tot = tot + terms["data"] * w.data
    return tot
