"""Deterministic fractional PINN on a 1D interval.

The surrogate is ``u~(x, t) = (x - a)(b - x) u_nn(x, t)`` when lifting is on.
Its fractional derivative is the shifted GL matrix applied to the surrogate
on the whole grid at each equation time; the residual is read off at the
equation nodes, which must be grid nodes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor, constant
from .fracops import GLStencil, Grid1D
from .nn import MLP, ParamStore, mlp_fused, value_and_grad
from .optim import AdamState, LbfgsState, NonFiniteGradient, adam_step, lbfgs_minimize
from .problems import ProblemSpec

__all__ = ["FpinnModel", "FpinnData", "FpinnReport", "make_fpinn", "fpinn_loss", "fpinn_predict",
           "fpinn_train", "FpinnDiverged"]


class FpinnDiverged(FloatingPointError):
    def __init__(self, msg, params):
        super().__init__(msg)
        self.params = params


@dataclass
class FpinnData:
    """Equation nodes ``x_g`` (grid nodes) x times ``t_g`` and initial data ``(x_v, v)``."""

    x_g: np.ndarray
    t_g: np.ndarray
    x_v: np.ndarray
    v: np.ndarray


@dataclass
class FpinnModel:
    net: MLP
    grid: Grid1D
    stencil: GLStencil
    T: float
    lifting: bool = True
    params: ParamStore = field(default=None)

    def __post_init__(self):
        if self.params is None:
            self.params = self.net.init(0)

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        a, b = self.grid.a, self.grid.b
        return np.stack([2.0 * (x - a) / (b - a) - 1.0, 2.0 * t / self.T - 1.0], axis=1)

    def bubble(self, x):
        return (np.asarray(x) - self.grid.a) * (self.grid.b - np.asarray(x)) if self.lifting else np.ones_like(x)

    def evaluate(self, params, x, t, derivs=False):
        """Flattened ``u~`` at the pairs ``(x_k, t_k)`` (+ d/dt)."""
        h, dh = mlp_fused(self.net, params, self._inputs(x, t), 1 if derivs else None, 2.0 / self.T)
        b = constant(self.bubble(np.asarray(x, dtype=np.float64))[:, None])
        h = h * b
        dh = dh * b if dh is not None else None
        return h.reshape(-1), (dh.reshape(-1) if dh is not None else None)


def make_fpinn(problem: ProblemSpec, N: int, hidden=(4, 20), seed: int = 0, order: int = 2,
               lifting: Optional[bool] = None) -> FpinnModel:
    if problem.dim != 1:
        raise ValueError("fPINN is one-dimensional")
    (a, b), = problem.domain
    grid = Grid1D(a, b, N)
    net = MLP([2] + [hidden[1]] * hidden[0] + [1])
    lift = problem.lifting if lifting is None else lifting
    return FpinnModel(net, grid, GLStencil(grid, problem.alpha, order), problem.T, lift, net.init(seed))


def _node_index(grid: Grid1D, x):
    k = (np.asarray(x, dtype=np.float64) - grid.a) / grid.dx
    ki = np.round(k).astype(int)
    if np.max(np.abs(k - ki), initial=0.0) > 1e-9 or np.any(ki < 0) or np.any(ki > grid.N):
        from .losses import OffGridPoints

        raise OffGridPoints("equation points must coincide with GL grid nodes")
    return ki


def fpinn_loss(model: FpinnModel, params, problem: ProblemSpec, data: FpinnData, exact=None) -> Tensor:
    """``mean_v (u~(x_v, 0) - v)^2 + mean_g (u~_t - mu L u~ - eps f(u~) - g)^2``.

    ``exact(x, t)`` returning ``(u, u_t)`` replaces the network (oracle checks).
    """
    if len(data.x_g) == 0 or len(data.t_g) == 0 or len(data.x_v) == 0:
        raise ValueError("training sets must be nonempty")
    idx = _node_index(model.grid, data.x_g)
    tg = np.asarray(data.t_g, dtype=np.float64)
    nodes = model.grid.nodes
    n_t, n_x = len(tg), model.grid.n_nodes
    X = np.tile(nodes, n_t)
    Tt = np.repeat(tg, n_x)
    xv = np.asarray(data.x_v, dtype=np.float64)
    if exact is None:
        u, u_t = model.evaluate(params, X, Tt, derivs=True)
        u0, _ = model.evaluate(params, xv, np.zeros(len(xv)))
    else:
        u, u_t = (constant(np.asarray(v, dtype=np.float64)) for v in exact(X, Tt))
        u0 = constant(np.asarray(exact(xv, np.zeros(len(xv)))[0], dtype=np.float64))
    u = u.reshape(n_t, n_x)
    u_t = u_t.reshape(n_t, n_x)
    M = model.stencil.matrix()
    Lu = u @ constant(np.ascontiguousarray(M[idx].T))
    ug, utg = u[:, idx], u_t[:, idx]
    R = utg - Lu * problem.mu
    if problem.reaction is not None:
        R = R - (ug - ug * ug * ug) * problem.eps
    g = np.stack([np.asarray(problem.forcing(nodes, t, None), dtype=np.float64)[idx] for t in tg])
    R = R - constant(g)
    return (u0 - constant(np.asarray(data.v, dtype=np.float64))).square().mean() + R.square().mean()


def fpinn_predict(model: FpinnModel, x, t, params=None) -> np.ndarray:
    params = model.params if params is None else params
    x = np.asarray(x, dtype=np.float64)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    X, Tt = np.tile(x, len(t)), np.repeat(t, len(x))
    u, _ = model.evaluate(params, X, Tt)
    return u.data.reshape(len(t), len(x))


@dataclass
class FpinnReport:
    losses: list
    adam_iters: int
    lbfgs_iters: int
    final_loss: float
    rel_l2: Optional[float] = None
    wall: float = 0.0


def fpinn_train(model: FpinnModel, problem: ProblemSpec, data: FpinnData, adam_iters: int = 1000,
                lr: float = 1e-3, lbfgs_iters: int = 0, decay_interval: Optional[int] = 1000,
                decay_factor: float = 0.9, reference=None, ref_t=None, ref_x=None) -> FpinnReport:
    """Adam then L-BFGS.  ``model.params`` is updated in place; ``reference``
    (``(n_t, n_x)`` values at ``ref_t`` x ``ref_x``) gives the reported error."""
    t0 = time.perf_counter()
    fn = lambda leaves: fpinn_loss(model, leaves, problem, data)
    store = model.params
    x = store.flatten()
    losses = []

    def obj(v):
        return value_and_grad(fn, store.with_flat(v))

    st = AdamState(lr=lr, decay_interval=decay_interval, decay_factor=decay_factor)
    good = x.copy()
    for k in range(adam_iters):
        f, g = obj(x)
        if not np.isfinite(f):
            model.params = store.with_flat(good)
            raise FpinnDiverged(f"non-finite loss at iteration {k}", model.params)
        losses.append(f)
        good = x.copy()
        try:
            x = adam_step(st, x, g)
        except NonFiniteGradient:
            model.params = store.with_flat(good)
            raise FpinnDiverged("non-finite gradient", model.params) from None
    n_lb = 0
    if lbfgs_iters > 0:
        x, rep = lbfgs_minimize(obj, x, LbfgsState(max_iter=lbfgs_iters, gtol=1e-12))
        losses.extend(rep.f_history[1:])
        n_lb = rep.iterations
    model.params = store.with_flat(x)
    f, _ = obj(x)
    err = None
    if reference is not None:
        pred = fpinn_predict(model, ref_x, ref_t)
        err = float(np.linalg.norm(pred - reference) / np.linalg.norm(reference))
    return FpinnReport(losses, adam_iters, n_lb, float(f), err, time.perf_counter() - t0)
