"""Training loops: forward, windowed, inverse, transfer fine-tuning, prediction."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import grad
from .checkpoint import load_checkpoint, load_into
from .classic import EnsembleStats
from .losses import (TERMS, ICTargets, InverseParams, LossContext, LossWeights, Observations, PhysParams,
                     TrainingSets, dynamic_weight_update, ic_targets_from_provider, loss_terms, total_loss)
from .optim import AdamState, LbfgsState, NonFiniteGradient, adam_step, lbfgs_minimize
from .stochastic import SampleSet
from .surrogate import ArchitectureMismatch, BOSurrogate, Components, assemble

__all__ = [
    "Schedule",
    "History",
    "TrainingDiverged",
    "TrainResult",
    "Objective",
    "train",
    "train_windows",
    "train_inverse",
    "transfer_finetune",
    "predict_stats",
    "WindowedSurrogate",
]


class TrainingDiverged(FloatingPointError):
    """Non-finite loss; ``params`` holds the last finite iterate."""

    def __init__(self, msg, params, history):
        super().__init__(msg)
        self.params, self.history = params, history


@dataclass
class Schedule:
    adam_iters: int = 1000
    lr: float = 1e-3
    decay_interval: Optional[int] = 1000
    decay_factor: float = 0.9
    lbfgs_iters: int = 0
    lbfgs_history: int = 20
    c1: float = 1e-4
    c2: float = 0.9
    gtol: float = 1e-10
    ftol: float = 1e-15
    log_every: int = 1
    f_target: Optional[float] = None


@dataclass
class History:
    rows: list = field(default_factory=list)
    inverse: list = field(default_factory=list)

    columns = ("iter", "phase", "mse_w", "mse_ic", "mse_bc", "mse_bo", "mse_g", "total",
               "lambda_w", "lambda_ic", "lambda_bc", "lambda_bo", "lambda_g")

    def add(self, it, phase, terms: dict, total: float, w: LossWeights):
        row = {"iter": int(it), "phase": phase}
        for k in TERMS:
            row[f"mse_{k}"] = float(terms[k])
        if "data" in terms:
            row["mse_data"] = float(terms["data"])
        row["total"] = float(total)
        for k in TERMS:
            row[f"lambda_{k}"] = float(getattr(w, k))
        self.rows.append(row)

    def totals(self) -> np.ndarray:
        return np.array([r["total"] for r in self.rows])

    def extend(self, other: "History", offset: int = 0):
        for r in other.rows:
            r = dict(r)
            r["iter"] += offset
            self.rows.append(r)
        for r in other.inverse:
            r = dict(r)
            r["iter"] += offset
            self.inverse.append(r)


class Objective:
    """Flat-vector loss for one surrogate/problem/training-set combination.

    Keeps a small cache of recent evaluations so the accepted L-BFGS iterate's
    loss components can be recorded without recomputation.
    """

    def __init__(self, s: BOSurrogate, ctx: LossContext, ic: Optional[ICTargets], weights: LossWeights,
                 inverse: Optional[InverseParams] = None, obs: Optional[Observations] = None):
        self.s, self.ctx, self.ic, self.weights = s, ctx, ic, weights
        self.inverse, self.obs = inverse, obs
        self.template = s.params
        self.n_evals = 0
        self._cache = []

    def _phys(self, leaves):
        if self.inverse is None:
            return None
        return self.inverse.phys(leaves)

    def terms(self, leaves):
        return loss_terms(self.s, leaves, self.ctx, self.ic, self._phys(leaves), self.obs)

    def evaluate(self, x, need_norms: bool = False):
        store = self.template.with_flat(x)
        leaves = store.leaves()
        terms = self.terms(leaves)
        tot = total_loss(terms, self.weights)
        wrt = list(leaves.values())
        gs = grad(tot, wrt)
        g = np.concatenate([a.ravel() for a in gs])
        vals = {k: float(v.data) for k, v in terms.items()}
        norms = None
        if need_norms:
            norms = {}
            for k in TERMS:
                if terms[k].requires_grad:
                    gk = grad(terms[k], wrt)
                    norms[k] = float(np.sqrt(sum(float(np.sum(a * a)) for a in gk)))
                else:
                    norms[k] = 0.0
        self.n_evals += 1
        self._cache.append((x.copy(), vals, float(tot.data)))
        del self._cache[:-6]
        return float(tot.data), g, vals, norms

    def __call__(self, x):
        f, g, _, _ = self.evaluate(x)
        return f, g

    def lookup(self, x):
        for xc, vals, f in reversed(self._cache):
            if np.array_equal(xc, x):
                return vals, f
        _, _, vals, _ = self.evaluate(x)
        return vals, self._cache[-1][2]


@dataclass
class TrainResult:
    surrogate: object
    history: History
    weights: LossWeights
    adam_iters: int = 0
    lbfgs_iters: int = 0
    lbfgs_reason: str = ""
    final_loss: float = float("nan")
    wall: float = 0.0
    recovered: Optional[tuple] = None
    windows: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.adam_iters + self.lbfgs_iters


def _record_inverse(hist, it, inverse, x, template):
    if inverse is None:
        return
    st = template.with_flat(x)
    mu, eps, alpha = InverseParams.recovered(st)
    hist.inverse.append({"iter": int(it), "mu": mu, "eps": eps, "alpha": alpha})


def _optimize(s: BOSurrogate, obj: Objective, schedule: Schedule, weights: LossWeights,
              hist: History, callback: Optional[Callable] = None, it0: int = 0):
    x = s.params.flatten()
    last_good = x.copy()
    adam = AdamState(lr=schedule.lr, decay_interval=schedule.decay_interval, decay_factor=schedule.decay_factor)
    it = it0
    f = float("nan")
    for k in range(schedule.adam_iters):
        need = weights.dynamic and k % max(int(weights.interval), 1) == 0
        f, g, vals, norms = obj.evaluate(x, need_norms=need)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite loss at Adam iteration {k}", s.params.with_flat(last_good), hist)
        if k % schedule.log_every == 0:
            hist.add(it, "adam", vals, f, weights)
            _record_inverse(hist, it, obj.inverse, x, s.params)
        if need:
            new = dynamic_weight_update(weights, norms)
            for name in TERMS:
                setattr(weights, name, getattr(new, name))
        last_good = x.copy()
        try:
            x = adam_step(adam, x, g)
        except NonFiniteGradient:
            raise TrainingDiverged("non-finite gradient", s.params.with_flat(last_good), hist) from None
        it += 1
        if callback is not None and callback(it, x, f):
            break
    n_adam = it - it0
    reason = ""
    n_lb = 0
    if schedule.lbfgs_iters > 0:
        state = LbfgsState(history=schedule.lbfgs_history, c1=schedule.c1, c2=schedule.c2,
                           max_iter=schedule.lbfgs_iters, gtol=schedule.gtol, ftol=schedule.ftol)
        f0, _ = obj(x)
        vals0, _ = obj.lookup(x)
        if not np.isfinite(f0):
            raise TrainingDiverged("non-finite loss before L-BFGS", s.params.with_flat(x), hist)
        if schedule.adam_iters == 0:
            hist.add(it, "lbfgs", vals0, f0, weights)
            _record_inverse(hist, it, obj.inverse, x, s.params)
        base = it

        def cb(kk, xk, fk):
            vals, _ = obj.lookup(xk)
            hist.add(base + kk, "lbfgs", vals, fk, weights)
            _record_inverse(hist, base + kk, obj.inverse, xk, s.params)
            return callback(base + kk, xk, fk) if callback is not None else False

        try:
            x, rep = lbfgs_minimize(obj, x, state, cb, f_target=schedule.f_target)
        except NonFiniteGradient:
            raise TrainingDiverged("non-finite loss in L-BFGS", s.params.with_flat(x), hist) from None
        if not np.isfinite(rep.f):
            raise TrainingDiverged("non-finite loss in L-BFGS", s.params.with_flat(x), hist)
        n_lb, reason, f = rep.iterations, rep.reason, rep.f
        it = base + n_lb
    else:
        f, _ = obj(x)
    s.params = s.params.with_flat(x)
    return n_adam, n_lb, reason, f


def train(s: BOSurrogate, problem, sets: TrainingSets, schedule: Schedule, ic: ICTargets,
          weights: Optional[LossWeights] = None, order: int = 2, callback=None,
          inverse: Optional[InverseParams] = None, obs: Optional[Observations] = None) -> TrainResult:
    """Adam then L-BFGS on the weighted loss.  ``s.params`` is updated in place.

    With dynamic weights the ``lambda``s other than ``lambda_w`` are updated
    every ``weights.interval`` Adam steps and frozen during L-BFGS.
    """
    weights = (weights or LossWeights()).copy()
    t_start = time.perf_counter()
    ctx = LossContext(problem, sets, order)
    obj = Objective(s, ctx, ic, weights, inverse, obs)
    hist = History()
    n_adam, n_lb, reason, f = _optimize(s, obj, schedule, weights, hist, callback)
    res = TrainResult(s, hist, weights, n_adam, n_lb, reason, f, time.perf_counter() - t_start)
    if inverse is not None:
        res.recovered = InverseParams.recovered(s.params)
    return res


class WindowedSurrogate:
    """Piecewise-in-time collection of surrogates (one per window)."""

    def __init__(self, parts: list):
        self.parts = list(parts)
        self.arch = parts[0].arch

    @property
    def N(self):
        return self.parts[0].N

    def _index(self, t):
        ends = np.array([p.window[1] for p in self.parts])
        return np.minimum(np.searchsorted(ends, t, side="left"), len(self.parts) - 1)

    def components(self, x, t, xi, params=None, derivs=False) -> Components:
        ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
        idx = self._index(ts)
        outs = [self.parts[i].components(x, ts[k:k + 1], xi, derivs=False) for k, i in enumerate(idx)]
        cat = lambda name: (None if getattr(outs[0], name) is None else
                            _const_cat([getattr(o, name).data for o in outs]))
        return Components(cat("mean"), cat("A"), cat("U"), cat("Y"))


def _const_cat(arrs):
    from .autodiff import constant
    return constant(np.concatenate(arrs, axis=0))


def train_windows(make_surrogate: Callable, problem, make_sets: Callable, schedule: Schedule, ic: ICTargets,
                  weights: LossWeights, windows: int, order: int = 2, first_schedule: Optional[Schedule] = None,
                  callback=None) -> TrainResult:
    """Train ``windows`` consecutive time windows of ``[0, T]``.

    Window ``j`` gets its IC targets from window ``j-1`` evaluated at the
    interface time and is warm-started from its parameters.
    """
    if windows < 1:
        raise ValueError("need at least one window")
    edges = np.linspace(0.0, problem.T, windows + 1)
    parts, hist, results = [], History(), []
    prev = None
    total_adam = total_lb = 0
    t_start = time.perf_counter()
    for j in range(windows):
        win = (float(edges[j]), float(edges[j + 1]))
        sets = make_sets(win)
        s = make_surrogate(win)
        if prev is None:
            tgt = ic
        else:
            s.params = load_into(s.params, prev.params)
            tgt = ic_targets_from_provider(prev, sets, win[0], mode="window")
        sch = first_schedule if (j == 0 and first_schedule is not None) else schedule
        r = train(s, problem, sets, sch, tgt, weights, order, callback)
        hist.extend(r.history, offset=total_adam + total_lb)
        total_adam += r.adam_iters
        total_lb += r.lbfgs_iters
        parts.append(s)
        results.append(r)
        prev = s
    out = TrainResult(WindowedSurrogate(parts) if windows > 1 else parts[0], hist, results[-1].weights,
                      total_adam, total_lb, results[-1].lbfgs_reason, results[-1].final_loss,
                      time.perf_counter() - t_start)
    out.windows = results
    return out


def train_inverse(s: BOSurrogate, problem, sets: TrainingSets, obs: Observations, schedule: Schedule,
                  ic: ICTargets, weights: Optional[LossWeights] = None, inverse: Optional[InverseParams] = None,
                  order: int = 2, callback=None) -> TrainResult:
    """Joint training of the networks and ``(mu, eps, alpha)`` with a data term on ubar."""
    if obs is None:
        raise ValueError("observation set is empty")
    inverse = inverse or InverseParams()
    for n in InverseParams.names:
        if n not in s.params:
            inverse.add_to(s.params)
            break
    return train(s, problem, sets, schedule, ic, weights, order, callback, inverse, obs)


def transfer_finetune(source, s_target: BOSurrogate, problem, sets: TrainingSets, schedule: Schedule,
                      ic: ICTargets, weights: LossWeights, order: int = 2,
                      f_target: Optional[float] = None) -> TrainResult:
    """Load source parameters (a checkpoint path or a surrogate) and retrain with L-BFGS only."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        store, meta = load_checkpoint(source)
    else:
        store = source.params
    if schedule.adam_iters:
        raise ValueError("transfer fine-tuning uses L-BFGS only (adam_iters must be 0)")
    s_target.params = load_into(s_target.params, store)
    sch = Schedule(**{**schedule.__dict__, "f_target": f_target if f_target is not None else schedule.f_target})
    w = weights.copy()
    w.dynamic = False
    return train(s_target, problem, sets, sch, ic, w, order)


def predict_stats(s, x, t, samples: SampleSet) -> EnsembleStats:
    """Weighted mean and variance of the surrogate over ``samples`` at each ``(t, x)``."""
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    c = s.components(x, ts, samples.xi, derivs=False)
    u = assemble(c).data  # (n_t, n_l or 1, n_x)
    w = samples.weights / samples.weights.sum()
    if u.shape[1] == 1:
        mean = u[:, 0]
        return EnsembleStats(ts, mean, np.zeros_like(mean))
    mean = np.einsum("l,tlx->tx", w, u)
    var = np.einsum("l,tlx->tx", w, (u - mean[:, None, :]) ** 2)
    return EnsembleStats(ts, mean, np.maximum(var, 0.0))
