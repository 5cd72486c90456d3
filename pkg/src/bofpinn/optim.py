"""Adam with stepwise exponential decay, and L-BFGS with a strong-Wolfe line search.

Both optimizers work on flat float64 vectors (see :meth:`ParamStore.flatten`).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "AdamState",
    "adam_step",
    "LbfgsState",
    "LbfgsReport",
    "lbfgs_minimize",
    "strong_wolfe",
    "NonFiniteGradient",
]


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    decay_interval: Optional[int] = 1000
    decay_factor: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def effective_lr(self, step: Optional[int] = None) -> float:
        s = self.step if step is None else step
        if not self.decay_interval:
            return self.lr
        return self.lr * self.decay_factor ** (s // self.decay_interval)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector.

    A non-finite gradient raises :class:`NonFiniteGradient` and leaves ``state``
    untouched.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("non-finite gradient passed to adam_step")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    t = state.step + 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    lr = state.effective_lr(t)
    state.step = t
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class LbfgsState:
    history: int = 20
    c1: float = 1e-4
    c2: float = 0.9
    max_iter: int = 1000
    gtol: float = 1e-9
    ftol: float = 1e-15
    max_ls: int = 25
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)


@dataclass
class LbfgsReport:
    iterations: int
    n_evals: int
    f: float
    converged: bool
    reason: str
    line_search_failed: bool = False
    f_history: list = field(default_factory=list)


def _cubicmin(a, fa, fpa, b, fb, c, fc):
    # minimizer of the cubic through (a,fa,fpa), (b,fb), (c,fc); None if degenerate
    with np.errstate(divide="raise", over="raise", invalid="raise"):
        try:
            C = fpa
            db, dc = b - a, c - a
            denom = (db * dc) ** 2 * (db - dc)
            d1 = np.array([[dc ** 2, -db ** 2], [-dc ** 3, db ** 3]])
            A, B = d1 @ np.array([fb - fa - C * db, fc - fa - C * dc]) / denom
            radical = B * B - 3 * A * C
            xmin = a + (-B + np.sqrt(radical)) / (3 * A)
        except (ArithmeticError, FloatingPointError):
            return None
    return xmin if np.isfinite(xmin) else None


def _quadmin(a, fa, fpa, b, fb):
    with np.errstate(divide="raise", over="raise", invalid="raise"):
        try:
            db = b - a
            B = (fb - fa - fpa * db) / (db * db)
            xmin = a - fpa / (2.0 * B)
        except (ArithmeticError, FloatingPointError):
            return None
    return xmin if np.isfinite(xmin) else None


def strong_wolfe(fun, x, f0, g0, d, alpha1=1.0, c1=1e-4, c2=0.9, max_iter=25, alpha_max=1e8):
    """Line search satisfying the strong Wolfe conditions.

    Returns ``(alpha, f, g, n_evals, ok)``.  When no acceptable step is found the
    best sufficient-decrease point seen is returned with ``ok=False`` (``alpha=0``
    if there is none).
    """
    dphi0 = float(g0 @ d)
    n_evals = 0
    best = (0.0, f0, g0)

    def phi(a):
        nonlocal n_evals, best
        n_evals += 1
        f, g = fun(x + a * d)
        if np.isfinite(f) and f < best[1] and f <= f0 + c1 * a * dphi0:
            best = (a, f, g)
        return f, g, float(g @ d) if np.isfinite(f) else np.nan

    def zoom(a_lo, f_lo, dp_lo, a_hi, f_hi, dp_hi, budget):
        a_rec, f_rec = None, None
        for k in range(budget):
            da = a_hi - a_lo
            a_j = None
            if k > 0 and a_rec is not None:
                a_j = _cubicmin(a_lo, f_lo, dp_lo, a_hi, f_hi, a_rec, f_rec)
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            if a_j is None or not (lo + 0.2 * abs(da) < a_j < hi - 0.2 * abs(da)):
                a_j = _quadmin(a_lo, f_lo, dp_lo, a_hi, f_hi)
                if a_j is None or not (lo + 0.1 * abs(da) < a_j < hi - 0.1 * abs(da)):
                    a_j = a_lo + 0.5 * da
            f_j, g_j, dp_j = phi(a_j)
            if not np.isfinite(f_j) or f_j > f0 + c1 * a_j * dphi0 or f_j >= f_lo:
                a_rec, f_rec = a_hi, f_hi
                a_hi, f_hi, dp_hi = a_j, f_j, dp_j
            else:
                if abs(dp_j) <= -c2 * dphi0:
                    return a_j, f_j, g_j, True
                if dp_j * (a_hi - a_lo) >= 0:
                    a_rec, f_rec = a_hi, f_hi
                    a_hi, f_hi, dp_hi = a_lo, f_lo, dp_lo
                else:
                    a_rec, f_rec = a_lo, f_lo
                a_lo, f_lo, dp_lo = a_j, f_j, dp_j
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                break
        return None

    a_prev, f_prev, dp_prev = 0.0, f0, dphi0
    a_i = alpha1
    for i in range(max_iter):
        f_i, g_i, dp_i = phi(a_i)
        if not np.isfinite(f_i) or f_i > f0 + c1 * a_i * dphi0 or (i > 0 and f_i >= f_prev):
            res = zoom(a_prev, f_prev, dp_prev, a_i, f_i if np.isfinite(f_i) else np.inf, dp_i,
                       max_iter - i - 1)
            break
        if abs(dp_i) <= -c2 * dphi0:
            return a_i, f_i, g_i, n_evals, True
        if dp_i >= 0:
            res = zoom(a_i, f_i, dp_i, a_prev, f_prev, dp_prev, max_iter - i - 1)
            break
        a_prev, f_prev, dp_prev = a_i, f_i, dp_i
        a_i = min(2.0 * a_i, alpha_max)
    else:
        res = None
    if res is not None:
        a, f, g, _ = res
        return a, f, g, n_evals, True
    a, f, g = best
    return a, f, g, n_evals, False


def lbfgs_minimize(objective: Callable, x0: np.ndarray, state: Optional[LbfgsState] = None,
                   callback: Optional[Callable] = None, f_target: Optional[float] = None):
    """Unconstrained L-BFGS (two-loop recursion) from ``x0``.

    ``objective(x)`` returns ``(f, grad)``.  ``callback(k, x, f)`` runs after each
    accepted iterate and may return True to stop.  ``f_target`` stops as soon as
    the objective reaches that value.  Returns ``(x, report)``.
    """
    state = state or LbfgsState()
    x = np.array(x0, dtype=np.float64)
    f, g = objective(x)
    n_evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteGradient("objective is not finite at the starting point")
    s_hist: deque = deque(maxlen=state.history)
    y_hist: deque = deque(maxlen=state.history)
    for s, y in zip(state.s_hist, state.y_hist):
        s_hist.append(s)
        y_hist.append(y)
    f_hist = [f]

    def finish(k, reason, converged, ls_failed=False):
        state.s_hist, state.y_hist = deque(s_hist), deque(y_hist)
        return x, LbfgsReport(k, n_evals, float(f), converged, reason, ls_failed, f_hist)

    if f_target is not None and f <= f_target:
        return finish(0, "target", True)
    if np.max(np.abs(g)) <= state.gtol:
        return finish(0, "gtol", True)

    for k in range(1, state.max_iter + 1):
        # two-loop recursion
        q = -g.copy()
        rhos, alphas = [], []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / float(y @ s)
            a = rho * float(s @ q)
            q -= a * y
            rhos.append(rho)
            alphas.append(a)
        if s_hist:
            s, y = s_hist[-1], y_hist[-1]
            q *= float(s @ y) / float(y @ y)
        for (s, y), rho, a in zip(zip(s_hist, y_hist), reversed(rhos), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        d = q
        if float(g @ d) >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
        alpha1 = 1.0 if s_hist else min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))
        a, f_new, g_new, ne, ok = strong_wolfe(objective, x, f, g, d, alpha1, state.c1, state.c2,
                                               state.max_ls)
        n_evals += ne
        if not ok and a == 0.0:
            return finish(k - 1, "line search failed", False, True)
        s_vec = a * d
        x_new = x + s_vec
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-10 * float(y_vec @ y_vec):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
        f_old = f
        x, f, g = x_new, f_new, g_new
        f_hist.append(float(f))
        stop = callback(k, x, f) if callback is not None else False
        if not ok:
            return finish(k, "line search failed", False, True)
        if f_target is not None and f <= f_target:
            return finish(k, "target", True)
        if np.max(np.abs(g)) <= state.gtol:
            return finish(k, "gtol", True)
        if abs(f_old - f) <= state.ftol * max(abs(f_old), abs(f), 1.0):
            return finish(k, "ftol", True)
        if stop:
            return finish(k, "callback", False)
    return finish(state.max_iter, "max_iter", False)
