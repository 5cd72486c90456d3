"""Four-network BO surrogate ``u = ubar + sum_i A_i U_i Y_i``.

All component evaluators share one interface: :meth:`components` returns a
:class:`Components` bundle of graph tensors laid out as

    mean  (n_t, n_x)      A  (n_t, N)
    U     (n_t, N, n_x)   Y  (n_t, n_xi, N)

plus the time derivatives of each when requested.  Spatial points are given
as an array ``(n_x, d)`` (a 1D node array is accepted as well).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, concat, constant
from .nn import MLP, ParamStore, mlp_fused
from .problems import ManufacturedBO, xi_normalized

__all__ = [
    "Architecture",
    "Components",
    "BOSurrogate",
    "ExactBOProvider",
    "surrogate_eval",
    "assemble",
    "TABLE_SIZES",
    "ArchitectureMismatch",
]


class ArchitectureMismatch(ValueError):
    pass


# (hidden layers, width) per network: mean, A, U, Y
TABLE_SIZES = {
    "rd1d-manufactured": ((4, 64), (4, 64), (4, 64), (4, 32)),
    "rd1d-forcing-static": ((3, 32), (3, 4), (3, 64), (3, 64)),
    "rd1d-inverse": ((3, 32), (3, 4), (3, 64), (3, 64)),
    "rd1d-forcing-evolving": ((3, 32), (3, 4), (3, 64), (3, 32)),
    "rd1d-transfer": ((3, 32), (3, 4), (3, 64), (3, 32)),
    "rd2d": ((4, 32), (3, 4), (4, 32), (4, 32)),
    "appD-deterministic": ((4, 20), (1, 1), (1, 1), (1, 1)),
}


@dataclass
class Architecture:
    n_modes: int
    x_dim: int
    xi_dim: int
    mean: tuple = (3, 32)
    A: tuple = (3, 4)
    U: tuple = (3, 64)
    Y: tuple = (3, 64)
    lifting: bool = False

    def widths(self) -> dict:
        def w(spec, d_in, d_out):
            depth, width = int(spec[0]), int(spec[1])
            return [d_in] + [width] * depth + [d_out]

        out = {"mean": w(self.mean, self.x_dim + 1, 1)}
        if self.n_modes > 0:
            out["A"] = w(self.A, 1, 1)
            out["U"] = w(self.U, self.x_dim + 1, self.n_modes)
            out["Y"] = w(self.Y, self.xi_dim + 1, self.n_modes)
        return out

    def to_dict(self) -> dict:
        return {"n_modes": self.n_modes, "x_dim": self.x_dim, "xi_dim": self.xi_dim,
                "mean": list(self.mean), "A": list(self.A), "U": list(self.U), "Y": list(self.Y),
                "lifting": bool(self.lifting)}

    @classmethod
    def from_dict(cls, d) -> "Architecture":
        return cls(int(d["n_modes"]), int(d["x_dim"]), int(d["xi_dim"]), tuple(d["mean"]), tuple(d["A"]),
                   tuple(d["U"]), tuple(d["Y"]), bool(d["lifting"]))

    @classmethod
    def for_tag(cls, tag: str, n_modes: int, x_dim: int, xi_dim: int, lifting: bool = False) -> "Architecture":
        m, a, u, y = TABLE_SIZES[tag]
        return cls(n_modes, x_dim, xi_dim, m, a, u, y, lifting)


@dataclass
class Components:
    mean: Tensor
    A: Optional[Tensor] = None
    U: Optional[Tensor] = None
    Y: Optional[Tensor] = None
    mean_t: Optional[Tensor] = None
    A_t: Optional[Tensor] = None
    U_t: Optional[Tensor] = None
    Y_t: Optional[Tensor] = None

    @property
    def N(self) -> int:
        return 0 if self.A is None else self.A.shape[1]


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def _grid_inputs(xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
    # rows ordered (t slow, x fast); columns (x..., t)
    n_t, n_x = len(ts), xs.shape[0]
    out = np.empty((n_t * n_x, xs.shape[1] + 1))
    out[:, :-1] = np.tile(xs, (n_t, 1))
    out[:, -1] = np.repeat(ts, n_x)
    return out


class BOSurrogate:
    """Neural BO surrogate.  ``params`` is a :class:`ParamStore`; evaluation
    functions also accept a mapping of leaf tensors with the same names."""

    def __init__(self, arch: Architecture, domain: Sequence, window: tuple, xi_law: str = "normal",
                 seed: int = 0, params: Optional[ParamStore] = None):
        self.arch = arch
        self.domain = tuple(tuple(float(v) for v in iv) for iv in domain)
        if len(self.domain) != arch.x_dim:
            raise ArchitectureMismatch("domain dimension does not match the architecture")
        self.window = (float(window[0]), float(window[1]))
        if not self.window[1] > self.window[0]:
            raise ValueError("time window must have positive length")
        self.xi_law = xi_law
        self.seed = int(seed)
        w = arch.widths()
        self.mean_net = MLP(w["mean"], prefix="mean_")
        N = arch.n_modes
        self.A_nets = [MLP(w["A"], prefix=f"A{i}_") for i in range(N)]
        self.U_net = MLP(w["U"], prefix="U_") if N else None
        self.Y_net = MLP(w["Y"], prefix="Y_") if N else None
        if params is None:
            params = self.init_params(seed)
        self.check_params(params)
        self.params = params

    @property
    def N(self) -> int:
        return self.arch.n_modes

    def nets(self) -> list:
        out = [self.mean_net] + self.A_nets
        if self.N:
            out += [self.U_net, self.Y_net]
        return out

    def init_params(self, seed: int) -> ParamStore:
        store = ParamStore()
        for k, net in enumerate(self.nets()):
            store.update(net.init(seed * 1000 + k))
        return store

    def check_params(self, params: ParamStore):
        want = self.init_params(0).shapes()
        for name, shape in want.items():
            if name not in params:
                raise ArchitectureMismatch(f"parameter {name} missing from store")
            if tuple(params[name].shape) != tuple(shape):
                raise ArchitectureMismatch(f"parameter {name}: expected shape {tuple(shape)}, "
                                           f"got {tuple(params[name].shape)}")

    # -- input maps ---------------------------------------------------------
    def norm_x(self, xs: np.ndarray) -> np.ndarray:
        out = np.empty_like(xs)
        for d, (a, b) in enumerate(self.domain):
            out[:, d] = 2.0 * (xs[:, d] - a) / (b - a) - 1.0
        return out

    def norm_t(self, t) -> np.ndarray:
        t0, t1 = self.window
        return 2.0 * (np.asarray(t, dtype=np.float64) - t0) / (t1 - t0) - 1.0

    @property
    def dt_scale(self) -> float:
        return 2.0 / (self.window[1] - self.window[0])

    def bubble(self, xs: np.ndarray) -> np.ndarray:
        b = np.ones(xs.shape[0])
        for d, (lo, hi) in enumerate(self.domain):
            b = b * (xs[:, d] - lo) * (hi - xs[:, d])
        return b

    # -- evaluation ---------------------------------------------------------
    def _eval(self, net, params, inp, derivs, direction):
        if derivs:
            return mlp_fused(net, params, inp, direction, self.dt_scale)
        return mlp_fused(net, params, inp)

    def eval_mean(self, x, t, params=None, derivs=False):
        """ubar on the (t, x) product grid: ``(n_t, n_x)`` (+ time derivative)."""
        params = self.params if params is None else params
        xs = _points(x)
        ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
        inp = _grid_inputs(self.norm_x(xs), self.norm_t(ts))
        h, dh = self._eval(self.mean_net, params, inp, derivs, xs.shape[1])
        shape = (len(ts), xs.shape[0])
        h = h.reshape(shape)
        dh = dh.reshape(shape) if dh is not None else None
        if self.arch.lifting:
            b = constant(self.bubble(xs)[None, :])
            h = h * b
            dh = dh * b if dh is not None else None
        return h, dh

    def eval_mean_points(self, x, t, params=None) -> Tensor:
        """ubar at scattered ``(x_k, t_k)`` pairs (observations)."""
        params = self.params if params is None else params
        xs = _points(x)
        ts = np.asarray(t, dtype=np.float64).ravel()
        if ts.size != xs.shape[0]:
            raise ValueError("one time per observation point required")
        inp = np.concatenate([self.norm_x(xs), self.norm_t(ts)[:, None]], axis=1)
        h = mlp_fused(self.mean_net, params, inp)[0].reshape(xs.shape[0])
        if self.arch.lifting:
            h = h * constant(self.bubble(xs))
        return h

    def components(self, x, t, xi, params=None, derivs=True) -> Components:
        params = self.params if params is None else params
        xs = _points(x)
        ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
        xi = np.asarray(xi, dtype=np.float64)
        if xi.ndim == 1:
            xi = xi[:, None]
        mean, mean_t = self.eval_mean(xs, ts, params, derivs)
        if self.N == 0:
            return Components(mean, mean_t=mean_t)
        n_t, n_x, N = len(ts), xs.shape[0], self.N
        tn = self.norm_t(ts)[:, None]
        As, Ats = [], []
        for net in self.A_nets:
            h, dh = self._eval(net, params, tn, derivs, 0)
            As.append(h)
            Ats.append(dh)
        A = concat(As, axis=1)
        A_t = concat(Ats, axis=1) if derivs else None

        inp = _grid_inputs(self.norm_x(xs), self.norm_t(ts))
        U, U_t = self._eval(self.U_net, params, inp, derivs, xs.shape[1])
        U = U.reshape(n_t, n_x, N).transpose(0, 2, 1)
        U_t = U_t.reshape(n_t, n_x, N).transpose(0, 2, 1) if derivs else None
        if self.arch.lifting:
            b = constant(self.bubble(xs)[None, None, :])
            U = U * b
            U_t = U_t * b if derivs else None

        if xi.shape[1] != self.arch.xi_dim:
            raise ArchitectureMismatch(f"random inputs have dimension {xi.shape[1]}, "
                                       f"Y network expects {self.arch.xi_dim}")
        xn = xi_normalized(xi, self.xi_law)
        n_l = xi.shape[0]
        yin = np.empty((n_t * n_l, 1 + xi.shape[1]))
        yin[:, 0] = np.repeat(tn[:, 0], n_l)
        yin[:, 1:] = np.tile(xn, (n_t, 1))
        Y, Y_t = self._eval(self.Y_net, params, yin, derivs, 0)
        Y = Y.reshape(n_t, n_l, N)
        Y_t = Y_t.reshape(n_t, n_l, N) if derivs else None
        return Components(mean, A, U, Y, mean_t, A_t, U_t, Y_t)


class ExactBOProvider:
    """Closed-form components of the crossing benchmark (no parameters).

    ``scale`` multiplies mode 1 of ``A`` and divides mode 1 of ``Y`` (used to
    check the product invariance of the expansion).
    """

    def __init__(self, exact=ManufacturedBO, n_modes: Optional[int] = None, scale: float = 1.0):
        self.exact = exact
        self.n = exact.N if n_modes is None else int(n_modes)
        self.scale = scale
        self.arch = Architecture(self.n, 1, 2)
        self.params = ParamStore()
        self.window = (0.0, math.pi)

    @property
    def N(self):
        return self.n

    def eval_mean(self, x, t, params=None, derivs=False):
        xs = _points(x)[:, 0]
        ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
        m = np.stack([self.exact.mean(xs, tt) for tt in ts])
        mt = np.stack([self.exact.mean_t(xs, tt) for tt in ts]) if derivs else None
        return constant(m), (constant(mt) if derivs else None)

    def eval_mean_points(self, x, t, params=None):
        xs = _points(x)[:, 0]
        ts = np.asarray(t, dtype=np.float64).ravel()
        return constant(np.array([self.exact.mean(np.array([a]), b)[0] for a, b in zip(xs, ts)]))

    def components(self, x, t, xi, params=None, derivs=True) -> Components:
        xs = _points(x)[:, 0]
        ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
        mean, mean_t = self.eval_mean(xs, ts, derivs=derivs)
        n = self.n
        if n == 0:
            return Components(mean, mean_t=mean_t)
        sc = np.ones(n)
        sc[0] = self.scale
        A = np.stack([self.exact.a(tt)[:n] for tt in ts]) * sc
        A_t = np.stack([self.exact.a_t(tt)[:n] for tt in ts]) * sc
        Um = self.exact.modes(xs)[:n]
        U = np.broadcast_to(Um, (len(ts),) + Um.shape).copy()
        Yv = self.exact.Y(xi)[:, :n] / sc
        Y = np.broadcast_to(Yv, (len(ts),) + Yv.shape).copy()
        if not derivs:
            return Components(mean, constant(A), constant(U), constant(Y))
        z = np.zeros
        return Components(mean, constant(A), constant(U), constant(Y), mean_t, constant(A_t),
                          constant(z(U.shape)), constant(z(Y.shape)))


def assemble(c: Components) -> Tensor:
    """``u[t, l, x] = mean + sum_i A_i U_i Y_i``."""
    u = c.mean.reshape(c.mean.shape[0], 1, c.mean.shape[1])
    if c.N == 0:
        return u
    if not (c.U.shape[1] == c.Y.shape[2] == c.N):
        raise ArchitectureMismatch(f"mode counts differ: A {c.N}, U {c.U.shape[1]}, Y {c.Y.shape[2]}")
    P = c.A.reshape(c.A.shape[0], c.A.shape[1], 1) * c.U
    return u + c.Y @ P


def surrogate_eval(s, x, t, xi) -> np.ndarray:
    """Surrogate values on the (t, xi, x) product: shape ``(n_t, n_xi, n_x)``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    c = s.components(x, t, xi, derivs=False)
    return assemble(c).data
