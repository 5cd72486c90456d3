"""Benchmark problem definitions.

Every problem has the form

    u_t = mu * (D^alpha_{|x1|} u [+ D^beta_{|x2|} u]) + eps * K(xi) * f(u) + g(x, t; xi)

with homogeneous Dirichlet boundaries, ``f(u) = u (1 - u^2)`` (or none) and
``K(xi) = 1 + sigma_K * xi_k``.  Forcings and initial conditions are callables
evaluated on node arrays and batches of random inputs ``xi`` of shape
``(n_xi, d)``; they return arrays of shape ``(n_xi, n_x)`` (1D) or
``(n_xi, n1, n2)`` (2D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .fracops import AnalyticFracOracle, analytic_riesz, riesz_coeff
from .stochastic import CovKernel, KLBasis, kl_decompose, se_kernel_matrix, kl_mode_count

__all__ = [
    "ProblemSpec",
    "KLField",
    "XI_LAWS",
    "xi_from_unit",
    "reaction",
    "reaction_du",
    "ManufacturedBO",
    "manufactured_problem",
    "appd_problem",
    "forcing_static_problem",
    "forcing_evolving_problem",
    "rd2d_problem",
    "sensor_data",
    "gp_forcing_field",
    "bubble",
]

# law name -> (description, variance); 'unit' is U[0,1]
XI_LAWS = {
    "unit": "uniform on [0, 1]",
    "normal": "standard normal",
    "uniform1": "uniform on [-1, 1]",
    "uniform3": "uniform on (-sqrt 3, sqrt 3)",
}


def xi_from_unit(u, law: str) -> np.ndarray:
    """Map points of the unit cube to the random-input law."""
    u = np.asarray(u, dtype=np.float64)
    if law == "unit":
        return u.copy()
    if law == "uniform1":
        return 2.0 * u - 1.0
    if law == "uniform3":
        return math.sqrt(3.0) * (2.0 * u - 1.0)
    if law == "normal":
        from scipy.special import ndtri

        return ndtri(np.clip(u, 1e-16, 1.0 - 1e-16))
    raise ValueError(f"unknown random-input law {law!r}")


def xi_normalized(xi, law: str) -> np.ndarray:
    """Zero-mean, unit-variance first-degree polynomial chaos of each coordinate."""
    xi = np.asarray(xi, dtype=np.float64)
    if law == "unit":
        return math.sqrt(3.0) * (2.0 * xi - 1.0)
    if law == "uniform1":
        return math.sqrt(3.0) * xi
    if law in ("uniform3", "normal"):
        return xi.copy()
    raise ValueError(f"unknown random-input law {law!r}")


def reaction(u):
    return u * (1.0 - u * u)


def reaction_du(u):
    return 1.0 - 3.0 * u * u


def bubble(x, a, b):
    """Boundary bubble ``(x - a)(b - x)``; equals ``1 - x^2`` on (-1, 1)."""
    return (np.asarray(x) - a) * (b - np.asarray(x))


# ---------------------------------------------------------------------------
# KL random fields


@dataclass
class KLField:
    """Gaussian-kernel random field discretised on a reference grid.

    The covariance is ``m(x) m(y) C_SE(x, y)`` where ``m`` is an optional
    multiplicative envelope (e.g. ``1 - x^2``).  Eigenfunctions are evaluated
    off the reference grid by Nystrom interpolation.
    """

    kernel: CovKernel
    a: float
    b: float
    n_ref: int = 513
    envelope: Optional[Callable] = None
    basis: KLBasis = field(init=False, repr=False)

    def __post_init__(self):
        y = np.linspace(self.a, self.b, self.n_ref)
        w = np.full(self.n_ref, (self.b - self.a) / (self.n_ref - 1))
        w[0] = w[-1] = 0.5 * w[1]
        self._y, self._w = y, w
        self.basis = kl_decompose(self._cov(y, y), w, nodes=y)

    def _env(self, x):
        return np.ones_like(x) if self.envelope is None else self.envelope(x)

    def _cov(self, x, y):
        return self._env(x)[:, None] * se_kernel_matrix(x, self.kernel, y) * self._env(y)[None, :]

    @property
    def eigvals(self) -> np.ndarray:
        return self.basis.eigvals

    def mode_count(self, threshold: float) -> int:
        return kl_mode_count(self.basis, threshold)

    def modes_at(self, x, n: int) -> np.ndarray:
        """First ``n`` eigenfunctions at points ``x`` (Nystrom), shape ``(n, len(x))``."""
        x = np.asarray(x, dtype=np.float64).ravel()
        lam = self.basis.eigvals[:n]
        if np.any(lam <= 0):
            raise ValueError("requested KL modes with zero eigenvalue")
        K = self._cov(x, self._y)
        return ((K * self._w[None, :]) @ self.basis.modes[:n].T / lam).T


def gp_forcing_field(length: float, sigma: float = 1.0, a=-1.0, b=1.0, n_ref: int = 513) -> KLField:
    """KL of ``g = (1 - x^2) h`` with ``h`` a squared-exponential Gaussian field."""
    return KLField(CovKernel(sigma, length), a, b, n_ref, envelope=lambda x: bubble(x, a, b))


class StaticGPForcing:
    """``g(x; xi) = (1 - x^2) * 1 + sum_i sqrt(lam_i) phi_i(x) xi_i``, ``xi`` standard normal."""

    random = True
    time_dependent = False

    def __init__(self, kl: KLField, n_modes: int, mean_value: float = 1.0):
        self.kl, self.n_modes, self.mean_value = kl, int(n_modes), mean_value
        self._cache = {}

    def _modes(self, x):
        key = (x.shape, x.tobytes())
        if key not in self._cache:
            phi = self.kl.modes_at(x.ravel(), self.n_modes)
            self._cache[key] = (np.sqrt(self.kl.eigvals[:self.n_modes])[:, None] * phi).reshape(
                (self.n_modes,) + x.shape)
        return self._cache[key]

    def mean(self, x, t=0.0):
        x = np.asarray(x, dtype=np.float64)
        return self.mean_value * bubble(x, self.kl.a, self.kl.b)

    def __call__(self, x, t, xi):
        x = np.asarray(x, dtype=np.float64)
        m = self.mean(x)
        if xi is None:
            return m
        xi = np.asarray(xi, dtype=np.float64)[:, : self.n_modes]
        return m + np.tensordot(xi, self._modes(x), axes=(1, 0))


class EvolvingGPForcing:
    """``g = 1 + 0.1 sum_i gamma_i(t) lam_i phi_i(x) xi_i``, ``xi_i`` uniform on [-1, 1]."""

    random = True
    time_dependent = True

    def __init__(self, kl: KLField, n_modes: int = 5, scale: float = 0.1):
        if n_modes > 5:
            raise ValueError("the growth envelopes are defined for five modes")
        self.kl, self.n_modes, self.scale = kl, int(n_modes), scale
        self._cache = {}

    @staticmethod
    def gamma(t) -> np.ndarray:
        t = float(t)
        return np.sqrt([2 * (1 + t), 3 * (1 + t) ** 2, 5 * (1 + t) ** 3, 50 * t, 10 * t ** 2])

    def _modes(self, x):
        key = (x.shape, x.tobytes())
        if key not in self._cache:
            phi = self.kl.modes_at(x.ravel(), self.n_modes)
            self._cache[key] = (self.kl.eigvals[:self.n_modes, None] * phi).reshape((self.n_modes,) + x.shape)
        return self._cache[key]

    def mean(self, x, t=0.0):
        return np.ones_like(np.asarray(x, dtype=np.float64))

    def __call__(self, x, t, xi):
        x = np.asarray(x, dtype=np.float64)
        if xi is None:
            return self.mean(x)
        xi = np.asarray(xi, dtype=np.float64)[:, : self.n_modes]
        coef = self.scale * xi * self.gamma(t)[: self.n_modes]
        return 1.0 + np.tensordot(coef, self._modes(x), axes=(1, 0))


class Cosine2DForcing:
    """``g = 1 + 3 sum_{i<=j} sqrt(v_i v_j) phi_i(x1) phi_j(x2) xi_ij`` on (0, 1)^2.

    ``v_0 = 1/2``, ``phi_0 = 1``, ``v_i = exp(-pi i^2 l^2)/2``,
    ``phi_i = sqrt 2 cos(i pi x)``.  The random inputs used are
    ``xi[:, offset:offset + n_terms]`` in the order of :attr:`pairs`.
    """

    random = True
    time_dependent = False

    def __init__(self, P: int = 4, length: float = 1.0 / 3.0, amplitude: float = 3.0, offset: int = 0):
        self.P, self.length, self.amplitude, self.offset = P, length, amplitude, offset
        self.pairs = [(i, j) for i in range(P + 1) for j in range(i, P + 1)]
        v = np.array([0.5] + [0.5 * math.exp(-math.pi * i * i * length * length) for i in range(1, P + 1)])
        self.v = v
        self.coef = np.array([amplitude * math.sqrt(v[i] * v[j]) for i, j in self.pairs])

    @property
    def n_terms(self) -> int:
        return len(self.pairs)

    @staticmethod
    def phi(i, x):
        return np.ones_like(x) if i == 0 else math.sqrt(2.0) * np.cos(i * math.pi * x)

    def mean(self, x, t=0.0):
        x1, x2 = x
        return np.ones((len(x1), len(x2)))

    def __call__(self, x, t, xi):
        x1, x2 = (np.asarray(v, dtype=np.float64) for v in x)
        m = self.mean((x1, x2))
        if xi is None:
            return m
        xi = np.asarray(xi, dtype=np.float64)[:, self.offset:self.offset + self.n_terms]
        basis = np.stack([np.outer(self.phi(i, x1), self.phi(j, x2)) for i, j in self.pairs])
        return m + np.tensordot(xi * self.coef, basis, axes=(1, 0))


# ---------------------------------------------------------------------------
# manufactured solutions


class ManufacturedBO:
    """Exact BO components of the crossing benchmark on [0, 1].

    ``u = 100 sin(t/2 + pi/4) x^3 (1-x)^3 + sum_i a_i(t) u_i(x) Y_i(xi)`` with
    ``u_1 = -sqrt2 sin(pi x)``, ``u_2 = sqrt2 sin(2 pi x)``,
    ``a_1 = (1.5 + sin t)/sqrt2``, ``a_2 = (1.5 + cos 3t)/sqrt2`` and
    ``Y_i = sqrt3 (2 xi_i - 1)`` for ``xi_i`` uniform on [0, 1].
    """

    N = 2

    @staticmethod
    def mean(x, t):
        x = np.asarray(x, dtype=np.float64)
        return 100.0 * math.sin(t / 2 + math.pi / 4) * x ** 3 * (1 - x) ** 3

    @staticmethod
    def mean_t(x, t):
        x = np.asarray(x, dtype=np.float64)
        return 50.0 * math.cos(t / 2 + math.pi / 4) * x ** 3 * (1 - x) ** 3

    @staticmethod
    def modes(x, t=0.0):
        x = np.asarray(x, dtype=np.float64)
        return math.sqrt(2.0) * np.stack([-np.sin(math.pi * x), np.sin(2 * math.pi * x)])

    @staticmethod
    def a(t):
        return np.array([1.5 + math.sin(t), 1.5 + math.cos(3 * t)]) / math.sqrt(2.0)

    @staticmethod
    def a_t(t):
        return np.array([math.cos(t), -3.0 * math.sin(3 * t)]) / math.sqrt(2.0)

    @staticmethod
    def Y(xi, t=0.0):
        xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
        return math.sqrt(3.0) * (2.0 * xi[:, :2] - 1.0)

    @classmethod
    def u(cls, x, t, xi):
        return cls.mean(x, t) + np.einsum("i,ix,li->lx", cls.a(t), cls.modes(x), cls.Y(xi))

    @classmethod
    def variance(cls, x, t):
        return np.einsum("i,ix->x", cls.a(t) ** 2, cls.modes(x) ** 2)


class ManufacturedForcing:
    """``g = u_t - D^alpha u - f(u)`` for :class:`ManufacturedBO`.

    The Riesz derivatives of the bump and of ``sin(k pi x)`` use the closed
    Gamma series (the sine series truncated after ``M`` terms).  At the two
    endpoints, where the series is singular, the forcing is set to zero; the
    solvers never read it there.
    """

    random = True
    time_dependent = True

    def __init__(self, alpha: float, M: int = 50, reaction_on: bool = True):
        self.alpha, self.M, self.reaction_on = alpha, M, reaction_on
        self._cache = {}

    def riesz_parts(self, x):
        key = x.tobytes()
        if key not in self._cache:
            x = np.asarray(x, dtype=np.float64)
            inside = (x > 0) & (x < 1)
            out = np.zeros((3,) + x.shape)
            xi = x[inside]
            out[0][inside] = analytic_riesz(AnalyticFracOracle("bump", self.alpha), xi)
            out[1][inside] = analytic_riesz(AnalyticFracOracle("sine", self.alpha, k=1, M=self.M), xi)
            out[2][inside] = analytic_riesz(AnalyticFracOracle("sine", self.alpha, k=2, M=self.M), xi)
            self._cache[key] = (out, inside)
        return self._cache[key]

    def mean(self, x, t):
        raise NotImplementedError("mean forcing of the manufactured problem depends on f(u)")

    def __call__(self, x, t, xi):
        x = np.asarray(x, dtype=np.float64)
        (Db, Ds1, Ds2), inside = self.riesz_parts(x)
        mb = ManufacturedBO
        Y = mb.Y(xi)
        s = 100.0 * math.sin(t / 2 + math.pi / 4)
        a, a_t = mb.a(t), mb.a_t(t)
        sq2 = math.sqrt(2.0)
        # modes: u_1 = -sqrt2 sin(pi x), u_2 = sqrt2 sin(2 pi x)
        Dmodes = sq2 * np.stack([-Ds1, Ds2])
        modes = mb.modes(x)
        u_t = mb.mean_t(x, t) + np.einsum("i,ix,li->lx", a_t, modes, Y)
        Du = s * Db + np.einsum("i,ix,li->lx", a, Dmodes, Y)
        g = u_t - Du
        if self.reaction_on:
            g = g - reaction(mb.u(x, t, xi))
        return np.where(inside, g, 0.0)


class AppDForcing:
    """Deterministic forcing for ``u = 100 e^{-t} x^3 (1-x)^3`` on (0, 1)."""

    random = False
    time_dependent = True

    def __init__(self, alpha: float, reaction_on: bool = True):
        self.alpha, self.reaction_on = alpha, reaction_on
        self._cache = {}

    @staticmethod
    def exact(x, t):
        x = np.asarray(x, dtype=np.float64)
        return 100.0 * math.exp(-t) * x ** 3 * (1 - x) ** 3

    def _Db(self, x):
        key = x.tobytes()
        if key not in self._cache:
            inside = (x > 0) & (x < 1)
            out = np.zeros_like(x)
            out[inside] = analytic_riesz(AnalyticFracOracle("bump", self.alpha), x[inside])
            self._cache[key] = (out, inside)
        return self._cache[key]

    def mean(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        Db, inside = self._Db(x)
        u = self.exact(x, t)
        g = -u - 100.0 * math.exp(-t) * Db
        if self.reaction_on:
            g = g - reaction(u)
        return np.where(inside, g, 0.0)

    def __call__(self, x, t, xi=None):
        g = self.mean(x, t)
        if xi is None:
            return g
        return np.broadcast_to(g, (np.asarray(xi).shape[0],) + g.shape).copy()


class FunctionForcing:
    """Wrap a deterministic ``g(x, t)`` callable."""

    random = False
    time_dependent = True

    def __init__(self, fn):
        self.fn = fn

    def mean(self, x, t):
        return self.fn(x, t)

    def __call__(self, x, t, xi=None):
        g = np.asarray(self.fn(x, t), dtype=np.float64)
        if xi is None:
            return g
        return np.broadcast_to(g, (np.asarray(xi).shape[0],) + g.shape).copy()


class ZeroForcing(FunctionForcing):
    def __init__(self, dim: int = 1):
        if dim == 1:
            super().__init__(lambda x, t: np.zeros_like(np.asarray(x, dtype=np.float64)))
        else:
            super().__init__(lambda x, t: np.zeros((len(x[0]), len(x[1]))))


# ---------------------------------------------------------------------------
# initial conditions


@dataclass
class InitialCondition:
    """Initial data ``u(x, 0; xi)``.

    ``fn(x, xi)`` returns ``(n_xi, ...)``; deterministic conditions ignore
    ``xi``.  ``sensors`` optionally holds ``(locations, values, noise)`` for the
    noisy-sensor variant.
    """

    fn: Callable
    random: bool = False
    sensors: Optional[tuple] = None

    def __call__(self, x, xi=None):
        return self.fn(x, xi)

    def deterministic(self, x):
        if self.random:
            raise ValueError("initial condition is random")
        return self.fn(x, None)


def _det_ic(g):
    def fn(x, xi=None):
        v = np.asarray(g(x), dtype=np.float64)
        if xi is None:
            return v
        return np.broadcast_to(v, (np.asarray(xi).shape[0],) + v.shape).copy()
    return fn


def sensor_data(fn, a, b, n_sensors: int = 30, noise: float = 0.1, seed: int = 0):
    """Noisy observations at ``n_sensors`` uniformly spaced interior points (cell centres)."""
    if n_sensors < 2:
        raise ValueError("need at least two sensors")
    xs = a + (b - a) * (np.arange(n_sensors) + 0.5) / n_sensors
    rng = np.random.default_rng([seed, 7919])
    return xs, fn(xs) + noise * rng.standard_normal(n_sensors), noise


# ---------------------------------------------------------------------------


@dataclass
class ProblemSpec:
    tag: str
    dim: int
    domain: tuple
    alpha: float
    forcing: object
    ic: InitialCondition
    T: float
    xi_dim: int
    xi_law: str
    beta: Optional[float] = None
    mu: float = 1.0
    eps: float = 1.0
    reaction: Optional[str] = "cubic"
    k_sigma: float = 0.0
    k_index: Optional[int] = None
    exact: Optional[object] = None
    lifting: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if len(self.domain) != self.dim:
            raise ValueError("one interval per spatial dimension required")
        if not 1.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha={self.alpha} outside (1, 2]")
        if self.dim == 2:
            if self.beta is None:
                self.beta = self.alpha
            if not 1.0 < self.beta <= 2.0:
                raise ValueError(f"beta={self.beta} outside (1, 2]")
        if not (np.isfinite(self.mu) and np.isfinite(self.eps)):
            raise ValueError("mu and eps must be finite")
        if self.xi_law not in XI_LAWS:
            raise ValueError(f"unknown random-input law {self.xi_law!r}")
        if self.reaction not in (None, "cubic"):
            raise ValueError(f"unknown reaction {self.reaction!r}")

    @property
    def random(self) -> bool:
        return self.xi_dim > 0

    def with_(self, **kw) -> "ProblemSpec":
        return replace(self, **kw)

    def reaction_factor(self, xi):
        """``eps * K(xi)`` per sample (shape ``(n_xi,)``)."""
        xi = np.asarray(xi, dtype=np.float64)
        k = np.ones(xi.shape[0])
        if self.k_sigma and self.k_index is not None:
            k = 1.0 + self.k_sigma * xi[:, self.k_index]
        return self.eps * k

    def sample_xi(self, n: int, seed: int = 0, generator: str = "sobol") -> np.ndarray:
        """Random inputs mapped from scrambled Sobol (or pseudo-random) unit points."""
        from .stochastic import low_discrepancy_points

        if self.xi_dim == 0:
            return np.zeros((n, 0))
        if generator == "sobol":
            u = low_discrepancy_points(self.xi_dim, n, seed=seed, scramble=True).xi
        elif generator == "pseudo":
            u = np.stack([np.random.default_rng([seed, l]).random(self.xi_dim) for l in range(n)])
        else:
            raise ValueError(f"unknown generator {generator!r}")
        return xi_from_unit(u, self.xi_law)


def manufactured_problem(alpha: float = 1.5, M: int = 50, T: float = math.pi) -> ProblemSpec:
    mb = ManufacturedBO

    def ic(x, xi=None):
        if xi is None:
            return mb.mean(x, 0.0)
        return mb.u(x, 0.0, xi)

    return ProblemSpec("rd1d-manufactured", 1, ((0.0, 1.0),), alpha, ManufacturedForcing(alpha, M),
                       InitialCondition(ic, random=True), T, 2, "unit", exact=mb)


def appd_problem(alpha: float = 1.5, T: float = 1.0) -> ProblemSpec:
    forcing = AppDForcing(alpha)
    ic = InitialCondition(_det_ic(lambda x: AppDForcing.exact(x, 0.0)))
    return ProblemSpec("appD-deterministic", 1, ((0.0, 1.0),), alpha, forcing, ic, T, 0, "unit",
                       exact=AppDForcing.exact, lifting=True)


def forcing_static_problem(alpha: float = 1.5, length: float = 0.1, sigma: float = 1.0,
                           n_kl: Optional[int] = None, energy: float = 0.98, mu: float = 1.0,
                           eps: float = 1.0, T: float = 1.0, tag: str = "rd1d-forcing-static",
                           sensors: bool = False, sensor_seed: int = 0) -> ProblemSpec:
    kl = gp_forcing_field(length, sigma)
    n = kl.mode_count(energy) if n_kl is None else int(n_kl)
    ic_fn = lambda x: np.sin(math.pi * np.asarray(x, dtype=np.float64))
    sens = sensor_data(ic_fn, -1.0, 1.0, seed=sensor_seed) if sensors else None
    return ProblemSpec(tag, 1, ((-1.0, 1.0),), alpha, StaticGPForcing(kl, n),
                       InitialCondition(_det_ic(ic_fn), sensors=sens), T, n, "normal", mu=mu, eps=eps,
                       meta={"kl_length": length, "kl_sigma": sigma, "kl_modes": n})


def forcing_evolving_problem(alpha: float = 1.5, mu: float = 0.5, eps: float = 0.3, T: float = 1.0,
                             length: float = 0.4, tag: str = "rd1d-forcing-evolving") -> ProblemSpec:
    kl = gp_forcing_field(length, 1.0)
    ic_fn = lambda x: np.sin(math.pi * np.asarray(x, dtype=np.float64))
    return ProblemSpec(tag, 1, ((-1.0, 1.0),), alpha, EvolvingGPForcing(kl, 5),
                       InitialCondition(_det_ic(ic_fn)), T, 5, "uniform1", mu=mu, eps=eps, lifting=True,
                       meta={"kl_length": length})


def rd2d_problem(alpha: float = 1.8, T: float = 1.0, k_sigma: float = 1.0) -> ProblemSpec:
    # xi[:, 0] drives K(1 + sigma xi); xi[:, 1:16] the forcing terms
    forcing = Cosine2DForcing(offset=1)

    def ic(x, xi=None):
        x1, x2 = (np.asarray(v, dtype=np.float64) for v in x)
        v = np.outer(np.sin(2 * math.pi * x1), np.sin(2 * math.pi * x2))
        if xi is None:
            return v
        return np.broadcast_to(v, (np.asarray(xi).shape[0],) + v.shape).copy()

    return ProblemSpec("rd2d", 2, ((0.0, 1.0), (0.0, 1.0)), alpha, forcing, InitialCondition(ic), T,
                       1 + forcing.n_terms, "uniform3", beta=alpha, k_sigma=k_sigma, k_index=0)
