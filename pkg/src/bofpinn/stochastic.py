"""Covariance kernels, discrete KL decomposition, quadrature and sampling."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

__all__ = [
    "CovKernel",
    "KLBasis",
    "QuadratureRule",
    "SampleSet",
    "se_kernel_matrix",
    "kl_decompose",
    "kl_mode_count",
    "gauss_legendre_rule",
    "tensor_quadrature",
    "sample_gp",
    "low_discrepancy_points",
    "expectation",
    "MAX_TENSOR_NODES",
    "MAX_SOBOL_DIM",
]

MAX_TENSOR_NODES = 10 ** 6
# scipy ships Joe-Kuo direction numbers for far more dimensions; we cap at
# what the solvers here ever need
MAX_SOBOL_DIM = 64


@dataclass(frozen=True)
class CovKernel:
    sigma: float = 1.0
    length: float = 0.1
    kind: str = "se"

    def __post_init__(self):
        if self.kind != "se":
            raise ValueError(f"unsupported kernel kind {self.kind!r}")
        if not (self.sigma > 0 and self.length > 0):
            raise ValueError("kernel needs sigma > 0 and length > 0")


def se_kernel_matrix(points, kernel: CovKernel, points2=None) -> np.ndarray:
    """``C_ij = sigma^2 exp(-(x_i - x_j)^2 / l^2)``."""
    x = np.asarray(points, dtype=np.float64).ravel()
    y = x if points2 is None else np.asarray(points2, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("kernel points must be finite")
    d = x[:, None] - y[None, :]
    return kernel.sigma ** 2 * np.exp(-(d * d) / kernel.length ** 2)


@dataclass
class KLBasis:
    """Eigenpairs of a covariance operator discretised with quadrature ``weights``.

    ``modes`` has shape ``(n_modes, n_points)`` and is orthonormal under the
    weights.  ``energy[i]`` is the cumulative fraction of the *total* trace
    captured by the first ``i+1`` modes.
    """

    nodes: Optional[np.ndarray]
    weights: np.ndarray
    eigvals: np.ndarray
    modes: np.ndarray
    energy: np.ndarray
    total: float

    @property
    def n_modes(self) -> int:
        return len(self.eigvals)

    def truncate(self, n: int) -> "KLBasis":
        return KLBasis(self.nodes, self.weights, self.eigvals[:n].copy(), self.modes[:n].copy(),
                       self.energy[:n].copy(), self.total)

    def covariance(self, n: Optional[int] = None) -> np.ndarray:
        n = self.n_modes if n is None else n
        P = self.modes[:n]
        return (P.T * self.eigvals[:n]) @ P

    def variance(self, n: Optional[int] = None) -> np.ndarray:
        n = self.n_modes if n is None else n
        return np.einsum("i,ij->j", self.eigvals[:n], self.modes[:n] ** 2)


def kl_decompose(C, weights, n_max: Optional[int] = None, nodes=None, sym_tol: float = 1e-10) -> KLBasis:
    """Discrete KL of covariance matrix ``C`` under quadrature ``weights``.

    Solves ``C W phi = lam phi`` through the symmetric matrix
    ``W^1/2 C W^1/2``.  Tiny negative eigenvalues from round-off are clipped to 0.
    """
    C = np.asarray(C, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] != w.size:
        raise ValueError("covariance must be square and match the weights")
    scale = max(np.max(np.abs(C)), 1e-300)
    if np.max(np.abs(C - C.T)) > sym_tol * scale:
        raise ValueError("covariance matrix is not symmetric")
    if np.any(w <= 0):
        raise ValueError("quadrature weights must be positive")
    sw = np.sqrt(w)
    B = sw[:, None] * (0.5 * (C + C.T)) * sw[None, :]
    lam, V = np.linalg.eigh(B)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    V = V[:, order]
    total = float(np.sum(lam))
    energy = np.cumsum(lam) / total if total > 0 else np.ones_like(lam)
    modes = (V / sw[:, None]).T
    n = len(lam) if n_max is None else min(int(n_max), len(lam))
    return KLBasis(None if nodes is None else np.asarray(nodes, dtype=np.float64), w,
                   lam[:n], modes[:n], energy[:n], total)


def kl_mode_count(basis: KLBasis, threshold: float) -> int:
    """Smallest ``n`` whose cumulative energy reaches ``threshold`` (``0 -> 1``)."""
    if threshold < 0 or threshold > 1:
        raise ValueError("threshold must lie in [0, 1]")
    if threshold == 0:
        return 1
    # small slack so threshold 1 is reachable despite round-off in the cumsum
    hit = np.nonzero(basis.energy >= threshold - 1e-14)[0]
    if hit.size == 0:
        raise ValueError(f"stored modes capture only {basis.energy[-1]:.6f} of the energy, "
                         f"below the requested {threshold}")
    return int(hit[0]) + 1


@dataclass
class QuadratureRule:
    nodes: np.ndarray  # (n, d)
    weights: np.ndarray
    intervals: list
    kind: str = "gauss-legendre"

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    def integrate(self, f) -> float:
        vals = f(self.nodes) if callable(f) else np.asarray(f)
        return float(self.weights @ vals)


def gauss_legendre_rule(n: int, interval=(-1.0, 1.0)) -> QuadratureRule:
    if n < 1:
        raise ValueError("need at least one quadrature point")
    a, b = float(interval[0]), float(interval[1])
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
    return QuadratureRule(nodes[:, None], 0.5 * (b - a) * w, [(a, b)])


def tensor_quadrature(rules: Sequence[QuadratureRule]) -> QuadratureRule:
    if not rules:
        raise ValueError("need at least one rule")
    count = int(np.prod([r.n for r in rules], dtype=object))
    if count > MAX_TENSOR_NODES:
        raise ValueError(f"tensor rule would have {count} nodes (limit {MAX_TENSOR_NODES})")
    nodes, weights = [], []
    for combo in itertools.product(*[range(r.n) for r in rules]):
        nodes.append(np.concatenate([r.nodes[i] for r, i in zip(rules, combo)]))
        weights.append(np.prod([r.weights[i] for r, i in zip(rules, combo)]))
    intervals = [iv for r in rules for iv in r.intervals]
    return QuadratureRule(np.array(nodes), np.array(weights), intervals, "tensor")


def _as_points(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=np.float64)
    return xi[:, None] if xi.ndim == 1 else xi


@dataclass
class SampleSet:
    """Points in random space with expectation weights summing to one."""

    xi: np.ndarray  # (n, d)
    weights: np.ndarray
    generator: str = "pseudo"
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xi = _as_points(self.xi)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.xi.shape[0],):
            raise ValueError("one weight per sample required")
        if np.any(self.weights < 0):
            raise ValueError("sample weights must be nonnegative")

    @property
    def n(self) -> int:
        return self.xi.shape[0]

    @property
    def dim(self) -> int:
        return self.xi.shape[1]

    @classmethod
    def equal(cls, xi, generator="pseudo", seed=None, **meta) -> "SampleSet":
        xi = _as_points(xi)
        n = xi.shape[0]
        return cls(xi, np.full(n, 1.0 / n), generator, seed, meta)

    @classmethod
    def from_quadrature(cls, rule: QuadratureRule, volume: Optional[float] = None) -> "SampleSet":
        # probability weights for the uniform density on the rule's box
        vol = volume if volume is not None else float(np.prod([b - a for a, b in rule.intervals]))
        return cls(rule.nodes.copy(), rule.weights / vol, "quadrature", None, {"kind": rule.kind})

    def subset(self, idx) -> "SampleSet":
        w = self.weights[idx]
        return SampleSet(self.xi[idx], w / w.sum(), self.generator, self.seed, dict(self.meta))


def expectation(samples: SampleSet, values, axis: int = 0) -> np.ndarray:
    """Weighted average of ``values`` along ``axis`` (the sample axis).

    For equal weights this is an exact arithmetic mean (``E[1] == 1`` holds
    bit-exactly); otherwise the weights are renormalised by their sum.
    """
    v = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    w = samples.weights
    if np.all(w == w[0]):
        return v.mean(axis=0)
    # same reduction in numerator and denominator, so E[1] is exactly 1
    return np.tensordot(w, v, axes=(0, 0)) / np.tensordot(w, np.ones(len(w)), axes=(0, 0))


def _draw(law: str, rng, d: int) -> np.ndarray:
    if law == "normal":
        return rng.standard_normal(d)
    if law == "uniform":
        # unit-variance uniform on (-sqrt 3, sqrt 3)
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), d)
    raise ValueError(f"unknown variable law {law!r}")


def sample_gp(basis: KLBasis, count: int, seed: int, generator: str = "pseudo", law: str = "normal",
              mean=0.0, n_modes: Optional[int] = None):
    """Realisations ``mean + sum_i sqrt(lam_i) phi_i xi_i``.

    Returns ``(SampleSet, fields)`` with ``fields`` of shape ``(count, n_points)``.
    Pseudo-random draws give sample ``l`` its own stream ``default_rng([seed, l])``
    so any subset can be regenerated independently.  ``generator="sobol"`` maps
    scrambled Sobol points through the inverse CDF of the requested law.
    """
    if count <= 0:
        raise ValueError("sample count must be positive")
    if basis.n_modes == 0:
        raise ValueError("KL basis has no modes")
    d = basis.n_modes if n_modes is None else int(n_modes)
    if generator == "pseudo":
        xi = np.stack([_draw(law, np.random.default_rng([seed, l]), d) for l in range(count)])
    elif generator == "sobol":
        u = low_discrepancy_points(d, count, seed=seed, scramble=True).xi
        xi = _map_unit(u, law)
    else:
        raise ValueError(f"unknown generator {generator!r}")
    fields = mean + xi @ (np.sqrt(basis.eigvals[:d])[:, None] * basis.modes[:d])
    return SampleSet.equal(xi, generator, seed, law=law), fields


def _map_unit(u, law):
    from scipy.special import ndtri

    if law == "normal":
        return ndtri(np.clip(u, 1e-16, 1 - 1e-16))
    if law == "uniform":
        return np.sqrt(3.0) * (2.0 * u - 1.0)
    raise ValueError(f"unknown variable law {law!r}")


def low_discrepancy_points(dim: int, count: int, seed: Optional[int] = None, scramble: bool = False,
                           lower=0.0, upper=1.0) -> SampleSet:
    """First ``count`` Sobol points in ``[lower, upper]^dim`` (scipy's generator).

    The unscrambled sequence starts at the origin, as in the classical
    construction.
    """
    if dim < 1 or dim > MAX_SOBOL_DIM:
        raise ValueError(f"Sobol dimension must be in [1, {MAX_SOBOL_DIM}], got {dim}")
    if count <= 0:
        raise ValueError("sample count must be positive")
    eng = qmc.Sobol(d=dim, scramble=scramble, seed=seed if scramble else None)
    m = int(np.ceil(np.log2(count)))
    import warnings

    with warnings.catch_warnings():
        # balance warning for non power-of-two counts is expected
        warnings.simplefilter("ignore", UserWarning)
        u = eng.random_base2(m)[:count] if count > 1 else eng.random(1)
    pts = lower + (upper - lower) * u
    return SampleSet.equal(pts, "sobol", seed, scrambled=scramble)
