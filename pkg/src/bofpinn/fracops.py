"""Riesz fractional derivatives on uniform grids (shifted Grünwald-Letnikov).

The Riesz derivative of order ``alpha`` in (1, 2] is

    D^alpha u = c_alpha * (left RL derivative + right RL derivative),
    c_alpha = -1 / (2 cos(pi alpha / 2)),

and is approximated with the shifted GL differences

    delta_p u_j = h^-alpha [ sum_{k=0}^{j} w_k u_{j-k+p} + sum_{k=0}^{N-j} w_k u_{j+k-p} ].

Order 1 uses ``c_alpha * delta_1``; order 2 blends
``c_alpha * (alpha/2 delta_1 + (1 - alpha/2) delta_0)``.  With alpha = 2 both
reduce to the centred second difference, which fixes the sign convention.

Operators are materialised as dense ``(N+1) x (N+1)`` matrices whose first and
last rows are zero; rows are Toeplitz-structured and could be applied by FFT,
which desk-scale grids do not need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import rgamma

__all__ = [
    "Grid1D",
    "GLStencil",
    "AnalyticFracOracle",
    "gl_weights",
    "gl_weights_dalpha",
    "riesz_coeff",
    "riesz_coeff_dalpha",
    "gl_matrix",
    "gl_matrix_dalpha",
    "shifted_gl_apply",
    "riesz_2d_matrix",
    "riesz_2d_apply",
    "analytic_riesz",
    "BoundaryValueError",
    "UnsupportedBasis",
]

BOUNDARY_TOL = 1e-12


class BoundaryValueError(ValueError):
    """Field does not satisfy homogeneous Dirichlet conditions."""


class UnsupportedBasis(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    a: float
    b: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"grid needs N >= 2 cells, got {self.N}")
        if not self.b > self.a:
            raise ValueError("grid requires b > a")

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.N

    @property
    def nodes(self) -> np.ndarray:
        return self.a + self.dx * np.arange(self.N + 1)

    @property
    def n_nodes(self) -> int:
        return self.N + 1

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.N + 1, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w


def _check_alpha(alpha, lo=0.0, hi=2.0, lo_open=True):
    ok = (alpha > lo if lo_open else alpha >= lo) and alpha <= hi
    if not ok:
        raise ValueError(f"fractional order {alpha} outside ({lo}, {hi}]")


def gl_weights(alpha: float, K: int) -> np.ndarray:
    """GL weights ``w_0..w_K`` from ``w_k = (1 - (alpha+1)/k) w_{k-1}``."""
    _check_alpha(alpha)
    if K < 0:
        raise ValueError("K must be nonnegative")
    w = np.empty(K + 1)
    w[0] = 1.0
    for k in range(1, K + 1):
        w[k] = (1.0 - (alpha + 1.0) / k) * w[k - 1]
    return w


def gl_weights_dalpha(alpha: float, K: int) -> np.ndarray:
    """Derivative of :func:`gl_weights` with respect to ``alpha``."""
    w = gl_weights(alpha, K)
    dw = np.empty(K + 1)
    dw[0] = 0.0
    for k in range(1, K + 1):
        dw[k] = (1.0 - (alpha + 1.0) / k) * dw[k - 1] - w[k - 1] / k
    return dw


def riesz_coeff(alpha: float) -> float:
    _check_alpha(alpha, lo=1.0)
    return -1.0 / (2.0 * math.cos(math.pi * alpha / 2.0))


def riesz_coeff_dalpha(alpha: float) -> float:
    _check_alpha(alpha, lo=1.0)
    c = math.cos(math.pi * alpha / 2.0)
    return -(math.pi / 4.0) * math.sin(math.pi * alpha / 2.0) / (c * c)


def _delta_matrix(weights: np.ndarray, N: int, p: int) -> np.ndarray:
    """Unscaled ``delta_p`` on all nodes; rows 0 and N are zero."""
    A = np.zeros((N + 1, N + 1))
    j = np.arange(1, N)[:, None]
    m = np.arange(N + 1)[None, :]
    # left sum: m = j - k + p, 0 <= k <= j
    k_left = j + p - m
    mask = (k_left >= 0) & (k_left <= j)
    A[1:N] += np.where(mask, weights[np.clip(k_left, 0, N + 1)], 0.0)
    # right sum: m = j + k - p, 0 <= k <= N - j
    k_right = m - j + p
    mask = (k_right >= 0) & (k_right <= N - j)
    A[1:N] += np.where(mask, weights[np.clip(k_right, 0, N + 1)], 0.0)
    return A


@lru_cache(maxsize=64)
def _gl_matrix_cached(alpha: float, N: int, dx: float, order: int) -> np.ndarray:
    w = gl_weights(alpha, N + 1)
    c = riesz_coeff(alpha)
    if order == 1:
        M = c * _delta_matrix(w, N, 1)
    else:
        M = c * (0.5 * alpha * _delta_matrix(w, N, 1) + (1.0 - 0.5 * alpha) * _delta_matrix(w, N, 0))
    M /= dx ** alpha
    M.setflags(write=False)
    return M


def gl_matrix(grid: Grid1D, alpha: float, order: int = 2) -> np.ndarray:
    """Dense matrix of the shifted GL Riesz operator on ``grid`` (read-only)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    _check_alpha(alpha, lo=1.0)
    return _gl_matrix_cached(float(alpha), int(grid.N), float(grid.dx), int(order))


def gl_matrix_dalpha(grid: Grid1D, alpha: float, order: int = 2) -> np.ndarray:
    """``d/d alpha`` of :func:`gl_matrix` (used when ``alpha`` is trained)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    N, h = grid.N, grid.dx
    w = gl_weights(alpha, N + 1)
    dw = gl_weights_dalpha(alpha, N + 1)
    c, dc = riesz_coeff(alpha), riesz_coeff_dalpha(alpha)
    D1, D0 = _delta_matrix(w, N, 1), _delta_matrix(w, N, 0)
    dD1, dD0 = _delta_matrix(dw, N, 1), _delta_matrix(dw, N, 0)
    if order == 1:
        B, dB = D1, dD1
    else:
        B = 0.5 * alpha * D1 + (1.0 - 0.5 * alpha) * D0
        dB = 0.5 * D1 - 0.5 * D0 + 0.5 * alpha * dD1 + (1.0 - 0.5 * alpha) * dD0
    scale = h ** -alpha
    # d/da [c B h^-a] = (dc B + c dB - c B ln h) h^-a
    return (dc * B + c * dB - c * math.log(h) * B) * scale


@dataclass(frozen=True)
class GLStencil:
    """Precomputed GL weights and Riesz coefficient for a grid/order pair."""

    grid: Grid1D
    alpha: float
    order: int = 2
    weights: np.ndarray = field(init=False, repr=False, compare=False)
    c_alpha: float = field(init=False)

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        object.__setattr__(self, "weights", gl_weights(self.alpha, self.grid.N))
        object.__setattr__(self, "c_alpha", riesz_coeff(self.alpha))

    @property
    def blend(self) -> tuple:
        return (0.5 * self.alpha, 1.0 - 0.5 * self.alpha) if self.order == 2 else (1.0, 0.0)

    def matrix(self) -> np.ndarray:
        return gl_matrix(self.grid, self.alpha, self.order)

    def apply(self, values) -> np.ndarray:
        return shifted_gl_apply(values, self.grid, self.alpha, self.order)


def _check_dirichlet(values: np.ndarray, axis_edges):
    for edge in axis_edges:
        if np.max(np.abs(edge), initial=0.0) > BOUNDARY_TOL:
            raise BoundaryValueError("field must vanish on the boundary (homogeneous Dirichlet)")


def shifted_gl_apply(values, grid: Grid1D, alpha: float, order: int = 2) -> np.ndarray:
    """Riesz derivative of a grid field at the interior nodes ``x_1..x_{N-1}``.

    ``values`` has the node axis last (extra leading axes are batched).
    """
    u = np.asarray(values, dtype=np.float64)
    if u.shape[-1] != grid.n_nodes:
        raise ValueError(f"field has {u.shape[-1]} nodes, grid has {grid.n_nodes}")
    _check_dirichlet(u, (u[..., 0], u[..., -1]))
    M = gl_matrix(grid, alpha, order)
    return (u @ M.T)[..., 1:-1]


def riesz_2d_matrix(grid1: Grid1D, grid2: Grid1D, alpha: float, beta: float, order: int = 2) -> np.ndarray:
    """Kronecker-sum operator on the row-major flattened 2D grid (x1 slow, x2 fast)."""
    L1 = gl_matrix(grid1, alpha, order)
    L2 = gl_matrix(grid2, beta, order)
    I1, I2 = np.eye(grid1.n_nodes), np.eye(grid2.n_nodes)
    M = np.kron(L1, I2) + np.kron(I1, L2)
    # rows of boundary nodes are zero
    b = np.zeros((grid1.n_nodes, grid2.n_nodes), dtype=bool)
    b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = True
    M[b.ravel()] = 0.0
    return M


def riesz_2d_apply(values, grid1: Grid1D, grid2: Grid1D, alpha: float, beta: float,
                   order: int = 2) -> np.ndarray:
    """``D^alpha_{|x1|} u + D^beta_{|x2|} u`` on interior nodes of a 2D grid.

    ``values`` has shape ``(..., n1, n2)``; axis ``-2`` is x1.
    """
    u = np.asarray(values, dtype=np.float64)
    if u.shape[-2:] != (grid1.n_nodes, grid2.n_nodes):
        raise ValueError(f"field shape {u.shape[-2:]} does not match the grid")
    _check_dirichlet(u, (u[..., 0, :], u[..., -1, :], u[..., :, 0], u[..., :, -1]))
    L1 = gl_matrix(grid1, alpha, order)
    L2 = gl_matrix(grid2, beta, order)
    out = np.einsum("ij,...jk->...ik", L1, u) + u @ L2.T
    return out[..., 1:-1, 1:-1]


@dataclass(frozen=True)
class AnalyticFracOracle:
    """Closed-form Riesz derivatives on (0, 1) for validation.

    ``kind="bump"``: ``u = x^3 (1-x)^3`` (exact Gamma series).
    ``kind="sine"``: ``u = sin(k pi x)``, ``k`` in {1, 2}, Taylor series truncated
    after ``M`` terms.
    """

    kind: str
    alpha: float
    k: int = 1
    M: int = 50

    def __post_init__(self):
        if self.kind not in ("bump", "sine"):
            raise UnsupportedBasis(f"unknown basis kind {self.kind!r}")
        if self.kind == "sine" and self.k not in (1, 2):
            raise UnsupportedBasis(f"sine family supports wavenumbers 1 and 2, got {self.k}")
        if self.M < 10:
            raise ValueError("Taylor truncation must keep at least 10 terms")
        _check_alpha(self.alpha, lo=1.0)

    def function(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "bump":
            return x ** 3 * (1.0 - x) ** 3
        return np.sin(self.k * np.pi * x)


def _rl_left_monomial_sum(x, coeffs, powers, alpha):
    # left RL derivative of sum_n c_n x^n: sum c_n Gamma(n+1)/Gamma(n+1-alpha) x^(n-alpha)
    out = np.zeros_like(x)
    for c, n in zip(coeffs, powers):
        out += c * math.gamma(n + 1) * rgamma(n + 1 - alpha) * x ** (n - alpha)
    return out


def _rl_left_sine(x, k, alpha, M):
    # sin(k pi x) = sum_m (-1)^(m-1) (k pi x)^(2m-1) / (2m-1)!
    out = np.zeros_like(x)
    kp = k * math.pi
    for m in range(1, M + 1):
        out += (-1) ** (m - 1) * kp ** (2 * m - 1) * rgamma(2 * m - alpha) * x ** (2 * m - 1 - alpha)
    return out


def analytic_riesz(oracle: AnalyticFracOracle, x) -> np.ndarray:
    """Riesz derivative of the oracle's function at points strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise ValueError("analytic Riesz series is singular at the endpoints; need 0 < x < 1")
    c = riesz_coeff(oracle.alpha)
    a = oracle.alpha
    if oracle.kind == "bump":
        coeffs, powers = (1.0, -3.0, 3.0, -1.0), (3, 4, 5, 6)
        # symmetric in x <-> 1-x: right derivative at x equals left derivative at 1-x
        total = _rl_left_monomial_sum(x, coeffs, powers, a) + _rl_left_monomial_sum(1.0 - x, coeffs, powers, a)
    else:
        sign = 1.0 if oracle.k % 2 == 1 else -1.0
        total = _rl_left_sine(x, oracle.k, a, oracle.M) + sign * _rl_left_sine(1.0 - x, oracle.k, a, oracle.M)
    return c * total
