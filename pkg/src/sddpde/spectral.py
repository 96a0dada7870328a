"""Dirichlet Laplacian on an interval: sine eigenbasis, fractional powers, transforms.

The operator ``A = -d^2/dx^2`` on ``(0, L)`` with homogeneous Dirichlet
conditions has eigenpairs ``lambda_k = (k pi / L)^2`` and
``e_k(x) = sqrt(2/L) sin(k pi x / L)``.  Coefficient vectors hold the
Galerkin coordinates ``g_k`` of ``u = sum_k g_k e_k``.

Two grids are used:

* the *collocation grid*: ``n_grid`` equispaced interior nodes with uniform
  trapezoid weights.  For the sine basis this is a DST-I, so the discrete
  inner product reproduces ``delta_jk`` exactly for ``j, k <= n_grid``.
* a *quadrature grid* (Gauss-Legendre on ``[0, L]``) used wherever a
  function that does not vanish at the boundary has to be projected, e.g.
  the pointwise nonlinearity.  Trapezoid projection is only second order
  for such integrands.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    length: float = np.pi
    n_grid: int = 128

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"domain length must be positive, got {self.length}")
        if int(self.n_grid) != self.n_grid or self.n_grid < 2:
            raise ValueError(f"n_grid must be an integer >= 2, got {self.n_grid}")

    @property
    def measure(self) -> float:
        """|Omega|."""
        return float(self.length)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    domain: DomainSpec
    m: int
    eigenvalues: np.ndarray
    nodes: np.ndarray
    node_matrix: np.ndarray  # (m, n_grid): e_k(x_i)
    quad_weights: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def length(self) -> float:
        return self.domain.length

    @property
    def n_grid(self) -> int:
        return self.domain.n_grid

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(1, self.m + 1) * np.pi / self.length

    def eigenfunction(self, k: int, x) -> np.ndarray:
        """Evaluate ``e_k`` (1-based ``k``) at points ``x``."""
        x = np.asarray(x, dtype=float)
        return np.sqrt(2.0 / self.length) * np.sin(k * np.pi * x / self.length)

    def eval_table(self, x, modes: int | None = None) -> np.ndarray:
        """Table ``E[k, i] = e_{k+1}(x_i)`` for the first ``modes`` modes."""
        modes = self.m if modes is None else modes
        x = np.asarray(x, dtype=float)
        k = np.arange(1, modes + 1)[:, None]
        return np.sqrt(2.0 / self.length) * np.sin(k * np.pi * x[None, :] / self.length)

    def eval_deriv_table(self, x, modes: int | None = None) -> np.ndarray:
        modes = self.m if modes is None else modes
        x = np.asarray(x, dtype=float)
        k = np.arange(1, modes + 1)[:, None]
        kk = k * np.pi / self.length
        return np.sqrt(2.0 / self.length) * kk * np.cos(kk * x[None, :])

    def powers(self, alpha: float) -> np.ndarray:
        key = ("pow", float(alpha))
        if key not in self._cache:
            self._cache[key] = self.eigenvalues ** alpha
        return self._cache[key]

    def quadrature(self, n: int):
        """Gauss-Legendre nodes/weights on ``[0, L]`` and the table ``e_k(x_q)``."""
        key = ("gl", int(n))
        if key not in self._cache:
            x, w = np.polynomial.legendre.leggauss(int(n))
            x = 0.5 * self.length * (x + 1.0)
            w = 0.5 * self.length * w
            self._cache[key] = (x, w, self.eval_table(x))
        return self._cache[key]

    def unit(self, k: int) -> np.ndarray:
        v = np.zeros(self.m)
        v[k - 1] = 1.0
        return v


def build_basis(domain: DomainSpec, m: int) -> SpectralBasis:
    if int(m) != m or m < 1:
        raise ValueError(f"basis order must be a positive integer, got {m}")
    m = int(m)
    if domain.n_grid < 2 * m:
        raise ValueError(
            f"anti-aliasing rule violated: n_grid={domain.n_grid} < 2*m={2 * m}"
        )
    L = float(domain.length)
    n = int(domain.n_grid)
    k = np.arange(1, m + 1)
    eigenvalues = (k * np.pi / L) ** 2
    nodes = L * np.arange(1, n + 1) / (n + 1)
    node_matrix = np.sqrt(2.0 / L) * np.sin(np.outer(k, nodes) * np.pi / L)
    quad_weights = np.full(n, L / (n + 1))
    for arr in (eigenvalues, nodes, node_matrix, quad_weights):
        arr.setflags(write=False)
    return SpectralBasis(domain, m, eigenvalues, nodes, node_matrix, quad_weights)


def _check(basis: SpectralBasis, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != basis.m:
        raise ShapeError(f"coefficient vector has length {v.shape[-1]}, basis order is {basis.m}")
    return v


def apply_power(basis: SpectralBasis, alpha: float, v) -> np.ndarray:
    """Return ``A^alpha v``, i.e. ``(lambda_k^alpha g_k)_k``.

    Works on a single vector or on a stack of vectors (last axis = modes).
    """
    if not -1.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [-1, 1], got {alpha}")
    v = _check(basis, v)
    return basis.powers(alpha) * v


def power_norm(basis: SpectralBasis, alpha: float, v) -> np.ndarray:
    """``||A^alpha v||`` along the last axis."""
    v = _check(basis, v)
    return np.sqrt(np.sum(basis.powers(2.0 * alpha) * v * v, axis=-1))


def to_grid(basis: SpectralBasis, v) -> np.ndarray:
    v = _check(basis, v)
    return v @ basis.node_matrix


def from_grid(basis: SpectralBasis, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != basis.n_grid:
        raise ShapeError(f"grid vector has length {w.shape[-1]}, n_grid is {basis.n_grid}")
    return (w * basis.quad_weights) @ basis.node_matrix.T


def pad(v, m: int) -> np.ndarray:
    """Zero-pad (or truncate) coefficient vectors to ``m`` modes."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (m,))
    k = min(m, v.shape[-1])
    out[..., :k] = v[..., :k]
    return out
