"""Right-hand side ``F1(u_t) = b([B u(t - eta(u_t), .)](x))`` in Galerkin coordinates.

``B`` is the convolution-type operator ``[Bv](x) = int v(y) f(x - y) l(y) dy``
with a smooth profile ``f`` and a bump ``l`` supported inside the domain.
Its action is tabulated once on a Gauss-Legendre grid in ``x``: the
pointwise nonlinearity is applied there and the result projected back onto
the first ``m`` sine modes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .history import HistoryBuffer
from .spectral import SpectralBasis


class KernelResolutionError(ValueError):
    pass


# --------------------------------------------------------------------- kernel
@dataclass(frozen=True)
class KernelSpec:
    """Profile ``f`` and bump ``l`` of the non-local operator.

    profile: ``gaussian`` (``amplitude * exp(-z^2 / sigma^2)``) or ``constant`` (``value``)
    ell: ``bump`` (``(1 - ((y - center)/width)^2)^2`` on ``|y - center| < width``) or ``zero``
    quad_factor: x/y quadrature nodes per collocation node (>= 4)
    lb_modes: sine modes kept when expanding ``f(x - .) l(.)`` for ``L_B``
    """

    profile: str = "gaussian"
    amplitude: float = 1.0
    sigma: float = 1.0
    value: float = 1.0
    ell: str = "bump"
    center: float | None = None
    width: float | None = None
    quad_factor: int = 4
    lb_modes: int = 256

    def __post_init__(self):
        if self.profile not in ("gaussian", "constant"):
            raise ValueError(f"unknown kernel profile {self.profile!r}")
        if self.ell not in ("bump", "zero"):
            raise ValueError(f"unknown bump {self.ell!r}")
        if self.profile == "gaussian" and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.quad_factor < 4:
            raise ValueError("quadrature resolution must be at least 4 * n_grid")

    def f(self, z):
        z = np.asarray(z, dtype=float)
        if self.profile == "gaussian":
            return self.amplitude * np.exp(-(z / self.sigma) ** 2)
        return np.full_like(z, self.value)

    def df(self, z):
        z = np.asarray(z, dtype=float)
        if self.profile == "gaussian":
            return -2.0 * z / self.sigma ** 2 * self.f(z)
        return np.zeros_like(z)

    def support(self, length: float):
        c = length / 2 if self.center is None else self.center
        w = length / 3 if self.width is None else self.width
        return c, w

    def ell_fn(self, y, length: float):
        y = np.asarray(y, dtype=float)
        if self.ell == "zero":
            return np.zeros_like(y)
        c, w = self.support(length)
        s = (y - c) / w
        return np.where(np.abs(s) < 1.0, (1.0 - s * s) ** 2, 0.0)

    def dell_fn(self, y, length: float):
        y = np.asarray(y, dtype=float)
        if self.ell == "zero":
            return np.zeros_like(y)
        c, w = self.support(length)
        s = (y - c) / w
        return np.where(np.abs(s) < 1.0, -4.0 * s * (1.0 - s * s) / w, 0.0)

    def check_support(self, length: float):
        if self.ell == "zero":
            return
        c, w = self.support(length)
        if not (w > 0 and c - w > 0 and c + w < length):
            raise ValueError(
                f"bump support [{c - w:g}, {c + w:g}] must lie strictly inside (0, {length:g})"
            )


@dataclass(frozen=True, eq=False)
class NonlocalOperator:
    """Galerkin matrix of ``B`` plus its quadrature-grid tabulation.

    ``matrix[j, k] = <B e_k, e_j>``; ``grid_kernel[q, k] = [B e_k](x_q)``;
    ``projector[k, q] = w_q e_k(x_q)``.
    """

    matrix: np.ndarray
    L_B: float
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    grid_kernel: np.ndarray
    projector: np.ndarray
    spec: KernelSpec

    def apply_grid(self, v) -> np.ndarray:
        """``[Bv](x_q)`` for a coefficient vector (or stack) ``v``."""
        return np.asarray(v) @ self.grid_kernel.T

    def l2_norm(self, v) -> np.ndarray:
        """``||Bv||`` (full L^2 norm, not projected)."""
        z = self.apply_grid(v)
        return np.sqrt(np.sum(self.quad_weights * z * z, axis=-1))


def _tabulate(spec: KernelSpec, basis: SpectralBasis, nx: int, ny: int, modes: int):
    L = basis.length
    xq, wq, _ = basis.quadrature(nx)
    if spec.ell == "zero":
        return xq, wq, np.zeros((nx, modes))
    c, w = spec.support(L)
    y, wy = np.polynomial.legendre.leggauss(ny)
    y = c + w * y
    wy = w * wy
    ker = spec.f(xq[:, None] - y[None, :]) * (spec.ell_fn(y, L) * wy)[None, :]
    return xq, wq, ker @ basis.eval_table(y, modes).T


def assemble_B(spec: KernelSpec, basis: SpectralBasis, check: bool = True) -> NonlocalOperator:
    """Tabulate ``B`` by tensor Gauss-Legendre quadrature and compute ``L_B``.

    ``L_B^2 = int ||A^{1/2} f(x - .) l(.)||^2 dx`` with the inner norm taken
    from the sine expansion truncated at ``max(lb_modes, m)`` modes; the
    expansion coefficients are exactly the grid-kernel entries.
    """
    spec.check_support(basis.length)
    n = spec.quad_factor * basis.n_grid
    modes = max(spec.lb_modes, basis.m)
    # y nodes must resolve the highest expansion mode on the bump support
    ny = max(n, 2 * modes)
    xq, wq, K = _tabulate(spec, basis, n, ny, modes)
    Pq = (wq[None, :] * basis.quadrature(n)[2])
    Kq = np.ascontiguousarray(K[:, :basis.m])
    matrix = Pq @ Kq
    lam = (np.arange(1, modes + 1) * np.pi / basis.length) ** 2
    L_B = float(np.sqrt(np.sum(wq[:, None] * lam[None, :] * K * K)))
    if check:
        _, w2, K2 = _tabulate(spec, basis, 2 * n, 2 * ny, modes)
        m2 = (w2[None, :] * basis.quadrature(2 * n)[2]) @ K2[:, :basis.m]
        L_B2 = float(np.sqrt(np.sum(w2[:, None] * lam[None, :] * K2 * K2)))
        drift = max(np.max(np.abs(m2 - matrix)), abs(L_B2 - L_B) / max(1.0, L_B))
        if drift > 1e-6:
            raise KernelResolutionError(
                f"kernel quadrature under-resolved: doubling the resolution moved entries by {drift:.2e}"
            )
    for a in (matrix, Kq, Pq):
        a.setflags(write=False)
    return NonlocalOperator(matrix, L_B, xq, wq, Kq, np.ascontiguousarray(Pq), spec)


# ----------------------------------------------------------- nonlinearity b
_B_KINDS = {"nicholson": _kernels.B_NICHOLSON, "saturating_linear": _kernels.B_SATLIN,
            "constant": _kernels.B_CONSTANT}


@dataclass(frozen=True)
class PointwiseNonlinearity:
    """Bounded Lipschitz ``b: R -> R``.

    nicholson: ``p w exp(-|w|)`` (the birth function ``p w e^{-w}`` extended
    symmetrically so that it stays bounded for ``w < 0``);
    saturating_linear: ``slope * clip(w, -level, level)``; constant: ``value``.
    """

    kind: str = "nicholson"
    p: float = 2.0
    slope: float = 1.0
    level: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in _B_KINDS:
            raise ValueError(f"unknown nonlinearity {self.kind!r}; expected one of {sorted(_B_KINDS)}")
        if self.kind == "nicholson" and not self.p > 0:
            raise ValueError("nicholson parameter p must be positive")

    @property
    def code(self) -> int:
        return _B_KINDS[self.kind]

    @property
    def params(self) -> np.ndarray:
        if self.kind == "nicholson":
            return np.array([self.p, 0.0, 0.0])
        if self.kind == "saturating_linear":
            return np.array([self.slope, self.level, 0.0])
        return np.array([self.value, 0.0, 0.0])

    @property
    def M_b(self) -> float:
        if self.kind == "nicholson":
            return self.p / math.e
        if self.kind == "saturating_linear":
            return abs(self.slope) * self.level
        return abs(self.value)

    @property
    def L_b(self) -> float:
        if self.kind == "nicholson":
            return self.p
        if self.kind == "saturating_linear":
            return abs(self.slope)
        return 0.0

    def __call__(self, w):
        return _kernels.backend.apply_b(np.asarray(w, dtype=float), self.code, self.params)


# ----------------------------------------------------------- delay eta
@dataclass(frozen=True)
class DelayFunctional:
    """State-dependent delay ``eta: H -> [0, r]``.

    constant: ``eta = tau0``.
    history_energy: ``eta(phi) = r s(kappa * (int_{-r}^0 ||A^{-1/2} phi||^2)^{1/2})``
    with ``s(z) = z / (1 + z)``.  Since ``0 < s' <= 1`` and the inner map is
    the L^2(-r, 0; D(A^{-1/2})) norm (1-Lipschitz by the triangle
    inequality), ``|eta(phi) - eta(psi)| <= r kappa (int ||A^{-1/2}(phi-psi)||^2)^{1/2}``:
    the Lipschitz hypothesis holds with ``L_eta = r kappa`` and ``q = 0``.
    """

    kind: str = "history_energy"
    r: float = 1.0
    tau0: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "history_energy"):
            raise ValueError(f"unknown delay functional {self.kind!r}")
        if not self.r > 0:
            raise ValueError("maximal delay r must be positive")
        if self.kind == "constant" and not 0.0 <= self.tau0 <= self.r:
            raise ValueError(f"constant delay tau0={self.tau0} must lie in [0, r={self.r}]")
        if self.kind == "history_energy" and not self.kappa > 0:
            raise ValueError("kappa must be positive")

    @property
    def code(self) -> int:
        return _kernels.ETA_CONSTANT if self.kind == "constant" else _kernels.ETA_HISTORY

    @property
    def params(self) -> np.ndarray:
        return np.array([self.tau0, self.kappa])

    @property
    def L_eta(self) -> float:
        return 0.0 if self.kind == "constant" else self.r * self.kappa

    @property
    def q(self) -> float:
        return 0.0


def buffer_arrays(h: HistoryBuffer, backend=None):
    """Contiguous copies of a buffer plus its running energy integral."""
    be = backend or _kernels.backend
    times = np.ascontiguousarray(h.times, dtype=float)
    Y = np.ascontiguousarray(h.values)
    DL = np.ascontiguousarray(h.dleft)
    DR = np.ascontiguousarray(h.dright)
    inv_lam = np.ascontiguousarray(1.0 / h.eigenvalues)
    P = np.zeros(times.size)
    be.prefix_energy(times, Y, DL, DR, inv_lam, P, 0, times.size - 1)
    return times, Y, DL, DR, P, inv_lam


def _check_window(eta: DelayFunctional, h: HistoryBuffer):
    if abs(h.r - eta.r) > 1e-9 * max(1.0, eta.r):
        raise ValueError(f"history window r={h.r} does not match the delay bound r={eta.r}")


def eval_eta(eta: DelayFunctional, h: HistoryBuffer, backend=None) -> float:
    _check_window(eta, h)
    be = backend or _kernels.backend
    times, Y, DL, DR, P, inv_lam = buffer_arrays(h, be)
    return float(be.delay_at(times, Y, DL, DR, P, inv_lam, times.size - 1,
                             eta.code, eta.params, eta.r))


def history_energy(h: HistoryBuffer) -> float:
    """``int ||A^{-1/2} phi(theta)||^2 dtheta`` over the window."""
    times, Y, DL, DR, P, _ = buffer_arrays(h)
    return float(P[-1])


# ------------------------------------------------------------- assembled F1
@dataclass(frozen=True, eq=False)
class SddRightHandSide:
    basis: SpectralBasis
    B: NonlocalOperator
    b: PointwiseNonlinearity
    eta: DelayFunctional
    d: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("damping d must be nonnegative")
        if self.B.grid_kernel.shape[1] != self.basis.m:
            raise ValueError("operator B was assembled for a different basis order")

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def r(self) -> float:
        return self.eta.r

    @property
    def linear_rates(self) -> np.ndarray:
        """``lambda_k + d``."""
        return self.basis.eigenvalues + self.d

    def F1(self, h: HistoryBuffer, backend=None) -> np.ndarray:
        return eval_F1(self, h, backend)

    def lipschitz_F1(self, ell: float) -> float:
        return lipschitz_F1(self, ell)

    def constants(self) -> dict:
        return {"L_B": self.B.L_B, "L_b": self.b.L_b, "M_b": self.b.M_b,
                "L_eta": self.eta.L_eta, "q": self.eta.q, "r": self.r, "d": self.d,
                "lambda_1": float(self.basis.eigenvalues[0]),
                "omega": self.basis.domain.measure}


def eval_F1(rhs: SddRightHandSide, h: HistoryBuffer, backend=None) -> np.ndarray:
    """``P_m F1(phi)`` for the history segment ``h``."""
    _check_window(rhs.eta, h)
    if h.m != rhs.m:
        raise ValueError(f"history has {h.m} modes, right-hand side has {rhs.m}")
    be = backend or _kernels.backend
    times, Y, DL, DR, P, inv_lam = buffer_arrays(h, be)
    out = np.empty(rhs.m)
    status, _ = be.rhs_at(times, Y, DL, DR, P, inv_lam, times.size - 1, rhs.B.grid_kernel,
                          rhs.B.projector, rhs.b.code, rhs.b.params, rhs.eta.code,
                          rhs.eta.params, rhs.eta.r, out)
    if status != _kernels.OK:
        from .history import WindowError
        raise WindowError("delayed time fell outside the history window")
    return out


def lipschitz_F1(rhs: SddRightHandSide, ell: float) -> float:
    """``L_b L_B sqrt(2) max{1, ell L_eta max{1, sqrt(r)}}``."""
    if ell < 0:
        raise ValueError("ell is a Lipschitz constant and must be nonnegative")
    return lipschitz_constant(rhs.b.L_b, rhs.B.L_B, rhs.eta.L_eta, rhs.r, ell)


def lipschitz_constant(L_b: float, L_B: float, L_eta: float, r: float, ell: float) -> float:
    return L_b * L_B * math.sqrt(2.0) * max(1.0, ell * L_eta * max(1.0, math.sqrt(r)))
