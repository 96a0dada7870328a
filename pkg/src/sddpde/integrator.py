"""Fixed-step exponential integrator for the Galerkin delay system.

Per mode ``g_k' = -(lambda_k + d) g_k + <F1(u_t), e_k>``.  The linear part is
integrated exactly; the forcing is interpolated linearly across a step
(exponential trapezoidal rule, ``scheme=2``) or frozen at the left end
(exponential Euler, ``scheme=1``).  Both are exact for constant forcing.  The
end-of-step forcing depends on the new node through the delay and, when the
delayed time falls inside the current step, through the dense output itself,
so it is found by fixed-point iteration started from a linear extrapolation.

Every accepted node stores the ODE-consistent derivative, so the dense
output is a C^1 piecewise cubic Hermite function on ``[0, T]``.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .history import HistoryBuffer, InitialFunction, WindowError, hermite_basis, hermite_basis_deriv, write_csv, read_csv
from .sdd_rhs import SddRightHandSide, buffer_arrays, eval_F1


class SolverError(RuntimeError):
    """A step failed; ``t`` is the time the failing step started from."""

    def __init__(self, msg: str, t: float):
        super().__init__(f"{msg} (at t={t:.12g})")
        self.t = t


class FixedPointError(SolverError):
    def __init__(self, t: float, trace):
        self.trace = np.asarray(trace)
        msg = ("fixed-point correction did not converge; residual trace "
               + ", ".join(f"{x:.3e}" for x in self.trace)
               + "; the step size is too large for this delay regime")
        super().__init__(msg, t)


class StepWindowError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    T: float = 10.0
    fp_tol: float = 1e-10
    fp_max_iter: int = 50
    m: int | None = None
    scheme: int = 2
    backend: str | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= 0:
            raise ValueError("T must be nonnegative")
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if int(self.fp_max_iter) != self.fp_max_iter or self.fp_max_iter < 1:
            raise ValueError("fp_max_iter must be a positive integer")
        if self.scheme not in (1, 2):
            raise ValueError("scheme must be 1 (exponential Euler) or 2 (exponential trapezoidal)")

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T={self.T} is not a whole number of steps dt={self.dt}")
        return n

    def validate(self, rhs: SddRightHandSide):
        eta = rhs.eta
        if self.dt > eta.r and not (eta.kind == "constant" and eta.tau0 >= self.dt):
            raise ValueError(
                f"dt={self.dt} exceeds the maximal delay r={eta.r}; only a constant delay "
                "tau0 >= dt permits that"
            )
        if self.m is not None and self.m != rhs.m:
            raise ValueError(f"config basis order m={self.m} differs from the right-hand side m={rhs.m}")
        self.n_steps


def phi_functions(z):
    """``phi1(z) = (1 - e^{-z})/z`` and ``phi2(z) = (z - 1 + e^{-z})/z^2``, stable near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 0.5
    zs = np.where(small, z, 0.0)
    zl = np.where(small, 1.0, z)
    e = np.exp(-zl)
    p1 = (1.0 - e) / zl
    p2 = (zl - 1.0 + e) / (zl * zl)
    # Taylor series sum_j (-z)^j / (j + 1)! and / (j + 2)!
    s1 = np.zeros_like(z)
    s2 = np.zeros_like(z)
    term = np.ones_like(z)
    for j in range(20):
        s1 += term / math.factorial(j + 1)
        s2 += term / math.factorial(j + 2)
        term = term * (-zs)
    return np.where(small, s1, p1), np.where(small, s2, p2)


def _hermite_eval(times, Y, DL, DR, s, deriv=False, side="right"):
    """Evaluate the piecewise Hermite function (arrays) at absolute times ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    n = times.size
    j = np.clip(np.searchsorted(times, s, side=side) - 1, 0, n - 2)
    hh = times[j + 1] - times[j]
    u = ((s - times[j]) / hh)[:, None]
    if deriv:
        b = hermite_basis_deriv(u)
        return (b[0] * Y[j] / hh[:, None] + b[1] * DR[j] + b[2] * Y[j + 1] / hh[:, None]
                + b[3] * DL[j + 1])
    b = hermite_basis(u)
    hh = hh[:, None]
    return b[0] * Y[j] + b[1] * hh * DR[j] + b[2] * Y[j + 1] + b[3] * hh * DL[j + 1]


def window_from_arrays(times, Y, DL, DR, eigenvalues, r: float, t: float) -> HistoryBuffer:
    """The segment ``u_t`` cut exactly out of a node array covering ``[t - r, t]``."""
    a = t - r
    tol = 1e-12 * max(1.0, abs(t), r)
    if a < times[0] - tol or t > times[-1] + tol:
        raise WindowError(f"[{a}, {t}] not covered by stored nodes [{times[0]}, {times[-1]}]")
    i0 = int(np.searchsorted(times, a - tol, side="left"))
    i1 = int(np.searchsorted(times, t + tol, side="right"))
    idx = np.arange(i0, i1)
    inner = idx[(times[idx] > a + tol) & (times[idx] < t - tol)]
    tt = np.concatenate([[a], times[inner], [t]])
    vals = np.vstack([_hermite_eval(times, Y, DL, DR, a), Y[inner], _hermite_eval(times, Y, DL, DR, t)])
    dl = np.vstack([_hermite_eval(times, Y, DL, DR, a, True, "right"), DL[inner],
                    _hermite_eval(times, Y, DL, DR, t, True, "left")])
    dr = np.vstack([dl[0], DR[inner], dl[-1]])
    # use stored node data where a or t coincide with a node
    for pos, x in ((0, a), (-1, t)):
        hit = np.flatnonzero(np.abs(times - x) <= tol)
        if hit.size:
            i = hit[0]
            vals[pos], dl[pos], dr[pos] = Y[i], DL[i], DR[i]
            tt[pos] = x
    return HistoryBuffer(tt, vals, dl, dr, r, eigenvalues)


class Trajectory:
    """Nodes of a computed solution, including the initial history.

    ``times[:n_nodes]`` etc. are the stored nodes; node ``i0`` is the start
    time.  ``snapshot(t)`` returns the state ``u_t`` (the semiflow applied to
    the initial history).
    """

    def __init__(self, initial: HistoryBuffer, rhs: SddRightHandSide, cfg: SolverConfig,
                 meta: dict | None = None):
        cfg.validate(rhs)
        if initial.m != rhs.m:
            raise ValueError(f"initial history has {initial.m} modes, right-hand side has {rhs.m}")
        if abs(initial.r - rhs.r) > 1e-9 * max(1.0, rhs.r):
            raise ValueError("initial history window differs from the maximal delay r")
        self.rhs = rhs
        self.cfg = cfg
        self.basis = rhs.basis
        self.be = _kernels.get_backend(cfg.backend)
        self.meta = dict(meta or {})
        self.t0 = initial.anchor_time
        n_steps = cfg.n_steps
        n0 = initial.times.size
        cap = n0 + n_steps
        m = rhs.m
        self.times = np.zeros(cap)
        self.Y = np.zeros((cap, m))
        self.DL = np.zeros((cap, m))
        self.DR = np.zeros((cap, m))
        self.P = np.zeros(cap)
        self.times[:n0] = initial.times
        self.Y[:n0] = initial.values
        self.DL[:n0] = initial.dleft
        self.DR[:n0] = initial.dright
        self.inv_lam = np.ascontiguousarray(1.0 / rhs.basis.eigenvalues)
        self.be.prefix_energy(self.times, self.Y, self.DL, self.DR, self.inv_lam, self.P, 0, n0 - 1)
        self.i0 = n0 - 1
        self.i_last = n0 - 1
        self.steps_done = 0
        self.n_steps = n_steps
        self.iters = np.zeros(max(n_steps, 1), dtype=np.int64)
        self.wall_time = 0.0
        self.c = np.ascontiguousarray(rhs.linear_rates)
        F0 = eval_F1(rhs, initial, self.be)
        self.F_last = F0.copy()
        self.F_prev = F0.copy()
        # the solution leaves t0 with the ODE derivative
        self.DR[self.i0] = -self.c * initial.values[-1] + F0
        self.left_derivative_at_start = initial.dleft[-1].copy()
        z = self.c * cfg.dt
        p1, p2 = phi_functions(z)
        self.E1 = np.exp(-z)
        self.PHI1 = cfg.dt * p1
        self.PHI2 = cfg.dt * p2

    # ------------------------------------------------------------- stepping
    @property
    def t(self) -> float:
        return self.t0 + self.steps_done * self.cfg.dt

    @property
    def n_nodes(self) -> int:
        return self.i_last + 1

    def advance(self, n: int | None = None) -> "Trajectory":
        n = self.n_steps - self.steps_done if n is None else n
        if n < 0 or self.steps_done + n > self.n_steps:
            raise ValueError("cannot advance beyond the configured final time")
        if n == 0:
            return self
        cfg, rhs = self.cfg, self.rhs
        trace = np.zeros(cfg.fp_max_iter)
        start = time.perf_counter()
        status, i_last, done = self.be.integrate(
            self.times, self.Y, self.DL, self.DR, self.P, self.i_last, self.t0, self.steps_done,
            self.F_last, self.F_prev, self.c, self.inv_lam, self.E1, self.PHI1, self.PHI2,
            rhs.B.grid_kernel, rhs.B.projector, rhs.b.code, rhs.b.params, rhs.eta.code,
            rhs.eta.params, rhs.eta.r, cfg.dt, cfg.fp_tol, int(cfg.fp_max_iter), int(n),
            int(cfg.scheme), self.iters, trace)
        self.wall_time += time.perf_counter() - start
        self.i_last = int(i_last)
        self.steps_done += int(done)
        if status == _kernels.FP_FAIL:
            raise FixedPointError(self.t, trace)
        if status == _kernels.WINDOW_FAIL:
            raise StepWindowError("delayed time fell outside the stored history", self.t)
        return self

    # ------------------------------------------------------------- access
    def node_slice(self, include_history: bool = False) -> slice:
        return slice(0 if include_history else self.i0, self.i_last + 1)

    @property
    def node_times(self) -> np.ndarray:
        return self.times[self.i0:self.i_last + 1]

    @property
    def states(self) -> np.ndarray:
        return self.Y[self.i0:self.i_last + 1]

    @property
    def derivatives(self) -> np.ndarray:
        """Right derivatives at the solution nodes (equal to the left ones after ``t0``)."""
        return self.DR[self.i0:self.i_last + 1]

    @property
    def iteration_counts(self) -> np.ndarray:
        return self.iters[:self.steps_done]

    def evaluate(self, s, deriv: bool = False, side: str = "right") -> np.ndarray:
        """Dense output at absolute times ``s`` (rows), history included."""
        sl = self.node_slice(True)
        return _hermite_eval(self.times[sl], self.Y[sl], self.DL[sl], self.DR[sl], s, deriv, side)

    def dense_samples(self, a: float | None = None, per_segment: int = 8):
        """``(s, values, derivatives)`` at interior points of every segment plus
        both one-sided derivatives at the nodes, restricted to ``s >= a``."""
        sl = self.node_slice(True)
        t = self.times[sl]
        u = np.linspace(0.0, 1.0, per_segment + 2)[1:-1]
        s_int = (t[:-1, None] + u[None, :] * np.diff(t)[:, None]).ravel()
        s = np.concatenate([s_int, t, t])
        v = np.concatenate([self.evaluate(s_int), self.Y[sl], self.Y[sl]])
        d = np.concatenate([self.evaluate(s_int, True), self.DL[sl], self.DR[sl]])
        if a is not None:
            keep = s >= a - 1e-12 * max(1.0, abs(a))
            s, v, d = s[keep], v[keep], d[keep]
        order = np.argsort(s, kind="stable")
        return s[order], v[order], d[order]

    def state(self, t: float) -> np.ndarray:
        s = self.node_slice(True)
        return _hermite_eval(self.times[s], self.Y[s], self.DL[s], self.DR[s], t)[0]

    def derivative(self, t: float, side: str = "left") -> np.ndarray:
        s = self.node_slice(True)
        return _hermite_eval(self.times[s], self.Y[s], self.DL[s], self.DR[s], t, True, side)[0]

    def snapshot(self, t: float) -> HistoryBuffer:
        s = self.node_slice(True)
        tol = 1e-12 * max(1.0, abs(t))
        if t < self.t0 - tol or t > self.t + tol:
            raise WindowError(f"t={t} outside the computed range [{self.t0}, {self.t}]")
        return window_from_arrays(self.times[s], self.Y[s], self.DL[s], self.DR[s],
                                  self.basis.eigenvalues, self.rhs.r, t)

    def final(self) -> HistoryBuffer:
        return self.snapshot(self.t)

    def energy_integral(self) -> np.ndarray:
        """Running ``int_{t0}^{t_i} ||A^{-1/2} u||^2`` at the solution nodes."""
        return self.P[self.i0:self.i_last + 1] - self.P[self.i0]

    # ------------------------------------------------------------- output
    def to_csv(self, path=None):
        s = self.node_slice(True)
        meta = {"kind": "trajectory", "r": self.rhs.r, "t0": self.t0, "dt": self.cfg.dt,
                "m": self.rhs.m}
        return write_csv(path, self.times[s], self.Y[s], self.DL[s], self.DR[s],
                         self.basis.eigenvalues, meta)

    def manifest(self, extra: dict | None = None) -> dict:
        out = {
            "t0": self.t0,
            "t_end": self.t,
            "steps": self.steps_done,
            "config": {k: v for k, v in asdict(self.cfg).items()},
            "backend": self.be.NAME,
            "wall_time_s": self.wall_time,
            "fixed_point_iterations": {
                "max": int(self.iteration_counts.max()) if self.steps_done else 0,
                "mean": float(self.iteration_counts.mean()) if self.steps_done else 0.0,
            },
            "constants": self.rhs.constants(),
        }
        out.update(self.meta)
        if extra:
            out.update(extra)
        return out


def load_trajectory_csv(path):
    """``(times, values, dleft, dright, eigenvalues, meta)`` from a trajectory CSV."""
    return read_csv(path)


def snapshot_from_csv(path, t: float | None = None) -> HistoryBuffer:
    times, Y, DL, DR, lam, meta = read_csv(path)
    r = float(meta["r"])
    t = float(times[-1]) if t is None else t
    return window_from_arrays(times, Y, DL, DR, lam, r, t)


# --------------------------------------------------------------- operations
def step(traj: Trajectory, rhs: SddRightHandSide | None = None, cfg: SolverConfig | None = None) -> Trajectory:
    """Advance ``traj`` by one step (in place; returned for chaining)."""
    if rhs is not None and rhs is not traj.rhs:
        raise ValueError("trajectory was started with a different right-hand side")
    if cfg is not None and cfg != traj.cfg:
        raise ValueError("trajectory was started with a different solver config")
    return traj.advance(1)


def solve(initial: HistoryBuffer, rhs: SddRightHandSide, cfg: SolverConfig,
          meta: dict | None = None) -> Trajectory:
    traj = Trajectory(initial, rhs, cfg, meta)
    traj.meta.setdefault("initial_manifold_residual", check_manifold(initial, rhs))
    return traj.advance()


def manifold_defect(h: HistoryBuffer, rhs: SddRightHandSide, backend=None) -> np.ndarray:
    """``phi'(0) + A phi(0) + d phi(0) - F1(phi)`` (left derivative at 0)."""
    F = eval_F1(rhs, h, backend)
    return h.dleft[-1] + rhs.linear_rates * h.values[-1] - F


def check_manifold(h: HistoryBuffer, rhs: SddRightHandSide, backend=None) -> float:
    v = manifold_defect(h, rhs, backend)
    return float(np.sqrt(np.sum(v * v / rhs.basis.eigenvalues)))


def blend_width(r: float) -> float:
    return min(r / 8.0, 0.1)


def make_manifold_initial(shape: InitialFunction | HistoryBuffer, rhs: SddRightHandSide,
                          basis=None, n_segments: int = 64, max_iter: int = 50,
                          tol: float = 1e-14) -> HistoryBuffer:
    """Modify the end derivative of ``shape`` so that the history lies on the solution manifold.

    The correction ``Delta`` is added as ``delta * Delta * (s^3 - s^2)`` with
    ``s = (theta + delta)/delta`` on ``[-delta, 0]``.  That cubic has zero
    value and slope at ``s = 0``, zero value at ``s = 1`` and unit slope at
    ``s = 1``, so the result stays C^1 and only the end derivative moves.
    ``F1`` sees the modified history, hence the fixed-point loop.
    """
    basis = basis or rhs.basis
    r = rhs.r
    delta = blend_width(r)
    if delta > r:
        raise ValueError("blend width exceeds the window")
    if isinstance(shape, HistoryBuffer):
        base = shape
        if abs(base.r - r) > 1e-9 * max(1.0, r):
            raise ValueError("history window differs from the maximal delay r")
        if not np.allclose(base.dleft[1:-1], base.dright[1:-1], rtol=1e-12, atol=1e-12):
            raise ValueError("initial shape is not C^1 (derivative jumps at interior nodes)")
        value = lambda th: base.at_theta(th)
        deriv = lambda th: base.eval_deriv(th + base.anchor_time, "left")
        nodes = base.thetas
        anchor = base.anchor_time
    else:
        if shape.m != basis.m or abs(shape.r - r) > 1e-9 * max(1.0, r):
            raise ValueError("initial shape does not match the basis order or delay bound")
        value, deriv = shape.value, shape.deriv
        nodes = np.linspace(-r, 0.0, n_segments + 1)
        anchor = 0.0
    nodes = np.union1d(np.asarray(nodes, dtype=float), [-delta])
    nodes = nodes[np.concatenate([[True], np.diff(nodes) > 1e-12])]
    nodes[0], nodes[-1] = -r, 0.0

    def render(corr):
        def val(th):
            s = (th + delta) / delta
            out = np.asarray(value(th), dtype=float)
            if s > 0:
                out = out + delta * corr * (s ** 3 - s ** 2)
            return out

        def der(th):
            s = (th + delta) / delta
            out = np.asarray(deriv(th), dtype=float)
            if s > 0:
                out = out + corr * (3 * s ** 2 - 2 * s)
            return out
        return HistoryBuffer.from_function(val, der, r, basis.eigenvalues, nodes=nodes,
                                           anchor_time=anchor)

    corr = np.zeros(basis.m)
    h = render(corr)
    for _ in range(max_iter):
        defect = manifold_defect(h, rhs)
        if np.sqrt(np.sum(defect * defect / basis.eigenvalues)) <= tol:
            return h
        corr = corr - defect
        h = render(corr)
    return h
