"""Dense-output history segments ``u_t(theta) = u(t + theta)``, ``theta in [-r, 0]``.

A :class:`HistoryBuffer` stores a piecewise cubic Hermite function of time
with values in coefficient space.  Nodes carry one value and two one-sided
derivatives (``dleft``/``dright``); a derivative jump is only expected at a
point where non-compatible initial data meets the solution, or in
hand-built piecewise examples.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# sampling density for suprema over theta
SAMPLES_PER_SEGMENT = 32


class WindowError(ValueError):
    """Requested time lies outside the stored history window."""


def hermite_basis(u):
    u2 = u * u
    u3 = u2 * u
    return 2 * u3 - 3 * u2 + 1, u3 - 2 * u2 + u, -2 * u3 + 3 * u2, u3 - u2


def hermite_basis_deriv(u):
    """d/du of the four Hermite basis cubics."""
    u2 = u * u
    return 6 * u2 - 6 * u, 3 * u2 - 4 * u + 1, -6 * u2 + 6 * u, 3 * u2 - 2 * u


@dataclass(frozen=True, eq=False)
class HistoryBuffer:
    """Piecewise cubic Hermite segment over ``[anchor_time - r, anchor_time]``.

    ``times`` are absolute times; ``values``, ``dleft`` and ``dright`` have
    shape ``(n_nodes, m)``.  ``eigenvalues`` are the ``lambda_k`` of the
    basis the coefficients live in (needed by every norm).
    """

    times: np.ndarray
    values: np.ndarray
    dleft: np.ndarray
    dright: np.ndarray
    r: float
    eigenvalues: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a history buffer needs at least two nodes")
        if np.any(np.diff(t) <= 0):
            raise ValueError("history nodes must be strictly increasing (no gaps/overlaps)")
        span = t[-1] - t[0]
        if abs(span - self.r) > 1e-9 * max(1.0, self.r):
            raise ValueError(f"history nodes span {span!r}, expected window length r={self.r!r}")
        m = np.asarray(self.eigenvalues).size
        arrs = {}
        for name in ("values", "dleft", "dright"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (t.size, m):
                raise ValueError(f"{name} has shape {a.shape}, expected {(t.size, m)}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")
            arrs[name] = a
        # one-sided derivatives pointing out of the window carry no information
        arrs["dleft"][0] = arrs["dright"][0]
        arrs["dright"][-1] = arrs["dleft"][-1]
        for name, a in arrs.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        lam = np.asarray(self.eigenvalues, dtype=float).copy()
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "r", float(self.r))

    # ------------------------------------------------------------------ basics
    @property
    def m(self) -> int:
        return self.eigenvalues.size

    @property
    def anchor_time(self) -> float:
        return float(self.times[-1])

    @property
    def thetas(self) -> np.ndarray:
        return self.times - self.times[-1]

    @property
    def n_segments(self) -> int:
        return self.times.size - 1

    def segments(self):
        """Yield ``(t_start, t_end, y_start, y_end, d_start, d_end)`` per piece."""
        for j in range(self.n_segments):
            yield (self.times[j], self.times[j + 1], self.values[j], self.values[j + 1],
                   self.dright[j], self.dleft[j + 1])

    def _tol(self) -> float:
        return 1e-12 * max(1.0, abs(self.anchor_time), self.r)

    def _locate(self, s, side="right"):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lo, hi = self.times[0], self.times[-1]
        tol = self._tol()
        if np.any(s < lo - tol) or np.any(s > hi + tol):
            bad = s[(s < lo - tol) | (s > hi + tol)][0]
            raise WindowError(f"time {bad!r} outside history window [{lo!r}, {hi!r}]")
        s = np.clip(s, lo, hi)
        j = np.searchsorted(self.times, s, side=side) - 1
        j = np.clip(j, 0, self.n_segments - 1)
        t0 = self.times[j]
        hh = self.times[j + 1] - t0
        u = (s - t0) / hh
        return j, u, hh

    def _cubic(self, j, u, hh, deriv=False):
        y0, y1 = self.values[j], self.values[j + 1]
        d0, d1 = self.dright[j], self.dleft[j + 1]
        hh = hh[:, None]
        u = u[:, None]
        if not deriv:
            a, b, c, d = hermite_basis(u)
            return a * y0 + b * hh * d0 + c * y1 + d * hh * d1
        a, b, c, d = hermite_basis_deriv(u)
        return a / hh * y0 + b * d0 + c / hh * y1 + d * d1

    def eval(self, s) -> np.ndarray:
        """Value at absolute time(s) ``s``."""
        scalar = np.ndim(s) == 0
        j, u, hh = self._locate(s)
        out = self._cubic(j, u, hh)
        return out[0] if scalar else out

    def eval_deriv(self, s, side: str = "right") -> np.ndarray:
        scalar = np.ndim(s) == 0
        j, u, hh = self._locate(s, side=side)
        out = self._cubic(j, u, hh, deriv=True)
        return out[0] if scalar else out

    def at_theta(self, theta) -> np.ndarray:
        return self.eval(np.asarray(theta) + self.anchor_time)

    # --------------------------------------------------------------- sampling
    def sample(self, a: float | None = None, b: float | None = None,
               per_segment: int = SAMPLES_PER_SEGMENT):
        """Dense sample of the buffer on ``[a, b]`` (absolute times).

        Returns ``(s, values, derivs)`` where every node contributes two rows
        (left and right derivative) so that suprema see both sides.
        """
        a = self.times[0] if a is None else a
        b = self.times[-1] if b is None else b
        u = np.linspace(0.0, 1.0, per_segment + 2)[1:-1]
        t0 = self.times[:-1, None]
        hh = np.diff(self.times)[:, None]
        s_int = (t0 + u[None, :] * hh).ravel()
        j = np.repeat(np.arange(self.n_segments), u.size)
        uu = np.tile(u, self.n_segments)
        hs = np.repeat(np.diff(self.times), u.size)
        keep = (s_int >= a) & (s_int <= b)
        j, uu, hs, s_int = j[keep], uu[keep], hs[keep], s_int[keep]
        v_int = self._cubic(j, uu, hs) if j.size else np.zeros((0, self.m))
        d_int = self._cubic(j, uu, hs, deriv=True) if j.size else np.zeros((0, self.m))
        nodes = (self.times >= a) & (self.times <= b)
        tn = self.times[nodes]
        # endpoints of [a, b] that are not nodes
        extra = [x for x in (a, b) if not np.any(np.abs(tn - x) <= self._tol())]
        s_all = [s_int, tn, tn]
        v_all = [v_int, self.values[nodes], self.values[nodes]]
        d_all = [d_int, self.dleft[nodes], self.dright[nodes]]
        if extra:
            ex = np.asarray(extra)
            s_all += [ex, ex]
            v_all += [self.eval(ex), self.eval(ex)]
            d_all += [self.eval_deriv(ex, "left"), self.eval_deriv(ex, "right")]
        return np.concatenate(s_all), np.concatenate(v_all), np.concatenate(d_all)

    # ------------------------------------------------------------ structural
    def restrict(self, a: float, b: float, r: float | None = None) -> "HistoryBuffer":
        """Exact sub-buffer on ``[a, b]``; cubic pieces are cut, not re-fit."""
        tol = self._tol()
        inner = (self.times > a + tol) & (self.times < b - tol)
        t = np.concatenate([[a], self.times[inner], [b]])
        vals = np.vstack([self.eval(a), self.values[inner], self.eval(b)])
        dl = np.vstack([self.eval_deriv(a, "right"), self.dleft[inner], self.eval_deriv(b, "left")])
        dr = np.vstack([self.eval_deriv(a, "right"), self.dright[inner], self.eval_deriv(b, "left")])
        # keep stored one-sided data where a/b coincide with nodes
        ia = np.flatnonzero(np.abs(self.times - a) <= tol)
        ib = np.flatnonzero(np.abs(self.times - b) <= tol)
        if ia.size:
            vals[0], dl[0], dr[0] = self.values[ia[0]], self.dleft[ia[0]], self.dright[ia[0]]
        if ib.size:
            vals[-1], dl[-1], dr[-1] = self.values[ib[0]], self.dleft[ib[0]], self.dright[ib[0]]
        return HistoryBuffer(t, vals, dl, dr, self.r if r is None else r, self.eigenvalues, dict(self.meta))

    def shifted(self, anchor_time: float) -> "HistoryBuffer":
        """Same function, re-labelled so that it ends at ``anchor_time``."""
        t = self.times - self.times[-1] + anchor_time
        return HistoryBuffer(t, self.values, self.dleft, self.dright, self.r, self.eigenvalues, dict(self.meta))

    def with_modes(self, m: int) -> "HistoryBuffer":
        """Zero-pad or truncate the coefficient axis; ``eigenvalues`` follow the Dirichlet law."""
        from .spectral import pad
        lam = self.eigenvalues
        if m > lam.size:
            # lambda_k = lambda_1 k^2 for the sine basis
            lam = lam[0] * np.arange(1, m + 1) ** 2
        else:
            lam = lam[:m]
        return HistoryBuffer(self.times, pad(self.values, m), pad(self.dleft, m),
                             pad(self.dright, m), self.r, lam, dict(self.meta))

    def _union_thetas(self, other: "HistoryBuffer") -> np.ndarray:
        th = np.union1d(self.thetas, other.thetas)
        keep = np.concatenate([[True], np.diff(th) > 1e-12 * max(1.0, self.r)])
        th = th[keep]
        th[0], th[-1] = -self.r, 0.0
        return th

    def _resample(self, thetas) -> tuple:
        s = thetas + self.anchor_time
        return self.eval(s), self.eval_deriv(s, "left"), self.eval_deriv(s, "right")

    def __sub__(self, other: "HistoryBuffer") -> "HistoryBuffer":
        """Difference on the common theta window, exact on the union node set."""
        if not isinstance(other, HistoryBuffer):
            return NotImplemented
        if abs(self.r - other.r) > 1e-12 * max(1.0, self.r) or self.m != other.m:
            raise ValueError("buffers differ in window length or basis order")
        th = self._union_thetas(other)
        a, b = self._resample(th), other._resample(th)
        th = th - th[0] - self.r  # exact span r
        th[-1] = 0.0
        return HistoryBuffer(th + self.anchor_time, a[0] - b[0], a[1] - b[1], a[2] - b[2],
                             self.r, self.eigenvalues)

    # ---------------------------------------------------------------- io
    def to_csv(self, path_or_buf=None) -> str | None:
        return write_csv(path_or_buf, self.times, self.values, self.dleft, self.dright,
                         self.eigenvalues, {"r": self.r, "kind": "buffer"})

    @classmethod
    def from_csv(cls, path_or_buf) -> "HistoryBuffer":
        times, vals, dl, dr, lam, meta = read_csv(path_or_buf)
        return cls(times, vals, dl, dr, float(meta["r"]), lam)

    @classmethod
    def from_function(cls, fn: Callable, dfn: Callable, r: float, eigenvalues,
                      nodes: Sequence[float] | None = None, anchor_time: float = 0.0,
                      n_segments: int = 32) -> "HistoryBuffer":
        """Render ``theta -> fn(theta)`` (coefficient vectors) into a buffer."""
        if nodes is None:
            nodes = np.linspace(-r, 0.0, n_segments + 1)
        th = np.asarray(nodes, dtype=float)
        vals = np.asarray([fn(x) for x in th], dtype=float).reshape(th.size, -1)
        der = np.asarray([dfn(x) for x in th], dtype=float).reshape(th.size, -1)
        return cls(th + anchor_time, vals, der, der, r, eigenvalues)

    @classmethod
    def constant(cls, value, r: float, eigenvalues, anchor_time: float = 0.0,
                 n_segments: int = 4) -> "HistoryBuffer":
        value = np.asarray(value, dtype=float)
        zero = np.zeros_like(value)
        return cls.from_function(lambda th: value, lambda th: zero, r, eigenvalues,
                                 anchor_time=anchor_time, n_segments=n_segments)


# ---------------------------------------------------------------------- norms
def _wnorm(lam, v, alpha):
    return np.sqrt(np.sum(lam ** (2 * alpha) * v * v, axis=-1))


def norm_C_minus_half(h: HistoryBuffer) -> float:
    """``max_theta ||A^{-1/2} phi(theta)||``."""
    _, v, _ = h.sample()
    return float(np.max(_wnorm(h.eigenvalues, v, -0.5)))


def norm_C(h: HistoryBuffer, alpha: float = 0.0) -> float:
    """``max_theta ||A^alpha phi(theta)||`` for any power."""
    _, v, _ = h.sample()
    return float(np.max(_wnorm(h.eigenvalues, v, alpha)))


def endpoint_norm(h: HistoryBuffer, alpha: float = 0.5) -> float:
    """``||A^alpha phi(0)||``."""
    return float(_wnorm(h.eigenvalues, h.values[-1], alpha))


def lipschitz_seminorm(h: HistoryBuffer, a: float | None = None, b: float | None = None,
                       pairs: bool = False) -> float:
    """Lipschitz constant of ``theta -> A^{-1/2} phi`` on ``[a, b]`` (absolute times).

    The value returned is the sampled sup of ``||A^{-1/2} phi'||``, which is
    the Lipschitz constant for piecewise C^1 data.  It is a lower bound of the
    true sup over all pairs; with ``pairs=True`` the divided differences of
    consecutive samples are folded in as well.
    """
    s, v, d = h.sample(a, b)
    lam = h.eigenvalues
    out = float(np.max(_wnorm(lam, d, -0.5)))
    if pairs:
        order = np.argsort(s, kind="stable")
        s, v = s[order], v[order]
        ds = np.diff(s)
        ok = ds > 1e-14
        if np.any(ok):
            q = _wnorm(lam, np.diff(v, axis=0)[ok], -0.5) / ds[ok]
            out = max(out, float(np.max(q)))
    return out


def norm_H(h: HistoryBuffer) -> float:
    return norm_C_minus_half(h) + endpoint_norm(h, 0.5)


def norm_lip(h: HistoryBuffer) -> float:
    """``max ||A^{-1/2} phi|| + |||phi|||`` (no endpoint term)."""
    return norm_C_minus_half(h) + lipschitz_seminorm(h)


def norm_L(h: HistoryBuffer) -> float:
    return norm_lip(h) + endpoint_norm(h, 0.5)


def norm_X(h: HistoryBuffer) -> float:
    _, v, d = h.sample()
    lam = h.eigenvalues
    return float(np.max(_wnorm(lam, v, -0.5)) + np.max(_wnorm(lam, d, -0.5))
                 + endpoint_norm(h, 0.5))


def sup_deriv(h: HistoryBuffer, alpha: float = -0.5) -> float:
    """``max_theta ||A^alpha phi'(theta)||`` over both one-sided derivatives."""
    _, _, d = h.sample()
    return float(np.max(_wnorm(h.eigenvalues, d, alpha)))


# ------------------------------------------------------------ initial data
@dataclass(frozen=True)
class InitialFunction:
    """C^1 initial history ``phi: [-r, 0] -> R^m`` in coefficient space.

    kinds
      ``polynomial``: ``phi(theta) = sum_j coeffs[j] theta^j`` (``coeffs`` is (deg+1, m0))
      ``trig``: ``phi(theta) = offset + amplitude * sin(omega theta + phase)`` per mode
      ``tabulated``: natural cubic spline through ``(thetas, values)`` rows
    Coefficient arrays shorter than ``m`` are zero-padded.
    """

    kind: str
    params: dict
    r: float
    m: int

    def __post_init__(self):
        if self.kind not in ("polynomial", "trig", "tabulated"):
            raise ValueError(f"unknown initial-function kind {self.kind!r}")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.kind == "tabulated":
            th = np.asarray(self.params["thetas"], dtype=float)
            if abs(th[0] + self.r) > 1e-12 or abs(th[-1]) > 1e-12:
                raise ValueError("tabulated initial data must cover [-r, 0] exactly")

    def _arr(self, key, default=0.0):
        from .spectral import pad
        a = np.asarray(self.params.get(key, default), dtype=float)
        return pad(np.atleast_1d(a), self.m) if a.ndim <= 1 else pad(a, self.m)

    def _spline(self):
        from scipy.interpolate import CubicSpline
        th = np.asarray(self.params["thetas"], dtype=float)
        from .spectral import pad
        vals = pad(np.asarray(self.params["values"], dtype=float).reshape(th.size, -1), self.m)
        return CubicSpline(th, vals, axis=0, bc_type="natural")

    def value(self, theta):
        th = np.asarray(theta, dtype=float)
        if self.kind == "polynomial":
            c = self._arr("coeffs")
            c = np.atleast_2d(c)
            powers = th[..., None, None] ** np.arange(c.shape[0])[:, None]
            return np.sum(c * powers, axis=-2)
        if self.kind == "trig":
            off, amp, ph = self._arr("offset"), self._arr("amplitude"), self._arr("phase")
            om = float(self.params.get("omega", 1.0))
            return off + amp * np.sin(om * th[..., None] + ph)
        return self._spline()(th)

    def deriv(self, theta):
        th = np.asarray(theta, dtype=float)
        if self.kind == "polynomial":
            c = np.atleast_2d(self._arr("coeffs"))
            j = np.arange(c.shape[0])
            powers = np.where(j[:, None] > 0, th[..., None, None] ** np.maximum(j - 1, 0)[:, None], 0.0)
            return np.sum(j[:, None] * c * powers, axis=-2)
        if self.kind == "trig":
            amp, ph = self._arr("amplitude"), self._arr("phase")
            om = float(self.params.get("omega", 1.0))
            return amp * om * np.cos(om * th[..., None] + ph)
        return self._spline()(th, 1)

    def render(self, eigenvalues, nodes=None, n_segments: int = 64,
               anchor_time: float = 0.0) -> HistoryBuffer:
        return HistoryBuffer.from_function(self.value, self.deriv, self.r, eigenvalues,
                                           nodes=nodes, anchor_time=anchor_time,
                                           n_segments=n_segments)


# ------------------------------------------------------------------- CSV io
def write_csv(path_or_buf, times, values, dleft, dright, eigenvalues, meta: dict):
    """Write nodes as rows ``t, g_1..g_m, dg_1..dg_m``.

    A node whose one-sided derivatives differ is written twice with the same
    ``t``: first the left derivative, then the right one.  Floats use 17
    significant digits, so a reload is bit-for-bit.
    """
    times = np.asarray(times)
    m = values.shape[1]
    rows = []
    n = times.size
    for i in range(n):
        if i == 0:
            rows.append((times[i], values[i], dright[i]))
        elif i == n - 1:
            rows.append((times[i], values[i], dleft[i]))
        elif np.array_equal(dleft[i], dright[i]):
            rows.append((times[i], values[i], dleft[i]))
        else:
            rows.append((times[i], values[i], dleft[i]))
            rows.append((times[i], values[i], dright[i]))
    data = np.array([np.concatenate([[t], v, d]) for t, v, d in rows])
    head = ["sddpde history csv"]
    for k, v in meta.items():
        head.append(f"{k}={v!r}" if not isinstance(v, str) else f"{k}={v}")
    head.append("eigenvalues=" + " ".join(f"{x:.17g}" for x in np.asarray(eigenvalues)))
    cols = ["t"] + [f"g_{k}" for k in range(1, m + 1)] + [f"dg_{k}" for k in range(1, m + 1)]
    head.append(",".join(cols))
    buf = io.StringIO()
    np.savetxt(buf, data, fmt="%.17g", delimiter=",", header="\n".join(head))
    text = buf.getvalue()
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w") as fh:
            fh.write(text)
    return None


def read_csv(path_or_buf):
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf) as fh:
            text = fh.read()
    meta = {}
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        if "=" in body:
            k, v = body.split("=", 1)
            meta[k.strip()] = v.strip()
    lam = np.array([float(x) for x in meta.pop("eigenvalues").split()])
    data = np.loadtxt(io.StringIO(text), delimiter=",", comments="#", ndmin=2)
    m = lam.size
    t, g, dg = data[:, 0], data[:, 1:m + 1], data[:, m + 1:]
    times, vals, dl, dr = [], [], [], []
    i = 0
    while i < t.size:
        if i + 1 < t.size and t[i + 1] == t[i]:
            times.append(t[i]); vals.append(g[i]); dl.append(dg[i]); dr.append(dg[i + 1])
            i += 2
        else:
            times.append(t[i]); vals.append(g[i]); dl.append(dg[i]); dr.append(dg[i])
            i += 1
    return (np.array(times), np.array(vals), np.array(dl), np.array(dr), lam, meta)
