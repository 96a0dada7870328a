"""Numerical checks of the a priori estimates and asymptotic statements.

Every verifier returns an :class:`EstimateReport`; ``margin = bound - observed``
and the report passes iff ``margin >= -tol``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .history import (HistoryBuffer, InitialFunction, endpoint_norm,
                      lipschitz_seminorm, norm_C_minus_half, norm_H, norm_lip)
from .integrator import SolverConfig, Trajectory, solve
from .sdd_rhs import SddRightHandSide, eval_eta, history_energy, lipschitz_F1

DEFAULT_SEED = 20240611

# 4-point Gauss-Legendre on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


@dataclass
class EstimateReport:
    estimate: str
    bound: float
    observed: float
    margin: float
    passed: bool
    tol: float = 0.0
    details: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @classmethod
    def make(cls, estimate, bound, observed, tol=0.0, passed=None, **kw):
        margin = float(bound) - float(observed)
        ok = margin >= -tol if passed is None else bool(passed)
        return cls(estimate, float(bound), float(observed), margin, bool(ok), float(tol), **kw)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.estimate}: observed={self.observed:.6g} bound={self.bound:.6g} "
                f"margin={self.margin:.6g}")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _wnorm(lam, v, alpha):
    return np.sqrt(np.sum(lam ** (2 * alpha) * v * v, axis=-1))


def _run_all(jobs: Sequence[Callable], workers: int | None):
    if workers and workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda f: f(), jobs))
    return [f() for f in jobs]


# ------------------------------------------------------------------ energy
def dissipation_integral(traj: Trajectory) -> np.ndarray:
    """``int_{t0}^{t_i} ||A u||^2`` at every solution node (exact for the cubic pieces)."""
    sl = slice(traj.i0, traj.i_last + 1)
    t = traj.times[sl]
    Y, DL, DR = traj.Y[sl], traj.DL[sl], traj.DR[sl]
    lam2 = traj.basis.eigenvalues ** 2
    if t.size < 2:
        return np.zeros(t.size)
    hh = np.diff(t)[:, None]
    seg = np.zeros(t.size - 1)
    for x, w in zip(_GL_X, _GL_W):
        x2, x3 = x * x, x * x * x
        v = ((2 * x3 - 3 * x2 + 1) * Y[:-1] + (x3 - 2 * x2 + x) * hh * DR[:-1]
             + (-2 * x3 + 3 * x2) * Y[1:] + (x3 - x2) * hh * DL[1:])
        seg += w * np.sum(lam2 * v * v, axis=1)
    seg *= hh[:, 0]
    return np.concatenate([[0.0], np.cumsum(seg)])


def energy_terms(traj: Trajectory):
    """Node times, left side ``||A^{1/2}u||^2 + int ||Au||^2`` and right side
    ``||A^{1/2}phi(0)||^2 + M_b^2 |Omega| (t - t0)``."""
    lam = traj.basis.eigenvalues
    t = traj.node_times
    lhs = np.sum(lam * traj.states ** 2, axis=1) + dissipation_integral(traj)
    c = traj.rhs.constants()
    rhs = float(np.sum(lam * traj.states[0] ** 2)) + c["M_b"] ** 2 * c["omega"] * (t - traj.t0)
    return t, lhs, rhs


def verify_energy(traj: Trajectory, provenance: dict | None = None) -> EstimateReport:
    t, lhs, rhs = energy_terms(traj)
    tol = 1e-6 * (1.0 + (t - traj.t0))
    margins = rhs - lhs
    ok = bool(np.all(margins >= -tol))
    # the start node is an identity; report the tightest later node
    later = slice(1, None) if t.size > 1 else slice(None)
    i = int(np.argmin((margins + tol)[later])) + (1 if t.size > 1 else 0)
    return EstimateReport.make(
        "energy", rhs[i], lhs[i], tol=tol[i], passed=ok,
        details={"worst_time": float(t[i]), "min_margin": float(margins[later].min()),
                 "nodes_checked": int(t.size)},
        provenance=provenance or {})


# ------------------------------------------------------ continuous dependence
def trajectory_lipschitz(traj: Trajectory) -> float:
    """``|||v|||_{[-r, T]}``: sup of ``||A^{-1/2} v'||`` over history and solution."""
    _, _, d = traj.dense_samples()
    return float(np.max(_wnorm(traj.basis.eigenvalues, d, -0.5)))


def gronwall_factor(L_F: float, T: float) -> float:
    return math.exp(L_F * (T + math.sqrt(2.0 * T / math.e)))


def _window_max(s, vals, t_nodes, r):
    out = np.empty(t_nodes.size)
    lo = np.searchsorted(s, t_nodes - r - 1e-12, side="left")
    hi = np.searchsorted(s, t_nodes + 1e-12, side="right")
    for i in range(t_nodes.size):
        out[i] = vals[lo[i]:hi[i]].max()
    return out


def difference_norms(tu: Trajectory, tv: Trajectory, per_segment: int = 8):
    """At the common solution nodes: ``||A^{1/2}(u-v)(t)||``, ``||A^{-1/2}(u_t-v_t)||_C``
    and the windowed Lipschitz seminorm of ``u - v``."""
    if tu.node_times.size != tv.node_times.size or np.any(np.abs(tu.node_times - tv.node_times) > 1e-12):
        raise ValueError("trajectories must share their solution time grid")
    r = tu.rhs.r
    lam = tu.basis.eigenvalues
    su, _, _ = tu.dense_samples(per_segment=per_segment)
    sv, _, _ = tv.dense_samples(per_segment=per_segment)
    s = np.union1d(su, sv)
    diff = tu.evaluate(s) - tv.evaluate(s)
    dl = tu.evaluate(s, True, "left") - tv.evaluate(s, True, "left")
    dr = tu.evaluate(s, True, "right") - tv.evaluate(s, True, "right")
    cnorm = _wnorm(lam, diff, -0.5)
    lip = np.maximum(_wnorm(lam, dl, -0.5), _wnorm(lam, dr, -0.5))
    t = tu.node_times
    end = _wnorm(lam, tu.states - tv.states, 0.5)
    c_win = _window_max(s, cnorm, t, r)
    # the left derivative at the window start and the right one at its end
    # point outside the window; they are continuous there except at t0
    lip_win = _window_max(s, lip, t, r)
    return t, end, c_win, lip_win


def verify_continuous_dependence(phi: HistoryBuffer, psi: HistoryBuffer, rhs: SddRightHandSide,
                                 cfg: SolverConfig, provenance: dict | None = None,
                                 workers: int | None = 2, rtol: float = 1e-9):
    """Gronwall bound in ``H`` and the derived bound in ``L`` along two runs.

    Returns ``(report_H, report_L, (traj_phi, traj_psi))``.  ``L_{v,T}`` is computed from each run
    in turn; the smaller of the two bounds is the one checked.
    """
    tu, tv = _run_all([lambda: solve(phi, rhs, cfg), lambda: solve(psi, rhs, cfg)], workers)
    T = cfg.T
    labels = {}
    for name, tr in (("u", tu), ("v", tv)):
        L_vT = trajectory_lipschitz(tr)
        L_F = lipschitz_F1(rhs, L_vT)
        labels[name] = {"L_vT": L_vT, "L_F1": L_F, "E": gronwall_factor(L_F, T)}
    best = min(labels, key=lambda k: labels[k]["E"])
    E, L_F = labels[best]["E"], labels[best]["L_F1"]
    t, end, c_win, lip_win = difference_norms(tu, tv)
    g = end + c_win
    g0 = norm_H(phi - psi)
    boundH = E * g0
    iH = int(np.argmax(g))
    tolH = rtol * max(boundH, 1e-300) + 1e-15
    # the L bound factor uses the same labeling
    d = rhs.d
    facL = (2.0 + d + L_F) * E
    nL = norm_lip(phi - psi) + endpoint_norm(phi - psi, 0.5)
    gL = c_win + lip_win + end
    boundL = facL * nL
    iL = int(np.argmax(gL))
    common = {"labelings": labels, "checked_labeling": best, "T": T,
              "nodes_checked": int(t.size)}
    repH = EstimateReport.make(
        "continuous_dependence_H", boundH, g[iH], tol=tolH,
        passed=bool(np.all(g <= boundH + tolH)),
        details={**common, "initial_distance_H": g0, "worst_time": float(t[iH]),
                 "ratio": float(g[iH] / boundH) if boundH > 0 else 0.0},
        provenance=provenance or {})
    repL = EstimateReport.make(
        "continuous_dependence_L", boundL, gL[iL], tol=rtol * max(boundL, 1e-300) + 1e-15,
        passed=bool(np.all(gL <= boundL * (1 + rtol) + 1e-15)),
        details={**common, "initial_distance_L": nL, "factor": facL, "worst_time": float(t[iL]),
                 "ratio": float(gL[iL] / boundL) if boundL > 0 else 0.0},
        provenance=provenance or {})
    return repH, repL, (tu, tv)


def smooth_perturbation(h: HistoryBuffer, size_H: float, mode: int = 1, width: float | None = None):
    """``h + eps e_mode beta(theta)`` with a C^1 bump ``beta`` on ``[-width, 0]``, ``beta(0) = 1``,
    scaled so the perturbation has ``H``-norm ``size_H``."""
    lam = h.eigenvalues
    r = h.r
    width = min(r / 8.0, 0.1) if width is None else width
    k = mode - 1
    # ||.||_H of e_k beta = lambda_k^{-1/2} + lambda_k^{1/2} since max beta = beta(0) = 1
    eps = size_H / (lam[k] ** -0.5 + lam[k] ** 0.5)
    th = np.union1d(h.thetas, [-width])

    def beta(x):
        s = (x + width) / width
        return np.where(s > 0, 3 * s ** 2 - 2 * s ** 3, 0.0)

    def dbeta(x):
        s = (x + width) / width
        return np.where(s > 0, (6 * s - 6 * s ** 2) / width, 0.0)

    e = np.zeros(h.m)
    e[k] = eps
    s = th + h.anchor_time
    vals = h.eval(s) + beta(th)[:, None] * e
    dl = h.eval_deriv(s, "left") + dbeta(th)[:, None] * e
    dr = h.eval_deriv(s, "right") + dbeta(th)[:, None] * e
    return HistoryBuffer(s, vals, dl, dr, r, lam, dict(h.meta))


# ------------------------------------------------------------- dissipativity
def absorbing_radius_sq(rhs: SddRightHandSide) -> float:
    c = rhs.constants()
    return c["M_b"] ** 2 * c["omega"] / c["lambda_1"]


def comparison_entry_time(y0: float, R2: float, lam1: float, eps: float = 0.05) -> float:
    """First time the comparison solution ``R2 + (y0 - R2) e^{-lam1 t}`` reaches ``(1+eps) R2``."""
    if y0 <= (1 + eps) * R2:
        return 0.0
    return math.log((y0 - R2) / (eps * R2)) / lam1


def random_initials(rhs: SddRightHandSide, n: int, endpoint_sq: float, seed: int,
                    n_modes: int = 6, n_segments: int = 16) -> list[HistoryBuffer]:
    """Random C^1 histories (quadratic in theta, decaying mode profile) with
    ``||A^{1/2} phi(0)||^2 = endpoint_sq``."""
    rng = np.random.default_rng(seed)
    m, r = rhs.m, rhs.r
    lam = rhs.basis.eigenvalues
    k = min(n_modes, m)
    out = []
    for _ in range(n):
        c = np.zeros((3, m))
        c[:, :k] = rng.normal(size=(3, k)) / np.arange(1, k + 1) ** 2
        c[0, 0] = abs(c[0, 0]) + 0.5
        scale = math.sqrt(endpoint_sq / float(np.sum(lam * c[0] ** 2)))
        shape = InitialFunction("polynomial", {"coeffs": (c * scale).tolist()}, r, m)
        out.append(shape.render(lam, n_segments=n_segments))
    return out


def dissipativity_run(phi: HistoryBuffer, rhs: SddRightHandSide, cfg: SolverConfig,
                      T_max: float, eps: float = 0.05, chunk: float = 1.0):
    """Integrate until ``||A^{1/2}u||^2 <= (1+eps) R^2`` has held for a duration ``r``.

    Returns a dict with entry time (or None), comparison-bound violation, the
    post-entry sup of ``||A^{3/4} u||`` and the time reached.
    """
    R2 = absorbing_radius_sq(rhs)
    lam = rhs.basis.eigenvalues
    lam1 = float(lam[0])
    r = rhs.r
    level = (1 + eps) * R2
    y0 = float(np.sum(lam * phi.values[-1] ** 2))
    run_cfg = replace(cfg, T=T_max)
    traj = Trajectory(phi, rhs, run_cfg)
    per_chunk = max(1, int(round(chunk / cfg.dt)))
    entry = None
    while True:
        t = traj.node_times
        y = np.sum(lam * traj.states ** 2, axis=1)
        inside = y <= level
        # entry = start of the current run of inside nodes
        if inside[-1]:
            outside = np.flatnonzero(~inside)
            j = outside[-1] + 1 if outside.size else 0
            if t[-1] - t[j] >= r - 1e-12:
                entry = float(t[j]) if j > 0 else float(t[0])
                break
        if traj.steps_done >= traj.n_steps:
            break
        traj.advance(min(per_chunk, traj.n_steps - traj.steps_done))
    t = traj.node_times
    y = np.sum(lam * traj.states ** 2, axis=1)
    comparison = R2 + (y0 - R2) * np.exp(-lam1 * (t - t[0]))
    excess = float(np.max(y - comparison - 1e-9 * np.maximum(1.0, comparison)))
    post = None
    if entry is not None:
        after = t >= entry
        post = float(np.max(_wnorm(lam, traj.states[after], 0.75)))
    return {"entry_time": entry, "y0": y0, "R2": R2, "t_reached": float(t[-1]),
            "comparison_excess": excess, "violation": excess > 0,
            "sup_A34_after_entry": post}


def verify_dissipativity(rhs: SddRightHandSide, cfg: SolverConfig, initials: Sequence[HistoryBuffer],
                         T_max: float | None = None, eps: float = 0.05, slack: float = 2.0,
                         provenance: dict | None = None, workers: int | None = None) -> EstimateReport:
    """Absorbing-ball entry for each initial history.

    ``bound`` is ``slack`` times the largest comparison-ODE entry time;
    ``observed`` the largest observed entry time.  A run that never enters
    within ``T_max`` is a budget exhaustion; a run whose energy exceeds the
    comparison solution is a violation of the differential inequality.
    """
    if rhs.eta.q != 0:
        raise ValueError("the absorbing-ball statement needs q = 0 in the delay hypothesis")
    R2 = absorbing_radius_sq(rhs)
    lam1 = float(rhs.basis.eigenvalues[0])
    preds = [comparison_entry_time(float(np.sum(rhs.basis.eigenvalues * h.values[-1] ** 2)), R2, lam1, eps)
             for h in initials]
    if T_max is None:
        T_max = 2.0 * slack * max(preds + [0.0]) + 2.0 * rhs.r + 1.0
    T_max = cfg.dt * math.ceil(T_max / cfg.dt - 1e-9)
    runs = _run_all([(lambda h=h: dissipativity_run(h, rhs, cfg, T_max, eps)) for h in initials], workers)
    entries = [x["entry_time"] for x in runs]
    exhausted = [i for i, e in enumerate(entries) if e is None]
    violations = [i for i, x in enumerate(runs) if x["violation"]]
    within = [e is not None and e <= slack * p + 1e-12 for e, p in zip(entries, preds)]
    observed = max([e for e in entries if e is not None], default=float("inf"))
    bound = slack * max(preds + [0.0])
    status = "ok"
    if violations:
        status = "violation"
    elif exhausted:
        status = "budget_exhausted"
    elif not all(within):
        status = "late_entry"
    details = {"R2": R2, "level": (1 + eps) * R2, "predicted": preds, "entry_times": entries,
               "runs": runs, "status": status, "T_max": T_max, "exhausted": exhausted,
               "violations": violations, "max_entry_time": observed,
               "sup_A34_after_entry": max([x["sup_A34_after_entry"] or 0.0 for x in runs], default=0.0)}
    return EstimateReport.make("dissipativity", bound, observed, passed=status == "ok",
                               details=details, provenance=provenance or {})


# ---------------------------------------------------------- Galerkin study
def galerkin_convergence_study(shape: InitialFunction, rhs_family: Callable[[int], SddRightHandSide],
                               m_list: Sequence[int], cfg: SolverConfig, workers: int | None = None):
    """Cauchy differences ``||u^m_T - u^{2m}_T||_H`` (zero-padded) between consecutive orders.

    Returns a list of row dicts ``{m, m_next, distance, distance_low, ratio, sup_A12_*}``;
    ``distance_low`` compares only the first ``m`` modes.
    """
    m_list = list(m_list)
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be strictly ascending")

    def run(m):
        rhs = rhs_family(m)
        h = replace(shape, m=m).render(rhs.basis.eigenvalues)
        return solve(h, rhs, replace(cfg, m=None))

    trajs = _run_all([(lambda m=m: run(m)) for m in m_list], workers)
    rows = []
    prev = None
    for (m, m2), ta, tb in zip(zip(m_list, m_list[1:]), trajs, trajs[1:]):
        fa = ta.final().with_modes(m2)
        fb = tb.final()
        dist = norm_H(fa - fb)
        rows.append({"m": m, "m_next": m2, "distance": dist,
                     "distance_low": norm_H(ta.final() - fb.with_modes(m)),
                     "ratio": (prev / dist) if (prev is not None and dist > 0) else None})
        prev = dist
    sups = {m: float(np.max(np.sqrt(np.sum(tr.basis.eigenvalues * tr.states ** 2, axis=1))))
            for m, tr in zip(m_list, trajs)}
    for row in rows:
        row["sup_A12_m"] = sups[row["m"]]
        row["sup_A12_next"] = sups[row["m_next"]]
    return rows


# ------------------------------------------------------- time-shift examples
def _extrapolate(hs, vals) -> float:
    """Value at ``h = 0`` of the quadratic through ``(h_i, vals_i)``."""
    c = np.polyfit(np.asarray(hs, dtype=float), np.asarray(vals, dtype=float), len(hs) - 1)
    return float(np.polyval(c, 0.0))


_UNIT = np.array([1.0])


def _scalar(times, vals, dl, dr, r=1.0):
    a = lambda x: np.asarray(x, dtype=float).reshape(-1, 1)
    return HistoryBuffer(np.asarray(times, dtype=float), a(vals), a(dl), a(dr), r, _UNIT)


def _ramp_shift(h: float, r: float = 1.0) -> HistoryBuffer:
    """``v_h - v_0`` for ``v = max(t, 0)``: zero, then ``h + theta`` on ``(-h, 0]``."""
    return _scalar([-r, -h, 0.0], [0.0, 0.0, h], [0.0, 0.0, 1.0], [0.0, 1.0, 1.0], r)


def _square_shift(h: float, r: float = 1.0) -> HistoryBuffer:
    """``v_h - v_0`` for ``v(t) = t^2`` (smooth on ``[-r, T]``): ``2 h theta + h^2``."""
    th = np.linspace(-r, 0.0, 9)
    return _scalar(th, 2 * h * th + h * h, 2 * h + 0 * th, 2 * h + 0 * th, r)


def timeshift_counterexample(hs=(0.1, 0.01, 0.001), r: float = 1.0) -> float:
    """Limit of ``||v_h - v_0||_Lip`` for the ramp; it is ``1``, not ``0``."""
    vals = [norm_C_minus_half(b) + lipschitz_seminorm(b, pairs=True)
            for b in map(lambda h: _ramp_shift(h, r), hs)]
    return _extrapolate(hs, vals)


def timeshift_derivative_counterexample(hs=(0.1, 0.01, 0.001), r: float = 1.0) -> float:
    """Limit of ``sup |v_h' - v_0'|`` for the ramp (the unit step shifted in L^inf)."""
    vals = [lipschitz_seminorm(_ramp_shift(h, r)) for h in hs]
    return _extrapolate(hs, vals)


def timeshift_smooth_control(hs=(0.1, 0.01, 0.001), r: float = 1.0) -> float:
    vals = [norm_C_minus_half(b) + lipschitz_seminorm(b, pairs=True)
            for b in map(lambda h: _square_shift(h, r), hs)]
    return _extrapolate(hs, vals)


# ------------------------------------------------------------------ audits
def random_history(rng, rhs_or_lam, r: float, n_segments: int = 8, scale: float = 1.0,
                   decay: float = 1.0) -> HistoryBuffer:
    """Random C^1 Hermite history with mode amplitudes ``~ k^{-decay}``."""
    lam = getattr(getattr(rhs_or_lam, "basis", None), "eigenvalues", rhs_or_lam)
    lam = np.asarray(lam)
    m = lam.size
    n = n_segments + 1
    w = scale / np.arange(1, m + 1) ** decay
    vals = rng.normal(size=(n, m)) * w
    ders = rng.normal(size=(n, m)) * w * rng.uniform(0.1, 5.0)
    th = np.linspace(-r, 0.0, n)
    return HistoryBuffer(th, vals, ders, ders, r, lam)


def grid_F1(rhs: SddRightHandSide, h: HistoryBuffer) -> np.ndarray:
    """``b([B phi(-eta(phi))](x_q))`` on the quadrature grid (before projection)."""
    tau = eval_eta(rhs.eta, h)
    w = h.eval(h.anchor_time - tau)
    return rhs.b(rhs.B.apply_grid(w))


def audit_lemma1(rhs: SddRightHandSide, n_samples: int = 1000, seed: int = DEFAULT_SEED,
                 provenance: dict | None = None) -> EstimateReport:
    """Randomized check of ``||F1(phi) - F1(psi)|| <= L_F1[|||phi|||] (q ... + ||A^{-1/2}(phi-psi)||_C)``.

    The left side is the full L^2 norm on the quadrature grid; ``|||phi|||``
    is the sampled derivative sup (a lower bound, so the bound is not inflated).
    """
    rng = np.random.default_rng(seed)
    wq = rhs.B.quad_weights
    lam = rhs.basis.eigenvalues
    ratios = np.zeros(n_samples)
    q = rhs.eta.q
    for i in range(n_samples):
        phi = random_history(rng, lam, rhs.r, scale=rng.uniform(0.1, 3.0))
        kind = i % 3
        if kind == 0:
            psi = random_history(rng, lam, rhs.r, scale=rng.uniform(0.1, 3.0))
        else:
            eps = 10.0 ** rng.uniform(-6, -1)
            d = random_history(rng, lam, rhs.r, scale=eps)
            psi = HistoryBuffer(phi.times, phi.values + d.values, phi.dleft + d.dleft,
                                phi.dright + d.dright, phi.r, lam)
        diff = grid_F1(rhs, phi) - grid_F1(rhs, psi)
        lhs = math.sqrt(float(np.sum(wq * diff * diff)))
        dh = phi - psi
        dist = q * endpoint_norm(dh, 0.5) + norm_C_minus_half(dh)
        bound = lipschitz_F1(rhs, lipschitz_seminorm(phi)) * dist
        ratios[i] = lhs / bound if bound > 0 else (0.0 if lhs == 0 else np.inf)
    worst = float(ratios.max()) if n_samples else 0.0
    return EstimateReport.make("lemma1", 1.0, worst, passed=worst < 1.0,
                               details={"n_samples": n_samples, "seed": seed,
                                        "median_ratio": float(np.median(ratios)) if n_samples else 0.0},
                               provenance={**(provenance or {}), "seed": seed})


def audit_HB(rhs: SddRightHandSide, n_samples: int = 1000, seed: int = DEFAULT_SEED) -> EstimateReport:
    """``||Bv|| <= L_B ||A^{-1/2} v||`` on random coefficient vectors."""
    rng = np.random.default_rng(seed)
    lam = rhs.basis.eigenvalues
    v = rng.normal(size=(n_samples, rhs.m)) / np.arange(1, rhs.m + 1) ** rng.uniform(0, 2, size=(n_samples, 1))
    lhs = rhs.B.l2_norm(v)
    rhs_ = rhs.B.L_B * _wnorm(lam, v, -0.5)
    ratio = np.where(rhs_ > 0, lhs / np.where(rhs_ > 0, rhs_, 1.0), 0.0)
    worst = float(ratio.max())
    return EstimateReport.make("HB", 1.0, worst, passed=worst <= 1.0 + 1e-12,
                               details={"n_samples": n_samples, "L_B": rhs.B.L_B},
                               provenance={"seed": seed})


def audit_eta(rhs: SddRightHandSide, n_samples: int = 500, seed: int = DEFAULT_SEED) -> EstimateReport:
    """``|eta(phi) - eta(psi)| <= L_eta (q ||A^{1/2}(phi-psi)(0)||^2 + int ||A^{-1/2}(phi-psi)||^2)^{1/2}``
    and ``0 <= eta <= r``."""
    rng = np.random.default_rng(seed)
    lam = rhs.basis.eigenvalues
    eta = rhs.eta
    worst = 0.0
    in_range = True
    for i in range(n_samples):
        phi = random_history(rng, lam, eta.r, scale=10.0 ** rng.uniform(-2, 1))
        if i % 2:
            psi = random_history(rng, lam, eta.r, scale=10.0 ** rng.uniform(-2, 1))
        else:
            d = random_history(rng, lam, eta.r, scale=10.0 ** rng.uniform(-7, -2))
            psi = HistoryBuffer(phi.times, phi.values + d.values, phi.dleft + d.dleft,
                                phi.dright + d.dright, phi.r, lam)
        a, b = eval_eta(eta, phi), eval_eta(eta, psi)
        in_range &= 0.0 <= a <= eta.r and 0.0 <= b <= eta.r
        dh = phi - psi
        dist = math.sqrt(eta.q * endpoint_norm(dh, 0.5) ** 2 + history_energy(dh))
        bound = eta.L_eta * dist
        if abs(a - b) > 0:
            worst = max(worst, abs(a - b) / bound if bound > 0 else np.inf)
    return EstimateReport.make("H1_eta", 1.0, worst, passed=bool(in_range and worst <= 1.0 + 1e-9),
                               details={"n_samples": n_samples, "L_eta": eta.L_eta, "q": eta.q,
                                        "range_ok": bool(in_range)},
                               provenance={"seed": seed})


# --------------------------------------------------------------- semiflow
def split_points(T: float, dt: float, n: int, seed: int = DEFAULT_SEED):
    """``n`` random pairs ``(t, s)`` on the step grid with ``0 < t``, ``0 < s``, ``t + s <= T``."""
    rng = np.random.default_rng(seed)
    N = int(round(T / dt))
    out = []
    for _ in range(n):
        a = int(rng.integers(1, N))
        b = int(rng.integers(1, N - a + 1))
        out.append((a * dt, b * dt))
    return out


def verify_semigroup(phi: HistoryBuffer, rhs: SddRightHandSide, cfg: SolverConfig,
                     pairs: Sequence[tuple] | None = None, n_pairs: int = 10,
                     seed: int = DEFAULT_SEED, tol: float = 1e-8,
                     provenance: dict | None = None, workers: int | None = 2) -> EstimateReport:
    """``S_{t+s} phi`` from one run against ``S_s S_t phi`` from two runs, in ``||.||_H``."""
    pairs = list(pairs) if pairs is not None else split_points(cfg.T, cfg.dt, n_pairs, seed)
    T_need = max(t + s for t, s in pairs)
    full = solve(phi, rhs, replace(cfg, T=cfg.dt * round(T_need / cfg.dt)))

    def one(t, s):
        second = solve(full.snapshot(t), rhs, replace(cfg, T=s))
        return norm_H(second.final() - full.snapshot(t + s))

    errs = _run_all([(lambda t=t, s=s: one(t, s)) for t, s in pairs], workers)
    worst = float(max(errs))
    return EstimateReport.make("semigroup", tol, worst,
                               details={"pairs": [list(p) for p in pairs], "errors": errs},
                               provenance={**(provenance or {}), "seed": seed})


def manifold_residuals(traj: Trajectory, t_end: float) -> tuple[np.ndarray, np.ndarray]:
    """Compatibility residual of ``u_t`` at step mid-points in ``[t0, t_end]``, one every
    ``0.05`` time units.  At nodes the residual vanishes by construction, so
    mid-step times measure the interpolant."""
    from .integrator import check_manifold
    dt = traj.cfg.dt
    t_end = min(t_end, traj.t)
    mids = traj.t0 + (np.arange(int(round((t_end - traj.t0) / dt))) + 0.5) * dt
    stride = max(1, int(round(0.05 / dt)))
    mids = mids[::stride]
    res = np.array([check_manifold(traj.snapshot(t), traj.rhs) for t in mids])
    return mids, res


def verify_manifold_invariance(phi: HistoryBuffer, rhs: SddRightHandSide, cfg: SolverConfig,
                               t_end: float = 3.0, tol: float = 1e-6, min_ratio: float = 3.0,
                               provenance: dict | None = None, workers: int | None = 2) -> EstimateReport:
    """Along runs at ``dt`` and ``dt/2`` started on the manifold: the residual of the
    finer run stays below ``tol`` on ``[0, t_end]`` and halving ``dt`` shrinks it ``min_ratio``-fold."""
    T = cfg.dt * math.ceil(t_end / cfg.dt - 1e-9)
    coarse_cfg = replace(cfg, T=T)
    fine_cfg = replace(cfg, dt=cfg.dt / 2, T=T)
    tc, tf = _run_all([lambda: solve(phi, rhs, coarse_cfg), lambda: solve(phi, rhs, fine_cfg)], workers)
    _, rc = manifold_residuals(tc, t_end)
    _, rf = manifold_residuals(tf, t_end)
    ratio = float(rc.max() / rf.max()) if rf.max() > 0 else float("inf")
    from .integrator import check_manifold
    ok = bool(rf.max() <= tol and ratio >= min_ratio)
    return EstimateReport.make("manifold", tol, rf.max(), passed=ok,
                               details={"dt": cfg.dt, "residual_dt": float(rc.max()),
                                        "residual_dt_half": float(rf.max()), "ratio": ratio,
                                        "initial_residual": check_manifold(phi, rhs),
                                        "t_end": t_end},
                               provenance=provenance or {})


def verify_timeshift(provenance: dict | None = None) -> list[EstimateReport]:
    lim4 = timeshift_counterexample()
    lim5 = timeshift_derivative_counterexample()
    lim0 = timeshift_smooth_control()
    return [
        EstimateReport.make("remark4", 1.0, lim4, tol=1e-2, passed=abs(lim4 - 1.0) <= 1e-2,
                            details={"limit": lim4}, provenance=provenance or {}),
        EstimateReport.make("remark5", 1.0, lim5, tol=1e-6, passed=abs(lim5 - 1.0) <= 1e-6,
                            details={"limit": lim5}, provenance=provenance or {}),
        EstimateReport.make("smooth_shift", 0.0, lim0, tol=1e-6, passed=abs(lim0) <= 1e-6,
                            details={"limit": lim0}, provenance=provenance or {}),
    ]
