import json
import math

import numpy as np
import pytest

import oracles
from sddpde import analysis
from sddpde.analysis import (EstimateReport, absorbing_radius_sq, audit_eta, audit_HB, audit_lemma1,
                             comparison_entry_time, energy_terms, galerkin_convergence_study,
                             random_initials, smooth_perturbation, split_points,
                             timeshift_counterexample, timeshift_derivative_counterexample,
                             timeshift_smooth_control, verify_continuous_dependence,
                             verify_dissipativity, verify_energy, verify_semigroup)
from sddpde.history import (HistoryBuffer, InitialFunction, lipschitz_seminorm, norm_C_minus_half,
                            norm_H)
from sddpde.integrator import SolverConfig, solve
from sddpde.sdd_rhs import (DelayFunctional, KernelSpec, PointwiseNonlinearity, SddRightHandSide,
                            assemble_B)
from sddpde.spectral import DomainSpec, build_basis


def make_rhs(b, m=1, d=0.0, eta=None, n_grid=16):
    basis = build_basis(DomainSpec(math.pi, n_grid), m)
    return SddRightHandSide(basis, assemble_B(KernelSpec(), basis), b,
                            eta or DelayFunctional("history_energy", r=1.0), d)


# ------------------------------------------------------------------ report
def test_report_pass_iff_margin_within_tol():
    assert EstimateReport.make("x", 1.0, 1.0 + 1e-9, tol=1e-8).passed
    assert not EstimateReport.make("x", 1.0, 1.1, tol=1e-8).passed
    r = EstimateReport.make("x", 2.0, 0.5)
    assert r.margin == 1.5
    json.dumps(r.to_dict())
    assert r.line().startswith("[PASS] x:")


# ------------------------------------------------------------------ energy
def test_energy_zero_trajectory():
    rhs = make_rhs(PointwiseNonlinearity("nicholson", p=2.0), m=4)
    h = HistoryBuffer.constant(np.zeros(4), 1.0, rhs.basis.eigenvalues)
    tr = solve(h, rhs, SolverConfig(dt=0.01, T=2.0))
    rep = verify_energy(tr)
    t, lhs, rhs_ = energy_terms(tr)
    assert rep.passed
    assert (rhs_ - lhs)[-1] == pytest.approx((2 / math.e) ** 2 * math.pi * 2.0, rel=1e-14)


def test_energy_constant_forcing_closed_form():
    from scipy.integrate import quad
    c_b, g0 = 0.6, 0.9
    rhs = make_rhs(PointwiseNonlinearity("constant", value=c_b))
    h = HistoryBuffer.constant([g0], 1.0, rhs.basis.eigenvalues)
    tr = solve(h, rhs, SolverConfig(dt=1e-3, T=1.0))
    t, lhs, rhs_ = energy_terms(tr)
    g = lambda s: float(oracles.constant_forcing(np.array([g0]), c_b, np.array([1.0]), s))
    for i in (250, 1000):
        exact_l = g(t[i]) ** 2 + quad(lambda s: g(s) ** 2, 0, t[i], epsabs=1e-14)[0]
        assert lhs[i] == pytest.approx(exact_l, abs=1e-8)
        assert rhs_[i] == pytest.approx(g0 ** 2 + c_b ** 2 * math.pi * t[i], abs=1e-12)


def test_energy_nicholson_has_positive_margin(short_traj):
    rep = verify_energy(short_traj)
    assert rep.passed and rep.details["min_margin"] > 0


# ------------------------------------------------------ continuous dependence
def test_identical_data_give_zero(nich_rhs, nich_phi, nicholson):
    repH, repL, _ = verify_continuous_dependence(nich_phi, nich_phi, nich_rhs,
                                                 nicholson.solver_config(T=0.2))
    assert repH.observed == 0.0 and repL.observed == 0.0
    assert repH.passed and repL.passed


def test_smooth_perturbation_has_requested_size(nich_phi):
    psi = smooth_perturbation(nich_phi, 1e-4)
    assert norm_H(psi - nich_phi) == pytest.approx(1e-4, rel=1e-12)
    assert np.array_equal(psi.eval(-0.5), nich_phi.eval(-0.5))


def test_difference_growth_matches_oracle(constant_delay):
    rhs = constant_delay.rhs()
    phi = constant_delay.initial_history(rhs)
    psi = smooth_perturbation(phi, 1e-4)
    cfg = constant_delay.solver_config(T=2.0)
    repH, repL, (tu, tv) = verify_continuous_dependence(phi, psi, rhs, cfg)
    assert repH.passed and repL.passed
    rate = float(rhs.linear_rates[0])
    args = (0.5, 2.0, rate, oracles.gaussian_bump_kernel(), oracles.nicholson(2.0))
    gu = oracles.method_of_steps_m1(lambda t: float(phi.eval(t)[0]), *args)
    gv = oracles.method_of_steps_m1(lambda t: float(psi.eval(t)[0]), *args)
    idx = np.arange(0, tu.node_times.size, 100)
    ref = np.array([gu(t) - gv(t) for t in tu.node_times[idx]])
    got = tu.states[idx, 0] - tv.states[idx, 0]
    assert np.max(np.abs(got - ref)) < 1e-9


def test_gronwall_factor_formula():
    assert analysis.gronwall_factor(0.0, 3.0) == 1.0
    assert analysis.gronwall_factor(2.0, 1.0) == pytest.approx(math.exp(2 * (1 + math.sqrt(2 / math.e))))


# ------------------------------------------------------------ dissipativity
def test_zero_initial_is_inside(nich_rhs, nicholson):
    h = HistoryBuffer.constant(np.zeros(nich_rhs.m), 1.0, nich_rhs.basis.eigenvalues)
    rep = verify_dissipativity(nich_rhs, nicholson.solver_config(dt=1e-2), [h])
    assert rep.passed
    assert rep.details["entry_times"] == [0.0]


def test_comparison_entry_time():
    assert comparison_entry_time(1.0, 2.0, 1.0) == 0.0
    assert comparison_entry_time(10.0, 1.0, 1.0) == pytest.approx(math.log(9 / 0.05))


def test_random_initials_scaled(nich_rhs):
    R2 = absorbing_radius_sq(nich_rhs)
    hs = random_initials(nich_rhs, 4, 10 * R2, seed=7)
    for h in hs:
        assert float(np.sum(nich_rhs.basis.eigenvalues * h.values[-1] ** 2)) == pytest.approx(10 * R2)
    again = random_initials(nich_rhs, 4, 10 * R2, seed=7)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(hs, again))


def test_entry_times_monotone_in_damping(nicholson):
    entries = []
    for d in (0.0, 0.1, 1.0):
        rhs = nicholson.rhs(m=8, d=d)
        init = random_initials(rhs, 1, 10 * absorbing_radius_sq(rhs), seed=3)
        rep = verify_dissipativity(rhs, nicholson.solver_config(dt=2e-3), init)
        assert rep.passed
        entries.append(rep.observed)
    assert entries[0] >= entries[1] >= entries[2]


def test_budget_exhaustion_reported_separately(nich_rhs, nicholson):
    init = random_initials(nich_rhs, 1, 10 * absorbing_radius_sq(nich_rhs), seed=1)
    rep = verify_dissipativity(nich_rhs, nicholson.solver_config(dt=1e-2), init, T_max=0.5)
    assert not rep.passed
    assert rep.details["status"] == "budget_exhausted"
    assert rep.details["violations"] == []


# ------------------------------------------------------------------ Galerkin
def test_galerkin_zero_forcing_exact():
    shape = InitialFunction("trig", {"offset": [1.0, 0.0, 0.5], "amplitude": [0.3, 0.0, 0.1]}, 1.0, 4)
    rows = galerkin_convergence_study(
        shape, lambda m: make_rhs(PointwiseNonlinearity("constant", value=0.0), m=m, n_grid=32),
        [4, 8, 16], SolverConfig(dt=1e-2, T=1.0))
    assert all(r["distance"] == 0.0 for r in rows)


def test_galerkin_constant_forcing_tail():
    c_b, d, T = 0.7, 0.1, 1.0
    shape = InitialFunction("polynomial", {"coeffs": [[0.0]]}, 1.0, 2)
    rows = galerkin_convergence_study(
        shape, lambda m: make_rhs(PointwiseNonlinearity("constant", value=c_b), m=m, d=d, n_grid=32),
        [2, 4, 8, 16], SolverConfig(dt=1e-2, T=T))
    for row in rows:
        k = np.arange(row["m"] + 1, row["m_next"] + 1)
        lam = k.astype(float) ** 2
        g = c_b * oracles.mean_of_sine(k) * (1 - np.exp(-(lam + d) * T)) / (lam + d)
        expect = math.sqrt(np.sum(g * g / lam)) + math.sqrt(np.sum(lam * g * g))
        assert row["distance"] == pytest.approx(expect, abs=1e-8)
        assert row["distance_low"] == pytest.approx(0.0, abs=1e-15)
    d_ = [r["distance"] for r in rows]
    assert d_ == sorted(d_, reverse=True)


def test_galerkin_rejects_unsorted(nicholson):
    with pytest.raises(ValueError):
        galerkin_convergence_study(nicholson.initial_shape(), nicholson.rhs, [8, 4],
                                   nicholson.solver_config(T=0.1))


# -------------------------------------------------------------- time shifts
def test_ramp_shift_lipschitz_norm():
    b = analysis._ramp_shift(0.01)
    assert norm_C_minus_half(b) + lipschitz_seminorm(b, pairs=True) == pytest.approx(1.01, abs=1e-6)


def test_timeshift_limits():
    assert timeshift_counterexample() == pytest.approx(1.0, abs=1e-2)
    assert timeshift_derivative_counterexample() == pytest.approx(1.0, abs=1e-6)
    assert timeshift_smooth_control() == pytest.approx(0.0, abs=1e-6)


# -------------------------------------------------------------------- audits
def test_lemma1_equal_pair_ratio_zero(nich_rhs):
    phi = analysis.random_history(np.random.default_rng(0), nich_rhs, 1.0)
    diff = analysis.grid_F1(nich_rhs, phi) - analysis.grid_F1(nich_rhs, phi)
    assert np.all(diff == 0.0)


def test_lemma1_constant_delay_reduces(nicholson):
    base = nicholson.rhs(m=8)
    rhs = SddRightHandSide(base.basis, base.B, base.b, DelayFunctional("constant", r=1.0, tau0=0.4), 0.1)
    assert rhs.lipschitz_F1(123.0) == pytest.approx(math.sqrt(2) * base.b.L_b * base.B.L_B)
    rep = audit_lemma1(rhs, n_samples=150)
    assert rep.passed


def test_audits_pass_and_are_deterministic(nich_rhs):
    a = audit_lemma1(nich_rhs, n_samples=90, seed=5)
    b = audit_lemma1(nich_rhs, n_samples=90, seed=5)
    assert a.passed and a.observed == b.observed
    assert audit_HB(nich_rhs, 300).passed
    rep = audit_eta(nich_rhs, 100)
    assert rep.passed and rep.details["range_ok"]


# ----------------------------------------------------------------- semigroup
def test_split_points_on_grid():
    pts = split_points(3.0, 1e-3, 10, seed=1)
    assert len(pts) == 10
    for t, s in pts:
        assert t > 0 and s > 0 and t + s <= 3.0 + 1e-12
        assert abs(t / 1e-3 - round(t / 1e-3)) < 1e-9


def test_semigroup_report(nich_rhs, nich_phi, nicholson):
    rep = verify_semigroup(nich_phi, nich_rhs, nicholson.solver_config(T=1.0), n_pairs=3)
    assert rep.passed and rep.observed <= 1e-8
