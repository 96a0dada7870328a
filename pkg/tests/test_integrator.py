import io
import math
import os

import numpy as np
import pytest

import oracles
from sddpde import _kernels, scenario
from sddpde.analysis import galerkin_convergence_study, manifold_residuals
from sddpde.history import HistoryBuffer, norm_H, norm_X
from sddpde.integrator import (FixedPointError, SolverConfig, SolverError, Trajectory,
                               blend_width, check_manifold, load_trajectory_csv,
                               make_manifold_initial, phi_functions, snapshot_from_csv, solve, step)
from sddpde.sdd_rhs import (DelayFunctional, KernelSpec, PointwiseNonlinearity, SddRightHandSide,
                            assemble_B, eval_F1)
from sddpde.spectral import DomainSpec, build_basis

from conftest import SCENARIO_DIR


def rhs_with(b, m=4, d=0.0, eta=None, n_grid=16):
    basis = build_basis(DomainSpec(math.pi, n_grid), m)
    return SddRightHandSide(basis, assemble_B(KernelSpec(), basis), b,
                            eta or DelayFunctional("history_energy", r=1.0), d)


def test_phi_functions_small_and_large():
    z = np.array([0.0, 1e-8, 0.3, 0.49, 0.51, 5.0, 200.0])
    p1, p2 = phi_functions(z)
    big = z > 0.4
    np.testing.assert_allclose(p1[big], (1 - np.exp(-z[big])) / z[big], rtol=1e-14)
    np.testing.assert_allclose(p2[big], (z[big] - 1 + np.exp(-z[big])) / z[big] ** 2, rtol=1e-12)
    assert p1[0] == 1.0 and p2[0] == 0.5
    # series branch against extended precision
    zz = np.float64(0.3)
    import decimal
    decimal.getcontext().prec = 40
    D = decimal.Decimal(float(zz))
    assert p1[2] == pytest.approx(float((1 - (-D).exp()) / D), rel=1e-15)
    assert p2[2] == pytest.approx(float((D - 1 + (-D).exp()) / (D * D)), rel=1e-14)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0)
    with pytest.raises(ValueError):
        SolverConfig(fp_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(scheme=3)
    with pytest.raises(ValueError):
        SolverConfig(dt=0.3, T=1.0).n_steps
    rhs = rhs_with(PointwiseNonlinearity("constant", value=0.0))
    with pytest.raises(ValueError, match="maximal delay"):
        SolverConfig(dt=2.0, T=4.0).validate(rhs)
    long_const = rhs_with(PointwiseNonlinearity(), eta=DelayFunctional("constant", r=1.0, tau0=1.0))
    SolverConfig(dt=1.0, T=2.0).validate(long_const)  # dt <= r is fine


@pytest.mark.parametrize("scheme", [1, 2])
def test_zero_forcing_is_pure_decay(scheme):
    rhs = rhs_with(PointwiseNonlinearity("constant", value=0.0), d=0.3)
    g0 = np.array([1.0, -0.5, 0.25, 0.1])
    h = HistoryBuffer.constant(g0, 1.0, rhs.basis.eigenvalues)
    tr = solve(h, rhs, SolverConfig(dt=0.01, T=1.0, scheme=scheme))
    exact = g0 * np.exp(-np.outer(tr.node_times, rhs.linear_rates))
    np.testing.assert_allclose(tr.states, exact, rtol=1e-13, atol=1e-300)


@pytest.mark.parametrize("scheme", [1, 2])
def test_constant_forcing_closed_form(scheme):
    rhs = rhs_with(PointwiseNonlinearity("constant", value=0.7), m=8, n_grid=32)
    g0 = np.linspace(1.0, 0.1, 8)
    h = HistoryBuffer.constant(g0, 1.0, rhs.basis.eigenvalues)
    tr = solve(h, rhs, SolverConfig(dt=0.01, T=1.0, scheme=scheme))
    exact = oracles.constant_forcing(g0, 0.7, rhs.linear_rates, 1.0)
    assert np.max(np.abs(tr.states[-1] - exact)) < 1e-10


def test_zero_initial_stays_zero(nich_rhs):
    h = HistoryBuffer.constant(np.zeros(nich_rhs.m), 1.0, nich_rhs.basis.eigenvalues)
    tr = solve(h, nich_rhs, SolverConfig(dt=1e-2, T=1.0))
    assert np.all(tr.states == 0.0)


def test_method_of_steps_oracle(constant_delay):
    rhs = constant_delay.rhs()
    phi = constant_delay.initial_history(rhs)
    tr = solve(phi, rhs, constant_delay.solver_config())
    g = oracles.method_of_steps_m1(lambda t: 0.5, 0.5, 5.0, float(rhs.linear_rates[0]),
                                   oracles.gaussian_bump_kernel(), oracles.nicholson(2.0))
    idx = np.arange(0, tr.node_times.size, 10)
    ref = np.array([g(t) for t in tr.node_times[idx]])
    assert np.max(np.abs(tr.states[idx, 0] - ref)) < 1e-6


def test_semigroup_example(nich_rhs, nich_phi, nicholson):
    cfg = nicholson.solver_config(T=1.6)
    full = solve(nich_phi, nich_rhs, cfg)
    second = solve(full.snapshot(0.7), nich_rhs, nicholson.solver_config(T=0.9))
    assert norm_H(second.final() - full.snapshot(1.6)) <= 1e-8


def test_dt_refinement(nich_rhs, nich_phi, nicholson):
    finals = [solve(nich_phi, nich_rhs, nicholson.solver_config(dt=dt, T=2.0)).final()
              for dt in (4e-3, 2e-3, 1e-3)]
    e1 = norm_H(finals[0] - finals[1])
    e2 = norm_H(finals[1] - finals[2])
    assert e1 / e2 >= 3.0


def test_node_derivative_consistency(short_traj, nich_rhs):
    fp_tol = short_traj.cfg.fp_tol
    for t in short_traj.node_times[1::53]:
        h = short_traj.snapshot(t)
        expect = -nich_rhs.linear_rates * h.values[-1] + eval_F1(nich_rhs, h)
        assert np.max(np.abs(h.dleft[-1] - expect)) <= 10 * fp_tol


@pytest.mark.parametrize("name", ["nicholson", "constant_delay", "linear"])
def test_fixed_point_iterations_bounded(name):
    sc = scenario.load(os.path.join(SCENARIO_DIR, name + ".yaml"))
    rhs = sc.rhs()
    dt = min(rhs.r, 0.1) / 2
    tr = solve(sc.initial_history(rhs), rhs, sc.solver_config(dt=dt, T=dt * 40))
    assert tr.iteration_counts.max() <= 5


def test_fixed_point_failure_is_reported(nich_rhs, nich_phi):
    rhs = SddRightHandSide(nich_rhs.basis, nich_rhs.B, nich_rhs.b,
                           DelayFunctional("constant", r=1.0, tau0=0.0), 0.1)
    with pytest.raises(FixedPointError) as info:
        solve(nich_phi, rhs, SolverConfig(dt=1e-3, T=0.1, fp_max_iter=1))
    assert isinstance(info.value, SolverError)
    assert info.value.t == 0.0
    assert len(info.value.trace) == 1


def test_vanishing_delay_converges(nich_rhs, nich_phi):
    rhs = SddRightHandSide(nich_rhs.basis, nich_rhs.B, nich_rhs.b,
                           DelayFunctional("constant", r=1.0, tau0=0.0), 0.1)
    tr = solve(nich_phi, rhs, SolverConfig(dt=1e-3, T=0.5))
    assert tr.iteration_counts.max() <= 5


def test_galerkin_boundedness(nicholson):
    rows = galerkin_convergence_study(nicholson.initial_shape(), lambda m: nicholson.rhs(m=m),
                                      [4, 8, 16, 32], nicholson.solver_config(T=1.0))
    sups = [rows[0]["sup_A12_m"]] + [r["sup_A12_next"] for r in rows]
    assert max(sups) / min(sups) < 1.2


def test_backends_agree(nicholson):
    if "cython" not in _kernels.available():
        pytest.skip("compiled backend not built")
    rhs = nicholson.rhs(m=8)
    phi = nicholson.initial_history(rhs)
    a = solve(phi, rhs, nicholson.solver_config(T=0.5, backend="python"))
    b = solve(phi, rhs, nicholson.solver_config(T=0.5, backend="cython"))
    assert np.max(np.abs(a.states - b.states)) < 1e-13
    np.testing.assert_array_equal(a.iteration_counts, b.iteration_counts)


def test_step_and_advance_match(nich_rhs, nich_phi, nicholson):
    cfg = nicholson.solver_config(T=0.05)
    tr = Trajectory(nich_phi, nich_rhs, cfg)
    for _ in range(50):
        step(tr, nich_rhs, cfg)
    ref = solve(nich_phi, nich_rhs, cfg)
    np.testing.assert_array_equal(tr.states, ref.states)
    with pytest.raises(ValueError):
        step(tr, cfg=nicholson.solver_config(T=1.0))


def test_dense_output_continuity(short_traj):
    t = short_traj.node_times[100]
    for eps in (1e-9, -1e-9):
        np.testing.assert_allclose(short_traj.state(t + eps), short_traj.states[100], atol=1e-8)
    np.testing.assert_allclose(short_traj.derivative(t), short_traj.derivatives[100], atol=1e-15)


def test_time_shift_continuity_in_X(short_traj):
    t = 1.0
    dists = [norm_X(short_traj.snapshot(t + h) - short_traj.snapshot(t)) for h in (0.1, 0.01, 0.001)]
    assert dists[0] > dists[1] > dists[2]
    assert dists[2] < 0.02


def test_energy_inequality_along_run(short_traj):
    from sddpde.analysis import energy_terms
    t, lhs, rhs = energy_terms(short_traj)
    assert np.all(rhs - lhs >= -1e-6 * (1 + t))


# ----------------------------------------------------------------- manifold
def test_manifold_zero_unchanged(nich_rhs):
    h = HistoryBuffer.constant(np.zeros(nich_rhs.m), 1.0, nich_rhs.basis.eigenvalues)
    out = make_manifold_initial(h, nich_rhs)
    assert check_manifold(out, nich_rhs) == 0.0
    assert np.all(out.values == 0.0) and np.all(out.dleft == 0.0)


def test_manifold_constant_forcing_endpoint():
    rhs = rhs_with(PointwiseNonlinearity("constant", value=0.4), m=4, d=0.2)
    c = 0.8
    h = HistoryBuffer.constant([c, 0, 0, 0], 1.0, rhs.basis.eigenvalues)
    out = make_manifold_initial(h, rhs)
    assert check_manifold(out, rhs) < 1e-12
    expect = 0.4 * oracles.mean_of_sine(1) - (1.0 + 0.2) * c
    assert out.dleft[-1][0] == pytest.approx(expect, abs=1e-12)
    # shape kept away from the blend region
    assert np.array_equal(out.eval(-1.0 + 1e-3), h.eval(-1.0 + 1e-3))
    assert blend_width(1.0) == 0.1


def test_manifold_idempotent(nich_rhs, nich_phi):
    again = make_manifold_initial(nich_phi, nich_rhs)
    assert np.max(np.abs(again.values - nich_phi.values)) <= 1e-14
    assert np.max(np.abs(again.dleft - nich_phi.dleft)) <= 1e-14


def test_check_manifold_pure_decay():
    rhs = rhs_with(PointwiseNonlinearity("constant", value=0.0), m=4, d=0.0)
    h = HistoryBuffer.constant([-1.7, 0, 0, 0], 1.0, rhs.basis.eigenvalues)
    assert check_manifold(h, rhs) == pytest.approx(1.7, abs=1e-15)


def test_manifold_rejects_kinked_shape(nich_rhs):
    lam = nich_rhs.basis.eigenvalues
    dl = np.zeros((3, nich_rhs.m))
    dr = dl.copy()
    dr[1, 0] = 1.0
    h = HistoryBuffer([-1.0, -0.5, 0.0], np.zeros((3, nich_rhs.m)), dl, dr, 1.0, lam)
    with pytest.raises(ValueError, match="C\\^1"):
        make_manifold_initial(h, nich_rhs)


def test_manifold_residual_small_at_half_delay(nich_rhs, nich_phi, nicholson):
    tr = solve(nich_phi, nich_rhs, nicholson.solver_config(dt=5e-4, T=1.0))
    assert check_manifold(tr.snapshot(nich_rhs.r / 2 + 2.5e-4), nich_rhs) < 1e-6
    _, res = manifold_residuals(tr, 1.0)
    assert res.max() < 1e-6


# ---------------------------------------------------------------------- io
def test_trajectory_csv_round_trip(tmp_path, short_traj):
    path = tmp_path / "traj.csv"
    short_traj.to_csv(path)
    times, Y, DL, DR, lam, meta = load_trajectory_csv(path)
    assert times[0] == -1.0 and times[-1] == short_traj.t
    np.testing.assert_array_equal(Y[-1], short_traj.states[-1])
    assert norm_H(snapshot_from_csv(path)) == norm_H(short_traj.final())
    mid = snapshot_from_csv(path, 1.0)
    assert norm_H(mid) == norm_H(short_traj.snapshot(1.0))
    text = short_traj.to_csv()
    assert snapshot_from_csv(io.StringIO(text)).anchor_time == short_traj.t


def test_manifest_fields(short_traj):
    man = short_traj.manifest({"extra": 1})
    for key in ("t_end", "steps", "config", "backend", "wall_time_s", "fixed_point_iterations",
                "constants", "initial_manifold_residual", "extra"):
        assert key in man
    assert man["steps"] == 2000
