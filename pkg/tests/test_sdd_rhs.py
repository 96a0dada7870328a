import math

import numpy as np
import pytest

import oracles
from sddpde.analysis import random_history
from sddpde.history import HistoryBuffer
from sddpde.sdd_rhs import (DelayFunctional, KernelResolutionError, KernelSpec, PointwiseNonlinearity,
                            SddRightHandSide, assemble_B, eval_eta, eval_F1, history_energy,
                            lipschitz_constant, lipschitz_F1)
from sddpde.spectral import DomainSpec, build_basis


def make_rhs(m=6, n_grid=64, b=None, eta=None, kernel=None, d=0.1):
    basis = build_basis(DomainSpec(math.pi, n_grid), m)
    return SddRightHandSide(basis, assemble_B(kernel or KernelSpec(), basis),
                            b or PointwiseNonlinearity(), eta or DelayFunctional(), d)


# ------------------------------------------------------------------ kernel
def test_zero_bump_gives_zero_operator():
    rhs = make_rhs(kernel=KernelSpec(ell="zero"))
    assert np.all(rhs.B.matrix == 0.0)
    assert rhs.B.L_B == 0.0


def test_constant_profile_is_rank_one():
    B = make_rhs(m=8, kernel=KernelSpec(profile="constant", value=1.0)).B
    s = np.linalg.svd(B.matrix, compute_uv=False)
    assert s[0] > 0.1
    assert s[1] < 1e-10


def test_matrix_against_refined_tensor_quadrature():
    basis = build_basis(DomainSpec(math.pi, 128), 8)
    B = assemble_B(KernelSpec(), basis)
    ref = oracles.B_matrix_tensor(8, oracles.gaussian_bump_kernel(), nx=2048, ny=2048)
    assert np.max(np.abs(B.matrix - ref)) < 1e-8


# oracles.L_B_derivative_integral() for the default kernel
L_B_DEFAULT = 1.9833287365701027


def test_default_L_B_frozen():
    # the 256-mode expansion undershoots the derivative integral by ~1e-7 (relative)
    for m, n in ((16, 128), (4, 16)):
        L_B = make_rhs(m=m, n_grid=n).B.L_B
        assert L_B == pytest.approx(L_B_DEFAULT, rel=1e-6)
        assert L_B <= L_B_DEFAULT


def test_under_resolved_kernel_detected():
    basis = build_basis(DomainSpec(math.pi, 16), 8)
    with pytest.raises(KernelResolutionError):
        assemble_B(KernelSpec(sigma=0.02, lb_modes=16), basis)


def test_support_violation():
    basis = build_basis(DomainSpec(math.pi, 16), 4)
    with pytest.raises(ValueError, match="support"):
        assemble_B(KernelSpec(center=0.5, width=1.0), basis)


def test_kernel_spec_validation():
    for kw in ({"profile": "box"}, {"ell": "hat"}, {"sigma": 0.0}, {"quad_factor": 2}):
        with pytest.raises(ValueError):
            KernelSpec(**kw)


def test_bump_derivative_consistent():
    k = KernelSpec()
    y = np.linspace(0.6, 2.5, 7)
    fd = (k.ell_fn(y + 1e-6, math.pi) - k.ell_fn(y - 1e-6, math.pi)) / 2e-6
    np.testing.assert_allclose(k.dell_fn(y, math.pi), fd, atol=1e-7)
    fd = (k.f(y + 1e-6) - k.f(y - 1e-6)) / 2e-6
    np.testing.assert_allclose(k.df(y), fd, atol=1e-7)


# ------------------------------------------------------------ nonlinearity
def test_nicholson_constants():
    b = PointwiseNonlinearity("nicholson", p=2.0)
    assert b.M_b == pytest.approx(2 / math.e)
    assert b.L_b == 2.0
    w = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])
    np.testing.assert_allclose(b(w), 2 * w * np.exp(-np.abs(w)), rtol=1e-15)


def test_other_nonlinearities():
    s = PointwiseNonlinearity("saturating_linear", slope=2.0, level=0.5)
    np.testing.assert_allclose(s(np.array([-1.0, 0.1, 2.0])), [-1.0, 0.2, 1.0])
    assert (s.M_b, s.L_b) == (1.0, 2.0)
    c = PointwiseNonlinearity("constant", value=-0.7)
    np.testing.assert_array_equal(c(np.zeros(3)), -0.7)
    assert (c.M_b, c.L_b) == (0.7, 0.0)
    with pytest.raises(ValueError):
        PointwiseNonlinearity("cubic")
    with pytest.raises(ValueError):
        PointwiseNonlinearity("nicholson", p=-1.0)


# ------------------------------------------------------------------- delay
def test_constant_delay():
    eta = DelayFunctional("constant", r=1.0, tau0=0.3)
    h = random_history(np.random.default_rng(0), np.array([1.0, 4.0]), 1.0)
    assert eval_eta(eta, h) == 0.3
    assert eta.L_eta == 0.0


def test_history_energy_delay_values():
    eta = DelayFunctional("history_energy", r=1.0, kappa=1.0)
    lam = np.array([1.0, 4.0, 9.0])
    assert eval_eta(eta, HistoryBuffer.constant(np.zeros(3), 1.0, lam)) == 0.0
    h = HistoryBuffer.constant([1.0, 0.0, 0.0], 1.0, lam)
    assert history_energy(h) == pytest.approx(1.0, abs=1e-14)
    assert eval_eta(eta, h) == pytest.approx(0.5, abs=1e-14)
    assert (eta.L_eta, eta.q) == (1.0, 0.0)


def test_history_energy_exact_for_cubics():
    lam = np.array([1.0, 4.0])
    h = HistoryBuffer.from_function(lambda t: [t ** 3 + 1, t], lambda t: [3 * t * t, 1.0], 1.0, lam,
                                    n_segments=3)
    # int_{-1}^0 (t^3+1)^2 + t^2/4 dt
    exact = 1 / 7 - 2 / 4 + 1 + 1 / 12
    assert history_energy(h) == pytest.approx(exact, abs=1e-13)


def test_delay_validation():
    with pytest.raises(ValueError):
        DelayFunctional("constant", r=0.5, tau0=0.8)
    with pytest.raises(ValueError):
        DelayFunctional("history_energy", r=-1.0)
    with pytest.raises(ValueError):
        DelayFunctional("random")


def test_window_mismatch_rejected():
    rhs = make_rhs()
    h = HistoryBuffer.constant(np.zeros(6), 0.5, rhs.basis.eigenvalues)
    with pytest.raises(ValueError):
        eval_F1(rhs, h)


# --------------------------------------------------------------------- F1
def test_constant_b_projects_the_constant():
    rhs = make_rhs(b=PointwiseNonlinearity("constant", value=0.7))
    h = random_history(np.random.default_rng(1), rhs.basis.eigenvalues, 1.0)
    expect = 0.7 * oracles.mean_of_sine(np.arange(1, 7))
    np.testing.assert_allclose(eval_F1(rhs, h), expect, atol=1e-13)


def test_zero_history_gives_zero():
    rhs = make_rhs()
    h = HistoryBuffer.constant(np.zeros(6), 1.0, rhs.basis.eigenvalues)
    assert np.all(eval_F1(rhs, h) == 0.0)


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_F1_against_direct_fine_grid(seed):
    rhs = make_rhs(m=6)
    h = random_history(np.random.default_rng(seed), rhs.basis.eigenvalues, 1.0)
    w = h.eval(-eval_eta(rhs.eta, h))
    ref = oracles.direct_F1(w, 6, oracles.gaussian_bump_kernel(), oracles.nicholson(2.0))
    assert np.max(np.abs(eval_F1(rhs, h) - ref)) < 1e-7


def test_lipschitz_formula():
    assert lipschitz_constant(1.0, 1.0, 0.0, 1.0, 7.0) == pytest.approx(math.sqrt(2))
    assert lipschitz_constant(2.0, 3.0, 1.0, 4.0, 5.0) == pytest.approx(60 * math.sqrt(2))
    rhs = make_rhs()
    assert math.isfinite(lipschitz_F1(rhs, 1e6))
    with pytest.raises(ValueError):
        lipschitz_F1(rhs, -1.0)


def test_constants_dictionary():
    c = make_rhs().constants()
    assert c["lambda_1"] == 1.0
    assert c["omega"] == pytest.approx(math.pi)
    assert c["M_b"] == pytest.approx(2 / math.e)
    assert c["L_eta"] == 1.0 and c["q"] == 0.0


def test_negative_damping_rejected():
    with pytest.raises(ValueError):
        make_rhs(d=-0.1)
