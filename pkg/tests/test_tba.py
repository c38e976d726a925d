import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from bosequench import tba
from bosequench.errors import ConfigError, NoSolution


def _fermi_dirac(T, mu):
    """Density, energy per particle and pressure of free fermions (hbar = m = 1)."""
    occ = lambda k: 1.0 / (1.0 + math.exp(min((0.5 * k * k - mu) / T, 700)))
    cut = math.sqrt(2 * max(mu, 0) + 80 * T)
    rho = quad(lambda k: occ(k) / (2 * math.pi), -cut, cut, epsabs=0, epsrel=1e-12, limit=200)[0]
    en = quad(lambda k: 0.5 * k * k * occ(k) / (2 * math.pi), -cut, cut, epsabs=0, epsrel=1e-12,
              limit=200)[0]
    P = quad(lambda k: T / (2 * math.pi) * math.log1p(math.exp(-(0.5 * k * k - mu) / T)),
             -cut, cut, epsabs=0, epsrel=1e-12, limit=200)[0]
    return rho, en / rho, P


@pytest.mark.parametrize("T,mu", [(0.5, 1.0), (3.0, -1.0), (10.0, 5.0)])
def test_hard_core_limit_is_free_fermions(T, mu):
    sol = tba.solve_tba(1e7, T, mu)
    rho, e, P = _fermi_dirac(T, mu)
    assert sol.rho == pytest.approx(rho, rel=1e-5)
    assert sol.e_per_particle == pytest.approx(e, rel=1e-5)
    assert sol.pressure == pytest.approx(P, rel=1e-5)
    assert max(sol.eps_residual, sol.n_residual) < 1e-9


def test_invert_round_trip():
    g, T, mu = 3.0, 1.7, 0.8
    ref = tba.solve_tba(g, T, mu)
    sol = tba.invert_to_T_mu(g, ref.rho, ref.e_per_particle)
    assert sol.T == pytest.approx(T, rel=1e-7)
    assert sol.mu == pytest.approx(mu, rel=1e-7, abs=1e-8)
    dens = tba.mu_for_density(g, T, ref.rho)
    assert dens.mu == pytest.approx(mu, rel=1e-9, abs=1e-10)


def test_thermodynamic_identities():
    # rho = dP/dmu, s = dP/dT and e rho = T s - P + mu rho
    g, T, mu = 2.0, 1.3, 0.6
    h = 1e-4
    sol = tba.solve_tba(g, T, mu)
    dP_dmu = (tba.solve_tba(g, T, mu + h).pressure - tba.solve_tba(g, T, mu - h).pressure) / (2 * h)
    s = (tba.solve_tba(g, T + h, mu).pressure - tba.solve_tba(g, T - h, mu).pressure) / (2 * h)
    assert dP_dmu == pytest.approx(sol.rho, rel=1e-7)
    assert sol.e_per_particle * sol.rho == pytest.approx(T * s - sol.pressure + mu * sol.rho, rel=1e-7)
    assert sol.f == pytest.approx(mu - sol.pressure / sol.rho, rel=1e-14)


def test_local_correlation_matches_grand_canonical_derivative():
    # <dH/dg> per length = rho^2 g2 / 2 = -dP/dg at fixed (T, mu)
    rho, gamma, tau = 1.0, 4.0, 2.0
    T = tau * rho**2 / 2
    g = gamma * rho
    sol = tba.mu_for_density(g, T, rho)
    h = 1e-4 * g
    dP = (tba.solve_tba(g + h, T, sol.mu).pressure - tba.solve_tba(g - h, T, sol.mu).pressure) / (2 * h)
    assert tba.g2_yy(g, rho, T) == pytest.approx(-2 * dP / rho**2, rel=1e-6)


@pytest.mark.parametrize("gamma,tau", [(1e3, 0.5), (1e3, 5.0), (3e3, 30.0)])
def test_strong_coupling_form(gamma, tau):
    # to first order in 1/gamma, g2 = 8 e / (gamma^2 rho^2)
    rho = 1.3
    T = tau * rho**2 / 2
    sol = tba.mu_for_density(gamma * rho, T, rho)
    g2 = tba.g2_yy(gamma * rho, rho, T)
    assert g2 == pytest.approx(8 * sol.e_per_particle / (gamma * rho) ** 2, rel=5 / gamma)


def test_asymptotic_form_needs_high_temperature():
    rho, gamma = 1.0, 1e4
    ratios = []
    for tau in (30.0, 300.0, 3000.0):
        g2 = tba.g2_yy(gamma * rho, rho, tau * rho**2 / 2)
        ratios.append(g2 / tba.g2_asymptotic(gamma, tau))
    assert ratios[0] > ratios[1] > ratios[2] > 1.0
    assert ratios[2] < 1.03  # degeneracy correction falls off as tau^(-1/2)


def test_decreasing_in_gamma_and_positive():
    rho, tau = 1.0, 2.0
    T = tau * rho**2 / 2
    vals = [tba.g2_yy(gm * rho, rho, T) for gm in (10, 30, 100, 300)]
    assert all(v > 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert tba.g2_yy(1e4, 1.0, 1.0) < 1e-2


def test_step_halving_is_stable():
    val, d1, d2 = tba.g2_yy(5.0, 1.0, 1.5, details=True)
    assert abs(d1 - d2) / val < 1e-3
    assert abs(val - d2) / val < 1e-3


def test_quadrature_doubling_agrees():
    coarse = tba.solve_tba(1.5, 0.7, 0.9, tba.QuadSpec(nodes=200, check_doubling=False))
    fine = tba.solve_tba(1.5, 0.7, 0.9, tba.QuadSpec(nodes=800, check_doubling=False))
    for k in ("rho", "e_per_particle", "f"):
        assert getattr(coarse, k) == pytest.approx(getattr(fine, k), rel=1e-8)


def test_kernel_symmetry():
    lam = np.linspace(-3, 3, 17)
    K = tba.kernel(lam, lam, 0.7)
    assert np.array_equal(K, K.T)
    assert K[3, 3] == pytest.approx(2 / 0.7)


def test_errors():
    with pytest.raises(ConfigError):
        tba.solve_tba(0.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        tba.solve_tba(1.0, -1.0, 1.0)
    with pytest.raises(ConfigError):
        tba.mu_for_density(1.0, 1.0, 0.0)
    # below the ground-state energy per particle no temperature exists
    with pytest.raises(NoSolution):
        tba.invert_to_T_mu(10.0, 1.0, 0.01)


def test_closed_forms():
    assert tba.g2_asymptotic(100, 30) == pytest.approx(6e-3)
    assert tba.thermal_wavelength(2.0, math.pi) == pytest.approx(1.0)
    assert tba.quench_energy(4.0, 2.0) == pytest.approx(8.0)
    assert tba.quench_energy(4.0, 2.0, N=9) == pytest.approx(8.0 * 8 / 9)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        vals = tba.g2_thermal_nonlocal([0.0, 1e3], 1.0, 30.0, 100.0)
    assert vals[0] == 0.0 and vals[1] == pytest.approx(1.0)
    with pytest.warns(RuntimeWarning):
        tba.g2_thermal_nonlocal(0.1, 1.0, 0.5, 100.0)
    with pytest.warns(RuntimeWarning):
        tba.g2_thermal_nonlocal(0.1, 1.0, 30.0, 5.0)


def test_thermal_row_is_consistent():
    row = tba.thermal_row(5.0, 1.0, tba.quench_energy(5.0, 1.0, N=5))
    assert row.rho == pytest.approx(1.0, rel=1e-8)
    assert row.e_per_particle == pytest.approx(2.0, rel=1e-8)
    assert row.tau == pytest.approx(2 * row.T)
    assert 0 < row.g2_yy < 1
    assert row.residuals < 1e-8
