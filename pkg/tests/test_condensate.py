import math

import numpy as np
import pytest
from scipy.stats import poisson

from bosequench.condensate import CondensateSpec, build_condensate_mps, default_n_max, norm_loss
from bosequench.errors import ConfigError
from bosequench.grid import AdaptiveDensity, ContinuumParams, Uniform, build_lattice
from bosequench.mps import expectation_one_site, to_dense
from bosequench.tebd import boson_ops


def _setup(N, L=41, gamma=1.0, extent=8.0):
    p = ContinuumParams.from_gamma(gamma, N)
    lat = build_lattice(p, Uniform(L=L, extent=extent))
    return p, lat, CondensateSpec.from_trap(p, lat)


def test_orbital_normalized_and_real():
    _, _, spec = _setup(5)
    c = spec.orbital
    assert abs(np.sum(np.abs(c) ** 2) - 1) < 1e-12
    assert np.all(np.imag(c) == 0) and np.all(np.real(c) >= 0)


def test_single_particle_state():
    _, lat, spec = _setup(1, L=21)
    st = build_condensate_mps(spec, lat)
    assert st.max_bond_dim <= 2
    _, n, _ = boson_ops(st.phys_dims[0] - 1)
    dens = np.array([expectation_one_site(st, j, n).real for j in range(lat.sites)])
    assert np.allclose(dens, np.abs(spec.orbital) ** 2, atol=1e-12)


@pytest.mark.parametrize("N", [2, 3, 5, 9])
def test_local_pair_correlation_is_one_minus_one_over_n(N):
    p, lat, spec = _setup(N, L=121)
    st = build_condensate_mps(spec, lat)
    assert st.max_bond_dim <= N + 1
    _, n, pair = boson_ops(st.phys_dims[0] - 1)
    dens = np.array([expectation_one_site(st, j, n).real for j in range(lat.sites)])
    assert abs(dens.sum() - N) < 1e-10
    assert np.allclose(dens, N * np.abs(spec.orbital) ** 2, atol=1e-8)
    rho = dens / lat.dx
    for j in np.flatnonzero(rho > 1e-6 * p.rho_peak):
        g2 = expectation_one_site(st, j, pair).real / dens[j] ** 2
        assert abs(g2 - (1 - 1 / N)) < 1e-8


def test_matches_dense_construction():
    # (sum_j c_j a+_j)^3 |0> / sqrt(3!) built with explicit creation operators
    N, L, d = 3, 6, 4
    p = ContinuumParams(g=1.0, N=N)
    lat = build_lattice(p, Uniform(L=L, extent=6.0))
    spec = CondensateSpec.from_trap(p, lat)
    st = build_condensate_mps(spec, lat, n_max=3)
    create = np.diag(np.sqrt(np.arange(1, d)), -1)
    ops = []
    for j in range(L):
        ops.append(np.kron(np.kron(np.eye(d**j), create), np.eye(d ** (L - j - 1))))
    total = sum(cj * op for cj, op in zip(spec.orbital, ops))
    vac = np.zeros(d**L)
    vac[0] = 1.0
    psi = vac
    for _ in range(N):
        psi = total @ psi
    psi = psi / math.sqrt(math.factorial(N))
    psi = psi / np.linalg.norm(psi)  # n_max = N keeps every term, so this only fixes rounding
    mps_vec = to_dense(st)
    assert abs(abs(np.vdot(psi, mps_vec)) - 1) < 1e-10


def test_occupation_cutoff_rule():
    _, lat, spec = _setup(40, L=81, gamma=1.0)
    lam = 40 * np.max(np.abs(spec.orbital) ** 2)
    n = default_n_max(40, spec.orbital, floor=0, cap=100)
    assert poisson.sf(n, lam) < 1e-10 <= poisson.sf(n - 1, lam)
    assert default_n_max(40, spec.orbital) == min(max(n, 4), 8)
    assert default_n_max(2, spec.orbital) == 2  # never above N


def test_too_small_cutoff_names_sufficient_value():
    _, lat, spec = _setup(9, L=21)
    with pytest.raises(ConfigError, match=r"n_max >= \d"):
        build_condensate_mps(spec, lat, n_max=2)
    assert norm_loss(9, spec.orbital, 2) > 1e-10


def test_automatic_cutoff_meets_norm_check():
    # many sites near the peak: the single-site tail rule alone is not enough
    p = ContinuumParams.from_gamma(5.0, 7)
    lat = build_lattice(p, AdaptiveDensity(target=0.06, extent=6.0))
    spec = CondensateSpec.from_trap(p, lat)
    rule = default_n_max(7, spec.orbital)
    assert norm_loss(7, spec.orbital, rule) > 1e-10
    st = build_condensate_mps(spec, lat)
    assert st.phys_dims[0] - 1 > rule
    assert norm_loss(7, spec.orbital, st.phys_dims[0] - 1) <= 1e-10


@pytest.mark.parametrize("policy", ["uniform", "adaptive"])
def test_initial_interaction_energy_converges(policy):
    # E_ia(0+) = (g/2)(1 - 1/N) integral rho^2 dx = (g/2)(1 - 1/N) N^2 sqrt(omega / (2 pi))
    N, g = 5, 3.0
    p = ContinuumParams(g=g, N=N)
    exact = 0.5 * g * (1 - 1 / N) * N**2 * math.sqrt(p.omega / (2 * math.pi))
    errs, spacings = [], []
    for k in range(3):
        if policy == "uniform":
            grid = Uniform(L=15 * 2**k + 1, extent=8.0)
        else:
            grid = AdaptiveDensity(target=0.4 / 2**k, dx_edge=0.6 / 2**k)
        lat = build_lattice(p, grid)
        st = build_condensate_mps(CondensateSpec.from_trap(p, lat), lat)
        _, _, pair = boson_ops(st.phys_dims[0] - 1)
        E = sum(0.5 * lat.U[j] * expectation_one_site(st, j, pair).real for j in range(lat.sites))
        errs.append(abs(E - exact) / exact)
        spacings.append(float(np.max(lat.dx)))
    for e, h in zip(errs, spacings):
        assert e <= h**2
    assert errs[-1] < 1e-3
