import math

import numpy as np
import pytest

from bosequench import oracle
from bosequench.errors import ConfigError, ResourceLimit
from bosequench.grid import lattice_from_couplings


def test_basis_enumeration():
    b = oracle.FockBasis(3, 2, 2)
    assert b.dim == 6
    assert [tuple(s) for s in b.states] == [(0, 0, 2), (0, 1, 1), (0, 2, 0), (1, 0, 1),
                                           (1, 1, 0), (2, 0, 0)]
    assert oracle.FockBasis(4, 3, 1).dim == 4
    assert oracle.FockBasis(10, 3, 3).dim == math.comb(12, 3)
    with pytest.raises(ConfigError):
        oracle.FockBasis(2, 5, 2)
    with pytest.raises(ResourceLimit):
        oracle.FockBasis(20, 10, 10, cap=1000)


def test_one_particle_on_two_sites():
    J, D = 0.7, 1.3
    lat = lattice_from_couplings(2, J=J, U=5.0, D=D)
    H = oracle.dense_hamiltonian(oracle.FockBasis(2, 1, 1), lat)
    assert np.allclose(H, [[D, -J], [-J, D]])
    assert np.allclose(np.linalg.eigvalsh(H), [D - J, D + J])


def test_two_particles_on_two_sites():
    J, U, D = 0.9, 2.5, 0.4
    lat = lattice_from_couplings(2, J=J, U=U, D=D)
    basis = oracle.FockBasis(2, 2, 2)
    H = oracle.dense_hamiltonian(basis, lat)
    r = math.sqrt(2) * J
    assert np.allclose(H, [[U + 2 * D, -r, 0], [-r, 2 * D, -r], [0, -r, U + 2 * D]])
    root = math.sqrt(U**2 + 16 * J**2)
    expect = sorted([2 * D + U, 2 * D + (U + root) / 2, 2 * D + (U - root) / 2])
    assert np.allclose(np.linalg.eigvalsh(H), expect)


def test_trap_enters_only_when_switched_on():
    lat = lattice_from_couplings(3, J=1.0, U=1.0, D=1.0, V=[0.5, 0.0, 0.5])
    basis = oracle.FockBasis(3, 2, 2)
    diff = oracle.dense_hamiltonian(basis, lat, True) - oracle.dense_hamiltonian(basis, lat)
    assert np.allclose(diff, np.diag(basis.states @ lat.V))


def test_free_spectrum_is_sum_of_single_particle_levels():
    rng = np.random.default_rng(1)
    L, N = 5, 3
    lat = lattice_from_couplings(L, J=rng.uniform(0.5, 1.5, L - 1), U=0.0, D=rng.uniform(1, 2, L))
    one = np.linalg.eigvalsh(oracle.dense_hamiltonian(oracle.FockBasis(L, 1, 1), lat))
    many = np.linalg.eigvalsh(oracle.dense_hamiltonian(oracle.FockBasis(L, N, N), lat))
    sums = sorted(one[i] + one[j] + one[k] for i in range(L) for j in range(i, L) for k in range(j, L))
    assert np.allclose(many, sums)


def _random_problem(L=6, N=3, n_max=3, seed=2):
    rng = np.random.default_rng(seed)
    lat = lattice_from_couplings(L, J=rng.uniform(0.5, 1.5, L - 1), U=rng.uniform(0, 4, L),
                                 D=rng.uniform(1, 2, L), V=rng.uniform(0, 1, L))
    basis = oracle.FockBasis(L, N, n_max)
    H = oracle.dense_hamiltonian(basis, lat)
    psi = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return lat, basis, H, psi / np.linalg.norm(psi)


def test_propagation_cases():
    lat, basis, H, psi = _random_problem()
    assert np.array_equal(oracle.propagate(basis, H, psi, 0.0), psi)
    E, g = oracle.ground_state(H)
    out = oracle.propagate(basis, H, g, 2.3)
    assert np.allclose(out, np.exp(-2.3j * E) * g, atol=1e-12)
    dense = oracle.propagate(basis, H, psi, 3.0, method="eig")
    assert np.allclose(dense, oracle.expm_dense(H, 3.0) @ psi, atol=1e-10)
    krylov = oracle.propagate(basis, H, psi, 3.0, method="krylov")
    assert np.max(np.abs(krylov - dense)) < 1e-8
    back = oracle.propagate(basis, H, dense, -3.0, method="krylov")
    assert np.max(np.abs(back - psi)) < 1e-8
    with pytest.raises(ConfigError):
        oracle.propagate(basis, H, psi, 1.0, method="magic")


def test_propagation_conserves_norm_number_and_energy():
    lat, basis, H, psi = _random_problem(L=7, N=4, n_max=4, seed=3)
    E0 = np.vdot(psi, H @ psi).real
    for method in ("eig", "krylov"):
        out = oracle.propagate(basis, H, psi, 5.0, method=method)
        assert abs(np.linalg.norm(out) - 1) < 1e-10
        assert abs(oracle.measure(basis, out, "N") - 4) < 1e-10
        assert abs(np.vdot(out, H @ out).real - E0) < 1e-10 * max(1, abs(E0))


def test_energy_parts_add_up():
    lat, basis, H, psi = _random_problem(seed=4)
    parts = sum(oracle.measure(basis, psi, k, lat) for k in ("E_kin", "E_ia", "E_trap"))
    assert parts == pytest.approx(np.vdot(psi, H @ psi).real, abs=1e-12)
    Ht = oracle.dense_hamiltonian(basis, lat, trap_on=True)
    parts_t = sum(oracle.measure(basis, psi, k, lat, trap_on=True) for k in ("E_kin", "E_ia", "E_trap"))
    assert parts_t == pytest.approx(np.vdot(psi, Ht @ psi).real, abs=1e-12)
    with pytest.raises(ConfigError):
        oracle.measure(basis, psi, "E_kin")
    with pytest.raises(ConfigError):
        oracle.measure(basis, psi, "spin", lat)


def test_density_density_diagonal_is_pair_occupation():
    _, basis, _, psi = _random_problem(seed=5)
    pair = oracle.pair_occupation(basis, psi)
    for j in range(basis.L):
        assert oracle.density_density(basis, psi, j, j) == pytest.approx(pair[j])
    S = basis.states
    p = np.abs(psi) ** 2
    assert oracle.density_density(basis, psi, 1, 4) == pytest.approx(p @ (S[:, 1] * S[:, 4]))


def test_condensate_vector_is_normalized_with_binomial_statistics():
    c = np.array([0.6, 0.8j])
    basis = oracle.FockBasis(2, 4, 4)
    psi = oracle.condensate_vector(basis, c)
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    probs = np.abs(psi) ** 2
    for k, occ in enumerate(basis.states):
        assert probs[k] == pytest.approx(math.comb(4, occ[0]) * 0.36 ** occ[0] * 0.64 ** occ[1])


def test_cap_is_enforced_before_building_matrices():
    lat = lattice_from_couplings(12, J=1.0, U=1.0, D=1.0)
    with pytest.raises(ResourceLimit):
        oracle.dense_hamiltonian(oracle.FockBasis(12, 6, 6, cap=500), lat)
