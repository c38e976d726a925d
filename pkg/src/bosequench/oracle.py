"""Exact diagonalization of the Bose-Hubbard chain in a fixed-N sector.

Brute-force reference for small lattices: dense Hamiltonian, ground state,
real-time propagation and occupation-basis observables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.linalg
from scipy.linalg import eigh_tridiagonal

from bosequench.errors import ConfigError, ResourceLimit
from bosequench.grid import LatticeSpec

DIM_CAP = 200_000
DENSE_EIG_MAX = 4000
KRYLOV_DIM = 30


@dataclass
class FockBasis:
    """Occupation vectors with sum N and n_j <= n_max, in lexicographic order."""

    L: int
    N: int
    n_max: int
    cap: int = DIM_CAP
    states: np.ndarray = field(init=False, repr=False)
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.N > self.L * self.n_max:
            raise ConfigError(f"{self.N} particles do not fit into {self.L} sites with n_max={self.n_max}")
        states = []
        for occ in _compositions(self.N, self.L, self.n_max):
            states.append(occ)
            if len(states) > self.cap:
                raise ResourceLimit(f"Fock basis dimension exceeds cap {self.cap}")
        self.states = np.array(states, dtype=np.int64).reshape(-1, self.L)
        self.index = {tuple(s): k for k, s in enumerate(self.states)}

    @property
    def dim(self) -> int:
        return len(self.states)

    def from_full(self, psi_full, d=None) -> np.ndarray:
        """Pick this sector's amplitudes out of a full product-space vector."""
        d = d or self.n_max + 1
        weights = d ** np.arange(self.L - 1, -1, -1)
        return np.asarray(psi_full)[self.states @ weights]


def _compositions(N, L, n_max):
    # lexicographic: site 0 varies slowest, ascending occupations
    if L == 1:
        if N <= n_max:
            yield (N,)
        return
    for n in range(0, min(N, n_max) + 1):
        for rest in _compositions(N - n, L - 1, n_max):
            yield (n,) + rest


def dense_hamiltonian(basis: FockBasis, lattice: LatticeSpec, trap_on: bool = False) -> np.ndarray:
    """H = -sum J_j (a+_j a_j+1 + h.c.) + sum U_j/2 n_j(n_j-1) + sum (D_j + V_j) n_j."""
    if lattice.sites != basis.L:
        raise ConfigError("basis and lattice lengths differ")
    dim = basis.dim
    if dim > basis.cap:
        raise ResourceLimit(f"dimension {dim} exceeds cap {basis.cap}")
    S = basis.states
    onsite = lattice.D + (lattice.V if trap_on else 0.0)
    diag = S @ onsite + 0.5 * (S * (S - 1)) @ lattice.U
    H = np.diag(diag.astype(complex))
    for k, occ in enumerate(S):
        for j in range(basis.L - 1):
            # a+_j a_{j+1}
            if occ[j + 1] > 0 and occ[j] < basis.n_max:
                new = occ.copy()
                new[j] += 1
                new[j + 1] -= 1
                m = basis.index[tuple(new)]
                amp = -lattice.J[j] * np.sqrt((occ[j] + 1) * occ[j + 1])
                H[m, k] += amp
                H[k, m] += amp
    return H


def ground_state(H):
    w, v = np.linalg.eigh(H)
    return w[0], v[:, 0]


def _lanczos_expm(H, v, dt, m):
    """exp(-i H dt) v from an m-dimensional Krylov space; returns (w, error estimate)."""
    nrm = np.linalg.norm(v)
    V = np.zeros((m + 1, len(v)), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v / nrm
    k_used = m
    for j in range(m):
        w = H @ V[j]
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
        # full reorthogonalization keeps the small basis clean
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-14:
            k_used = j + 1
            break
        V[j + 1] = w / beta[j]
    a, b = alpha[:k_used], beta[: k_used - 1]
    e, u = eigh_tridiagonal(a, b)
    coeff = u @ (np.exp(-1j * e * dt) * u[0].conj())
    out = nrm * (V[:k_used].T @ coeff)
    # residual estimate: beta_m times last coefficient
    err = nrm * beta[k_used - 1] * abs(coeff[-1]) if k_used == m else 0.0
    return out, err


def propagate(basis: FockBasis, H, psi0, t: float, method: str = "auto", tol: float = 1e-10):
    """psi(t) = exp(-i H t) psi0.

    ``method`` is 'eig' (dense diagonalization), 'krylov' (Lanczos stepping
    with a 30-dimensional space and step control on the residual bound) or
    'auto' (dense up to dimension 4000).
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if method == "auto":
        method = "eig" if basis.dim <= DENSE_EIG_MAX else "krylov"
    if t == 0:
        return psi0.copy()
    if method == "eig":
        w, v = np.linalg.eigh(H)
        return v @ (np.exp(-1j * w * t) * (v.conj().T @ psi0))
    if method != "krylov":
        raise ConfigError(f"unknown propagation method {method!r}")
    psi = psi0.copy()
    done = 0.0
    spread = float(np.max(np.sum(np.abs(H), axis=1)))
    step = min(abs(t), 10.0 / max(spread, 1e-300))
    sign = 1.0 if t > 0 else -1.0
    while done < abs(t) - 1e-15:
        h = min(step, abs(t) - done)
        new, err = _lanczos_expm(H, psi, sign * h, KRYLOV_DIM)
        if err > tol and h > 1e-14:
            step = h / 2
            continue
        psi = new
        done += h
        if err < 0.1 * tol:
            step = h * 1.5
    return psi


# ---------------------------------------------------------------------------
# observables


def densities(basis: FockBasis, psi) -> np.ndarray:
    p = np.abs(psi) ** 2
    return p @ basis.states / np.sum(p)


def pair_occupation(basis: FockBasis, psi) -> np.ndarray:
    """<a+_j^2 a_j^2> = <n_j(n_j-1)> on every site."""
    p = np.abs(psi) ** 2
    S = basis.states
    return p @ (S * (S - 1)) / np.sum(p)


def density_density(basis: FockBasis, psi, i: int, j: int) -> float:
    """<a+_i a+_j a_j a_i>, which for i != j is <n_i n_j>."""
    p = np.abs(psi) ** 2
    S = basis.states
    if i == j:
        return float(p @ (S[:, i] * (S[:, i] - 1)) / np.sum(p))
    return float(p @ (S[:, i] * S[:, j]) / np.sum(p))


def hopping(basis: FockBasis, psi) -> np.ndarray:
    """<a+_j a_{j+1}> on every bond."""
    out = np.zeros(basis.L - 1, dtype=complex)
    for k, occ in enumerate(basis.states):
        if psi[k] == 0:
            continue
        for j in range(basis.L - 1):
            if occ[j + 1] > 0 and occ[j] < basis.n_max:
                new = occ.copy()
                new[j] += 1
                new[j + 1] -= 1
                m = basis.index[tuple(new)]
                out[j] += np.conj(psi[m]) * psi[k] * np.sqrt((occ[j] + 1) * occ[j + 1])
    return out / np.vdot(psi, psi).real


def measure(basis: FockBasis, psi, observable: str, lattice: LatticeSpec | None = None,
            trap_on: bool = False):
    """Named observables: 'density', 'pair', 'hopping', 'N', 'E_kin', 'E_ia', 'E_trap'."""
    if observable == "density":
        return densities(basis, psi)
    if observable == "pair":
        return pair_occupation(basis, psi)
    if observable == "hopping":
        return hopping(basis, psi)
    if observable == "N":
        return float(np.sum(densities(basis, psi)))
    if lattice is None:
        raise ConfigError(f"observable {observable!r} needs a lattice")
    if observable == "E_kin":
        return float(-2 * np.sum(lattice.J * hopping(basis, psi).real)
                     + densities(basis, psi) @ lattice.D)
    if observable == "E_ia":
        return float(0.5 * pair_occupation(basis, psi) @ lattice.U)
    if observable == "E_trap":
        return float(densities(basis, psi) @ lattice.V) if trap_on else 0.0
    raise ConfigError(f"unknown observable {observable!r}")


def condensate_vector(basis: FockBasis, orbital) -> np.ndarray:
    """(sum_j c_j a+_j)^N |0> / sqrt(N!) in the sector basis, built by brute force."""
    c = np.asarray(orbital, dtype=complex)
    out = np.zeros(basis.dim, dtype=complex)
    # multinomial expansion: coefficient sqrt(N!) prod c_j^n_j / sqrt(n_j!)
    for k, occ in enumerate(basis.states):
        amp = np.sqrt(float(factorial(basis.N)))
        for cj, n in zip(c, occ):
            amp *= cj**n / np.sqrt(float(factorial(n)))
        out[k] = amp
    return out


def expm_dense(H, t):
    return scipy.linalg.expm(-1j * H * t)


__all__ = [
    "FockBasis", "dense_hamiltonian", "ground_state", "propagate", "measure", "densities",
    "pair_occupation", "density_density", "hopping", "condensate_vector", "expm_dense",
]

