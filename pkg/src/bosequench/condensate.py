"""Exact MPS for N non-interacting bosons in one orbital.

The state (sum_j c_j a+_j)^N |0> / sqrt(N!) has an MPS whose bond index counts
the particles already placed to the left: placing n particles on site j maps
count a to a + n with weight c_j^n / sqrt(n!).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson

from bosequench.errors import ConfigError
from bosequench.grid import ContinuumParams, LatticeSpec
from bosequench.mps import DEFAULT_SVD_CUTOFF, MpsState, canonicalize, overlap

N_MAX_FLOOR = 4
N_MAX_CAP = 8
NORM_LOSS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CondensateSpec:
    N: int
    orbital: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.orbital, dtype=complex)
        if abs(np.vdot(c, c).real - 1.0) > 1e-12:
            raise ConfigError("orbital must be normalized")
        if self.N < 1:
            raise ConfigError("need at least one particle")

    @classmethod
    def from_trap(cls, p: ContinuumParams, lattice: LatticeSpec) -> "CondensateSpec":
        """Gaussian trap ground state sampled on the grid, c_j = phi(x_j) sqrt(dx_j)."""
        phi = np.exp(-0.5 * p.omega * lattice.x**2)
        c = phi * np.sqrt(lattice.dx)
        c = c / np.linalg.norm(c)
        return cls(N=p.N, orbital=c)


def default_n_max(N: int, orbital, tail: float = 1e-10, floor: int = N_MAX_FLOOR,
                  cap: int = N_MAX_CAP) -> int:
    """Smallest cutoff whose Poisson tail at the densest site is below ``tail``."""
    lam = N * float(np.max(np.abs(orbital) ** 2))
    n = 0
    while poisson.sf(n, lam) >= tail and n < N:
        n += 1
    return int(min(max(n, floor), cap, N))


def _raw_tensors(N, c, n_max):
    L = len(c)
    ns = np.arange(n_max + 1)
    fact = np.array([math.sqrt(math.factorial(k)) for k in ns])
    # feasible particle counts left of each bond
    lo = [max(0, N - (L - k) * n_max) for k in range(L + 1)]
    hi = [min(N, k * n_max) for k in range(L + 1)]
    charges = [np.arange(lo[k], hi[k] + 1) for k in range(L + 1)]
    tensors = []
    for j in range(L):
        ql, qr = charges[j], charges[j + 1]
        t = np.zeros((len(ql), n_max + 1, len(qr)), dtype=complex)
        w = c[j] ** ns / fact
        for ia, a in enumerate(ql):
            for n in ns:
                b = a + n
                if qr[0] <= b <= qr[-1]:
                    t[ia, n, b - qr[0]] = w[n]
        tensors.append(t)
    return tensors, charges


def build_condensate_mps(spec: CondensateSpec, lattice: LatticeSpec, n_max=None,
                         chi_max: int = 64, svd_cutoff: float = DEFAULT_SVD_CUTOFF) -> MpsState:
    """Condensate MPS in canonical form (centre on site 0) with unit norm.

    Raises ConfigError when the occupation cutoff drops more than 1e-10 of
    the norm; the message names the smallest sufficient ``n_max``.
    """
    c = np.asarray(spec.orbital, dtype=complex)
    if len(c) != lattice.sites:
        raise ConfigError("orbital length does not match the lattice")
    if n_max is None:
        # the per-site tail rule can fall short of the total-norm check on wide clouds
        n_max = default_n_max(spec.N, c)
        while n_max < min(spec.N, N_MAX_CAP) and norm_loss(spec.N, c, n_max) > NORM_LOSS_TOL:
            n_max += 1
    if spec.N > n_max * lattice.sites:
        raise ConfigError(f"{spec.N} particles do not fit with n_max={n_max}")
    loss = norm_loss(spec.N, c, n_max)
    if loss > NORM_LOSS_TOL:
        need = n_max
        while need < spec.N and norm_loss(spec.N, c, need) > NORM_LOSS_TOL:
            need += 1
        raise ConfigError(
            f"n_max={n_max} loses {loss:.2e} of the norm; use n_max >= {need}")
    tensors, charges = _raw_tensors(spec.N, c, n_max)
    st = MpsState(tensors, chi_max=max(chi_max, spec.N + 1), svd_cutoff=svd_cutoff,
                  charges=charges)
    canonicalize(st, 0, inplace=True)
    st.normalize()
    return st


def norm_loss(N: int, orbital, n_max: int) -> float:
    """Weight of the condensate outside the n_j <= n_max space."""
    tensors, charges = _raw_tensors(N, np.asarray(orbital, dtype=complex), n_max)
    st = MpsState(tensors, charges=charges)
    kept = overlap(st, st).real * math.factorial(N)
    return max(0.0, 1.0 - kept)
