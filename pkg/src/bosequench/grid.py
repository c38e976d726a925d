"""Continuum Lieb-Liniger parameters and their Bose-Hubbard discretization.

Units are hbar = m = k_B = 1 throughout. The trap is V(x) = omega^2 x^2 / 2,
centred at x = 0, and the reference density is the peak density of the
non-interacting trap ground state, rho(0) = N sqrt(omega / pi).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from bosequench.errors import ConfigError

MIN_EXTENT_LOSC = 6.0
DEFAULT_EXTENT_LOSC = 8.0
GRID_QUALITY_WARN = 0.5


@dataclass(frozen=True)
class ContinuumParams:
    """Interaction strength ``g``, particle number ``N`` and trap frequency ``omega``."""

    g: float
    N: int
    omega: float = 1.0

    def __post_init__(self):
        if not self.g >= 0:
            raise ConfigError(f"g must be >= 0, got {self.g}")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        if not self.omega > 0:
            raise ConfigError(f"omega must be > 0, got {self.omega}")

    @classmethod
    def from_gamma(cls, gamma: float, N: int, omega: float = 1.0) -> "ContinuumParams":
        rho = N * math.sqrt(omega / math.pi)
        return cls(g=gamma * rho, N=N, omega=omega)

    @property
    def rho_peak(self) -> float:
        return self.N * math.sqrt(self.omega / math.pi)

    @property
    def l_osc(self) -> float:
        return 1.0 / math.sqrt(self.omega)

    def density(self, x):
        """Gaussian density of the non-interacting trap ground state."""
        x = np.asarray(x, dtype=float)
        return self.rho_peak * np.exp(-self.omega * x**2)

    def gamma(self) -> float:
        return self.g / self.rho_peak

    def t_ia(self) -> float:
        """Interaction time 1/(gamma rho^2); infinite for g = 0."""
        if self.g == 0:
            return math.inf
        return 1.0 / (self.gamma() * self.rho_peak**2)


@dataclass(frozen=True)
class Uniform:
    """Uniform grid of ``L`` sites spanning ``extent`` (in units of length).

    ``extent=None`` means the default of 8 oscillator lengths.
    """

    L: int
    extent: Optional[float] = None

    @classmethod
    def from_occupation(cls, p: ContinuumParams, occupation_gamma: float,
                        extent: Optional[float] = None) -> "Uniform":
        """Smallest odd ``L`` with peak occupation times gamma below ``occupation_gamma``."""
        if occupation_gamma <= 0 or p.g <= 0:
            raise ConfigError("occupation_gamma and g must be positive")
        ext = extent if extent is not None else DEFAULT_EXTENT_LOSC * p.l_osc
        dx_max = occupation_gamma / (p.gamma() * p.rho_peak)
        L = int(math.ceil(ext / dx_max))
        if L % 2 == 0:
            L += 1
        return cls(L=L, extent=ext)


@dataclass(frozen=True)
class AdaptiveDensity:
    """Grid with roughly constant occupation ``target`` per site near the centre.

    The spacing follows target / rho(x) until it reaches ``dx_edge``, after
    which it stays at ``dx_edge``. ``dx_edge=None`` selects 0.1 l_osc.
    """

    target: float
    extent: Optional[float] = None
    dx_edge: Optional[float] = None


GridPolicy = Union[Uniform, AdaptiveDensity]


@dataclass(frozen=True, eq=False)
class LatticeSpec:
    """Bose-Hubbard chain: per-site spacing, couplings and coordinates.

    ``J`` has one entry per bond (L - 1); every other array has one entry
    per site. ``g`` and ``omega`` are kept so the lattice can rebuild its
    own trap and interaction terms.
    """

    x: np.ndarray
    dx: np.ndarray
    J: np.ndarray
    U: np.ndarray
    D: np.ndarray
    V: np.ndarray
    g: float
    omega: float
    uniform: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        L = len(self.x)
        for name in ("dx", "U", "D", "V"):
            if len(getattr(self, name)) != L:
                raise ConfigError(f"{name} must have length L={L}")
        if len(self.J) != L - 1:
            raise ConfigError("J must have length L-1")
        if np.any(self.dx <= 0) or np.any(self.J <= 0) or np.any(self.D <= 0):
            raise ConfigError("dx, J and D must be positive")
        if np.any(self.U < 0):
            raise ConfigError("U must be non-negative")
        if L > 1 and np.any(np.diff(self.x) <= 0):
            raise ConfigError("site coordinates must be strictly increasing")
        for name in ("x", "dx", "J", "U", "D", "V"):
            getattr(self, name).setflags(write=False)

    @property
    def sites(self) -> int:
        return len(self.x)

    @property
    def centre_site(self) -> int:
        return int(np.argmin(np.abs(self.x)))

    def with_interaction(self, g: float) -> "LatticeSpec":
        """Same grid with U_j = g / dx_j."""
        U = g / self.dx
        return LatticeSpec(x=self.x.copy(), dx=self.dx.copy(), J=self.J.copy(), U=U,
                           D=self.D.copy(), V=self.V.copy(), g=float(g),
                           omega=self.omega, uniform=self.uniform, meta=dict(self.meta))

    def grid_quality(self, p: ContinuumParams, warn: bool = True) -> float:
        """Largest initial occupation times gamma over the central sites."""
        occ = p.density(self.x) * self.dx
        centre = np.abs(self.x) <= 0.5 * p.l_osc
        if not np.any(centre):
            centre = np.ones_like(occ, dtype=bool)
        q = float(np.max(occ[centre]) * p.gamma())
        if warn and q > GRID_QUALITY_WARN:
            warnings.warn(f"coarse grid: <n> gamma = {q:.3g} at the cloud centre", stacklevel=2)
        return q


def _uniform_positions(L, extent):
    dx = extent / L
    x = (np.arange(L) - (L - 1) / 2.0) * dx
    return x, np.full(L, dx)


def _adaptive_positions(p, policy, extent):
    if policy.target <= 0:
        raise ConfigError("adaptive target occupation must be positive")
    dx_centre = policy.target / p.rho_peak
    dx_edge = policy.dx_edge if policy.dx_edge is not None else 0.1 * p.l_osc
    dx_edge = max(dx_edge, dx_centre)

    def width(xc):
        return min(policy.target / float(p.density(xc)), dx_edge)

    half = extent / 2.0
    centres, widths = [0.0], [dx_centre]
    edge = dx_centre / 2.0
    while edge < half:
        w = width(edge)
        for _ in range(4):
            w = width(edge + w / 2.0)
        centres.append(edge + w / 2.0)
        widths.append(w)
        edge += w
    c = np.array(centres)
    w = np.array(widths)
    x = np.concatenate([-c[:0:-1], c])
    dx = np.concatenate([w[:0:-1], w])
    return x, dx


def build_lattice(p: ContinuumParams, grid: GridPolicy) -> LatticeSpec:
    """Discretize the trapped continuum problem on the requested grid."""
    extent = grid.extent if grid.extent is not None else DEFAULT_EXTENT_LOSC * p.l_osc
    if extent < MIN_EXTENT_LOSC * p.l_osc * (1 - 1e-12):
        raise ConfigError(
            f"extent {extent:.4g} is below {MIN_EXTENT_LOSC:g} oscillator lengths "
            f"({MIN_EXTENT_LOSC * p.l_osc:.4g})")
    if isinstance(grid, Uniform):
        if grid.L < 4:
            raise ConfigError(f"need at least 4 sites, got L={grid.L}")
        x, dx = _uniform_positions(int(grid.L), extent)
        uniform = True
    elif isinstance(grid, AdaptiveDensity):
        x, dx = _adaptive_positions(p, grid, extent)
        if len(x) < 4:
            raise ConfigError(f"adaptive grid produced only {len(x)} sites")
        uniform = bool(np.allclose(dx, dx[0], rtol=1e-12, atol=0))
    else:
        raise ConfigError(f"unknown grid policy {grid!r}")

    J = 1.0 / (2.0 * dx[:-1] * dx[1:])
    D = 1.0 / dx**2
    U = p.g / dx
    V = 0.5 * p.omega**2 * x**2
    return LatticeSpec(x=x, dx=dx, J=J, U=U, D=D, V=V, g=float(p.g), omega=float(p.omega),
                       uniform=uniform, meta={"extent": float(extent)})


def lattice_from_couplings(L, J, U, D, V=None, dx=None, g=None, omega=1.0) -> LatticeSpec:
    """Lattice with explicitly given couplings (for lattice-model tests).

    Scalars broadcast over the ``L`` sites; ``dx`` defaults to 1.
    """
    U = np.broadcast_to(np.asarray(U, dtype=float), (L,)).copy()
    J = np.broadcast_to(np.asarray(J, dtype=float), (L - 1,)).copy()
    D = np.broadcast_to(np.asarray(D, dtype=float), (L,)).copy()
    V = np.zeros(L) if V is None else np.broadcast_to(np.asarray(V, dtype=float), (L,)).copy()
    dx = np.ones(L) if dx is None else np.broadcast_to(np.asarray(dx, dtype=float), (L,)).copy()
    x = np.cumsum(dx) - dx / 2 - dx.sum() / 2
    return LatticeSpec(x=x, dx=dx, J=J, U=U.copy(), D=D, V=V,
                       g=float(g if g is not None else U[0] * dx[0]), omega=float(omega),
                       uniform=bool(np.allclose(dx, dx[0])))


@dataclass(frozen=True)
class Scales:
    gamma: float
    rho: float
    l_osc: float
    t_ia: float
    t_osc: float
    T_c: float
    v_F: float
    v_s: Optional[float]


def characteristic_scales(p: ContinuumParams) -> Scales:
    """Dimensionless coupling and the time, temperature and velocity scales.

    All scales use the peak density. The sound velocity v_F (1 - 4/gamma)
    is the large-gamma form and is reported only for gamma > 4.
    """
    rho = p.rho_peak
    gamma = p.gamma()
    v_F = math.pi * rho
    return Scales(
        gamma=gamma,
        rho=rho,
        l_osc=p.l_osc,
        t_ia=p.t_ia(),
        t_osc=2.0 * math.pi / p.omega,
        T_c=rho**2 / 2.0,
        v_F=v_F,
        v_s=v_F * (1.0 - 4.0 / gamma) if gamma > 4 else None,
    )
