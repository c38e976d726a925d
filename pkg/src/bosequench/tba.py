"""Yang-Yang thermodynamics of the Lieb-Liniger gas.

Solves the coupled equations for the dressed energy eps(lambda) and the
rapidity density n(lambda) on a Gauss-Legendre grid, inverts (rho, E/N) to
(T, mu), and evaluates g2(0) of the thermal state through the derivative of
the free energy per particle with respect to gamma at fixed density and
temperature.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from bosequench.errors import (ConfigError, NoSolution, QuadratureTooCoarse, SolverDiverged)

logger = logging.getLogger(__name__)

TAIL = 1e-14          # e^{-eps/T} required at the cutoff
TAIL_SIGMAS = -math.log(TAIL)
N_NEG_TOL = 1e-12
MAX_NODES = 6400


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature and solver settings.

    ``Lambda=None`` picks the cutoff from T and mu and extends it until the
    occupation factor at the edge is below 1e-14. ``check_doubling`` re-solves
    with twice the nodes and doubles until rho, e and f agree to
    ``doubling_tol``.
    """

    nodes: int = 200
    Lambda: Optional[float] = None
    tol: float = 1e-12
    max_iter: int = 2000
    check_doubling: bool = True
    doubling_tol: float = 1e-8


@dataclass
class TbaSolution:
    lam: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    epsilon: np.ndarray = field(repr=False)
    n: np.ndarray = field(repr=False)
    g: float
    T: float
    mu: float
    rho: float
    e_per_particle: float
    f: float
    pressure: float
    Lambda: float
    nodes: int
    eps_residual: float
    n_residual: float
    iterations: int

    @property
    def gamma(self) -> float:
        return self.g / self.rho

    @property
    def tau(self) -> float:
        return self.T / (self.rho**2 / 2.0)


def kernel(lam, xi, g):
    """2g / (g^2 + (lambda - xi)^2)."""
    return 2.0 * g / (g**2 + (np.subtract.outer(lam, xi)) ** 2)


def _initial_cutoff(T, mu):
    return math.sqrt(2.0 * max(mu, 0.0) + 2.0 * TAIL_SIGMAS * T) * 1.1


def _solve_eps(lam, w, Kw, T, mu, tol, max_iter, eps0=None):
    """Fixed point with damping on oscillation, then Newton polishing."""
    free = 0.5 * lam**2 - mu
    eps = free.copy() if eps0 is None else eps0.copy()
    scale = max(T, abs(mu), 1.0)
    history = []
    damp = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        new = free - T / (2 * np.pi) * (Kw @ np.logaddexp(0.0, -eps / T))
        change = float(np.max(np.abs(new - eps)))
        history.append(change)
        if len(history) > 2 and history[-1] > history[-2]:
            damp = 0.5
        eps = eps + damp * (new - eps)
        if change < tol * scale:
            return eps, it, history
        # slow contraction: switch to Newton
        if it >= 30 and change > 0.5 * history[-10]:
            break
    for k in range(50):
        occ = expit(-eps / T)
        F = eps - free + T / (2 * np.pi) * (Kw @ np.logaddexp(0.0, -eps / T))
        jac = np.eye(len(lam)) - (Kw * occ[None, :]) / (2 * np.pi)
        step = np.linalg.solve(jac, F)
        eps = eps - step
        change = float(np.max(np.abs(step)))
        history.append(change)
        if change < tol * scale:
            return eps, it + k + 1, history
    raise SolverDiverged("epsilon iteration did not converge", history=history)


def _solve_once(g, T, mu, nodes, Lambda, quad):
    x, w = np.polynomial.legendre.leggauss(nodes)
    lam = Lambda * x
    w = Lambda * w
    K = kernel(lam, lam, g)
    if not np.allclose(K, K.T, rtol=0, atol=1e-14 * np.max(K)):
        raise ConfigError("kernel is not symmetric")
    Kw = K * w[None, :]
    eps, iters, hist = _solve_eps(lam, w, Kw, T, mu, quad.tol, quad.max_iter)
    occ = expit(-eps / T)
    # 2 pi n (1 + e^{eps/T}) = 1 + int K n
    A = np.eye(nodes) - (occ[:, None] / (2 * np.pi)) * Kw
    n = np.linalg.solve(A, occ / (2 * np.pi))
    if np.min(n) < -N_NEG_TOL:
        raise QuadratureTooCoarse(f"negative rapidity density {np.min(n):.3e}")
    n_res = float(np.max(np.abs(2 * np.pi * n * (1 + np.exp(np.minimum(eps / T, 700)))
                                - 1 - Kw @ n) * occ))
    eps_res = float(np.max(np.abs(eps - 0.5 * lam**2 + mu
                                  + T / (2 * np.pi) * (Kw @ np.logaddexp(0.0, -eps / T)))))
    rho = float(w @ n)
    P = float(T / (2 * np.pi) * (w @ np.logaddexp(0.0, -eps / T)))
    e = float(w @ (0.5 * lam**2 * n)) / rho if rho > 0 else math.nan
    f = mu - P / rho if rho > 0 else math.nan
    return TbaSolution(lam=lam, weights=w, epsilon=eps, n=n, g=float(g), T=float(T), mu=float(mu),
                       rho=rho, e_per_particle=e, f=f, pressure=P, Lambda=float(Lambda),
                       nodes=nodes, eps_residual=eps_res, n_residual=n_res, iterations=iters)


def _solve_cutoff(g, T, mu, nodes, quad):
    Lambda = quad.Lambda if quad.Lambda is not None else _initial_cutoff(T, mu)
    for _ in range(40):
        sol = _solve_once(g, T, mu, nodes, Lambda, quad)
        edge = float(np.min(sol.epsilon[[0, -1]]))
        if edge / T > TAIL_SIGMAS:
            return sol
        Lambda *= 1.25
    raise SolverDiverged("cutoff extension did not reach the occupation tail")


def solve_tba(g: float, T: float, mu: float, quad: QuadSpec = QuadSpec()) -> TbaSolution:
    """Dressed energy and rapidity density at coupling g, temperature T and chemical potential mu."""
    if not g > 0:
        raise ConfigError(f"g must be positive, got {g}")
    if not T > 0:
        raise ConfigError(f"T must be positive, got {T}")
    nodes = quad.nodes
    sol = _solve_cutoff(g, T, mu, nodes, quad)
    if not quad.check_doubling:
        return sol
    while True:
        if 2 * nodes > MAX_NODES:
            raise QuadratureTooCoarse(f"no agreement under node doubling up to {nodes} nodes")
        fine = _solve_cutoff(g, T, mu, 2 * nodes, replace(quad, Lambda=sol.Lambda))
        if _agree(sol, fine, quad.doubling_tol):
            return sol
        logger.info("doubling TBA nodes to %d", 2 * nodes)
        nodes *= 2
        sol = fine


def _agree(a, b, tol):
    for k in ("rho", "e_per_particle", "f"):
        x, y = getattr(a, k), getattr(b, k)
        if abs(x - y) > tol * max(abs(y), 1e-300):
            return False
    return True


# ---------------------------------------------------------------------------
# inversion


def _no_check(quad):
    return replace(quad, check_doubling=False)


def mu_for_density(g: float, T: float, rho_target: float, quad: QuadSpec = QuadSpec(),
                   rtol: float = 1e-13) -> TbaSolution:
    """Chemical potential giving density ``rho_target`` at (g, T)."""
    if not rho_target > 0:
        raise ConfigError("target density must be positive")
    q = _no_check(quad)
    cache = {}

    def rho_of(mu):
        if mu not in cache:
            cache[mu] = solve_tba(g, T, mu, q)
        return cache[mu].rho

    # bracket: the free-fermion chemical potential is a good centre
    mu0 = 0.5 * (math.pi * rho_target) ** 2
    step = max(T, mu0, 1e-3)
    lo, hi = mu0 - step, mu0 + step
    for _ in range(200):
        if rho_of(lo) < rho_target:
            break
        lo -= step
        step *= 2
    else:
        raise SolverDiverged("could not bracket the chemical potential from below")
    step = max(T, mu0, 1e-3)
    for _ in range(200):
        if rho_of(hi) > rho_target:
            break
        hi += step
        step *= 2
    else:
        raise SolverDiverged("could not bracket the chemical potential from above")
    if not rho_of(hi) > rho_of(lo):
        raise SolverDiverged("density is not increasing in the chemical potential")
    mu = brentq(lambda m: rho_of(m) / rho_target - 1.0, lo, hi, xtol=1e-15 * max(1.0, abs(mu0)),
                rtol=4 * np.finfo(float).eps, maxiter=500)
    sol = solve_tba(g, T, mu, q)
    if abs(sol.rho / rho_target - 1) > max(rtol, 1e-10):
        raise SolverDiverged(f"density inversion stalled at relative error {sol.rho / rho_target - 1:.2e}")
    return sol


def invert_to_T_mu(g: float, rho_target: float, e_target: float, quad: QuadSpec = QuadSpec(),
                   rtol: float = 1e-8) -> TbaSolution:
    """Thermal state with density ``rho_target`` and energy per particle ``e_target``.

    Nested root search: the chemical potential is tuned for the density at
    every trial temperature, the temperature for the energy.
    """
    if not rho_target > 0:
        raise ConfigError("target density must be positive")
    Tc = rho_target**2 / 2.0
    cache = {}

    def e_of(logT):
        if logT not in cache:
            cache[logT] = mu_for_density(g, math.exp(logT), rho_target, quad)
        return cache[logT].e_per_particle

    lo = math.log(1e-3 * Tc)
    if e_of(lo) > e_target:
        lo2 = math.log(1e-4 * Tc)
        if e_of(lo2) > e_target:
            raise NoSolution(
                f"energy per particle {e_target:.6g} is below the reachable range "
                f"(e = {e_of(lo2):.6g} at T = 1e-4 T_c)")
        lo = lo2
    hi = math.log(max(e_target, Tc))
    for _ in range(100):
        if e_of(hi) > e_target:
            break
        hi += math.log(4.0)
    else:
        raise SolverDiverged("could not bracket the temperature")
    logT = brentq(lambda lt: e_of(lt) / e_target - 1.0, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=300)
    sol = mu_for_density(g, math.exp(logT), rho_target, quad)
    if quad.check_doubling:
        sol = solve_tba(g, sol.T, sol.mu, quad)
    if abs(sol.e_per_particle / e_target - 1) > rtol or abs(sol.rho / rho_target - 1) > rtol:
        raise SolverDiverged("temperature inversion did not reach the requested tolerance")
    return sol


# ---------------------------------------------------------------------------
# correlations


def free_energy(gamma: float, rho: float, T: float, quad: QuadSpec = QuadSpec()) -> float:
    """Free energy per particle at fixed density and temperature."""
    return mu_for_density(gamma * rho, T, rho, quad).f


def g2_yy(g: float, rho: float, T: float, quad: QuadSpec = QuadSpec(), rel_step: float = 1e-3,
          details: bool = False):
    """Local g2 of the thermal state: (2 / rho^2) df/dgamma at fixed (rho, T).

    Central differences with steps h and h/2 (h = rel_step * gamma),
    combined by one Richardson extrapolation. With ``details`` the two raw
    estimates are returned as well.
    """
    gamma = g / rho
    h = rel_step * gamma

    def central(step):
        return (free_energy(gamma + step, rho, T, quad) - free_energy(gamma - step, rho, T, quad)) / (2 * step)

    d1, d2 = central(h), central(h / 2)
    deriv = (4 * d2 - d1) / 3
    val = 2.0 / rho**2 * deriv
    if details:
        return val, 2.0 / rho**2 * d1, 2.0 / rho**2 * d2
    return val


def g2_asymptotic(gamma: float, tau: float) -> float:
    """2 tau / gamma^2, the 1 << tau << gamma^2 limit."""
    return 2.0 * tau / gamma**2


def thermal_wavelength(rho: float, tau: float) -> float:
    return math.sqrt(4 * math.pi / (tau * rho**2))


def g2_thermal_nonlocal(x, rho: float, tau: float, gamma: float, warn: bool = True):
    """Non-local g2(0, x) of the thermal state in the 1 << tau << gamma^2 regime.

    Outside that regime a RuntimeWarning is issued; the formula is still
    evaluated. At x = 0 it gives 0 rather than 2 tau / gamma^2.
    """
    if warn and not 1.0 < tau < gamma**2:
        warnings.warn(f"tau={tau:.3g}, gamma={gamma:.3g} outside 1 << tau << gamma^2",
                      RuntimeWarning, stacklevel=2)
    lt = thermal_wavelength(rho, tau)
    r = np.asarray(x, dtype=float) / lt
    return 1.0 - (1.0 - 4.0 * math.sqrt(math.pi * tau / gamma**2) * r) * np.exp(-2 * math.pi * r**2)


def quench_energy(gamma: float, rho: float, N: Optional[int] = None) -> float:
    """Energy per particle right after the quench, gamma T_c (1 - 1/N)."""
    e = gamma * rho**2 / 2.0
    return e * (1.0 - 1.0 / N) if N else e


@dataclass
class TbaRow:
    gamma: float
    tau: float
    T: float
    mu: float
    rho: float
    e_per_particle: float
    f: float
    g2_yy: float
    residuals: float


def thermal_row(gamma: float, rho: float, e_target: float, quad: QuadSpec = QuadSpec()) -> TbaRow:
    """Invert the energy and evaluate g2 of the matching thermal state."""
    sol = invert_to_T_mu(gamma * rho, rho, e_target, quad)
    g2 = g2_yy(gamma * rho, rho, sol.T, quad)
    return TbaRow(gamma=gamma, tau=sol.tau, T=sol.T, mu=sol.mu, rho=sol.rho,
                  e_per_particle=sol.e_per_particle, f=sol.f, g2_yy=g2,
                  residuals=max(sol.eps_residual, sol.n_residual))
