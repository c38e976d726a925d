"""Observables on MPS snapshots and analysis of their time series.

Local and non-local g2, energy bookkeeping, the kinetic-energy estimate of
g2, power-law fits of the local decay, steady-state extraction and tracking
of the outward-moving correlation maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from bosequench.errors import (ConfigError, FitDomainError, FrontNotFound,
                               InconsistentEnergyBudget)
from bosequench.grid import ContinuumParams, LatticeSpec
from bosequench.mps import MpsState, correlation_row, expectation_one_site, expectation_two_site, local_profile
from bosequench.tebd import boson_ops

DENSITY_FLOOR = 1e-12
DEFAULT_FIT_WINDOW = (0.05, 0.5)
STEADY_SLOPE = 0.05


@dataclass
class Energies:
    E_kin: float
    E_ia: float
    E_trap: float = 0.0

    @property
    def E_tot(self) -> float:
        return self.E_kin + self.E_ia + self.E_trap


def _ops(state):
    return boson_ops(state.phys_dims[0] - 1)


def g2(state: MpsState, lattice: LatticeSpec, i: int, j: int) -> Optional[float]:
    """Normalized pair correlation between sites i and j; None if either density vanishes."""
    a, n, pair = _ops(state)
    ni = expectation_one_site(state, i, n).real
    nj = ni if i == j else expectation_one_site(state, j, n).real
    if ni < DENSITY_FLOOR or nj < DENSITY_FLOOR:
        return None
    if i == j:
        return float(expectation_one_site(state, i, pair).real / ni**2)
    lo, hi = min(i, j), max(i, j)
    return float(expectation_two_site(state, lo, hi, n, n).real / (ni * nj))


def _energies_from_profile(prof, lattice, trap_on):
    dens = prof["n"].real
    E_kin = float(-2.0 * np.sum(lattice.J * prof["hop"].real) + dens @ lattice.D)
    E_ia = float(0.5 * prof["pair"].real @ lattice.U)
    E_trap = float(dens @ lattice.V) if trap_on else 0.0
    return Energies(E_kin, E_ia, E_trap)


def _profile(state):
    a, n, pair = _ops(state)
    return local_profile(state, {"n": n, "pair": pair}, {"hop": (a.T, a)})


def energies(state: MpsState, lattice: LatticeSpec, trap_on: bool = False) -> Energies:
    """Kinetic (hopping plus D), interaction and trap energy of a normalized state."""
    if state.L != lattice.sites:
        raise ConfigError("state and lattice lengths differ")
    return _energies_from_profile(_profile(state), lattice, trap_on)


def g2_from_kinetic(E_kin_final: float, p: ContinuumParams, E_kin_initial: float = 0.0,
                    rho: Optional[float] = None, g2_initial: float = 1.0, eps: float = 0.05,
                    rho_initial: Optional[float] = None) -> float:
    """g2 inferred from the kinetic energy gained after the quench.

    Homogeneous form 1 - 2 (E_kin - E_kin_initial) / (N gamma rho^2) with the
    peak density. For a trapped cloud pass ``rho`` = (integral of rho^2)/N and
    ``g2_initial`` = 1 - 1/N; the result is then the rho^2-weighted average.
    If the cloud spreads, give the pre-quench effective density as
    ``rho_initial``: the energy balance then reads
    g2 rho = g2_initial rho_initial - 2 dE_kin / (N g).
    Values outside [-eps, 1 + eps] raise InconsistentEnergyBudget.
    """
    if p.g <= 0:
        raise ConfigError("estimator needs g > 0")
    dens = p.rho_peak if rho is None else float(rho)
    dens0 = dens if rho_initial is None else float(rho_initial)
    val = (g2_initial * dens0 - 2.0 * (E_kin_final - E_kin_initial) / (p.N * p.g)) / dens
    if not -eps <= val <= 1.0 + eps:
        raise InconsistentEnergyBudget(f"kinetic-energy estimate of g2 is {val:.4g}")
    return float(val)


def effective_density(lattice: LatticeSpec, occupations) -> float:
    """(sum_j rho_j^2 dx_j) / N for site occupations n_j, with rho_j = n_j / dx_j."""
    occ = np.asarray(occupations, dtype=float)
    return float(np.sum(occ**2 / lattice.dx) / occ.sum())


def trap_average_g2(occupations, pair, dx) -> float:
    """rho^2-weighted average of the local g2_j; equals E_ia / ((g/2) sum rho^2 dx)."""
    occ = np.asarray(occupations, dtype=float)
    return float(np.sum(np.asarray(pair) / dx) / np.sum(occ**2 / dx))


# ---------------------------------------------------------------------------
# snapshots


@dataclass
class ObservableSeries:
    """Time-stamped records collected during one run.

    ``g2_nonlocal[k, m]`` is g2 between the centre site and the site at
    distance ``distances[m]`` to its right at time ``times[k]``; m = 0 is the
    local value. ``density_profile`` holds rho_j = <n_j> / dx_j.
    """

    lattice: LatticeSpec = field(repr=False)
    t_ia: float = math.inf
    trap_on: bool = False
    times: list = field(default_factory=list)
    g2_local_center: list = field(default_factory=list)
    g2_trap_avg: list = field(default_factory=list)
    g2_nonlocal: list = field(default_factory=list)
    density_profile: list = field(default_factory=list)
    E_kin: list = field(default_factory=list)
    E_ia: list = field(default_factory=list)
    E_trap: list = field(default_factory=list)
    E_tot: list = field(default_factory=list)
    N_total: list = field(default_factory=list)
    trunc_err: list = field(default_factory=list)
    chi_max_reached: list = field(default_factory=list)

    @property
    def centre(self) -> int:
        return self.lattice.centre_site

    @property
    def distances(self) -> np.ndarray:
        c = self.centre
        return self.lattice.x[c:] - self.lattice.x[c]

    def record(self, t: float, state: MpsState, nonlocal_: bool = True):
        snap = measure_snapshot(state, self.lattice, self.trap_on, nonlocal_=nonlocal_)
        self.times.append(float(t))
        self.g2_local_center.append(snap["g2_00"])
        self.g2_trap_avg.append(snap["g2_trap_avg"])
        if nonlocal_:
            self.g2_nonlocal.append(snap["g2_0x"])
        self.density_profile.append(snap["density"])
        e = snap["energies"]
        self.E_kin.append(e.E_kin)
        self.E_ia.append(e.E_ia)
        self.E_trap.append(e.E_trap)
        self.E_tot.append(e.E_tot)
        self.N_total.append(snap["N"])
        self.trunc_err.append(state.trunc_error_acc)
        self.chi_max_reached.append(state.max_bond_dim)
        return snap

    def arrays(self, name):
        return np.asarray(getattr(self, name), dtype=float)


def measure_snapshot(state: MpsState, lattice: LatticeSpec, trap_on: bool = False,
                     nonlocal_: bool = True) -> dict:
    """Densities, energies, local and centre-referenced non-local g2 of one state."""
    a, n, pair = _ops(state)
    prof = local_profile(state, {"n": n, "pair": pair}, {"hop": (a.T, a)})
    occ = prof["n"].real
    pr = prof["pair"].real
    c = lattice.centre_site
    out = {
        "occupation": occ,
        "pair": pr,
        "density": occ / lattice.dx,
        "N": float(occ.sum()),
        "energies": _energies_from_profile(prof, lattice, trap_on),
        "g2_00": float(pr[c] / occ[c] ** 2) if occ[c] > DENSITY_FLOOR else math.nan,
        "g2_trap_avg": trap_average_g2(occ, pr, lattice.dx),
    }
    if nonlocal_:
        row = np.full(lattice.sites - c, math.nan)
        row[0] = out["g2_00"]
        if c < lattice.sites - 1:
            nn = correlation_row(state, c, n, n).real
            ok = (occ[c + 1:] > DENSITY_FLOOR) & (occ[c] > DENSITY_FLOOR)
            row[1:][ok] = nn[ok] / (occ[c] * occ[c + 1:][ok])
        out["g2_0x"] = row
    return out


# ---------------------------------------------------------------------------
# time-series analysis


@dataclass
class PowerLawFit:
    exponent: float
    stderr: float
    window_used: tuple
    points: int


def _loglog_slope(t, y):
    return float(np.polyfit(np.log(t), np.log(y), 1)[0])


def fit_power_law(times, values, window) -> PowerLawFit:
    """Slope of ln g2 against ln t inside ``window`` = (t_lo, t_hi).

    The error is the larger deviation of the slopes refitted on the two
    halves of the window (split at the geometric mean).
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    lo, hi = window
    m = (t >= lo) & (t <= hi) & (t > 0)
    if m.sum() < 10:
        raise FitDomainError(f"only {int(m.sum())} points inside window [{lo:.4g}, {hi:.4g}]")
    tw, yw = t[m], y[m]
    if np.any(~(yw > 0)):
        raise FitDomainError("non-positive g2 inside the fit window")
    slope = _loglog_slope(tw, yw)
    mid = math.sqrt(tw[0] * tw[-1])
    halves = [(tw <= mid), (tw >= mid)]
    devs = [abs(_loglog_slope(tw[h], yw[h]) - slope) for h in halves if h.sum() >= 3]
    err = max(devs) if devs else math.nan
    return PowerLawFit(exponent=slope, stderr=err, window_used=(float(tw[0]), float(tw[-1])),
                       points=int(m.sum()))


def fit_series(series: ObservableSeries, window=None) -> PowerLawFit:
    """Power-law fit of the centre g2; ``window`` in units of t_ia (default 0.05 to 0.5)."""
    w = DEFAULT_FIT_WINDOW if window is None else window
    if not math.isfinite(series.t_ia):
        raise FitDomainError("no interaction time scale (g = 0)")
    return fit_power_law(series.times, series.g2_local_center,
                         (w[0] * series.t_ia, w[1] * series.t_ia))


def steady_state(times, values, decades: float = 0.25):
    """Mean over the last ``decades`` of measurement times and half the range as error."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(t) == 0:
        raise ConfigError("empty series")
    m = t >= t[-1] * 10.0 ** (-decades)
    tail = y[m]
    return float(np.mean(tail)), float(0.5 * (np.max(tail) - np.min(tail)))


def log_derivative(times, values, half_width: float = 0.2):
    """Local slope d ln y / d ln t by least squares over |ln t' - ln t| <= half_width."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    ok = (t > 0) & (y > 0)
    lt, ly = np.log(t[ok]), np.log(y[ok])
    out = np.full(len(t), math.nan)
    idx = np.flatnonzero(ok)
    for k, (x0, i) in enumerate(zip(lt, idx)):
        m = np.abs(lt - x0) <= half_width
        if m.sum() >= 3 and np.ptp(lt[m]) > 0:
            out[i] = np.polyfit(lt[m], ly[m], 1)[0]
    return out


@dataclass
class SteadyCheck:
    steady: bool
    max_slope: float
    t_from: float
    slopes: np.ndarray = field(repr=False)


def steady_state_check(times, values, t_from: float, threshold: float = STEADY_SLOPE,
                       half_width: float = 0.2) -> SteadyCheck:
    """Whether |d ln g2 / d ln t| < threshold at every measurement time beyond ``t_from``."""
    t = np.asarray(times, dtype=float)
    slopes = log_derivative(t, values, half_width)
    m = t > t_from
    if not np.any(m):
        raise ConfigError(f"no measurement beyond t = {t_from:.4g}")
    s = slopes[m]
    if np.any(np.isnan(s)):
        return SteadyCheck(False, math.inf, t_from, slopes)
    worst = float(np.max(np.abs(s)))
    return SteadyCheck(worst < threshold, worst, t_from, slopes)


@dataclass
class FrontTrack:
    times: np.ndarray
    position: np.ndarray
    speed: np.ndarray

    def late_speed(self, fraction: float = 0.5) -> float:
        """Straight-line speed over the last ``fraction`` of tracked times."""
        ok = ~np.isnan(self.position)
        t, x = self.times[ok], self.position[ok]
        if len(t) < 2:
            raise FrontNotFound("fewer than two tracked front positions")
        m = t >= t[-1] - fraction * (t[-1] - t[0])
        if m.sum() < 2:
            m[-2:] = True
        return float(np.polyfit(t[m], x[m], 1)[0])


def _refine_peak(x, y, k):
    """Vertex of the parabola through the three points around index k."""
    x0, x1, x2 = x[k - 1], x[k], x[k + 1]
    y0, y1, y2 = y[k - 1], y[k], y[k + 1]
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    B = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / den
    if A >= 0:
        return float(x1)
    return float(np.clip(-B / (2 * A), x0, x2))


def correlation_front(times, distances, g2_rows, max_jump: Optional[float] = None) -> FrontTrack:
    """Position of the outward-moving maximum of g2(0, x; t) at every time.

    The first interior maximum found is the global one; later times follow
    the interior maximum closest to the previous position that does not move
    inwards by more than one grid spacing. Positions are refined by a
    parabola through the neighbouring points; speeds are finite differences.
    Times before any maximum exists get NaN.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(distances, dtype=float)
    G = np.asarray(g2_rows, dtype=float)
    if G.shape != (len(t), len(x)):
        raise ConfigError("g2 rows do not match times and distances")
    if len(t) < 3:
        raise ConfigError("front tracking needs at least three times")
    spacing = float(np.min(np.diff(x)))
    pos = np.full(len(t), math.nan)
    prev = None
    for k in range(len(t)):
        y = G[k]
        inner = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]) & np.isfinite(y[1:-1])) + 1
        if len(inner) == 0:
            continue
        if prev is None:
            best = inner[np.argmax(y[inner])]
        else:
            cand = inner[x[inner] >= prev - spacing]
            if max_jump is not None:
                cand = cand[np.abs(x[cand] - prev) <= max_jump]
            if len(cand) == 0:
                continue
            best = cand[np.argmin(np.abs(x[cand] - prev))]
        pos[k] = _refine_peak(x, y, best)
        prev = pos[k]
    if np.all(np.isnan(pos)):
        raise FrontNotFound("no interior maximum of g2(0, x) at any time")
    speed = np.full(len(t), math.nan)
    ok = np.flatnonzero(~np.isnan(pos))
    if len(ok) >= 2:
        speed[ok] = np.gradient(pos[ok], t[ok])
    return FrontTrack(times=t, position=pos, speed=speed)


def light_cone_leak(distances, g2_row, g2_row_initial, density, dx, t: float, velocity: float) -> float:
    """Share of the correlation change |g2(0,x;t) - g2(0,x;0)| rho dx lying beyond x = velocity * t."""
    x = np.asarray(distances, dtype=float)
    w = np.abs(np.asarray(g2_row) - np.asarray(g2_row_initial)) * np.asarray(density) * np.asarray(dx)
    w = np.where(np.isfinite(w), w, 0.0)
    total = w.sum()
    if total == 0:
        return 0.0
    return float(w[x > velocity * t].sum() / total)


def correlation_sum(distances, g2_row, g2_row_initial, density, dx, reach: Optional[float] = None) -> float:
    """sum_x [g2(0,x;t) - g2(0,x;0)] rho(x) dx over 0 < x <= reach, relative to the local deficit.

    The local deficit is [g2(0,0;0) - g2(0,0;t)] rho(0) dx(0).
    """
    x = np.asarray(distances, dtype=float)
    d = (np.asarray(g2_row) - np.asarray(g2_row_initial)) * np.asarray(density) * np.asarray(dx)
    m = (x > 0) & np.isfinite(d)
    if reach is not None:
        m &= x <= reach
    deficit = -d[0]
    if deficit == 0:
        return 0.0
    return float(d[m].sum() / deficit)
