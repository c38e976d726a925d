"""Second-order Trotter (TEBD) real-time evolution on the Bose-Hubbard chain.

One step is exp(-i H_even dt/2) exp(-i H_odd dt) exp(-i H_even dt/2). Between
two measurement points the trailing and leading half steps on the even bonds
are merged into one full step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from bosequench.errors import ConfigError, InvariantViolation, TruncationBudgetExceeded
from bosequench.grid import LatticeSpec
from bosequench.mps import MpsState, apply_gate_schmidt, to_schmidt_form

logger = logging.getLogger(__name__)

DEFAULT_SNAPSHOTS = 200


def boson_ops(n_max: int):
    """Annihilator, number operator and n(n-1) for a site truncated at ``n_max``."""
    d = n_max + 1
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1)
    n = np.diag(np.arange(d, dtype=float))
    pair = np.diag(np.arange(d, dtype=float) * (np.arange(d) - 1))
    return a, n, pair


def site_weights(L: int) -> np.ndarray:
    """Share of each site's on-site terms given to (left bond, right bond)."""
    w = np.full((L, 2), 0.5)
    w[0] = (0.0, 1.0)
    w[-1] = (1.0, 0.0)
    if L == 1:
        w[0] = (0.0, 0.0)
    return w


def _onsite(lattice, j, n, pair, trap_on):
    mu = lattice.D[j] + (lattice.V[j] if trap_on else 0.0)
    return 0.5 * lattice.U[j] * pair + mu * n


def build_bond_hamiltonians(lattice: LatticeSpec, trap_on: bool = False, n_max: int = 4) -> list:
    """Two-site Hamiltonians whose sum is the full lattice Hamiltonian.

    Interior sites give half of their on-site terms to each adjacent bond,
    the two edge sites give all of it to their only bond.
    """
    L = lattice.sites
    if L < 2:
        raise ConfigError("need at least two sites")
    a, n, pair = boson_ops(n_max)
    eye = np.eye(n_max + 1)
    hop = np.kron(a.T, a) + np.kron(a, a.T)
    w = site_weights(L)
    if not np.allclose(w.sum(axis=1), 1.0):
        raise InvariantViolation("on-site weights do not sum to one")
    hams = []
    for b in range(L - 1):
        h = -lattice.J[b] * hop
        h = h + w[b, 1] * np.kron(_onsite(lattice, b, n, pair, trap_on), eye)
        h = h + w[b + 1, 0] * np.kron(eye, _onsite(lattice, b + 1, n, pair, trap_on))
        hams.append(h)
    return hams


def assemble_from_bonds(hams, d: int) -> np.ndarray:
    """Full-space matrix sum_b h_b (small chains only)."""
    L = len(hams) + 1
    H = np.zeros((d**L, d**L))
    for b, h in enumerate(hams):
        H += np.kron(np.kron(np.eye(d**b), h), np.eye(d ** (L - b - 2)))
    return H


def bond_gate(h, tau: float) -> np.ndarray:
    """exp(-i h tau) from the eigendecomposition of the Hermitian ``h``."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * tau)) @ v.conj().T


def default_dt(lattice: LatticeSpec, n_max: int) -> float:
    """Keeps hopping and interaction phases per step at or below 0.05 rad."""
    cands = [0.05 / float(np.max(lattice.J))]
    umax = float(np.max(lattice.U))
    if umax > 0:
        cands.append(0.05 / (umax * n_max))
    return min(cands)


def log_schedule(dt: float, t_final: float, t_first: float, count: int = DEFAULT_SNAPSHOTS):
    """Step indices at ``count`` log-spaced times in [t_first, t_final], plus step 0."""
    n_final = int(round(t_final / dt))
    if n_final < 1:
        raise ConfigError("t_final shorter than one time step")
    t_first = max(t_first, dt)
    times = np.geomspace(t_first, n_final * dt, count) if t_first < n_final * dt else [n_final * dt]
    steps = sorted({max(1, int(round(t / dt))) for t in times} | {n_final})
    return [0] + steps


@dataclass
class TrotterPlan:
    """Gates and measurement schedule for one quench run.

    ``gates_half[b]`` and ``gates_full[b]`` are exp(-i h_b dt/2) and
    exp(-i h_b dt) for every bond b; even bonds use both, odd bonds only the
    full step. ``measure_steps`` lists the step indices (starting with 0) at
    which the snapshot hook is called.
    """

    dt: float
    n_max: int
    n_steps: int
    measure_steps: list
    gates_half: list = field(repr=False)
    gates_full: list = field(repr=False)

    @property
    def t_final(self) -> float:
        return self.n_steps * self.dt

    @property
    def gates_half_even(self):
        return self.gates_half[0::2]

    @property
    def gates_odd(self):
        return self.gates_full[1::2]


def build_plan(lattice: LatticeSpec, n_max: int, t_final: float, dt: Optional[float] = None,
               trap_on: bool = False, measure_steps=None, measure_every: Optional[int] = None,
               t_first: Optional[float] = None, snapshots: int = DEFAULT_SNAPSHOTS) -> TrotterPlan:
    """Build gates from the post-quench lattice.

    Measurement times come from ``measure_steps``, else every
    ``measure_every`` steps, else ``snapshots`` log-spaced times starting at
    ``t_first``.
    """
    dt = default_dt(lattice, n_max) if dt is None else float(dt)
    if dt <= 0:
        raise ConfigError("dt must be positive")
    n_steps = int(round(t_final / dt))
    if n_steps < 1:
        raise ConfigError("t_final shorter than one time step")
    if abs(n_steps * dt - t_final) > 1e-9 * max(t_final, 1.0):
        logger.info("t_final rounded to %d steps (%.6g)", n_steps, n_steps * dt)
    if measure_steps is not None:
        steps = sorted({int(s) for s in measure_steps if 0 < s <= n_steps})
        steps = [0] + steps
    elif measure_every is not None:
        steps = list(range(0, n_steps + 1, int(measure_every)))
        if steps[-1] != n_steps:
            steps.append(n_steps)
    else:
        first = t_first if t_first is not None else 10 * dt
        steps = log_schedule(dt, n_steps * dt, first, snapshots)

    hams = build_bond_hamiltonians(lattice, trap_on=trap_on, n_max=n_max)
    cache = {}

    def gate(h, tau):
        key = (h.tobytes(), tau)
        g = cache.get(key)
        if g is None:
            g = cache[key] = bond_gate(h, tau)
        return g

    half = [gate(h, dt / 2) for h in hams]
    full = [gate(h, dt) for h in hams]
    d = n_max + 1
    ntot = (np.arange(d)[:, None] + np.arange(d)[None, :]).ravel()
    off = ntot[:, None] != ntot[None, :]
    for g in cache.values():
        if np.max(np.abs(g.conj().T @ g - np.eye(d * d))) > 1e-12:
            raise InvariantViolation("bond gate not unitary")
        if np.any(np.abs(g[off]) > 1e-13):
            raise InvariantViolation("bond gate does not conserve particle number")
    return TrotterPlan(dt=dt, n_max=n_max, n_steps=n_steps, measure_steps=steps,
                       gates_half=half, gates_full=full)


@dataclass
class EvolutionLog:
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    trunc_error: list = field(default_factory=list)
    max_bond: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def record(self, step, t, state, wall):
        self.steps.append(step)
        self.times.append(t)
        self.trunc_error.append(state.trunc_error_acc)
        self.max_bond.append(state.max_bond_dim)
        self.wall_time.append(wall)


def _layer(state, gates, parity):
    for b in range(parity, state.L - 1, 2):
        apply_gate_schmidt(state, b, gates[b])


def evolve(state: MpsState, plan: TrotterPlan,
           hook: Optional[Callable[[int, float, MpsState], None]] = None,
           budget: Optional[float] = None) -> EvolutionLog:
    """Evolve ``state`` in place through ``plan``.

    The state is brought into Schmidt form first and is re-gauged exactly at
    every measurement step, so hooks see exact Schmidt values.

    ``hook(step, t, state)`` is called at every measurement step, including
    step 0, and must not modify the state. If the accumulated truncation
    error exceeds ``budget`` the run stops with TruncationBudgetExceeded;
    the partial log is attached to the exception.
    """
    if state.phys_dims[0] != plan.n_max + 1:
        raise ConfigError("state and plan have different occupation cutoffs")
    if state.schmidt is None:
        to_schmidt_form(state)
    log = EvolutionLog()
    t0 = time.perf_counter()
    step = 0
    if plan.measure_steps[0] == 0:
        log.record(0, 0.0, state, 0.0)
        if hook is not None:
            hook(0, 0.0, state)
    for target in plan.measure_steps:
        if target <= step:
            continue
        k = target - step
        _layer(state, plan.gates_half, 0)
        for i in range(k):
            _layer(state, plan.gates_full, 1)
            _layer(state, plan.gates_half if i == k - 1 else plan.gates_full, 0)
        step = target
        t = step * plan.dt
        # truncations leave the right isometries approximate; restore them exactly
        to_schmidt_form(state)
        log.record(step, t, state, time.perf_counter() - t0)
        logger.debug("t=%.4g step=%d chi=%d err=%.3g", t, step, state.max_bond_dim,
                     state.trunc_error_acc)
        if budget is not None and state.trunc_error_acc > budget:
            raise TruncationBudgetExceeded(
                f"truncation error {state.trunc_error_acc:.3g} exceeds budget {budget:.3g} "
                f"at t={t:.4g}", log=log)
        if hook is not None:
            hook(step, t, state)
    return log


