"""Command-line driver: quench runs, thermal tables, exact small runs, fits and comparisons.

Exit codes: 0 success, 2 configuration error, 3 truncation budget exceeded,
4 resource limit, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from bosequench import __version__
from bosequench.condensate import CondensateSpec, build_condensate_mps
from bosequench.config import QuenchConfig
from bosequench.errors import ConfigError, ResourceLimit, TruncationBudgetExceeded
from bosequench.grid import (AdaptiveDensity, ContinuumParams, LatticeSpec, Uniform, build_lattice,
                             characteristic_scales)
from bosequench.mps import MpsState, save_checkpoint
from bosequench.obs import ObservableSeries, effective_density, fit_power_law, steady_state
from bosequench.tba import QuadSpec, quench_energy, thermal_row
from bosequench.tebd import EvolutionLog, build_plan, evolve

logger = logging.getLogger("bosequench")

EXIT_CONFIG = 2
EXIT_TRUNCATION = 3
EXIT_RESOURCE = 4

LOCAL_COLUMNS = ("t", "t_over_tia", "g2_00", "E_kin", "E_ia", "E_tot", "N_tot", "trunc_err",
                 "chi_max_reached")
NONLOCAL_COLUMNS = ("t", "x", "x_over_losc", "g2_0x")
TRAP_COLUMNS = ("t", "t_over_tosc", "g2_trap_avg", "g2_kinetic", "rho_eff")
TBA_COLUMNS = ("gamma", "tau", "T", "mu", "rho", "e_per_particle", "f", "g2_yy", "residuals")

LOCAL_CSV = "local.csv"
NONLOCAL_CSV = "nonlocal.csv"
TRAP_CSV = "trap_average.csv"
MANIFEST = "manifest.ini"


def _num(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".15g")


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_num(v) for v in r])


# ---------------------------------------------------------------------------
# quench pipeline


@dataclass
class QuenchSetup:
    config: QuenchConfig
    params: ContinuumParams
    lattice: LatticeSpec
    state: MpsState
    n_max: int
    dt: float
    t_final: float
    t_first: float


def continuum_params(cfg: QuenchConfig) -> ContinuumParams:
    if cfg.gamma is not None:
        return ContinuumParams.from_gamma(cfg.gamma, cfg.N, cfg.omega)
    return ContinuumParams(g=cfg.g, N=cfg.N, omega=cfg.omega)


def _time_unit(cfg, p):
    if cfg.t_unit == "t_ia":
        return p.t_ia()
    if cfg.t_unit == "t_osc":
        return 2.0 * math.pi / p.omega
    return 1.0


def prepare_quench(cfg: QuenchConfig) -> QuenchSetup:
    """Lattice, condensate state and resolved step for a configuration."""
    p = continuum_params(cfg)
    extent = cfg.extent * p.l_osc
    if cfg.grid_policy == "adaptive":
        policy = AdaptiveDensity(target=cfg.target, extent=extent,
                                 dx_edge=None if cfg.dx_edge is None else cfg.dx_edge * p.l_osc)
    elif cfg.L is None:
        policy = Uniform.from_occupation(p, cfg.occupation_gamma, extent=extent)
    else:
        policy = Uniform(L=cfg.L, extent=extent)
    lattice = build_lattice(p, policy)
    if p.g > 0:
        lattice.grid_quality(p)
    spec = CondensateSpec.from_trap(p, lattice)
    state = build_condensate_mps(spec, lattice, n_max=cfg.n_max, chi_max=cfg.chi_max,
                                 svd_cutoff=cfg.svd_cutoff)
    n_max = state.phys_dims[0] - 1
    unit = _time_unit(cfg, p)
    if cfg.dt_hopping is not None:
        dt = cfg.dt_hopping / float(np.max(lattice.J))
    else:
        dt = cfg.dt
    return QuenchSetup(cfg, p, lattice, state, n_max, dt, cfg.t_final * unit, cfg.t_first * unit)


@dataclass
class QuenchResult:
    setup: QuenchSetup
    series: ObservableSeries
    log: EvolutionLog
    plan_dt: float
    n_steps: int
    wall_time: float
    error: Optional[Exception] = None


def run_quench(cfg: QuenchConfig, progress=None) -> QuenchResult:
    """Condensate -> quench (trap off, interaction on) -> evolution with snapshots.

    A truncation-budget overrun is returned in ``error`` with the partial series.
    """
    setup = prepare_quench(cfg)
    lat = setup.lattice
    plan = build_plan(lat, setup.n_max, setup.t_final, dt=setup.dt, trap_on=False,
                      measure_every=cfg.measure_every, t_first=setup.t_first,
                      snapshots=cfg.snapshots)
    series = ObservableSeries(lattice=lat, t_ia=setup.params.t_ia(), trap_on=False)

    def hook(step, t, state):
        series.record(t, state, nonlocal_=cfg.nonlocal_)
        if progress is not None:
            progress(step, t, state, series)

    t0 = time.perf_counter()
    error = None
    try:
        log = evolve(setup.state, plan, hook=hook, budget=cfg.truncation_budget)
    except TruncationBudgetExceeded as exc:
        log, error = exc.log, exc
    return QuenchResult(setup, series, log, plan.dt, plan.n_steps, time.perf_counter() - t0, error)


def _local_rows(series):
    tia = series.t_ia
    for k, t in enumerate(series.times):
        yield (t, t / tia if math.isfinite(tia) else math.nan, series.g2_local_center[k],
               series.E_kin[k], series.E_ia[k], series.E_tot[k], series.N_total[k],
               series.trunc_err[k], series.chi_max_reached[k])


def _nonlocal_rows(series):
    x = series.distances
    losc = 1.0 / math.sqrt(series.lattice.omega)
    for t, row in zip(series.times, series.g2_nonlocal):
        for xm, v in zip(x, row):
            yield (t, xm, xm / losc, v)


def _trap_rows(series, p):
    t_osc = 2.0 * math.pi / p.omega
    lat = series.lattice
    ek0 = series.E_kin[0] if series.E_kin else 0.0
    g2_ini = series.g2_trap_avg[0] if series.g2_trap_avg else 1.0
    rho0 = None
    for k, t in enumerate(series.times):
        occ = series.density_profile[k] * lat.dx
        rho_eff = effective_density(lat, occ)
        rho0 = rho_eff if rho0 is None else rho0
        est = math.nan
        if p.g > 0:
            est = g2_initial_minus_kinetic(series.E_kin[k], ek0, p, rho_eff, g2_ini, rho0)
        yield (t, t / t_osc, series.g2_trap_avg[k], est, rho_eff)


def g2_initial_minus_kinetic(E_kin, E_kin0, p, rho_eff, g2_ini, rho_eff0):
    """Trap-consistent kinetic estimate without the plausibility guard (for tabulation)."""
    return (g2_ini * rho_eff0 - 2.0 * (E_kin - E_kin0) / (p.N * p.g)) / rho_eff


def write_quench_outputs(result: QuenchResult, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    s = result.series
    _write_csv(out / LOCAL_CSV, LOCAL_COLUMNS, _local_rows(s))
    if result.setup.config.nonlocal_:
        _write_csv(out / NONLOCAL_CSV, NONLOCAL_COLUMNS, _nonlocal_rows(s))
    _write_csv(out / TRAP_CSV, TRAP_COLUMNS, _trap_rows(s, result.setup.params))
    (out / MANIFEST).write_text(manifest_text(result))
    return out


def manifest_text(result: QuenchResult) -> str:
    setup = result.setup
    p = setup.params
    sc = characteristic_scales(p)
    lat = setup.lattice
    resolved = {
        "g": p.g,
        "gamma": sc.gamma,
        "rho_peak": sc.rho,
        "l_osc": sc.l_osc,
        "t_ia": sc.t_ia,
        "t_osc": sc.t_osc,
        "T_c": sc.T_c,
        "v_F": sc.v_F,
        "v_s": sc.v_s,
        "sites": lat.sites,
        "dx_min": float(np.min(lat.dx)),
        "dx_max": float(np.max(lat.dx)),
        "J_max": float(np.max(lat.J)),
        "U_max": float(np.max(lat.U)),
        "grid_quality": lat.grid_quality(p, warn=False) if p.g > 0 else 0.0,
        "n_max": setup.n_max,
        "dt": result.plan_dt,
        "dt_times_J_max": result.plan_dt * float(np.max(lat.J)),
        "n_steps": result.n_steps,
        "t_final": result.n_steps * result.plan_dt,
        "t_first": setup.t_first,
        "snapshots_taken": len(result.series.times),
    }
    meta = {
        "version": __version__,
        "wall_time_s": round(result.wall_time, 3),
        "trunc_error_acc": result.series.trunc_err[-1] if result.series.trunc_err else 0.0,
        "chi_max_reached": max(result.series.chi_max_reached, default=0),
        "status": "ok" if result.error is None else "truncation_budget_exceeded",
    }
    return setup.config.to_text({"resolved": resolved, "run": meta})


def read_manifest(path) -> dict:
    import configparser

    cp = configparser.ConfigParser()
    try:
        if not cp.read(path):
            raise ConfigError(f"missing manifest {path}")
    except configparser.Error as exc:
        raise ConfigError(f"unreadable manifest {path}: {exc}") from exc
    return {s: dict(cp.items(s)) for s in cp.sections()}


def read_local_series(run_dir):
    path = Path(run_dir) / LOCAL_CSV
    if not path.is_file():
        raise ConfigError(f"no {LOCAL_CSV} in {run_dir}")
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.size == 0:
        raise ConfigError(f"{path} has no rows")
    return np.atleast_1d(data)


# ---------------------------------------------------------------------------
# exact small runs


def run_exact(cfg: QuenchConfig, cap: Optional[int] = None):
    """Same quench as ``run_quench`` by exact propagation; returns local-series rows."""
    from bosequench import oracle

    setup = prepare_quench(cfg)
    lat = setup.lattice
    kw = {} if cap is None else {"cap": cap}
    basis = oracle.FockBasis(lat.sites, cfg.N, setup.n_max, **kw)
    if basis.dim > oracle.DENSE_EIG_MAX * 10:
        raise ResourceLimit(f"sector dimension {basis.dim} too large for an exact run")
    H = oracle.dense_hamiltonian(basis, lat, trap_on=False)
    psi0 = oracle.condensate_vector(basis, CondensateSpec.from_trap(setup.params, lat).orbital)
    psi0 = psi0 / np.linalg.norm(psi0)
    plan = build_plan(lat, setup.n_max, setup.t_final, dt=setup.dt,
                      measure_every=cfg.measure_every, t_first=setup.t_first,
                      snapshots=cfg.snapshots)
    w, v = np.linalg.eigh(H)
    c0 = v.conj().T @ psi0
    tia = setup.params.t_ia()
    c = lat.centre_site
    rows = []
    for step in plan.measure_steps:
        t = step * plan.dt
        psi = v @ (np.exp(-1j * w * t) * c0)
        occ = oracle.densities(basis, psi)
        pr = oracle.pair_occupation(basis, psi)
        ek = oracle.measure(basis, psi, "E_kin", lat)
        ei = float(0.5 * pr @ lat.U)
        rows.append((t, t / tia if math.isfinite(tia) else math.nan, pr[c] / occ[c] ** 2,
                     ek, ei, ek + ei, float(occ.sum()), 0.0, 0))
    return rows


# ---------------------------------------------------------------------------
# thermal table and comparison


def tba_rows(gammas, rho, tau=None, energy=None, N=None, quad: QuadSpec = QuadSpec()):
    """One thermal row per gamma, either at fixed tau or at a target energy per particle.

    ``energy`` may be a number or "quench" for gamma T_c (1 - 1/N).
    """
    from bosequench.tba import g2_yy, mu_for_density, solve_tba

    rows = []
    for gamma in gammas:
        if gamma <= 0:
            raise ConfigError("gamma must be positive")
        g = gamma * rho
        if tau is not None:
            T = tau * rho**2 / 2.0
            sol = solve_tba(g, T, mu_for_density(g, T, rho, quad).mu, quad)
            rows.append((gamma, sol.tau, sol.T, sol.mu, sol.rho, sol.e_per_particle, sol.f,
                         g2_yy(g, rho, T, quad), max(sol.eps_residual, sol.n_residual)))
            continue
        e = quench_energy(gamma, rho, N) if energy == "quench" else float(energy)
        r = thermal_row(gamma, rho, e, quad)
        rows.append((r.gamma, r.tau, r.T, r.mu, r.rho, r.e_per_particle, r.f, r.g2_yy, r.residuals))
    return rows


def read_tba_table(path) -> dict:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "g2_yy" not in reader.fieldnames:
                raise ConfigError(f"{path} is not a thermal table")
            return {float(r["gamma"]): r for r in reader}
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def compare_report(run_dirs, tba_table: dict, decades: float = 0.25) -> str:
    """Steady-state centre g2 of each run next to the thermal value at the same gamma."""
    if not run_dirs:
        raise ConfigError("no run directories given")
    buf = io.StringIO()
    buf.write("run,gamma,g2_steady,g2_steady_err,g2_yy,tau,rel_deviation\n")
    for d in run_dirs:
        man = read_manifest(Path(d) / MANIFEST)
        gamma = float(man["resolved"]["gamma"])
        data = read_local_series(d)
        mean, err = steady_state(data["t"], data["g2_00"], decades)
        row = _match_gamma(tba_table, gamma)
        g2t = float(row["g2_yy"])
        buf.write(",".join([Path(d).name, _num(gamma), _num(mean), _num(err), _num(g2t),
                            _num(float(row["tau"])), _num((mean - g2t) / g2t)]) + "\n")
    return buf.getvalue()


def _match_gamma(table, gamma):
    for key, row in table.items():
        if math.isclose(key, gamma, rel_tol=1e-6):
            return row
    raise ConfigError(f"thermal table has no row for gamma = {gamma:.8g}")


# ---------------------------------------------------------------------------
# argument handling


def _load_config(args) -> QuenchConfig:
    cfg = QuenchConfig.from_file(args.config) if args.config else None
    overrides = list(args.set or [])
    if args.out:
        overrides.append(f"output.directory={args.out}")
    if cfg is None:
        if not overrides:
            raise ConfigError("give --config or --set overrides")
        cfg = _from_overrides(overrides)
    elif overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def _from_overrides(pairs):
    # later settings of the same key win
    values = {}
    for item in pairs:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        values.setdefault(section, {})[key.strip().lower()] = value.strip()
    text = "\n".join(f"[{s}]\n" + "\n".join(f"{k} = {v}" for k, v in kv.items())
                     for s, kv in values.items())
    return QuenchConfig.from_text(text)


def cmd_quench(args) -> int:
    cfg = _load_config(args)

    def progress(step, t, state, series):
        tia = series.t_ia
        logger.info("t=%.5g (%.4g t_ia) g2=%.5f chi=%d err=%.2e", t,
                    t / tia if math.isfinite(tia) else math.nan,
                    series.g2_local_center[-1], state.max_bond_dim, state.trunc_error_acc)

    result = run_quench(cfg, progress=progress)
    out = write_quench_outputs(result, cfg.directory)
    if cfg.checkpoint:
        save_checkpoint(result.setup.state, out / cfg.checkpoint)
    if result.error is not None:
        print(f"error: {result.error}", file=sys.stderr)
        return EXIT_TRUNCATION
    print(str(out))
    return 0


def cmd_ed(args) -> int:
    cfg = _load_config(args)
    rows = run_exact(cfg, cap=args.cap)
    out = Path(cfg.directory)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / LOCAL_CSV, LOCAL_COLUMNS, rows)
    print(str(out / LOCAL_CSV))
    return 0


def _rho_from_args(args):
    if args.rho is not None:
        if args.rho <= 0:
            raise ConfigError("rho must be positive")
        return args.rho
    return ContinuumParams(g=0.0, N=args.N, omega=args.omega).rho_peak


def cmd_tba(args) -> int:
    if (args.tau is None) == (args.energy is None):
        raise ConfigError("give exactly one of --tau and --energy")
    energy = args.energy
    if energy is not None and energy != "quench":
        try:
            energy = float(energy)
        except ValueError as exc:
            raise ConfigError(f"--energy must be a number or 'quench', got {energy!r}") from exc
    rho = _rho_from_args(args)
    quad = QuadSpec(nodes=args.nodes)
    rows = tba_rows(args.gamma or [], rho, tau=args.tau, energy=energy,
                    N=args.N if args.energy == "quench" else None, quad=quad)
    if args.out:
        _write_csv(args.out, TBA_COLUMNS, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(TBA_COLUMNS)
        for r in rows:
            w.writerow([_num(v) for v in r])
    return 0


def cmd_fit(args) -> int:
    man = read_manifest(Path(args.run_dir) / MANIFEST)
    tia = float(man["resolved"]["t_ia"])
    data = read_local_series(args.run_dir)
    lo, hi = args.window
    fit = fit_power_law(data["t"], data["g2_00"], (lo * tia, hi * tia))
    print(f"exponent={_num(fit.exponent)} error={_num(fit.stderr)} points={fit.points} "
          f"window_t_ia={_num(fit.window_used[0] / tia)},{_num(fit.window_used[1] / tia)}")
    return 0


def cmd_compare(args) -> int:
    table = read_tba_table(args.tba)
    for d in args.run_dirs:
        if not Path(d).is_dir() or not any(Path(d).iterdir()):
            raise ConfigError(f"run directory {d} is missing or empty")
    sys.stdout.write(compare_report(args.run_dirs, table, args.decades))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bosequench", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def run_opts(sp):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration entry (repeatable)")
        sp.add_argument("--out", help="output directory (overrides output.directory)")

    q = sub.add_parser("quench", help="TEBD quench run")
    run_opts(q)
    q.set_defaults(func=cmd_quench)

    e = sub.add_parser("ed", help="exact-diagonalization run for small lattices")
    run_opts(e)
    e.add_argument("--cap", type=int, default=None, help="Fock-space dimension cap")
    e.set_defaults(func=cmd_ed)

    t = sub.add_parser("tba", help="thermal Yang-Yang table")
    t.add_argument("--gamma", type=float, nargs="*", default=[])
    t.add_argument("--tau", type=float)
    t.add_argument("--energy", help="energy per particle, or 'quench'")
    t.add_argument("--rho", type=float, help="density (default: trap peak density)")
    t.add_argument("--N", type=int, default=5)
    t.add_argument("--omega", type=float, default=1.0)
    t.add_argument("--nodes", type=int, default=200)
    t.add_argument("--out")
    t.set_defaults(func=cmd_tba)

    f = sub.add_parser("fit", help="power-law exponent of the centre g2")
    f.add_argument("run_dir")
    f.add_argument("--window", type=float, nargs=2, default=(0.05, 0.5), metavar=("LO", "HI"),
                   help="fit window in units of t_ia")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("compare", help="steady-state g2 against the thermal table")
    c.add_argument("run_dirs", nargs="*")
    c.add_argument("--tba", required=True)
    c.add_argument("--decades", type=float, default=0.25)
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TruncationBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    except ResourceLimit as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
