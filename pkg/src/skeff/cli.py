"""
Command-line experiment runner.

Every subcommand reads an INI configuration (the shipped ``paper.cfg`` by
default), runs its experiment and writes CSV files into the output directory.
Table cells are independent and can be spread over worker processes with
``--jobs``; rows are always written in configuration order.

Exit codes: 0 success, 2 configuration error, 3 numerical failure in at least
one cell (the failing rows carry the diagnostic in their ``status`` column).
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import effham, flows, observables
from .config import METHODS, ExperimentConfig, load_config, safe_eval
from .errors import ConfigError, SkeffError
from .quantum import kick_direction, spin_kick_model

__all__ = [
    "main",
    "band",
    "build_flow",
    "build_heff",
    "run_orbit_report",
    "run_phase_portrait",
    "run_effham",
    "run_fidelity_table",
    "run_survival_table",
    "run_overlay",
    "run_ensemble",
]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def band(value: float) -> str:
    """Classification of an average probability: good, correct, middling or bad."""
    if value >= 0.97:
        return "good"
    if value >= 0.90:
        return "correct"
    if value >= 0.75:
        return "middling"
    return "bad"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".15g")
    return str(x)


def build_flow(cfg: ExperimentConfig):
    if cfg.flow_kind == "identity":
        return flows.Identity()
    return flows.StandardMap(cfg.K)


class KickWithoutDelay:
    """``v(theta) = lambda |w(theta1, 0)><w(theta1, 0)|``: the kick with its delay phase removed.

    Used as the commuting part in the third high-frequency expansion; the
    remainder ``V - v`` is of order ``r`` for the spin-kick model.
    """

    def __init__(self, lam: float, ratio: float):
        self.lam, self.ratio = lam, ratio

    def __call__(self, theta):
        t1 = tuple(theta)[0]
        w = kick_direction(np.array([t1, 0.0]), self.ratio)[0]
        return self.lam * np.outer(w, w.conj())


def build_heff(cfg: ExperimentConfig, sys_, flow, theta, epsilon: float, method: str):
    """Effective Hamiltonian of ``method`` on the first epsilon-recurrence of ``theta``."""
    rec = flows.first_recurrence(flow, theta, epsilon, cfg.n_max)
    if method == "froot":
        return effham.first_recurrence_heff(sys_, flow, theta, epsilon, rec=rec)
    if method == "koopman":
        return effham.sk_heff_koopman(sys_, flow, theta, epsilon, dense_limit=cfg.dense_limit, rec=rec)
    if method == "bch-low":
        return effham.bch_low_heff(sys_, flow, theta, rec.p)
    if method == "bch-high1":
        return effham.bch_high1_heff(sys_, flow, theta, rec.p)
    if method == "bch-high2":
        return effham.bch_high2_heff(sys_, flow, theta, rec.p)
    if method == "bch-high3":
        return effham.bch_high3_heff(sys_, flow, theta, rec.p, KickWithoutDelay(cfg.lam, sys_.ratio))
    raise ConfigError(f"unknown method {method!r}")


def _status(caught) -> str:
    msgs = sorted({str(w.message) for w in caught})
    return "ok" if not msgs else "warning: " + " | ".join(msgs)


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def _write(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(h, "")) for h in header])
    return path


def _failed(rows) -> bool:
    return any(str(r.get("status", "ok")).startswith("error") for r in rows)


# ------------------------------------------------------------- orbit report

ORBIT_HEADER = ["seed", "region", "theta1", "theta2", "epsilon", "p", "diameter", "lyapunov", "status"]


def _orbit_row(task):
    cfg, name = task
    s = cfg.seed(name)
    eps = cfg.epsilon_for(s)
    row = {"seed": s.name, "region": s.region, "theta1": s.theta1, "theta2": s.theta2, "epsilon": eps}
    try:
        st = flows.orbit_stats(build_flow(cfg), s.theta, eps, n_lyap=cfg.n_lyap,
                               components=s.components, n_max=cfg.n_max)
        row.update(p=st.p, diameter=st.diameter, lyapunov=st.lyapunov, status="ok")
    except SkeffError as exc:
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def run_orbit_report(cfg: ExperimentConfig, out: Path):
    """One row per seed: almost-period, mean diameter, Lyapunov exponent."""
    rows = _map(_orbit_row, [(cfg, s.name) for s in cfg.seeds], cfg.jobs)
    return _write(Path(out) / "orbit_report.csv", ORBIT_HEADER, rows), rows


def run_phase_portrait(cfg: ExperimentConfig, out: Path):
    """``portrait_points`` iterates of every seed."""
    flow = build_flow(cfg)
    path = Path(out) / "phase_portrait.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    orbits = [flows.orbit(flow, s.theta, cfg.portrait_points - 1) for s in cfg.seeds]
    flows.write_phase_portrait_csv(path, orbits)
    return path, []


# ---------------------------------------------------------- effham export

def _effham_task(task):
    cfg, name, ratio = task
    s = cfg.seed(name)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            he = build_heff(cfg, spin_kick_model(ratio, cfg.lam), build_flow(cfg), s.theta,
                            cfg.epsilon_for(s), cfg.method)
        except SkeffError as exc:
            return None, f"error: {type(exc).__name__}: {exc}"
    return he, _status(caught)


def run_effham(cfg: ExperimentConfig, out: Path):
    """Quasienergies and states for every seed and ratio, one CSV per pair."""
    tasks = [(cfg, s.name, r) for s in cfg.seeds for r in cfg.ratios]
    results = _map(_effham_task, tasks, cfg.jobs)
    rows = []
    for k, ((_, name, r), (he, status)) in enumerate(zip(tasks, results)):
        ridx = k % len(cfg.ratios)
        path = Path(out) / f"effham_{name}_r{ridx}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        if he is not None:
            effham.write_heff_csv(path, [he])
        rows.append({"seed": name, "ratio": r, "file": path.name if he is not None else "",
                     "p": he.p if he is not None else "", "status": status})
    index = _write(Path(out) / "effham_index.csv", ["seed", "ratio", "p", "file", "status"], rows)
    return index, rows


# ------------------------------------------------------------------ tables

FIDELITY_HEADER = ["seed", "region", "epsilon", "p", "ratio", "method", "periods", "average", "band",
                   "status"]
SURVIVAL_HEADER = ["seed", "region", "epsilon", "p", "ratio", "method", "state_index", "periods",
                   "average", "band", "status"]


def _cell_rows(cfg, name, ratio, horizons, extra, compute):
    s = cfg.seed(name)
    eps = cfg.epsilon_for(s)
    base = {"seed": s.name, "region": s.region, "epsilon": eps, "ratio": ratio, "method": cfg.method}
    base.update(extra)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            sys_ = spin_kick_model(ratio, cfg.lam)
            flow = build_flow(cfg)
            he = build_heff(cfg, sys_, flow, s.theta, eps, cfg.method)
            averages = compute(sys_, flow, s.theta, he, max(horizons))
        except SkeffError as exc:
            msg = f"error: {type(exc).__name__}: {exc}"
            return [dict(base, periods=N, status=msg) for N in horizons]
    status = _status(caught)
    return [dict(base, p=he.p, periods=N, average=averages(N), band=band(averages(N)), status=status)
            for N in horizons]


def _fidelity_cell(task):
    cfg, name, ratio = task
    psi = np.asarray(cfg.initial_state, dtype=complex)

    def compute(sys_, flow, theta, he, N):
        F = observables.stroboscopic_fidelity(sys_, flow, theta, he, psi, N, cfg.convention)
        return lambda n: F.prefix(n).average

    return _cell_rows(cfg, name, ratio, cfg.periods, {}, compute)


def _survival_cell(task):
    cfg, name, ratio = task

    def compute(sys_, flow, theta, he, N):
        P = observables.survival_probability(sys_, flow, theta, he.states[:, cfg.state_index], N * he.p)
        return lambda n: float(np.mean(P[: n * he.p + 1]))

    return _cell_rows(cfg, name, ratio, cfg.survival_periods, {"state_index": cfg.state_index}, compute)


def _table(cfg, cell, filename, header, out):
    tasks = [(cfg, s.name, r) for s in cfg.seeds for r in cfg.ratios]
    rows = [row for cell_rows in _map(cell, tasks, cfg.jobs) for row in cell_rows]
    return _write(Path(out) / filename, header, rows), rows


def run_fidelity_table(cfg: ExperimentConfig, out: Path):
    """Average stroboscopic fidelity for seeds x ratios x horizons, with bands."""
    return _table(cfg, _fidelity_cell, "fidelity_table.csv", FIDELITY_HEADER, out)


def run_survival_table(cfg: ExperimentConfig, out: Path):
    """Average survival probability of a quasienergy state over every step of the horizon."""
    return _table(cfg, _survival_cell, "survival_table.csv", SURVIVAL_HEADER, out)


# ------------------------------------------------------- overlay, ensemble

def run_overlay(cfg: ExperimentConfig, out: Path):
    """Exact and effective survival of the initial state over ``overlay_steps`` steps."""
    name = cfg.overlay_seed or cfg.seeds[0].name
    s = cfg.seed(name)
    sys_ = spin_kick_model(cfg.overlay_ratio, cfg.lam)
    flow = build_flow(cfg)
    he = build_heff(cfg, sys_, flow, s.theta, cfg.epsilon_for(s), cfg.method)
    exact, eff = observables.effective_overlay(sys_, flow, s.theta, he,
                                               np.asarray(cfg.initial_state, dtype=complex),
                                               cfg.overlay_steps)
    path = Path(out) / "overlay.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    observables.write_series_csv(path, {"exact": exact, "effective": eff})
    return path, []


def run_ensemble(cfg: ExperimentConfig, out: Path):
    """Ensembles over the configured orbits, in quasienergy states and in ``|0>``."""
    if not cfg.ensemble_seeds:
        raise ConfigError("ensemble has no seeds")
    sys_ = spin_kick_model(cfg.ensemble_ratio, cfg.lam)
    flow = build_flow(cfg)
    steady, zero, ps = [], [], []
    for name in cfg.ensemble_seeds:
        s = cfg.seed(name)
        sk = effham.sk_heff_koopman(sys_, flow, s.theta, cfg.epsilon_for(s),
                                    dense_limit=cfg.dense_limit, n_max=cfg.n_max)
        ps.append(sk.p)
        for n in range(sk.p):
            steady.append((sk.orbit[n], sk.orbit_states[n][:, cfg.ensemble_state_index]))
            zero.append((sk.orbit[n], np.eye(sys_.dim)[0]))
    n_steps = cfg.ensemble_periods * max(ps)
    paths = []
    for label, members in (("quasienergy", steady), ("zero", zero)):
        series = observables.ensemble_evolve(sys_, flow, members, n_steps)
        path = Path(out) / f"ensemble_{label}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        observables.write_series_csv(path, {"population": series.population,
                                            "coherence": series.coherence})
        paths.append(path)
    return paths, []


# ---------------------------------------------------------------- parsing

COMMANDS = {
    "orbit-report": run_orbit_report,
    "phase-portrait": run_phase_portrait,
    "effham": run_effham,
    "fidelity-table": run_fidelity_table,
    "survival-table": run_survival_table,
    "overlay": run_overlay,
    "ensemble": run_ensemble,
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skeff", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().split("\n")[0])
        p.add_argument("--config", help="INI configuration (default: shipped paper.cfg)")
        p.add_argument("--out", help="output directory (default: [output] dir)")
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--seed", help="restrict to one named seed")
        p.add_argument("--ratio", help="restrict to one frequency ratio (arithmetic allowed)")
        p.add_argument("--epsilon", help="recurrence accuracy for every seed")
        p.add_argument("--periods", type=int, help="horizon in almost-periods")
        p.add_argument("--jobs", type=int, help="worker processes for table cells")
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    kw = {"method": args.method, "jobs": args.jobs}
    if args.seed is not None:
        s = cfg.seed(args.seed)
        kw.update(seeds=(s,), overlay_seed=s.name, ensemble_seeds=(s.name,))
    if args.ratio is not None:
        r = float(safe_eval(args.ratio).real)
        kw.update(ratios=(r,), overlay_ratio=r, ensemble_ratio=r)
    if args.epsilon is not None:
        e = float(safe_eval(args.epsilon).real)
        seeds = kw.get("seeds", cfg.seeds)
        kw.update(epsilon=e, chaotic_epsilon=e,
                  seeds=tuple(type(s)(**{**s.__dict__, "epsilon": None}) for s in seeds))
    if args.periods is not None:
        kw.update(periods=(args.periods,), survival_periods=(args.periods,),
                  ensemble_periods=args.periods)
    cfg = cfg.with_overrides(**kw)
    if set(cfg.formats) - {"csv"}:
        raise ConfigError("only the csv output format is available")
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = Path(args.out or cfg.output_dir)
        written, rows = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SkeffError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in written if isinstance(written, list) else [written]:
        print(os.fspath(p))
    if _failed(rows):
        print("some cells failed; see the status column", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
