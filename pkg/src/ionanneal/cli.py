"""Command-line interface: ``ionanneal <command> [--config PATH] [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing as mp
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import ENGINES, ExperimentConfig, config_hash, load_config
from .errors import ConfigError, EngineCapacityError, IonAnnealError
from .experiments import CellTask, ThermalTask, run_cell, run_exact, run_semiclassical, thermal_task
from .output import metadata, provenance, write_csv, write_json
from .quantum import MAX_EXACT_IONS
from .thermal import aggregate, lamb_dicke_check, mean_occupation

log = logging.getLogger("ionanneal")

#: cells with F >= this fraction of the best fidelity at the same tau form the bias window
BIAS_WINDOW_FRACTION = 0.9
BENCHMARK_MAX_IONS = 4


@contextmanager
def worker_map(workers: int):
    """Ordered map over ``workers`` processes (plain ``map`` for one worker)."""
    if workers <= 1:
        yield map
        return
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        yield lambda fn, items: pool.imap(fn, list(items), chunksize=1)


def _summary_path(cfg: ExperimentConfig, name: str) -> Path:
    return cfg.out_dir / f"{name}.json"


def _finish(cfg, command, files, results, start, seed=None, **meta):
    payload = provenance(cfg, command, seed)
    payload["files"] = sorted(files)
    payload["results"] = results
    payload["metadata"] = metadata(time.perf_counter() - start, **meta)
    write_json(_summary_path(cfg, command), payload)
    log.info("%s: wrote %s", command, ", ".join(sorted(files)))


def cmd_modes(cfg: ExperimentConfig) -> dict:
    start = time.perf_counter()
    sp = cfg.spectrum
    n = sp.n_ions
    header = (["mode_index", "omega_k_rad_s"] + [f"xi_{i + 1}" for i in range(n)]
              + [f"eta_{i + 1}" for i in range(n)] + ["config_hash"])
    h = cfg.hash()
    rows = [[k, sp.frequencies[k], *sp.mode_vectors[k], *sp.lamb_dicke[k], h] for k in range(sp.n_modes)]
    write_csv(cfg.out_dir / "spectrum.csv", header, rows)
    results = {"frequencies_rad_s": sp.frequencies, "length_scale_m": cfg.chain.length_scale}
    _finish(cfg, "modes", ["spectrum.csv"], results, start)
    return results


def _check_engine(cfg: ExperimentConfig, engine: str):
    if engine == "exact" and cfg.chain.n_ions > MAX_EXACT_IONS:
        raise EngineCapacityError(
            f"exact engine supports at most {MAX_EXACT_IONS} ions, got {cfg.chain.n_ions}")


def _trajectory_rows(traj, engine: str, n_ions: int, n_modes: int, h: str):
    header = ["t_s"]
    for i in range(n_ions):
        header += [f"sx_{i + 1}", f"sy_{i + 1}", f"sz_{i + 1}"]
    for k in range(n_modes):
        header += [f"re_a_{k + 1}", f"im_a_{k + 1}", f"abs_alpha2_{k + 1}"]
    if engine == "exact":
        header += [f"n_{k + 1}" for k in range(n_modes)]
        header += [f"n{k + 1}_sx{i + 1}" for k in range(n_modes) for i in range(n_ions)]
    header.append("config_hash")
    if engine == "exact":
        spins = np.stack([traj.sigma_x, traj.sigma_y, traj.sigma_z], axis=2)
    else:
        spins = traj.spins
    rows = []
    for j, t in enumerate(traj.t):
        row = [t, *spins[j].ravel()]
        for k in range(n_modes):
            row += [traj.re_a[j, k], traj.im_a[j, k], traj.re_a[j, k] ** 2 + traj.im_a[j, k] ** 2]
        if engine == "exact":
            row += list(traj.n[j]) + list(traj.n_sigma_x[j].ravel())
        row.append(h)
        rows.append(row)
    return header, rows


def cmd_evolve(cfg: ExperimentConfig) -> dict:
    start = time.perf_counter()
    _check_engine(cfg, cfg.engine)
    opts = cfg.engine_options()
    if cfg.engine == "exact":
        result, traj = run_exact(cfg.spectrum, cfg.schedule, **opts)
    else:
        result, traj = run_semiclassical(cfg.spectrum, cfg.schedule, **opts)
    header, rows = _trajectory_rows(traj, cfg.engine, cfg.spectrum.n_ions, cfg.spectrum.n_modes, cfg.hash())
    write_csv(cfg.out_dir / "trajectory.csv", header, rows)
    record = result.to_json_dict()
    runtime = record.pop("runtime_s", None)
    _finish(cfg, "evolve", ["trajectory.csv"], record, start, engine_runtime_s=runtime)
    return record


def _sweep_grid(cfg: ExperimentConfig, command: str):
    if not cfg.sweep_omega_L or not cfg.sweep_tau:
        where = "sweep.omega_L" if not cfg.sweep_omega_L else "sweep.tau"
        raise ConfigError(where, f"{command} needs a non-empty grid")
    return [(w, t) for w in cfg.sweep_omega_L for t in cfg.sweep_tau]


def _cell_row(cell, omega_L, tau, engine, h):
    r = cell.result
    if r is None:
        return [omega_L, tau, engine, -1.0, None, None, None, None, cell.reason, h]
    return [omega_L, tau, engine, r.fidelity, r.separation_time, r.waiting_time,
            r.extra.get("dominant_mode"), max(r.final_mode_populations), "", h]


SWEEP_HEADER = ["omega_L_rad_s", "tau_s", "engine", "fidelity", "t_sep_s", "t_wait_s",
                "dominant_mode", "max_final_population", "reason", "config_hash"]


def cmd_sweep(cfg: ExperimentConfig) -> dict:
    start = time.perf_counter()
    _check_engine(cfg, cfg.engine)
    grid = _sweep_grid(cfg, "sweep")
    opts = cfg.engine_options()
    tasks = [CellTask(i, cfg.engine, cfg.spectrum, cfg.schedule_for(omega_L=w, tau=t), opts)
             for i, (w, t) in enumerate(grid)]
    h = cfg.hash()
    with worker_map(cfg.workers) as pmap:
        cells = list(pmap(run_cell, tasks))
    rows = [_cell_row(c, w, t, cfg.engine, h) for c, (w, t) in zip(cells, grid)]
    write_csv(cfg.out_dir / "sweep.csv", SWEEP_HEADER, rows)
    fid = np.array([c.fidelity for c in cells]).reshape(len(cfg.sweep_omega_L), len(cfg.sweep_tau))
    results = {"omega_L_rad_s": cfg.sweep_omega_L, "tau_s": cfg.sweep_tau, "fidelity": fid,
               "n_failed": int(np.sum(fid < 0))}
    _finish(cfg, "sweep", ["sweep.csv"], results, start, workers=cfg.workers)
    return results


THERMAL_RUN_HEADER = ["T_K", "omega_L_rad_s", "seed", "run_index", "fidelity",
                      "max_final_population", "lamb_dicke_valid", "reason", "config_hash"]


def cmd_thermal(cfg: ExperimentConfig) -> dict:
    start = time.perf_counter()
    if cfg.engine != "semiclassical":
        raise ConfigError("engine.name", "thermal ensembles run on the semiclassical engine only")
    if not cfg.temperatures:
        raise ConfigError("thermal.temperatures", "thermal needs at least one temperature")
    opts = {"tol": cfg.tol, "spin_z": cfg.spin_z, "n_out": cfg.n_out}
    sp = cfg.spectrum
    cells = [(w, T) for w in cfg.thermal_omega_L for T in cfg.temperatures]
    tasks = []
    for w, T in cells:
        occ = np.atleast_1d(mean_occupation(T, sp.frequencies))
        sched = cfg.schedule_for(omega_L=w)
        tasks += [ThermalTask(sched, sp, occ, cfg.seed, r, opts) for r in range(cfg.n_samples)]
    with worker_map(cfg.workers) as pmap:
        records = list(pmap(thermal_task, tasks))
    eta_scale = float(np.max(np.abs(sp.lamb_dicke)) / np.max(np.abs(sp.mode_vectors)))
    h = cfg.hash()
    run_rows, summary_rows, summaries = [], [], []
    m = sp.n_modes
    for c, (w, T) in enumerate(cells):
        chunk = records[c * cfg.n_samples:(c + 1) * cfg.n_samples]
        for rec in chunk:
            if rec.ok:
                valid = lamb_dicke_check(eta_scale, rec.max_final_population).valid
                run_rows.append([T, w, cfg.seed, rec.run_index, rec.fidelity,
                                 rec.max_final_population, valid, "", h])
            else:
                run_rows.append([T, w, cfg.seed, rec.run_index, -1.0, None, None, rec.error, h])
        stats = aggregate(chunk, T, cfg.seed, m)
        summary_rows.append([T, w, cfg.n_samples, stats.mean_fidelity, stats.fidelity_err,
                             stats.success_fraction, stats.failures,
                             *stats.mean_population, *stats.population_err, h])
        summaries.append({"T_K": T, "omega_L_rad_s": w, "mean_fidelity": stats.mean_fidelity,
                          "fidelity_err": stats.fidelity_err,
                          "success_fraction": stats.success_fraction, "failures": stats.failures,
                          "mean_population": stats.mean_population,
                          "population_err": stats.population_err})
    write_csv(cfg.out_dir / "thermal_runs.csv", THERMAL_RUN_HEADER, run_rows)
    header = (["T_K", "omega_L_rad_s", "n_samples", "mean_fidelity", "fidelity_err_2sigma",
               "success_fraction", "failures"] + [f"mean_population_{k + 1}" for k in range(m)]
              + [f"population_err_2sigma_{k + 1}" for k in range(m)] + ["config_hash"])
    write_csv(cfg.out_dir / "thermal_summary.csv", header, summary_rows)
    results = {"cells": summaries, "eta_scale": eta_scale}
    _finish(cfg, "thermal", ["thermal_runs.csv", "thermal_summary.csv"], results, start,
            seed=cfg.seed, workers=cfg.workers)
    return results


def cmd_bias_scan(cfg: ExperimentConfig) -> dict:
    start = time.perf_counter()
    _check_engine(cfg, cfg.engine)
    if not cfg.bias_epsilon:
        raise ConfigError("bias_scan.epsilon", "bias-scan needs a non-empty epsilon grid")
    taus = cfg.bias_tau or [cfg.schedule.tau]
    grid = [(w, e, t) for w in cfg.bias_omega_L for t in taus for e in cfg.bias_epsilon]
    opts = cfg.engine_options()
    tasks = [CellTask(i, cfg.engine, cfg.spectrum, cfg.schedule_for(omega_L=w, tau=t, epsilon=e), opts)
             for i, (w, e, t) in enumerate(grid)]
    with worker_map(cfg.workers) as pmap:
        cells = list(pmap(run_cell, tasks))
    p = cfg.schedule.bias_index
    best = {}
    for c, (w, e, t) in zip(cells, grid):
        best[(w, t)] = max(best.get((w, t), 0.0), c.fidelity)
    h = cfg.hash()
    rows, windows = [], {}
    for c, (w, e, t) in zip(cells, grid):
        if c.result is None:
            rows.append([w, e, t, None, -1.0, None, False, c.reason, h])
            continue
        top = best[(w, t)]
        in_window = top > 0 and c.fidelity >= BIAS_WINDOW_FRACTION * top
        if in_window:
            lo, hi = windows.get((w, t), (e, e))
            windows[(w, t)] = (min(lo, e), max(hi, e))
        rows.append([w, e, t, c.result.separation_time, c.fidelity,
                     abs(c.result.final_sigma_x[p]), in_window, "", h])
    header = ["omega_L_rad_s", "epsilon_rad_s", "tau_s", "t_sep_s", "fidelity",
              "abs_final_sx_bias", "high_fidelity", "reason", "config_hash"]
    write_csv(cfg.out_dir / "bias_scan.csv", header, rows)
    results = {"windows": [{"omega_L_rad_s": w, "tau_s": t, "epsilon_min_rad_s": lo,
                            "epsilon_max_rad_s": hi} for (w, t), (lo, hi) in sorted(windows.items())],
               "window_fraction": BIAS_WINDOW_FRACTION}
    _finish(cfg, "bias-scan", ["bias_scan.csv"], results, start, workers=cfg.workers)
    return results


def cmd_benchmark(cfg: ExperimentConfig) -> dict:
    start = time.perf_counter()
    if cfg.chain.n_ions > BENCHMARK_MAX_IONS:
        raise EngineCapacityError(f"benchmark runs the exact engine for at most {BENCHMARK_MAX_IONS} ions")
    if cfg.sweep_omega_L and cfg.sweep_tau:
        grid = _sweep_grid(cfg, "benchmark")
    else:
        grid = [(cfg.schedule.omega_L, cfg.schedule.tau)]
    exact_cfg = cfg.with_overrides(engine="exact")
    sc_cfg = cfg.with_overrides(engine="semiclassical")
    tasks = []
    for i, (w, t) in enumerate(grid):
        sched = cfg.schedule_for(omega_L=w, tau=t)
        tasks.append(CellTask(2 * i, "exact", cfg.spectrum, sched, exact_cfg.engine_options(), True))
        tasks.append(CellTask(2 * i + 1, "semiclassical", cfg.spectrum, sched, sc_cfg.engine_options()))
    with worker_map(cfg.workers) as pmap:
        cells = list(pmap(run_cell, tasks))
    h = cfg.hash()
    rows, files = [], ["benchmark.csv"]
    runtime = {"exact_s": 0.0, "semiclassical_s": 0.0}
    n, m = cfg.spectrum.n_ions, cfg.spectrum.n_modes
    for i, (w, t) in enumerate(grid):
        ex, sc = cells[2 * i], cells[2 * i + 1]
        runtime["exact_s"] += ex.runtime_s
        runtime["semiclassical_s"] += sc.runtime_s
        ok = ex.result is not None and sc.result is not None
        diff = sc.fidelity - ex.fidelity if ok else None
        reason = "; ".join(r for r in (ex.reason, sc.reason) if r)
        rows.append([w, t, ex.fidelity, sc.fidelity, diff, reason, h])
        if ex.decoupling is not None:
            t_series, err = ex.decoupling
            name = f"decoupling_{i:04d}.csv"
            header = ["t_s"] + [f"err_n{k + 1}_sx{j + 1}" for k in range(m) for j in range(n)] + ["config_hash"]
            write_csv(cfg.out_dir / name, header,
                      ([tt, *e.ravel(), h] for tt, e in zip(t_series, err)))
            files.append(name)
    write_csv(cfg.out_dir / "benchmark.csv",
              ["omega_L_rad_s", "tau_s", "F_exact", "F_semiclassical", "F_sc_minus_F_exact",
               "reason", "config_hash"], rows)
    results = {"cells": len(grid)}
    _finish(cfg, "benchmark", files, results, start, engine_runtime_s=runtime, workers=cfg.workers)
    return {**results, "runtime": runtime}


def cmd_verify(cfg_path, out_dir: Path) -> int:
    """Check every summary JSON in ``out_dir`` against its embedded config and its CSV files."""
    import csv

    summaries = sorted(out_dir.glob("*.json"))
    if not summaries:
        print(f"verify: no summary files in {out_dir}")
        return 1
    expected = load_config(cfg_path).hash() if cfg_path else None
    bad = 0
    for path in summaries:
        data = json.loads(path.read_text())
        stored = data.get("config_hash")
        recomputed = config_hash(data.get("config", {}))
        status = "ok"
        if stored != recomputed:
            status = f"summary hash {stored} does not match its config ({recomputed})"
        elif expected is not None and stored != expected:
            status = f"hash {stored} differs from --config ({expected})"
        else:
            for name in data.get("files", []):
                csv_path = out_dir / name
                if not csv_path.exists():
                    status = f"missing {name}"
                    break
                with open(csv_path, newline="") as fh:
                    reader = csv.DictReader(fh)
                    if "config_hash" not in (reader.fieldnames or []):
                        status = f"{name} has no config_hash column"
                        break
                    if any(row["config_hash"] != stored for row in reader):
                        status = f"{name} carries a different config hash"
                        break
        if status != "ok":
            bad += 1
        print(f"{path.name}: {status}")
    return 1 if bad else 0


COMMANDS = {
    "modes": cmd_modes,
    "evolve": cmd_evolve,
    "sweep": cmd_sweep,
    "thermal": cmd_thermal,
    "bias-scan": cmd_bias_scan,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ionanneal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["verify"]:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML experiment file (defaults if omitted)")
        p.add_argument("--out", type=Path, help="output directory")
        if name != "verify":
            p.add_argument("--engine", choices=ENGINES)
            p.add_argument("--workers", type=int)
            p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "verify":
            out = args.out or load_config(args.config).out_dir
            return cmd_verify(args.config, Path(out))
        cfg = load_config(args.config).with_overrides(
            engine=args.engine, workers=args.workers, seed=args.seed,
            out=str(args.out) if args.out else None)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except IonAnnealError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.command in ("evolve", "modes"):
        print(json.dumps({k: v for k, v in result.items() if not isinstance(v, np.ndarray)},
                         default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
