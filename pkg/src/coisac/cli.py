"""Command-line experiment harness: design, sweep, roc and detect-mc (CSV output only)."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics as mt
from .config import ConfigError, ExperimentConfig, load_config
from .hbf_solver import InfeasibleSubproblem
from .panda_core import Termination
from .runtime import SolveResult, make_problem, run_centralized_admm, run_panda_distributed
from .scene import generate_channels

log = logging.getLogger("coisac")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_CAP = 0, 2, 3, 4
BEAMPATTERN_POINTS = 361


def _header(cfg: ExperimentConfig, seed: int, extra: str = "") -> list:
    lines = [f"# config_sha256={cfg.config_hash} seed={seed}"]
    if extra:
        lines.append(f"# {extra}")
    return lines


def write_csv(path: Path, header: list, columns: list, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def solve(cfg: ExperimentConfig, seed: int, threads=None, method=None) -> SolveResult:
    """One design run: channels and initialization both seeded by ``seed``."""
    channels = generate_channels(cfg.scene, seed)
    problem = make_problem(cfg.scene, channels, cfg.specs(), cfg.solver.weights,
                           cfg.solver.bsum_inner_iters, cfg.solver.bsum_tol)
    method = method or cfg.solver.method
    rng = np.random.default_rng(seed)
    if method == "panda":
        return run_panda_distributed(cfg.scene, channels, problem.specs, cfg.solver.penalties, rng,
                                     threads=threads, problem=problem)
    return run_centralized_admm(cfg.scene, channels, problem.specs, cfg.solver.penalties, rng,
                                threads=threads, problem=problem)


def min_sum_radar_sinr(cfg: ExperimentConfig, states) -> float:
    """Smallest (over targets) of the per-target SINR summed across APs."""
    model = mt.build_detection_model(cfg.scene, cfg.detection.clutter_variance,
                                     target_amplitude=cfg.detection.target_amplitude,
                                     time_bandwidth_product=cfg.detection.time_bandwidth_product)
    return min(mt.sum_radar_sinr(states, model, o) for o in range(model.n_targets))


# ------------------------------------------------------------------ commands


def cmd_design(cfg: ExperimentConfig, out: Path, threads=None) -> int:
    res = solve(cfg, cfg.seed, threads)
    A = cfg.scene.n_aps
    cols = (["iter", "al", "wsr", "max_residual"] + [f"mse_ap{a}" for a in range(A)]
            + [f"notch_max_ap{a}" for a in range(A)] + ["wall_ms"])
    rows = []
    for rep, ms in zip(res.reports, res.wall_ms):
        e = rep.extras
        rows.append([rep.iteration, rep.augmented_lagrangian, e["wsr"], float(np.max(rep.primal_residuals)),
                     *e["mse_u"], *e["notch_x"], ms])
    write_csv(out / "diagnostics.csv", _header(cfg, cfg.seed, f"solver={res.solver} termination={res.termination.value}"),
              cols, rows)
    grid = np.linspace(-90.0, 90.0, BEAMPATTERN_POINTS)
    for a, st in enumerate(res.states):
        p = mt.transmit_beampattern(st, np.radians(grid))
        db = 10.0 * np.log10(np.maximum(p, 1e-300) / p.max())
        write_csv(out / f"beampattern_ap{a}.csv",
                  _header(cfg, cfg.seed, "power_db normalized to the peak over the grid; power_mw absolute"),
                  ["angle_deg", "power_db", "power_mw"], zip(grid, db, p))
    print(f"design: solver={res.solver} iterations={res.iterations} termination={res.termination.value} "
          f"wsr={res.final_wsr:.4f}")
    return EXIT_CAP if res.termination == Termination.ITERATION_CAP else EXIT_OK


def _sweep_job(cfg: ExperimentConfig, variable, value, trial, radar):
    sub = cfg.with_override(variable, value)
    seed = cfg.seed + trial
    t0 = time.perf_counter()
    res = solve(sub, seed, threads=1)
    ms = 1e3 * (time.perf_counter() - t0)
    sinr = min_sum_radar_sinr(sub, res.states) if radar else float("nan")
    return [value, trial, res.final_wsr, sinr, res.iterations, ms], res.termination


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads=None) -> int:
    sw = cfg.sweep
    jobs = [(v, t) for v in sw.values for t in range(sw.trials)]
    n = max(1, int(threads or 1))

    def run(job):
        return _sweep_job(cfg, sw.variable, job[0], job[1], sw.radar_sinr)

    if n == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(run, jobs))
    capped = sum(term == Termination.ITERATION_CAP for _, term in results)
    unit = " (dBm)" if sw.variable == "Gamma_notch" else ""
    write_csv(out / "sweep.csv",
              _header(cfg, cfg.seed, f"variable={sw.variable}{unit} solver={cfg.solver.method} "
                                     f"trial seed = seed + trial; runs at iteration cap: {capped}"),
              ["param", "trial", "wsr", "min_sum_sinr", "iterations", "wall_ms"], [r for r, _ in results])
    if capped:
        log.warning("%d of %d sweep runs stopped at the iteration cap", capped, len(jobs))
    print(f"sweep: {len(jobs)} runs over {sw.variable}")
    return EXIT_OK


def _detection_inputs(cfg: ExperimentConfig, threads=None):
    """Per-AP responses either from a designed beamformer or from a fixed sum SINR."""
    det = cfg.detection
    A = cfg.scene.n_aps
    if det.sinr_source == "fixed":
        return mt.fixed_sinr_responses(np.full(A, det.sum_sinr / A))
    res = solve(cfg, cfg.seed, threads)
    model = mt.build_detection_model(cfg.scene, det.clutter_variance, target_amplitude=det.target_amplitude,
                                     time_bandwidth_product=det.time_bandwidth_product)
    return mt.detection_responses(model, res.states)


def cmd_roc(cfg: ExperimentConfig, out: Path, threads=None) -> int:
    det = cfg.detection
    resp = _detection_inputs(cfg, threads)
    A = len(resp.noise_var)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for pfa in sorted(det.pr_fa):
        thr = mt.detection_threshold(pfa, A)
        pd_mc, _ = mt.monte_carlo_responses(resp, thr, det.mc_trials, rng.spawn(1)[0])
        rows.append([pfa, mt.detection_probability(resp.sum_sinr, pfa, A), pd_mc,
                     np.sqrt(max(pd_mc * (1 - pd_mc), 1e-300) / det.mc_trials)])
    write_csv(out / "roc.csv", _header(cfg, cfg.seed, f"sum_sinr={resp.sum_sinr!r} n_aps={A}"),
              ["pr_fa", "pr_d_analytic", "pr_d_mc", "mc_stderr"], rows)
    print(f"roc: {len(rows)} points, sum SINR {resp.sum_sinr:.4g}")
    return EXIT_OK


def cmd_detect_mc(cfg: ExperimentConfig, out: Path, threads=None) -> int:
    """Threshold calibration: empirical false-alarm and detection rates per target Pr_FA."""
    det = cfg.detection
    resp = _detection_inputs(cfg, threads)
    A = len(resp.noise_var)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    n = det.mc_trials
    for pfa in sorted(det.pr_fa):
        thr = mt.detection_threshold(pfa, A)
        pd_mc, pfa_mc = mt.monte_carlo_responses(resp, thr, n, rng.spawn(1)[0])
        rows.append([pfa, thr, pfa_mc, np.sqrt(pfa * (1 - pfa) / n),
                     mt.detection_probability(resp.sum_sinr, pfa, A), pd_mc,
                     np.sqrt(max(pd_mc * (1 - pd_mc), 1e-300) / n)])
    write_csv(out / "detect_mc.csv", _header(cfg, cfg.seed, f"sum_sinr={resp.sum_sinr!r} n_aps={A}"),
              ["pr_fa", "threshold", "pr_fa_mc", "pr_fa_stderr", "pr_d_analytic", "pr_d_mc", "pr_d_stderr"],
              rows)
    print(f"detect-mc: {len(rows)} points at {n} trials")
    return EXIT_OK


COMMANDS = {"design": cmd_design, "sweep": cmd_sweep, "roc": cmd_roc, "detect-mc": cmd_detect_mc}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coisac", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("config error: --threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, Path(args.out), args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleSubproblem as exc:
        print(f"infeasible: {exc} (minimum achievable MSE {exc.min_mse:.6g})", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
