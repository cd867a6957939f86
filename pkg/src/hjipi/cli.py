"""Command-line entry point.

Subcommands: solve-pinn-pi, solve-direct, solve-fdm, compare, trajectories,
probe-theory.  Every run writes a ``manifest.json`` into the output directory
recording the fully resolved configuration, the seed, wall-clock timings, and
a sha256 checksum per artifact.  Numeric artifacts are CSV (plus binary .npz
twins for grids and text checkpoints for networks), all written with
round-trip float formatting so a rerun with the same config and seed is
byte-identical.

Exit codes: 0 success, 2 configuration error, 3 missing input file,
4 solver runtime failure (instability / divergence), 1 unexpected error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import traceback

import numpy as np

from .analysis import (convergence_history, decomposition_residual_check,
                       emit_report, error_report_for_grid,
                       error_report_for_reference, gradient_feedback_policy,
                       lipschitz_selector_probe, simulate_paths,
                       write_trajectories_csv)
from .config import ConfigError, RunConfig, parse_config
from .fdm import (DecomposedReference, FDMInstabilityError, fdm_solve_2d,
                  grid_from_csv, grid_to_csv, load_grid,
                  reference_nd_isotropic, restrict_to_target, save_grid)
from .nets import load_network, save_network
from .policy_iteration import (TrainingDivergedError, direct_pinn_train,
                               run_policy_iteration, write_history_csv,
                               write_loss_csv)
from .problems import PathPlanningProblem, PubSubProblem

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_RUNTIME = 4


# ---------------------------------------------------------------------------
# plumbing


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Output directory plus the manifest being accumulated."""

    def __init__(self, cfg: RunConfig, command: str, argv: list[str]):
        self.cfg = cfg
        self.outdir = cfg.out_dir
        os.makedirs(self.outdir, exist_ok=True)
        self.t0 = time.perf_counter()
        self.manifest = {
            "command": command,
            "argv": argv,
            "config": cfg.resolved(),
            "seed": cfg.seed,
            "deterministic": cfg.deterministic,
            "workers": cfg.workers,
            "timings_seconds": {},
            "artifacts": {},
        }

    def path(self, *parts: str) -> str:
        full = os.path.join(self.outdir, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def register(self, path: str) -> str:
        rel = os.path.relpath(path, self.outdir)
        self.manifest["artifacts"][rel] = _sha256(path)
        return path

    def timing(self, label: str, seconds: float) -> None:
        self.manifest["timings_seconds"][label] = round(seconds, 6)

    def finish(self, extra: dict | None = None) -> None:
        if extra:
            self.manifest.update(extra)
        self.manifest["timings_seconds"]["total"] = round(
            time.perf_counter() - self.t0, 6)
        with open(os.path.join(self.outdir, "manifest.json"), "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"[{self.manifest['command']}] wrote "
              f"{len(self.manifest['artifacts'])} artifacts to {self.outdir}")


def _overrides_from_args(args) -> dict:
    """Flags beat file values; --set entries are JSON-parsed when possible."""
    overrides: dict = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, _, value = item.partition("=")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.deterministic:
        overrides["deterministic"] = True
    return overrides


def _load_run_config(args, command: str) -> tuple[RunConfig, _Run]:
    cfg = parse_config(args.config, _overrides_from_args(args))
    return cfg, _Run(cfg, command, list(sys.argv[1:]))


def _require_file(path: str | None, what: str) -> str:
    if path is None:
        raise ConfigError(f"missing required flag for {what}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _load_reference(path: str):
    if path.endswith(".csv"):
        return grid_from_csv(path)
    return load_grid(path)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_solve_pinn_pi(args) -> int:
    cfg, run = _load_run_config(args, "solve-pinn-pi")
    problem = cfg.build_problem()
    train_cfg = cfg.build_train_config()

    def checkpoint(record, state):
        ck = run.path("checkpoints", f"iter_{record.index:04d}.txt")
        save_network(state, ck)
        run.register(ck)
        meta = run.path("checkpoints", f"iter_{record.index:04d}.json")
        with open(meta, "w") as fh:
            json.dump({
                "iteration": record.index,
                "epochs": len(record.losses),
                "first_loss": record.losses[0] if record.losses else None,
                "last_loss": record.losses[-1] if record.losses else None,
                "residual_norm": record.residual_norm,
                "residual_se": record.residual_se,
                "sup_diff": record.sup_diff,
                "seconds": round(record.seconds, 6),
                "theta_start_sha256": record.theta_start_checksum,
                "theta_sha256": record.theta_checksum,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")
        run.register(meta)
        print(f"[solve-pinn-pi] iteration {record.index}: "
              f"loss {record.losses[-1]:.6g}, p_n {record.residual_norm:.6g}, "
              f"sup_diff {record.sup_diff:.6g}", flush=True)

    t0 = time.perf_counter()
    state, history = run_policy_iteration(problem, train_cfg,
                                          progress=checkpoint)
    run.timing("policy_iteration", time.perf_counter() - t0)

    hist_csv = run.path("history.csv")
    write_history_csv(history, hist_csv)
    run.register(hist_csv)
    final = run.path("network_final.txt")
    save_network(state, final)
    run.register(final)
    run.finish({"iterations": len(history.records),
                "converged": history.converged})
    return EXIT_OK


def _cmd_solve_direct(args) -> int:
    cfg, run = _load_run_config(args, "solve-direct")
    problem = cfg.build_problem()
    train_cfg = cfg.build_train_config()

    def report(epoch, loss):
        print(f"[solve-direct] epoch {epoch}: loss {loss:.6g}", flush=True)

    t0 = time.perf_counter()
    state, losses = direct_pinn_train(problem, train_cfg, progress=report)
    run.timing("direct_training", time.perf_counter() - t0)

    loss_csv = run.path("loss.csv")
    write_loss_csv(losses, loss_csv)
    run.register(loss_csv)
    final = run.path("network_final.txt")
    save_network(state, final)
    run.register(final)
    run.finish({"epochs": len(losses)})
    return EXIT_OK


def _cmd_solve_fdm(args) -> int:
    cfg, run = _load_run_config(args, "solve-fdm")
    problem = cfg.build_problem()
    fdm_cfg = cfg.build_fdm_config()

    t0 = time.perf_counter()
    if problem.dimension == 2:
        grid = fdm_solve_2d(problem, fdm_cfg)
        if fdm_cfg.target is not None:
            grid = restrict_to_target(grid, fdm_cfg.target)
        label = "grid"
        extra = {"solver": "dense_2d"}
    elif isinstance(problem, PubSubProblem) and problem.is_isotropic:
        reference = reference_nd_isotropic(problem, fdm_cfg)
        grid = reference.pair_grid
        label = "pair_grid"
        extra = {"solver": "pairwise_decomposition",
                 "n_agents": problem.n_agents}
    else:
        raise ConfigError(
            "dense FDM reference is 2-d only; higher-dimensional problems "
            "need the isotropic publisher-subscriber decomposition")
    run.timing("fdm_solve", time.perf_counter() - t0)

    npz = run.path(f"{label}.npz")
    save_grid(grid, npz)
    run.register(npz)
    csv_path = run.path(f"{label}.csv")
    grid_to_csv(grid, csv_path)
    run.register(csv_path)
    run.finish(extra)
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg, run = _load_run_config(args, "compare")
    problem = cfg.build_problem()
    net_path = _require_file(args.network, "network checkpoint (--network)")
    ref_path = _require_file(args.reference, "reference grid (--reference)")
    state = load_network(net_path)
    grid = _load_reference(ref_path)

    if args.times:
        times = [float(v) for v in args.times.split(",")]
    else:
        times = [float(t) for t in grid.times]

    label = cfg.problem["kind"]
    t0 = time.perf_counter()
    if problem.dimension == 2:
        report = error_report_for_grid(state, problem, grid, times,
                                       problem_label=label,
                                       method_label=args.method)
    else:
        if not isinstance(problem, PubSubProblem) or not problem.is_isotropic:
            raise ConfigError("high-dimensional compare needs an isotropic "
                              "publisher-subscriber problem (pairwise "
                              "decomposed reference)")
        reference = DecomposedReference(problem, grid)
        box = cfg.build_fdm_config().target
        if box is None:
            box = cfg.build_train_config().metrics_domain
        report = error_report_for_reference(
            state, problem, reference, times, box, args.samples, cfg.seed,
            problem_label=label, method_label=args.method)
    run.timing("compare", time.perf_counter() - t0)

    rates = []
    if args.history:
        hist_path = _require_file(args.history, "history CSV (--history)")
        sup_diffs = _sup_diffs_from_history_csv(hist_path)
        if np.isfinite(sup_diffs).sum() >= 3:
            rates.append(convergence_history(sup_diffs))
    paths = emit_report([report], rates, [], run.outdir)
    for p in paths.values():
        run.register(p)
    run.finish()
    return EXIT_OK


def _sup_diffs_from_history_csv(path: str) -> np.ndarray:
    """Last sup_diff entry per iteration, in iteration order."""
    import csv as _csv
    per_iter: dict[int, float] = {}
    with open(path, newline="") as fh:
        for row in _csv.DictReader(fh):
            per_iter[int(row["iteration"])] = float(row["sup_diff"])
    return np.asarray([per_iter[k] for k in sorted(per_iter)], dtype=float)


def _cmd_trajectories(args) -> int:
    cfg, run = _load_run_config(args, "trajectories")
    problem = cfg.build_problem()
    net_path = _require_file(args.network, "network checkpoint (--network)")
    state = load_network(net_path)

    if args.x0:
        x0 = np.asarray([float(v) for v in args.x0.split(",")], dtype=float)
        if x0.shape[0] != problem.dimension:
            raise ConfigError(f"--x0 has {x0.shape[0]} coordinates, problem "
                              f"dimension is {problem.dimension}")
    else:
        x0 = np.zeros(problem.dimension)

    policy = gradient_feedback_policy(state, problem,
                                      disturbance=args.disturbance)
    t0 = time.perf_counter()
    paths = simulate_paths(problem, policy, x0, args.dt, args.n_paths,
                           cfg.seed, n_steps=args.steps)
    run.timing("rollouts", time.perf_counter() - t0)

    traj_csv = run.path("trajectories.csv")
    write_trajectories_csv(paths, args.dt, traj_csv)
    run.register(traj_csv)
    run.finish({"n_paths": args.n_paths, "dt": args.dt,
                "steps": int(paths.shape[1] - 1)})
    return EXIT_OK


def _cmd_probe_theory(args) -> int:
    cfg, run = _load_run_config(args, "probe-theory")
    problem = cfg.build_problem()
    label = cfg.problem["kind"]

    if isinstance(problem, PathPlanningProblem):
        selector = lambda t, x, p: problem.optimal_control(p)  # noqa: E731
    else:
        selector = lambda t, x, p: problem.optimal_controls(t, x, p)  # noqa: E731
    t0 = time.perf_counter()
    probe = lipschitz_selector_probe(problem, selector, args.pairs, cfg.seed,
                                     label=label)
    run.timing("selector_probe", time.perf_counter() - t0)
    summary: dict = {}

    if (args.decomposition and isinstance(problem, PubSubProblem)
            and problem.is_isotropic):
        t0 = time.perf_counter()
        reference = reference_nd_isotropic(problem, cfg.build_fdm_config())
        stats = decomposition_residual_check(reference, problem,
                                             args.samples, cfg.seed)
        run.timing("decomposition_check", time.perf_counter() - t0)
        summary["decomposition_residual"] = {
            "mean_abs": stats.mean_abs, "max_abs": stats.max_abs,
            "rms": stats.rms, "n_points": stats.n_points}

    paths = emit_report([], [], [probe], run.outdir, summary_extra=summary)
    for p in paths.values():
        run.register(p)
    run.finish()
    print(f"[probe-theory] {label}: kappa_hat = {probe.kappa_hat:.6g} "
          f"over {probe.n_pairs} pairs")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing / dispatch


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--seed", type=int, help="root seed (overrides file)")
    sub.add_argument("--out", help="output directory (overrides file)")
    sub.add_argument("--workers", type=int,
                     help="parallelism cap (runs are sequential either way)")
    sub.add_argument("--deterministic", action="store_true",
                     help="force deterministic mode")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config key by dotted path, "
                          "e.g. training.epochs=50")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjipi",
        description="Policy-iteration PINN solvers and reference tools for "
                    "viscous Hamilton-Jacobi-Isaacs equations")
    subs = parser.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("solve-pinn-pi",
                         help="run mesh-free policy iteration")
    _add_common_flags(sp)
    sp.set_defaults(func=_cmd_solve_pinn_pi)

    sp = subs.add_parser("solve-direct",
                         help="run the direct PINN baseline at the same "
                              "total epoch budget")
    _add_common_flags(sp)
    sp.set_defaults(func=_cmd_solve_direct)

    sp = subs.add_parser("solve-fdm", help="compute the grid reference")
    _add_common_flags(sp)
    sp.set_defaults(func=_cmd_solve_fdm)

    sp = subs.add_parser("compare",
                         help="error table of a trained network against a "
                              "stored reference")
    _add_common_flags(sp)
    sp.add_argument("--network", help="network checkpoint file")
    sp.add_argument("--reference", help="reference grid (.npz or .csv)")
    sp.add_argument("--times", help="comma-separated report times "
                                    "(default: all stored)")
    sp.add_argument("--method", default="pinn_pi",
                    help="method label for the error rows")
    sp.add_argument("--history",
                    help="history.csv to fit a convergence rate from")
    sp.add_argument("--samples", type=int, default=4096,
                    help="Monte-Carlo samples for decomposed references")
    sp.set_defaults(func=_cmd_compare)

    sp = subs.add_parser("trajectories",
                         help="closed-loop SDE rollouts under the trained "
                              "feedback policy")
    _add_common_flags(sp)
    sp.add_argument("--network", help="network checkpoint file")
    sp.add_argument("--x0", help="comma-separated start state "
                                 "(default: origin)")
    sp.add_argument("--n-paths", type=int, default=10)
    sp.add_argument("--dt", type=float, default=0.01)
    sp.add_argument("--steps", type=int, default=None,
                    help="step count (default: horizon / dt)")
    sp.add_argument("--disturbance", choices=("adversarial", "zero"),
                    default="adversarial")
    sp.set_defaults(func=_cmd_trajectories)

    sp = subs.add_parser("probe-theory",
                         help="empirical checks of the theory: selector "
                              "Lipschitz probe, optional decomposition "
                              "residual")
    _add_common_flags(sp)
    sp.add_argument("--pairs", type=int, default=10000,
                    help="sampled gradient pairs for the Lipschitz probe")
    sp.add_argument("--decomposition", action="store_true",
                    help="also run the pairwise-decomposition residual "
                         "check (isotropic pub-sub only)")
    sp.add_argument("--samples", type=int, default=1000,
                    help="interior samples for the decomposition check")
    sp.set_defaults(func=_cmd_probe_theory)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (FDMInstabilityError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:  # pragma: no cover - last-resort diagnostics
        traceback.print_exc()
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
