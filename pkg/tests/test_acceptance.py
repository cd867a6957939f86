"""Acceptance suite: one test per shipped guarantee.

Each test prints a single ``[criterion NN] PASS/FAIL`` line with the
measured figures before asserting, so a bare ``pytest -s`` run doubles as
an acceptance report.  Criteria 05-07 train real networks against grid
references and dominate the runtime (tens of minutes); everything else
finishes in seconds.  Criterion 07 reuses the runs of criterion 06 via a
module-scoped cache instead of retraining.
"""

import json
import time

import numpy as np
import pytest

from hjipi.analysis import (convergence_history, decomposition_residual_check,
                            error_report_for_grid, lipschitz_selector_probe)
from hjipi.cli import main
from hjipi.fdm import (FDMConfig, fdm_solve_2d, reference_nd_isotropic,
                       restrict_to_target)
from hjipi.nets import (JetContext, NetworkArch, ansatz_value_batch,
                        loss_param_gradient, value_jet_batch, xavier_init)
from hjipi.policy_iteration import (PITrainConfig, direct_pinn_train,
                                    run_policy_iteration)
from hjipi.problems import Box, PathPlanningProblem, PubSubProblem

from support import (GaussianBump, HeatProblem, ToySaddleProblem,
                     brute_force_hamiltonian_path,
                     brute_force_hamiltonian_pubsub, fd_ansatz_jet, rel_err)


def check(num, label, ok, detail=""):
    """Print the verdict line first so the report survives the assert."""
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}: {label}"
          f" ({detail})", flush=True)
    assert ok, f"criterion {num:02d} {label}: {detail}"


# ---------------------------------------------------------------------------
# 01 derivative engine vs. central finite differences


class TestCriterion01DerivativeEngine:
    def test_jets_and_parameter_gradients_match_finite_differences(self):
        """Three random small networks, 100 points each: jet gradient within
        1e-6, diffusion contraction within 1e-4, loss parameter gradient
        within 1e-5 of central differences, all inside a minute."""
        t0 = time.perf_counter()
        terminal = GaussianBump(0.8, np.array([0.2, -0.1]))
        a_mat = np.array([[0.05, 0.01], [0.01, 0.04]])
        ctx = JetContext(a_mat, terminal, 1.0)
        worst_grad = worst_contract = worst_param = 0.0

        def residual(ts, xs, jet):
            from hjipi.nets import BatchJet
            w = np.array([0.4, -0.9])
            res = jet.dv_dt + 0.7 * jet.v + jet.grad_x @ w + 0.3 * jet.diff_contract
            return res, BatchJet(v=0.7, dv_dt=1.0, grad_x=w, diff_contract=0.3)

        for seed, hidden in ((0, (8, 8)), (1, (10, 6)), (2, (12,))):
            state = xavier_init(NetworkArch(3, hidden), seed=seed)
            rng = np.random.default_rng(seed + 50)
            ts = rng.uniform(0.05, 0.95, 100)
            xs = rng.uniform(-1.0, 1.0, (100, 2))
            jet = value_jet_batch(state, ts, xs, ctx)
            for j in range(100):
                dv_dt, grad, contract = fd_ansatz_jet(state, ts[j], xs[j],
                                                      a_mat, terminal, 1.0)
                worst_grad = max(worst_grad,
                                 rel_err(jet.grad_x[j], grad),
                                 rel_err(jet.dv_dt[j], dv_dt))
                worst_contract = max(worst_contract,
                                     rel_err(jet.diff_contract[j], contract))
            _, grad_theta = loss_param_gradient(state, (ts, xs), ctx, residual)
            h = 1e-6
            for k in range(0, state.arch.n_params, 7):
                theta = state.theta.copy()
                theta[k] += h
                lp, _ = loss_param_gradient(state.with_theta(theta),
                                            (ts, xs), ctx, residual)
                theta[k] -= 2 * h
                lm, _ = loss_param_gradient(state.with_theta(theta),
                                            (ts, xs), ctx, residual)
                worst_param = max(worst_param,
                                  rel_err(grad_theta[k], (lp - lm) / (2 * h)))
        seconds = time.perf_counter() - t0
        check(1, "derivative engine matches finite differences",
              worst_grad < 1e-6 and worst_contract < 1e-4
              and worst_param < 1e-5 and seconds < 60.0,
              f"grad {worst_grad:.2e} contract {worst_contract:.2e} "
              f"param {worst_param:.2e} in {seconds:.1f}s")


# ---------------------------------------------------------------------------
# 02 terminal condition is exact by construction


class TestCriterion02TerminalExactness:
    def test_value_at_horizon_equals_terminal_cost(self):
        """max over 1e4 random states of |v(T,x) - g(x)| stays at 1e-12
        relative (the ansatz multiplies the network by T - t = 0)."""
        t0 = time.perf_counter()
        worst = 0.0
        for problem, seed in ((PathPlanningProblem(), 0), (PubSubProblem(3), 1)):
            state = xavier_init(NetworkArch(problem.dimension + 1, (16, 16)),
                                seed=seed)
            rng = np.random.default_rng(seed + 10)
            xs = rng.uniform(-1.5, 1.5, (10_000, problem.dimension))
            vals = ansatz_value_batch(state, np.full(10_000, problem.horizon),
                                      xs, problem.terminal, problem.horizon)
            g = problem.terminal.value_batch(xs)
            worst = max(worst, float(np.max(np.abs(vals - g)
                                            / np.maximum(1.0, np.abs(g)))))
        seconds = time.perf_counter() - t0
        check(2, "terminal condition exact at the horizon",
              worst <= 1e-12, f"max relative gap {worst:.2e} in {seconds:.1f}s")


# ---------------------------------------------------------------------------
# 03 closed-form Hamiltonians vs. brute-force grid sup-inf


class TestCriterion03HamiltonianOracle:
    def test_closed_forms_match_grid_optimization(self):
        """100 random (t, x, p) per benchmark on 201-point control grids,
        plus branch continuity of the path Hamiltonian at |p| = 2 lam1."""
        t0 = time.perf_counter()
        path = PathPlanningProblem()
        pubsub = PubSubProblem(3)
        rng = np.random.default_rng(7)
        worst_margin = -np.inf
        for _ in range(100):
            t = rng.uniform(0.0, 1.0)
            x = rng.uniform(-1.0, 1.0, 2)
            p = rng.normal(0.0, 1.0, 2) * rng.choice([0.05, 0.5, 3.0])
            brute, tol = brute_force_hamiltonian_path(path, t, x, p)
            worst_margin = max(worst_margin,
                               abs(path.hamiltonian(t, x, p) - brute) - tol)
        for _ in range(100):
            x = rng.normal(0.0, 0.8, 3)
            p = rng.normal(0.0, 1.0, 3)
            brute, tol = brute_force_hamiltonian_pubsub(pubsub, x, p)
            worst_margin = max(worst_margin,
                               abs(pubsub.hamiltonian(0.0, x, p) - brute) - tol)

        # At |p| = 2 lam1 the clipped and unclipped control branches must
        # produce the same value; compare both closed forms at the switch.
        x_far = np.array([20.0, 20.0])  # obstacle term ~ exp(-2000): zero
        branch_gap = 0.0
        for angle in np.linspace(0.0, 2.0 * np.pi, 17):
            p = 2.0 * path.lam1 * np.array([np.cos(angle), np.sin(angle)])
            q = np.linalg.norm(p)
            low = -q * q / (4.0 * path.lam1) + path.delta * q
            high = path.lam1 - q + path.delta * q
            branch_gap = max(branch_gap, abs(low - high),
                             abs(path.hamiltonian(0.0, x_far, p) - low))
        seconds = time.perf_counter() - t0
        check(3, "Hamiltonian closed forms match brute-force sup-inf",
              worst_margin <= 0.0 and branch_gap <= 1e-12 and seconds < 60.0,
              f"worst margin {worst_margin:.2e} branch gap {branch_gap:.2e} "
              f"in {seconds:.1f}s")


# ---------------------------------------------------------------------------
# 04 grid solver converges at second order on a diffusion oracle


class TestCriterion04GridSolverConvergence:
    def test_heat_kernel_error_drops_3x_per_refinement(self):
        """Pure-diffusion problem with a Gaussian-smoothing exact solution:
        interior sup error shrinks at least 3x per dx halving, three levels."""
        t0 = time.perf_counter()
        prob = HeatProblem()
        target = Box.cube(2, -1.0, 1.0)
        errors = []
        for n in (21, 41, 81):
            cfg = FDMConfig(extended=Box.cube(2, -2.0, 2.0), n_points=n,
                            store_times=(0.0,))
            grid = restrict_to_target(fdm_solve_2d(prob, cfg), target)
            nodes = np.stack(np.meshgrid(grid.axis_coords(0),
                                         grid.axis_coords(1),
                                         indexing="ij"), axis=-1).reshape(-1, 2)
            errors.append(float(np.max(np.abs(grid.slice_at(0.0).ravel()
                                              - prob.exact(0.0, nodes)))))
        seconds = time.perf_counter() - t0
        ratios = (errors[0] / errors[1], errors[1] / errors[2])
        check(4, "grid solver is second order on the diffusion oracle",
              ratios[0] >= 3.0 and ratios[1] >= 3.0 and seconds < 120.0,
              f"sup errors {errors[0]:.2e}/{errors[1]:.2e}/{errors[2]:.2e} "
              f"ratios {ratios[0]:.1f}x {ratios[1]:.1f}x in {seconds:.1f}s")


# ---------------------------------------------------------------------------
# 05 desk-scale path planning vs. grid reference


class TestCriterion05PathPlanningAccuracy:
    def test_median_relative_error_within_5_percent(self):
        """Reduced budget (M=50, E=500, 2000 collocation points) against a
        101-points-per-axis reference: median relative L2 error over 3 seeds
        at t in {0, 0.25, 0.5, 0.75} stays within 5e-2, in under 30 min.
        The full-budget 1e-2 target is reported per time but not gating."""
        t0 = time.perf_counter()
        prob = PathPlanningProblem()
        ref_cfg = FDMConfig(extended=Box.cube(2, -2.0, 2.0),
                            target=Box.cube(2, -1.0, 1.0), n_points=101,
                            time_steps=2500,
                            store_times=(0.0, 0.25, 0.5, 0.75))
        ref = restrict_to_target(fdm_solve_2d(prob, ref_cfg), ref_cfg.target)
        times = [0.0, 0.25, 0.5, 0.75]
        rels = np.empty((3, len(times)))
        for row, seed in enumerate((0, 1, 2)):
            cfg = PITrainConfig(epochs=500, max_updates=50, n_interior=2000,
                                domain=Box.cube(2, -1.0, 1.0),
                                hidden=(64, 64, 64, 64), tolerance=1e-12,
                                seed=seed, dtype="float32")
            state, _ = run_policy_iteration(prob, cfg)
            report = error_report_for_grid(state, prob, ref, times,
                                           problem_label="path_planning",
                                           method_label="pinn_pi")
            rels[row] = [report.rel_l2_at(t) for t in times]
        medians = np.median(rels, axis=0)
        minutes = (time.perf_counter() - t0) / 60.0
        detail = " ".join(f"t={t}:{m:.4f}" for t, m in zip(times, medians))
        stretch = bool(np.all(medians <= 1e-2))
        print(f"[criterion 05] stretch target 1e-2 "
              f"{'met' if stretch else 'not met (desk budget, non-gating)'}",
              flush=True)
        check(5, "desk path planning within 5e-2 of the grid reference",
              bool(np.all(medians <= 5e-2)) and minutes <= 30.0,
              f"median rel L2 {detail} in {minutes:.1f} min")


# ---------------------------------------------------------------------------
# 06/07 policy iteration vs. direct training, and its convergence rate


@pytest.fixture(scope="module")
def pubsub_benchmark_runs():
    """Three seeds of matched-budget PI and direct runs on the 2-d game.

    Policy iteration spends 12 updates x 1500 epochs; direct training gets
    the same 18000-epoch total.  Both share the network size, sampling
    budget, and float32 arithmetic; errors are measured at t=0 against a
    dense grid reference on the reporting box.
    """
    prob = PubSubProblem(2)
    ref_cfg = FDMConfig(extended=Box.cube(2, -1.5, 1.5),
                        target=Box.cube(2, -0.5, 0.5), n_points=121,
                        time_steps=5000, store_times=(0.0,))
    ref = restrict_to_target(fdm_solve_2d(prob, ref_cfg), ref_cfg.target)
    t0 = time.perf_counter()
    pi_rel, direct_rel, histories = [], [], []
    for seed in (0, 1, 2):
        cfg = PITrainConfig(epochs=1500, max_updates=12, n_interior=2000,
                            domain=Box.cube(2, -1.5, 1.5),
                            target_domain=Box.cube(2, -0.5, 0.5),
                            hidden=(64, 64, 64), tolerance=1e-12, seed=seed,
                            dtype="float32")
        state, history = run_policy_iteration(prob, cfg)
        pi_rel.append(error_report_for_grid(
            state, prob, ref, [0.0], problem_label="pub_sub",
            method_label="pinn_pi").rel_l2_at(0.0))
        histories.append(history)
        dstate, _ = direct_pinn_train(prob, cfg)
        direct_rel.append(error_report_for_grid(
            dstate, prob, ref, [0.0], problem_label="pub_sub",
            method_label="direct").rel_l2_at(0.0))
    minutes = (time.perf_counter() - t0) / 60.0
    return pi_rel, direct_rel, histories, minutes


class TestCriterion06PolicyIterationBeatsDirect:
    def test_median_error_at_matched_epoch_budget(self, pubsub_benchmark_runs):
        """2-d isotropic game, 3 seeds, 18000 total epochs each way: the
        median relative L2 error of policy iteration at t=0 is no worse
        than direct residual training's."""
        pi_rel, direct_rel, _, minutes = pubsub_benchmark_runs
        pi_med = float(np.median(pi_rel))
        direct_med = float(np.median(direct_rel))
        check(6, "policy iteration matches or beats direct training",
              pi_med <= direct_med and minutes <= 30.0,
              f"PI median {pi_med:.4f} vs direct {direct_med:.4f} "
              f"(seeds: PI {[f'{r:.3f}' for r in pi_rel]}, "
              f"direct {[f'{r:.3f}' for r in direct_rel]}) "
              f"in {minutes:.1f} min")


class TestCriterion07ExponentialIterationDecay:
    def test_log_linear_fit_of_update_sizes(self, pubsub_benchmark_runs):
        """Over the first 10 policy updates the sup-norm change between
        consecutive value iterates fits log E_n = a + b n with b < 0 and
        R^2 >= 0.5 on every seed."""
        _, _, histories, _ = pubsub_benchmark_runs
        fits = [convergence_history(h, max_points=10) for h in histories]
        detail = " ".join(f"seed{i}: slope {f.slope:.3f} R2 {f.r_squared:.2f}"
                          for i, f in enumerate(fits))
        check(7, "policy updates shrink at a fitted exponential rate",
              all(f.slope < 0.0 and f.r_squared >= 0.5 for f in fits), detail)


# ---------------------------------------------------------------------------
# 08 selector maps are Lipschitz with the predicted constants


class TestCriterion08SelectorLipschitz:
    def test_probed_constants_match_theory(self):
        """Path-planning control selector stays below 5.05 (analytic 5) over
        1e4 pairs; the quadratic saddle selector lands within 5% of its
        hand-derived operator norm."""
        t0 = time.perf_counter()
        path = PathPlanningProblem()
        probe = lipschitz_selector_probe(
            path, lambda t, x, p: path.optimal_control(p), 10_000, seed=0)
        toy = ToySaddleProblem()
        toy_probe = lipschitz_selector_probe(
            toy, lambda t, x, p: toy.optimal_controls(t, x, p), 10_000, seed=1)
        gap = abs(toy_probe.kappa_hat - toy.selector_lipschitz)
        seconds = time.perf_counter() - t0
        check(8, "selector Lipschitz probes match the predicted constants",
              probe.kappa_hat <= 5.05
              and gap <= 0.05 * toy.selector_lipschitz,
              f"path kappa {probe.kappa_hat:.4f} (bound 5.05), toy "
              f"{toy_probe.kappa_hat:.4f} vs {toy.selector_lipschitz:.4f} "
              f"in {seconds:.1f}s")


# ---------------------------------------------------------------------------
# 09 pairwise decomposition of the many-agent game


class TestCriterion09DecompositionValidity:
    def test_pair_sum_residual_and_two_agent_exactness(self):
        """The summed pair surrogate's interior residual for N=3 stays within
        5x the N=2 figure (which is pure discretization error), and the N=2
        surrogate IS the direct solve, bit for bit."""
        t0 = time.perf_counter()
        stats = {}
        refs = {}
        for n in (2, 3):
            prob = PubSubProblem(n)
            cfg = FDMConfig(extended=Box.cube(n, -1.5, 1.5), n_points=41,
                            time_steps=2500, store_every=5)
            refs[n] = reference_nd_isotropic(prob, cfg)
            stats[n] = decomposition_residual_check(refs[n], prob, 1000, seed=0)
        direct = fdm_solve_2d(PubSubProblem(2),
                              FDMConfig(extended=Box.cube(2, -1.5, 1.5),
                                        n_points=41, time_steps=2500,
                                        store_every=5))
        bitwise = (refs[2].pair_grid.values.tobytes()
                   == direct.values.tobytes())
        ratio = stats[3].mean_abs / stats[2].mean_abs
        seconds = time.perf_counter() - t0
        check(9, "pair decomposition is exact for N=2 and tight for N=3",
              ratio <= 5.0 and bitwise and seconds < 300.0,
              f"mean |residual| N=3/N=2 = {stats[3].mean_abs:.2e}/"
              f"{stats[2].mean_abs:.2e} = {ratio:.2f}x, "
              f"N=2 bitwise={bitwise}, in {seconds:.1f}s")


# ---------------------------------------------------------------------------
# 10 reruns are byte-identical


class TestCriterion10Reproducibility:
    def test_identical_config_and_seed_reproduce_csv_bytes(self, tmp_path):
        """The same tiny solve commands run twice in deterministic mode
        produce byte-identical CSV artifacts."""
        t0 = time.perf_counter()
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({
            "problem": {"kind": "path_planning"},
            "training": {"epochs": 5, "max_updates": 2, "n_interior": 64,
                         "hidden": [8, 8], "n_validation": 32,
                         "residual_samples": 64},
            "fdm": {"n_points": 21, "time_steps": 200},
            "seed": 11,
            "deterministic": True,
        }))
        same = []
        for sub, artifact in (("solve-pinn-pi", "history.csv"),
                              ("solve-fdm", "grid.csv")):
            blobs = []
            for run in ("a", "b"):
                out = tmp_path / f"{sub}-{run}"
                assert main([sub, "--config", str(cfg_path),
                             "--out", str(out)]) == 0
                blobs.append((out / artifact).read_bytes())
            same.append(blobs[0] == blobs[1])
        seconds = time.perf_counter() - t0
        check(10, "identical config and seed give byte-identical CSVs",
              all(same),
              f"history.csv match={same[0]} grid.csv match={same[1]} "
              f"in {seconds:.1f}s")
