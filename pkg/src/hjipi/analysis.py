"""Error metrics, convergence diagnostics, probes, rollouts, and reports.

Everything downstream of the solvers lives here: relative L2 errors against
finite-difference references, log-linear convergence-rate fits of the
per-iteration value changes, a Lipschitz probe for policy selectors,
Euler-Maruyama rollouts under trained feedback policies, the interior
residual check for the pairwise-decomposed high-dimensional reference, and
CSV/JSON report emission.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .fdm import DecomposedReference, TimeGrid, interpolate_batch
from .nets import JetContext, NetworkState, ansatz_value_batch, value_jet_batch
from .policy_iteration import IterationHistory
from .problems import Box, ProblemDefinition, PubSubProblem


# ---------------------------------------------------------------------------
# scalar metrics


def relative_l2_error(pred, ref) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ValueError("prediction and reference must have the same length")
    denom = float(np.linalg.norm(ref))
    if denom == 0.0:
        raise ValueError("reference is identically zero; relative error undefined")
    return float(np.linalg.norm(pred - ref) / denom)


def mse(pred, ref) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ValueError("prediction and reference must have the same length")
    d = pred - ref
    return float(np.mean(d * d))


# ---------------------------------------------------------------------------
# network-vs-reference error tables


@dataclass
class ErrorReport:
    """Rows of (t, relative L2, MSE) for one (problem, method) pair."""

    problem: str
    method: str
    rows: list[tuple[float, float, float]]

    def rel_l2_at(self, t: float, tol: float = 1e-9) -> float:
        for row in self.rows:
            if abs(row[0] - t) <= tol:
                return row[1]
        raise KeyError(f"no row at t={t}")


def error_report_for_grid(state: NetworkState, problem: ProblemDefinition,
                          grid: TimeGrid, times, *, problem_label: str,
                          method_label: str) -> ErrorReport:
    """Compare the value ansatz against stored reference slices on the
    reference's own nodes."""
    axes = [grid.axis_coords(i) for i in range(grid.dim)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.dim)
    rows = []
    for t in times:
        ref = grid.slice_at(float(t)).ravel()
        ts = np.full(nodes.shape[0], float(t))
        pred = ansatz_value_batch(state, ts, nodes, problem.terminal, problem.horizon)
        rows.append((float(t), relative_l2_error(pred, ref), mse(pred, ref)))
    return ErrorReport(problem_label, method_label, rows)


def error_report_for_reference(state: NetworkState, problem: ProblemDefinition,
                               reference: DecomposedReference, times, box: Box,
                               n_samples: int, seed: int, *, problem_label: str,
                               method_label: str) -> ErrorReport:
    """Monte-Carlo comparison against a decomposed high-dimensional
    reference on the given box (dense grids are 2-d only)."""
    rng = np.random.default_rng(seed)
    xs = box.sample(rng, n_samples)
    rows = []
    for t in times:
        ref = reference.value_batch(float(t), xs)
        ts = np.full(n_samples, float(t))
        pred = ansatz_value_batch(state, ts, xs, problem.terminal, problem.horizon)
        rows.append((float(t), relative_l2_error(pred, ref), mse(pred, ref)))
    return ErrorReport(problem_label, method_label, rows)


# ---------------------------------------------------------------------------
# convergence-rate fit


@dataclass(frozen=True)
class RateFit:
    """Per-iteration change norms and their log-linear fit
    log E_n = intercept + slope * n (n counting from 1)."""

    e_n: np.ndarray
    slope: float
    intercept: float
    r_squared: float


def convergence_history(history, max_points: int | None = None) -> RateFit:
    """Fit the sup-norm change series E_n = ||v_n - v_{n-1}||_inf.

    Accepts an IterationHistory or a raw sequence.  Non-positive entries
    are floored at machine epsilon before the log (an exact zero means the
    iterates coincided on the validation set; the floor keeps the fit
    defined).  Requires at least three entries.
    """
    if isinstance(history, IterationHistory):
        series = history.sup_diffs
    else:
        series = np.asarray(history, dtype=float)
    if max_points is not None:
        series = series[:max_points]
    series = series[np.isfinite(series)]
    if series.shape[0] < 3:
        raise ValueError("need at least three change norms to fit a rate")
    floored = np.maximum(series, np.finfo(float).eps)
    n = np.arange(1, len(floored) + 1, dtype=float)
    y = np.log(floored)
    a = np.stack([n, np.ones_like(n)], axis=1)
    coef, _, _, _ = np.linalg.lstsq(a, y, rcond=None)
    fit = a @ coef
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(series.copy(), float(coef[0]), float(coef[1]), r2)


# ---------------------------------------------------------------------------
# selector Lipschitz probe


@dataclass(frozen=True)
class SelectorProbeResult:
    label: str
    kappa_hat: float
    mean_ratio: float
    n_pairs: int


def lipschitz_selector_probe(problem: ProblemDefinition, selector, n_pairs: int,
                             seed: int, *, domain: Box | None = None,
                             p_scale: float = 1.0, min_separation: float = 1e-3,
                             label: str | None = None) -> SelectorProbeResult:
    """Empirical Lipschitz constant of a selector map (t, x, p) -> control(s).

    Samples (t, x) and gradient pairs with separation at least
    ``min_separation`` (alternating nearby perturbations, which resolve the
    local slope, and independent draws, which catch jumps) and returns the
    largest and mean displacement ratio ||s(p1) - s(p2)|| / |p1 - p2|.
    Tuple-valued selectors are concatenated before measuring displacement.
    """
    if domain is None:
        domain = Box.cube(problem.dimension, -1.0, 1.0)
    rng = np.random.default_rng(seed)
    d = problem.dimension

    def as_vec(out):
        if isinstance(out, tuple):
            return np.concatenate([np.asarray(o, dtype=float).ravel() for o in out])
        return np.asarray(out, dtype=float).ravel()

    ratios = []
    while len(ratios) < n_pairs:
        t = float(rng.uniform(0.0, problem.horizon))
        x = domain.sample(rng, 1)[0]
        p1 = p_scale * rng.standard_normal(d)
        if len(ratios) % 2 == 0:
            step = rng.standard_normal(d)
            step *= 2.0 * min_separation / np.linalg.norm(step)
            p2 = p1 + step
        else:
            p2 = p_scale * rng.standard_normal(d)
        sep = float(np.linalg.norm(p1 - p2))
        if sep < min_separation:
            continue
        disp = float(np.linalg.norm(as_vec(selector(t, x, p1)) - as_vec(selector(t, x, p2))))
        ratios.append(disp / sep)
    ratios = np.asarray(ratios)
    return SelectorProbeResult(label or type(problem).__name__,
                               float(np.max(ratios)), float(np.mean(ratios)),
                               int(n_pairs))


# ---------------------------------------------------------------------------
# rollouts


def gradient_feedback_policy(state: NetworkState, problem: ProblemDefinition,
                             disturbance: str = "adversarial"):
    """Feedback (a, b) at (t, x) from the trained value gradient.

    ``disturbance='adversarial'`` plays the closed-form maximizer;
    ``'zero'`` replaces b by the admissible point closest to 0.
    """
    if disturbance not in ("adversarial", "zero"):
        raise ValueError("disturbance must be 'adversarial' or 'zero'")
    ctx = JetContext.for_problem(problem)

    def policy(t: float, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        jet = value_jet_batch(state, np.asarray([t]), x[None, :], ctx)
        a, b = problem.optimal_controls(t, x, jet.grad_x[0])
        if disturbance == "zero":
            b = problem.control_set_b.project(np.zeros_like(b))
        return a, b

    return policy


def euler_maruyama(problem: ProblemDefinition, policy, x0, dt: float,
                   n_steps: int, rng) -> np.ndarray:
    """One controlled path X_{k+1} = X_k + f dt + sigma sqrt(dt) xi_k."""
    if dt <= 0 or n_steps < 1:
        raise ValueError("need dt > 0 and n_steps >= 1")
    rng = np.random.default_rng(rng)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (problem.dimension,):
        raise ValueError(f"x0 must have shape ({problem.dimension},)")
    path = np.empty((n_steps + 1, problem.dimension))
    path[0] = x
    sqdt = np.sqrt(dt)
    for k in range(n_steps):
        t = k * dt
        a, b = policy(t, x)
        xi = rng.standard_normal(problem.dimension)
        x = x + problem.drift(t, x, a, b) * dt + problem.sigma(t, x) @ xi * sqdt
        path[k + 1] = x
    return path


def simulate_paths(problem: ProblemDefinition, policy, x0, dt: float,
                   n_paths: int, seed: int, n_steps: int | None = None) -> np.ndarray:
    """Independent rollouts to the horizon (or ``n_steps``); one child
    stream per path so path j is reproducible in isolation."""
    if n_steps is None:
        n_steps = int(round(problem.horizon / dt))
    children = np.random.SeedSequence(seed).spawn(n_paths)
    return np.stack([euler_maruyama(problem, policy, x0, dt, n_steps, child)
                     for child in children])


def write_trajectories_csv(paths: np.ndarray, dt: float, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        d = paths.shape[2]
        w.writerow(["path_id", "step", "t"] + [f"x{i}" for i in range(d)])
        for j in range(paths.shape[0]):
            for k in range(paths.shape[1]):
                w.writerow([j, k, repr(k * dt)] + [repr(float(c)) for c in paths[j, k]])


# ---------------------------------------------------------------------------
# decomposition residual check


@dataclass(frozen=True)
class DecompositionStats:
    mean_abs: float
    max_abs: float
    rms: float
    n_points: int


def decomposition_residual_check(reference: DecomposedReference,
                                 problem: PubSubProblem, n_points: int,
                                 seed: int) -> DecompositionStats:
    """Interior PDE residual of the decomposed surrogate v_hat.

    Samples interior stored times and interior grid nodes, reconstructs the
    space-time derivatives of v_hat from pair-grid finite differences, and
    plugs them into the full N-dimensional equation of ``problem``.  For
    N = 2 the result is pure discretization error (the decomposition is
    exact); for N > 2 it adds the truncation of the cross-subscriber
    interactions, which is what this check quantifies.
    """
    if not problem.is_isotropic:
        raise ValueError("the decomposition check applies to isotropic problems")
    if problem.n_agents != reference.problem.n_agents:
        raise ValueError("problem dimension does not match the reference")
    grid = reference.pair_grid
    v = grid.values
    tt = grid.times
    m, nx, ny = v.shape
    if m < 3:
        raise ValueError("need at least three stored slices for time differences")
    n_subs = problem.n_agents - 1
    dx0, dx1 = grid.dx
    rng = np.random.default_rng(seed)

    k = rng.integers(1, m - 1, size=n_points)
    i0 = rng.integers(1, nx - 1, size=n_points)
    si = rng.integers(1, ny - 1, size=(n_points, n_subs))

    kc = k[:, None]
    ic = i0[:, None]
    c = v[kc, ic, si]
    dt_pair = (v[kc + 1, ic, si] - v[kc - 1, ic, si]) / (tt[k + 1] - tt[k - 1])[:, None]
    d0 = (v[kc, ic + 1, si] - v[kc, ic - 1, si]) / (2.0 * dx0)
    d1 = (v[kc, ic, si + 1] - v[kc, ic, si - 1]) / (2.0 * dx1)
    d00 = (v[kc, ic + 1, si] - 2.0 * c + v[kc, ic - 1, si]) / (dx0 * dx0)
    d11 = (v[kc, ic, si + 1] - 2.0 * c + v[kc, ic, si - 1]) / (dx1 * dx1)

    xs = np.empty((n_points, problem.n_agents))
    xs[:, 0] = grid.axis_coords(0)[i0]
    xs[:, 1:] = grid.axis_coords(1)[si]
    ps = np.empty_like(xs)
    ps[:, 0] = d0.sum(axis=1)
    ps[:, 1:] = d1

    scale2 = problem.noise_scale ** 2
    trace = scale2 * (d00.sum(axis=1) + d11.sum(axis=1))
    ham = problem.hamiltonian_batch(tt[k], xs, ps)
    res = dt_pair.sum(axis=1) + ham + 0.5 * trace
    return DecompositionStats(float(np.mean(np.abs(res))),
                              float(np.max(np.abs(res))),
                              float(np.sqrt(np.mean(res * res))),
                              int(n_points))


# ---------------------------------------------------------------------------
# misc statistics


def spearman_rho(a, b) -> float:
    """Rank correlation with average ranks on ties (no scipy dependency)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise ValueError("need two equal-length 1-d samples")

    def ranks(u):
        order = np.argsort(u, kind="stable")
        r = np.empty(len(u))
        sorted_u = u[order]
        i = 0
        while i < len(u):
            j = i
            while j + 1 < len(u) and sorted_u[j + 1] == sorted_u[i]:
                j += 1
            r[order[i:j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return r

    ra, rb = ranks(a), ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.sum(ra * ra) * np.sum(rb * rb))
    if denom == 0.0:
        raise ValueError("constant sample has no rank correlation")
    return float(np.sum(ra * rb) / denom)


# ---------------------------------------------------------------------------
# report emission


def emit_report(errors, rates, probes, outdir, *,
                summary_extra=None) -> dict[str, str]:
    """Write errors.csv / rates.csv / probes.csv / summary.json.

    ``errors``: ErrorReport iterable, schema (problem, method, t, rel_l2,
    mse).  ``rates``: RateFit iterable, schema (iteration, e_n).
    ``probes``: SelectorProbeResult iterable, schema (problem, kappa_hat,
    n_samples).  Row order follows input order and floats print as shortest
    round-trip reprs, so reruns on identical inputs are byte-identical.
    """
    os.makedirs(outdir, exist_ok=True)
    paths = {}

    path = os.path.join(outdir, "errors.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem", "method", "t", "rel_l2", "mse"])
        for rep in errors:
            for t, rel, m in rep.rows:
                w.writerow([rep.problem, rep.method, repr(t), repr(rel), repr(m)])
    paths["errors"] = path

    path = os.path.join(outdir, "rates.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "e_n"])
        for fit in rates:
            for i, e in enumerate(fit.e_n, start=1):
                w.writerow([i, repr(float(e))])
    paths["rates"] = path

    path = os.path.join(outdir, "probes.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem", "kappa_hat", "n_samples"])
        for probe in probes:
            w.writerow([probe.label, repr(probe.kappa_hat), probe.n_pairs])
    paths["probes"] = path

    summary = {} if summary_extra is None else dict(summary_extra)
    summary["rate_fits"] = [
        {"slope": fit.slope, "intercept": fit.intercept,
         "r_squared": fit.r_squared, "n_iterations": int(len(fit.e_n))}
        for fit in rates]
    summary["probes"] = [
        {"problem": p.label, "kappa_hat": p.kappa_hat,
         "mean_ratio": p.mean_ratio, "n_pairs": p.n_pairs}
        for p in probes]
    path = os.path.join(outdir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["summary"] = path
    return paths
