"""Policy iteration with physics-informed training of the value network.

Outer loop (policy update n = 0, 1, ...):

* freeze the current policy pair; iteration 0 uses a constant control pair
  drawn uniformly from the admissible sets (constant in (t, x), hence
  Lipschitz),
* policy evaluation: train the value ansatz v = g + (T - t) N_theta for E
  Adam epochs on the *linear* PDE residual under the frozen policy,
  resampling the collocation batch every ``resample_interval`` epochs and
  warm-starting theta from the previous iteration,
* policy improvement: the next policy is the pointwise two-stage minimax of
  the pre-Hamiltonian L(a, b) = c + grad_x v . f at the new value gradient
  (closed form where the problem provides it, else a nested projected
  gradient scheme with a Danskin outer step),
* stop once the sup-norm change of the value on a fixed validation set
  falls below ``tolerance``.

A direct trainer on the full Hamiltonian residual (same ansatz, same
optimizer) is included as the single-shot baseline.
"""

from __future__ import annotations

import csv
import hashlib
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .nets import (
    BatchJet,
    JetContext,
    NetworkArch,
    NetworkState,
    forward_batch,
    loss_param_gradient,
    value_jet_batch,
    xavier_init,
)
from .optim import adam_step, init_adam
from .problems import Box, ProblemDefinition


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MinimaxConfig:
    """Nested projected-gradient minimax over the control sets."""

    step_size: float = 0.05
    max_iterations: int = 200
    tolerance: float = 1e-6
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.step_size <= 0 or self.max_iterations < 1 or self.tolerance <= 0:
            raise ValueError("minimax config values must be positive")


@dataclass(frozen=True)
class PITrainConfig:
    """Knobs of one policy-iteration run.

    ``domain`` is the (extended) collocation box; ``target_domain`` is where
    residual diagnostics are sampled (defaults to ``domain``).  ``epochs``
    is E per policy update, ``max_updates`` is the cap M on updates.
    """

    epochs: int
    max_updates: int
    n_interior: int
    domain: Box
    target_domain: Box | None = None
    resample_interval: int = 100
    tolerance: float = 1e-4
    learning_rate: float = 1e-3
    n_validation: int = 2048
    residual_samples: int = 4096
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64, 64)
    dtype: str = "float64"
    selector: str = "closed_form"
    minimax: MinimaxConfig = field(default_factory=MinimaxConfig)
    keep_checkpoints: bool = False
    terminal_mode: str = "ansatz"
    n_terminal: int = 256
    terminal_weight: float = 1.0

    def __post_init__(self):
        if self.epochs < 0 or self.max_updates < 1:
            raise ValueError("epochs must be >= 0 and max_updates >= 1")
        if self.n_interior < 1 or self.n_validation < 1 or self.residual_samples < 1:
            raise ValueError("sample counts must be positive")
        if self.resample_interval < 1:
            raise ValueError("resample_interval must be >= 1")
        if self.tolerance <= 0 or self.learning_rate <= 0:
            raise ValueError("tolerance and learning rate must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        if self.selector not in ("closed_form", "numeric"):
            raise ValueError("selector must be 'closed_form' or 'numeric'")
        if self.terminal_mode not in ("ansatz", "penalty"):
            raise ValueError("terminal_mode must be 'ansatz' or 'penalty'")
        if self.terminal_mode == "penalty" and self.n_terminal < 1:
            raise ValueError("penalty mode needs n_terminal >= 1")
        if self.terminal_weight < 0:
            raise ValueError("terminal_weight must be nonnegative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def metrics_domain(self) -> Box:
        return self.target_domain if self.target_domain is not None else self.domain

    def jet_context(self, problem: ProblemDefinition) -> JetContext:
        """Ansatz mode bakes g and T into the jets; penalty mode trains the
        bare network and must learn the terminal condition from the loss."""
        if self.terminal_mode == "ansatz":
            return JetContext.for_problem(problem)
        return JetContext.raw(problem.diffusion.a_mat)


# ---------------------------------------------------------------------------
# collocation


@dataclass(frozen=True)
class CollocationBatch:
    """Interior space-time samples: ts (n,) in [0, T), xs (n, d); optional
    terminal-slice samples for the penalty ablation."""

    ts: np.ndarray
    xs: np.ndarray
    terminal_xs: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ts.shape[0]


def sample_collocation(domain: Box, horizon: float, n: int, rng,
                       n_terminal: int = 0) -> CollocationBatch:
    """Uniform samples on [0, T) x domain.  ``rng`` is a Generator or seed."""
    if n < 1:
        raise ValueError("need at least one collocation point")
    rng = np.random.default_rng(rng)
    ts = rng.uniform(0.0, horizon, size=n)
    xs = domain.sample(rng, n)
    terminal = domain.sample(rng, n_terminal) if n_terminal > 0 else None
    return CollocationBatch(ts, xs, terminal)


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class PolicySnapshot:
    """Frozen feedback policy: either a constant pair or 'act greedily
    against the gradient of this value network'."""

    kind: str
    a_const: np.ndarray | None = None
    b_const: np.ndarray | None = None
    state: NetworkState | None = None
    selector: str = "closed_form"
    minimax: MinimaxConfig | None = None

    @classmethod
    def constant(cls, a, b) -> "PolicySnapshot":
        return cls("constant", a_const=np.asarray(a, float), b_const=np.asarray(b, float))

    @classmethod
    def network(cls, state: NetworkState, selector: str = "closed_form",
                minimax: MinimaxConfig | None = None) -> "PolicySnapshot":
        if selector not in ("closed_form", "numeric"):
            raise ValueError("selector must be 'closed_form' or 'numeric'")
        return cls("network", state=state, selector=selector, minimax=minimax)


def numeric_minimax(problem: ProblemDefinition, t: float, x, p,
                    config: MinimaxConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Two-stage sup_b inf_a of L(a, b) = c + p . f by projected gradients.

    Inner stage descends on a at fixed b; outer stage ascends on b using the
    Danskin gradient (the partial of L at the inner argmin).  Returns the
    final (argmin a at the final b, final b); warns when either stage hits
    the iteration cap without meeting the movement tolerance.
    """
    cfg = config or MinimaxConfig()
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    set_a, set_b = problem.control_set_a, problem.control_set_b

    def lag(a, b):
        return (problem.running_cost(t, x, a, b)
                + float(p @ problem.drift(t, x, a, b)))

    def fd_grad(fun, u):
        g = np.zeros_like(u)
        for i in range(u.size):
            up = u.copy(); up[i] += cfg.fd_step
            um = u.copy(); um[i] -= cfg.fd_step
            g[i] = (fun(up) - fun(um)) / (2.0 * cfg.fd_step)
        return g

    def inner_argmin(b):
        a = set_a.project(set_a.center)
        for _ in range(cfg.max_iterations):
            a_new = set_a.project(a - cfg.step_size * fd_grad(lambda u: lag(u, b), a))
            moved = float(np.linalg.norm(a_new - a))
            a = a_new
            if moved < cfg.tolerance:
                return a, True
        return a, False

    b = set_b.project(set_b.center)
    outer_ok = False
    inner_ok = True
    for _ in range(cfg.max_iterations):
        a_b, ok = inner_argmin(b)
        inner_ok = inner_ok and ok
        b_new = set_b.project(b + cfg.step_size * fd_grad(lambda u: lag(a_b, u), b))
        moved = float(np.linalg.norm(b_new - b))
        b = b_new
        if moved < cfg.tolerance:
            outer_ok = True
            break
    a, ok = inner_argmin(b)
    if not (outer_ok and inner_ok and ok):
        warnings.warn("numeric minimax hit the iteration cap before the movement "
                      "tolerance; returning the best iterate", RuntimeWarning)
    return a, b


def policy_improvement(snapshot: PolicySnapshot, t: float, x,
                       problem: ProblemDefinition) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise improved control pair from the snapshot's value gradient.

    Computes p = grad_x v at (t, x) from the frozen network and runs the
    two-stage minimax (closed form or numeric per the snapshot's selector
    mode).  Both returned controls are admissible by construction.
    """
    if snapshot.kind != "network":
        raise ValueError("policy improvement needs a value-network snapshot")
    x = np.asarray(x, dtype=float)
    ctx = JetContext.for_problem(problem)
    jet = value_jet_batch(snapshot.state, np.asarray([t]), x[None, :], ctx)
    p = jet.grad_x[0]
    if snapshot.selector == "closed_form":
        return problem.optimal_controls(t, x, p)
    return numeric_minimax(problem, t, x, p, snapshot.minimax)


def policy_controls(snapshot: PolicySnapshot, problem: ProblemDefinition,
                    ts, xs, ctx: JetContext | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the frozen policy pair at a batch of space-time points."""
    xs = np.asarray(xs, dtype=float)
    n = xs.shape[0]
    if snapshot.kind == "constant":
        return (np.broadcast_to(snapshot.a_const, (n, snapshot.a_const.shape[0])).copy(),
                np.broadcast_to(snapshot.b_const, (n, snapshot.b_const.shape[0])).copy())
    ctx = ctx if ctx is not None else JetContext.for_problem(problem)
    jet = value_jet_batch(snapshot.state, ts, xs, ctx)
    if snapshot.selector == "closed_form":
        return problem.optimal_controls_batch(ts, xs, jet.grad_x)
    ts = np.broadcast_to(np.asarray(ts, dtype=float), (n,))
    pairs = [numeric_minimax(problem, float(t), x, pvec, snapshot.minimax)
             for t, x, pvec in zip(ts, xs, jet.grad_x)]
    return np.stack([a for a, _ in pairs]), np.stack([b for _, b in pairs])


# ---------------------------------------------------------------------------
# residuals


def residual_batch(state: NetworkState, ts, xs, snapshot: PolicySnapshot,
                   problem: ProblemDefinition, ctx: JetContext | None = None) -> np.ndarray:
    """Linear PDE residual under the frozen policy at the given points:
    dv/dt + c + grad_x v . f + 1/2 Tr(a D^2 v)."""
    ctx = ctx if ctx is not None else JetContext.for_problem(problem)
    jet = value_jet_batch(state, ts, xs, ctx)
    aa, bb = policy_controls(snapshot, problem, ts, xs, ctx)
    ff = problem.drift_batch(ts, xs, aa, bb)
    cc = problem.running_cost_batch(ts, xs, aa, bb)
    return (jet.dv_dt + cc + np.einsum("nd,nd->n", jet.grad_x, ff)
            + 0.5 * jet.diff_contract)


def residual(state: NetworkState, t: float, x, snapshot: PolicySnapshot,
             problem: ProblemDefinition) -> float:
    x = np.asarray(x, dtype=float)
    return float(residual_batch(state, np.asarray([t]), x[None, :], snapshot, problem)[0])


@dataclass(frozen=True)
class ResidualNorm:
    """Monte-Carlo L2 norm of the residual over [0, T] x domain."""

    value: float
    std_error: float
    n_samples: int


def empirical_residual_norm(state: NetworkState, snapshot: PolicySnapshot,
                            problem: ProblemDefinition, domain: Box,
                            n_samples: int, rng,
                            ctx: JetContext | None = None) -> ResidualNorm:
    batch = sample_collocation(domain, problem.horizon, n_samples, rng)
    r = residual_batch(state, batch.ts, batch.xs, snapshot, problem, ctx)
    vol = domain.volume * problem.horizon
    msq = float(np.mean(r * r))
    norm = float(np.sqrt(vol * msq))
    if n_samples > 1 and norm > 0.0:
        se_msq = float(np.std(r * r, ddof=1)) / np.sqrt(n_samples)
        se = vol * se_msq / (2.0 * norm)
    else:
        se = 0.0
    return ResidualNorm(norm, se, n_samples)


def estimate_sup_norm_diff(state_a: NetworkState, state_b: NetworkState,
                           batch: CollocationBatch,
                           problem: ProblemDefinition,
                           mode: str = "ansatz") -> float:
    """sup over the validation set of |v_a - v_b|.  Under the shared ansatz
    the terminal part cancels, leaving (T - t) |N_a - N_b|; in penalty mode
    the networks are the values themselves."""
    tx = np.concatenate([batch.ts[:, None], batch.xs], axis=1)
    diff = forward_batch(state_a, tx) - forward_batch(state_b, tx)
    if mode == "ansatz":
        diff = (problem.horizon - batch.ts) * diff
    return float(np.max(np.abs(diff)))


# ---------------------------------------------------------------------------
# training


def _theta_checksum(state: NetworkState) -> str:
    h = hashlib.sha256()
    h.update(state.dtype.name.encode())
    h.update(state.theta.tobytes())
    return h.hexdigest()


def _frozen_policy_data(snapshot, problem, batch, ctx):
    aa, bb = policy_controls(snapshot, problem, batch.ts, batch.xs, ctx)
    ff = problem.drift_batch(batch.ts, batch.xs, aa, bb)
    cc = problem.running_cost_batch(batch.ts, batch.xs, aa, bb)
    return ff, cc


def train_policy_evaluation(state: NetworkState, snapshot: PolicySnapshot,
                            config: PITrainConfig, problem: ProblemDefinition,
                            *, rng=None, ctx: JetContext | None = None
                            ) -> tuple[NetworkState, list[float]]:
    """One policy-evaluation phase: E Adam epochs on the frozen-policy
    residual, resampling collocation every ``resample_interval`` epochs.

    Returns the trained state (the input state object is left untouched)
    and the per-epoch loss curve.  Raises TrainingDivergedError on a
    non-finite loss.
    """
    if config.epochs == 0:
        return state, []
    rng = np.random.default_rng(config.seed if rng is None else rng)
    ctx = ctx if ctx is not None else config.jet_context(problem)
    penalty = config.terminal_mode == "penalty"
    n_term = config.n_terminal if penalty else 0

    batch = sample_collocation(config.domain, problem.horizon,
                               config.n_interior, rng, n_term)
    ff, cc = _frozen_policy_data(snapshot, problem, batch, ctx)

    def residual_fn(ts, xs, jet):
        r = (jet.dv_dt + cc + np.einsum("nd,nd->n", jet.grad_x, ff)
             + 0.5 * jet.diff_contract)
        return r, BatchJet(v=0.0, dv_dt=1.0, grad_x=ff, diff_contract=0.5)

    def terminal_fn(ts, xs, jet):
        r = jet.v - problem.terminal.value_batch(xs)
        return r, BatchJet(v=1.0, dv_dt=0.0, grad_x=0.0, diff_contract=0.0)

    adam = init_adam(state.arch.n_params, config.learning_rate, dtype=state.dtype)
    losses = []
    for epoch in range(1, config.epochs + 1):
        if epoch > 1 and (epoch - 1) % config.resample_interval == 0:
            batch = sample_collocation(config.domain, problem.horizon,
                                       config.n_interior, rng, n_term)
            ff, cc = _frozen_policy_data(snapshot, problem, batch, ctx)
        loss, grad = loss_param_gradient(state, batch, ctx, residual_fn)
        if penalty:
            term_batch = CollocationBatch(
                np.full(batch.terminal_xs.shape[0], problem.horizon),
                batch.terminal_xs)
            t_loss, t_grad = loss_param_gradient(state, term_batch, ctx,
                                                 terminal_fn)
            loss = loss + config.terminal_weight * t_loss
            grad = grad + config.terminal_weight * t_grad
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"policy evaluation diverged at epoch {epoch}: loss={loss}")
        adam, theta = adam_step(adam, state.theta, grad)
        state = state.with_theta(theta)
        losses.append(loss)
    return state, losses


@dataclass
class IterationRecord:
    """Diagnostics of one policy update."""

    index: int
    losses: list[float]
    residual_norm: float
    residual_se: float
    sup_diff: float
    seconds: float
    theta_start_checksum: str
    theta_checksum: str
    theta: np.ndarray | None = None


@dataclass
class IterationHistory:
    records: list[IterationRecord]
    converged: bool

    @property
    def sup_diffs(self) -> np.ndarray:
        return np.array([r.sup_diff for r in self.records[1:]])

    @property
    def residual_norms(self) -> np.ndarray:
        return np.array([r.residual_norm for r in self.records])


def run_policy_iteration(problem: ProblemDefinition, config: PITrainConfig,
                         *, progress=None) -> tuple[NetworkState, IterationHistory]:
    """Full policy-iteration run.  Deterministic in ``config.seed``.

    ``progress``, when given, is called with (IterationRecord, NetworkState)
    as each outer iteration completes (the CLI uses this for checkpointing
    and logging).
    """
    root = np.random.SeedSequence(config.seed)
    ss_init, ss_policy, ss_val, ss_train, ss_resid = root.spawn(5)
    train_seeds = ss_train.spawn(config.max_updates)
    resid_seeds = ss_resid.spawn(config.max_updates)

    arch = NetworkArch(problem.dimension + 1, config.hidden)
    state = xavier_init(arch, ss_init, dtype=config.np_dtype)
    ctx = config.jet_context(problem)

    rng_policy = np.random.default_rng(ss_policy)
    a0 = problem.control_set_a.sample(rng_policy)
    b0 = problem.control_set_b.sample(rng_policy)
    val = sample_collocation(config.domain, problem.horizon, config.n_validation,
                             np.random.default_rng(ss_val))

    records: list[IterationRecord] = []
    converged = False
    for n in range(config.max_updates):
        if n == 0:
            snapshot = PolicySnapshot.constant(a0, b0)
        else:
            snapshot = PolicySnapshot.network(state, config.selector, config.minimax)
        before = state
        start_hash = _theta_checksum(state)
        t0 = time.perf_counter()
        state, losses = train_policy_evaluation(
            state, snapshot, config, problem,
            rng=np.random.default_rng(train_seeds[n]), ctx=ctx)
        seconds = time.perf_counter() - t0
        resid = empirical_residual_norm(
            state, snapshot, problem, config.metrics_domain,
            config.residual_samples, np.random.default_rng(resid_seeds[n]), ctx)
        sup = (estimate_sup_norm_diff(state, before, val, problem,
                                      config.terminal_mode)
               if n >= 1 else float("nan"))
        record = IterationRecord(
            index=n, losses=losses, residual_norm=resid.value,
            residual_se=resid.std_error, sup_diff=sup, seconds=seconds,
            theta_start_checksum=start_hash, theta_checksum=_theta_checksum(state),
            theta=state.theta.copy() if config.keep_checkpoints else None)
        records.append(record)
        if progress is not None:
            progress(record, state)
        if n >= 1 and sup < config.tolerance:
            converged = True
            break
    return state, IterationHistory(records, converged)


def direct_pinn_train(problem: ProblemDefinition, config: PITrainConfig,
                      *, progress=None) -> tuple[NetworkState, list[float]]:
    """Single-shot baseline: train the same ansatz on the full nonlinear
    residual dv/dt + H(t, x, grad_x v) + 1/2 Tr(a D^2 v).

    The controls inside H are the closed-form saddle at the current
    gradient, and by the envelope argument dH/dp = f at that saddle, so the
    residual's jet cotangent is the same (0, 1, f, 1/2) structure as in
    policy evaluation.  Runs ``epochs * max_updates`` total epochs, the
    budget one full policy iteration would spend.
    """
    if not problem.has_closed_form_hamiltonian:
        raise ValueError("direct training needs a closed-form Hamiltonian")
    root = np.random.SeedSequence(config.seed)
    ss_init, _, _, ss_train, _ = root.spawn(5)
    rng = np.random.default_rng(ss_train)

    arch = NetworkArch(problem.dimension + 1, config.hidden)
    state = xavier_init(arch, ss_init, dtype=config.np_dtype)
    ctx = config.jet_context(problem)
    penalty = config.terminal_mode == "penalty"
    n_term = config.n_terminal if penalty else 0

    def residual_fn(ts, xs, jet):
        aa, bb = problem.optimal_controls_batch(ts, xs, jet.grad_x)
        ff = problem.drift_batch(ts, xs, aa, bb)
        r = (jet.dv_dt + problem.hamiltonian_batch(ts, xs, jet.grad_x)
             + 0.5 * jet.diff_contract)
        return r, BatchJet(v=0.0, dv_dt=1.0, grad_x=ff, diff_contract=0.5)

    def terminal_fn(ts, xs, jet):
        r = jet.v - problem.terminal.value_batch(xs)
        return r, BatchJet(v=1.0, dv_dt=0.0, grad_x=0.0, diff_contract=0.0)

    batch = sample_collocation(config.domain, problem.horizon,
                               config.n_interior, rng, n_term)
    adam = init_adam(state.arch.n_params, config.learning_rate, dtype=state.dtype)
    losses = []
    total = config.epochs * config.max_updates
    for epoch in range(1, total + 1):
        if epoch > 1 and (epoch - 1) % config.resample_interval == 0:
            batch = sample_collocation(config.domain, problem.horizon,
                                       config.n_interior, rng, n_term)
        loss, grad = loss_param_gradient(state, batch, ctx, residual_fn)
        if penalty:
            term_batch = CollocationBatch(
                np.full(batch.terminal_xs.shape[0], problem.horizon),
                batch.terminal_xs)
            t_loss, t_grad = loss_param_gradient(state, term_batch, ctx,
                                                 terminal_fn)
            loss = loss + config.terminal_weight * t_loss
            grad = grad + config.terminal_weight * t_grad
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"direct training diverged at epoch {epoch}: loss={loss}")
        adam, theta = adam_step(adam, state.theta, grad)
        state = state.with_theta(theta)
        losses.append(loss)
        if progress is not None and epoch % 500 == 0:
            progress(epoch, loss)
    return state, losses


# ---------------------------------------------------------------------------
# CSV emission


def write_history_csv(history: IterationHistory, path) -> None:
    """Loss curves and per-iteration diagnostics, one row per epoch.

    Columns (iteration, epoch, loss, p_n, sup_diff); the iteration-level
    residual norm and sup-norm change repeat on each of that iteration's
    epoch rows.  Floats print as shortest round-trip reprs.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "epoch", "loss", "p_n", "sup_diff"])
        for r in history.records:
            for e, loss in enumerate(r.losses, start=1):
                w.writerow([r.index, e, repr(loss), repr(r.residual_norm),
                            repr(r.sup_diff)])


def write_loss_csv(losses, path) -> None:
    """Flat loss curve (direct training) in the same 5-column schema."""
    nan = repr(float("nan"))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "epoch", "loss", "p_n", "sup_diff"])
        for e, loss in enumerate(losses, start=1):
            w.writerow([0, e, repr(loss), nan, nan])
