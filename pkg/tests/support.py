"""Shared test fixtures: manufactured problems with known solutions and
brute-force optimization oracles that never touch the closed forms under
test."""

import numpy as np

from hjipi.problems import (Box, ControlSet, DiffusionSpec, ProblemDefinition,
                            QuadraticCost, TerminalCost)

_SINGLETON = ControlSet.ball(1, 0.0)


class GaussianBump(TerminalCost):
    """g(x) = exp(-|x - m|^2 / (2 w^2)) with analytic derivatives."""

    def __init__(self, width: float, center):
        self.w2 = width * width
        self.center = np.asarray(center, dtype=float)

    def value(self, x):
        return float(self.value_batch(np.asarray(x, dtype=float)[None, :])[0])

    def value_batch(self, xs):
        d2 = np.sum((np.asarray(xs, dtype=float) - self.center) ** 2, axis=1)
        return np.exp(-d2 / (2.0 * self.w2))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return -self.value(x) * (x - self.center) / self.w2

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        dx = (x - self.center) / self.w2
        return self.value(x) * (np.outer(dx, dx) - np.eye(x.shape[0]) / self.w2)


class HeatProblem(ProblemDefinition):
    """Pure diffusion: zero drift and cost, sigma = s I, Gaussian terminal.

    The value function is the Gaussian-smoothed terminal condition,
    v(t, x) = (w^2 / b(t))^(d/2) exp(-|x - m|^2 / (2 b(t))) with
    b(t) = w^2 + s^2 (T - t), which makes it an exact oracle for both the
    grid solver and the trained networks.
    """

    has_closed_form_hamiltonian = True

    def __init__(self, dim: int = 2, noise_scale: float = 0.3,
                 width: float = 0.5, horizon: float = 0.5, center=None):
        center = np.zeros(dim) if center is None else np.asarray(center, float)
        super().__init__(dimension=dim, horizon=horizon,
                         control_set_a=_SINGLETON, control_set_b=_SINGLETON,
                         terminal=GaussianBump(width, center),
                         diffusion=DiffusionSpec(noise_scale * np.eye(dim)))
        self.s2 = noise_scale * noise_scale
        self.w2 = width * width
        self.center = center

    def drift(self, t, x, a, b):
        return np.zeros(self.dimension)

    def drift_batch(self, ts, xs, aa, bb):
        return np.zeros_like(np.asarray(xs, dtype=float))

    def running_cost(self, t, x, a, b):
        return 0.0

    def running_cost_batch(self, ts, xs, aa, bb):
        return np.zeros(len(xs))

    def hamiltonian(self, t, x, p):
        return 0.0

    def hamiltonian_batch(self, ts, xs, ps):
        return np.zeros(len(xs))

    def optimal_controls(self, t, x, p):
        return np.zeros(1), np.zeros(1)

    def optimal_controls_batch(self, ts, xs, ps):
        z = np.zeros((len(xs), 1))
        return z, z.copy()

    def exact(self, t, xs):
        xs = np.asarray(xs, dtype=float)
        var = self.w2 + self.s2 * (self.horizon - t)
        d2 = np.sum((xs - self.center) ** 2, axis=1)
        return ((self.w2 / var) ** (self.dimension / 2.0)
                * np.exp(-d2 / (2.0 * var)))


class ManufacturedProblem(ProblemDefinition):
    """Control-free problem whose exact value is the terminal cost itself.

    With quadratic g, constant drift field f0 and running cost
    c(x) = -grad g(x) . f0 - 1/2 Tr(a Hess g), the function v(t,x) = g(x)
    solves the PDE exactly, so the network target is N = 0 and every
    residual quantity has a closed form.
    """

    has_closed_form_hamiltonian = True

    def __init__(self, horizon: float = 1.0):
        self.quad = np.array([[2.0, 0.3], [0.3, 1.0]])
        self.lin = np.array([0.1, -0.2])
        self.f0 = np.array([0.7, -0.4])
        sigma = 0.15 * np.eye(2)
        super().__init__(dimension=2, horizon=horizon,
                         control_set_a=_SINGLETON, control_set_b=_SINGLETON,
                         terminal=QuadraticCost(self.quad, self.lin),
                         diffusion=DiffusionSpec(sigma))
        self.trace_term = 0.5 * float(np.trace(self.diffusion.a_mat @ self.quad))

    def drift(self, t, x, a, b):
        return self.f0.copy()

    def drift_batch(self, ts, xs, aa, bb):
        return np.broadcast_to(self.f0, (len(xs), 2)).copy()

    def running_cost(self, t, x, a, b):
        x = np.asarray(x, dtype=float)
        return float(-(self.quad @ x + self.lin) @ self.f0 - self.trace_term)

    def running_cost_batch(self, ts, xs, aa, bb):
        xs = np.asarray(xs, dtype=float)
        return -(xs @ self.quad + self.lin) @ self.f0 - self.trace_term

    def hamiltonian(self, t, x, p):
        return self.running_cost(t, x, None, None) + float(np.dot(p, self.f0))

    def hamiltonian_batch(self, ts, xs, ps):
        return (self.running_cost_batch(ts, xs, None, None)
                + np.asarray(ps, dtype=float) @ self.f0)

    def optimal_controls(self, t, x, p):
        return np.zeros(1), np.zeros(1)

    def optimal_controls_batch(self, ts, xs, ps):
        z = np.zeros((len(xs), 1))
        return z, z.copy()


class ToySaddleProblem(ProblemDefinition):
    """Quadratic-quadratic saddle with a hand-solved selector.

    L(a, b) = (mu1/2)|a|^2 - (mu2/2)|b|^2 + p . (a + b) has the interior
    saddle a* = -p/mu1, b* = p/mu2, so the stacked selector map
    p -> (a*, b*) is linear with operator norm sqrt(1/mu1^2 + 1/mu2^2),
    and H(p) = -|p|^2/(2 mu1) + |p|^2/(2 mu2) while the saddle stays inside
    the (deliberately huge) control boxes.
    """

    has_closed_form_hamiltonian = True

    def __init__(self, mu1: float = 0.5, mu2: float = 0.8,
                 control_halfwidth: float = 50.0):
        self.mu1 = mu1
        self.mu2 = mu2
        big = ControlSet.box(-control_halfwidth * np.ones(2),
                             control_halfwidth * np.ones(2))
        super().__init__(dimension=2, horizon=1.0,
                         control_set_a=big, control_set_b=big,
                         terminal=QuadraticCost(np.eye(2)),
                         diffusion=DiffusionSpec(0.1 * np.eye(2)))

    @property
    def selector_lipschitz(self) -> float:
        return float(np.sqrt(1.0 / self.mu1 ** 2 + 1.0 / self.mu2 ** 2))

    def drift(self, t, x, a, b):
        return np.asarray(a, dtype=float) + np.asarray(b, dtype=float)

    def drift_batch(self, ts, xs, aa, bb):
        return np.asarray(aa, dtype=float) + np.asarray(bb, dtype=float)

    def running_cost(self, t, x, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return float(0.5 * self.mu1 * a @ a - 0.5 * self.mu2 * b @ b)

    def running_cost_batch(self, ts, xs, aa, bb):
        aa = np.asarray(aa, dtype=float)
        bb = np.asarray(bb, dtype=float)
        return (0.5 * self.mu1 * np.sum(aa * aa, axis=1)
                - 0.5 * self.mu2 * np.sum(bb * bb, axis=1))

    def hamiltonian(self, t, x, p):
        q2 = float(np.dot(p, p))
        return -q2 / (2.0 * self.mu1) + q2 / (2.0 * self.mu2)

    def hamiltonian_batch(self, ts, xs, ps):
        q2 = np.sum(np.asarray(ps, dtype=float) ** 2, axis=1)
        return -q2 / (2.0 * self.mu1) + q2 / (2.0 * self.mu2)

    def optimal_controls(self, t, x, p):
        p = np.asarray(p, dtype=float)
        return (self.control_set_a.project(-p / self.mu1),
                self.control_set_b.project(p / self.mu2))


# ---------------------------------------------------------------------------
# brute-force Hamiltonian oracles.  Both benchmarks have Lagrangians that
# are additively separable across the two controls, so sup_b inf_a splits
# into two independent grid searches; the grids never consult the closed
# forms being tested.


def ball_grid(radius: float, n: int) -> np.ndarray:
    """Points of an n-per-axis Cartesian grid that lie in the 2-ball."""
    axis = np.linspace(-radius, radius, n)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return pts[np.sum(pts * pts, axis=1) <= radius * radius + 1e-15]


def brute_force_hamiltonian_path(problem, t, x, p, n: int = 201):
    """(sup_b inf_a of the Lagrangian on control grids, tolerance).

    inf over a of lam1|a|^2 + p.a on the unit-ball grid, sup over b of p.b
    on the delta-ball grid, plus the control-free lam2*phi term.  Tolerance
    is 2 x grid spacing x a Lipschitz bound of each objective.
    """
    p = np.asarray(p, dtype=float)
    a_pts = ball_grid(1.0, n)
    b_pts = ball_grid(problem.delta, n) if problem.delta > 0 \
        else np.zeros((1, 2))
    inner = np.min(problem.lam1 * np.sum(a_pts * a_pts, axis=1) + a_pts @ p)
    outer = np.max(b_pts @ p)
    value = problem.lam2 * problem.obstacle_penalty(t, np.asarray(x)[None, :])[0] \
        + inner + outer
    p_norm = float(np.linalg.norm(p))
    h_a = 2.0 / (n - 1)
    h_b = 2.0 * problem.delta / (n - 1) if problem.delta > 0 else 0.0
    tol = 2.0 * h_a * (2.0 * problem.lam1 + p_norm) + 2.0 * h_b * p_norm
    return float(value), float(tol)


def brute_force_hamiltonian_pubsub(problem, x, p, n: int = 201):
    """(sup_d inf_u of the Lagrangian on per-axis box grids, tolerance).

    The cost is zero and the drift is affine, so
    L = p.(Ax + psi) + (B^T p).u + (C^T p).d; each control coordinate is
    optimized independently over its own 201-point grid in [-1, 1].
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    base = float(p @ (problem.a_matrix @ x + problem.psi(x)))
    axis = np.linspace(-1.0, 1.0, n)
    bt = problem.b_matrix.T @ p
    ct = problem.c_matrix.T @ p
    inner = sum(float(np.min(w * axis)) for w in bt)
    outer = sum(float(np.max(w * axis)) for w in ct)
    h = 2.0 / (n - 1)
    tol = 2.0 * h * float(np.sum(np.abs(bt)) + np.sum(np.abs(ct)))
    return base + inner + outer, tol


def fd_ansatz_jet(state, t, x, a_mat, terminal, horizon, h: float = 1e-4):
    """Central-difference jet of the ansatz value: (dv_dt, grad, contraction).

    Builds the full finite-difference Hessian and contracts it with a, so it
    shares no code path with the directional-jet engine it checks.
    """
    from hjipi.nets import ansatz_value

    def val(tt, xx):
        return ansatz_value(state, tt, xx, terminal, horizon)

    return _fd_jet_from(val, t, np.asarray(x, dtype=float), a_mat, h)


def fd_raw_jet(state, t, x, a_mat, h: float = 1e-4):
    """Central-difference jet of the bare network output N(t, x)."""
    from hjipi.nets import forward

    def val(tt, xx):
        return forward(state, tt, xx)

    return _fd_jet_from(val, t, np.asarray(x, dtype=float), a_mat, h)


def _fd_jet_from(val, t, x, a_mat, h):
    d = x.shape[0]
    dv_dt = (val(t + h, x) - val(t - h, x)) / (2.0 * h)
    grad = np.empty(d)
    hess = np.empty((d, d))
    mid = val(t, x)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        grad[i] = (val(t, x + e) - val(t, x - e)) / (2.0 * h)
        hess[i, i] = (val(t, x + e) - 2.0 * mid + val(t, x - e)) / (h * h)
    for i in range(d):
        for j in range(i + 1, d):
            ei = np.zeros(d)
            ei[i] = h
            ej = np.zeros(d)
            ej[j] = h
            hess[i, j] = hess[j, i] = (
                val(t, x + ei + ej) - val(t, x + ei - ej)
                - val(t, x - ei + ej) + val(t, x - ei - ej)) / (4.0 * h * h)
    return float(dv_dt), grad, float(np.sum(np.asarray(a_mat) * hess))


def rel_err(approx, exact) -> float:
    """Scale-protected relative error: |a - e| / max(1, |e|), max over entries."""
    approx = np.atleast_1d(np.asarray(approx, dtype=float))
    exact = np.atleast_1d(np.asarray(exact, dtype=float))
    return float(np.max(np.abs(approx - exact)
                        / np.maximum(1.0, np.abs(exact))))
