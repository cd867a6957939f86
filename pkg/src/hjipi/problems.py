"""Two-player zero-sum differential game definitions.

A problem bundles controlled dynamics dX = f(t, X, a, b) dt + sigma dW, a
running cost c, a terminal cost g, and compact admissible sets for the
minimizing control a and the maximizing disturbance b.  The upper value of
the game solves the terminal-value viscous Hamilton-Jacobi-Isaacs equation

    dv/dt + H(t, x, grad_x v) + (1/2) Tr(sigma sigma^T D^2_x v) = 0,
    v(T, x) = g(x),

with Hamiltonian H(t, x, p) = sup_b inf_a [ c(t, x, a, b) + p . f(t, x, a, b) ].

Two benchmarks with closed-form Hamiltonians are provided: a planar
path-planning game against a moving Gaussian obstacle and an adversarial
drift disturbance, and a publisher-subscriber network game in N dimensions
with bang-bang optimal controls.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# geometry helpers


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lower_i, upper_i]^d used for domains."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError("box must satisfy lower < upper on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float) -> "Box":
        return cls(np.full(dim, lo), np.full(dim, hi))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


class ControlSet:
    """Compact admissible control set: a Euclidean ball or an axis box.

    A ball of radius 0 is a valid singleton {0} (used to switch the
    disturbance off).  Projection maps arbitrary vectors to the nearest
    admissible point, which is what the numeric minimax iterates on.
    """

    def __init__(self, kind: str, *, radius: float | None = None,
                 lower=None, upper=None, dim: int | None = None):
        if kind not in ("ball", "box"):
            raise ValueError(f"unknown control set kind {kind!r}")
        self.kind = kind
        if kind == "ball":
            if radius is None or dim is None:
                raise ValueError("ball control set needs radius and dim")
            if radius < 0:
                raise ValueError("ball radius must be >= 0")
            self.radius = float(radius)
            self._dim = int(dim)
            self.lower = None
            self.upper = None
        else:
            lo = np.atleast_1d(np.asarray(lower, dtype=float))
            hi = np.atleast_1d(np.asarray(upper, dtype=float))
            if lo.shape != hi.shape or lo.ndim != 1:
                raise ValueError("box bounds must be 1-d arrays of equal length")
            if not np.all(lo <= hi):
                raise ValueError("box control set must satisfy lower <= upper")
            self.lower = lo
            self.upper = hi
            self._dim = lo.shape[0]
            self.radius = None

    @classmethod
    def ball(cls, dim: int, radius: float) -> "ControlSet":
        return cls("ball", radius=radius, dim=dim)

    @classmethod
    def box(cls, lower, upper) -> "ControlSet":
        return cls("box", lower=lower, upper=upper)

    @classmethod
    def unit_box(cls, dim: int) -> "ControlSet":
        return cls.box(np.full(dim, -1.0), np.full(dim, 1.0))

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def center(self) -> np.ndarray:
        if self.kind == "ball":
            return np.zeros(self._dim)
        return 0.5 * (self.lower + self.upper)

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        if u.shape != (self._dim,):
            return False
        if self.kind == "ball":
            return float(np.linalg.norm(u)) <= self.radius + tol
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def project(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "ball":
            nrm = float(np.linalg.norm(u))
            if nrm <= self.radius or nrm == 0.0:
                return u.copy()
            return u * (self.radius / nrm)
        return np.clip(u, self.lower, self.upper)

    def project_batch(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if self.kind == "ball":
            nrm = np.linalg.norm(U, axis=-1, keepdims=True)
            scale = np.ones_like(nrm)
            np.divide(self.radius, nrm, out=scale, where=nrm > self.radius)
            return U * scale
        return np.clip(U, self.lower, self.upper)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_batch(rng, 1)[0]

    def sample_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # uniform over the set, not just over its boundary
        if self.kind == "ball":
            if self.radius == 0.0:
                return np.zeros((n, self._dim))
            z = rng.normal(size=(n, self._dim))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            r = self.radius * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / self._dim)
            return z * r
        return rng.uniform(self.lower, self.upper, size=(n, self._dim))


# ---------------------------------------------------------------------------
# diffusion and terminal cost


class DiffusionSpec:
    """Constant diffusion matrix sigma with cached a = sigma sigma^T.

    Uniform ellipticity (min eigenvalue of a above a floor) is checked at
    construction; a degenerate diffusion breaks both the viscous PDE setting
    and the second-order finite-difference stencils downstream.
    """

    def __init__(self, sigma, min_eig: float = 1e-10):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("sigma must be a square matrix")
        self.sigma = sigma
        self.a_mat = sigma @ sigma.T
        eigs = np.linalg.eigvalsh(self.a_mat)
        self.min_eig = float(eigs[0])
        if self.min_eig <= min_eig:
            raise ValueError(
                f"diffusion is not uniformly elliptic: min eig(sigma sigma^T) = "
                f"{self.min_eig:.3e} <= {min_eig:.1e}")

    @classmethod
    def isotropic(cls, dim: int, scale: float) -> "DiffusionSpec":
        return cls(scale * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]


def build_anisotropic_sigma(dim: int, scale: float, eps: float,
                            seed: int, min_eig: float = 1e-6,
                            max_retries: int = 100) -> np.ndarray:
    """Draw sigma = scale*I + P with P symmetric, zero diagonal, and
    off-diagonal entries uniform on [0, eps).

    Redraws (from the same seeded stream, so the result is a pure function
    of the arguments) until sigma sigma^T has smallest eigenvalue above
    ``min_eig``; raises after ``max_retries`` failures.
    """
    if dim < 2:
        raise ValueError("anisotropic sigma needs dim >= 2")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(dim, k=1)
    for _ in range(max_retries):
        p = np.zeros((dim, dim))
        p[iu] = rng.uniform(0.0, eps, size=iu[0].shape[0])
        p = p + p.T
        sigma = scale * np.eye(dim) + p
        if np.linalg.eigvalsh(sigma @ sigma.T)[0] > min_eig:
            return sigma
    raise RuntimeError(
        f"failed to draw a uniformly elliptic sigma in {max_retries} tries "
        f"(dim={dim}, scale={scale}, eps={eps})")


class TerminalCost(ABC):
    """Terminal payoff g with first and second derivatives.

    The solver's value ansatz v = g + (T - t) * N needs g, grad g, and
    Tr(a D^2 g) at arbitrary points, so those are part of the contract.
    """

    @abstractmethod
    def value(self, x) -> float:
        ...

    @abstractmethod
    def gradient(self, x) -> np.ndarray:
        ...

    @abstractmethod
    def hessian(self, x) -> np.ndarray:
        ...

    def value_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.value(x) for x in xs])

    def gradient_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.gradient(x) for x in xs])

    def trace_hessian_batch(self, xs: np.ndarray, a_mat: np.ndarray) -> np.ndarray:
        return np.array([float(np.sum(a_mat * self.hessian(x))) for x in xs])


class QuadraticCost(TerminalCost):
    """g(x) = 1/2 x^T Q x + b^T x + c with symmetric Q."""

    def __init__(self, quad, lin=None, const: float = 0.0):
        q = np.asarray(quad, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("quadratic term must be a square matrix")
        if not np.allclose(q, q.T):
            raise ValueError("quadratic term must be symmetric")
        self.quad = q
        self.lin = np.zeros(q.shape[0]) if lin is None else np.asarray(lin, dtype=float)
        if self.lin.shape != (q.shape[0],):
            raise ValueError("linear term has wrong shape")
        self.const = float(const)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quad @ x + self.lin @ x + self.const)

    def gradient(self, x) -> np.ndarray:
        return self.quad @ np.asarray(x, dtype=float) + self.lin

    def hessian(self, x) -> np.ndarray:
        return self.quad.copy()

    def value_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return 0.5 * np.einsum("ni,ij,nj->n", xs, self.quad, xs) + xs @ self.lin + self.const

    def gradient_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.asarray(xs, dtype=float) @ self.quad.T + self.lin

    def trace_hessian_batch(self, xs: np.ndarray, a_mat: np.ndarray) -> np.ndarray:
        tr = float(np.sum(a_mat * self.quad))
        return np.full(len(xs), tr)


# ---------------------------------------------------------------------------
# abstract problem


class ProblemDefinition(ABC):
    """Differential game with dynamics f, running cost c, terminal cost g.

    Single-point evaluators are abstract; batch evaluators default to loops
    and are overridden with vectorized versions by the benchmarks (training
    calls them with thousands of collocation points per epoch).

    ``has_closed_form_hamiltonian`` marks problems whose sup-inf has an
    analytic solution; the finite-difference reference solver and the direct
    residual trainer require it.
    """

    has_closed_form_hamiltonian = False

    def __init__(self, dimension: int, horizon: float,
                 control_set_a: ControlSet, control_set_b: ControlSet,
                 terminal: TerminalCost, diffusion: DiffusionSpec):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if diffusion.dim != dimension:
            raise ValueError("diffusion dimension does not match state dimension")
        self.dimension = int(dimension)
        self.horizon = float(horizon)
        self.control_set_a = control_set_a
        self.control_set_b = control_set_b
        self.terminal = terminal
        self.diffusion = diffusion

    # -- dynamics and costs -------------------------------------------------

    @abstractmethod
    def drift(self, t: float, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def running_cost(self, t: float, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
        ...

    def drift_batch(self, ts, xs, aa, bb) -> np.ndarray:
        ts = np.broadcast_to(np.asarray(ts, dtype=float), (len(xs),))
        return np.stack([self.drift(t, x, a, b) for t, x, a, b in zip(ts, xs, aa, bb)])

    def running_cost_batch(self, ts, xs, aa, bb) -> np.ndarray:
        ts = np.broadcast_to(np.asarray(ts, dtype=float), (len(xs),))
        return np.array([self.running_cost(t, x, a, b)
                         for t, x, a, b in zip(ts, xs, aa, bb)])

    def sigma(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.diffusion.sigma

    # -- closed-form Hamiltonian (optional) ----------------------------------

    def hamiltonian(self, t: float, x: np.ndarray, p: np.ndarray) -> float:
        raise NotImplementedError(
            f"{type(self).__name__} has no closed-form Hamiltonian")

    def hamiltonian_batch(self, ts, xs, ps) -> np.ndarray:
        ts = np.broadcast_to(np.asarray(ts, dtype=float), (len(xs),))
        return np.array([self.hamiltonian(t, x, p) for t, x, p in zip(ts, xs, ps)])

    def optimal_controls(self, t: float, x: np.ndarray,
                         p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError(
            f"{type(self).__name__} has no closed-form optimal controls")

    def optimal_controls_batch(self, ts, xs, ps) -> tuple[np.ndarray, np.ndarray]:
        ts = np.broadcast_to(np.asarray(ts, dtype=float), (len(xs),))
        pairs = [self.optimal_controls(t, x, p) for t, x, p in zip(ts, xs, ps)]
        return np.stack([a for a, _ in pairs]), np.stack([b for _, b in pairs])


def lagrangian(problem: ProblemDefinition, t: float, x, p, a, b) -> float:
    """Pre-Hamiltonian L(t,x,p)(a,b) = c(t,x,a,b) + p . f(t,x,a,b).

    Rejects inadmissible controls: the sup-inf defining H only ranges over
    the admissible sets, and silently evaluating outside them has produced
    wrong-branch Hamiltonians in manual checks.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not problem.control_set_a.contains(a):
        raise ValueError(f"control a={a} outside admissible set")
    if not problem.control_set_b.contains(b):
        raise ValueError(f"control b={b} outside admissible set")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(problem.running_cost(t, x, a, b) + p @ problem.drift(t, x, a, b))


# ---------------------------------------------------------------------------
# benchmark 1: planar path planning with a moving obstacle


class PathPlanningProblem(ProblemDefinition):
    """Planar navigation to a goal against a bounded adversarial drift.

    Dynamics  f = a + b  with |a| <= 1 (velocity) and |b| <= delta
    (disturbance).  Running cost penalizes control effort and proximity to
    an obstacle sweeping a half-circle of radius 0.5:

        c(t, x, a) = lam1 |a|^2 + lam2 * exp(-|x - x_obs(t)|^2 / (2 eps^2)),
        x_obs(s) = (0.5 cos(pi s), 0.5 sin(pi s)),
        g(x) = lam3 |x - x_goal|^2.

    The sup-inf has the closed form (phi = obstacle penalty, q = |p|):

        H(t, x, p) = lam2 phi(t, x) + delta q + ( -q^2 / (4 lam1)   if q <= 2 lam1
                                                  lam1 - q          otherwise ),

    with minimizer a* = -p / (2 lam1) truncated to the unit ball and
    maximizer b* = delta p / |p| (any admissible b at p = 0).
    """

    has_closed_form_hamiltonian = True

    def __init__(self, lam1: float = 0.1, lam2: float = 100.0, lam3: float = 10.0,
                 delta: float = 0.1, eps: float = 0.3,
                 goal=(0.9, 0.9), noise_scale: float = 0.1, horizon: float = 1.0):
        if lam1 <= 0.0 or lam2 < 0.0 or lam3 < 0.0:
            raise ValueError("cost weights must be positive (lam1) / nonnegative")
        if eps <= 0.0:
            raise ValueError("obstacle width eps must be positive")
        if delta < 0.0:
            raise ValueError("disturbance radius delta must be >= 0")
        self.lam1 = float(lam1)
        self.lam2 = float(lam2)
        self.lam3 = float(lam3)
        self.delta = float(delta)
        self.eps = float(eps)
        self.goal = np.asarray(goal, dtype=float)
        if self.goal.shape != (2,):
            raise ValueError("goal must be a 2-vector")
        terminal = QuadraticCost(2.0 * lam3 * np.eye(2), -2.0 * lam3 * self.goal,
                                 lam3 * float(self.goal @ self.goal))
        super().__init__(
            dimension=2, horizon=horizon,
            control_set_a=ControlSet.ball(2, 1.0),
            control_set_b=ControlSet.ball(2, delta),
            terminal=terminal,
            diffusion=DiffusionSpec.isotropic(2, noise_scale))

    # -- obstacle -------------------------------------------------------------

    def obstacle_center(self, s):
        """Obstacle position at time s (vectorized over s)."""
        s = np.asarray(s, dtype=float)
        return np.stack([0.5 * np.cos(np.pi * s), 0.5 * np.sin(np.pi * s)], axis=-1)

    def obstacle_penalty(self, s, x) -> np.ndarray:
        """Unscaled Gaussian bump exp(-|x - x_obs(s)|^2 / (2 eps^2))."""
        x = np.asarray(x, dtype=float)
        d = x - self.obstacle_center(s)
        return np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.eps ** 2))

    # -- dynamics and costs ---------------------------------------------------

    def drift(self, t, x, a, b):
        return np.asarray(a, dtype=float) + np.asarray(b, dtype=float)

    def drift_batch(self, ts, xs, aa, bb):
        return np.asarray(aa, dtype=float) + np.asarray(bb, dtype=float)

    def running_cost(self, t, x, a, b):
        a = np.asarray(a, dtype=float)
        return float(self.lam1 * a @ a
                     + self.lam2 * self.obstacle_penalty(t, x))

    def running_cost_batch(self, ts, xs, aa, bb):
        aa = np.asarray(aa, dtype=float)
        return (self.lam1 * np.sum(aa * aa, axis=-1)
                + self.lam2 * self.obstacle_penalty(ts, xs))

    # -- closed forms -----------------------------------------------------------

    def hamiltonian_batch(self, ts, xs, ps):
        ps = np.asarray(ps, dtype=float)
        q = np.linalg.norm(ps, axis=-1)
        inner = np.where(q <= 2.0 * self.lam1,
                         -q * q / (4.0 * self.lam1),
                         self.lam1 - q)
        return self.lam2 * self.obstacle_penalty(ts, xs) + self.delta * q + inner

    def hamiltonian(self, t, x, p):
        return float(self.hamiltonian_batch(
            np.asarray([t]), np.asarray(x, dtype=float)[None, :],
            np.asarray(p, dtype=float)[None, :])[0])

    def optimal_control(self, p) -> np.ndarray:
        """Minimizer a*(p) of lam1|a|^2 + p.a over the unit ball."""
        p = np.asarray(p, dtype=float)
        return self.control_set_a.project(-p / (2.0 * self.lam1))

    def optimal_disturbance(self, p) -> np.ndarray:
        """Maximizer b*(p) of p.b over the delta-ball; 0 at p = 0."""
        p = np.asarray(p, dtype=float)
        q = float(np.linalg.norm(p))
        if q == 0.0:
            return np.zeros(2)
        return (self.delta / q) * p

    def optimal_controls(self, t, x, p):
        return self.optimal_control(p), self.optimal_disturbance(p)

    def optimal_controls_batch(self, ts, xs, ps):
        ps = np.asarray(ps, dtype=float)
        aa = self.control_set_a.project_batch(-ps / (2.0 * self.lam1))
        q = np.linalg.norm(ps, axis=-1, keepdims=True)
        scale = np.zeros_like(q)
        np.divide(self.delta, q, out=scale, where=q > 0.0)
        return aa, ps * scale


# ---------------------------------------------------------------------------
# benchmark 2: publisher-subscriber network game


class PubSubProblem(ProblemDefinition):
    """One publisher (coordinate 0) driving N-1 subscribers.

    Linear coupling plus a nonlinear self-interaction:

        f(x, u, d) = A x + psi(x) + B u + C d,
        A = e1 e1^T - 1_N e1^T + a I,    B = [0; b I],    C = [0; c I],
        psi(x) = (alpha sin(x0) x0^2, -beta x0 x1^2, ..., -beta x0 xN-1^2),

    so (Ax)_0 = a x0 and (Ax)_i = -x0 + a x_i for subscribers i >= 1.
    Controls u and disturbances d act on subscribers only, one coordinate
    each, with box constraints [-1, 1]^(N-1).  Zero running cost; terminal

        g(x) = 1/2 ( (N-1) x0^2 + sum_{i>=1} x_i^2 - (N-1) r^2 )

    splits into pairwise pieces g_i = (x0^2 + x_i^2 - r^2) / 2.  The
    Hamiltonian is bang-bang:

        H(x, p) = p . (A x + psi(x)) - |B^T p|_1 + |C^T p|_1,
        u* = -sign(B^T p),   d* = sign(C^T p).

    With isotropic noise the value decomposes across publisher-subscriber
    pairs; ``pair_problem`` returns the 2-d game each pair solves.
    """

    has_closed_form_hamiltonian = True

    def __init__(self, n_agents: int, a_coef: float = 1.0, b_coef: float = 1.0,
                 c_coef: float = 0.5, alpha: float = -2.0, beta: float = 2.0,
                 radius: float = 0.0, noise_scale: float = 0.1,
                 eps_aniso: float = 0.0, sigma_seed: int = 0,
                 horizon: float = 0.5):
        if n_agents < 2:
            raise ValueError("need at least one publisher and one subscriber")
        n = int(n_agents)
        self.n_agents = n
        self.a_coef = float(a_coef)
        self.b_coef = float(b_coef)
        self.c_coef = float(c_coef)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.radius = float(radius)
        self.noise_scale = float(noise_scale)
        self.eps_aniso = float(eps_aniso)
        self.sigma_seed = int(sigma_seed)

        e1 = np.zeros(n)
        e1[0] = 1.0
        self.a_matrix = np.outer(e1, e1) - np.outer(np.ones(n), e1) + a_coef * np.eye(n)
        self.b_matrix = np.zeros((n, n - 1))
        self.b_matrix[1:, :] = b_coef * np.eye(n - 1)
        self.c_matrix = np.zeros((n, n - 1))
        self.c_matrix[1:, :] = c_coef * np.eye(n - 1)

        if eps_aniso > 0.0:
            sigma = build_anisotropic_sigma(n, noise_scale, eps_aniso, sigma_seed)
        else:
            sigma = noise_scale * np.eye(n)

        quad = np.eye(n)
        quad[0, 0] = float(n - 1)
        terminal = QuadraticCost(quad, const=-0.5 * (n - 1) * radius ** 2)

        super().__init__(
            dimension=n, horizon=horizon,
            control_set_a=ControlSet.unit_box(n - 1),
            control_set_b=ControlSet.unit_box(n - 1),
            terminal=terminal,
            diffusion=DiffusionSpec(sigma))

    # -- dynamics ---------------------------------------------------------------

    def psi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[0] = self.alpha * np.sin(x[0]) * x[0] ** 2
        out[1:] = -self.beta * x[0] * x[1:] ** 2
        return out

    def psi_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        out = np.empty_like(xs)
        x0 = xs[:, 0]
        out[:, 0] = self.alpha * np.sin(x0) * x0 ** 2
        out[:, 1:] = -self.beta * x0[:, None] * xs[:, 1:] ** 2
        return out

    def drift(self, t, x, a, b):
        x = np.asarray(x, dtype=float)
        return (self.a_matrix @ x + self.psi(x)
                + self.b_matrix @ np.asarray(a, dtype=float)
                + self.c_matrix @ np.asarray(b, dtype=float))

    def drift_batch(self, ts, xs, aa, bb):
        xs = np.asarray(xs, dtype=float)
        return (xs @ self.a_matrix.T + self.psi_batch(xs)
                + np.asarray(aa, dtype=float) @ self.b_matrix.T
                + np.asarray(bb, dtype=float) @ self.c_matrix.T)

    def running_cost(self, t, x, a, b):
        return 0.0

    def running_cost_batch(self, ts, xs, aa, bb):
        return np.zeros(len(xs))

    # -- closed forms -------------------------------------------------------------

    def hamiltonian_batch(self, ts, xs, ps):
        xs = np.asarray(xs, dtype=float)
        ps = np.asarray(ps, dtype=float)
        base = np.einsum("ni,ni->n", ps, xs @ self.a_matrix.T + self.psi_batch(xs))
        bt = np.abs(self.b_coef * ps[:, 1:]).sum(axis=1)
        ct = np.abs(self.c_coef * ps[:, 1:]).sum(axis=1)
        return base - bt + ct

    def hamiltonian(self, t, x, p):
        return float(self.hamiltonian_batch(
            np.asarray([0.0 if t is None else t]),
            np.asarray(x, dtype=float)[None, :],
            np.asarray(p, dtype=float)[None, :])[0])

    def optimal_controls(self, t, x, p):
        p = np.asarray(p, dtype=float)
        return (-np.sign(self.b_coef * p[1:]), np.sign(self.c_coef * p[1:]))

    def optimal_controls_batch(self, ts, xs, ps):
        ps = np.asarray(ps, dtype=float)
        return (-np.sign(self.b_coef * ps[:, 1:]), np.sign(self.c_coef * ps[:, 1:]))

    # -- pairwise decomposition ----------------------------------------------------

    def pairwise_cost(self, x0, xi) -> float:
        """Terminal piece g_i attributed to subscriber i."""
        return 0.5 * (float(x0) ** 2 + float(xi) ** 2 - self.radius ** 2)

    def pair_problem(self) -> "PubSubProblem":
        """2-d publisher/single-subscriber game with the same coefficients.

        Only valid as a decomposition building block when this problem's
        noise is isotropic (the pairwise split needs a diagonal diffusion).
        """
        return PubSubProblem(
            n_agents=2, a_coef=self.a_coef, b_coef=self.b_coef,
            c_coef=self.c_coef, alpha=self.alpha, beta=self.beta,
            radius=self.radius, noise_scale=self.noise_scale,
            eps_aniso=0.0, horizon=self.horizon)

    @property
    def is_isotropic(self) -> bool:
        return self.eps_aniso == 0.0
