"""Explicit finite-difference reference solver on rectangular grids.

Marches the terminal-value equation dv/dt + H(t, x, grad v) + (1/2) Tr(a D^2 v) = 0
backward from t = T with forward-Euler steps of size dt = min(min_i dx_i^2,
T / requested_steps), normalized so the horizon is an integer number of
steps.  Spatial derivatives are central differences; the mixed second
derivative uses the four-point cross stencil; boundary values use reflected
ghost nodes (homogeneous Neumann).  The Hamiltonian must be closed form.

The solver is 2-d (the benchmarks need 201^2 and 151^2 grids; dense N-d
grids are out of reach).  High-dimensional isotropic publisher-subscriber
references are built from one 2-d pair solve via the pairwise decomposition
v_hat(t, x) = sum_i v_pair(t, x0, x_i).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .problems import Box, ProblemDefinition, PubSubProblem


class FDMInstabilityError(RuntimeError):
    """Raised when the explicit march blows up (values exceed the terminal
    scale by the configured factor)."""


@dataclass(frozen=True)
class FDMConfig:
    """Grid and stepping parameters.

    ``n_points`` is nodes per axis (scalar or per-axis tuple) on the
    extended box; ``target``, when set, is the sub-box metrics restrict to
    and must lie inside the extended box.  ``store_times`` picks the forward
    times whose slices are kept (snapped to the step lattice);
    ``store_every`` keeps every k-th step instead.  t = 0 and t = T are
    always kept.
    """

    extended: Box
    target: Box | None = None
    n_points: int | tuple[int, ...] = 201
    time_steps: int | None = None
    store_times: tuple[float, ...] | None = None
    store_every: int | None = None
    blowup_factor: float = 1e6
    check_every: int = 25

    def __post_init__(self):
        if self.target is not None:
            if (self.target.dim != self.extended.dim
                    or np.any(self.target.lower < self.extended.lower - 1e-12)
                    or np.any(self.target.upper > self.extended.upper + 1e-12)):
                raise ValueError("target box must lie inside the extended box")

    def axis_points(self, dim: int) -> tuple[int, ...]:
        n = self.n_points
        pts = (n,) * dim if isinstance(n, int) else tuple(int(v) for v in n)
        if len(pts) != dim or any(p < 3 for p in pts):
            raise ValueError("need at least 3 grid nodes per axis")
        return pts


@dataclass
class TimeGrid:
    """Stored solution slices on a rectangular grid.

    ``values[k]`` is the slice at forward time ``times[k]`` with shape
    (n_0, ..., n_{d-1}); node j on axis i sits at lower_i + j * dx_i.
    """

    lower: np.ndarray
    upper: np.ndarray
    times: np.ndarray
    values: np.ndarray
    dt: float = float("nan")

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("one stored slice per stored time required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("stored times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    @property
    def dx(self) -> np.ndarray:
        return (self.upper - self.lower) / (np.array(self.shape) - 1)

    def axis_coords(self, i: int) -> np.ndarray:
        return np.linspace(self.lower[i], self.upper[i], self.shape[i])

    def nearest_time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        return k

    def slice_at(self, t: float, tol: float = 1e-9) -> np.ndarray:
        k = self.nearest_time_index(t)
        if abs(self.times[k] - t) > tol:
            raise ValueError(f"no stored slice at t={t} (nearest: {self.times[k]})")
        return self.values[k]


def _stencil_2d(v: np.ndarray, dx: np.ndarray):
    """Central first/second/mixed derivatives with reflected ghosts."""
    pad = np.pad(v, 1, mode="reflect")
    d0, d1 = dx
    vx = (pad[2:, 1:-1] - pad[:-2, 1:-1]) / (2.0 * d0)
    vy = (pad[1:-1, 2:] - pad[1:-1, :-2]) / (2.0 * d1)
    vxx = (pad[2:, 1:-1] - 2.0 * v + pad[:-2, 1:-1]) / (d0 * d0)
    vyy = (pad[1:-1, 2:] - 2.0 * v + pad[1:-1, :-2]) / (d1 * d1)
    vxy = (pad[2:, 2:] - pad[2:, :-2] - pad[:-2, 2:] + pad[:-2, :-2]) / (4.0 * d0 * d1)
    return vx, vy, vxx, vyy, vxy


def fdm_solve_2d(problem: ProblemDefinition, config: FDMConfig) -> TimeGrid:
    if problem.dimension != 2:
        raise ValueError("the dense finite-difference solver is 2-d only")
    if not problem.has_closed_form_hamiltonian:
        raise ValueError("the finite-difference solver needs a closed-form Hamiltonian")
    box = config.extended
    if box.dim != 2:
        raise ValueError("extended box must be 2-d")
    n0, n1 = config.axis_points(2)
    xs0 = np.linspace(box.lower[0], box.upper[0], n0)
    xs1 = np.linspace(box.lower[1], box.upper[1], n1)
    dx = np.array([xs0[1] - xs0[0], xs1[1] - xs1[0]])
    nodes = np.stack(np.meshgrid(xs0, xs1, indexing="ij"), axis=-1).reshape(-1, 2)

    horizon = problem.horizon
    dt = float(np.min(dx) ** 2)
    if config.time_steps is not None:
        dt = min(dt, horizon / config.time_steps)
    n_steps = int(np.ceil(horizon / dt - 1e-12))
    dt = horizon / n_steps

    keep = {0, n_steps}
    if config.store_times is not None:
        for t in config.store_times:
            if t < -1e-9 or t > horizon + 1e-9:
                raise ValueError(f"store time {t} outside [0, {horizon}]")
            keep.add(int(np.clip(round(t / dt), 0, n_steps)))
    if config.store_every is not None:
        keep.update(range(0, n_steps + 1, int(config.store_every)))
    keep_sorted = sorted(keep)

    a = problem.diffusion.a_mat
    a00, a01, a11 = a[0, 0], a[0, 1], a[1, 1]

    v = problem.terminal.value_batch(nodes).reshape(n0, n1)
    blowup = config.blowup_factor * (float(np.max(np.abs(v))) + 1.0)

    stored = {n_steps: v.copy()} if n_steps in keep else {}
    for k in range(n_steps, 0, -1):
        t_k = k * dt
        vx, vy, vxx, vyy, vxy = _stencil_2d(v, dx)
        p = np.stack([vx.ravel(), vy.ravel()], axis=-1)
        ham = problem.hamiltonian_batch(t_k, nodes, p).reshape(n0, n1)
        diffusion = 0.5 * (a00 * vxx + a11 * vyy + 2.0 * a01 * vxy)
        v = v + dt * (ham + diffusion)
        if (k - 1) % config.check_every == 0 or k == 1:
            m = float(np.max(np.abs(v)))
            if not np.isfinite(m) or m > blowup:
                raise FDMInstabilityError(
                    f"explicit march unstable at t={t_k - dt:.6g}: max|v|={m:.3e} "
                    f"exceeds {blowup:.3e}; refine dt or shrink the domain")
        if (k - 1) in keep:
            stored[k - 1] = v.copy()

    times = np.array([k * dt for k in keep_sorted])
    values = np.stack([stored[k] for k in keep_sorted])
    return TimeGrid(box.lower.copy(), box.upper.copy(), times, values, dt=dt)


def restrict_to_target(grid: TimeGrid, target: Box) -> TimeGrid:
    """Sub-grid on the target box; target corners must (nearly) sit on nodes."""
    if target.dim != grid.dim:
        raise ValueError("target dimension mismatch")
    dx = grid.dx
    slices = []
    lower = np.empty(grid.dim)
    upper = np.empty(grid.dim)
    for i in range(grid.dim):
        lo_f = (target.lower[i] - grid.lower[i]) / dx[i]
        hi_f = (target.upper[i] - grid.lower[i]) / dx[i]
        lo, hi = int(round(lo_f)), int(round(hi_f))
        if abs(lo_f - lo) > 1e-6 or abs(hi_f - hi) > 1e-6:
            warnings.warn(f"target box corner snapped to the grid on axis {i}",
                          RuntimeWarning)
        if lo < 0 or hi >= grid.shape[i] or lo >= hi:
            raise ValueError("target box does not fit inside the grid")
        slices.append(slice(lo, hi + 1))
        coords = grid.axis_coords(i)
        lower[i] = coords[lo]
        upper[i] = coords[hi]
    values = grid.values[(slice(None),) + tuple(slices)].copy()
    return TimeGrid(lower, upper, grid.times.copy(), values, dt=grid.dt)


def interpolate_batch(grid: TimeGrid, t: float, xs: np.ndarray,
                      time_mode: str = "linear") -> np.ndarray:
    """Bilinear-in-space interpolation of a 2-d grid at one query time.

    ``time_mode`` blends the bracketing stored slices linearly or snaps to
    the nearest stored time.  Out-of-range queries raise.
    """
    if grid.dim != 2:
        raise ValueError("interpolation is implemented for 2-d grids")
    if time_mode not in ("linear", "nearest"):
        raise ValueError("time_mode must be 'linear' or 'nearest'")
    xs = np.asarray(xs, dtype=float)
    if np.any(xs < grid.lower - 1e-9) or np.any(xs > grid.upper + 1e-9):
        raise ValueError("spatial query outside the grid")
    if t < grid.times[0] - 1e-9 or t > grid.times[-1] + 1e-9:
        raise ValueError(f"time query {t} outside stored range "
                         f"[{grid.times[0]}, {grid.times[-1]}]")

    if time_mode == "nearest":
        planes = [(grid.values[grid.nearest_time_index(t)], 1.0)]
    else:
        hi = int(np.searchsorted(grid.times, t))
        hi = min(max(hi, 1), len(grid.times) - 1)
        lo = hi - 1
        span = grid.times[hi] - grid.times[lo]
        w_hi = float(np.clip((t - grid.times[lo]) / span, 0.0, 1.0))
        planes = [(grid.values[lo], 1.0 - w_hi), (grid.values[hi], w_hi)]

    dx = grid.dx
    out = np.zeros(xs.shape[0])
    u0 = np.clip((xs[:, 0] - grid.lower[0]) / dx[0], 0.0, grid.shape[0] - 1)
    u1 = np.clip((xs[:, 1] - grid.lower[1]) / dx[1], 0.0, grid.shape[1] - 1)
    i0 = np.minimum(u0.astype(int), grid.shape[0] - 2)
    i1 = np.minimum(u1.astype(int), grid.shape[1] - 2)
    f0 = u0 - i0
    f1 = u1 - i1
    for plane, w in planes:
        if w == 0.0:
            continue
        interp = ((1 - f0) * (1 - f1) * plane[i0, i1]
                  + f0 * (1 - f1) * plane[i0 + 1, i1]
                  + (1 - f0) * f1 * plane[i0, i1 + 1]
                  + f0 * f1 * plane[i0 + 1, i1 + 1])
        out += w * interp
    return out


def interpolate(grid: TimeGrid, t: float, x, time_mode: str = "linear") -> float:
    x = np.asarray(x, dtype=float)
    return float(interpolate_batch(grid, t, x[None, :], time_mode)[0])


# ---------------------------------------------------------------------------
# high-dimensional isotropic reference via pairwise decomposition


@dataclass
class DecomposedReference:
    """Value surrogate v_hat(t, x) = sum_{i>=1} v_pair(t, x_0, x_i) built
    from one publisher/subscriber pair solve.  Exact for N = 2; for N > 2 it
    carries the truncation error of dropping cross-subscriber interactions
    (zero in the dynamics, nonzero through the publisher's nonlinearity)."""

    problem: PubSubProblem
    pair_grid: TimeGrid

    @property
    def n_pairs(self) -> int:
        return self.problem.n_agents - 1

    def __call__(self, t: float, x) -> float:
        return self.value(t, x)

    def value_batch(self, t: float, xs: np.ndarray,
                    time_mode: str = "linear") -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        out = np.zeros(xs.shape[0])
        for i in range(1, self.problem.n_agents):
            pts = np.stack([xs[:, 0], xs[:, i]], axis=-1)
            out += interpolate_batch(self.pair_grid, t, pts, time_mode)
        return out

    def value(self, t: float, x, time_mode: str = "linear") -> float:
        x = np.asarray(x, dtype=float)
        return float(self.value_batch(t, x[None, :], time_mode)[0])


def reference_nd_isotropic(problem: PubSubProblem,
                           config: FDMConfig) -> DecomposedReference:
    """Solve the 2-d pair game once and sum it over the N-1 pairs.

    Requires isotropic noise (the decomposition needs a diagonal diffusion)
    and a hypercube domain on the subscriber axes (all pairs share one grid).
    """
    if not isinstance(problem, PubSubProblem):
        raise ValueError("the decomposed reference is for publisher-subscriber games")
    if not problem.is_isotropic:
        raise ValueError("pairwise decomposition requires isotropic noise")
    box = config.extended
    if box.dim != problem.dimension:
        raise ValueError("extended box dimension mismatch")
    subs_lo, subs_hi = box.lower[1:], box.upper[1:]
    if (np.ptp(subs_lo) > 1e-12 or np.ptp(subs_hi) > 1e-12):
        raise ValueError("subscriber axes must share bounds for a common pair grid")

    pair = problem.pair_problem()
    pts = config.axis_points(problem.dimension)
    pair_config = FDMConfig(
        extended=Box(np.array([box.lower[0], subs_lo[0]]),
                     np.array([box.upper[0], subs_hi[0]])),
        n_points=(pts[0], pts[1]),
        time_steps=config.time_steps,
        store_times=config.store_times,
        store_every=config.store_every,
        blowup_factor=config.blowup_factor,
        check_every=config.check_every)
    return DecomposedReference(problem, fdm_solve_2d(pair, pair_config))


# ---------------------------------------------------------------------------
# persistence


def save_grid(grid: TimeGrid, path) -> None:
    """Compact binary twin of the CSV export."""
    np.savez(path, lower=grid.lower, upper=grid.upper, times=grid.times,
             values=grid.values, dt=np.array(grid.dt))


def load_grid(path) -> TimeGrid:
    with np.load(path) as data:
        return TimeGrid(data["lower"], data["upper"], data["times"],
                        data["values"], dt=float(data["dt"]))


def grid_to_csv(grid: TimeGrid, path) -> None:
    """Lossless text export: metadata header rows, then row-major values
    per stored time, all floats as shortest round-trip reprs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# timegrid", "v1"])
        w.writerow(["# lower"] + [repr(float(v)) for v in grid.lower])
        w.writerow(["# upper"] + [repr(float(v)) for v in grid.upper])
        w.writerow(["# shape"] + [str(n) for n in grid.shape])
        w.writerow(["# dt", repr(float(grid.dt))])
        w.writerow(["t", "flat_index", "value"])
        for k, t in enumerate(grid.times):
            flat = grid.values[k].ravel()
            tr = repr(float(t))
            for j, val in enumerate(flat):
                w.writerow([tr, j, repr(float(val))])


def grid_from_csv(path) -> TimeGrid:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["# timegrid", "v1"]:
        raise ValueError("not a grid CSV export")
    lower = np.array([float(v) for v in rows[1][1:]])
    upper = np.array([float(v) for v in rows[2][1:]])
    shape = tuple(int(v) for v in rows[3][1:])
    dt = float(rows[4][1])
    body = rows[6:]
    per_slice = int(np.prod(shape))
    if len(body) % per_slice != 0:
        raise ValueError("grid CSV body does not tile into whole slices")
    times = []
    slices = []
    for ofs in range(0, len(body), per_slice):
        chunk = body[ofs:ofs + per_slice]
        times.append(float(chunk[0][0]))
        slices.append(np.array([float(r[2]) for r in chunk]).reshape(shape))
    return TimeGrid(lower, upper, np.array(times), np.stack(slices), dt=dt)
