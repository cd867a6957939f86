"""Sine-activation MLP with an exact built-in derivative engine.

The PDE residual needs, at every collocation point, the value v, its time
derivative, its spatial gradient, and the diffusion contraction
Tr(a D^2_x v) of the ansatz

    v(t, x; theta) = g(x) + (T - t) * N(t, x; theta),

plus the exact gradient of the squared-residual loss with respect to theta.
No external autodiff is used.  Instead:

* Forward pass: second-order directional Taylor jets.  For each input
  direction u the network input is the line s -> z + s u, and every layer
  propagates the triple (value, first, second directional derivative):

      affine  h = W z + b:       h' = W z',          h'' = W z''
      sine    z = sin(h):        z' = cos(h) h',     z'' = cos(h) h'' - sin(h) h'^2

  Directions are the time axis plus the d eigenvectors of a = sigma sigma^T,
  so the mixed-derivative contraction collapses to a weighted sum of pure
  second directional derivatives: Tr(a D^2 N) = sum_k w_k * N''_{u_k} with
  (w_k, u_k) the eigenpairs of a.  Both recursion steps are linear in the
  second-derivative slot, so the weighted sum itself propagates as a single
  channel q = sum_k w_k z''_k (with q'' source term sum_k w_k h'_k^2), and
  the stack is 1 value + K first-order + 1 contraction channel pushed
  through one matrix product per layer.

* Backward pass: hand-derived vector-Jacobian products through the same
  recursion give the exact parameter gradient of any scalar function of the
  jets.  The caller supplies the residual and its partials with respect to
  the jet fields; everything inward from there is handled here.

Both passes are plain numpy and run in the dtype of the parameter vector
(float64 for verification, float32 for throughput on desk-scale training).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


# ---------------------------------------------------------------------------
# architecture and parameters


@dataclass(frozen=True)
class NetworkArch:
    """Input width and hidden widths of the sine MLP (scalar output)."""

    input_dim: int
    hidden: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("need at least one hidden layer of positive width")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer, final scalar layer included."""
        widths = (self.input_dim,) + self.hidden + (1,)
        return [(widths[i], widths[i + 1]) for i in range(len(widths) - 1)]

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)


class NetworkState:
    """Architecture plus a flat parameter vector.

    The flat layout is (W_0, b_0, W_1, b_1, ..., W_L, b_L) with each W
    stored row-major as (fan_out, fan_in).  ``weight(i)``/``bias(i)`` return
    views into the flat vector, so in-place edits to them edit theta.
    """

    def __init__(self, arch: NetworkArch, theta: np.ndarray):
        theta = np.asarray(theta)
        if theta.dtype not in (np.float32, np.float64):
            raise ValueError("theta must be float32 or float64")
        if theta.shape != (arch.n_params,):
            raise ValueError(
                f"theta has {theta.shape} entries, architecture needs ({arch.n_params},)")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        self.arch = arch
        self.theta = theta
        self._slices = []
        ofs = 0
        for fi, fo in arch.layer_dims:
            self._slices.append((slice(ofs, ofs + fi * fo), (fo, fi),
                                 slice(ofs + fi * fo, ofs + fi * fo + fo)))
            ofs += fi * fo + fo

    @property
    def dtype(self):
        return self.theta.dtype

    @property
    def n_layers(self) -> int:
        return len(self._slices)

    def weight(self, i: int) -> np.ndarray:
        sl, shape, _ = self._slices[i]
        return self.theta[sl].reshape(shape)

    def bias(self, i: int) -> np.ndarray:
        return self.theta[self._slices[i][2]]

    def with_theta(self, theta: np.ndarray) -> "NetworkState":
        return NetworkState(self.arch, theta)

    def copy(self) -> "NetworkState":
        return NetworkState(self.arch, self.theta.copy())


def xavier_init(arch: NetworkArch, seed: int, dtype=np.float64) -> NetworkState:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(arch.n_params, dtype=np.float64)
    state = NetworkState(arch, theta)
    for i, (fi, fo) in enumerate(arch.layer_dims):
        bound = np.sqrt(6.0 / (fi + fo))
        state.weight(i)[...] = rng.uniform(-bound, bound, size=(fo, fi))
    return NetworkState(arch, theta.astype(dtype))


# ---------------------------------------------------------------------------
# plain value passes (no derivatives)


def forward_batch(state: NetworkState, tx: np.ndarray) -> np.ndarray:
    """Raw network values N(t, x) for stacked inputs tx of shape (n, 1+d)."""
    z = np.asarray(tx, dtype=state.dtype)
    if z.ndim != 2 or z.shape[1] != state.arch.input_dim:
        raise ValueError(f"inputs must have shape (n, {state.arch.input_dim})")
    last = state.n_layers - 1
    for i in range(last):
        z = np.sin(z @ state.weight(i).T + state.bias(i))
    out = z @ state.weight(last).T + state.bias(last)
    return out[:, 0].astype(np.float64)


def forward(state: NetworkState, t: float, x) -> float:
    tx = np.concatenate([[t], np.asarray(x, dtype=float)])[None, :]
    return float(forward_batch(state, tx)[0])


def ansatz_value_batch(state: NetworkState, ts, xs, terminal, horizon: float) -> np.ndarray:
    """v = g(x) + (T - t) N(t, x), exact at t = T by construction."""
    ts = np.asarray(ts, dtype=float)
    xs = np.asarray(xs, dtype=float)
    tx = np.concatenate([ts[:, None], xs], axis=1)
    return terminal.value_batch(xs) + (horizon - ts) * forward_batch(state, tx)


def ansatz_value(state: NetworkState, t: float, x, terminal, horizon: float) -> float:
    x = np.asarray(x, dtype=float)
    return float(ansatz_value_batch(state, np.asarray([t]), x[None, :], terminal, horizon)[0])


# ---------------------------------------------------------------------------
# jets


@dataclass
class ValueJet:
    """Value and the derivative bundle the PDE residual consumes, one point."""

    v: float
    dv_dt: float
    grad_x: np.ndarray
    diff_contract: float


@dataclass
class BatchJet:
    """Same as ValueJet for n points: v (n,), dv_dt (n,), grad_x (n, d),
    diff_contract (n,).  Residual callbacks may put scalars (e.g. 0) in any
    field when building cotangents; they are broadcast."""

    v: np.ndarray
    dv_dt: np.ndarray
    grad_x: np.ndarray
    diff_contract: np.ndarray


class JetContext:
    """Precomputed geometry shared by every jet evaluation of one problem.

    Holds the eigendecomposition of a = sigma sigma^T (directions and
    contraction weights) and, unless ``terminal`` is None, the terminal cost
    and horizon of the ansatz.  ``terminal=None`` yields jets of the raw
    network N itself.
    """

    def __init__(self, a_mat: np.ndarray, terminal=None, horizon: float | None = None):
        a_mat = np.asarray(a_mat, dtype=float)
        if a_mat.ndim != 2 or a_mat.shape[0] != a_mat.shape[1]:
            raise ValueError("a_mat must be square")
        if not np.allclose(a_mat, a_mat.T):
            raise ValueError("a_mat must be symmetric")
        if terminal is not None and horizon is None:
            raise ValueError("ansatz context needs the horizon")
        self.a_mat = a_mat
        self.terminal = terminal
        self.horizon = horizon
        d = a_mat.shape[0]
        self.dim = d
        w, vecs = np.linalg.eigh(a_mat)
        self.eig_weights = w          # (d,)
        self.eig_vecs = vecs          # columns are directions
        # input-space directions: time axis first, then the d spatial eigvecs
        dirs = np.zeros((d + 1, d + 1))
        dirs[0, 0] = 1.0
        dirs[1:, 1:] = vecs.T
        self.directions = dirs
        # contraction weight per direction; the time direction carries none
        self.dir_weights = np.concatenate([[0.0], w])

    @classmethod
    def for_problem(cls, problem) -> "JetContext":
        return cls(problem.diffusion.a_mat, problem.terminal, problem.horizon)

    @classmethod
    def raw(cls, a_mat: np.ndarray) -> "JetContext":
        return cls(a_mat, None, None)


class _JetCache:
    """Intermediates of one stacked forward pass, consumed by the VJP."""

    __slots__ = ("layers", "final_input", "tau", "n", "k")

    def __init__(self, layers, final_input, tau, n, k):
        self.layers = layers
        self.final_input = final_input
        self.tau = tau
        self.n = n
        self.k = k


def _affine_stack(S: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # one GEMM over all channels and points; bias feeds the value channel only
    c, n, fi = S.shape
    H = (S.reshape(c * n, fi) @ W.T).reshape(c, n, W.shape[0])
    H[0] += b
    return H


def _jet_forward(state: NetworkState, tx: np.ndarray, directions: np.ndarray,
                 dir_weights: np.ndarray, want_cache: bool):
    # channel-major stack (c, n, width): every channel is a contiguous block
    n = tx.shape[0]
    k = directions.shape[0]
    c = k + 2
    dtype = state.dtype
    wk = dir_weights[:, None, None]
    S = np.zeros((c, n, state.arch.input_dim), dtype=dtype)
    S[0] = tx
    S[1:k + 1] = directions[:, None, :]
    # channel k+1 starts at zero: inputs move along straight lines

    layers = [] if want_cache else None
    last = state.n_layers - 1
    for i in range(last):
        H = _affine_stack(S, state.weight(i), state.bias(i))
        h0 = H[0]
        s0 = np.sin(h0)
        c0 = np.cos(h0)
        hp = H[1:k + 1]
        hq = H[k + 1]
        whp = wk * hp
        r = np.einsum("knw,knw->nw", hp, whp)
        S2 = np.empty_like(H)
        S2[0] = s0
        np.multiply(c0, hp, out=S2[1:k + 1])
        sq = S2[k + 1]
        np.multiply(c0, hq, out=sq)
        sq -= s0 * r
        if want_cache:
            layers.append((S, hp, whp, hq, s0, c0, r))
        S = S2

    Wl = state.weight(last)
    out = (S.reshape(c * n, -1) @ Wl.T).reshape(c, n)
    out[0] += state.bias(last)[0]
    N = out[0]
    Np = out[1:k + 1]
    Nq = out[k + 1]
    if want_cache:
        return N, Np, Nq, (layers, S)
    return N, Np, Nq, None


def _jet_vjp(state: NetworkState, layers, final_input,
             Nbar, Npbar, Nqbar) -> np.ndarray:
    c, n, _ = final_input.shape
    k = c - 2
    dtype = state.dtype
    G = np.empty((c, n), dtype=dtype)
    G[0] = Nbar
    G[1:k + 1] = Npbar
    G[k + 1] = Nqbar

    grad = np.zeros(state.arch.n_params, dtype=dtype)
    gstate = NetworkState(state.arch, grad)

    last = state.n_layers - 1
    Wl = state.weight(last)
    gstate.weight(last)[...] = (G.reshape(1, c * n) @ final_input.reshape(c * n, -1))
    gstate.bias(last)[...] = G[0].sum()
    Sbar = (G.reshape(c * n, 1) @ Wl).reshape(c, n, -1)

    for i in range(last - 1, -1, -1):
        S_in, hp, whp, hq, s0, c0, r = layers[i]
        sb0 = Sbar[0]
        sbp = Sbar[1:k + 1]
        sbq = Sbar[k + 1]
        s0q = s0 * sbq
        Hbar = np.empty_like(Sbar)
        np.multiply(c0, sbq, out=Hbar[k + 1])
        np.multiply(c0, sbp, out=Hbar[1:k + 1])
        Hbar[1:k + 1] -= (2.0 * s0q) * whp
        Hbar[0] = (c0 * (sb0 - r * sbq)
                   - s0 * np.einsum("knw,knw->nw", hp, sbp)
                   - hq * s0q)
        fo = Hbar.shape[2]
        Hflat = Hbar.reshape(c * n, fo)
        gstate.weight(i)[...] = Hflat.T @ S_in.reshape(c * n, -1)
        gstate.bias(i)[...] = Hbar[0].sum(axis=0)
        if i > 0:
            Sbar = (Hflat @ state.weight(i)).reshape(c, n, -1)
    return grad


def value_jet_batch(state: NetworkState, ts, xs, ctx: JetContext,
                    want_cache: bool = False):
    """Jets of the value (ansatz if ctx carries a terminal cost, else raw N).

    Returns a BatchJet in float64; with ``want_cache`` also returns the
    opaque cache that ``_loss_vjp``/``loss_param_gradient`` consume.
    """
    ts = np.asarray(ts, dtype=float)
    xs = np.asarray(xs, dtype=float)
    n = xs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if xs.ndim != 2 or xs.shape[1] != ctx.dim:
        raise ValueError(f"states must have shape (n, {ctx.dim})")
    tx = np.concatenate([ts[:, None], xs], axis=1).astype(state.dtype)
    dirs = ctx.directions.astype(state.dtype)
    dirw = ctx.dir_weights.astype(state.dtype)
    N, Np, Nq, fwd_cache = _jet_forward(state, tx, dirs, dirw, want_cache)

    N64 = N.astype(np.float64)
    Np64 = Np.astype(np.float64)
    grad_n = (ctx.eig_vecs @ Np64[1:]).T
    contract_n = Nq.astype(np.float64)

    if ctx.terminal is None:
        jet = BatchJet(v=N64, dv_dt=Np64[0], grad_x=grad_n, diff_contract=contract_n)
        tau = None
    else:
        tau = ctx.horizon - ts
        g = ctx.terminal.value_batch(xs)
        gx = ctx.terminal.gradient_batch(xs)
        gtr = ctx.terminal.trace_hessian_batch(xs, ctx.a_mat)
        jet = BatchJet(
            v=g + tau * N64,
            dv_dt=-N64 + tau * Np64[0],
            grad_x=gx + tau[:, None] * grad_n,
            diff_contract=gtr + tau * contract_n)
    if want_cache:
        layers, final_input = fwd_cache
        return jet, _JetCache(layers, final_input, tau, n, ctx.dim + 1)
    return jet


def value_jet(state: NetworkState, t: float, x, a_mat, terminal, horizon: float) -> ValueJet:
    """Single-point ansatz jet; convenience wrapper over the batch engine."""
    ctx = JetContext(a_mat, terminal, horizon)
    x = np.asarray(x, dtype=float)
    jet = value_jet_batch(state, np.asarray([t]), x[None, :], ctx)
    return ValueJet(v=float(jet.v[0]), dv_dt=float(jet.dv_dt[0]),
                    grad_x=jet.grad_x[0], diff_contract=float(jet.diff_contract[0]))


def _loss_vjp(state: NetworkState, cache: _JetCache, ctx: JetContext,
              cot: BatchJet) -> np.ndarray:
    """Pull a BatchJet cotangent back to a flat parameter gradient."""
    n = cache.n
    d = ctx.dim
    vb = np.broadcast_to(np.asarray(cot.v, dtype=float), (n,))
    db = np.broadcast_to(np.asarray(cot.dv_dt, dtype=float), (n,))
    gb = np.broadcast_to(np.asarray(cot.grad_x, dtype=float), (n, d))
    cb = np.broadcast_to(np.asarray(cot.diff_contract, dtype=float), (n,))

    k = cache.k
    Npbar = np.empty((k, n))
    if ctx.terminal is None:
        Nbar = vb
        Npbar[0] = db
        Npbar[1:] = ctx.eig_vecs.T @ gb.T
        Nqbar = cb
    else:
        tau = cache.tau
        Nbar = tau * vb - db
        Npbar[0] = tau * db
        Npbar[1:] = tau[None, :] * (ctx.eig_vecs.T @ gb.T)
        Nqbar = tau * cb

    layers, final_input = cache.layers, cache.final_input
    dtype = state.dtype
    return _jet_vjp(state, layers, final_input,
                    Nbar.astype(dtype), Npbar.astype(dtype), Nqbar.astype(dtype))


def loss_param_gradient(state: NetworkState, batch, ctx: JetContext,
                        residual_fn) -> tuple[float, np.ndarray]:
    """Mean-squared-residual loss and its exact parameter gradient.

    ``batch`` is anything with ``ts``/``xs`` arrays (or a plain (ts, xs)
    pair).  ``residual_fn(ts, xs, jet) -> (residuals, cotangent)`` evaluates
    the pointwise PDE residual r_j from the value jet and reports the
    partial derivatives of r_j with respect to each jet field (a BatchJet
    whose entries may be scalars; they broadcast).  The loss is mean(r^2)
    and the returned gradient is d loss / d theta, exact to round-off.
    """
    if hasattr(batch, "ts"):
        ts, xs = batch.ts, batch.xs
    else:
        ts, xs = batch
    jet, cache = value_jet_batch(state, ts, xs, ctx, want_cache=True)
    res, cot = residual_fn(np.asarray(ts, dtype=float), np.asarray(xs, dtype=float), jet)
    res = np.asarray(res, dtype=float)
    n = cache.n
    if res.shape != (n,):
        raise ValueError("residual_fn must return one residual per point")
    loss = float(np.mean(res * res))
    scale = (2.0 / n) * res
    scaled = BatchJet(
        v=scale * np.broadcast_to(np.asarray(cot.v, dtype=float), (n,)),
        dv_dt=scale * np.broadcast_to(np.asarray(cot.dv_dt, dtype=float), (n,)),
        grad_x=scale[:, None] * np.broadcast_to(np.asarray(cot.grad_x, dtype=float),
                                                (n, ctx.dim)),
        diff_contract=scale * np.broadcast_to(np.asarray(cot.diff_contract, dtype=float), (n,)))
    grad = _loss_vjp(state, cache, ctx, scaled)
    return loss, grad


# ---------------------------------------------------------------------------
# serialization (text, bit-exact round trip)


_MAGIC = "sine-mlp v1"


def network_to_text(state: NetworkState) -> str:
    lines = [_MAGIC,
             f"input_dim {state.arch.input_dim}",
             "hidden " + " ".join(str(h) for h in state.arch.hidden),
             f"dtype {state.dtype.name}",
             f"theta {state.theta.shape[0]}"]
    # float() first: repr of a numpy scalar is not a bare literal, and the
    # shortest round-trip repr of the exact f64 value re-parses bit-exactly
    # in both supported dtypes.
    lines.extend(repr(float(v)) for v in state.theta)
    return "\n".join(lines) + "\n"


def network_from_text(text: str) -> NetworkState:
    lines = text.strip().split("\n")
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not a serialized sine MLP")
    try:
        fields = dict(line.split(" ", 1) for line in lines[1:5])
        input_dim = int(fields["input_dim"])
        hidden = tuple(int(h) for h in fields["hidden"].split())
        dtype = np.dtype(fields["dtype"])
        count = int(fields["theta"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed network header: {exc}") from exc
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    arch = NetworkArch(input_dim, hidden)
    if count != arch.n_params or len(lines) != 5 + count:
        raise ValueError("parameter count does not match architecture")
    theta = np.array([dtype.type(v) for v in lines[5:]], dtype=dtype)
    return NetworkState(arch, theta)


def save_network(state: NetworkState, path) -> None:
    with open(path, "w") as fh:
        fh.write(network_to_text(state))


def load_network(path) -> NetworkState:
    with open(path) as fh:
        return network_from_text(fh.read())
