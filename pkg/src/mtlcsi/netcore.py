"""Small reverse-mode numeric core in float64 numpy.

Layers are plain functions: ``*_forward`` returns outputs plus a cache and
``*_backward`` consumes that cache and returns gradients. Batches are on
axis 0 throughout. LSTM gate blocks are stacked in the order
(input, forget, candidate, output).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

LAYER_NORM_EPS = 1e-5


def sigmoid(x):
    # tanh form avoids overflow in exp for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------- dense


@dataclass
class DenseParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)


def init_dense(rng, n_in: int, n_out: int) -> DenseParams:
    return DenseParams(glorot_uniform(rng, (n_out, n_in), n_in, n_out), np.zeros(n_out))


def fc_forward(p: DenseParams, x: np.ndarray):
    if x.shape[-1] != p.W.shape[1]:
        raise ShapeError(f"dense layer expects {p.W.shape[1]} inputs, got {x.shape[-1]}")
    return x @ p.W.T + p.b, x


def fc_backward(p: DenseParams, cache, dy: np.ndarray):
    x = cache
    return DenseParams(dy.T @ x, dy.sum(axis=0)), dy @ p.W


# ---------------------------------------------------------------- LSTM


@dataclass
class LstmParams:
    W: np.ndarray  # (4H, D_in)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]


def init_lstm(rng, n_in: int, hidden: int, forget_bias: float = 1.0) -> LstmParams:
    W = glorot_uniform(rng, (4 * hidden, n_in), n_in, 4 * hidden)
    U = glorot_uniform(rng, (4 * hidden, hidden), hidden, 4 * hidden)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = forget_bias
    return LstmParams(W, U, b)


@dataclass
class LstmCache:
    # time-major so that every per-step slice is contiguous
    x: np.ndarray  # (T, B, D_in)
    h: np.ndarray  # (T+1, B, H), h[0] = h0
    c: np.ndarray  # (T+1, B, H)
    tanh_c: np.ndarray  # (T, B, H)
    gates: np.ndarray  # (T, B, 4H) post-activation
    params: LstmParams


def lstm_forward(p: LstmParams, x: np.ndarray, h0=None, c0=None):
    """Run the LSTM over ``x`` of shape (B, T, D_in).

    Returns ``(hs, h_T, c_T, cache)`` with ``hs`` of shape (B, T, H).
    """
    if x.ndim != 3 or x.shape[2] != p.input_size:
        raise ShapeError(f"LSTM expects (B, T, {p.input_size}) input, got {x.shape}")
    B, T, _ = x.shape
    H = p.hidden_size
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    h = np.zeros((T + 1, B, H))
    c = np.zeros((T + 1, B, H))
    for name, init, buf in (("h0", h0, h), ("c0", c0, c)):
        if init is not None:
            if np.shape(init) != (B, H):
                raise ShapeError(f"{name} must have shape {(B, H)}, got {np.shape(init)}")
            buf[0] = init
    tanh_c = np.empty((T, B, H))
    gates = xt @ p.W.T  # input projections for all steps at once, overwritten in place
    gates += p.b
    # sigmoid(z) = (tanh(z/2) + 1)/2, so one tanh call covers all four blocks
    scale = np.full(4 * H, 0.5)
    scale[2 * H : 3 * H] = 1.0
    UT = p.U.T
    for t in range(T):
        z = gates[t]
        z += h[t] @ UT
        z *= scale
        np.tanh(z, out=z)
        for sl in (slice(0, 2 * H), slice(3 * H, 4 * H)):
            z[:, sl] += 1.0
            z[:, sl] *= 0.5
        i, f, g, o = z[:, :H], z[:, H : 2 * H], z[:, 2 * H : 3 * H], z[:, 3 * H :]
        np.multiply(f, c[t], out=c[t + 1])
        c[t + 1] += i * g
        np.tanh(c[t + 1], out=tanh_c[t])
        np.multiply(o, tanh_c[t], out=h[t + 1])
    cache = LstmCache(xt, h, c, tanh_c, gates, p)
    return h[1:].transpose(1, 0, 2), h[T], c[T], cache


def lstm_backward(cache: LstmCache, dhs=None, dh_last=None, dc_last=None, need_dx: bool = True):
    """Backpropagation through time.

    ``dhs`` is the upstream gradient for every hidden output (B, T, H);
    ``dh_last``/``dc_last`` add gradient on the final states. Returns
    ``(grads, dx, dh0, dc0)`` where ``grads`` is an :class:`LstmParams` and
    ``dx`` is (B, T, D_in), or None when ``need_dx`` is false.
    """
    p = cache.params
    T, B, _ = cache.x.shape
    H = p.hidden_size
    for name, arr, want in (("dhs", dhs, (B, T, H)), ("dh_last", dh_last, (B, H)), ("dc_last", dc_last, (B, H))):
        if arr is not None and arr.shape != want:
            raise ShapeError(f"{name} has shape {arr.shape}, cache expects {want}")
    if p.W.shape[0] != cache.gates.shape[2]:
        raise ShapeError("cache does not match the parameters it was built from")

    dz = np.empty((T, B, 4 * H))
    dh = np.zeros((B, H)) if dh_last is None else dh_last.copy()
    dc = np.zeros((B, H)) if dc_last is None else dc_last.copy()
    U = p.U
    for t in range(T - 1, -1, -1):
        if dhs is not None:
            dh += dhs[:, t]
        g = cache.gates[t]
        i, f, gg, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        tc = cache.tanh_c[t]
        dc += dh * o * (1.0 - tc * tc)
        d = dz[t]
        np.multiply(dc, gg * i * (1.0 - i), out=d[:, :H])
        np.multiply(dc, cache.c[t] * f * (1.0 - f), out=d[:, H : 2 * H])
        np.multiply(dc, i * (1.0 - gg * gg), out=d[:, 2 * H : 3 * H])
        np.multiply(dh, tc * o * (1.0 - o), out=d[:, 3 * H :])
        dc *= f
        dh = d @ U
    dz2 = dz.reshape(T * B, 4 * H)
    dW = dz2.T @ cache.x.reshape(T * B, -1)
    dU = dz2.T @ cache.h[:T].reshape(T * B, H)
    db = dz2.sum(axis=0)
    dx = (dz @ p.W).transpose(1, 0, 2) if need_dx else None
    return LstmParams(dW, dU, db), dx, dh, dc


# ---------------------------------------------------------------- conv stack


@dataclass
class Conv1dParams:
    filters: np.ndarray  # (F, C_in, W_k)
    bias: np.ndarray  # (F,)
    gain: np.ndarray  # (F,) layer-norm scale
    offset: np.ndarray  # (F,) layer-norm shift

    @property
    def num_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.filters.shape[2]


def init_conv1d(rng, c_in: int, num_filters: int, kernel: int) -> Conv1dParams:
    fan_in, fan_out = c_in * kernel, num_filters * kernel
    return Conv1dParams(
        glorot_uniform(rng, (num_filters, c_in, kernel), fan_in, fan_out),
        np.zeros(num_filters),
        np.ones(num_filters),
        np.zeros(num_filters),
    )


@dataclass
class ConvCache:
    x_shape: tuple
    patches: np.ndarray  # (B*L, C*W_k)
    pre: np.ndarray  # (B, L, F) conv output before ReLU
    xhat: np.ndarray  # (B, L, F)
    inv_std: np.ndarray  # (B, L, 1)
    params: Conv1dParams


def conv1d_stack_forward(p: Conv1dParams, x: np.ndarray):
    """Valid conv (stride 1) -> ReLU -> per-step layer norm over channels -> mean over time.

    ``x`` has shape (B, C_in, T); returns features (B, F) and a cache.
    """
    F, C, Wk = p.filters.shape
    if x.ndim != 3 or x.shape[1] != C:
        raise ShapeError(f"conv stack expects (B, {C}, T) input, got {x.shape}")
    B, _, T = x.shape
    if T < Wk:
        raise ShapeError(f"sequence length {T} shorter than kernel {Wk}")
    L = T - Wk + 1
    patches = sliding_window_view(x, Wk, axis=2)  # (B, C, L, Wk)
    patches = patches.transpose(0, 2, 1, 3).reshape(B * L, C * Wk)
    pre = (patches @ p.filters.reshape(F, C * Wk).T + p.bias).reshape(B, L, F)
    a = np.maximum(pre, 0.0)
    mu = a.mean(axis=2, keepdims=True)
    var = a.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (a - mu) * inv_std
    y = xhat * p.gain + p.offset
    return y.mean(axis=1), ConvCache(x.shape, patches, pre, xhat, inv_std, p)


def conv1d_stack_backward(cache: ConvCache, dout: np.ndarray):
    p = cache.params
    F, C, Wk = p.filters.shape
    B, _, T = cache.x_shape
    L = T - Wk + 1
    if dout.shape != (B, F):
        raise ShapeError(f"upstream gradient has shape {dout.shape}, expected {(B, F)}")
    dy = np.broadcast_to(dout[:, None, :] / L, (B, L, F))
    dgain = (dy * cache.xhat).sum(axis=(0, 1))
    doffset = dy.sum(axis=(0, 1))
    dxhat = dy * p.gain
    da = cache.inv_std * (
        dxhat - dxhat.mean(axis=2, keepdims=True) - cache.xhat * (dxhat * cache.xhat).mean(axis=2, keepdims=True)
    )
    dpre = (da * (cache.pre > 0)).reshape(B * L, F)
    dfilters = (dpre.T @ cache.patches).reshape(F, C, Wk)
    dbias = dpre.sum(axis=0)
    dpatches = (dpre @ p.filters.reshape(F, C * Wk)).reshape(B, L, C, Wk)
    dx = np.zeros(cache.x_shape)
    for k in range(Wk):
        dx[:, :, k : k + L] += dpatches[:, :, :, k].transpose(0, 2, 1)
    return Conv1dParams(dfilters, dbias, dgain, doffset), dx


# ---------------------------------------------------------------- classification


def softmax(logits, axis: int = -1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Summed cross-entropy of integer ``labels`` (0-based) under softmax(logits).

    ``logits`` has classes on the last axis and ``labels`` the remaining
    shape. Returns ``(loss, probs, dlogits)``.
    """
    if logits.shape[:-1] != labels.shape:
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(log_probs, labels[..., None], axis=-1)
    probs = np.exp(log_probs)
    dlogits = probs.copy()
    np.put_along_axis(dlogits, labels[..., None], np.take_along_axis(dlogits, labels[..., None], axis=-1) - 1.0, axis=-1)
    return -float(picked.sum()), probs, dlogits


# ---------------------------------------------------------------- optimisation


def lr_at(n_iter: int, base: float = 0.005, decay: float = 0.005) -> float:
    """Time-based decay ``base / (1 + decay * n_iter)``."""
    return base / (1.0 + decay * n_iter)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            self.beta1, self.beta2, self.eps, self.step,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
        )


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> dict:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if params.keys() != grads.keys():
        raise ShapeError("parameter and gradient blocks differ")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        w -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# ---------------------------------------------------------------- verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    num_checked: int
    worst: list  # (block, flat index, analytic, numeric, rel error), worst first

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:g} n={self.num_checked}"]
        for name, idx, a, n, r in self.worst:
            if r >= self.tolerance:
                lines.append(f"  {name}[{idx}] analytic={a:.10e} numeric={n:.10e} rel={r:.3e}")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 1e-4):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps ~0 gradients from dividing noise."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(
    loss_and_grads: Callable[[dict], tuple[float, dict]],
    params: dict,
    tolerance: float = 1e-5,
    step: float = 1e-5,
    keep_worst: int = 10,
) -> GradCheckReport:
    """Compare every analytic gradient coordinate to a central difference.

    ``loss_and_grads(params)`` must be a pure function of the arrays in
    ``params``; entries are perturbed in place and restored.
    """
    _, grads = loss_and_grads(params)
    grads = {k: np.array(g, copy=True) for k, g in grads.items()}
    records = []
    for name, w in params.items():
        flat = w.flat  # writes through for any memory layout
        g = grads[name].reshape(-1)
        for i in range(w.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = loss_and_grads(params)
            flat[i] = orig - step
            down, _ = loss_and_grads(params)
            flat[i] = orig
            num = (up - down) / (2 * step)
            records.append((name, i, float(g[i]), num, float(relative_error(g[i], num))))
    records.sort(key=lambda r: r[4], reverse=True)
    worst = records[0][4] if records else 0.0
    return GradCheckReport(worst, tolerance, len(records), records[:keep_worst])
