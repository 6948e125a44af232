"""Numerical core: layer primitives with explicit forward/backward passes.

Every ``*_forward`` style op returns its output together with a cache; the
matching ``*_backward`` consumes the upstream gradient and that cache. All
ops accept arbitrary leading (batch) axes and keep the dtype of their
inputs, so the same code runs in float32 for training and in float64 for
gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, TrainingError

ACTIVATIONS = ("tanh", "sigmoid", "relu", "softmax", "identity")


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; same seed gives the same stream everywhere."""
    return np.random.default_rng(seed)


def _shape_error(what, a, b):
    return DimensionError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not conform")


# ---------------------------------------------------------------------------
# affine


def affine(x, W, b):
    """y = x @ W + b over the last axis of ``x``."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise _shape_error("affine", x, W)
    if b.shape != (W.shape[1],):
        raise _shape_error("affine bias", W, b)
    return x @ W + b, (x, W)


def affine_backward(dy, cache):
    x, W = cache
    dx = dy @ W.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, x2.T @ dy2, dy2.sum(axis=0)


# ---------------------------------------------------------------------------
# activations


def sigmoid(x):
    # tanh form is overflow-free and keeps the input dtype
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def activation(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "relu":
        return np.maximum(x, 0)
    if name == "softmax":
        return softmax(x)
    if name == "identity":
        return x
    raise ConfigError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def activation_backward(name, y, dy):
    """Gradient w.r.t. the pre-activation, given the activation output ``y``."""
    if name == "tanh":
        return dy * (1 - y * y)
    if name == "sigmoid":
        return dy * y * (1 - y)
    if name == "relu":
        return dy * (y > 0)
    if name == "softmax":
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))
    if name == "identity":
        return dy
    raise ConfigError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# dropout


def dropout(x, rate, train, rng=None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None when inactive."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    mask = dropout_mask(x.shape, rate, rng, x.dtype)
    return x * mask, mask


def dropout_mask(shape, rate, rng, dtype=np.float32):
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) * np.asarray(1.0 / (1.0 - rate), dtype=dtype)


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# ---------------------------------------------------------------------------
# convolution over sentence rows + max pooling


def conv_rows(X, W, b, act="relu"):
    """Same-padded 1-D convolution along the row axis of ``X`` (..., L, d).

    ``W`` has shape (h, d, n_filters). Output row k sees input rows
    ``k - h//2 .. k + ceil(h/2) - 1``; rows outside the sentence read as zero.
    """
    L, d = X.shape[-2:]
    if W.ndim != 3 or W.shape[1] != d:
        raise _shape_error("conv_rows", X, W)
    h, _, nf = W.shape
    if h > L:
        raise ConfigError(f"filter height {h} exceeds sentence length {L}")
    if b.shape != (nf,):
        raise _shape_error("conv_rows bias", W, b)
    top = h // 2
    pad = [(0, 0)] * (X.ndim - 2) + [(top, h - 1 - top), (0, 0)]
    Xp = np.pad(X, pad)
    cols = np.stack([Xp[..., j:j + L, :] for j in range(h)], axis=-2)
    cols = cols.reshape(X.shape[:-2] + (L, h * d))
    y = activation(act, cols @ W.reshape(h * d, nf) + b)
    return y, (cols, W, y, act, X.shape)


def conv_rows_backward(dy, cache):
    cols, W, y, act, xshape = cache
    h, d, nf = W.shape
    L = xshape[-2]
    dpre = activation_backward(act, y, dy)
    dW = (cols.reshape(-1, h * d).T @ dpre.reshape(-1, nf)).reshape(W.shape)
    db = dpre.reshape(-1, nf).sum(axis=0)
    dcols = (dpre @ W.reshape(h * d, nf).T).reshape(xshape[:-2] + (L, h, d))
    top = h // 2
    dXp = np.zeros(xshape[:-2] + (L + h - 1, d), dtype=dy.dtype)
    for j in range(h):
        dXp[..., j:j + L, :] += dcols[..., j, :]
    return dXp[..., top:top + L, :], dW, db


def max_over_rows(F):
    """Column-wise max over the row axis of ``F`` (..., L, z)."""
    if F.ndim < 2 or F.shape[-2] == 0:
        raise DimensionError(f"max_over_rows needs at least one row, got shape {F.shape}")
    idx = F.argmax(axis=-2)  # first occurrence on ties
    out = np.take_along_axis(F, idx[..., None, :], axis=-2)[..., 0, :]
    return out, (idx, F.shape)


def max_over_rows_backward(dy, cache):
    idx, shape = cache
    dF = np.zeros(shape, dtype=dy.dtype)
    np.put_along_axis(dF, idx[..., None, :], dy[..., None, :], axis=-2)
    return dF


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmCellParams:
    """Four-gate LSTM cell. Gate blocks are laid out as [input, forget, output, candidate]."""

    wx: np.ndarray  # (in, 4H)
    wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self):
        return self.wh.shape[0]

    @property
    def input_size(self):
        return self.wx.shape[0]

    @classmethod
    def init(cls, input_size, hidden_size, rng, scale=0.08, dtype=np.float32):
        H = hidden_size
        wx = rng.uniform(-scale, scale, (input_size, 4 * H)).astype(dtype)
        wh = rng.uniform(-scale, scale, (H, 4 * H)).astype(dtype)
        b = np.zeros(4 * H, dtype=dtype)
        b[H:2 * H] = 1.0
        return cls(wx, wh, b)


def lstm_step(x, h_prev, c_prev, p: LstmCellParams):
    H = p.hidden_size
    if x.shape[-1] != p.input_size:
        raise _shape_error("lstm_step input", x, p.wx)
    if h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
        raise _shape_error("lstm_step state", h_prev, p.wh)
    z = x @ p.wx + h_prev @ p.wh + p.b
    ifo = sigmoid(z[..., :3 * H])
    i, f, o = ifo[..., :H], ifo[..., H:2 * H], ifo[..., 2 * H:]
    g = np.tanh(z[..., 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, o, g, tc, p)


def lstm_step_backward(dh, dc, cache):
    """Returns ``(dx, dh_prev, dc_prev, (dwx, dwh, db))``."""
    x, h_prev, c_prev, i, f, o, g, tc, p = cache
    do = dh * tc
    dc = dc + dh * o * (1 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=-1
    )
    dx = dz @ p.wx.T
    dh_prev = dz @ p.wh.T
    dz2 = dz.reshape(-1, dz.shape[-1])
    dwx = x.reshape(-1, x.shape[-1]).T @ dz2
    dwh = h_prev.reshape(-1, h_prev.shape[-1]).T @ dz2
    return dx, dh_prev, dc_prev, (dwx, dwh, dz2.sum(axis=0))


def lstm_run(seq, p: LstmCellParams, reverse=False, in_mask=None, rec_mask=None):
    """Unroll one direction over ``seq`` (B, T, in) from zero state.

    Masks are per-sequence dropout masks, shared across time steps.
    Returns hidden states (B, T, H) in input order.
    """
    B, T, _ = seq.shape
    H = p.hidden_size
    h = np.zeros((B, H), dtype=seq.dtype)
    c = np.zeros((B, H), dtype=seq.dtype)
    out = np.empty((B, T, H), dtype=seq.dtype)
    steps = []
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        x = seq[:, t]
        if in_mask is not None:
            x = x * in_mask
        hin = h if rec_mask is None else h * rec_mask
        h, c, cache = lstm_step(x, hin, c, p)
        out[:, t] = h
        steps.append((t, cache))
    return out, (steps, p, in_mask, rec_mask, seq.shape)


def lstm_run_backward(dout, cache):
    steps, p, in_mask, rec_mask, shape = cache
    B, T, _ = shape
    H = p.hidden_size
    dseq = np.zeros(shape, dtype=dout.dtype)
    dwx = np.zeros_like(p.wx)
    dwh = np.zeros_like(p.wh)
    db = np.zeros_like(p.b)
    dh_next = np.zeros((B, H), dtype=dout.dtype)
    dc_next = np.zeros((B, H), dtype=dout.dtype)
    for t, step_cache in reversed(steps):
        dh = dout[:, t] + dh_next
        dx, dh_prev, dc_next, (gx, gh, gb) = lstm_step_backward(dh, dc_next, step_cache)
        dwx += gx
        dwh += gh
        db += gb
        dseq[:, t] = dx if in_mask is None else dx * in_mask
        dh_next = dh_prev if rec_mask is None else dh_prev * rec_mask
    return dseq, (dwx, dwh, db)


def bilstm_run(seq, fwd: LstmCellParams, bwd: LstmCellParams,
               input_dropout=0.0, recurrent_dropout=0.0, train=False, rng=None):
    """Bidirectional pass; row t of the output is ``[h_fwd(t); h_bwd(t)]``.

    ``seq`` is (T, in) or batched (B, T, in). Dropout masks are drawn once per
    sequence and direction, in a fixed order, only in train mode.
    """
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[1] == 0:
        raise DimensionError(f"bilstm_run needs a nonempty sequence, got shape {seq.shape}")
    B, _, n_in = seq.shape
    masks = []
    for p in (fwd, bwd):
        m_in = m_rec = None
        if train:
            if input_dropout > 0:
                m_in = dropout_mask((B, n_in), input_dropout, rng, seq.dtype)
            if recurrent_dropout > 0:
                m_rec = dropout_mask((B, p.hidden_size), recurrent_dropout, rng, seq.dtype)
        masks.append((m_in, m_rec))
    hf, cf = lstm_run(seq, fwd, False, *masks[0])
    hb, cb = lstm_run(seq, bwd, True, *masks[1])
    out = np.concatenate([hf, hb], axis=-1)
    if squeeze:
        out = out[0]
    return out, (cf, cb, fwd.hidden_size, squeeze)


def bilstm_run_backward(dout, cache):
    """Returns ``(dseq, fwd_grads, bwd_grads)``; grads are (dwx, dwh, db) tuples."""
    cf, cb, H, squeeze = cache
    if squeeze:
        dout = dout[None]
    dsf, gf = lstm_run_backward(dout[..., :H], cf)
    dsb, gb = lstm_run_backward(dout[..., H:], cb)
    dseq = dsf + dsb
    if squeeze:
        dseq = dseq[0]
    return dseq, gf, gb


# ---------------------------------------------------------------------------
# AdaDelta


@dataclass
class AdaDeltaState:
    rho: float = 0.95
    epsilon: float = 1e-6
    sq_grad: dict = field(default_factory=dict)
    sq_update: dict = field(default_factory=dict)

    def slots(self, name, like):
        if name not in self.sq_grad:
            self.sq_grad[name] = np.zeros_like(like)
            self.sq_update[name] = np.zeros_like(like)
        return self.sq_grad[name], self.sq_update[name]


def adadelta_step(param, grad, state: AdaDeltaState, name="param"):
    """In-place AdaDelta update of ``param``; returns the applied delta."""
    if param.shape != grad.shape:
        raise _shape_error(f"adadelta_step {name}", param, grad)
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient for parameter {name!r}")
    eg, edx = state.slots(name, param)
    rho, eps = state.rho, state.epsilon
    eg *= rho
    eg += (1 - rho) * grad * grad
    delta = -(np.sqrt(edx + eps) / np.sqrt(eg + eps)) * grad
    edx *= rho
    edx += (1 - rho) * delta * delta
    param += delta.astype(param.dtype, copy=False)
    return delta


# ---------------------------------------------------------------------------
# gradient checking


def grad_check_params(loss_and_grad, params, delta=1e-3, max_coords=20, rng=None,
                      pattern=None, floor=1e-6, stats=None):
    """Per-parameter max relative error between analytic and central-difference gradients.

    ``loss_and_grad(params) -> (loss, grads)`` must be deterministic. The
    check runs on float64 copies of ``params``; at most ``max_coords``
    coordinates are sampled per parameter. With ``pattern(params) -> array``
    given, coordinates whose +/-delta probes land on different activation
    patterns (a ReLU or max-pool switch inside the step) are skipped and
    counted in ``stats["skipped"]``.
    """
    rng = make_rng(0) if rng is None else rng
    theta = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = loss_and_grad(theta)
    errors = {}
    skipped = 0
    for name, value in theta.items():
        flat = value.reshape(-1)
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        worst, checked = 0.0, 0
        for j in rng.permutation(flat.size):
            if checked >= max_coords:
                break
            orig = flat[j]
            flat[j] = orig + delta
            fp, _ = loss_and_grad(theta)
            pp = pattern(theta) if pattern else None
            flat[j] = orig - delta
            fm, _ = loss_and_grad(theta)
            pm = pattern(theta) if pattern else None
            flat[j] = orig
            if pattern is not None and not np.array_equal(pp, pm):
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * delta)
            a = analytic[j]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
            checked += 1
        errors[name] = worst
    if stats is not None:
        stats["skipped"] = stats.get("skipped", 0) + skipped
    return errors


def grad_check(loss_and_grad, params, delta=1e-3, max_coords=20, rng=None, pattern=None):
    """Worst relative error over the sampled coordinates of all parameters."""
    errs = grad_check_params(loss_and_grad, params, delta, max_coords, rng, pattern)
    return max(errs.values()) if errs else 0.0
