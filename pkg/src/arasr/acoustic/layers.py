"""Forward/backward kernels for the acoustic model, written against numpy.

Activations use the channels-last layout (batch, time, freq, channels) in the
convolutional stack and (direction, batch, time, units) inside bidirectional
recurrent layers. Every ``*_forward`` returns its output plus a cache that the matching
``*_backward`` consumes.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import fft as sp_fft

RELU_CLIP = 20.0
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class DegenerateBatchError(ValueError):
    pass


def clipped_relu(x):
    """min(max(x, 0), 20), elementwise."""
    return np.minimum(np.maximum(x, 0.0), RELU_CLIP)


def clipped_relu_grad(x):
    return ((x > 0.0) & (x < RELU_CLIP)).astype(x.dtype if isinstance(x, np.ndarray) else float)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# --- convolution -------------------------------------------------------------

def same_padding(n: int, k: int, s: int) -> tuple[int, int, int]:
    """(out, left, right) so that out = ceil(n / s) with a fixed left pad of (k - 1) // 2."""
    out = -(-n // s)
    left = (k - 1) // 2
    right = (out - 1) * s + k - n - left
    return out, left, right


def _spectral(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """2-D real FFT over the (time, freq) axes of a channels-last array."""
    return sp_fft.rfftn(x, s=shape, axes=(-3, -2))


def _kernel_spectrum(w: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Spectrum of w (O, C, kf, kt) zero-extended to ``shape``; result (K1, K2, C, O)."""
    spec = sp_fft.rfftn(np.ascontiguousarray(w.transpose(1, 0, 3, 2)), s=shape, axes=(2, 3))
    return np.ascontiguousarray(spec.transpose(2, 3, 0, 1))


def _mix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-bin channel contraction: (B, K1, K2, C) x (K1, K2, C, O) -> (B, K1, K2, O)."""
    return np.matmul(a.transpose(1, 2, 0, 3), b).transpose(2, 0, 1, 3)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: tuple[int, int]):
    """'same' zero-padded strided 2-D cross-correlation, channels-last.

    x: (B, T, F, C), w: (O, C, kf, kt) -> (B, ceil(T/st), ceil(F/sf), O).
    Computed as a circular correlation over the padded grid; every output
    position we keep lies at least kernel-size away from the wrap, so the
    result equals the direct sum.
    """
    B, T, F, C = x.shape
    O, C2, kf, kt = w.shape
    if C != C2:
        raise ValueError(f"conv expects {C2} input channels, got {C}")
    sf, st = stride
    Fo, fl, fr = same_padding(F, kf, sf)
    To, tl, tr = same_padding(T, kt, st)
    # any grid at least as large as the padded input is exact; pick FFT-friendly sizes
    grid = (sp_fft.next_fast_len(tl + T + max(tr, 0), real=True),
            sp_fft.next_fast_len(fl + F + max(fr, 0), real=True))
    xp = np.zeros((B, *grid, C), dtype=x.dtype)
    xp[:, tl:tl + T, fl:fl + F] = x
    X = _spectral(xp, grid)
    Wf = _kernel_spectrum(w, grid)
    Y = _mix(X, np.conj(Wf))
    y = sp_fft.irfftn(Y, s=grid, axes=(1, 2))
    out = np.ascontiguousarray(y[:, :st * (To - 1) + 1:st, :sf * (Fo - 1) + 1:sf]).astype(x.dtype, copy=False)
    saved = (X, Wf, grid, (tl, fl, T, F), stride, (To, Fo))
    return out, saved


def conv2d_backward(gout: np.ndarray, w: np.ndarray, saved, need_dx: bool = True):
    """Returns (dx, dw) for :func:`conv2d_forward`; dx is None when not requested."""
    X, Wf, grid, (tl, fl, T, F), (sf, st), (To, Fo) = saved
    O, C, kf, kt = w.shape
    B = gout.shape[0]
    g1 = np.zeros((B, *grid, O), dtype=gout.dtype)
    g1[:, :st * (To - 1) + 1:st, :sf * (Fo - 1) + 1:sf] = gout
    G = _spectral(g1, grid)
    dx = None
    if need_dx:
        dX = _mix(G, Wf.transpose(0, 1, 3, 2))
        dxp = sp_fft.irfftn(dX, s=grid, axes=(1, 2))
        dx = np.ascontiguousarray(dxp[:, tl:tl + T, fl:fl + F]).astype(gout.dtype, copy=False)
    # sum over the batch of X * conj(G), per bin: (K1, K2, C, B) @ (K1, K2, B, O)
    dW = np.matmul(X.transpose(1, 2, 3, 0), np.conj(G).transpose(1, 2, 0, 3))
    dW = np.ascontiguousarray(dW.transpose(3, 2, 0, 1))  # (O, C, K1, K2)
    dw_full = sp_fft.irfftn(dW, s=grid, axes=(2, 3))
    dw = np.ascontiguousarray(dw_full[:, :, :kt, :kf].transpose(0, 1, 3, 2)).astype(w.dtype, copy=False)
    return dx, dw


# --- batch normalization -----------------------------------------------------

def batchnorm_forward(x, gamma, beta, mode, running_mean, running_var, mask=None):
    """Per-channel normalization over (batch, time, freq), skipping masked-out frames.

    x is channels-last (B, T, F, C); ``mask`` has shape (B, T, 1, 1) with 1 on
    valid frames. In train mode the running statistics are updated in place.
    """
    if mode == "train":
        if mask is None:
            mask = np.ones((x.shape[0], x.shape[1], 1, 1), dtype=x.dtype)
        n = float(mask.sum()) * x.shape[2]
        if n < 2:
            raise DegenerateBatchError("batch normalization needs at least two elements per channel")
        mu = (x * mask).sum(axis=(0, 1, 2)) / n
        xc = x - mu
        var = (xc * xc * mask).sum(axis=(0, 1, 2)) / n
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = xc * inv
        running_mean *= BN_MOMENTUM
        running_mean += (1.0 - BN_MOMENTUM) * mu
        running_var *= BN_MOMENTUM
        running_var += (1.0 - BN_MOMENTUM) * var
        return gamma * xhat + beta, (xhat, inv, mask, n)
    inv = 1.0 / np.sqrt(running_var + BN_EPS)
    return gamma * ((x - running_mean) * inv) + beta, None


def batchnorm_backward(dy, gamma, saved):
    xhat, inv, mask, n = saved
    dy = dy * mask
    dgamma = (dy * xhat).sum(axis=(0, 1, 2))
    dbeta = dy.sum(axis=(0, 1, 2))
    dxhat = dy * gamma
    dx = (inv / n) * (n * dxhat - dbeta * gamma - xhat * (dgamma * gamma))
    return dx * mask, dgamma, dbeta


# --- recurrent cells ---------------------------------------------------------
# Gate layout along the last axis: GRU [reset, update, candidate],
# LSTM [input, forget, cell, output].

def gru_step(gi, h, U, b_hn):
    """One GRU update given the precomputed input projection ``gi = x W + b``.

    h' = (1 - z) * n + z * h with n = tanh(gi_n + r * (h U_n + b_hn)).
    """
    H = h.shape[-1]
    gh = np.matmul(h, U)
    r = sigmoid(gi[..., :H] + gh[..., :H])
    z = sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
    hn = gh[..., 2 * H:] + b_hn
    n = np.tanh(gi[..., 2 * H:] + r * hn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (h, r, z, n, hn)


def gru_step_backward(dh_new, U, saved):
    """Returns (d_gi, d_gh, dh_prev_partial, d_b_hn); caller adds d_gh @ U^T to dh_prev."""
    h, r, z, n, hn = saved
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dan = dn * (1.0 - n * n)
    dr = dan * hn
    dar = dr * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    dhn = dan * r
    dgi = np.concatenate([dar, daz, dan], axis=-1)
    dgh = np.concatenate([dar, daz, dhn], axis=-1)
    return dgi, dgh, dh, dhn


def gru_cell(x, h, W, U, b, b_hn):
    """Single-direction GRU step from raw input ``x``."""
    return gru_step(x @ W + b, h, U, b_hn)[0]


def lstm_step(gi, state, U):
    h, c = state
    H = h.shape[-1]
    a = gi + np.matmul(h, U)
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = sigmoid(a[..., 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return (h_new, c_new), (h, c, i, f, g, o, tc)


def lstm_step_backward(dh_new, dc_new, saved):
    h, c, i, f, g, o, tc = saved
    do = dh_new * tc
    dc = dc_new + dh_new * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c
    dg = dc * i
    dc_prev = dc * f
    da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=-1)
    return da, dc_prev


def lstm_cell(x, state, W, U, b):
    return lstm_step(x @ W + b, state, U)[0]


# --- bidirectional layer -----------------------------------------------------

def reverse_index(lengths, T: int) -> np.ndarray:
    """Per-item time permutation reversing the first ``length`` frames and fixing the padding."""
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def _gather_time(x, idx):
    return np.take_along_axis(x, idx[..., None], axis=1)


def birnn_forward(x, lengths, p, cell: str):
    """Run both directions of one recurrent layer.

    x: (B, T, D). Parameters in ``p`` carry a leading direction axis of size 2.
    Returns (B, T, 2H), forward direction first, zeroed past each length.
    """
    B, T, D = x.shape
    idx = reverse_index(lengths, T)
    x2 = np.stack([x, _gather_time(x, idx)])  # (2, B, T, D)
    W, U, b = p["W"], p["U"], p["b"]
    H = U.shape[1]
    gi = np.matmul(x2.reshape(2, B * T, D), W).reshape(2, B, T, -1) + b[:, None, None, :]
    hs = np.zeros((2, B, T, H), dtype=x.dtype)
    steps = []
    if cell == "gru":
        h = np.zeros((2, B, H), dtype=x.dtype)
        b_hn = p["b_hn"][:, None, :]
        for t in range(T):
            h, saved = gru_step(gi[:, :, t], h, U, b_hn)
            hs[:, :, t] = h
            steps.append(saved)
    elif cell == "lstm":
        state = (np.zeros((2, B, H), dtype=x.dtype), np.zeros((2, B, H), dtype=x.dtype))
        for t in range(T):
            state, saved = lstm_step(gi[:, :, t], state, U)
            hs[:, :, t] = state[0]
            steps.append(saved)
    else:
        raise ValueError(f"unknown cell type {cell!r}")
    mask = (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(x.dtype)[..., None]
    out = np.concatenate([hs[0], _gather_time(hs[1], idx)], axis=-1) * mask
    return out, (x2, idx, mask, steps, cell)


def birnn_backward(dout, p, saved):
    x2, idx, mask, steps, cell = saved
    _, B, T, D = x2.shape
    W, U = p["W"], p["U"]
    H = U.shape[1]
    dout = dout * mask
    dhs = np.stack([dout[..., :H], _gather_time(dout[..., H:], idx)])  # (2, B, T, H)
    G = W.shape[2]
    dgi = np.zeros((2, B, T, G), dtype=dout.dtype)
    dgh_all = np.zeros((2, B, T, G), dtype=dout.dtype)
    hprev = np.zeros((2, B, T, H), dtype=dout.dtype)
    Ut = U.transpose(0, 2, 1)
    grads = {}
    dh_next = np.zeros((2, B, H), dtype=dout.dtype)
    if cell == "gru":
        db_hn = np.zeros((2, H), dtype=dout.dtype)
        for t in range(T - 1, -1, -1):
            saved_t = steps[t]
            dgi_t, dgh_t, dh_prev, dhn = gru_step_backward(dhs[:, :, t] + dh_next, U, saved_t)
            dgi[:, :, t] = dgi_t
            dgh_all[:, :, t] = dgh_t
            hprev[:, :, t] = saved_t[0]
            db_hn += dhn.sum(axis=1)
            dh_next = dh_prev + np.matmul(dgh_t, Ut)
        grads["b_hn"] = db_hn
    else:
        dc_next = np.zeros((2, B, H), dtype=dout.dtype)
        for t in range(T - 1, -1, -1):
            saved_t = steps[t]
            da, dc_next = lstm_step_backward(dhs[:, :, t] + dh_next, dc_next, saved_t)
            dgi[:, :, t] = da
            dgh_all[:, :, t] = da
            hprev[:, :, t] = saved_t[0]
            dh_next = np.matmul(da, Ut)
    grads["U"] = np.matmul(hprev.reshape(2, B * T, H).transpose(0, 2, 1), dgh_all.reshape(2, B * T, G))
    dgi_flat = dgi.reshape(2, B * T, G)
    grads["W"] = np.matmul(x2.reshape(2, B * T, D).transpose(0, 2, 1), dgi_flat)
    grads["b"] = dgi_flat.sum(axis=1)
    dx2 = np.matmul(dgi_flat, W.transpose(0, 2, 1)).reshape(2, B, T, D)
    dx = dx2[0] + _gather_time(dx2[1], idx)
    return dx, grads


def xavier_uniform(shape, rng: np.random.Generator, fan_in=None, fan_out=None, dtype=np.float64):
    """Glorot uniform on +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in is None or fan_out is None:
        if len(shape) == 2:
            fi, fo = shape
        elif len(shape) == 4:
            rf = shape[2] * shape[3]
            fi, fo = shape[1] * rf, shape[0] * rf
        else:
            fi = fo = int(np.prod(shape))
        fan_in = fi if fan_in is None else fan_in
        fan_out = fo if fan_out is None else fan_out
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
