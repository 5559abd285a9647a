"""Stateless forward/backward rules for the layers used by the unfolded network.

Arrays are NCHW.  Every ``*_forward`` returns ``(out, cache)`` and the matching
``*_backward`` consumes ``(dout, cache)``.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when an operand has the wrong extent along a named axis."""

    def __init__(self, op, axis, expected, got):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: {axis} mismatch (expected {expected}, got {got})")


def _check4(op, x):
    if x.ndim != 4:
        raise ShapeError(op, "ndim", 4, x.ndim)


# -- convolution (3x3, stride 1, same padding) --------------------------------

def _im2col(x):
    # (N, C, H, W) -> (C*9, N*H*W), rows ordered (c, kh, kw) to match kernel.reshape(O, -1)
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 3, 3, n, h, w), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, i, j] = xp[:, :, i:i + h, j:j + w].transpose(1, 0, 2, 3)
    return cols.reshape(c * 9, n * h * w)


def _col2im(dcols, shape):
    n, c, h, w = shape
    dcols = dcols.reshape(c, 3, 3, n, h, w)
    dxp = np.zeros((c, n, h + 2, w + 2), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += dcols[:, i, j]
    return dxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3)


def _padded_rows(x):
    # NCHW -> zero-padded NHWC flattened to rows, with a margin of wp+1 rows on
    # both ends so every 3x3 tap is a contiguous row slice
    n, c, h, w = x.shape
    wp = w + 2
    rows = n * (h + 2) * wp
    m = wp + 1
    buf = np.zeros((rows + 2 * m, c), dtype=x.dtype)
    buf[m:m + rows].reshape(n, h + 2, wp, c)[:, 1:-1, 1:-1, :] = x.transpose(0, 2, 3, 1)
    return buf, rows, m, [(t // 3 - 1) * wp + (t % 3 - 1) for t in range(9)]


def _unpad_rows(a, shape):
    n, _, h, w = shape
    a = a.reshape(n, h + 2, w + 2, -1)[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(a)


def conv2d_forward(x, kernel, bias):
    """Cross-correlation with a 3x3 kernel, zero padding 1, stride 1.

    Picks one of three equivalent evaluation orders by channel counts:
    im2col for few input channels, per-tap output stacking for few output
    channels, and a nine-tap accumulation loop otherwise.
    """
    _check4("conv2d", x)
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeError("conv2d", "kernel spatial size", (3, 3), kernel.shape[2:])
    out_ch, in_ch = kernel.shape[:2]
    if x.shape[1] != in_ch:
        raise ShapeError("conv2d", "input channels", in_ch, x.shape[1])
    if bias.shape != (out_ch,):
        raise ShapeError("conv2d", "bias length", out_ch, bias.shape)
    n, _, h, w = x.shape

    if 9 * in_ch <= 64:
        cols = _im2col(x)
        out = kernel.reshape(out_ch, -1) @ cols
        out += bias[:, None]
        out = out.reshape(out_ch, n, h, w).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(out), ("cols", cols, x.shape, kernel)

    buf, rows, m, offs = _padded_rows(x)
    taps = np.ascontiguousarray(kernel.transpose(2, 3, 1, 0)).reshape(9, in_ch, out_ch)
    if 9 * out_ch <= 64:
        stacked = np.ascontiguousarray(taps.transpose(1, 0, 2)).reshape(in_ch, 9 * out_ch)
        y = (buf @ stacked).reshape(-1, 9, out_ch)
        out = y[m + offs[0]:m + offs[0] + rows, 0].copy()
        for t in range(1, 9):
            out += y[m + offs[t]:m + offs[t] + rows, t]
        mode = "out"
    else:
        out = buf[m:m + rows] @ taps[4]
        tmp = np.empty_like(out)
        for t, off in enumerate(offs):
            if t != 4:
                np.matmul(buf[m + off:m + off + rows], taps[t], out=tmp)
                out += tmp
        mode = "loop"
    out += bias
    return _unpad_rows(out, (n, out_ch, h, w)), (mode, buf, x.shape, taps)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dkernel, dbias)``."""
    mode = cache[0]
    if mode == "cols":
        _, cols, shape, kernel = cache
        out_ch = kernel.shape[0]
        dmat = dout.transpose(1, 0, 2, 3).reshape(out_ch, -1)
        dkernel = (dmat @ cols.T).reshape(kernel.shape)
        dbias = dmat.sum(axis=1)
        dcols = kernel.reshape(out_ch, -1).T @ dmat
        return np.ascontiguousarray(_col2im(dcols, shape)), dkernel, dbias

    _, buf, shape, taps = cache
    n, in_ch, h, w = shape
    out_ch = taps.shape[2]
    wp = w + 2
    rows = n * (h + 2) * wp
    m = wp + 1
    offs = [(t // 3 - 1) * wp + (t % 3 - 1) for t in range(9)]
    g = np.zeros((n, h + 2, wp, out_ch), dtype=dout.dtype)
    g[:, 1:-1, 1:-1, :] = dout.transpose(0, 2, 3, 1)
    g = g.reshape(rows, out_ch)
    dbias = g.sum(axis=0)
    if mode == "out":
        gs = np.zeros((rows + 2 * m, 9, out_ch), dtype=dout.dtype)
        for t, off in enumerate(offs):
            gs[m + off:m + off + rows, t] = g
        gs = gs.reshape(-1, 9 * out_ch)
        stacked = np.ascontiguousarray(taps.transpose(1, 0, 2)).reshape(in_ch, 9 * out_ch)
        dbuf = gs @ stacked.T
        dtaps = (buf.T @ gs).reshape(in_ch, 9, out_ch).transpose(1, 0, 2)
    else:
        dbuf = np.zeros_like(buf)
        dtaps = np.empty_like(taps)
        tmp = np.empty((rows, in_ch), dtype=dout.dtype)
        for t, off in enumerate(offs):
            dtaps[t] = buf[m + off:m + off + rows].T @ g
            np.matmul(g, taps[t].T, out=tmp)
            dbuf[m + off:m + off + rows] += tmp
    dx = _unpad_rows(dbuf[m:m + rows], shape)
    dkernel = np.ascontiguousarray(dtaps.reshape(3, 3, in_ch, out_ch).transpose(3, 2, 0, 1))
    return dx, dkernel, dbias


# -- batch normalization -------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      training, momentum=0.1, eps=1e-5):
    """Per-channel normalisation.  Updates ``running_mean``/``running_var`` in
    place when ``training`` is true."""
    _check4("batchnorm", x)
    c = x.shape[1]
    for name, arr in (("gamma", gamma), ("beta", beta),
                      ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeError("batchnorm", f"{name} channels", c, arr.shape)
    if not eps > 0:
        raise ValueError(f"batchnorm: eps must be positive, got {eps}")
    if training:
        mean = x.mean(axis=(0, 2, 3))
        xc = x - mean[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std[None, :, None, None]
        m = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return out.astype(x.dtype, copy=False), (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, training = cache
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    g = (gamma * inv_std)[None, :, None, None]
    if not training:
        return dout * g, dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = g * (dout - (dbeta / m)[None, :, None, None]
              - xhat * (dgamma / m)[None, :, None, None])
    return dx, dgamma, dbeta


# -- activations ---------------------------------------------------------------

ACTIVATIONS = ("relu", "sigmoid")


def activation_forward(x, kind):
    if kind == "relu":
        out = np.maximum(x, 0)
        return out, (kind, x > 0)
    if kind == "sigmoid":
        out = sigmoid(x)
        return out, (kind, out)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(dout, cache):
    kind, saved = cache
    if kind == "relu":
        return dout * saved
    return dout * saved * (1 - saved)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- pooling and dense ---------------------------------------------------------

def global_avg_pool_forward(x):
    _check4("global_avg_pool", x)
    h, w = x.shape[2:]
    if h < 1 or w < 1:
        raise ShapeError("global_avg_pool", "spatial extent", ">= 1", (h, w))
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, shape):
    h, w = shape[2:]
    return np.broadcast_to((dout / (h * w))[:, :, None, None], shape).copy()


def dense_forward(x, weight, bias):
    """``y = W x + b`` applied row-wise to ``x`` of shape (batch, in)."""
    if x.ndim == 1:
        x = x[None]
        squeeze = True
    else:
        squeeze = False
    if weight.shape[1] != x.shape[1]:
        raise ShapeError("dense", "input length", weight.shape[1], x.shape[1])
    if bias.shape != (weight.shape[0],):
        raise ShapeError("dense", "bias length", weight.shape[0], bias.shape)
    out = x @ weight.T + bias
    return (out[0] if squeeze else out), (x, weight, squeeze)


def dense_backward(dout, cache):
    """Returns ``(dx, dweight, dbias)``."""
    x, weight, squeeze = cache
    if squeeze:
        dout = dout[None]
    dx = dout @ weight
    dweight = dout.T @ x
    dbias = dout.sum(axis=0)
    return (dx[0] if squeeze else dx), dweight, dbias
