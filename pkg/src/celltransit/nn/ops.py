"""Differentiable operations.

Each op computes its output eagerly with numpy and, when a tape is active
and any input requires a gradient, records a backward closure over the
saved activations.  Conventions:

* images are NCHW; feature matrices are (N, features)
* conv2d uses cross-correlation semantics with
  H' = floor((H + 2p - k) / s) + 1
* max-pool ties resolve to the first (lowest flat index) maximum so the
  backward pass is deterministic
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from celltransit.errors import ConfigError, ShapeError
from celltransit.nn.tensor import Tensor, active_tape


def _result(data, inputs, backward_fn_builder):
    req = any(t.requires_grad for t in inputs if isinstance(t, Tensor))
    out = Tensor(data, requires_grad=req)
    tape = active_tape()
    if tape is not None and req:
        tape.record(out, backward_fn_builder(out))
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b) for x (N, in), w (in, out), b (out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} != ({w.shape[1]},)")
    data = x.data @ w.data
    if b is not None:
        data = data + b.data

    def build(out):
        def backward():
            g = out.grad
            if x.requires_grad:
                x.accumulate(g @ w.data.T)
            if w.requires_grad:
                w.accumulate(x.data.T @ g)
            if b is not None and b.requires_grad:
                b.accumulate(g.sum(axis=0))
        return backward

    return _result(data, [x, w, b] if b is not None else [x, w], build)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    # (N, C, OH, OW, kh, kw) view, strided by the pooling step
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of x (N, C, H, W) with kernels k (O, C, kh, kw)."""
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and kernels")
    n, c, h, w = x.shape
    o, ck, kh, kw = k.shape
    if ck != c:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {ck}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0 or kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for padded "
                         f"input {h + 2 * padding}x{w + 2 * padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                         (padding, padding))) if padding else x.data
    cols, oh2, ow2 = _im2col(xp, kh, kw, stride)
    assert (oh2, ow2) == (oh, ow)
    w2d = k.data.reshape(o, c * kh * kw)
    out = (w2d[None] @ cols).reshape(n, o, oh, ow)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def build(outt):
        def backward():
            g = outt.grad.reshape(n, o, oh * ow)
            if k.requires_grad:
                gk = np.einsum("nop,nkp->ok", g, cols)
                k.accumulate(gk.reshape(k.shape))
            if bias is not None and bias.requires_grad:
                bias.accumulate(outt.grad.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gcols = (w2d.T[None] @ g).reshape(n, c, kh, kw, oh, ow)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * oh:stride,
                            j:j + stride * ow:stride] += gcols[:, :, i, j]
                if padding:
                    gxp = gxp[:, :, padding:-padding, padding:-padding]
                x.accumulate(gxp)
        return backward

    ins = [x, k] if bias is None else [x, k, bias]
    return _result(out, ins, build)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def build(out):
        def backward():
            if x.requires_grad:
                x.accumulate(out.grad * (x.data > 0))
        return backward

    return _result(data, [x], build)


def maxpool2d(x: Tensor, kernel: int = 2, stride: int | None = None,
              padding: int = 0) -> Tensor:
    """Max pooling; ties go to the first maximum for deterministic backward."""
    if x.data.ndim != 4:
        raise ShapeError("maxpool2d expects NCHW input")
    stride = stride or kernel
    n, c, h, w = x.shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError("maxpool2d: window larger than padded input")
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                             (padding, padding)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride].reshape(n, c, oh, ow, kernel * kernel)
    idx = np.argmax(win, axis=-1)
    data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def build(out):
        def backward():
            if not x.requires_grad:
                return
            gxp = np.zeros_like(xp)
            di, dj = np.divmod(idx, kernel)
            nn, cc, ohh, oww = np.indices(idx.shape, sparse=False)
            rows = ohh * stride + di
            cols = oww * stride + dj
            np.add.at(gxp, (nn, cc, rows, cols), out.grad)
            if padding:
                x.accumulate(gxp[:, :, padding:-padding, padding:-padding])
            else:
                x.accumulate(gxp)
        return backward

    return _result(data, [x], build)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial dims: (N, C, H, W) -> (N, C)."""
    if x.data.ndim != 4:
        raise ShapeError("global_avg_pool expects NCHW input")
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))

    def build(out):
        def backward():
            if x.requires_grad:
                g = np.broadcast_to(out.grad[:, :, None, None] / (h * w),
                                    x.shape)
                x.accumulate(np.ascontiguousarray(g))
        return backward

    return _result(data, [x], build)


def concat(tensors, axis: int = 1) -> Tensor:
    datas = [t.data for t in tensors]
    ref = datas[0].shape
    for d in datas[1:]:
        if len(d.shape) != len(ref):
            raise ShapeError("concat: rank mismatch")
    data = np.concatenate(datas, axis=axis)
    offsets = np.cumsum([0] + [d.shape[axis] for d in datas])

    def build(out):
        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    t.accumulate(out.grad[tuple(sl)])
        return backward

    return _result(data, list(tensors), build)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise residual addition of equal-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    data = a.data + b.data

    def build(out):
        def backward():
            if a.requires_grad:
                a.accumulate(out.grad)
            if b.requires_grad:
                b.accumulate(out.grad)
        return backward

    return _result(data, [a, b], build)


def flatten(x: Tensor) -> Tensor:
    n = x.shape[0]
    data = x.data.reshape(n, -1)

    def build(out):
        def backward():
            if x.requires_grad:
                x.accumulate(out.grad.reshape(x.shape))
        return backward

    return _result(data, [x], build)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running,
              training: bool, momentum: float = 0.1,
              eps: float = 1e-5) -> Tensor:
    """Batch normalization over the batch (and spatial) axes.

    ``running`` is a RunningStats holder updated in train mode and used
    verbatim in eval mode.  Train mode requires an effective batch of at
    least 2 values per channel.
    """
    if x.data.ndim == 2:
        axes = (0,)
        shape = (1, -1)
    elif x.data.ndim == 4:
        axes = (0, 2, 3)
        shape = (1, -1, 1, 1)
    else:
        raise ShapeError("batchnorm expects (N, F) or (N, C, H, W) input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batchnorm: scale/shift must have one entry per "
                         "channel")
    g_b = gamma.data.reshape(shape)
    b_b = beta.data.reshape(shape)

    if training:
        count = x.data.size // c
        if count < 2:
            raise ConfigError("batchnorm train mode needs batch size >= 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running.update(mean, var, count, momentum)
    else:
        mean = running.mean
        var = running.var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    data = g_b * xhat + b_b

    def build(out):
        def backward():
            g = out.grad
            if gamma.requires_grad:
                gamma.accumulate(np.sum(g * xhat, axis=axes))
            if beta.requires_grad:
                beta.accumulate(np.sum(g, axis=axes))
            if not x.requires_grad:
                return
            if not training:
                x.accumulate(g * g_b * inv_std.reshape(shape))
                return
            n_red = x.data.size // c
            gxhat = g * g_b
            sum_gxhat = np.sum(gxhat, axis=axes).reshape(shape)
            sum_gxhat_xhat = np.sum(gxhat * xhat, axis=axes).reshape(shape)
            gx = (inv_std.reshape(shape) / n_red) * (
                n_red * gxhat - sum_gxhat - xhat * sum_gxhat_xhat)
            x.accumulate(gx)
        return backward

    return _result(data, [x, gamma, beta], build)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Fused log-softmax + NLL with mean reduction.

    Returns the scalar loss tensor and the softmax probabilities as a
    plain float64 array whose rows sum to 1 within 1e-12.  The gradient
    w.r.t. the logits is (softmax - onehot) / N.
    """
    if logits.data.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects (N, K) logits")
    y = np.asarray(labels).astype(int)
    n, k = logits.shape
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} != ({n},)")
    if np.any(y < 0) or np.any(y >= k):
        raise ConfigError(f"labels must lie in [0, {k})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    logp = z - lse
    probs = np.exp(logp)
    probs /= probs.sum(axis=1, keepdims=True)
    loss_val = -np.mean(logp[np.arange(n), y])
    data = np.asarray(loss_val, dtype=logits.dtype)

    def build(out):
        def backward():
            if logits.requires_grad:
                g = probs.copy()
                g[np.arange(n), y] -= 1.0
                g *= float(out.grad) / n
                logits.accumulate(g.astype(logits.dtype))
        return backward

    loss = _result(data, [logits], build)
    return loss, probs
