"""The operation catalog.

Everything the encoder, the reasoning stack, and the two losses need:
convolution, linear maps, group normalization, pooling, pointwise math,
reductions, concat/split plumbing, cosine similarity, and a numerically
stable binary cross entropy on logits.  Each op validates shapes, computes
the forward value with numpy, and registers a closure that propagates
gradients to its inputs.
"""

from __future__ import annotations

import numpy as np

from .tensor import NumericsError, ShapeError, Tensor

__all__ = [
    "add", "sub", "mul", "relu", "sigmoid", "log", "exp",
    "linear", "conv2d", "group_norm", "mean", "tsum", "reshape",
    "concat", "split", "l2_norm", "dot", "avg_pool2d", "max_pool2d",
    "cosine_similarity", "binary_cross_entropy_with_logits",
]


def _same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(str(d) for d in dtypes)}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _elementwise_pair(op_name, a, b, fwd, da, db):
    _same_dtype(op_name, a, b)
    try:
        out = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op_name}: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(grad, a.data, b.data), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(grad, a.data, b.data), b.shape))

    return Tensor.from_op(out, (a, b), backward, op_name)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise_pair("add", a, b, lambda x, y: x + y,
                             lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise_pair("sub", a, b, lambda x, y: x - y,
                             lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise_pair("mul", a, b, lambda x, y: x * y,
                             lambda g, x, y: g * y, lambda g, x, y: g * x)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(grad):
        x._accumulate(grad * (x.data > 0))

    return Tensor.from_op(out, (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    # Stable in both tails: exp of a non-positive argument only.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(grad):
        x._accumulate(grad * out * (1.0 - out))

    return Tensor.from_op(out, (x,), backward, "sigmoid")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericsError("log: non-positive input")
    out = np.log(x.data)

    def backward(grad):
        x._accumulate(grad / x.data)

    return Tensor.from_op(out, (x,), backward, "log")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(grad):
        x._accumulate(grad * out)

    return Tensor.from_op(out, (x,), backward, "exp")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) with x of shape (N, d_in) or (d_in,), w of shape (d_in, d_out)."""
    _same_dtype("linear", x, w, *([b] if b is not None else []))
    squeeze = x.data.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    if xd.ndim != 2 or w.data.ndim != 2 or xd.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match out dim {w.shape[1]}")
    out = xd @ w.data
    if b is not None:
        out = out + b.data
    if squeeze:
        out = out[0]

    def backward(grad):
        g = grad[None, :] if squeeze else grad
        if x.requires_grad:
            gx = g @ w.data.T
            x._accumulate(gx[0] if squeeze else gx)
        if w.requires_grad:
            w._accumulate(xd.T @ g)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward, "linear")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution, NCHW input, (C_out, C_in, kh, kw) kernel.

    Internally the input is flipped to channels-last once, each kernel tap
    is copied out as a whole (C_in-wide chunks, so the copies stay cheap),
    and a single BLAS multiply against the reshaped kernel produces the
    output.  The patch matrix stays alive for the backward pass, which is
    two more multiplies plus a tap-wise scatter back onto the input.
    """
    _same_dtype("conv2d", x, w, *([b] if b is not None else []))
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4D input and kernel, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin2, kh, kw = w.shape
    if cin != cin2:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {cin2}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match out channels {cout}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} too large for input {x.shape}")

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        # pointwise conv: batched matmul over flattened spatial positions,
        # no patch gathering at all
        wmat = w.data.reshape(cout, cin)
        xv = x.data.reshape(n, cin, h * wd)
        flat = np.matmul(wmat, xv)
        if b is not None:
            flat += b.data[None, :, None]
        out = flat.reshape(n, cout, h, wd)

        def backward_pointwise(grad):
            g3 = grad.reshape(n, cout, h * wd)
            if b is not None and b.requires_grad:
                b._accumulate(g3.sum(axis=(0, 2)))
            if w.requires_grad:
                gw = np.tensordot(g3, xv, axes=([0, 2], [0, 2]))
                w._accumulate(gw.reshape(cout, cin, 1, 1))
            if x.requires_grad:
                x._accumulate(np.matmul(wmat.T, g3).reshape(n, cin, h, wd))

        parents = (x, w) if b is None else (x, w, b)
        return Tensor.from_op(out, parents, backward_pointwise, "conv2d")

    xt = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))  # channels last
    if padding:
        xt = np.pad(xt, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    rows = n * oh * ow
    taps = kh * kw
    cols = np.empty((n, oh, ow, taps * cin), dtype=x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            tap = dy * kw + dx
            cols[..., tap * cin:(tap + 1) * cin] = \
                xt[:, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride, :]
    cols2 = cols.reshape(rows, taps * cin)
    w2 = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0).reshape(taps * cin, cout))
    flat = cols2 @ w2
    if b is not None:
        flat += b.data[None, :]
    out = np.ascontiguousarray(flat.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))

    def backward(grad):
        if b is not None and b.requires_grad:
            b._accumulate(grad.sum(axis=(0, 2, 3)))
        g2 = grad.transpose(0, 2, 3, 1).reshape(rows, cout)
        if w.requires_grad:
            gw2 = cols2.T @ g2
            w._accumulate(gw2.reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1))
        if x.requires_grad:
            dcols = (g2 @ w2.T).reshape(n, oh, ow, taps * cin)
            gxt = np.zeros_like(xt)
            for dy in range(kh):
                for dx in range(kw):
                    tap = dy * kw + dx
                    gxt[:, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride, :] += \
                        dcols[..., tap * cin:(tap + 1) * cin]
            if padding:
                gxt = gxt[:, padding:padding + h, padding:padding + wd, :]
            x._accumulate(np.ascontiguousarray(gxt.transpose(0, 3, 1, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward, "conv2d")


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
               eps: float = 1e-5) -> Tensor:
    """Per-sample normalization over channel groups, NCHW input."""
    _same_dtype("group_norm", x, gamma, beta)
    if x.data.ndim != 4:
        raise ShapeError(f"group_norm: need 4D input, got {x.shape}")
    n, c, h, w = x.shape
    if c % groups != 0:
        raise ShapeError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")

    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = ((xg - mu) * inv).reshape(n, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(grad):
        if beta.requires_grad:
            beta._accumulate(grad.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            gamma._accumulate((grad * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = (grad * gamma.data[None, :, None, None]).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            m1 = dxhat.mean(axis=2, keepdims=True)
            m2 = (dxhat * xh).mean(axis=2, keepdims=True)
            dx = (dxhat - m1 - xh * m2) * inv
            x._accumulate(dx.reshape(n, c, h, w))

    return Tensor.from_op(out, (x, gamma, beta), backward, "group_norm")


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _normalize_axis(axis, x.data.ndim)
    out = x.data.mean(axis=ax, keepdims=keepdims)
    count = x.size if ax is None else int(np.prod([x.shape[a] for a in ax]))

    def backward(grad):
        g = np.asarray(grad)
        if not keepdims and ax is not None:
            g = np.expand_dims(g, ax)
        x._accumulate(np.broadcast_to(g, x.shape) / np.asarray(count, dtype=x.dtype))

    return Tensor.from_op(np.asarray(out), (x,), backward, "mean")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum reduction (named to avoid shadowing the builtin)."""
    ax = _normalize_axis(axis, x.data.ndim)
    out = x.data.sum(axis=ax, keepdims=keepdims)

    def backward(grad):
        g = np.asarray(grad)
        if not keepdims and ax is not None:
            g = np.expand_dims(g, ax)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return Tensor.from_op(np.asarray(out), (x,), backward, "sum")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc

    def backward(grad):
        x._accumulate(grad.reshape(x.shape))

    return Tensor.from_op(out, (x,), backward, "reshape")


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    _same_dtype("concat", *tensors)
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != ax):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {tensors[0].shape} on axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * ndim
                idx[ax] = slice(lo, hi)
                t._accumulate(grad[tuple(idx)])

    return Tensor.from_op(out, tuple(tensors), backward, "concat")


def split(x: Tensor, sections: list[int], axis: int = 0) -> list[Tensor]:
    """Inverse of concat: cut x into blocks of the given sizes along axis."""
    ax = axis % x.data.ndim
    if sum(sections) != x.shape[ax]:
        raise ShapeError(f"split: sections {sections} do not cover axis {ax} of {x.shape}")
    offsets = np.cumsum([0] + list(sections))
    outs = []
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        idx = [slice(None)] * x.data.ndim
        idx[ax] = slice(int(lo), int(hi))
        idx = tuple(idx)
        piece = np.ascontiguousarray(x.data[idx])

        def backward(grad, idx=idx):
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[idx] += grad

        outs.append(Tensor.from_op(piece, (x,), backward, "split"))
    return outs


def l2_norm(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _normalize_axis(axis, x.data.ndim)
    sq = np.sum(np.square(x.data), axis=ax, keepdims=True)
    norm_keep = np.sqrt(sq)
    if ax is None:
        out = norm_keep if keepdims else np.asarray(norm_keep.reshape(()))
    else:
        out = norm_keep if keepdims else np.squeeze(norm_keep, axis=ax)

    def backward(grad):
        g = np.asarray(grad)
        if not keepdims and ax is not None:
            g = np.expand_dims(g, ax)
        safe = np.where(norm_keep > 0, norm_keep, 1.0)
        contrib = g * x.data / safe
        x._accumulate(np.where(norm_keep > 0, contrib, 0.0).astype(x.dtype, copy=False))

    return Tensor.from_op(np.asarray(out), (x,), backward, "l2_norm")


def dot(u: Tensor, v: Tensor) -> Tensor:
    _same_dtype("dot", u, v)
    if u.shape != v.shape:
        raise ShapeError(f"dot: shapes {u.shape} and {v.shape} differ")
    out = np.asarray(np.vdot(u.data, v.data), dtype=u.dtype)

    def backward(grad):
        if u.requires_grad:
            u._accumulate(grad * v.data)
        if v.requires_grad:
            v._accumulate(grad * u.data)

    return Tensor.from_op(out, (u, v), backward, "dot")


def _pool_view(x: Tensor, k: int, op: str):
    if x.data.ndim != 4:
        raise ShapeError(f"{op}: need 4D input, got {x.shape}")
    n, c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"{op}: window {k} does not tile input {x.shape}")
    oh, ow = h // k, w // k
    windows = x.data.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5)
    return windows.reshape(n, c, oh, ow, k * k), (n, c, oh, ow, k)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping average pooling with a k x k window."""
    windows, (n, c, oh, ow, k_) = _pool_view(x, k, "avg_pool2d")
    out = windows.mean(axis=4)

    def backward(grad):
        g = np.repeat(np.repeat(grad, k_, axis=2), k_, axis=3) / np.asarray(k_ * k_, dtype=x.dtype)
        x._accumulate(g)

    return Tensor.from_op(out, (x,), backward, "avg_pool2d")


def max_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping max pooling; ties resolve to the first element."""
    windows, (n, c, oh, ow, k_) = _pool_view(x, k, "max_pool2d")
    arg = windows.argmax(axis=4)
    out = np.take_along_axis(windows, arg[..., None], axis=4)[..., 0]

    def backward(grad):
        gw = np.zeros((n, c, oh, ow, k_ * k_), dtype=x.dtype)
        np.put_along_axis(gw, arg[..., None], grad[..., None], axis=4)
        g = gw.reshape(n, c, oh, ow, k_, k_).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
        x._accumulate(np.ascontiguousarray(g))

    return Tensor.from_op(out, (x,), backward, "max_pool2d")


DEGENERATE_NORM_FLOOR = 1e-12


def cosine_similarity(u: Tensor, v: Tensor, counter=None) -> Tensor:
    """Cosine of the angle between vectors along the last axis.

    Rows where either norm falls below 1e-12 yield similarity 0.0 (and bump
    `counter`, any object with an `add(n)` method) instead of dividing by
    zero; those rows also get zero gradient.
    """
    _same_dtype("cosine_similarity", u, v)
    if u.shape != v.shape:
        raise ShapeError(f"cosine_similarity: shapes {u.shape} and {v.shape} differ")
    if u.data.ndim == 0:
        raise ShapeError("cosine_similarity: inputs must have at least one axis")
    nu = np.sqrt(np.sum(np.square(u.data), axis=-1, keepdims=True))
    nv = np.sqrt(np.sum(np.square(v.data), axis=-1, keepdims=True))
    degenerate = (nu < DEGENERATE_NORM_FLOOR) | (nv < DEGENERATE_NORM_FLOOR)
    if counter is not None and degenerate.any():
        counter.add(int(degenerate.sum()))
    nu_safe = np.where(degenerate, 1.0, nu).astype(u.dtype, copy=False)
    nv_safe = np.where(degenerate, 1.0, nv).astype(u.dtype, copy=False)
    raw = np.sum(u.data * v.data, axis=-1, keepdims=True) / (nu_safe * nv_safe)
    cos = np.where(degenerate, 0.0, raw).astype(u.dtype, copy=False)
    out = cos[..., 0]

    def backward(grad):
        g = np.asarray(grad)[..., None] * (~degenerate)
        if u.requires_grad:
            du = g * (v.data / (nu_safe * nv_safe) - cos * u.data / (nu_safe * nu_safe))
            u._accumulate(du.astype(u.dtype, copy=False))
        if v.requires_grad:
            dv = g * (u.data / (nu_safe * nv_safe) - cos * v.data / (nv_safe * nv_safe))
            v._accumulate(dv.astype(v.dtype, copy=False))

    return Tensor.from_op(out, (u, v), backward, "cosine_similarity")


def binary_cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean BCE over all entries, computed from logits without overflow.

    Uses log(1 + exp(-|x|)) plus a linear term, so any logit magnitude a
    float32 can hold is safe; targets are constants in [0, 1].
    """
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"bce: targets {t.shape} do not match logits {logits.shape}")
    if np.any((t < 0) | (t > 1)):
        raise ValueError("bce: targets must lie in [0, 1]")
    x = logits.data
    per = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(per.mean(), dtype=logits.dtype)

    def backward(grad):
        sig = np.empty_like(x)
        pos = x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        sig[~pos] = ex / (1.0 + ex)
        logits._accumulate(grad * (sig - t) / np.asarray(x.size, dtype=logits.dtype))

    return Tensor.from_op(out, (logits,), backward, "bce")
