"""Central-difference verification of every autodiff operation.

Each case builds small random inputs, reduces the op's output to a scalar
through a fixed weighting, and compares the recorded backward pass against
numeric differentiation of the same scalar.  The default float32 pass uses
eps 1e-3 with a 1e-2 relative ceiling; the float64 mode tightens both.

`corrupt_op` deliberately mis-scales one op's backward pass.  It exists so
the failure path (nonzero exit, report naming the bad op) can be exercised
end to end without shipping a broken operation.
"""

from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor
from .perception import contrast_loss

TOLERANCES = {"float32": (1e-3, 1e-2), "float64": (1e-5, 1e-4)}


def _rng(tag: str) -> np.random.Generator:
    return np.random.default_rng(abs(hash(tag)) % (2 ** 32))


def _weights(shape, tag: str, dtype) -> Tensor:
    return Tensor(_rng(tag + "/w").uniform(0.5, 1.5, shape).astype(dtype))


def _scalarize(out, tag: str):
    """Reduce an op output (tensor or list of tensors) to a scalar tensor."""
    parts = out if isinstance(out, (list, tuple)) else [out]
    total = None
    for i, part in enumerate(parts):
        w = _weights(part.shape, f"{tag}/{i}", part.dtype)
        term = ops.tsum(ops.mul(part, w))
        total = term if total is None else ops.add(total, term)
    return total


def _case(name):
    def deco(fn):
        _CASES.append((name, fn))
        return fn
    return deco


_CASES: list = []


def _uniform(tag, shape, dtype, lo=-1.0, hi=1.0):
    return Tensor(_rng(tag).uniform(lo, hi, shape).astype(dtype), requires_grad=True)


@_case("add")
def _build_add(dtype):
    a, b = _uniform("add/a", (3, 4), dtype), _uniform("add/b", (1, 4), dtype)
    return [a, b], lambda: ops.add(a, b)


@_case("sub")
def _build_sub(dtype):
    a, b = _uniform("sub/a", (3, 4), dtype), _uniform("sub/b", (3, 4), dtype)
    return [a, b], lambda: ops.sub(a, b)


@_case("mul")
def _build_mul(dtype):
    a, b = _uniform("mul/a", (3, 4), dtype), _uniform("mul/b", (3, 1), dtype)
    return [a, b], lambda: ops.mul(a, b)


@_case("relu")
def _build_relu(dtype):
    # keep every element away from the kink at zero
    base = _rng("relu").uniform(0.2, 1.0, (3, 5))
    signs = _rng("relu/s").choice([-1.0, 1.0], (3, 5))
    x = Tensor((base * signs).astype(dtype), requires_grad=True)
    return [x], lambda: ops.relu(x)


@_case("sigmoid")
def _build_sigmoid(dtype):
    x = _uniform("sigmoid", (3, 5), dtype, -2.0, 2.0)
    return [x], lambda: ops.sigmoid(x)


@_case("log")
def _build_log(dtype):
    x = _uniform("log", (3, 5), dtype, 0.5, 2.0)
    return [x], lambda: ops.log(x)


@_case("exp")
def _build_exp(dtype):
    x = _uniform("exp", (3, 5), dtype, -1.0, 1.0)
    return [x], lambda: ops.exp(x)


@_case("linear")
def _build_linear(dtype):
    x = _uniform("linear/x", (5, 3), dtype)
    w = _uniform("linear/w", (3, 4), dtype)
    b = _uniform("linear/b", (4,), dtype)
    return [x, w, b], lambda: ops.linear(x, w, b)


@_case("conv2d")
def _build_conv(dtype):
    x = _uniform("conv/x", (2, 3, 5, 5), dtype)
    w = _uniform("conv/w", (4, 3, 3, 3), dtype, -0.5, 0.5)
    b = _uniform("conv/b", (4,), dtype)
    return [x, w, b], lambda: ops.conv2d(x, w, b, stride=1, padding=1)


@_case("conv2d_strided")
def _build_conv_strided(dtype):
    x = _uniform("convs/x", (2, 3, 6, 6), dtype)
    w = _uniform("convs/w", (4, 3, 3, 3), dtype, -0.5, 0.5)
    b = _uniform("convs/b", (4,), dtype)
    return [x, w, b], lambda: ops.conv2d(x, w, b, stride=2, padding=1)


@_case("conv2d_pointwise")
def _build_conv_pointwise(dtype):
    x = _uniform("convp/x", (2, 3, 4, 4), dtype)
    w = _uniform("convp/w", (5, 3, 1, 1), dtype, -0.5, 0.5)
    b = _uniform("convp/b", (5,), dtype)
    return [x, w, b], lambda: ops.conv2d(x, w, b)


@_case("group_norm")
def _build_group_norm(dtype):
    x = _uniform("gn/x", (2, 8, 3, 3), dtype, -2.0, 2.0)
    gamma = _uniform("gn/g", (8,), dtype, 0.5, 1.5)
    beta = _uniform("gn/b", (8,), dtype)
    return [x, gamma, beta], lambda: ops.group_norm(x, gamma, beta, 4)


@_case("mean")
def _build_mean(dtype):
    x = _uniform("mean", (3, 4, 2), dtype)
    return [x], lambda: ops.mean(x, axis=(1, 2))


@_case("sum")
def _build_sum(dtype):
    x = _uniform("sum", (3, 4), dtype)
    return [x], lambda: ops.tsum(x, axis=0)


@_case("reshape")
def _build_reshape(dtype):
    x = _uniform("reshape", (3, 4), dtype)
    return [x], lambda: ops.reshape(x, (2, 6))


@_case("concat")
def _build_concat(dtype):
    parts = [_uniform(f"concat/{i}", (2, 3), dtype) for i in range(3)]
    return parts, lambda: ops.concat(parts, axis=1)


@_case("split")
def _build_split(dtype):
    x = _uniform("split", (6, 3), dtype)
    return [x], lambda: ops.split(x, [2, 3, 1], axis=0)


@_case("l2_norm")
def _build_l2_norm(dtype):
    x = _uniform("l2", (3, 4), dtype, 0.3, 1.0)
    return [x], lambda: ops.l2_norm(x, axis=-1)


@_case("dot")
def _build_dot(dtype):
    u = _uniform("dot/u", (6,), dtype)
    v = _uniform("dot/v", (6,), dtype)
    return [u, v], lambda: ops.dot(u, v)


@_case("avg_pool2d")
def _build_avg_pool(dtype):
    x = _uniform("avgp", (2, 3, 4, 4), dtype)
    return [x], lambda: ops.avg_pool2d(x, 2)


@_case("max_pool2d")
def _build_max_pool(dtype):
    # distinct values so the argmax never sits on a tie
    vals = _rng("maxp").permutation(2 * 3 * 4 * 4).astype(dtype)
    x = Tensor((vals / vals.size).reshape(2, 3, 4, 4), requires_grad=True)
    return [x], lambda: ops.max_pool2d(x, 2)


@_case("cosine_similarity")
def _build_cosine(dtype):
    u = _uniform("cos/u", (3, 5), dtype, 0.3, 1.0)
    v = _uniform("cos/v", (3, 5), dtype, -1.0, -0.3)
    return [u, v], lambda: ops.cosine_similarity(u, v)


@_case("bce_with_logits")
def _build_bce(dtype):
    logits = _uniform("bce", (4, 4), dtype, -2.0, 2.0)
    targets = np.zeros((4, 4), dtype=dtype)
    targets[np.arange(4), _rng("bce/t").integers(0, 4, 4)] = 1.0
    return [logits], lambda: ops.binary_cross_entropy_with_logits(logits, targets)


@_case("contrast_loss")
def _build_contrast(dtype):
    weak = _uniform("cl/w", (2, 4, 6), dtype, -1.0, 1.0)
    strong = _uniform("cl/s", (2, 4, 6), dtype, -1.0, 1.0)
    mask = np.zeros((2, 4), dtype=np.float32)
    mask[np.arange(2), _rng("cl/o").integers(0, 4, 2)] = 1.0
    return [weak, strong], lambda: contrast_loss(weak, strong, mask)


@contextmanager
def _corrupted(op_name: str | None):
    if op_name is None:
        yield
        return
    if not hasattr(ops, op_name):
        raise ValueError(f"cannot corrupt unknown op {op_name!r}")
    real = getattr(ops, op_name)

    def crooked(*args, **kwargs):
        out = real(*args, **kwargs)
        for t in (out if isinstance(out, (list, tuple)) else [out]):
            recorded = t._backward
            if recorded is not None:
                t._backward = (lambda bwd: lambda grad: bwd(grad * 1.05))(recorded)
        return out

    setattr(ops, op_name, crooked)
    try:
        yield
    finally:
        setattr(ops, op_name, real)


def _check_case(name, builder, dtype, eps: float):
    params, forward = builder(dtype)
    scalar = lambda: _scalarize(forward(), name)

    out = scalar()
    for p in params:
        p.grad = None
    out.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        if a is None:
            raise AssertionError(f"{name}: no gradient reached an input")
        numeric = np.empty_like(p.data, dtype=np.float64)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            kept = flat[i]
            flat[i] = kept + eps
            hi = float(scalar().data)
            flat[i] = kept - eps
            lo = float(scalar().data)
            flat[i] = kept
            num_flat[i] = (hi - lo) / (2.0 * eps)
        scale = max(float(np.abs(a).max()), float(np.abs(numeric).max()), 1.0)
        rel = float(np.abs(a.astype(np.float64) - numeric).max()) / scale
        worst = max(worst, rel)
    return worst


def run_gradcheck(dtype: str = "float32", corrupt_op: str | None = None) -> dict:
    """Check every op; returns a report dict with per-op relative errors."""
    if dtype not in TOLERANCES:
        raise ValueError(f"dtype must be float32 or float64, got {dtype!r}")
    eps, tolerance = TOLERANCES[dtype]
    np_dtype = np.float32 if dtype == "float32" else np.float64
    started = time.perf_counter()
    checks = []
    with _corrupted(corrupt_op):
        for name, builder in _CASES:
            rel = _check_case(name, builder, np_dtype, eps)
            checks.append({"op": name, "max_rel_error": rel,
                           "passed": bool(rel <= tolerance)})
    failed = [c["op"] for c in checks if not c["passed"]]
    report = {"dtype": dtype, "eps": eps, "tolerance": tolerance,
              "seconds": round(time.perf_counter() - started, 3),
              "checks": checks, "failed_ops": failed, "passed": not failed}
    if corrupt_op is not None:
        report["corrupt_op"] = corrupt_op
    return report
