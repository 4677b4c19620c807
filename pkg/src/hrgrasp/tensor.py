"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Every value is a 4-D array (N, C, H, W) of float32 stored row-major with N
outermost. The operator set is exactly what the grasp network needs: conv2d,
bilinear upsampling, batch norm, relu, add/sub/mul, channel concat/slice,
logistic/tanh squashing and scalar reductions. Ops are pure functions that
record their inputs, so a single call to :func:`backward` on a scalar loss
propagates gradients to every tensor that requires them.

float64 inputs are propagated through the same code paths; tests use that as
a high-precision shadow for finite-difference checks. Normal operation is
float32 end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when operands disagree with an operator's shape contract."""


class GraphError(RuntimeError):
    """Raised for malformed autodiff graphs (cycles, non-scalar loss)."""


class _OpCtx:
    """Record of how a tensor was produced: op tag, operands and a backward fn.

    ``backward(grad_out)`` returns one gradient array (or None) per entry of
    ``inputs + params``, in order.
    """

    __slots__ = ("tag", "inputs", "params", "backward")

    def __init__(
        self,
        tag: str,
        inputs: tuple["Tensor", ...],
        params: tuple["Tensor", ...],
        backward: Callable[[np.ndarray], tuple],
    ):
        self.tag = tag
        self.inputs = inputs
        self.params = params
        self.backward = backward


class Tensor:
    """A 4-D (N, C, H, W) float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_ctx")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (N, C, H, W), got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._ctx: _OpCtx | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = self._ctx.tag if self._ctx is not None else "leaf"
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={tag})"


def from_vector(values, requires_grad: bool = False, name: str | None = None) -> Tensor:
    """Wrap a per-channel float sequence as a (1, C, 1, 1) tensor."""
    arr = np.asarray(values, dtype=np.float32).reshape(1, -1, 1, 1)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def scalar(value: float, dtype=np.float32) -> Tensor:
    return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))


def _result(data: np.ndarray, tag: str, inputs: tuple, params: tuple, backward) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad for t in inputs + params):
        out.requires_grad = True
        out._ctx = _OpCtx(tag, inputs, params, backward)
    return out


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation (no kernel flip) with zero padding.

    weight is (Cout, Cin, k, k) with k in {1, 3}; bias, when given, is a
    (1, Cout, 1, 1) tensor added per output channel.
    """
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"square 1x1 or 3x3 kernels only, got {kh}x{kw}")
    if cin != cin_w:
        raise ShapeError(
            f"input channels {x.shape} do not match weight channels {weight.shape}"
        )
    if stride < 1 or padding < 0:
        raise ShapeError(f"bad stride/padding ({stride}, {padding})")
    hp = (h + 2 * padding - kh) // stride + 1
    wp = (w + 2 * padding - kw) // stride + 1
    if hp < 1 or wp < 1:
        raise ShapeError(
            f"non-positive output size {hp}x{wp} for input {h}x{w}, "
            f"kernel {kh}, stride {stride}, padding {padding}"
        )
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ShapeError(f"bias must be (1, {cout}, 1, 1), got {bias.shape}")

    dt = x.data.dtype
    h2, w2d = h + 2 * padding, w + 2 * padding
    if padding:
        xp = np.zeros((n, cin, h2, w2d), dtype=dt)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    # one contiguous (cin, cout) weight matrix per kernel tap keeps every GEMM
    # on the BLAS fast path
    taps = kh * kw
    w_t = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0)).reshape(taps, cin, cout)
    w_t = w_t.astype(dt, copy=False)
    need_gx = x.requires_grad or x._ctx is not None

    if stride == 1:
        out, _backward = _conv_s1(x, xp, w_t, bias, n, cin, cout, kh, kw,
                                  h, w, padding, hp, wp, need_gx, dt)
    else:
        out, _backward = _conv_strided(x, xp, w_t, bias, n, cin, cout, kh, kw,
                                       h, w, stride, padding, hp, wp, need_gx, dt)
    if bias is not None:
        out += bias.data.astype(dt, copy=False)

    params = (weight,) if bias is None else (weight, bias)
    return _result(out, "conv2d", (x,), params, _backward)


def _conv_s1(x, xp, w_t, bias, n, cin, cout, kh, kw, h, w, padding, hp, wp,
             need_gx, dt):
    """Stride-1 convolution via full-plane GEMMs and shifted accumulation.

    Each tap contracts the whole padded plane in one zero-copy GEMM; summing
    the per-tap planes at the right flat offset yields every output pixel,
    with only the few wrapped-around columns per row being discarded junk.
    """
    taps = kh * kw
    h2, w2d = h + 2 * padding, w + 2 * padding
    plane = h2 * w2d
    lw = hp * w2d  # linearized output rows, wp valid columns out of w2d

    out_lin = np.zeros((n, lw, cout), dtype=dt)
    for i in range(n):
        xi = xp[i].reshape(cin, plane)
        for tap in range(taps):
            dy, dx = divmod(tap, kw)
            off = dy * w2d + dx
            # offsets can overrun the plane by up to kw-1 entries; everything
            # truncated lies in the discarded junk columns of the last row
            m = min(lw, plane - off)
            full = np.dot(xi.T, w_t[tap])  # (plane, cout)
            out_lin[i][:m] += full[off : off + m]
    out = out_lin.reshape(n, hp, w2d, cout)[:, :, :wp, :]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def _backward(g: np.ndarray):
        g_lin = np.zeros((n, lw, cout), dtype=dt)
        g_lin.reshape(n, hp, w2d, cout)[:, :, :wp, :] = g.transpose(0, 2, 3, 1)
        gw_t = np.zeros((taps, cin, cout), dtype=dt)
        gx_full = np.zeros((n, plane, cin), dtype=dt) if need_gx else None
        g_sc = np.zeros((plane, cout), dtype=dt)
        for i in range(n):
            xi = xp[i].reshape(cin, plane)
            for tap in range(taps):
                dy, dx = divmod(tap, kw)
                off = dy * w2d + dx
                m = min(lw, plane - off)  # truncated rows carry zero gradient
                g_sc[:] = 0
                g_sc[off : off + m] = g_lin[i][:m]
                gw_t[tap] += np.dot(xi, g_sc)
                if need_gx:
                    gx_full[i][off : off + m] += np.dot(g_lin[i][:m], w_t[tap].T)
        gx = None
        if need_gx:
            gx4 = gx_full.reshape(n, h2, w2d, cin)
            gx4 = gx4[:, padding : padding + h, padding : padding + w, :]
            gx = np.ascontiguousarray(gx4.transpose(0, 3, 1, 2))
        gw = np.ascontiguousarray(
            gw_t.reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
        )
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)

    return out, _backward


def _conv_strided(x, xp, w_t, bias, n, cin, cout, kh, kw, h, w, stride, padding,
                  hp, wp, need_gx, dt):
    """General strided convolution via contiguous per-tap gathers."""
    taps = kh * kw
    lo = hp * wp
    out_lin = np.zeros((n, lo, cout), dtype=dt)
    for tap in range(taps):
        dy, dx = divmod(tap, kw)
        xv = xp[:, :, dy : dy + stride * hp : stride, dx : dx + stride * wp : stride]
        xv = np.ascontiguousarray(xv).reshape(n, cin, lo)
        for i in range(n):
            out_lin[i] += np.dot(xv[i].T, w_t[tap])
    out = np.ascontiguousarray(out_lin.reshape(n, hp, wp, cout).transpose(0, 3, 1, 2))

    def _backward(g: np.ndarray):
        g_hwc = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n, lo, cout)
        gw_t = np.zeros((taps, cin, cout), dtype=dt)
        gx_p = np.zeros_like(xp) if need_gx else None
        for tap in range(taps):
            dy, dx = divmod(tap, kw)
            xv = xp[:, :, dy : dy + stride * hp : stride, dx : dx + stride * wp : stride]
            xv = np.ascontiguousarray(xv).reshape(n, cin, lo)
            for i in range(n):
                gw_t[tap] += np.dot(xv[i], g_hwc[i])
                if need_gx:
                    gxv = np.dot(g_hwc[i], w_t[tap].T)  # (lo, cin)
                    view = gx_p[i, :, dy : dy + stride * hp : stride,
                                dx : dx + stride * wp : stride]
                    view += gxv.T.reshape(cin, hp, wp)
        gx = None
        if need_gx:
            if padding:
                gx = np.ascontiguousarray(
                    gx_p[:, :, padding : padding + h, padding : padding + w]
                )
            else:
                gx = gx_p
        gw = np.ascontiguousarray(
            gw_t.reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
        )
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1)

    return out, _backward


# ---------------------------------------------------------------------------
# Bilinear upsampling (align-corners)
# ---------------------------------------------------------------------------


def interp_matrix(src: int, dst: int, dtype=np.float32) -> sp.csr_matrix:
    """Align-corners linear interpolation matrix mapping src samples to dst."""
    rows = np.repeat(np.arange(dst), 2)
    if src == 1 or dst == 1:
        lo = np.zeros(dst, dtype=np.int64)
        t = np.zeros(dst)
    else:
        pos = np.arange(dst) * (src - 1) / (dst - 1)
        lo = np.minimum(pos.astype(np.int64), src - 2)
        t = pos - lo
    cols = np.stack([lo, np.minimum(lo + 1, src - 1)], axis=1).reshape(-1)
    vals = np.stack([1.0 - t, t], axis=1).reshape(-1).astype(dtype)
    return sp.csr_matrix((vals, (rows, cols)), shape=(dst, src))


_INTERP_CACHE: dict = {}


def _interp_pair(src: int, dst: int, dtype) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    key = (src, dst, np.dtype(dtype).name)
    if key not in _INTERP_CACHE:
        m = interp_matrix(src, dst, dtype)
        _INTERP_CACHE[key] = (m, sp.csr_matrix(m.T))
    return _INTERP_CACHE[key]


def resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Plain-array align-corners bilinear resize of the trailing two axes."""
    h, w = img.shape[-2:]
    oh, ow = out_hw
    rh, _ = _interp_pair(h, oh, img.dtype if img.dtype == np.float64 else np.float32)
    rw, _ = _interp_pair(w, ow, img.dtype if img.dtype == np.float64 else np.float32)
    flat = img.reshape(-1, h, w)
    out = np.empty(flat.shape[:1] + (oh, ow), dtype=flat.dtype)
    for i in range(flat.shape[0]):
        out[i] = (rw @ (rh @ flat[i]).T).T
    return out.reshape(img.shape[:-2] + (oh, ow))


def bilinear_upsample(x: Tensor, scale: int) -> Tensor:
    """Upsample H and W by an integer factor with align-corners bilinear sampling."""
    if scale < 1:
        raise ShapeError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        # identity is exact, including bit-level
        def _backward_id(g):
            return (g,)

        return _result(x.data, "bilinear_upsample", (x,), (), _backward_id)

    n, c, h, w = x.shape
    sh, sw = h * scale, w * scale
    dt = x.data.dtype
    rh, rh_t = _interp_pair(h, sh, dt)
    rw, rw_t = _interp_pair(w, sw, dt)

    x2 = x.data.reshape(n * c, h, w)
    out = np.empty((n * c, sh, sw), dtype=dt)
    for i in range(n * c):
        out[i] = (rw @ (rh @ x2[i]).T).T

    def _backward(g: np.ndarray):
        g2 = g.reshape(n * c, sh, sw)
        gx = np.empty((n * c, h, w), dtype=dt)
        for i in range(n * c):
            gx[i] = rh_t @ (rw_t @ g2[i].T).T
        return (gx.reshape(n, c, h, w),)

    return _result(out.reshape(n, c, sh, sw), "bilinear_upsample", (x,), (), _backward)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


class BNState:
    """Per-channel running statistics updated by train-mode batch norm."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=np.float32)
        self.var = np.ones(channels, dtype=np.float32)

    def copy(self) -> "BNState":
        st = BNState(len(self.mean))
        st.mean = self.mean.copy()
        st.var = self.var.copy()
        return st


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BNState | None,
    momentum: float = 0.1,
    eps: float = 1e-5,
    training: bool = True,
) -> Tensor:
    """Per-channel normalization; batch stats in train mode, running stats in eval.

    Train mode updates ``state`` in place: new = (1 - momentum) * old +
    momentum * batch. Variance is the biased (1/m) estimate throughout.
    """
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ShapeError(f"gamma/beta must be (1, {c}, 1, 1)")
    if eps <= 0:
        raise ShapeError("epsilon must be positive")
    dt = x.data.dtype
    m = n * h * w

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if state is not None:
            state.mean = ((1.0 - momentum) * state.mean + momentum * mean).astype(np.float32)
            state.var = ((1.0 - momentum) * state.var + momentum * var).astype(np.float32)
    else:
        if state is None:
            raise ValueError("eval-mode batchnorm2d requires running statistics")
        mean = state.mean.astype(dt)
        var = state.var.astype(dt)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data * xhat + beta.data

    def _backward(g: np.ndarray):
        gbeta = g.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        ggamma = (g * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        gxhat = g * gamma.data
        if training:
            # gradient through the batch statistics
            sum_gxhat = gxhat.sum(axis=(0, 2, 3), keepdims=True)
            sum_gxhat_xhat = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = (inv_std.reshape(1, c, 1, 1) / m) * (
                m * gxhat - sum_gxhat - xhat * sum_gxhat_xhat
            )
        else:
            gx = gxhat * inv_std.reshape(1, c, 1, 1)
        return gx.astype(dt, copy=False), ggamma, gbeta

    return _result(out.astype(dt, copy=False), "batchnorm2d", (x,), (gamma, beta), _backward)


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0)

    def _backward(g):
        return (g * mask,)

    return _result(out.astype(x.data.dtype, copy=False), "relu", (x,), (), _backward)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} requires identical shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def _backward(g):
        return g, g

    return _result(a.data + b.data, "add", (a, b), (), _backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def _backward(g):
        return g, -g

    return _result(a.data - b.data, "sub", (a, b), (), _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def _backward(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, "mul", (a, b), (), _backward)


def scale(x: Tensor, c: float) -> Tensor:
    def _backward(g):
        return (g * c,)

    return _result(x.data * c, "scale", (x,), (), _backward)


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable logistic
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)

    def _backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, "sigmoid", (x,), (), _backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def _backward(g):
        return (g * (1.0 - out * out),)

    return _result(out, "tanh", (x,), (), _backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; N, H, W must agree."""
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = xs[0].shape
    for t in xs:
        if t.shape[0] != n or t.shape[2:] != (h, w):
            raise ShapeError(
                f"concat_channels needs matching N, H, W; got {[t.shape for t in xs]}"
            )
    sizes = [t.shape[1] for t in xs]
    out = np.concatenate([t.data for t in xs], axis=1)
    offsets = np.cumsum([0] + sizes)

    def _backward(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(xs)))

    return _result(out, "concat_channels", tuple(xs), (), _backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    n, c, h, w = x.shape
    if not (0 <= start < stop <= c):
        raise ShapeError(f"bad channel slice [{start}:{stop}] for {c} channels")

    def _backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _result(x.data[:, start:stop].copy(), "slice_channels", (x,), (), _backward)


def _stack_filters(ws: Sequence[Tensor]) -> Tensor:
    """Stack conv filters along the output-channel axis (internal, differentiable)."""
    sizes = [t.shape[0] for t in ws]
    out = np.concatenate([t.data for t in ws], axis=0)
    offsets = np.cumsum([0] + sizes)

    def _backward(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(ws)))

    return _result(out, "stack_filters", tuple(ws), (), _backward)


def mean_all(x: Tensor) -> Tensor:
    out = np.full((1, 1, 1, 1), x.data.mean(), dtype=x.data.dtype)
    inv = 1.0 / x.data.size

    def _backward(g):
        return (np.full_like(x.data, g.reshape(-1)[0] * inv),)

    return _result(out, "mean_all", (x,), (), _backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.full((1, 1, 1, 1), x.data.sum(), dtype=x.data.dtype)

    def _backward(g):
        return (np.full_like(x.data, g.reshape(-1)[0]),)

    return _result(out, "sum_all", (x,), (), _backward)


# ---------------------------------------------------------------------------
# Graph tracing and reverse-mode accumulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphNode:
    index: int
    tag: str
    input_ids: tuple[int, ...]
    param_ids: tuple[int, ...]
    tensor: Tensor


class OpGraph:
    """Topologically ordered view of the op records reachable from one output."""

    def __init__(self, nodes: list[GraphNode], loss_index: int):
        self.nodes = nodes
        self.loss_index = loss_index

    @classmethod
    def trace(cls, output: Tensor) -> "OpGraph":
        order: list[Tensor] = []
        index: dict[int, int] = {}
        state: dict[int, int] = {}  # 1 = on stack, 2 = done
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, processed = stack.pop()
            tid = id(t)
            if processed:
                state[tid] = 2
                index[tid] = len(order)
                order.append(t)
                continue
            if state.get(tid) == 2:
                continue
            if state.get(tid) == 1:
                raise GraphError("cycle detected in op graph")
            state[tid] = 1
            stack.append((t, True))
            if t._ctx is not None:
                for parent in t._ctx.inputs + t._ctx.params:
                    if state.get(id(parent)) == 1:
                        raise GraphError("cycle detected in op graph")
                    if state.get(id(parent)) != 2:
                        stack.append((parent, False))
        nodes = []
        for i, t in enumerate(order):
            if t._ctx is None:
                nodes.append(GraphNode(i, "leaf", (), (), t))
            else:
                nodes.append(
                    GraphNode(
                        i,
                        t._ctx.tag,
                        tuple(index[id(p)] for p in t._ctx.inputs),
                        tuple(index[id(p)] for p in t._ctx.params),
                        t,
                    )
                )
        return cls(nodes, len(nodes) - 1)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, Tensor]:
    """Reverse-mode gradient accumulation from a scalar loss.

    Accumulates (sums) into ``.grad`` of every reachable tensor with
    requires_grad set. When ``params`` is given, returns a map from each of
    those tensors to its gradient; parameters the loss never touched map to
    zero tensors.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = OpGraph.trace(loss)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        t = node.tensor
        g = grads.pop(id(t), None)
        if g is None or not t.requires_grad:
            continue
        # ops never mutate gradient arrays, so aliasing here is safe
        t.grad = g if t.grad is None else t.grad + g
        ctx = t._ctx
        if ctx is None:
            continue
        parent_grads = ctx.backward(g)
        parents = ctx.inputs + ctx.params
        if len(parent_grads) != len(parents):
            raise GraphError(f"op {ctx.tag} returned {len(parent_grads)} gradients "
                             f"for {len(parents)} operands")
        for parent, pg in zip(parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg

    result: dict[Tensor, Tensor] = {}
    if params is not None:
        for p in params:
            if p.grad is not None:
                result[p] = Tensor(p.grad)
            else:
                result[p] = Tensor(np.zeros_like(p.data))
    return result
