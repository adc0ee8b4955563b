"""Minimal dense-tensor reverse-mode autodiff engine.

numpy-backed, CPU only, supporting exactly the closed set of operations the
two 1D-convolutional denoisers need: conv1d (optionally strided), linear
up/down-sampling, affine layers, SiLU, per-frame group normalization,
channel concatenation, elementwise arithmetic and reductions.

Tensors default to float32; gradient-check suites should build leaves with
``dtype=np.float64`` for finite-difference headroom.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class AutogradError(Exception):
    """Raised on malformed graphs (non-scalar backward roots, shape errors)."""


class Tensor:
    """A dense row-major array node in an implicit computation graph.

    Leaves are created directly; interior nodes are produced by the ops in
    this module, each of which registers its adjoint. ``backward()`` on a
    scalar node accumulates ``.grad`` (a plain ndarray) on every node with
    ``requires_grad=True``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _op: str = "leaf"):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._parents = _parents
        self._op = _op

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, grad={self.requires_grad})"

    # -- graph ----------------------------------------------------------

    def topo_order(self) -> list["Tensor"]:
        """Topologically sorted node list ending at self (inputs precede uses)."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise AutogradError(f"backward root must be scalar, got shape {self.shape}")
        order = self.topo_order()
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, n):
        return power(self, n)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _accumulate(node: Tensor, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.astype(node.data.dtype, copy=True)
    else:
        node.grad += g


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=tuple(parents), _op=op)
    return out


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, (a, b), "add")

    def _bw():
        _accumulate(a, _sum_to_shape(out.grad, a.shape))
        _accumulate(b, _sum_to_shape(out.grad, b.shape))

    out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b), "mul")

    def _bw():
        _accumulate(a, _sum_to_shape(out.grad * b.data, a.shape))
        _accumulate(b, _sum_to_shape(out.grad * a.data, b.shape))

    out._backward = _bw
    return out


def power(a, n: float) -> Tensor:
    a = as_tensor(a)
    n = float(n)
    out = _make(a.data ** n, (a,), f"pow{n}")

    def _bw():
        _accumulate(a, out.grad * n * a.data ** (n - 1.0))

    out._backward = _bw
    return out


def silu(a) -> Tensor:
    """x * sigmoid(x), the smooth activation used throughout the denoisers."""
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(a.data * sig, (a,), "silu")

    def _bw():
        _accumulate(a, out.grad * (sig * (1.0 + a.data * (1.0 - sig))))

    out._backward = _bw
    return out


# -- reductions --------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def _bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    out._backward = _bw
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), "mean")
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def _bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape) / count)

    out._backward = _bw
    return out


# -- shape plumbing -----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data.reshape(shape), (a,), "reshape")

    def _bw():
        _accumulate(a, out.grad.reshape(a.shape))

    out._backward = _bw
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in ts], axis=axis), ts, "concat")
    sizes = [t.shape[axis] for t in ts]

    def _bw():
        offset = 0
        for t, sz in zip(ts, sizes):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(offset, offset + sz)
            _accumulate(t, out.grad[tuple(idx)])
            offset += sz

    out._backward = _bw
    return out


def narrow(a, start: int, length: int, axis: int = -1) -> Tensor:
    """Slice ``length`` elements from ``start`` along ``axis``."""
    a = as_tensor(a)
    axis = axis % a.data.ndim
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    out = _make(a.data[tuple(idx)].copy(), (a,), "narrow")

    def _bw():
        g = np.zeros_like(a.data)
        g[tuple(idx)] = out.grad
        _accumulate(a, g)

    out._backward = _bw
    return out


def broadcast_frames(v, batch: int, length: int) -> Tensor:
    """Expand a (C,) vector to a (batch, C, length) constant-over-frames map."""
    v = as_tensor(v)
    if v.data.ndim != 1:
        raise AutogradError(f"broadcast_frames expects a vector, got {v.shape}")
    out = _make(np.broadcast_to(v.data[None, :, None], (batch, v.shape[0], length)).copy(),
                (v,), "broadcast_frames")

    def _bw():
        _accumulate(v, out.grad.sum(axis=(0, 2)))

    out._backward = _bw
    return out


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutogradError("matmul supports 2-D operands only")
    out = _make(a.data @ b.data, (a, b), "matmul")

    def _bw():
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    out._backward = _bw
    return out


# -- convolution and resampling ----------------------------------------------


def _as_bcn(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Promote (C, N) to (1, C, N); report whether a batch axis was added."""
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise AutogradError(f"expected (C, N) or (B, C, N), got {x.shape}")


def conv1d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Direct 1-D cross-correlation.

    x: (B, C_in, N) or (C_in, N); w: (C_out, C_in, K); optional bias (C_out,).
    Output length is floor((N + 2*pad - K) / stride) + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    xd, squeezed = _as_bcn(x.data)
    cout, cin, k = w.shape
    if xd.shape[1] != cin:
        raise AutogradError(
            f"conv1d channel mismatch: input has {xd.shape[1]}, kernel expects {cin}")
    bsz, _, n = xd.shape
    nout = (n + 2 * pad - k) // stride + 1
    if nout < 1:
        raise AutogradError(f"conv1d output would be empty (N={n}, K={k}, pad={pad})")

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad))) if pad else xd
    # (B, C_in, N', K) windows -> (B, C_in*K, N') columns
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(bsz, cin * k, nout)
    wm = w.data.reshape(cout, cin * k)
    od = np.matmul(wm, cols)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        od = od + b.data[:, None]
        parents.append(b)
    if squeezed:
        od = od[0]
    out = _make(od, parents, "conv1d")

    def _bw():
        g = out.grad if not squeezed else out.grad[None]
        if w.requires_grad:
            gw = np.einsum("bon,bin->oi", g, cols).reshape(cout, cin, k)
            _accumulate(w, gw)
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(wm.T, g).reshape(bsz, cin, k, nout)
            gxp = np.zeros_like(xp)
            for kk in range(k):
                gxp[:, :, kk:kk + stride * nout:stride] += gcols[:, :, kk, :]
            gx = gxp[:, :, pad:pad + n] if pad else gxp
            _accumulate(x, gx[0] if squeezed else gx)

    out._backward = _bw
    return out


def avg_pool2(x) -> Tensor:
    """Halve the frame axis by averaging adjacent pairs; odd tails pass through.

    Output length is ceil(N/2), matching the stride-2 convolutions so that
    condition maps stay frame-aligned with the feature maps at every level.
    """
    x = as_tensor(x)
    xd, squeezed = _as_bcn(x.data)
    n = xd.shape[2]
    nout = (n + 1) // 2
    even = n // 2
    od = np.empty(xd.shape[:2] + (nout,), dtype=xd.dtype)
    od[..., :even] = 0.5 * (xd[..., 0:2 * even:2] + xd[..., 1:2 * even:2])
    if n % 2:
        od[..., -1] = xd[..., -1]
    out = _make(od[0] if squeezed else od, (x,), "avg_pool2")

    def _bw():
        g = out.grad if not squeezed else out.grad[None]
        gx = np.zeros_like(xd)
        gx[..., 0:2 * even:2] = 0.5 * g[..., :even]
        gx[..., 1:2 * even:2] = 0.5 * g[..., :even]
        if n % 2:
            gx[..., -1] += g[..., -1]
        _accumulate(x, gx[0] if squeezed else gx)

    out._backward = _bw
    return out


def upsample_linear2(x, out_len: int) -> Tensor:
    """Double the frame axis with midpoint interpolation, cropped to out_len.

    up[2i] = in[i]; up[2i+1] = (in[i] + in[i+1]) / 2. Position-independent, so
    interior values are shift-covariant for even shifts of the coarse signal.
    """
    x = as_tensor(x)
    xd, squeezed = _as_bcn(x.data)
    n = xd.shape[2]
    if not n <= out_len <= 2 * n:
        raise AutogradError(f"upsample_linear2: out_len {out_len} not in [{n}, {2 * n}]")
    full = np.empty(xd.shape[:2] + (2 * n,), dtype=xd.dtype)
    full[..., 0::2] = xd
    full[..., 1:-1:2] = 0.5 * (xd[..., :-1] + xd[..., 1:])
    full[..., -1] = xd[..., -1]
    od = full[..., :out_len].copy()
    out = _make(od[0] if squeezed else od, (x,), "upsample_linear2")

    def _bw():
        g = out.grad if not squeezed else out.grad[None]
        gfull = np.zeros(xd.shape[:2] + (2 * n,), dtype=xd.dtype)
        gfull[..., :out_len] = g
        gx = gfull[..., 0::2].copy()
        mid = gfull[..., 1:-1:2]
        gx[..., :-1] += 0.5 * mid
        gx[..., 1:] += 0.5 * mid
        gx[..., -1] += gfull[..., -1]
        _accumulate(x, gx[0] if squeezed else gx)

    out._backward = _bw
    return out


def resample_linear(x, out_len: int) -> Tensor:
    """Endpoint-aligned linear-interpolation resampling along the frame axis.

    Frame j of the output samples source position j*(N-1)/(out_len-1); a
    2-frame input resampled to 3 frames therefore yields the midpoint in the
    middle. Used for fps conversion of audio feature tracks.
    """
    x = as_tensor(x)
    xd, squeezed = _as_bcn(x.data)
    n = xd.shape[2]
    if n < 1 or out_len < 1:
        raise AutogradError("resample_linear requires non-empty input and output")
    if out_len == 1 or n == 1:
        pos = np.zeros(out_len)
    else:
        pos = np.arange(out_len) * (n - 1) / (out_len - 1)
    lo = np.minimum(pos.astype(np.int64), n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = (pos - lo).astype(xd.dtype)
    od = xd[..., lo] * (1.0 - frac) + xd[..., hi] * frac
    out = _make(od[0] if squeezed else od, (x,), "resample_linear")

    def _bw():
        g = out.grad if not squeezed else out.grad[None]
        gx = np.zeros_like(xd)
        np.add.at(gx, (slice(None), slice(None), lo), g * (1.0 - frac))
        np.add.at(gx, (slice(None), slice(None), hi), g * frac)
        _accumulate(x, gx[0] if squeezed else gx)

    out._backward = _bw
    return out


# -- normalization -------------------------------------------------------------


def group_norm(x, gamma, beta, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization over channels only (per frame, no temporal stats).

    Keeping the statistics per frame preserves exact temporal
    shift-equivariance of the fully convolutional stacks.
    """
    x = as_tensor(x)
    b, c, n = x.shape
    if c % groups:
        raise AutogradError(f"channels {c} not divisible by groups {groups}")
    xg = reshape(x, (b, groups, c // groups, n))
    mu = tmean(xg, axis=2, keepdims=True)
    centered = xg - mu
    var = tmean(power(centered, 2.0), axis=2, keepdims=True)
    xn = centered * power(var + eps, -0.5)
    xn = reshape(xn, (b, c, n))
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    return xn * reshape(gamma, (1, c, 1)) + reshape(beta, (1, c, 1))


# -- gradient entry point -------------------------------------------------------


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar output w.r.t. the given leaves.

    Raises AutogradError if output is non-scalar or a leaf is unreachable
    with requires_grad set.
    """
    for t in wrt:
        if not t.requires_grad:
            raise AutogradError("grad target does not require gradients")
    output.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in wrt]
