"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and an adjoint closure on
the result tensor; ``Tensor.backward`` replays those closures in reverse
topological order. Arrays are plain numpy, float32 by default; verification
runs use float64 (``dtype="float64"`` at the leaves propagates through).
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

# When enabled, every op asserts its result is finite. Off by default: the
# check costs a full pass over the data.
_DEBUG_FINITE = False


def set_debug_finite(enabled: bool) -> None:
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


class GraphError(ValueError):
    """Raised for backward() misuse: non-scalar loss or detached graph."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _DEBUG_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data
    return np.asarray(data, dtype=DEFAULT_DTYPE)


class Tensor:
    """N-dimensional real array plus the recorded operation that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self._op})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction ------------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, parents, backward_fn, op: str = "op") -> "Tensor":
        """Wrap an op result, recording parents and the adjoint closure.

        ``backward_fn(grad)`` must accumulate into each requiring parent via
        ``accumulate_grad``. The closure is dropped when no parent needs it.
        """
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward_fn if out.requires_grad else None
        out._op = op
        return out

    def backward(self) -> None:
        if self.data.size != 1:
            raise GraphError("backward() expects a scalar loss tensor")
        if not self.requires_grad:
            raise GraphError("loss is detached: no leaf in its graph requires gradients")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ----------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a.dtype)
    out_data = a.data + b.data

    def backward(g):
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(g, b.data.shape))

    return Tensor.from_op(out_data, (a, b), backward, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _lift(b, a.dtype)
    out_data = a.data - b.data

    def backward(g):
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(-g, b.data.shape))

    return Tensor.from_op(out_data, (a, b), backward, "sub")


def mul(a: Tensor, b) -> Tensor:
    b = _lift(b, a.dtype)
    out_data = a.data * b.data

    def backward(g):
        accumulate_grad(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate_grad(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor.from_op(out_data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out_data = a.data * s

    def backward(g):
        accumulate_grad(a, g * s)

    return Tensor.from_op(out_data, (a,), backward, "scale")


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward(g):
        accumulate_grad(a, g * (a.data > 0))

    return Tensor.from_op(out_data, (a,), backward, "relu")


# -- shape manipulation ----------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def backward(g):
        accumulate_grad(a, g.reshape(a.data.shape))

    return Tensor.from_op(out_data, (a,), backward, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        accumulate_grad(a, g.transpose(inverse))

    return Tensor.from_op(out_data, (a,), backward, "transpose")


def flip_spatial(a: Tensor) -> Tensor:
    """Reverse the last two axes."""
    out_data = a.data[..., ::-1, ::-1].copy()

    def backward(g):
        accumulate_grad(a, g[..., ::-1, ::-1])

    return Tensor.from_op(out_data, (a,), backward, "flip_spatial")


def rot90_spatial(a: Tensor, quarter_turns: int) -> Tensor:
    """Exact counter-clockwise quarter turns of the last two axes."""
    q = int(quarter_turns) % 4
    if a.data.shape[-1] != a.data.shape[-2]:
        raise ValueError("rot90_spatial needs square spatial extent, got "
                         f"{a.data.shape[-2]}x{a.data.shape[-1]}")
    out_data = np.ascontiguousarray(np.rot90(a.data, q, axes=(-2, -1)))

    def backward(g):
        accumulate_grad(a, np.rot90(g, -q, axes=(-2, -1)))

    return Tensor.from_op(out_data, (a,), backward, "rot90")


def roll_axis(a: Tensor, shift: int, axis: int) -> Tensor:
    """Cyclic shift along one axis; slice s of the result is input slice s - shift."""
    out_data = np.roll(a.data, shift, axis=axis)

    def backward(g):
        accumulate_grad(a, np.roll(g, -shift, axis=axis))

    return Tensor.from_op(out_data, (a,), backward, "roll")


def take_slot(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Index one slot along ``axis`` (gradient scatters back into that slot)."""
    index = int(index)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = index
    sl = tuple(sl)
    out_data = np.ascontiguousarray(a.data[sl])

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[sl] += g

    return Tensor.from_op(out_data, (a,), backward, "take_slot")


def crop2d(a: Tensor, margin_h: int, margin_w: int) -> Tensor:
    """Cut ``margin`` rows/cols from every side of the last two axes."""
    h, w = a.data.shape[-2:]
    if h - 2 * margin_h < 1 or w - 2 * margin_w < 1:
        raise ValueError(f"crop margins ({margin_h},{margin_w}) leave no pixels of {h}x{w}")
    sl = (Ellipsis, slice(margin_h, h - margin_h), slice(margin_w, w - margin_w))
    out_data = a.data[sl].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        accumulate_grad(a, full)

    return Tensor.from_op(out_data, (a,), backward, "crop2d")


# -- contractions ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a[..., n] @ b[n, m]; b must be 2-D."""
    if b.data.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    out_data = a.data @ b.data

    def backward(g):
        accumulate_grad(a, g @ b.data.T)
        if b.requires_grad:
            ga = a.data.reshape(-1, a.data.shape[-1])
            accumulate_grad(b, ga.T @ g.reshape(-1, g.shape[-1]))

    return Tensor.from_op(out_data, (a, b), backward, "matmul")


# -- reductions and losses ---------------------------------------------------


def l1_norm(a: Tensor) -> Tensor:
    """Sum of absolute values, as a scalar tensor."""
    out_data = np.asarray(np.abs(a.data).sum(), dtype=a.data.dtype).reshape(())

    def backward(g):
        accumulate_grad(a, g * np.sign(a.data))

    return Tensor.from_op(out_data, (a,), backward, "l1_norm")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits[B, K]) against integer labels."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ValueError("softmax_cross_entropy expects logits of shape [batch, classes]")
    batch, classes = logits.data.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(batch), labels]
    out_data = np.asarray((lse - picked).mean(), dtype=logits.data.dtype).reshape(())

    def backward(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(batch), labels] -= 1.0
        accumulate_grad(logits, g * p / batch)

    return Tensor.from_op(out_data, (logits,), backward, "softmax_cross_entropy")


# -- convolution -------------------------------------------------------------


def _pad_same(x: np.ndarray, k: int) -> np.ndarray:
    p = k // 2
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _correlate_forward(x: np.ndarray, w: np.ndarray, padding: str, stride: int) -> np.ndarray:
    b, c, h, wid = x.shape
    o, _, k, _ = w.shape
    xp = _pad_same(x, k) if padding == "same" else x
    hp, wp = xp.shape[2:]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    out = np.zeros((b, ho, wo, o), dtype=x.dtype)
    for u in range(k):
        for v in range(k):
            xs = xp[:, :, u:u + (ho - 1) * stride + 1:stride, v:v + (wo - 1) * stride + 1:stride]
            out += np.tensordot(xs, w[:, :, u, v], axes=([1], [1]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _check_conv_args(x: Tensor, kernel: Tensor, padding: str, stride: int):
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("correlate2d expects input [B,C,H,W] and kernel [O,C,k,k]")
    k = kernel.data.shape[2]
    if k != kernel.data.shape[3] or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {kernel.data.shape[2:]}")
    if x.data.shape[1] != kernel.data.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.data.shape[1]}, "
                         f"kernel expects {kernel.data.shape[1]}")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    if stride < 1:
        raise ValueError("stride must be >= 1")


def correlate2d(x: Tensor, kernel: Tensor, padding: str = "same", stride: int = 1) -> Tensor:
    """Sliding inner products of x[B,C,H,W] with kernel[O,C,k,k] (zero padded)."""
    _check_conv_args(x, kernel, padding, stride)
    k = kernel.data.shape[2]
    out_data = _correlate_forward(x.data, kernel.data, padding, stride)

    def backward(g):
        xp = _pad_same(x.data, k) if padding == "same" else x.data
        ho, wo = g.shape[2:]
        if kernel.requires_grad:
            gw = np.zeros_like(kernel.data)
            for u in range(k):
                for v in range(k):
                    xs = xp[:, :, u:u + (ho - 1) * stride + 1:stride,
                            v:v + (wo - 1) * stride + 1:stride]
                    gw[:, :, u, v] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
            accumulate_grad(kernel, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for u in range(k):
                for v in range(k):
                    piece = np.tensordot(g, kernel.data[:, :, u, v], axes=([1], [0]))
                    gxp[:, :, u:u + (ho - 1) * stride + 1:stride,
                        v:v + (wo - 1) * stride + 1:stride] += piece.transpose(0, 3, 1, 2)
            if padding == "same":
                p = k // 2
                gxp = gxp[:, :, p:p + x.data.shape[2], p:p + x.data.shape[3]]
            accumulate_grad(x, gxp)

    return Tensor.from_op(out_data, (x, kernel), backward, "correlate2d")


def transpose_correlate2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Adjoint of ``f -> correlate2d(f, kernel)`` under same padding.

    Equals correlate2d with the kernel flipped in both spatial axes and its
    channel axes swapped, so x[B,O,H,W] with kernel[O,C,k,k] maps to [B,C,H,W].
    """
    if kernel.data.ndim != 4:
        raise ValueError("transpose_correlate2d expects kernel [O,C,k,k]")
    flipped = flip_spatial(transpose(kernel, (1, 0, 2, 3)))
    return correlate2d(x, flipped, padding="same", stride=1)


# -- pooling -----------------------------------------------------------------


def maxpool2x2(a: Tensor) -> Tensor:
    """2x2/stride-2 max over the last two axes; gradient to the first max."""
    h, w = a.data.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even extents, got {h}x{w}")
    lead = a.data.shape[:-2]
    blocks = a.data.reshape(lead + (h // 2, 2, w // 2, 2))
    order = tuple(range(len(lead))) + (len(lead), len(lead) + 2, len(lead) + 1, len(lead) + 3)
    blocks = blocks.transpose(order).reshape(lead + (h // 2, w // 2, 4))
    idx = blocks.argmax(axis=-1)
    out_data = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(lead + (h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(lead + (h // 2, w // 2, 2, 2))
        inv = tuple(range(len(lead))) + (len(lead), len(lead) + 2, len(lead) + 1, len(lead) + 3)
        accumulate_grad(a, gb.transpose(inv).reshape(a.data.shape))

    return Tensor.from_op(out_data, (a,), backward, "maxpool2x2")


def global_maxpool(a: Tensor, keep_axes: int = 2) -> Tensor:
    """Max over all axes past the first ``keep_axes`` (gradient to first max)."""
    lead = a.data.shape[:keep_axes]
    flat = a.data.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], g[..., None], axis=-1)
        accumulate_grad(a, gf.reshape(a.data.shape))

    return Tensor.from_op(out_data, (a,), backward, "global_maxpool")


# -- normalization -----------------------------------------------------------


def _bn_param_shape(x: np.ndarray, axes) -> tuple:
    return tuple(1 if ax in axes else x.shape[ax] for ax in range(x.ndim))


def _check_bn_params(x: Tensor, gamma: Tensor, beta: Tensor, axes):
    kept = [ax for ax in range(x.data.ndim) if ax not in axes]
    if len(kept) != 1:
        raise ValueError("batchnorm expects exactly one non-reduced (channel) axis")
    c = x.data.shape[kept[0]]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"gamma/beta length must be {c}, got "
                         f"{gamma.data.shape} / {beta.data.shape}")
    return kept[0]


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, axes,
                    eps: float = 1e-5):
    """Normalize over ``axes`` with batch statistics.

    Returns (out, batch_mean, batch_var) with the statistics as plain arrays
    (biased variance) so the caller can maintain running estimates.
    """
    axes = tuple(axes)
    _check_bn_params(x, gamma, beta, axes)
    pshape = _bn_param_shape(x.data, axes)
    m = int(np.prod([x.data.shape[ax] for ax in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gb = gamma.data.reshape(pshape)
    out_data = gb * xhat + beta.data.reshape(pshape)

    def backward(g):
        if gamma.requires_grad:
            accumulate_grad(gamma, (g * xhat).sum(axis=axes).reshape(gamma.data.shape))
        if beta.requires_grad:
            accumulate_grad(beta, g.sum(axis=axes).reshape(beta.data.shape))
        if x.requires_grad:
            gxhat = g * gb
            s1 = gxhat.sum(axis=axes, keepdims=True)
            s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
            accumulate_grad(x, inv / m * (m * gxhat - s1 - xhat * s2))

    out = Tensor.from_op(out_data, (x, gamma, beta), backward, "batchnorm_train")
    return out, mu.reshape(-1), var.reshape(-1)


def batchnorm_eval(x: Tensor, gamma: Tensor, beta: Tensor, axes,
                   mean: np.ndarray, var: np.ndarray, eps: float = 1e-5) -> Tensor:
    """Normalize with frozen statistics (per-channel affine map)."""
    axes = tuple(axes)
    _check_bn_params(x, gamma, beta, axes)
    pshape = _bn_param_shape(x.data, axes)
    inv = (1.0 / np.sqrt(var + eps)).reshape(pshape).astype(x.data.dtype)
    mu = mean.reshape(pshape).astype(x.data.dtype)
    gb = gamma.data.reshape(pshape)
    out_data = gb * (x.data - mu) * inv + beta.data.reshape(pshape)

    def backward(g):
        if gamma.requires_grad:
            accumulate_grad(gamma, (g * (x.data - mu) * inv).sum(axis=axes))
        if beta.requires_grad:
            accumulate_grad(beta, g.sum(axis=axes))
        if x.requires_grad:
            accumulate_grad(x, g * gb * inv)

    return Tensor.from_op(out_data, (x, gamma, beta), backward, "batchnorm_eval")


# -- constant linear maps ------------------------------------------------------


def spatial_linear_map(x: Tensor, apply_fn, apply_transpose_fn, out_hw) -> Tensor:
    """Apply a fixed linear map to the flattened last two axes.

    ``apply_fn`` / ``apply_transpose_fn`` act on [n_pixels, cols] matrices.
    The map itself is a constant: gradients flow through the application only.
    """
    h, w = x.data.shape[-2:]
    oh, ow = out_hw
    lead = x.data.shape[:-2]
    flat = x.data.reshape(-1, h * w).T
    out_data = np.ascontiguousarray(apply_fn(flat).T).reshape(lead + (oh, ow))

    def backward(g):
        gf = g.reshape(-1, oh * ow).T
        accumulate_grad(x, np.ascontiguousarray(apply_transpose_fn(gf).T).reshape(x.data.shape))

    return Tensor.from_op(out_data, (x,), backward, "spatial_linear_map")


# -- numerical differentiation -------------------------------------------------


def numerical_gradient(fn, arrays, index: int, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn(*arrays)`` w.r.t. one input.

    Runs in the arrays' own dtype; use float64 inputs for verification.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn(*base))
        flat[i] = orig - step
        lo = float(fn(*base))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def check_gradient(build_fn, arrays, rel_tol: float = 1e-5, step: float = 1e-5) -> float:
    """Compare autodiff against finite differences for every input array.

    ``build_fn(*tensors)`` must return a scalar Tensor. Returns the worst
    relative error seen; raises AssertionError above ``rel_tol``.
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    loss = build_fn(*tensors)
    loss.backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        num = numerical_gradient(lambda *arrs: build_fn(*[Tensor(a) for a in arrs]).item(),
                                 arrays, i, step)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = max(float(np.abs(num).max()), 1.0)
        err = float(np.abs(ana - num).max()) / denom
        worst = max(worst, err)
        if err > rel_tol:
            raise AssertionError(
                f"gradient mismatch on input {i}: relative error {err:.3e} > {rel_tol:.1e}")
    return worst
