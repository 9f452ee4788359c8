"""Dense tensors with tape-based reverse-mode automatic differentiation.

The operator set is deliberately small: exactly what a VGG-style CNN with a
softmax cross-entropy head needs (conv2d, affine, relu, maxpool2d, flatten,
elementwise add/mul, sum).  Arrays are numpy float32 or float64; the tape
records operations in execution order and replays them in reverse.

With no tape active, operations run in inference mode and record nothing.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:  # compiled fast path for the channel-last layout
    from . import _kernels
except ImportError:  # pragma: no cover - numba is a declared dependency
    _kernels = None

_FLOAT_DTYPES = (np.float32, np.float64)


class AutogradError(RuntimeError):
    """Misuse of the tape: backward twice, root not recorded, etc."""


class Tensor:
    """n-dimensional array plus optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def assert_finite(self, name: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {name}")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


# A backward rule maps the adjoint of the op output to a list of
# (input tensor, adjoint contribution) pairs.
BackwardRule = Callable[[np.ndarray], list]

_tape_stack: list["Tape"] = []


def _active_tape() -> Optional["Tape"]:
    return _tape_stack[-1] if _tape_stack else None


class Tape:
    """Ordered record of operations; reverse traversal drives backprop."""

    def __init__(self):
        self._ops: list[tuple[Tensor, BackwardRule]] = []
        self._produced: set[int] = set()
        self._used = False

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._ops)

    def record(self, out: Tensor, backward: BackwardRule):
        self._ops.append((out, backward))
        self._produced.add(id(out))

    def backward(self, root: Tensor):
        """Accumulate chain-rule gradients into .grad of requires_grad leaves."""
        if self._used:
            raise AutogradError("tape already consumed by a previous backward pass")
        if root.data.size != 1:
            raise AutogradError(f"backward root must be scalar, got shape {root.data.shape}")
        if id(root) not in self._produced:
            raise AutogradError("backward root was not produced on this tape")
        self._used = True

        adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        owner: dict[int, Tensor] = {id(root): root}
        for out, backward in reversed(self._ops):
            g = adjoint.pop(id(out), None)
            owner.pop(id(out), None)
            if g is None:
                continue  # output never contributed to the root
            for tensor, contribution in backward(g):
                key = id(tensor)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + contribution
                else:
                    adjoint[key] = contribution
                    owner[key] = tensor
        for key, tensor in owner.items():
            if tensor.requires_grad:
                g = np.ascontiguousarray(adjoint[key])
                tensor.grad = g if tensor.grad is None else tensor.grad + g


def _finish(out_data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardRule) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = _active_tape()
    if requires and tape is not None:
        tape.record(out, backward)
    return out


def _check_same_dtype(name: str, *tensors: Tensor):
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ValueError(f"{name}: mixed dtypes {sorted(str(d) for d in dtypes)}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype("add", a, b)

    def backward(g):
        out = []
        if a.requires_grad:
            out.append((a, g))
        if b.requires_grad:
            out.append((b, g))
        return out

    return _finish(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype("mul", a, b)

    def backward(g):
        out = []
        if a.requires_grad:
            out.append((a, g * b.data))
        if b.requires_grad:
            out.append((b, g * a.data))
        return out

    return _finish(a.data * b.data, (a, b), backward)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""

    def backward(g):
        return [(a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))]

    return _finish(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    out_data = np.maximum(a.data, 0)

    def backward(g):
        # out > 0 distinguishes exactly the inputs with x > 0
        return [(a, g * (out_data > 0))]

    return _finish(out_data, (a,), backward)


def to_channel_last(a: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, H, W, C) rearrangement."""
    if a.data.ndim != 4:
        raise ValueError(f"to_channel_last: need 4-d input, got {a.shape}")

    def backward(g):
        return [(a, np.ascontiguousarray(g.transpose(0, 3, 1, 2)))]

    return _finish(np.ascontiguousarray(a.data.transpose(0, 2, 3, 1)), (a,), backward)


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    n = a.shape[0]
    in_shape = a.shape

    def backward(g):
        return [(a, g.reshape(in_shape))]

    return _finish(np.ascontiguousarray(a.data).reshape(n, -1), (a,), backward)


def affine(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Row-wise x @ weights + bias."""
    if x.data.ndim != 2 or weights.data.ndim != 2:
        raise ValueError(f"affine: need 2-d input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise ValueError(f"affine: inner dimensions disagree, input {x.shape} vs weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"affine: bias shape {bias.shape} does not match output width {weights.shape[1]}")
    _check_same_dtype("affine", x, weights, bias)

    def backward(g):
        out = []
        if x.requires_grad:
            out.append((x, g @ weights.data.T))
        if weights.requires_grad:
            out.append((weights, x.data.T @ g))
        if bias.requires_grad:
            out.append((bias, g.sum(axis=0)))
        return out

    return _finish(x.data @ weights.data + bias.data, (x, weights, bias), backward)


def _pad_hw(arr: np.ndarray, padding: int, channel_last: bool) -> np.ndarray:
    """Zero-pad the two spatial axes."""
    if not padding:
        return arr
    n, *rest = arr.shape
    if channel_last:
        h, w, c = rest
        buf = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=arr.dtype)
        buf[:, padding:padding + h, padding:padding + w, :] = arr
    else:
        c, h, w = rest
        buf = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=arr.dtype)
        buf[:, :, padding:padding + h, padding:padding + w] = arr
    return buf


def _im2col(arr: np.ndarray, kh: int, kw: int, stride: int, padding: int,
            channel_last: bool) -> np.ndarray:
    """Patch matrix (N*ho*wo, C*kh*kw); rows ordered (n, ho, wo).

    Column order differs by layout to keep the gather cache-friendly:
    (c, kh, kw) for channel-first input, (kh, kw, c) for channel-last
    (there a whole kernel row is one contiguous run).  Kernel matrices
    must be arranged to match.
    """
    if channel_last and _kernels is not None:
        n, h, w, c = arr.shape
        ho = (h + 2 * padding - kh) // stride + 1
        wo = (w + 2 * padding - kw) // stride + 1
        col = np.empty((n * ho * wo, kh * kw * c), dtype=arr.dtype)
        return _kernels.im2col_nhwc(np.ascontiguousarray(arr), kh, kw, stride, padding, col)
    arr = _pad_hw(arr, padding, channel_last)
    n = arr.shape[0]
    c = arr.shape[3] if channel_last else arr.shape[1]
    spatial = (1, 2) if channel_last else (2, 3)
    windows = sliding_window_view(arr, (kh, kw), axis=spatial)
    if channel_last:
        windows = windows[:, ::stride, ::stride]  # (N, ho, wo, C, kh, kw)
        ho, wo = windows.shape[1], windows.shape[2]
        gathered = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))
    else:
        windows = windows[:, :, ::stride, ::stride]  # (N, C, ho, wo, kh, kw)
        ho, wo = windows.shape[2], windows.shape[3]
        gathered = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return gathered.reshape(n * ho * wo, c * kh * kw)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, padding: int = 0, stride: int = 1,
           channel_last: bool = False) -> Tensor:
    """Batched 2-d cross-correlation with zero padding.

    x: (N, C, H, W), kernels: (K, C, kh, kw), bias: (K,).  Output spatial
    size (H + 2*padding - kh) // stride + 1 must be exact.  With
    channel_last=True, input and output use (N, H, W, C) instead; kernels
    keep their layout.  The channel-last path exists because the
    patch-matrix product lands directly in channel-last order, avoiding
    large transposes; its sums run in a different column order, so values
    agree with the default layout only up to float rounding.
    """
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ValueError(f"conv2d: need 4-d input and kernels, got {x.shape} and {kernels.shape}")
    if channel_last:
        n, h, w, c = x.shape
    else:
        n, c, h, w = x.shape
    k, ck, kh, kw = kernels.shape
    if ck != c:
        raise ValueError(f"conv2d: channel mismatch, input {x.shape} vs kernels {kernels.shape}")
    if bias.shape != (k,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {k} kernels")
    if padding < 0:
        raise ValueError(f"conv2d: negative padding {padding}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d: kernel {kernels.shape} larger than padded input {(n, c, hp, wp)}")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ValueError(
            f"conv2d: non-integer output size for input {x.shape}, kernel {kernels.shape}, "
            f"padding {padding}, stride {stride}"
        )
    _check_same_dtype("conv2d", x, kernels, bias)
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    col = _im2col(x.data, kh, kw, stride, padding, channel_last)
    if channel_last:  # column order (kh, kw, c); see _im2col
        wmat = np.ascontiguousarray(kernels.data.transpose(0, 2, 3, 1)).reshape(k, kh * kw * c)
    else:
        wmat = kernels.data.reshape(k, c * kh * kw)
    out_mat = col @ wmat.T
    out_mat += bias.data
    if channel_last:
        out = out_mat.reshape(n, ho, wo, k)
    else:
        out = np.ascontiguousarray(out_mat.reshape(n, ho, wo, k).transpose(0, 3, 1, 2))

    def backward(g):
        out_grads = []
        if channel_last:
            g_mat = g.reshape(n * ho * wo, k)
        else:
            g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, k)
        if kernels.requires_grad:
            dw = g_mat.T @ col
            if channel_last:
                dw = np.ascontiguousarray(dw.reshape(k, kh, kw, c).transpose(0, 3, 1, 2))
            out_grads.append((kernels, dw.reshape(kernels.shape)))
        if bias.requires_grad:
            out_grads.append((bias, g_mat.sum(axis=0)))
        if x.requires_grad:
            if channel_last and _kernels is not None:
                dcol = g_mat @ wmat
                dx = np.empty((n, h, w, c), dtype=g.dtype)
                _kernels.col2im_nhwc(dcol, kh, kw, stride, padding, dx)
            elif stride == 1 and padding <= kh - 1 and padding <= kw - 1:
                # input gradient as a correlation of g with the flipped,
                # channel-swapped kernels ("full" mode via extra padding);
                # wrot columns (kh, kw, k) match the channel-last gcol
                wrot = np.ascontiguousarray(
                    kernels.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0)).reshape(c, kh * kw * k)
                g_img = g if channel_last else np.ascontiguousarray(g.transpose(0, 2, 3, 1))
                gcol = _im2col(g_img, kh, kw, 1, kh - 1 - padding, channel_last=True)
                dmat = gcol @ wrot.T
                if channel_last:
                    dx = dmat.reshape(n, h, w, c)
                else:
                    dx = np.ascontiguousarray(dmat.reshape(n, h, w, c).transpose(0, 3, 1, 2))
            else:
                # general fallback: scatter-add each kernel offset
                dcol = g_mat @ wmat
                if channel_last:
                    dxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
                    dcol = dcol.reshape(n, ho, wo, kh, kw, c).transpose(0, 3, 4, 1, 2, 5)
                    for i in range(kh):
                        for j in range(kw):
                            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcol[:, i, j]
                    dx = dxp[:, padding:padding + h, padding:padding + w, :] if padding else dxp
                else:
                    dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
                    dcol = dcol.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                    for i in range(kh):
                        for j in range(kw):
                            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcol[:, :, i, j]
                    dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
            out_grads.append((x, dx))
        return out_grads

    return _finish(out, (x, kernels, bias), backward)


def maxpool2d(x: Tensor, size: int = 2, stride: int = 2, channel_last: bool = False) -> Tensor:
    """Non-overlapping max pooling; gradient goes to the first maximum
    (row-major order within the window)."""
    if stride != size:
        raise ValueError(f"maxpool2d: only stride == size supported, got size={size} stride={stride}")
    if channel_last:
        n, h, w, c = x.shape
    else:
        n, c, h, w = x.shape
    if h % size or w % size:
        raise ValueError(f"maxpool2d: spatial dims {(h, w)} not divisible by {size}")
    ho, wo = h // size, w // size
    d = x.data

    if size == 2 and channel_last and _kernels is not None:
        out = np.empty((n, ho, wo, c), dtype=d.dtype)
        idx = np.empty((n, ho, wo, c), dtype=np.uint8)
        _kernels.maxpool2x2_nhwc(np.ascontiguousarray(d), out, idx)

        def backward(g):
            dx = np.empty_like(d)
            _kernels.maxpool2x2_nhwc_backward(np.ascontiguousarray(g), idx, dx)
            return [(x, dx)]

        return _finish(out, (x,), backward)

    if size == 2:
        def cell(i, j):
            return d[:, i::2, j::2, :] if channel_last else d[:, :, i::2, j::2]

        slots = ((0, 0), (0, 1), (1, 0), (1, 1))
        quads = [cell(i, j) for i, j in slots]
        out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))

        def backward(g):
            dx = np.zeros_like(d)
            taken = np.zeros(out.shape, dtype=bool)
            for quad, (i, j) in zip(quads, slots):
                winner = (quad == out) & ~taken
                target = dx[:, i::2, j::2, :] if channel_last else dx[:, :, i::2, j::2]
                target[...] = np.where(winner, g, 0)
                taken |= winner
            return [(x, dx)]

        return _finish(out, (x,), backward)

    if channel_last:
        windows = d.reshape(n, ho, size, wo, size, c).transpose(0, 1, 3, 5, 2, 4)
        restore = (0, 1, 4, 2, 5, 3)  # (n, ho, size, wo, size, c) from (n, ho, wo, c, size, size)
        dx_shape = (n, h, w, c)
        flat_shape = (n, ho, wo, c, size * size)
    else:
        windows = d.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
        restore = (0, 1, 2, 4, 3, 5)
        dx_shape = (n, c, h, w)
        flat_shape = (n, c, ho, wo, size * size)
    flat = np.ascontiguousarray(windows).reshape(flat_shape)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        dx = dflat.reshape(*flat_shape[:-1], size, size).transpose(restore).reshape(dx_shape)
        return [(x, dx)]

    return _finish(out, (x,), backward)


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise log softmax with max subtraction, on a plain array."""
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_probs(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax probabilities, on a plain array."""
    return np.exp(log_softmax(z))


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Per-item negative log softmax probability of the true class.

    Returns (losses, probs): losses is a differentiable (N,) tensor, probs
    the (N, K) softmax probabilities as a plain array.  Uses the fused
    max-subtracted log-softmax form.
    """
    z = logits.data
    if z.ndim != 2:
        raise ValueError(f"softmax_cross_entropy: logits must be 2-d, got {logits.shape}")
    n, k = z.shape
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ValueError(f"softmax_cross_entropy: {n} rows but labels shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"softmax_cross_entropy: labels outside [0, {k})")
    y = y.astype(np.int64)

    logp = log_softmax(z)
    probs = np.exp(logp)
    losses = np.maximum(-logp[np.arange(n), y], 0)

    def backward(g):
        # d loss_i / d z_i = p_i - onehot(y_i), scaled by the item adjoint
        dz = probs.copy()
        dz[np.arange(n), y] -= 1
        dz *= g[:, None]
        return [(logits, dz.astype(z.dtype, copy=False))]

    return _finish(losses, (logits,), backward), probs
