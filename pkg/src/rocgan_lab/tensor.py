"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy float64 array plus an optional gradient
buffer. Differentiable operations record their inputs and a backward closure
on the output tensor; the recorded graph is the tape. ``backward`` on a
scalar tensor walks the graph in reverse topological order and accumulates
gradients additively into every ``requires_grad`` tensor it reaches.

Contracts:
  * binary elementwise ops require equal shapes or one scalar operand
    (python number or 0-d tensor); there is no general broadcasting
  * calling ``backward`` twice without ``zero_grad`` accumulates gradients
  * all ops produce finite outputs on finite in-domain inputs

The graph is single-threaded: build and backprop a tensor from one thread
at a time.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DomainError(ValueError):
    """Input values outside an operation's mathematical domain."""


_grad_enabled = True


class no_grad:
    """Context manager: ops inside build no graph (inference/eval paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _tracked(t: "Tensor") -> bool:
    return t.requires_grad or bool(t._parents)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basics -------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Same storage, cut from the graph; gradients stop here."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- backward pass --------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar.

        Seeds d(self)/d(self) = 1 and accumulates into ``grad`` of every
        tensor with ``requires_grad`` reachable through the recorded graph.
        Repeated calls keep accumulating; ``zero_grad`` resets.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")

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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is not None:
                node._backward_into(g, grads)

    def _backward_into(self, g: np.ndarray, grads: dict[int, np.ndarray]) -> None:
        for parent, pg in self._backward(g):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                # out-of-place: stored buffers may alias upstream gradients
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def abs(self):
        return absolute(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _wrap(out_data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], list]) -> Tensor:
    """Build an op output; the backward closure maps g -> [(parent, grad), ...]."""
    out = Tensor(out_data)
    if _grad_enabled:
        tracked = tuple(p for p in parents if _tracked(p))
        if tracked:
            # requires_grad marks where gradients are kept; intermediates only relay
            out._parents = tracked
            out._backward = backward
    return out


def _as_operands(a, b):
    """Normalize a binary op's operands: equal shapes or one scalar."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=np.float64))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape} (no broadcasting)")
    return a, b


def _reduce_for(operand: Tensor, g: np.ndarray) -> np.ndarray:
    # scalar operand against an array: its gradient is the full sum
    if operand.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_operands(a, b)
    return _wrap(a.data + b.data, (a, b),
                 lambda g: [(a, _reduce_for(a, g)), (b, _reduce_for(b, g))])


def sub(a, b) -> Tensor:
    a, b = _as_operands(a, b)
    return _wrap(a.data - b.data, (a, b),
                 lambda g: [(a, _reduce_for(a, g)), (b, _reduce_for(b, -g))])


def mul(a, b) -> Tensor:
    a, b = _as_operands(a, b)
    return _wrap(a.data * b.data, (a, b),
                 lambda g: [(a, _reduce_for(a, g * b.data)),
                            (b, _reduce_for(b, g * a.data))])


def neg(a: Tensor) -> Tensor:
    return _wrap(-a.data, (a,), lambda g: [(a, -g)])


def absolute(a: Tensor) -> Tensor:
    """|x| with subgradient sign(x); sign(0) = 0."""
    s = np.sign(a.data)
    return _wrap(np.abs(a.data), (a,), lambda g: [(a, g * s)])


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _wrap(out_data, (a,), lambda g: [(a, g * out_data)])


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")
    return _wrap(np.log(a.data), (a,), lambda g: [(a, g / a.data)])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _wrap(np.where(mask, a.data, 0.0), (a,), lambda g: [(a, g * mask)])


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    # slope in (0, 1): max(x, slope*x) avoids building the mask on forward
    out_data = np.maximum(a.data, slope * a.data)
    return _wrap(out_data, (a,),
                 lambda g: [(a, g * np.where(a.data > 0.0, 1.0, slope))])


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _wrap(out_data, (a,), lambda g: [(a, g * out_data * (1.0 - out_data))])


def logsigmoid(a: Tensor) -> Tensor:
    """log(sigma(x)) = min(x, 0) - log1p(exp(-|x|)); overflow-free."""
    x = a.data
    out_data = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    sig_neg = np.where(x >= 0.0, np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
                       1.0 / (1.0 + np.exp(-np.abs(x))))  # sigma(-x)
    return _wrap(out_data, (a,), lambda g: [(a, g * sig_neg)])


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return _wrap(out_data, (a,), lambda g: [(a, g * (1.0 - out_data * out_data))])


def sign(a: Tensor) -> Tensor:
    # piecewise constant: zero gradient everywhere
    return _wrap(np.sign(a.data), (a,), lambda g: [(a, np.zeros_like(a.data))])


# -- reductions / structure -----------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    return _wrap(np.asarray(a.data.sum()), (a,),
                 lambda g: [(a, np.broadcast_to(g, a.shape).copy() if a.ndim else np.asarray(g))])


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _wrap(np.asarray(a.data.mean()), (a,),
                 lambda g: [(a, np.full(a.shape, float(g) / n))])


def reshape(a: Tensor, shape) -> Tensor:
    new_shape = tuple(int(d) for d in shape)
    if new_shape.count(-1) == 1:
        rest = -int(np.prod(new_shape))  # product of fixed dims
        if rest <= 0 or a.size % rest:
            raise ShapeError(f"cannot reshape {a.shape} to {new_shape}")
        new_shape = tuple(a.size // rest if d == -1 else d for d in new_shape)
    if int(np.prod(new_shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {new_shape}")
    old_shape = a.shape
    return _wrap(a.data.reshape(new_shape), (a,),
                 lambda g: [(a, g.reshape(old_shape))])


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim:
            raise ShapeError("concat rank mismatch")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append((t, g[tuple(idx)]))
        return pieces

    return _wrap(out_data, tuple(tensors), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[..., F] + b[F]; the one sanctioned broadcast, for dense layers."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias shape {b.shape} does not match feature dim of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _wrap(x.data + b.data, (x, b),
                 lambda g: [(x, g), (b, g.sum(axis=lead) if lead else g)])


# -- linear algebra --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    need_a, need_b = _tracked(a), _tracked(b)

    def backward(g):
        grads = []
        if need_a:
            grads.append((a, g @ b.data.T))
        if need_b:
            grads.append((b, a.data.T @ g))
        return grads

    return _wrap(a.data @ b.data, (a, b), backward)


# -- convolution ------------------------------------------------------------------


def _normalize_padding(padding) -> tuple[int, int]:
    if isinstance(padding, int):
        if padding < 0:
            raise ShapeError("negative padding")
        return padding, padding
    lo, hi = padding
    if lo < 0 or hi < 0:
        raise ShapeError("negative padding")
    return int(lo), int(hi)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N, ho*wo, C*kh*kw) patch matrix."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)


def _conv_grad_input(g: np.ndarray, k: np.ndarray, stride: int,
                     plo: int, phi: int, h: int, w: int) -> np.ndarray:
    """Adjoint of the padded strided correlation: maps output-space values g
    back to input space, returning the (N, C, h, w) frame.

    Non-overlapping windows (stride >= kernel) scatter through one strided
    view assignment; overlapping ones accumulate per kernel offset.
    """
    n, f, ho, wo = g.shape
    _, c, kh, kw = k.shape
    hp, wp = h + plo + phi, w + plo + phi
    dcols = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f) @ k.reshape(f, c * kh * kw)
    dxp = np.zeros((n, c, hp, wp))
    patches = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    if stride >= kh and stride >= kw:
        sn, sc, sh, sw = dxp.strides
        view = np.lib.stride_tricks.as_strided(
            dxp, shape=(n, c, ho, wo, kh, kw),
            strides=(sn, sc, sh * stride, sw * stride, sh, sw))
        view[...] = patches
    else:
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += \
                    patches[:, :, :, :, i, j]
    return dxp[:, :, plo:hp - phi, plo:wp - phi] if (plo or phi) else dxp


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding=0) -> Tensor:
    """Bias-free cross-correlation, NCHW; kernel (F, C, kh, kw).

    ``padding`` is an int (symmetric) or a (lo, hi) pair applied to both
    spatial axes.
    """
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input and kernel, got {x.shape}, {k.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = k.shape
    if ck != c:
        raise ShapeError(f"kernel channels {ck} do not match input channels {c}")
    plo, phi = _normalize_padding(padding)
    ho = (h + plo + phi - kh) // stride + 1
    wo = (w + plo + phi - kw) // stride + 1
    if h + plo + phi < kh or w + plo + phi < kw or ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, "
                         f"kernel {k.shape}, stride {stride}, padding {(plo, phi)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (plo, phi), (plo, phi))) if (plo or phi) else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo).reshape(n * ho * wo, c * kh * kw)
    wmat = k.data.reshape(f, c * kh * kw)
    out_data = np.ascontiguousarray((cols @ wmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2))
    need_x, need_k = _tracked(x), _tracked(k)

    def backward(g):
        grads = []
        if need_x:
            grads.append((x, _conv_grad_input(g, k.data, stride, plo, phi, h, w)))
        if need_k:
            g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
            grads.append((k, (g2.T @ cols).reshape(f, c, kh, kw)))
        return grads

    return _wrap(out_data, (x, k), backward)


def conv_transpose2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0,
                     output_size=None) -> Tensor:
    """Adjoint of conv2d with the same (kernel, stride, padding) geometry.

    Input (N, F, h, w), kernel (F, C, kh, kw), output (N, C, H, W) where a
    conv2d of the output with this geometry reproduces (h, w). By default
    H = (h-1)*stride + kh - 2*padding; pass ``output_size`` (int or pair) to
    select a larger valid preimage, e.g. to undo stride-truncated convs.
    """
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv_transpose2d needs 4-d input and kernel, got {x.shape}, {k.shape}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    n, f, h, w = x.shape
    fk, c, kh, kw = k.shape
    if fk != f:
        raise ShapeError(f"kernel leading dim {fk} does not match input channels {f}")
    pad = int(padding)
    hout = (h - 1) * stride + kh - 2 * pad
    wout = (w - 1) * stride + kw - 2 * pad
    if output_size is not None:
        hout, wout = (output_size, output_size) if isinstance(output_size, int) else map(int, output_size)
    for out_dim, in_dim, kdim in ((hout, h, kh), (wout, w, kw)):
        span = out_dim + 2 * pad - kdim
        if out_dim < 1 or span < 0 or span // stride + 1 != in_dim:
            raise ShapeError(f"geometry cannot invert the paired conv: transpose of {(h, w)} "
                             f"to {(hout, wout)} with stride {stride}, padding {pad}")

    wmat = k.data.reshape(f, c * kh * kw)
    out_data = _conv_grad_input(x.data, k.data, stride, pad, pad, hout, wout)
    need_x, need_k = _tracked(x), _tracked(k)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        gcols = _im2col(gp, kh, kw, stride, h, w).reshape(n * h * w, c * kh * kw)
        grads = []
        if need_x:
            grads.append((x, np.ascontiguousarray(
                (gcols @ wmat.T).reshape(n, h, w, f).transpose(0, 3, 1, 2))))
        if need_k:
            x2 = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, f)
            grads.append((k, (x2.T @ gcols).reshape(f, c, kh, kw)))
        return grads

    return _wrap(out_data, (x, k), backward)


# -- batch normalization -----------------------------------------------------------


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over axis 1 of an (N, C, ...) tensor.

    Train mode normalizes with batch statistics (biased variance) and updates
    the running buffers in place; eval mode normalizes with the running
    buffers. Differentiable w.r.t. x, gamma and beta in both modes.
    """
    if x.ndim < 2:
        raise ShapeError(f"batch_norm needs (N, C, ...) input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    axes = (0,) + tuple(range(2, x.ndim))
    shape_c = (1, c) + (1,) * (x.ndim - 2)
    m = x.data.size // c

    if train:
        if x.shape[0] < 2:
            raise ShapeError("batch_norm train mode needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.copy()
        var = running_var.copy()

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape_c)) * inv_std.reshape(shape_c)
    out_data = xhat * gamma.data.reshape(shape_c) + beta.data.reshape(shape_c)

    def backward(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        dxhat = g * gamma.data.reshape(shape_c)
        if train:
            dx = (inv_std.reshape(shape_c) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes).reshape(shape_c)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape_c))
        else:
            dx = dxhat * inv_std.reshape(shape_c)
        return [(x, dx), (gamma, dgamma), (beta, dbeta)]

    return _wrap(out_data, (x, gamma, beta), backward)
