"""Dense tensors with reverse-mode automatic differentiation.

The graph is built define-by-run: every differentiable operation creates a
fresh output ``Tensor`` holding references to its inputs and a pullback
closure with the locally stored partials. ``backward`` walks that record
once, in reverse topological order, and accumulates gradients into every
``requires_grad`` tensor reachable from the loss. Nothing is shared across
threads; each training replica owns its tensors and its graph.

Precision is 64-bit float by default so finite-difference oracles have
headroom; 32-bit is an opt-in via the ``dtype`` arguments.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, NumericError

DEFAULT_DTYPE = np.float64

_debug_checks = os.environ.get("TIEDAUG_DEBUG", "") not in ("", "0")
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-operation NaN/Inf checking (off by default)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    """A dense n-d value that may participate in the autodiff graph.

    ``data`` is a row-major numpy buffer. ``grad`` is populated (same shape,
    accumulated additively) by ``backward`` for every tensor created with
    ``requires_grad=True`` that the loss depends on.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_pullback")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if dtype is None and arr.dtype != np.float32:
            arr = arr.astype(DEFAULT_DTYPE, copy=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._pullback: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A graph-free tensor sharing this tensor's values."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._pullback = None
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; scalar operands are the only permitted broadcast.
    def __add__(self, other):
        return add_scalar(self, other) if _is_scalar(other) else add(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_scalar(other) else subtract(self, other)

    def __rsub__(self, other):
        return add_scalar(negate(self), other)

    def __mul__(self, other):
        return mul_scalar(self, other) if _is_scalar(other) else multiply(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __truediv__(self, other):
        if _is_scalar(other):
            return mul_scalar(self, 1.0 / other)
        return divide(self, other)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], pullback, op_name: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = parents
        out._pullback = pullback
    else:
        out._parents = ()
        out._pullback = None
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by '{op_name}'")
    return out


def _check_same_shape(a: Tensor, b: Tensor, op_name: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{op_name}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Elementwise and scalar primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "subtract")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "subtract")


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "multiply")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "multiply")


def divide(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "divide")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (g / bd, -g * out / bd), "divide")


def add_scalar(a: Tensor, c) -> Tensor:
    return _make(a.data + float(c), (a,), lambda g: (g,), "add_scalar")


def mul_scalar(a: Tensor, c) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def negate(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "negate")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.abs(ad), (a,), lambda g: (np.sign(ad) * g,), "absolute")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def maximum_scalar(a: Tensor, c) -> Tensor:
    """Elementwise max(a, c); the subgradient at the tie goes to the constant."""
    c = float(c)
    mask = a.data > c
    return _make(np.maximum(a.data, c), (a,), lambda g: (g * mask,), "maximum_scalar")


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    shape, dt = a.shape, a.data.dtype
    return _make(
        np.asarray(a.data.sum(), dtype=dt),
        (a,),
        lambda g: (np.full(shape, g, dtype=dt),),
        "sum",
    )


def tmean(a: Tensor) -> Tensor:
    """Mean of all elements, as a 0-d tensor."""
    shape, dt = a.shape, a.data.dtype
    n = a.data.size
    return _make(
        np.asarray(a.data.mean(), dtype=dt),
        (a,),
        lambda g: (np.full(shape, g / n, dtype=dt),),
        "mean",
    )


def rowsum(a: Tensor) -> Tensor:
    """Sum over the last axis of a 2-D tensor, keeping it as size 1."""
    if a.data.ndim != 2:
        raise ContractViolation(f"rowsum expects a 2-D tensor, got shape {a.shape}")
    cols = a.shape[1]
    return _make(
        a.data.sum(axis=1, keepdims=True),
        (a,),
        lambda g: (np.repeat(g, cols, axis=1),),
        "rowsum",
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 0 (batch dimension)."""
    sizes = [t.shape[0] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def pull(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(sizes)))

    return _make(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), pull, "concat_rows")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) along axis 0."""
    shape = a.shape

    def pull(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _make(a.data[start:stop].copy(), (a,), pull, "slice_rows")


# ---------------------------------------------------------------------------
# Linear algebra and row-wise softmax family
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-F bias vector to every row of an N-by-F tensor."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ContractViolation(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    return _make(x.data + b.data[None, :], (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax of an N-by-C tensor (max-shifted for stability)."""
    if a.data.ndim != 2:
        raise ContractViolation(f"softmax expects a 2-D tensor, got shape {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def pull(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _make(s, (a,), pull, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax of an N-by-C tensor."""
    if a.data.ndim != 2:
        raise ContractViolation(f"log_softmax expects a 2-D tensor, got shape {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def pull(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), pull, "log_softmax")


# ---------------------------------------------------------------------------
# Convolution and pooling (stride 1, symmetric zero padding, odd kernels)
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """2-D cross-correlation over N-by-C-by-H-by-W input, 'same' output size.

    Kernel is OC-by-C-by-kh-by-kw with odd kh, kw; downsampling is the
    pooling op's job, so stride is fixed at 1.
    """
    if x.data.ndim != 4:
        raise ContractViolation(f"conv2d input must be N x C x H x W, got shape {x.shape}")
    if kernel.data.ndim != 4 or kernel.shape[1] != x.shape[1]:
        raise ContractViolation(f"conv2d: kernel shape {kernel.shape} does not match input {x.shape}")
    oc, _, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractViolation(f"conv2d requires odd kernel extents, got {kh}x{kw}")
    if bias.data.ndim != 1 or bias.shape[0] != oc:
        raise ContractViolation(f"conv2d: bias shape {bias.shape} does not match {oc} output channels")

    cols = _im2col(x.data, kh, kw)  # N, H*W, C*kh*kw
    n, _, h, w = x.shape
    kmat = kernel.data.reshape(oc, -1)
    out = cols @ kmat.T  # N, H*W, OC
    out = out.transpose(0, 2, 1).reshape(n, oc, h, w) + bias.data[None, :, None, None]

    def pull(g):
        gmat = g.reshape(n, oc, h * w).transpose(0, 2, 1)  # N, H*W, OC
        dk = np.einsum("npo,npk->ok", gmat, cols).reshape(kernel.shape)
        db = g.sum(axis=(0, 2, 3))
        # Input grad is the 'same' correlation of g with the flipped,
        # channel-swapped kernel.
        kflip = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gcols = _im2col(g, kh, kw)
        dx = (gcols @ kflip.reshape(x.shape[1], -1).T).transpose(0, 2, 1).reshape(x.shape)
        return (dx, dk, db)

    return _make(out, (x, kernel, bias), pull, "conv2d")


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patches of a padded NCHW array, laid out (N, H*W, C*kh*kw)."""
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # N, C, H, W, kh, kw -> N, H, W, C, kh, kw
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, h * w, c * kh * kw)


def avgpool2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 average pooling; H and W must be even."""
    if x.data.ndim != 4:
        raise ContractViolation(f"avgpool2 input must be N x C x H x W, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractViolation(f"avgpool2 requires even spatial extents, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def pull(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _make(out, (x,), pull, "avgpool2")


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor the scalar loss reaches.

    Gradients accumulate additively, both across multiple uses of a tensor
    within the graph and across repeated ``backward`` calls (callers zero
    grads between optimizer steps).
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        # Loss does not depend on any requires_grad tensor: nothing to do.
        return

    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._pullback is None:
            continue
        for parent, pg in zip(node._parents, node._pullback(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            held = grads.get(key)
            grads[key] = pg if held is None else held + pg


def _topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering via iterative post-order DFS."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# ---------------------------------------------------------------------------
# Finite-difference oracles
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max relative error of autodiff vs central differences for scalar f(x).

    The error per coordinate is |autodiff - central| / max(1, |central|);
    callers assert thresholds.
    """
    if step <= 0:
        raise ContractViolation(f"grad_check step must be positive, got {step}")
    var = Tensor(x.data.copy(), requires_grad=True, dtype=x.data.dtype)
    out = f(var)
    if out.data.size != 1:
        raise ContractViolation(f"grad_check requires scalar-valued f, got shape {out.shape}")
    backward(out)
    auto = var.grad if var.grad is not None else np.zeros_like(var.data)

    base = x.data.copy()
    fd = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(base.copy(), dtype=base.dtype)).item()
        flat[i] = orig - step
        lo = f(Tensor(base.copy(), dtype=base.dtype)).item()
        flat[i] = orig
        fd.reshape(-1)[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(fd))
    return float(np.max(np.abs(auto - fd) / denom)) if fd.size else 0.0


def param_grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """grad_check over a set of parameter tensors against a loss closure.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call. Parameters are perturbed in place for the central
    differences and restored exactly.
    """
    for p in params:
        p.zero_grad()
    backward(loss_fn())

    worst = 0.0
    for p in params:
        auto = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn().item()
            flat[i] = orig - step
            lo = loss_fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * step)
            err = abs(auto.reshape(-1)[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst
