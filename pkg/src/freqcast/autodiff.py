"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors wrap ndarrays and record the operations that produced them; calling
``backward()`` on a scalar walks the graph once in reverse topological order
and accumulates gradients into every tensor created with ``requires_grad``.

The op set is exactly what the forecasting pipeline needs: broadcasting
arithmetic, batched matmul, shape ops, row gather/scatter, reductions, a few
smooth nonlinearities, and the two transform nodes whose adjoints are again
transforms. Gradients through piecewise points use the convention grad(sqrt)
at 0 = 0, which keeps an exactly-attained RMSE minimum finite.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import SymmetryError


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp  # fn(out_grad) -> tuple of parent grads (None entries allowed)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    # ----------------------------------------------------------------------
    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of ``self`` (a scalar unless seeded) into leaves."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def const(x, dtype=None) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def _vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return Tensor(out, _parents=(a, b), _vjp=_vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return Tensor(a.data - b.data, _parents=(a, b), _vjp=_vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return Tensor(a.data * b.data, _parents=(a, b), _vjp=_vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if b.requires_grad
            else None,
        )

    return Tensor(a.data / b.data, _parents=(a, b), _vjp=_vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, _parents=(a,), _vjp=lambda g: (-g,))


def pow_const(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return Tensor(
        a.data**p,
        _parents=(a,),
        _vjp=lambda g: (g * p * a.data ** (p - 1.0),),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.data), _parents=(a,), _vjp=lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def _vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = g / (2.0 * out)
        return (np.where(out == 0.0, 0.0, ga),)

    return Tensor(out, _parents=(a,), _vjp=_vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * (1.0 - out * out),))


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """Smooth tanh-form GELU with its analytic derivative."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out = 0.5 * x * (1.0 + t)

    def _vjp(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * d,)

    return Tensor(out, _parents=(a,), _vjp=_vjp)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    out = a.data @ b.data

    def _vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return Tensor(out, _parents=(a, b), _vjp=_vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(
        a.data.reshape(shape),
        _parents=(a,),
        _vjp=lambda g: (g.reshape(a.data.shape),),
    )


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return Tensor(
        np.transpose(a.data, axes),
        _parents=(a,),
        _vjp=lambda g: (np.transpose(g, inv),),
    )


def getitem(a, key) -> Tensor:
    """Basic (slice/int/tuple) indexing."""
    a = as_tensor(a)

    def _vjp(g):
        ga = np.zeros_like(a.data)
        ga[key] += g
        return (ga,)

    return Tensor(a.data[key], _parents=(a,), _vjp=_vjp)


def take_rows(a, indices: np.ndarray) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate in the adjoint."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)

    def _vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor(a.data[idx], _parents=(a,), _vjp=_vjp)


def scatter_rows(a, indices: np.ndarray, size: int) -> Tensor:
    """Place rows at unique ``indices`` of a zero array with ``size`` rows."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.zeros((size,) + a.data.shape[1:], dtype=a.data.dtype)
    out[idx] = a.data
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g[idx],))


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def _vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), _parents=tuple(parts), _vjp=_vjp)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor(out, _parents=(a,), _vjp=_vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# composite helpers
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    """Numerically shifted softmax with the exact Jacobian-vector adjoint."""
    a = as_tensor(a)
    e = np.exp(a.data - np.max(a.data, axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def _vjp(g):
        gs = g * s
        return (gs - s * gs.sum(axis=axis, keepdims=True),)

    return Tensor(s, _parents=(a,), _vjp=_vjp)


def layer_norm_op(x, gamma, beta, eps: float) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then rescale."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def _vjp(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = _unbroadcast(g * xhat, gamma.data.shape)
        if beta.requires_grad:
            gbeta = _unbroadcast(g, beta.data.shape)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, ggamma, gbeta

    return Tensor(out, _parents=(x, gamma, beta), _vjp=_vjp)


def stack_last(parts) -> Tensor:
    """Stack tensors along a new trailing axis."""
    expanded = [reshape(p, p.data.shape + (1,)) for p in parts]
    return concat(expanded, axis=-1)


# ---------------------------------------------------------------------------
# transform nodes (adjoints are transforms again)
# ---------------------------------------------------------------------------

def dft2_stacked(x) -> Tensor:
    """Forward unnormalized 2-D DFT of a real tensor [..., M, N] -> [..., M, N, 2]."""
    x = as_tensor(x)
    S = kernels.fft2(x.data.astype(np.complex128), -1)
    out = np.stack([S.real, S.imag], axis=-1).astype(x.data.dtype)

    def _vjp(g):
        gc = g[..., 0].astype(np.complex128) + 1j * g[..., 1].astype(np.complex128)
        gx = kernels.fft2(gc, +1).real
        return (gx.astype(x.data.dtype),)

    return Tensor(out, _parents=(x,), _vjp=_vjp)


def idft2_stacked(s, imag_tol: float = 1e-6) -> Tensor:
    """Normalized inverse of a stacked spectrum [..., M, N, 2] -> real [..., M, N]."""
    s = as_tensor(s)
    M, N = s.data.shape[-3], s.data.shape[-2]
    z = s.data[..., 0].astype(np.complex128) + 1j * s.data[..., 1].astype(np.complex128)
    w = kernels.fft2(z, +1) / (M * N)
    residue = float(np.max(np.abs(w.imag))) if w.size else 0.0
    if residue > imag_tol:
        raise SymmetryError(
            f"inverse transform imaginary residue {residue:.3e} > {imag_tol:.1e}"
        )
    out = w.real.astype(s.data.dtype)

    def _vjp(g):
        G = kernels.fft2(g.astype(np.complex128), -1) / (M * N)
        gs = np.stack([G.real, G.imag], axis=-1).astype(s.data.dtype)
        return (gs,)

    return Tensor(out, _parents=(s,), _vjp=_vjp)
