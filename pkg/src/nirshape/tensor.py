"""Dense tensors with reverse-mode differentiation.

Small by design: exactly the operators the image-to-normal networks and
their objectives need. Arrays are float32 by default (float64 passes
through untouched, which the finite-difference tests rely on); reductions
accumulate in float64 before casting back.

Gradients are accumulated additively, so repeated ``backward`` calls
without ``zero_grad`` stack, and shared subexpressions receive the sum of
their downstream contributions.
"""

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Misuse of the autodiff tape (e.g. backward from a non-scalar)."""


_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


def _unbroadcast(grad, shape):
    # reduce a broadcasted gradient back to the operand's shape
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-d array that optionally participates in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    # numpy must defer to our reflected operators instead of broadcasting
    # element-wise over the Tensor object
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- bookkeeping -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self):
        return float(self.data)

    def detach(self):
        """Same data, severed from the tape."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        # stores the incoming array without copying; nothing in the package
        # mutates grads in place (accumulation reallocates), so closures may
        # hand the same buffer to several tensors safely
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self):
        """Reverse-mode sweep from a scalar; accumulates into ``.grad``."""
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
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
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        a, b = self, other
        return Tensor._from_op(
            a.data + b.data, (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        a, b = self, other
        return Tensor._from_op(
            a.data - b.data, (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return Tensor(np.asarray(other, dtype=self.dtype)) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        a, b = self, other
        return Tensor._from_op(
            a.data * b.data, (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                       _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))
        a, b = self, other
        return Tensor._from_op(
            a.data / b.data, (a, b),
            lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                       _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
                       if b.requires_grad else None))

    def __rtruediv__(self, other):
        return Tensor(np.asarray(other, dtype=self.dtype)) / self

    def __pow__(self, p):
        if not np.isscalar(p):
            raise ShapeError("only scalar exponents are supported")
        a = self
        return Tensor._from_op(
            a.data ** p, (a,),
            lambda g: (g * p * a.data ** (p - 1),))

    def __getitem__(self, idx):
        a = self
        out = a.data[idx]

        def back(g):
            full = np.zeros_like(a.data)
            full[idx] = g
            return (full,)

        return Tensor._from_op(out, (a,), back)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._from_op(
            a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def sum(self, axis=None, keepdims=False):
        a = self
        out = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
        out = out.astype(a.dtype)

        def back(g):
            # read-only broadcast views are fine: consumers never mutate grads
            if axis is None:
                return (np.broadcast_to(g, a.shape),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.shape),)

        return Tensor._from_op(out, (a,), back)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[i] for i in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


# ---------------------------------------------------------------------------
# free functions
# ---------------------------------------------------------------------------

def exp(x):
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,))


def log(x):
    return Tensor._from_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    out = np.sqrt(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (0.5 / out),))


def absolute(x):
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x):
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.2):
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * np.where(mask, 1.0, slope).astype(x.dtype),))


def sigmoid(x):
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def clamp(x, lo=None, hi=None):
    """Clip values; gradient flows only through the unclamped region."""
    out = np.clip(x.data, lo, hi)
    mask = np.ones_like(x.data, dtype=bool)
    if lo is not None:
        mask &= x.data >= lo
    if hi is not None:
        mask &= x.data <= hi
    return Tensor._from_op(out, (x,), lambda g: (g * mask,))


def concat(tensors, axis):
    datas = [t.data for t in tensors]
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(np.concatenate(datas, axis=axis), tuple(tensors), back)


def conv2d(x, kernel, stride=1, pad=0):
    """2-D correlation over (B,Cin,H,W) with kernels (Cout,Cin,kh,kw).

    Zero padding is applied symmetrically before the correlation. Output
    spatial size is floor((H + 2*pad - kh)/stride) + 1.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d operands, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but kernel expects {kernel.shape[1]}")
    kh, kw = kernel.shape[2], kernel.shape[3]
    if stride < 1 or pad < 0 or kh < 1 or kw < 1:
        raise ShapeError(f"invalid conv geometry: k=({kh},{kw}) stride={stride} pad={pad}")
    if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise ShapeError(
            f"kernel ({kh},{kw}) larger than padded input "
            f"({x.shape[2] + 2 * pad},{x.shape[3] + 2 * pad})")

    if pad > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    hp, wp = xp.shape[2], xp.shape[3]
    out = kernels.conv2d_forward(xp, kernel.data, stride)

    def back(g):
        g = np.ascontiguousarray(g)
        dx = dk = None
        if x.requires_grad:
            dxp = kernels.conv2d_grad_input(g, kernel.data, stride, hp, wp)
            dx = dxp[:, :, pad:hp - pad, pad:wp - pad] if pad > 0 else dxp
        if kernel.requires_grad:
            dk = kernels.conv2d_grad_weight(g, xp, kh, kw, stride)
        return (dx, dk)

    return Tensor._from_op(out, (x, kernel), back)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization over batch and spatial axes of (B,C,H,W).

    Train mode normalizes with current batch statistics and folds them into
    the running buffers in place (population variance throughout); its
    backward uses the closed-form batch-norm gradient in one fused op.
    Eval mode normalizes with the running buffers as constants.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    if not training:
        rm = running_mean.reshape(1, c, 1, 1).astype(x.dtype)
        rs = np.sqrt(running_var.reshape(1, c, 1, 1) + eps).astype(x.dtype)
        xhat = (x - Tensor(rm)) * Tensor(1.0 / rs)
        return xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)

    axes = (0, 2, 3)
    n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    mu = x.data.mean(axis=axes, keepdims=True, dtype=np.float64)
    var = np.einsum("bchw,bchw->c", x.data, x.data, dtype=np.float64) / n \
        - mu.ravel() ** 2
    var = np.maximum(var, 0.0).reshape(mu.shape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((x.data - mu) * inv).astype(x.dtype)
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu.reshape(c).astype(running_mean.dtype)
    running_var *= 1.0 - momentum
    running_var += momentum * var.reshape(c).astype(running_var.dtype)

    gr = gamma.data.reshape(1, c, 1, 1)
    out = xhat * gr + beta.data.reshape(1, c, 1, 1)
    invf = inv.astype(x.dtype)

    def back(g):
        # dL/dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat)),
        # and per channel mean(dxhat) = gamma*dbeta/n, mean(dxhat*xhat) =
        # gamma*dgamma/n, so both reuse the parameter gradients
        dbeta64 = g.sum(axis=axes, dtype=np.float64)
        dgamma64 = np.einsum("bchw,bchw->c", g, xhat, dtype=np.float64)
        dx = None
        if x.requires_grad:
            dxhat = g * gr
            m1 = (gamma.data * dbeta64 / n).reshape(1, c, 1, 1).astype(x.dtype)
            m2 = (gamma.data * dgamma64 / n).reshape(1, c, 1, 1).astype(x.dtype)
            dx = invf * (dxhat - m1 - xhat * m2)
        return (dx, dgamma64.astype(gamma.dtype), dbeta64.astype(beta.dtype))

    return Tensor._from_op(out, (x, gamma, beta), back)
