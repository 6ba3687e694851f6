"""Reverse-mode differentiation over numpy arrays.

Every operation records its parents and a backward closure on the output
tensor; the recorded graph is the gradient tape. ``backward()`` walks the
reachable graph in reverse creation order (a topological order, since
consumers are always created after their inputs), propagating pass-local
gradients and accumulating them into ``.grad`` (+=). Double precision
throughout.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

_seq_counter = itertools.count()
_grad_enabled = True
_checked = False


def set_checked(flag: bool) -> None:
    """When on, any op producing NaN/Inf raises FloatingPointError."""
    global _checked
    _checked = bool(flag)


def checked() -> bool:
    return _checked


@contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if _checked and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains NaN or Inf")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._seq = next(_seq_counter)

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(-self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / float(other))
        return div(self, other)

    def __pow__(self, exponent):
        return power(self, float(exponent))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape and reductions ------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    # -- reverse pass ----------------------------------------------------------
    def backward(self) -> None:
        """Propagate d(self)/d(node) to every reachable node; accumulate into .grad."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = []
        seen = {id(self)}
        stack = [self]
        while stack:
            node = stack.pop()
            order.append(node)
            for parent in node._parents:
                if id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append(parent)
        order.sort(key=lambda t: t._seq, reverse=True)

        local = {id(self): np.ones_like(self.data)}
        for node in order:
            g = local.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad or node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None:
                        continue
                    key = id(parent)
                    local[key] = pg if key not in local else local[key] + pg


class Parameter(Tensor):
    """Trainable leaf tensor with a stable name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(data, parents, backward) -> Tensor:
    """Wrap op output; attach the tape record only when recording is on and
    some parent participates in differentiation."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = False  # grads accumulate on leaves, flow through here
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _needs(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to the shape the operand had before broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.shape) if _needs(a) else None,
                _unbroadcast(g, b.shape) if _needs(b) else None)

    return _record(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if _needs(a) else None,
                _unbroadcast(g * a.data, b.shape) if _needs(b) else None)

    return _record(data, (a, b), backward)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape) if _needs(a) else None,
                _unbroadcast(-g * data / b.data, b.shape) if _needs(b) else None)

    return _record(data, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    data = a.data ** exponent
    return _record(data, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _record(data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    return _record(data, (a,), lambda g: (g * 0.5 / data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _record(data, (a,), lambda g: (g * data * (1.0 - data),))


# -- linear algebra and shape ----------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if _needs(a) else None
        gb = a.data.T @ g if _needs(b) else None
        return (ga, gb)

    return _record(data, (a, b), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    data = np.transpose(a.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))
    return _record(data, (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p if _needs(t) else None for p, t in zip(pieces, tensors))

    return _record(data, tuple(tensors), backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _record(data, (a,), backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[i] for i in axis]))
    else:
        count = a.shape[axis]
    return mul_scalar(tensor_sum(a, axis, keepdims), 1.0 / count)


# -- neural-network primitives ---------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x: (B, D_in), weight: (D_out, D_in), bias: (D_out,)."""
    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data

    def backward(g):
        gx = g @ weight.data if _needs(x) else None
        gw = g.T @ x.data if _needs(weight) else None
        gb = g.sum(axis=0) if bias is not None and _needs(bias) else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _record(data, parents, backward)


_GATHER_CACHE: dict = {}


def _gather_indices(key, builder):
    if key not in _GATHER_CACHE:
        if len(_GATHER_CACHE) > 256:
            _GATHER_CACHE.clear()
        _GATHER_CACHE[key] = builder()
    return _GATHER_CACHE[key]


def _scatter_rows(values: np.ndarray, idx: np.ndarray, size: int) -> np.ndarray:
    """Row-wise scatter-add: out[b] = bincount(idx, values[b]).

    The per-row loop beats one flattened bincount because it avoids
    materializing a batch-offset index array as large as the data.
    """
    flat_idx = idx.reshape(-1)
    out = np.empty((values.shape[0], size))
    for b in range(values.shape[0]):
        out[b] = np.bincount(flat_idx, weights=values[b], minlength=size)
    return out


def _conv2d_index(C, H, W, kh, kw, sh, sw):
    """Flat gather index (positions, C*kh*kw) into a (C, H, W) array."""
    def build():
        h_out = (H - kh) // sh + 1
        w_out = (W - kw) // sw + 1
        cell = (np.repeat(np.arange(C) * H * W, kh * kw)
                + np.tile(np.repeat(np.arange(kh) * W, kw), C)
                + np.tile(np.arange(kw), kh * C))
        origin = (np.repeat(np.arange(h_out) * sh * W, w_out)
                  + np.tile(np.arange(w_out) * sw, h_out))
        return origin[:, None] + cell[None, :], h_out, w_out

    return _gather_indices(("c2", C, H, W, kh, kw, sh, sw), build)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Batched 2-D cross-correlation.

    x: (B, C_in, H, W), weight: (C_out, C_in, kh, kw); output spatial size
    H' = floor((H + 2*ph - kh)/sh) + 1 and likewise for W'.
    """
    B, C, H, W = x.data.shape
    c_out, c_in, kh, kw = weight.data.shape
    if c_in != C:
        raise ValueError(f"conv2d channel mismatch: input {C}, weight {c_in}")
    sh, sw = stride
    ph, pw = padding
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise ValueError("conv2d kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    idx, h_out, w_out = _conv2d_index(C, Hp, Wp, kh, kw, sh, sw)
    P = h_out * w_out

    col = np.take(xp.reshape(B, -1), idx, axis=1).reshape(B * P, C * kh * kw)
    w_mat = weight.data.reshape(c_out, -1)
    out = col @ w_mat.T                                    # (B*P, C_out)
    if bias is not None:
        out = out + bias.data
    data = np.ascontiguousarray(
        out.reshape(B, P, c_out).transpose(0, 2, 1)).reshape(B, c_out, h_out, w_out)

    def backward(g):
        g_mat = np.ascontiguousarray(
            g.reshape(B, c_out, P).transpose(0, 2, 1)).reshape(B * P, c_out)
        gw = (g_mat.T @ col).reshape(weight.shape) if _needs(weight) else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and _needs(bias) else None
        gx = None
        if _needs(x):
            g_col = (g_mat @ w_mat).reshape(B, P * C * kh * kw)
            acc = _scatter_rows(g_col, idx, C * Hp * Wp).reshape(B, C, Hp, Wp)
            gx = acc[:, :, ph:Hp - ph or None, pw:Wp - pw or None]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _record(data, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Batched 1-D cross-correlation, no padding.

    x: (B, C_in, L), weight: (C_out, C_in, k); L' = floor((L - k)/stride) + 1.
    """
    B, C, L = x.data.shape
    c_out, c_in, k = weight.data.shape
    if c_in != C:
        raise ValueError(f"conv1d channel mismatch: input {C}, weight {c_in}")
    if k > L:
        raise ValueError(f"conv1d kernel {k} longer than input {L}")

    def build():
        l_out = (L - k) // stride + 1
        cell = np.repeat(np.arange(C) * L, k) + np.tile(np.arange(k), C)
        origin = np.arange(l_out) * stride
        return origin[:, None] + cell[None, :], l_out

    idx, l_out = _gather_indices(("c1", C, L, k, stride), build)
    col = np.take(x.data.reshape(B, -1), idx, axis=1).reshape(B * l_out, C * k)
    w_mat = weight.data.reshape(c_out, -1)
    out = col @ w_mat.T                                   # (B*L', C_out)
    if bias is not None:
        out = out + bias.data
    data = np.ascontiguousarray(out.reshape(B, l_out, c_out).transpose(0, 2, 1))

    def backward(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * l_out, c_out)
        gw = (g_mat.T @ col).reshape(weight.shape) if _needs(weight) else None
        gb = g.sum(axis=(0, 2)) if bias is not None and _needs(bias) else None
        gx = None
        if _needs(x):
            g_col = (g_mat @ w_mat).reshape(B, l_out * C * k)
            gx = _scatter_rows(g_col, idx, C * L).reshape(B, C, L)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _record(data, parents, backward)


def max_pool2d(x: Tensor, kernel, stride=None, padding=(0, 0)) -> Tensor:
    """Max pooling; gradients route to the (first) argmax of each window.

    Padded cells are -inf and can never win. kernel == spatial extent with
    zero padding gives global pooling.
    """
    kh, kw = kernel
    sh, sw = stride if stride is not None else kernel
    ph, pw = padding
    B, C, H, W = x.data.shape
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise ValueError("max_pool2d kernel larger than padded input")

    if ph or pw:
        xp = np.full((B, C, H + 2 * ph, W + 2 * pw), -np.inf)
        xp[:, :, ph:ph + H, pw:pw + W] = x.data
    else:
        xp = x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    idx, h_out, w_out = _conv2d_index(1, Hp, Wp, kh, kw, sh, sw)

    flat = xp.reshape(B * C, -1)
    windows = flat[:, idx]                                 # (B*C, P, kh*kw)
    arg = windows.argmax(axis=2)
    data = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]
    data = data.reshape(B, C, h_out, w_out)

    def backward(g):
        if not _needs(x):
            return (None,)
        winner = idx[np.arange(idx.shape[0])[None, :], arg]            # (B*C, P)
        winner = winner + (np.arange(B * C) * (Hp * Wp))[:, None]
        acc = np.bincount(winner.ravel(), weights=g.reshape(B * C, -1).ravel(),
                          minlength=B * C * Hp * Wp).reshape(B, C, Hp, Wp)
        return (acc[:, :, ph:Hp - ph or None, pw:Wp - pw or None],)

    return _record(data, (x,), backward)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (B, H, W).

    Training mode normalizes by batch statistics and folds them into the
    running buffers in place; eval mode normalizes by the running buffers.
    """
    B, C, H, W = x.data.shape
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean[None, :, None, None]
        var = np.einsum("bchw,bchw->c", centered, centered) / (B * H * W)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * var
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = centered * inv_std[None, :, None, None]
    else:
        mean = running_mean
        var = running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    data = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]

    def backward(g):
        gg = np.einsum("bchw,bchw->c", g, x_hat) if _needs(gamma) else None
        gb = g.sum(axis=(0, 2, 3)) if _needs(beta) else None
        gx = None
        if _needs(x):
            if training:
                n = B * H * W
                sum_g = gb if gb is not None else g.sum(axis=(0, 2, 3))
                sum_g_xhat = gg if gg is not None else np.einsum("bchw,bchw->c", g, x_hat)
                coef = gamma.data * inv_std
                gx = coef[None, :, None, None] * (
                    g
                    - (sum_g / n)[None, :, None, None]
                    - x_hat * (sum_g_xhat / n)[None, :, None, None]
                )
            else:
                gx = g * (gamma.data * inv_std)[None, :, None, None]
        return (gx, gg, gb)

    return _record(data, (x, gamma, beta), backward)


def stats_pool(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Channel-wise mean and standard deviation over all trailing axes.

    x: (B, C, ...) -> (B, 2C): means first, then stds. The variance is
    floored at eps inside the square root so constant channels stay
    differentiable.
    """
    B, C = x.data.shape[0], x.data.shape[1]
    flat = x.data.reshape(B, C, -1)
    n = flat.shape[2]
    if n < 1:
        raise ValueError("stats_pool requires at least one pooled position")
    mean = flat.mean(axis=2)
    centered = flat - mean[:, :, None]
    var = (centered ** 2).mean(axis=2)
    clipped = np.maximum(var, eps)
    std = np.sqrt(clipped)
    data = np.concatenate([mean, std], axis=1)

    def backward(g):
        if not _needs(x):
            return (None,)
        g_mean = g[:, :C]
        g_std = g[:, C:]
        gx = np.broadcast_to(g_mean[:, :, None] / n, flat.shape).copy()
        active = (var > eps).astype(np.float64)
        gx += (g_std * active / (n * std))[:, :, None] * centered
        return (gx.reshape(x.shape),)

    return _record(data, (x,), backward)


# -- optimizer --------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = 0.0
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict:
        """Moments keyed by parameter name, for checkpointing."""
        out = {"adam/t": np.array([float(self.t)])}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"adam/m/{p.name}"] = m
            out[f"adam/v/{p.name}"] = v
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.t = int(arrays["adam/t"][0])
        for i, p in enumerate(self.params):
            self.m[i] = arrays[f"adam/m/{p.name}"].copy()
            self.v[i] = arrays[f"adam/v/{p.name}"].copy()
