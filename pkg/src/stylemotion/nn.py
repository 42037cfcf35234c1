"""Minimal reverse-mode autodiff on numpy, sized for this project's networks.

Float32 by default; pass dtype=np.float64 when building a network to run the
shadow-precision verification path. Forward passes are deterministic given a
seed; dropout takes an explicit RNG.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, grad: np.ndarray, fresh: bool = False) -> None:
        """Add ``grad`` into this tensor's gradient buffer.

        ``fresh`` marks arrays the caller just allocated and will not touch
        again; those are adopted directly instead of copied.
        """
        grad = grad.astype(self.data.dtype, copy=False)
        if self.grad is None:
            if fresh and grad.shape == self.data.shape and grad.flags.owndata:
                self.grad = grad
            elif grad.shape == self.data.shape:
                self.grad = grad.copy()
            else:
                self.grad = np.broadcast_to(grad, self.data.shape).copy()
        else:
            self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()

        def visit(t: Tensor) -> None:
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._accumulate(np.asarray(grad))
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)
        # The graph is full of closure cycles (tensor -> backward -> tensor)
        # that only the gc can reclaim; sever them so refcounting frees the
        # large intermediates immediately.
        for t in topo:
            t._parents = ()
            t._backward = None

    # -- primitive ops -------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _make(self.data + other.data, (self, other))

        def bw(g):
            if self.requires_grad or self._parents:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad or other._parents:
                other._accumulate(_unbroadcast(g, other.shape))

        out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _make(-self.data, (self,))
        out._backward = lambda g: self._accumulate(-g, fresh=True)
        return out

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _make(self.data * other.data, (self, other))

        def bw(g):
            if self.requires_grad or self._parents:
                self._accumulate(_unbroadcast(g * other.data, self.shape), fresh=True)
            if other.requires_grad or other._parents:
                other._accumulate(_unbroadcast(g * self.data, other.shape), fresh=True)

        out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _make(self.data / other.data, (self, other))

        def bw(g):
            if self.requires_grad or self._parents:
                self._accumulate(_unbroadcast(g / other.data, self.shape), fresh=True)
            if other.requires_grad or other._parents:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.shape),
                    fresh=True,
                )

        out._backward = bw
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a, b = self.data, other.data
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out = _make(a @ b, (self, other))

        def bw(g):
            if self.requires_grad or self._parents:
                self._accumulate(
                    _unbroadcast(g @ np.swapaxes(b, -1, -2), self.shape), fresh=True
                )
            if other.requires_grad or other._parents:
                other._accumulate(
                    _unbroadcast(np.swapaxes(a, -1, -2) @ g, other.shape), fresh=True
                )

        out._backward = bw
        return out

    __matmul__ = matmul

    def reshape(self, *shape):
        out = _make(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self._accumulate(g.reshape(self.shape))
        return out

    def __getitem__(self, key):
        out = _make(self.data[key], (self,))

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)  # duplicate indices must accumulate
            self._accumulate(full)

        out._backward = bw
        return out

    def sum(self, axis=None, keepdims: bool = False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def sqrt(self):
        root = np.sqrt(self.data)
        out = _make(root, (self,))
        out._backward = lambda g: self._accumulate(g * 0.5 / root)
        return out

    def exp(self):
        e = np.exp(self.data)
        out = _make(e, (self,))
        out._backward = lambda g: self._accumulate(g * e)
        return out

    def abs(self):
        out = _make(np.abs(self.data), (self,))
        out._backward = lambda g: self._accumulate(g * np.sign(self.data))
        return out

    def elu(self):
        """ELU with alpha = 1."""
        neg = np.exp(np.minimum(self.data, 0.0)) - 1.0
        val = np.where(self.data > 0, self.data, neg)
        out = _make(val, (self,))
        out._backward = lambda g: self._accumulate(
            g * np.where(self.data > 0, 1.0, neg + 1.0)
        )
        return out


def _make(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(p for p in parents if isinstance(p, Tensor))
    return out


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        start = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            t._accumulate(g[tuple(sl)])
            start += size

    out._backward = bw
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))  # detached max
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis; no learned affine."""
    if x.shape[-1] < 2:
        raise ShapeError("layer norm needs at least 2 features")
    mu = x.mean(axis=-1, keepdims=True)
    centred = x - mu
    std = (centred * centred).mean(axis=-1, keepdims=True).sqrt()
    return centred / (std + eps)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask.astype(x.dtype))


def conv1d_same(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Temporal convolution with zero 'same' padding.

    x: (C_in, T); filters: (C_out, C_in, k) with odd k; bias: (C_out,).
    Output: (C_out, T).
    """
    c_in, t = x.shape
    c_out, c_in2, k = filters.shape
    if k % 2 == 0:
        raise ShapeError("kernel size must be odd")
    if c_in != c_in2:
        raise ShapeError(f"conv1d channel mismatch: input {c_in}, filters {c_in2}")
    pad = k // 2
    xp = np.zeros((c_in, t + 2 * pad), dtype=x.dtype)
    xp[:, pad : pad + t] = x.data
    # im2col: (C_in * k, T)
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (C_in, T, k)
    cols2 = cols.transpose(0, 2, 1).reshape(c_in * k, t)
    wmat = filters.data.reshape(c_out, c_in * k)
    out = _make(wmat @ cols2 + bias.data[:, None], (x, filters, bias))

    def bw(g):
        if filters.requires_grad or filters._parents:
            gw = (g @ cols2.T).reshape(c_out, c_in, k)
            filters._accumulate(gw)
        if bias.requires_grad or bias._parents:
            bias._accumulate(g.sum(axis=1))
        if x.requires_grad or x._parents:
            gcols = (wmat.T @ g).reshape(c_in, k, t)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + t] += gcols[:, j, :]
            x._accumulate(gxp[:, pad : pad + t])

    out._backward = bw
    return out


def maxpool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping max pooling over time. x: (C, T), pool divides T."""
    c, t = x.shape
    if t < pool:
        raise ShapeError(f"time axis {t} shorter than pool {pool}")
    if t % pool != 0:
        raise ShapeError(f"pool {pool} does not divide time axis {t}")
    blocks = x.data.reshape(c, t // pool, pool)
    arg = blocks.argmax(axis=2)
    out = _make(blocks.max(axis=2), (x,))

    def bw(g):
        gx = np.zeros_like(blocks)
        i, j = np.meshgrid(np.arange(c), np.arange(t // pool), indexing="ij")
        gx[i, j, arg] = g
        x._accumulate(gx.reshape(c, t))

    out._backward = bw
    return out


class Parameter:
    """A trainable tensor with its Adam state."""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.name = name
        self.tensor = Tensor(np.asarray(value), requires_grad=True)
        self.adam_m = np.zeros_like(self.tensor.data)
        self.adam_v = np.zeros_like(self.tensor.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = np.asarray(value, dtype=self.tensor.data.dtype)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None


def adam_step(
    params: list[Parameter],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update; zeroes gradients afterwards.

    Runs in place: m, v and the parameter buffers are updated without
    allocating per-parameter temporaries (these tensors dominate memory
    traffic at full network size).
    """
    for p in params:
        p.step_count += 1
        if p.grad is None:
            continue
        g = p.grad
        m, v = p.adam_m, p.adam_v
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        np.multiply(g, g, out=g)
        v += (1.0 - beta2) * g
        # Reuse the gradient buffer for the update term.
        np.sqrt(v, out=g)
        g /= np.sqrt(1.0 - beta2**p.step_count)
        g += eps
        np.divide(m, g, out=g)
        g *= lr / (1.0 - beta1**p.step_count)
        p.tensor.data -= g
        p.zero_grad()


class Dense:
    """Affine layer with optional activation ('none' | 'elu' | 'softmax')."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        activation: str = "none",
        name: str = "dense",
        dtype=np.float32,
    ):
        scale = np.sqrt(2.0 / (in_dim + out_dim))
        w = rng.normal(0.0, scale, size=(in_dim, out_dim)).astype(dtype)
        self.weights = Parameter(w, name=f"{name}.w")
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype), name=f"{name}.b")
        if activation not in ("none", "elu", "softmax"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weights.data.shape[0]:
            raise ShapeError(
                f"dense shape mismatch: input {x.shape}, weights {self.weights.data.shape}"
            )
        out = x @ self.weights.tensor + self.bias.tensor
        if self.activation == "elu":
            return out.elu()
        if self.activation == "softmax":
            return softmax(out, axis=-1)
        return out

    @property
    def parameters(self) -> list[Parameter]:
        return [self.weights, self.bias]


def gradient_check(
    forward,
    params: list[Parameter],
    eps: float = 1e-3,
    max_per_tensor: int = 200,
    seed: int = 0,
    order: int = 4,
    fd_forward=None,
    fd_params: list[Parameter] | None = None,
) -> tuple[float, tuple[str, int]]:
    """Finite-difference check on a parameter subsample.

    ``forward`` is a zero-argument callable returning a scalar Tensor loss;
    it must be deterministic (checked by running it twice). ``order`` selects
    the central stencil (2 or 4 points). When checking a float32 network,
    pass a float64 twin via ``fd_forward``/``fd_params`` so the differences
    are evaluated in shadow precision. Returns (max relative error,
    (tensor name, flat index) of the argmax).
    """
    l1 = forward()
    l2 = forward()
    if not np.array_equal(l1.data, l2.data):
        raise RuntimeError("forward pass is not deterministic")
    for p in params:
        p.zero_grad()
    loss = forward()
    loss.backward()
    analytic = {
        id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for p in params
    }
    if fd_forward is None:
        fd_forward, fd_params = forward, params
    assert fd_params is not None and len(fd_params) == len(params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_loc = ("", -1)
    for p, q in zip(params, fd_params):
        flat = q.data.reshape(-1)
        n = flat.size
        idxs = (
            np.arange(n)
            if n <= max_per_tensor
            else rng.choice(n, max_per_tensor, replace=False)
        )
        ga = analytic[id(p)].reshape(-1)
        for i in idxs:
            orig = flat[i]

            def f_at(v):
                flat[i] = v
                out = float(fd_forward().data)
                flat[i] = orig
                return out

            def stencil(h):
                if order == 4:
                    return (
                        f_at(orig - 2 * h)
                        - 8.0 * f_at(orig - h)
                        + 8.0 * f_at(orig + h)
                        - f_at(orig + 2 * h)
                    ) / (12.0 * h)
                return (f_at(orig + h) - f_at(orig - h)) / (2.0 * h)

            fd = stencil(eps)
            # ELU kinks and maxpool argmax flips make the objective only
            # piecewise smooth; when two step sizes disagree the sample sits
            # on a kink and says nothing about the analytic gradient.
            fd_half = stencil(eps / 2.0)
            if abs(fd - fd_half) > 1e-7 * max(abs(fd), abs(fd_half), 1e-6):
                continue
            denom = max(abs(fd), abs(float(ga[i])), 1e-6)
            rel = abs(fd - float(ga[i])) / denom
            if rel > worst:
                worst = rel
                worst_loc = (p.name, int(i))
        p.zero_grad()
    return worst, worst_loc
