"""Minimal dense-tensor engine with reverse-mode differentiation.

Covers exactly the layer set the model needs: conv2d, batch norm, ReLU,
2x2 max pool, linear, layer norm, softmax, single-head attention, dropout,
plus MSE and Adam. Backed by numpy; float32 in production, float64 for
gradient checks.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (inference mode).

    Without it, every op closure keeps its forward intermediates (im2col
    buffers, norm statistics, ...) alive until the output is collected.
    """

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._prev: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autograd plumbing ------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            if grad.dtype != self.data.dtype:
                grad = grad.astype(self.data.dtype)
            elif grad.base is not None or not grad.flags.owndata or not grad.flags.writeable:
                grad = grad.copy()
            self.grad = grad
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise / arithmetic ----------------------------------------

    def _make(self, data, prev, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if not _GRAD_ENABLED:
            out.requires_grad = False
            out._prev = ()
            out._backward = None
            return out
        out.requires_grad = any(p.requires_grad or p._prev or p._backward for p in prev)
        out._prev = tuple(p for p in prev if p.requires_grad or p._prev or p._backward)
        out._backward = backward if out._prev else None
        return out

    @staticmethod
    def _wrap(other, dtype):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=dtype))

    def __add__(self, other):
        other = Tensor._wrap(other, self.dtype)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return self._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return self._make(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-Tensor._wrap(other, self.dtype))

    def __rsub__(self, other):
        return Tensor._wrap(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other, self.dtype)
        out_data = self.data * other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return self._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = Tensor._wrap(other, self.dtype)
        out_data = self.data @ other.data

        def backward(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            self._accumulate(_unbroadcast(ga, self.data.shape))
            other._accumulate(_unbroadcast(gb, other.data.shape))

        return self._make(out_data, (self, other), backward)

    def relu(self):
        mask = self.data > 0

        def backward(g):
            self._accumulate(g * mask)

        return self._make(self.data * mask, (self,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(orig))

        return self._make(self.data.reshape(shape), (self,), backward)

    def transpose(self, axes=None):
        axes = tuple(axes) if axes is not None else tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inv))

        return self._make(self.data.transpose(axes), (self,), backward)

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, shape).copy())

        return self._make(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def __getitem__(self, key):
        out_data = self.data[key]
        shape = self.data.shape

        def backward(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.add.at(full, key, g)
            self._accumulate(full)

        return self._make(out_data, (self,), backward)

    def softmax(self, axis=-1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            self._accumulate(y * (g - dot))

        return self._make(y, (self,), backward)


def concat(tensors: list, axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis (used to batch per-utterance scalars)."""
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return tensors[0]._make(out_data, tuple(tensors), backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    diff = pred - target
    return (diff * diff).mean()


# -- layers ---------------------------------------------------------------


class Module:
    training = True

    def parameters(self) -> list[Tensor]:
        params = []
        for value in vars(self).values():
            params.extend(_collect_params(value))
        return params

    def named_state(self, prefix: str = "") -> dict:
        """All persistent arrays (trainable params and buffers), name -> array holder."""
        state = {}
        for name, value in vars(self).items():
            _collect_state(value, f"{prefix}{name}", state)
        return state

    def set_training(self, flag: bool) -> None:
        self.training = flag
        for value in vars(self).values():
            _set_training(value, flag)


def _collect_params(value):
    if isinstance(value, Tensor) and value.requires_grad:
        return [value]
    if isinstance(value, Module):
        return value.parameters()
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_collect_params(v))
        return out
    if isinstance(value, dict):
        out = []
        for v in value.values():
            out.extend(_collect_params(v))
        return out
    return []


def _collect_state(value, name, state):
    if isinstance(value, Tensor):
        state[name] = value
    elif isinstance(value, Module):
        for k, v in value.named_state().items():
            state[f"{name}.{k}"] = v
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _collect_state(v, f"{name}.{i}", state)
    elif isinstance(value, dict):
        for k, v in value.items():
            _collect_state(v, f"{name}.{k}", state)


def _set_training(value, flag):
    if isinstance(value, Module):
        value.set_training(flag)
    elif isinstance(value, (list, tuple)):
        for v in value:
            _set_training(v, flag)
    elif isinstance(value, dict):
        for v in value.values():
            _set_training(v, flag)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(in_features, out_features)),
            requires_grad=True, dtype=dtype,
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


def _im2col_nhwc(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    windows = as_strided(
        xp,
        shape=(n, oh, ow, k, k, c),
        strides=(s0, s1 * stride, s2 * stride, s1, s2, s3),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(n * oh * ow, k * k * c)


class Conv2d(Module):
    """k x k convolution on NHWC tensors, configurable stride and zero padding."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, dtype=np.float32):
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kernel * kernel
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(kernel, kernel, in_ch, out_ch)),
            requires_grad=True, dtype=dtype,
        )
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        k, s, p = self.kernel, self.stride, self.padding
        n, h, w, c = x.data.shape
        if c != self.in_ch:
            raise ValueError(f"conv2d expected {self.in_ch} input channels, got shape {x.data.shape}")
        xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
        hp, wp = h + 2 * p, w + 2 * p
        oh, ow = (hp - k) // s + 1, (wp - k) // s + 1

        cols = _im2col_nhwc(xp, k, s, oh, ow)
        wmat = self.weight.data.reshape(k * k * c, self.out_ch)
        out_data = (cols @ wmat + self.bias.data).reshape(n, oh, ow, self.out_ch)

        weight, bias = self.weight, self.bias

        def backward(g):
            # g: (N, OH, OW, out_ch)
            g2 = g.reshape(-1, self.out_ch)
            weight._accumulate((cols.T @ g2).reshape(weight.data.shape))
            bias._accumulate(g2.sum(axis=0))
            if x.requires_grad or x._prev:
                gcols = (g2 @ wmat.T).reshape(n, oh, ow, k, k, c)
                gxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, i : i + s * oh : s, j : j + s * ow : s, :] += gcols[:, :, :, i, j, :]
                x._accumulate(gxp[:, p : p + h, p : p + w, :] if p else gxp)

        return x._make(out_data, (x, weight, bias), backward)


class BatchNorm2d(Module):
    """Batch norm over NHWC, per-channel statistics."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.running_mean = Tensor(np.zeros(channels), dtype=dtype)
        self.running_var = Tensor(np.ones(channels), dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            mean = x.data.mean(axis=(0, 1, 2))
            var = x.data.var(axis=(0, 1, 2))
            self.running_mean.data = (
                (1 - self.momentum) * self.running_mean.data + self.momentum * mean
            ).astype(x.dtype)
            self.running_var.data = (
                (1 - self.momentum) * self.running_var.data + self.momentum * var
            ).astype(x.dtype)
        else:
            mean, var = self.running_mean.data, self.running_var.data

        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mean) * inv_std
        out_data = self.gamma.data * xhat + self.beta.data

        gamma, beta, training = self.gamma, self.beta, self.training
        m = x.data.shape[0] * x.data.shape[1] * x.data.shape[2]

        def backward(g):
            gamma._accumulate((g * xhat).sum(axis=(0, 1, 2)))
            beta._accumulate(g.sum(axis=(0, 1, 2)))
            if not (x.requires_grad or x._prev):
                return
            dxhat = g * gamma.data
            if training:
                # batch statistics participate in the forward pass
                sum_dxhat = dxhat.sum(axis=(0, 1, 2))
                sum_dxhat_x = (dxhat * xhat).sum(axis=(0, 1, 2))
                gx = (inv_std / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_x)
            else:
                gx = dxhat * inv_std
            x._accumulate(gx)

        return x._make(out_data, (x, gamma, beta), backward)


class MaxPool2x2(Module):
    """2x2/stride-2 max pooling on NHWC; odd trailing rows/columns are dropped."""

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w, c = x.data.shape
        h2, w2 = h // 2, w // 2
        crop = x.data[:, : h2 * 2, : w2 * 2, :]
        win = crop.reshape(n, h2, 2, w2, 2, c)
        out_data = win.max(axis=(2, 4))

        def backward(g):
            mask = win == out_data[:, :, None, :, None, :]
            if x.dtype == np.float64:
                # exact subgradient under ties, for finite-difference checks
                cnt = mask.sum(axis=(2, 4), keepdims=True)
                gwin = mask * (g[:, :, None, :, None, :] / cnt)
            else:
                # ties only occur at ReLU zeros whose grad dies upstream anyway
                gwin = mask * g[:, :, None, :, None, :]
            gx = np.zeros_like(x.data)
            gx[:, : h2 * 2, : w2 * 2, :] = gwin.reshape(n, h2 * 2, w2 * 2, c)
            x._accumulate(gx)

        return x._make(out_data, (x,), backward)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(dim), requires_grad=True, dtype=dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mean = x.data.mean(axis=-1, keepdims=True)
        var = x.data.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mean) * inv_std
        out_data = self.gamma.data * xhat + self.beta.data

        gamma, beta = self.gamma, self.beta
        d = x.data.shape[-1]

        def backward(g):
            axes = tuple(range(g.ndim - 1))
            gamma._accumulate((g * xhat).sum(axis=axes))
            beta._accumulate(g.sum(axis=axes))
            if not (x.requires_grad or x._prev):
                return
            dxhat = g * gamma.data
            gx = (inv_std / d) * (
                d * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            x._accumulate(gx)

        return x._make(out_data, (x, gamma, beta), backward)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        keep = 1.0 - self.p
        mask = (self.rng.random(x.data.shape) < keep).astype(x.dtype) / keep
        return x * Tensor(mask)


class SelfAttention(Module):
    """Scaled dot-product self-attention, single head."""

    def __init__(self, d_model: int, rng: np.random.Generator, dtype=np.float32):
        self.d_model = d_model
        self.wq = Linear(d_model, d_model, rng, dtype)
        self.wk = Linear(d_model, d_model, rng, dtype)
        self.wv = Linear(d_model, d_model, rng, dtype)
        self.wo = Linear(d_model, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        scores = (q @ k.transpose()) * (1.0 / math.sqrt(self.d_model))
        attn = scores.softmax(axis=-1)
        return self.wo(attn @ v)


# -- optimizer ------------------------------------------------------------


class Adam:
    """Adam with bias correction; beta/eps at the cited defaults."""

    def __init__(self, params: list[Tensor], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
