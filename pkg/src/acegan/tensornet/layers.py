"""Layers with hand-written backward passes, float64 throughout.

Every layer caches what it needs in ``forward`` and consumes the cache in
``backward``; parameter gradients are overwritten (not accumulated) on each
backward call.
"""
from __future__ import annotations

import numpy as np
from scipy import fft as sfft

from ..errors import NoForwardCache, ShapeMismatch

INIT_STD = 0.01


class Parameter:
    """A trainable array with its gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Parameter(shape={self.data.shape})"


class Layer:
    def params(self) -> dict[str, Parameter]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _pop(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise NoForwardCache(f"{type(self).__name__}.backward called without a forward pass")
        self._cache = None
        return cache


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


# ----------------------------------------------------------------- activations


def relu(x):
    return np.maximum(x, 0.0)


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class ReLU(Layer):
    def forward(self, x, training=False):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad):
        return grad * self._pop()


class Dense(Layer):
    """``activation(x @ W + b)`` with activation in {relu, linear, softmax}."""

    def __init__(self, n_in: int, n_out: int, activation: str = "linear", rng=None, std: float = INIT_STD):
        if activation not in ("relu", "linear", "softmax"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.W = Parameter(_normal(rng, (n_in, n_out), std))
        self.b = Parameter(np.zeros(n_out))
        self.activation = activation

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise ShapeMismatch(f"Dense expects (batch, {self.W.shape[0]}), got {x.shape}")
        z = x @ self.W.data + self.b.data
        if self.activation == "relu":
            y = relu(z)
        elif self.activation == "softmax":
            y = softmax(z)
        else:
            y = z
        self._cache = (x, z, y)
        return y

    def backward(self, grad):
        x, z, y = self._pop()
        if self.activation == "relu":
            grad = grad * (z > 0)
        elif self.activation == "softmax":
            grad = y * (grad - np.sum(grad * y, axis=1, keepdims=True))
        self.W.grad = x.T @ grad
        self.b.grad = grad.sum(axis=0)
        return grad @ self.W.data.T


class Embedding(Layer):
    def __init__(self, vocab: int, dim: int, rng=None, std: float = INIT_STD):
        rng = rng if rng is not None else np.random.default_rng()
        self.W = Parameter(_normal(rng, (vocab, dim), std))

    def params(self):
        return {"W": self.W}

    def forward(self, idx, training=False):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim != 1 or idx.size and (idx.min() < 0 or idx.max() >= self.W.shape[0]):
            raise ShapeMismatch(f"Embedding indices must be 1-D in [0, {self.W.shape[0]})")
        self._cache = idx
        return self.W.data[idx]

    def backward(self, grad):
        idx = self._pop()
        g = np.zeros_like(self.W.data)
        np.add.at(g, idx, grad)
        self.W.grad = g
        return None


class ElementwiseMultiply(Layer):
    """Two-input product; ``backward`` returns the pair of input gradients."""

    def forward(self, a, b, training=False):
        if a.shape != b.shape:
            raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
        self._cache = (a, b)
        return a * b

    def backward(self, grad):
        a, b = self._pop()
        return grad * b, grad * a


class BatchNorm(Layer):
    """Batch normalisation over axis 0; running stats follow ``r = m * r + (1 - m) * batch``."""

    def __init__(self, dim: int, momentum: float = 0.8, eps: float = 1e-3):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.gamma.shape[0]:
            raise ShapeMismatch(f"BatchNorm expects (batch, {self.gamma.shape[0]}), got {x.shape}")
        if training:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean[...] = m * self.running_mean + (1 - m) * mu
            self.running_var[...] = m * self.running_var + (1 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv, training)
        return self.gamma.data * xhat + self.beta.data

    def backward(self, grad):
        xhat, inv, training = self._pop()
        self.gamma.grad = np.sum(grad * xhat, axis=0)
        self.beta.grad = grad.sum(axis=0)
        dxhat = grad * self.gamma.data
        if not training:
            return dxhat * inv
        n = grad.shape[0]
        return inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))


class Conv2d(Layer):
    """Valid (unpadded) stride-1 cross-correlation on ``(batch, channel, H, W)``.

    Large inputs go through zero-padded real FFTs, small ones through an
    explicit patch matrix; both compute the same sums.
    """

    FFT_MIN_SIZE = 16
    # set on a first layer whose input is data, never a gradient target
    skip_input_grad = False

    def __init__(self, in_ch: int, out_ch: int, k: int, rng=None, std: float = INIT_STD):
        if k < 1:
            raise ValueError("kernel size must be >= 1")
        rng = rng if rng is not None else np.random.default_rng()
        self.W = Parameter(_normal(rng, (out_ch, in_ch, k, k), std))
        self.b = Parameter(np.zeros(out_ch))
        self.k = k

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, training=False):
        O, C, k, _ = self.W.shape
        if x.ndim != 4 or x.shape[1] != C or x.shape[2] < k or x.shape[3] < k:
            raise ShapeMismatch(f"Conv2d({C}->{O}, k={k}) cannot take input {x.shape}")
        if min(x.shape[2:]) >= self.FFT_MIN_SIZE:
            y, cache = self._fft_forward(x)
        else:
            y, cache = self._patch_forward(x)
        self._cache = cache
        return y + self.b.data[None, :, None, None]

    def backward(self, grad):
        cache = self._pop()
        self.b.grad = grad.sum(axis=(0, 2, 3))
        if cache[0] == "fft":
            return self._fft_backward(grad, cache)
        return self._patch_backward(grad, cache)

    # -- FFT route
    def _fft_forward(self, x):
        B, C, H, Wd = x.shape
        O, _, k, _ = self.W.shape
        sh = (sfft.next_fast_len(H, real=True), sfft.next_fast_len(Wd, real=True))
        Xf = sfft.rfft2(x, s=sh)
        fshape = Xf.shape[2:]
        F = fshape[0] * fshape[1]
        Xm = Xf.reshape(B, C, F).transpose(2, 0, 1)  # F, B, C
        Wm = np.conj(sfft.rfft2(self.W.data, s=sh)).reshape(O, C, F).transpose(2, 1, 0)  # F, C, O
        Ym = Xm @ Wm
        y = _cropped_irfft2(Ym.transpose(1, 2, 0).reshape(B, O, *fshape), sh, (H - k + 1, Wd - k + 1))
        return y, ("fft", Xm, x.shape, sh, fshape)

    def _fft_backward(self, grad, cache):
        _, Xm, xshape, sh, fshape = cache
        B, C, H, Wd = xshape
        O, _, k, _ = self.W.shape
        F = fshape[0] * fshape[1]
        Gm = sfft.rfft2(grad, s=sh).reshape(B, O, F).transpose(2, 0, 1)  # F, B, O
        dWm = np.conj(Gm).transpose(0, 2, 1) @ Xm  # F, O, C
        self.W.grad = _cropped_irfft2(dWm.transpose(1, 2, 0).reshape(O, C, *fshape), sh, (k, k))
        if self.skip_input_grad:
            return None
        Wm = sfft.rfft2(self.W.data, s=sh).reshape(O, C, F).transpose(2, 0, 1)  # F, O, C
        return _cropped_irfft2((Gm @ Wm).transpose(1, 2, 0).reshape(B, C, *fshape), sh, (H, Wd))

    # -- patch-matrix route
    def _patch_forward(self, x):
        B, C, H, Wd = x.shape
        O, _, k, _ = self.W.shape
        oh, ow = H - k + 1, Wd - k + 1
        cols = np.empty((B, oh, ow, C, k, k))
        for i in range(k):
            for j in range(k):
                cols[..., i, j] = x[:, :, i : i + oh, j : j + ow].transpose(0, 2, 3, 1)
        cols = cols.reshape(B * oh * ow, C * k * k)
        y = (cols @ self.W.data.reshape(O, -1).T).reshape(B, oh, ow, O).transpose(0, 3, 1, 2)
        return y, ("patch", cols, x.shape)

    def _patch_backward(self, grad, cache):
        _, cols, xshape = cache
        B, C, H, Wd = xshape
        O, _, k, _ = self.W.shape
        oh, ow = H - k + 1, Wd - k + 1
        g = grad.transpose(0, 2, 3, 1).reshape(-1, O)
        self.W.grad = (g.T @ cols).reshape(self.W.shape)
        if self.skip_input_grad:
            return None
        dcols = (g @ self.W.data.reshape(O, -1)).reshape(B, oh, ow, C, k, k)
        dx = np.zeros(xshape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + oh, j : j + ow] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return dx


def _cropped_irfft2(spec, shape, keep):
    """Inverse of ``rfft2(..., s=shape)`` evaluated only on the leading ``keep`` block."""
    rows = sfft.ifft(spec, axis=-2)[..., : keep[0], :]
    return sfft.irfft(rows, n=shape[1], axis=-1)[..., : keep[1]]


def _windows(x, k):
    B, C, H, Wd = x.shape
    ho, wo = H // k, Wd // k
    return x[:, :, : ho * k, : wo * k].reshape(B, C, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho, wo, k * k)


def _unwindow(g, k, shape):
    B, C, H, Wd = shape
    ho, wo = H // k, Wd // k
    dx = np.zeros(shape)
    dx[:, :, : ho * k, : wo * k] = g.reshape(B, C, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho * k, wo * k)
    return dx


class MaxPool(Layer):
    """Non-overlapping max pooling; ties go to the first maximum in row-major order."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("pool size must be >= 1")
        self.k = k

    def forward(self, x, training=False):
        if x.ndim != 4 or min(x.shape[2:]) < self.k:
            raise ShapeMismatch(f"MaxPool({self.k}) cannot take input {x.shape}")
        w = _windows(x, self.k)
        arg = np.argmax(w, axis=-1)
        self._cache = (arg, x.shape)
        return np.take_along_axis(w, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        arg, shape = self._pop()
        g = np.zeros(grad.shape + (self.k * self.k,))
        np.put_along_axis(g, arg[..., None], grad[..., None], axis=-1)
        return _unwindow(g, self.k, shape)


class AvgPool(Layer):
    def __init__(self, k: int):
        if k < 1:
            raise ValueError("pool size must be >= 1")
        self.k = k

    def forward(self, x, training=False):
        if x.ndim != 4 or min(x.shape[2:]) < self.k:
            raise ShapeMismatch(f"AvgPool({self.k}) cannot take input {x.shape}")
        self._cache = x.shape
        return _windows(x, self.k).mean(axis=-1)

    def backward(self, grad):
        shape = self._pop()
        kk = self.k * self.k
        g = np.broadcast_to(grad[..., None] / kk, grad.shape + (kk,))
        return _unwindow(g, self.k, shape)


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by ``1 / (1 - rate)`` at train time."""

    def __init__(self, rate: float = 0.5, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng()

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = 1.0
            return x
        mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._pop()


class Flatten(Layer):
    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._pop())


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def params(self):
        return {f"{i}.{k}": p for i, layer in enumerate(self.layers) for k, p in layer.params().items()}

    def buffers(self):
        return {f"{i}.{k}": b for i, layer in enumerate(self.layers) for k, b in layer.buffers().items()}

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            if grad is None:
                break
        return grad

    def output_shapes(self, input_shape) -> list[tuple]:
        x = np.zeros(input_shape)
        shapes = []
        for layer in self.layers:
            x = layer.forward(x, False)
            layer._cache = None
            shapes.append(x.shape)
        return shapes
