"""Minimal layer library with explicit forward/backward passes.

Layers cache whatever their backward pass needs on `self`, so a layer
instance handles one forward/backward pair at a time (single-threaded per
model instance). All layers are dtype-preserving; training runs in float32,
the gradient-check harness in float64.
"""

from __future__ import annotations

import numpy as np


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Standardize(Layer):
    """Per-sample zero-mean unit-variance normalization over all features."""

    def __init__(self, eps=1e-5):
        super().__init__()
        self.eps = eps

    def forward(self, x, train=False):
        axes = tuple(range(1, x.ndim))
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + self.eps)
        self.y = (x - mu) * self.inv
        self.n = int(np.prod(x.shape[1:]))
        return self.y

    def backward(self, dy):
        axes = tuple(range(1, dy.ndim))
        m1 = dy.mean(axis=axes, keepdims=True)
        m2 = (dy * self.y).mean(axis=axes, keepdims=True)
        return self.inv * (dy - m1 - self.y * m2)


class ReLU(Layer):
    def forward(self, x, train=False):
        self.mask = x > 0
        return x * self.mask

    def backward(self, dy):
        return dy * self.mask


class Linear(Layer):
    def __init__(self, d_in, d_out, rng, dtype=np.float32):
        super().__init__()
        self.params = {
            "W": he_uniform(rng, (d_in, d_out), d_in, dtype),
            "b": np.zeros(d_out, dtype=dtype),
        }

    def forward(self, x, train=False):
        self.x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads = {"W": self.x.T @ dy, "b": dy.sum(axis=0)}
        return dy @ self.params["W"].T


class Conv2d(Layer):
    """3x3 (or kxk) conv, stride s, 'same'-style padding of k//2."""

    def __init__(self, c_in, c_out, rng, k=3, stride=2, dtype=np.float32):
        super().__init__()
        self.k, self.stride, self.c_in, self.c_out = k, stride, c_in, c_out
        fan_in = c_in * k * k
        self.params = {
            "W": he_uniform(rng, (c_out, c_in, k, k), fan_in, dtype),
            "b": np.zeros(c_out, dtype=dtype),
        }

    def _im2col(self, xp, ho, wo):
        b, c = xp.shape[:2]
        k, s = self.k, self.stride
        cols = np.empty((b, c, k, k, ho, wo), dtype=xp.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = xp[:, :, ki:ki + s * ho:s,
                                        kj:kj + s * wo:s]
        return cols.reshape(b, c * k * k, ho * wo)

    def forward(self, x, train=False):
        b, c, h, w = x.shape
        k, s = self.k, self.stride
        p = k // 2
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        self.cols = self._im2col(xp, ho, wo)
        self.xshape = x.shape
        w2 = self.params["W"].reshape(self.c_out, -1)
        y = w2 @ self.cols
        return y.reshape(b, self.c_out, ho, wo) + \
            self.params["b"][None, :, None, None]

    def backward(self, dy):
        b, _, ho, wo = dy.shape
        k, s = self.k, self.stride
        p = k // 2
        dy2 = dy.reshape(b, self.c_out, ho * wo)
        w2 = self.params["W"].reshape(self.c_out, -1)
        dw = np.ascontiguousarray(dy2.transpose(1, 0, 2)).reshape(
            self.c_out, -1) @ np.ascontiguousarray(
            self.cols.transpose(0, 2, 1)).reshape(-1, self.cols.shape[1])
        self.grads = {"W": dw.reshape(self.params["W"].shape),
                      "b": dy.sum(axis=(0, 2, 3))}
        dcols = np.matmul(w2.T, dy2)
        dcols = dcols.reshape(b, self.c_in, k, k, ho, wo)
        _, _, h, w = self.xshape
        dxp = np.zeros((b, self.c_in, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += \
                    dcols[:, :, ki, kj]
        return dxp[:, :, p:p + h, p:p + w]


class GlobalAvgPool(Layer):
    def forward(self, x, train=False):
        self.xshape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        b, c, h, w = self.xshape
        return np.broadcast_to(dy[:, :, None, None] / (h * w),
                               self.xshape).copy()


class AddChannel(Layer):
    """(B, H, W) -> (B, 1, H, W)."""

    def forward(self, x, train=False):
        return x[:, None, :, :]

    def backward(self, dy):
        return dy[:, 0]


class L2Normalize(Layer):
    def __init__(self, eps=1e-12):
        super().__init__()
        self.eps = eps

    def forward(self, x, train=False):
        self.norm = np.sqrt((x ** 2).sum(axis=1, keepdims=True)) + self.eps
        self.y = x / self.norm
        return self.y

    def backward(self, dy):
        dot = (dy * self.y).sum(axis=1, keepdims=True)
        return (dy - self.y * dot) / self.norm


class Dropout(Layer):
    def __init__(self, rate, seed=0):
        super().__init__()
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def forward(self, x, train=False):
        if not train or self.rate <= 0:
            self.mask = None
            return x
        keep = 1.0 - self.rate
        self.mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self.mask

    def backward(self, dy):
        if self.mask is None:
            return dy
        return dy * self.mask


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Sequential):
                yield from layer.named_params(f"{prefix}{i}.")
            else:
                for name in layer.params:
                    yield f"{prefix}{i}.{name}", layer, name
