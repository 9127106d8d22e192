"""Layers with explicit forward/backward passes over NCHW numpy arrays."""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import GraphStateError, ShapeMismatch


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 1.0) -> np.ndarray:
    std = gain * np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Module:
    """Base layer. Parameters and gradients live in dicts keyed by local name."""

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._cache = None

    def children(self) -> List[Tuple[str, "Module"]]:
        return []

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __call__(self, x, training: bool = False):
        return self.forward(x, training)

    def _take_cache(self):
        if self._cache is None:
            raise GraphStateError(f"{type(self).__name__}.backward called without a training forward pass")
        cache, self._cache = self._cache, None
        return cache

    # -- traversal ------------------------------------------------------------

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        for prefix, mod in self.named_modules():
            for k, v in mod.params.items():
                yield (f"{prefix}.{k}" if prefix else k), v

    def named_gradients(self) -> Iterator[Tuple[str, np.ndarray]]:
        for prefix, mod in self.named_modules():
            for k in mod.params:
                g = mod.grads.get(k)
                if g is None:
                    g = np.zeros_like(mod.params[k])
                yield (f"{prefix}.{k}" if prefix else k), g

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for prefix, mod in self.named_modules():
            for k, v in mod.buffers.items():
                yield (f"{prefix}.{k}" if prefix else k), v

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = dict(self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ShapeMismatch(f"state mismatch: missing={missing} unexpected={extra}")
        for prefix, mod in self.named_modules():
            for store in (mod.params, mod.buffers):
                for k in store:
                    name = f"{prefix}.{k}" if prefix else k
                    value = state[name]
                    if value.shape != store[k].shape:
                        raise ShapeMismatch(f"{name}: expected {store[k].shape}, got {value.shape}")
                    store[k] = np.array(value, dtype=store[k].dtype, copy=True)

    def zero_grad(self) -> None:
        for _, mod in self.named_modules():
            for k, v in mod.params.items():
                mod.grads[k] = np.zeros_like(v)


class Conv2d(Module):
    """k x k convolution (k = 1 or 3), zero padding, stride 1, output size = input size."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32, gain: float = 1.0):
        super().__init__()
        if kernel_size not in (1, 3):
            raise ValueError("kernel_size must be 1 or 3")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels, self.k = in_channels, out_channels, kernel_size
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype, gain)
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        # input layers can skip the (costly) gradient with respect to their input
        self.input_grad = True

    def _cols(self, x: np.ndarray) -> np.ndarray:
        """im2col with column order (kernel row, kernel col, channel)."""
        n, c, h, w = x.shape
        xt = x.transpose(0, 2, 3, 1)
        if self.k == 1:
            return xt.reshape(n * h * w, c)
        xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
        xp[:, 1:-1, 1:-1] = xt
        cols = np.empty((n, h, w, 9, c), dtype=x.dtype)
        for i in range(3):
            for j in range(3):
                cols[:, :, :, 3 * i + j] = xp[:, i:i + h, j:j + w]
        return cols.reshape(n * h * w, 9 * c)

    def _wmat(self) -> np.ndarray:
        return self.params["weight"].transpose(0, 2, 3, 1).reshape(self.out_channels, -1)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"Conv2d expects (N, {self.in_channels}, H, W), got {x.shape}")
        n, _, h, w = x.shape
        cols = self._cols(x)
        out = cols @ self._wmat().T
        if "bias" in self.params:
            out += self.params["bias"]
        if training:
            self._cache = (cols, x.shape)
        return out.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy):
        cols, (n, c, h, w) = self._take_cache()
        k = self.k
        d2 = dy.transpose(0, 2, 3, 1).reshape(n * h * w, self.out_channels)
        gw = (d2.T @ cols).reshape(self.out_channels, k, k, c)
        self.grads["weight"] = gw.transpose(0, 3, 1, 2)
        if "bias" in self.params:
            self.grads["bias"] = d2.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = d2 @ self._wmat()
        if k == 1:
            return dcols.reshape(n, h, w, c).transpose(0, 3, 1, 2)
        dcols = dcols.reshape(n, h, w, 9, c)
        dxp = np.zeros((n, h + 2, w + 2, c), dtype=dy.dtype)
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + w] += dcols[:, :, :, 3 * i + j]
        return dxp[:, 1:-1, 1:-1].transpose(0, 3, 1, 2)


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics.

    Running stats follow ``r <- momentum * r + (1 - momentum) * batch`` using
    the biased batch variance, so repeated identical batches converge to the
    batch statistics exactly.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"BatchNorm2d expects (N, {self.channels}, H, W), got {x.shape}")
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mean).astype(x.dtype)
            self.buffers["running_var"] = (m * self.buffers["running_var"] + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        if training:
            self._cache = (xhat, inv_std)
        return (gamma * xhat + beta).astype(x.dtype, copy=False)

    def backward(self, dy):
        xhat, inv_std = self._take_cache()
        self.grads["gamma"] = (dy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = dy.sum(axis=(0, 2, 3))
        m = dy.shape[0] * dy.shape[2] * dy.shape[3]
        dxhat = dy * self.params["gamma"][None, :, None, None]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)


class ReLU(Module):
    def forward(self, x, training=False):
        out = np.maximum(x, 0)
        if training:
            self._cache = x > 0
        return out

    def backward(self, dy):
        return dy * self._take_cache()


class Tanh(Module):
    def forward(self, x, training=False):
        out = np.tanh(x)
        if training:
            self._cache = out
        return out

    def backward(self, dy):
        out = self._take_cache()
        return dy * (1 - out * out)


class Sigmoid(Module):
    def forward(self, x, training=False):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        if training:
            self._cache = out
        return out

    def backward(self, dy):
        out = self._take_cache()
        return dy * out * (1 - out)


class Softmax(Module):
    """Row-wise softmax over the last axis."""

    def forward(self, x, training=False):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=-1, keepdims=True)
        if training:
            self._cache = out
        return out

    def backward(self, dy):
        out = self._take_cache()
        return out * (dy - (dy * out).sum(axis=-1, keepdims=True))


class Flatten(Module):
    def forward(self, x, training=False):
        if training:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._take_cache())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, gain: float = 1.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = he_normal(rng, (in_features, out_features), in_features, dtype, gain)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"Linear expects (N, {self.in_features}), got {x.shape}")
        if training:
            self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy):
        x = self._take_cache()
        self.grads["weight"] = x.T @ dy
        self.grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["weight"].T


class Sequential(Module):
    def __init__(self, layers: Sequence[Module]):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class ResidualBlock(Module):
    """conv-bn-relu-conv-bn, add the skip connection, relu."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.body = Sequential([
            Conv2d(channels, channels, 3, bias=False, rng=rng, dtype=dtype),
            BatchNorm2d(channels, dtype=dtype),
            ReLU(),
            Conv2d(channels, channels, 3, bias=False, rng=rng, dtype=dtype),
            BatchNorm2d(channels, dtype=dtype),
        ])
        self.out_relu = ReLU()

    def children(self):
        return [("body", self.body), ("relu", self.out_relu)]

    def forward(self, x, training=False):
        return self.out_relu.forward(self.body.forward(x, training) + x, training)

    def backward(self, dy):
        d = self.out_relu.backward(dy)
        return self.body.backward(d) + d
