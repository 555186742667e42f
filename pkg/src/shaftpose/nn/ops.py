"""Forward/backward kernels for the fixed op set.

Layout is channels-last throughout: activations are (N, H, W, C) or
(N, F). Convolutions support 3x3 / 1x1 kernels with stride 1 or 2 and
same padding; max pooling is 2x2 stride 2. Layers cache what their
backward pass needs; ``backward`` accumulates into ``Param.grad`` and
returns the input gradient. Every op checks its output for non-finite
values and raises ``NumericError`` when they appear.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericError


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    s = arr.sum(dtype=np.float64)
    if not np.isfinite(s):
        raise NumericError(f"non-finite values in {what}")
    return arr


class Param:
    """A trainable array with an accumulated-gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _im2col(x_pad: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, _, _, c = x_pad.shape
    sn, sh, sw, sc = x_pad.strides
    windows = np.lib.stride_tricks.as_strided(
        x_pad, (n, oh, ow, k, k, c), (sn, sh * stride, sw * stride, sh, sw, sc)
    )
    return windows.reshape(n, oh, ow, k * k * c)


def _col2im(gcols: np.ndarray, pad_shape, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    gx_pad = np.zeros(pad_shape, dtype=gcols.dtype)
    c = pad_shape[3]
    idx = 0
    for ki in range(k):
        for kj in range(k):
            gx_pad[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride, :] += (
                gcols[..., idx * c : (idx + 1) * c]
            )
            idx += 1
    return gx_pad


class Conv2d:
    """Same-padded convolution, kernel 3x3 or 1x1, stride 1 or 2."""

    def __init__(self, name: str, in_ch: int, out_ch: int, ksize: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32, bias: bool = True,
                 input_grad: bool = True):
        if ksize not in (1, 3):
            raise ConfigError(f"conv kernel must be 1 or 3, got {ksize}")
        if stride not in (1, 2):
            raise ConfigError(f"conv stride must be 1 or 2, got {stride}")
        self.ksize = ksize
        self.stride = stride
        self.pad = (ksize - 1) // 2
        self.input_grad = input_grad
        fan_in = ksize * ksize * in_ch
        self.w = Param(f"{name}.w", he_init(rng, (ksize, ksize, in_ch, out_ch), fan_in, dtype))
        # A bias ahead of batchnorm is degenerate (the mean subtraction
        # cancels it), so such convs are built without one.
        self.b = Param(f"{name}.b", np.zeros(out_ch, dtype=dtype)) if bias else None
        self._cache = None

    def params(self) -> list[Param]:
        return [self.w, self.b] if self.b is not None else [self.w]

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        n, h, w_in, cin = x.shape
        if cin != self.w.value.shape[2]:
            raise ConfigError(
                f"conv {self.w.name}: expected {self.w.value.shape[2]} input channels, got {cin}"
            )
        k, s, p = self.ksize, self.stride, self.pad
        oh = (h + 2 * p - k) // s + 1
        ow = (w_in + 2 * p - k) // s + 1
        x_pad = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        cols = _im2col(x_pad, k, s, oh, ow)
        cout = self.w.value.shape[3]
        w_mat = self.w.value.reshape(-1, cout)
        y = cols.reshape(-1, w_mat.shape[0]) @ w_mat
        if self.b is not None:
            y += self.b.value
        self._cache = (cols, x_pad.shape, (n, h, w_in, cin), oh, ow)
        return check_finite(y.reshape(n, oh, ow, cout), self.w.name)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        cols, pad_shape, x_shape, oh, ow = self._cache
        k, s, p = self.ksize, self.stride, self.pad
        cout = self.w.value.shape[3]
        gy_mat = gy.reshape(-1, cout)
        cols_mat = cols.reshape(gy_mat.shape[0], -1)
        self.w.grad += (cols_mat.T @ gy_mat).reshape(self.w.value.shape)
        if self.b is not None:
            self.b.grad += gy_mat.sum(axis=0)
        if not self.input_grad:
            return None
        gcols = (gy_mat @ self.w.value.reshape(-1, cout).T).reshape(cols.shape)
        gx_pad = _col2im(gcols, pad_shape, k, s, oh, ow)
        if p:
            gx_pad = gx_pad[:, p:-p, p:-p, :]
        return gx_pad


class Dense:
    def __init__(self, name: str, in_f: int, out_f: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.w = Param(f"{name}.w", he_init(rng, (in_f, out_f), in_f, dtype))
        self.b = Param(f"{name}.b", np.zeros(out_f, dtype=dtype))
        self._x = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        self._x = x
        return check_finite(x @ self.w.value + self.b.value, self.w.name)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        self.w.grad += self._x.T @ gy
        self.b.grad += gy.sum(axis=0)
        return gy @ self.w.value.T


class BatchNorm:
    """Batch normalization over all axes but the last (channel) axis.

    Train mode normalizes with biased batch statistics and updates the
    running estimates; eval mode is a fixed affine map using the running
    statistics, independent of batch composition.
    """

    def __init__(self, name: str, channels: int, momentum: float = 0.9, eps: float = 1e-5,
                 dtype=np.float32):
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def buffers(self) -> dict[str, np.ndarray]:
        stem = self.gamma.name.rsplit(".", 1)[0]
        return {f"{stem}.running_mean": self.running_mean,
                f"{stem}.running_var": self.running_var}

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1.0 - m) * mean).astype(x.dtype)
            self.running_var = (m * self.running_var + (1.0 - m) * var).astype(x.dtype)
            self._cache = ("train", xhat, inv, x.shape)
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv
            self._cache = ("eval", xhat, inv, x.shape)
        y = self.gamma.value * xhat + self.beta.value
        return check_finite(y, self.gamma.name)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        mode, xhat, inv, shape = self._cache
        axes = tuple(range(gy.ndim - 1))
        self.gamma.grad += (gy * xhat).sum(axis=axes)
        self.beta.grad += gy.sum(axis=axes)
        gxhat = gy * self.gamma.value
        if mode == "eval":
            return gxhat * inv
        n = gy.size // gy.shape[-1]
        return (inv / n) * (
            n * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes)
        )


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        self._mask = x > 0  # subgradient at 0 is 0
        return x * self._mask

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return gy * self._mask


class Tanh:
    def __init__(self):
        self._y = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        self._y = np.tanh(x)
        return self._y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return gy * (1.0 - self._y * self._y)


class MaxPool2:
    """2x2 stride-2 max pooling; even spatial dims required.

    Gradient goes to the first maximum in scan order when values tie.
    """

    def __init__(self):
        self._cache = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"maxpool2 needs even spatial dims, got {h}x{w}")
        windows = (
            x.reshape(n, h // 2, 2, w // 2, 2, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, h // 2, w // 2, c, 4)
        )
        idx = windows.argmax(axis=-1)
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, (n, h, w, c))
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        idx, (n, h, w, c) = self._cache
        onehot = idx[..., None] == np.arange(4, dtype=idx.dtype)
        gwin = gy[..., None] * onehot
        return (
            gwin.reshape(n, h // 2, w // 2, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, h, w, c)
        )


class ConcatChannels:
    """Concatenation along the channel (last) axis."""

    def __init__(self):
        self._splits = None

    def params(self) -> list[Param]:
        return []

    def forward(self, xs: list[np.ndarray], train: bool = True) -> np.ndarray:
        self._splits = np.cumsum([x.shape[-1] for x in xs])[:-1]
        return np.concatenate(xs, axis=-1)

    def backward(self, gy: np.ndarray) -> list[np.ndarray]:
        return np.split(gy, self._splits, axis=-1)
