"""Layer types and their batched numpy kernels.

Every kernel works on a leading batch axis: images are ``(N, C, H, W)`` and
dense activations ``(N, D)``.  Parameters keep whatever float dtype they were
created with (float32 by default), and inputs are cast to that dtype by the
network before reaching a layer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def out_size(size: int, k: int, stride: int, padding: int = 0) -> int:
    return (size + 2 * padding - k) // stride + 1


@dataclass(frozen=True)
class Conv2D:
    weight: np.ndarray  # (out, in, k, k)
    bias: np.ndarray  # (out,)
    stride: int = 1
    padding: int = 0

    kind = "conv"

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ValueError(f"conv weight must be (out, in, k, k), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("conv bias does not match out_channels")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        return (self.out_channels, out_size(h, k, s, p), out_size(w, k, s, p))

    def _cols(self, x):
        """Column tensor (N, C*k*k, Ho*Wo) built from k*k strided slices."""
        k, s, p = self.kernel, self.stride, self.padding
        n, c, h, w = x.shape
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        ho, wo = out_size(h, k, s, p), out_size(w, k, s, p)
        cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = x[:, :, i:i + s * ho:s, j:j + s * wo:s]
        return cols.reshape(n, c * k * k, ho * wo), (ho, wo)

    def linear(self, x):
        """Forward pass without the bias term."""
        cols, (ho, wo) = self._cols(x)
        y = np.matmul(self.weight.reshape(self.out_channels, -1), cols)
        return y.reshape(len(x), self.out_channels, ho, wo)

    def forward(self, x):
        return self.linear(x) + self.bias[:, None, None]

    def backward_input(self, grad, in_shape):
        """Transposed convolution of ``grad`` back onto an input of ``in_shape``."""
        n, c, h, w = in_shape
        k, s, p = self.kernel, self.stride, self.padding
        _, _, ho, wo = grad.shape
        wmat = self.weight.reshape(self.out_channels, -1)
        dcols = np.matmul(wmat.T, grad.reshape(n, self.out_channels, ho * wo))
        dcols = dcols.reshape(n, c, k, k, ho, wo)
        dx = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, i, j]
        if p:
            dx = dx[:, :, p:p + h, p:p + w]
        return dx

    def param_grads(self, x, grad):
        cols, _ = self._cols(x)
        g = grad.reshape(len(x), self.out_channels, -1)
        dw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(self.weight.shape)
        return dw, g.sum(axis=(0, 2))

    def with_params(self, weight, bias):
        return replace(self, weight=weight, bias=bias)


@dataclass(frozen=True)
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    kind = "dense"

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("dense weight must be (out, in) with bias (out,)")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def output_shape(self, shape):
        if tuple(shape) != (self.in_dim,):
            raise ValueError(f"dense expects ({self.in_dim},), got {tuple(shape)}")
        return (self.out_dim,)

    def forward(self, x):
        return x @ self.weight.T + self.bias

    def linear(self, x):
        return x @ self.weight.T

    def backward_input(self, grad, in_shape):
        return grad @ self.weight

    def param_grads(self, x, grad):
        return grad.T @ x, grad.sum(axis=0)

    def with_params(self, weight, bias):
        return replace(self, weight=weight, bias=bias)


@dataclass(frozen=True)
class ReLU:
    kind = "relu"

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x):
        return np.maximum(x, 0)


@dataclass(frozen=True)
class MaxPool2D:
    kernel: int = 2
    stride: int = 2

    kind = "maxpool"

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("pool kernel and stride must be >= 1")

    def output_shape(self, shape):
        c, h, w = shape
        return (c, out_size(h, self.kernel, self.stride), out_size(w, self.kernel, self.stride))

    def _views(self, x):
        k, s = self.kernel, self.stride
        _, _, h, w = x.shape
        ho, wo = out_size(h, k, s), out_size(w, k, s)
        return [x[:, :, i:i + s * ho:s, j:j + s * wo:s] for i in range(k) for j in range(k)]

    def forward(self, x):
        views = self._views(x)
        y = views[0].copy()
        for v in views[1:]:
            np.maximum(y, v, out=y)
        return y

    def forward_with_winners(self, x):
        """Pooled map plus the flat in-window index of every window's winner.

        Ties go to the first position in row-major window order.
        """
        y = self.forward(x)
        views = self._views(x)
        winners = np.zeros(y.shape, dtype=np.int16)
        for pos in range(len(views) - 1, 0, -1):
            winners[views[pos] == y] = pos
        winners[views[0] == y] = 0
        return y, winners

    def route(self, values, winners, in_shape):
        """Send each pooled value back to the input position that won its window."""
        n, c, ho, wo = values.shape
        k, s = self.kernel, self.stride
        rows = np.arange(ho)[:, None] * s + winners // k
        cols = np.arange(wo)[None, :] * s + winners % k
        out = np.zeros(in_shape, dtype=values.dtype)
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        if k <= s:
            out[ni, ci, rows, cols] = values
        else:
            np.add.at(out, (ni, ci, rows, cols), values)
        return out


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1)


Layer = Conv2D | Dense | ReLU | MaxPool2D | Flatten
PARAMETRIC = (Conv2D, Dense)
