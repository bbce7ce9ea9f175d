"""Minimal convolutional network with explicit backpropagation.

Plain numpy, no autograd.  Activations are channels-last: shape
(batch, height, width, channels) through the convolutional stack and
(batch, features) after flattening.  Convolutions are stride-1 with
'same' zero padding and lower to one large matrix multiplication per
layer: patches are gathered into columns by k*k contiguous block copies
(im2col), and the input gradient scatters back through the adjoint
block adds (col2im).  Downsampling is a 2x2 max pool that drops a
trailing odd row or column and routes gradients to the first maximal
element of each window.

Every layer exposes ``forward(x, train, rng)`` and ``backward(dout)``
and accumulates parameter gradients on itself; :class:`Network` strings
layers together and iterates parameters for the optimizer and for
finite-difference checking.
"""

from __future__ import annotations

import numpy as np


class Layer:
    """Stateless base; layers with parameters override ``params``."""

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def params(self):
        """Yield (name, value_array, grad_array, is_kernel) tuples."""
        return ()


class Conv2D(Layer):
    """Stride-1 'same' convolution with He-normal initialization.

    Weights are stored as (ksize*ksize*in_ch, out_ch), matching the
    patch-column layout, so forward is ``cols @ w + b``.
    """

    def __init__(self, in_ch: int, out_ch: int, ksize: int,
                 rng: np.random.Generator, dtype=np.float32, weight_std=None):
        if ksize % 2 == 0:
            raise ValueError("kernel size must be odd for 'same' padding")
        fan_in = in_ch * ksize * ksize
        std = np.sqrt(2.0 / fan_in) if weight_std is None else weight_std
        self.w = rng.normal(0.0, std, (fan_in, out_ch)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.ksize = ksize
        self.in_ch = in_ch
        self.out_ch = out_ch
        self._cols = None
        self._shape = None

    def forward(self, x, train=False, rng=None):
        n, h, w, c = x.shape
        k = self.ksize
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        cols = np.empty((n, h, w, k, k, c), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                cols[:, :, :, di, dj, :] = xp[:, di:di + h, dj:dj + w, :]
        cols = cols.reshape(n * h * w, k * k * c)
        out = cols @ self.w + self.b
        self._cols = cols
        self._shape = (n, h, w, c)
        return out.reshape(n, h, w, self.out_ch)

    def backward(self, dout):
        n, h, w, c = self._shape
        k = self.ksize
        pad = k // 2
        dflat = dout.reshape(n * h * w, self.out_ch)
        self.dw[...] = self._cols.T @ dflat
        self.db[...] = dflat.sum(axis=0)
        dcols = (dflat @ self.w.T).reshape(n, h, w, k, k, c)
        dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dout.dtype)
        for di in range(k):
            for dj in range(k):
                dxp[:, di:di + h, dj:dj + w, :] += dcols[:, :, :, di, dj, :]
        self._cols = None
        return dxp[:, pad:pad + h, pad:pad + w, :]

    def params(self):
        yield "w", self.w, self.dw, True
        yield "b", self.b, self.db, False


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


class MaxPool2(Layer):
    """2x2 max pool, stride 2; trailing odd rows/columns are dropped.

    Gradients route to the first maximal element of each window (row
    major), which keeps backward deterministic even with tied values.
    """

    def forward(self, x, train=False, rng=None):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        quads = [x[:, di:h2 * 2:2, dj:w2 * 2:2, :] for di, dj in _POOL_OFFSETS]
        out = np.maximum.reduce(quads)
        self._x = x
        self._out = out
        return out

    def backward(self, dout):
        x = self._x
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        dx = np.zeros_like(x, dtype=dout.dtype)
        assigned = np.zeros(self._out.shape, dtype=bool)
        for di, dj in _POOL_OFFSETS:
            quad = x[:, di:h2 * 2:2, dj:w2 * 2:2, :]
            hit = (quad == self._out) & ~assigned
            dx[:, di:h2 * 2:2, dj:w2 * 2:2, :] += np.where(hit, dout, 0)
            assigned |= hit
        self._x = None
        self._out = None
        return dx


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32, weight_std=None):
        std = np.sqrt(2.0 / in_dim) if weight_std is None else weight_std
        self.w = rng.normal(0.0, std, (in_dim, out_dim)).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        self.dw[...] = self._x.T @ dout
        self.db[...] = dout.sum(axis=0)
        self._x = None
        return dout @ self.w.T

    def params(self):
        yield "w", self.w, self.dw, True
        yield "b", self.b, self.db, False


class Dropout(Layer):
    """Inverted dropout; identity when not training or rate is zero."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask


class Network:
    """A plain sequence of layers."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self):
        for i, layer in enumerate(self.layers):
            for name, value, grad, is_kernel in layer.params():
                yield f"layer{i}.{name}", value, grad, is_kernel

    def kernel_arrays(self):
        return [(value, grad) for _, value, grad, k in self.params() if k]

    def state_dict(self):
        return {name: value.copy() for name, value, _, _ in self.params()}

    def load_state(self, state):
        for name, value, _, _ in self.params():
            value[...] = state[name]


def penalty_value(net: Network, l1: float, l2: float) -> float:
    """L1 plus L2 weight penalty over kernel weights; biases are exempt."""
    total = 0.0
    for value, _ in net.kernel_arrays():
        v = value.astype(np.float64)
        if l1:
            total += l1 * np.abs(v).sum()
        if l2:
            total += l2 * (v * v).sum()
    return float(total)


def add_penalty_grads(net: Network, l1: float, l2: float) -> None:
    """Accumulate d(penalty)/dw onto the kernel gradients in place."""
    for value, grad in net.kernel_arrays():
        if l1:
            grad += (l1 * np.sign(value)).astype(grad.dtype)
        if l2:
            grad += (2.0 * l2 * value).astype(grad.dtype)


def activation_margin(net: Network, x: np.ndarray) -> float:
    """Smallest distance of any ReLU input to its kink and any pool
    window to a tie, over a forward pass on ``x``.

    Finite differencing is only trustworthy when this margin exceeds the
    step size by a couple of orders of magnitude.
    """
    margin = np.inf
    out = x
    for layer in net.layers:
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(out).min()))
        if isinstance(layer, MaxPool2):
            n, h, w, c = out.shape
            h2, w2 = h // 2, w // 2
            quads = np.stack(
                [out[:, di:h2 * 2:2, dj:w2 * 2:2, :] for di, dj in _POOL_OFFSETS],
                axis=-1,
            )
            top2 = np.sort(quads, axis=-1)[..., -2:]
            # A tie only disturbs finite differences when the runner-up
            # is on an active (positive) path; tied zeros carry no
            # gradient either way.
            gap = top2[..., 1] - top2[..., 0]
            active = top2[..., 0] > 0
            if active.any():
                margin = min(margin, float(gap[active].min()))
        out = layer.forward(out, train=False)
    return margin
