"""Minimal dense-tensor layers with hand-written forward/backward passes.

Covers exactly what the two network architectures need: valid-mode 2-D
convolution with rectangular kernels and strides, max pooling, dense layers,
ReLU, inverted dropout, batch normalization, softmax cross-entropy, a GRU
cell, Adam/SGD updates and a central-finite-difference gradient checker.
Layouts are (batch, channels, height, width) for 4-D tensors. Training runs
in float32 by default; gradient checks construct layers with float64.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NNError(ValueError):
    pass


class ShapeMismatch(NNError):
    pass


class KernelTooLarge(NNError):
    pass


class InvalidClassIndex(NNError):
    pass


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    if kernel > size:
        raise KernelTooLarge(f"kernel {kernel} exceeds input extent {size}")
    return (size - kernel) // stride + 1


class Layer:
    """Forward/backward pair with named parameters and accumulated grads."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self):
        for k in self.params:
            self.grads[k] = np.zeros_like(self.params[k])


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel, stride=(1, 1),
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        self.kh, self.kw = kernel
        self.sh, self.sw = stride
        if self.sh < 1 or self.sw < 1:
            raise NNError("stride components must be >= 1")
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * self.kh * self.kw
        limit = np.sqrt(1.0 / fan_in)
        self.params = {
            "W": rng.uniform(-limit, limit, (out_channels, in_channels, self.kh, self.kw)).astype(dtype),
            "b": np.zeros(out_channels, dtype=dtype),
        }
        self.zero_grads()

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.params["W"].shape[1]:
            raise ShapeMismatch(f"conv2d expects (N,{self.params['W'].shape[1]},H,W), got {x.shape}")
        n, c, h, w = x.shape
        oh = conv_output_size(h, self.kh, self.sh)
        ow = conv_output_size(w, self.kw, self.sw)
        win = sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))[:, :, :: self.sh, :: self.sw]
        # contiguous im2col so the contraction is one BLAS matmul
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * oh * ow, c * self.kh * self.kw
        )
        self._cache = (x.shape, cols, oh, ow)
        wm = self.params["W"].reshape(self.params["W"].shape[0], -1)
        out = (cols @ wm.T).reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out)  # downstream elementwise ops run faster
        out += self.params["b"][None, :, None, None]
        return out

    def backward(self, dout):
        x_shape, cols, oh, ow = self._cache
        n, c = x_shape[0], x_shape[1]
        f = dout.shape[1]
        dout2 = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
        self.grads["W"] += (dout2.T @ cols).reshape(self.params["W"].shape)
        self.grads["b"] += dout2.sum(axis=0)
        wm = self.params["W"].reshape(f, -1)
        dcols = (dout2 @ wm).reshape(n, oh, ow, c, self.kh, self.kw)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for i in range(self.kh):
            for j in range(self.kw):
                patch = dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                dx[:, :, i : i + self.sh * oh : self.sh, j : j + self.sw * ow : self.sw] += patch
        return dx


class MaxPool2d(Layer):
    def __init__(self, kernel, stride=None):
        super().__init__()
        self.kh, self.kw = kernel
        self.sh, self.sw = stride if stride is not None else kernel

    def _disjoint(self) -> bool:
        return self.sh >= self.kh and self.sw >= self.kw

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ShapeMismatch(f"maxpool expects a 4-D tensor, got {x.shape}")
        n, c, h, w = x.shape
        oh = conv_output_size(h, self.kh, self.sh)
        ow = conv_output_size(w, self.kw, self.sw)
        win = sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))[:, :, :: self.sh, :: self.sw]
        flat = win.reshape(n, c, oh, ow, self.kh * self.kw)
        arg = np.argmax(flat, axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        x_shape, arg = self._cache
        n, c, oh, ow = dout.shape
        dx = np.zeros(x_shape, dtype=dout.dtype)
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        hpos = np.arange(oh)[None, None, :, None] * self.sh + arg // self.kw
        wpos = np.arange(ow)[None, None, None, :] * self.sw + arg % self.kw
        if self._disjoint():
            # windows never overlap, so a plain scatter assignment suffices
            dx[ni, ci, hpos, wpos] = dout
        else:
            np.add.at(dx, (ni, ci, hpos, wpos), dout)
        return dx


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        limit = np.sqrt(1.0 / in_dim)
        self.params = {
            "W": rng.uniform(-limit, limit, (in_dim, out_dim)).astype(dtype),
            "b": np.zeros(out_dim, dtype=dtype),
        }
        self.zero_grads()

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.params["W"].shape[0]:
            raise ShapeMismatch(f"dense expects (N,{self.params['W'].shape[0]}), got {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._cache
        self.grads["W"] += x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"].T


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        dout *= self._mask  # in place: upstream gradients are never reused
        return dout


class Dropout(Layer):
    """Inverted dropout: retained units scaled by 1/(1-rate) while training."""

    def __init__(self, rate: float, seed: int = 0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise NNError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng(seed)
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask.astype(x.dtype)

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask.astype(dout.dtype)


class Flatten(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class BatchNorm(Layer):
    """Batch statistics while training, running statistics at inference.

    For 2-D input normalizes per feature; for 4-D input per channel.
    """

    def __init__(self, num_features, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params = {
            "gamma": np.ones(num_features, dtype=dtype),
            "beta": np.zeros(num_features, dtype=dtype),
        }
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.zero_grads()

    def _axes_and_shape(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        raise ShapeMismatch(f"batchnorm expects 2-D or 4-D input, got {x.shape}")

    def forward(self, x, training=False):
        axes, shape = self._axes_and_shape(x)
        gamma = self.params["gamma"].reshape(shape)
        beta = self.params["beta"].reshape(shape)
        if training:
            m = x.size / self.params["gamma"].size
            mean = x.mean(axis=axes, dtype=np.float64)
            if x.ndim == 4:
                sq = np.einsum("nchw,nchw->c", x, x, optimize=True, dtype=np.float64)
            else:
                sq = np.einsum("nd,nd->d", x, x, optimize=True, dtype=np.float64)
            var = np.maximum(sq / m - mean**2, 0.0)
            self.running_mean = ((1 - self.momentum) * self.running_mean + self.momentum * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - self.momentum) * self.running_var + self.momentum * var).astype(self.running_var.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        ivstd = (1.0 / np.sqrt(var.reshape(shape) + self.eps)).astype(x.dtype)
        xhat = x - mean.reshape(shape).astype(x.dtype)
        xhat *= ivstd
        out = xhat * gamma
        out += beta
        self._cache = (xhat, ivstd, axes, shape, training)
        return out

    def backward(self, dout):
        xhat, ivstd, axes, shape, training = self._cache
        gamma = self.params["gamma"].reshape(shape)
        if dout.ndim == 4:
            self.grads["gamma"] += np.einsum("nchw,nchw->c", dout, xhat, optimize=True)
        else:
            self.grads["gamma"] += np.einsum("nd,nd->d", dout, xhat, optimize=True)
        self.grads["beta"] += dout.sum(axis=axes)
        dxhat = dout * gamma
        if not training:
            dxhat *= ivstd
            return dxhat
        m = dout.size / dout.shape[1 if dout.ndim == 4 else -1]
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        if dout.ndim == 4:
            sum_dxhat_xhat = np.einsum("nchw,nchw->c", dxhat, xhat, optimize=True).reshape(shape)
        else:
            sum_dxhat_xhat = np.einsum("nd,nd->d", dxhat, xhat, optimize=True).reshape(shape)
        # dx built in place on dxhat: m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat),
        # all scaled by ivstd/m
        dxhat *= m
        dxhat -= sum_dxhat
        xhat *= sum_dxhat_xhat.astype(xhat.dtype)
        dxhat -= xhat
        dxhat *= ivstd / np.asarray(m, dtype=dxhat.dtype)
        return dxhat


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, gold: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    gold = np.asarray(gold)
    n, k = logits.shape
    if gold.shape != (n,):
        raise ShapeMismatch(f"gold must be ({n},), got {gold.shape}")
    if np.any((gold < 0) | (gold >= k)):
        raise InvalidClassIndex(f"class indices must be in [0,{k})")
    p = softmax(logits.astype(np.float64, copy=False))
    loss = float(-np.log(np.maximum(p[np.arange(n), gold], 1e-300)).mean())
    dlogits = p.astype(logits.dtype)
    dlogits[np.arange(n), gold] -= 1.0
    return loss, dlogits / n


class GruCell(Layer):
    """Single GRU cell; candidate activation ReLU (the default) or tanh.

    h_t = (1 - z) * h_prev + z * act(x W_xc + (r * h_prev) W_hc + b_c).
    Hidden values are clipped to [-clip, clip]; the ReLU candidate can
    otherwise grow without bound over long unrolls.
    """

    def __init__(self, input_dim, hidden, activation: str = "relu", clip: float = 50.0,
                 update_bias_init: float = 0.0,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        if activation not in ("relu", "tanh"):
            raise NNError(f"unknown candidate activation: {activation!r}")
        self.input_dim = input_dim
        self.hidden = hidden
        self.activation = activation
        self.clip = clip
        rng = rng or np.random.default_rng(0)
        lx = np.sqrt(1.0 / input_dim)
        lh = np.sqrt(1.0 / hidden)
        def u(limit, shape):
            return rng.uniform(-limit, limit, shape).astype(dtype)
        # a negative update-gate bias makes a fresh cell carry state, so the
        # final hidden state survives long zero-padded tails
        self.params = {
            "Wxz": u(lx, (input_dim, hidden)), "Whz": u(lh, (hidden, hidden)),
            "bz": np.full(hidden, update_bias_init, dtype=dtype),
            "Wxr": u(lx, (input_dim, hidden)), "Whr": u(lh, (hidden, hidden)), "br": np.zeros(hidden, dtype=dtype),
            "Wxc": u(lx, (input_dim, hidden)), "Whc": u(lh, (hidden, hidden)), "bc": np.zeros(hidden, dtype=dtype),
        }
        self.zero_grads()

    def step(self, x, h_prev):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeMismatch(f"gru step expects (N,{self.input_dim}), got {x.shape}")
        if h_prev.shape != (x.shape[0], self.hidden):
            raise ShapeMismatch(f"h_prev must be ({x.shape[0]},{self.hidden}), got {h_prev.shape}")
        p = self.params
        z = _sigmoid(x @ p["Wxz"] + h_prev @ p["Whz"] + p["bz"])
        r = _sigmoid(x @ p["Wxr"] + h_prev @ p["Whr"] + p["br"])
        rh = r * h_prev
        a = x @ p["Wxc"] + rh @ p["Whc"] + p["bc"]
        c = np.maximum(a, 0.0) if self.activation == "relu" else np.tanh(a)
        h_raw = (1.0 - z) * h_prev + z * c
        h = np.clip(h_raw, -self.clip, self.clip)
        cache = (x, h_prev, z, r, rh, a, c, h_raw)
        return h, cache

    def backward_step(self, dh, cache):
        x, h_prev, z, r, rh, a, c, h_raw = cache
        p, g = self.params, self.grads
        dh = dh * ((h_raw > -self.clip) & (h_raw < self.clip))
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        da = dc * (a > 0) if self.activation == "relu" else dc * (1.0 - c * c)
        g["Wxc"] += x.T @ da
        g["Whc"] += rh.T @ da
        g["bc"] += da.sum(axis=0)
        drh = da @ p["Whc"].T
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        g["Wxz"] += x.T @ dz_pre
        g["Whz"] += h_prev.T @ dz_pre
        g["bz"] += dz_pre.sum(axis=0)
        g["Wxr"] += x.T @ dr_pre
        g["Whr"] += h_prev.T @ dr_pre
        g["br"] += dr_pre.sum(axis=0)
        dx = da @ p["Wxc"].T + dz_pre @ p["Wxz"].T + dr_pre @ p["Wxr"].T
        dh_prev = dh_prev + dz_pre @ p["Whz"].T + dr_pre @ p["Whr"].T
        return dx, dh_prev


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                out[f"{i}.{k}"] = v
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.grads.items():
                out[f"{i}.{k}"] = v
        return out

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()


# --- optimizers --------------------------------------------------------------


class Adam:
    """Bias-corrected first/second-moment update; deterministic given state."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict[str, dict] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for key, p in params.items():
            g = grads[key]
            if g.shape != p.shape:
                raise ShapeMismatch(f"grad shape {g.shape} != param shape {p.shape} for {key}")
            st = self.state.setdefault(
                key, {"m": np.zeros_like(p, dtype=np.float64), "v": np.zeros_like(p, dtype=np.float64), "t": 0}
            )
            st["t"] += 1
            st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * (g * g)
            mhat = st["m"] / (1 - self.beta1 ** st["t"])
            vhat = st["v"] / (1 - self.beta2 ** st["t"])
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


class SGD:
    def __init__(self, lr: float = 0.001):
        self.lr = lr
        self.state: dict = {}

    def step(self, params, grads):
        for key, p in params.items():
            g = grads[key]
            if g.shape != p.shape:
                raise ShapeMismatch(f"grad shape {g.shape} != param shape {p.shape} for {key}")
            p -= (self.lr * g).astype(p.dtype)


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: Optional[Adam] = None, lr: float = 0.001) -> Adam:
    """Functional wrapper: one Adam update, returning the carried state."""
    if state is None:
        state = Adam(lr=lr)
    state.lr = lr
    state.step(params, grads)
    return state


# --- gradient checking ----------------------------------------------------------


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # The 1e-5 floor keeps the ratio meaningful: central differences carry
    # ~1e-10 absolute noise in double precision, so components below the
    # floor are effectively compared absolutely.
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-5)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradient_check(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Central finite differences per parameter element vs analytic grads.

    ``loss_fn`` must recompute the scalar loss from the current (mutated)
    parameter values. Returns the max relative error across all parameters.
    """
    if eps <= 0:
        raise NNError("eps must be positive")
    worst = 0.0
    for key, p in params.items():
        numeric = np.zeros_like(p, dtype=np.float64)
        flat_p = p.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            lp = loss_fn()
            flat_p[i] = orig - eps
            lm = loss_fn()
            flat_p[i] = orig
            flat_n[i] = (lp - lm) / (2.0 * eps)
        worst = max(worst, max_relative_error(analytic[key], numeric))
    return worst
