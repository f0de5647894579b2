"""Small neural-net toolkit: dense/conv layers with handwritten backprop,
sinusoidal timestep features, and Adam. Parameters live in a flat
name -> float64 ndarray dict so optimizers and checkpoints stay trivial.

Forward passes run in float64. Checkpoints round to float32 at save time;
inference in other runtimes is expected to match to ~1e-5, not bit-exact.
"""

from __future__ import annotations

import math

import numpy as np

Params = dict[str, np.ndarray]


def silu(z: np.ndarray) -> np.ndarray:
    return z * _sigmoid(z)


def silu_grad(z: np.ndarray) -> np.ndarray:
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # exp overflow at very negative z yields inf -> 1/inf -> exact 0, which
    # is the correct limit; cheaper than branching and portable across runtimes
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def timestep_embedding(t: np.ndarray, dim: int = 32) -> np.ndarray:
    """Sinusoidal features of integer diffusion timesteps.

    half = dim/2 frequencies f_i = exp(-ln(10000) * i / (half - 1)),
    output = [sin(t f_0) .. sin(t f_{half-1}), cos(t f_0) .. cos(t f_{half-1})].
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    i = np.arange(half, dtype=np.float64)
    freqs = np.exp(-math.log(10000.0) * i / (half - 1))
    ang = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# ---------------------------------------------------------------- dense mlp

def init_linear(params: Params, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator, scale: str = "he") -> None:
    if scale == "he":
        std = math.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(fan_in, fan_out))
    else:  # xavier uniform, for output layers
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
    params[f"{name}.W"] = w
    params[f"{name}.b"] = np.zeros(fan_out)


def linear_forward(params: Params, name: str, x: np.ndarray):
    z = x @ params[f"{name}.W"] + params[f"{name}.b"]
    return z, (name, x)


def linear_backward(params: Params, cache, dz: np.ndarray, grads: Params) -> np.ndarray:
    name, x = cache
    grads[f"{name}.W"] = grads.get(f"{name}.W", 0) + x.T @ dz
    grads[f"{name}.b"] = grads.get(f"{name}.b", 0) + dz.sum(axis=0)
    return dz @ params[f"{name}.W"].T


def init_mlp(params: Params, prefix: str, dims: list[int],
             rng: np.random.Generator) -> None:
    """dims = [in, h1, ..., out]; SiLU between layers, linear output."""
    n = len(dims) - 1
    for i in range(n):
        scale = "he" if i < n - 1 else "xavier"
        init_linear(params, f"{prefix}.{i}", dims[i], dims[i + 1], rng, scale)


def mlp_forward(params: Params, prefix: str, x: np.ndarray, n_layers: int):
    caches = []
    h = x
    for i in range(n_layers):
        z, lc = linear_forward(params, f"{prefix}.{i}", h)
        if i < n_layers - 1:
            caches.append((lc, z))
            h = silu(z)
        else:
            caches.append((lc, None))
            h = z
    return h, caches


def mlp_backward(params: Params, caches, dout: np.ndarray, grads: Params) -> np.ndarray:
    for lc, z in reversed(caches):
        dz = dout if z is None else dout * silu_grad(z)
        dout = linear_backward(params, lc, dz, grads)
    return dout


# ------------------------------------------------------------- 3x3 conv (valid)

def init_conv3x3(params: Params, name: str, c_in: int, c_out: int,
                 rng: np.random.Generator) -> None:
    std = math.sqrt(2.0 / (9 * c_in))
    params[f"{name}.W"] = rng.normal(0.0, std, size=(3, 3, c_in, c_out))
    params[f"{name}.b"] = np.zeros(c_out)


def conv3x3_forward(params: Params, name: str, x: np.ndarray):
    """x: (B, H, W, C_in) -> (B, H-2, W-2, C_out), no padding, stride 1."""
    b, h, w, c = x.shape
    oh, ow = h - 2, w - 2
    cols = np.empty((b, oh, ow, 9 * c))
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[..., k * c:(k + 1) * c] = x[:, di:di + oh, dj:dj + ow, :]
            k += 1
    wmat = params[f"{name}.W"].reshape(9 * c, -1)
    out = cols.reshape(-1, 9 * c) @ wmat + params[f"{name}.b"]
    c_out = wmat.shape[1]
    return out.reshape(b, oh, ow, c_out), (name, x.shape, cols)


def conv3x3_backward(params: Params, cache, dout: np.ndarray, grads: Params) -> np.ndarray:
    name, x_shape, cols = cache
    b, h, w, c = x_shape
    oh, ow = h - 2, w - 2
    wmat = params[f"{name}.W"].reshape(9 * c, -1)
    dout2 = dout.reshape(-1, wmat.shape[1])
    grads[f"{name}.W"] = grads.get(f"{name}.W", 0) + (
        cols.reshape(-1, 9 * c).T @ dout2).reshape(3, 3, c, -1)
    grads[f"{name}.b"] = grads.get(f"{name}.b", 0) + dout2.sum(axis=0)
    dcols = (dout2 @ wmat.T).reshape(b, oh, ow, 9 * c)
    dx = np.zeros(x_shape)
    k = 0
    for di in range(3):
        for dj in range(3):
            dx[:, di:di + oh, dj:dj + ow, :] += dcols[..., k * c:(k + 1) * c]
            k += 1
    return dx


# ----------------------------------------------------------------------- adam

class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self._m[k]
            v = self._v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
