"""Denoisers predicting clean occupancy from a noised grid.

Any object with ``predict(x_t, mask, t) -> probabilities`` works with the
sampler.  Two are provided: an oracle that returns a fixed grid (used to
verify the sampling machinery) and a small 3D conv net with hand-written
reverse-mode gradients and an Adam optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import ConditionMask, OccupancyGrid


def time_embedding(t, dim: int, T: int | None = None, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal step features ``[sin(t * f_k)..., cos(t * f_k)...]``."""
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    if T is not None and not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    half = dim // 2
    freqs = max_period ** (-np.arange(half) / half)
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


class OracleDenoiser:
    """Ignores its input and returns ``gt`` mapped to {0.001, 0.999}."""

    def __init__(self, gt: OccupancyGrid, lo: float = 0.001, hi: float = 0.999):
        if not gt.is_binary():
            raise ValueError("oracle needs a binary grid")
        self.field = np.where(gt.values > 0.5, hi, lo)

    def predict(self, x_t, mask, t):
        return self.field.copy()


@dataclass
class DenseTensor:
    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.grad is not None and np.shape(self.grad) != self.data.shape:
            raise ValueError("gradient shape must match data shape")

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


# -- convolution ----------------------------------------------------------


def _patches(x: np.ndarray, k: int) -> np.ndarray:
    """(C, X, Y, Z) -> (X*Y*Z, C*k^3) same-padded neighbourhoods."""
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))  # C, X, Y, Z, k, k, k
    c = x.shape[0]
    return np.ascontiguousarray(win.transpose(1, 2, 3, 0, 4, 5, 6)).reshape(-1, c * k ** 3)


def _fold(cols: np.ndarray, shape, k: int) -> np.ndarray:
    """Adjoint of ``_patches``: scatter-add columns back onto the input grid."""
    c, nx, ny, nz = shape
    p = k // 2
    cols = cols.reshape(nx, ny, nz, c, k, k, k)
    out = np.zeros((c, nx + 2 * p, ny + 2 * p, nz + 2 * p))
    for a in range(k):
        for b in range(k):
            for d in range(k):
                out[:, a:a + nx, b:b + ny, d:d + nz] += cols[:, :, :, :, a, b, d].transpose(3, 0, 1, 2)
    return out[:, p:p + nx, p:p + ny, p:p + nz]


def conv3d(x, w, b):
    cols = _patches(x, w.shape[-1])
    y = cols @ w.reshape(w.shape[0], -1).T + b
    return y.T.reshape((w.shape[0],) + x.shape[1:]), cols


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0.0, x)


# -- tiny denoiser ----------------------------------------------------------


@dataclass
class TinyDenoiserParams:
    """Kernels/biases of a same-padded conv stack plus Adam state.

    Hidden layers use softplus (a smooth rectifier, so finite differences stay
    valid everywhere); the output layer is a logistic squash.
    """

    kernels: list[DenseTensor]
    biases: list[DenseTensor]
    emb_dim: int = 8
    T: int = 50
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        for k in self.kernels:
            if k.shape[-1] % 2 == 0:
                raise ValueError("kernel spatial size must be odd")
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.tensors()]
            self.v = [np.zeros_like(p.data) for p in self.tensors()]

    @classmethod
    def init(cls, channels=(8, 8), emb_dim: int = 8, T: int = 50, kernel: int = 3, rng=None):
        rng = np.random.default_rng(rng)
        widths = [2 + emb_dim, *channels, 1]
        kernels, biases = [], []
        for cin, cout in zip(widths[:-1], widths[1:]):
            fan_in = cin * kernel ** 3
            kernels.append(DenseTensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, kernel, kernel, kernel))))
            biases.append(DenseTensor(np.zeros(cout)))
        return cls(kernels, biases, emb_dim, T)

    def tensors(self) -> list[DenseTensor]:
        """Parameter order: layer index, then kernel before bias."""
        out = []
        for k, b in zip(self.kernels, self.biases):
            out += [k, b]
        return out

    @property
    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.tensors()))

    @property
    def widths(self) -> list[int]:
        return [self.kernels[0].shape[1]] + [k.shape[0] for k in self.kernels]

    def copy(self) -> "TinyDenoiserParams":
        return TinyDenoiserParams(
            [DenseTensor(k.data.copy()) for k in self.kernels],
            [DenseTensor(b.data.copy()) for b in self.biases],
            self.emb_dim, self.T,
            [a.copy() for a in self.m], [a.copy() for a in self.v], self.step,
        )


@dataclass
class ForwardCache:
    cols: list[np.ndarray]
    pre: list[np.ndarray]
    out: np.ndarray
    shape: tuple


def network_input(x_t, mask: ConditionMask, t: int, emb_dim: int, T: int | None = None) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    emb = time_embedding(t, emb_dim, T)
    chans = [x_t, mask.bits.astype(np.float64)]
    chans += [np.full(x_t.shape, e) for e in emb]
    return np.stack(chans)


def tiny_forward(params: TinyDenoiserParams, inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    if inputs.ndim != 4 or inputs.shape[0] != params.widths[0]:
        raise ValueError(f"expected input with {params.widths[0]} channels, got shape {inputs.shape}")
    h = inputs
    cols, pre = [], []
    n = len(params.kernels)
    for i, (k, b) in enumerate(zip(params.kernels, params.biases)):
        z, c = conv3d(h, k.data, b.data)
        cols.append(c)
        pre.append(z)
        h = sigmoid(z) if i == n - 1 else softplus(z)
    out = h[0]
    return out, ForwardCache(cols, pre, out, inputs.shape)


def tiny_predict(params: TinyDenoiserParams, x_t, mask: ConditionMask, t: int) -> np.ndarray:
    if np.shape(x_t) != mask.bits.shape:
        raise ValueError("x_t and mask shapes differ")
    return tiny_forward(params, network_input(x_t, mask, t, params.emb_dim, params.T))[0]


def tiny_backward(params: TinyDenoiserParams, cache: ForwardCache | None, upstream: np.ndarray):
    """Gradients of ``sum(upstream * output)`` for every kernel and bias.

    Returns a list aligned with ``params.tensors()``.
    """
    if cache is None:
        raise ValueError("tiny_backward needs the cache from a forward pass")
    n = len(params.kernels)
    g = np.asarray(upstream, dtype=np.float64)[None] * cache.out * (1.0 - cache.out)
    grads = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        w = params.kernels[i].data
        gflat = g.reshape(g.shape[0], -1)
        grads[2 * i] = (gflat @ cache.cols[i]).reshape(w.shape)
        grads[2 * i + 1] = gflat.sum(axis=1)
        if i == 0:
            break
        dcols = gflat.T @ w.reshape(w.shape[0], -1)
        prev_shape = cache.pre[i - 1].shape
        g = _fold(dcols, prev_shape, w.shape[-1]) * sigmoid(cache.pre[i - 1])
    return grads


class TinyDenoiser:
    """Adapter exposing ``predict`` for the sampler."""

    def __init__(self, params: TinyDenoiserParams):
        self.params = params

    def predict(self, x_t, mask, t):
        return tiny_predict(self.params, x_t, mask, t)


def adam_step(params: TinyDenoiserParams, grads, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> TinyDenoiserParams:
    """In-place bias-corrected Adam update; returns ``params``."""
    tensors = params.tensors()
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter tensor {i} (shape {g.shape})")
    params.step += 1
    s = params.step
    for i, (p, g) in enumerate(zip(tensors, grads)):
        params.m[i] = beta1 * params.m[i] + (1.0 - beta1) * g
        params.v[i] = beta2 * params.v[i] + (1.0 - beta2) * g * g
        m_hat = params.m[i] / (1.0 - beta1 ** s)
        v_hat = params.v[i] / (1.0 - beta2 ** s)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(prefix, params: TinyDenoiserParams, seed: int | None = None, extra: dict | None = None):
    """``<prefix>.ckpt.json`` (architecture, step, seed) + ``<prefix>.ckpt.bin``.

    The binary holds every parameter tensor (layer order, kernel then bias),
    then the Adam first moments, then the second moments, as little-endian f32.
    """
    import json
    from pathlib import Path

    prefix = str(prefix)
    for suffix in (".ckpt.json", ".ckpt.bin", ".ckpt"):
        if prefix.endswith(suffix):
            prefix = prefix[: -len(suffix)]
    header = {
        "architecture": {
            "widths": params.widths,
            "kernel": int(params.kernels[0].shape[-1]),
            "emb_dim": params.emb_dim,
            "T": params.T,
            "hidden_activation": "softplus",
            "output_activation": "logistic",
        },
        "shapes": [list(p.shape) for p in params.tensors()],
        "n_params": params.n_params,
        "step": params.step,
        "seed": seed,
        "dtype": "f32",
        "layout": "params, adam_m, adam_v; each in layer order, kernel then bias",
    }
    if extra:
        header.update(extra)
    Path(prefix + ".ckpt.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    blobs = [p.data for p in params.tensors()] + params.m + params.v
    Path(prefix + ".ckpt.bin").write_bytes(b"".join(np.asarray(b, dtype="<f4").tobytes() for b in blobs))


def load_checkpoint(prefix) -> tuple[TinyDenoiserParams, dict]:
    import json
    from pathlib import Path

    prefix = str(prefix)
    for suffix in (".ckpt.json", ".ckpt.bin", ".ckpt"):
        if prefix.endswith(suffix):
            prefix = prefix[: -len(suffix)]
    header = json.loads(Path(prefix + ".ckpt.json").read_text())
    shapes = [tuple(s) for s in header["shapes"]]
    flat = np.frombuffer(Path(prefix + ".ckpt.bin").read_bytes(), dtype="<f4").astype(np.float64)
    sizes = [int(np.prod(s)) for s in shapes]
    if flat.size != 3 * sum(sizes):
        raise ValueError(f"{prefix}.ckpt.bin has {flat.size} values, expected {3 * sum(sizes)}")
    arrays, pos = [], 0
    for _ in range(3):
        for shape, n in zip(shapes, sizes):
            arrays.append(flat[pos:pos + n].reshape(shape).copy())
            pos += n
    k = len(shapes)
    tensors, m, v = arrays[:k], arrays[k:2 * k], arrays[2 * k:]
    arch = header["architecture"]
    params = TinyDenoiserParams(
        [DenseTensor(a) for a in tensors[0::2]], [DenseTensor(a) for a in tensors[1::2]],
        int(arch["emb_dim"]), int(arch["T"]), m, v, int(header["step"]),
    )
    return params, header
