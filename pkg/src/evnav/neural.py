"""Dense MLP engine in float64: forward, backprop, MSE, Adam, weight files.

Parameters live in one flat vector; per-layer weight matrices and biases are
views into it, so optimizer and target-network updates are single array ops.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LINEAR, RELU, TANH = 0, 1, 2
_ACT_NAMES = {LINEAR: "linear", RELU: "relu", TANH: "tanh"}

MAGIC = b"EVNW"
FORMAT_VERSION = 1


class ContractError(ValueError):
    pass


class TrainingFault(RuntimeError):
    pass


class WeightFileError(ValueError):
    pass


class Mlp:
    """Fully connected net. Hidden layers use ReLU; output is linear or ``bound * tanh``.

    Inputs are batches of shape ``(n, sizes[0])``. Weight matrices are stored
    ``(fan_in, fan_out)``.
    """

    def __init__(self, sizes, output: int = LINEAR, bounds=None, flat: np.ndarray | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        self.activations = [RELU] * (len(sizes) - 2) + [output]
        if output == TANH:
            if bounds is None:
                bounds = np.ones(sizes[-1])
            bounds = np.asarray(bounds, dtype=float).reshape(-1)
            if bounds.shape != (sizes[-1],) or np.any(bounds <= 0):
                raise ContractError("tanh output needs one positive bound per output")
        else:
            bounds = None
        self.bounds = bounds
        n = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        if flat is None:
            flat = np.zeros(n)
        elif flat.shape != (n,):
            raise ContractError(f"expected {n} parameters, got {flat.shape}")
        self.flat = flat
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        off = 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            self.W.append(flat[off:off + a * b].reshape(a, b))
            off += a * b
            self.b.append(flat[off:off + b])
            off += b

    @property
    def n_params(self) -> int:
        return self.flat.size

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, output: int = LINEAR, bounds=None,
             final_scale: float = 1.0) -> "Mlp":
        """Uniform ``+-1/sqrt(fan_in)`` initialization; last layer scaled by ``final_scale``."""
        net = cls(sizes, output, bounds)
        for i, (W, b) in enumerate(zip(net.W, net.b)):
            lim = 1.0 / np.sqrt(W.shape[0])
            scale = final_scale if i == len(net.W) - 1 else 1.0
            W[...] = rng.uniform(-lim, lim, W.shape) * scale
            b[...] = rng.uniform(-lim, lim, b.shape) * scale
        return net

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.activations[-1], self.bounds, self.flat.copy())

    def forward(self, x: np.ndarray):
        """Returns ``(output, cache)``; ``cache`` feeds :meth:`backward`."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ContractError(f"input width {x.shape[1]} != {self.sizes[0]}")
        acts = [x]
        h = x
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            act = self.activations[i]
            if act == RELU:
                h = np.maximum(z, 0.0)
            elif act == TANH:
                h = np.tanh(z)
            else:
                h = z
            acts.append(h)
        out = acts[-1] * self.bounds if self.activations[-1] == TANH else acts[-1]
        cache = (acts, single)
        return (out[0] if single else out), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Reverse pass. Returns ``(flat parameter gradient, input gradient)``.

        ``grad_out`` is dLoss/dOutput with the output's shape; parameter gradients
        are summed over the batch.
        """
        acts, single = cache
        g = np.asarray(grad_out, dtype=float)
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ContractError(f"output gradient shape {g.shape} != {acts[-1].shape}")
        grad = np.empty_like(self.flat)
        gW, gb = self._views(grad)
        for i in range(len(self.W) - 1, -1, -1):
            act = self.activations[i]
            h = acts[i + 1]
            if act == TANH:
                g = g * self.bounds * (1.0 - h * h)
            elif act == RELU:
                g = g * (h > 0.0)
            gW[i][...] = acts[i].T @ g
            gb[i][...] = g.sum(axis=0)
            g = g @ self.W[i].T
        return grad, (g[0] if single else g)

    def _views(self, flat):
        Ws, bs = [], []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            Ws.append(flat[off:off + a * b].reshape(a, b))
            off += a * b
            bs.append(flat[off:off + b])
            off += b
        return Ws, bs


def mlp_forward(params: Mlp, x):
    return params.forward(x)


def mlp_backward(params: Mlp, cache, grad_out):
    return params.backward(cache, grad_out)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean of squared L2 error, and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.ndim == 1:
        pred, target = pred[:, None], target[:, None]
    n = pred.shape[0]
    if n == 0:
        raise ContractError("empty batch")
    diff = pred - target
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, params: Mlp, grad: np.ndarray) -> None:
        if grad.shape != params.flat.shape:
            raise ContractError("gradient does not match parameters")
        if not np.all(np.isfinite(grad)):
            bad = np.flatnonzero(~np.isfinite(grad))
            raise TrainingFault(f"non-finite gradient at {bad.size} entries (first index {bad[0]}), "
                                f"step {self.step_count}")
        if self.m is None:
            self.m = np.zeros_like(params.flat)
            self.v = np.zeros_like(params.flat)
        self.step_count += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.step_count)
        vhat = self.v / (1.0 - self.beta2 ** self.step_count)
        params.flat -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(params: Mlp, grad: np.ndarray, state: Adam) -> tuple[Mlp, Adam]:
    state.step(params, grad)
    return params, state


def soft_update(target: Mlp, source: Mlp, tau: float) -> Mlp:
    """``target <- tau * source + (1 - tau) * target`` in place."""
    if target.sizes != source.sizes:
        raise ContractError(f"shape mismatch {target.sizes} vs {source.sizes}")
    target.flat *= 1.0 - tau
    target.flat += tau * source.flat
    return target


def save_weights(params: Mlp, path: str | Path) -> None:
    """Little-endian: magic, version, layer count, sizes, activation codes, bounds, params, CRC32."""
    n_layers = len(params.sizes) - 1
    body = bytearray()
    body += MAGIC
    body += struct.pack("<HI", FORMAT_VERSION, n_layers)
    body += struct.pack(f"<{n_layers + 1}I", *params.sizes)
    body += struct.pack(f"<{n_layers}B", *params.activations)
    bounds = params.bounds if params.bounds is not None else np.zeros(0)
    body += struct.pack("<I", bounds.size)
    body += bounds.astype("<f8").tobytes()
    for W, b in zip(params.W, params.b):
        body += np.ascontiguousarray(W, dtype="<f8").tobytes()
        body += np.ascontiguousarray(b, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load_weights(path: str | Path) -> Mlp:
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != MAGIC:
        raise WeightFileError(f"{path}: not a weight file")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise WeightFileError(f"{path}: checksum mismatch (truncated or corrupt)")
    version, n_layers = struct.unpack_from("<HI", raw, 4)
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    off = 10
    sizes = list(struct.unpack_from(f"<{n_layers + 1}I", raw, off))
    off += 4 * (n_layers + 1)
    acts = list(struct.unpack_from(f"<{n_layers}B", raw, off))
    off += n_layers
    (n_bounds,) = struct.unpack_from("<I", raw, off)
    off += 4
    bounds = np.frombuffer(raw, "<f8", n_bounds, off).astype(float) if n_bounds else None
    off += 8 * n_bounds
    if any(a != RELU for a in acts[:-1]) or acts[-1] not in _ACT_NAMES:
        raise WeightFileError(f"{path}: unsupported activation codes {acts}")
    if acts[-1] == TANH and n_bounds != sizes[-1]:
        raise WeightFileError(f"{path}: output layer declares {sizes[-1]} units but {n_bounds} bounds")
    payload = raw[off:-4]
    chunks = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        need = 8 * (a * b + b)
        if len(payload) < need:
            raise WeightFileError(f"{path}: layer {i} ({a}x{b}) declares more data than present")
        chunks.append(np.frombuffer(payload[:need], "<f8"))
        payload = payload[need:]
    if payload:
        raise WeightFileError(f"{path}: {len(payload)} trailing bytes after layer {n_layers - 1}")
    return Mlp(sizes, acts[-1], bounds, np.concatenate(chunks).astype(float))
