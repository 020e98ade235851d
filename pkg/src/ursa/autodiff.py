"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Just enough machinery to train the skill networks: elementwise arithmetic,
matmul with bias broadcasting, the activations used by the models, a
single-gate recurrent cell, explicit dropout masks, Gaussian heads, and an
adaptive-moment optimizer. Graphs are built eagerly; ``backward`` walks the
tape once in reverse topological order.

Set ``autodiff.DEBUG_NAN = True`` to abort on the first non-finite forward
value with the offending op named.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

DEBUG_NAN = False
CHECKPOINT_VERSION = 1
LEAKY_SLOPE = 0.01
SIGMA_FLOOR = 1e-4


class Tensor:
    __slots__ = ("data", "grad", "parents", "op", "requires_grad", "_backward_done")

    def __init__(self, data, parents=(), op="leaf", requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents  # tuple of (Tensor, vjp) pairs
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)
        self._backward_done = False
        if DEBUG_NAN and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values out of op '{op}'")

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        if self._backward_done:
            raise RuntimeError("backward already ran on this graph; re-run the forward pass")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent, _ in node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            node._backward_done = True
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                if not parent.requires_grad:
                    continue
                contribution = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = contribution.copy()
                else:
                    parent.grad = parent.grad + contribution


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return Tensor(out, ((a, lambda g: _unbroadcast(g, a.data.shape)),
                        (b, lambda g: _unbroadcast(g, b.data.shape))), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return Tensor(out, ((a, lambda g: _unbroadcast(g, a.data.shape)),
                        (b, lambda g: _unbroadcast(-g, b.data.shape))), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return Tensor(out, ((a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
                        (b, lambda g: _unbroadcast(g * a.data, b.data.shape))), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return Tensor(out, ((a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
                        (b, lambda g: _unbroadcast(-g * a.data / (b.data ** 2), b.data.shape))),
                  "div")


def scale(a: Tensor, s: float) -> Tensor:
    return Tensor(a.data * s, ((a, lambda g: g * s),), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data
    return Tensor(out, ((a, lambda g: g @ b.data.T),
                        (b, lambda g: a.data.T @ g)), "matmul")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, ((a, lambda g: g * out),), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), ((a, lambda g: g / a.data),), "log")


def square(a: Tensor) -> Tensor:
    return Tensor(a.data ** 2, ((a, lambda g: g * 2.0 * a.data),), "square")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, ((a, lambda g: g * (1.0 - out ** 2)),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, ((a, lambda g: g * out * (1.0 - out)),), "sigmoid")


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    mask = np.where(a.data > 0.0, 1.0, slope)
    return Tensor(a.data * mask, ((a, lambda g: g * mask),), "leaky_relu")


def softplus(a: Tensor) -> Tensor:
    # log(1 + exp(x)) computed stably for large |x|
    out = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, ((a, lambda g: g * sig),), "softplus")


def tsum(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), ((a, lambda g: np.broadcast_to(g, a.data.shape).copy()),), "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor(a.data.mean(),
                  ((a, lambda g: np.broadcast_to(g / n, a.data.shape).copy()),), "mean")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias with the bias broadcast over the batch."""
    if x.data.shape[-1] != weight.data.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.data.shape} @ {weight.data.shape}")
    return add(matmul(x, weight), bias)


def dropout_apply(x: Tensor, mask: np.ndarray | None) -> Tensor:
    """Multiply by a precomputed inverted-dropout mask; None means identity."""
    if mask is None:
        return x
    if mask.shape != x.data.shape[-mask.ndim:]:
        raise ValueError(f"dropout mask shape {mask.shape} does not match {x.data.shape}")
    return mul(x, constant(mask))


def _seed_entries(values) -> list:
    """Normalize a seed path into ints; strings hash via crc32 (stable across runs)."""
    items = values if isinstance(values, (list, tuple)) else [values]
    return [zlib.crc32(v.encode()) if isinstance(v, str) else int(v) for v in items]


def make_dropout_mask(shape: tuple, keep_prob: float, seed: int, sample_index) -> np.ndarray:
    """Reproducible inverted-dropout mask; fully determined by (seed, index)."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must be in (0, 1]")
    if keep_prob == 1.0:
        return np.ones(shape)
    rng = np.random.default_rng([seed] + _seed_entries(sample_index))
    return (rng.random(shape) < keep_prob).astype(np.float64) / keep_prob


class DropoutMask:
    """Handle for one declared dropout sample: (seed, sample index, keep prob)."""

    def __init__(self, seed: int, sample_index, keep_prob: float):
        self.seed = seed
        self.sample_index = sample_index
        self.keep_prob = keep_prob

    def materialize(self, shape: tuple, layer: int) -> np.ndarray:
        return make_dropout_mask(shape, self.keep_prob, self.seed,
                                 _seed_entries(self.sample_index) + [layer])


def recurrent_cell(x: Tensor, h: Tensor, wx_f: Tensor, wh_f: Tensor, b_f: Tensor,
                   wx_c: Tensor, wh_c: Tensor, b_c: Tensor) -> Tensor:
    """Single-gate recurrent cell (minimal GRU).

    forget gate f = sigmoid(x Wx_f + h Wh_f + b_f)
    candidate  c = tanh(x Wx_c + (f*h) Wh_c + b_c)
    h'           = (1 - f) * h + f * c
    """
    f = sigmoid(add(add(matmul(x, wx_f), matmul(h, wh_f)), b_f))
    c = tanh(add(add(matmul(x, wx_c), matmul(mul(f, h), wh_c)), b_c))
    one_minus_f = sub(constant(np.ones_like(f.data)), f)
    return add(mul(one_minus_f, h), mul(f, c))


def gaussian_head(x: Tensor, w_mu: Tensor, b_mu: Tensor,
                  w_sigma: Tensor, b_sigma: Tensor) -> tuple[Tensor, Tensor]:
    """(mu, sigma) pair with sigma kept strictly positive via softplus."""
    mu = linear(x, w_mu, b_mu)
    sigma = add(softplus(linear(x, w_sigma, b_sigma)), constant(SIGMA_FLOOR))
    return mu, sigma


class AdamState:
    """Per-parameter first/second moment accumulators."""

    def __init__(self):
        self.m: dict = {}
        self.v: dict = {}
        self.step = 0


def optimizer_step(params: dict, state: AdamState, lr: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Adaptive-moment update applied in place; parameters without gradients
    keep their values while the shared step counter still advances."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * grad
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * grad ** 2
        m_hat = state.m[name] / (1 - beta1 ** t)
        v_hat = state.v[name] / (1 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params: dict):
    for p in params.values():
        p.grad = None


def save_checkpoint(path, params: dict, meta: dict | None = None):
    """Named-tensor archive: one JSON header line, then raw little-endian
    float64 buffers in header order. Byte-deterministic for fixed inputs."""
    names = sorted(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(params[n].data.shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode() + b"\n"
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of save_checkpoint; returns ({name: Tensor}, meta)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated checkpoint")
    (header_len,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + header_len:
        raise ValueError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[4:4 + header_len])
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    params = {}
    offset = 4 + header_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise ValueError(f"{path}: truncated tensor data for '{entry['name']}'")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        params[entry["name"]] = param(arr)
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensor data")
    return params, header["meta"]
