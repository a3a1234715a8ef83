"""Small feed-forward networks over a flat parameter vector.

Parameters live in one contiguous float64 array (``ParamStore.values``); the
layout maps named slices of it to weight matrices and bias vectors. Keeping
everything flat makes the optimizer, target-network copies and checkpointing
one-liners.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointError, NumericalError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")
OUTPUT_ACTIVATIONS = ("identity", "tanh")

CHECKPOINT_MAGIC = b"RBFQ1"


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activations: tuple[str, ...] = ()
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        acts = tuple(self.activations) or ("relu",) * len(self.hidden_dims)
        object.__setattr__(self, "activations", tuple(a.lower() for a in acts))
        object.__setattr__(self, "output_activation", self.output_activation.lower())
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ShapeError(f"layer widths must be positive: {self}")
        if len(self.activations) != len(self.hidden_dims):
            raise ShapeError(
                f"{len(self.activations)} activations given for {len(self.hidden_dims)} hidden layers"
            )
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}; expected one of {ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims) + 1

    def layer_activation(self, i: int) -> str:
        return self.activations[i] if i < len(self.hidden_dims) else self.output_activation

    def layout(self, prefix: str = "") -> list[tuple[str, tuple[int, ...]]]:
        dims = self.dims
        out = []
        for i in range(self.num_layers):
            out.append((f"{prefix}W{i}", (dims[i + 1], dims[i])))
            out.append((f"{prefix}b{i}", (dims[i + 1],)))
        return out

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activations": list(self.activations),
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            output_dim=int(d["output_dim"]),
            activations=tuple(d["activations"]),
            output_activation=d["output_activation"],
        )


@dataclass(eq=False)
class ParamStore:
    """Flat parameter vector plus the (name, shape) layout that slices it."""

    values: np.ndarray
    layout: list[tuple[str, tuple[int, ...]]]
    _offsets: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.layout = [(name, tuple(int(d) for d in shape)) for name, shape in self.layout]
        offset = 0
        self._offsets = {}
        for name, shape in self.layout:
            if name in self._offsets:
                raise ShapeError(f"duplicate parameter name {name!r}")
            self._offsets[name] = (offset, shape)
            offset += int(np.prod(shape, dtype=np.int64))
        if self.values.ndim != 1 or offset != self.values.size:
            raise ShapeError(f"layout covers {offset} values but array has shape {self.values.shape}")

    @classmethod
    def zeros(cls, layout) -> "ParamStore":
        n = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in layout)
        return cls(np.zeros(n), list(layout))

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, name: str) -> np.ndarray:
        # views share memory with `values`
        offset, shape = self._offsets[name]
        size = int(np.prod(shape, dtype=np.int64))
        return self.values[offset:offset + size].reshape(shape)

    def names(self) -> list[str]:
        return [name for name, _ in self.layout]

    def copy(self) -> "ParamStore":
        return ParamStore(self.values.copy(), list(self.layout))

    def zeros_like(self) -> "ParamStore":
        return ParamStore(np.zeros_like(self.values), list(self.layout))


# A Gradient has exactly the same structure as the parameters it differentiates.
Gradient = ParamStore


def init_params(spec: MLPSpec, rng: np.random.Generator, prefix: str = "") -> ParamStore:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    store = ParamStore.zeros(spec.layout(prefix))
    dims = spec.dims
    for i in range(spec.num_layers):
        bound = 1.0 / np.sqrt(dims[i])
        w = store[f"{prefix}W{i}"]
        b = store[f"{prefix}b{i}"]
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return store


def _check_layout(spec: MLPSpec, params: ParamStore, prefix: str) -> None:
    for name, shape in spec.layout(prefix):
        if name not in params._offsets or params._offsets[name][1] != shape:
            got = params._offsets.get(name, (None, None))[1]
            raise ShapeError(f"parameter {name!r}: expected shape {shape}, got {got}")


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def forward_cached(spec: MLPSpec, params: ParamStore, x: np.ndarray, prefix: str = ""):
    """Batched forward pass returning the output and the per-layer cache for `backward_cached`.

    `x` has shape (batch, input_dim).
    """
    h = x
    cache = []
    for i in range(spec.num_layers):
        W = params[f"{prefix}W{i}"]
        b = params[f"{prefix}b{i}"]
        if h.shape[-1] != W.shape[1]:
            raise ShapeError(f"layer {i}: expected input width {W.shape[1]}, got {h.shape[-1]}")
        z = h @ W.T + b
        a = _activate(spec.layer_activation(i), z)
        cache.append((h, z, a))
        h = a
    return h, cache


def backward_cached(spec: MLPSpec, params: ParamStore, cache, upstream: np.ndarray,
                    prefix: str = "", grad: ParamStore | None = None):
    """Accumulate d(sum(upstream * out))/dtheta into `grad`; returns (grad, d/dx)."""
    if grad is None:
        grad = params.zeros_like()
    out_dim = spec.output_dim
    if upstream.shape[-1] != out_dim:
        raise ShapeError(f"upstream width {upstream.shape[-1]} != output_dim {out_dim}")
    delta = upstream
    for i in reversed(range(spec.num_layers)):
        h, z, a = cache[i]
        delta = delta * _activate_grad(spec.layer_activation(i), z, a)
        grad[f"{prefix}W{i}"][...] += delta.T @ h
        grad[f"{prefix}b{i}"][...] += delta.sum(axis=0)
        delta = delta @ params[f"{prefix}W{i}"]
    return grad, delta


def _as_batch(x, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != width:
        raise ShapeError(f"{what}: expected width {width}, got shape {x.shape}")
    return x2, single


def forward(spec: MLPSpec, params: ParamStore, x, prefix: str = "") -> np.ndarray:
    """Evaluate the network on a vector (or a batch of row vectors)."""
    _check_layout(spec, params, prefix)
    x2, single = _as_batch(x, spec.input_dim, "layer 0 input")
    out, _ = forward_cached(spec, params, x2, prefix)
    return out[0] if single else out


def backward(spec: MLPSpec, params: ParamStore, x, upstream, prefix: str = "") -> Gradient:
    """Gradient of ``upstream . forward(x)`` w.r.t. every parameter (summed over a batch)."""
    _check_layout(spec, params, prefix)
    x2, _ = _as_batch(x, spec.input_dim, "layer 0 input")
    up2, _ = _as_batch(upstream, spec.output_dim, f"layer {spec.num_layers - 1} upstream")
    if up2.shape[0] != x2.shape[0]:
        raise ShapeError(f"batch mismatch: {x2.shape[0]} inputs, {up2.shape[0]} upstream rows")
    _, cache = forward_cached(spec, params, x2, prefix)
    grad, _ = backward_cached(spec, params, cache, up2, prefix)
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamStore, **kw) -> "AdamState":
        return cls(np.zeros_like(params.values), np.zeros_like(params.values), **kw)


def adam_step(params: ParamStore, grad: Gradient, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    if len(grad) != len(params) or grad.layout != params.layout:
        raise ShapeError(f"gradient layout does not match parameters ({len(grad)} vs {len(params)})")
    if lr <= 0:
        raise ValueError("lr must be positive")
    g = grad.values
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient entries: {int(np.sum(~np.isfinite(g)))}")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    if not np.any(g):
        # moments still decay, but an all-zero gradient never moves the parameters
        return params, state
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    params.values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def numerical_gradient(f, values: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``values``, perturbed in place."""
    out = np.zeros_like(values)
    for i in range(values.size):
        old = values[i]
        values[i] = old + step
        fp = f()
        values[i] = old - step
        fm = f()
        values[i] = old
        out[i] = (fp - fm) / (2.0 * step)
    return out


def finite_diff_check(spec: MLPSpec, params: ParamStore, x, upstream, step: float = 1e-5,
                      grad: Gradient | None = None) -> float:
    """Worst elementwise relative error between `backward` (or `grad`) and central differences."""
    if step <= 0:
        raise ValueError("step must be positive")
    upstream = np.asarray(upstream, dtype=np.float64)
    if grad is None:
        grad = backward(spec, params, x, upstream)
    work = params.copy()

    def f():
        return float(np.sum(upstream * forward(spec, work, x)))

    num = numerical_gradient(f, work.values, step)
    return float(np.max(relative_error(grad.values, num), initial=0.0))


# --- checkpoints -----------------------------------------------------------

def write_checkpoint(path, params: ParamStore, meta: dict | None = None,
                     magic: bytes = CHECKPOINT_MAGIC) -> None:
    """Magic, JSON header (layout + meta), little-endian float64 payload, uint64 count trailer."""
    header = json.dumps(
        {"layout": [[name, list(shape)] for name, shape in params.layout], "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")
    n = len(params)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(params.values.astype("<f8").tobytes())
        fh.write(struct.pack("<Q", n))


def read_checkpoint(path, magic: bytes = CHECKPOINT_MAGIC) -> tuple[ParamStore, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise CheckpointError(f"{path}: bad magic, expected {magic!r}")
    pos = len(magic)
    if len(data) < pos + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    pos += hlen
    layout = [(name, tuple(shape)) for name, shape in header["layout"]]
    n = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in layout)
    if len(data) != pos + 8 * n + 8:
        raise CheckpointError(
            f"{path}: expected {pos + 8 * n + 8} bytes for {n} parameters, found {len(data)}"
        )
    (count,) = struct.unpack_from("<Q", data, pos + 8 * n)
    if count != n:
        raise CheckpointError(f"{path}: trailer count {count} != layout size {n}")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
    return ParamStore(values, layout), header["meta"]


def linear_spec(input_dim: int, output_dim: int) -> MLPSpec:
    return MLPSpec(input_dim, (), output_dim)


def make_spec(input_dim: int, hidden: Sequence[int], output_dim: int, activation: str = "relu",
              output_activation: str = "identity") -> MLPSpec:
    return MLPSpec(input_dim, tuple(hidden), output_dim, (activation,) * len(hidden), output_activation)
