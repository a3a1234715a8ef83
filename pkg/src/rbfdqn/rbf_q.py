"""Radial-basis Q function over state-dependent action centroids.

For an input ``s`` two networks emit ``N`` centroid locations (squashed into the
action box) and ``N`` centroid values. The Q value of an action is the
softmax-weighted average of the centroid values, the weights decaying as
``exp(-beta * ||a - a_i||)``. Because every critical point of that surface sits
close to a centroid, the greedy action is found by scoring the ``N`` centroids
only, with an error that shrinks like ``exp(-beta)``.

Functions accept a single input vector or a batch of row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn_core
from .errors import CheckpointError, NumericalError, ShapeError
from .nn_core import MLPSpec, ParamStore

NORMS = ("l2", "l1")


@dataclass(eq=False)
class RBFQNet:
    location_spec: MLPSpec
    location_params: ParamStore
    value_spec: MLPSpec
    value_params: ParamStore
    num_centroids: int
    beta: float
    action_low: np.ndarray
    action_high: np.ndarray
    norm: str = "l2"

    def __post_init__(self):
        self.action_low = np.asarray(self.action_low, dtype=np.float64).reshape(-1)
        self.action_high = np.asarray(self.action_high, dtype=np.float64).reshape(-1)
        if self.action_low.shape != self.action_high.shape:
            raise ShapeError("action_low and action_high differ in length")
        if not np.all(self.action_high > self.action_low):
            raise ValueError("action box must be nonempty in every dimension")
        if self.num_centroids < 1:
            raise ValueError("need at least one centroid")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.location_spec.output_dim != self.num_centroids * self.action_dim:
            raise ShapeError(
                f"location net emits {self.location_spec.output_dim} values, "
                f"need {self.num_centroids} x {self.action_dim}"
            )
        if self.value_spec.output_dim != self.num_centroids:
            raise ShapeError(f"value net emits {self.value_spec.output_dim} values, need {self.num_centroids}")
        if self.location_spec.input_dim != self.value_spec.input_dim:
            raise ShapeError("location and value nets disagree on input width")

    @property
    def action_dim(self) -> int:
        return self.action_low.size

    @property
    def input_dim(self) -> int:
        return self.location_spec.input_dim

    def copy(self) -> "RBFQNet":
        return RBFQNet(
            self.location_spec, self.location_params.copy(), self.value_spec, self.value_params.copy(),
            self.num_centroids, self.beta, self.action_low.copy(), self.action_high.copy(), self.norm,
        )

    def load_from(self, other: "RBFQNet") -> None:
        np.copyto(self.location_params.values, other.location_params.values)
        np.copyto(self.value_params.values, other.value_params.values)


def make_rbf_q(input_dim: int, action_low, action_high, rng: np.random.Generator,
               num_centroids: int = 32, beta: float = 5.0, hidden=(128, 128),
               activation: str = "relu", norm: str = "l2") -> RBFQNet:
    action_low = np.asarray(action_low, dtype=np.float64).reshape(-1)
    loc_spec = nn_core.make_spec(input_dim, hidden, num_centroids * action_low.size, activation)
    val_spec = nn_core.make_spec(input_dim, hidden, num_centroids, activation)
    return RBFQNet(
        loc_spec, nn_core.init_params(loc_spec, rng),
        val_spec, nn_core.init_params(val_spec, rng),
        num_centroids, float(beta), action_low, action_high, norm,
    )


def _batch(net: RBFQNet, s) -> tuple[np.ndarray, bool]:
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    s2 = s[None, :] if single else s
    if s2.ndim != 2 or s2.shape[1] != net.input_dim:
        raise ShapeError(f"expected input width {net.input_dim}, got shape {s.shape}")
    if not np.all(np.isfinite(s2)):
        raise NumericalError("non-finite network input")
    return s2, single


def _squash(net: RBFQNet, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logistic squash into [low, high]; returns (locations, d loc / d raw)."""
    sig = 0.5 * (1.0 + np.tanh(0.5 * raw))
    span = net.action_high - net.action_low
    return net.action_low + span * sig, span * sig * (1.0 - sig)


class _Forward:
    """Cached batched evaluation of both heads."""

    def __init__(self, net: RBFQNet, s2: np.ndarray):
        B, N, A = s2.shape[0], net.num_centroids, net.action_dim
        raw, self.loc_cache = nn_core.forward_cached(net.location_spec, net.location_params, s2)
        values, self.val_cache = nn_core.forward_cached(net.value_spec, net.value_params, s2)
        if not (np.all(np.isfinite(raw)) and np.all(np.isfinite(values))):
            raise NumericalError("non-finite centroid network output")
        loc, dloc = _squash(net, raw.reshape(B, N, A))
        self.locations = loc
        self.dloc_draw = dloc
        self.values = values


def _distances(net: RBFQNet, diff: np.ndarray) -> np.ndarray:
    # explicit loop over the (short) action axis; numpy reductions over it are slow
    acc = np.abs(diff[..., 0]) if net.norm == "l1" else diff[..., 0] * diff[..., 0]
    for k in range(1, diff.shape[-1]):
        c = diff[..., k]
        acc = acc + (np.abs(c) if net.norm == "l1" else c * c)
    return np.sqrt(acc) if net.norm == "l2" else acc


def _mixture_weights(net: RBFQNet, dist: np.ndarray) -> np.ndarray:
    logits = -net.beta * dist
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def centroids(net: RBFQNet, s):
    """Centroid locations (N, action_dim) and values (N,) for input `s`."""
    s2, single = _batch(net, s)
    fw = _Forward(net, s2)
    if single:
        return fw.locations[0], fw.values[0]
    return fw.locations, fw.values


def _q_from(net: RBFQNet, fw: _Forward, a2: np.ndarray):
    diff = a2[:, None, :] - fw.locations  # (B, N, A)
    dist = _distances(net, diff)
    w = _mixture_weights(net, dist)
    q = np.sum(w * fw.values, axis=-1)
    return q, w, diff, dist


def _actions(net: RBFQNet, a, batch: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a2 = a[None, :] if a.ndim == 1 else a
    if a2.shape != (batch, net.action_dim):
        raise ShapeError(f"expected actions of shape ({batch}, {net.action_dim}), got {a.shape}")
    if not np.all(np.isfinite(a2)):
        raise NumericalError("non-finite action")
    return a2


def q_value(net: RBFQNet, s, a):
    """Normalized RBF mixture of centroid values evaluated at action `a`."""
    s2, single = _batch(net, s)
    a2 = _actions(net, a, s2.shape[0])
    q, *_ = _q_from(net, _Forward(net, s2), a2)
    return float(q[0]) if single else q


def _centroid_scores(net: RBFQNet, locations: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Q evaluated at each centroid location: (B, N)."""
    # in-place arithmetic: this is the hottest function in training
    acc = None
    for k in range(locations.shape[-1]):
        c = locations[..., k]
        d = c[:, :, None] - c[:, None, :]  # [b, j, i] = a_j - a_i
        if net.norm == "l1":
            np.abs(d, out=d)
        else:
            np.square(d, out=d)
        if acc is None:
            acc = d
        else:
            acc += d
    if net.norm == "l2":
        np.sqrt(acc, out=acc)
    # the self-distance is 0, so the largest logit is exactly 0 and no shift is needed
    acc *= -net.beta
    w = np.exp(acc, out=acc)
    return np.matmul(w, values[:, :, None])[:, :, 0] / w.sum(axis=-1)


def greedy_action(net: RBFQNet, s):
    """Best centroid location and its Q value; ties go to the lowest centroid index."""
    s2, single = _batch(net, s)
    fw = _Forward(net, s2)
    scores = _centroid_scores(net, fw.locations, fw.values)
    best = np.argmax(scores, axis=1)
    rows = np.arange(s2.shape[0])
    actions = fw.locations[rows, best]
    q = scores[rows, best]
    if single:
        return actions[0].copy(), float(q[0])
    return actions, q


def centroid_max(net: RBFQNet, s) -> np.ndarray:
    """Batched max_i Q(s, a_i); the bootstrap value used in TD targets."""
    s2, _ = _batch(net, s)
    fw = _Forward(net, s2)
    return _centroid_scores(net, fw.locations, fw.values).max(axis=1)


def _backprop_q(net: RBFQNet, fw: _Forward, a2: np.ndarray, upstream: np.ndarray):
    q, w, diff, dist = _q_from(net, fw, a2)
    up = upstream[:, None]
    d_values = up * w
    # d q / d logit_i = w_i (v_i - q);  logit_i = -beta * dist_i
    d_dist = -net.beta * up * w * (fw.values - q[:, None])
    # d dist / d loc = -(a - loc)/dist for L2, -sign(a - loc) for L1
    if net.norm == "l2":
        safe = np.where(dist > 0.0, dist, 1.0)
        ddist_dloc = np.where(dist[..., None] > 0.0, -diff / safe[..., None], 0.0)
    else:
        ddist_dloc = -np.sign(diff)
    d_loc = d_dist[..., None] * ddist_dloc
    d_raw = (d_loc * fw.dloc_draw).reshape(a2.shape[0], -1)
    g_loc, _ = nn_core.backward_cached(net.location_spec, net.location_params, fw.loc_cache, d_raw)
    g_val, _ = nn_core.backward_cached(net.value_spec, net.value_params, fw.val_cache, d_values)
    if not (np.all(np.isfinite(g_loc.values)) and np.all(np.isfinite(g_val.values))):
        raise NumericalError("non-finite gradient in RBF head")
    return q, g_loc, g_val


def q_gradient(net: RBFQNet, s, a, upstream):
    """Gradients of ``sum(upstream * Q(s, a))`` w.r.t. the location and value parameters."""
    s2, _ = _batch(net, s)
    a2 = _actions(net, a, s2.shape[0])
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (s2.shape[0],))
    _, g_loc, g_val = _backprop_q(net, _Forward(net, s2), a2, up)
    return g_loc, g_val


def q_and_gradient(net: RBFQNet, s2: np.ndarray, a2: np.ndarray, upstream_fn):
    """Forward once, compute the upstream from Q, backprop. Used by the trainer."""
    fw = _Forward(net, s2)
    q, *_ = _q_from(net, fw, a2)
    upstream = upstream_fn(q)
    _, g_loc, g_val = _backprop_q(net, fw, a2, upstream)
    return q, g_loc, g_val


# --- persistence -----------------------------------------------------------

def save(net: RBFQNet, path, extra: dict | None = None) -> None:
    layout = net.location_spec.layout("location/") + net.value_spec.layout("value/")
    values = np.concatenate([net.location_params.values, net.value_params.values])
    meta = {
        "kind": "rbf_q",
        "num_centroids": net.num_centroids,
        "beta": net.beta,
        "norm": net.norm,
        "action_low": net.action_low.tolist(),
        "action_high": net.action_high.tolist(),
        "location_spec": net.location_spec.to_dict(),
        "value_spec": net.value_spec.to_dict(),
    }
    if extra:
        meta["extra"] = extra
    nn_core.write_checkpoint(path, ParamStore(values, layout), meta)


def load(path) -> tuple[RBFQNet, dict]:
    store, meta = nn_core.read_checkpoint(path)
    if meta.get("kind") != "rbf_q":
        raise CheckpointError(f"{path}: not an RBF Q checkpoint")
    loc_spec = MLPSpec.from_dict(meta["location_spec"])
    val_spec = MLPSpec.from_dict(meta["value_spec"])
    n_loc = sum(int(np.prod(s)) for _, s in loc_spec.layout())
    if len(store) != n_loc + sum(int(np.prod(s)) for _, s in val_spec.layout()):
        raise CheckpointError(f"{path}: parameter count does not match the stored specs")
    net = RBFQNet(
        loc_spec, ParamStore(store.values[:n_loc].copy(), loc_spec.layout()),
        val_spec, ParamStore(store.values[n_loc:].copy(), val_spec.layout()),
        int(meta["num_centroids"]), float(meta["beta"]),
        np.array(meta["action_low"]), np.array(meta["action_high"]), meta["norm"],
    )
    return net, meta.get("extra", {})
