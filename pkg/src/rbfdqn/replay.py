"""Ring-buffer transition storage with uniform and proportional prioritized sampling."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BufferStateError, CheckpointError, ShapeError

DUMP_MAGIC = b"RBFR1"


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    goal: np.ndarray
    done: bool

    def replace(self, **kw) -> "Transition":
        fields = dict(self.__dict__)
        fields.update(kw)
        return Transition(**fields)


@dataclass(frozen=True)
class PERConfig:
    alpha: float = 0.6
    epsilon_priority: float = 0.01
    is_beta_start: float = 0.4
    is_beta_end: float = 1.0
    anneal_steps: int = 100_000
    max_priority_init: float = 1.0
    use_is_weights: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.epsilon_priority <= 0:
            raise ValueError("epsilon_priority must be positive")
        if not 0.0 <= self.is_beta_start <= self.is_beta_end <= 1.0:
            raise ValueError("need 0 <= is_beta_start <= is_beta_end <= 1")
        if self.anneal_steps < 1:
            raise ValueError("anneal_steps must be positive")
        if self.max_priority_init <= 0:
            raise ValueError("max_priority_init must be positive")

    def is_beta(self, step: int) -> float:
        frac = min(max(step, 0) / self.anneal_steps, 1.0)
        if frac >= 1.0:
            return self.is_beta_end
        return self.is_beta_start + frac * (self.is_beta_end - self.is_beta_start)


class SumTree:
    """Array-backed binary tree; leaf ``i`` lives at node ``capacity - 1 + i``.

    Parents are always recomputed as ``left + right`` (never patched with
    deltas), so internal nodes stay exact sums of their children.
    """

    def __init__(self, min_capacity: int):
        if min_capacity < 1:
            raise ValueError("capacity must be positive")
        cap = 1
        while cap < min_capacity:
            cap *= 2
        self.capacity = cap
        self.nodes = np.zeros(2 * cap - 1)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity - 1:]

    def get(self, leaf) -> np.ndarray:
        return self.nodes[np.asarray(leaf) + self.capacity - 1]

    def set(self, leaf: int, value: float) -> None:
        node = leaf + self.capacity - 1
        self.nodes[node] = value
        nodes = self.nodes
        while node > 0:
            node = (node - 1) // 2
            nodes[node] = nodes[2 * node + 1] + nodes[2 * node + 2]

    def set_many(self, leaves, values) -> None:
        leaves = np.asarray(leaves, dtype=np.int64)
        if leaves.size <= 4:
            # the scalar walk is cheaper than vectorized bookkeeping for a handful of leaves
            for leaf, value in zip(leaves.tolist(), np.broadcast_to(values, leaves.shape).tolist()):
                self.set(leaf, value)
            return
        node = leaves + self.capacity - 1
        self.nodes[node] = values
        while node.size and node[0] > 0:
            node = np.unique((node - 1) // 2)
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2]

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose prefix-sum interval contains each entry of `mass`."""
        mass = np.array(mass, dtype=np.float64)
        node = np.zeros(mass.shape, dtype=np.int64)
        nodes = self.nodes
        while True:
            left = 2 * node + 1
            if left[0] >= nodes.size:
                break
            lsum = nodes[left]
            go_right = mass >= lsum
            mass = np.where(go_right, mass - lsum, mass)
            node = np.where(go_right, left + 1, left)
        return node - (self.capacity - 1)

    def check(self, rtol: float = 1e-9) -> bool:
        """Every internal node equals the sum of its children (relative tolerance)."""
        internal = self.nodes[: self.capacity - 1]
        sums = self.nodes[1::2] + self.nodes[2::2]
        scale = np.maximum(np.abs(sums), 1e-300)
        return bool(np.all(np.abs(internal - sums) <= rtol * scale))


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    goals: np.ndarray
    dones: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.rewards.size

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.states[i], self.actions[i], float(self.rewards[i]), self.next_states[i],
                       self.goals[i], bool(self.dones[i]))
            for i in range(len(self))
        ]


class ReplayBuffer:
    """Fixed-capacity ring of transitions backed by a sum-tree over ``p_i ** alpha``.

    Indices handed out by `push` and the samplers are insertion serial numbers;
    slot ``serial % capacity`` holds the data. A serial older than the last
    ``capacity`` pushes is stale and ignored by `update_priorities`.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, goal_dim: int,
                 per: PERConfig | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim, self.action_dim, self.goal_dim = state_dim, action_dim, goal_dim
        self.per = per or PERConfig()
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.goals = np.zeros((capacity, goal_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.tree = SumTree(capacity)
        self.size = 0
        self.pushed = 0
        self.max_priority = self.per.max_priority_init
        self.stale_updates = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition, priority: float | None = None) -> int:
        """Store `t`; ``priority=None`` means the current max priority. Returns its serial."""
        state = np.asarray(t.state, dtype=np.float64)
        next_state = np.asarray(t.next_state, dtype=np.float64)
        action = np.asarray(t.action, dtype=np.float64)
        goal = np.asarray(t.goal, dtype=np.float64)
        for name, arr, dim in (("state", state, self.state_dim), ("next_state", next_state, self.state_dim),
                               ("action", action, self.action_dim), ("goal", goal, self.goal_dim)):
            if arr.shape != (dim,):
                raise ShapeError(f"{name}: expected shape ({dim},), got {arr.shape}")
        slot = self.pushed % self.capacity
        self.states[slot] = state
        self.actions[slot] = action
        self.rewards[slot] = t.reward
        self.next_states[slot] = next_state
        self.goals[slot] = goal
        self.dones[slot] = bool(t.done)
        if priority is None:
            priority = self.max_priority
        elif priority <= 0:
            raise ValueError("priority must be positive")
        else:
            self.max_priority = max(self.max_priority, float(priority))
        # overwriting the leaf replaces the evicted transition's priority in the same step
        self.tree.set(slot, float(priority) ** self.per.alpha)
        serial = self.pushed
        self.pushed += 1
        self.size = min(self.size + 1, self.capacity)
        return serial

    def extend(self, transitions, priority: float | None = None) -> list[int]:
        return [self.push(t, priority) for t in transitions]

    def _require_nonempty(self) -> None:
        if self.size == 0:
            raise BufferStateError("cannot sample from an empty replay buffer")

    def _gather(self, serials: np.ndarray, weights: np.ndarray) -> Batch:
        slots = serials % self.capacity
        return Batch(self.states[slots], self.actions[slots], self.rewards[slots],
                     self.next_states[slots], self.goals[slots], self.dones[slots],
                     serials, weights)

    def _slot_to_serial(self, slots: np.ndarray) -> np.ndarray:
        base = self.pushed - self.pushed % self.capacity
        serial = base + slots
        return np.where(serial >= self.pushed, serial - self.capacity, serial)

    def sample_uniform(self, batch: int, rng: np.random.Generator) -> Batch:
        self._require_nonempty()
        slots = rng.integers(0, self.size, size=batch)
        return self._gather(self._slot_to_serial(slots), np.ones(batch))

    def sample_prioritized(self, batch: int, rng: np.random.Generator, step: int = 0,
                           cfg: PERConfig | None = None) -> Batch:
        """Stratified proportional sampling: P(i) = p_i^alpha / sum_k p_k^alpha."""
        self._require_nonempty()
        if batch < 1:
            raise ValueError("batch must be >= 1")
        cfg = cfg or self.per
        total = self.tree.total
        segment = total / batch
        mass = (np.arange(batch) + rng.random(batch)) * segment
        mass = np.minimum(mass, np.nextafter(total, 0.0))
        slots = self.tree.find(mass)
        # float round-off can walk into an empty leaf past the live region
        slots = np.minimum(slots, self.size - 1)
        leaf = self.tree.get(slots)
        if cfg.use_is_weights:
            probs = leaf / total
            w = (self.size * probs) ** (-cfg.is_beta(step))
            w /= w.max()
        else:
            w = np.ones(batch)
        return self._gather(self._slot_to_serial(slots), w)

    def update_priorities(self, indices, td_errors, cfg: PERConfig | None = None) -> None:
        """Set each live transition's priority to ``|delta| + eps`` (stored raised to alpha)."""
        cfg = cfg or self.per
        serials = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(td_errors, dtype=np.float64)
        if serials.shape != deltas.shape:
            raise ShapeError("indices and td_errors differ in length")
        live = (serials >= self.pushed - self.size) & (serials < self.pushed)
        self.stale_updates += int(np.sum(~live))
        if not np.any(live):
            return
        p = np.abs(deltas[live]) + cfg.epsilon_priority
        self.max_priority = max(self.max_priority, float(p.max()))
        # for repeated indices the last write wins, as with sequential updates
        slots = serials[live] % self.capacity
        if slots.size > 1:
            _, last = np.unique(slots[::-1], return_index=True)
            keep = slots.size - 1 - last
            slots, p = slots[keep], p[keep]
        self.tree.set_many(slots, p ** cfg.alpha)

    def priorities(self) -> np.ndarray:
        """Stored leaf values (``p_i ** alpha``) for live slots, in slot order."""
        return self.tree.leaves()[: self.size].copy()

    # --- audit dump ---------------------------------------------------------

    def dump(self, path) -> None:
        cols = self._columns()
        header = json.dumps({
            "capacity": self.capacity, "size": self.size, "pushed": self.pushed,
            "state_dim": self.state_dim, "action_dim": self.action_dim, "goal_dim": self.goal_dim,
            "columns": [[name, arr.shape[1]] for name, arr in cols],
            "max_priority": self.max_priority,
        }, sort_keys=True).encode("utf-8")
        payload = np.concatenate([arr for _, arr in cols], axis=1).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(DUMP_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(payload.tobytes())
            fh.write(struct.pack("<Q", payload.size))

    def _columns(self):
        n = self.size
        return [
            ("state", self.states[:n]), ("action", self.actions[:n]),
            ("reward", self.rewards[:n, None]), ("next_state", self.next_states[:n]),
            ("goal", self.goals[:n]), ("done", self.dones[:n, None].astype(np.float64)),
            ("priority", self.tree.leaves()[:n, None]),
        ]

    @classmethod
    def load(cls, path, per: PERConfig | None = None) -> "ReplayBuffer":
        data = Path(path).read_bytes()
        if not data.startswith(DUMP_MAGIC):
            raise CheckpointError(f"{path}: bad magic")
        pos = len(DUMP_MAGIC)
        (hlen,) = struct.unpack_from("<I", data, pos)
        header = json.loads(data[pos + 4:pos + 4 + hlen])
        pos += 4 + hlen
        width = sum(w for _, w in header["columns"])
        n = header["size"] * width
        if len(data) != pos + 8 * n + 8 or struct.unpack_from("<Q", data, pos + 8 * n)[0] != n:
            raise CheckpointError(f"{path}: truncated or inconsistent replay dump")
        table = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(header["size"], width)
        buf = cls(header["capacity"], header["state_dim"], header["action_dim"], header["goal_dim"], per)
        col = 0
        size = header["size"]
        for name, w in header["columns"]:
            block = table[:, col:col + w]
            col += w
            if name == "reward":
                buf.rewards[:size] = block[:, 0]
            elif name == "done":
                buf.dones[:size] = block[:, 0] > 0.5
            elif name == "priority":
                buf.tree.set_many(np.arange(size), block[:, 0])
            else:
                getattr(buf, name + "s")[:size] = block
        buf.size = size
        buf.pushed = header["pushed"]
        buf.max_priority = header["max_priority"]
        return buf
