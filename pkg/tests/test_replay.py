import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exact_per_distribution, total_variation
from rbfdqn.errors import BufferStateError, CheckpointError, ShapeError
from rbfdqn.replay import PERConfig, ReplayBuffer, SumTree, Transition


def tr(i, dim=2):
    v = np.full(dim, float(i))
    return Transition(v, v[:1] * 0.5, float(i % 2), v + 1.0, v * 2.0, bool(i % 3 == 0))


def buffer(capacity=8, alpha=0.6, **kw):
    return ReplayBuffer(capacity, 2, 1, 2, PERConfig(alpha=alpha, **kw))


# --- sum tree --------------------------------------------------------------

def test_sum_tree_total_and_find():
    tree = SumTree(4)
    for i, v in enumerate([1.0, 2.0, 3.0, 4.0]):
        tree.set(i, v)
    assert tree.total == 10.0
    # prefix intervals [0,1) [1,3) [3,6) [6,10)
    np.testing.assert_array_equal(tree.find([0.0, 0.99, 1.0, 2.5, 3.0, 5.99, 6.0, 9.99]), [0, 0, 1, 1, 2, 2, 3, 3])


def test_sum_tree_pads_to_power_of_two():
    tree = SumTree(5)
    assert tree.capacity == 8 and tree.nodes.size == 15


def test_sum_tree_fuzz_consistency():
    rng = np.random.default_rng(0)
    tree = SumTree(100)
    shadow = np.zeros(tree.capacity)
    for _ in range(20_000):
        if rng.random() < 0.8:
            i = int(rng.integers(0, 100))
            v = float(rng.exponential()) * 10.0 ** int(rng.integers(-3, 3))
            tree.set(i, v)
            shadow[i] = v
        else:
            idx = rng.integers(0, 100, size=5)
            vals = rng.random(5)
            tree.set_many(idx, vals)
            for i, v in zip(idx, vals):
                shadow[i] = v
    assert tree.check(1e-9)
    assert tree.total == pytest.approx(math.fsum(shadow), rel=1e-9)
    np.testing.assert_array_equal(tree.leaves(), shadow)


# --- buffer basics ---------------------------------------------------------

def test_push_and_uniform_sample_round_trip():
    buf = buffer()
    for i in range(5):
        assert buf.push(tr(i)) == i
    batch = buf.sample_uniform(32, np.random.default_rng(0))
    assert len(batch) == 32
    for t, serial in zip(batch.transitions(), batch.indices):
        ref = tr(int(serial))
        np.testing.assert_array_equal(t.state, ref.state)
        np.testing.assert_array_equal(t.goal, ref.goal)
        assert t.reward == ref.reward and t.done == ref.done
    np.testing.assert_array_equal(batch.weights, 1.0)


def test_ring_overwrites_oldest_and_drops_its_priority():
    buf = buffer(capacity=4, alpha=1.0)
    for i in range(4):
        buf.push(tr(i), priority=1.0)
    buf.push(tr(4), priority=5.0)
    assert len(buf) == 4
    assert buf.tree.total == pytest.approx(3.0 + 5.0)
    batch = buf.sample_uniform(200, np.random.default_rng(1))
    assert set(batch.indices.tolist()) == {1, 2, 3, 4}


def test_empty_buffer_sampling_raises():
    buf = buffer()
    with pytest.raises(BufferStateError):
        buf.sample_uniform(4, np.random.default_rng(0))
    with pytest.raises(BufferStateError):
        buf.sample_prioritized(4, np.random.default_rng(0))


def test_push_rejects_wrong_shapes():
    buf = buffer()
    with pytest.raises(ShapeError):
        buf.push(Transition(np.zeros(3), np.zeros(1), 0.0, np.zeros(2), np.zeros(2), False))


def test_new_transitions_get_max_priority():
    buf = buffer(alpha=1.0)
    buf.push(tr(0))
    buf.update_priorities([0], [4.0])
    buf.push(tr(1))
    assert buf.priorities()[1] == pytest.approx(4.0 + 0.01)


def test_update_priorities_formula_and_duplicates():
    buf = buffer(alpha=0.5, epsilon_priority=0.1)
    for i in range(3):
        buf.push(tr(i))
    buf.update_priorities([0, 1, 1], [-0.9, 3.0, 0.3])
    np.testing.assert_allclose(buf.priorities()[:2], [1.0, math.sqrt(0.4)])


def test_stale_indices_are_ignored():
    buf = buffer(capacity=2, alpha=1.0)
    for i in range(3):
        buf.push(tr(i), priority=1.0)
    before = buf.priorities()
    buf.update_priorities([0], [10.0])
    np.testing.assert_array_equal(buf.priorities(), before)
    assert buf.stale_updates == 1


def test_is_beta_anneals_linearly():
    cfg = PERConfig(is_beta_start=0.4, is_beta_end=1.0, anneal_steps=100)
    assert cfg.is_beta(0) == 0.4
    assert cfg.is_beta(50) == pytest.approx(0.7)
    assert cfg.is_beta(100) == 1.0 and cfg.is_beta(10_000) == 1.0


def test_is_weights_match_formula():
    buf = buffer(capacity=4, alpha=1.0, is_beta_start=0.5, is_beta_end=0.5)
    for i, p in enumerate([1.0, 2.0, 3.0, 4.0]):
        buf.push(tr(i), priority=p)
    batch = buf.sample_prioritized(64, np.random.default_rng(0))
    P = np.array([1, 2, 3, 4]) / 10.0
    raw = (4 * P) ** -0.5
    expected = raw[batch.indices] / raw[batch.indices].max()
    np.testing.assert_allclose(batch.weights, expected, rtol=1e-12)
    assert batch.weights.max() == 1.0


def test_is_weights_disabled():
    buf = buffer(use_is_weights=False)
    buf.push(tr(0), priority=2.0)
    buf.push(tr(1), priority=0.5)
    np.testing.assert_array_equal(buf.sample_prioritized(8, np.random.default_rng(0)).weights, 1.0)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_prioritized_sampling_distribution(alpha):
    rng = np.random.default_rng(int(alpha * 10))
    n = 37
    deltas = rng.exponential(size=n) * 3
    buf = ReplayBuffer(64, 2, 1, 2, PERConfig(alpha=alpha))
    for i in range(n):
        buf.push(tr(i))
    buf.update_priorities(np.arange(n), deltas)
    counts = np.zeros(n)
    for _ in range(500):
        counts += np.bincount(buf.sample_prioritized(200, rng).indices, minlength=n)
    assert total_variation(counts / counts.sum(), exact_per_distribution(deltas, alpha, 0.01)) <= 0.01


@settings(max_examples=25, deadline=None)
@given(ops=st.lists(st.tuples(st.sampled_from(["push", "update"]), st.floats(0.0, 50.0)), min_size=1, max_size=60))
def test_tree_matches_shadow_priorities(ops):
    buf = ReplayBuffer(8, 2, 1, 2, PERConfig(alpha=0.7))
    shadow = {}
    for i, (op, x) in enumerate(ops):
        if op == "push" or buf.pushed == 0:
            serial = buf.push(tr(i))
            shadow[serial % 8] = buf.max_priority ** 0.7
        else:
            serial = buf.pushed - 1
            buf.update_priorities([serial], [x])
            shadow[serial % 8] = (x + 0.01) ** 0.7
    assert buf.tree.check(1e-9)
    leaves = buf.priorities()
    for slot, p in shadow.items():
        assert leaves[slot] == pytest.approx(p, rel=1e-12)


# --- dump / load -----------------------------------------------------------

def test_dump_load_round_trip(tmp_path):
    buf = buffer(capacity=4)
    for i in range(6):
        buf.push(tr(i), priority=1.0 + i)
    buf.dump(tmp_path / "r.bin")
    other = ReplayBuffer.load(tmp_path / "r.bin", buf.per)
    assert len(other) == 4 and other.pushed == 6
    np.testing.assert_array_equal(other.priorities(), buf.priorities())
    np.testing.assert_array_equal(other.states[:4], buf.states[:4])
    a = buf.sample_prioritized(16, np.random.default_rng(3))
    b = other.sample_prioritized(16, np.random.default_rng(3))
    np.testing.assert_array_equal(a.indices, b.indices)


def test_load_truncated_dump(tmp_path):
    buf = buffer()
    buf.push(tr(0))
    buf.dump(tmp_path / "r.bin")
    data = (tmp_path / "r.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-9])
    with pytest.raises(CheckpointError):
        ReplayBuffer.load(tmp_path / "t.bin")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), step=st.integers(0, 200))
def test_is_weights_in_unit_interval(seed, step):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(32, 2, 1, 2, PERConfig(anneal_steps=100))
    for i in range(int(rng.integers(1, 40))):
        buf.push(tr(i), priority=float(rng.exponential()) + 1e-6)
    w = buf.sample_prioritized(16, rng, step=step).weights
    assert np.all(w > 0) and np.all(w <= 1.0) and w.max() == 1.0
