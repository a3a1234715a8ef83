import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import centroids_direct, fixed_net, q_direct
from rbfdqn import nn_core, rbf_q
from rbfdqn.errors import CheckpointError, ShapeError
from rbfdqn.gradcheck import q_gradient_error, small_rbf


# --- q_value ---------------------------------------------------------------

def test_single_centroid_q_is_its_value():
    net = fixed_net([[0.3]], [2.5])
    for a in (-1.0, 0.0, 0.9):
        assert rbf_q.q_value(net, [0.0], [a]) == pytest.approx(2.5, abs=1e-12)


def test_two_centroid_hand_computation():
    net = fixed_net([[-0.5], [0.5]], [0.0, 1.0], beta=2.0)
    # at a = 0.5: distances 1 and 0 -> weights e^-2 and 1
    expected = 1.0 / (1.0 + np.exp(-2.0))
    assert rbf_q.q_value(net, [0.0], [0.5]) == pytest.approx(expected, abs=1e-12)
    # midpoint: equal weights
    assert rbf_q.q_value(net, [0.0], [0.0]) == pytest.approx(0.5, abs=1e-12)


def test_q_at_centroid_approaches_value_for_large_beta():
    net = fixed_net([[-0.5, 0.2], [0.6, -0.4], [0.1, 0.9]], [1.0, -2.0, 3.0], beta=200.0)
    for i, v in enumerate([1.0, -2.0, 3.0]):
        loc, _ = rbf_q.centroids(net, [0.0])
        assert rbf_q.q_value(net, [0.0], loc[i]) == pytest.approx(v, abs=1e-6)


@pytest.mark.parametrize("norm", ["l2", "l1"])
def test_q_matches_direct_oracle(norm):
    rng = np.random.default_rng(42)
    for _ in range(50):
        net = small_rbf(rng, input_dim=3, action_dim=int(rng.integers(1, 4)), num_centroids=5,
                        beta=float(rng.uniform(0.5, 8)), activation="relu", norm=norm)
        s = rng.normal(size=3)
        a = rng.uniform(-1, 1, net.action_dim)
        assert abs(rbf_q.q_value(net, s, a) - q_direct(net, s, a)) <= 1e-10


def test_centroids_lie_in_action_box():
    rng = np.random.default_rng(1)
    net = rbf_q.make_rbf_q(2, [-2.0, 0.0], [0.5, 3.0], rng, num_centroids=16, hidden=(8,))
    loc, values = rbf_q.centroids(net, rng.normal(size=(20, 2)) * 50)
    assert loc.shape == (20, 16, 2) and values.shape == (20, 16)
    assert np.all(loc >= net.action_low) and np.all(loc <= net.action_high)
    ref, _ = centroids_direct(net, [0.3, -0.2])
    np.testing.assert_allclose(rbf_q.centroids(net, [0.3, -0.2])[0], ref, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), beta=st.floats(0.1, 50.0))
def test_q_is_convex_combination_of_values(seed, beta):
    rng = np.random.default_rng(seed)
    net = small_rbf(rng, beta=beta, activation="relu")
    s = rng.normal(size=(4, net.input_dim))
    a = rng.uniform(-1, 1, (4, net.action_dim))
    q = rbf_q.q_value(net, s, a)
    _, values = rbf_q.centroids(net, s)
    assert np.all(q >= values.min(axis=1) - 1e-12)
    assert np.all(q <= values.max(axis=1) + 1e-12)


def test_batched_q_matches_single():
    rng = np.random.default_rng(5)
    net = small_rbf(rng)
    s = rng.normal(size=(6, net.input_dim))
    a = rng.uniform(-1, 1, (6, net.action_dim))
    q = rbf_q.q_value(net, s, a)
    for i in range(6):
        assert q[i] == pytest.approx(rbf_q.q_value(net, s[i], a[i]), abs=1e-14)


def test_shape_errors():
    net = small_rbf(np.random.default_rng(0))
    with pytest.raises(ShapeError):
        rbf_q.q_value(net, np.zeros(net.input_dim + 1), np.zeros(net.action_dim))
    with pytest.raises(ShapeError):
        rbf_q.q_value(net, np.zeros(net.input_dim), np.zeros(net.action_dim + 1))


def test_invalid_construction():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        rbf_q.make_rbf_q(2, [0.0], [0.0], rng)
    with pytest.raises(ValueError):
        rbf_q.make_rbf_q(2, [0.0], [1.0], rng, beta=0.0)
    with pytest.raises(ValueError):
        rbf_q.make_rbf_q(2, [0.0], [1.0], rng, norm="linf")


# --- greedy action ---------------------------------------------------------

def test_greedy_picks_best_centroid_by_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(30):
        net = small_rbf(rng, num_centroids=6, beta=float(rng.uniform(0.5, 10)))
        s = rng.normal(size=net.input_dim)
        action, q = rbf_q.greedy_action(net, s)
        locs, values = centroids_direct(net, s)
        scores = [q_direct(net, s, loc, locs, values) for loc in locs]
        best = int(np.argmax(scores))
        np.testing.assert_allclose(action, locs[best], atol=1e-12)
        assert q == pytest.approx(scores[best], abs=1e-10)


def test_greedy_tie_goes_to_lowest_index():
    net = fixed_net([[0.5], [-0.5], [0.5]], [1.0, 1.0, 1.0])
    action, q = rbf_q.greedy_action(net, [0.0])
    assert action[0] == pytest.approx(0.5) and q == pytest.approx(1.0)
    net = fixed_net([[0.2], [-0.6]], [1.0, 1.0])
    assert rbf_q.greedy_action(net, [0.0])[0][0] == pytest.approx(0.2)


def test_greedy_batched_and_centroid_max_agree():
    rng = np.random.default_rng(8)
    net = small_rbf(rng)
    s = rng.normal(size=(7, net.input_dim))
    actions, q = rbf_q.greedy_action(net, s)
    np.testing.assert_allclose(rbf_q.centroid_max(net, s), q, atol=1e-14)
    np.testing.assert_allclose(rbf_q.q_value(net, s, actions), q, atol=1e-12)
    for i in range(7):
        a_i, q_i = rbf_q.greedy_action(net, s[i])
        np.testing.assert_allclose(a_i, actions[i])


def test_centroid_max_close_to_grid_max_for_large_beta():
    rng = np.random.default_rng(11)
    net = rbf_q.make_rbf_q(2, [-1.0], [1.0], rng, num_centroids=8, beta=50.0, hidden=(16,), activation="tanh")
    s = rng.normal(size=2)
    locs, values = rbf_q.centroids(net, s)
    # the grid includes the centroids, so it can never do worse than the centroid search
    grid = np.concatenate([np.linspace(-1, 1, 2001)[:, None], locs])
    grid_max = rbf_q.q_value(net, np.tile(s, (len(grid), 1)), grid).max()
    gap = grid_max - rbf_q.centroid_max(net, s[None])[0]
    assert -1e-12 <= gap <= 0.05 * (values.max() - values.min())


# --- gradients -------------------------------------------------------------

@pytest.mark.parametrize("norm", ["l2", "l1"])
def test_q_gradient_matches_finite_differences(norm):
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 10:
        net = small_rbf(rng, norm=norm)
        s = rng.uniform(-1, 1, net.input_dim)
        a = rng.uniform(-1, 1, net.action_dim)
        if norm == "l1" and np.min(np.abs(rbf_q.centroids(net, s)[0] - a)) < 1e-3:
            continue
        assert q_gradient_error(net, s, a, float(rng.normal())) < 1e-4
        checked += 1


def test_gradient_at_centroid_location_is_finite():
    net = fixed_net([[0.25, -0.1], [0.5, 0.5]], [1.0, 0.0], beta=3.0)
    loc, _ = rbf_q.centroids(net, [0.0])
    g_loc, g_val = rbf_q.q_gradient(net, [0.0], loc[0], 1.0)
    assert np.all(np.isfinite(g_loc.values)) and np.all(np.isfinite(g_val.values))


def test_q_gradient_is_linear_in_upstream():
    rng = np.random.default_rng(2)
    net = small_rbf(rng)
    s, a = rng.normal(size=net.input_dim), rng.uniform(-1, 1, net.action_dim)
    g1 = rbf_q.q_gradient(net, s, a, 1.0)
    g3 = rbf_q.q_gradient(net, s, a, -3.0)
    np.testing.assert_allclose(g3[0].values, -3.0 * g1[0].values, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(g3[1].values, -3.0 * g1[1].values, rtol=1e-12, atol=1e-15)


# --- persistence -----------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    net = rbf_q.make_rbf_q(4, [-1.0, -2.0], [1.0, 2.0], rng, num_centroids=5, beta=3.5, hidden=(7,), norm="l1")
    path = tmp_path / "net.rbfq"
    rbf_q.save(net, path, {"task": "x"})
    loaded, extra = rbf_q.load(path)
    assert extra == {"task": "x"}
    assert loaded.beta == 3.5 and loaded.norm == "l1" and loaded.num_centroids == 5
    s = rng.normal(size=(3, 4))
    a = rng.uniform(-1, 1, (3, 2))
    assert rbf_q.q_value(loaded, s, a).tobytes() == rbf_q.q_value(net, s, a).tobytes()


def test_load_rejects_plain_param_checkpoint(tmp_path):
    spec = nn_core.linear_spec(2, 2)
    nn_core.write_checkpoint(tmp_path / "p.rbfq", nn_core.init_params(spec, np.random.default_rng(0)))
    with pytest.raises(CheckpointError):
        rbf_q.load(tmp_path / "p.rbfq")


def test_copy_is_independent():
    net = small_rbf(np.random.default_rng(0))
    other = net.copy()
    other.value_params.values += 1.0
    assert not np.array_equal(other.value_params.values, net.value_params.values)
    other.load_from(net)
    assert np.array_equal(other.value_params.values, net.value_params.values)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(-100.0, 100.0))
def test_shift_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    net = small_rbf(rng, num_centroids=6)
    s = rng.normal(size=(3, net.input_dim))
    a = rng.uniform(-1, 1, (3, net.action_dim))
    q = rbf_q.q_value(net, s, a)
    act0, _ = rbf_q.greedy_action(net, s)
    shifted = net.copy()
    shifted.value_params[f"b{shifted.value_spec.num_layers - 1}"][...] += c
    np.testing.assert_allclose(rbf_q.q_value(shifted, s, a), q + c, rtol=0, atol=1e-12 * (1 + abs(c)))
    np.testing.assert_array_equal(rbf_q.greedy_action(shifted, s)[0], act0)


@pytest.mark.parametrize("beta", [1e-3, 1.0, 1e3])
@pytest.mark.parametrize("half_width", [0.01, 1.0, 50.0])
def test_q_finite_for_sharp_kernels_and_wide_boxes(beta, half_width):
    rng = np.random.default_rng(0)
    net = rbf_q.make_rbf_q(3, -half_width * np.ones(2), half_width * np.ones(2), rng, num_centroids=8,
                           beta=beta, hidden=(8,))
    s = rng.normal(size=(50, 3)) * 10
    a = rng.uniform(-half_width, half_width, (50, 2))
    assert np.all(np.isfinite(rbf_q.q_value(net, s, a)))
    assert np.all(np.isfinite(rbf_q.centroid_max(net, s)))
    g_loc, g_val = rbf_q.q_gradient(net, s, a, np.ones(50))
    assert np.all(np.isfinite(g_loc.values)) and np.all(np.isfinite(g_val.values))
