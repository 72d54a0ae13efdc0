"""Network forward/gradients, targets, replay, training step, checkpoints."""

import math

import numpy as np
import pytest

from lpca.envs import make_environment
from lpca.errors import DomainError, TrainingDivergenceError
from lpca.qnet import (
    Adam,
    LambdaGrid,
    QNetwork,
    ReplayBuffer,
    TargetNetwork,
    Transition,
    compute_target,
    load_checkpoint,
    max_over_actions,
    save_checkpoint,
    soft_update,
    train_step,
)


def _zeroed_output(net: QNetwork) -> QNetwork:
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.0
    return net


class TestLambdaGrid:
    def test_shape_and_symmetry(self):
        grid = LambdaGrid(5.0)
        assert len(grid) == 1000
        assert grid.points[0] == -5.0 and grid.points[-1] == 5.0
        assert np.all(np.diff(grid.points) > 0)
        np.testing.assert_allclose(grid.points + grid.points[::-1], 0.0, atol=1e-12)

    def test_positive_lambda_max_required(self):
        with pytest.raises(DomainError):
            LambdaGrid(0.0)


class TestForward:
    def test_zero_output_layer(self):
        net = _zeroed_output(QNetwork(2, 2.0, 5.0, seed=1))
        for s, a, lam in [(0, 0.0, 0.0), (1, 2.0, -5.0), (1, 1.3, 4.2)]:
            assert net.forward(s, a, lam) == 0.0

    def test_deterministic(self):
        net = QNetwork(2, 2.0, 5.0, seed=2)
        assert net.forward(1, 0.7, -2.0) == net.forward(1, 0.7, -2.0)

    def test_finite_on_domain(self):
        net = QNetwork(6, 2.0, 10.0, seed=3)
        rng = np.random.default_rng(0)
        s = rng.integers(0, 6, 200)
        a = rng.uniform(0, 2, 200)
        lam = rng.uniform(-10, 10, 200)
        assert np.all(np.isfinite(net.forward_many(s, a, lam)))


class TestGradAction:
    def test_zero_output_layer_gradient(self):
        net = _zeroed_output(QNetwork(2, 2.0, 5.0, seed=4))
        assert net.grad_action(0, 1.0, 0.5) == 0.0

    def test_matches_central_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-4 * 2.0  # h of 1e-4 in normalized action units
        for draw in range(100):
            net = QNetwork(2, 2.0, 5.0, hidden=(8, 8), seed=1000 + draw)
            s = int(rng.integers(0, 2))
            a = float(rng.uniform(0.1, 1.9))
            lam = float(rng.uniform(-4, 4))
            fd = (net.forward(s, a + h, lam) - net.forward(s, a - h, lam)) / (2 * h)
            an = net.grad_action(s, a, lam)
            assert abs(an - fd) / max(abs(fd), 1e-8) < 1e-4

    def test_linear_network_exact(self):
        net = QNetwork(2, 2.0, 5.0, hidden=(), seed=5)
        net.weights[0][:, 0] = [0.0, 0.0, 3.5, 0.0]  # Q = 3.5 * a / a_max
        net.biases[0][:] = 0.0
        assert math.isclose(net.grad_action(0, 1.0, 0.0), 3.5 / 2.0, rel_tol=1e-12)


class TestWeightGradients:
    def test_match_central_differences_all_layers(self):
        rng = np.random.default_rng(21)
        checked = 0
        for draw in range(100):
            net = QNetwork(2, 2.0, 5.0, hidden=(6, 5), seed=2000 + draw)
            x = net.encode(
                rng.integers(0, 2, 3), rng.uniform(0, 2, 3), rng.uniform(-5, 5, 3)
            )
            acts = net._forward_cached(x)
            grads_w, grads_b, _ = net.backward(acts, np.ones(3))
            layer = draw % len(net.weights)
            w = net.weights[layer]
            i = int(rng.integers(w.shape[0]))
            j = int(rng.integers(w.shape[1]))
            eps = 1e-6
            w[i, j] += eps
            up = net.forward_rows(x).sum()
            w[i, j] -= 2 * eps
            down = net.forward_rows(x).sum()
            w[i, j] += eps
            fd = (up - down) / (2 * eps)
            if abs(fd) < 1e-5:
                continue  # too small for a clean relative comparison
            assert abs(grads_w[layer][i, j] - fd) / abs(fd) < 1e-4
            checked += 1
        assert checked >= 80


class TestComputeTarget:
    def test_terminal_branch(self):
        assert compute_target(1.0, 1.0, 0.5, 0.9, 99.0, done=True) == 0.5

    def test_bootstrap_branch(self):
        assert math.isclose(
            compute_target(1.0, 1.0, 0.5, 0.9, 2.0, done=False), 2.3, rel_tol=1e-12
        )

    def test_lambda_zero_ignores_cost(self):
        for cost in (0.0, 1.0, 57.0):
            assert compute_target(2.0, cost, 0.0, 0.9, 1.0, False) == compute_target(
                2.0, 0.0, 0.0, 0.9, 1.0, False
            )

    def test_strictly_decreasing_in_lambda(self):
        lams = np.linspace(-5, 5, 50)
        vals = [compute_target(1.0, 0.7, lam, 0.9, 0.0, done=True) for lam in lams]
        assert all(b < a for a, b in zip(vals, vals[1:]))


class TestMaxOverActions:
    def test_constant_network_tie_breaks_low(self):
        net = _zeroed_output(QNetwork(2, 2.0, 5.0, seed=6))
        net.biases[-1][:] = 4.25
        a_star, q_star = max_over_actions(net, 0, 1.0, 51)
        assert a_star == 0.0 and q_star == 4.25

    def test_increasing_network_hits_a_max(self):
        net = QNetwork(2, 2.0, 5.0, hidden=(), seed=7)
        net.weights[0][:, 0] = [0.0, 0.0, 1.0, 0.0]
        net.biases[0][:] = 0.0
        a_star, _ = max_over_actions(net, 0, 0.0, 51)
        assert a_star == 2.0

    def test_agrees_with_refined_grid(self):
        for draw in range(50):
            net = QNetwork(2, 2.0, 5.0, hidden=(8, 8), seed=3000 + draw)
            coarse_a, _ = max_over_actions(net, draw % 2, 0.3, 51)
            fine_a, _ = max_over_actions(net, draw % 2, 0.3, 501)
            assert abs(coarse_a - fine_a) <= 2.0 / 50 + 1e-12


class TestSoftUpdate:
    def test_tau_one_copies(self):
        net = QNetwork(2, 2.0, 5.0, seed=8)
        target = TargetNetwork(QNetwork(2, 2.0, 5.0, seed=9), tau=1.0)
        soft_update(target, net)
        for wt, w in zip(target.net.weights, net.weights):
            np.testing.assert_array_equal(wt, w)

    def test_tau_zero_freezes(self):
        net = QNetwork(2, 2.0, 5.0, seed=10)
        target = TargetNetwork(QNetwork(2, 2.0, 5.0, seed=11), tau=0.5)
        before = [w.copy() for w in target.net.weights]
        target.tau = 0.0  # the type requires tau > 0; the update formula itself handles 0
        soft_update(target, net)
        for wt, w0 in zip(target.net.weights, before):
            np.testing.assert_array_equal(wt, w0)

    def test_tau_half_arithmetic(self):
        net = QNetwork(2, 2.0, 5.0, seed=12)
        for w in net.weights:
            w[:] = 2.0
        for b in net.biases:
            b[:] = 2.0
        target = TargetNetwork(net, tau=0.5)
        for w in target.net.weights:
            w[:] = 0.0
        for b in target.net.biases:
            b[:] = 0.0
        soft_update(target, net)
        for wt in target.net.weights:
            np.testing.assert_array_equal(wt, np.ones_like(wt))

    def test_target_stable_between_updates(self):
        net = QNetwork(2, 2.0, 5.0, seed=13)
        target = TargetNetwork(net, tau=0.5)
        x = target.net.encode([1], [0.4], [2.0])
        first = target.net.forward_rows(x)[0]
        for _ in range(5):
            assert target.net.forward_rows(x)[0] == first


class TestReplayBuffer:
    def test_capacity_eviction(self):
        buf = ReplayBuffer(capacity=3)
        for i in range(5):
            buf.push(Transition(0, 0, 0.0, float(i), 0, False))
        assert len(buf) == 3
        rewards = {t.r for t in buf._entries}
        assert rewards == {2.0, 3.0, 4.0}

    def test_sample_requires_enough_entries(self):
        buf = ReplayBuffer()
        buf.push(Transition(0, 0, 0.0, 0.0, 0, False))
        with pytest.raises(DomainError):
            buf.sample(np.random.default_rng(0), 2)

    def test_uniform_selection(self):
        buf = ReplayBuffer()
        for i in range(10):
            buf.push(Transition(0, 0, 0.0, float(i), 0, False))
        rng = np.random.default_rng(42)
        counts = np.zeros(10)
        draws = 100_000
        for _ in range(draws // 4):
            for t in buf.sample(rng, 4):
                counts[int(t.r)] += 1
        p = 1.0 / 10.0
        se = math.sqrt(p * (1 - p) / draws)
        np.testing.assert_array_less(np.abs(counts / draws - p), 3 * se)


def _single_transition_setup(lam_scale=1e-9):
    """Buffer with one transition and a grid collapsed around lambda = 0."""
    env = make_environment("type_a", 1, 2.0, 0.9)
    net = QNetwork(2, 2.0, 5.0, seed=14)
    target = TargetNetwork(net, tau=1.0)
    buf = ReplayBuffer()
    buf.push(Transition(0, 0, 0.5, 3.0, 1, True))
    grid = LambdaGrid(lam_scale)
    return env, net, target, buf, grid


class TestTrainStep:
    def test_empty_buffer_errors(self):
        env, net, target, _, grid = _single_transition_setup()
        with pytest.raises(DomainError):
            train_step(net, target, ReplayBuffer(), grid, 1, 1, 0.9, env,
                       Adam(net), np.random.default_rng(0))

    def test_fixed_target_regression(self):
        env, net, target, buf, grid = _single_transition_setup()
        opt = Adam(net)
        rng = np.random.default_rng(15)
        for _ in range(3000):
            train_step(net, target, buf, grid, 1, 1, 0.9, env, opt, rng)
        assert abs(net.forward(0, 0.5, 0.0) - 3.0) < 1e-3

    def test_loss_nonnegative(self):
        env, net, target, buf, grid = _single_transition_setup()
        opt = Adam(net)
        rng = np.random.default_rng(16)
        for _ in range(20):
            assert train_step(net, target, buf, grid, 1, 1, 0.9, env, opt, rng) >= 0.0

    def test_divergence_guard(self):
        env, net, target, buf, grid = _single_transition_setup()
        net.biases[-1][:] = 1e7
        with pytest.raises(TrainingDivergenceError):
            train_step(net, target, buf, grid, 1, 1, 0.9, env, Adam(net),
                       np.random.default_rng(0))

    def test_deterministic_loss_sequence(self):
        def run():
            env, net, target, buf, grid = _single_transition_setup(lam_scale=5.0)
            buf.push(Transition(0, 1, 1.5, 0.0, 0, False))
            opt = Adam(net)
            rng = np.random.default_rng(17)
            return [
                train_step(net, target, buf, grid, 2, 4, 0.9, env, opt, rng)
                for _ in range(25)
            ]

        assert run() == run()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = QNetwork(6, 2.0, 10.0, seed=18)
        grid = LambdaGrid(10.0)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, net, grid)
        loaded, loaded_grid = load_checkpoint(path)
        for w1, w2 in zip(net.weights, loaded.weights):
            np.testing.assert_array_equal(w1, w2)
        for b1, b2 in zip(net.biases, loaded.biases):
            np.testing.assert_array_equal(b1, b2)
        assert loaded_grid.lambda_max == grid.lambda_max
        rng = np.random.default_rng(1)
        s = rng.integers(0, 6, 50)
        a = rng.uniform(0, 2, 50)
        lam = rng.uniform(-10, 10, 50)
        np.testing.assert_array_equal(
            net.forward_many(s, a, lam), loaded.forward_many(s, a, lam)
        )
