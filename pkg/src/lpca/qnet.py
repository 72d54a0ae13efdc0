"""Neural approximation of per-project Q-values parameterized by the multiplier.

The network maps (one-hot state, action / a_max, lambda / lambda_max) to a
scalar Q.  Training follows standard replay-buffer Q-learning, except that
every sampled transition is regressed against targets at a random subset of
multiplier values drawn from a fixed symmetric grid, so a single network
interpolates the whole Q(s, a, lambda) surface.  A lagged copy of the network
supplies bootstrap values and tracks the online weights through soft updates.

Everything is plain numpy: forward, reverse-mode gradients (for both weights
and the action input, which the greedy selector differentiates), and Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .envs import EnvironmentSpec, ProjectModel
from .errors import DomainError, TrainingDivergenceError

N_GRID_POINTS = 1000
DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class LambdaGrid:
    """Equispaced symmetric grid of multiplier values, 1000 points."""

    lambda_max: float
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.lambda_max <= 0:
            raise DomainError(f"lambda_max must be positive, got {self.lambda_max}")
        pts = np.linspace(-self.lambda_max, self.lambda_max, N_GRID_POINTS)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return N_GRID_POINTS


@dataclass(frozen=True)
class Transition:
    """One per-project experience sample."""

    project_index: int
    s: int
    a: float
    r: float
    s_next: int
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform batch sampling."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise DomainError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._entries: list[Transition] = []
        self._cursor = 0

    def push(self, t: Transition) -> None:
        if len(self._entries) < self.capacity:
            self._entries.append(t)
        else:
            self._entries[self._cursor] = t
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[Transition]:
        """Uniform sample without replacement within the batch."""
        if batch_size > len(self._entries):
            raise DomainError(
                f"cannot sample {batch_size} transitions from a buffer of {len(self._entries)}"
            )
        idx = rng.choice(len(self._entries), size=batch_size, replace=False)
        return [self._entries[i] for i in idx]

    def __len__(self) -> int:
        return len(self._entries)


class QNetwork:
    """Dense tanh network Q(s, a, lambda) over normalized inputs.

    Inputs are kept in [-1, 1]: the state is one-hot, the action is divided
    by a_max and the multiplier by lambda_max.  tanh keeps dQ/da smooth,
    which the gradient-greedy selector relies on.
    """

    def __init__(
        self,
        state_count: int,
        a_max: float,
        lambda_max: float,
        hidden: Sequence[int] = (64, 64),
        seed: int = 0,
    ):
        self.state_count = state_count
        self.a_max = a_max
        self.lambda_max = lambda_max
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        dims = [state_count + 2, *hidden, 1]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def for_model(
        cls, model: ProjectModel, lambda_max: float, hidden: Sequence[int] = (64, 64), seed: int = 0
    ) -> "QNetwork":
        return cls(model.state_count, model.a_max, lambda_max, hidden=hidden, seed=seed)

    def copy(self) -> "QNetwork":
        dup = object.__new__(QNetwork)
        dup.state_count = self.state_count
        dup.a_max = self.a_max
        dup.lambda_max = self.lambda_max
        dup.hidden = self.hidden
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    # -- encoding ----------------------------------------------------------

    def encode(self, s, a, lam) -> np.ndarray:
        """Build normalized input rows from broadcastable state/action/lambda."""
        s = np.atleast_1d(np.asarray(s, dtype=int))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        s, a, lam = np.broadcast_arrays(s, a, lam)
        n = s.size
        x = np.zeros((n, self.state_count + 2))
        x[np.arange(n), s.ravel()] = 1.0
        x[:, self.state_count] = a.ravel() / self.a_max
        x[:, self.state_count + 1] = lam.ravel() / self.lambda_max
        return x

    # -- forward / gradients -------------------------------------------------

    def _forward_cached(self, x: np.ndarray) -> list[np.ndarray]:
        """Forward pass keeping every layer's activations (x first)."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
            acts.append(h)
        return acts

    def forward_rows(self, x: np.ndarray) -> np.ndarray:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
        return h[:, 0]

    def forward(self, s: int, a: float, lam: float) -> float:
        return float(self.forward_rows(self.encode(s, a, lam))[0])

    def forward_many(self, s, a, lam) -> np.ndarray:
        return self.forward_rows(self.encode(s, a, lam))

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        """Reverse pass from d(loss)/d(output); returns (dW, db, dX)."""
        grads_w = [np.empty(0)] * len(self.weights)
        grads_b = [np.empty(0)] * len(self.biases)
        g = grad_out.reshape(-1, 1)
        for i in reversed(range(len(self.weights))):
            h_in = acts[i]
            grads_w[i] = h_in.T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (1.0 - acts[i] ** 2)
        return grads_w, grads_b, g

    def input_grad_rows(self, x: np.ndarray) -> np.ndarray:
        """d(output)/d(input) for every row of x."""
        acts = self._forward_cached(x)
        _, _, dx = self.backward(acts, np.ones(x.shape[0]))
        return dx

    def grad_action(self, s: int, a: float, lam: float) -> float:
        """dQ/da in raw action units (chain rule through the 1/a_max scaling)."""
        dx = self.input_grad_rows(self.encode(s, a, lam))
        return float(dx[0, self.state_count]) / self.a_max

    def grad_action_many(self, s, a, lam) -> np.ndarray:
        dx = self.input_grad_rows(self.encode(s, a, lam))
        return dx[:, self.state_count] / self.a_max


class TargetNetwork:
    """Lagged copy of a QNetwork, tracked by soft updates at rate tau."""

    def __init__(self, net: QNetwork, tau: float = 0.01):
        if not 0.0 < tau <= 1.0:
            raise DomainError(f"tau must lie in (0, 1], got {tau}")
        self.net = net.copy()
        self.tau = tau


def soft_update(target: TargetNetwork, net: QNetwork) -> TargetNetwork:
    """In-place w' <- tau*w + (1-tau)*w' for every weight and bias."""
    tau = target.tau
    for wt, w in zip(target.net.weights, net.weights):
        if wt.shape != w.shape:
            raise DomainError(f"weight shape mismatch {wt.shape} vs {w.shape}")
        wt *= 1.0 - tau
        wt += tau * w
    for bt, b in zip(target.net.biases, net.biases):
        bt *= 1.0 - tau
        bt += tau * b
    return target


class Adam:
    """Adaptive moment estimation over a QNetwork's parameter list."""

    def __init__(self, net: QNetwork, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in net.weights]
        self.v_w = [np.zeros_like(w) for w in net.weights]
        self.m_b = [np.zeros_like(b) for b in net.biases]
        self.v_b = [np.zeros_like(b) for b in net.biases]

    def step(self, net: QNetwork, grads_w: list[np.ndarray], grads_b: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, g in enumerate(grads_w):
            self.m_w[i] = self.beta1 * self.m_w[i] + (1 - self.beta1) * g
            self.v_w[i] = self.beta2 * self.v_w[i] + (1 - self.beta2) * g * g
            net.weights[i] -= self.lr * (self.m_w[i] / bc1) / (np.sqrt(self.v_w[i] / bc2) + self.eps)
        for i, g in enumerate(grads_b):
            self.m_b[i] = self.beta1 * self.m_b[i] + (1 - self.beta1) * g
            self.v_b[i] = self.beta2 * self.v_b[i] + (1 - self.beta2) * g * g
            net.biases[i] -= self.lr * (self.m_b[i] / bc1) / (np.sqrt(self.v_b[i] / bc2) + self.eps)


def compute_target(r: float, cost: float, lam: float, gamma: float,
                   v_expected: float, done: bool) -> float:
    """Bootstrap target r - lam*cost (+ gamma*v_expected when non-terminal)."""
    base = r - lam * cost
    if done:
        return base
    return base + gamma * v_expected


def max_over_actions(net: QNetwork, s: int, lam: float,
                     action_grid_size: int = 51) -> tuple[float, float]:
    """Best action on an equispaced grid over [0, a_max]; ties pick the smallest."""
    if action_grid_size < 2:
        raise DomainError(f"action_grid_size must be >= 2, got {action_grid_size}")
    actions = np.linspace(0.0, net.a_max, action_grid_size)
    q = net.forward_many(np.full(action_grid_size, s), actions, np.full(action_grid_size, lam))
    k = int(np.argmax(q))
    return float(actions[k]), float(q[k])


def _expected_value_table(
    target: QNetwork, lams: np.ndarray, action_grid_size: int
) -> np.ndarray:
    """max_a Q_target(s, a, lam) for every state and every lam; shape (S, K)."""
    n_s = target.state_count
    k = lams.size
    actions = np.linspace(0.0, target.a_max, action_grid_size)
    s_in, lam_in, a_in = np.meshgrid(np.arange(n_s), lams, actions, indexing="ij")
    q = target.forward_rows(target.encode(s_in.ravel(), a_in.ravel(), lam_in.ravel()))
    return q.reshape(n_s, k, action_grid_size).max(axis=2)


def train_step(
    net: QNetwork,
    target: TargetNetwork,
    buffer: ReplayBuffer,
    grid: LambdaGrid,
    batch_size: int,
    k_lambdas: int,
    gamma: float,
    env: EnvironmentSpec,
    optimizer: Adam,
    rng: np.random.Generator,
    action_grid_size: int = 51,
) -> float:
    """One regression step against lambda-grid targets, then a soft update.

    A batch of transitions and a batch-shared subset of k_lambdas grid values
    are drawn; every (transition, lambda) pair contributes one squared-error
    term.  Bootstrap values come from the target network, maximized over an
    equispaced action grid.  Returns the mean squared error.
    """
    batch = buffer.sample(rng, batch_size)
    lam_idx = rng.choice(len(grid), size=k_lambdas, replace=False)
    lams = grid.points[lam_idx]

    v_table = _expected_value_table(target.net, lams, action_grid_size)

    s = np.array([t.s for t in batch])
    a = np.array([t.a for t in batch])
    r = np.array([t.r for t in batch])
    s_next = np.array([t.s_next for t in batch])
    done = np.array([t.done for t in batch])
    cost = np.array(
        [env.projects[t.project_index].cost_fn(t.s, t.a) for t in batch]
    )

    # targets[j, k] = r_j - lam_k * cost_j + gamma * V[s'_j, k] (non-terminal)
    targets = r[:, None] - np.outer(cost, lams)
    targets += np.where(done[:, None], 0.0, gamma * v_table[s_next, :])

    n, k = batch_size, k_lambdas
    x = net.encode(
        np.repeat(s, k), np.repeat(a, k), np.tile(lams, n)
    )
    acts = net._forward_cached(x)
    pred = acts[-1][:, 0]
    diff = pred - targets.reshape(-1)
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss) or loss > DIVERGENCE_BOUND:
        raise TrainingDivergenceError(
            f"training loss diverged: loss={loss}, |pred|max={np.abs(pred).max()}, "
            f"|target|max={np.abs(targets).max()}"
        )

    grads_w, grads_b, _ = net.backward(acts, 2.0 * diff / diff.size)
    optimizer.step(net, grads_w, grads_b)
    soft_update(target, net)
    return loss


# -- checkpointing -----------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, net: QNetwork, grid: LambdaGrid) -> None:
    """Write a versioned npz container; round-trips bit-exactly."""
    payload = {
        "version": np.array(CHECKPOINT_VERSION),
        "state_count": np.array(net.state_count),
        "a_max": np.array(net.a_max),
        "lambda_max": np.array(net.lambda_max),
        "grid_lambda_max": np.array(grid.lambda_max),
        "n_layers": np.array(len(net.weights)),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[QNetwork, LambdaGrid]:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {version}")
        hidden = [int(data[f"w{i}"].shape[1]) for i in range(int(data["n_layers"]) - 1)]
        net = QNetwork(
            state_count=int(data["state_count"]),
            a_max=float(data["a_max"]),
            lambda_max=float(data["lambda_max"]),
            hidden=hidden,
        )
        net.weights = [data[f"w{i}"].copy() for i in range(int(data["n_layers"]))]
        net.biases = [data[f"b{i}"].copy() for i in range(int(data["n_layers"]))]
        grid = LambdaGrid(lambda_max=float(data["grid_lambda_max"]))
    return net, grid
