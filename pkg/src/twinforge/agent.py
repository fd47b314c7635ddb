"""Deep Q-learning gate that decides which queued updates reach the twin.

The network maps the flattened state (last ``delta`` twin views) to one
value per physical twin. The value of a whole update vector is the sum of
the values of its selected twins, so the greedy action is a per-twin binary
step at zero and the Bellman target stays a sum of per-twin maxima.

Networks built for training carry one extra output, a state baseline
``v(s)``, so that ``Q(s, a) = v(s) + sum_i a_i q_i(s)``. Without it the
empty action is pinned to zero value and bootstrapped targets with positive
continuation value cannot be fitted.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyBatch, InsufficientExperience, ShapeMismatch
from .graph import GraphSignal, SpatialGraph
from .ingest import UpdateAction


@dataclass
class AgentConfig:
    delta: int = 4
    lr: float = 0.06
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay: float = 0.995
    replay_capacity: int = 10_000
    batch_size: int = 32
    update_interval: int = 100
    hidden_sizes: tuple = (64, 64)
    reward_sign: int = 1
    penalty_weight: float = 1.0
    grad_clip: float = 1.0
    td_clip: float = 0.0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must be in (0, 1]")
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        if self.reward_sign not in (1, -1):
            raise ValueError("reward_sign must be +1 or -1")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be non-negative")
        if self.grad_clip < 0 or self.td_clip < 0:
            raise ValueError("grad_clip and td_clip must be non-negative")
        if self.batch_size < 1 or self.replay_capacity < 1:
            raise ValueError("batch_size and replay_capacity must be positive")

    def epsilon(self, episode: int) -> float:
        return max(self.epsilon_end, self.epsilon_start * self.epsilon_decay ** episode)


class QNetwork:
    """Fully connected ReLU network with a linear output layer.

    With ``baseline=True`` output 0 is the state baseline and the remaining
    outputs are the per-twin update values.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None, baseline: bool = False):
        self.sizes = tuple(int(s) for s in sizes)
        self.baseline = bool(baseline)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = k == len(self.sizes) - 2
            limit = np.sqrt((3.0 if last else 6.0) / fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def for_problem(cls, n, f, cfg: AgentConfig, rng=None):
        return cls((n * f * cfg.delta, *cfg.hidden_sizes, n + 1), rng, baseline=True)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_inputs(self):
        return self.sizes[0]

    @property
    def n_outputs(self):
        return self.sizes[-1]

    @property
    def n_actions(self):
        return self.sizes[-1] - int(self.baseline)

    def copy(self) -> QNetwork:
        new = QNetwork.__new__(QNetwork)
        new.sizes = self.sizes
        new.baseline = self.baseline
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def _run(self, x):
        """Forward pass keeping the inputs of every layer for backprop."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if k == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def backward(self, acts, dout):
        """Parameter gradients given upstream gradient ``dout`` on the outputs."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        g = dout
        for k in reversed(range(len(self.weights))):
            h_in = acts[k]
            grads_w[k] = h_in.T @ g
            grads_b[k] = g.sum(axis=0)
            if k:
                g = (g @ self.weights[k].T) * (acts[k] > 0)
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out += [gw, gb]
        return out

    def same_shape(self, other: QNetwork) -> bool:
        return self.sizes == other.sizes and self.baseline == other.baseline


def _as_input(net: QNetwork, s) -> np.ndarray:
    x = np.asarray(s, dtype=float)
    if x.ndim == 3:
        x = x.reshape(-1)
    if x.ndim == 1:
        if x.size != net.n_inputs:
            raise ShapeMismatch(f"state has {x.size} entries, network expects {net.n_inputs}")
        return x
    if x.ndim == 2 and x.shape[1] == net.n_inputs:
        return x
    raise ShapeMismatch(f"cannot feed array of shape {x.shape} to a {net.n_inputs}-input network")


def _outputs(net: QNetwork, s) -> tuple[np.ndarray, bool]:
    x = _as_input(net, s)
    single = x.ndim == 1
    return net._run(x[None, :] if single else x)[-1], single


def forward(net: QNetwork, s) -> np.ndarray:
    """Per-twin Q values for one state (N x F x delta tensor or flat vector) or a batch."""
    out, single = _outputs(net, s)
    q = out[:, int(net.baseline):]
    return q[0] if single else q


def state_baseline(net: QNetwork, s):
    """The baseline output ``v(s)``; zero for networks without one."""
    out, single = _outputs(net, s)
    v = out[:, 0] if net.baseline else np.zeros(len(out))
    return float(v[0]) if single else v


def encode_state(window: np.ndarray) -> np.ndarray:
    """Flattened network input; features are non-negative counts and flows."""
    return np.log1p(np.maximum(window, 0.0)).ravel()


def select_action(q, epsilon: float, rng: np.random.Generator) -> UpdateAction:
    """Binary step on ``q`` (ties at 0 -> no update) with per-bit exploration."""
    q = np.asarray(q, dtype=float)
    greedy = (q > 0).astype(np.int8)
    explore = rng.random(q.size) < epsilon
    coins = rng.integers(0, 2, size=q.size, dtype=np.int8)
    return UpdateAction(np.where(explore, coins, greedy))


def penalty(a: UpdateAction, g: SpatialGraph) -> float:
    """Memory operations to apply ``a``: retrieval, record, temporal edge, one per out-edge."""
    bits = a.bits if isinstance(a, UpdateAction) else np.asarray(a)
    if len(bits) != g.n_nodes:
        raise ShapeMismatch(f"action length {len(bits)} != {g.n_nodes}")
    return float(sum(3 + g.out_degree(i) for i in np.flatnonzero(bits)))


def reward(x_t, x_next, a: UpdateAction, g: SpatialGraph, cfg: AgentConfig) -> float:
    """Per-entry absolute change normalised by N+F, minus the weighted penalty."""
    xt = x_t.values if isinstance(x_t, GraphSignal) else np.asarray(x_t, dtype=float)
    xn = x_next.values if isinstance(x_next, GraphSignal) else np.asarray(x_next, dtype=float)
    if xt.shape != xn.shape or xt.ndim != 2:
        raise ShapeMismatch(f"signals of shape {xt.shape} and {xn.shape}")
    n, f = xt.shape
    change = np.abs(xn - xt).sum() / (n + f)
    return float(cfg.reward_sign * change - cfg.penalty_weight * penalty(a, g))


@dataclass
class Experience:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool = False


class ReplayMemory:
    """Ring buffer of experiences with uniform sampling without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._buf: list[Experience] = []
        self._next = 0

    def remember(self, e: Experience):
        if len(self._buf) < self.capacity:
            self._buf.append(e)
        else:
            self._buf[self._next] = e
        self._next = (self._next + 1) % self.capacity

    def sample_indices(self, batch_size, rng) -> np.ndarray:
        if len(self._buf) < batch_size:
            raise InsufficientExperience(
                f"{len(self._buf)} experiences stored, batch needs {batch_size}")
        return rng.choice(len(self._buf), size=batch_size, replace=False)

    def sample_batch(self, batch_size, rng) -> list[Experience]:
        return [self._buf[i] for i in self.sample_indices(batch_size, rng)]

    def __len__(self):
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)


def _stack(batch):
    s = np.stack([np.asarray(e.s, dtype=float).ravel() for e in batch])
    a = np.stack([np.asarray(e.a, dtype=float).ravel() for e in batch])
    r = np.array([e.r for e in batch], dtype=float)
    s2 = np.stack([np.asarray(e.s_next, dtype=float).ravel() for e in batch])
    done = np.array([e.terminal for e in batch], dtype=bool)
    return s, a, r, s2, done


def td_targets(batch, target: QNetwork, gamma: float) -> np.ndarray:
    """``r + gamma * max_a Q'(s', a)``; the max is the baseline plus positive q'."""
    _, _, r, s2, done = _stack(batch)
    q_next = forward(target, s2)
    best = np.maximum(q_next, 0.0).sum(axis=1) + state_baseline(target, s2)
    return r + gamma * np.where(done, 0.0, best)


def loss_and_grads(batch, net: QNetwork, target: QNetwork, gamma: float, td_clip: float = 0.0):
    """Mean squared TD error and its gradient w.r.t. ``net.params``.

    With ``td_clip > 0`` the square is replaced beyond ``|err| = td_clip`` by
    its tangent line, so each sample's gradient uses the clipped error.
    """
    if not batch:
        raise EmptyBatch("optimize needs at least one experience")
    s, a, _, _, _ = _stack(batch)
    if a.shape[1] != net.n_actions:
        raise ShapeMismatch(f"action length {a.shape[1]} != {net.n_actions}")
    y = td_targets(batch, target, gamma)
    acts = net._run(_as_input(net, s))
    # d Q(s,a) / d outputs: 1 for the baseline, a_i for the per-twin values
    coef = np.hstack([np.ones((len(a), 1)), a]) if net.baseline else a
    q_sa = (acts[-1] * coef).sum(axis=1)
    err = q_sa - y
    if td_clip > 0:
        mag = np.abs(err)
        loss = float(np.mean(np.where(mag <= td_clip, err ** 2, 2 * td_clip * mag - td_clip ** 2)))
        err = np.clip(err, -td_clip, td_clip)
    else:
        loss = float(np.mean(err ** 2))
    dout = (2.0 / len(batch)) * err[:, None] * coef
    return loss, net.backward(acts, dout)


def optimize(batch, net: QNetwork, target: QNetwork, cfg: AgentConfig) -> float:
    """One gradient-descent step on ``net``; ``target`` is read only."""
    loss, grads = loss_and_grads(batch, net, target, cfg.gamma, cfg.td_clip)
    if cfg.grad_clip > 0:
        norm = np.sqrt(sum(float((g ** 2).sum()) for g in grads))
        if norm > cfg.grad_clip:
            grads = [g * (cfg.grad_clip / norm) for g in grads]
    for p, g in zip(net.params, grads):
        p -= cfg.lr * g
    return loss


def sync_target(net: QNetwork, target: QNetwork):
    if not net.same_shape(target):
        raise ShapeMismatch(f"network sizes {net.sizes} != {target.sizes}")
    for dst, src in zip(target.params, net.params):
        dst[...] = src


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    FIELDS = ("episode", "lr", "cumulative_reward", "mean_loss",
              "actions_taken", "mem_ops", "energy_mj")

    def add(self, **row):
        self.rows.append({k: row[k] for k in self.FIELDS})

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path, append=False):
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS)
            if not append:
                w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def config_dict(cfg: AgentConfig) -> dict:
    return asdict(cfg)


class TwinAgent:
    """Online network, frozen target, replay memory and exploration stream."""

    def __init__(self, n: int, f: int, cfg: AgentConfig, seed: int = 0):
        self.cfg = cfg
        init_ss, explore_ss = np.random.SeedSequence(seed).spawn(2)
        self.net = QNetwork.for_problem(n, f, cfg, np.random.default_rng(init_ss))
        self.target = self.net.copy()
        self.memory = ReplayMemory(cfg.replay_capacity)
        self.rng = np.random.default_rng(explore_ss)
        self.steps = 0
        self.syncs = 0

    def act(self, s, epsilon: float) -> UpdateAction:
        return select_action(forward(self.net, s), epsilon, self.rng)

    def learn(self, e: Experience):
        """Store ``e``, take one optimizer step when possible, sync on schedule."""
        self.memory.remember(e)
        loss = None
        if len(self.memory) >= self.cfg.batch_size:
            batch = self.memory.sample_batch(self.cfg.batch_size, self.rng)
            loss = optimize(batch, self.net, self.target, self.cfg)
        self.steps += 1
        if self.steps % self.cfg.update_interval == 0:
            sync_target(self.net, self.target)
            self.syncs += 1
        return loss


def run_episode(env, agent: TwinAgent, horizon: int, epsilon: float, learn: bool = True,
                on_tick=None) -> dict:
    """Drive one episode of gated twinning.

    Per tick: advance the physical layer, read the state, pick the update
    vector, apply it through the ETL step, score it, and (optionally) learn.
    ``on_tick(env, result)`` is called after every applied action.
    """
    g = env.network.spatial
    cfg = agent.cfg
    s = encode_state(env.state())
    total, losses, taken = 0.0, [], 0
    ops0 = env.store.memory_ops
    bytes0 = env.bytes_processed
    for _ in range(horizon):
        env.advance()
        x_t = env.etl.view.copy()
        a = agent.act(s, epsilon)
        res = env.apply(a)
        r = reward(x_t, res.new_signal, a, g, cfg)
        s_next = encode_state(env.state())
        if learn:
            # the horizon cut is a truncation, so the last step still bootstraps
            loss = agent.learn(Experience(s, a.bits.copy(), r, s_next, False))
            if loss is not None:
                losses.append(loss)
        total += r
        taken += int(a.bits.sum())
        if on_tick is not None:
            on_tick(env, res)
        s = s_next
    return {
        "cumulative_reward": total,
        "mean_loss": float(np.mean(losses)) if losses else 0.0,
        "actions_taken": taken,
        "mem_ops": env.store.memory_ops - ops0,
        "bytes": env.bytes_processed - bytes0,
    }


def train(cfg: AgentConfig, settings, episodes: int, horizon: int, seed: int = 0,
          energy=None, agent: TwinAgent | None = None):
    """Train a gate on fresh traffic each episode over one fixed road network.

    Returns ``(TrainingLog, TwinAgent)``.
    """
    from .metrics import EnergyModel, energy_proxy
    from .sim import N_FEATURES
    from .twinning import TwinEnv

    energy = energy or EnergyModel()
    network = settings.network(seed)
    agent = agent or TwinAgent(network.n, N_FEATURES, cfg, seed)
    log = TrainingLog()
    for ep in range(episodes):
        env = TwinEnv(network, settings, seed=[seed, ep], delta=cfg.delta)
        out = run_episode(env, agent, horizon, cfg.epsilon(ep))
        log.add(episode=ep, lr=cfg.lr, cumulative_reward=out["cumulative_reward"],
                mean_loss=out["mean_loss"], actions_taken=out["actions_taken"],
                mem_ops=out["mem_ops"],
                energy_mj=energy_proxy(out["mem_ops"], out["bytes"], energy))
    return log, agent
