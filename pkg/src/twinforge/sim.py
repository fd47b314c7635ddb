"""Seeded stand-in for the physical layer.

A macroscopic junction-level traffic model produces, every tick, three
features per junction (current density, incoming flow, outgoing flow).
Junction sensors emit these as measurements that travel to the twin over a
lossy channel with latency and jitter.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import pdist, squareform

from .errors import BadTopologyArgs, OutOfRetention
from .graph import GraphSignal, SpatialGraph

FEATURES = ("current_density", "incoming_flow", "outgoing_flow")
N_FEATURES = len(FEATURES)
TOPOLOGIES = ("grid", "ring", "random-geometric")
MIN_WEIGHT, MAX_WEIGHT = 50.0, 500.0


@dataclass
class RoadNetwork:
    spatial: SpatialGraph
    turn: np.ndarray  # N x N routing matrix, rows sum to 1 (or 0 for sinks)
    entries: tuple = ()
    exits: tuple = ()

    @property
    def n(self) -> int:
        return self.spatial.n_nodes

    @classmethod
    def from_edges(cls, n, edges, entries=(), exits=(), turn=None):
        """Build a network from explicit ``(src, dst, weight)`` edges.

        Without an explicit ``turn`` matrix, outflow splits evenly over the
        outgoing edges.
        """
        spatial = SpatialGraph(n, edges)
        if turn is None:
            turn = np.zeros((n, n))
            for i in range(n):
                succ = spatial.successors(i)
                for j in succ:
                    turn[i, j] = 1.0 / len(succ)
        return cls(spatial, np.asarray(turn, dtype=float), tuple(entries), tuple(exits))


def _grid_edges(side):
    edges = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                edges += [(i, i + 1), (i + 1, i)]
            if r + 1 < side:
                edges += [(i, i + side), (i + side, i)]
    return edges


def _random_geometric_edges(n, rng, k=3):
    pts = rng.random((n, 2))
    dist = squareform(pdist(pts))
    pairs = set()
    order = np.argsort(dist, axis=1)
    for i in range(n):
        for j in order[i, 1:k + 1]:
            pairs.add((min(i, j), max(i, j)))
    # spanning tree keeps the undirected graph connected, hence strongly connected
    tree = minimum_spanning_tree(dist).tocoo()
    for i, j in zip(tree.row, tree.col):
        pairs.add((min(i, j), max(i, j)))
    edges = []
    for i, j in sorted(pairs):
        edges += [(int(i), int(j)), (int(j), int(i))]
    return edges, dist


def generate_network(n: int, topology: str = "random-geometric", seed: int = 0) -> RoadNetwork:
    """Deterministic junction topology with routing, entries and exits.

    ``grid`` needs a perfect-square ``n``. Edge weights lie in [50, 500] m.
    A fifth of the junctions (at least one) are entries; all are exits.
    """
    if n < 2:
        raise BadTopologyArgs("need at least 2 junctions")
    if topology not in TOPOLOGIES:
        raise BadTopologyArgs(f"unknown topology {topology!r}; choose from {TOPOLOGIES}")
    rng = np.random.default_rng(seed)
    if topology == "ring":
        pairs = [(i, (i + 1) % n) for i in range(n)]
        weights = rng.uniform(MIN_WEIGHT, MAX_WEIGHT, size=len(pairs))
    elif topology == "grid":
        side = math.isqrt(n)
        if side * side != n:
            raise BadTopologyArgs(f"grid needs a perfect-square junction count, got {n}")
        pairs = _grid_edges(side)
        weights = rng.uniform(MIN_WEIGHT, MAX_WEIGHT, size=len(pairs))
    else:
        pairs, dist = _random_geometric_edges(n, rng)
        d = np.array([dist[i, j] for i, j in pairs])
        lo, hi = d.min(), d.max()
        span = hi - lo if hi > lo else 1.0
        weights = MIN_WEIGHT + (MAX_WEIGHT - MIN_WEIGHT) * (d - lo) / span
    spatial = SpatialGraph(n, [(i, j, w) for (i, j), w in zip(pairs, weights)])

    turn = np.zeros((n, n))
    for i in range(n):
        succ = spatial.successors(i)
        if succ:
            turn[i, succ] = rng.dirichlet(np.ones(len(succ)))
    k = max(1, n // 5)
    entries = tuple(sorted(int(x) for x in rng.choice(n, size=k, replace=False)))
    # every junction has side streets and parking, so vehicles may leave anywhere
    exits = tuple(range(n))
    return RoadNetwork(spatial, turn, entries, exits)


@dataclass
class TrafficState:
    tick: int
    counts: np.ndarray
    incoming: np.ndarray
    outgoing: np.ndarray
    inserted: float
    exited: float

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def features(self) -> np.ndarray:
        return np.column_stack([self.counts, self.incoming, self.outgoing])


class TrafficSim:
    """Macroscopic density/flow model on a road network.

    Each tick a ``service_rate`` fraction of every junction's vehicles leaves
    it. At exit junctions ``exit_prob`` of that outflow leaves the network;
    the rest is split by the routing matrix. Entry junctions receive Poisson
    insertions whose rate follows a sinusoidal demand profile with a seeded
    phase per entry.
    """

    def __init__(self, network: RoadNetwork, rng: np.random.Generator, *,
                 insertion_rate=2.0, service_rate=0.25, exit_prob=0.1,
                 demand_amplitude=0.8, demand_period=200, initial=None,
                 interval=1, payload_bytes=1000, retention=None):
        self.network = network
        self.rng = rng
        self.insertion_rate = float(insertion_rate)
        self.service_rate = float(service_rate)
        self.exit_prob = float(exit_prob)
        self.demand_amplitude = float(demand_amplitude)
        self.demand_period = float(demand_period)
        self.interval = int(interval)
        self.payload_bytes = int(payload_bytes)
        self.retention = retention
        if not 0.0 <= self.service_rate <= 1.0:
            raise ValueError("service_rate must be in [0, 1]")
        if not 0.0 <= self.exit_prob <= 1.0:
            raise ValueError("exit_prob must be in [0, 1]")
        n = network.n
        self._entries = np.array(network.entries, dtype=int)
        self._exit_mask = np.zeros(n)
        self._exit_mask[list(network.exits)] = 1.0
        self._sink = network.turn.sum(axis=1) == 0
        self._phase = rng.uniform(0, 2 * np.pi, size=len(self._entries))
        counts = np.zeros(n) if initial is None else np.asarray(initial, dtype=float).copy()
        self.inserted_total = 0.0
        self.exited_total = 0.0
        self.initial_total = float(counts.sum())
        self.state = TrafficState(0, counts, np.zeros(n), np.zeros(n), 0.0, 0.0)
        self._history: dict[int, TrafficState] = {0: self.state}
        self._order: deque = deque([0])

    @property
    def tick(self) -> int:
        return self.state.tick

    def entry_rates(self, tick) -> np.ndarray:
        wave = np.sin(2 * np.pi * tick / self.demand_period + self._phase)
        return np.maximum(0.0, self.insertion_rate * (1 + self.demand_amplitude * wave))

    def step(self) -> TrafficState:
        prev = self.state
        t = prev.tick + 1
        x = prev.counts
        outflow = self.service_rate * x
        leaving = np.where(self._sink, 1.0, self._exit_mask * self.exit_prob) * outflow
        routed = outflow - leaving
        transfers = routed @ self.network.turn
        inserted = np.zeros_like(x)
        if len(self._entries) and self.insertion_rate > 0:
            inserted[self._entries] = self.rng.poisson(self.entry_rates(t))
        incoming = transfers + inserted
        counts = np.maximum(x + incoming - outflow, 0.0)
        self.inserted_total += float(inserted.sum())
        self.exited_total += float(leaving.sum())
        state = TrafficState(t, counts, incoming, outflow,
                             float(inserted.sum()), float(leaving.sum()))
        expected = self.initial_total + self.inserted_total - self.exited_total
        assert math.isclose(state.total, expected, rel_tol=1e-9, abs_tol=1e-6), \
            f"vehicle conservation broken at tick {t}: {state.total} != {expected}"
        self.state = state
        self._history[t] = state
        self._order.append(t)
        if self.retention is not None:
            while self._order and self._order[0] < t - self.retention:
                del self._history[self._order.popleft()]
        return state

    def ground_truth(self, t: int) -> GraphSignal:
        if t > self.tick or t not in self._history:
            raise OutOfRetention(f"tick {t} not retained (now {self.tick})")
        return GraphSignal(t, self._history[t].features())

    def total_vehicles(self, t: int) -> float:
        if t not in self._history:
            raise OutOfRetention(f"tick {t} not retained (now {self.tick})")
        return self._history[t].total

    def emit_measurements(self) -> list[Measurement]:
        t = self.tick
        if t % self.interval:
            return []
        feats = self.state.features()
        return [Measurement(pt, t, tuple(float(v) for v in feats[pt]), self.payload_bytes)
                for pt in range(self.network.n)]

    def history_rows(self):
        """``(tick, pt_id, current, incoming, outgoing)`` rows for retained ticks."""
        for t in sorted(self._history):
            s = self._history[t]
            for pt in range(self.network.n):
                yield t, pt, s.counts[pt], s.incoming[pt], s.outgoing[pt]


class Measurement(NamedTuple):
    pt_id: int
    gen_tick: int
    features: tuple
    payload_bytes: int


class Delivery(NamedTuple):
    measurement: Measurement
    arrival_tick: int


@dataclass(frozen=True)
class ChannelConfig:
    latency_mean: float = 2.0
    latency_jitter: float = 1.0
    loss_prob: float = 0.05

    def __post_init__(self):
        if self.latency_mean < 0 or self.latency_jitter < 0:
            raise ValueError("latency parameters must be non-negative")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")

    @classmethod
    def scaled(cls, n, base_mean=0.0, log_coef=2.0, jitter=1.0, loss_prob=0.05):
        """Latency whose mean grows with ln(n) to model larger city networks."""
        return cls(base_mean + log_coef * math.log(n), jitter, loss_prob)


def deliver(m: Measurement, ch: ChannelConfig, rng: np.random.Generator):
    """Pass one measurement through the channel.

    Returns ``None`` when lost, else a ``Delivery``. Loss and jitter are both
    drawn for every message so the random stream does not depend on outcomes.
    """
    lost = rng.random() < ch.loss_prob
    jitter = rng.uniform(-ch.latency_jitter, ch.latency_jitter)
    if lost:
        return None
    delay = max(0, int(round(ch.latency_mean + jitter)))
    return Delivery(m, m.gen_tick + delay)


class Channel:
    """In-flight messages ordered by arrival tick, then send order."""

    def __init__(self, config: ChannelConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self._heap = []
        self._seq = 0
        self.sent = 0
        self.lost = 0

    def send(self, measurements):
        for m in measurements:
            self.sent += 1
            d = deliver(m, self.config, self.rng)
            if d is None:
                self.lost += 1
                continue
            heapq.heappush(self._heap, (d.arrival_tick, self._seq, d))
            self._seq += 1

    def arrivals(self, tick) -> list[Delivery]:
        out = []
        while self._heap and self._heap[0][0] <= tick:
            out.append(heapq.heappop(self._heap)[2])
        return out

    def __len__(self):
        return len(self._heap)
