"""One physical-to-digital run: simulator, channel, queues and twin store."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .graph import make_store
from .ingest import AppliedResult, ETLPipeline, IngestQueues, TraditionalTwin, UpdateAction
from .sim import N_FEATURES, Channel, ChannelConfig, RoadNetwork, TrafficSim, generate_network


@dataclass
class SimSettings:
    n: int = 20
    topology: str = "random-geometric"
    insertion_rate: float = 2.0
    service_rate: float = 0.25
    exit_prob: float = 0.1
    demand_amplitude: float = 0.8
    demand_period: int = 200
    interval: int = 1
    payload_bytes: int = 1000
    latency_mean: float = 0.0
    latency_log_coef: float = 2.0
    latency_jitter: float = 1.0
    loss_prob: float = 0.05
    queue_capacity: int = 32
    literal_alg1: bool = False
    backend: str = "graph"

    def network(self, seed: int) -> RoadNetwork:
        return generate_network(self.n, self.topology, seed)

    def channel(self) -> ChannelConfig:
        return ChannelConfig.scaled(self.n, self.latency_mean, self.latency_log_coef,
                                    self.latency_jitter, self.loss_prob)


class TwinEnv:
    """Steps the physical layer and feeds the digital twin, one tick at a time.

    Random streams for traffic and channel are spawned from one seed so that
    runs differing only in the gating policy see identical physical data.
    An optional ``TraditionalTwin`` receives the same deliveries on arrival.
    """

    def __init__(self, network: RoadNetwork, settings: SimSettings, seed: int,
                 delta: int = 4, traditional_budget: int | None = None):
        self.network = network
        self.settings = settings
        sim_ss, ch_ss = np.random.SeedSequence(seed).spawn(2)
        st = settings
        self.sim = TrafficSim(
            network, np.random.default_rng(sim_ss),
            insertion_rate=st.insertion_rate, service_rate=st.service_rate,
            exit_prob=st.exit_prob, demand_amplitude=st.demand_amplitude,
            demand_period=st.demand_period, interval=st.interval,
            payload_bytes=st.payload_bytes)
        self.channel = Channel(st.channel(), np.random.default_rng(ch_ss))
        self.queues = IngestQueues(network.n, st.queue_capacity)
        self.store = make_store(st.backend, network.spatial, N_FEATURES)
        self.etl = ETLPipeline(self.store, self.queues, literal=st.literal_alg1)
        self.traditional = (None if traditional_budget is None
                            else TraditionalTwin(network.n, N_FEATURES, traditional_budget))
        self.delta = delta
        self._views: deque = deque(maxlen=delta)
        self._views.append(self.etl.view.copy())
        self.applied_log: dict[tuple[int, int], int] = {}
        self.bytes_processed = 0

    @property
    def n(self):
        return self.network.n

    @property
    def tick(self):
        return self.sim.tick

    def advance(self) -> int:
        """Step traffic, emit, and hand this tick's arrivals to the queues."""
        state = self.sim.step()
        t = state.tick
        self.channel.send(self.sim.emit_measurements())
        if self.traditional is not None:
            self.traditional.begin_tick(t)
        for d in self.channel.arrivals(t):
            self.queues.enqueue(d)
            if self.traditional is not None:
                self.traditional.apply_traditional(d)
        return t

    def apply(self, a: UpdateAction) -> AppliedResult:
        t = self.tick
        res = self.etl.apply_action(a, t)
        for key in res.applied:
            self.applied_log[key] = t
        self.bytes_processed += res.bytes_processed
        self._views.append(res.new_signal.values.copy())
        return res

    def state(self) -> np.ndarray:
        """Last ``delta`` twin views as an N x F x delta tensor, oldest first.

        Short histories are padded by repeating the oldest view.
        """
        views = list(self._views)
        views = [views[0]] * (self.delta - len(views)) + views
        return np.stack(views, axis=-1)

    def ram_proxy_bytes(self) -> int:
        return self.store.stats(self.queues.queued_bytes).ram_proxy_bytes
