"""Per-device queues, the gated ETL step, and the update-on-arrival baseline."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, UnknownPt
from .graph import GraphSignal, TwinStore, message_cost, record_cost
from .sim import Delivery


class PtQueue:
    """Bounded FIFO of deliveries for one physical twin, in arrival order."""

    def __init__(self, pt_id: int, capacity: int = 32):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.pt_id = pt_id
        self.capacity = capacity
        self._items: deque[Delivery] = deque()
        self.queued_bytes = 0
        self.drops = 0

    def push(self, d: Delivery):
        if len(self._items) >= self.capacity:
            old = self._items.popleft()
            self.queued_bytes -= message_cost(old.measurement.payload_bytes)
            self.drops += 1
        self._items.append(d)
        self.queued_bytes += message_cost(d.measurement.payload_bytes)

    def pop(self) -> Delivery:
        d = self._items.popleft()
        self.queued_bytes -= message_cost(d.measurement.payload_bytes)
        return d

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


class IngestQueues:
    def __init__(self, n: int, capacity: int = 32):
        self.queues = [PtQueue(i, capacity) for i in range(n)]

    def enqueue(self, d: Delivery):
        pt = d.measurement.pt_id
        if not 0 <= pt < len(self.queues):
            raise UnknownPt(f"delivery for unknown pt {pt}")
        self.queues[pt].push(d)

    def __getitem__(self, pt) -> PtQueue:
        return self.queues[pt]

    def __len__(self):
        return len(self.queues)

    @property
    def queued_bytes(self) -> int:
        return sum(q.queued_bytes for q in self.queues)

    @property
    def drops(self) -> int:
        return sum(q.drops for q in self.queues)

    def nonempty(self) -> np.ndarray:
        return np.array([len(q) > 0 for q in self.queues])


class UpdateAction:
    """Length-N 0/1 update decision, one bit per physical twin."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        arr = np.asarray(bits)
        if arr.ndim != 1:
            raise ShapeMismatch("action must be a vector")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("action entries must be 0 or 1")
        self.bits = arr.astype(np.int8)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n, dtype=np.int8))

    @classmethod
    def ones(cls, n):
        return cls(np.ones(n, dtype=np.int8))

    def __len__(self):
        return len(self.bits)

    def __getitem__(self, i):
        return int(self.bits[i])

    def __eq__(self, other):
        if isinstance(other, UpdateAction):
            return np.array_equal(self.bits, other.bits)
        return np.array_equal(self.bits, np.asarray(other))

    def __repr__(self):
        return f"UpdateAction({self.bits.tolist()})"


@dataclass
class AppliedResult:
    updated_pts: set
    dropped_pts: set
    memory_ops_delta: int
    new_signal: GraphSignal
    stale_pts: set = field(default_factory=set)
    bytes_processed: int = 0
    applied: list = field(default_factory=list)  # (pt, gen_tick) per created record


class ETLPipeline:
    """Turns the head of each selected queue into store records and edges.

    For every selected pt with a waiting message a record is created and
    chained to the pt's previous latest record. Spatial edges then go from
    each fresh record to the current record of every topology successor:
    the fresh one if that successor was also updated this tick, otherwise
    its latest stored record. Unselected heads are discarded.

    A head whose generation tick is not newer than the pt's latest record
    (overtaken in the channel) is discarded as stale, since it cannot extend
    the temporal chain.

    With ``literal=True`` the create-then-delete edge pair of the original
    procedure is replayed for successors updated in the same tick, and no
    edge between the two fresh records survives.
    """

    def __init__(self, store: TwinStore, queues: IngestQueues, literal: bool = False):
        self.store = store
        self.queues = queues
        self.literal = literal
        self.graph = store.graph
        n, f = self.graph.n_nodes, store.n_features
        self.view = np.zeros((n, f))
        self._latest_gen = np.full(n, -1, dtype=np.int64)
        self.stale_total = 0

    def current_signal(self, tick) -> GraphSignal:
        return GraphSignal(tick, self.view.copy())

    def apply_action(self, a: UpdateAction, t: int) -> AppliedResult:
        n = self.graph.n_nodes
        if len(a) != n:
            raise ShapeMismatch(f"action length {len(a)} != {n}")
        store = self.store
        ops_before = store.memory_ops
        updated, dropped, stale = set(), set(), set()
        fresh: dict[int, int] = {}
        previous: dict[int, int | None] = {}
        processed = 0
        applied = []
        for i in range(n):
            q = self.queues[i]
            if not len(q):
                continue
            d = q.pop()
            m = d.measurement
            if not a.bits[i]:
                dropped.add(i)
                continue
            if m.gen_tick <= self._latest_gen[i]:
                dropped.add(i)
                stale.add(i)
                self.stale_total += 1
                continue
            prev = store.latest_record(i)
            rid = store.create_record(i, m.gen_tick, m.features)
            if prev is not None:
                store.link_temporal(rid, prev)
            fresh[i] = rid
            previous[i] = prev
            updated.add(i)
            self.view[i] = m.features
            self._latest_gen[i] = m.gen_tick
            processed += m.payload_bytes
            applied.append((i, m.gen_tick))
        for i, rid in fresh.items():
            for j in self.graph.successors(i):
                if j in fresh:
                    if self.literal:
                        old = previous[j]
                        if old is not None:
                            store.link_spatial(rid, old)
                            store.delete_spatial(rid, old)
                    else:
                        store.link_spatial(rid, fresh[j])
                else:
                    other = store.latest_record(j)
                    if other is not None:
                        store.link_spatial(rid, other)
        return AppliedResult(updated, dropped, store.memory_ops - ops_before,
                             self.current_signal(t), stale, processed, applied)


class TraditionalTwin:
    """Update-on-arrival baseline: one mutable value row per pt.

    Arrivals overwrite the row immediately while the per-tick processing
    budget lasts; the rest wait in a FIFO backlog for later ticks.
    ``budget=0`` means unlimited.
    """

    def __init__(self, n: int, n_features: int, budget: int = 0):
        self.n = n
        self.n_features = n_features
        self.budget = int(budget)
        self.values = np.zeros((n, n_features))
        self.backlog: deque[Delivery] = deque()
        self.backlog_bytes = 0
        self.memory_ops = 0
        self.bytes_processed = 0
        self.tick = 0
        self._used = 0
        self.applied_log: dict[tuple[int, int], int] = {}

    def _has_budget(self):
        return self.budget <= 0 or self._used < self.budget

    def _overwrite(self, d: Delivery):
        m = d.measurement
        self.values[m.pt_id] = m.features
        self.memory_ops += 1
        self.bytes_processed += m.payload_bytes
        self._used += 1
        self.applied_log.setdefault((m.pt_id, m.gen_tick), self.tick)

    def begin_tick(self, t: int):
        """Start tick ``t``: reset the budget and drain the backlog into it."""
        self.tick = t
        self._used = 0
        while self.backlog and self._has_budget():
            d = self.backlog.popleft()
            self.backlog_bytes -= message_cost(d.measurement.payload_bytes)
            self._overwrite(d)

    def apply_traditional(self, d: Delivery):
        pt = d.measurement.pt_id
        if not 0 <= pt < self.n:
            raise UnknownPt(f"delivery for unknown pt {pt}")
        if not self.backlog and self._has_budget():
            self._overwrite(d)
        else:
            self.backlog.append(d)
            self.backlog_bytes += message_cost(d.measurement.payload_bytes)

    def snapshot(self) -> GraphSignal:
        return GraphSignal(self.tick, self.values.copy())

    def ram_proxy_bytes(self) -> int:
        return self.n * record_cost(self.n_features) + self.backlog_bytes
