"""Spatiotemporal twin graph: topology, graph signals and the record store.

The store keeps one record per (physical twin, generation tick). Records of
the same twin are chained by temporal edges; records of topologically
adjacent twins are joined by spatial edges carrying the road distance.

Two interchangeable backends implement the same interface:

* ``GraphStore`` keeps features inline and an adjacency list per record.
* ``JoinTableStore`` keeps three normalized row tables and answers every read
  by re-joining them, the way a relational engine without graph-native
  storage would.
"""
from __future__ import annotations

import bisect
import csv
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    BadFeatureVector,
    BadRange,
    CrossPtTemporal,
    DuplicateRecord,
    InsufficientData,
    MissingPtAt,
    MissingRecord,
    NonPositiveDt,
    NoSuchSpatialRelation,
    UnknownPt,
)

TEMPORAL = "temporal"
SPATIAL = "spatial"

EDGE_COST = 24


def record_cost(n_features: int) -> int:
    """Accounted bytes per stored record."""
    return 16 + 8 * n_features


def message_cost(payload_bytes: int) -> int:
    """Accounted bytes per queued message."""
    return 16 + payload_bytes


class SpatialGraph:
    """Static weighted directed junction topology.

    ``edges`` is an iterable of ``(src, dst, weight)`` with dense node ids.
    """

    def __init__(self, n_nodes: int, edges):
        if n_nodes < 1:
            raise ValueError("n_nodes must be positive")
        self.n_nodes = int(n_nodes)
        weights: dict[tuple[int, int], float] = {}
        for src, dst, w in edges:
            src, dst, w = int(src), int(dst), float(w)
            if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
                raise ValueError(f"edge ({src}, {dst}) outside 0..{n_nodes - 1}")
            if src == dst:
                raise ValueError(f"self-edge at {src}")
            if not w > 0 or not np.isfinite(w):
                raise ValueError(f"edge ({src}, {dst}) has non-positive weight {w}")
            weights[(src, dst)] = w
        self._weights = weights
        self._succ: list[list[int]] = [[] for _ in range(n_nodes)]
        for src, dst in sorted(weights):
            self._succ[src].append(dst)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(s, d, w) for (s, d), w in sorted(self._weights.items())]

    def has_edge(self, src: int, dst: int) -> bool:
        return (src, dst) in self._weights

    def weight(self, src: int, dst: int) -> float:
        return self._weights[(src, dst)]

    def successors(self, node: int) -> list[int]:
        return self._succ[node]

    def out_degree(self, node: int) -> int:
        return len(self._succ[node])

    def adjacency(self) -> np.ndarray:
        """Boolean N x N indicator, ``adj[i, j]`` true iff i -> j is an edge."""
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for s, d in self._weights:
            adj[s, d] = True
        return adj

    def __len__(self):
        return len(self._weights)

    def __eq__(self, other):
        if not isinstance(other, SpatialGraph):
            return NotImplemented
        return self.n_nodes == other.n_nodes and self._weights == other._weights

    def __repr__(self):
        return f"SpatialGraph(n_nodes={self.n_nodes}, n_edges={len(self)})"


@dataclass
class GraphSignal:
    """N x F feature matrix stamped with one tick."""

    tick: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("graph signal must be an N x F matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("graph signal contains non-finite values")

    @property
    def shape(self):
        return self.values.shape


class TwinRecord(NamedTuple):
    record_id: int
    pt_id: int
    gen_tick: int
    features: tuple


class TemporalEdge(NamedTuple):
    newer: int
    older: int
    dt: int


class SpatialEdge(NamedTuple):
    src: int
    dst: int
    weight: float


@dataclass
class StoreStats:
    record_count: int
    temporal_edge_count: int
    spatial_edge_count: int
    memory_ops: int
    ram_proxy_bytes: int


@dataclass
class QueryResult:
    """Records reached by a timed query and the edges that reached them."""

    records: dict = field(default_factory=dict)
    edges: set = field(default_factory=set)

    def __len__(self):
        return len(self.records)


class TwinStore:
    """Shared validation, bookkeeping and export for both backends."""

    backend = "abstract"

    def __init__(self, graph: SpatialGraph, n_features: int):
        self.graph = graph
        self.n_features = int(n_features)
        self.memory_ops = 0
        self._next_id = 0

    # -- validation helpers
    def _check_pt(self, pt_id):
        if not 0 <= pt_id < self.graph.n_nodes:
            raise UnknownPt(f"pt {pt_id} not in 0..{self.graph.n_nodes - 1}")

    def _check_features(self, features):
        vec = np.asarray(features, dtype=float).ravel()
        if vec.shape != (self.n_features,):
            raise BadFeatureVector(f"expected {self.n_features} features, got {vec.size}")
        if not np.all(np.isfinite(vec)):
            raise BadFeatureVector("features must be finite")
        return tuple(float(v) for v in vec)

    # -- stats
    def stats(self, queued_bytes: int = 0) -> StoreStats:
        n_rec, n_temp, n_spat = self._counts()
        ram = (n_rec * record_cost(self.n_features)
               + (n_temp + n_spat) * EDGE_COST + int(queued_bytes))
        return StoreStats(n_rec, n_temp, n_spat, self.memory_ops, ram)

    # -- queries shared by both backends
    def select_for_query(self, query_size: int, seed: int = 0) -> list[int]:
        ids = self.record_ids()
        if query_size > len(ids):
            raise InsufficientData(f"store holds {len(ids)} records, asked for {query_size}")
        if query_size <= 0:
            return []
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(ids), size=query_size, replace=False)
        return sorted(ids[i] for i in chosen)

    def timed_query(self, query_size: int, seed: int = 0):
        """Fetch ``query_size`` seeded-random records and their 1-hop neighbourhood.

        Returns ``(QueryResult, elapsed_seconds)`` measured on a monotonic clock.
        Record selection happens before the clock starts.
        """
        selection = self.select_for_query(query_size, seed)
        start = time.perf_counter()
        result = self._neighbourhood(selection)
        elapsed = time.perf_counter() - start
        return result, elapsed

    def signal_from_latest(self, tick: int) -> GraphSignal:
        """Latest stored values per pt regardless of tick; zeros where never updated."""
        values = np.zeros((self.graph.n_nodes, self.n_features))
        for pt in range(self.graph.n_nodes):
            rid = self.latest_record(pt)
            if rid is not None:
                values[pt] = self.record(rid).features
        return GraphSignal(tick, values)

    # -- export
    def export_csv(self, records_path, edges_path):
        with open(records_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["record_id", "pt_id", "gen_tick"]
                       + [f"f{i}" for i in range(self.n_features)])
            for rec in self.all_records():
                w.writerow([rec.record_id, rec.pt_id, rec.gen_tick, *map(repr, rec.features)])
        with open(edges_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["edge_kind", "src", "dst", "weight_or_dt"])
            for e in self.temporal_edges():
                w.writerow([TEMPORAL, e.newer, e.older, e.dt])
            for e in self.spatial_edges():
                w.writerow([SPATIAL, e.src, e.dst, repr(e.weight)])

    def _bump(self):
        self.memory_ops += 1


class GraphStore(TwinStore):
    """Graph-native backend: inline features, per-record adjacency lists."""

    backend = "graph"

    def __init__(self, graph: SpatialGraph, n_features: int):
        super().__init__(graph, n_features)
        self._records: dict[int, TwinRecord] = {}
        self._key: dict[tuple[int, int], int] = {}
        self._gens = [[] for _ in range(graph.n_nodes)]
        self._rids = [[] for _ in range(graph.n_nodes)]
        self._temporal: dict[tuple[int, int], int] = {}
        self._spatial: dict[tuple[int, int], float] = {}
        # rid -> list of (kind, src, dst, value)
        self._adj: dict[int, list] = {}

    def create_record(self, pt_id, gen_tick, features) -> int:
        self._check_pt(pt_id)
        feats = self._check_features(features)
        if (pt_id, gen_tick) in self._key:
            raise DuplicateRecord(f"record for pt {pt_id} at tick {gen_tick} exists")
        rid = self._next_id
        self._next_id += 1
        self._records[rid] = TwinRecord(rid, int(pt_id), int(gen_tick), feats)
        self._key[(pt_id, gen_tick)] = rid
        pos = bisect.bisect_right(self._gens[pt_id], gen_tick)
        self._gens[pt_id].insert(pos, gen_tick)
        self._rids[pt_id].insert(pos, rid)
        self._adj[rid] = []
        self._bump()
        return rid

    def _get(self, rid) -> TwinRecord:
        try:
            return self._records[rid]
        except KeyError:
            raise MissingRecord(f"no record {rid}") from None

    def record(self, rid) -> TwinRecord:
        return self._get(rid)

    def link_temporal(self, newer, older) -> TemporalEdge:
        a, b = self._get(newer), self._get(older)
        if a.pt_id != b.pt_id:
            raise CrossPtTemporal(f"records {newer} and {older} belong to different pts")
        dt = a.gen_tick - b.gen_tick
        if dt <= 0:
            raise NonPositiveDt(f"dt={dt} between {newer} and {older}")
        if (newer, older) not in self._temporal:
            self._temporal[(newer, older)] = dt
            entry = (TEMPORAL, newer, older, dt)
            self._adj[newer].append(entry)
            self._adj[older].append(entry)
        self._bump()
        return TemporalEdge(newer, older, dt)

    def link_spatial(self, src, dst) -> SpatialEdge:
        a, b = self._get(src), self._get(dst)
        if not self.graph.has_edge(a.pt_id, b.pt_id):
            raise NoSuchSpatialRelation(f"no topology edge {a.pt_id} -> {b.pt_id}")
        w = self.graph.weight(a.pt_id, b.pt_id)
        if (src, dst) not in self._spatial:
            self._spatial[(src, dst)] = w
            entry = (SPATIAL, src, dst, w)
            self._adj[src].append(entry)
            self._adj[dst].append(entry)
        self._bump()
        return SpatialEdge(src, dst, w)

    def delete_spatial(self, src, dst):
        w = self._spatial.pop((src, dst), None)
        if w is not None:
            entry = (SPATIAL, src, dst, w)
            self._adj[src].remove(entry)
            self._adj[dst].remove(entry)
        self._bump()

    def latest_record(self, pt_id):
        self._check_pt(pt_id)
        rids = self._rids[pt_id]
        return rids[-1] if rids else None

    def snapshot(self, t) -> GraphSignal:
        values = np.empty((self.graph.n_nodes, self.n_features))
        missing = []
        for pt in range(self.graph.n_nodes):
            pos = bisect.bisect_right(self._gens[pt], t)
            if pos == 0:
                missing.append(pt)
                continue
            values[pt] = self._records[self._rids[pt][pos - 1]].features
        if missing:
            raise MissingPtAt(t, missing)
        return GraphSignal(t, values)

    def query_window(self, t_lo, t_hi) -> dict[int, list[TwinRecord]]:
        if t_lo > t_hi:
            raise BadRange(f"t_lo={t_lo} > t_hi={t_hi}")
        out = {}
        for pt in range(self.graph.n_nodes):
            gens = self._gens[pt]
            lo = bisect.bisect_right(gens, t_lo)
            hi = bisect.bisect_right(gens, t_hi)
            out[pt] = [self._records[r] for r in self._rids[pt][lo:hi]]
        return out

    def _neighbourhood(self, selection) -> QueryResult:
        records = self._records
        adj = self._adj
        found = {}
        edges = set()
        for rid in selection:
            found[rid] = records[rid]
            for entry in adj[rid]:
                edges.add(entry)
                other = entry[2] if entry[1] == rid else entry[1]
                if other not in found:
                    found[other] = records[other]
        return QueryResult(found, edges)

    def record_ids(self) -> list[int]:
        return sorted(self._records)

    def all_records(self):
        return [self._records[r] for r in sorted(self._records)]

    def temporal_edges(self):
        return [TemporalEdge(a, b, dt) for (a, b), dt in sorted(self._temporal.items())]

    def spatial_edges(self):
        return [SpatialEdge(a, b, w) for (a, b), w in sorted(self._spatial.items())]

    def _counts(self):
        return len(self._records), len(self._temporal), len(self._spatial)


class JoinTableStore(TwinStore):
    """Relational emulation over three row tables.

    ``records(record_id, pt_id, gen_tick)``, ``properties(record_id,
    feature_idx, value)`` and ``edges(src, dst, kind, weight)``. Only the
    uniqueness constraints are indexed; reads scan and hash-join the tables.
    """

    backend = "join"

    def __init__(self, graph: SpatialGraph, n_features: int):
        super().__init__(graph, n_features)
        self.records: list[tuple[int, int, int]] = []
        self.properties: list[tuple[int, int, float]] = []
        self.edges: list[tuple[int, int, str, float]] = []
        self._record_keys: set[tuple[int, int]] = set()
        self._edge_keys: set[tuple[int, int, str]] = set()
        self._row_of: dict[int, tuple[int, int, int]] = {}

    def create_record(self, pt_id, gen_tick, features) -> int:
        self._check_pt(pt_id)
        feats = self._check_features(features)
        if (pt_id, gen_tick) in self._record_keys:
            raise DuplicateRecord(f"record for pt {pt_id} at tick {gen_tick} exists")
        rid = self._next_id
        self._next_id += 1
        row = (rid, int(pt_id), int(gen_tick))
        self.records.append(row)
        self._row_of[rid] = row
        self._record_keys.add((pt_id, gen_tick))
        self.properties.extend((rid, i, v) for i, v in enumerate(feats))
        self._bump()
        return rid

    def _row(self, rid):
        # primary-key lookup, used only by the write path for validation
        try:
            return self._row_of[rid]
        except KeyError:
            raise MissingRecord(f"no record {rid}") from None

    def _fetch(self, rids) -> dict[int, TwinRecord]:
        """records JOIN properties for the given id set."""
        wanted = set(rids)
        heads = {}
        for row in self.records:
            if row[0] in wanted:
                heads[row[0]] = row
        props: dict[int, list] = {}
        for prop in self.properties:
            if prop[0] in heads:
                props.setdefault(prop[0], []).append(prop)
        out = {}
        for rid, (_, pt, gen) in heads.items():
            cols = sorted(props.get(rid, ()), key=lambda p: p[1])
            out[rid] = TwinRecord(rid, pt, gen, tuple(p[2] for p in cols))
        return out

    def record(self, rid) -> TwinRecord:
        got = self._fetch([rid])
        if rid not in got:
            raise MissingRecord(f"no record {rid}")
        return got[rid]

    def link_temporal(self, newer, older) -> TemporalEdge:
        a, b = self._row(newer), self._row(older)
        if a[1] != b[1]:
            raise CrossPtTemporal(f"records {newer} and {older} belong to different pts")
        dt = a[2] - b[2]
        if dt <= 0:
            raise NonPositiveDt(f"dt={dt} between {newer} and {older}")
        key = (newer, older, TEMPORAL)
        if key not in self._edge_keys:
            self._edge_keys.add(key)
            self.edges.append((newer, older, TEMPORAL, dt))
        self._bump()
        return TemporalEdge(newer, older, dt)

    def link_spatial(self, src, dst) -> SpatialEdge:
        a, b = self._row(src), self._row(dst)
        if not self.graph.has_edge(a[1], b[1]):
            raise NoSuchSpatialRelation(f"no topology edge {a[1]} -> {b[1]}")
        w = self.graph.weight(a[1], b[1])
        key = (src, dst, SPATIAL)
        if key not in self._edge_keys:
            self._edge_keys.add(key)
            self.edges.append((src, dst, SPATIAL, w))
        self._bump()
        return SpatialEdge(src, dst, w)

    def delete_spatial(self, src, dst):
        key = (src, dst, SPATIAL)
        if key in self._edge_keys:
            self._edge_keys.discard(key)
            self.edges = [e for e in self.edges if (e[0], e[1], e[2]) != key]
        self._bump()

    def latest_record(self, pt_id):
        self._check_pt(pt_id)
        best = None
        for rid, pt, gen in self.records:
            if pt == pt_id and (best is None or gen > best[1]):
                best = (rid, gen)
        return None if best is None else best[0]

    def snapshot(self, t) -> GraphSignal:
        best: dict[int, tuple[int, int]] = {}
        for rid, pt, gen in self.records:
            if gen <= t and (pt not in best or gen > best[pt][1]):
                best[pt] = (rid, gen)
        missing = [pt for pt in range(self.graph.n_nodes) if pt not in best]
        if missing:
            raise MissingPtAt(t, missing)
        fetched = self._fetch(rid for rid, _ in best.values())
        values = np.empty((self.graph.n_nodes, self.n_features))
        for pt, (rid, _) in best.items():
            values[pt] = fetched[rid].features
        return GraphSignal(t, values)

    def query_window(self, t_lo, t_hi) -> dict[int, list[TwinRecord]]:
        if t_lo > t_hi:
            raise BadRange(f"t_lo={t_lo} > t_hi={t_hi}")
        hits = [row[0] for row in self.records if t_lo < row[2] <= t_hi]
        fetched = self._fetch(hits)
        out = {pt: [] for pt in range(self.graph.n_nodes)}
        for rec in fetched.values():
            out[rec.pt_id].append(rec)
        for recs in out.values():
            recs.sort(key=lambda r: r.gen_tick)
        return out

    def _neighbourhood(self, selection) -> QueryResult:
        sel = set(selection)
        # edges JOIN selection on src, then on dst; materialized joined rows
        by_src = [(e, e[0]) for e in self.edges if e[0] in sel]
        by_dst = [(e, e[1]) for e in self.edges if e[1] in sel]
        edges = set()
        wanted = set(sel)
        for (src, dst, kind, w), _ in by_src:
            edges.add((kind, src, dst, w))
            wanted.add(dst)
        for (src, dst, kind, w), _ in by_dst:
            edges.add((kind, src, dst, w))
            wanted.add(src)
        return QueryResult(self._fetch(wanted), edges)

    def record_ids(self) -> list[int]:
        return sorted(row[0] for row in self.records)

    def all_records(self):
        fetched = self._fetch(row[0] for row in self.records)
        return [fetched[r] for r in sorted(fetched)]

    def temporal_edges(self):
        return sorted(TemporalEdge(s, d, w) for s, d, k, w in self.edges if k == TEMPORAL)

    def spatial_edges(self):
        return sorted(SpatialEdge(s, d, w) for s, d, k, w in self.edges if k == SPATIAL)

    def _counts(self):
        n_temp = sum(1 for e in self.edges if e[2] == TEMPORAL)
        return len(self.records), n_temp, len(self.edges) - n_temp


BACKENDS = {"graph": GraphStore, "join": JoinTableStore}


def make_store(backend: str, graph: SpatialGraph, n_features: int) -> TwinStore:
    try:
        cls = BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}") from None
    return cls(graph, n_features)
