# coding: utf-8
# # Storing a traffic twin as a spatiotemporal graph
#
# Each junction reading becomes a record. Records of one junction are chained
# in time, and records of neighbouring junctions are linked in space. A
# snapshot at tick t picks, for every junction, its newest record generated
# at or before t.

import numpy as np

from twinforge.graph import SpatialGraph, make_store

g = SpatialGraph(3, [(0, 1, 120.0), (1, 2, 80.0), (2, 0, 200.0)])
store = make_store("graph", g, 2)

rng = np.random.default_rng(7)
prev = {}
for tick in (1, 2, 4):
    for pt in range(3):
        rid = store.create_record(pt, tick, rng.gamma(2.0, 3.0, 2))
        if pt in prev:
            store.link_temporal(rid, prev[pt])
        prev[pt] = rid

print(store.stats())
print(store.snapshot(3).values)   # tick-2 rows, since nothing was generated at 3

# ## Same answers from a join-table layout
#
# The relational backend keeps records, properties and edges in separate
# tables and rebuilds everything with hash joins on every read.

from twinforge.experiments import build_benchmark_store

small = {b: build_benchmark_store(b, n_records=2000, n_pts=50) for b in ("graph", "join")}
for b, s in small.items():
    res, dt = s.timed_query(500, seed=1)
    print(b, len(res.records), "records", f"{dt * 1e6:.0f} us")
