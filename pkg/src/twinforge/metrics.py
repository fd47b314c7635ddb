"""Evaluation quantities: snapshot error, energy proxy, synchronisation series."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingLog, MissingPtAt, ShapeMismatch
from .graph import GraphSignal, TwinStore
from .ingest import UpdateAction
from .twinning import SimSettings, TwinEnv

HIT, MISS, NONE = "hit", "miss", "none"


def _values(x):
    return x.values if isinstance(x, GraphSignal) else np.asarray(x, dtype=float)


def mse(a, b) -> float:
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise ShapeMismatch(f"signals of shape {va.shape} and {vb.shape}")
    return float(np.mean((va - vb) ** 2))


@dataclass(frozen=True)
class EnergyModel:
    """Synthetic linear cost: millijoules per store mutation and per payload byte."""

    c_op: float = 1.0
    c_byte: float = 0.001

    def __post_init__(self):
        if self.c_op < 0 or self.c_byte < 0:
            raise ValueError("energy coefficients must be non-negative")


def energy_proxy(mem_ops: int, n_bytes: int, m: EnergyModel = EnergyModel()) -> float:
    return m.c_op * mem_ops + m.c_byte * n_bytes


def aligned_snapshot(store: TwinStore, t: int) -> np.ndarray:
    """``store.snapshot(t)`` with zero rows for pts that have nothing at or before t."""
    try:
        return store.snapshot(t).values
    except MissingPtAt as exc:
        missing = set(exc.pts)
    n, f = store.graph.n_nodes, store.n_features
    values = np.zeros((n, f))
    window = store.query_window(-1, t) if len(missing) < n else {}
    for pt, recs in window.items():
        if recs:
            values[pt] = recs[-1].features
    return values


def evaluation_ticks(settings: SimSettings, horizon: int, warmup: int) -> range:
    """Ticks whose measurements have all had time to reach the twin by ``horizon``."""
    ch = settings.channel()
    tail = math.ceil(ch.latency_mean + ch.latency_jitter) + 5
    return range(warmup, max(warmup, horizon - tail + 1))


def accuracy_run(n: int, seed: int, settings: SimSettings, horizon: int = 1000,
                 warmup: int = 50, traditional_budget: int = 0) -> dict:
    """Paired run: the same deliveries feed the spatiotemporal store (every
    queued head applied) and the traditional overwrite table.

    The traditional table is scored live at each tick. The store is scored
    after the run, by generation-tick-aligned snapshots.
    """
    st = SimSettings(**{**settings.__dict__, "n": n})
    env = TwinEnv(st.network(seed), st, seed, traditional_budget=traditional_budget)
    ones = UpdateAction.ones(n)
    ticks = evaluation_ticks(st, horizon, warmup)
    trad = []
    for _ in range(horizon):
        t = env.advance()
        env.apply(ones)
        if t in ticks:
            trad.append(mse(env.traditional.values, env.sim.ground_truth(t)))
    spatial = [mse(aligned_snapshot(env.store, t), env.sim.ground_truth(t)) for t in ticks]
    return {"spatiotemporal": float(np.mean(spatial)), "traditional": float(np.mean(trad))}


def accuracy_sweep(ns, modes=("spatiotemporal", "traditional"), seeds=(1, 2, 3),
                   settings: SimSettings | None = None, horizon=1000, warmup=50,
                   traditional_budget=0) -> list[dict]:
    """Rows ``{n, mode, seed, mse}`` for every junction count, mode and seed."""
    settings = settings or SimSettings()
    rows = []
    for n in ns:
        for seed in seeds:
            res = accuracy_run(n, seed, settings, horizon, warmup, traditional_budget)
            for mode in modes:
                rows.append({"n": n, "mode": mode, "seed": seed, "mse": res[mode]})
    return rows


def seed_means(rows, key="mse") -> dict:
    """Average ``key`` over seeds, keyed by ``(n, mode)``."""
    acc: dict = {}
    for r in rows:
        acc.setdefault((r["n"], r["mode"]), []).append(r[key])
    return {k: float(np.mean(v)) for k, v in acc.items()}


@dataclass
class SyncPoint:
    tick: int
    mode: str
    baseline: float
    dt_value: float
    label: str = ""


@dataclass
class SyncLog:
    """Per-tick material for synchronisation analysis of one or more modes.

    ``baseline[k]`` is the simulator's vehicle total at ``ticks[k]``;
    ``views[mode][k]`` is that mode's N x F twin view at the same tick;
    ``applied[mode]`` maps ``(pt, gen_tick)`` to the tick it reached the twin;
    ``samples`` lists the ``(tick, pt)`` observations to label.
    """

    ticks: list = field(default_factory=list)
    baseline: list = field(default_factory=list)
    prev_baseline: float | None = None
    views: dict = field(default_factory=dict)
    applied: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)


def net_flow(view) -> float:
    """Sum over junctions of incoming minus outgoing flow."""
    v = _values(view)
    return float(v[:, 1].sum() - v[:, 2].sum())


def capture_label(applied: dict, pt: int, gen_tick: int, hit_threshold: int) -> str:
    tick = applied.get((pt, gen_tick))
    if tick is None:
        return NONE
    return HIT if tick - gen_tick <= hit_threshold else MISS


def sync_series(log: SyncLog, hit_threshold: int = 2) -> list[SyncPoint]:
    """Baseline vs twin-derived net flow per tick and mode, with hit/miss labels.

    Only sampled ticks carry a label; the rest are left blank.
    """
    if log is None or not log.ticks or not log.views:
        raise MissingLog("sync analysis needs baseline totals and twin views per tick")
    sampled = {}
    for tick, pt in log.samples:
        sampled.setdefault(tick, []).append(pt)
    points = []
    for mode in sorted(log.views):
        views = log.views[mode]
        if len(views) != len(log.ticks):
            raise MissingLog(f"mode {mode!r} has {len(views)} views for {len(log.ticks)} ticks")
        applied = log.applied.get(mode, {})
        for k, tick in enumerate(log.ticks):
            label = ""
            if tick in sampled:
                label = ",".join(capture_label(applied, pt, tick, hit_threshold)
                                 for pt in sampled[tick])
            points.append(SyncPoint(tick, mode, float(log.baseline[k]),
                                    net_flow(views[k]), label))
    return points


def sync_deviation(points, mode, baseline_before: float) -> np.ndarray:
    """Per-tick |twin net flow - change in the baseline vehicle count| for one mode."""
    pts = [p for p in points if p.mode == mode]
    base = np.array([baseline_before] + [p.baseline for p in pts])
    dt = np.array([p.dt_value for p in pts])
    return np.abs(dt - np.diff(base))
