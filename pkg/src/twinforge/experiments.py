"""The five experiment analogs: accuracy, query latency, training, resources, sync."""
from __future__ import annotations

import gc
import logging
from dataclasses import replace

import numpy as np

from .agent import AgentConfig, TwinAgent, encode_state, forward, select_action, train
from .graph import make_store
from .ingest import UpdateAction
from .metrics import (
    EnergyModel,
    SyncLog,
    accuracy_sweep,
    aligned_snapshot,
    energy_proxy,
    evaluation_ticks,
    mse,
    sync_series,
)
from .sim import N_FEATURES, generate_network
from .twinning import SimSettings, TwinEnv

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_003

__all__ = [
    "accuracy_sweep",
    "build_benchmark_store",
    "query_bench",
    "train_sweep",
    "resources",
    "sync_run",
]


def build_benchmark_store(backend: str, n_records: int = 10_000, n_pts: int = 100, seed: int = 0):
    """Fill a store with ``n_records`` records of an update-all run on ``n_pts`` junctions.

    Records come in rounds: one per junction per tick, each chained to the
    junction's previous record and spatially linked to its successors'
    records of the same tick. The operation sequence depends only on the
    arguments, so both backends end up with identical ids and contents.
    """
    network = generate_network(n_pts, "random-geometric", seed)
    g = network.spatial
    store = make_store(backend, g, N_FEATURES)
    rng = np.random.default_rng(seed)
    prev = [None] * n_pts
    tick = 0
    while store.stats().record_count < n_records:
        tick += 1
        k = min(n_pts, n_records - store.stats().record_count)
        feats = rng.gamma(2.0, 5.0, size=(k, N_FEATURES))
        fresh = {}
        for pt in range(k):
            rid = store.create_record(pt, tick, feats[pt])
            if prev[pt] is not None:
                store.link_temporal(rid, prev[pt])
            fresh[pt] = rid
        for pt, rid in fresh.items():
            for j in g.successors(pt):
                other = fresh.get(j, prev[j])
                if other is not None:
                    store.link_spatial(rid, other)
        for pt, rid in fresh.items():
            prev[pt] = rid
    return store


def query_bench(sizes=(100, 1000, 5000, 10_000), n_records=10_000, repeats=10, seed=0):
    """Median timed-query latency per backend and size.

    Returns ``(rows, identical)`` where rows are ``{backend, query_size,
    elapsed_us}`` and ``identical`` says whether both backends returned the
    same result set at every size.
    """
    stores = {b: build_benchmark_store(b, n_records, seed=seed) for b in ("graph", "join")}
    # like timeit: keep collector pauses out of the timings
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        rows, identical = _time_queries(stores, sizes, repeats, seed)
    finally:
        if was_enabled:
            gc.enable()
    return rows, identical


def _time_queries(stores, sizes, repeats, seed):
    rows = []
    identical = True
    for size in sizes:
        results = {}
        for backend, store in stores.items():
            times = []
            for rep in range(repeats):
                res, elapsed = store.timed_query(size, seed=seed + size)
                times.append(elapsed)
            results[backend] = res
            rows.append({"backend": backend, "query_size": size,
                         "elapsed_us": float(np.median(times) * 1e6)})
        g, j = results["graph"], results["join"]
        same = g.records == j.records and g.edges == j.edges
        identical = identical and same
        log.info("query size %d: result sets %s", size, "match" if same else "DIFFER")
    return rows, identical


def train_sweep(lrs, cfg: AgentConfig, settings: SimSettings, episodes=200, horizon=100,
                seed=0, energy: EnergyModel | None = None):
    """Train one agent per learning rate; returns ``{lr: TrainingLog}``."""
    logs = {}
    for lr in lrs:
        logs[lr], _ = train(replace(cfg, lr=lr), settings, episodes, horizon, seed, energy)
    return logs


def convergence_stat(rewards, window=20) -> tuple[float, float]:
    """(std of the last ``window`` cumulative rewards, full-run reward range)."""
    r = np.asarray(rewards, dtype=float)
    return float(np.std(r[-window:])), float(r.max() - r.min())


def evaluate_policy(env: TwinEnv, policy, horizon: int, warmup: int):
    """Run ``policy(env) -> UpdateAction`` for ``horizon`` ticks without learning.

    Returns energy inputs, peak RAM proxy and the aligned-snapshot MSE.
    """
    peak = 0
    for _ in range(horizon):
        env.advance()
        env.apply(policy(env))
        peak = max(peak, env.ram_proxy_bytes())
    ticks = evaluation_ticks(env.settings, horizon, warmup)
    err = float(np.mean([mse(aligned_snapshot(env.store, t), env.sim.ground_truth(t))
                         for t in ticks]))
    return {"mem_ops": env.store.memory_ops, "bytes": env.bytes_processed,
            "peak_ram": peak, "mse": err}


def agent_policy(agent: TwinAgent, seed, epsilon: float | None = None):
    """The trained gate acting epsilon-greedily; defaults to the final training epsilon.

    A little residual exploration keeps an empty twin from being a fixed point
    of the greedy policy. Exploration draws come from a stream of their own so
    every evaluation run is reproducible on its own.
    """
    eps = agent.cfg.epsilon_end if epsilon is None else epsilon
    rng = np.random.default_rng(seed)

    def policy(env):
        return select_action(forward(agent.net, encode_state(env.state())), eps, rng)
    return policy


def update_all_policy(env):
    return UpdateAction.ones(env.n)


def resources(cfg: AgentConfig, settings: SimSettings, payloads=(200, 600, 1000, 1400, 1800),
              train_episodes=200, train_horizon=100, horizon=1000, warmup=50, seed=0,
              energy: EnergyModel | None = None, agent: TwinAgent | None = None):
    """Trained gate vs update-all across payload sizes.

    Rows ``{payload_bytes, mode, energy_mj, ram_proxy_bytes, mse}``; both
    modes of a payload point see the same traffic and channel draws.
    """
    energy = energy or EnergyModel()
    if agent is None:
        _, agent = train(cfg, settings, train_episodes, train_horizon, seed, energy)
    network = settings.network(seed)
    rows = []
    for p in payloads:
        st = replace(settings, payload_bytes=int(p))
        rl = agent_policy(agent, [seed, 4, p])
        for mode, policy in (("rl-at", rl), ("update-all", update_all_policy)):
            env = TwinEnv(network, st, seed + EVAL_SEED_OFFSET, delta=cfg.delta)
            out = evaluate_policy(env, policy, horizon, warmup)
            rows.append({"payload_bytes": int(p), "mode": mode,
                         "energy_mj": energy_proxy(out["mem_ops"], out["bytes"], energy),
                         "ram_proxy_bytes": out["peak_ram"], "mse": out["mse"]})
    return rows, agent


def sync_run(agent: TwinAgent, settings: SimSettings, horizon=1000, budget=16, seed=0,
             n_samples=3, warmup=50):
    """One run feeding the gated store and a budget-limited traditional twin.

    Returns ``(SyncLog, initial_total)``; modes are ``baseline`` (ground truth
    features), ``traditional`` and ``rl-at``.
    """
    network = settings.network(seed)
    env = TwinEnv(network, settings, seed + EVAL_SEED_OFFSET, delta=agent.cfg.delta,
                  traditional_budget=budget)
    policy = agent_policy(agent, [seed, 5])
    logbook = SyncLog(views={"baseline": [], "traditional": [], "rl-at": []})
    initial = env.sim.state.total
    for _ in range(horizon):
        t = env.advance()
        env.apply(policy(env))
        logbook.ticks.append(t)
        logbook.baseline.append(env.sim.total_vehicles(t))
        logbook.views["baseline"].append(env.sim.ground_truth(t).values)
        logbook.views["traditional"].append(env.traditional.values.copy())
        logbook.views["rl-at"].append(env.etl.view.copy())
    logbook.applied = {"baseline": {(pt, t): t for t in logbook.ticks for pt in range(env.n)},
                       "traditional": env.traditional.applied_log,
                       "rl-at": env.applied_log}
    rng = np.random.default_rng([seed, 6])
    ticks = np.linspace(warmup, horizon - 1, n_samples + 2)[1:-1].astype(int)
    logbook.samples = [(int(t), int(rng.integers(env.n))) for t in ticks]
    return logbook, initial


def sync_points(logbook: SyncLog, hit_threshold: int = 2):
    return sync_series(logbook, hit_threshold)
