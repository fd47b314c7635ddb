"""``twinforge`` command line: flat key=value config, one subcommand per experiment."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, fields

from . import experiments as ex
from .agent import AgentConfig
from .errors import ConfigError, ConfigTypeError, MissingFile, TwinError, UnknownKey
from .metrics import EnergyModel, seed_means, sync_deviation
from .sim import TOPOLOGIES
from .twinning import SimSettings

log = logging.getLogger("twinforge")

SUBCOMMANDS = ("accuracy", "query-bench", "train", "resources", "sync")


@dataclass(frozen=True)
class Option:
    default: object
    kind: type = str        # element type for list options
    is_list: bool = False
    choices: tuple = ()
    help: str = ""


def _agent_options() -> dict:
    opts = {}
    for f in fields(AgentConfig):
        default = f.default
        if f.name == "lr":
            opts["agent.lr"] = Option((0.06,), float, True, help="one training run per value")
        elif f.name == "hidden_sizes":
            opts["agent.hidden_sizes"] = Option(tuple(default), int, True)
        else:
            opts[f"agent.{f.name}"] = Option(default, type(default))
    # experiment default; the library default stays at 1.0
    opts["agent.penalty_weight"] = Option(0.02, float)
    opts["agent.grad_clip"] = Option(10.0, float)
    opts["agent.td_clip"] = Option(1.0, float)
    return opts


OPTIONS: dict[str, Option] = {
    "seed": Option(1, int),
    "out_dir": Option("runs", str),
    "sim.n_junctions": Option(20, int),
    "sim.topology": Option("random-geometric", str, choices=TOPOLOGIES),
    "sim.insertion_rate": Option(2.0, float),
    "sim.service_rate": Option(0.25, float),
    "sim.exit_prob": Option(0.1, float),
    "sim.demand_amplitude": Option(0.8, float),
    "sim.demand_period": Option(200, int),
    "sim.interval": Option(1, int),
    "sim.horizon_ticks": Option(1000, int),
    "channel.latency_mean": Option(0.0, float, help="base mean; grows by log_coef * ln N"),
    "channel.latency_log_coef": Option(2.0, float),
    "channel.latency_jitter": Option(1.0, float),
    "channel.loss_prob": Option(0.05, float),
    "payload.bytes": Option(1000, int),
    "queue.capacity": Option(32, int),
    "store.backend": Option("graph", str, choices=("graph", "join")),
    "etl.literal_alg1": Option(False, bool),
    "energy.c_op": Option(1.0, float),
    "energy.c_byte": Option(0.001, float),
    "eval.hit_threshold": Option(2, int),
    "eval.warmup_ticks": Option(50, int),
    "accuracy.n_values": Option((20, 40, 80, 100), int, True),
    "accuracy.n_seeds": Option(3, int),
    "bench.n_records": Option(10_000, int),
    "bench.sizes": Option((100, 1000, 5000, 10_000), int, True),
    "bench.repeats": Option(10, int),
    "train.episodes": Option(200, int),
    "train.horizon": Option(100, int),
    "resources.payloads": Option((200, 600, 1000, 1400, 1800), int, True),
    "sync.budget": Option(16, int),
    "sync.samples": Option(3, int),
    **_agent_options(),
}


def _scalar(key: str, kind: type, text: str):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigTypeError(f"{key}: expected a boolean, got {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigTypeError(f"{key}: expected {kind.__name__}, got {text!r}") from None


def convert(key: str, text: str):
    """Parse the string ``text`` as the value of ``key``."""
    if key not in OPTIONS:
        raise UnknownKey(f"unknown config key {key!r}")
    opt = OPTIONS[key]
    if opt.is_list:
        value = tuple(_scalar(key, opt.kind, t) for t in text.split(",") if t.strip())
        if not value:
            raise ConfigTypeError(f"{key}: expected a comma-separated list")
    else:
        value = _scalar(key, opt.kind, text)
    if opt.choices and value not in opt.choices:
        raise ConfigError(f"{key}: {value!r} is not one of {', '.join(opt.choices)}")
    return value


class RunConfig(dict):
    """Fully resolved flat configuration."""

    def sim_settings(self, **over) -> SimSettings:
        st = SimSettings(
            n=self["sim.n_junctions"], topology=self["sim.topology"],
            insertion_rate=self["sim.insertion_rate"], service_rate=self["sim.service_rate"],
            exit_prob=self["sim.exit_prob"], demand_amplitude=self["sim.demand_amplitude"],
            demand_period=self["sim.demand_period"], interval=self["sim.interval"],
            payload_bytes=self["payload.bytes"], latency_mean=self["channel.latency_mean"],
            latency_log_coef=self["channel.latency_log_coef"],
            latency_jitter=self["channel.latency_jitter"], loss_prob=self["channel.loss_prob"],
            queue_capacity=self["queue.capacity"], literal_alg1=self["etl.literal_alg1"],
            backend=self["store.backend"])
        for k, v in over.items():
            setattr(st, k, v)
        return st

    def agent_config(self, lr: float | None = None) -> AgentConfig:
        kw = {f.name: self[f"agent.{f.name}"] for f in fields(AgentConfig)}
        kw["lr"] = self["agent.lr"][0] if lr is None else lr
        try:
            return AgentConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def energy(self) -> EnergyModel:
        try:
            return EnergyModel(self["energy.c_op"], self["energy.c_byte"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        lines = []
        for key in sorted(self):
            v = self[key]
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key}={v}")
        return "\n".join(lines) + "\n"


def read_config_file(path) -> list[tuple[str, str]]:
    if not os.path.isfile(path):
        raise MissingFile(f"config file {path!r} not found")
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            pairs.append((k.strip(), v.strip()))
    return pairs


def parse_config(path=None, flags=(), write=False) -> RunConfig:
    """Resolve defaults, then file entries, then ``(key, value)`` flags.

    A flag replaces the file's value for its key; repeating a flag for a list
    key extends the list. With ``write`` the result is echoed to
    ``out_dir/config.resolved``.
    """
    cfg = RunConfig({k: o.default for k, o in OPTIONS.items()})
    if path is not None:
        for k, v in read_config_file(path):
            cfg[k] = convert(k, v)
    seen = set()
    for k, v in flags:
        value = convert(k, v)
        if k in seen and OPTIONS[k].is_list:
            value = cfg[k] + value
        cfg[k] = value
        seen.add(k)
    cfg.agent_config()
    cfg.energy()
    if write:
        os.makedirs(cfg["out_dir"], exist_ok=True)
        with open(os.path.join(cfg["out_dir"], "config.resolved"), "w") as fh:
            fh.write(cfg.dumps())
    return cfg


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


# --- subcommands; each returns summary lines ---------------------------------

def run_accuracy(cfg: RunConfig, out: str) -> list[str]:
    seeds = tuple(cfg["seed"] + k for k in range(cfg["accuracy.n_seeds"]))
    rows = ex.accuracy_sweep(cfg["accuracy.n_values"], seeds=seeds, settings=cfg.sim_settings(),
                             horizon=cfg["sim.horizon_ticks"], warmup=cfg["eval.warmup_ticks"])
    write_rows(os.path.join(out, "accuracy.csv"), ("n", "mode", "seed", "mse"), rows)
    means = seed_means(rows)
    lines = ["N  spatiotemporal  traditional  ratio"]
    for n in cfg["accuracy.n_values"]:
        s, t = means[(n, "spatiotemporal")], means[(n, "traditional")]
        lines.append(f"{n:<3d} {s:14.4f} {t:12.4f} {t / s:6.2f}")
    return lines


def run_query_bench(cfg: RunConfig, out: str) -> list[str]:
    rows, identical = ex.query_bench(cfg["bench.sizes"], cfg["bench.n_records"],
                                     cfg["bench.repeats"], cfg["seed"])
    write_rows(os.path.join(out, "query_bench.csv"), ("backend", "query_size", "elapsed_us"), rows)
    by = {(r["backend"], r["query_size"]): r["elapsed_us"] for r in rows}
    lines = [f"result sets identical: {identical}", "size   graph_us    join_us  graph/join"]
    for size in cfg["bench.sizes"]:
        g, j = by[("graph", size)], by[("join", size)]
        lines.append(f"{size:<6d} {g:9.1f} {j:10.1f} {g / j:8.2f}")
    return lines


def run_train(cfg: RunConfig, out: str) -> list[str]:
    path = os.path.join(out, "training.csv")
    lines = ["lr  final-20 std  reward range  ratio"]
    for k, lr in enumerate(cfg["agent.lr"]):
        tlog, _ = ex.train(cfg.agent_config(lr), cfg.sim_settings(), cfg["train.episodes"],
                           cfg["train.horizon"], cfg["seed"], cfg.energy())
        tlog.write_csv(path, append=k > 0)
        stat, span = ex.convergence_stat(tlog.column("cumulative_reward"))
        lines.append(f"{lr:<4g} {stat:12.3f} {span:13.3f} {stat / span if span else 0.0:6.3f}")
    return lines


def _trained_agent(cfg: RunConfig):
    _, agent = ex.train(cfg.agent_config(), cfg.sim_settings(), cfg["train.episodes"],
                        cfg["train.horizon"], cfg["seed"], cfg.energy())
    return agent


def run_resources(cfg: RunConfig, out: str) -> list[str]:
    rows, _ = ex.resources(cfg.agent_config(), cfg.sim_settings(), cfg["resources.payloads"],
                           horizon=cfg["sim.horizon_ticks"], warmup=cfg["eval.warmup_ticks"],
                           seed=cfg["seed"], energy=cfg.energy(), agent=_trained_agent(cfg))
    write_rows(os.path.join(out, "resources.csv"),
               ("payload_bytes", "mode", "energy_mj", "ram_proxy_bytes", "mse"), rows)
    by = {(r["payload_bytes"], r["mode"]): r for r in rows}
    lines = ["payload  energy saving  peak RAM saving  MSE ratio"]
    for p in cfg["resources.payloads"]:
        rl, al = by[(p, "rl-at")], by[(p, "update-all")]
        lines.append(f"{p:<8d} {1 - rl['energy_mj'] / al['energy_mj']:13.1%} "
                     f"{1 - rl['ram_proxy_bytes'] / al['ram_proxy_bytes']:15.1%} "
                     f"{rl['mse'] / al['mse']:10.3f}")
    return lines


def run_sync(cfg: RunConfig, out: str) -> list[str]:
    logbook, initial = ex.sync_run(_trained_agent(cfg), cfg.sim_settings(),
                                   cfg["sim.horizon_ticks"], cfg["sync.budget"], cfg["seed"],
                                   cfg["sync.samples"], cfg["eval.warmup_ticks"])
    points = ex.sync_points(logbook, cfg["eval.hit_threshold"])
    write_rows(os.path.join(out, "sync.csv"), ("tick", "mode", "baseline", "dt_value", "label"),
               [p.__dict__ for p in points])
    lines = ["mode         mean |dev|  first quartile  last quartile"]
    for mode in ("baseline", "traditional", "rl-at"):
        dev = sync_deviation(points, mode, initial)
        q = len(dev) // 4
        lines.append(f"{mode:<12s} {dev.mean():10.3f} {dev[:q].mean():15.3f} "
                     f"{dev[-q:].mean():14.3f}")
    labels = [(p.tick, p.mode, p.label) for p in points if p.label]
    lines += [f"sample t={t} {m}: {lab}" for t, m, lab in labels]
    return lines


RUNNERS = {
    "accuracy": run_accuracy,
    "query-bench": run_query_bench,
    "train": run_train,
    "resources": run_resources,
    "sync": run_sync,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="twinforge",
        description="Run one spatiotemporal digital-twin experiment and write its CSV.",
        epilog="Any config key can be given as --key value, e.g. --agent.lr 0.6.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="flat key=value file")
    p.add_argument("--seed", help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--list-keys", action="store_true", help="print every config key and exit")
    return p


def split_flags(tokens) -> list[tuple[str, str]]:
    """Turn ``--key value`` / ``--key=value`` tokens into pairs."""
    pairs, it = [], iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            value = next(it, None)
            if value is None:
                raise ConfigError(f"flag --{key} needs a value")
        pairs.append((key, value))
    return pairs


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if args.list_keys:
        for k, o in OPTIONS.items():
            print(f"{k}={o.default}")
        return 0
    try:
        flags = split_flags(rest)
        if args.seed is not None:
            flags.append(("seed", args.seed))
        if args.out is not None:
            flags.append(("out_dir", args.out))
        cfg = parse_config(args.config, flags, write=True)
        out = cfg["out_dir"]
        lines = RUNNERS[args.subcommand](cfg, out)
    except (TwinError, ValueError, OSError) as exc:
        print(f"twinforge {args.subcommand}: error: {exc}", file=sys.stderr)
        return 2
    summary = "\n".join([f"{args.subcommand} (seed {cfg['seed']})", *lines]) + "\n"
    with open(os.path.join(out, f"{args.subcommand.replace('-', '_')}_summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    return 0


__all__ = ["OPTIONS", "RunConfig", "convert", "parse_config", "main"]
