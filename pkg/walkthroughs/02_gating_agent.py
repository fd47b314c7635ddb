# coding: utf-8
# # Learning when to update the twin
#
# A small Q-network scores every junction. A junction is updated when its
# score is positive, so the greedy action needs no search over 2^N subsets.
# The reward is the change in the twin minus a per-operation storage cost.

import numpy as np

from twinforge.cli import parse_config
from twinforge.experiments import agent_policy, evaluate_policy, update_all_policy
from twinforge.agent import train
from twinforge.twinning import TwinEnv

cfg = parse_config(None, [("sim.n_junctions", "20")])
settings = cfg.sim_settings()

# short run so this finishes in well under a minute
log, agent = train(cfg.agent_config(), settings, episodes=30, horizon=60, seed=1,
                   energy=cfg.energy())
r = log.column("cumulative_reward")
print("cumulative reward, first and last five episodes")
print(np.round(r[:5], 1), np.round(r[-5:], 1))

# ## Gate vs update-all on the same traffic

network = settings.network(1)
for name, policy in (("gate", agent_policy(agent, 11)), ("update-all", update_all_policy)):
    env = TwinEnv(network, settings, seed=99, delta=agent.cfg.delta)
    out = evaluate_policy(env, policy, horizon=300, warmup=30)
    print(f"{name:10s} mem_ops={out['mem_ops']:6d} peak_ram={out['peak_ram']:8d} mse={out['mse']:.3f}")
