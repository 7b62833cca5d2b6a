"""Harvest a trajectory pool with tree search, then label it.

The search keeps every unique terminal path it encounters, which is what
populates both the desirable band (fast successes) and the undesirable band
(slow successes plus demoted ones) for preference learning.
"""

import numpy as np

from depo.envs import make_env, make_task
from depo.labeling import GRIDWORLD_PRESET, build_dataset
from depo.mcts import SearchConfig, search
from depo.trajectory import token_stats

env = make_env("grid", size=5, wall_density=0.08, max_steps=64)
cfg = SearchConfig(simulations=120, max_depth=64, seed=1, noise=0.25)

pool = []
for seed in range(6):
    out = search(make_task("grid", 200 + seed), env, cfg)
    print(f"task seed {200 + seed}: {len(out)} unique terminal trajectories, "
          f"best reward {max(t.final_reward for t in out):.4f}")
    pool.extend(out)

rewards = np.array([t.final_reward for t in pool])
hist, edges = np.histogram(rewards, bins=10, range=(0.0, 1.0))
print("\nreward histogram over the pool:")
for count, lo, hi in zip(hist, edges, edges[1:]):
    print(f"  [{lo:.1f},{hi:.1f}) {'#' * min(count, 60)} {count}")

labeled = build_dataset(pool, GRIDWORLD_PRESET)
print(f"\nlabeling with kappa = (0.9, 0.9, 0.7), step threshold 7:")
print(f"  desirable   {len(labeled.desirable):4d}")
print(f"  undesirable {len(labeled.undesirable):4d}")
print(f"  discarded   {labeled.discarded_count:4d}")

d_steps = [t.num_steps for t in labeled.desirable]
u_steps = [t.num_steps for t in labeled.undesirable]
d_tok = [token_stats(t).mean_tokens_per_step for t in labeled.desirable]
u_tok = [token_stats(t).mean_tokens_per_step for t in labeled.undesirable]
print(f"\ndesirable:   steps {min(d_steps)}..{max(d_steps)}, "
      f"mean tokens/step {np.mean(d_tok):.1f}")
print(f"undesirable: steps {min(u_steps)}..{max(u_steps)}, "
      f"mean tokens/step {np.mean(u_tok):.1f}")
print("\nslow and verbose trajectories land in the undesirable set; that "
      "contrast is exactly what the efficiency-aware loss feeds on.")
