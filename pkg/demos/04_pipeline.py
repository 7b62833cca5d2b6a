"""A miniature end-to-end run through the library API.

Generates a small grid-world pool, labels it, clones the desirable set,
post-trains with the efficiency-aware preference loss, and compares the
evaluation metrics. Scaled down to finish quickly; the acceptance suite
runs the full-size version of this experiment.
"""

import time

import numpy as np

from depo.envs import EnvKind, make_env, make_task
from depo.eval import compute_metrics, run_episodes
from depo.labeling import GRIDWORLD_PRESET, LabeledDataset, build_dataset
from depo.mcts import SearchConfig, search
from depo.policy import PolicyConfig, PolicyModel
from depo.train import TrainConfig, TrajectoryEncoder, train

t0 = time.perf_counter()
env = make_env("grid", size=5, wall_density=0.06, max_steps=64)

pool = []
for seed in range(20):
    pool.extend(search(make_task("grid", 100 + seed), env,
                       SearchConfig(simulations=50, max_depth=64, seed=5, noise=0.2)))
labeled = build_dataset(pool, GRIDWORLD_PRESET)
print(f"[{time.perf_counter()-t0:5.0f}s] pool {len(pool)}, "
      f"D {len(labeled.desirable)}, U {len(labeled.undesirable)}")

# keep the undesirable step exposure comparable to the desirable set
d_steps = sum(t.num_steps for t in labeled.desirable)
rng = np.random.default_rng(5)
keep, steps = [], 0
for i in rng.permutation(len(labeled.undesirable)):
    t = labeled.undesirable[i]
    if steps + t.num_steps <= d_steps:
        keep.append(t)
        steps += t.num_steps
dataset = LabeledDataset(labeled.desirable, tuple(keep), 0)

model = PolicyModel(PolicyConfig(d_model=40, n_layers=2, n_heads=4, context=96))
encoder = TrajectoryEncoder(model, {EnvKind.GRID_WORLD: env,
                                    EnvKind.SHOP_SIM: make_env("shop")})

bc, reports = train(model, model.init_params(0), None,
                    LabeledDataset(dataset.desirable, (), 0),
                    TrainConfig(learning_rate=4e-3, epochs=18, batch_size=16, seed=1),
                    "sft", encoder)
print(f"[{time.perf_counter()-t0:5.0f}s] behavioral cloning done "
      f"(final loss {reports[-1].loss:.3f})")

pref = dict(beta=0.1, lambda_d=2.0, lambda_u=1.0, learning_rate=1.5e-4,
            epochs=2, batch_size=16, seed=2)
tuned, reports = train(model, bc, bc, dataset,
                       TrainConfig(alpha1=3.0, alpha2=3.0, **pref), "depo", encoder)
print(f"[{time.perf_counter()-t0:5.0f}s] preference stage done "
      f"(loss {reports[-1].loss:.3f}, z0 {reports[-1].z0:.3f}, "
      f"mean bonus {reports[-1].mean_bonus:.2f})")

for name, params in (("BC", bc), ("DEPO", tuned)):
    eps = run_episodes(model, params, env, 30, seed=9000, max_step_tokens=24)
    rep = compute_metrics(eps, seed=9000)
    print(f"[{time.perf_counter()-t0:5.0f}s] {name:4s} succ={rep.success_rate:.2f} "
          f"reward={rep.mean_reward:.3f} T@All={rep.tokens_all:.1f} "
          f"S@All={rep.steps_all:.1f}")
