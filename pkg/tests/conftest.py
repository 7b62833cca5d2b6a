import numpy as np
import pytest

from depo.envs import EnvAction, EnvKind, make_env, make_task
from depo.policy import PolicyConfig, PolicyModel
from depo.trajectory import AgentStep, Provenance, Trajectory
from depo.vocab import default_vocab


@pytest.fixture(scope="session")
def vocab():
    return default_vocab()


@pytest.fixture(scope="session")
def grid_env():
    return make_env("grid", size=6, wall_density=0.12, max_steps=64)


@pytest.fixture(scope="session")
def shop_env():
    return make_env("shop", catalog_size=10, num_results=3, max_steps=15)


@pytest.fixture(scope="session")
def tiny_model():
    """A sub-1k-parameter policy used for finite-difference checks."""
    return PolicyModel(PolicyConfig(vocab_size=12, d_model=6, n_layers=1,
                                    n_heads=2, context=32))


def make_synthetic_trajectory(vocab, seed=0, env_kind=EnvKind.GRID_WORLD,
                              n_steps=None, reward=None, label=None,
                              provenance=Provenance.MCTS, thought_lens=None):
    """A structurally valid trajectory with seeded contents."""
    rng = np.random.default_rng(seed)
    task = make_task(env_kind, int(rng.integers(1000)))
    if n_steps is None:
        n_steps = int(rng.integers(1, 9))
    dirs = ("north", "east", "south", "west")
    steps = []
    for i in range(n_steps):
        tlen = thought_lens[i] if thought_lens is not None else int(rng.integers(0, 9))
        thought = tuple(vocab.id(w) for w in rng.choice(
            ["goal", "go", "east", "west", "see", "i", "now", "ok"], size=tlen))
        action = EnvAction("move", (vocab.id(dirs[int(rng.integers(4))]),))
        obs = tuple(vocab.ids("goal", dirs[int(rng.integers(4))], "here"))
        steps.append(AgentStep(thought=thought, action=action, observation=obs,
                               legal=bool(rng.integers(2))))
    if reward is None:
        reward = float(rng.random())
    return Trajectory(task=task, steps=tuple(steps), final_reward=reward,
                      label=label, provenance=provenance)
