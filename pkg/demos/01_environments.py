"""Walk one episode in each simulated environment, printing what the agent
would see. Both environments are fully determined by the task seed."""

from depo.envs import EnvAction, make_env, make_task
from depo.vocab import default_vocab

vocab = default_vocab()

print("=" * 60)
print("grid world: reach the goal cell")
print("=" * 60)
env = make_env("grid", size=5, wall_density=0.1, max_steps=64)
task = make_task("grid", 42)
state, obs = env.reset(task)
print("instruction:", " ".join(vocab.words(task.instruction_tokens)))
print(f"hidden state: agent {state.agent}, goal {state.goal}, "
      f"walls {sorted(state.walls)}")
print("observation:", " ".join(vocab.words(obs)))

step = 0
while not state.terminal:
    legal = env.legal_actions(state)
    # walk greedily toward the goal for the demo
    ax, ay = state.agent
    gx, gy = state.goal
    want = ("east" if gx > ax else "west") if gx != ax else \
        ("north" if gy > ay else "south")
    by_dir = {vocab.word(a.args[0]): a for a in legal}
    action = by_dir.get(want, legal[0])
    out = env.step(state, action)
    state = out.state
    step += 1
    print(f"step {step}: move {vocab.word(action.args[0]):5s} -> agent "
          f"{state.agent}, obs: {' '.join(vocab.words(out.observation))}")
print(f"terminal after {state.step_counter} steps, success={env.success(state)}, "
      f"reward={env.final_reward(state):.4f}")

print()
print("=" * 60)
print("shop: search, add the best match, buy")
print("=" * 60)
shop = make_env("shop")
task = make_task("shop", 7)
state, obs = shop.reset(task)
print("instruction:", " ".join(vocab.words(task.instruction_tokens)))
print("observation:", " ".join(vocab.words(obs)))

out = shop.step(state, EnvAction("search", (state.target[0],)))
state = out.state
print("after search:", " ".join(vocab.words(out.observation)))
counts = [shop.match_count(state, i) for i in state.results]
best = counts.index(max(counts))
out = shop.step(state, EnvAction("add", (vocab.id(str(best)),)))
state = out.state
print(f"added result {best} (matches {max(counts)}/4):",
      " ".join(vocab.words(out.observation)))
out = shop.step(state, EnvAction("buy"))
state = out.state
print(f"bought; success={shop.success(state)}, reward={shop.final_reward(state)}")

# illegal actions never crash an episode: they are absorbed with a flag
state2, _ = shop.reset(task)
out = shop.step(state2, EnvAction("buy"))
print(f"\nbuy with an empty cart is absorbed: legal={out.legal}, "
      f"terminal={out.terminal}")
