"""
The landing task
================

A small 2D lander with a main engine and two side thrusters. Shaping rewards
approach, low speed and level attitude; touching down gently ends the episode
with a bonus, a hard impact with a penalty.
"""

# %%
import numpy as np

from brainca.lander_env import EnvConfig, LanderEnv, run_policy, scripted_action

calm = EnvConfig(wind_power=0.0, turbulence_power=0.0)
windy = EnvConfig()

# %%
for name, policy in (("noop", lambda o: 0), ("scripted", scripted_action)):
    results = [run_policy(calm, seed, policy) for seed in range(10)]
    rewards = np.array([r[0] for r in results])
    print(f"{name:9s} mean {rewards.mean():8.1f}  outcomes {sorted({r[1] for r in results})}")

rng = np.random.default_rng(0)
random_rewards = [run_policy(calm, 100 + k, lambda o: int(rng.integers(4)))[0] for k in range(20)]
print(f"random    mean {np.mean(random_rewards):8.1f}")

# %% [markdown]
# Wind perturbs the scripted controller but rarely defeats it.

# %%
print([round(run_policy(windy, s, scripted_action)[0]) for s in range(10)])

env = LanderEnv(calm, log_path="/tmp/brainca_landing.csv")
obs = env.reset(3)
while True:
    res = env.step(scripted_action(obs))
    obs = res.observation
    if res.done:
        break
print(res.outcome, env.state.step, "steps; trajectory in /tmp/brainca_landing.csv")
