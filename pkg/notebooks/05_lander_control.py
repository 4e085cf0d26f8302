"""
A cellular controller
=====================

The lander is flown by a grid of cells. Each motor zone pools its cells'
firing logits into one action logit; a 4-way softmax picks the action.
"""

# %%
import numpy as np

from brainca.lander_control import (ControlConfig, calibrate_success_threshold, lander_topology,
                                    random_policy_reward, region_logits, train_lander)
from brainca.model import compile_topology
from brainca.rng import Rng
from brainca.topology import quadrant_zones, build_grid

cfg = ControlConfig(condition="tshape_lr", wind_power=0.0, turbulence_power=0.0)
wiring = compile_topology(lander_topology(cfg, Rng(0)))
print("cells:", wiring.n_cells, "long-range cells:", int(wiring.long_range.nonempty.sum()))

# %% [markdown]
# Region logits for a toy 4x4 grid where every cell fires the same way.

# %%
zones = quadrant_zones(build_grid(4, 4))
cell_logits = np.tile([0.0, 2.0], (16, 1))
print("region logits:", np.round(region_logits(cell_logits, zones), 4))

# %% [markdown]
# The success threshold on the built-in environment is calibrated from the
# scripted controller instead of taken from the external benchmark.

# %%
env = cfg.env()
print("threshold:", round(calibrate_success_threshold(env), 1), "random:", round(random_policy_reward(env), 1))

small = ControlConfig(grid_size=8, C=4, attention_hidden=8, msg_hidden=8, max_episodes=3,
                      eval_interval=1, max_steps=60, wind_power=0.0, turbulence_power=0.0)
log = []
record = train_lander(small, callback=lambda *row: log.append(row))
for ep, train, ev, loss, ent in log:
    print(f"episode {ep} train {train:.1f} eval {ev:.1f} loss {loss:.3f} entropy {ent:.3f}")
print(record.success, round(record.best_eval_reward, 1))
