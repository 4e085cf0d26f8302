"""
Growing a pattern
=================

Cells start from Gaussian noise and, after a fixed number of steps, the first
three channels of every cell should name its class in the target picture.
"""

# %%
import numpy as np

from brainca.morphogenesis import MorphConfig, load_pattern, pattern_for_grid, train_morph

smiley = load_pattern("smiley")
print("\n".join("".join(".#o"[v] for v in row) for row in smiley))
print("class counts:", np.bincount(smiley.ravel()))

# %% [markdown]
# A short run on the small 8x8 target. Full runs use the 16x16 smiley and
# thousands of episodes; this only shows the loop and the record it returns.

# %%
print("\n".join("".join(".#o"[v] for v in row) for row in pattern_for_grid(8, 8)))
curve = []
record = train_morph(MorphConfig(condition="lr3", rows=8, cols=8, max_episodes=40),
                     callback=lambda ep, loss, acc: curve.append((ep, loss, acc)))
for ep, loss, acc in curve[::10]:
    print(f"episode {ep:3d}  loss {loss:.4f}  accuracy {acc:.3f}")
print(record.success, record.episodes_to_success, record.final_accuracy)
