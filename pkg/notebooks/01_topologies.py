"""
Grids, neighborhoods and long-range wiring
==========================================

Every cell talks to its Moore neighbors. Long-range edges come in two kinds:
scale-free hubs for pattern growth and motor patches for control.
"""

# %%
import numpy as np

from brainca.rng import Rng
from brainca.topology import (MOTOR_ZONES, ACTIONS, ScaleFreeConfig, Topology, build_grid,
                              default_hub_count, gen_patch_longrange, gen_scale_free_longrange,
                              gen_t_shape, moore_neighbors, validate_topology, zone_patch)

grid = build_grid(16, 16)
for radius in (1, 2):
    counts = np.array([len(l) for l in moore_neighbors(grid, radius)]).reshape(16, 16)
    print(f"radius {radius}: total {counts.sum()}, corner {counts[0, 0]}, interior {counts[8, 8]}")

# %% [markdown]
# Hubs draw a capped Zipf out-degree and connect to cells more than one step away.
# Edges are undirected, so a hub also appears in its targets' lists.

# %%
hubs = default_hub_count(grid.n_active)
lists = gen_scale_free_longrange(grid, ScaleFreeConfig(hubs, 2.0, 6), Rng(42))
degree = np.array([len(l) for l in lists])
print(f"{hubs} hubs, {degree.sum() // 2} edges, degree histogram {np.bincount(degree)}")
topo = Topology(grid, moore_neighbors(grid, 1), lists)
print("valid:", validate_topology(topo) == [])

# %% [markdown]
# The T-shaped controller body: three motor blocks on top, a no-op stem below.
# Each patch cell links to six random cells in each other motor patch.

# %%
tgrid, zones = gen_t_shape(8)
picture = np.full(tgrid.size, " ")
for i, z in enumerate(zones):
    if tgrid.mask[i]:
        picture[i] = ACTIONS[z][0]
for z in MOTOR_ZONES:
    picture[zone_patch(tgrid, zones, z)] = "*"
print("\n".join("".join(r) for r in picture.reshape(tgrid.rows, tgrid.cols)[::2, ::2]))
patch_lists = gen_patch_longrange(tgrid, zones, Rng(0))
print("patch degrees:", sorted({len(l) for l in patch_lists if l}))
