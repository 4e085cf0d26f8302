"""
One update step
===============

A step attends over local and long-range domains, composes an interaction
vector, runs it through a message network and a GRU, and refines the state.
"""

# %%
import numpy as np

from brainca import autodiff as ad
from brainca.model import (ModelParams, attention_weights, compile_topology, init_params, morph_config,
                           nca_step, zero_field)
from brainca.rng import Rng
from brainca.topology import ScaleFreeConfig, Topology, build_grid, gen_scale_free_longrange, moore_neighbors

rng = Rng(0)
grid = build_grid(8, 8)
topo = Topology(grid, moore_neighbors(grid, 1), gen_scale_free_longrange(grid, ScaleFreeConfig(3), rng))
wiring = compile_topology(topo)
config = morph_config(long_range=True)
params = init_params(config, rng)
print({k: v.shape for k, v in list(params.tensors().items())[:4]})

# %% [markdown]
# Attention weights over each domain are a softmax, so they sum to one.
# Cells without long-range partners get a zero long-range aggregate.

# %%
field = zero_field(config, wiring, rng.normal((64, 9), std=np.sqrt(0.1)))
alpha = ad.value(attention_weights(params.attn_local, field.c, wiring.local))
print("local weight sums:", np.unique(np.round(alpha.sum(axis=1), 12)))

for t in range(5):
    field, _ = nca_step(params, config, field, wiring)
    print(f"step {t + 1}: state norm {np.linalg.norm(field.c):.4f}")

# %% [markdown]
# Gradients flow back through the steps on a tape.

# %%
leaves = {k: ad.Var(v) for k, v in params.tensors().items()}
f = zero_field(config, wiring, rng.normal((64, 9)))
for _ in range(3):
    f, _ = nca_step(ModelParams.from_tensors(leaves), config, f, wiring)
loss = ad.sum(ad.mul(f.c, f.c))
ad.backward(loss)
print("gradient norm of msg.0.W:", np.linalg.norm(leaves["msg.0.W"].grad))
