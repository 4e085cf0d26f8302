"""Reverse-mode versus central-difference checks on shrunken task instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lander_control as lc
from . import morphogenesis as mg
from .model import ModelParams, compile_topology, init_params, morph_config
from .nn import finite_diff_grad, max_relative_error, restrict, sample_coords
from .rng import Rng

MORPH_TOL = 1e-4
LANDER_TOL = 1e-3


@dataclass
class GradCheck:
    profile: str
    max_rel_error: float
    tolerance: float
    n_probed: int
    n_params: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance


def _jitter(tensors, rng: Rng, scale: float):
    # break the symmetry of fresh biases so no gradient is trivially zero
    return {k: v + scale * rng.normal(v.shape) for k, v in tensors.items()}


def _compare(profile, grads, loss_fn, tensors, per_tensor, seed, eps, tol) -> GradCheck:
    coords = None if per_tensor is None else sample_coords(tensors, per_tensor, Rng(seed).spawn(99))
    fd = finite_diff_grad(loss_fn, tensors, eps, coords)
    if coords is not None:
        grads, fd = restrict(grads, coords), restrict(fd, coords)
    n = sum(v.size for v in fd.values())
    err = max_relative_error(grads, fd, floor=1e-4)
    return GradCheck(profile, err, tol, n, sum(v.size for v in tensors.values()))


def morph_gradcheck(per_tensor: Optional[int] = None, seed: int = 0, size: int = 4, T: int = 3,
                    eps: float = 1e-5) -> GradCheck:
    """Full morphogenesis loss (long-range condition, C = 9) on a ``size`` x ``size`` grid."""
    cfg = mg.MorphConfig(condition="lr3", rows=size, cols=size, T=T, seed=seed, hub_count=2)
    rng = Rng(seed)
    wiring = mg.morph_wiring(cfg, mg.morph_topology(cfg, rng.spawn(1)))
    mcfg = morph_config(long_range=True)
    tensors = _jitter(init_params(mcfg, rng.spawn(2)).tensors(), rng.spawn(5), 0.05)
    target = np.arange(size * size) % 3
    _, _, grads = mg.loss_and_grad(tensors, mcfg, wiring, target, Rng(seed).spawn(3), T)

    def loss(t):
        return float(mg.run_episode(ModelParams.from_tensors(t), mcfg, wiring, target,
                                    Rng(seed).spawn(3), T)[1])
    return _compare("morph", grads, loss, tensors, per_tensor, seed, eps, MORPH_TOL)


def lander_gradcheck(per_tensor: Optional[int] = None, seed: int = 0, size: int = 4, steps: int = 5,
                     eps: float = 1e-6, **overrides) -> GradCheck:
    """REINFORCE loss of a ``steps``-step episode on a ``size`` x ``size`` quadrant-zoned grid,
    with the sampled actions and logit noise frozen."""
    kw = dict(grid_size=size, seed=seed, wind_power=0.0, turbulence_power=0.0, entropy_coef=0.05)
    kw.update(overrides)
    cfg = lc.ControlConfig(**kw)
    env = cfg.env()
    rng = Rng(seed)
    wiring = compile_topology(lc.lander_topology(cfg, rng.spawn(1)))
    tensors = _jitter(init_params(cfg.model(), rng.spawn(2)).tensors(), rng.spawn(5), 0.1)
    episode_seed = 11
    trace = lc.run_episode(ModelParams.from_tensors(tensors), cfg, wiring, env, episode_seed,
                           rng.spawn(4), True, max_steps=steps)
    _, grads = lc.episode_gradient(tensors, cfg, wiring, trace)
    return _compare("lander", grads, lambda t: lc.episode_loss(t, cfg, wiring, trace, episode_seed, env),
                    tensors, per_tensor, seed, eps, LANDER_TOL)
