"""Supervised growth of a three-class target pattern by backpropagation through time."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass
from importlib import resources
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .model import (CellField, ModelConfig, ModelParams, Wiring, compile_topology, init_params,
                    morph_config, nca_step, zero_field)
from .nn import AdamState, adam_step
from .records import RunRecord
from .rng import Rng
from .topology import (ScaleFreeConfig, Topology, build_grid, default_hub_count, empty_lists,
                       gen_scale_free_longrange, moore_neighbors)

# condition -> (Moore radius, long-range wiring)
CONDITIONS: Dict[str, Tuple[int, bool]] = {
    "v3": (1, False),
    "lr3": (1, True),
    "v5": (2, False),
    "lr5": (2, True),
}
CONDITION_LABELS = {
    "v3": "3x3 Vanilla",
    "lr3": "3x3 Long-Range",
    "v5": "5x5 Vanilla",
    "lr5": "5x5 Long-Range",
}
PATTERN_CHARS = {".": 0, "#": 1, "o": 2}


def parse_pattern(text: str) -> np.ndarray:
    rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("pattern must be a non-empty rectangle of characters")
    try:
        labels = np.array([[PATTERN_CHARS[ch] for ch in r] for r in rows], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"unknown pattern character {e}") from None
    if len(np.unique(labels)) != 3:
        raise ValueError("pattern must use all three cell types")
    return labels


def load_pattern(name: str = "smiley") -> np.ndarray:
    """A bundled pattern (``smiley`` is 16x16, ``smiley8`` is 8x8) or a path to a pattern file."""
    if name.endswith(".txt"):
        with open(name) as f:
            return parse_pattern(f.read())
    return parse_pattern(resources.files("brainca.data").joinpath(f"{name}.txt").read_text())


def pattern_for_grid(rows: int, cols: int) -> np.ndarray:
    if (rows, cols) == (16, 16):
        return load_pattern("smiley")
    if (rows, cols) == (8, 8):
        return load_pattern("smiley8")
    raise ValueError(f"no bundled pattern for a {rows}x{cols} grid")


@dataclass(frozen=True)
class MorphConfig:
    condition: str = "v3"
    seed: int = 42
    T: int = 35
    success_threshold: float = 0.98
    max_episodes: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    init_variance: float = 0.1
    rows: int = 16
    cols: int = 16
    pattern: str = ""
    hub_count: int = -1             # -1: ceil(N / 25)
    zipf_exponent: float = 2.0
    max_out_degree: int = 6
    grad_clip: float = 1.0
    boundary: str = "zero_pad"      # or "hard": edge cells simply have fewer neighbors

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown morphogenesis condition {self.condition!r}")
        if self.boundary not in ("zero_pad", "hard"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if self.T < 0 or not 0 < self.success_threshold <= 1:
            raise ValueError("need T >= 0 and 0 < success_threshold <= 1")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()

    def target(self) -> np.ndarray:
        labels = load_pattern(self.pattern) if self.pattern else pattern_for_grid(self.rows, self.cols)
        if labels.shape != (self.rows, self.cols):
            raise ValueError("pattern shape does not match the grid")
        return labels


def morph_topology(cfg: MorphConfig, rng: Rng) -> Topology:
    radius, long_range = CONDITIONS[cfg.condition]
    grid = build_grid(cfg.rows, cfg.cols)
    lr = empty_lists(grid)
    if long_range:
        hubs = cfg.hub_count if cfg.hub_count >= 0 else default_hub_count(grid.n_active)
        sf = ScaleFreeConfig(hubs, cfg.zipf_exponent, cfg.max_out_degree, rng.seed)
        lr = gen_scale_free_longrange(grid, sf, rng)
    return Topology(grid, moore_neighbors(grid, radius), lr)


def morph_wiring(cfg: MorphConfig, topo: Topology) -> Wiring:
    """Compile a topology; with ``zero_pad`` every local domain is filled to the
    full Moore window with zero-state slots, so edge cells can sense the border."""
    radius = CONDITIONS[cfg.condition][0]
    pad = (2 * radius + 1) ** 2 - 1 if cfg.boundary == "zero_pad" else 0
    return compile_topology(topo, pad_local_to=pad)


def init_cell_states(rng: Rng, n: int, C: int, variance: float = 0.1) -> np.ndarray:
    return rng.normal((n, C), std=np.sqrt(variance))


def decode_phenotype(c) -> Tuple[int, np.ndarray]:
    """Cell type (argmax, lowest index on ties) and probabilities from the first three channels."""
    vis = np.asarray(c, dtype=np.float64)[:3]
    return int(np.argmax(vis)), ad.softmax(vis)


def morph_loss(c, target):
    """Mean cross-entropy of the first three channels against per-cell target classes."""
    target = np.asarray(target).reshape(-1)
    logp = ad.log_softmax(ad.getitem(c, (slice(None), slice(0, 3))))
    onehot = np.eye(3)[target]
    return ad.mul(ad.sum(ad.mul(logp, onehot)), -1.0 / target.size)


def morph_accuracy(c, target) -> float:
    target = np.asarray(target).reshape(-1)
    pred = np.argmax(ad.value(c)[:, :3], axis=1)
    return float(np.mean(pred == target))


def run_episode(params: ModelParams, config: ModelConfig, wiring: Wiring, target, rng: Rng,
                T: int = 35, init_variance: float = 0.1):
    """Roll out T synchronous steps from a random start; returns (field, loss, accuracy).

    ``params`` may hold tape variables, in which case ``loss`` is a ``Var``.
    """
    c0 = init_cell_states(rng, wiring.n_cells, config.C, init_variance)
    field = zero_field(config, wiring, c0)
    for _ in range(T):
        field, _ = nca_step(params, config, field, wiring)
    return field, morph_loss(field.c, target), morph_accuracy(field.c, target)


def loss_and_grad(tensors, config: ModelConfig, wiring: Wiring, target, rng: Rng, T: int,
                  init_variance: float = 0.1):
    """Episode loss, accuracy and reverse-mode gradient for every parameter tensor."""
    leaves = {k: ad.Var(v, name=k) for k, v in tensors.items()}
    _, loss, acc = run_episode(ModelParams.from_tensors(leaves), config, wiring, target, rng,
                               T, init_variance)
    ad.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}
    return float(loss.value), acc, grads


def train_morph(cfg: MorphConfig, callback=None, return_params: bool = False):
    """Train one run until the first episode reaching the accuracy threshold.

    ``episodes_to_success`` counts episodes from 1; a run that never succeeds
    is recorded at ``max_episodes``. ``callback(episode, loss, accuracy)`` is
    called after every episode. With ``return_params`` the final parameter
    tensors are returned alongside the record.
    """
    start = time.time()
    rng = Rng(cfg.seed)
    target = cfg.target()
    wiring = morph_wiring(cfg, morph_topology(cfg, rng.spawn(1)))
    mcfg = morph_config(long_range=CONDITIONS[cfg.condition][1])
    tensors = init_params(mcfg, rng.spawn(2)).tensors()
    opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2, grad_clip_norm=cfg.grad_clip)

    def record(success, episode, acc, error=None):
        rec = RunRecord("morpho", cfg.condition, cfg.seed, success,
                        episode if success else cfg.max_episodes, episode, acc, None,
                        cfg.digest(), error, asdict(cfg), time.time() - start)
        return (rec, tensors) if return_params else rec

    acc = 0.0
    for episode in range(1, cfg.max_episodes + 1):
        loss, acc, grads = loss_and_grad(tensors, mcfg, wiring, target, rng.spawn(3, episode),
                                         cfg.T, cfg.init_variance)
        if callback is not None:
            callback(episode, loss, acc)
        if not np.isfinite(loss):
            return record(False, episode, acc, f"non-finite loss at episode {episode}")
        if acc >= cfg.success_threshold:
            return record(True, episode, acc)
        try:
            tensors, opt = adam_step(opt, tensors, grads)
        except ValueError as e:
            return record(False, episode, acc, f"{e} at episode {episode}")
    return record(False, cfg.max_episodes, acc)
