"""Decentralized lander control: zone-wise action readout and REINFORCE training."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .lander_env import EnvConfig, env_reset, env_step, run_policy, scripted_action
from .model import (CellField, ModelConfig, ModelParams, Wiring, compile_topology, init_params,
                    lander_config, nca_step, zero_field)
from .nn import AdamState, adam_step
from .records import RunRecord
from .rng import Rng
from .topology import (ACTIONS, Topology, build_grid, empty_lists, gen_patch_longrange, gen_t_shape,
                       moore_neighbors, quadrant_zones)

CONDITIONS = ("vanilla", "vanilla_lr", "tshape", "tshape_lr")
CONDITION_LABELS = {
    "vanilla": "Vanilla",
    "vanilla_lr": "Vanilla + Long-Range",
    "tshape": "T-Shape",
    "tshape_lr": "T-Shape + Long-Range",
}
EXTERNAL_SUCCESS_REWARD = 260.0
REGION_EPS = 1e-8


@dataclass(frozen=True)
class ControlConfig:
    condition: str = "vanilla"
    seed: int = 0
    C: int = 12
    n_steps: int = 3
    gamma: float = 0.99
    entropy_coef: float = 0.01
    logit_noise_std: float = 0.125
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    max_episodes: int = 10000
    success_reward: Optional[float] = None   # None: calibrate on the built-in env
    eval_interval: int = 50
    normalize_returns: bool = True
    bptt_truncation: int = 0                 # env steps; 0 backpropagates the whole episode
    radius: int = 1
    grid_size: int = 16
    block: int = 8
    targets_per_zone: int = 6
    attention_hidden: int = 64
    msg_hidden: int = 64
    msg_out: int = 0                         # 0: three times the extended state width
    wind_power: float = 5.0
    turbulence_power: float = 1.5
    max_steps: int = 1000

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown lander condition {self.condition!r}")
        if self.n_steps < 1 or not 0 < self.gamma <= 1:
            raise ValueError("need n_steps >= 1 and 0 < gamma <= 1")

    def env(self) -> EnvConfig:
        return EnvConfig(wind_power=self.wind_power, turbulence_power=self.turbulence_power,
                         max_steps=self.max_steps)

    def model(self) -> ModelConfig:
        kw = dict(msg_out=self.msg_out) if self.msg_out else {}
        return lander_config(self.C, attention_hidden=self.attention_hidden, msg_hidden=self.msg_hidden, **kw)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def lander_topology(cfg: ControlConfig, rng: Rng) -> Topology:
    if cfg.condition.startswith("tshape"):
        grid, zones = gen_t_shape(cfg.block)
    else:
        grid = build_grid(cfg.grid_size, cfg.grid_size)
        zones = quadrant_zones(grid)
    lr = empty_lists(grid)
    if cfg.condition.endswith("_lr"):
        lr = gen_patch_longrange(grid, zones, rng, cfg.targets_per_zone)
    return Topology(grid, moore_neighbors(grid, cfg.radius), lr, zones)


def zone_matrix(zones) -> np.ndarray:
    """(4, N) membership matrix in action order; every zone must have cells."""
    zones = np.asarray(zones)
    mat = np.stack([(zones == a).astype(np.float64) for a in range(len(ACTIONS))])
    empty = [ACTIONS[a] for a in range(len(ACTIONS)) if not mat[a].any()]
    if empty:
        raise ValueError(f"empty action zone(s): {', '.join(empty)}")
    return mat


def region_logits(cell_logits, zones):
    """Per-zone fire logits, each the fire-probability-weighted mean of its cells' fire logits."""
    zmat = zone_matrix(zones)
    fire = ad.getitem(cell_logits, (slice(None), 1))
    w = ad.sigmoid(fire - ad.getitem(cell_logits, (slice(None), 0)))
    num = ad.linear(w * fire, zmat)
    den = ad.linear(w, zmat) + REGION_EPS
    return num / den


@dataclass
class Decision:
    action: int
    log_prob: float
    entropy: float
    noise: np.ndarray


def policy_terms(L, noise, action: int):
    """Log-probability of ``action`` and entropy of ``softmax(L + noise)``."""
    z = L + noise
    logp = ad.log_softmax(z)
    entropy = ad.mul(ad.sum(ad.mul(logp, ad.softmax(z))), -1.0)
    return ad.getitem(logp, action), entropy


def decide(L, rng: Rng, training: bool, noise_std: float) -> Decision:
    L = np.asarray(ad.value(L), dtype=np.float64)
    if not np.all(np.isfinite(L)):
        raise ValueError("non-finite region logits")
    noise = rng.normal(L.size, std=noise_std) if training and noise_std > 0 else np.zeros(L.size)
    probs = ad.softmax(L + noise)
    action = rng.categorical(probs) if training else int(np.argmax(probs))
    logp, ent = policy_terms(L, noise, action)
    return Decision(action, float(logp), float(ent), noise)


def select_action(L, rng: Rng, training: bool, noise_std: float) -> Tuple[int, float, float]:
    d = decide(L, rng, training, noise_std)
    return d.action, d.log_prob, d.entropy


def discounted_returns(rewards, gamma: float, normalize: bool = True) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("no rewards")
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    if normalize:
        out = (out - out.mean()) / max(out.std(), 1e-8)
    return out


@dataclass
class EpisodeTrace:
    region_logits: List[np.ndarray] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    log_probs: List[float] = field(default_factory=list)
    entropies: List[float] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    noise: List[np.ndarray] = field(default_factory=list)
    observations: List[np.ndarray] = field(default_factory=list)
    prev_actions: List[np.ndarray] = field(default_factory=list)
    fields: List[CellField] = field(default_factory=list)
    outcome: str = ""

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def reinforce_loss(log_probs, entropies, returns, beta: float):
    """``-sum_t log_prob_t * R_t - beta * sum_t H_t``; works on floats or tape values."""
    total = 0.0
    for lp, h, r in zip(log_probs, entropies, returns):
        total = total + ad.mul(lp, -float(r)) - ad.mul(h, beta)
    return total


def control_step(params: ModelParams, config: ModelConfig, field: CellField, wiring: Wiring,
                 o, u_prev, n_steps: int = 3):
    """``n_steps`` NCA updates with the same observation and previous action; returns (field, L, logits)."""
    logits = None
    for _ in range(n_steps):
        field, logits = nca_step(params, config, field, wiring, o, u_prev)
    return field, region_logits(logits, wiring.zones), logits


def one_hot(a: int, n: int = 4) -> np.ndarray:
    v = np.zeros(n)
    v[a] = 1.0
    return v


def run_episode(params: ModelParams, cfg: ControlConfig, wiring: Wiring, env_cfg: EnvConfig,
                episode_seed: int, rng: Rng, training: bool, keep_fields: bool = True,
                actions: Optional[List[int]] = None, noise: Optional[List[np.ndarray]] = None,
                max_steps: Optional[int] = None) -> EpisodeTrace:
    """Roll out one episode without recording a tape.

    ``actions`` and ``noise`` replay a fixed sequence of draws instead of sampling.
    """
    mcfg = cfg.model()
    state, obs = env_reset(env_cfg, episode_seed)
    fld = zero_field(mcfg, wiring)
    u = one_hot(0)
    tr = EpisodeTrace()
    limit = max_steps if max_steps is not None else env_cfg.max_steps
    for t in range(limit):
        if keep_fields:
            tr.fields.append(fld)
        tr.observations.append(obs)
        tr.prev_actions.append(u)
        fld, L, _ = control_step(params, mcfg, fld, wiring, obs, u, cfg.n_steps)
        if actions is not None:
            xi = noise[t] if noise is not None else np.zeros(4)
            logp, ent = policy_terms(L, xi, actions[t])
            d = Decision(actions[t], float(logp), float(ent), xi)
        else:
            d = decide(L, rng, training, cfg.logit_noise_std)
        state, res = env_step(state, d.action, env_cfg)
        tr.region_logits.append(np.asarray(L))
        tr.actions.append(d.action)
        tr.log_probs.append(d.log_prob)
        tr.entropies.append(d.entropy)
        tr.noise.append(d.noise)
        tr.rewards.append(res.reward)
        obs, u = res.observation, one_hot(d.action)
        if res.done:
            tr.outcome = res.outcome
            break
    return tr


def episode_gradient(tensors: Dict[str, np.ndarray], cfg: ControlConfig, wiring: Wiring,
                     trace: EpisodeTrace) -> Tuple[float, Dict[str, np.ndarray]]:
    """REINFORCE loss of a finished episode and its gradient by checkpointed BPTT.

    The forward pass kept only the cell field at every environment step; each
    step is recomputed on a fresh tape, walking backwards and carrying the
    gradient of the cell state and GRU hidden state between steps.
    """
    mcfg = cfg.model()
    returns = discounted_returns(trace.rewards, cfg.gamma, cfg.normalize_returns)
    grads = {k: np.zeros_like(v) for k, v in tensors.items()}
    dc = dh = None
    total = 0.0
    for t in range(trace.length - 1, -1, -1):
        leaves = {k: ad.Var(v) for k, v in tensors.items()}
        f0 = trace.fields[t]
        c0, h0 = ad.Var(ad.value(f0.c)), ad.Var(ad.value(f0.h))
        fld = CellField(c0, h0, f0.prev_activation, f0.positions)
        f1, L, _ = control_step(ModelParams.from_tensors(leaves), mcfg, fld, wiring,
                                trace.observations[t], trace.prev_actions[t], cfg.n_steps)
        logp, ent = policy_terms(L, trace.noise[t], trace.actions[t])
        loss = ad.mul(logp, -float(returns[t])) - ad.mul(ent, cfg.entropy_coef)
        total += float(ad.value(loss))
        roots = [(loss, 1.0)]
        if dc is not None:
            roots += [(f1.c, dc), (f1.h, dh)]
        ad.backward(roots)
        for k, v in leaves.items():
            if v.grad is not None:
                grads[k] += v.grad
        dc = c0.grad if c0.grad is not None else np.zeros_like(c0.value)
        dh = h0.grad if h0.grad is not None else np.zeros_like(h0.value)
        if cfg.bptt_truncation and t % cfg.bptt_truncation == 0:
            dc = dh = None
    return total, grads


def episode_loss(tensors: Dict[str, np.ndarray], cfg: ControlConfig, wiring: Wiring,
                 trace: EpisodeTrace, episode_seed: int, env_cfg: EnvConfig) -> float:
    """Straight-line recomputation of the REINFORCE loss with the trace's actions and noise frozen."""
    replay = run_episode(ModelParams.from_tensors(tensors), cfg, wiring, env_cfg, episode_seed,
                         Rng(0), True, keep_fields=False, actions=trace.actions, noise=trace.noise,
                         max_steps=trace.length)
    returns = discounted_returns(replay.rewards, cfg.gamma, cfg.normalize_returns)
    return float(reinforce_loss(replay.log_probs, replay.entropies, returns, cfg.entropy_coef))


def calibrate_success_threshold(env_cfg: EnvConfig, episodes: int = 100, percentile: float = 90.0) -> float:
    """Percentile of the scripted controller's episode rewards on the built-in environment."""
    rewards = [run_policy(env_cfg, 10_000 + k, scripted_action)[0] for k in range(episodes)]
    return float(np.percentile(rewards, percentile))


def random_policy_reward(env_cfg: EnvConfig, episodes: int = 100, seed: int = 0) -> float:
    rng = Rng(seed)
    return float(np.mean([run_policy(env_cfg, 20_000 + k, lambda o: rng.integers(4))[0]
                          for k in range(episodes)]))


def train_lander(cfg: ControlConfig, callback=None, return_params: bool = False):
    """REINFORCE training with periodic greedy evaluation and early stopping.

    ``callback(episode, train_reward, eval_reward_or_None, loss, entropy_mean)``
    is called after every training episode.
    """
    start = time.time()
    env_cfg = cfg.env()
    threshold = cfg.success_reward if cfg.success_reward is not None else calibrate_success_threshold(env_cfg)
    rng = Rng(cfg.seed)
    wiring = compile_topology(lander_topology(cfg, rng.spawn(1)))
    tensors = init_params(cfg.model(), rng.spawn(2)).tensors()
    opt = AdamState(cfg.lr, weight_decay=cfg.weight_decay, grad_clip_norm=cfg.grad_clip)
    best = -np.inf
    echo = dict(asdict(cfg), success_threshold_used=threshold)

    def record(success, episode, error=None):
        rec = RunRecord("lander", cfg.condition, cfg.seed, success,
                        episode if success else cfg.max_episodes, episode, None,
                        None if not np.isfinite(best) else float(best), cfg.digest(), error, echo,
                        time.time() - start)
        return (rec, tensors) if return_params else rec

    for episode in range(1, cfg.max_episodes + 1):
        params = ModelParams.from_tensors(tensors)
        trace = run_episode(params, cfg, wiring, env_cfg, rng.spawn(3, episode).seed,
                            rng.spawn(4, episode), training=True)
        loss, grads = episode_gradient(tensors, cfg, wiring, trace)
        if not np.isfinite(loss):
            return record(False, episode, f"non-finite loss at episode {episode}")
        try:
            tensors, opt = adam_step(opt, tensors, grads)
        except ValueError as e:
            return record(False, episode, f"{e} at episode {episode}")
        eval_reward = None
        if cfg.eval_interval and episode % cfg.eval_interval == 0:
            ev = run_episode(ModelParams.from_tensors(tensors), cfg, wiring, env_cfg,
                             rng.spawn(5, episode).seed, Rng(0), training=False, keep_fields=False)
            eval_reward = ev.total_reward
            best = max(best, eval_reward)
        if callback is not None:
            callback(episode, trace.total_reward, eval_reward, loss, float(np.mean(trace.entropies)))
        if eval_reward is not None and eval_reward >= threshold:
            return record(True, episode)
    return record(False, cfg.max_episodes)
