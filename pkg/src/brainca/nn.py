"""Dense building blocks: activations, MLP and GRU cells, init, Adam, gradient checks.

All functions accept either numpy arrays or tape :class:`~brainca.autodiff.Var`
values and operate on the last axis, so a batch of cells is a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .rng import Rng

Tensors = Dict[str, np.ndarray]


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the erf form of the Gaussian CDF."""
    out = ad.gelu(x)
    return float(out) if np.ndim(out) == 0 and not isinstance(out, ad.Var) else out


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty softmax domain")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input must be finite")
    return ad.softmax(v)


@dataclass
class MlpParams:
    """Stack of ``(W, b)`` layers with GELU between layers, none after the last."""

    layers: List[Tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        for k, (w, b) in enumerate(self.layers):
            if ad.value(w).ndim != 2 or ad.value(b).shape != (ad.value(w).shape[0],):
                raise ValueError(f"layer {k}: bias length must equal weight fan_out")
            if k and ad.value(w).shape[1] != ad.value(self.layers[k - 1][0]).shape[0]:
                raise ValueError(f"layer {k}: fan_in does not chain with previous layer")

    @property
    def fan_in(self) -> int:
        return ad.value(self.layers[0][0]).shape[1]

    @property
    def fan_out(self) -> int:
        return ad.value(self.layers[-1][0]).shape[0]

    def tensors(self, prefix: str) -> Tensors:
        out = {}
        for k, (w, b) in enumerate(self.layers):
            out[f"{prefix}.{k}.W"] = w
            out[f"{prefix}.{k}.b"] = b
        return out

    @classmethod
    def from_tensors(cls, t, prefix: str) -> "MlpParams":
        layers, k = [], 0
        while f"{prefix}.{k}.W" in t:
            layers.append((t[f"{prefix}.{k}.W"], t[f"{prefix}.{k}.b"]))
            k += 1
        return cls(layers)


def mlp_forward(p: MlpParams, x):
    if ad.value(x).shape[-1] != p.fan_in:
        raise ValueError(f"mlp input has {ad.value(x).shape[-1]} features, expected {p.fan_in}")
    for k, (w, b) in enumerate(p.layers):
        x = ad.linear(x, w, b)
        if k < len(p.layers) - 1:
            x = ad.gelu(x)
    return x


_GRU_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


@dataclass
class GruParams:
    """Update gate (z), reset gate (r) and candidate (h) weights of a GRU cell."""

    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        hd, idim = self.hidden_dim, self.input_dim
        for gate in "zrh":
            ok = (ad.value(getattr(self, "W_" + gate)).shape == (hd, idim)
                  and ad.value(getattr(self, "U_" + gate)).shape == (hd, hd)
                  and ad.value(getattr(self, "b_" + gate)).shape == (hd,))
            if not ok:
                raise ValueError(f"GRU gate {gate} has inconsistent shapes")

    @property
    def input_dim(self) -> int:
        return ad.value(self.W_z).shape[1]

    @property
    def hidden_dim(self) -> int:
        return ad.value(self.W_z).shape[0]

    def tensors(self, prefix: str) -> Tensors:
        return {f"{prefix}.{n}": getattr(self, n) for n in _GRU_NAMES}

    @classmethod
    def from_tensors(cls, t, prefix: str) -> "GruParams":
        return cls(**{n: t[f"{prefix}.{n}"] for n in _GRU_NAMES})


def gru_step(p: GruParams, m, h_prev):
    """One GRU update ``h' = (1 - z) * h + z * h_cand``."""
    if ad.value(m).shape[-1] != p.input_dim or ad.value(h_prev).shape[-1] != p.hidden_dim:
        raise ValueError("GRU input or hidden size mismatch")
    z = ad.sigmoid(ad.linear(m, p.W_z, p.b_z) + ad.linear(h_prev, p.U_z))
    r = ad.sigmoid(ad.linear(m, p.W_r, p.b_r) + ad.linear(h_prev, p.U_r))
    cand = ad.tanh(ad.linear(m, p.W_h, p.b_h) + ad.linear(r * h_prev, p.U_h))
    return (1.0 - z) * h_prev + z * cand


def xavier_uniform_init(fan_in: int, fan_out: int, rng: Rng) -> np.ndarray:
    """(fan_out, fan_in) matrix with entries uniform on [-a, a], a = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be positive")
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform((fan_out, fan_in), -a, a)


def init_mlp(dims: List[int], rng: Rng) -> MlpParams:
    return MlpParams([(xavier_uniform_init(i, o, rng), np.zeros(o))
                      for i, o in zip(dims[:-1], dims[1:])])


def init_gru(input_dim: int, hidden_dim: int, rng: Rng) -> GruParams:
    t = {}
    for gate in "zrh":
        t["W_" + gate] = xavier_uniform_init(input_dim, hidden_dim, rng)
        t["U_" + gate] = xavier_uniform_init(hidden_dim, hidden_dim, rng)
        t["b_" + gate] = np.zeros(hidden_dim)
    return GruParams(**t)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    grad_clip_norm: float = 0.0
    step_count: int = 0
    first_moment: Tensors = field(default_factory=dict)
    second_moment: Tensors = field(default_factory=dict)


def global_norm(tensors: Tensors) -> float:
    return float(np.sqrt(sum(float(np.sum(t * t)) for t in tensors.values())))


def adam_step(state: AdamState, params: Tensors, grads: Tensors) -> Tuple[Tensors, AdamState]:
    """Clip, decoupled weight decay, bias-corrected Adam. Inputs are not mutated."""
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameter names")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    if state.grad_clip_norm > 0:
        norm = global_norm(grads)
        if norm > state.grad_clip_norm:
            scale = state.grad_clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
    t = state.step_count + 1
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.first_moment.get(name, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.second_moment.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        if state.weight_decay > 0:
            p = p - lr * state.weight_decay * p
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        m_new[name], v_new[name] = m, v
    new_state = AdamState(lr, b1, b2, state.epsilon, state.weight_decay,
                          state.grad_clip_norm, t, m_new, v_new)
    return new_params, new_state


def finite_diff_grad(loss_fn: Callable[[Tensors], float], params: Tensors,
                     eps: float = 1e-5,
                     coords: Optional[Dict[str, Sequence[int]]] = None) -> Tensors:
    """Central-difference gradient of ``loss_fn`` at ``params``, one coordinate at a time.

    ``coords`` restricts probing to the given flat indices per tensor; tensors
    missing from it are skipped and unprobed entries are left at zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p, dtype=np.float64)
        flat = g.reshape(-1)
        if coords is None:
            todo = range(p.size)
        else:
            todo = coords.get(name, ())
        for k in todo:
            probe = dict(params)
            hi = p.astype(np.float64).copy()
            lo = hi.copy()
            hi.reshape(-1)[k] += eps
            lo.reshape(-1)[k] -= eps
            probe[name] = hi
            f_hi = float(loss_fn(probe))
            probe[name] = lo
            f_lo = float(loss_fn(probe))
            if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
                raise ValueError(f"non-finite loss while probing {name}[{k}]")
            flat[k] = (f_hi - f_lo) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(a: Tensors, b: Tensors, floor: float = 1e-6) -> float:
    """Largest ``|a - b| / max(|a|, |b|, floor)`` over all entries of both collections."""
    worst = 0.0
    for k in a:
        x, y = np.asarray(a[k]), np.asarray(b[k])
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)) if x.size else 0.0)
    return worst


def sample_coords(params: Tensors, per_tensor: int, rng) -> Dict[str, np.ndarray]:
    """Up to ``per_tensor`` distinct flat indices per tensor, for cheap gradient checks."""
    return {k: np.sort(rng.sample_without_replacement(v.size, min(per_tensor, v.size)))
            for k, v in params.items()}


def restrict(params: Tensors, coords: Dict[str, Sequence[int]]) -> Tensors:
    """Flat entries of each tensor at ``coords``."""
    return {k: np.asarray(params[k]).reshape(-1)[np.asarray(idx, dtype=int)] for k, idx in coords.items()}
