"""The BraiNCA update rule: attention over local and long-range neighbors, GRU, readout."""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .nn import GruParams, MlpParams, gru_step, init_gru, init_mlp, mlp_forward, xavier_uniform_init
from .rng import Rng
from .topology import Topology

LOCAL_ONLY = "local_only"
LOCAL_PLUS_LR_SUM = "local_plus_lr_sum"
LOCAL_LR_CONCAT = "local_lr_concat"
RESIDUAL_REFINE = "residual_refine"
PROJECTION_HEADS = "projection_heads"


@dataclass(frozen=True)
class ModelConfig:
    C: int
    S: int
    composition_mode: str
    update_profile: str
    attention_hidden: int = 64
    attention_dim: int = 1
    msg_hidden: int = 64
    msg_out: int = 9
    obs_dim: int = 0
    action_dim: int = 0
    include_self: bool = True

    def __post_init__(self):
        if self.S < self.C:
            raise ValueError("extended state must be at least as wide as the cell state")
        if self.attention_dim != 1:
            raise ValueError("only scalar attention scores (attention_dim = 1) are supported")
        if self.composition_mode not in (LOCAL_ONLY, LOCAL_PLUS_LR_SUM, LOCAL_LR_CONCAT):
            raise ValueError(f"unknown composition mode {self.composition_mode!r}")
        if self.update_profile == RESIDUAL_REFINE:
            if self.obs_dim or self.action_dim or self.S != self.C or self.msg_out != self.C:
                raise ValueError("residual_refine needs S = C = msg_out and no observation input")
            if self.composition_mode == LOCAL_LR_CONCAT:
                raise ValueError("residual_refine uses local_only or local_plus_lr_sum")
        elif self.update_profile == PROJECTION_HEADS:
            if self.S != self.C + 3:
                raise ValueError("projection_heads extended state is [c; prev_activation; position]")
            if self.composition_mode != LOCAL_LR_CONCAT:
                raise ValueError("projection_heads uses local_lr_concat")
        else:
            raise ValueError(f"unknown update profile {self.update_profile!r}")

    @property
    def z_dim(self) -> int:
        return 3 * self.S if self.composition_mode == LOCAL_LR_CONCAT else 2 * self.S

    @property
    def m_dim(self) -> int:
        return self.msg_out + self.obs_dim + self.action_dim

    @property
    def hidden_dim(self) -> int:
        return self.C if self.update_profile == RESIDUAL_REFINE else self.m_dim

    @property
    def uses_long_range(self) -> bool:
        return self.composition_mode != LOCAL_ONLY

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def morph_config(long_range: bool = False, **kw) -> ModelConfig:
    mode = LOCAL_PLUS_LR_SUM if long_range else LOCAL_ONLY
    return ModelConfig(C=9, S=9, composition_mode=mode, update_profile=RESIDUAL_REFINE,
                       msg_out=9, **kw)


def lander_config(C: int = 12, **kw) -> ModelConfig:
    S = C + 3
    kw.setdefault("msg_out", 3 * S)
    return ModelConfig(C=C, S=S, composition_mode=LOCAL_LR_CONCAT, update_profile=PROJECTION_HEADS,
                       obs_dim=8, action_dim=4, **kw)


@dataclass
class ModelParams:
    attn_local: MlpParams
    attn_long: MlpParams
    msg: MlpParams
    gru: GruParams
    refine: Optional[MlpParams] = None
    state_head: Optional[np.ndarray] = None
    act_head: Optional[MlpParams] = None

    def tensors(self) -> Dict[str, np.ndarray]:
        t = {}
        t.update(self.attn_local.tensors("attn_local"))
        t.update(self.attn_long.tensors("attn_long"))
        t.update(self.msg.tensors("msg"))
        t.update(self.gru.tensors("gru"))
        if self.refine is not None:
            t.update(self.refine.tensors("refine"))
        if self.state_head is not None:
            t["state_head.W"] = self.state_head
        if self.act_head is not None:
            t.update(self.act_head.tensors("act_head"))
        return t

    @classmethod
    def from_tensors(cls, t) -> "ModelParams":
        return cls(
            attn_local=MlpParams.from_tensors(t, "attn_local"),
            attn_long=MlpParams.from_tensors(t, "attn_long"),
            msg=MlpParams.from_tensors(t, "msg"),
            gru=GruParams.from_tensors(t, "gru"),
            refine=MlpParams.from_tensors(t, "refine") if "refine.0.W" in t else None,
            state_head=t.get("state_head.W"),
            act_head=MlpParams.from_tensors(t, "act_head") if "act_head.0.W" in t else None,
        )


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Xavier-uniform weights and zero biases, drawn in a fixed order."""
    S, ah = config.S, config.attention_hidden
    p = ModelParams(
        attn_local=init_mlp([2 * S, ah, 1], rng),
        attn_long=init_mlp([2 * S, ah, 1], rng),
        msg=init_mlp([config.z_dim, config.msg_hidden, config.msg_out], rng),
        gru=init_gru(config.m_dim, config.hidden_dim, rng),
    )
    H = config.hidden_dim
    if config.update_profile == RESIDUAL_REFINE:
        p.refine = init_mlp([H, config.C, config.C], rng)
    else:
        p.state_head = xavier_uniform_init(H, config.C, rng)
        p.act_head = init_mlp([H, H, 2], rng)
    return p


def check_params(params: ModelParams, config: ModelConfig) -> None:
    ref = init_params(config, Rng(0)).tensors()
    got = params.tensors()
    if set(ref) != set(got):
        raise ValueError(f"parameter names {sorted(set(ref) ^ set(got))} do not fit the config")
    for k in ref:
        if ad.value(got[k]).shape != ref[k].shape:
            raise ValueError(f"{k} has shape {ad.value(got[k]).shape}, expected {ref[k].shape}")


# topology compilation ----------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """Padded per-cell attention domains in active-cell order."""

    index: np.ndarray      # (N, K) source cell per slot, padding points at the cell itself
    mask: np.ndarray       # (N, K) valid slots
    gather: sp.csr_matrix  # (N*K, N) one-hot selector for valid slots
    nonempty: np.ndarray   # (N,) cell has at least one valid slot
    scatter: sp.csr_matrix = None  # transpose of ``gather``

    @property
    def width(self) -> int:
        return self.index.shape[1]


def make_domain(lists, include_self: bool, drop_empty: bool, pad_to: int = 0) -> Domain:
    """Domains ``{i} + lists[i]``; with ``drop_empty`` a cell with no list has no domain at all.

    With ``pad_to`` each domain is topped up with zero-state slots (index -1)
    until the list part holds ``pad_to`` entries.
    """
    n = len(lists)
    rows = []
    for i, lst in enumerate(lists):
        if drop_empty and not lst:
            rows.append([])
        else:
            extra = [-1] * max(0, pad_to - len(lst))
            rows.append(([i] if include_self else []) + list(lst) + extra)
    k = max(1, max(len(r) for r in rows))
    index = np.tile(np.arange(n)[:, None], (1, k))
    mask = np.zeros((n, k), dtype=bool)
    for i, r in enumerate(rows):
        index[i, :len(r)] = r
        mask[i, :len(r)] = True
    slots = np.flatnonzero(mask.ravel() & (index.ravel() >= 0))
    gather = sp.csr_matrix((np.ones(slots.size), (slots, index.ravel()[slots])), shape=(n * k, n))
    return Domain(index, mask, gather, mask.any(axis=1), gather.T.tocsr())


@dataclass(frozen=True)
class Wiring:
    """A topology compiled to active-cell order for vectorized updates."""

    topology: Topology
    cells: np.ndarray          # active canvas indices, position p -> canvas index
    local: Domain
    long_range: Domain
    positions: np.ndarray      # (N, 2) normalized (row, col)
    zones: Optional[np.ndarray]

    @property
    def n_cells(self) -> int:
        return self.cells.size

    @property
    def has_long_range(self) -> bool:
        return bool(self.long_range.nonempty.any())


def compile_topology(t: Topology, include_self: bool = True, pad_local_to: int = 0) -> Wiring:
    cells = t.grid.active_indices
    pos_of = {int(c): p for p, c in enumerate(cells)}
    local = [[pos_of[j] for j in t.local[c]] for c in cells]
    longr = [[pos_of[j] for j in t.long_range[c]] for c in cells]
    r, c = np.divmod(cells, t.grid.cols)
    positions = np.stack([r / max(t.grid.rows - 1, 1), c / max(t.grid.cols - 1, 1)], axis=1)
    zones = None if t.zones is None else np.asarray(t.zones)[cells]
    return Wiring(t, cells, make_domain(local, include_self, drop_empty=False, pad_to=pad_local_to),
                  make_domain(longr, include_self, drop_empty=True), positions, zones)


# state -------------------------------------------------------------------------

@dataclass
class CellField:
    c: np.ndarray
    h: np.ndarray
    prev_activation: np.ndarray
    positions: np.ndarray

    @property
    def n_cells(self) -> int:
        return ad.value(self.c).shape[0]


def zero_field(config: ModelConfig, wiring: Wiring, c0=None) -> CellField:
    n = wiring.n_cells
    c = np.zeros((n, config.C)) if c0 is None else c0
    return CellField(c, np.zeros((n, config.hidden_dim)), np.zeros(n), wiring.positions)


def extended_states(field: CellField, config: ModelConfig):
    """All cells' ``s = c`` (morphogenesis) or ``s = [c; prev_activation; position]`` (lander)."""
    if config.update_profile == RESIDUAL_REFINE:
        return field.c
    return ad.concat([field.c, field.prev_activation[:, None], field.positions], axis=1)


def extended_state(field: CellField, i: int, config: ModelConfig) -> np.ndarray:
    return ad.value(extended_states(field, config))[i]


# attention ---------------------------------------------------------------------

def attention_scores(p: MlpParams, s_all, dom: Domain):
    """Scores ``f([s_i; s_j])`` for every slot, shape (N, K).

    The first layer is split over the two halves of the pair so the per-cell
    projection is computed once instead of once per slot.
    """
    n, k = dom.index.shape
    S = ad.value(s_all).shape[1]
    (w1, b1), (w2, b2) = p.layers
    own = ad.linear(s_all, w1[:, :S], b1)
    other = ad.linear(s_all, w1[:, S:])
    pre = ad.reshape(own, (n, 1, -1)) + ad.gather(other, dom.gather, (n, k), dom.scatter)
    return ad.reshape(ad.linear(ad.gelu(pre), w2, b2), (n, k))


def attention_weights(p: MlpParams, s_all, dom: Domain):
    return ad.masked_softmax(attention_scores(p, s_all, dom), dom.mask)


def attend(p: MlpParams, s_all, values, dom: Domain):
    """Attention-weighted sums of ``values`` over every cell's domain, (N, D)."""
    n, k = dom.index.shape
    alpha = attention_weights(p, s_all, dom)
    return ad.weighted_sum(alpha, ad.gather(values, dom.gather, (n, k), dom.scatter))


def attention_aggregate(p: MlpParams, s_all, values, domain, i: int, include_self: bool = True,
                        empty_is_zero: bool = False) -> np.ndarray:
    """Aggregate for a single cell straight from the pairwise definition.

    ``domain`` is the cell's neighbor list (without itself). When
    ``empty_is_zero`` and the list is empty the result is the zero vector.
    """
    s_all, values = ad.value(s_all), ad.value(values)
    if empty_is_zero and len(domain) == 0:
        return np.zeros(values.shape[1])
    members = ([i] if include_self else []) + list(domain)
    if not members:
        raise ValueError("empty attention domain")
    scores = np.array([mlp_forward(p, np.concatenate([s_all[i], s_all[j]]))[0] for j in members])
    w = ad.softmax(scores)
    return sum(w[k] * values[j] for k, j in enumerate(members))


def compose_interaction(mode: str, s, n, l):
    if ad.value(s).shape != ad.value(n).shape or (l is not None and ad.value(l).shape != ad.value(s).shape):
        raise ValueError("interaction parts must share a shape")
    if mode == LOCAL_ONLY:
        return ad.concat([s, n], axis=-1)
    if l is None:
        raise ValueError(f"{mode} needs a long-range aggregate")
    if mode == LOCAL_PLUS_LR_SUM:
        return ad.concat([s, n + l], axis=-1)
    if mode == LOCAL_LR_CONCAT:
        return ad.concat([s, n, l], axis=-1)
    raise ValueError(f"unknown composition mode {mode!r}")


def message_input(msg: MlpParams, z, config: ModelConfig, o=None, u=None):
    m = mlp_forward(msg, z)
    if not config.obs_dim and not config.action_dim:
        return m
    if o is None or u is None:
        raise ValueError("this profile needs an observation and the previous action")
    o, u = np.asarray(o, dtype=np.float64), np.asarray(u, dtype=np.float64)
    if o.shape != (config.obs_dim,) or u.shape != (config.action_dim,):
        raise ValueError("observation or action vector has the wrong length")
    if ad.value(m).ndim == 1:
        return ad.concat([m, o, u])
    n = ad.value(m).shape[0]
    return ad.concat([m, np.broadcast_to(o, (n, o.size)), np.broadcast_to(u, (n, u.size))], axis=1)


def nca_step(params: ModelParams, config: ModelConfig, field: CellField, wiring: Wiring,
             o=None, u=None) -> Tuple[CellField, Optional[object]]:
    """Synchronous update of every cell; returns the new field and per-cell logits (lander) or None."""
    if field.n_cells != wiring.n_cells or ad.value(field.c).shape[1] != config.C:
        raise ValueError("cell field does not match the wiring or the config")
    s = extended_states(field, config)
    n = attend(params.attn_local, s, s, wiring.local)
    l = None
    if config.uses_long_range:
        if wiring.has_long_range:
            l = attend(params.attn_long, s, s, wiring.long_range)
        else:
            l = np.zeros(ad.value(n).shape)
    z = compose_interaction(config.composition_mode, s, n, l)
    m = message_input(params.msg, z, config, o, u)
    h = gru_step(params.gru, m, field.h)
    if config.update_profile == RESIDUAL_REFINE:
        c = h + mlp_forward(params.refine, h)
        return CellField(c, h, field.prev_activation, field.positions), None
    c = ad.linear(h, params.state_head)
    logits = mlp_forward(params.act_head, h)
    fire = ad.value(logits)
    act = (fire[:, 1] > fire[:, 0]).astype(np.float64)
    return CellField(c, h, act, field.positions), logits


# checkpoints -------------------------------------------------------------------

MAGIC = b"BNCA"
VERSION = 1


def dumps_checkpoint(tensors: Dict[str, np.ndarray], config_digest: str) -> bytes:
    """Binary blob: magic, version, sha256 digest, count, then named little-endian float64 tensors."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(bytes.fromhex(config_digest))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads_checkpoint(blob: bytes) -> Tuple[Dict[str, np.ndarray], str]:
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    digest = bytes(view[8:40]).hex()
    (count,) = struct.unpack_from("<I", view, 40)
    off, tensors = 44, {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", view, off)
        name = bytes(view[off + 4:off + 4 + ln]).decode()
        off += 4 + ln
        (rank,) = struct.unpack_from("<I", view, off)
        shape = struct.unpack_from(f"<{rank}Q", view, off + 4)
        off += 4 + 8 * rank
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(view[off:off + 8 * size], dtype="<f8").reshape(shape).astype(np.float64)
        off += 8 * size
    return tensors, digest


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    with open(path, "wb") as f:
        f.write(dumps_checkpoint(params.tensors(), config.digest()))


def load_checkpoint(path, config: Optional[ModelConfig] = None) -> ModelParams:
    with open(path, "rb") as f:
        tensors, digest = loads_checkpoint(f.read())
    if config is not None and digest != config.digest():
        raise ValueError("checkpoint was written for a different model config")
    return ModelParams.from_tensors(tensors)
