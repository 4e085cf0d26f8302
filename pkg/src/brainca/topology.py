"""Grids, neighborhoods, long-range wiring and action zones.

Cells are addressed by their row-major canvas index ``i = row * cols + col``.
Neighbor lists never contain the cell itself; self-attention is added when
the model compiles a topology.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import zeta

from .rng import Rng

NOOP, LEFT, MAIN, RIGHT = 0, 1, 2, 3
ACTIONS = ("NOOP", "LEFT", "MAIN", "RIGHT")
MOTOR_ZONES = (LEFT, MAIN, RIGHT)
UNZONED = -1

# Quadrant -> action for the plain 16x16 lander grid: (top-left, top-right,
# bottom-left, bottom-right).
QUADRANT_ACTIONS = (NOOP, LEFT, MAIN, RIGHT)
# T-shape: three blocks across the top, one below the center block.
TSHAPE_TOP_ACTIONS = (LEFT, MAIN, RIGHT)
TSHAPE_STEM_ACTION = NOOP


@dataclass(frozen=True)
class Grid:
    rows: int
    cols: int
    active: Tuple[bool, ...]

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def mask(self) -> np.ndarray:
        return np.array(self.active, dtype=bool)

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def n_active(self) -> int:
        return int(sum(self.active))

    def coords(self, i: int) -> Tuple[int, int]:
        if not 0 <= i < self.size:
            raise IndexError(f"cell {i} outside a {self.rows}x{self.cols} grid")
        return divmod(int(i), self.cols)

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise IndexError(f"({row}, {col}) outside a {self.rows}x{self.cols} grid")
        return row * self.cols + col


@dataclass(frozen=True)
class ScaleFreeConfig:
    hub_count: int = 10
    zipf_exponent: float = 2.0
    max_out_degree: int = 6
    seed: int = 0


@dataclass(frozen=True)
class Topology:
    grid: Grid
    local: Tuple[Tuple[int, ...], ...]
    long_range: Tuple[Tuple[int, ...], ...]
    zones: Optional[Tuple[int, ...]] = None

    def with_long_range(self, lists) -> "Topology":
        return replace(self, long_range=tuple(tuple(int(j) for j in l) for l in lists))

    def zone_cells(self, zone: int) -> np.ndarray:
        if self.zones is None:
            raise ValueError("topology has no zone map")
        return np.flatnonzero(np.array(self.zones) == zone)


def build_grid(rows: int, cols: int, active=None) -> Grid:
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be positive")
    if active is None:
        active = np.ones(rows * cols, dtype=bool)
    active = np.asarray(active, dtype=bool).reshape(-1)
    if active.size != rows * cols:
        raise ValueError(f"mask has {active.size} entries, expected {rows * cols}")
    if not active.any():
        raise ValueError("grid needs at least one active cell")
    return Grid(rows, cols, tuple(bool(a) for a in active))


def chebyshev(grid: Grid, i: int, j: int) -> int:
    (ri, ci), (rj, cj) = grid.coords(i), grid.coords(j)
    return max(abs(ri - rj), abs(ci - cj))


def moore_neighbors(grid: Grid, radius: int) -> Tuple[Tuple[int, ...], ...]:
    """Active cells within Chebyshev distance ``radius``; hard boundaries."""
    if radius not in (1, 2):
        raise ValueError(f"unsupported Moore radius {radius}; use 1 or 2")
    mask = grid.mask
    lists: List[Tuple[int, ...]] = []
    for i in range(grid.size):
        if not mask[i]:
            lists.append(())
            continue
        r, c = grid.coords(i)
        nb = []
        for rr in range(max(0, r - radius), min(grid.rows, r + radius + 1)):
            for cc in range(max(0, c - radius), min(grid.cols, c + radius + 1)):
                j = rr * grid.cols + cc
                if j != i and mask[j]:
                    nb.append(j)
        lists.append(tuple(nb))
    return tuple(lists)


def empty_lists(grid: Grid) -> Tuple[Tuple[int, ...], ...]:
    return tuple(() for _ in range(grid.size))


def zipf_capped_degree(u: float, s: float, cap: int) -> int:
    """Inverse-CDF draw of ``min(cap, K)`` with ``P(K = k) = k**-s / zeta(s)``."""
    if s <= 1.0:
        raise ValueError("Zipf exponent must exceed 1 for a normalizable degree law")
    norm = zeta(s)
    cdf = 0.0
    for k in range(1, cap):
        cdf += k ** -s / norm
        if u < cdf:
            return k
    return cap


def gen_scale_free_longrange(grid: Grid, cfg: ScaleFreeConfig, rng: Rng):
    """Undirected hub wiring between cells more than one step apart.

    Hubs are drawn without replacement from the active cells; in draw order
    each hub takes a capped Zipf out-degree and that many distinct targets at
    Chebyshev distance > 1 that it is not already linked to.
    """
    if cfg.max_out_degree < 1:
        raise ValueError("max_out_degree must be at least 1")
    active = grid.active_indices
    if not 0 <= cfg.hub_count <= active.size:
        raise ValueError("hub_count exceeds the number of active cells")
    lists = [[] for _ in range(grid.size)]
    hubs = active[rng.sample_without_replacement(active.size, cfg.hub_count)]
    for hub in hubs:
        degree = zipf_capped_degree(rng.uniform(), cfg.zipf_exponent, cfg.max_out_degree)
        eligible = [int(j) for j in active
                    if chebyshev(grid, hub, j) > 1 and j not in lists[hub]]
        if len(eligible) < degree:
            raise ValueError(f"hub {hub} has only {len(eligible)} eligible targets for degree {degree}")
        for j in rng.choice(eligible, degree):
            lists[hub].append(int(j))
            lists[int(j)].append(int(hub))
    return tuple(tuple(l) for l in lists)


def default_hub_count(n_active: int) -> int:
    return int(np.ceil(n_active / 25))


def gen_t_shape(block: int = 8) -> Tuple[Grid, Tuple[int, ...]]:
    """Three ``block``-square zones across the top of a 3b-wide, 2b-tall canvas, one below center."""
    if block < 1:
        raise ValueError("block must be positive")
    rows, cols = 2 * block, 3 * block
    active = np.zeros((rows, cols), dtype=bool)
    zones = np.full((rows, cols), UNZONED)
    for k, action in enumerate(TSHAPE_TOP_ACTIONS):
        active[:block, k * block:(k + 1) * block] = True
        zones[:block, k * block:(k + 1) * block] = action
    active[block:, block:2 * block] = True
    zones[block:, block:2 * block] = TSHAPE_STEM_ACTION
    return build_grid(rows, cols, active.ravel()), tuple(int(z) for z in zones.ravel())


def quadrant_zones(grid: Grid) -> Tuple[int, ...]:
    """Split a full grid into four quadrants mapped by ``QUADRANT_ACTIONS``."""
    r, c = np.divmod(np.arange(grid.size), grid.cols)
    q = 2 * (r >= grid.rows // 2) + (c >= grid.cols // 2)
    zones = np.array(QUADRANT_ACTIONS)[q]
    zones[~grid.mask] = UNZONED
    return tuple(int(z) for z in zones)


def zone_patch(grid: Grid, zones: Sequence[int], zone: int, size: int = 3) -> np.ndarray:
    """Cells of the ``size`` x ``size`` block centered on a zone's bounding box."""
    cells = np.flatnonzero(np.asarray(zones) == zone)
    if cells.size == 0:
        raise ValueError(f"zone {ACTIONS[zone]} is empty")
    r, c = np.divmod(cells, grid.cols)
    cr = (r.min() + r.max() + 1) // 2
    cc = (c.min() + c.max() + 1) // 2
    half = size // 2
    patch = [grid.index(rr, cc2)
             for rr in range(cr - half, cr - half + size)
             for cc2 in range(cc - half, cc - half + size)
             if 0 <= rr < grid.rows and 0 <= cc2 < grid.cols]
    patch = np.array(patch)
    if patch.size != size * size or not np.all(np.asarray(zones)[patch] == zone):
        raise ValueError(f"zone {ACTIONS[zone]} does not contain a centered {size}x{size} patch")
    return patch


def gen_patch_longrange(grid: Grid, zones: Sequence[int], rng: Rng, targets_per_zone: int = 6):
    """Directed cross-zone links between the central patches of the motor zones.

    Every patch cell receives ``targets_per_zone`` distinct senders from each of
    the other two motor patches. NOOP cells and non-patch cells get nothing.
    """
    patches = {z: zone_patch(grid, zones, z) for z in MOTOR_ZONES}
    if any(p.size < targets_per_zone for p in patches.values()):
        raise ValueError("patch smaller than targets_per_zone")
    lists = [[] for _ in range(grid.size)]
    for z in MOTOR_ZONES:
        for cell in patches[z]:
            for other in MOTOR_ZONES:
                if other != z:
                    lists[cell].extend(int(j) for j in rng.choice(patches[other], targets_per_zone))
    return tuple(tuple(l) for l in lists)


def validate_topology(t: Topology) -> List[str]:
    """Human-readable violations of the topology invariants; empty when valid."""
    problems = []
    grid = t.grid
    mask = grid.mask
    if not mask.any():
        problems.append("grid: no active cells")
    for kind, lists in (("local", t.local), ("long-range", t.long_range)):
        if len(lists) != grid.size:
            problems.append(f"{kind}: {len(lists)} lists for {grid.size} cells")
            continue
        for i, lst in enumerate(lists):
            if lst and not mask[i]:
                problems.append(f"cell {i}: {kind} list on inactive cell")
            seen = set()
            for j in lst:
                if not 0 <= j < grid.size:
                    problems.append(f"cell {i}: {kind} out-of-range target {j}")
                    continue
                if j == i:
                    problems.append(f"cell {i}: {kind} self loop")
                elif not mask[j]:
                    problems.append(f"cell {i}: {kind} inactive target {j}")
                if j in seen:
                    problems.append(f"cell {i}: {kind} duplicate entry {j}")
                seen.add(j)
    if t.zones is not None:
        if len(t.zones) != grid.size:
            problems.append(f"zones: {len(t.zones)} entries for {grid.size} cells")
        else:
            for i, z in enumerate(t.zones):
                if z != UNZONED and not mask[i]:
                    problems.append(f"cell {i}: zone on inactive cell")
                if z not in (UNZONED, NOOP, LEFT, MAIN, RIGHT):
                    problems.append(f"cell {i}: unknown zone {z}")
    return problems


# text format ----------------------------------------------------------------

def dumps_topology(t: Topology) -> str:
    lines = [f"grid {t.grid.rows} {t.grid.cols}"]
    for i in t.grid.active_indices:
        zone = "none" if t.zones is None or t.zones[i] == UNZONED else ACTIONS[t.zones[i]]
        n = " ".join(["n"] + [str(j) for j in t.local[i]])
        l = " ".join(["l"] + [str(j) for j in t.long_range[i]])
        lines.append(f"cell {i} : {n} ; {l} ; zone {zone}")
    return "\n".join(lines) + "\n"


def loads_topology(text: str) -> Topology:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 3 or head[0] != "grid":
        raise ValueError("topology text must start with 'grid L M'")
    rows, cols = int(head[1]), int(head[2])
    size = rows * cols
    active = np.zeros(size, dtype=bool)
    local = [() for _ in range(size)]
    longr = [() for _ in range(size)]
    zones = [UNZONED] * size
    any_zone = False
    for ln in lines[1:]:
        cell, rest = ln.split(":", 1)
        tag, idx = cell.split()
        if tag != "cell":
            raise ValueError(f"bad line: {ln!r}")
        i = int(idx)
        n_part, l_part, z_part = (p.split() for p in rest.split(";"))
        if n_part[0] != "n" or l_part[0] != "l" or z_part[0] != "zone":
            raise ValueError(f"bad line: {ln!r}")
        active[i] = True
        local[i] = tuple(int(j) for j in n_part[1:])
        longr[i] = tuple(int(j) for j in l_part[1:])
        if z_part[1] != "none":
            zones[i] = ACTIONS.index(z_part[1])
            any_zone = True
    grid = build_grid(rows, cols, active)
    return Topology(grid, tuple(local), tuple(longr), tuple(zones) if any_zone else None)
