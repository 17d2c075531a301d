"""Graph-conditioned subsampling: one representative point per partition cell.

The walk starts at the cell with the largest within-cell response variance
and repeatedly moves to the unvisited graph neighbor of the visited set
with maximal variance.  Inside a cell, members are drawn with probability
proportional to the product of Gaussian kernels centered at the responses
already drawn in neighboring cells; with no sampled neighbors the draw is
uniform.  Disconnected components are walked independently, each seeded by
its own variance argmax.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .partition import HyperRect, PartitionGraph, Partitioning


@dataclass
class SamplerConfig:
    """Kernel width (standardized-y units) and RNG seed for one draw."""

    eta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")


@dataclass
class SubsampleDraw:
    """One chosen catalog index per cell, plus the cell visit order."""

    indices: np.ndarray
    visit_order: np.ndarray
    trace: list[dict] | None = None


def _cell_variances(part: Partitioning) -> np.ndarray:
    return np.array([np.var(part.y[c.members]) if c.members.size else -np.inf for c in part.cells])


def _check_cells(part: Partitioning) -> None:
    small = [i for i, c in enumerate(part.cells) if c.members.size < 2]
    if small:
        raise ConfigError(
            f"cells {small[:5]} have fewer than 2 members; conditional sampling requires n_min >= 2"
        )


def select_start(part: Partitioning, graph: PartitionGraph | None = None, subset=None) -> int:
    """Cell with maximal within-cell variance of y (ties: lowest index)."""
    _check_cells(part)
    var = _cell_variances(part)
    ids = np.arange(part.n_cells) if subset is None else np.asarray(sorted(subset), dtype=int)
    return int(ids[np.argmax(var[ids])])


def next_cell(visited, part: Partitioning, graph: PartitionGraph) -> int:
    """Unvisited neighbor of the visited set with maximal variance.

    With an empty frontier but unvisited cells remaining (disconnected
    graph), a fresh component is seeded by the variance argmax over the
    unvisited cells.
    """
    visited = set(int(v) for v in visited)
    if not visited:
        raise ConfigError("visited set must be nonempty; use select_start first")
    var = _cell_variances(part)
    frontier = sorted(
        {int(n) for v in visited for n in graph.neighbors[v]} - visited
    )
    if frontier:
        arr = np.asarray(frontier, dtype=int)
        return int(arr[np.argmax(var[arr])])
    remaining = sorted(set(range(part.n_cells)) - visited)
    if not remaining:
        raise ConfigError("all cells already visited")
    return select_start(part, graph, subset=remaining)


def conditional_draw(
    cell: HyperRect,
    y: np.ndarray,
    neighbor_draws,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> int:
    """Draw one member index of ``cell`` given neighbor responses.

    Member j is selected with probability proportional to
    prod_k exp(-(y_j - y*_k)^2 / (2 eta^2)) over the uniform within-cell
    measure; weights are normalized in log space so distant responses never
    underflow to an all-zero weight vector.
    """
    members = cell.members
    nb = np.asarray(neighbor_draws, dtype=float)
    if nb.size == 0:
        return int(members[rng.integers(members.size)])
    ym = y[members]
    logw = -((ym[:, None] - nb[None, :]) ** 2).sum(axis=1) / (2.0 * cfg.eta**2)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    return int(members[rng.choice(members.size, p=w)])


def draw_subsample(
    part: Partitioning,
    graph: PartitionGraph,
    cfg: SamplerConfig,
    trace: bool = False,
) -> SubsampleDraw:
    """Walk the partition graph and draw one point per cell.

    Fully determined by (seed, partitioning, graph, eta): ties in variance
    break toward the lowest cell index, and the single RNG stream is
    consumed in visit order.
    """
    _check_cells(part)
    k = part.n_cells
    if graph.n_nodes != k:
        raise ConfigError("graph and partitioning disagree on the number of cells")
    rng = np.random.default_rng(cfg.seed)
    var = _cell_variances(part)
    y = part.y

    unvisited = np.ones(k, dtype=bool)
    on_frontier = np.zeros(k, dtype=bool)
    chosen = np.full(k, -1, dtype=int)
    order = np.empty(k, dtype=int)
    records: list[dict] | None = [] if trace else None

    for step in range(k):
        pool = on_frontier if on_frontier.any() else unvisited
        ids = np.flatnonzero(pool)
        cur = int(ids[np.argmax(var[ids])])
        nbrs = graph.neighbors[cur]
        sampled_nbrs = nbrs[~unvisited[nbrs]] if nbrs.size else nbrs
        nb_draws = y[chosen[sampled_nbrs]] if sampled_nbrs.size else np.empty(0)
        cell = part.cells[cur]
        if nb_draws.size == 0:
            local = int(rng.integers(cell.members.size))
            w = np.full(cell.members.size, 1.0 / cell.members.size)
            pick = int(cell.members[local])
        else:
            ym = y[cell.members]
            logw = -((ym[:, None] - nb_draws[None, :]) ** 2).sum(axis=1) / (2.0 * cfg.eta**2)
            logw -= logw.max()
            w = np.exp(logw)
            w /= w.sum()
            pick = int(cell.members[rng.choice(cell.members.size, p=w)])
        chosen[cur] = pick
        order[step] = cur
        unvisited[cur] = False
        on_frontier[cur] = False
        if nbrs.size:
            on_frontier[nbrs] |= unvisited[nbrs]
        if records is not None:
            records.append(
                {
                    "step": step,
                    "cell_id": cur,
                    "chosen_index": pick,
                    "neighbor_ids": sampled_nbrs.tolist(),
                    "weight_entropy": float(-(w * np.log(np.maximum(w, 1e-300))).sum()),
                }
            )
    return SubsampleDraw(indices=chosen, visit_order=order, trace=records)


def member_seed(base_seed: int, member_index: int) -> int:
    """Independent per-ensemble-member stream seed."""
    return int(base_seed) ^ int(member_index)


def member_config(cfg: SamplerConfig, member_index: int) -> SamplerConfig:
    return replace(cfg, seed=member_seed(cfg.seed, member_index))
