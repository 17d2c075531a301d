"""Balanced hyperrectangle partitioning of the unit cube and its adjacency graph.

The pipeline has three stages.  A coarse grid is initialized with
quantile-based interval boundaries along each dimension.  Cells below the
minimum cardinality are then merged with directional neighbor layers,
always choosing the dimension/direction absorbing the fewest points and
keeping every cell an axis-aligned box.  Cells above the maximum
cardinality are finally split at the member median along their longest
side.  Requiring ``n_max >= 2 * n_min`` guarantees every split admits two
children at or above the minimum.

Cell membership uses half-open boxes [lower, upper), closed at the domain
boundary 1, so every point belongs to exactly one cell.  Two cells are
graph neighbors when their closures share a boundary face of positive
(d-1)-dimensional extent; corner-only contact does not count.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Catalog
from .errors import ConfigError, DataError

_LOWER, _UPPER = 0, 1


@dataclass
class HyperRect:
    """Axis-aligned box [lower, upper) with the indices of the points it holds."""

    lower: np.ndarray
    upper: np.ndarray
    members: np.ndarray
    oversize: bool = False

    @property
    def side_lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Half-open membership test, upper face closed where upper == 1."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        hi_ok = np.where(self.upper == 1.0, x <= self.upper, x < self.upper)
        return ((x >= self.lower) & hi_ok).all(axis=1)


@dataclass
class Partitioning:
    """A set of mutually exclusive boxes covering [0,1]^d, with the data they index."""

    cells: list[HyperRect]
    n_min: int
    n_max: int
    X: np.ndarray
    y: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def counts(self) -> np.ndarray:
        return np.array([c.members.size for c in self.cells], dtype=int)

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lowers = np.array([c.lower for c in self.cells])
        uppers = np.array([c.upper for c in self.cells])
        return lowers, uppers

    def validate(self, cardinality: bool = True) -> None:
        """Check exclusivity, exhaustiveness, box validity, and cardinality bounds."""
        all_members = np.concatenate([c.members for c in self.cells]) if self.cells else np.array([], dtype=int)
        if not np.array_equal(np.sort(all_members), np.arange(self.X.shape[0])):
            raise AssertionError("cells do not partition the data indices exactly")
        lowers, uppers = self.bounds_arrays()
        if not (lowers < uppers).all():
            raise AssertionError("degenerate box (lower >= upper)")
        vol = float(np.prod(uppers - lowers, axis=1).sum())
        if abs(vol - 1.0) > 1e-9:
            raise AssertionError(f"cell volumes sum to {vol}, expected 1")
        for k in range(len(self.cells)):
            ilo = np.maximum(lowers[k], lowers[k + 1 :])
            ihi = np.minimum(uppers[k], uppers[k + 1 :])
            if ((ilo < ihi).all(axis=1)).any():
                raise AssertionError("cell interiors overlap")
        for k, c in enumerate(self.cells):
            if c.members.size and not c.contains(self.X[c.members]).all():
                raise AssertionError(f"cell {k} holds points outside its box")
            if cardinality and not c.oversize and not (self.n_min <= c.members.size <= self.n_max):
                raise AssertionError(
                    f"cell {k} cardinality {c.members.size} outside [{self.n_min}, {self.n_max}]"
                )


@dataclass
class PartitionGraph:
    """Undirected adjacency over cells; nodes are positions in ``cells``."""

    n_nodes: int
    edges: np.ndarray
    neighbors: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.neighbors:
            adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
            for i, j in self.edges:
                adj[int(i)].append(int(j))
                adj[int(j)].append(int(i))
            self.neighbors = [np.array(sorted(a), dtype=int) for a in adj]


def default_grid(n: int, d: int, n_min: int, n_max: int) -> tuple[int, ...]:
    """Per-dimension interval count targeting ~2n/(n_min+n_max) initial cells."""
    target = max(1.0, 2.0 * n / (n_min + n_max))
    m = int(np.ceil(target ** (1.0 / d)))
    return (max(1, m),) * d


def _assign_cells(X: np.ndarray, boundaries: list[np.ndarray]) -> np.ndarray:
    """Flat cell index per row under half-open intervals, closed at 1."""
    d = X.shape[1]
    sizes = [b.size + 1 for b in boundaries]
    flat = np.zeros(X.shape[0], dtype=int)
    for p in range(d):
        j = np.searchsorted(boundaries[p], X[:, p], side="right")
        j = np.minimum(j, sizes[p] - 1)  # points at the domain boundary 1
        flat = flat * sizes[p] + j
    return flat


def _grid_cells(
    X: np.ndarray, boundaries: list[np.ndarray]
) -> list[HyperRect]:
    d = X.shape[1]
    sizes = [b.size + 1 for b in boundaries]
    edges = [np.concatenate([[0.0], b, [1.0]]) for b in boundaries]
    flat = _assign_cells(X, boundaries)
    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    cells: list[HyperRect] = []
    total = int(np.prod(sizes))
    starts = np.searchsorted(sorted_flat, np.arange(total), side="left")
    stops = np.searchsorted(sorted_flat, np.arange(total), side="right")
    for cid in range(total):
        idx = np.unravel_index(cid, sizes)
        lower = np.array([edges[p][idx[p]] for p in range(d)])
        upper = np.array([edges[p][idx[p] + 1] for p in range(d)])
        members = np.sort(order[starts[cid] : stops[cid]])
        cells.append(HyperRect(lower=lower, upper=upper, members=members))
    return cells


def initialize_grid(cat: Catalog, m_per_dim) -> Partitioning:
    """Quantile-based grid of prod(m_p) cells (some possibly empty).

    Interval boundaries sit at the empirical j/m_p quantiles of each input
    dimension.  Duplicate boundaries from heavily tied data are dropped,
    reducing that dimension's interval count with a warning.
    """
    m_per_dim = tuple(int(m) for m in np.atleast_1d(m_per_dim))
    if len(m_per_dim) == 1 and cat.d > 1:
        m_per_dim = m_per_dim * cat.d
    if len(m_per_dim) != cat.d:
        raise ConfigError(f"m_per_dim has {len(m_per_dim)} entries for d={cat.d}")
    if any(m < 1 for m in m_per_dim):
        raise ConfigError("every m_per_dim entry must be >= 1")

    boundaries: list[np.ndarray] = []
    for p, m in enumerate(m_per_dim):
        if m == 1:
            boundaries.append(np.array([]))
            continue
        qs = np.quantile(cat.X[:, p], np.arange(1, m) / m)
        b = np.unique(qs)
        b = b[(b > 0.0) & (b < 1.0)]
        if b.size < m - 1:
            warnings.warn(
                f"dimension {p}: tied quantiles reduced interval count from {m} to {b.size + 1}",
                stacklevel=2,
            )
        boundaries.append(b)
    cells = _grid_cells(np.asarray(cat.X, dtype=float), boundaries)
    return Partitioning(cells=cells, n_min=0, n_max=0, X=cat.X, y=cat.y)


def equal_volume_partition(cat: Catalog, m_per_dim) -> Partitioning:
    """Uniform grid with equally spaced boundaries; empty cells are retained."""
    m_per_dim = tuple(int(m) for m in np.atleast_1d(m_per_dim))
    if len(m_per_dim) == 1 and cat.d > 1:
        m_per_dim = m_per_dim * cat.d
    if len(m_per_dim) != cat.d:
        raise ConfigError(f"m_per_dim has {len(m_per_dim)} entries for d={cat.d}")
    if any(m < 1 for m in m_per_dim):
        raise ConfigError("every m_per_dim entry must be >= 1")
    boundaries = [np.linspace(0.0, 1.0, m + 1)[1:-1] for m in m_per_dim]
    cells = _grid_cells(np.asarray(cat.X, dtype=float), boundaries)
    return Partitioning(cells=cells, n_min=0, n_max=0, X=cat.X, y=cat.y)


class _Boxes:
    """Mutable working set of boxes with stable creation ids (rows never reused)."""

    def __init__(self, part: Partitioning):
        k = len(part.cells)
        d = part.d
        cap = max(4, 2 * k + 8)
        self.d = d
        self.size = k
        self.lowers = np.empty((cap, d))
        self.uppers = np.empty((cap, d))
        self.counts = np.zeros(cap, dtype=int)
        self.alive = np.zeros(cap, dtype=bool)
        self.oversize = np.zeros(cap, dtype=bool)
        self.members: list[np.ndarray] = [np.empty(0, dtype=int)] * cap
        for i, c in enumerate(part.cells):
            self.lowers[i] = c.lower
            self.uppers[i] = c.upper
            self.counts[i] = c.members.size
            self.alive[i] = True
            self.oversize[i] = c.oversize
            self.members[i] = c.members

    def _grow(self) -> None:
        cap = self.lowers.shape[0]
        new = 2 * cap
        self.lowers = np.vstack([self.lowers, np.empty((cap, self.d))])
        self.uppers = np.vstack([self.uppers, np.empty((cap, self.d))])
        self.counts = np.concatenate([self.counts, np.zeros(cap, dtype=int)])
        self.alive = np.concatenate([self.alive, np.zeros(cap, dtype=bool)])
        self.oversize = np.concatenate([self.oversize, np.zeros(cap, dtype=bool)])
        self.members.extend([np.empty(0, dtype=int)] * cap)

    def add(self, lower: np.ndarray, upper: np.ndarray, members: np.ndarray) -> int:
        if self.size == self.lowers.shape[0]:
            self._grow()
        i = self.size
        self.lowers[i] = lower
        self.uppers[i] = upper
        self.counts[i] = members.size
        self.alive[i] = True
        self.members[i] = members
        self.size += 1
        return i

    def live_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive[: self.size])

    def face_neighbor_ids(self, i: int, p: int, omega: int) -> np.ndarray:
        """Cells sharing positive (d-1)-measure with face (p, omega) of cell i."""
        n = self.size
        if omega == _UPPER:
            plane = self.uppers[i, p]
            touch = self.lowers[:n, p] == plane
        else:
            plane = self.lowers[i, p]
            touch = self.uppers[:n, p] == plane
        cand = self.alive[:n] & touch
        cand[i] = False
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return idx
        lo = np.maximum(self.lowers[idx], self.lowers[i])
        hi = np.minimum(self.uppers[idx], self.uppers[i])
        other = np.arange(self.d) != p
        ok = (lo[:, other] < hi[:, other]).all(axis=1)
        return idx[ok]

    def closure(self, seed_ids: np.ndarray, iterate: bool):
        """Bounding-box closure of a seed set.

        Returns (lo, hi, contained_ids, feasible).  With ``iterate`` False a
        single pass is made and any partially overlapping cell marks the
        closure infeasible; with ``iterate`` True the box is expanded over
        partial overlaps until it absorbs whole cells only.
        """
        lo = self.lowers[seed_ids].min(axis=0)
        hi = self.uppers[seed_ids].max(axis=0)
        live = self.live_ids()
        L = self.lowers[live]
        U = self.uppers[live]
        while True:
            inter = (np.maximum(L, lo) < np.minimum(U, hi)).all(axis=1)
            contained = inter & (L >= lo).all(axis=1) & (U <= hi).all(axis=1)
            partial = inter & ~contained
            if not partial.any():
                return lo, hi, live[contained], True
            if not iterate:
                return lo, hi, live[contained], False
            lo = np.minimum(lo, L[partial].min(axis=0))
            hi = np.maximum(hi, U[partial].max(axis=0))

    def merge(self, absorbed_ids: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> int:
        members = np.sort(np.concatenate([self.members[j] for j in absorbed_ids]))
        self.alive[absorbed_ids] = False
        return self.add(lo, hi, members)

    def to_partitioning(self, part: Partitioning) -> Partitioning:
        cells = [
            HyperRect(
                lower=self.lowers[i].copy(),
                upper=self.uppers[i].copy(),
                members=self.members[i],
                oversize=bool(self.oversize[i]),
            )
            for i in self.live_ids()
        ]
        return Partitioning(cells=cells, n_min=part.n_min, n_max=part.n_max, X=part.X, y=part.y)


def _best_direction(bs: _Boxes, target: int):
    """Feasible (cost, aspect-ratio)-minimal one-layer merge for ``target``."""
    best_key = None
    best = None
    for p in range(bs.d):
        for omega in (_LOWER, _UPPER):
            layer = bs.face_neighbor_ids(target, p, omega)
            if layer.size == 0:
                continue
            lo, hi, contained, ok = bs.closure(np.append(layer, target), iterate=False)
            if not ok:
                continue
            cost = int(bs.counts[contained].sum() - bs.counts[target])
            span = hi - lo
            ratio = float(span.max() / span.min())
            key = (cost, ratio)
            if best_key is None or key < best_key:
                best_key = key
                best = (lo, hi, contained)
    return best


def _merge_target(bs: _Boxes, target: int, n_min: int) -> bool:
    """Absorb neighbor layers into ``target`` until it reaches n_min.

    Returns True if at least one merge was applied (the target may still be
    sub-minimal if it ran out of feasible directions mid-way).
    """
    applied = False
    cur = target
    while bs.counts[cur] < n_min:
        best = _best_direction(bs, cur)
        if best is None:
            return applied
        lo, hi, contained = best
        cur = bs.merge(contained, lo, hi)
        applied = True
    return applied


def _fallback_merge(bs: _Boxes, target: int) -> None:
    """Merge with the face neighbor whose iterated box closure costs least.

    Used only when no one-layer direction is feasible for any sub-minimal
    cell; the closure may span several neighbor layers.
    """
    best_key = None
    best = None
    for p in range(bs.d):
        for omega in (_LOWER, _UPPER):
            for nb in bs.face_neighbor_ids(target, p, omega):
                lo, hi, contained, ok = bs.closure(np.array([target, nb]), iterate=True)
                if not ok:  # pragma: no cover - iterated closure always feasible
                    continue
                cost = int(bs.counts[contained].sum() - bs.counts[target])
                span = hi - lo
                ratio = float(span.max() / span.min())
                key = (cost, ratio, int(nb))
                if best_key is None or key < best_key:
                    best_key = key
                    best = (lo, hi, contained)
    if best is None:  # pragma: no cover - a multi-cell tiling always has face neighbors
        raise DataError("merge fallback found no neighbor; partition state is inconsistent")
    lo, hi, contained = best
    bs.merge(contained, lo, hi)


def merge_pass(part: Partitioning) -> Partitioning:
    """Merge cells below n_min into directional neighbors until none remain.

    Targets are processed smallest-first (ties by lowest cell id); each
    merge direction minimizes the absorbed point count, with ties broken by
    the most uniform resulting sides.  Terminates because every merge
    strictly reduces the number of cells.
    """
    if part.n_min < 0:
        raise ConfigError("n_min must be nonnegative")
    bs = _Boxes(part)
    while True:
        live = bs.live_ids()
        if live.size <= 1:
            break
        sub = live[bs.counts[live] < part.n_min]
        if sub.size == 0:
            break
        order = sub[np.lexsort((sub, bs.counts[sub]))]
        progressed = False
        for t in order:
            if not bs.alive[t]:
                continue
            if _merge_target(bs, int(t), part.n_min):
                progressed = True
                break
        if not progressed:
            _fallback_merge(bs, int(order[0]))
    return bs.to_partitioning(part)


def _find_cut(xs: np.ndarray, n_min: int, lo: float, up: float) -> float | None:
    """Median-like break point giving both children >= n_min members, or None."""
    vals, cnts = np.unique(xs, return_counts=True)
    below = np.concatenate([[0], np.cumsum(cnts)[:-1]])
    n = xs.size
    valid = (below >= n_min) & (n - below >= n_min) & (vals > lo) & (vals < up)
    if not valid.any():
        return None
    idx = np.flatnonzero(valid)
    dev = np.abs(below[idx] - n / 2.0)
    return float(vals[idx[np.argmin(dev)]])


def split_pass(part: Partitioning) -> Partitioning:
    """Split cells above n_max at the member median along the longest side.

    If no break point along a dimension leaves both children at or above
    n_min (heavy ties), the next-longest dimension is tried; a cell with no
    valid cut in any dimension is flagged oversize and retained.
    """
    bs = _Boxes(part)
    X = part.X
    while True:
        live = bs.live_ids()
        cand = live[(bs.counts[live] > part.n_max) & ~bs.oversize[live]]
        if cand.size == 0:
            break
        t = int(cand[np.lexsort((cand, -bs.counts[cand]))][0])
        mem = bs.members[t]
        lo = bs.lowers[t].copy()
        up = bs.uppers[t].copy()
        span = up - lo
        dims = np.lexsort((np.arange(bs.d), -span))
        done = False
        for p in dims:
            cut = _find_cut(X[mem, p], part.n_min, lo[p], up[p])
            if cut is None:
                continue
            left = mem[X[mem, p] < cut]
            right = mem[X[mem, p] >= cut]
            up_left = up.copy()
            up_left[p] = cut
            lo_right = lo.copy()
            lo_right[p] = cut
            bs.alive[t] = False
            bs.add(lo, up_left, left)
            bs.add(lo_right, up, right)
            done = True
            break
        if not done:
            bs.oversize[t] = True
    return bs.to_partitioning(part)


def build_graph(part: Partitioning) -> PartitionGraph:
    """Edges between cells whose closures share a boundary of positive
    (d-1)-dimensional extent.

    The closures must touch in every dimension with positive overlap in at
    least d-1 of them: cells meeting only at a corner (or, for d >= 3, only
    along a lower-dimensional edge) are not neighbors, while touching 1-D
    intervals are.
    """
    k = part.n_cells
    d = part.d
    lowers, uppers = part.bounds_arrays()
    pairs: list[np.ndarray] = []
    chunk = max(1, min(k, int(4e6 // max(1, k))))
    for i0 in range(0, k, chunk):
        i1 = min(k, i0 + chunk)
        touch = np.ones((i1 - i0, k), dtype=bool)
        n_positive = np.zeros((i1 - i0, k), dtype=np.int16)
        for p in range(d):
            ilo = np.maximum(lowers[i0:i1, p][:, None], lowers[:, p][None, :])
            ihi = np.minimum(uppers[i0:i1, p][:, None], uppers[:, p][None, :])
            touch &= ilo <= ihi
            n_positive += ilo < ihi
        adj = touch & (n_positive >= d - 1)
        ii, jj = np.nonzero(adj)
        ii = ii + i0
        keep = jj > ii
        pairs.append(np.column_stack([ii[keep], jj[keep]]))
    edges = np.vstack(pairs) if pairs else np.empty((0, 2), dtype=int)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))] if edges.size else edges.astype(int)
    return PartitionGraph(n_nodes=k, edges=edges.astype(int))


def partition_pipeline(
    cat: Catalog,
    n_min: int,
    n_max: int,
    m_per_dim=None,
) -> tuple[Partitioning, PartitionGraph]:
    """Initialize, merge, split, and build the adjacency graph.

    ``m_per_dim`` defaults to a per-dimension interval count targeting an
    initial cell count near 2n/(n_min + n_max).
    """
    if n_min < 1:
        raise ConfigError(f"n_min must be >= 1, got {n_min}")
    if n_max < 2 * n_min:
        raise ConfigError(f"n_max must be >= 2 * n_min, got ({n_min}, {n_max})")
    if cat.n < n_min:
        raise DataError(f"dataset of {cat.n} points cannot meet minimum cardinality {n_min}")
    if m_per_dim is None:
        m_per_dim = default_grid(cat.n, cat.d, n_min, n_max)
    part = initialize_grid(cat, m_per_dim)
    part.n_min = n_min
    part.n_max = n_max
    part = merge_pass(part)
    part = split_pass(part)
    graph = build_graph(part)
    return part, graph


def _hist(values: np.ndarray, max_bins: int) -> tuple[np.ndarray, np.ndarray]:
    if values.size == 0:
        return np.array([0]), np.array([0.0, 0.0])
    span = float(values.max() - values.min())
    if span <= 1e-12 * max(1.0, abs(float(values.max()))):
        return np.array([values.size]), np.array([float(values.min())] * 2)
    return np.histogram(values, bins=max_bins)


def partition_summary(part: Partitioning) -> dict:
    """Cell counts, cardinality and volume statistics for reporting."""
    counts = part.counts()
    lowers, uppers = part.bounds_arrays()
    volumes = np.prod(uppers - lowers, axis=1)
    nonempty = counts > 0
    card_hist, card_edges = _hist(counts, min(20, max(1, part.n_cells)))
    vol_hist, vol_edges = _hist(volumes, min(20, max(1, part.n_cells)))
    return {
        "n_cells": part.n_cells,
        "n_empty": int((~nonempty).sum()),
        "n_nonempty": int(nonempty.sum()),
        "n_oversize_flagged": int(sum(c.oversize for c in part.cells)),
        "cardinality": {
            "min": int(counts.min()) if counts.size else 0,
            "mean": float(counts.mean()) if counts.size else 0.0,
            "max": int(counts.max()) if counts.size else 0,
        },
        "cardinality_hist": {"counts": card_hist.tolist(), "edges": card_edges.tolist()},
        "volume": {
            "min": float(volumes.min()) if volumes.size else 0.0,
            "mean": float(volumes.mean()) if volumes.size else 0.0,
            "max": float(volumes.max()) if volumes.size else 0.0,
        },
        "volume_hist": {"counts": vol_hist.tolist(), "edges": vol_edges.tolist()},
    }


def dump_partition(
    part: Partitioning,
    graph: PartitionGraph | None,
    cells_path: str | Path,
    members_path: str | Path,
) -> None:
    """Write cells + edges as JSON and the member index lists as CSV."""
    payload = {
        "n_min": part.n_min,
        "n_max": part.n_max,
        "cells": [
            {
                "id": i,
                "lower": c.lower.tolist(),
                "upper": c.upper.tolist(),
                "member_count": int(c.members.size),
                "oversize_flag": bool(c.oversize),
            }
            for i, c in enumerate(part.cells)
        ],
        "edges": graph.edges.tolist() if graph is not None else [],
    }
    Path(cells_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with Path(members_path).open("w", encoding="utf-8") as fh:
        fh.write("cell,index\n")
        for i, c in enumerate(part.cells):
            for m in c.members:
                fh.write(f"{i},{int(m)}\n")


def load_partition(
    cells_path: str | Path, members_path: str | Path, cat: Catalog
) -> tuple[Partitioning, PartitionGraph]:
    payload = json.loads(Path(cells_path).read_text(encoding="utf-8"))
    n_cells = len(payload["cells"])
    members: list[list[int]] = [[] for _ in range(n_cells)]
    with Path(members_path).open(encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            cell_s, idx_s = line.rstrip("\n").split(",")
            members[int(cell_s)].append(int(idx_s))
    cells = [
        HyperRect(
            lower=np.asarray(c["lower"], dtype=float),
            upper=np.asarray(c["upper"], dtype=float),
            members=np.asarray(sorted(members[c["id"]]), dtype=int),
            oversize=bool(c["oversize_flag"]),
        )
        for c in payload["cells"]
    ]
    part = Partitioning(
        cells=cells, n_min=int(payload["n_min"]), n_max=int(payload["n_max"]), X=cat.X, y=cat.y
    )
    edges = np.asarray(payload["edges"], dtype=int).reshape(-1, 2)
    graph = PartitionGraph(n_nodes=n_cells, edges=edges)
    return part, graph
