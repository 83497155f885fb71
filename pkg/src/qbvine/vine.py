"""Simplified regular vines over KDE pair copulas.

A structure is stored in its canonical "sampling order" form: an ordering
``order = (v_1, ..., v_d)`` of the variables and, for each ``v_i``, the
partners ``(w_1, ..., w_{i-1})`` such that the vine holds exactly the edges::

    (v_i, w_t ; w_1, ..., w_{t-1})   for t = 1, ..., i - 1

Edge ``t`` of variable ``v_i`` sits in tree ``t``. Every regular vine admits
such an ordering, and it is what inverse-Rosenblatt sampling walks.

Conditional pseudo-observations are keyed by ``(variable, conditioning set)``.
For an edge with conditioned pair ``j < k`` the pair copula takes
``(u_{j|D}, u_{k|D})`` as ``(u, v)``; ``h1`` yields ``u_{j|D+k}`` and ``h2``
yields ``u_{k|D+j}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats

from .numerics import open_uniform, seed_sequence
from .paircopula import (DEFAULT_BANDWIDTH_GRID, DEFAULT_BANDWIDTH_SCALE, H_CLAMP, IndependenceCopula, argmin_smallest,
                         copula_from_dict, fit_pair, kernel_variance, kfold_indices)
from .parallel import parallel_map
from .scoring import energy_score_total

Key = tuple  # (variable, frozenset conditioning)


def kendall_tau(u, v) -> float:
    """Kendall's tau-b (O(n log n), via scipy)."""
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if u.size != v.size:
        raise ValueError("inputs must have equal length")
    if u.size < 2:
        raise ValueError("kendall_tau needs at least two observations")
    tau = stats.kendalltau(u, v).statistic
    return 0.0 if not np.isfinite(tau) else float(tau)


@dataclass(frozen=True)
class VineEdge:
    conditioned: tuple[int, int]
    conditioning: tuple[int, ...]
    tree_level: int
    copula: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        j, k = self.conditioned
        if j == k or j in self.conditioning or k in self.conditioning:
            raise ValueError("conditioned indices must be distinct and outside the conditioning set")
        if len(self.conditioning) != self.tree_level - 1:
            raise ValueError("conditioning set size must equal tree_level - 1")
        object.__setattr__(self, "conditioned", (min(j, k), max(j, k)))
        object.__setattr__(self, "conditioning", tuple(sorted(self.conditioning)))

    @property
    def key(self) -> tuple:
        return (self.conditioned, self.conditioning)

    @property
    def variables(self) -> frozenset:
        return frozenset(self.conditioned) | frozenset(self.conditioning)

    def label(self) -> str:
        j, k = self.conditioned
        cond = ",".join(str(c) for c in self.conditioning)
        return f"{j},{k}" + (f"|{cond}" if cond else "")


@dataclass(frozen=True)
class VineStructure:
    order: tuple[int, ...]
    partners: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        d = len(self.order)
        if sorted(self.order) != list(range(d)):
            raise ValueError("order must be a permutation of 0..d-1")
        if len(self.partners) != d:
            raise ValueError("need one partner list per variable")
        for i, (x, ws) in enumerate(zip(self.order, self.partners)):
            if len(ws) != i or set(ws) != set(self.order[:i]):
                raise ValueError(f"partners of variable {x} must be a permutation of its predecessors")

    @property
    def dimension(self) -> int:
        return len(self.order)

    def edges(self) -> list[VineEdge]:
        """All d(d-1)/2 edges, sorted by tree level then label."""
        out = []
        for x, ws in zip(self.order, self.partners):
            for t in range(1, len(ws) + 1):
                out.append(VineEdge((x, ws[t - 1]), tuple(ws[:t - 1]), t))
        return sorted(out, key=lambda e: (e.tree_level, e.conditioned, e.conditioning))

    @property
    def trees(self) -> list[list[VineEdge]]:
        d = self.dimension
        levels = [[] for _ in range(max(d - 1, 0))]
        for e in self.edges():
            levels[e.tree_level - 1].append(e)
        return levels

    def to_array(self) -> np.ndarray:
        """(d, d) integer array, 1-based variables, 0 = empty.

        Row 0 is the sampling order; row ``t`` (t >= 1) holds, in column ``i``,
        the tree-``t`` partner of ``order[i]`` (present for ``i >= t``).
        """
        d = self.dimension
        a = np.zeros((d, d), dtype=int)
        a[0] = np.asarray(self.order) + 1
        for i, ws in enumerate(self.partners):
            for t, w in enumerate(ws, start=1):
                a[t, i] = w + 1
        return a

    @classmethod
    def from_array(cls, a) -> "VineStructure":
        a = np.asarray(a, dtype=int)
        d = a.shape[0]
        order = tuple(int(x) - 1 for x in a[0])
        partners = tuple(tuple(int(a[t, i]) - 1 for t in range(1, i + 1)) for i in range(d))
        return cls(order, partners)

    def to_text(self) -> str:
        return "\n".join(" ".join(str(x) for x in row) for row in self.to_array()) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "VineStructure":
        rows = [list(map(int, line.split())) for line in text.strip().splitlines() if line.strip()]
        return cls.from_array(np.array(rows))


def structure_from_edges(d: int, edges) -> VineStructure:
    """Canonical ordering of a regular vine given as (conditioned, conditioning) pairs.

    Variables are peeled off from the top tree: a conditioned variable of the
    last edge is removable when it appears exactly once per tree with nested
    conditioning sets and nowhere else. Raises ``ValueError`` for edge sets
    that are not a regular vine.
    """
    remaining = {(frozenset(c), frozenset(D)) for c, D in edges}
    if len(remaining) != d * (d - 1) // 2:
        raise ValueError("a regular vine on d variables has d(d-1)/2 edges")
    alive = set(range(d))
    rev_order, rev_partners = [], []
    while len(alive) > 1:
        top = len(alive) - 1
        tops = [e for e in remaining if len(e[1]) == top - 1]
        if len(tops) != 1:
            raise ValueError("not a regular vine: top tree must have one edge")
        for x in sorted(tops[0][0]):
            mine = sorted((e for e in remaining if x in e[0]), key=lambda e: len(e[1]))
            if len(mine) != top or any(x in e[1] for e in remaining):
                continue
            ws = []
            for t, (c, D) in enumerate(mine):
                if len(D) != t or D != frozenset(ws):
                    break
                ws.append(next(iter(c - {x})))
            else:
                break
        else:
            raise ValueError("not a regular vine: no removable variable")
        rev_order.append(x)
        rev_partners.append(tuple(ws))
        remaining -= set(mine)
        alive.remove(x)
    order = (alive.pop(),) + tuple(reversed(rev_order))
    partners = ((),) + tuple(reversed(rev_partners))
    return VineStructure(order, partners)


def check_proximity(structure: VineStructure) -> bool:
    """Each tree is a spanning tree on the previous tree's edges and every
    tree-(t+1) edge joins two tree-t edges that share a node."""
    trees = structure.trees
    d = structure.dimension
    prev_nodes = [frozenset([i]) for i in range(d)]
    for t, level in enumerate(trees, start=1):
        if len(level) != d - t:
            return False
        index = {n: i for i, n in enumerate(prev_nodes)}
        parent = list(range(len(prev_nodes)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for e in level:
            j, k = e.conditioned
            a = e.variables - {k}
            b = e.variables - {j}
            if a not in index or b not in index:
                return False
            if t > 1 and len(a & b) != t - 1:
                return False
            ra, rb = find(index[a]), find(index[b])
            if ra == rb:
                return False  # cycle
            parent[ra] = rb
        prev_nodes = [e.variables for e in level]
    return True


def _h_outputs(edge: VineEdge, uj, uk):
    c = edge.copula
    lo, hi = H_CLAMP, 1.0 - H_CLAMP
    return np.clip(c.h1(uj, uk), lo, hi), np.clip(c.h2(uj, uk), lo, hi)


def _fit_edge(edge: VineEdge, uj, uk, bandwidth: float, truncation_tau: float, tau=None) -> VineEdge:
    if truncation_tau > 0:
        tau = kendall_tau(uj, uk) if tau is None else tau
        if abs(tau) < truncation_tau:
            return VineEdge(edge.conditioned, edge.conditioning, edge.tree_level, IndependenceCopula())
    cop = fit_pair(np.column_stack([uj, uk]), bandwidth)
    return VineEdge(edge.conditioned, edge.conditioning, edge.tree_level, cop)


def _inputs(pseudo: dict, edge: VineEdge):
    j, k = edge.conditioned
    D = frozenset(edge.conditioning)
    return pseudo[(j, D)], pseudo[(k, D)]


def _store_outputs(pseudo: dict, edge: VineEdge, uj, uk):
    j, k = edge.conditioned
    D = frozenset(edge.conditioning)
    hj, hk = _h_outputs(edge, uj, uk)
    pseudo[(j, D | {k})] = hj
    pseudo[(k, D | {j})] = hk


@dataclass(frozen=True, eq=False)
class VineModel:
    structure: VineStructure
    edges: tuple[VineEdge, ...]
    bandwidth: float
    truncation_tau: float = 0.0
    pseudo_obs_cache: dict = field(default_factory=dict, repr=False)
    _lookup: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_lookup", {e.key: e for e in self.edges})

    @property
    def dimension(self) -> int:
        return self.structure.dimension

    def edge(self, a: int, b: int, conditioning) -> VineEdge:
        return self._lookup[((min(a, b), max(a, b)), tuple(sorted(conditioning)))]

    def _check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        u = u.reshape(1, -1) if u.ndim == 1 else u
        if u.shape[1] != self.dimension:
            raise ValueError(f"expected {self.dimension} columns, got {u.shape[1]}")
        if np.any(~((u > 0.0) & (u < 1.0))):
            raise ValueError("copula arguments must lie strictly inside (0, 1)")
        return u

    def _forward(self, u: np.ndarray, with_density: bool):
        pseudo = {(i, frozenset()): u[:, i] for i in range(self.dimension)}
        logc = np.zeros(u.shape[0])
        for e in self.edges:
            uj, uk = _inputs(pseudo, e)
            if with_density:
                logc += e.copula.log_density(uj, uk)
            _store_outputs(pseudo, e, uj, uk)
        return logc, pseudo

    def log_density(self, u) -> np.ndarray:
        """Sum of pair-copula log densities along the vine (h-function descent)."""
        u = self._check(u)
        return self._forward(u, True)[0]

    def rosenblatt(self, u) -> np.ndarray:
        u = self._check(u)
        _, pseudo = self._forward(u, False)
        w = np.empty_like(u)
        for x, ws in zip(self.structure.order, self.structure.partners):
            w[:, x] = pseudo[(x, frozenset(ws))]
        return w

    def inverse_rosenblatt(self, w) -> np.ndarray:
        w = self._check(w)
        order, partners = self.structure.order, self.structure.partners
        u = np.empty_like(w)
        pseudo = {(order[0], frozenset()): w[:, order[0]]}
        u[:, order[0]] = w[:, order[0]]
        for x, ws in zip(order[1:], partners[1:]):
            z = w[:, x]
            for t in range(len(ws), 0, -1):
                D = frozenset(ws[:t - 1])
                p = ws[t - 1]
                pseudo[(x, D | {p})] = z
                e = self.edge(x, p, D)
                cond = pseudo[(p, D)]
                z = e.copula.h1_inverse(z, cond) if x < p else e.copula.h2_inverse(z, cond)
                z = np.clip(z, H_CLAMP, 1.0 - H_CLAMP)
            pseudo[(x, frozenset())] = z
            u[:, x] = z
            for t in range(1, len(ws) + 1):
                D = frozenset(ws[:t - 1])
                p = ws[t - 1]
                e = self.edge(x, p, D)
                ux, up = pseudo[(x, D)], pseudo[(p, D)]
                if x < p:
                    pseudo[(p, D | {x})] = np.clip(e.copula.h2(ux, up), H_CLAMP, 1.0 - H_CLAMP)
                else:
                    pseudo[(p, D | {x})] = np.clip(e.copula.h1(up, ux), H_CLAMP, 1.0 - H_CLAMP)
        return u

    def sample(self, count: int, seed=None) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        w = open_uniform(np.random.default_rng(seed), (count, self.dimension))
        return self.inverse_rosenblatt(w)

    def to_dict(self) -> dict:
        return {
            "structure": self.structure.to_array().tolist(),
            "bandwidth": self.bandwidth,
            "truncation_tau": self.truncation_tau,
            "edges": [{"conditioned": list(e.conditioned), "conditioning": list(e.conditioning),
                       "copula": e.copula.to_dict()} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VineModel":
        structure = VineStructure.from_array(d["structure"])
        edges = tuple(
            VineEdge(tuple(e["conditioned"]), tuple(e["conditioning"]), len(e["conditioning"]) + 1,
                     copula_from_dict(e["copula"]))
            for e in d["edges"]
        )
        return cls(structure, edges, float(d["bandwidth"]), float(d["truncation_tau"]))


def vine_log_density(m: VineModel, u):
    return m.log_density(u)


def vine_sample(m: VineModel, count: int, seed=None):
    return m.sample(count, seed)


def _check_pseudo_obs(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] < 2:
        raise ValueError("pseudo-observations must be an (n, d) array with d >= 2")
    if np.any(~((u > 0.0) & (u < 1.0))):
        raise ValueError("pseudo-observations must lie strictly inside (0, 1)")
    return u


def _mst(n_nodes: int, candidates: list[tuple[int, int]], weights: list[float]) -> list[int]:
    """Kruskal maximum spanning tree; ties resolved by candidate order."""
    order = sorted(range(len(candidates)), key=lambda c: (-weights[c], candidates[c]))
    parent = list(range(n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chosen = []
    for c in order:
        a, b = candidates[c]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append(c)
            if len(chosen) == n_nodes - 1:
                break
    return sorted(chosen, key=lambda c: candidates[c])


def _dissmann(u: np.ndarray, bandwidth: float, truncation_tau: float):
    """Greedy tree-by-tree maximum spanning trees on |tau| (proximity-constrained)."""
    n, d = u.shape
    pseudo = {(i, frozenset()): u[:, i] for i in range(d)}
    fitted: list[VineEdge] = []
    nodes = [frozenset([i]) for i in range(d)]  # tree-t nodes as variable sets
    for t in range(1, d):
        cands, edges, taus = [], [], []
        for a, b in combinations(range(len(nodes)), 2):
            va, vb = nodes[a], nodes[b]
            common = va & vb
            if len(common) != t - 1:
                continue
            if t > 2 and not _share_node(va, vb, prev_nodes):
                continue
            j, = va - common
            k, = vb - common
            e = VineEdge((j, k), tuple(common), t)
            uj, uk = _inputs(pseudo, e)
            cands.append((a, b))
            edges.append(e)
            taus.append(kendall_tau(uj, uk))
        chosen = _mst(len(nodes), cands, [abs(x) for x in taus])
        level = []
        for c in chosen:
            e = edges[c]
            uj, uk = _inputs(pseudo, e)
            e = _fit_edge(e, uj, uk, bandwidth, truncation_tau, taus[c])
            _store_outputs(pseudo, e, uj, uk)
            level.append(e)
        fitted.extend(sorted(level, key=lambda e: (e.conditioned, e.conditioning)))
        prev_nodes = nodes
        nodes = [e.variables for e in level]
    return fitted, pseudo


def _share_node(va: frozenset, vb: frozenset, prev_nodes: list[frozenset]) -> bool:
    """Two tree-t edges (as variable sets) are adjacent iff they share a tree-(t-1) edge."""
    return any(n <= va and n <= vb for n in prev_nodes)


def select_structure(pseudo_obs, bandwidth: float = 0.1, truncation_tau: float = 0.0) -> VineStructure:
    """Dissmann-style structure selection: maximum spanning trees on |tau|.

    Deeper trees need conditional pseudo-observations, so each chosen edge is
    fitted (at ``bandwidth``) before the next tree is built.
    """
    u = _check_pseudo_obs(pseudo_obs)
    fitted, _ = _dissmann(u, bandwidth, truncation_tau)
    return structure_from_edges(u.shape[1], [(e.conditioned, e.conditioning) for e in fitted])


def fit_vine(pseudo_obs, structure: VineStructure | None, bandwidth: float,
             truncation_tau: float = 0.0) -> VineModel:
    """Fit every pair copula, tree by tree, propagating pseudo-observations
    through h-functions. ``structure=None`` selects one on the fly."""
    u = _check_pseudo_obs(pseudo_obs)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if structure is None:
        fitted, pseudo = _dissmann(u, bandwidth, truncation_tau)
        structure = structure_from_edges(u.shape[1], [(e.conditioned, e.conditioning) for e in fitted])
    else:
        if structure.dimension != u.shape[1]:
            raise ValueError("structure dimension does not match the data")
        pseudo = {(i, frozenset()): u[:, i] for i in range(u.shape[1])}
        fitted = []
        for e in structure.edges():
            uj, uk = _inputs(pseudo, e)
            e = _fit_edge(e, uj, uk, bandwidth, truncation_tau)
            _store_outputs(pseudo, e, uj, uk)
            fitted.append(e)
    return VineModel(structure, tuple(fitted), float(bandwidth), float(truncation_tau), pseudo)


def select_vine_bandwidth(pseudo_obs, grid=DEFAULT_BANDWIDTH_GRID, folds: int = 10, seed=None,
                          n_samples: int = 100, beta: float = 1.0, truncation_tau: float = 0.0,
                          threads: int | None = None, scale: str = DEFAULT_BANDWIDTH_SCALE):
    """k-fold CV of the energy score for the shared pair-copula bandwidth.

    For every (fold, bandwidth) cell a vine (structure included) is fitted on
    the training folds, ``n_samples`` draws are simulated with the fold's seed
    and scored against the held-out pseudo-observations. Grid values are
    interpreted through :func:`kernel_variance` with ``scale``. Returns
    ``(grid_value, score, scores_per_grid_point)``.
    """
    u = _check_pseudo_obs(pseudo_obs)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("bandwidth grid must be non-empty and positive")
    fold_seed, sample_seed = seed_sequence(seed).spawn(2)
    idx = kfold_indices(u.shape[0], folds, fold_seed)
    fold_seeds = sample_seed.spawn(folds)
    cells = [(f, g) for f in range(folds) for g in range(grid.size)]

    def run(cell):
        f, g = cell
        test = idx[f]
        train = np.setdiff1d(np.arange(u.shape[0]), test)
        b = kernel_variance(grid[g], train.size, scale)
        model = fit_vine(u[train], None, b, truncation_tau)
        draws = model.sample(n_samples, fold_seeds[f])
        return energy_score_total(draws, u[test], beta).mean

    results = parallel_map(run, cells, threads)
    scores = np.zeros(grid.size)
    for (f, g), s in zip(cells, results):
        scores[g] += s / folds
    b, s = argmin_smallest(grid, scores)
    return b, s, scores
