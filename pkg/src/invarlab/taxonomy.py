"""Class similarity over a rooted taxonomy and its relation to transform rankings.

Trees are read from ``child<TAB>parent`` edge files; the root is the single
node that never appears as a child and has depth 1. Class ids map to leaves
through an optional ``class_id<TAB>leaf`` file (identity mapping otherwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, UnknownClass

METHODS = ("wu_palmer", "path", "leacock_chodorow")

DEMO_EDGES = (
    ("animal", "entity"),
    ("vehicle", "entity"),
    ("dog", "animal"),
    ("cat", "animal"),
    ("car", "vehicle"),
    ("boat", "vehicle"),
)


@dataclass
class TaxonomyTree:
    parent: dict
    class_map: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = set(self.parent) | set(self.parent.values())
        roots = sorted(nodes - set(self.parent))
        if len(roots) != 1:
            raise ParseError(f"taxonomy must have exactly one root, found {len(roots)}: {roots[:5]}")
        self.root = roots[0]
        self._depth = {self.root: 1}
        for node in sorted(self.parent):
            self._resolve(node)
        children = set(self.parent.values())
        self.leaves = sorted(n for n in nodes if n not in children)
        for cls, leaf in self.class_map.items():
            if leaf not in self.leaves:
                raise ParseError(f"class {cls!r} maps to {leaf!r}, which is not a leaf")
        self.max_depth = max(self._depth.values())

    def _resolve(self, node):
        chain = []
        while node not in self._depth:
            if node in chain:
                raise ParseError(f"taxonomy has a cycle through {node!r}")
            chain.append(node)
            node = self.parent[node]
        d = self._depth[node]
        for n in reversed(chain):
            d += 1
            self._depth[n] = d

    @classmethod
    def from_edges(cls, edges, class_map=None):
        parent = {}
        for child, par in edges:
            if child in parent and parent[child] != par:
                raise ParseError(f"node {child!r} has two parents")
            parent[child] = par
        return cls(parent, dict(class_map or {}))

    @classmethod
    def demo(cls):
        return cls.from_edges(DEMO_EDGES)

    def leaf(self, cls_id):
        cls_id = str(cls_id)
        name = self.class_map.get(cls_id, cls_id)
        if name not in self._depth or name not in self.leaves:
            raise UnknownClass(cls_id)
        return name

    def depth(self, node):
        return self._depth[node]

    def ancestors(self, node):
        out = [node]
        while node != self.root:
            node = self.parent[node]
            out.append(node)
        return out

    def lca(self, a, b):
        seen = set(self.ancestors(a))
        return next(n for n in self.ancestors(b) if n in seen)

    def distance(self, a, b):
        c = self.lca(a, b)
        return self.depth(a) + self.depth(b) - 2 * self.depth(c)

    def classes(self):
        return sorted(self.class_map) if self.class_map else list(self.leaves)


def _read_pairs(path):
    pairs = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError(f"{path}:{lineno}: expected two tab-separated fields")
        pairs.append((parts[0], parts[1]))
    return pairs


def read_taxonomy(edges_path, class_map_path=None):
    class_map = dict(_read_pairs(class_map_path)) if class_map_path else None
    return TaxonomyTree.from_edges(_read_pairs(edges_path), class_map)


def write_taxonomy(tree, edges_path, class_map_path=None):
    lines = [f"{c}\t{p}\n" for c, p in sorted(tree.parent.items())]
    Path(edges_path).write_text("".join(lines), encoding="utf-8")
    if class_map_path is not None:
        lines = [f"{c}\t{l}\n" for c, l in sorted(tree.class_map.items())]
        Path(class_map_path).write_text("".join(lines), encoding="utf-8")


def class_similarity(tree, a, b, method="wu_palmer"):
    """Wu-Palmer, path or Leacock-Chodorow similarity of two classes."""
    la, lb = tree.leaf(a), tree.leaf(b)
    if method == "wu_palmer":
        return 2.0 * tree.depth(tree.lca(la, lb)) / (tree.depth(la) + tree.depth(lb))
    dist = tree.distance(la, lb)
    if method == "path":
        return 1.0 / (1.0 + dist)
    if method == "leacock_chodorow":
        return -math.log(max(dist, 1) / (2.0 * tree.max_depth))
    raise ConfigError(f"unknown similarity method {method!r}", "method")


# ------------------------------------------------------------ Spearman

def average_ranks2(x):
    """Twice the average (1-based) ranks of ``x``; integers, ties share the mean."""
    x = np.asarray(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.int64)
    start = 0
    n = len(x)
    while start < n:
        stop = start + 1
        while stop < n and xs[stop] == xs[start]:
            stop += 1
        # ranks start+1 .. stop averaged, doubled
        ranks[order[start:stop]] = start + 1 + stop
        start = stop
    return ranks


def spearman(x, y):
    """Spearman rho as the Pearson correlation of average ranks.

    Sums are taken in integer arithmetic on doubled ranks so the result is
    correctly rounded. Returns ``nan`` when either input is constant.
    """
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError("spearman needs two 1-D arrays of equal length")
    n = len(x)
    if n < 2:
        return float("nan")
    rx = [int(v) for v in average_ranks2(x)]
    ry = [int(v) for v in average_ranks2(y)]
    sx, sy = sum(rx), sum(ry)
    sxy = n * sum(a * b for a, b in zip(rx, ry)) - sx * sy
    sxx = n * sum(a * a for a in rx) - sx * sx
    syy = n * sum(b * b for b in ry) - sy * sy
    if sxx == 0 or syy == 0:
        return float("nan")
    if sxx == syy:
        return sxy / sxx
    return sxy / math.sqrt(sxx * syy)


# ------------------------------------------------------------ similarity vs ranking

def _score_vectors(rankings, key):
    specs = None
    out = {}
    for r in rankings:
        vals = {e.spec: getattr(e, key) for e in r.entries}
        if specs is None:
            specs = sorted(vals)
        elif sorted(vals) != specs:
            raise ConfigError(f"class {r.cls!r} ranks a different catalog", "rankings")
        out[str(r.cls)] = np.array([vals[s] for s in specs])
    return out


@dataclass
class CorrelationTable:
    method: str
    pairs: list
    bins: list
    excluded: int

    def rows(self):
        return [
            {"bin": k, "lo": b["lo"], "hi": b["hi"], "n": b["n"], "mean_rho": b["mean_rho"],
             "median_rho": b["median_rho"]}
            for k, b in enumerate(self.bins)
        ]

    def mean_rhos(self):
        return [b["mean_rho"] for b in self.bins]


def similarity_vs_rank_correlation(tree, rankings, method="wu_palmer", key="mean", bins=None):
    """Spearman rho between class rankings, grouped by class similarity.

    With ``bins=None`` every distinct similarity value forms its own bin;
    an integer gives that many equal-width bins. Pairs where a class has a
    constant score vector have no rho and are counted in ``excluded``.
    """
    scores = _score_vectors(rankings, key)
    for cls in scores:
        tree.leaf(cls)
    missing = [c for c in tree.classes() if c not in scores]
    if tree.class_map and missing:
        raise ConfigError(f"rankings do not cover classes {missing[:5]}", "rankings")
    pairs = []
    excluded = 0
    for a, b in combinations(sorted(scores), 2):
        rho = spearman(scores[a], scores[b])
        if math.isnan(rho):
            excluded += 1
            continue
        pairs.append((a, b, class_similarity(tree, a, b, method), rho))
    sims = np.array([p[2] for p in pairs])
    rhos = np.array([p[3] for p in pairs])
    table = []
    if len(pairs):
        if bins is None:
            levels = np.unique(np.round(sims, 12))
            edges = [(v, v) for v in levels]
            members = [np.isclose(sims, v, rtol=0, atol=1e-12) for v in levels]
        else:
            e = np.linspace(sims.min(), sims.max(), int(bins) + 1)
            idx = np.clip(np.searchsorted(e, sims, side="right") - 1, 0, int(bins) - 1)
            edges = [(e[k], e[k + 1]) for k in range(int(bins))]
            members = [idx == k for k in range(int(bins))]
        for (lo, hi), m in zip(edges, members):
            if not m.any():
                continue
            table.append({"lo": float(lo), "hi": float(hi), "n": int(m.sum()),
                          "mean_rho": float(rhos[m].mean()), "median_rho": float(np.median(rhos[m]))})
    return CorrelationTable(method, pairs, table, excluded)


def strictly_increasing(values):
    return all(b > a for a, b in zip(values, values[1:]))
