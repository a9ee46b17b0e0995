"""Aggregation over SimChange results: per-class and global transform rankings,
appearance/geometric splits, top-k membership versus invariance change and
IoU of helped-sample lists.

A pair is *boosted* when its SimChange is strictly positive. The weighted
boost of a transform is the mean SimChange of boosted pairs times the share
of pairs boosted. Ties in a ranking are broken by catalog order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CatalogMismatch, ConfigError, EmptyUnion, IncompleteGrid
from .transforms import KIND_ORDER, SubPolicy, TransformSpec, parse_spec

RANK_KEYS = ("mean", "weighted_boost", "prop_boosted")
GLOBAL_CLASS = "__global__"


@dataclass(frozen=True)
class SimCell:
    """Summary of one (class, transform) SimChange distribution."""

    cls: str
    spec: str
    mean: float
    prop_boosted: float
    weighted_boost: float
    n: int = 0


def cells_from_results(results):
    """Flatten ``SimChangeResult`` objects into per-class :class:`SimCell` rows."""
    cells = []
    for res in results:
        for cls, dist in res.per_class.items():
            cells.append(SimCell(str(cls), res.transform, dist.mean, dist.prop_boosted,
                                 dist.weighted_boost, dist.n))
    return cells


def weighted_boost(values):
    values = np.asarray(values, dtype=np.float64)
    pos = values[values > 0]
    return float(pos.mean() * pos.size / values.size) if pos.size else 0.0


def catalog_key(label):
    """Canonical enumeration position of a spec string (kind, level, sign)."""
    try:
        t = parse_spec(label)
    except Exception:
        return (len(KIND_ORDER) + 1, 0, 0, label)
    if isinstance(t, TransformSpec):
        return (KIND_ORDER.index(t.kind), t.level, t.sign != "+", "")
    if isinstance(t, SubPolicy):
        a, b = catalog_key(str(t.first)), catalog_key(str(t.second))
        return (len(KIND_ORDER), a[:3] + b[:3], 0, "")
    return (len(KIND_ORDER) + 1, 0, 0, label)


def category(label):
    """``identity``, ``geometric``, ``appearance`` or ``mixed`` (sub-policies only)."""
    t = parse_spec(label) if isinstance(label, str) else label
    if isinstance(t, SubPolicy):
        parts = {category(t.first), category(t.second)} - {"identity"}
        if not parts:
            return "identity"
        return parts.pop() if len(parts) == 1 else "mixed"
    if t.is_identity:
        return "identity"
    return "geometric" if getattr(t, "geometric", True) else "appearance"


@dataclass(frozen=True)
class RankEntry:
    spec: str
    mean: float
    prop_boosted: float
    weighted_boost: float
    n: int = 0


@dataclass
class ClassRanking:
    cls: str
    entries: list
    key: str = "mean"
    pair_budget: Optional[int] = None

    @property
    def top(self):
        return self.entries[0]

    def specs(self):
        return [e.spec for e in self.entries]

    def topk(self, k):
        return [e.spec for e in self.entries[:k]]

    def rows(self):
        return [
            {"class": self.cls, "rank": r + 1, "spec": e.spec, "mean": e.mean,
             "prop_boosted": e.prop_boosted, "weighted_boost": e.weighted_boost}
            for r, e in enumerate(self.entries)
        ]


def _sorted_entries(entries, key, order):
    return sorted(entries, key=lambda e: (-getattr(e, key), order[e.spec]))


def rank_transforms(results, scope="per-class", key="mean", catalog=None, pair_budget=None):
    """Rank transforms per class (or globally with equal class weight).

    ``results`` is an iterable of :class:`SimCell` or ``SimChangeResult``.
    Every class must have a cell for every transform, otherwise
    :class:`IncompleteGrid` lists the missing ``(class, spec)`` cells.
    """
    if key not in RANK_KEYS:
        raise ConfigError(f"ranking key must be one of {RANK_KEYS}, got {key!r}")
    if scope not in ("per-class", "global"):
        raise ConfigError(f"scope must be per-class or global, got {scope!r}")
    results = list(results)
    cells = [c for c in results if isinstance(c, SimCell)] + cells_from_results(
        [r for r in results if not isinstance(r, SimCell)])
    if not cells:
        raise IncompleteGrid([])
    grid = {}
    for c in cells:
        grid[(c.cls, c.spec)] = c
    classes = sorted({c.cls for c in cells}, key=_class_key)
    specs = list(catalog) if catalog is not None else sorted({c.spec for c in cells}, key=catalog_key)
    specs = [str(s) for s in specs]
    order = {s: k for k, s in enumerate(specs)}
    gaps = [(cl, s) for cl in classes for s in specs if (cl, s) not in grid]
    if gaps:
        raise IncompleteGrid(gaps)
    per_class = []
    for cl in classes:
        entries = [RankEntry(s, grid[(cl, s)].mean, grid[(cl, s)].prop_boosted,
                             grid[(cl, s)].weighted_boost, grid[(cl, s)].n) for s in specs]
        per_class.append(ClassRanking(cl, _sorted_entries(entries, key, order), key, pair_budget))
    if scope == "per-class":
        return per_class
    entries = []
    for s in specs:
        col = [grid[(cl, s)] for cl in classes]
        entries.append(RankEntry(
            s,
            float(np.mean([c.mean for c in col])),
            float(np.mean([c.prop_boosted for c in col])),
            float(np.mean([c.weighted_boost for c in col])),
            int(sum(c.n for c in col)),
        ))
    return [ClassRanking(GLOBAL_CLASS, _sorted_entries(entries, key, order), key, pair_budget)]


def _class_key(c):
    try:
        return (0, int(c), "")
    except (TypeError, ValueError):
        return (1, 0, str(c))


def rankings_to_json(rankings):
    rows = [row for r in rankings for row in r.rows()]
    return {"schema_version": 1, "rankings": rows}


def rankings_from_json(doc):
    by_class = {}
    for row in doc["rankings"]:
        by_class.setdefault(row["class"], []).append(row)
    out = []
    for cls, rows in by_class.items():
        rows.sort(key=lambda r: r["rank"])
        entries = [RankEntry(r["spec"], r["mean"], r["prop_boosted"], r["weighted_boost"]) for r in rows]
        out.append(ClassRanking(cls, entries))
    return out


# ------------------------------------------------------------ category split

def category_split(rankings):
    """Category of each class's top transform, as fractions over classes.

    ``identity_top_fraction_geometric_only`` re-ranks every class using only
    geometric transforms and the identity (an implicit identity with value 0
    is placed first when none is listed) and reports how often the identity
    wins. ``catalog_balance`` counts ranked specs per category.
    """
    rankings = list(rankings)
    if not rankings:
        raise IncompleteGrid([])
    counts = {"appearance": 0, "geometric": 0, "identity": 0, "mixed": 0}
    identity_wins = 0
    for r in rankings:
        if not r.entries:
            raise IncompleteGrid([(r.cls, "*")])
        counts[category(r.top.spec)] += 1
        pool = [e for e in r.entries if category(e.spec) in ("geometric", "identity")]
        if not any(category(e.spec) == "identity" for e in pool):
            pool = [RankEntry("identity", 0.0, 0.0, 0.0)] + pool
        key = r.key
        best = max(getattr(e, key) for e in pool)
        winner = next(e for e in pool if getattr(e, key) == best)
        identity_wins += winner.spec == "identity" or category(winner.spec) == "identity"
    n = len(rankings)
    balance = {"appearance": 0, "geometric": 0, "identity": 0, "mixed": 0}
    for e in rankings[0].entries:
        balance[category(e.spec)] += 1
    out = {f"{c}_fraction": counts[c] / n for c in counts}
    out["identity_top_fraction_geometric_only"] = identity_wins / n
    out["catalog_balance"] = balance
    return out


# ------------------------------------------------------------ top-k vs invariance

def _as_mean_map(inv):
    if isinstance(inv, dict):
        return {str(k): float(v) for k, v in inv.items()}
    return {d.transform: d.mean for d in inv}


def invariance_change_vs_topk(inv_before, inv_after, rankings, k=5, threshold=0.01):
    """Top-k membership probability per invariance-change bucket.

    A spec is in bucket ``increase`` when its mean invariance rose by more
    than ``threshold``, ``decrease`` when it fell by more than ``threshold``
    and ``minimal`` otherwise. For each bucket the result gives the number of
    specs and the fraction of (spec, class) combinations where that transform is
    among the class's top ``k``.
    """
    before, after = _as_mean_map(inv_before), _as_mean_map(inv_after)
    if set(before) != set(after):
        raise CatalogMismatch("before and after invariance results cover different specs")
    rankings = list(rankings)
    ranked = set(rankings[0].specs()) if rankings else set()
    missing = sorted(set(before) - ranked)
    if missing:
        raise CatalogMismatch(f"{len(missing)} spec(s) have no ranking, e.g. {missing[0]}")
    buckets = {"increase": [], "decrease": [], "minimal": []}
    for s in sorted(before, key=catalog_key):
        delta = after[s] - before[s]
        name = "increase" if delta > threshold else "decrease" if delta < -threshold else "minimal"
        buckets[name].append(s)
    tops = [set(r.topk(k)) for r in rankings]
    table = {}
    for name, specs in buckets.items():
        hits = [s in t for s in specs for t in tops]
        table[name] = {"n_specs": len(specs), "p_topk": float(np.mean(hits)) if hits else float("nan"),
                       "specs": specs}
    return table


# ------------------------------------------------------------ helped samples

@dataclass(frozen=True)
class HelpedSampleList:
    run_id: str
    ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "ids", frozenset(self.ids))

    def __len__(self):
        return len(self.ids)


def helped_samples(run_id, ids, correct_without, correct_with):
    """Samples misclassified without augmentation but correct with it."""
    ids = list(ids)
    a = np.asarray(correct_without, dtype=bool)
    b = np.asarray(correct_with, dtype=bool)
    return HelpedSampleList(run_id, {i for i, x, y in zip(ids, a, b) if not x and y})


def list_iou(a, b):
    sa = a.ids if isinstance(a, HelpedSampleList) else frozenset(a)
    sb = b.ids if isinstance(b, HelpedSampleList) else frozenset(b)
    union = sa | sb
    if not union:
        raise EmptyUnion("both helped-sample lists are empty")
    return len(sa & sb) / len(union)
