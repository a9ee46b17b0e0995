"""Invariance, equivariance alignment and SimChange over embedding providers.

* Invariance of ``f`` to ``T`` for sample ``x``: ``(b - d(f(x), f(Tx))) / b``
  with ``d`` the cosine distance ``1 - cos`` and ``b`` the mean distance
  between ``f(x_i)`` and ``f(T x_j)`` over randomly re-paired samples.
* Equivariance alignment: with ``d_i = f(x_i) - f(T x_i)`` and ``B`` the
  matrix of differences with every column shuffled independently, each pair
  scores ``cos(d_i, d_j) - cos(b_i, b_j)`` (positive means the differences
  align more than chance).
* SimChange of a same-class pair: ``(cos(f(x1), f(T x2)) - cos(f(x1), f(x2)))
  / cos(f(x1), f(x2))`` with the transform applied to ``x2`` only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embedders import FileStore, transformed_key
from .errors import ConfigError, DegenerateBaseline, DegenerateEmbedding, ShapeError
from .image import Image
from .transforms import CyclicShift, SubPolicy, TransformSpec, apply_any_array, transform_label

DEGENERATE_SIM = 1e-9
DEGENERATE_DIFF = 1e-7
DEGENERATE_BASELINE = 1e-9
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


# ------------------------------------------------------------ samples

@dataclass
class SampleSet:
    """Sample ids with images ``(N, H, W, 3)`` (or ``None`` for file stores) and labels."""

    ids: list
    images: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        if self.images is not None:
            if not isinstance(self.images, np.ndarray):
                self.images = np.stack([im.data if isinstance(im, Image) else im for im in self.images])
            if self.images.ndim != 4 or len(self.images) != len(self.ids):
                raise ShapeError("images must be (N, H, W, 3) with one row per id")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.ids):
                raise ShapeError("one label per sample required")

    @classmethod
    def from_images(cls, images, labels=None, ids=None):
        ids = ids if ids is not None else [f"s{k:05d}" for k in range(len(images))]
        return cls(list(ids), images, labels)

    def __len__(self):
        return len(self.ids)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            [self.ids[k] for k in idx],
            None if self.images is None else self.images[idx],
            None if self.labels is None else self.labels[idx],
        )


def _is_identity(t):
    return getattr(t, "is_identity", False)


def embed_transformed(provider, samples, transform=None, chunk=512):
    """Embeddings of ``T(x)`` for every sample (``T`` may be ``None`` for identity)."""
    if isinstance(provider, FileStore):
        if transform is None or _is_identity(transform):
            return provider.lookup_many(samples.ids)
        label = transform_label(transform)
        return provider.lookup_many([transformed_key(i, label) for i in samples.ids])
    if samples.images is None:
        raise ConfigError("image provider needs images, the sample set only has ids")
    out = []
    for start in range(0, len(samples), chunk):
        arr = samples.images[start:start + chunk]
        if transform is not None and not _is_identity(transform):
            arr = apply_any_array(transform, arr)
        out.append(provider.embed_batch(arr))
    return np.concatenate(out) if out else np.zeros((0, provider.dim or 0))


class EmbeddingCache:
    """Memoized ``embed_transformed`` keyed by the transform's string form.

    Identity specs reuse the untransformed embeddings, which keeps identity
    results exact even for non-deterministic providers.
    """

    def __init__(self, provider, samples):
        self.provider = provider
        self.samples = samples
        self._store = {}

    def base(self):
        if None not in self._store:
            self._store[None] = embed_transformed(self.provider, self.samples, None)
        return self._store[None]

    def get(self, transform):
        if transform is None or _is_identity(transform):
            return self.base()
        key = transform_label(transform)
        if key not in self._store:
            self._store[key] = embed_transformed(self.provider, self.samples, transform)
        return self._store[key]


# ------------------------------------------------------------ results

@dataclass
class MetricDistribution:
    metric: str
    transform: str
    values: np.ndarray
    excluded: int = 0
    cls: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def n(self):
        return int(self.values.size)

    @property
    def mean(self):
        return float(np.sum(self.values) / self.n) if self.n else float("nan")

    @property
    def sem(self):
        if self.n < 2:
            return float("nan") if self.n == 0 else 0.0
        return float(np.std(self.values, ddof=1) / math.sqrt(self.n))

    @property
    def quantiles(self):
        if not self.n:
            return {q: float("nan") for q in QUANTILES}
        return dict(zip(QUANTILES, np.quantile(self.values, QUANTILES).tolist()))

    @property
    def prop_boosted(self):
        return float(np.mean(self.values > 0)) if self.n else 0.0

    @property
    def weighted_boost(self):
        """Mean of the strictly positive values times the fraction that are positive."""
        pos = self.values[self.values > 0]
        return float(pos.mean() * pos.size / self.n) if pos.size else 0.0

    def row(self):
        kind, level, sign = _split_label(self.transform)
        return {
            "metric": self.metric, "kind": kind, "level": level, "sign": sign,
            "class": "" if self.cls is None else self.cls, "mean": self.mean,
            "sem": self.sem, "n": self.n, "excluded": self.excluded,
        }


def _split_label(label):
    parts = label.split(":")
    if len(parts) >= 2 and ";" not in label and not label.startswith("cshift"):
        return parts[0], parts[1], parts[2] if len(parts) > 2 else ""
    return label, "", ""


ROW_FIELDS = ("metric", "kind", "level", "sign", "class", "mean", "sem", "n", "excluded")


def rows_to_csv(rows):
    lines = [",".join(ROW_FIELDS)]
    for r in rows:
        lines.append(",".join(_csv_cell(r[f]) for f in ROW_FIELDS))
    return "\n".join(lines) + "\n"


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    s = str(v)
    return f'"{s}"' if ("," in s or '"' in s) else s


# ------------------------------------------------------------ cosine helpers

def _norms(e):
    return np.sqrt(np.einsum("ij,ij->i", e, e))


def _check_nonzero(e, ids):
    bad = np.flatnonzero(_norms(e) == 0.0)
    if bad.size:
        raise DegenerateEmbedding(ids[bad[0]])


def cosine_rows(a, b):
    """Row-wise cosine similarity; identical rows give exactly 1."""
    num = np.einsum("ij,ij->i", a, b)
    sim = num / (_norms(a) * _norms(b))
    same = np.all(a == b, axis=1)
    return np.where(same, 1.0, sim)


def _unit(e):
    return e / _norms(e)[:, None]


def _pair_cos(u, v, i, j, chunk=4096):
    """cos(u[i_k], v[j_k]) for unit-norm row sets."""
    n_pairs = len(i)
    if u.shape[0] * v.shape[0] <= 2 * n_pairs:
        return (u @ v.T)[i, j]
    out = np.empty(n_pairs)
    for s in range(0, n_pairs, chunk):
        out[s:s + chunk] = np.einsum("ij,ij->i", u[i[s:s + chunk]], v[j[s:s + chunk]])
    return out


# ------------------------------------------------------------ invariance

def invariance(provider, samples, spec, rng, budget=None, per_pair_baseline=False, cache=None):
    """Per-sample invariance scores relative to a shuffled-pair baseline."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if len(samples) < 2:
        raise ConfigError("invariance needs at least two samples")
    idx = np.arange(len(samples))
    if budget is not None and budget < len(samples):
        idx = np.sort(rng.choice(len(samples), size=max(int(budget), 2), replace=False))
    cache = cache or EmbeddingCache(provider, samples)
    e0 = cache.base()[idx]
    et = cache.get(spec)[idx]
    ids = [samples.ids[k] for k in idx]
    _check_nonzero(e0, ids)
    _check_nonzero(et, ids)
    d = 1.0 - cosine_rows(e0, et)
    n = len(idx)
    perm = rng.permutation(n)
    partner = np.empty(n, dtype=np.int64)
    partner[perm] = perm[(np.arange(n) + 1) % n]
    b_pairs = 1.0 - cosine_rows(e0, et[partner])
    b = float(np.sum(b_pairs) / n)
    if b <= DEGENERATE_BASELINE:
        raise DegenerateBaseline(f"baseline distance {b:.3g} is too small for {transform_label(spec)}")
    if per_pair_baseline:
        if np.any(b_pairs <= DEGENERATE_BASELINE):
            raise DegenerateBaseline("a per-pair baseline distance is too small")
        values = (b_pairs - d) / b_pairs
    else:
        values = (b - d) / b
    return MetricDistribution("invariance", transform_label(spec), values,
                              extra={"baseline": b, "ids": ids})


# ------------------------------------------------------------ equivariance

def sample_unordered_pairs(n, budget, rng):
    total = n * (n - 1) // 2
    if budget is None or total <= budget:
        i, j = np.triu_indices(n, 1)
        return i, j
    flat = np.sort(rng.choice(total, size=int(budget), replace=False))
    rows = np.arange(n - 1)
    starts = rows * (2 * n - rows - 1) // 2
    row = np.searchsorted(starts, flat, side="right") - 1
    return row, row + 1 + (flat - starts[row])


def _shuffle_columns(d, rng):
    idx = np.argsort(rng.random(d.shape), axis=0, kind="stable")
    return np.take_along_axis(d, idx, axis=0)


def equivariance_alignment(provider, samples, spec, rng, budget=10_000, sign=1,
                           n_permutations=199, cache=None):
    """Alignment of embedding differences versus a column-shuffled baseline.

    ``extra`` carries the permutation p-value of the mean alignment
    (``n_permutations`` fresh column shuffles) and the number of samples and
    pairs dropped because a difference vanished.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if len(samples) < 3:
        raise ConfigError("equivariance needs at least three samples")
    if sign not in (1, -1):
        raise ConfigError("sign must be +1 or -1")
    cache = cache or EmbeddingCache(provider, samples)
    e0 = cache.base()
    _check_nonzero(e0, samples.ids)
    diff = e0 - cache.get(spec)
    dn = _norms(diff)
    ok = dn > DEGENERATE_DIFF * _norms(e0)
    n_ok = int(ok.sum())
    n_all = len(samples)
    total_pairs = n_all * (n_all - 1) // 2
    label = transform_label(spec)
    extra = {"degenerate_samples": n_all - n_ok, "p_value": float("nan"), "sign": sign}
    if n_ok < 2:
        return MetricDistribution("equivariance", label, [], excluded=total_pairs, extra=extra)
    keep = np.flatnonzero(ok)
    d = diff[keep]
    i, j = sample_unordered_pairs(n_ok, budget, rng)
    excluded = total_pairs - n_ok * (n_ok - 1) // 2
    u = _unit(d)
    sim_d = _pair_cos(u, u, i, j)

    def baseline_sims():
        b = _shuffle_columns(d, rng)
        bn = _norms(b)
        good = bn > 0
        ub = np.where(good[:, None], b / np.where(good, bn, 1.0)[:, None], 0.0)
        return _pair_cos(ub, ub, i, j), good[i] & good[j]

    sim_b, valid = baseline_sims()
    values = sign * (sim_d[valid] - sim_b[valid])
    excluded += int((~valid).sum())
    observed = float(np.mean(sim_d))
    if n_permutations:
        hits = 0
        for _ in range(n_permutations):
            s, v = baseline_sims()
            null = float(np.mean(s[v])) if v.any() else 0.0
            hits += (sign * (null - observed)) >= 0
        extra["p_value"] = (1 + hits) / (n_permutations + 1)
    extra["pairs"] = int(len(i))
    return MetricDistribution("equivariance", label, values, excluded=excluded, extra=extra)


# ------------------------------------------------------------ SimChange

@dataclass
class PairSet:
    """Ordered same-class pairs ``(i, j)``; the transform acts on ``j``."""

    i: np.ndarray
    j: np.ndarray
    classes: np.ndarray
    seed: Optional[int] = None
    same_class_only: bool = True

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self.classes = np.asarray(self.classes)
        if np.any(self.i == self.j):
            raise ConfigError("a pair must join two distinct samples")

    def __len__(self):
        return len(self.i)


def make_pairs(labels, budget=None, fraction=None, seed=None):
    """Same-class ordered pairs per class.

    ``budget`` caps the pairs per class, ``fraction`` keeps that share of all
    ordered pairs; with neither every ordered pair is used. Sampling is
    without replacement and reproducible from ``seed``.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([0 if seed is None else int(seed)]))
    out_i, out_j, out_c = [], [], []
    for cls in sorted(set(labels.tolist()), key=str):
        members = np.flatnonzero(labels == cls)
        m = len(members)
        if m < 2:
            continue
        total = m * (m - 1)
        k = total
        if fraction is not None:
            k = min(total, max(1, int(round(fraction * total))))
        if budget is not None:
            k = min(k, int(budget))
        flat = np.arange(total) if k == total else np.sort(rng.choice(total, size=k, replace=False))
        a = flat // (m - 1)
        b = flat % (m - 1)
        b = b + (b >= a)
        out_i.append(members[a])
        out_j.append(members[b])
        out_c.append(np.full(k, cls, dtype=labels.dtype))
    if not out_i:
        return PairSet(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, labels.dtype), seed)
    return PairSet(np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_c), seed)


@dataclass
class SimChangeResult:
    transform: str
    pooled: MetricDistribution
    per_class: dict

    def rows(self):
        return [self.pooled.row()] + [d.row() for _, d in sorted(self.per_class.items(), key=lambda kv: str(kv[0]))]


class UnitCache(EmbeddingCache):
    """Cache of unit-normalized embeddings for repeated cosine evaluation.

    For deterministic image providers, identical images are embedded once:
    ``rows[k]`` maps sample ``k`` to its row in the cached matrices.
    """

    def __init__(self, provider, samples, dedupe=True):
        super().__init__(provider, samples)
        self.rows = np.arange(len(samples))
        self._unique = samples
        if (dedupe and provider.deterministic and samples.images is not None
                and not isinstance(provider, FileStore) and len(samples)):
            flat = samples.images.reshape(len(samples), -1)
            _, first, inverse = np.unique(flat, axis=0, return_index=True, return_inverse=True)
            if len(first) < len(samples):
                self._unique = samples.subset(first)
                self.rows = inverse.ravel()

    def _embed(self, transform):
        e = embed_transformed(self.provider, self._unique, transform)
        _check_nonzero(e, self._unique.ids)
        return _unit(e)

    def base(self):
        if None not in self._store:
            self._store[None] = self._embed(None)
        return self._store[None]

    def get(self, transform, store=True):
        if transform is None or _is_identity(transform):
            return self.base()
        key = transform_label(transform)
        if key in self._store:
            return self._store[key]
        e = self._embed(transform)
        if store:
            self._store[key] = e
        return e


def _grouped_pair_cos(u, v, i, j, groups):
    """Like ``_pair_cos`` but evaluates one dense block per group (BLAS friendly)."""
    ri, inv_i = np.unique(i, return_inverse=True)
    rj, inv_j = np.unique(j, return_inverse=True)
    if len(ri) * len(rj) <= 64 * len(i):
        a = u if len(ri) == len(u) else u[ri]
        b = v if len(rj) == len(v) else v[rj]
        return (a @ b.T)[inv_i.ravel(), inv_j.ravel()]
    out = np.empty(len(i))
    for g in np.unique(groups):
        m = np.flatnonzero(groups == g)
        gi, gj = i[m], j[m]
        ri, inv_i = np.unique(gi, return_inverse=True)
        rj, inv_j = np.unique(gj, return_inverse=True)
        if len(ri) * len(rj) <= 64 * len(m):
            out[m] = (u[ri] @ v[rj].T)[inv_i, inv_j]
        else:
            out[m] = _pair_cos(u, v, gi, gj)
    return out


def simchange_values(u0, ut, pairs, same_transform, rows=None, s0=None):
    i, j = (pairs.i, pairs.j) if rows is None else (rows[pairs.i], rows[pairs.j])
    if s0 is None:
        s0 = _grouped_pair_cos(u0, u0, i, j, pairs.classes)
    s1 = s0 if same_transform else _grouped_pair_cos(u0, ut, i, j, pairs.classes)
    ok = np.abs(s0) > DEGENERATE_SIM
    vals = np.zeros_like(s0)
    vals[ok] = (s1[ok] - s0[ok]) / s0[ok]
    return vals, ok


def simchange(provider, samples, pairs, transform, cache=None, store=True, base_sims=None):
    """SimChange distribution per class and pooled over all pairs.

    ``base_sims`` optionally supplies the untransformed pair cosines, which
    do not depend on the transform and can be shared across a catalog.
    """
    cache = cache if isinstance(cache, UnitCache) else UnitCache(provider, samples)
    u0 = cache.base()
    ut = cache.get(transform, store=store)
    vals, ok = simchange_values(u0, ut, pairs, ut is u0, cache.rows, base_sims)
    label = transform_label(transform)
    per_class = {}
    for cls in sorted(set(pairs.classes.tolist()), key=str):
        m = pairs.classes == cls
        per_class[cls] = MetricDistribution("simchange", label, vals[m & ok],
                                            excluded=int((m & ~ok).sum()), cls=str(cls))
    pooled = MetricDistribution("simchange", label, vals[ok], excluded=int((~ok).sum()))
    return SimChangeResult(label, pooled, per_class)


def simchange_grid(provider, samples, pairs, transforms, cache=None, jobs=1):
    """SimChange for every transform in a catalog; returns a list of results."""
    cache = cache if isinstance(cache, UnitCache) else UnitCache(provider, samples)
    u0 = cache.base()
    rows = cache.rows
    s0 = _grouped_pair_cos(u0, u0, rows[pairs.i], rows[pairs.j], pairs.classes)

    def one(t):
        return simchange(provider, samples, pairs, t, cache, False, s0)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, transforms))
    return [one(t) for t in transforms]
