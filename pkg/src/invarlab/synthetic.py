"""Synthetic datasets with planted, class-specific factors of variation.

Every class has a procedural base texture ``B``. Each sample applies the
class's planted transform at a level drawn uniformly from the class's level
set (level 0 leaves ``B`` untouched), adds optional Gaussian noise and is
quantized to 8 bits, so the in-memory dataset equals its on-disk PPM copy.

Base textures are sums of a few random plane waves per channel whose
wave-vector components are capped at ``2 * freq`` (in units of pi per half
image), which keeps them smooth enough for bilinear warps. The texture is
rescaled to ``[lo, hi]`` and clipped to [0, 1]; the default ``lo = -0.1``
leaves a few exact zeros, which separates invert from solarize at its
largest level.

Some planted kinds need a matching texture to be visible at all, e.g.
autocontrast does nothing to an image that already spans [0, 1]; those
defaults live in ``KIND_PROFILES``. Solarize is planted at level 5 by
default because at level 9 it coincides with invert on every non-zero pixel.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .factors import SimCell, rank_transforms
from .image import Image, quantize, read_image, write_image
from .metrics import SampleSet, make_pairs, simchange_grid
from .transforms import KIND_ORDER, TransformKind, TransformSpec, apply_array, parse_kind, parse_spec

KIND_PROFILES = {
    TransformKind.AUTOCONTRAST: {"lo": 0.3, "hi": 0.7},
    TransformKind.SHARPNESS: {"freq": 8.0},
}
PLANTED_LEVEL = {TransformKind.SOLARIZE: 5}
DEFAULT_SIZE = 32


@dataclass(frozen=True)
class PlantedClassSpec:
    class_id: str
    kind: TransformKind
    levels: tuple = (0, 9)
    sign: str = "+"
    pattern_seed: int = 0
    noise: float = 0.0
    n_samples: int = 200
    freq: float = 3.0
    lo: float = -0.1
    hi: float = 1.0

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, TransformKind) else parse_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        if not self.levels:
            raise ConfigError("a planted class needs at least one level", "levels")
        for lv in self.levels:
            TransformSpec(kind, lv, self.sign)
        if self.noise < 0 or self.n_samples < 1:
            raise ConfigError("noise must be >= 0 and n_samples >= 1")

    def spec(self, level):
        return TransformSpec(self.kind, level, self.sign)

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        d["levels"] = list(self.levels)
        return d


def default_specs(n_classes=20, n_samples=200, noise=0.0, size_hint=None):
    """One class per kind in catalog order, cycling when ``n_classes > 14``."""
    specs = []
    for c in range(n_classes):
        kind = KIND_ORDER[c % len(KIND_ORDER)]
        level = PLANTED_LEVEL.get(kind, 9)
        specs.append(PlantedClassSpec(f"c{c:02d}", kind, (0, level), "+", pattern_seed=c,
                                      noise=noise, n_samples=n_samples, **KIND_PROFILES.get(kind, {})))
    return specs


def base_pattern(rng, size, freq=3.0, n_waves=6, lo=-0.1, hi=1.0):
    """Smooth random RGB texture, rescaled to ``[lo, hi]`` and clipped to [0, 1]."""
    y, x = (np.mgrid[0:size, 0:size] + 0.5) / size * 2.0 - 1.0
    img = np.zeros((size, size, 3))
    for c in range(3):
        for _ in range(n_waves):
            k = np.clip(rng.normal(0.0, freq, 2), -2 * freq, 2 * freq)
            phase = rng.uniform(0.0, 2 * np.pi)
            img[..., c] += np.cos(np.pi * (k[0] * x + k[1] * y) + phase)
    img = img / np.abs(img).max()
    return np.clip(lo + (hi - lo) * (0.5 + 0.5 * img), 0.0, 1.0)


def _q(arr):
    return quantize(arr).astype(np.float64) / 255.0


@dataclass
class SyntheticDataset:
    images: np.ndarray
    labels: np.ndarray
    ids: list
    classes: list
    specs: list
    levels: np.ndarray
    seed: int = 0
    bases: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    @property
    def planted(self):
        return {s.class_id: s.kind for s in self.specs}

    def samples(self):
        return SampleSet(self.ids, self.images, self.labels)

    def class_id(self, label):
        return self.classes[int(label)]

    def manifest_rows(self):
        rows = []
        for k, sid in enumerate(self.ids):
            spec = self.specs[int(self.labels[k])]
            rows.append({"id": sid, "class": spec.class_id, "planted_kind": spec.kind.value,
                         "level": int(self.levels[k]), "sign": spec.sign})
        return rows

    def write(self, directory):
        """Write ``<id>.ppm`` files, ``manifest.csv`` and ``classes.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for sid, img in zip(self.ids, self.images):
            write_image(Image(img, copy=False), directory / f"{sid}.ppm")
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["id", "class", "planted_kind", "level", "sign"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.manifest_rows())
        (directory / "manifest.csv").write_text(buf.getvalue(), encoding="utf-8")
        meta = {"schema_version": 1, "seed": self.seed, "classes": [s.to_dict() for s in self.specs]}
        (directory / "classes.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")


def generate(specs, seed=0, size=DEFAULT_SIZE):
    """Render every planted class. Same ``seed`` gives a bit-identical dataset."""
    specs = list(specs)
    if not specs:
        raise ConfigError("no classes to generate")
    images, labels, ids, levels, bases = [], [], [], [], {}
    for idx, spec in enumerate(specs):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(spec.pattern_seed), idx]))
        base = _q(base_pattern(rng, size, spec.freq, lo=spec.lo, hi=spec.hi))
        bases[spec.class_id] = base
        rendered = {lv: _q(apply_array(spec.spec(lv), base)) for lv in sorted(set(spec.levels))}
        draws = rng.choice(np.array(spec.levels), size=spec.n_samples)
        for k, lv in enumerate(draws):
            img = rendered[int(lv)]
            if spec.noise > 0:
                img = _q(np.clip(img + rng.normal(0.0, spec.noise, img.shape), 0.0, 1.0))
            images.append(img)
            labels.append(idx)
            ids.append(f"{spec.class_id}_{k:04d}")
            levels.append(int(lv))
    return SyntheticDataset(np.array(images), np.array(labels), ids, [s.class_id for s in specs],
                            specs, np.array(levels), seed, bases)


def read_dataset(directory):
    """Load a dataset written by :meth:`SyntheticDataset.write`."""
    directory = Path(directory)
    try:
        meta = json.loads((directory / "classes.json").read_text(encoding="utf-8"))
        rows = list(csv.DictReader(io.StringIO((directory / "manifest.csv").read_text(encoding="utf-8"))))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read dataset in {directory}: {exc}") from None
    specs = []
    for d in meta["classes"]:
        d = dict(d)
        d["levels"] = tuple(d["levels"])
        specs.append(PlantedClassSpec(**d))
    index = {s.class_id: k for k, s in enumerate(specs)}
    images = np.array([read_image(directory / f"{r['id']}.ppm").data for r in rows])
    labels = np.array([index[r["class"]] for r in rows])
    return SyntheticDataset(images, labels, [r["id"] for r in rows], [s.class_id for s in specs],
                            specs, np.array([int(r["level"]) for r in rows]), int(meta.get("seed", 0)))


# ------------------------------------------------------------ oracle

def _unit(e):
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def oracle_cells(dataset, provider, catalog):
    """Exact per-class SimChange summaries over every ordered same-class pair.

    Identical images are grouped, so a class with ``m`` samples is evaluated
    as a weighted sum over its distinct images: the ordered pair (a, b) of
    distinct images occurs ``n_a * n_b`` times and (a, a) ``n_a * (n_a - 1)``
    times.
    """
    catalog = [parse_spec(c) if isinstance(c, str) else c for c in catalog]
    cells = []
    for idx, cid in enumerate(dataset.classes):
        members = dataset.images[dataset.labels == idx]
        uniq, counts = np.unique(members.reshape(len(members), -1), axis=0, return_counts=True)
        uniq = uniq.reshape((-1,) + members.shape[1:])
        weights = np.outer(counts, counts) - np.diag(counts)
        u0 = _unit(provider.embed_batch(uniq))
        s0 = u0 @ u0.T
        for spec in catalog:
            if spec.is_identity:
                s1 = s0
            else:
                s1 = u0 @ _unit(provider.embed_batch(apply_array(spec, uniq))).T
            ok = np.abs(s0) > 1e-9
            w = np.where(ok, weights, 0)
            vals = np.where(ok, (s1 - s0) / np.where(ok, s0, 1.0), 0.0)
            total = w.sum()
            pos = vals > 0
            mean = float((w * vals).sum() / total)
            prop = float(w[pos].sum() / total)
            wb = float((w * vals)[pos].sum() / total)
            cells.append(SimCell(cid, str(spec), mean, prop, wb, int(total)))
    return cells


def oracle_rank(dataset, provider, catalog, key="mean"):
    return rank_transforms(oracle_cells(dataset, provider, catalog), key=key,
                           catalog=[str(c) for c in catalog])


def sampled_rank(dataset, provider, catalog, fraction=None, budget=None, seed=0, key="mean", jobs=1):
    """The sampled SimChange pipeline: pair sampling, catalog sweep, ranking."""
    pairs = make_pairs(dataset.labels, budget=budget, fraction=fraction, seed=seed)
    results = simchange_grid(provider, dataset.samples(), pairs, catalog, jobs=jobs)
    for r in results:
        r.per_class = {dataset.class_id(k): v for k, v in r.per_class.items()}
    return rank_transforms(results, key=key, catalog=[str(c) for c in catalog])


def top_kind(ranking):
    """Kind of the top-ranked spec, or ``None`` when the identity wins."""
    t = parse_spec(ranking.top.spec) if ranking.top.spec != "identity" else None
    if t is None or t.is_identity:
        return None
    return t.kind if isinstance(t, TransformSpec) else None


def recovery_rate(dataset, rankings):
    planted = dataset.planted
    hits = [top_kind(r) == planted[r.cls] for r in rankings]
    return float(np.mean(hits))


# ------------------------------------------------------------ synthetic taxonomy

TAXONOMY_GROUPS = {
    "geometric": (TransformKind.ROTATE, TransformKind.SHEAR_X, TransformKind.TRANSLATE_Y),
    "appearance": (TransformKind.CONTRAST, TransformKind.POSTERIZE, TransformKind.COLOR),
}


def taxonomy_specs(per_kind=3, n_samples=40, groups=None):
    """Planted classes arranged as root / group / planted kind / class.

    Classes under the same kind node share their planted factor, classes in
    the same group share its family, so taxonomy similarity tracks how much
    two classes' transform rankings should agree.
    """
    from .taxonomy import TaxonomyTree

    groups = TAXONOMY_GROUPS if groups is None else groups
    specs, edges = [], []
    for group, kinds in groups.items():
        edges.append((group, "root"))
        for kind in kinds:
            kind = parse_kind(kind) if isinstance(kind, str) else kind
            edges.append((kind.value, group))
            for _ in range(per_kind):
                cid = f"t{len(specs):02d}"
                edges.append((cid, kind.value))
                specs.append(PlantedClassSpec(cid, kind, (0, PLANTED_LEVEL.get(kind, 9)), "+",
                                              pattern_seed=100 + len(specs), n_samples=n_samples,
                                              **KIND_PROFILES.get(kind, {})))
    return specs, TaxonomyTree.from_edges(edges)
