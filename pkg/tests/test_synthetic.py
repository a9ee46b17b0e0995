import numpy as np
import pytest

from invarlab.embedders import EmbeddingProvider, IntensityCodeEmbedder
from invarlab.errors import ConfigError
from invarlab.factors import rank_transforms
from invarlab.synthetic import (
    PlantedClassSpec, default_specs, generate, oracle_cells, oracle_rank, read_dataset, recovery_rate,
    sampled_rank, taxonomy_specs, top_kind,
)
from invarlab.transforms import KIND_ORDER, TransformKind, catalog, parse_spec


class CenteredAbs(EmbeddingProvider):
    """``|x - 0.5|`` per pixel: exactly invariant to invert."""

    variant = "centered-abs"

    @property
    def dim(self):
        return None

    def _embed_batch(self, batch):
        return np.abs(batch - 0.5).reshape(len(batch), -1) + 0.01


def brute_force_cells(ds, provider, specs):
    """Per-class mean SimChange over every ordered pair, one pair at a time."""
    out = {}
    for idx, cid in enumerate(ds.classes):
        members = np.flatnonzero(ds.labels == idx)
        for spec in specs:
            vals = []
            for a in members:
                for b in members:
                    if a == b:
                        continue
                    fa = provider.embed(ds.images[a])
                    fb = provider.embed(ds.images[b])
                    ft = provider.embed(spec.apply_array(ds.images[b]))
                    s0 = fa @ fb / np.sqrt((fa @ fa) * (fb @ fb))
                    s1 = fa @ ft / np.sqrt((fa @ fa) * (ft @ ft))
                    vals.append((s1 - s0) / s0)
            out[(cid, str(spec))] = np.mean(vals)
    return out


class TestGenerate:
    def test_level_zero_no_noise_identical(self):
        spec = PlantedClassSpec("x", "rotate", levels=(0,), n_samples=6)
        ds = generate([spec], seed=1, size=12)
        assert all(np.array_equal(ds.images[0], im) for im in ds.images)

    def test_same_seed_bit_identical(self):
        specs = default_specs(4, n_samples=5, noise=0.02)
        a, b = generate(specs, seed=3, size=12), generate(specs, seed=3, size=12)
        assert np.array_equal(a.images, b.images) and a.ids == b.ids
        assert not np.array_equal(a.images, generate(specs, seed=4, size=12).images)

    def test_levels_and_quantization(self):
        ds = generate(default_specs(14, n_samples=20), seed=0, size=12)
        assert set(np.unique(ds.levels)) <= {0, 5, 9}
        np.testing.assert_array_equal(np.round(ds.images * 255) / 255, ds.images)
        for k, spec in enumerate(ds.specs):
            assert spec.kind is KIND_ORDER[k]

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            PlantedClassSpec("x", "rotate", levels=(12,))
        with pytest.raises(ConfigError):
            generate([])

    def test_write_read_round_trip(self, tmp_path):
        ds = generate(default_specs(3, n_samples=4, noise=0.05), seed=2, size=8)
        ds.write(tmp_path)
        back = read_dataset(tmp_path)
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.ids == ds.ids and back.specs == ds.specs
        header = (tmp_path / "manifest.csv").read_text().splitlines()[0]
        assert header == "id,class,planted_kind,level,sign"


class TestOracle:
    def test_grouped_oracle_matches_brute_force(self):
        # duplicates (level draws) and unique noisy images both exercise the pair weights
        specs = [PlantedClassSpec("r", "rotate", (0, 9), n_samples=6),
                 PlantedClassSpec("i", "invert", (0, 9), n_samples=5, noise=0.05)]
        ds = generate(specs, seed=5, size=8)
        emb = IntensityCodeEmbedder(levels=16)
        cat = [parse_spec(s) for s in ("rotate:9:+", "invert:9", "contrast:4:-", "posterize:9")]
        want = brute_force_cells(ds, emb, cat)
        for c in oracle_cells(ds, emb, cat):
            assert c.mean == pytest.approx(want[(c.cls, c.spec)], abs=1e-12)

    def test_rotate_vs_invert(self):
        specs = [PlantedClassSpec("rot", "rotate", n_samples=30), PlantedClassSpec("inv", "invert", n_samples=30,
                                                                                   pattern_seed=1)]
        ds = generate(specs, seed=0, size=16)
        r = oracle_rank(ds, IntensityCodeEmbedder(), catalog(range(10)))
        assert {x.cls: top_kind(x) for x in r} == {"rot": TransformKind.ROTATE, "inv": TransformKind.INVERT}

    def test_full_budget_matches_oracle(self):
        ds = generate(default_specs(6, n_samples=10), seed=1, size=12)
        emb = IntensityCodeEmbedder(levels=32)
        cat = catalog([0, 5, 9])
        exact = oracle_rank(ds, emb, cat)
        sampled = sampled_rank(ds, emb, cat, fraction=1.0, seed=0)
        for a, b in zip(exact, sampled):
            assert a.cls == b.cls and a.specs() == b.specs()
            np.testing.assert_allclose([e.mean for e in a.entries], [e.mean for e in b.entries], atol=1e-9)

    def test_invariant_provider_gives_zero(self):
        ds = generate([PlantedClassSpec("inv", "invert", n_samples=12)], seed=0, size=8)
        cells = oracle_cells(ds, CenteredAbs(), [parse_spec(f"invert:{lv}") for lv in range(10)])
        for c in cells:
            assert abs(c.mean) < 1e-12 and c.prop_boosted == 0.0

    def test_default_recovery_small(self):
        ds = generate(default_specs(14, n_samples=16), seed=0, size=16)
        r = oracle_rank(ds, IntensityCodeEmbedder(), catalog(range(10)))
        assert recovery_rate(ds, r) == 1.0

    def test_noise_degrades_monotonically(self):
        cat = catalog(range(10))
        emb = IntensityCodeEmbedder()
        recovery, margin = [], []
        for sigma in (0.0, 0.05, 0.3):
            ds = generate(default_specs(14, n_samples=8, noise=sigma), seed=0, size=16)
            r = rank_transforms(oracle_cells(ds, emb, cat), catalog=[str(c) for c in cat])
            recovery.append(recovery_rate(ds, r))
            gaps = []
            for rk in r:
                kinds = [(parse_spec(e.spec), e.mean) for e in rk.entries]
                planted = max(m for t, m in kinds if t.kind is ds.planted[rk.cls])
                other = max(m for t, m in kinds if t.kind is not ds.planted[rk.cls] and not t.is_identity)
                gaps.append(planted - other)
            margin.append(float(np.mean(gaps)))
        assert recovery[0] == 1.0
        assert recovery[0] >= recovery[1] >= recovery[2] and recovery[2] < 1.0
        assert margin[0] > margin[1] > margin[2]


class TestTaxonomySpecs:
    def test_tree_structure(self):
        specs, tree = taxonomy_specs(per_kind=2, n_samples=3)
        assert len(specs) == 12 and tree.root == "root"
        assert tree.max_depth == 4
        assert sorted(tree.leaves) == sorted(s.class_id for s in specs)
        assert tree.parent[specs[0].class_id] == specs[0].kind.value
