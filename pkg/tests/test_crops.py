import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import structured
from invarlab.crops import (
    BetaRRC, Composite, FixedSizeCenterCrop, FixedSizeRandomCrop, RandomResizedCrop,
    RandomSizeCenterCrop, TranslatePct, eval_augmentation_sweep, inverse_scale_mean,
    inverse_scale_variance, parse_policy, sample_scale, sample_scales, sweep_values,
)
from invarlab.errors import ConfigError
from invarlab.image import Image


def disk_image(size, radius):
    y, x = np.mgrid[0:size, 0:size] + 0.5 - size / 2
    v = (np.hypot(x, y) <= radius).astype(np.float64)
    return Image(np.repeat(v[..., None], 3, axis=2))


class TestPolicies:
    def test_fixed_center_crop(self):
        img = Image(structured(256, 1))
        out, sample = FixedSizeCenterCrop(256, 224).sample_and_apply(img)
        assert out.size == (224, 224)
        assert sample.rect == (16, 16, 224, 224)
        np.testing.assert_array_equal(out.data, img.data[16:240, 16:240])

    def test_degenerate_rrc_is_full_image(self):
        img = Image(structured(32, 2))
        pol = RandomResizedCrop(1.0, 1.0, 1.0, 1.0, out=32)
        out, sample = pol.sample_and_apply(img, 7)
        assert sample.rect == (0, 0, 32, 32)
        np.testing.assert_array_equal(out.data, img.data)

    def test_max_enlargement(self):
        assert 1 / RandomResizedCrop().s_minus == pytest.approx(12.5)

    def test_translate_zero_equals_center_crop(self):
        img = Image(structured(40, 3))
        a, _ = TranslatePct(0.0, 40, 32).sample_and_apply(img, 5)
        b, _ = FixedSizeCenterCrop(40, 32).sample_and_apply(img)
        np.testing.assert_array_equal(a.data, b.data)

    def test_translate_exposes_black_fill(self):
        img = Image(np.ones((40, 40, 3)))
        out, sample = TranslatePct(0.5, 40, 40).sample_and_apply(img, 3)
        tx, ty = sample.translation
        assert (tx, ty) != (0, 0)
        assert out.data.min() == 0.0

    def test_composite_and_fallback(self):
        img = Image(structured(24, 4))
        out, sample = Composite(TranslatePct(0.1, 24, 24), RandomSizeCenterCrop(out=16)).sample_and_apply(img, 1)
        assert out.size == (16, 16)
        # an aspect window far from the image ratio forces the deterministic fallback
        wide = Image(np.zeros((10, 100, 3)))
        _, fb = RandomResizedCrop(0.9, 1.0, 0.5, 0.6, out=8).sample_and_apply(wide, 0)
        assert fb.fallback and fb.attempts == 10

    def test_reproducible(self):
        img = Image(structured(32, 5))
        for pol in (RandomResizedCrop(out=16), BetaRRC(1, 3, out=16), FixedSizeRandomCrop(32, 20),
                    TranslatePct(0.3, 32, 24)):
            a, sa = pol.sample_and_apply(img, (4, 2))
            b, sb = pol.sample_and_apply(img, (4, 2))
            np.testing.assert_array_equal(a.data, b.data)
            assert sa == sb

    @settings(max_examples=80, deadline=None)
    @given(st.integers(4, 60), st.integers(4, 60), st.floats(0.01, 1.0), st.integers(0, 10_000))
    def test_rect_in_bounds(self, w, h, s_lo, seed):
        img = Image(np.zeros((h, w, 3)))
        _, sample = RandomResizedCrop(s_lo, 1.0, out=4).sample_and_apply(img, seed)
        x0, y0, cw, ch = sample.rect
        assert 0 <= x0 and 0 <= y0 and cw >= 1 and ch >= 1
        assert x0 + cw <= w and y0 + ch <= h

    @pytest.mark.parametrize("text,cls", [
        ("rrc(s=0.08..1,out=224)", RandomResizedCrop), ("beta_rrc(a=1,b=3)", BetaRRC),
        ("rscc(aspect=0)", RandomSizeCenterCrop), ("fscc(resize=256,out=224)", FixedSizeCenterCrop),
        ("t(0.3)", TranslatePct), ("t(0.3)+rscc()", Composite),
    ])
    def test_parse_policy(self, text, cls):
        assert isinstance(parse_policy(text), cls)

    @pytest.mark.parametrize("text", ["rrc(s=2..1)", "bogus()", "rrc(zz=1)", "beta_rrc(a=-1)"])
    def test_parse_policy_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_policy(text)


class TestScaleDistribution:
    def test_scale_in_range(self):
        rng = np.random.default_rng(0)
        for pol in (RandomResizedCrop(), BetaRRC(1, 0.1), BetaRRC(1, 10)):
            for _ in range(200):
                assert pol.s_minus <= sample_scale(pol, rng) <= pol.s_plus

    def test_vectorized_matches_scalar_stream(self):
        pol = BetaRRC(2, 3)
        a = sample_scales(pol, 5, 9)
        rng = np.random.default_rng(np.random.SeedSequence([9]))
        b = pol.s_minus + (pol.s_plus - pol.s_minus) * rng.beta(2, 3, size=5)
        np.testing.assert_array_equal(a, b)

    def test_beta_one_one_is_uniform(self):
        s = sample_scales(BetaRRC(1, 1), 100_000, 1)
        assert stats.kstest(s, stats.uniform(0.08, 0.92).cdf).pvalue > 0.01

    def test_rrc_uniform(self):
        s = sample_scales(RandomResizedCrop(), 100_000, 2)
        assert stats.kstest(s, stats.uniform(0.08, 0.92).cdf).pvalue > 0.01

    def test_closed_form_mean(self):
        assert inverse_scale_mean(1, 1) == pytest.approx(0.54)
        for beta in (0.1, 1, 3, 10):
            want = (1 / (1 + beta)) * (1 - 0.08) + 0.08
            assert inverse_scale_mean(1, beta) == pytest.approx(want)
            got = sample_scales(BetaRRC(1, beta), 200_000, 3).mean()
            assert got == pytest.approx(want, abs=4e-3)

    def test_large_beta_concentrates_near_lower_bound(self):
        small = sample_scales(BetaRRC(1, 1), 20_000, 4)
        large = sample_scales(BetaRRC(1, 1000), 20_000, 4)
        assert np.median(large) < 0.081
        # first-order stochastic dominance on a grid of thresholds
        for t in np.linspace(0.08, 1, 20):
            assert np.mean(large <= t) >= np.mean(small <= t)

    def test_variance_estimate_has_standard_error(self):
        est = inverse_scale_variance(1, 1, n_samples=100_000, rng=0)
        assert est.n == 100_000 and 0 < est.se < 0.1 * est.estimate

    def test_uniform_variance_closed_form(self):
        # for s ~ U(a, b): E[1/s] = ln(b/a)/(b-a), E[1/s^2] = 1/(a b)
        a, b = 0.08, 1.0
        m1 = math.log(b / a) / (b - a)
        want = 1 / (a * b) - m1 * m1
        est = inverse_scale_variance(1, 1, n_samples=500_000, rng=1)
        assert abs(est.estimate - want) < 4 * est.se


class TestSweep:
    def classifier(self, img):
        m = img.data.mean()
        return np.array([0.3 - m, m - 0.3])

    def dataset(self):
        imgs = [disk_image(32, r) for r in (5, 6, 7, 11, 12, 13)]
        return imgs, np.array([0, 0, 0, 1, 1, 1])

    def test_values(self):
        vs = sweep_values()
        assert len(vs) == 15 and vs[0] == 1.0 and vs[-1] == 6.0
        assert 1 / 3.5 ** 2 == pytest.approx(0.0816, abs=1e-4)

    def test_v_one_equals_unaugmented(self):
        imgs, labels = self.dataset()
        rows = eval_augmentation_sweep(imgs, labels, self.classifier, vs=[1.0], n_seeds=3)
        base = FixedSizeCenterCrop(32, 32)
        acc = np.mean([np.argmax(self.classifier(base.apply(i))) == y for i, y in zip(imgs, labels)])
        assert rows[0].mean_acc == acc and rows[0].sem == 0.0

    def test_monotone_on_scale_sensitive_classifier(self):
        imgs, labels = self.dataset()
        rows = eval_augmentation_sweep(imgs, labels, self.classifier, vs=sweep_values(8), n_seeds=5)
        accs = [r.mean_acc for r in rows]
        assert accs[0] == 1.0
        assert all(b <= a for a, b in zip(accs, accs[1:]))
        assert accs[-1] < accs[0]
