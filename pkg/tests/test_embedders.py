import numpy as np
import pytest

from conftest import structured, structured_batch
from invarlab.embedders import (
    ConvNet, FileStore, FlattenEmbedder, HistogramEmbedder, IntensityCodeEmbedder, LinearHead,
    NoiseEmbedder, SeededConvEmbedder, SeededPatchPoolEmbedder, build_provider, fit_head,
    load_file_store, softmax_cross_entropy, write_file_store,
)
from invarlab.errors import CapabilityError, ConfigError, DuplicateId, MissingEmbedding, ParseError, ShapeError
from invarlab.image import Image


def perceptron_separates(x, y, epochs=1000):
    """Classic perceptron on +-1 labels; True once an epoch makes no mistakes."""
    xb = np.hstack([x, np.ones((len(x), 1))])
    t = np.where(y == 1, 1.0, -1.0)
    w = np.zeros(xb.shape[1])
    for _ in range(epochs):
        mistakes = 0
        for xi, ti in zip(xb, t):
            if ti * (xi @ w) <= 0:
                w += ti * xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False


class TestConv:
    @pytest.fixture
    def x(self):
        return structured(16, 7)

    def test_equivariant_under_all_cyclic_shifts(self, x):
        emb = SeededConvEmbedder(seed=1, input_size=16)
        base = emb.embed(x).reshape(16, 16, -1)
        shifts = [(dy, dx) for dy in range(16) for dx in range(16)]
        batch = np.stack([np.roll(x, s, axis=(0, 1)) for s in shifts])
        out = emb.embed_batch(batch).reshape(len(shifts), 16, 16, -1)
        for k, s in enumerate(shifts):
            np.testing.assert_allclose(out[k], np.roll(base, s, axis=(0, 1)), atol=1e-5)

    def test_gap_invariant_under_all_cyclic_shifts(self, x):
        emb = SeededConvEmbedder(seed=1, input_size=16, pooling="gap")
        batch = np.stack([np.roll(x, (dy, dx), axis=(0, 1)) for dy in range(16) for dx in range(16)])
        out = emb.embed_batch(batch)
        np.testing.assert_allclose(out, np.broadcast_to(out[0], out.shape), atol=1e-5)

    def test_input_size_checked(self, x):
        with pytest.raises(ShapeError):
            SeededConvEmbedder(input_size=32).embed(x)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        net = ConvNet.seeded(3, (4, 3), activation="tanh", pooling="gap", padding="zero")
        x = rng.random((2, 6, 6, 3))
        g_out = rng.normal(size=(2, 3))
        feats, cache = net.forward(x, keep=True)
        gx, gp = net.backward(g_out, cache)
        h = 1e-6
        for idx in [(0, 1, 2, 0), (1, 5, 0, 2)]:
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            num = ((net.forward(xp) - net.forward(xm)) * g_out).sum() / (2 * h)
            assert gx[idx] == pytest.approx(num, rel=1e-6)
        w = net.weights[0]
        wp, wm = w.copy(), w.copy()
        wp[1, 2, 0, 3] += h
        wm[1, 2, 0, 3] -= h
        fp = ConvNet([wp, net.weights[1]], net.biases, "zero", "tanh", "gap").forward(x)
        fm = ConvNet([wm, net.weights[1]], net.biases, "zero", "tanh", "gap").forward(x)
        assert gp[0][1, 2, 0, 3] == pytest.approx(((fp - fm) * g_out).sum() / (2 * h), rel=1e-6)


class TestOtherProviders:
    def test_histogram_permutation_invariant(self):
        x = structured(16, 2)
        rng = np.random.default_rng(1)
        flat = x.reshape(-1, 3)
        perm = flat[rng.permutation(len(flat))].reshape(x.shape)
        emb = HistogramEmbedder()
        np.testing.assert_array_equal(emb.embed(x), emb.embed(perm))
        for dx in range(16):
            np.testing.assert_array_equal(emb.embed(np.roll(x, dx, axis=1)), emb.embed(x))
        assert emb.embed(x).sum() == pytest.approx(3.0)

    def test_patch_pool_aligned_vs_subpatch_shift(self):
        x = structured(16, 4)
        emb = SeededPatchPoolEmbedder(seed=2, patch=4, input_size=16)
        np.testing.assert_allclose(emb.embed(np.roll(x, (4, 8), axis=(0, 1))), emb.embed(x), atol=1e-12)
        assert np.abs(emb.embed(np.roll(x, 1, axis=1)) - emb.embed(x)).max() > 1e-4

    def test_flatten_and_intensity_code(self):
        x = structured(4, 1)
        np.testing.assert_array_equal(FlattenEmbedder().embed(x), x.ravel())
        code = IntensityCodeEmbedder(levels=8).embed(x).reshape(-1, 8)
        np.testing.assert_allclose(code.sum(axis=1), 1.0)
        # the hat weights reconstruct the intensity exactly
        np.testing.assert_allclose(code @ np.arange(8) / 7, x.ravel(), atol=1e-12)

    def test_noise_ignores_input(self):
        a = NoiseEmbedder(seed=3).embed_batch(np.zeros((4, 2, 2, 3)))
        b = NoiseEmbedder(seed=3).embed_batch(np.ones((4, 2, 2, 3)))
        np.testing.assert_array_equal(a, b)
        assert not NoiseEmbedder.deterministic

    @pytest.mark.parametrize("spec", [
        {"kind": "conv", "seed": 5, "input_size": 8}, {"kind": "conv-gap", "seed": 5, "input_size": 8},
        {"kind": "patch-pool", "seed": 5, "patch": 4, "input_size": 8}, {"kind": "histogram"},
        {"kind": "intensity-code", "levels": 16},
    ])
    def test_determinism(self, spec):
        batch = structured_batch(5, 8, seed=9)
        np.testing.assert_array_equal(build_provider(spec).embed_batch(batch),
                                      build_provider(spec).embed_batch(batch))

    def test_build_provider_errors(self):
        with pytest.raises(ConfigError):
            build_provider({"kind": "resnet"})
        with pytest.raises(ConfigError):
            build_provider({"kind": "histogram", "nope": 1})


class TestHead:
    def test_no_head_is_capability_error(self):
        with pytest.raises(CapabilityError):
            HistogramEmbedder().classify(np.zeros((4, 4, 3)))

    def test_zero_head_equal_logits(self):
        emb = HistogramEmbedder(bins=8).with_head(LinearHead.zeros(24, 3))
        logits = emb.classify(structured(8, 1))
        assert logits.shape == (3,) and np.all(logits == logits[0])

    def test_extreme_inputs_finite(self):
        emb = SeededConvEmbedder(seed=0, input_size=8, pooling="gap")
        emb.with_head(LinearHead(np.ones((8, 2)), np.zeros(2)))
        for v in (0.0, 1.0):
            assert np.all(np.isfinite(emb.classify(Image.blank(8, 8, v))))

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(4, 3))
        y = np.array([0, 2, 1, 2])
        _, g = softmax_cross_entropy(z, y)
        h = 1e-6
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            num = (softmax_cross_entropy(zp, y)[0] - softmax_cross_entropy(zm, y)[0]) / (2 * h)
            assert g[idx] == pytest.approx(num, abs=1e-8)

    def test_separable_fit_reaches_full_accuracy(self):
        rng = np.random.default_rng(4)
        n = 60
        y = rng.integers(0, 2, n)
        x = rng.normal(size=(n, 5))
        x[:, 0] = np.where(y == 1, 1.0, -1.0) * rng.uniform(0.3, 2.0, n)
        assert perceptron_separates(x, y)
        head = fit_head(x, y, epochs=300)
        assert np.mean(np.argmax(head(x), axis=1) == y) == 1.0


class TestFileStore:
    rows = [("a", [1.0, 2.5, -3.0]), ("b", [0.1, 0.2, 0.3])]

    @pytest.mark.parametrize("binary", [False, True])
    def test_round_trip(self, tmp_path, binary):
        p = tmp_path / ("s.bin" if binary else "s.txt")
        write_file_store(self.rows, p, binary=binary)
        store = load_file_store(p)
        assert len(store) == 2 and store.dim == 3 and store.metadata()["source"] == str(p)
        got = store.embed("b")
        want = np.asarray(self.rows[1][1])
        if binary:
            np.testing.assert_array_equal(got, want.astype(np.float32))
        else:
            np.testing.assert_array_equal(got, want)
        np.testing.assert_array_equal(store.embed("a"), [1.0, 2.5, -3.0])

    def test_missing_id(self):
        with pytest.raises(MissingEmbedding):
            FileStore(self.rows).embed("zzz")

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId):
            FileStore(self.rows + [("a", [0.0, 0.0, 0.0])])

    def test_dim_mismatch(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("dim=3 count=2\na\t1,2,3\nb\t1,2\n")
        with pytest.raises(ParseError):
            load_file_store(p)

    @pytest.mark.parametrize("text", ["dim=2\na\t1,2\n", "dim=2 count=2\na\t1,2\n", "dim=2 count=1\na\t1,x\n",
                                      "dim=2 count=1\na 1,2\n", "dim=2 count=1\na\t1,nan\n"])
    def test_malformed_text(self, tmp_path, text):
        p = tmp_path / "bad.txt"
        p.write_text(text)
        with pytest.raises(ParseError):
            load_file_store(p)

    def test_truncated_binary(self, tmp_path):
        p = tmp_path / "s.bin"
        write_file_store(self.rows, p, binary=True)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(ParseError):
            load_file_store(p)
