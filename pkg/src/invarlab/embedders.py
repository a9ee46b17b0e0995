"""Embedding providers: file-backed stores and seeded untrained networks.

Built-in networks have fixed Gaussian weights drawn from a seed, so their
architectural symmetries hold exactly:

* :class:`SeededConvEmbedder` with circular padding and no pooling is
  equivariant to cyclic shifts; with global average pooling it is invariant.
* :class:`SeededPatchPoolEmbedder` is invariant to patch-aligned cyclic
  shifts only.
* :class:`HistogramEmbedder` ignores pixel positions entirely.

Providers embed batches of ``(N, H, W, 3)`` arrays; :func:`embed` handles a
single :class:`~invarlab.image.Image`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapabilityError, ConfigError, DuplicateId, MissingEmbedding, ParseError, ShapeError
from .image import Image


def _as_batch(images):
    if isinstance(images, Image):
        return images.data[None]
    if isinstance(images, np.ndarray):
        return images[None] if images.ndim == 3 else images
    return np.stack([im.data if isinstance(im, Image) else np.asarray(im) for im in images])


# ------------------------------------------------------------ classifier head

@dataclass
class LinearHead:
    """Trainable linear map from embeddings to class logits."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, dim, n_classes):
        return cls(np.zeros((dim, n_classes)), np.zeros(n_classes))

    @property
    def n_classes(self):
        return self.bias.shape[0]

    def __call__(self, emb):
        return emb @ self.weight + self.bias


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def fit_head(features, labels, n_classes=None, epochs=500, lr=0.5, weight_decay=0.0):
    """Full-batch gradient descent on softmax cross-entropy for a linear head."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    scale = np.abs(features).max() or 1.0
    x = features / scale
    head = LinearHead.zeros(x.shape[1], n_classes)
    for _ in range(epochs):
        _, g = softmax_cross_entropy(head(x), labels)
        head.weight -= lr * (x.T @ g + weight_decay * head.weight)
        head.bias -= lr * g.sum(axis=0)
    head.weight /= scale
    return head


# ------------------------------------------------------------ providers

class EmbeddingProvider:
    """Base class. Subclasses implement ``_embed_batch`` on ``(N, H, W, 3)``."""

    variant = "base"
    deterministic = True
    input_size = None
    seed = None

    def __init__(self):
        self.head = None

    @property
    def dim(self):
        raise NotImplementedError

    @property
    def classifier_head(self):
        return self.head

    def metadata(self):
        return {"variant": self.variant, "seed": self.seed, "dim": self.dim,
                "deterministic": self.deterministic, "input_size": self.input_size}

    def _check(self, batch):
        if batch.ndim != 4 or batch.shape[-1] != 3:
            raise ShapeError(f"expected (N, H, W, 3) images, got {batch.shape}")
        if self.input_size is not None and batch.shape[1:3] != (self.input_size, self.input_size):
            raise ShapeError(
                f"{self.variant} expects {self.input_size}x{self.input_size} inputs, "
                f"got {batch.shape[2]}x{batch.shape[1]}"
            )

    def embed_batch(self, images):
        batch = _as_batch(images)
        self._check(batch)
        return self._embed_batch(np.asarray(batch, dtype=np.float64))

    def embed(self, img):
        return self.embed_batch(img)[0]

    def with_head(self, head):
        self.head = head
        return self

    def classify(self, img):
        return self.classify_batch(img)[0]

    def classify_batch(self, images):
        if self.head is None:
            raise CapabilityError(f"{self.variant} provider has no classifier head")
        return self.head(self.embed_batch(images))


def embed(provider, img):
    return provider.embed(img)


def classify(provider, img):
    return provider.classify(img)


def shift_zero(x, dy, dx):
    """``out[y, x] = x[y + dy, x + dx]`` with zeros outside (axes 1 and 2)."""
    if dy == 0 and dx == 0:
        return x
    out = np.zeros_like(x)
    h, w = x.shape[1], x.shape[2]
    out[:, max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)] = \
        x[:, max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)]
    return out


def shift_circular(x, dy, dx):
    if dy == 0 and dx == 0:
        return x
    return np.roll(x, (-dy, -dx), axis=(1, 2))


_TAPS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


class ConvNet:
    """Stack of 3x3 stride-1 convolutions with manual forward/backward.

    Layer ``l`` computes ``z = sum_taps shift(a, dy, dx) @ W[dy+1, dx+1] + b``;
    every layer but the last applies the activation (``activate_last`` adds it
    to the last one too). Pooling is ``"none"`` (flatten in (H, W, C) order) or
    ``"gap"`` (mean over positions).
    """

    def __init__(self, weights, biases, padding="circular", activation="relu",
                 pooling="none", activate_last=False):
        if padding not in ("circular", "zero"):
            raise ConfigError(f"padding must be circular or zero, got {padding!r}")
        if activation not in ("relu", "tanh"):
            raise ConfigError(f"activation must be relu or tanh, got {activation!r}")
        if pooling not in ("none", "gap"):
            raise ConfigError(f"pooling must be none or gap, got {pooling!r}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.padding = padding
        self.activation = activation
        self.pooling = pooling
        self.activate_last = activate_last
        self._shift = shift_circular if padding == "circular" else shift_zero

    @classmethod
    def seeded(cls, seed, channels=(8, 8), in_channels=3, bias_scale=0.1, **kw):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        weights, biases = [], []
        cin = in_channels
        gain = 2.0 if kw.get("activation", "relu") == "relu" else 1.0
        for cout in channels:
            weights.append(rng.normal(0.0, math.sqrt(gain / (9 * cin)), size=(3, 3, cin, cout)))
            biases.append(rng.normal(0.0, bias_scale, size=cout))
            cin = cout
        return cls(weights, biases, **kw)

    @property
    def out_channels(self):
        return self.weights[-1].shape[-1]

    def params(self):
        return self.weights + self.biases

    def set_params(self, params):
        n = len(self.weights)
        self.weights = [np.asarray(p, dtype=np.float64) for p in params[:n]]
        self.biases = [np.asarray(p, dtype=np.float64) for p in params[n:]]

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z, a, g):
        return g * (z > 0) if self.activation == "relu" else g * (1.0 - a * a)

    def forward(self, x, keep=False):
        """Map ``(N, H, W, C)`` inputs to pooled/flattened features."""
        cache = []
        a = x
        h, w_ = x.shape[1], x.shape[2]
        last = len(self.weights) - 1
        pad_mode = "wrap" if self.padding == "circular" else "constant"
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            # one padded copy per layer; each tap reads a shifted view of it
            p = np.pad(a, ((0, 0), (1, 1), (1, 1), (0, 0)), mode=pad_mode)
            z = np.broadcast_to(b, a.shape[:3] + b.shape).copy()
            for dy, dx in _TAPS:
                z += p[:, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w_] @ w[dy + 1, dx + 1]
            out = self._act(z) if (i < last or self.activate_last) else z
            if keep:
                cache.append((a, z, out))
            a = out
        feats = a.mean(axis=(1, 2)) if self.pooling == "gap" else a.reshape(a.shape[0], -1)
        return (feats, cache) if keep else feats

    def backward(self, grad_feats, cache):
        """Gradients of a scalar loss with respect to input and parameters."""
        a_last = cache[-1][2]
        n, h, w, c = a_last.shape
        if self.pooling == "gap":
            g = np.broadcast_to(grad_feats[:, None, None, :] / (h * w), a_last.shape).copy()
        else:
            g = grad_feats.reshape(a_last.shape)
        last = len(self.weights) - 1
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(last, -1, -1):
            a_in, z, out = cache[i]
            if i < last or self.activate_last:
                g = self._act_grad(z, out, g)
            wt = self.weights[i]
            gb[i] = g.sum(axis=(0, 1, 2))
            gwi = np.empty_like(wt)
            gin = np.zeros_like(a_in)
            flat_g = g.reshape(-1, g.shape[-1])
            for dy, dx in _TAPS:
                shifted = self._shift(a_in, dy, dx)
                gwi[dy + 1, dx + 1] = shifted.reshape(-1, shifted.shape[-1]).T @ flat_g
                gin += self._shift(g @ wt[dy + 1, dx + 1].T, -dy, -dx)
            gw[i] = gwi
            g = gin
        return g, gw + gb


class SeededConvEmbedder(EmbeddingProvider):
    """Untrained 3x3 conv stack with seeded Gaussian weights."""

    variant = "conv"
    chunk = 32

    def __init__(self, seed=0, channels=(8, 8), input_size=64, padding="circular",
                 activation="relu", pooling="none", activate_last=False):
        super().__init__()
        self.seed = seed
        self.input_size = input_size
        self.channels = tuple(channels)
        self.net = ConvNet.seeded(seed, channels, padding=padding, activation=activation,
                                  pooling=pooling, activate_last=activate_last)
        self.variant = "conv-gap" if pooling == "gap" else "conv"

    @property
    def pooling(self):
        return self.net.pooling

    @property
    def dim(self):
        c = self.net.out_channels
        if self.net.pooling == "gap":
            return c
        return c * self.input_size * self.input_size if self.input_size else None

    def metadata(self):
        meta = super().metadata()
        meta.update(channels=list(self.channels), padding=self.net.padding,
                    activation=self.net.activation, pooling=self.net.pooling)
        return meta

    def _embed_batch(self, batch):
        # small chunks keep the per-layer activations cache-sized
        if len(batch) <= self.chunk:
            return self.net.forward(batch)
        return np.concatenate([self.net.forward(batch[k:k + self.chunk])
                               for k in range(0, len(batch), self.chunk)])


class SeededPatchPoolEmbedder(EmbeddingProvider):
    """Shared linear map on non-overlapping PxP patches, tanh, mean over patches."""

    variant = "patch-pool"

    def __init__(self, seed=0, patch=8, out_dim=64, input_size=64):
        super().__init__()
        if input_size % patch:
            raise ConfigError(f"input size {input_size} is not a multiple of patch {patch}")
        self.seed = seed
        self.patch = patch
        self.input_size = input_size
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        fan_in = patch * patch * 3
        self.weight = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, out_dim))
        self.bias = rng.normal(0.0, 0.1, size=out_dim)

    @property
    def dim(self):
        return self.weight.shape[1]

    def _embed_batch(self, batch):
        n, h, w, _ = batch.shape
        p = self.patch
        patches = batch.reshape(n, h // p, p, w // p, p, 3).transpose(0, 1, 3, 2, 4, 5)
        patches = patches.reshape(n, (h // p) * (w // p), p * p * 3)
        return np.tanh(patches @ self.weight + self.bias).mean(axis=1)


class HistogramEmbedder(EmbeddingProvider):
    """Per-channel intensity histograms, normalized by the pixel count."""

    variant = "histogram"

    def __init__(self, bins=32):
        super().__init__()
        self.bins = bins

    @property
    def dim(self):
        return 3 * self.bins

    def _embed_batch(self, batch):
        n = batch.shape[0]
        idx = np.minimum((batch * self.bins).astype(np.int64), self.bins - 1)
        idx = idx.reshape(n, -1, 3) + np.arange(3) * self.bins
        offsets = (np.arange(n) * 3 * self.bins)[:, None, None]
        counts = np.bincount((idx + offsets).ravel(), minlength=n * 3 * self.bins)
        return counts.reshape(n, 3 * self.bins) / (idx.shape[1])


class FlattenEmbedder(EmbeddingProvider):
    """Raw pixels in (H, W, C) order."""

    variant = "flatten"

    def __init__(self, input_size=None):
        super().__init__()
        self.input_size = input_size

    @property
    def dim(self):
        return 3 * self.input_size ** 2 if self.input_size else None

    def _embed_batch(self, batch):
        return batch.reshape(batch.shape[0], -1).copy()


class IntensityCodeEmbedder(EmbeddingProvider):
    """Per-pixel soft one-hot code of every intensity over ``levels`` bins.

    Each pixel channel ``v`` becomes the hat-function weights
    ``max(0, 1 - |v (levels - 1) - k|)`` for ``k = 0 .. levels-1`` (at most two
    non-zero). The cosine between two codes is dominated by pixels whose
    intensities agree to within one bin, so the embedding reacts strongly to
    any geometric or photometric change while staying non-negative.
    """

    variant = "intensity-code"

    def __init__(self, levels=64, input_size=None):
        super().__init__()
        if levels < 2:
            raise ConfigError("need at least two intensity levels")
        self.levels = int(levels)
        self.input_size = input_size

    @property
    def dim(self):
        return 3 * self.levels * self.input_size ** 2 if self.input_size else None

    def metadata(self):
        meta = super().metadata()
        meta["levels"] = self.levels
        return meta

    def _embed_batch(self, batch):
        n = batch.shape[0]
        pos = batch.reshape(n, -1) * (self.levels - 1)
        lo = np.minimum(np.floor(pos).astype(np.int64), self.levels - 2)
        frac = pos - lo
        out = np.zeros((n, pos.shape[1], self.levels))
        rows = np.arange(n)[:, None]
        cols = np.arange(pos.shape[1])[None, :]
        out[rows, cols, lo] = 1.0 - frac
        out[rows, cols, lo + 1] = frac
        return out.reshape(n, -1)


class NoiseEmbedder(EmbeddingProvider):
    """Gaussian vectors that ignore the input (a null model for the metrics)."""

    variant = "noise"
    deterministic = False

    def __init__(self, seed=0, out_dim=32):
        super().__init__()
        self.seed = seed
        self.out_dim = out_dim
        self._rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))

    @property
    def dim(self):
        return self.out_dim

    def _embed_batch(self, batch):
        return self._rng.normal(size=(batch.shape[0], self.out_dim))


# ------------------------------------------------------------ file store

_BIN_MAGIC = b"IVEMB\x00\x01\x00"


class FileStore(EmbeddingProvider):
    """Precomputed embeddings keyed by sample id.

    Embeddings of transformed samples are stored under ``"<id>|<spec>"``.
    """

    variant = "file"

    def __init__(self, vectors, source=""):
        super().__init__()
        self._index = {}
        rows = []
        dim = None
        for key, vec in vectors:
            vec = np.asarray(vec, dtype=np.float64)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape != (dim,):
                raise ParseError(f"row {key!r} has dimension {vec.shape[0]}, expected {dim}")
            if key in self._index:
                raise DuplicateId(f"duplicate id {key!r}")
            self._index[key] = len(rows)
            rows.append(vec)
        self._matrix = np.array(rows) if rows else np.zeros((0, 0))
        self._dim = dim or 0
        self.source = source

    @property
    def dim(self):
        return self._dim

    @property
    def ids(self):
        return list(self._index)

    def __contains__(self, key):
        return key in self._index

    def __len__(self):
        return len(self._index)

    def metadata(self):
        meta = super().metadata()
        meta.update(source=self.source, count=len(self))
        return meta

    def lookup(self, key):
        try:
            return self._matrix[self._index[key]].copy()
        except KeyError:
            raise MissingEmbedding(key) from None

    def lookup_many(self, keys):
        try:
            return self._matrix[[self._index[k] for k in keys]]
        except KeyError as exc:
            raise MissingEmbedding(exc.args[0]) from None

    def embed(self, key):
        if not isinstance(key, str):
            raise ShapeError("a file store embeds sample ids, not images")
        return self.lookup(key)

    def embed_batch(self, keys):
        return self.lookup_many(list(keys))


def transformed_key(sample_id, spec):
    return f"{sample_id}|{spec}"


def _parse_text_store(buf, source):
    text = buf.decode("utf-8")
    nl = text.find("\n")
    header = text if nl < 0 else text[:nl]
    fields = dict(part.split("=", 1) for part in header.split() if "=" in part)
    try:
        dim, count = int(fields["dim"]), int(fields["count"])
    except (KeyError, ValueError):
        raise ParseError("header must read 'dim=<d> count=<n>'", 0) from None
    rows = []
    offset = len(header.encode("utf-8")) + 1
    for line in text[nl + 1:].split("\n") if nl >= 0 else []:
        raw_len = len(line.encode("utf-8")) + 1
        if line.strip():
            if "\t" not in line:
                raise ParseError("row must read 'id<TAB>v1,v2,...'", offset)
            key, vals = line.split("\t", 1)
            try:
                vec = [float(v) for v in vals.split(",")]
            except ValueError:
                raise ParseError(f"non-numeric value in row {key!r}", offset) from None
            if len(vec) != dim:
                raise ParseError(f"row {key!r} has {len(vec)} values, expected {dim}", offset)
            if not all(math.isfinite(v) for v in vec):
                raise ParseError(f"non-finite value in row {key!r}", offset)
            rows.append((key, vec))
        offset += raw_len
    if len(rows) != count:
        raise ParseError(f"header declares {count} rows, found {len(rows)}", offset)
    return FileStore(rows, source)


def _parse_binary_store(buf, source):
    pos = len(_BIN_MAGIC)
    if len(buf) < pos + 8:
        raise ParseError("truncated binary store header", len(buf))
    dim, count = struct.unpack_from("<II", buf, pos)
    pos += 8
    rows = []
    for _ in range(count):
        if len(buf) < pos + 4:
            raise ParseError("truncated id length", pos)
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if len(buf) < pos + n + 4 * dim:
            raise ParseError("truncated row", pos)
        key = buf[pos:pos + n].decode("utf-8")
        pos += n
        vec = np.frombuffer(buf, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += 4 * dim
        rows.append((key, vec))
    if pos != len(buf):
        raise ParseError("trailing bytes after the last row", pos)
    return FileStore(rows, source)


def load_file_store(path):
    """Load a text (``dim=<d> count=<n>`` header) or binary embedding store."""
    path = Path(path)
    buf = path.read_bytes()
    if buf.startswith(_BIN_MAGIC):
        return _parse_binary_store(buf, str(path))
    return _parse_text_store(buf, str(path))


def write_file_store(rows, path, binary=False):
    """Write ``(id, vector)`` rows. Text uses ``repr`` floats so it round-trips."""
    rows = [(k, np.asarray(v, dtype=np.float64)) for k, v in rows]
    dim = rows[0][1].shape[0] if rows else 0
    path = Path(path)
    if binary:
        parts = [_BIN_MAGIC, struct.pack("<II", dim, len(rows))]
        for key, vec in rows:
            raw = key.encode("utf-8")
            parts += [struct.pack("<I", len(raw)), raw, vec.astype("<f4").tobytes()]
        path.write_bytes(b"".join(parts))
        return
    lines = [f"dim={dim} count={len(rows)}"]
    lines += [f"{k}\t" + ",".join(repr(float(x)) for x in v) for k, v in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_provider(spec):
    """Construct a built-in provider from a config mapping (``{"kind": ...}``)."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    table = {
        "conv": SeededConvEmbedder,
        "conv-gap": lambda **kw: SeededConvEmbedder(pooling="gap", **kw),
        "patch-pool": SeededPatchPoolEmbedder,
        "histogram": HistogramEmbedder,
        "flatten": FlattenEmbedder,
        "intensity-code": IntensityCodeEmbedder,
        "noise": NoiseEmbedder,
    }
    if kind == "file":
        if "path" not in spec:
            raise ConfigError("file provider needs a path", "provider.path")
        return load_file_store(spec["path"])
    if kind not in table:
        raise ConfigError(f"unknown provider kind {kind!r}", "provider.kind")
    try:
        if "channels" in spec:
            spec["channels"] = tuple(spec["channels"])
        return table[kind](**spec)
    except TypeError as exc:
        raise ConfigError(str(exc), "provider") from None
