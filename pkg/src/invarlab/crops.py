"""Stochastic crop policies: RandomResizedCrop, its Beta-scaled variant and
the decomposed policies that isolate scale, translation and aspect ratio.

Every policy maps an image plus a random stream to an ``out x out`` image and
a :class:`CropSample` recording the realized draw. Crop sizes follow
``w = round(sqrt(s H W r))`` and ``h = round(sqrt(s H W / r))`` with
``log r ~ U(log r-, log r+)``. A draw that does not fit is resampled up to
10 times before falling back to a centered crop with the aspect ratio
clamped into ``[r-, r+]``.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import CapabilityError, ConfigError, GeometryError
from .image import Image, center_crop, crop, resize, resize_shorter_side, round_half_up

MAX_ATTEMPTS = 10


def make_rng(rng):
    """Return ``(generator, seed_path)`` from a Generator, an int or a tuple of ints."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if isinstance(rng, (int, np.integer)):
        path = (int(rng),)
    elif isinstance(rng, (tuple, list)):
        path = tuple(int(v) for v in rng)
    else:
        raise ConfigError(f"cannot build a random stream from {rng!r}")
    return np.random.default_rng(np.random.SeedSequence(list(path))), path


@dataclass(frozen=True)
class CropSample:
    s: Optional[float]
    r: Optional[float]
    rect: tuple
    translation: tuple = (0, 0)
    attempts: int = 0
    fallback: bool = False
    seed_path: Optional[tuple] = None

    def to_dict(self):
        return asdict(self)


def _check_scale(s_minus, s_plus, r_minus, r_plus, out):
    if not 0 < s_minus <= s_plus <= 1:
        raise ConfigError(f"need 0 < s_minus <= s_plus <= 1, got {s_minus}, {s_plus}")
    if not 0 < r_minus <= r_plus:
        raise ConfigError(f"need 0 < r_minus <= r_plus, got {r_minus}, {r_plus}")
    if out < 1:
        raise ConfigError(f"output size must be >= 1, got {out}")


def _crop_dims(s, r, width, height):
    area = s * width * height
    return int(round(math.sqrt(area * r))), int(round(math.sqrt(area / r)))


def _fallback_dims(width, height, r_minus, r_plus):
    ratio = width / height
    if ratio < r_minus:
        w = width
        h = int(round(w / r_minus))
    elif ratio > r_plus:
        h = height
        w = int(round(h * r_plus))
    else:
        w, h = width, height
    w, h = min(w, width), min(h, height)
    if w < 1 or h < 1:
        raise GeometryError(f"no valid fallback crop for a {width}x{height} image")
    return w, h


class _ScaleAspectPolicy:
    """Shared scale / aspect-ratio sampling for the RRC family."""

    def _draw_scale(self, rng):
        return float(rng.uniform(self.s_minus, self.s_plus))

    def _draw_ratio(self, rng):
        if not self._aspect_on:
            return 1.0
        lo, hi = math.log(self.r_minus), math.log(self.r_plus)
        return float(math.exp(rng.uniform(lo, hi)))

    @property
    def _aspect_on(self):
        return True

    def _place(self, w, h, width, height, rng):
        if self.centered:
            return round_half_up((width - w) / 2.0), round_half_up((height - h) / 2.0)
        return int(rng.integers(0, width - w + 1)), int(rng.integers(0, height - h + 1))

    def _sample(self, img, rng, seed_path):
        width, height = img.size
        for attempt in range(1, MAX_ATTEMPTS + 1):
            s = self._draw_scale(rng)
            r = self._draw_ratio(rng)
            w, h = _crop_dims(s, r, width, height)
            if 0 < w <= width and 0 < h <= height:
                x0, y0 = self._place(w, h, width, height, rng)
                return CropSample(s, r, (x0, y0, w, h), attempts=attempt, seed_path=seed_path)
        lo, hi = (self.r_minus, self.r_plus) if self._aspect_on else (1.0, 1.0)
        w, h = _fallback_dims(width, height, lo, hi)
        x0, y0 = round_half_up((width - w) / 2.0), round_half_up((height - h) / 2.0)
        return CropSample(None, None, (x0, y0, w, h), attempts=MAX_ATTEMPTS, fallback=True,
                          seed_path=seed_path)

    def apply_draw(self, img, s, r=1.0):
        """Deterministic crop for a given scale and ratio (no resampling)."""
        width, height = img.size
        w, h = _crop_dims(s, r, width, height)
        if not (0 < w <= width and 0 < h <= height):
            raise GeometryError(f"scale {s} and ratio {r} do not fit a {width}x{height} image")
        x0, y0 = round_half_up((width - w) / 2.0), round_half_up((height - h) / 2.0)
        if not self.centered:
            raise ConfigError("apply_draw is only defined for centered policies")
        return resize(crop(img, x0, y0, w, h), self.out, self.out)

    def sample_and_apply(self, img, rng):
        gen, path = make_rng(rng)
        sample = self._sample(img, gen, path)
        x0, y0, w, h = sample.rect
        return resize(crop(img, x0, y0, w, h), self.out, self.out), sample


@dataclass(frozen=True)
class RandomResizedCrop(_ScaleAspectPolicy):
    s_minus: float = 0.08
    s_plus: float = 1.0
    r_minus: float = 3 / 4
    r_plus: float = 4 / 3
    out: int = 224
    centered = False

    def __post_init__(self):
        _check_scale(self.s_minus, self.s_plus, self.r_minus, self.r_plus, self.out)


@dataclass(frozen=True)
class BetaRRC(_ScaleAspectPolicy):
    """RRC whose scale is ``s- + (s+ - s-) X`` with ``X ~ Beta(alpha, beta)``."""

    alpha: float = 1.0
    beta: float = 1.0
    s_minus: float = 0.08
    s_plus: float = 1.0
    r_minus: float = 3 / 4
    r_plus: float = 4 / 3
    out: int = 224
    centered = False

    def __post_init__(self):
        _check_scale(self.s_minus, self.s_plus, self.r_minus, self.r_plus, self.out)
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError(f"Beta parameters must be positive, got {self.alpha}, {self.beta}")

    def _draw_scale(self, rng):
        return float(self.s_minus + (self.s_plus - self.s_minus) * rng.beta(self.alpha, self.beta))


@dataclass(frozen=True)
class RandomSizeCenterCrop(_ScaleAspectPolicy):
    """RRC scale sampling with the crop always centered."""

    s_minus: float = 0.08
    s_plus: float = 1.0
    r_minus: float = 3 / 4
    r_plus: float = 4 / 3
    aspect_ratio_enabled: bool = True
    out: int = 224
    centered = True

    def __post_init__(self):
        _check_scale(self.s_minus, self.s_plus, self.r_minus, self.r_plus, self.out)

    @property
    def _aspect_on(self):
        return self.aspect_ratio_enabled


def _check_resize(resize_to, out):
    if out < 1 or resize_to < out:
        raise ConfigError(f"need resize_to >= out >= 1, got {resize_to}, {out}")


@dataclass(frozen=True)
class FixedSizeCenterCrop:
    resize_to: int = 256
    out: int = 224

    def __post_init__(self):
        _check_resize(self.resize_to, self.out)

    def apply(self, img):
        return center_crop(resize_shorter_side(img, self.resize_to), self.out, self.out)

    def sample_and_apply(self, img, rng=None):
        # Deterministic: the stream is accepted for interface symmetry but never read.
        base = resize_shorter_side(img, self.resize_to)
        x0 = round_half_up((base.width - self.out) / 2.0)
        y0 = round_half_up((base.height - self.out) / 2.0)
        seed_path = None if rng is None or isinstance(rng, np.random.Generator) else make_rng(rng)[1]
        sample = CropSample(None, None, (x0, y0, self.out, self.out), seed_path=seed_path)
        return crop(base, x0, y0, self.out, self.out), sample


@dataclass(frozen=True)
class FixedSizeRandomCrop:
    resize_to: int = 256
    out: int = 224

    def __post_init__(self):
        _check_resize(self.resize_to, self.out)

    def sample_and_apply(self, img, rng):
        gen, path = make_rng(rng)
        base = resize_shorter_side(img, self.resize_to)
        x0 = int(gen.integers(0, base.width - self.out + 1))
        y0 = int(gen.integers(0, base.height - self.out + 1))
        sample = CropSample(None, None, (x0, y0, self.out, self.out), seed_path=path)
        return crop(base, x0, y0, self.out, self.out), sample


def shift_fill(arr, dx, dy, fill=0.0):
    """Integer translation exposing ``fill`` (content moves right by dx, down by dy)."""
    h, w = arr.shape[:2]
    out = np.full_like(arr, fill)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    out[dst_y, dst_x] = arr[src_y, src_x]
    return out


@dataclass(frozen=True)
class TranslatePct:
    """Resize, translate by up to ``p`` of each axis (black fill), center crop."""

    p: float = 0.3
    resize_to: int = 256
    out: int = 224

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ConfigError(f"translation fraction must be in [0, 1], got {self.p}")
        _check_resize(self.resize_to, self.out)

    def sample_and_apply(self, img, rng):
        gen, path = make_rng(rng)
        base = resize_shorter_side(img, self.resize_to)
        tx = int(round(gen.uniform(-self.p, self.p) * base.width))
        ty = int(round(gen.uniform(-self.p, self.p) * base.height))
        moved = base if tx == 0 and ty == 0 else Image(shift_fill(base.data, tx, ty), copy=False)
        x0 = round_half_up((base.width - self.out) / 2.0)
        y0 = round_half_up((base.height - self.out) / 2.0)
        sample = CropSample(None, None, (x0, y0, self.out, self.out), (tx, ty), seed_path=path)
        return crop(moved, x0, y0, self.out, self.out), sample


@dataclass(frozen=True)
class Composite:
    """Translation policy followed by a random-size center crop."""

    translate: TranslatePct = field(default_factory=TranslatePct)
    then: RandomSizeCenterCrop = field(default_factory=RandomSizeCenterCrop)

    def sample_and_apply(self, img, rng):
        gen, path = make_rng(rng)
        mid, first = self.translate.sample_and_apply(img, gen)
        out, second = self.then.sample_and_apply(mid, gen)
        sample = CropSample(second.s, second.r, second.rect, first.translation,
                            second.attempts, second.fallback, path)
        return out, sample


def sample_and_apply(policy, img, rng):
    return policy.sample_and_apply(img, rng)


def sample_scale(policy, rng):
    """One draw of the scale factor ``s`` of an RRC-family policy."""
    if not isinstance(policy, _ScaleAspectPolicy):
        raise ConfigError(f"{type(policy).__name__} has no scale distribution")
    gen, _ = make_rng(rng)
    return policy._draw_scale(gen)


def sample_scales(policy, n, rng):
    """Vectorized draws of ``s`` (same distribution as :func:`sample_scale`)."""
    gen, _ = make_rng(rng)
    if isinstance(policy, BetaRRC):
        x = gen.beta(policy.alpha, policy.beta, size=n)
    elif isinstance(policy, _ScaleAspectPolicy):
        x = gen.random(n)
    else:
        raise ConfigError(f"{type(policy).__name__} has no scale distribution")
    return policy.s_minus + (policy.s_plus - policy.s_minus) * x


def inverse_scale_mean(alpha, beta, s_minus=0.08, s_plus=1.0):
    """Closed-form mean of ``s``: ``alpha / (alpha + beta)`` rescaled to [s-, s+]."""
    return s_minus + (s_plus - s_minus) * alpha / (alpha + beta)


@dataclass(frozen=True)
class VarianceEstimate:
    estimate: float
    se: float
    n: int


def inverse_scale_variance(alpha, beta, s_minus=0.08, s_plus=1.0, n_samples=500_000, rng=0):
    """Monte-Carlo ``Var(1/s)`` for ``s = s- + (s+ - s-) Beta(alpha, beta)``.

    The standard error uses the large-sample formula ``sqrt((m4 - var^2) / n)``.
    """
    if n_samples < 2:
        raise ConfigError("need at least two samples")
    gen, _ = make_rng(rng)
    s = s_minus + (s_plus - s_minus) * gen.beta(alpha, beta, size=n_samples)
    inv = 1.0 / s
    centered = inv - inv.mean()
    var = float(np.mean(centered ** 2) * n_samples / (n_samples - 1))
    m4 = float(np.mean(centered ** 4))
    se = math.sqrt(max(m4 - var * var, 0.0) / n_samples)
    return VarianceEstimate(var, se, n_samples)


# ------------------------------------------------------------ sweep

@dataclass(frozen=True)
class SweepRow:
    v: float
    s_minus: float
    mean_acc: float
    sem: float


def sweep_values(n=15, lo=1.0, hi=6.0):
    return np.linspace(lo, hi, n)


def eval_augmentation_sweep(images, labels, classifier, vs=None, n_seeds=5, resize_to=None,
                            out=None, seed=0):
    """Accuracy when evaluation images are zoomed by up to ``v`` per axis.

    Each image is center cropped (``FixedSizeCenterCrop``), then a centered
    crop of scale ``s ~ U(1/v^2, 1)`` without aspect-ratio change is resized
    back. The same uniform draw per (seed, image) is reused across all ``v``
    so curves are comparable. ``classifier`` maps an image to logits, or is a
    provider with a ``classify`` method.
    """
    if classifier is None:
        raise CapabilityError("the sweep needs a classifier")
    predict = getattr(classifier, "classify", classifier)
    if not callable(predict):
        raise CapabilityError(f"{classifier!r} cannot classify")
    vs = sweep_values() if vs is None else np.asarray(vs, dtype=np.float64)
    labels = np.asarray(labels)
    if len(images) != len(labels) or not len(images):
        raise ConfigError("images and labels must be non-empty and of equal length")
    if resize_to is None:
        resize_to = min(images[0].size)
    if out is None:
        out = resize_to
    base_policy = FixedSizeCenterCrop(resize_to, out)
    bases = [base_policy.apply(img) for img in images]
    gen = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    draws = gen.random((n_seeds, len(bases)))
    rows = []
    for v in vs:
        s_minus = 1.0 / (v * v)
        policy = RandomSizeCenterCrop(s_minus=min(s_minus, 1.0), s_plus=1.0,
                                      aspect_ratio_enabled=False, out=out)
        accs = []
        for k in range(n_seeds):
            hits = 0
            for img, u, y in zip(bases, draws[k], labels):
                s = policy.s_minus + (1.0 - policy.s_minus) * u
                view = img if s == 1.0 else policy.apply_draw(img, s)
                hits += int(np.argmax(predict(view)) == y)
            accs.append(hits / len(bases))
        accs = np.array(accs)
        sem = float(accs.std(ddof=1) / math.sqrt(n_seeds)) if n_seeds > 1 else 0.0
        rows.append(SweepRow(float(v), float(s_minus), float(accs.mean()), sem))
    return rows


def sweep_csv(rows):
    lines = ["v,s_minus,mean_acc,sem"]
    lines += [f"{r.v!r},{r.s_minus!r},{r.mean_acc!r},{r.sem!r}" for r in rows]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ policy strings

_CALL = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")


def _parse_args(body):
    pos, kw = [], {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        if "=" in part:
            k, v = (x.strip() for x in part.split("=", 1))
            kw[k] = v
        else:
            pos.append(part)
    return pos, kw


def _num(v, key):
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"expected a number, got {v!r}", key) from None


def _range(v, key):
    if ".." not in v:
        x = _num(v, key)
        return x, x
    lo, hi = v.split("..", 1)
    return _num(lo, key), _num(hi, key)


def parse_policy(text):
    """Parse policy strings such as ``rrc(s=0.08..1,r=0.75..1.333,out=224)``.

    Names: ``rrc``, ``beta_rrc`` (``a``, ``b``), ``rscc`` (``aspect=0|1``),
    ``fsrc``/``fscc`` (``resize``, ``out``) and ``t(p)``; ``t(..)+rscc(..)``
    builds a composite.
    """
    if "+" in text:
        left, right = text.split("+", 1)
        first, second = parse_policy(left), parse_policy(right)
        if not isinstance(first, TranslatePct) or not isinstance(second, RandomSizeCenterCrop):
            raise ConfigError(f"composite must be t(...)+rscc(...), got {text!r}")
        return Composite(first, second)
    m = _CALL.match(text)
    if not m:
        raise ConfigError(f"malformed policy {text!r}")
    name, (pos, kw) = m.group(1), _parse_args(m.group(2))
    out = int(_num(kw.pop("out", "224"), "out"))
    try:
        if name in ("rrc", "beta_rrc", "rscc"):
            s_lo, s_hi = _range(kw.pop("s", "0.08..1"), "s")
            r_lo, r_hi = _range(kw.pop("r", "0.75..1.3333333333333333"), "r")
            if name == "rrc":
                pol = RandomResizedCrop(s_lo, s_hi, r_lo, r_hi, out)
            elif name == "beta_rrc":
                pol = BetaRRC(_num(kw.pop("a", "1"), "a"), _num(kw.pop("b", "1"), "b"),
                              s_lo, s_hi, r_lo, r_hi, out)
            else:
                pol = RandomSizeCenterCrop(s_lo, s_hi, r_lo, r_hi,
                                           bool(int(_num(kw.pop("aspect", "1"), "aspect"))), out)
        elif name in ("fsrc", "fscc"):
            size = int(_num(kw.pop("resize", "256"), "resize"))
            pol = (FixedSizeRandomCrop if name == "fsrc" else FixedSizeCenterCrop)(size, out)
        elif name == "t":
            p = _num(pos.pop(0) if pos else kw.pop("p", "0.3"), "p")
            pol = TranslatePct(p, int(_num(kw.pop("resize", "256"), "resize")), out)
        else:
            raise ConfigError(f"unknown policy {name!r}")
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if kw or pos:
        raise ConfigError(f"unused policy arguments {sorted(kw) or pos}", name)
    return pol
