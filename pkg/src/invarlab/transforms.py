"""Deterministic catalog of 14 image transformations at magnitude levels 0-9.

Level 0 is the identity for every kind. The level-to-parameter map is linear
and frozen (see ``parameter``):

=============  ==========================================================
kind           parameter at level L (sign s = +1 / -1)
=============  ==========================================================
shearX/Y       shear factor s * 0.3 * L / 9
rotate         angle s * 30 * L / 9 degrees
translateX/Y   offset s * 0.45 * L / 9 of the axis length
rescale        zoom z = 1 + L / 9; ``+`` zooms in by z, ``-`` shrinks by 1/z
solarize       threshold 1 - L / 9; intensities strictly above it invert
posterize      keep 8 - round(4 L / 9) most significant bits of 8-bit codes
color          factor 1 + s * 0.9 * L / 9 toward/away from per-pixel gray
contrast       factor 1 + s * 0.9 * L / 9 toward/away from mean luminance
sharpness      factor 1 + s * 0.9 * L / 9 between the 3x3-smoothed image and
               the image
equalize, invert, autocontrast
               parameter free, applied fully at any level >= 1
=============  ==========================================================

Geometric kinds become one affine matrix in normalized coordinates and are
rendered by :func:`invarlab.image.warp_affine` with black fill. Rotation and
zoom parameters are nudged by a few ulps so that a ``+`` matrix composed with
its ``-`` counterpart through :func:`compose_affine` is exactly the identity.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .image import Image, quantize, warp_array

MAX_LEVEL = 9


class TransformKind(str, enum.Enum):
    EQUALIZE = "equalize"
    SOLARIZE = "solarize"
    SHEAR_X = "shearX"
    SHEAR_Y = "shearY"
    INVERT = "invert"
    TRANSLATE_X = "translateX"
    TRANSLATE_Y = "translateY"
    COLOR = "color"
    RESCALE = "rescale"
    AUTOCONTRAST = "autocontrast"
    ROTATE = "rotate"
    POSTERIZE = "posterize"
    CONTRAST = "contrast"
    SHARPNESS = "sharpness"

    def __str__(self):
        return self.value

    @property
    def geometric(self):
        return self in GEOMETRIC_KINDS

    @property
    def signed(self):
        return self in SIGNED_KINDS


GEOMETRIC_KINDS = frozenset({
    TransformKind.SHEAR_X, TransformKind.SHEAR_Y, TransformKind.TRANSLATE_X,
    TransformKind.TRANSLATE_Y, TransformKind.RESCALE, TransformKind.ROTATE,
})
ENHANCE_KINDS = frozenset({TransformKind.COLOR, TransformKind.CONTRAST, TransformKind.SHARPNESS})
SIGNED_KINDS = GEOMETRIC_KINDS | ENHANCE_KINDS
KIND_ORDER = tuple(TransformKind)
_KIND_LOOKUP = {k.value.lower(): k for k in TransformKind}


def parse_kind(name):
    try:
        return _KIND_LOOKUP[str(name).lower()]
    except KeyError:
        raise ConfigError(f"unknown transform kind {name!r}") from None


def _norm_sign(sign):
    if sign in ("+", 1, "+1"):
        return "+"
    if sign in ("-", "−", -1, "-1"):
        return "-"
    raise ConfigError(f"sign must be '+' or '-', got {sign!r}")


@dataclass(frozen=True)
class TransformSpec:
    """One transformation: kind, magnitude level 0-9 and sign.

    The sign only matters for geometric and enhancement kinds; for the rest
    it is normalized to ``+``.
    """

    kind: TransformKind
    level: int
    sign: str = "+"

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, TransformKind) else parse_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if isinstance(self.level, bool) or int(self.level) != self.level:
            raise ConfigError(f"level must be an integer, got {self.level!r}")
        level = int(self.level)
        if not 0 <= level <= MAX_LEVEL:
            raise ConfigError(f"level must be in 0..{MAX_LEVEL}, got {level}")
        object.__setattr__(self, "level", level)
        sign = _norm_sign(self.sign)
        object.__setattr__(self, "sign", sign if kind.signed else "+")

    @property
    def is_identity(self):
        return self.level == 0

    @property
    def geometric(self):
        return self.kind.geometric

    @property
    def sgn(self):
        return 1.0 if self.sign == "+" else -1.0

    def __str__(self):
        if self.kind.signed:
            return f"{self.kind.value}:{self.level}:{self.sign}"
        return f"{self.kind.value}:{self.level}"

    def __call__(self, img):
        return apply(self, img)

    def apply_array(self, arr):
        return apply_array(self, arr)


@dataclass(frozen=True)
class SubPolicy:
    """Ordered pair of transformations, ``first`` applied before ``second``."""

    first: TransformSpec
    second: TransformSpec

    @property
    def is_identity(self):
        return self.first.is_identity and self.second.is_identity

    def __str__(self):
        return f"{self.first};{self.second}"

    def __call__(self, img):
        return apply_subpolicy(self, img)

    def apply_array(self, arr):
        return apply_array(self.second, apply_array(self.first, arr))


@dataclass(frozen=True)
class CyclicShift:
    """Periodic integer translation (content moves right by dx, down by dy)."""

    dx: int
    dy: int = 0

    @property
    def is_identity(self):
        return self.dx == 0 and self.dy == 0

    def __str__(self):
        return f"cshift:{self.dx},{self.dy}"

    def __call__(self, img):
        return Image(self.apply_array(img.data), copy=False)

    def apply_array(self, arr):
        return np.roll(arr, (self.dy, self.dx), axis=(-3, -2))

    @classmethod
    def like(cls, spec, width, height):
        """Wrap-around counterpart of a translateX/Y spec, rounded to whole pixels."""
        if spec.kind not in (TransformKind.TRANSLATE_X, TransformKind.TRANSLATE_Y):
            raise ConfigError(f"no cyclic counterpart for {spec}")
        frac = parameter(spec)
        if spec.kind is TransformKind.TRANSLATE_X:
            return cls(int(round(frac * width)), 0)
        return cls(0, int(round(frac * height)))


def parse_spec(text):
    """Parse ``kind:level[:sign]``, ``a;b`` sub-policies or ``cshift:dx,dy``."""
    text = str(text).strip()
    if ";" in text:
        parts = text.split(";")
        if len(parts) != 2:
            raise ConfigError(f"a sub-policy has exactly two parts: {text!r}")
        return SubPolicy(parse_spec(parts[0]), parse_spec(parts[1]))
    fields = text.split(":")
    if fields[0].lower() == "cshift":
        try:
            dx, dy = (int(v) for v in fields[1].split(","))
        except (IndexError, ValueError):
            raise ConfigError(f"cyclic shift must look like cshift:dx,dy, got {text!r}") from None
        return CyclicShift(dx, dy)
    if len(fields) not in (2, 3):
        raise ConfigError(f"transform spec must look like kind:level[:sign], got {text!r}")
    try:
        level = int(fields[1])
    except ValueError:
        raise ConfigError(f"non-integer level in {text!r}") from None
    return TransformSpec(parse_kind(fields[0]), level, fields[2] if len(fields) == 3 else "+")


def catalog(levels, signs="both", appearance_sign="+"):
    """Enumerate specs: kind in declared order, then level ascending, then sign.

    ``signs`` ("both", "+" or "-") applies to geometric kinds at levels >= 1.
    Enhancement kinds use ``appearance_sign``; level 0 yields a single spec
    per kind.
    """
    if signs not in ("both", "+", "-"):
        raise ConfigError(f"sign policy must be 'both', '+' or '-', got {signs!r}")
    levels = sorted(set(int(lv) for lv in levels))
    out = []
    for kind in KIND_ORDER:
        for level in levels:
            if level == 0:
                out.append(TransformSpec(kind, 0))
            elif kind.geometric:
                for sign in (("+", "-") if signs == "both" else (signs,)):
                    out.append(TransformSpec(kind, level, sign))
            else:
                out.append(TransformSpec(kind, level, appearance_sign))
    return out


# ------------------------------------------------------------ parameters

def parameter(spec):
    """Physical parameter realized by a spec (see the module table)."""
    k, lv, s = spec.kind, spec.level, spec.sgn
    if k in (TransformKind.SHEAR_X, TransformKind.SHEAR_Y):
        return s * 0.3 * lv / 9
    if k is TransformKind.ROTATE:
        return s * 30.0 * lv / 9
    if k in (TransformKind.TRANSLATE_X, TransformKind.TRANSLATE_Y):
        return s * 0.45 * lv / 9
    if k is TransformKind.RESCALE:
        return 1.0 + lv / 9
    if k is TransformKind.SOLARIZE:
        return 1.0 - lv / 9
    if k is TransformKind.POSTERIZE:
        return 8 - round(lv * 4 / 9)
    if k in ENHANCE_KINDS:
        return 1.0 + s * 0.9 * lv / 9
    return None


def _nudged(x, k):
    step = np.inf if k > 0 else -np.inf
    for _ in range(abs(k)):
        x = np.nextafter(x, step)
    return float(x)


@functools.lru_cache(maxsize=None)
def _exact_rotation(level):
    """(cos, sin) within a few ulps of the true values with cos*cos + sin*sin == 1."""
    phi = math.radians(30.0 * level / 9)
    c, s = math.cos(phi), math.sin(phi)
    for j in sorted(range(-64, 65), key=abs):
        for i in (0, 1, -1, 2, -2):
            cc, ss = _nudged(c, i), _nudged(s, j)
            if cc * cc + ss * ss == 1.0:
                return cc, ss
    return c, s


@functools.lru_cache(maxsize=None)
def _exact_zoom(level):
    """(z, 1/z) nudged so that z * (1/z) == 1 exactly."""
    z = 1.0 + level / 9
    for i in sorted(range(-8, 9), key=abs):
        zi = _nudged(1.0 / z, i)
        if z * zi == 1.0:
            return z, zi
    return z, 1.0 / z


def geometric_matrix(spec, width=1, height=1):
    """Forward affine matrix (normalized coordinates) of a geometric spec."""
    if not spec.geometric:
        raise ConfigError(f"{spec} is not geometric")
    if spec.is_identity:
        return np.eye(3)
    k = spec.kind
    hw = height / width
    wh = width / height
    if k is TransformKind.SHEAR_X:
        a = parameter(spec)
        lin = [[1.0, a * hw], [0.0, 1.0]]
        t = [0.0, 0.0]
    elif k is TransformKind.SHEAR_Y:
        a = parameter(spec)
        lin = [[1.0, 0.0], [a * wh, 1.0]]
        t = [0.0, 0.0]
    elif k is TransformKind.TRANSLATE_X:
        lin = [[1.0, 0.0], [0.0, 1.0]]
        t = [2.0 * parameter(spec), 0.0]
    elif k is TransformKind.TRANSLATE_Y:
        lin = [[1.0, 0.0], [0.0, 1.0]]
        t = [0.0, 2.0 * parameter(spec)]
    elif k is TransformKind.ROTATE:
        c, s = _exact_rotation(spec.level)
        s = spec.sgn * s
        lin = [[c, -s * hw], [s * wh, c]]
        t = [0.0, 0.0]
    else:
        z, zi = _exact_zoom(spec.level)
        f = z if spec.sign == "+" else zi
        lin = [[f, 0.0], [0.0, f]]
        t = [0.0, 0.0]
    return np.array([[lin[0][0], lin[0][1], t[0]], [lin[1][0], lin[1][1], t[1]], [0.0, 0.0, 1.0]])


def compose_affine(a, b):
    """Matrix product ``a @ b`` with plain left-to-right float arithmetic.

    Unlike BLAS-backed ``@`` this never fuses multiply-adds, so exact
    cancellations (e.g. ``c*s - s*c``) stay exact.
    """
    a = [[float(v) for v in row] for row in np.asarray(a)]
    b = [[float(v) for v in row] for row in np.asarray(b)]
    n = len(a)
    out = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = a[i][0] * b[0][j]
            for k in range(1, n):
                acc = acc + a[i][k] * b[k][j]
            out[i][j] = acc
    return np.array(out)


# ------------------------------------------------------------ appearance ops

_LUMA = np.array([0.299, 0.587, 0.114])


def _gray(arr):
    return arr @ _LUMA


def _blend(base, arr, factor):
    return np.clip(base + factor * (arr - base), 0.0, 1.0)


def smooth3x3(arr):
    """3x3 smoothing with weights [[1,1,1],[1,5,1],[1,1,1]] / 13; borders untouched."""
    out = arr.copy()
    h, w = arr.shape[-3], arr.shape[-2]
    if h < 3 or w < 3:
        return out
    acc = 4.0 * arr[..., 1:-1, 1:-1, :]
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            acc = acc + arr[..., 1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx, :]
    out[..., 1:-1, 1:-1, :] = acc / 13.0
    return out


def autocontrast_array(arr):
    lo = arr.min(axis=(-3, -2), keepdims=True)
    hi = arr.max(axis=(-3, -2), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (arr - lo) / safe, arr)


def _equalize_channel(ch):
    codes = quantize(ch)
    n = codes.size
    hist = np.bincount(codes.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[codes.min()]
    if n == cdf_min:
        return ch
    lut = np.floor((cdf - cdf_min) / (n - cdf_min) * 255.0 + 0.5)
    return lut[codes] / 255.0


def equalize_array(arr):
    """Per-channel histogram equalization on 8-bit codes (CDF remapping)."""
    out = np.empty_like(arr)
    flat_in = arr.reshape((-1,) + arr.shape[-3:])
    flat_out = out.reshape(flat_in.shape)
    for i in range(flat_in.shape[0]):
        for c in range(3):
            flat_out[i, :, :, c] = _equalize_channel(flat_in[i, :, :, c])
    return out


def posterize_array(arr, bits):
    mask = (0xFF << (8 - bits)) & 0xFF
    return (quantize(arr) & np.uint8(mask)).astype(np.float64) / 255.0


def apply_array(spec, arr):
    """Apply a spec to a raw ``(..., H, W, 3)`` array (batch axes allowed)."""
    if isinstance(spec, (SubPolicy, CyclicShift)):
        return spec.apply_array(arr)
    arr = np.asarray(arr, dtype=np.float64)
    if spec.is_identity:
        return arr
    k = spec.kind
    if spec.geometric:
        h, w = arr.shape[-3], arr.shape[-2]
        m = geometric_matrix(spec, w, h)
        from .image import invert_affine

        return warp_array(arr, invert_affine(m), w, h, fill=0.0)
    if k is TransformKind.INVERT:
        return 1.0 - arr
    if k is TransformKind.SOLARIZE:
        return np.where(arr > parameter(spec), 1.0 - arr, arr)
    if k is TransformKind.POSTERIZE:
        bits = parameter(spec)
        return arr if bits >= 8 else posterize_array(arr, bits)
    if k is TransformKind.AUTOCONTRAST:
        return autocontrast_array(arr)
    if k is TransformKind.EQUALIZE:
        return equalize_array(arr)
    f = parameter(spec)
    if k is TransformKind.COLOR:
        return _blend(_gray(arr)[..., None], arr, f)
    if k is TransformKind.CONTRAST:
        mean = _gray(arr).mean(axis=(-2, -1))[..., None, None, None]
        return _blend(mean, arr, f)
    return _blend(smooth3x3(arr), arr, f)


def apply(spec, img):
    """Apply one transformation to an image. Level 0 returns ``img`` itself."""
    if spec.is_identity:
        return img
    return Image(apply_array(spec, img.data), copy=False)


def apply_subpolicy(sp, img):
    return apply(sp.second, apply(sp.first, img))


def transform_label(t):
    return str(t) if isinstance(t, (TransformSpec, SubPolicy, CyclicShift)) else getattr(t, "__name__", repr(t))


def apply_any(t, img):
    """Apply a spec, sub-policy, cyclic shift or plain ``Image -> Image`` callable."""
    if isinstance(t, TransformSpec):
        return apply(t, img)
    if isinstance(t, SubPolicy):
        return apply_subpolicy(t, img)
    return t(img)


def apply_any_array(t, arr):
    if isinstance(t, (TransformSpec, SubPolicy, CyclicShift)):
        return apply_array(t, arr)
    if arr.ndim == 3:
        return t(Image(arr)).data
    return np.stack([t(Image(a)).data for a in arr])
