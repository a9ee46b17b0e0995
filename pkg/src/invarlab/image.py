"""Float RGB images, bilinear resampling, affine warping and PPM/PNG IO.

Coordinate convention for warps: every axis is mapped to normalized
coordinates in [-1, 1] with the align-corners-false convention, i.e. pixel
column ``u`` of a ``W``-wide image has its center at ``(2u + 1) / W - 1``.
An affine matrix ``m`` acts on homogeneous normalized coordinates
``(x, y, 1)`` with ``x`` pointing right and ``y`` pointing down.
``warp_affine(img, m)`` is a forward warp: the output pixel at ``p`` reads
the input at ``m^-1 p``. ``warp_inverse_map(img, g)`` reads the input at
``g p`` directly (the inverse-warping semantics of grid samplers).
"""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from .errors import BoundsError, ParseError, SingularTransform

# Source coordinates this close to an integer are snapped onto it so that
# identity and integer-shift warps are bit-exact despite float round-off.
_SNAP = 1e-9


class Image:
    """Immutable RGB raster with float64 intensities in [0, 1].

    ``data`` has shape ``(height, width, 3)`` and is stored row-major.
    """

    __slots__ = ("_data",)

    def __init__(self, data, *, copy=True):
        arr = np.array(data, dtype=np.float64, copy=copy)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (height, width, 3) data, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("image intensities must lie in [0, 1]")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def from_array(cls, arr):
        """Build an image from arbitrary floats, clipping into [0, 1]."""
        arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
        return cls(arr, copy=False)

    @classmethod
    def blank(cls, width, height, value=0.0):
        return cls(np.full((height, width, 3), float(value)), copy=False)

    @property
    def data(self):
        return self._data

    @property
    def width(self):
        return self._data.shape[1]

    @property
    def height(self):
        return self._data.shape[0]

    @property
    def channels(self):
        return 3

    @property
    def size(self):
        return self.width, self.height

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self._data, other._data)

    __hash__ = None

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


def _as_array(img):
    return img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def _snap(coords):
    rounded = np.rint(coords)
    return np.where(np.abs(coords - rounded) < _SNAP, rounded, coords)


def normalized_grid(out_w, out_h):
    """Normalized centers of an ``out_h x out_w`` pixel grid, as (x, y) arrays."""
    xs = (2.0 * np.arange(out_w) + 1.0) / out_w - 1.0
    ys = (2.0 * np.arange(out_h) + 1.0) / out_h - 1.0
    return np.meshgrid(xs, ys)


def to_pixel(coord, n):
    """Map a normalized coordinate to the pixel index space of an axis of length n."""
    return ((coord + 1.0) * n - 1.0) / 2.0


def _gather(arr, iy, ix, mode, fill):
    h, w = arr.shape[-3], arr.shape[-2]
    if mode == "wrap":
        return arr[..., iy % h, ix % w, :]
    if mode == "edge":
        return arr[..., np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1), :]
    inside = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    vals = arr[..., np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1), :]
    return np.where(inside[..., None], vals, fill)


def sample_bilinear(arr, px, py, *, fill=0.0, mode="fill"):
    """Bilinearly sample ``arr[..., H, W, C]`` at pixel coordinates (px, py).

    ``mode`` decides what out-of-range taps read: ``"fill"`` returns ``fill``,
    ``"edge"`` replicates the border and ``"wrap"`` is periodic.
    """
    px = _snap(np.asarray(px, dtype=np.float64))
    py = _snap(np.asarray(py, dtype=np.float64))
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = (px - x0)[..., None]
    fy = (py - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    a = _gather(arr, y0, x0, mode, fill)
    b = _gather(arr, y0, x0 + 1, mode, fill)
    c = _gather(arr, y0 + 1, x0, mode, fill)
    d = _gather(arr, y0 + 1, x0 + 1, mode, fill)
    top = (1.0 - fx) * a + fx * b
    bottom = (1.0 - fx) * c + fx * d
    return (1.0 - fy) * top + fy * bottom


def _check_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"affine matrix must be 3x3, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SingularTransform("affine matrix has non-finite entries")
    return m


def invert_affine(m):
    m = _check_matrix(m)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) <= 1e-12:
        raise SingularTransform(f"affine matrix is singular (det={det:.3g})")
    if np.array_equal(m, np.eye(3)):
        return np.eye(3)
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    inv = np.array([[d, -b], [-c, a]]) / det
    t = -inv @ m[:2, 2]
    return np.array([[inv[0, 0], inv[0, 1], t[0]], [inv[1, 0], inv[1, 1], t[1]], [0.0, 0.0, 1.0]])


def warp_array(arr, g, out_w, out_h, *, fill=0.0, mode="fill"):
    """Array-level inverse-map warp; ``arr`` may carry leading batch axes."""
    h, w = arr.shape[-3], arr.shape[-2]
    xn, yn = normalized_grid(out_w, out_h)
    sx = g[0, 0] * xn + g[0, 1] * yn + g[0, 2]
    sy = g[1, 0] * xn + g[1, 1] * yn + g[1, 2]
    out = sample_bilinear(arr, to_pixel(sx, w), to_pixel(sy, h), fill=fill, mode=mode)
    return np.clip(out, 0.0, 1.0)


def warp_inverse_map(img, g, out_w=None, out_h=None, fill=0.0, mode="fill"):
    """Output pixel ``p`` samples the input at ``g p`` (normalized coordinates)."""
    g = _check_matrix(g)
    arr = _as_array(img)
    out_w = arr.shape[-2] if out_w is None else int(out_w)
    out_h = arr.shape[-3] if out_h is None else int(out_h)
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be positive")
    return Image(warp_array(arr, g, out_w, out_h, fill=fill, mode=mode), copy=False)


def warp_affine(img, m, out_w=None, out_h=None, fill=0.0, mode="fill"):
    """Forward affine warp: output pixel ``p`` samples the input at ``m^-1 p``.

    Raises :class:`SingularTransform` when the linear part of ``m`` is not
    invertible. Out-of-bounds reads return ``fill`` (or wrap with
    ``mode="wrap"``). Output intensities are clamped to [0, 1].
    """
    return warp_inverse_map(img, invert_affine(m), out_w, out_h, fill=fill, mode=mode)


def resize_array(arr, out_w, out_h):
    h, w = arr.shape[-3], arr.shape[-2]
    if (out_w, out_h) == (w, h):
        return arr.copy()
    xn, yn = normalized_grid(out_w, out_h)
    out = sample_bilinear(arr, to_pixel(xn, w), to_pixel(yn, h), mode="edge")
    return np.clip(out, 0.0, 1.0)


def resize(img, out_w, out_h):
    """Bilinear resize (same kernel as the warps, border taps replicate the edge)."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be positive")
    if (out_w, out_h) == img.size:
        return img
    return Image(resize_array(img.data, int(out_w), int(out_h)), copy=False)


def crop(img, x0, y0, w, h):
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > img.width or y0 + h > img.height:
        raise BoundsError(
            f"crop ({x0}, {y0}, {w}, {h}) exceeds image bounds {img.width}x{img.height}"
        )
    return Image(img.data[y0:y0 + h, x0:x0 + w], copy=True)


def round_half_up(x):
    return int(math.floor(x + 0.5))


def resize_shorter_side(img, s):
    """Resize so the shorter side equals ``s`` while keeping the aspect ratio."""
    if s < 1:
        raise ValueError("target side must be >= 1")
    w, h = img.size
    short = min(w, h)
    if short == s:
        return img
    if w <= h:
        new_w, new_h = s, max(1, round_half_up(h * s / w))
    else:
        new_w, new_h = max(1, round_half_up(w * s / h)), s
    return resize(img, new_w, new_h)


def center_crop(img, w, h):
    x0 = round_half_up((img.width - w) / 2.0)
    y0 = round_half_up((img.height - h) / 2.0)
    return crop(img, x0, y0, w, h)


def cyclic_shift(img, dx, dy):
    """Periodic integer translation: content moves right by dx and down by dy."""
    return Image(np.roll(img.data, (int(dy), int(dx)), axis=(0, 1)), copy=False)


# --------------------------------------------------------------------- IO

def quantize(arr):
    """Map intensities to 8-bit codes with round-half-up of ``v * 255``."""
    return np.clip(np.floor(np.asarray(arr) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def encode_ppm(img):
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + quantize(img.data).tobytes()


_WS = b" \t\n\r\v\f"


def decode_ppm(buf):
    """Parse a binary P6 PPM with maxval 255."""
    buf = bytes(buf)
    if buf[:2] != b"P6":
        raise ParseError("not a binary PPM (missing P6 magic)", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(buf):
            raise ParseError("truncated PPM header", pos)
        ch = buf[pos:pos + 1]
        if ch == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise ParseError("unterminated comment in PPM header", pos)
            pos = end + 1
        elif ch in _WS:
            pos += 1
        else:
            m = re.match(rb"\d+", buf[pos:])
            if m is None:
                raise ParseError(f"unexpected byte {ch!r} in PPM header", pos)
            end = pos + m.end()
            if end >= len(buf) or buf[end:end + 1] not in _WS + b"#":
                raise ParseError("truncated PPM header", end)
            fields.append((int(m.group()), pos))
            pos = end
    (w, w_off), (h, h_off), (maxval, mv_off) = fields
    if w < 1:
        raise ParseError("PPM width must be positive", w_off)
    if h < 1:
        raise ParseError("PPM height must be positive", h_off)
    if maxval != 255:
        raise ParseError(f"unsupported PPM maxval {maxval}", mv_off)
    if pos >= len(buf) or buf[pos:pos + 1] not in _WS:
        raise ParseError("missing whitespace after PPM maxval", pos)
    pos += 1
    need = w * h * 3
    body = buf[pos:pos + need]
    if len(body) < need:
        raise ParseError(f"truncated PPM raster: expected {need} bytes, got {len(body)}", pos + len(body))
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0
    return Image(arr, copy=False)


def write_image(img, path):
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image as PILImage

        PILImage.fromarray(quantize(img.data), mode="RGB").save(path)
        return
    path.write_bytes(encode_ppm(img))


def read_image(path):
    """Read a P6 PPM (or, as a convenience, a PNG through Pillow)."""
    buf = Path(path).read_bytes()
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        import io

        from PIL import Image as PILImage

        with PILImage.open(io.BytesIO(buf)) as pil:
            arr = np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
        return Image(arr, copy=False)
    return decode_ppm(buf)
