"""HSV colour jitter and binary PPM (P6) I/O.

Hue is an angle in degrees ``[0, 360)``; saturation and value are in
``[0, 1]``. Jitter factors are multiplicative on all three channels.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import BadImage, InvariantViolation

HUE_RANGE = (0.9, 1.1)
SATURATION_RANGE = (0.5, 1.5)
BRIGHTNESS_RANGE = (0.5, 1.5)


@dataclass(eq=False)
class RgbImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.width <= 0 or self.height <= 0 or self.pixels.shape != (self.height, self.width, 3):
            raise InvariantViolation(f"pixel array {self.pixels.shape} does not match {self.width}x{self.height}")

    @classmethod
    def from_array(cls, arr) -> "RgbImage":
        arr = np.asarray(arr)
        return cls(arr.shape[1], arr.shape[0], arr)

    @classmethod
    def blank(cls, width: int, height: int, rgb=(0, 0, 0)) -> "RgbImage":
        return cls(width, height, np.broadcast_to(np.array(rgb, np.uint8), (height, width, 3)))

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class JitterFactors:
    hue: float
    saturation: float
    brightness: float

    def in_ranges(self) -> bool:
        return (
            HUE_RANGE[0] <= self.hue <= HUE_RANGE[1]
            and SATURATION_RANGE[0] <= self.saturation <= SATURATION_RANGE[1]
            and BRIGHTNESS_RANGE[0] <= self.brightness <= BRIGHTNESS_RANGE[1]
        )


def rgb_to_hsv(rgb):
    """Hexcone conversion. ``rgb`` is ``(..., 3)`` with 8-bit values.

    Returns float array ``(..., 3)``: hue in degrees, saturation, value.
    """
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = c.max(axis=-1)
    mn = c.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)

    h = np.zeros_like(mx)
    rmax = (mx == r) & (delta > 0)
    gmax = (mx == g) & (delta > 0) & ~rmax
    bmax = (delta > 0) & ~rmax & ~gmax
    h = np.where(rmax, ((g - b) / safe) % 6.0, h)
    h = np.where(gmax, (b - r) / safe + 2.0, h)
    h = np.where(bmax, (r - g) / safe + 4.0, h)
    h = (h * 60.0) % 360.0
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb(hsv):
    """Inverse of :func:`rgb_to_hsv`; returns uint8 ``(..., 3)`` (rounded half up)."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h = (hsv[..., 0] % 360.0) / 60.0
    s = hsv[..., 1]
    v = hsv[..., 2]
    c = v * s
    x = c * (1.0 - np.abs(h % 2.0 - 1.0))
    m = v - c
    sector = np.floor(h).astype(int) % 6
    zeros = np.zeros_like(c)
    table = [
        (c, x, zeros),
        (x, c, zeros),
        (zeros, c, x),
        (zeros, x, c),
        (x, zeros, c),
        (c, zeros, x),
    ]
    out = np.zeros(hsv.shape, dtype=np.float64)
    for k, (r1, g1, b1) in enumerate(table):
        sel = sector == k
        out[..., 0] = np.where(sel, r1, out[..., 0])
        out[..., 1] = np.where(sel, g1, out[..., 1])
        out[..., 2] = np.where(sel, b1, out[..., 2])
    out = (out + m[..., None]) * 255.0
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def jitter(img: RgbImage, f: JitterFactors) -> RgbImage:
    for v in (f.hue, f.saturation, f.brightness):
        if not (math.isfinite(v) and v > 0):
            raise InvariantViolation(f"jitter factors must be finite and positive: {f}")
    hsv = rgb_to_hsv(img.pixels)
    hsv[..., 0] = (hsv[..., 0] * f.hue) % 360.0
    hsv[..., 1] = np.clip(hsv[..., 1] * f.saturation, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * f.brightness, 0.0, 1.0)
    return RgbImage(img.width, img.height, hsv_to_rgb(hsv))


def sample_factors(rng_seed: Union[int, np.random.Generator, None] = None) -> JitterFactors:
    """Uniform draws inside the augmentation ranges.

    An int seeds a fresh generator (same seed, same factors); a Generator is
    consumed in place so a stream of draws can share one seed.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return JitterFactors(
        float(rng.uniform(*HUE_RANGE)),
        float(rng.uniform(*SATURATION_RANGE)),
        float(rng.uniform(*BRIGHTNESS_RANGE)),
    )


# -- PPM ---------------------------------------------------------------------

_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def read_ppm(path: Union[str, Path]) -> RgbImage:
    raw = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if not m:
            raise BadImage(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise BadImage(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(x) for x in fields[1:])
    except ValueError:
        raise BadImage(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise BadImage(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    if width <= 0 or height <= 0:
        raise BadImage(f"{path}: bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    body = raw[pos : pos + width * height * 3]
    if len(body) != width * height * 3:
        raise BadImage(f"{path}: expected {width * height * 3} pixel bytes, found {len(body)}")
    return RgbImage(width, height, np.frombuffer(body, np.uint8).reshape(height, width, 3))


def write_ppm(path: Union[str, Path], img: RgbImage):
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        fh.write(img.pixels.tobytes())
