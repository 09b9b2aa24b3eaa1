# Copyright 2024-2025 egressmon authors, MIT license
"""
Image scrambler

Images are numpy arrays of shape (height, width, 3) and dtype uint8
(``RgbImage``). The default scrambler snaps every channel to 64 evenly
spaced levels, which destroys the two least significant bit planes. Per
image mean-luminance bucketing and hash-ordered emission bound the
cross-image channels. :func:`quantize_variant` implements the quantizer
families of the design-space probe.
"""

from dataclasses import dataclass
import io
import logging

import numpy as np
from PIL import Image

from egressmon.util import sha256

log = logging.getLogger('egressmon.image')

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
VARIANTS = ('rgb_levels', 'cmyk_levels', 'k_only_bits', 'cmyk_random_bits',
            'rgb_one_of_three_7bit', 'rgb7_sprinkle6')


def as_rgb(img):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.size == 0:
        raise ValueError('expected RGB image of shape (height, width, 3)')
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise ValueError('channel values outside [0, 255]')
        img = img.astype(np.uint8)
    return img


def _levels_table(levels):
    """Lookup table v -> nearest of ``levels`` evenly spaced levels"""
    if not 2 <= levels <= 256:
        raise ValueError('levels must be in [2, 256]')
    v = np.arange(256, dtype=np.int64)
    n = levels - 1
    # round half up in integer arithmetic
    i = (2 * v * n + 255) // 510
    return ((2 * i * 255 + n) // (2 * n)).astype(np.uint8)


def requantize_rgb(img, levels=64):
    """Snap each channel to one of ``levels`` evenly spaced levels

    v -> round(round(v (levels-1) / 255) 255 / (levels-1))
    """
    return _levels_table(levels)[as_rgb(img)]


@dataclass(frozen=True)
class QuantizerSpec:

    """One quantizer of the design space

    ``levels`` is used by rgb_levels and cmyk_levels, ``bits`` by
    k_only_bits, ``lo`` and ``hi`` by cmyk_random_bits, ``p`` by
    rgb7_sprinkle6; ``seed`` drives the randomized variants.
    """
    variant: str
    levels: int = 64
    bits: int = 6
    lo: int = 4
    hi: int = 8
    p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError('unknown quantizer variant %r' % self.variant)
        if not 2 <= self.levels <= 256:
            raise ValueError('levels must be in [2, 256]')
        if not 1 <= self.bits <= 8:
            raise ValueError('bits must be in [1, 8]')
        if not 1 <= self.lo <= self.hi <= 8:
            raise ValueError('need 1 <= lo <= hi <= 8')
        if not 0 <= self.p <= 1:
            raise ValueError('p must be in [0, 1]')

    @classmethod
    def parse(cls, text, seed=0):
        """Parse 'variant[:arg[:arg]]', e.g. 'cmyk_random_bits:4:8'"""
        name, *args = text.strip().split(':')
        if name in ('rgb_levels', 'cmyk_levels') and args:
            return cls(name, levels=int(args[0]), seed=seed)
        if name == 'k_only_bits' and args:
            return cls(name, bits=int(args[0]), seed=seed)
        if name == 'cmyk_random_bits' and len(args) == 2:
            return cls(name, lo=int(args[0]), hi=int(args[1]), seed=seed)
        if name == 'rgb7_sprinkle6' and args:
            return cls(name, p=float(args[0]), seed=seed)
        return cls(name, seed=seed)

    @property
    def label(self):
        if self.variant in ('rgb_levels', 'cmyk_levels'):
            return '%s:%d' % (self.variant, self.levels)
        if self.variant == 'k_only_bits':
            return '%s:%d' % (self.variant, self.bits)
        if self.variant == 'cmyk_random_bits':
            return '%s:%d:%d' % (self.variant, self.lo, self.hi)
        if self.variant == 'rgb7_sprinkle6':
            return '%s:%g' % (self.variant, self.p)
        return self.variant


def rgb_to_cmyk(img):
    """Unit-interval CMYK planes of shape (height, width, 4)"""
    rgb = as_rgb(img) / 255.
    k = 1. - rgb.max(axis=2)
    denom = np.where(k < 1., 1. - k, 1.)
    cmy = (1. - rgb - k[..., None]) / denom[..., None]
    cmy[k >= 1.] = 0.
    return np.concatenate((cmy, k[..., None]), axis=2)


def cmyk_to_rgb(cmyk):
    rgb = 255. * (1. - cmyk[..., :3]) * (1. - cmyk[..., 3:])
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _unit_quantize(x, levels):
    n = np.asarray(levels, dtype=float) - 1
    return np.rint(x * n) / n


def _cmyk_roundtrip(img, levels, k_only=False):
    cmyk = rgb_to_cmyk(img)
    if k_only:
        cmyk[..., 3] = _unit_quantize(cmyk[..., 3], levels)
    else:
        cmyk = _unit_quantize(cmyk, levels)
    out = cmyk_to_rgb(cmyk)
    mx = img.max(axis=2)
    # K = 0 and K = 1 pixels are fixed points of the roundtrip
    fixed = (mx == 255) | (mx == 0)
    out[fixed] = img[fixed]
    return out, ~fixed


def quantize_variant(img, spec, return_mask=False):
    """Apply a design-space quantizer

    :param return_mask: also return the boolean (height, width) mask of
        pixels the quantizer may have changed (for rgb_one_of_three_7bit the
        index of the requantized channel per pixel)
    """
    img = as_rgb(img)
    rng = np.random.default_rng(spec.seed)
    h, w, _ = img.shape
    v = spec.variant
    if v == 'rgb_levels':
        out = requantize_rgb(img, spec.levels)
        mask = np.ones((h, w), dtype=bool)
    elif v == 'cmyk_levels':
        out, mask = _cmyk_roundtrip(img, spec.levels)
    elif v == 'k_only_bits':
        out, mask = _cmyk_roundtrip(img, 2 ** spec.bits, k_only=True)
    elif v == 'cmyk_random_bits':
        # one bit depth per C, M, Y and K component
        bits = rng.integers(spec.lo, spec.hi + 1, size=(h, w, 4))
        out, mask = _cmyk_roundtrip(img, 2 ** bits)
    elif v == 'rgb_one_of_three_7bit':
        channel = rng.integers(0, 3, size=(h, w))
        out = img.copy()
        table = _levels_table(128)
        for c in range(3):
            sel = channel == c
            out[sel, c] = table[img[sel, c]]
        mask = channel
    else:
        sprinkle = rng.random((h, w)) < spec.p
        out = requantize_rgb(img, 128)
        if sprinkle.any():
            out[sprinkle] = requantize_rgb(img[sprinkle][None], 64)[0]
        mask = sprinkle
    if return_mask:
        return out, mask
    return out


def predict_recovery(p_untouched):
    """Expected LSB recovery when untouched pixels keep the bit and the
    rest fall to chance"""
    if not 0 <= p_untouched <= 1:
        raise ValueError('p_untouched must be in [0, 1]')
    return 0.5 + 0.5 * p_untouched


@dataclass(frozen=True)
class LumaBucketConfig:
    buckets: int = 8
    weights: tuple = LUMA_WEIGHTS
    max_iter: int = 8
    tolerance: float = 1.

    def __post_init__(self):
        if self.buckets < 2:
            raise ValueError('need at least 2 luma buckets')

    @property
    def capacity_bits(self):
        return float(np.log2(self.buckets))

    def centers(self):
        return (np.arange(self.buckets) + 0.5) * 255. / self.buckets


def mean_luma(img):
    return float(np.mean(as_rgb(img) @ np.array(LUMA_WEIGHTS)))


def shift_mean_luma(img, target, weights=LUMA_WEIGHTS, max_iter=8,
                    tolerance=1.):
    """Move the mean luma of an image toward target

    The offset is applied to every channel, clamped to [0, 255], and
    re-measured up to ``max_iter`` times.

    :return: image, remaining residual (target - mean luma)
    """
    img = as_rgb(img)
    weights = np.array(weights)
    y = img.astype(float)
    out = img
    for _ in range(max_iter):
        residual = target - float(np.mean(out @ weights))
        if abs(residual) <= tolerance:
            break
        y = y + residual
        out = np.clip(np.rint(y), 0, 255).astype(np.uint8)
    return out, target - float(np.mean(out @ weights))


def bucket_mean_luma(img, cfg=None, return_residual=False):
    """Snap the mean luma of an image to the center of its bucket"""
    cfg = cfg or LumaBucketConfig()
    img = as_rgb(img)
    width = 255. / cfg.buckets
    mean = float(np.mean(img @ np.array(cfg.weights)))
    target = (min(int(mean // width), cfg.buckets - 1) + 0.5) * width
    out, residual = shift_mean_luma(img, target, cfg.weights, cfg.max_iter,
                                    cfg.tolerance)
    if abs(residual) > cfg.tolerance:
        log.warning('mean luma residual %.2f after %d iterations',
                    residual, cfg.max_iter)
    if return_residual:
        return out, residual
    return out


def canonicalize_sequence(batch, exempt=None):
    """Reorder non-exempt payloads by ascending sha256 of their bytes

    Exempt (signed) payloads keep their positions. Identical digests keep
    input order.
    """
    batch = list(batch)
    if exempt is None:
        exempt = [False] * len(batch)
    slots = [i for i, ok in enumerate(exempt) if not ok]
    ordered = sorted(slots, key=lambda i: (sha256(batch[i].data), i))
    out = list(batch)
    for slot, i in zip(slots, ordered):
        out[slot] = batch[i]
    return out


def generate_probe_cover(width=128, height=128):
    """Deterministic gradient cover with a saturated yellow patch

    R grows along x, G along y and B along x + y, all reaching 255 at the
    bottom-right corner. The patch sits in the upper-right quadrant.
    """
    x = np.arange(width, dtype=float)
    y = np.arange(height, dtype=float)
    xx, yy = np.meshgrid(x, y)
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[..., 0] = np.rint(255 * xx / max(width - 1, 1))
    img[..., 1] = np.rint(255 * yy / max(height - 1, 1))
    img[..., 2] = np.rint(255 * (xx + yy) / max(width + height - 2, 1))
    img[height // 8:3 * height // 8, 5 * width // 8:7 * width // 8] = \
        (255, 255, 0)
    return img


def distortion(a, b):
    """Max and mean absolute per-channel change"""
    d = np.abs(as_rgb(a).astype(int) - as_rgb(b).astype(int))
    return int(d.max()), float(d.mean())


def read_image(data):
    """Decode PNG, PPM or any Pillow format from bytes or a file name"""
    if isinstance(data, (bytes, bytearray)):
        data = io.BytesIO(data)
    with Image.open(data) as im:
        fmt = im.format
        img = np.asarray(im.convert('RGB'), dtype=np.uint8)
    return img, fmt


def write_image(img, fname=None, format='PNG'):
    """Encode as PNG or binary PPM, return bytes if fname is None"""
    im = Image.fromarray(as_rgb(img), mode='RGB')
    if fname is not None:
        im.save(fname, format=format)
        return
    buf = io.BytesIO()
    im.save(buf, format=format)
    return buf.getvalue()


def scramble_image(img, levels=64, luma_buckets=None, variant=None, seed=0):
    """Requantize, then snap the mean luma to its bucket center

    Bucketing runs last so that the emitted mean is the bucket center.
    """
    if variant:
        img = quantize_variant(img, QuantizerSpec.parse(variant, seed))
    else:
        img = requantize_rgb(img, levels)
    if luma_buckets:
        img = bucket_mean_luma(img, LumaBucketConfig(luma_buckets))
    return img


def scramble_image_bytes(data, levels=64, luma_buckets=None, variant=None):
    """Media chokepoint scrambler: decode, scramble, re-encode

    PPM input stays PPM, everything else is emitted as PNG.
    """
    img, fmt = read_image(data)
    out = scramble_image(img, levels, luma_buckets, variant)
    return write_image(out, format='PPM' if fmt == 'PPM' else 'PNG')
