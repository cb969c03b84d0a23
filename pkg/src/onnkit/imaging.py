"""Image handling: normalization, noise, metrics, PGM files, corpora."""

import math
import os

import numpy as np


def normalize(image):
    """Affinely map an image's own range onto [-1, 1]."""
    image = np.asarray(image, dtype=np.float64)
    lo = image.min()
    hi = image.max()
    if hi <= lo:
        raise ValueError("degenerate range: constant image cannot be normalized")
    return 2.0 * (image - lo) / (hi - lo) - 1.0


def snr(target, output):
    """Signal-to-noise ratio in dB between a ground truth and an output.

    Signal power is the target's variance, noise power the variance of the
    residual; a zero-variance residual yields +inf.
    """
    target = np.asarray(target, dtype=np.float64)
    output = np.asarray(output, dtype=np.float64)
    if target.shape != output.shape:
        raise ValueError("target and output shapes differ")
    sig = target.var()
    if sig <= 0.0:
        raise ValueError("constant target has no signal power")
    noise = (target - output).var()
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(sig / noise)


def salt_pepper(image, p, rng):
    """Corrupt each pixel independently with probability ``p`` to -1 or +1."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("corruption probability must be in [0, 1]")
    image = np.asarray(image, dtype=np.float64)
    hit = rng.random(image.shape) < p
    spike = np.where(rng.random(image.shape) < 0.5, -1.0, 1.0)
    return np.where(hit, spike, image)


def wgn(shape, rng):
    """White Gaussian noise map normalized into [-1, 1]."""
    return normalize(rng.standard_normal(shape))


# -- PGM (P5) files ---------------------------------------------------------

def read_pgm(path):
    """Read an 8-bit binary PGM into a uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            if data[pos:pos + 1].isspace():
                pos += 1
            elif data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] not in (10, 13):
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        return data[start:pos]

    magic = token()
    if magic != b"P5":
        raise ValueError(f"not a binary PGM file: {path}")
    width = int(token())
    height = int(token())
    maxval = int(token())
    if maxval != 255:
        raise ValueError(f"only maxval 255 PGMs are supported: {path}")
    pos += 1  # single whitespace after the header
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise ValueError(f"truncated PGM raster: {path}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def write_pgm(path, image):
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError("PGM writer expects uint8 pixels")
    if image.ndim != 2:
        raise ValueError("PGM writer expects a 2-D image")
    h, w = image.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    tmp = f"{path}.tmp~"
    with open(tmp, "wb") as fh:
        fh.write(header + image.tobytes())
    os.replace(tmp, path)


# -- geometry ---------------------------------------------------------------

def center_crop_square(image):
    h, w = image.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return image[top:top + side, left:left + side]


def resize_bilinear(image, out_h, out_w):
    """Plain bilinear resample (pixel-center alignment)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bot = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def to_thumbnail(image, size=60):
    """Center-crop to square, then bilinear resize, then requantize."""
    cropped = center_crop_square(np.asarray(image, dtype=np.float64))
    resized = resize_bilinear(cropped, size, size)
    return np.clip(np.rint(resized), 0, 255).astype(np.uint8)


# -- synthetic fallback corpus ---------------------------------------------

def _grid(size):
    c = np.linspace(-1.0, 1.0, size)
    return np.meshgrid(c, c, indexing="ij")


def _texture(kind, size, rng):
    yy, xx = _grid(size)
    if kind == 0:  # tilted gradient
        a = rng.uniform(0, 2 * np.pi)
        return np.cos(a) * xx + np.sin(a) * yy
    if kind == 1:  # plaid
        fx, fy = rng.uniform(1.5, 5.0, 2)
        return np.sin(fx * np.pi * xx) * np.cos(fy * np.pi * yy)
    if kind == 2:  # checkerboard
        cells = rng.integers(3, 8)
        return np.where(
            (np.floor((xx + 1) * cells / 2) + np.floor((yy + 1) * cells / 2)) % 2,
            1.0, -1.0)
    if kind == 3:  # disks on a gradient
        img = 0.4 * xx
        for _ in range(rng.integers(2, 5)):
            cy, cx = rng.uniform(-0.7, 0.7, 2)
            r = rng.uniform(0.15, 0.4)
            img = np.where((xx - cx) ** 2 + (yy - cy) ** 2 < r * r,
                           rng.uniform(-1, 1), img)
        return img
    if kind == 4:  # blocks
        img = np.full((size, size), -0.5)
        for _ in range(rng.integers(2, 5)):
            y0, x0 = rng.integers(0, size - 8, 2)
            hh, ww = rng.integers(6, size // 2, 2)
            img[y0:y0 + hh, x0:x0 + ww] = rng.uniform(-1, 1)
        return img
    if kind == 5:  # radial ripple
        f = rng.uniform(2.0, 6.0)
        return np.sin(f * np.pi * np.hypot(xx, yy))
    if kind == 6:  # smoothed noise
        img = rng.standard_normal((size, size))
        for _ in range(3):
            img = (img + np.roll(img, 1, 0) + np.roll(img, -1, 0)
                   + np.roll(img, 1, 1) + np.roll(img, -1, 1)) / 5.0
        return img
    # diagonal stripes
    f = rng.uniform(2.0, 7.0)
    return np.sign(np.sin(f * np.pi * (xx + yy)))


def synthetic_corpus(count, size=60, seed=0):
    """Deterministic procedural images as (id, uint8 image) pairs."""
    rng = np.random.default_rng([seed, 0x5EED])
    out = []
    for i in range(count):
        img = _texture(i % 8, size, rng)
        img = img + 0.05 * rng.standard_normal((size, size))
        lo, hi = img.min(), img.max()
        pix = np.clip(np.rint((img - lo) / (hi - lo) * 255), 0, 255)
        out.append((f"syn{i:04d}", pix.astype(np.uint8)))
    return out
