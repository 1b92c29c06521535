"""Portable-pixmap I/O, bilinear resize, and crop.

Images are ``uint8`` arrays of shape (H, W, 3).  Other formats can be
plugged in with ``register_decoder``.
"""
from pathlib import Path

import numpy as np

_DECODERS = {}


class ImageError(ValueError):
    pass


def _tokens(buf, count, pos):
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError("truncated pixmap header")
        out.append(buf[start:pos])
    return out, pos + 1


def decode_pnm(buf):
    magic = buf[:2]
    if magic not in (b"P6", b"P5"):
        raise ImageError(f"not a binary pixmap (magic {magic!r})")
    (w, h, maxval), pos = _tokens(buf, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ImageError(f"unsupported maxval {maxval}")
    ch = 3 if magic == b"P6" else 1
    need = w * h * ch
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos) if len(buf) - pos >= need else None
    if data is None:
        raise ImageError(f"truncated pixel data ({len(buf) - pos} of {need} bytes)")
    img = data.reshape(h, w, ch)
    return np.repeat(img, 3, axis=2) if ch == 1 else img.copy()


def encode_ppm(image):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ImageError(f"expected uint8 HxWx3 image, got {image.dtype} {image.shape}")
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def register_decoder(suffix, fn):
    """Register ``fn(bytes) -> uint8 HxWx3`` for files ending in ``suffix``."""
    _DECODERS[suffix.lower()] = fn


for _suffix in (".ppm", ".pgm", ".pnm"):
    register_decoder(_suffix, decode_pnm)


def read_image(path):
    path = Path(path)
    fn = _DECODERS.get(path.suffix.lower())
    if fn is None:
        raise ImageError(f"no decoder registered for {path.suffix!r}")
    return fn(path.read_bytes())


def write_image(path, image):
    Path(path).write_bytes(encode_ppm(image))


def _axis_weights(src_len, dst_len):
    scale = src_len / dst_len
    pos = (np.arange(dst_len) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0, src_len - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src_len - 1)
    return lo, hi, pos - lo


def resize_image(image, target_side):
    """Bilinear resample to target_side x target_side (aspect ratio not kept).

    Pixel centres are aligned (half-pixel convention) and edges clamp, so an
    image already at the target size comes back unchanged.
    """
    image = np.asarray(image)
    if target_side <= 0:
        raise ImageError("target_side must be positive")
    if image.size == 0:
        raise ImageError("cannot resize an empty image")
    h, w = image.shape[:2]
    if h == target_side and w == target_side:
        return image.copy()
    src = image.astype(np.float64)
    r0, r1, fr = _axis_weights(h, target_side)
    c0, c1, fc = _axis_weights(w, target_side)
    rows = src[r0] * (1 - fr)[:, None, None] + src[r1] * fr[:, None, None]
    out = rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]
    if image.dtype == np.uint8:
        return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return out.astype(image.dtype)


def crop_box(image, box):
    """Exact (x, y, w, h) sub-rectangle."""
    x, y, w, h = (int(v) for v in box)
    ih, iw = image.shape[:2]
    if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > iw or y + h > ih:
        raise ImageError(f"crop box {tuple(box)} outside {iw}x{ih} image")
    return image[y : y + h, x : x + w].copy()
