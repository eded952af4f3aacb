"""Minimal PPM (P6) / PGM (P5) decoding and bilinear resizing.

The inference path needs one dependency-free codec; binary netpbm is
sufficient. Decoded images are channel-first float32 in [0, 1].
"""

from __future__ import annotations

import numpy as np


class ImageParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _read_token(blob: bytes, offset: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines
    n = len(blob)
    while offset < n:
        ch = blob[offset : offset + 1]
        if ch == b"#":
            while offset < n and blob[offset : offset + 1] != b"\n":
                offset += 1
        elif ch.isspace():
            offset += 1
        else:
            break
    start = offset
    while offset < n and not blob[offset : offset + 1].isspace():
        offset += 1
    if start == offset:
        raise ImageParseError("unexpected end of header", start)
    return blob[start:offset], offset


def decode_netpbm(blob: bytes) -> np.ndarray:
    """Decode P6/P5 bytes into a [3, H, W] float32 array in [0, 1]."""
    magic, offset = _read_token(blob, 0)
    if magic not in (b"P6", b"P5"):
        raise ImageParseError(f"unsupported netpbm magic {magic!r}", 0)
    fields = []
    for _ in range(3):
        token, offset = _read_token(blob, offset)
        try:
            fields.append(int(token))
        except ValueError:
            raise ImageParseError(f"non-numeric header field {token!r}", offset) from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageParseError(f"invalid dimensions {width}x{height}", offset)
    if maxval != 255:
        raise ImageParseError(f"only maxval 255 supported, got {maxval}", offset)
    offset += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = blob[offset : offset + expected]
    if len(payload) != expected:
        raise ImageParseError(
            f"truncated pixel data: expected {expected} bytes, got {len(payload)}", offset
        )
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    img = img.astype(np.float32) / 255.0
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def load_image(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_netpbm(fh.read())


def bilinear_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Resize a [C, H, W] image to [C, size, size] (align-corners-false)."""
    c, h, w = img.shape
    if (h, w) == (size, size):
        return img.astype(np.float32)
    ys = (np.arange(size) + 0.5) * h / size - 0.5
    xs = (np.arange(size) + 0.5) * w / size - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)
    wx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bottom = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    out = top * (1 - wy)[None, :, None] + bottom * wy[None, :, None]
    return out.astype(np.float32)


def prepare_input(path: str, input_size: int) -> np.ndarray:
    """Decoded, resized, batch-1 network input [1, 3, size, size]."""
    img = bilinear_resize(load_image(path), input_size)
    return img[None]
