"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""
from __future__ import annotations

import os

import numpy as np

from ._fileutil import atomic_write

__all__ = ["ImageFormatError", "read_image", "write_image", "to_uint8"]

_CHANNELS = {b"P5": 1, b"P6": 3}


class ImageFormatError(ValueError):
    def __init__(self, msg, offset=None):
        if offset is not None:
            msg = f"{msg} (at byte {offset})"
        super().__init__(msg)
        self.offset = offset


def _header_tokens(buf: bytes, count: int, pos: int):
    """First ``count`` header tokens from ``pos`` with their offsets, and the payload offset."""
    tokens = []
    while len(tokens) < count:
        while pos < len(buf) and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                end = buf.find(b"\n", pos)
                pos = len(buf) if end < 0 else end + 1
            else:
                pos += 1
        if pos >= len(buf):
            raise ImageFormatError("header ends early", pos)
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((buf[start:pos], start))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("expected one whitespace byte after maxval", pos)
    return tokens, pos + 1


def decode_image(buf: bytes) -> np.ndarray:
    """Decode PGM/PPM bytes into a float32 ``[C, H, W]`` array scaled to ``[0, 1]``."""
    if buf[:2] not in _CHANNELS:
        raise ImageFormatError(f"unsupported magic {buf[:2]!r}; expected P5 or P6", 0)
    channels = _CHANNELS[buf[:2]]
    if len(buf) < 3 or not buf[2:3].isspace():
        raise ImageFormatError("expected whitespace after magic", 2)
    ((tw, ow), (th, oh), (tm, om)), data_start = _header_tokens(buf, 3, 3)
    vals = []
    for tok, off, what in ((tw, ow, "width"), (th, oh, "height"), (tm, om, "maxval")):
        if not tok.isdigit():
            raise ImageFormatError(f"{what} is not a decimal integer: {tok!r}", off)
        vals.append(int(tok))
    w, h, maxval = vals
    if w < 1 or h < 1:
        raise ImageFormatError(f"dimensions must be positive, got {w}x{h}", ow)
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}", om)
    expected = w * h * channels
    payload = buf[data_start:]
    if len(payload) != expected:
        raise ImageFormatError(
            f"payload has {len(payload)} bytes, expected {expected} for {w}x{h}x{channels}",
            data_start,
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, channels)
    return (arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def to_uint8(x) -> np.ndarray:
    """Quantise ``[0, 1]`` values as ``round(255 * v)`` (half away from zero)."""
    v = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def encode_image(x) -> bytes:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ValueError(f"image must be [1, H, W] or [3, H, W], got {x.shape}")
    c, h, w = x.shape
    data = x if x.dtype == np.uint8 else to_uint8(x)
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + data.transpose(1, 2, 0).tobytes()


def write_image(path, x) -> None:
    atomic_write(os.fspath(path), encode_image(x))
