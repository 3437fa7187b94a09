"""Binary PGM (P5) codec for saliency and depth rasters.

Saliency maps are written as 8-bit P5 (values rounded to integers). Depth
maps are written as 16-bit big-endian P5 with a ``# scale: <mm-per-unit>``
comment; a stored sample ``n`` decodes to ``n * scale / 1000`` meters.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import (
    DimensionOverflowError,
    MalformedHeaderError,
    TruncatedPayloadError,
)
from .saliency import DepthMap, SaliencyMap

MAX_PIXELS = 1 << 28
MAX_SIDE = 1 << 20
DEFAULT_SCALE_MM = 1.0

_SCALE_RE = re.compile(rb"#\s*scale:\s*(\S+)")
_WS = b" \t\r\n\v\f"


def _parse_header(data: bytes, path) -> tuple[int, int, int, int, float | None]:
    if data[:2] != b"P5":
        raise MalformedHeaderError(f"{path}: not a binary PGM (magic {data[:2]!r})")
    pos = 2
    tokens: list[bytes] = []
    scale = None
    n = len(data)
    while len(tokens) < 3:
        if pos >= n:
            raise MalformedHeaderError(f"{path}: header ends after {len(tokens)} fields")
        c = data[pos : pos + 1]
        if c in (b" ", b"\t", b"\r", b"\n", b"\v", b"\f"):
            pos += 1
        elif c == b"#":
            end = data.find(b"\n", pos)
            end = n if end < 0 else end
            m = _SCALE_RE.match(data[pos:end])
            if m:
                try:
                    scale = float(m.group(1))
                except ValueError:
                    raise MalformedHeaderError(f"{path}: bad scale comment {m.group(1)!r}") from None
            pos = end
        else:
            start = pos
            while pos < n and data[pos] not in _WS and data[pos : pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
    if pos >= n or data[pos] not in _WS:
        raise MalformedHeaderError(f"{path}: missing whitespace after maxval")
    pos += 1
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedHeaderError(f"{path}: non-integer header field in {tokens!r}") from None
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"{path}: non-positive dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise MalformedHeaderError(f"{path}: maxval {maxval} outside 1..65535")
    if width > MAX_SIDE or height > MAX_SIDE or width * height > MAX_PIXELS:
        raise DimensionOverflowError(f"{path}: {width}x{height} exceeds the {MAX_PIXELS}-pixel limit")
    if scale is not None and not scale > 0:
        raise MalformedHeaderError(f"{path}: scale must be positive, got {scale}")
    return width, height, maxval, pos, scale


def decode_pgm(data: bytes, path="<bytes>"):
    """Decode P5 bytes into ``(samples (h, w) int array, maxval, scale_mm | None)``."""
    width, height, maxval, pos, scale = _parse_header(data, path)
    bpp = 1 if maxval < 256 else 2
    need = width * height * bpp
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise TruncatedPayloadError(
            f"{path}: expected {need} payload bytes for {width}x{height}, got {len(payload)}"
        )
    dtype = np.uint8 if bpp == 1 else np.dtype(">u2")
    samples = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.int64)
    if samples.max() > maxval:
        raise MalformedHeaderError(f"{path}: sample exceeds maxval {maxval}")
    return samples, maxval, scale


def decode_raster(data: bytes, path="<bytes>", default_scale_mm: float = DEFAULT_SCALE_MM) -> SaliencyMap | DepthMap:
    """8-bit data decodes to :class:`SaliencyMap`, 16-bit data to :class:`DepthMap`.

    ``default_scale_mm`` applies to 16-bit files whose header carries no scale comment.
    """
    samples, maxval, scale = decode_pgm(data, path)
    if maxval < 256:
        vals = samples.astype(float)
        if maxval != 255:
            vals = vals * (255.0 / maxval)
        return SaliencyMap(vals)
    scale = default_scale_mm if scale is None else scale
    return DepthMap(samples.astype(float) * scale / 1000.0)


def load_raster(path, default_scale_mm: float = DEFAULT_SCALE_MM) -> SaliencyMap | DepthMap:
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_raster(data, path, default_scale_mm)


def encode_raster(raster: SaliencyMap | DepthMap, scale_mm: float = DEFAULT_SCALE_MM) -> bytes:
    if isinstance(raster, SaliencyMap):
        samples = np.rint(raster.values).astype(np.uint8)
        header = f"P5\n{raster.width} {raster.height}\n255\n".encode()
        return header + samples.tobytes()
    if isinstance(raster, DepthMap):
        if not scale_mm > 0:
            raise ValueError("scale_mm must be positive")
        raw = np.rint(raster.values * 1000.0 / scale_mm)
        if raw.max() > 65535:
            raise ValueError(
                f"depth {raster.values.max()} m does not fit 16 bits at {scale_mm} mm per unit"
            )
        header = f"P5\n# scale: {scale_mm!r}\n{raster.width} {raster.height}\n65535\n".encode()
        return header + raw.astype(">u2").tobytes()
    raise TypeError(f"cannot encode {type(raster).__name__}")


def save_raster(raster: SaliencyMap | DepthMap, path, scale_mm: float = DEFAULT_SCALE_MM) -> None:
    data = encode_raster(raster, scale_mm)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)
