"""Minimal deterministic PNG helpers.

The synthetic fixtures and the mock editor need tiny, byte-stable image
files; hand-rolling the encoder keeps run artifacts bit-reproducible across
library versions. Only what the mocks need: solid/patterned RGB images and
tEXt chunk injection into an existing PNG.
"""

from __future__ import annotations

import struct
import zlib

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(kind: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + kind
        + data
        + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)
    )


def write_rgb_png(pixels: list[list[tuple[int, int, int]]]) -> bytes:
    """Encode rows of RGB tuples as a PNG (8-bit, no interlace)."""
    height = len(pixels)
    width = len(pixels[0])
    raw = b"".join(
        b"\x00" + b"".join(bytes(px) for px in row) for row in pixels
    )
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return (
        PNG_SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw, 9))
        + _chunk(b"IEND", b"")
    )


def patterned_png(seed: int, size: int = 8) -> bytes:
    """A small deterministic image whose pixels are a pure function of the seed."""
    rows = []
    state = seed & 0xFFFFFFFFFFFFFFFF
    for y in range(size):
        row = []
        for x in range(size):
            state = (state * 6364136223846793005 + 1442695040888963407) & 0xFFFFFFFFFFFFFFFF
            row.append(((state >> 16) & 0xFF, (state >> 24) & 0xFF, (state >> 32) & 0xFF))
        rows.append(row)
    return write_rgb_png(rows)


def iter_chunks(png: bytes):
    if png[:8] != PNG_SIGNATURE:
        raise ValueError("not a PNG byte stream")
    i = 8
    while i < len(png):
        (length,) = struct.unpack(">I", png[i : i + 4])
        kind = png[i + 4 : i + 8]
        data = png[i + 8 : i + 8 + length]
        yield kind, data
        i += 12 + length


def inject_text_chunk(png: bytes, keyword: str, text: str) -> bytes:
    """Insert a tEXt chunk before IEND; pixels are untouched so the result
    is still the same image to any decoder."""
    if png[:8] != PNG_SIGNATURE:
        raise ValueError("not a PNG byte stream")
    payload = keyword.encode("latin-1") + b"\x00" + text.encode("latin-1")
    out = [PNG_SIGNATURE]
    i = 8
    injected = False
    while i < len(png):
        (length,) = struct.unpack(">I", png[i : i + 4])
        kind = png[i + 4 : i + 8]
        chunk = png[i : i + 12 + length]
        if kind == b"IEND" and not injected:
            out.append(_chunk(b"tEXt", payload))
            injected = True
        out.append(chunk)
        i += 12 + length
    if not injected:
        raise ValueError("PNG stream has no IEND chunk")
    return b"".join(out)


def read_text_chunk(png: bytes, keyword: str) -> str | None:
    key = keyword.encode("latin-1")
    for kind, data in iter_chunks(png):
        if kind == b"tEXt" and b"\x00" in data:
            k, _, v = data.partition(b"\x00")
            if k == key:
                return v.decode("latin-1")
    return None
