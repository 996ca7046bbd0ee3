"""Minimal PGM (portable graymap) reader/writer: P5 (binary) and P2 (ASCII),
maxval 255, with `#` comments allowed in the header."""

from __future__ import annotations

import numpy as np


def _tokens(data: bytes):
    """Header tokens, skipping whitespace and # comments."""
    i = 0
    while i < len(data):
        c = data[i : i + 1]
        if c.isspace():
            i += 1
            continue
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        yield data[i:j], j
        i = j


def read_pgm(data: bytes) -> np.ndarray:
    """Decodes to a uint8 [H, W] array."""
    it = _tokens(data)
    try:
        magic, _ = next(it)
        if magic not in (b"P2", b"P5"):
            raise ValueError(f"unsupported format {magic!r}; need P2 or P5 PGM")
        (w_tok, _), (h_tok, _), (max_tok, end) = next(it), next(it), next(it)
    except StopIteration:
        raise ValueError("truncated PGM header") from None
    width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise ValueError("invalid dimensions")
    if magic == b"P5":
        start = end + 1  # exactly one whitespace byte after maxval
        raster = data[start : start + width * height]
        if len(raster) != width * height:
            raise ValueError(f"expected {width * height} raster bytes, got {len(raster)}")
        return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    values = np.fromstring(data[end:].decode("ascii", errors="strict"), dtype=np.int64, sep=" ")
    if values.size != width * height:
        raise ValueError(f"expected {width * height} pixel values, got {values.size}")
    if values.min() < 0 or values.max() > 255:
        raise ValueError("pixel values outside 0..255")
    return values.astype(np.uint8).reshape(height, width)


def read_pgm_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_pgm(fh.read())


def write_pgm(path, image: np.ndarray) -> None:
    """Writes a uint8 [H, W] array as binary P5."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())
