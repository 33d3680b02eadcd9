"""Binary portable pixmap I/O: 8-bit P5 (gray) and P6 (color)."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _to_u8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, image) -> None:
    """Write a (H, W) image, float in [0,1] or uint8, as binary P5."""
    u8 = _to_u8(image)
    if u8.ndim != 2:
        raise ValueError(f"P5 wants a (H, W) image, got {u8.shape}")
    h, w = u8.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def write_ppm(path, image) -> None:
    """Write a (H, W, 3) image, float in [0,1] or uint8, as binary P6."""
    u8 = _to_u8(image)
    if u8.ndim != 3 or u8.shape[2] != 3:
        raise ValueError(f"P6 wants a (H, W, 3) image, got {u8.shape}")
    h, w, _ = u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def _read_header_tokens(blob: bytes, count: int):
    """Pull `count` whitespace-separated tokens after the magic, skipping
    '#' comments; returns (tokens, offset of first payload byte)."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(blob):
            raise DataError("truncated pixmap header")
        ch = blob[i : i + 1]
        if ch == b"#":
            while i < len(blob) and blob[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j : j + 1].isspace() and blob[j : j + 1] != b"#":
                j += 1
            tokens.append(blob[i:j])
            i = j
    # exactly one whitespace byte separates the header from the payload
    return tokens, i + 1


def read_pixmap(path) -> np.ndarray:
    """Read P5 or P6; returns float64 in [0,1], (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary P5/P6 pixmap")
    color = blob[:2] == b"P6"
    try:
        tokens, offset = _read_header_tokens(blob[2:], 3)
        w, h, maxval = (int(t) for t in tokens)
    except (ValueError, DataError) as exc:
        raise DataError(f"{path}: bad pixmap header: {exc}") from exc
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    n = w * h * (3 if color else 1)
    payload = blob[2 + offset : 2 + offset + n]
    if len(payload) != n:
        raise DataError(f"{path}: truncated pixmap payload")
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return data.reshape((h, w, 3) if color else (h, w))
