"""File formats: JSONL annotations and binary PGM (P5) images and masks."""

from __future__ import annotations

import json
import os
from typing import Iterable

import numpy as np

from .errors import FormatError
from .geometry import AspectAnnotation


def write_annotations(path, items: Iterable[tuple[str, AspectAnnotation]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ident, ann in items:
            rec = {"id": str(ident)}
            rec.update(ann.to_json())
            fh.write(json.dumps(rec) + "\n")


def read_annotations(path) -> list[tuple[str, AspectAnnotation]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                ann = AspectAnnotation.from_json(rec)
                ident = str(rec["id"])
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: bad annotation record ({exc})") from exc
            out.append((ident, ann))
    return out


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PGM header")
    return buf[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a ``uint8`` array of shape ``(H, W)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        m_tok, pos = _read_token(buf, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 256:
        raise FormatError(f"{path}: unsupported PGM geometry {width}x{height} maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    data = buf[pos:pos + width * height]
    if len(data) != width * height:
        raise FormatError(f"{path}: PGM payload has {len(data)} bytes, expected {width * height}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, arr: np.ndarray) -> None:
    a = np.asarray(arr)
    if a.ndim != 2:
        raise FormatError("PGM images must be 2-D")
    if a.dtype != np.uint8:
        raise FormatError("write_pgm expects uint8 data; use write_mask or write_image")
    h, w = a.shape
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a).tobytes())
    os.replace(tmp, path)


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    return read_pgm(path) >= 128


def write_image(path, img: np.ndarray) -> None:
    """Store a float image in [0, 1] as 8-bit grey levels ``round(255 * v)``."""
    a = np.asarray(img, dtype=np.float64)
    write_pgm(path, np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8))


def read_image(path) -> np.ndarray:
    return (read_pgm(path).astype(np.float32) / np.float32(255.0)).astype(np.float32)
