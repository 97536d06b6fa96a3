"""LEMB binary writer (little-endian).

Layout: magic "LEMB" | u32 version=1 | u32 m | u32 D | u32 T |
token table (T x: u16 byte length + UTF-8 bytes) |
m*T*D float32 payload in (layer, token, dim) order | u32 CRC-32 of payload.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

LEMB_MAGIC = b"LEMB"
LEMB_VERSION = 1


def write_lemb(path, tokens: list[str], values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    m, t, d = values.shape
    if t != len(tokens):
        raise ValueError(f"{len(tokens)} tokens but {t} token rows")
    payload = np.ascontiguousarray(values).tobytes()
    with open(path, "wb") as fh:
        fh.write(LEMB_MAGIC)
        fh.write(struct.pack("<IIII", LEMB_VERSION, m, d, t))
        for token in tokens:
            raw = token.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))
