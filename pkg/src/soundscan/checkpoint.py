"""Binary container for checkpoints, prototype stores, and embeddings.

Layout (all integers little-endian):

    magic   4 bytes  b"SSCX"
    version u32
    config  u32 length + utf-8 text (the flat key=value config echo)
    count   u32 number of arrays
    entry   u16 name length + utf-8 name
            u8 ndim, then u32 per dimension
            float64 data, C order

Writing sorts entries by name, so identical state always produces
identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"SSCX"
VERSION = 1


def save_container(path, arrays: dict, config_echo: str = "") -> None:
    echo = config_echo.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(echo)))
        fh.write(echo)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f8", order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_container(path):
    """Returns (arrays: dict[str, ndarray], config_echo: str)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None

    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a soundscan container")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: container version {version}, expected {VERSION}")

    pos = 8
    (echo_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    echo = raw[pos:pos + echo_len].decode("utf-8")
    pos += echo_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4

    arrays = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, pos) if ndim else ()
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f8", count=size, offset=pos)
            pos += size * 8
            arrays[name] = data.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated container ({exc})") from None
    return arrays, echo
