"""Image and tensor files.

Binary PPM (``P6``, maxval 255) holds 8-bit RGB; pixels load as ``v / 255`` and
save with round-half-to-even quantization. The FRAT tensor format stores any
float64 array bit-exactly::

    b"FRAT" | u32 rank | u32 dims[rank] | f64 payload (row-major)

with every integer and float little-endian.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FRAT"


class ImageFormatError(ValueError):
    pass


def save_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ImageFormatError(f"{path}: missing FRAT magic")
    if len(data) < 8:
        raise ImageFormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", data, 4)
    end = 8 + 4 * rank
    if len(data) < end:
        raise ImageFormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) != end + 8 * count:
        raise ImageFormatError(f"{path}: payload has {len(data) - end} bytes, expected {8 * count}")
    return np.frombuffer(data, dtype="<f8", count=count, offset=end).reshape(dims).astype(np.float64)


_PPM_HEADER = re.compile(rb"P6(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)\s")


def load_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PPM_HEADER.match(data)
    if not m:
        raise ImageFormatError(f"{path}: not a binary P6 PPM")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval {maxval} unsupported (only 255)")
    payload = data[m.end() :]
    need = width * height * 3
    if len(payload) < need:
        raise ImageFormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=need).reshape(height, width, 3)
    return pixels.astype(np.float64) / 255.0


def save_ppm(path, image) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"PPM needs an H x W x 3 image, got shape {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + q.tobytes())


def load_image(path) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return load_tensor(path)
    if head[:2] == b"P6":
        return load_ppm(path)
    raise ImageFormatError(f"{path}: unrecognized image format")


def save_image(path, image) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        save_ppm(path, image)
    else:
        save_tensor(path, image)
