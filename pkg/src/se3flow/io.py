"""File formats: SFR1 rasters, Middlebury ``.flo`` flow and grayscale PFM.

SFR1 layout (all little-endian)::

    b"SFR1" | u32 height | u32 width | u32 channels | u32 dtype | payload

dtype 1 is float32 and dtype 2 is float64, with the payload stored row-major
as (height, width, channels).
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

SFR_MAGIC = b"SFR1"
SFR_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
FLO_MAGIC = 202021.25


def write_raster(path, arr, dtype=None):
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise FormatError(f"raster must be 2-D or 3-D, got shape {arr.shape}")
    if dtype is None:
        dtype = np.float64 if arr.dtype == np.float64 else np.float32
    tag = 2 if np.dtype(dtype) == np.float64 else 1
    H, W, C = arr.shape
    with open(path, "wb") as fh:
        fh.write(SFR_MAGIC)
        fh.write(struct.pack("<4I", H, W, C, tag))
        fh.write(np.ascontiguousarray(arr, dtype=SFR_DTYPES[tag]).tobytes())


def read_raster(path):
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != SFR_MAGIC:
        raise FormatError(f"{path}: not an SFR1 raster")
    H, W, C, tag = struct.unpack("<4I", data[4:20])
    if tag not in SFR_DTYPES:
        raise FormatError(f"{path}: unknown dtype tag {tag}")
    dt = SFR_DTYPES[tag]
    expect = H * W * C * dt.itemsize
    if len(data) - 20 != expect:
        raise FormatError(f"{path}: payload is {len(data) - 20} bytes, expected {expect}")
    return np.frombuffer(data, dtype=dt, offset=20).reshape(H, W, C).astype(dt.newbyteorder("="))


def write_flo(path, flow):
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise FormatError(f"flow must be (H, W, 2), got {flow.shape}")
    H, W, _ = flow.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<2i", W, H))
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated .flo header")
    (magic,) = struct.unpack("<f", data[:4])
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad .flo magic {magic}")
    W, H = struct.unpack("<2i", data[4:12])
    if W < 0 or H < 0:
        raise FormatError(f"{path}: negative .flo size")
    expect = W * H * 2 * 4
    if len(data) - 12 != expect:
        raise FormatError(f"{path}: .flo payload is {len(data) - 12} bytes, expected {expect}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(H, W, 2).astype(np.float32)


def write_pfm(path, img, little_endian=True):
    """Write a grayscale ``Pf`` PFM (rows stored bottom to top)."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim != 2:
        raise FormatError(f"PFM depth images must be 2-D, got {img.shape}")
    H, W = img.shape
    dt = "<f4" if little_endian else ">f4"
    scale = -1.0 if little_endian else 1.0
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{W} {H}\n{scale}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1], dtype=dt).tobytes())


_PFM_HEADER = re.compile(rb"^(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def read_pfm(path, allow_color=False):
    data = Path(path).read_bytes()
    m = _PFM_HEADER.match(data)
    if not m:
        raise FormatError(f"{path}: not a PFM file")
    kind, W, H, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    if kind == b"PF" and not allow_color:
        raise FormatError(f"{path}: color PFM ('PF') is not accepted for depth data")
    C = 3 if kind == b"PF" else 1
    dt = "<f4" if scale < 0 else ">f4"
    off = m.end()
    expect = W * H * C * 4
    if len(data) - off != expect:
        raise FormatError(f"{path}: PFM payload is {len(data) - off} bytes, expected {expect}")
    arr = np.frombuffer(data, dtype=dt, offset=off).reshape(H, W, C)[::-1].astype(np.float32)
    return arr[..., 0] if C == 1 else arr
