"""Binary containers: SLT1 tensors, checkpoint archives, raw frames, PNG images.

SLT1 layout (little-endian): magic ``b"SLT1"``, u32 rank, rank x u64
extents, u8 dtype code (0=f32, 1=f64), then the raw element data.
"""

from __future__ import annotations

import json
import struct
import warnings
import zipfile
from pathlib import Path
from typing import Mapping

import cv2
import numpy as np

from .errors import FormatError

MAGIC = b"SLT1"
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def encode_tensor(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    arr = arr.astype(arr.dtype.newbyteorder("<"), order="C")  # keeps 0-d shape
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + bytes([_CODES[arr.dtype]]) + arr.tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise FormatError("not an SLT1 tensor (bad magic)")
    (rank,) = struct.unpack_from("<I", blob, 4)
    pos = 8 + 8 * rank
    if len(blob) < pos + 1:
        raise FormatError("truncated SLT1 header")
    shape = struct.unpack_from(f"<{rank}Q", blob, 8)
    code = blob[pos]
    if code not in _DTYPES:
        raise FormatError(f"unknown SLT1 dtype code {code}")
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    payload = blob[pos + 1:]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(f"SLT1 payload holds {len(payload)} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    try:
        return decode_tensor(Path(path).read_bytes())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def save_archive(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named tensors as ``<name>.slt`` members of a stored zip.

    Members are sorted and timestamps fixed so identical content gives
    identical bytes.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(tensors):
            info = zipfile.ZipInfo(f"{name}.slt", date_time=_ZIP_EPOCH)
            zf.writestr(info, encode_tensor(tensors[name]))
        if meta is not None:
            info = zipfile.ZipInfo("meta.json", date_time=_ZIP_EPOCH)
            zf.writestr(info, json.dumps(meta, sort_keys=True))


def load_archive(path) -> tuple[dict[str, np.ndarray], dict | None]:
    try:
        with zipfile.ZipFile(path) as zf:
            tensors = {}
            meta = None
            for member in zf.namelist():
                if member == "meta.json":
                    meta = json.loads(zf.read(member))
                elif member.endswith(".slt"):
                    tensors[member[:-4]] = decode_tensor(zf.read(member))
    except (OSError, zipfile.BadZipFile) as exc:
        raise FormatError(f"cannot read archive {path}: {exc}") from exc
    return tensors, meta


# ---------------------------------------------------------------------------
# raw frames: u16 little-endian samples + JSON sidecar
# ---------------------------------------------------------------------------

def save_raw(path, bayer: np.ndarray, meta: dict) -> None:
    path = Path(path)
    values = np.clip(np.rint(bayer), 0, 65535).astype("<u2")
    path.write_bytes(values.tobytes())
    sidecar = dict(meta, height=int(bayer.shape[0]), width=int(bayer.shape[1]))
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_raw(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
        data = np.frombuffer(path.read_bytes(), dtype="<u2")
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read raw frame {path}: {exc}") from exc
    h, w = int(meta["height"]), int(meta["width"])
    if data.size != h * w:
        raise FormatError(f"raw file holds {data.size} samples, sidecar says {h}x{w}")
    return data.reshape(h, w).astype(np.float64), meta


# ---------------------------------------------------------------------------
# PNG images with values in [0, 1]
# ---------------------------------------------------------------------------

def write_image(path, image: np.ndarray, bits: int = 16) -> int:
    """Write a grayscale (H, W) / (H, W, 1) or RGB (H, W, 3) image in [0, 1].

    Returns the number of samples clamped into range.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if not (img.ndim == 2 or (img.ndim == 3 and img.shape[2] == 3)):
        raise FormatError(f"unsupported image shape {img.shape}")
    clamped = int(np.count_nonzero((img < 0) | (img > 1)))
    if clamped:
        warnings.warn(f"{clamped} samples clamped to [0, 1] on write", stacklevel=2)
    peak = (1 << bits) - 1
    q = np.rint(np.clip(img, 0.0, 1.0) * peak).astype(np.uint16 if bits == 16 else np.uint8)
    if q.ndim == 3:
        q = q[..., ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(q)):
        raise FormatError(f"failed to write image {path}")
    return clamped


def read_image(path) -> np.ndarray:
    """Read a PNG into floats in [0, 1] (RGB channel order)."""
    raw = Path(path).read_bytes() if Path(path).exists() else b""
    img = cv2.imdecode(np.frombuffer(raw, dtype=np.uint8), cv2.IMREAD_UNCHANGED) if raw else None
    if img is None:
        raise FormatError(f"cannot decode image {path}")
    peak = 65535.0 if img.dtype == np.uint16 else 255.0
    if img.ndim == 3:
        img = img[..., ::-1]
    return img.astype(np.float64) / peak

