"""Bit-exact file formats: the ".cks" container, PGM/PBM images, metric CSVs.

Container layout::

    bytes 0..7    magic  b"CKS1\\x00\\x00\\x00\\x00"
    bytes 8..11   u32 little-endian: length of the JSON header
    header        UTF-8 JSON: {"kind", "version", "meta", "arrays": [{name, shape, dtype}]}
    arrays        raw little-endian float32 / complex64 bytes, header order
    trailer       u32 little-endian CRC32 over header bytes + array bytes

Every failure mode is a distinct exception so callers can tell a truncated
download from a corrupted one from a foreign file.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .mri import SamplingMask
from .phantom import DatasetRecord

MAGIC = b"CKS1\x00\x00\x00\x00"
VERSION = 1

_DTYPES = {"float32": "<f4", "complex64": "<c8"}


class ContainerError(Exception):
    """Base class for container failures."""


class FormatError(ContainerError):
    """Not a container file (bad magic or unparseable header)."""


class VersionError(ContainerError):
    """Container version not supported."""


class TruncationError(ContainerError):
    """File ends before the declared payload does."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class ChecksumError(ContainerError):
    """Payload CRC32 does not match the trailer."""


class CheckpointMismatchError(ContainerError):
    """Checkpoint config does not match the requesting model."""


def _canonical(arr: np.ndarray) -> tuple[np.ndarray, str]:
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        return arr.astype("<c8"), "complex64"
    if arr.dtype == np.bool_:
        return arr.astype("<f4"), "float32"
    return arr.astype("<f4"), "float32"


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        canon, dtype = _canonical(arr)
        entries.append({"name": name, "shape": list(canon.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(canon).tobytes())
    header = json.dumps(
        {"kind": kind, "version": VERSION, "meta": meta, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    payload = header + b"".join(blobs)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(payload)
        f.write(struct.pack("<I", crc))


def read_container(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4:
        raise TruncationError("file shorter than the fixed preamble", len(blob))
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic bytes in {path}")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    off = len(MAGIC) + 4
    if len(blob) < off + hlen:
        raise TruncationError("header truncated", len(blob))
    header_bytes = blob[off: off + hlen]
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable header: {exc}") from None
    if header.get("version") != VERSION:
        raise VersionError(f"unsupported container version {header.get('version')!r}")

    arrays: dict[str, np.ndarray] = {}
    pos = off + hlen
    for entry in header["arrays"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        if len(blob) < pos + nbytes:
            raise TruncationError(f"array {entry['name']!r} truncated", len(blob))
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=pos).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
        pos += nbytes
    if len(blob) < pos + 4:
        raise TruncationError("missing CRC trailer", len(blob))
    (crc_stored,) = struct.unpack_from("<I", blob, pos)
    crc_actual = zlib.crc32(blob[off: pos]) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise ChecksumError(f"CRC mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}")
    return header["kind"], header.get("meta", {}), arrays


# ---------------------------------------------------------------------------
# typed wrappers
# ---------------------------------------------------------------------------

def write_record(path, record: DatasetRecord) -> None:
    meta = dict(record.meta)
    meta["mask"] = {
        "kind": record.mask.kind,
        "requested_acceleration": record.mask.requested_acceleration,
        "seed": record.mask.seed,
        "extra": record.mask.extra,
    }
    arrays = {
        "reference": record.reference,
        "maps": record.maps,
        "mask_keep": record.mask.keep,
        "kspace": record.kspace,
        "lesion_mask": record.lesion_mask,
        "wm_mask": record.wm_mask,
    }
    write_container(path, "record", meta, arrays)


def read_record(path) -> DatasetRecord:
    kind, meta, arrays = read_container(path)
    if kind != "record":
        raise FormatError(f"expected a record container, got kind {kind!r}")
    mmeta = meta.pop("mask", {})
    mask = SamplingMask(
        arrays["mask_keep"].astype(np.float64),
        kind=mmeta.get("kind", "full"),
        requested_acceleration=float(mmeta.get("requested_acceleration", 1.0)),
        seed=int(mmeta.get("seed", 0)),
        extra=mmeta.get("extra", {}),
    )
    return DatasetRecord(
        reference=arrays["reference"].astype(np.complex128),
        maps=arrays["maps"].astype(np.complex128),
        mask=mask,
        kspace=arrays["kspace"].astype(np.complex128),
        lesion_mask=arrays["lesion_mask"] > 0.5,
        wm_mask=arrays["wm_mask"] > 0.5,
        meta=meta,
    )


def write_mask(path, mask: SamplingMask) -> None:
    meta = {
        "kind": mask.kind,
        "requested_acceleration": mask.requested_acceleration,
        "seed": mask.seed,
        "extra": mask.extra,
    }
    write_container(path, "mask", meta, {"keep": mask.keep})


def read_mask(path) -> SamplingMask:
    kind, meta, arrays = read_container(path)
    if kind != "mask":
        raise FormatError(f"expected a mask container, got kind {kind!r}")
    return SamplingMask(
        arrays["keep"].astype(np.float64),
        kind=meta.get("kind", "full"),
        requested_acceleration=float(meta.get("requested_acceleration", 1.0)),
        seed=int(meta.get("seed", 0)),
        extra=meta.get("extra", {}),
    )


def write_phantom(path, image: np.ndarray, lesion_mask: np.ndarray, wm_mask: np.ndarray,
                  meta: dict | None = None) -> None:
    write_container(path, "phantom", meta or {}, {
        "image": image, "lesion_mask": lesion_mask, "wm_mask": wm_mask,
    })


def read_phantom(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    kind, meta, arrays = read_container(path)
    if kind != "phantom":
        raise FormatError(f"expected a phantom container, got kind {kind!r}")
    return (arrays["image"].astype(np.complex128),
            arrays["lesion_mask"] > 0.5, arrays["wm_mask"] > 0.5, meta)


def save_checkpoint(path, config: dict, values: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    full_meta = {"config": config}
    if meta:
        full_meta.update(meta)
    write_container(path, "model", full_meta, values)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict]:
    kind, meta, arrays = read_container(path)
    if kind != "model":
        raise FormatError(f"expected a model container, got kind {kind!r}")
    config = meta.get("config", {})
    extra = {k: v for k, v in meta.items() if k != "config"}
    return config, arrays, extra


# ---------------------------------------------------------------------------
# images and masks for eyeballing
# ---------------------------------------------------------------------------

def export_image(img: np.ndarray, path) -> None:
    """Magnitude as binary 16-bit PGM (P5), big-endian samples."""
    mag = np.abs(np.asarray(img))
    peak = mag.max()
    scaled = np.zeros_like(mag) if peak == 0 else mag / peak
    pixels = np.round(scaled * 65535.0).astype(">u2")
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(pixels.tobytes())


def import_pgm(path) -> np.ndarray:
    """Read back a 16-bit binary PGM written by :func:`export_image`."""
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError("not a binary PGM file")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 65535:
        raise FormatError(f"expected 16-bit PGM, got maxval {maxval}")
    return np.frombuffer(parts[3], dtype=">u2", count=h * w).reshape(h, w).astype(np.uint16)


def export_mask_pbm(mask: SamplingMask, path) -> None:
    """Sampling pattern as 1-bit PBM (P4); kept samples are black (1)."""
    keep = mask.keep.astype(bool)
    h, w = keep.shape
    with open(path, "wb") as f:
        f.write(f"P4\n{w} {h}\n".encode("ascii"))
        f.write(np.packbits(keep, axis=1).tobytes())


# ---------------------------------------------------------------------------
# metrics CSV (RFC 4180)
# ---------------------------------------------------------------------------

METRICS_HEADER = ("id", "method", "dataset", "acc", "ssim", "psnr_db",
                  "cr", "wmn", "bgn", "wa", "snr", "wall_ms")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if np.isinf(f):
        return "inf"
    if np.isnan(f):
        return ""
    return f"{f:.6f}"


def metrics_csv_bytes(rows: list[dict]) -> bytes:
    lines = [",".join(METRICS_HEADER)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(col)) for col in METRICS_HEADER))
    return ("\r\n".join(lines) + "\r\n").encode("utf-8")


def write_metrics_csv(path, rows: list[dict]) -> None:
    Path(path).write_bytes(metrics_csv_bytes(rows))
