"""Volume file I/O: single-file uncompressed NIfTI-1 and a raw+JSON sidecar format.

Payloads are stored x-fastest (x varies quickest in the byte stream), which is
the native NIfTI layout and the pinned layout of the sidecar format. NIfTI
orientation fields beyond spacing and origin are carried through a read/write
round trip verbatim but are never interpreted.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .volume import Mask3D, Volume3D

_HDR_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"

# NIfTI datatype code -> numpy dtype character (little-endian applied later)
_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}

_SIDECAR_DTYPES = {"f32": np.float32, "u8": np.uint8}


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    if path.suffix == ".json":
        return path, path.with_suffix(".raw")
    if path.suffix == ".raw":
        return path.with_suffix(".json"), path
    raise ValueError(f"unsupported format: {path.name}")


def read_volume(path: str | Path) -> Volume3D:
    """Read a volume from .nii, or from a .json/.raw sidecar pair.

    NIfTI scl_slope/scl_inter are applied when present; voxel values are
    returned as float32. Masks written with a uint8 payload read back as
    0/1-valued float32 volumes (use read_mask for a Mask3D).
    """
    path = Path(path)
    if path.suffix == ".nii":
        return _read_nifti(path)
    if path.suffix in (".json", ".raw"):
        return _read_sidecar(path)
    raise ValueError(f"unsupported format: {path.name}")


def write_volume(vol: Volume3D, path: str | Path) -> None:
    """Write a float32 volume to .nii or to a .json/.raw sidecar pair."""
    path = Path(path)
    if path.suffix == ".nii":
        _write_nifti(path, vol.voxels, vol.dims, vol.spacing, vol.origin,
                     datatype=16, raw_header=vol.raw_header)
    elif path.suffix in (".json", ".raw"):
        _write_sidecar(path, vol.voxels, vol.dims, vol.spacing, vol.origin, "f32")
    else:
        raise ValueError(f"unsupported format: {path.name}")


def write_mask(mask: Mask3D, path: str | Path) -> None:
    """Write a mask with an 8-bit payload (.nii datatype 2, or sidecar dtype u8)."""
    path = Path(path)
    if path.suffix == ".nii":
        _write_nifti(path, mask.voxels, mask.dims, mask.spacing, mask.origin,
                     datatype=2, raw_header=None)
    elif path.suffix in (".json", ".raw"):
        _write_sidecar(path, mask.voxels, mask.dims, mask.spacing, mask.origin, "u8")
    else:
        raise ValueError(f"unsupported format: {path.name}")


def read_mask(path: str | Path) -> Mask3D:
    """Read a mask file; values must be exactly 0 or 1."""
    vol = read_volume(path)
    vox = vol.voxels
    if not np.isin(vox, (0.0, 1.0)).all():
        raise ValueError(f"mask file {Path(path).name} has values other than 0/1")
    return Mask3D(vol.dims, vol.spacing, vol.origin, vox.astype(np.uint8))


def mask_from_volume(vol: Volume3D) -> Mask3D:
    vox = vol.voxels
    if not np.isin(vox, (0.0, 1.0)).all():
        raise ValueError("volume has values other than 0/1")
    return Mask3D(vol.dims, vol.spacing, vol.origin, vox.astype(np.uint8))


# ---------------------------------------------------------------------------
# NIfTI-1, single-file uncompressed


def _read_nifti(path: Path) -> Volume3D:
    blob = path.read_bytes()
    if len(blob) < _HDR_SIZE:
        raise ValueError(f"truncated NIfTI file: {path.name}")
    hdr = blob[:_HDR_SIZE]

    if struct.unpack_from("<i", hdr, 0)[0] == _HDR_SIZE:
        bo = "<"
    elif struct.unpack_from(">i", hdr, 0)[0] == _HDR_SIZE:
        bo = ">"
    else:
        raise ValueError(f"unsupported format: {path.name} is not a NIfTI-1 file")

    magic = hdr[344:348]
    if magic == _MAGIC_PAIR:
        raise ValueError(f"unsupported format: two-file NIfTI pair {path.name}")
    if magic != _MAGIC_SINGLE:
        raise ValueError(f"unsupported format: bad NIfTI magic in {path.name}")

    dim = struct.unpack_from(bo + "8h", hdr, 40)
    ndim = dim[0]
    if ndim < 3 or any(d not in (0, 1) for d in dim[4 : 1 + ndim]):
        raise ValueError(f"only 3D NIfTI volumes are supported, dim={dim!r}")
    dims = (int(dim[1]), int(dim[2]), int(dim[3]))
    if any(d < 1 for d in dims):
        raise ValueError(f"invalid NIfTI dims {dims}")

    datatype = struct.unpack_from(bo + "h", hdr, 70)[0]
    if datatype not in _DTYPES:
        raise ValueError(f"unsupported NIfTI datatype code {datatype}")
    dt = np.dtype(bo + _DTYPES[datatype])

    pixdim = struct.unpack_from(bo + "8f", hdr, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise ValueError(f"non-positive spacing in NIfTI header: {spacing}")

    vox_offset = int(struct.unpack_from(bo + "f", hdr, 108)[0])
    if vox_offset < _HDR_SIZE:
        raise ValueError(f"invalid vox_offset {vox_offset} in {path.name}")
    scl_slope = struct.unpack_from(bo + "f", hdr, 112)[0]
    scl_inter = struct.unpack_from(bo + "f", hdr, 116)[0]

    qform_code = struct.unpack_from(bo + "h", hdr, 252)[0]
    sform_code = struct.unpack_from(bo + "h", hdr, 254)[0]
    if qform_code > 0:
        origin = struct.unpack_from(bo + "3f", hdr, 268)
    elif sform_code > 0:
        srow_x = struct.unpack_from(bo + "4f", hdr, 280)
        srow_y = struct.unpack_from(bo + "4f", hdr, 296)
        srow_z = struct.unpack_from(bo + "4f", hdr, 312)
        origin = (srow_x[3], srow_y[3], srow_z[3])
    else:
        origin = (0.0, 0.0, 0.0)
    origin = tuple(float(o) for o in origin)

    n = dims[0] * dims[1] * dims[2]
    need = n * dt.itemsize
    payload = blob[vox_offset : vox_offset + need]
    if len(payload) < need:
        raise ValueError(
            f"payload size mismatch in {path.name}: "
            f"expected {need} bytes for dims {dims}, found {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype=dt)
    vox = flat.reshape(dims, order="F").astype(np.float32)

    if scl_slope != 0.0 and (scl_slope != 1.0 or scl_inter != 0.0):
        vox = vox * np.float32(scl_slope) + np.float32(scl_inter)

    if not np.isfinite(vox).all():
        raise ValueError(f"non-finite voxels in {path.name}")

    # Keep header bytes for round-tripping. Big-endian files are rare here;
    # rather than byte-swapping every field we drop the opaque carry-through
    # and let the writer rebuild a fresh little-endian header.
    raw = hdr if bo == "<" else None
    return Volume3D(dims, spacing, origin, vox, raw_header=raw)


def _write_nifti(
    path: Path,
    voxels: np.ndarray,
    dims: tuple[int, int, int],
    spacing: tuple[float, float, float],
    origin: tuple[float, float, float],
    datatype: int,
    raw_header: bytes | None,
) -> None:
    if raw_header is not None and len(raw_header) == _HDR_SIZE:
        hdr = bytearray(raw_header)
    else:
        hdr = bytearray(_HDR_SIZE)
        struct.pack_into("<h", hdr, 252, 1)  # qform_code
        struct.pack_into("<h", hdr, 254, 1)  # sform_code
        struct.pack_into("<4f", hdr, 280, spacing[0], 0.0, 0.0, origin[0])
        struct.pack_into("<4f", hdr, 296, 0.0, spacing[1], 0.0, origin[1])
        struct.pack_into("<4f", hdr, 312, 0.0, 0.0, spacing[2], origin[2])

    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, {2: 8, 16: 32}[datatype])
    pixdim0 = struct.unpack_from("<f", hdr, 76)[0]
    if pixdim0 not in (-1.0, 1.0):
        pixdim0 = 1.0
    struct.pack_into("<8f", hdr, 76, pixdim0, spacing[0], spacing[1], spacing[2],
                     0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope: values on disk are final
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<3f", hdr, 268, *origin)
    # Re-stamp the translation column so origin stays authoritative even when
    # carrying a source header through.
    for off, o in ((280, origin[0]), (296, origin[1]), (312, origin[2])):
        struct.pack_into("<f", hdr, off + 12, o)
    hdr[344:348] = _MAGIC_SINGLE

    dt = np.dtype("<" + _DTYPES[datatype])
    payload = np.ascontiguousarray(voxels.astype(dt, copy=False).ravel(order="F"))
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00\x00\x00\x00")  # no header extensions
        fh.write(payload.tobytes())


# ---------------------------------------------------------------------------
# Raw payload with JSON sidecar


def _read_sidecar(path: Path) -> Volume3D:
    json_path, raw_path = _sidecar_paths(path)
    try:
        meta = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid sidecar JSON {json_path.name}: {exc}") from exc

    for key in ("dims", "spacing", "origin", "dtype", "order"):
        if key not in meta:
            raise ValueError(f"sidecar {json_path.name} is missing required key {key!r}")
    if meta["order"] != "x-fastest":
        raise ValueError(f"unsupported payload order {meta['order']!r}")
    if meta["dtype"] not in _SIDECAR_DTYPES:
        raise ValueError(f"unsupported sidecar dtype {meta['dtype']!r}")

    dims = tuple(int(d) for d in meta["dims"])
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"invalid sidecar dims {meta['dims']!r}")
    spacing = tuple(float(s) for s in meta["spacing"])
    origin = tuple(float(o) for o in meta["origin"])

    dt = np.dtype(_SIDECAR_DTYPES[meta["dtype"]]).newbyteorder("<")
    blob = raw_path.read_bytes()
    n = dims[0] * dims[1] * dims[2]
    if len(blob) != n * dt.itemsize:
        raise ValueError(
            f"payload size mismatch for {raw_path.name}: dims {dims} need "
            f"{n * dt.itemsize} bytes, file has {len(blob)}"
        )
    vox = np.frombuffer(blob, dtype=dt).reshape(dims, order="F").astype(np.float32)
    if not np.isfinite(vox).all():
        raise ValueError(f"non-finite voxels in {raw_path.name}")
    return Volume3D(dims, spacing, origin, vox)


def _write_sidecar(
    path: Path,
    voxels: np.ndarray,
    dims: tuple[int, int, int],
    spacing: tuple[float, float, float],
    origin: tuple[float, float, float],
    dtype: str,
) -> None:
    json_path, raw_path = _sidecar_paths(path)
    dt = np.dtype(_SIDECAR_DTYPES[dtype]).newbyteorder("<")
    payload = np.ascontiguousarray(voxels.astype(dt, copy=False).ravel(order="F"))
    raw_path.write_bytes(payload.tobytes())
    meta = {
        "dims": list(dims),
        "spacing": [float(s) for s in spacing],
        "origin": [float(o) for o in origin],
        "dtype": dtype,
        "order": "x-fastest",
    }
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
