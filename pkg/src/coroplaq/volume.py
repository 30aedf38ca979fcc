"""CT volume container, MetaImage I/O, and trilinear sampling.

Volumes hold HU values as float32 in memory (the disk format is 16-bit
signed MetaImage) and are immutable after construction: the data array is
marked non-writeable so concurrent readers are always safe.

World coordinates: voxel (i, j, k) has its center at
origin + (i*sx, j*sy, k*sz).  The sampling domain extends half a voxel
beyond the outermost centers; inside that rim samples are clamped
(nearest-cell extrapolation), beyond it points are out of domain.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    NotFoundError,
    OutOfDomainError,
    ParameterError,
    ParseError,
    SizeMismatchError,
    UnsupportedFormatError,
)

INT16_MIN = -32768
INT16_MAX = 32767


@dataclass(frozen=True)
class Volume:
    """3D HU grid with anisotropic spacing and world offset."""

    data: np.ndarray            # (nx, ny, nz) float32, non-writeable
    spacing: tuple[float, float, float]  # mm per voxel
    origin: tuple[float, float, float]   # mm, world position of voxel (0,0,0)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ParameterError("volume data must be 3-dimensional")
        if any(n < 1 for n in self.data.shape):
            raise ParameterError("volume dims must all be >= 1")
        if any(s <= 0 for s in self.spacing):
            raise ParameterError("voxel spacing must be positive")
        d = np.ascontiguousarray(self.data, dtype=np.float32)
        d.flags.writeable = False
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def index_to_world(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, np.float64)
        return np.asarray(self.origin) + ijk * np.asarray(self.spacing)

    def world_to_index(self, pts) -> np.ndarray:
        pts = np.asarray(pts, np.float64)
        return (pts - np.asarray(self.origin)) / np.asarray(self.spacing)

    def contains(self, pts) -> np.ndarray:
        """True where points lie in the sampling domain (centers +- half voxel)."""
        ci = np.atleast_2d(self.world_to_index(pts))
        n = np.asarray(self.shape, np.float64)
        return np.all((ci >= -0.5) & (ci <= n - 0.5), axis=1)

    def sample(self, pts, outside: str = "error", fill: float = -1024.0) -> np.ndarray:
        """Trilinear HU samples at world points (N, 3).

        outside="error" raises on any out-of-domain point (geometry code);
        outside="fill" substitutes ``fill`` instead (display code).
        """
        pts = np.atleast_2d(np.asarray(pts, np.float64))
        ci = self.world_to_index(pts)
        inside = self.contains(pts)
        if outside == "error":
            if not inside.all():
                bad = pts[~inside][0]
                raise OutOfDomainError(
                    f"sample point ({bad[0]:.3f}, {bad[1]:.3f}, {bad[2]:.3f}) mm "
                    "is outside the volume sampling domain"
                )
        elif outside != "fill":
            raise ParameterError(f"unknown outside policy {outside!r}")
        vals = _kernels.trilinear_many(
            self.data,
            np.ascontiguousarray(ci[:, 0]),
            np.ascontiguousarray(ci[:, 1]),
            np.ascontiguousarray(ci[:, 2]),
        )
        if outside == "fill" and not inside.all():
            vals = np.where(inside, vals, float(fill))
        return vals

    def sample_one(self, pt, outside: str = "error", fill: float = -1024.0) -> float:
        return float(self.sample(np.asarray(pt, np.float64)[None, :], outside, fill)[0])


def _parse_mhd_header(path: str) -> dict:
    fields = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise NotFoundError(f"volume file {path!r} not readable: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'Key = value', got {line!r}")
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    return fields


def load_volume(path: str) -> Volume:
    """Read an uncompressed little-endian MET_SHORT MetaImage (.mhd + raw)."""
    hdr = _parse_mhd_header(path)

    ndims = hdr.get("NDims")
    if ndims is not None and ndims.strip() != "3":
        raise UnsupportedFormatError(f"{path}: NDims = {ndims}, only 3 supported")
    etype = hdr.get("ElementType")
    if etype != "MET_SHORT":
        raise UnsupportedFormatError(
            f"{path}: ElementType {etype!r}, only MET_SHORT (16-bit signed) supported"
        )
    if hdr.get("CompressedData", "False").lower() == "true":
        raise UnsupportedFormatError(f"{path}: compressed data not supported")
    if hdr.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise UnsupportedFormatError(f"{path}: big-endian data not supported")

    if "DimSize" not in hdr:
        raise ParseError(f"{path}: missing required key DimSize")
    try:
        dims = tuple(int(t) for t in hdr["DimSize"].split())
    except ValueError:
        raise ParseError(f"{path}: malformed DimSize {hdr['DimSize']!r}") from None
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ParseError(f"{path}: DimSize must be three positive integers")

    def _vec3(key, default):
        if key not in hdr:
            return default
        try:
            v = tuple(float(t) for t in hdr[key].split())
        except ValueError:
            raise ParseError(f"{path}: malformed {key} {hdr[key]!r}") from None
        if len(v) != 3:
            raise ParseError(f"{path}: {key} must have three components")
        return v

    spacing = _vec3("ElementSpacing", (1.0, 1.0, 1.0))
    origin = _vec3("Offset", (0.0, 0.0, 0.0))

    datafile = hdr.get("ElementDataFile")
    if datafile is None:
        raise ParseError(f"{path}: missing required key ElementDataFile")
    if datafile.upper() == "LOCAL":
        raise UnsupportedFormatError(f"{path}: embedded (LOCAL) data not supported")
    rawpath = os.path.join(os.path.dirname(os.path.abspath(path)), datafile)

    expected = dims[0] * dims[1] * dims[2] * 2
    try:
        actual = os.path.getsize(rawpath)
    except OSError as exc:
        raise NotFoundError(f"raw data file {rawpath!r} not readable: {exc}") from exc
    if actual != expected:
        raise SizeMismatchError(
            f"{rawpath}: raw size {actual} bytes, header implies {expected}"
        )
    flat = np.fromfile(rawpath, dtype="<i2")
    # MetaImage raw order: x fastest, z slowest
    data = flat.reshape(dims, order="F").astype(np.float32)
    return Volume(data=data, spacing=spacing, origin=origin)


def write_volume(vol: Volume, path: str) -> str:
    """Write a volume as .mhd + .raw; returns the header path.

    Values are rounded to the nearest integer and clipped to the int16
    range, which is lossless for volumes loaded from disk or produced by
    the phantom generator (both are integer-valued).
    """
    if not path.endswith(".mhd"):
        path = path + ".mhd"
    base = os.path.splitext(os.path.basename(path))[0]
    rawname = base + ".raw"
    nx, ny, nz = vol.shape
    sx, sy, sz = vol.spacing
    ox, oy, oz = vol.origin
    header = "".join(
        [
            "ObjectType = Image\n",
            "NDims = 3\n",
            "BinaryData = True\n",
            "BinaryDataByteOrderMSB = False\n",
            "CompressedData = False\n",
            f"DimSize = {nx} {ny} {nz}\n",
            f"ElementSpacing = {sx:g} {sy:g} {sz:g}\n",
            f"Offset = {ox:g} {oy:g} {oz:g}\n",
            "ElementType = MET_SHORT\n",
            f"ElementDataFile = {rawname}\n",
        ]
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
    ints = np.clip(np.rint(vol.data), INT16_MIN, INT16_MAX).astype("<i2")
    ints.ravel(order="F").tofile(os.path.join(os.path.dirname(os.path.abspath(path)), rawname))
    return path
