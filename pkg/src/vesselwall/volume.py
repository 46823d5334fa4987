"""3D volumes with world-space affines, I/O, resampling and oblique plane sampling."""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_DTYPE_CODES = {"u8": np.uint8, "i16": np.int16, "f32": np.float32}
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_NIFTI_CODES = {"u8": (2, 8), "i16": (4, 16), "f32": (16, 32)}


class VolumeError(Exception):
    """Raised for malformed volume files or invalid volume operations."""


@dataclass(frozen=True)
class Affine3:
    """Voxel-index -> world-mm map: world = matrix @ index + origin.

    matrix columns are direction * spacing (mm per voxel step); columns must
    be mutually orthogonal (handedness is free but recorded by the sign of
    the determinant).
    """

    matrix: np.ndarray  # (3, 3)
    origin: np.ndarray  # (3,)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        o = np.asarray(self.origin, dtype=float)
        if m.shape != (3, 3) or o.shape != (3,):
            raise VolumeError("affine needs a 3x3 matrix and a 3-vector origin")
        if abs(np.linalg.det(m)) < 1e-12:
            raise VolumeError("affine matrix is not invertible")
        gram = m.T @ m
        off = gram - np.diag(np.diag(gram))
        if np.max(np.abs(off)) > 1e-6 * np.max(np.diag(gram)):
            raise VolumeError("affine columns are not mutually orthogonal")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "origin", o)

    @property
    def spacing(self) -> np.ndarray:
        """Per-axis voxel spacing in mm."""
        return np.linalg.norm(self.matrix, axis=0)

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def to_world(self, index) -> np.ndarray:
        return (self.matrix @ np.atleast_2d(index).T).T + self.origin

    def to_index(self, world) -> np.ndarray:
        return (self.inverse_matrix @ (np.atleast_2d(world) - self.origin).T).T

    @staticmethod
    def from_spacing(spacing, origin=(0.0, 0.0, 0.0)) -> "Affine3":
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
        return Affine3(np.diag(spacing), np.asarray(origin, dtype=float))


@dataclass(frozen=True)
class Volume3:
    """Immutable 3D scalar grid. data[i, j, k] with x the fastest axis on disk."""

    data: np.ndarray  # (nx, ny, nz) float64
    affine: Affine3

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or min(d.shape) < 1:
            raise VolumeError("volume data must be a non-empty 3D array")
        if not np.all(np.isfinite(d)):
            raise VolumeError("volume contains non-finite values")
        object.__setattr__(self, "data", d)
        d.setflags(write=False)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def voxel_centers_world(self) -> np.ndarray:
        """World coordinates of all voxel centers, shape dims + (3,)."""
        nx, ny, nz = self.dims
        idx = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                   indexing="ij"), axis=-1).astype(float)
        return idx @ self.affine.matrix.T + self.affine.origin


@dataclass(frozen=True)
class PlanePose:
    """Oriented plane: orthonormal in-plane axes u, v with normal = u x v."""

    center: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        u = np.asarray(self.axis_u, dtype=float)
        v = np.asarray(self.axis_v, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        for name, vec in (("axis_u", u), ("axis_v", v), ("normal", n)):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-9:
                raise VolumeError(f"{name} is not a unit vector")
        if abs(np.dot(u, v)) > 1e-9 or np.linalg.norm(np.cross(u, v) - n) > 1e-9:
            raise VolumeError("plane axes are not an orthonormal right-handed triple")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axis_u", u)
        object.__setattr__(self, "axis_v", v)
        object.__setattr__(self, "normal", n)

    @staticmethod
    def from_normal(center, normal, seed_u=None) -> "PlanePose":
        """Build a pose from a normal, choosing u from the least-aligned world axis."""
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        if seed_u is None:
            seed_u = np.eye(3)[np.argmin(np.abs(n))]
        u = np.asarray(seed_u, dtype=float)
        u = u - np.dot(u, n) * n
        u = u / np.linalg.norm(u)
        v = np.cross(n, u)
        return PlanePose(np.asarray(center, dtype=float), u, v, n)


def plane_grid_world(pose: PlanePose, size, spacing: float) -> np.ndarray:
    """World positions of the center-anchored pixel grid, shape (nu, nv, 3)."""
    nu, nv = size
    iu = (np.arange(nu) - (nu - 1) / 2.0) * spacing
    iv = (np.arange(nv) - (nv - 1) / 2.0) * spacing
    return (pose.center
            + iu[:, None, None] * pose.axis_u
            + iv[None, :, None] * pose.axis_v)


@dataclass(frozen=True)
class CrossSection:
    """2D image sampled from a volume on an oriented plane."""

    pose: PlanePose
    spacing: float
    pixels: np.ndarray  # (nu, nv)

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.float64))
        self.pixels.setflags(write=False)

    @property
    def size(self) -> tuple:
        return self.pixels.shape

    def pixel_world(self) -> np.ndarray:
        return plane_grid_world(self.pose, self.size, self.spacing)


# ---------------------------------------------------------------------------
# interpolation


def _fractional_indices(vol: Volume3, points: np.ndarray):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return vol.affine.to_index(pts)


def trilinear(vol: Volume3, points) -> np.ndarray:
    """Trilinear interpolation at world points; outside the voxel-center hull -> 0.

    Accepts one point or an (N, 3) array; returns a scalar or (N,) array.
    """
    single = np.asarray(points).ndim == 1
    idx = _fractional_indices(vol, points)
    nx, ny, nz = vol.dims
    dims = np.array([nx, ny, nz], dtype=float)
    eps = 1e-9  # hull membership tolerant to round-off in the index transform
    inside = np.all((idx >= -eps) & (idx <= dims - 1.0 + eps), axis=1)

    out = np.zeros(idx.shape[0], dtype=np.float64)
    if np.any(inside):
        p = np.clip(idx[inside], 0.0, dims - 1.0)
        i0 = np.floor(p).astype(int)
        i0 = np.minimum(i0, np.array([nx - 2, ny - 2, nz - 2]).clip(min=0))
        f = p - i0
        i1 = np.minimum(i0 + 1, np.array([nx - 1, ny - 1, nz - 1]))
        d = vol.data
        c000 = d[i0[:, 0], i0[:, 1], i0[:, 2]]
        c100 = d[i1[:, 0], i0[:, 1], i0[:, 2]]
        c010 = d[i0[:, 0], i1[:, 1], i0[:, 2]]
        c110 = d[i1[:, 0], i1[:, 1], i0[:, 2]]
        c001 = d[i0[:, 0], i0[:, 1], i1[:, 2]]
        c101 = d[i1[:, 0], i0[:, 1], i1[:, 2]]
        c011 = d[i0[:, 0], i1[:, 1], i1[:, 2]]
        c111 = d[i1[:, 0], i1[:, 1], i1[:, 2]]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[inside] = c0 * (1 - fz) + c1 * fz
    return out[0] if single else out


def nearest(vol: Volume3, points) -> np.ndarray:
    """Nearest-neighbor lookup at world points; outside the hull -> 0."""
    single = np.asarray(points).ndim == 1
    idx = _fractional_indices(vol, points)
    nx, ny, nz = vol.dims
    dims = np.array([nx, ny, nz], dtype=float)
    inside = np.all((idx >= -0.5 + 1e-12) & (idx <= dims - 0.5 - 1e-12), axis=1)
    out = np.zeros(idx.shape[0], dtype=np.float64)
    if np.any(inside):
        p = np.rint(idx[inside]).astype(int)
        p = np.clip(p, 0, np.array([nx - 1, ny - 1, nz - 1]))
        out[inside] = vol.data[p[:, 0], p[:, 1], p[:, 2]]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# resampling and plane sampling


def resample_isotropic(vol: Volume3, spacing: float) -> Volume3:
    """Resample onto an isotropic grid covering the input's world bounding box.

    Orientation is preserved; values come from trilinear interpolation.
    """
    if spacing <= 0:
        raise VolumeError("spacing must be positive")
    old_spacing = vol.affine.spacing
    dirs = vol.affine.matrix / old_spacing
    extent = np.array(vol.dims) * old_spacing
    new_dims = np.ceil(extent / spacing - 1e-9).astype(int)
    # keep voxel-center convention: box corner is half a voxel before center 0
    corner = vol.affine.origin - dirs @ (0.5 * old_spacing)
    new_origin = corner + dirs @ np.full(3, 0.5 * spacing)
    new_affine = Affine3(dirs * spacing, new_origin)

    idx = np.stack(np.meshgrid(*(np.arange(n) for n in new_dims), indexing="ij"),
                   axis=-1).reshape(-1, 3).astype(float)
    pts = idx @ new_affine.matrix.T + new_affine.origin
    values = trilinear(vol, pts).reshape(tuple(new_dims))
    return Volume3(values, new_affine)


def sample_plane(vol: Volume3, pose: PlanePose, size, spacing: float) -> CrossSection:
    """Multiplanar reformation: trilinear sampling on an oriented plane grid."""
    nu, nv = size
    if nu < 2 or nv < 2:
        raise VolumeError("plane size must be at least 2x2")
    if spacing <= 0:
        raise VolumeError("spacing must be positive")
    pts = plane_grid_world(pose, size, spacing).reshape(-1, 3)
    pixels = trilinear(vol, pts).reshape(nu, nv)
    return CrossSection(pose, spacing, pixels)


def sample_label_plane(mask: Volume3, pose: PlanePose, size, spacing: float):
    """Nearest-neighbor plane sampling for integer label volumes.

    Returns the sampled labels as an (nu, nv) int array; the caller wraps it
    into a LabelMask2D with the same geometry.
    """
    if not np.all(mask.data == np.rint(mask.data)):
        raise VolumeError("label volume contains non-integral values")
    nu, nv = size
    pts = plane_grid_world(pose, size, spacing).reshape(-1, 3)
    labels = nearest(mask, pts).reshape(nu, nv)
    return np.rint(labels).astype(np.int64)


# ---------------------------------------------------------------------------
# .rvol I/O (JSON header + raw little-endian payload, x fastest)


def _save_rvol(vol: Volume3, path: Path, datatype: str):
    data_file = path.with_suffix(".raw")
    arr = _quantize(vol.data, datatype)
    header = {
        "dims": list(vol.dims),
        "affine": [list(row) for row in vol.affine.matrix],
        "origin": list(vol.affine.origin),
        "dtype": datatype,
        "data_file": data_file.name,
    }
    raw = np.asfortranarray(arr).tobytes(order="F")
    data_file.write_bytes(raw)
    path.write_text(json.dumps(header, indent=1) + "\n", encoding="utf-8")


def _load_rvol(path: Path) -> Volume3:
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except (ValueError, OSError) as exc:
        raise VolumeError(f"malformed rvol header {path}: {exc}") from exc
    try:
        dims = tuple(int(d) for d in header["dims"])
        dtype = header["dtype"]
        data_file = path.parent / header["data_file"]
        if "affine" in header:
            matrix = np.array(header["affine"], dtype=float)
        else:
            matrix = np.diag(np.asarray(header["spacing"], dtype=float))
        origin = np.asarray(header.get("origin", (0.0, 0.0, 0.0)), dtype=float)
    except (KeyError, TypeError) as exc:
        raise VolumeError(f"rvol header missing field: {exc}") from exc
    if dtype not in _DTYPE_CODES:
        raise VolumeError(f"unsupported rvol dtype {dtype!r}")
    raw = data_file.read_bytes()
    np_dtype = np.dtype(_DTYPE_CODES[dtype]).newbyteorder("<")
    expected = int(np.prod(dims)) * np_dtype.itemsize
    if len(raw) != expected:
        raise VolumeError(f"truncated rvol payload: {len(raw)} != {expected} bytes")
    arr = np.frombuffer(raw, dtype=np_dtype).reshape(dims, order="F")
    return Volume3(arr.astype(np.float64), Affine3(matrix, origin))


# ---------------------------------------------------------------------------
# NIfTI-1 subset I/O (uncompressed, little-endian, sform only)


def _load_nifti(path: Path) -> Volume3:
    blob = path.read_bytes()
    if len(blob) < 352:
        raise VolumeError(f"truncated NIfTI file {path}")
    hdr = blob[:348]
    (sizeof_hdr,) = struct.unpack_from("<i", hdr, 0)
    if sizeof_hdr != 348:
        raise VolumeError("not a little-endian NIfTI-1 file (sizeof_hdr != 348)")
    magic = hdr[344:348]
    if magic[:3] not in (b"n+1", b"ni1"):
        raise VolumeError("bad NIfTI magic")
    dim = struct.unpack_from("<8h", hdr, 40)
    if dim[0] != 3:
        raise VolumeError(f"only 3D NIfTI supported, got dim[0]={dim[0]}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    (datatype,) = struct.unpack_from("<h", hdr, 70)
    if datatype not in _NIFTI_DTYPES:
        raise VolumeError(f"unsupported NIfTI datatype code {datatype}")
    (vox_offset,) = struct.unpack_from("<f", hdr, 108)
    (sform_code,) = struct.unpack_from("<h", hdr, 254)
    if sform_code <= 0:
        raise VolumeError("NIfTI sform is required (sform_code must be > 0)")
    srow = np.array([
        struct.unpack_from("<4f", hdr, 280),
        struct.unpack_from("<4f", hdr, 296),
        struct.unpack_from("<4f", hdr, 312),
    ], dtype=float)
    matrix = srow[:, :3]
    if abs(np.linalg.det(matrix)) < 1e-12:
        raise VolumeError("NIfTI sform matrix is singular")
    np_dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder("<")
    offset = int(vox_offset)
    if offset < 352:
        raise VolumeError("vox_offset below 352")
    count = nx * ny * nz
    payload = blob[offset:offset + count * np_dtype.itemsize]
    if len(payload) != count * np_dtype.itemsize:
        raise VolumeError("truncated NIfTI voxel payload")
    arr = np.frombuffer(payload, dtype=np_dtype).reshape((nx, ny, nz), order="F")
    return Volume3(arr.astype(np.float64), Affine3(matrix, srow[:, 3]))


def _save_nifti(vol: Volume3, path: Path, datatype: str):
    code, bitpix = _NIFTI_CODES[datatype]
    arr = _quantize(vol.data, datatype)
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *vol.dims, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, bitpix)
    spacing = vol.affine.spacing
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    m, o = vol.affine.matrix, vol.affine.origin
    for row, off in zip(range(3), (280, 296, 312)):
        struct.pack_into("<4f", hdr, off, *m[row], o[row])
    hdr[344:348] = b"n+1\x00"
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * 4)  # extension flag, pads to vox_offset 352
        fh.write(np.asfortranarray(arr).tobytes(order="F"))


def _quantize(data: np.ndarray, datatype: str) -> np.ndarray:
    if datatype == "f32":
        return data.astype("<f4")
    rounded = np.rint(data)
    info = np.iinfo(_DTYPE_CODES[datatype])
    if rounded.min() < info.min or rounded.max() > info.max:
        raise VolumeError(
            f"value overflow for {datatype}: range [{rounded.min()}, {rounded.max()}]")
    return rounded.astype(np.dtype(_DTYPE_CODES[datatype]).newbyteorder("<"))


def load_volume(path) -> Volume3:
    """Load a `.nii` (NIfTI-1 subset) or `.rvol` volume."""
    path = Path(path)
    if path.suffix == ".nii":
        return _load_nifti(path)
    if path.suffix == ".rvol":
        return _load_rvol(path)
    raise VolumeError(f"unsupported volume format: {path.suffix!r}")


def save_volume(vol: Volume3, path, datatype: str = "f32"):
    """Save a volume as `.nii` or `.rvol` with the given payload datatype."""
    if datatype not in _DTYPE_CODES:
        raise VolumeError(f"unsupported datatype {datatype!r}")
    path = Path(path)
    if path.suffix == ".nii":
        _save_nifti(vol, path, datatype)
    elif path.suffix == ".rvol":
        _save_rvol(vol, path, datatype)
    else:
        raise VolumeError(f"unsupported volume format: {path.suffix!r}")
