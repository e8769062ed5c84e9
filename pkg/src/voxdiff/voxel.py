"""Voxel grids and point clouds: thresholding, surface sampling, bit-exact file I/O.

Grids are immutable dense scalar fields over a d0 x d1 x d2 lattice. Point
clouds are n x 3 coordinate arrays. Both carry a tiny little-endian binary
file format ("ICVX" / "ICPC") whose write-then-read round trip is exact.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

GRID_MAGIC = b"ICVX"
CLOUD_MAGIC = b"ICPC"
GRID_VERSION = 1

CONTINUOUS = "continuous"
BINARY = "binary"

# (axis, direction) for the six faces of a voxel.
_FACE_DIRS = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1))


class VoxelError(ValueError):
    """Base class for voxel-domain errors."""


class NonFiniteValueError(VoxelError):
    """A grid cell holds NaN or Inf; carries the first offending index."""

    def __init__(self, index: tuple[int, int, int]):
        self.index = index
        super().__init__(f"non-finite value at cell {index}")


class EmptyShapeError(VoxelError):
    """An operation requiring occupied voxels met an all-empty grid."""


class FormatError(VoxelError):
    """Bad magic, version, or kind byte in a binary file."""


class TruncationError(VoxelError):
    """File payload is shorter than its header declares."""


class TrailingDataError(VoxelError):
    """File payload is longer than its header declares."""


def _first_bad_index(values: np.ndarray) -> tuple[int, int, int] | None:
    bad = ~np.isfinite(values)
    if not bad.any():
        return None
    flat = int(np.argmax(bad))
    return tuple(int(i) for i in np.unravel_index(flat, values.shape))


@dataclass(frozen=True)
class VoxelGrid:
    """Dense scalar field; the diffusion state. Immutable after construction."""

    values: np.ndarray
    kind: str = CONTINUOUS

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise VoxelError(f"grid must be 3-D with positive dims, got shape {arr.shape}")
        if self.kind not in (CONTINUOUS, BINARY):
            raise VoxelError(f"unknown grid kind {self.kind!r}")
        if self.kind == BINARY:
            arr = np.asarray(arr)
            if not np.isin(arr, (0, 1)).all():
                raise VoxelError("binary grid holds values outside {0, 1}")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.astype(np.float64)
            bad = _first_bad_index(arr)
            if bad is not None:
                raise NonFiniteValueError(bad)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def occupancy(self) -> int:
        """Number of occupied cells (binary grids)."""
        return int(np.count_nonzero(self.values))

    @staticmethod
    def zeros(dims: tuple[int, int, int] | int, kind: str = CONTINUOUS) -> "VoxelGrid":
        if isinstance(dims, int):
            dims = (dims, dims, dims)
        return VoxelGrid(np.zeros(dims), kind=kind)


@dataclass(frozen=True)
class PointCloud:
    """n x 3 point set; canonical size 2048 when sampled from a surface."""

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise VoxelError(f"point cloud must be n x 3, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise VoxelError("point cloud holds non-finite coordinates")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def normalized(self) -> "PointCloud":
        """Centroid at origin, max distance from origin scaled to 1.

        A single point (or fully degenerate cloud) is only centered.
        """
        centered = self.points - self.points.mean(axis=0)
        radius = float(np.linalg.norm(centered, axis=1).max())
        if len(self) == 1 or radius == 0.0:
            return PointCloud(centered)
        return PointCloud(centered / radius)

    def is_normalized(self, tol: float = 1e-9) -> bool:
        c = np.linalg.norm(self.points.mean(axis=0))
        r = np.linalg.norm(self.points, axis=1).max()
        return bool(c <= tol and (len(self) == 1 or abs(r - 1.0) <= tol))


def threshold(grid: VoxelGrid, tau: float) -> VoxelGrid:
    """Binarize: cell = 1 iff value >= tau (a value exactly at tau counts as matter)."""
    values = np.asarray(grid.values, dtype=np.float64)
    bad = _first_bad_index(values)
    if bad is not None:
        raise NonFiniteValueError(bad)
    return VoxelGrid((values >= float(tau)).astype(np.uint8), kind=BINARY)


def _exposed_faces(occ: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Enumerate exposed faces of occupied voxels.

    A face is exposed iff the neighbor cell across it is empty or out of
    bounds. Returns (voxel_index_array n x 3, axis n, direction n).
    """
    occ = occ.astype(bool)
    cells, axes, dirs = [], [], []
    for axis, d in _FACE_DIRS:
        neighbor = np.zeros_like(occ)
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        if d > 0:
            src[axis] = slice(1, None)
            dst[axis] = slice(0, -1)
        else:
            src[axis] = slice(0, -1)
            dst[axis] = slice(1, None)
        neighbor[tuple(dst)] = occ[tuple(src)]
        exposed = occ & ~neighbor
        idx = np.argwhere(exposed)
        cells.append(idx)
        axes.append(np.full(len(idx), axis, dtype=np.int64))
        dirs.append(np.full(len(idx), d, dtype=np.int64))
    return np.concatenate(cells), np.concatenate(axes), np.concatenate(dirs)


def surface_points_raw(grid: VoxelGrid, n: int, seed: int) -> np.ndarray:
    """Sample n points uniformly over exposed unit faces, in voxel coordinates.

    Voxel (i, j, k) occupies the cube [i, i+1] x [j, j+1] x [k, k+1]. All
    exposed faces are unit squares, so uniform-over-faces is area-uniform.
    """
    if n < 1:
        raise VoxelError("need n >= 1 points")
    occ = np.asarray(grid.values) != 0
    if not occ.any():
        raise EmptyShapeError("cannot sample the surface of an empty grid")
    cells, axes, dirs = _exposed_faces(occ)
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, len(cells), size=n)
    u = rng.random(n)
    v = rng.random(n)
    pts = cells[pick].astype(np.float64)
    ax = axes[pick]
    offset = (dirs[pick] > 0).astype(np.float64)  # far face at +1, near face at 0
    tang = np.stack([u, v], axis=1)
    for axis in range(3):
        on_axis = ax == axis
        others = [a for a in range(3) if a != axis]
        pts[on_axis, axis] += offset[on_axis]
        pts[on_axis, others[0]] += tang[on_axis, 0]
        pts[on_axis, others[1]] += tang[on_axis, 1]
    return pts


def sample_surface(grid: VoxelGrid, n: int = 2048, seed: int = 0) -> PointCloud:
    """Canonically normalized area-uniform sample of the exposed surface."""
    return PointCloud(surface_points_raw(grid, n, seed)).normalized()


_KIND_BYTE = {CONTINUOUS: 0, BINARY: 1}
_BYTE_KIND = {0: CONTINUOUS, 1: BINARY}


def write_grid(grid: VoxelGrid, path) -> None:
    """ICVX: magic | version u8 | kind u8 | dims 3 x u16 LE | payload x-fastest.

    Continuous payloads are stored as little-endian f32 (the toolkit's
    arithmetic is 64-bit; storage is 32-bit), binary as one u8 per cell.
    """
    d0, d1, d2 = grid.dims
    header = GRID_MAGIC + struct.pack("<BBHHH", GRID_VERSION, _KIND_BYTE[grid.kind], d0, d1, d2)
    if grid.kind == BINARY:
        payload = np.asarray(grid.values, dtype=np.uint8).ravel(order="F").tobytes()
    else:
        payload = np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_grid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != GRID_MAGIC:
        raise FormatError(f"{path}: not an ICVX grid file")
    version, kind_byte, d0, d1, d2 = struct.unpack("<BBHHH", blob[4:12])
    if version != GRID_VERSION:
        raise FormatError(f"{path}: unsupported ICVX version {version}")
    if kind_byte not in _BYTE_KIND:
        raise FormatError(f"{path}: unknown grid kind byte {kind_byte}")
    kind = _BYTE_KIND[kind_byte]
    count = d0 * d1 * d2
    itemsize = 1 if kind == BINARY else 4
    expected = count * itemsize
    got = len(blob) - 12
    if got < expected:
        raise TruncationError(f"{path}: payload {got} B, header declares {expected} B")
    if got > expected:
        raise TrailingDataError(f"{path}: payload {got} B, header declares {expected} B")
    dtype = np.uint8 if kind == BINARY else np.dtype("<f4")
    flat = np.frombuffer(blob[12:], dtype=dtype)
    values = flat.reshape((d0, d1, d2), order="F").astype(
        np.uint8 if kind == BINARY else np.float64
    )
    return VoxelGrid(values, kind=kind)


def write_cloud(cloud: PointCloud, path) -> None:
    """ICPC: magic | count u32 | n x 3 f32 little-endian."""
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC + struct.pack("<I", len(cloud)))
        fh.write(np.asarray(cloud.points, dtype="<f4").tobytes())


def read_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != CLOUD_MAGIC:
        raise FormatError(f"{path}: not an ICPC point-cloud file")
    (count,) = struct.unpack("<I", blob[4:8])
    expected = count * 3 * 4
    got = len(blob) - 8
    if got < expected:
        raise TruncationError(f"{path}: payload {got} B, header declares {expected} B")
    if got > expected:
        raise TrailingDataError(f"{path}: payload {got} B, header declares {expected} B")
    pts = np.frombuffer(blob[8:], dtype="<f4").reshape(count, 3).astype(np.float64)
    return PointCloud(pts)
