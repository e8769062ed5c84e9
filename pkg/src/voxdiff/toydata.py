"""Procedural paired (render, shape) dataset: five primitive classes.

Shapes are analytic rasterizations on a cubic grid (cell centers tested
against the primitive in its canonical frame, after undoing an axis-aligned
pose rotation). Renders are orthographic depth maps along the six axis
directions, upscaled to a fixed 32 x 32 single-channel image.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import config_hash, seed_stream
from .voxel import BINARY, FormatError, TruncationError, VoxelGrid, write_grid

CLASSES = ("box", "sphere", "cylinder", "cross", "lshape")
VIEWS = ("+x", "-x", "+y", "-y", "+z", "-z")
RENDER_HW = 32
IMG_MAGIC = b"ICIM"


class ToyDataError(ValueError):
    pass


def _rotations() -> list[np.ndarray]:
    """The 24 axis-aligned (det +1) rotation matrices, in a fixed order."""
    mats = []
    seen = set()
    from itertools import permutations, product

    for perm in permutations(range(3)):
        for signs in product((1, -1), repeat=3):
            m = np.zeros((3, 3))
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            if np.linalg.det(m) > 0.5:
                key = m.tobytes()
                if key not in seen:
                    seen.add(key)
                    mats.append(m)
    return mats


ROTATIONS = _rotations()


@dataclass(frozen=True)
class ToySpec:
    """One procedural shape: class, per-class size params, pose, grid dim."""

    cls: str
    params: tuple[float, ...]
    pose: int = 0
    dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ToyDataError(f"unknown class {self.cls!r}")
        if not 0 <= self.pose < len(ROTATIONS):
            raise ToyDataError(f"pose must index the 24 rotations, got {self.pose}")
        if self.dim < 2:
            raise ToyDataError(f"grid dim too small: {self.dim}")


def _inside(cls: str, params: tuple[float, ...], pts: np.ndarray) -> np.ndarray:
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    if cls == "box":
        hx, hy, hz = params
        return (np.abs(x) <= hx) & (np.abs(y) <= hy) & (np.abs(z) <= hz)
    if cls == "sphere":
        (r,) = params
        return x ** 2 + y ** 2 + z ** 2 <= r ** 2
    if cls == "cylinder":
        r, hh = params
        return (x ** 2 + y ** 2 <= r ** 2) & (np.abs(z) <= hh)
    if cls == "cross":
        w, length = params
        bar_x = (np.abs(x) <= length) & (np.abs(y) <= w) & (np.abs(z) <= w)
        bar_y = (np.abs(y) <= length) & (np.abs(x) <= w) & (np.abs(z) <= w)
        bar_z = (np.abs(z) <= length) & (np.abs(x) <= w) & (np.abs(y) <= w)
        return bar_x | bar_y | bar_z
    if cls == "lshape":
        span, t, hz = params
        vert = (x >= -span) & (x <= -span + t) & (np.abs(y) <= span)
        horiz = (y >= -span) & (y <= -span + t) & (np.abs(x) <= span)
        return (vert | horiz) & (np.abs(z) <= hz)
    raise ToyDataError(f"unknown class {cls!r}")


def generate_shape(spec: ToySpec) -> VoxelGrid:
    """Deterministic analytic rasterization of the primitive."""
    d = spec.dim
    centers = np.arange(d) + 0.5 - d / 2.0
    gx, gy, gz = np.meshgrid(centers, centers, centers, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1)
    # undo the pose: test rotated-back cell centers against the canonical shape
    rot = ROTATIONS[spec.pose]
    canonical = pts @ rot  # == pts @ inv(rot).T since rot is orthogonal
    occ = _inside(spec.cls, spec.params, canonical)
    if not occ.any():
        raise ToyDataError(f"spec rasterizes to an empty grid: {spec}")
    return VoxelGrid(occ.astype(np.uint8), kind=BINARY)


# per-class size-parameter ranges, as fractions of the half-extent d/2
_PARAM_RANGES = {
    "box": ((0.35, 0.8), (0.35, 0.8), (0.35, 0.8)),
    "sphere": ((0.4, 0.85),),
    "cylinder": ((0.3, 0.6), (0.55, 0.9)),
    "cross": ((0.12, 0.28), (0.7, 0.95)),
    "lshape": ((0.55, 0.9), (0.25, 0.45), (0.5, 0.9)),
}


# cell centers sit at half-integer offsets from the grid center; a half-extent
# below ~0.87 voxels can miss every center and rasterize empty
_MIN_PARAM_VOXELS = 0.9


def sample_spec(cls: str, dim: int, rng: np.random.Generator, pose_variety: bool = True) -> ToySpec:
    half = dim / 2.0
    params = tuple(
        max(float(rng.uniform(lo, hi) * half), _MIN_PARAM_VOXELS)
        for lo, hi in _PARAM_RANGES[cls]
    )
    pose = int(rng.integers(0, len(ROTATIONS))) if pose_variety else 0
    return ToySpec(cls=cls, params=params, pose=pose, dim=dim)


def render_views(grid: VoxelGrid, views: tuple[str, ...] = VIEWS, size: int = RENDER_HW) -> list[np.ndarray]:
    """Orthographic depth maps: pixel = normalized depth of the first occupied
    voxel seen from the view direction, 0 where the ray hits nothing."""
    occ = np.asarray(grid.values) != 0
    if not occ.any():
        raise ToyDataError("cannot render an empty grid")
    d = occ.shape[0]
    if occ.shape != (d, d, d):
        raise ToyDataError("renders require a cubic grid")
    if size % d != 0:
        raise ToyDataError(f"grid dim {d} must divide render size {size}")
    images = []
    for view in views:
        if view not in VIEWS:
            raise ToyDataError(f"unknown view {view!r}")
        axis = "xyz".index(view[1])
        flip = view[0] == "-"
        vol = np.flip(occ, axis=axis) if flip else occ
        vol = np.moveaxis(vol, axis, 0)  # (depth, row, col)
        any_hit = vol.any(axis=0)
        first = np.argmax(vol, axis=0)
        depth = np.where(any_hit, 1.0 - first / d, 0.0)
        images.append(np.kron(depth, np.ones((size // d, size // d))))
    return images


def write_image(path, img: np.ndarray) -> None:
    """ICIM: magic | w u16 | h u16 | f32 payload (row-major)."""
    import struct

    img = np.asarray(img, dtype="<f4")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(IMG_MAGIC + struct.pack("<HH", w, h))
        fh.write(img.tobytes())


def read_image(path) -> np.ndarray:
    import struct

    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != IMG_MAGIC:
        raise FormatError(f"{path}: not an ICIM image file")
    w, h = struct.unpack("<HH", blob[4:8])
    expected = w * h * 4
    if len(blob) - 8 < expected:
        raise TruncationError(f"{path}: payload {len(blob) - 8} B, header declares {expected} B")
    return np.frombuffer(blob[8 : 8 + expected], dtype="<f4").reshape(h, w).astype(np.float64)


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    cls: str
    grid_path: str
    render_paths: tuple[str, ...]
    split: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "class": self.cls,
            "grid_path": self.grid_path,
            "render_paths": list(self.render_paths),
            "split": self.split,
        }


def _split_counts(n: int, ratios: tuple[float, ...]) -> list[int]:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ToyDataError(f"split ratios must sum to 1, got {ratios}")
    counts = [int(np.floor(r * n)) for r in ratios]
    short = n - sum(counts)
    order = np.argsort([r * n - c for r, c in zip(ratios, counts)])[::-1]
    for i in range(short):
        counts[order[i % len(counts)]] += 1
    return counts


SPLIT_NAMES = ("train", "val", "test")


def build_dataset(
    out_dir,
    n_per_class: int,
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    dim: int = 16,
    pose_variety: bool = True,
    classes: tuple[str, ...] = CLASSES,
) -> Path:
    """Generate shapes + renders, write ICVX/ICIM files and a JSONL manifest.

    Splits are stratified per class (balanced within +/- 1) and seed-stable.
    Returns the manifest path.
    """
    out = Path(out_dir)
    (out / "grids").mkdir(parents=True, exist_ok=True)
    (out / "renders").mkdir(parents=True, exist_ok=True)
    rng = seed_stream(seed, "data")
    config = {
        "command": "data",
        "n_per_class": n_per_class,
        "split": list(split),
        "seed": seed,
        "dim": dim,
        "pose_variety": pose_variety,
        "classes": list(classes),
    }
    records: list[ManifestRecord] = []
    for cls in classes:
        counts = _split_counts(n_per_class, split)
        splits = [name for name, c in zip(SPLIT_NAMES, counts) for _ in range(c)]
        for k in range(n_per_class):
            grid = None
            for _ in range(20):  # resample the rare spec that rasterizes empty
                spec = sample_spec(cls, dim, rng, pose_variety=pose_variety)
                try:
                    grid = generate_shape(spec)
                    break
                except ToyDataError:
                    continue
            if grid is None:
                raise ToyDataError(f"could not rasterize a nonempty {cls} at dim {dim}")
            item_id = f"{cls}_{k:04d}"
            grid_path = f"grids/{item_id}.icvx"
            write_grid(grid, out / grid_path)
            render_paths = []
            for view, img in zip(VIEWS, render_views(grid)):
                rp = f"renders/{item_id}_{view.replace('+', 'p').replace('-', 'm')}.icim"
                write_image(out / rp, img)
                render_paths.append(rp)
            records.append(
                ManifestRecord(
                    id=item_id,
                    cls=cls,
                    grid_path=grid_path,
                    render_paths=tuple(render_paths),
                    split=splits[k],
                )
            )
    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as fh:
        fh.write(json.dumps({"type": "config", "config": config, "config_hash": config_hash(config)}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> tuple[dict, list[ManifestRecord]]:
    config = {}
    records = []
    base = Path(path).parent
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            if row.get("type") == "config":
                config = row
                continue
            records.append(
                ManifestRecord(
                    id=row["id"],
                    cls=row["class"],
                    grid_path=str(base / row["grid_path"]),
                    render_paths=tuple(str(base / p) for p in row["render_paths"]),
                    split=row["split"],
                )
            )
    return config, records
