"""Voxel occupancy grids, scene timelines, local occupancy windows, and the
2-D navigable projection.

Conventions (fixed for the whole package):

* World axes: x/z horizontal, y up.  All distances in meters.
* Grid dims are (nx, nz, ny) = (length, width, height) in voxels.
* Flat bit order is row-major over (x, z, y): the y index varies fastest.
* A voxel is occupied iff its *center* lies inside scene geometry.
* Queries outside the grid bounds read as unoccupied.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, FormatError, InputError

GRID_MAGIC = b"DHSGRID1"

LOCAL_DIM = 32
# Character-local window in the character frame, before yaw/translation.
LOCAL_EXTENT = ((-0.6, 0.6), (0.0, 1.2), (-0.6, 0.6))

DEFAULT_HEIGHT_BAND = (0.1, 1.8)
DEFAULT_INFLATE_RADIUS = 0.25


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a voxel volume: origin corner, voxel edge length, dims."""

    origin: tuple[float, float, float]
    voxel_size: float
    dims: tuple[int, int, int]  # (nx, nz, ny)

    def __post_init__(self):
        if not np.all(np.isfinite(self.origin)):
            raise ConfigurationError("grid origin must be finite")
        if not (np.isfinite(self.voxel_size) and self.voxel_size > 0):
            raise ConfigurationError("voxel_size must be positive")
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ConfigurationError("grid dims must be three positive integers")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def num_voxels(self) -> int:
        nx, nz, ny = self.dims
        return nx * nz * ny

    def voxel_centers(self) -> np.ndarray:
        """Centers of every voxel, shape (nx, nz, ny, 3)."""
        nx, nz, ny = self.dims
        ox, oy, oz = self.origin
        vs = self.voxel_size
        xs = ox + (np.arange(nx) + 0.5) * vs
        zs = oz + (np.arange(nz) + 0.5) * vs
        ys = oy + (np.arange(ny) + 0.5) * vs
        gx, gz, gy = np.meshgrid(xs, zs, ys, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


class OccupancyGrid:
    """Immutable boolean voxel volume."""

    def __init__(self, spec: GridSpec, occupancy: np.ndarray):
        occupancy = np.asarray(occupancy, dtype=bool)
        if occupancy.shape != spec.dims:
            raise ConfigurationError(
                f"occupancy shape {occupancy.shape} does not match dims {spec.dims}"
            )
        self.spec = spec
        self._dense = occupancy.copy()
        self._dense.setflags(write=False)

    @property
    def dense(self) -> np.ndarray:
        """Read-only (nx, nz, ny) boolean array."""
        return self._dense

    @property
    def bits(self) -> np.ndarray:
        """Bit-packed flat occupancy in (x, z, y) row-major order."""
        return np.packbits(self._dense.reshape(-1))

    def count_occupied(self) -> int:
        return int(self._dense.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, OccupancyGrid)
            and self.spec == other.spec
            and bool(np.array_equal(self._dense, other._dense))
        )

    def point_to_index(self, point) -> tuple[int, int, int] | None:
        """Voxel index containing ``point``, or None when out of bounds."""
        p = np.asarray(point, dtype=np.float64)
        ox, oy, oz = self.spec.origin
        vs = self.spec.voxel_size
        ix = int(np.floor((p[0] - ox) / vs))
        iz = int(np.floor((p[2] - oz) / vs))
        iy = int(np.floor((p[1] - oy) / vs))
        nx, nz, ny = self.spec.dims
        if 0 <= ix < nx and 0 <= iz < nz and 0 <= iy < ny:
            return ix, iz, iy
        return None


def build_from_boxes(boxes, spec: GridSpec) -> OccupancyGrid:
    """Voxelize axis-aligned boxes: occupied iff a voxel center is inside
    at least one (min, max) box."""
    for lo, hi in boxes:
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigurationError("box corners must be finite")
    occ = np.zeros(spec.dims, dtype=bool)
    if boxes:
        centers = spec.voxel_centers()  # (nx, nz, ny, 3)
        for lo, hi in boxes:
            lo = np.asarray(lo, dtype=np.float64)
            hi = np.asarray(hi, dtype=np.float64)
            inside = np.all((centers >= lo) & (centers <= hi), axis=-1)
            occ |= inside
    return OccupancyGrid(spec, occ)


def query_occupied(grid: OccupancyGrid, point) -> bool:
    """True iff the voxel containing ``point`` exists and is occupied."""
    idx = grid.point_to_index(point)
    if idx is None:
        return False
    return bool(grid.dense[idx])


def query_occupied_many(grid: OccupancyGrid, points: np.ndarray) -> np.ndarray:
    """Vectorized ``query_occupied`` over points of shape (..., 3)."""
    p = np.asarray(points, dtype=np.float64)
    ox, oy, oz = grid.spec.origin
    vs = grid.spec.voxel_size
    ix = np.floor((p[..., 0] - ox) / vs).astype(np.int64)
    iz = np.floor((p[..., 2] - oz) / vs).astype(np.int64)
    iy = np.floor((p[..., 1] - oy) / vs).astype(np.int64)
    nx, nz, ny = grid.spec.dims
    inb = (ix >= 0) & (ix < nx) & (iz >= 0) & (iz < nz) & (iy >= 0) & (iy < ny)
    out = np.zeros(p.shape[:-1], dtype=bool)
    out[inb] = grid.dense[ix[inb], iz[inb], iy[inb]]
    return out


@dataclass(frozen=True)
class SceneTimeline:
    """Frame-indexed sequence of occupancy grids sharing one GridSpec."""

    states: tuple[tuple[int, OccupancyGrid], ...]

    def __post_init__(self):
        if not self.states:
            raise ConfigurationError("timeline needs at least one state")
        frames = [f for f, _ in self.states]
        if frames[0] != 0:
            raise ConfigurationError("first activation frame must be 0")
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ConfigurationError("activation frames must strictly increase")
        spec = self.states[0][1].spec
        if any(g.spec != spec for _, g in self.states):
            raise ConfigurationError("all timeline grids must share one spec")
        object.__setattr__(
            self, "states", tuple((int(f), g) for f, g in self.states)
        )

    @property
    def spec(self) -> GridSpec:
        return self.states[0][1].spec

    @property
    def activation_frames(self) -> tuple[int, ...]:
        return tuple(f for f, _ in self.states)

    @staticmethod
    def static(grid: OccupancyGrid) -> "SceneTimeline":
        return SceneTimeline(states=((0, grid),))


def grid_at(timeline: SceneTimeline, frame: int) -> OccupancyGrid:
    """Grid active at ``frame``: largest activation frame <= frame."""
    if frame < 0:
        raise InputError("frame must be non-negative")
    current = timeline.states[0][1]
    for f, g in timeline.states:
        if f <= frame:
            current = g
        else:
            break
    return current


@dataclass(frozen=True)
class LocalGrid:
    """32x32x32 character-centered occupancy window."""

    bits: np.ndarray  # (32, 32, 32) bool, indexed (x, z, y) in character frame
    center: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.shape != (LOCAL_DIM, LOCAL_DIM, LOCAL_DIM):
            raise InputError("local grid must be 32x32x32")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "yaw", float(self.yaw))

    def __eq__(self, other) -> bool:
        return isinstance(other, LocalGrid) and bool(
            np.array_equal(self.bits, other.bits)
        )


def _local_cell_centers() -> np.ndarray:
    """Cell centers of the canonical local window, shape (32, 32, 32, 3)."""
    (x0, x1), (y0, y1), (z0, z1) = LOCAL_EXTENT
    n = LOCAL_DIM
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    zs = z0 + (np.arange(n) + 0.5) * (z1 - z0) / n
    gx, gz, gy = np.meshgrid(xs, zs, ys, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


_LOCAL_CENTERS = _local_cell_centers()


def extract_local(grid: OccupancyGrid, pelvis, yaw: float) -> LocalGrid:
    """Sample the global grid over the character-local window.

    Local cell centers are rotated by ``yaw`` about the vertical axis and
    translated by ``pelvis``; out-of-bounds points read unoccupied.
    """
    pelvis = np.asarray(pelvis, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    pts = _LOCAL_CENTERS
    # Rotation about +y: x' = c*x + s*z, z' = -s*x + c*z.
    wx = c * pts[..., 0] + s * pts[..., 2] + pelvis[0]
    wy = pts[..., 1] + pelvis[1]
    wz = -s * pts[..., 0] + c * pts[..., 2] + pelvis[2]
    world = np.stack([wx, wy, wz], axis=-1)
    bits = query_occupied_many(grid, world)
    return LocalGrid(bits=bits, center=tuple(pelvis), yaw=float(yaw))


def voxel_delta(a: LocalGrid, b: LocalGrid) -> tuple[int, np.ndarray]:
    """Per-voxel xor of two local grids and the popcount of the difference."""
    mask = np.logical_xor(a.bits, b.bits)
    return int(mask.sum()), mask


@dataclass(frozen=True)
class NavSpec2D:
    origin: tuple[float, float]  # (x, z) corner
    cell_size: float
    dims: tuple[int, int]  # (nx, nz)


@dataclass(frozen=True)
class NavGrid2D:
    """X-Z occupancy used for global planning; True = blocked."""

    cells: np.ndarray
    spec: NavSpec2D

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=bool)
        if c.shape != self.spec.dims:
            raise ConfigurationError("nav cells do not match spec dims")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "cells", c)

    def cell_center(self, ix: int, iz: int) -> tuple[float, float]:
        ox, oz = self.spec.origin
        vs = self.spec.cell_size
        return ox + (ix + 0.5) * vs, oz + (iz + 0.5) * vs

    def point_to_cell(self, x: float, z: float) -> tuple[int, int] | None:
        ox, oz = self.spec.origin
        vs = self.spec.cell_size
        ix = int(np.floor((x - ox) / vs))
        iz = int(np.floor((z - oz) / vs))
        nx, nz = self.spec.dims
        if 0 <= ix < nx and 0 <= iz < nz:
            return ix, iz
        return None


def project_2d(grid: OccupancyGrid, height_band=DEFAULT_HEIGHT_BAND) -> NavGrid2D:
    """Collapse occupancy along y: a column is blocked iff any voxel whose
    center lies inside the height band is occupied."""
    y_min, y_max = height_band
    if not y_min < y_max:
        raise InputError("height band must satisfy y_min < y_max")
    nx, nz, ny = grid.spec.dims
    oy = grid.spec.origin[1]
    vs = grid.spec.voxel_size
    centers_y = oy + (np.arange(ny) + 0.5) * vs
    band = (centers_y >= y_min) & (centers_y <= y_max)
    blocked = grid.dense[:, :, band].any(axis=2)
    spec2d = NavSpec2D(
        origin=(grid.spec.origin[0], grid.spec.origin[2]),
        cell_size=vs,
        dims=(nx, nz),
    )
    return NavGrid2D(cells=blocked, spec=spec2d)


def inflate(nav: NavGrid2D, radius: float = DEFAULT_INFLATE_RADIUS) -> NavGrid2D:
    """Dilate blocked cells by a body radius: a cell is blocked iff any
    source-blocked cell center lies within ``radius`` of its center."""
    if radius < 0:
        raise InputError("inflation radius must be non-negative")
    if radius == 0 or not nav.cells.any():
        return NavGrid2D(cells=nav.cells, spec=nav.spec)
    vs = nav.spec.cell_size
    r_cells = int(np.floor(radius / vs))
    offs = np.arange(-r_cells, r_cells + 1)
    di, dj = np.meshgrid(offs, offs, indexing="ij")
    footprint = np.hypot(di, dj) * vs <= radius
    blocked = ndimage.binary_dilation(nav.cells, structure=footprint)
    return NavGrid2D(cells=blocked, spec=nav.spec)


# ---------------------------------------------------------------------------
# Serialization: the ".grid" binary format and the box-scene JSON document.
# ---------------------------------------------------------------------------

def save_grid(grid: OccupancyGrid, path) -> None:
    """Write the ``.grid`` binary format (little-endian):
    magic "DHSGRID1", origin 3xf64, voxel_size f64, dims 3xu32, packed bits."""
    spec = grid.spec
    header = GRID_MAGIC + struct.pack(
        "<4d3I",
        spec.origin[0],
        spec.origin[1],
        spec.origin[2],
        spec.voxel_size,
        *spec.dims,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(grid.bits.tobytes())


def load_grid(path) -> OccupancyGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(GRID_MAGIC) + struct.calcsize("<4d3I"):
        raise FormatError(f"truncated grid file: {path}")
    if data[: len(GRID_MAGIC)] != GRID_MAGIC:
        raise FormatError(f"bad magic in grid file: {path}")
    off = len(GRID_MAGIC)
    ox, oy, oz, vs, nx, nz, ny = struct.unpack_from("<4d3I", data, off)
    off += struct.calcsize("<4d3I")
    spec = GridSpec(origin=(ox, oy, oz), voxel_size=vs, dims=(nx, nz, ny))
    n = spec.num_voxels
    payload = np.frombuffer(data, dtype=np.uint8, offset=off)
    if payload.size != (n + 7) // 8:
        raise FormatError(f"grid payload size mismatch: {path}")
    flat = np.unpackbits(payload)[:n].astype(bool)
    return OccupancyGrid(spec, flat.reshape(spec.dims))


@dataclass
class BoxScene:
    """Axis-aligned box description of a scene plus its voxelization spec."""

    spec: GridSpec
    boxes: list[dict] = field(default_factory=list)
    # each box: {"min": [x,y,z], "max": [x,y,z], "tag": str, "movable": bool}

    def voxelize(self) -> OccupancyGrid:
        return build_from_boxes(
            [(b["min"], b["max"]) for b in self.boxes], self.spec
        )

    def to_json(self) -> dict:
        return {
            "voxel_size": self.spec.voxel_size,
            "origin": list(self.spec.origin),
            "dims": list(self.spec.dims),
            "boxes": [dict(b) for b in self.boxes],
        }

    @staticmethod
    def from_json(doc: dict) -> "BoxScene":
        try:
            spec = GridSpec(
                origin=tuple(doc["origin"]),
                voxel_size=doc["voxel_size"],
                dims=tuple(doc["dims"]),
            )
            boxes = []
            for b in doc.get("boxes", []):
                box = {
                    "min": [float(v) for v in b["min"]],
                    "max": [float(v) for v in b["max"]],
                }
                if "tag" in b:
                    box["tag"] = str(b["tag"])
                if "movable" in b:
                    box["movable"] = bool(b["movable"])
                boxes.append(box)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad box-scene document: {exc}") from exc
        return BoxScene(spec=spec, boxes=boxes)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @staticmethod
    def load(path) -> "BoxScene":
        with open(path) as fh:
            return BoxScene.from_json(json.load(fh))
