"""Core array containers and the PST1 binary tensor format.

Tensors are plain float64 numpy arrays, row-major, time-major for sequences
(frame, node, feature). Containers freeze their arrays on construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

MAGIC = b"PST1"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class FormatError(ValueError):
    """Raised when a PST1 file is malformed."""


class MapKind(str, Enum):
    SAE = "SAE"
    PCA = "PCA"
    IDENTITY = "IDENTITY"


def as_tensor(values, ndim: int | None = None, name: str = "tensor") -> np.ndarray:
    """Copy `values` into a frozen, finite float64 array."""
    arr = np.array(values, dtype=np.float64, order="C")
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have rank {ndim}, got shape {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"{name} has a zero-length dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EmbeddingSequence:
    values: np.ndarray  # [(H+1), N, d_emb]
    t0: int = 0
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "values", as_tensor(self.values, 3, "embeddings"))
        if self.values.shape[0] < 3:
            raise ValueError("embedding horizon needs at least 3 frames (H >= 2)")

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def d_emb(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class RepresentationTensor:
    values: np.ndarray  # [(H+1), N, D]
    map_kind: MapKind
    encoded: bool = True  # False for steered/intervened tensors, which may leave the ReLU range

    def __post_init__(self):
        object.__setattr__(self, "map_kind", MapKind(self.map_kind))
        object.__setattr__(self, "values", as_tensor(self.values, 3, "representation"))
        if self.encoded and self.map_kind is MapKind.SAE and np.any(self.values < 0):
            raise ValueError("SAE activations must be non-negative")

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class VelocitySequence:
    values: np.ndarray  # [(H+1), N, d]

    def __post_init__(self):
        object.__setattr__(self, "values", as_tensor(self.values, 3, "velocities"))

    @property
    def d(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class MeshGeometry:
    positions: np.ndarray  # [N, 2]
    roi: tuple[float, float, float, float]  # x_min, x_max, y_min, y_max
    obstacle_center: tuple[float, float] = (0.2, 0.2)
    obstacle_radius: float = 0.05

    def __post_init__(self):
        pos = as_tensor(self.positions, 2, "positions")
        if pos.shape[1] != 2:
            raise ValueError("positions must be [N, 2]")
        x0, x1, y0, y1 = (float(v) for v in self.roi)
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate ROI rectangle {self.roi}")
        if len(pos) > 1:
            order = np.lexsort((pos[:, 1], pos[:, 0]))
            gaps = np.abs(np.diff(pos[order], axis=0)).max(axis=1)
            if np.any(gaps <= 1e-12):
                raise ValueError("node positions must be unique")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "roi", (x0, x1, y0, y1))
        object.__setattr__(self, "obstacle_center", tuple(float(v) for v in self.obstacle_center))


def roi_mask(geom: MeshGeometry) -> np.ndarray:
    """Boolean node mask for the ROI rectangle, inclusive on all edges."""
    x0, x1, y0, y1 = geom.roi
    x, y = geom.positions[:, 0], geom.positions[:, 1]
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def write_tensor(path, t, dtype: str = "f64") -> None:
    """Write an array as a PST1 file. `dtype` is "f64" or "f32"."""
    arr = np.asarray(t, dtype=np.float64)
    if not 1 <= arr.ndim <= 4:
        raise ValueError(f"PST1 supports rank 1-4, got {arr.ndim}")
    target = np.dtype("<f8") if dtype == "f64" else np.dtype("<f4")
    code = _CODES[np.dtype(target.name)]
    header = MAGIC + struct.pack("<BBH", code, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype=target).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a PST1 file; f32 payloads are promoted to float64."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a PST1 file")
    code, rank, reserved = struct.unpack("<BBH", raw[4:8])
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= rank <= 4 or reserved != 0:
        raise FormatError(f"{path}: invalid header (rank={rank}, reserved={reserved})")
    end = 8 + 8 * rank
    if len(raw) < end:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{rank}Q", raw[8:end])
    dt = _DTYPES[code]
    expected = int(np.prod(dims)) * dt.itemsize
    if len(raw) - end != expected:
        raise FormatError(f"{path}: payload is {len(raw) - end} bytes, dims {dims} need {expected}")
    return np.frombuffer(raw, dtype=dt, offset=end).astype(np.float64).reshape(dims)
