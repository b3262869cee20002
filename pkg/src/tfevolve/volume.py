"""Volumetric dataset loading, sampling, and synthetic test fixtures.

A dataset is a dense 3-D scalar grid. On disk it is a headerless ``.raw``
payload next to a JSON descriptor (dims, spacing, scalar kind, endianness),
the common interchange format of public volume repositories. Scalars are
min-max normalized to [0, 1] at load time so transfer functions are portable
across datasets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCALAR_DTYPES = {
    ("u8", "little"): "<u1",
    ("u8", "big"): ">u1",
    ("u16", "little"): "<u2",
    ("u16", "big"): ">u2",
}

SYNTHETIC_KINDS = ("nested_spheres", "slab_stack", "ramp")

# Scalar levels of the nested_spheres fixture, innermost first.
SPHERE_LEVELS = (0.85, 0.55, 0.25)
SLAB_LEVELS = (0.25, 0.55, 0.85)


class VolumeError(Exception):
    """Raised for unreadable, inconsistent, or unsupported volume inputs."""


@dataclass(frozen=True)
class VolumeDescriptor:
    """Metadata sidecar for a raw volume file."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    scalar_kind: str
    endianness: str
    data_path: str

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise VolumeError(f"dims must be three positive integers, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be three positive reals, got {self.spacing}")
        if (self.scalar_kind, self.endianness) not in SCALAR_DTYPES:
            raise VolumeError(
                f"unsupported scalar_kind/endianness: {self.scalar_kind}/{self.endianness}"
            )

    @property
    def voxel_count(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def bytes_per_scalar(self) -> int:
        return 1 if self.scalar_kind == "u8" else 2

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "scalar_kind": self.scalar_kind,
            "endianness": self.endianness,
            "data_path": self.data_path,
        }


@dataclass(frozen=True)
class VolumeDataset:
    """Normalized scalar grid plus its descriptor.

    ``values[x, y, z]`` holds the voxel at grid coordinate (x, y, z); the
    on-disk layout is x-fastest. Values are read-only floats in [0, 1].
    ``synthetic_spec`` records the recipe when the dataset was generated
    rather than loaded, so sessions can persist it losslessly.
    """

    descriptor: VolumeDescriptor
    values: np.ndarray
    raw_min: float
    raw_max: float
    synthetic_spec: str | None = None

    def __post_init__(self):
        if self.values.shape != self.descriptor.dims:
            raise VolumeError(
                f"value grid {self.values.shape} does not match dims {self.descriptor.dims}"
            )
        if self.raw_min > self.raw_max:
            raise VolumeError("raw_min exceeds raw_max")
        vmin, vmax = float(self.values.min()), float(self.values.max())
        if vmin < 0.0 or vmax > 1.0:
            raise VolumeError(f"values outside [0,1]: [{vmin}, {vmax}]")
        self.values.flags.writeable = False

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.descriptor.dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.descriptor.spacing

    @property
    def extent(self) -> np.ndarray:
        """World-space size: voxel centers span [0, (dim-1)*spacing] per axis."""
        d = np.asarray(self.dims, dtype=np.float64)
        s = np.asarray(self.spacing, dtype=np.float64)
        return (d - 1.0) * s


def _parse_descriptor(path: Path) -> VolumeDescriptor:
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise VolumeError(f"descriptor not found: {path}")
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise VolumeError(f"unparseable descriptor {path}: {exc}")
    try:
        return VolumeDescriptor(
            dims=tuple(int(d) for d in raw["dims"]),
            spacing=tuple(float(s) for s in raw["spacing"]),
            scalar_kind=str(raw["scalar_kind"]),
            endianness=str(raw["endianness"]),
            data_path=str(raw["data_path"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeError(f"unparseable descriptor {path}: {exc}")


def load_raw(descriptor_path: str | Path) -> VolumeDataset:
    """Load a raw+descriptor volume, min-max normalizing scalars to [0, 1].

    A constant volume (raw_min == raw_max) normalizes to all zeros.
    """
    descriptor_path = Path(descriptor_path)
    descriptor = _parse_descriptor(descriptor_path)
    if any(d < 2 for d in descriptor.dims):
        raise VolumeError(f"every dim must be >= 2, got {descriptor.dims}")

    data_path = descriptor_path.parent / descriptor.data_path
    if not data_path.exists():
        raise VolumeError(f"data file not found: {data_path}")
    expected = descriptor.voxel_count * descriptor.bytes_per_scalar
    actual = data_path.stat().st_size
    if actual != expected:
        raise VolumeError(
            f"data file size {actual} != expected {expected} "
            f"({descriptor.dims} x {descriptor.bytes_per_scalar} bytes)"
        )

    dtype = SCALAR_DTYPES[(descriptor.scalar_kind, descriptor.endianness)]
    flat = np.frombuffer(data_path.read_bytes(), dtype=dtype)
    # x-fastest file layout -> grid[x, y, z]
    grid = flat.reshape(descriptor.dims[::-1]).transpose(2, 1, 0)

    raw_min = float(grid.min())
    raw_max = float(grid.max())
    if raw_min == raw_max:
        values = np.zeros(descriptor.dims, dtype=np.float64)
    else:
        values = (grid.astype(np.float64) - raw_min) / (raw_max - raw_min)
    return VolumeDataset(descriptor=descriptor, values=values, raw_min=raw_min, raw_max=raw_max)


def save_raw(dataset: VolumeDataset, descriptor_path: str | Path) -> None:
    """Write descriptor + raw payload. Exact inverse of load_raw for
    integer-sourced data (normalized values de-quantize back to the original
    scalars before rounding)."""
    descriptor_path = Path(descriptor_path)
    desc = dataset.descriptor
    if dataset.raw_min == dataset.raw_max:
        raw = np.full(desc.dims, dataset.raw_min, dtype=np.float64)
    else:
        raw = dataset.values * (dataset.raw_max - dataset.raw_min) + dataset.raw_min
    dtype = SCALAR_DTYPES[(desc.scalar_kind, desc.endianness)]
    grid = np.rint(raw).astype(dtype)
    payload = grid.transpose(2, 1, 0).tobytes()

    descriptor_path.parent.mkdir(parents=True, exist_ok=True)
    (descriptor_path.parent / desc.data_path).write_bytes(payload)
    descriptor_path.write_text(json.dumps(desc.to_dict(), indent=2))


def sample(dataset: VolumeDataset, p) -> float:
    """Trilinear sample at continuous grid coordinate p; 0.0 outside the grid."""
    return float(sample_many(dataset, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def sample_many(dataset: VolumeDataset, points: np.ndarray) -> np.ndarray:
    """Vectorized trilinear sampling of (N, 3) grid coordinates.

    Out-of-bounds points return 0 (empty space for exiting rays).
    """
    dims = np.asarray(dataset.dims)
    pts = np.asarray(points, dtype=np.float64)
    inside = np.all((pts >= 0.0) & (pts <= dims - 1.0), axis=1)

    out = np.zeros(len(pts), dtype=np.float64)
    if not inside.any():
        return out
    p = pts[inside]

    # Lattice cell: clamp the base so the +1 neighbor stays in range, with
    # degenerate (size-1) axes pinned to index 0.
    base = np.minimum(np.floor(p).astype(np.int64), np.maximum(dims - 2, 0))
    base = np.maximum(base, 0)
    frac = p - base
    hi = np.minimum(base + 1, dims - 1)

    v = dataset.values
    x0, y0, z0 = base[:, 0], base[:, 1], base[:, 2]
    x1, y1, z1 = hi[:, 0], hi[:, 1], hi[:, 2]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]

    c00 = v[x0, y0, z0] * (1 - fx) + v[x1, y0, z0] * fx
    c10 = v[x0, y1, z0] * (1 - fx) + v[x1, y1, z0] * fx
    c01 = v[x0, y0, z1] * (1 - fx) + v[x1, y0, z1] * fx
    c11 = v[x0, y1, z1] * (1 - fx) + v[x1, y1, z1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out[inside] = c0 * (1 - fz) + c1 * fz
    return out


def histogram(dataset: VolumeDataset, bins: int) -> np.ndarray:
    """Counts of normalized values over equal-width bins; 1.0 lands in the last bin."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    idx = np.minimum((dataset.values.ravel() * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, minlength=bins)


def _synthetic_descriptor(kind: str, dims: tuple[int, int, int]) -> VolumeDescriptor:
    return VolumeDescriptor(
        dims=dims,
        spacing=(1.0, 1.0, 1.0),
        scalar_kind="u8",
        endianness="little",
        data_path=f"{kind}.raw",
    )


def make_synthetic(kind: str, dims) -> VolumeDataset:
    """Generate a test volume: nested_spheres, slab_stack, or ramp.

    nested_spheres: concentric regions at levels 0.85 (core) / 0.55 / 0.25
    against a 0.0 background; slab_stack: three z-slabs at 0.25 / 0.55 / 0.85;
    ramp: linear gradient along x.
    """
    dims = tuple(int(d) for d in dims)
    if kind not in SYNTHETIC_KINDS:
        raise VolumeError(f"unknown synthetic kind: {kind!r}")
    nx, ny, nz = dims

    if kind == "ramp":
        ramp = np.linspace(0.0, 1.0, nx) if nx > 1 else np.zeros(1)
        values = np.broadcast_to(ramp[:, None, None], dims).copy()
    elif kind == "slab_stack":
        zi = np.arange(nz)
        levels = np.select(
            [zi < nz / 3.0, zi < 2.0 * nz / 3.0],
            [SLAB_LEVELS[0], SLAB_LEVELS[1]],
            default=SLAB_LEVELS[2],
        )
        values = np.broadcast_to(levels[None, None, :], dims).copy()
    else:  # nested_spheres
        center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
        half = max(center.min(), 1.0)
        xs, ys, zs = np.meshgrid(*(np.arange(d) for d in dims), indexing="ij")
        r = np.sqrt(
            ((xs - center[0]) / half) ** 2
            + ((ys - center[1]) / half) ** 2
            + ((zs - center[2]) / half) ** 2
        )
        values = np.select(
            [r <= 0.3, r <= 0.6, r <= 0.9],
            list(SPHERE_LEVELS),
            default=0.0,
        )

    return VolumeDataset(
        descriptor=_synthetic_descriptor(kind, dims),
        values=np.ascontiguousarray(values, dtype=np.float64),
        raw_min=0.0,
        raw_max=1.0,
        synthetic_spec=kind,
    )


def describe(dataset: VolumeDataset, bins: int = 16) -> str:
    """Human-readable dims/spacing/extrema/histogram summary for the CLI."""
    d = dataset.descriptor
    counts = histogram(dataset, bins)
    total = counts.sum()
    lines = [
        f"dims      {d.dims[0]} x {d.dims[1]} x {d.dims[2]}",
        f"spacing   {d.spacing[0]:g} x {d.spacing[1]:g} x {d.spacing[2]:g}",
        f"scalars   {d.scalar_kind} ({d.endianness}-endian)",
        f"raw range [{dataset.raw_min:g}, {dataset.raw_max:g}]",
        f"histogram ({bins} bins over [0,1], {total} voxels)",
    ]
    peak = counts.max() or 1
    for i, c in enumerate(counts):
        bar = "#" * int(round(40 * c / peak))
        lines.append(f"  [{i / bins:4.2f},{(i + 1) / bins:4.2f}) {c:>10d} {bar}")
    return "\n".join(lines)
