"""CPU ray-casting direct volume renderer with per-gene feature picking.

Front-to-back emission-absorption compositing along view rays. Sample
opacities are step-corrected, ``a = 1 - (1 - a_lut)^(step/step_ref)`` with
``step_ref = min(spacing)``, so accumulated opacity over a homogeneous
region is (nearly) step-size invariant. Rays composite premultiplied color
and stop early once accumulated alpha crosses the termination threshold.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .genome import Genome, TransferFunctionLUT, bake_lut, contributions
from .volume import VolumeDataset, sample_many

GRADIENT_EPS = 1e-12
PICK_MIN_VISIBILITY = 1e-4
LAMBERT_FLOOR = 0.2


class RenderError(Exception):
    pass


class NoFeatureError(RenderError):
    """Raised when a picked pixel's ray accumulates no attributable opacity."""


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float]
    target: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    vertical_fov: float = 40.0
    projection: str = "perspective"

    def __post_init__(self):
        if not 0.0 < self.vertical_fov < 180.0:
            raise RenderError(f"vertical_fov must be in (0,180), got {self.vertical_fov}")
        if self.projection not in ("perspective", "orthographic"):
            raise RenderError(f"unknown projection {self.projection!r}")
        fwd = np.subtract(self.target, self.position)
        if np.linalg.norm(fwd) < 1e-12:
            raise RenderError("camera position equals target")
        upv = np.asarray(self.up, dtype=np.float64)
        cross = np.cross(fwd / np.linalg.norm(fwd), upv / np.linalg.norm(upv))
        if np.linalg.norm(cross) < 1e-9:
            raise RenderError("up vector parallel to view direction")

    def basis(self):
        """Orthonormal (forward, right, up) triple."""
        fwd = np.subtract(self.target, self.position).astype(np.float64)
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return fwd, right, up


@dataclass(frozen=True)
class RenderSettings:
    """Knobs of the compositing integral; step_world defaults to min spacing."""

    step_world: float | None = None
    background: tuple[float, float, float] = (0.1, 0.1, 0.1)
    shading: str = "lambert"
    early_termination_alpha: float = 0.99

    def __post_init__(self):
        if self.step_world is not None and self.step_world <= 0:
            raise RenderError("step_world must be positive")
        if not 0.0 < self.early_termination_alpha <= 1.0:
            raise RenderError("early_termination_alpha must be in (0,1]")
        if self.shading not in ("none", "lambert"):
            raise RenderError(f"unknown shading {self.shading!r}")


@dataclass(frozen=True)
class RenderedImage:
    width: int
    height: int
    pixels: np.ndarray = field(repr=False)  # (height, width, 4) uint8

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise RenderError("image dimensions must be positive")
        if self.pixels.shape != (self.height, self.width, 4) or self.pixels.dtype != np.uint8:
            raise RenderError(
                f"pixel buffer must be ({self.height},{self.width},4) uint8, "
                f"got {self.pixels.shape} {self.pixels.dtype}"
            )
        self.pixels.flags.writeable = False

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGBA").save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path) -> None:
        Image.fromarray(self.pixels, mode="RGBA").save(path, format="PNG")


def image_from_png_bytes(data: bytes) -> RenderedImage:
    img = Image.open(io.BytesIO(data)).convert("RGBA")
    pixels = np.asarray(img, dtype=np.uint8)
    return RenderedImage(width=img.width, height=img.height, pixels=pixels)


def _resolve_step(volume: VolumeDataset, settings: RenderSettings) -> tuple[float, float]:
    step_ref = float(min(volume.spacing))
    step = settings.step_world if settings.step_world is not None else step_ref
    return float(step), step_ref


def generate_rays(camera: Camera, width: int, height: int, row_range=None):
    """Per-pixel world-space ray origins and unit directions, row-major.

    ``row_range=(y0, y1)`` restricts output to those image rows while keeping
    the full image's pixel grid, so banded renders match unbanded ones. The
    orthographic image plane height is derived from the fov at the target
    distance, so the same camera frames the same extent in both projections.
    """
    fwd, right, up = camera.basis()
    pos = np.asarray(camera.position, dtype=np.float64)
    dist = float(np.linalg.norm(np.subtract(camera.target, camera.position)))
    tanf = math.tan(math.radians(camera.vertical_fov) / 2.0)
    aspect = width / height

    rows = np.arange(height) if row_range is None else np.arange(*row_range)
    px = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    py = 1.0 - (rows + 0.5) / height * 2.0
    gx, gy = np.meshgrid(px, py)  # (rows, w)
    gx = (gx * aspect * tanf).ravel()
    gy = (gy * tanf).ravel()

    if camera.projection == "perspective":
        dirs = fwd[None, :] + gx[:, None] * right[None, :] + gy[:, None] * up[None, :]
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(pos, dirs.shape).copy()
    else:
        origins = pos[None, :] + (gx * dist)[:, None] * right[None, :] + (
            gy * dist
        )[:, None] * up[None, :]
        dirs = np.broadcast_to(fwd, origins.shape).copy()
    return origins, dirs


def _ray_box_spans(origins, dirs, hi):
    """Entry/exit distances against the box [0, hi]^3; empty spans collapse to 0."""
    t_lo = np.full(len(origins), -np.inf)
    t_hi = np.full(len(origins), np.inf)
    for axis in range(3):
        o, d = origins[:, axis], dirs[:, axis]
        parallel = np.abs(d) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (0.0 - o) / d
            tb = (hi[axis] - o) / d
        near = np.where(parallel, -np.inf, np.minimum(ta, tb))
        far = np.where(parallel, np.inf, np.maximum(ta, tb))
        outside = parallel & ((o < 0.0) | (o > hi[axis]))
        near = np.where(outside, np.inf, near)
        far = np.where(outside, -np.inf, far)
        t_lo = np.maximum(t_lo, near)
        t_hi = np.minimum(t_hi, far)
    t_lo = np.maximum(t_lo, 0.0)
    span = np.maximum(t_hi - t_lo, 0.0)
    span[~np.isfinite(span)] = 0.0
    return t_lo, span


def _shade_factors(volume, grid_pts, dirs, spacing):
    """Headlight Lambert factor per sample from central-difference gradients."""
    n = len(grid_pts)
    grad = np.empty((n, 3))
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = 1.0
        fwd = sample_many(volume, grid_pts + offset)
        bwd = sample_many(volume, grid_pts - offset)
        grad[:, axis] = (fwd - bwd) / (2.0 * spacing[axis])
    norms = np.linalg.norm(grad, axis=1)
    ok = norms > GRADIENT_EPS
    factors = np.ones(n)
    if ok.any():
        # Headlight: light direction = toward the eye = -ray direction.
        cosang = np.abs(np.einsum("ij,ij->i", grad[ok], -dirs[ok])) / norms[ok]
        factors[ok] = np.maximum(LAMBERT_FLOOR, cosang)
    return factors


def raymarch(
    volume: VolumeDataset,
    lut: TransferFunctionLUT,
    camera: Camera,
    settings: RenderSettings,
    width: int,
    height: int,
    row_range=None,
) -> tuple[np.ndarray, np.ndarray]:
    """March all rays; returns premultiplied float rgb (rows,w,3) and alpha (rows,w)."""
    if width < 1 or height < 1:
        raise RenderError("image dimensions must be positive")
    step, step_ref = _resolve_step(volume, settings)
    spacing = np.asarray(volume.spacing, dtype=np.float64)
    extent = volume.extent

    origins, dirs = generate_rays(camera, width, height, row_range)
    n_rows = height if row_range is None else row_range[1] - row_range[0]
    t_lo, span = _ray_box_spans(origins, dirs, extent)
    n_samples = np.floor(span / step).astype(np.int64)

    alpha_corr = 1.0 - np.power(1.0 - lut.opacity, step / step_ref)
    rgb_lut = lut.rgb

    n_rays = len(origins)
    accum = np.zeros((n_rays, 3))
    transparency = np.ones(n_rays)
    active = np.flatnonzero(n_samples > 0)
    max_t = 1.0 - settings.early_termination_alpha

    k = 0
    while active.size:
        t = t_lo[active] + (k + 0.5) * step
        pos = origins[active] + t[:, None] * dirs[active]
        grid = pos / spacing
        v = sample_many(volume, grid)
        idx = lut.lookup_index(v)
        a = alpha_corr[idx]
        c = rgb_lut[idx]
        if settings.shading == "lambert":
            c = c * _shade_factors(volume, grid, dirs[active], spacing)[:, None]
        accum[active] += (transparency[active] * a)[:, None] * c
        transparency[active] *= 1.0 - a

        k += 1
        keep = (k < n_samples[active]) & (transparency[active] > max_t)
        active = active[keep]

    rgb = accum.reshape(n_rows, width, 3)
    alpha = (1.0 - transparency).reshape(n_rows, width)
    return rgb, alpha


def _quantize(channels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(channels * 255.0), 0, 255).astype(np.uint8)


def render(
    volume: VolumeDataset,
    lut: TransferFunctionLUT,
    camera: Camera,
    settings: RenderSettings,
    width: int,
    height: int,
    workers: int = 1,
) -> RenderedImage:
    """Composite the ray-march result over the background into an RGBA8 image.

    ``workers`` splits the image into row bands rendered on a thread pool;
    output is bit-identical for any worker count.
    """
    if width < 1 or height < 1:
        raise RenderError("image dimensions must be positive")

    if workers > 1 and height >= workers:
        bounds = np.linspace(0, height, workers + 1).astype(int)
        bands = list(zip(bounds[:-1], bounds[1:]))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda b: raymarch(volume, lut, camera, settings, width, height, b),
                    bands,
                )
            )
        rgb = np.concatenate([p[0] for p in parts], axis=0)
        alpha = np.concatenate([p[1] for p in parts], axis=0)
    else:
        rgb, alpha = raymarch(volume, lut, camera, settings, width, height)

    bg = np.asarray(settings.background, dtype=np.float64)
    out = rgb + (1.0 - alpha)[..., None] * bg
    pixels = np.empty((height, width, 4), dtype=np.uint8)
    pixels[..., :3] = _quantize(out)
    pixels[..., 3] = 255
    return RenderedImage(width=width, height=height, pixels=pixels)


def gene_visibilities(
    volume: VolumeDataset,
    genome: Genome,
    camera: Camera,
    settings: RenderSettings,
    pixel: tuple[int, int],
    width: int,
    height: int,
) -> np.ndarray:
    """Accumulated per-gene visibility along one pixel's ray.

    Each sample splits its (corrected, transmittance-weighted) opacity among
    genes in proportion to their Gaussian contribution at the sampled value.
    """
    x, y = pixel
    if not (0 <= x < width and 0 <= y < height):
        raise RenderError(f"pixel {pixel} outside {width}x{height} image")
    step, step_ref = _resolve_step(volume, settings)
    spacing = np.asarray(volume.spacing, dtype=np.float64)

    origins, dirs = generate_rays(camera, width, height)
    ray = y * width + x
    origin, direction = origins[ray : ray + 1], dirs[ray : ray + 1]
    t_lo, span = _ray_box_spans(origin, direction, volume.extent)
    n_steps = int(span[0] // step)

    vis = np.zeros(len(genome.genes))
    transparency = 1.0
    max_t = 1.0 - settings.early_termination_alpha
    for k in range(n_steps):
        t = t_lo[0] + (k + 0.5) * step
        pos = origin[0] + t * direction[0]
        v = float(sample_many(volume, (pos / spacing)[None, :])[0])
        contrib = contributions(genome, v)
        total = float(contrib.sum())
        if total > 1e-12:
            a_raw = min(total, 1.0)
            a = 1.0 - (1.0 - a_raw) ** (step / step_ref)
            vis += transparency * (contrib / total) * a
            transparency *= 1.0 - a
            if transparency <= max_t:
                break
    return vis


def pick_feature(
    volume: VolumeDataset,
    genome: Genome,
    camera: Camera,
    settings: RenderSettings,
    pixel: tuple[int, int],
    width: int,
    height: int,
) -> int:
    """Gene index most visible along the picked pixel's ray (ties: lowest index)."""
    vis = gene_visibilities(volume, genome, camera, settings, pixel, width, height)
    if vis.sum() < PICK_MIN_VISIBILITY:
        raise NoFeatureError(f"no feature under cursor at {pixel}")
    return int(np.argmax(vis))


def isolate_gene(genome: Genome, gene_index: int) -> Genome:
    """Copy of the genome with every other gene's weight zeroed."""
    if not 0 <= gene_index < len(genome.genes):
        raise RenderError(f"gene index {gene_index} out of range")
    genes = tuple(
        g if i == gene_index else replace(g, w=0.0) for i, g in enumerate(genome.genes)
    )
    return Genome(id=f"{genome.id}:iso{gene_index}", genes=genes)


def render_feature_isolation(
    volume: VolumeDataset,
    genome: Genome,
    gene_index: int,
    camera: Camera,
    settings: RenderSettings,
    width: int,
    height: int,
    lut_resolution: int = 256,
) -> RenderedImage:
    """Render only the selected gene's feature by muting all other genes."""
    lut = bake_lut(isolate_gene(genome, gene_index), lut_resolution)
    return render(volume, lut, camera, settings, width, height)


def camera_from_orbit(
    volume: VolumeDataset,
    yaw_deg: float = 45.0,
    pitch_deg: float = 30.0,
    dist: float = 1.6,
    vertical_fov: float = 40.0,
    projection: str = "perspective",
) -> Camera:
    """Orbit camera: yaw about +y from the +z axis, pitch toward +y.

    ``dist`` is measured in volume-diagonal lengths from the volume center.
    """
    extent = volume.extent
    center = extent / 2.0
    diag = float(np.linalg.norm(extent))
    yaw = math.radians(yaw_deg)
    pitch = math.radians(max(-89.9, min(89.9, pitch_deg)))
    direction = np.array(
        [
            math.cos(pitch) * math.sin(yaw),
            math.sin(pitch),
            math.cos(pitch) * math.cos(yaw),
        ]
    )
    position = center + direction * dist * diag
    return Camera(
        position=tuple(position),
        target=tuple(center),
        up=(0.0, 1.0, 0.0),
        vertical_fov=vertical_fov,
        projection=projection,
    )
