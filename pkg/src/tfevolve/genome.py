"""Gaussian-mixture transfer function encoding.

A transfer function is a genome: an ordered list of Gaussian genes, each
contributing ``w * exp(-(v - mu)^2 / (2 sigma^2))`` opacity at normalized
data value v, with an RGB color blended in proportion to that contribution.
Genes carry a ``frozen`` flag so refinement can pin features in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

SIGMA_MIN = 0.005
SIGMA_MAX = 0.25
DEFAULT_LUT_RESOLUTION = 256
DEFAULT_GENE_COUNT = 5

# Sampling ranges for random genes (sigma/weight kept away from the extremes
# so fresh populations neither flood the domain nor start invisible).
RANDOM_SIGMA_RANGE = (0.02, 0.12)
RANDOM_WEIGHT_RANGE = (0.05, 0.9)

_COLOR_EPS = 1e-6


class GenomeError(ValueError):
    """Raised when genome data violates its invariants."""


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise GenomeError(f"{name} must be in [0,1], got {value}")
    return value


@dataclass(frozen=True)
class Gene:
    """One Gaussian component: position, width, weight, color, freeze flag."""

    mu: float
    sigma: float
    w: float
    color: tuple[float, float, float]
    frozen: bool = False

    def __post_init__(self):
        _check_unit("mu", self.mu)
        _check_unit("w", self.w)
        if not SIGMA_MIN <= self.sigma <= SIGMA_MAX:
            raise GenomeError(
                f"sigma must be in [{SIGMA_MIN}, {SIGMA_MAX}], got {self.sigma}"
            )
        if len(self.color) != 3:
            raise GenomeError(f"color must be an rgb triple, got {self.color}")
        for c in self.color:
            _check_unit("color channel", c)
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))


@dataclass(frozen=True)
class Genome:
    """Ordered Gaussian mixture with a stable identifier."""

    id: str
    genes: tuple[Gene, ...]

    def __post_init__(self):
        object.__setattr__(self, "genes", tuple(self.genes))
        if len(self.genes) < 1:
            raise GenomeError("genome needs at least one gene")

    def __len__(self) -> int:
        return len(self.genes)

    def with_id(self, new_id: str) -> "Genome":
        return replace(self, id=new_id)


@dataclass(frozen=True)
class TransferFunctionLUT:
    """Baked transfer function: entry k maps value k/(resolution-1)."""

    rgb: np.ndarray  # (resolution, 3) in [0,1]
    opacity: np.ndarray  # (resolution,) in [0,1]

    def __post_init__(self):
        if self.rgb.ndim != 2 or self.rgb.shape[1] != 3:
            raise GenomeError(f"rgb table must be (R,3), got {self.rgb.shape}")
        if self.opacity.shape != (self.rgb.shape[0],):
            raise GenomeError("opacity length must equal rgb length")
        if self.resolution < 2:
            raise GenomeError("LUT resolution must be >= 2")
        for arr, name in ((self.rgb, "rgb"), (self.opacity, "opacity")):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise GenomeError(f"LUT {name} outside [0,1]")
        self.rgb.flags.writeable = False
        self.opacity.flags.writeable = False

    @property
    def resolution(self) -> int:
        return self.rgb.shape[0]

    def lookup_index(self, v: np.ndarray) -> np.ndarray:
        """Nearest-entry indices for values in [0,1]."""
        r = self.resolution
        return np.clip(np.rint(np.asarray(v) * (r - 1)).astype(np.int64), 0, r - 1)


def _gene_arrays(genome: Genome):
    mu = np.array([g.mu for g in genome.genes])
    sigma = np.array([g.sigma for g in genome.genes])
    w = np.array([g.w for g in genome.genes])
    color = np.array([g.color for g in genome.genes])
    return mu, sigma, w, color


def contributions(genome: Genome, v) -> np.ndarray:
    """Per-gene opacity contribution ``w_i * exp(-(v-mu_i)^2 / (2 sigma_i^2))``.

    Scalar v gives shape (n,); array v of shape (...,) gives (..., n).
    """
    mu, sigma, w, _ = _gene_arrays(genome)
    v = np.asarray(v, dtype=np.float64)
    d = v[..., None] - mu
    return w * np.exp(-(d * d) / (2.0 * sigma * sigma))


def opacity_at(genome: Genome, v) -> float | np.ndarray:
    """Summed Gaussian opacity at v, clamped to [0,1]."""
    total = contributions(genome, v).sum(axis=-1)
    clipped = np.clip(total, 0.0, 1.0)
    return float(clipped) if np.isscalar(v) or np.ndim(v) == 0 else clipped


def color_at(genome: Genome, v) -> tuple[float, float, float]:
    """Contribution-weighted blend of gene colors; black below the blend floor."""
    contrib = contributions(genome, v)
    total = contrib.sum(axis=-1)
    if total < _COLOR_EPS:
        return (0.0, 0.0, 0.0)
    _, _, _, color = _gene_arrays(genome)
    blended = contrib @ color / total
    return (float(blended[0]), float(blended[1]), float(blended[2]))


def bake_lut(genome: Genome, resolution: int = DEFAULT_LUT_RESOLUTION) -> TransferFunctionLUT:
    """Evaluate the genome on a uniform lattice of `resolution` values."""
    if resolution < 2:
        raise GenomeError("LUT resolution must be >= 2")
    rgb = np.zeros((resolution, 3))
    opacity = np.zeros(resolution)
    for k in range(resolution):
        v = k / (resolution - 1)
        opacity[k] = opacity_at(genome, v)
        rgb[k] = color_at(genome, v)
    return TransferFunctionLUT(rgb=rgb, opacity=opacity)


def _as_rng(rng_seed) -> np.random.Generator:
    if hasattr(rng_seed, "random") and hasattr(rng_seed, "integers"):
        return rng_seed
    return np.random.default_rng(rng_seed)


def draw_genome_id(rng: np.random.Generator) -> str:
    return f"{int(rng.integers(0, 16**8)):08x}"


def random_genome(n: int, rng_seed, genome_id: str | None = None) -> Genome:
    """Random genome with stratified positions: gene i's mu lies in [i/n, (i+1)/n].

    Accepts a seed or an existing Generator; identical seeds give identical
    genomes.
    """
    if n < 1:
        raise GenomeError("n must be >= 1")
    rng = _as_rng(rng_seed)
    if genome_id is None:
        genome_id = draw_genome_id(rng)
    genes = []
    for i in range(n):
        mu = rng.uniform(i / n, (i + 1) / n)
        sigma = rng.uniform(*RANDOM_SIGMA_RANGE)
        w = rng.uniform(*RANDOM_WEIGHT_RANGE)
        color = tuple(rng.uniform(0.0, 1.0, size=3))
        genes.append(Gene(mu=mu, sigma=sigma, w=w, color=color, frozen=False))
    return Genome(id=genome_id, genes=tuple(genes))


def to_dict(genome: Genome) -> dict:
    return {
        "id": genome.id,
        "genes": [
            {
                "mu": g.mu,
                "sigma": g.sigma,
                "w": g.w,
                "color": list(g.color),
                "frozen": g.frozen,
            }
            for g in genome.genes
        ],
    }


def from_dict(data: dict) -> Genome:
    try:
        genes = tuple(
            Gene(
                mu=float(g["mu"]),
                sigma=float(g["sigma"]),
                w=float(g["w"]),
                color=tuple(float(c) for c in g["color"]),
                frozen=bool(g.get("frozen", False)),
            )
            for g in data["genes"]
        )
        return Genome(id=str(data["id"]), genes=genes)
    except (KeyError, TypeError) as exc:
        raise GenomeError(f"malformed genome data: {exc}")


def serialize(genome: Genome) -> str:
    """Genome -> human-readable JSON (the checkpoint and API wire form)."""
    return json.dumps(to_dict(genome), indent=2)


def deserialize(text: str) -> Genome:
    """JSON -> Genome, enforcing all Gene/Genome invariants."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenomeError(f"malformed genome JSON: {exc}")
    return from_dict(data)
