"""Genetic operators over transfer-function genomes.

Crossover exchanges whole attribute groups between positionally aligned
genes; four mutation operators perturb height, width, position, and color;
selection combines elitism with fitness-proportional roulette. Stage
schedules linearly anneal crossover and mutation rates over a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .genome import (
    SIGMA_MAX,
    SIGMA_MIN,
    Gene,
    Genome,
    _as_rng,
    draw_genome_id,
)
from .tournament import (
    MAX_PRESSURE,
    MIN_PRESSURE,
    PRESSURE_EXPONENT,
    FitnessVector,
)

STAGES = ("exploration", "customization", "refinement")

ATTRIBUTE_GROUPS = ("color", "position", "shape")


class EvolutionError(Exception):
    pass


def _check_prob(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise EvolutionError(f"{name} must lie in [0,1], got {value}")


@dataclass(frozen=True)
class MutationProbs:
    height: float = 0.3
    width: float = 0.3
    position: float = 0.3
    color: float = 0.3

    def __post_init__(self):
        for name in ("height", "width", "position", "color"):
            _check_prob(f"mutation_probs.{name}", getattr(self, name))

    @classmethod
    def uniform(cls, p: float) -> "MutationProbs":
        return cls(height=p, width=p, position=p, color=p)

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "position": self.position,
            "color": self.color,
        }


@dataclass(frozen=True)
class MutationScales:
    height_sd: float = 0.1
    width_logsd: float = 0.2
    position_sd: float = 0.05
    color_sd: float = 0.1
    channel_shuffle_prob: float = 0.1

    def __post_init__(self):
        for name in ("height_sd", "width_logsd", "position_sd", "color_sd"):
            if getattr(self, name) < 0:
                raise EvolutionError(f"mutation_scales.{name} must be >= 0")
        _check_prob("mutation_scales.channel_shuffle_prob", self.channel_shuffle_prob)

    def to_dict(self) -> dict:
        return {
            "height_sd": self.height_sd,
            "width_logsd": self.width_logsd,
            "position_sd": self.position_sd,
            "color_sd": self.color_sd,
            "channel_shuffle_prob": self.channel_shuffle_prob,
        }


@dataclass(frozen=True)
class StageSchedule:
    """Linear anneal of crossover/mutation rates across a stage's generations."""

    stage: str
    crossover_start: float
    crossover_end: float
    mutation_start: float
    mutation_end: float
    position_mutation_multiplier: float

    def __post_init__(self):
        if self.stage not in STAGES:
            raise EvolutionError(f"unknown stage {self.stage!r}")
        for name in (
            "crossover_start",
            "crossover_end",
            "mutation_start",
            "mutation_end",
            "position_mutation_multiplier",
        ):
            _check_prob(name, getattr(self, name))

    def _progress(self, generation_index: int, max_generations: int) -> float:
        if max_generations < 1:
            raise EvolutionError("max_generations must be >= 1")
        return min(1.0, max(0.0, generation_index / max_generations))

    def crossover_at(self, generation_index: int, max_generations: int) -> float:
        t = self._progress(generation_index, max_generations)
        return self.crossover_start + (self.crossover_end - self.crossover_start) * t

    def mutation_at(self, generation_index: int, max_generations: int) -> float:
        t = self._progress(generation_index, max_generations)
        return self.mutation_start + (self.mutation_end - self.mutation_start) * t

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "crossover_start": self.crossover_start,
            "crossover_end": self.crossover_end,
            "mutation_start": self.mutation_start,
            "mutation_end": self.mutation_end,
            "position_mutation_multiplier": self.position_mutation_multiplier,
        }


STAGE_DEFAULTS = {
    "exploration": StageSchedule(
        stage="exploration",
        crossover_start=0.8,
        crossover_end=0.4,
        mutation_start=0.30,
        mutation_end=0.10,
        position_mutation_multiplier=1.0,
    ),
    "customization": StageSchedule(
        stage="customization",
        crossover_start=0.6,
        crossover_end=0.4,
        mutation_start=0.25,
        mutation_end=0.15,
        position_mutation_multiplier=0.3,
    ),
    "refinement": StageSchedule(
        stage="refinement",
        crossover_start=0.5,
        crossover_end=0.5,
        mutation_start=0.25,
        mutation_end=0.25,
        position_mutation_multiplier=0.3,
    ),
}


def stage_defaults(stage: str) -> StageSchedule:
    if stage not in STAGE_DEFAULTS:
        raise EvolutionError(f"unknown stage {stage!r}")
    return STAGE_DEFAULTS[stage]


@dataclass(frozen=True)
class EvolutionConfig:
    """Knobs of a generational run.

    ``crossover_prob`` and ``mutation_probs`` are the rates used when no
    stage schedule is in play (direct operator calls); staged runs derive
    both from the schedule each generation.
    """

    population_size: int = 25
    max_generations: int = 20
    elitism_count: int = 2
    crossover_prob: float = 0.6
    gene_swap_prob: float = 0.5
    mutation_probs: MutationProbs = field(default_factory=MutationProbs)
    mutation_scales: MutationScales = field(default_factory=MutationScales)
    min_pressure: float = MIN_PRESSURE
    max_pressure: float = MAX_PRESSURE
    pressure_exponent: float = PRESSURE_EXPONENT
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise EvolutionError("population_size must be >= 2")
        if self.max_generations < 1:
            raise EvolutionError("max_generations must be >= 1")
        if not 0 <= self.elitism_count < self.population_size:
            raise EvolutionError("elitism_count must be in [0, population_size)")
        _check_prob("crossover_prob", self.crossover_prob)
        _check_prob("gene_swap_prob", self.gene_swap_prob)
        if not 1.0 <= self.min_pressure <= self.max_pressure:
            raise EvolutionError("need 1 <= min_pressure <= max_pressure")
        if self.pressure_exponent <= 0:
            raise EvolutionError("pressure_exponent must be positive")

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "max_generations": self.max_generations,
            "elitism_count": self.elitism_count,
            "crossover_prob": self.crossover_prob,
            "gene_swap_prob": self.gene_swap_prob,
            "mutation_probs": self.mutation_probs.to_dict(),
            "mutation_scales": self.mutation_scales.to_dict(),
            "min_pressure": self.min_pressure,
            "max_pressure": self.max_pressure,
            "pressure_exponent": self.pressure_exponent,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvolutionConfig":
        data = dict(data)
        if "mutation_probs" in data:
            data["mutation_probs"] = MutationProbs(**data["mutation_probs"])
        if "mutation_scales" in data:
            data["mutation_scales"] = MutationScales(**data["mutation_scales"])
        return cls(**data)


def _swap_groups(gene_a: Gene, gene_b: Gene, mask: int) -> tuple[Gene, Gene]:
    updates_a, updates_b = {}, {}
    if mask & 1:  # color
        updates_a["color"], updates_b["color"] = gene_b.color, gene_a.color
    if mask & 2:  # position
        updates_a["mu"], updates_b["mu"] = gene_b.mu, gene_a.mu
    if mask & 4:  # shape: sigma and w travel together
        updates_a["sigma"], updates_b["sigma"] = gene_b.sigma, gene_a.sigma
        updates_a["w"], updates_b["w"] = gene_b.w, gene_a.w
    return replace(gene_a, **updates_a), replace(gene_b, **updates_b)


def crossover(
    parent_a: Genome, parent_b: Genome, gene_swap_prob: float, rng
) -> tuple[Genome, Genome]:
    """Positional attribute-group exchange between two parents.

    Per gene index, with probability ``gene_swap_prob``, a nonempty subset of
    {color, position, shape} is chosen uniformly and swapped. Indexes where
    either parent is frozen are left untouched on both sides.
    """
    if len(parent_a.genes) != len(parent_b.genes):
        raise EvolutionError(
            f"parents must have equal gene counts: "
            f"{len(parent_a.genes)} vs {len(parent_b.genes)}"
        )
    _check_prob("gene_swap_prob", gene_swap_prob)
    rng = _as_rng(rng)

    genes_a, genes_b = [], []
    for gene_a, gene_b in zip(parent_a.genes, parent_b.genes):
        if gene_a.frozen or gene_b.frozen:
            genes_a.append(gene_a)
            genes_b.append(gene_b)
            continue
        if rng.random() < gene_swap_prob:
            mask = int(rng.integers(1, 8))  # uniform over nonempty subsets
            gene_a, gene_b = _swap_groups(gene_a, gene_b, mask)
        genes_a.append(gene_a)
        genes_b.append(gene_b)
    child_a = Genome(id=parent_a.id, genes=tuple(genes_a))
    child_b = Genome(id=parent_b.id, genes=tuple(genes_b))
    return child_a, child_b


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def _mutate_gene(gene: Gene, probs: MutationProbs, scales: MutationScales,
                 position_multiplier: float, rng) -> Gene:
    w = gene.w
    if rng.random() < probs.height:
        w = _clip01(w + rng.normal(0.0, scales.height_sd))

    sigma = gene.sigma
    if rng.random() < probs.width:
        sigma = min(SIGMA_MAX, max(SIGMA_MIN, sigma * math.exp(rng.normal(0.0, scales.width_logsd))))

    mu = gene.mu
    if rng.random() < probs.position * position_multiplier:
        mu = _clip01(mu + rng.normal(0.0, scales.position_sd))

    color = gene.color
    if rng.random() < probs.color:
        color = tuple(_clip01(c + rng.normal(0.0, scales.color_sd)) for c in color)
        if rng.random() < scales.channel_shuffle_prob:
            perm = rng.permutation(3)
            color = (color[perm[0]], color[perm[1]], color[perm[2]])

    return replace(gene, mu=mu, sigma=sigma, w=w, color=color)


def mutate(
    genome: Genome,
    probs: MutationProbs,
    scales: MutationScales,
    position_multiplier: float,
    rng,
) -> Genome:
    """Independently perturb each unfrozen gene; frozen genes pass through."""
    _check_prob("position_multiplier", position_multiplier)
    rng = _as_rng(rng)
    genes = tuple(
        gene if gene.frozen else _mutate_gene(gene, probs, scales, position_multiplier, rng)
        for gene in genome.genes
    )
    return Genome(id=genome.id, genes=genes)


def select_parents(
    population: list[Genome], fitness: FitnessVector, count: int, rng
) -> list[Genome]:
    """Roulette selection: draw ``count`` genomes with replacement."""
    if count < 0:
        raise EvolutionError("count must be >= 0")
    if count == 0:
        return []
    missing = [g.id for g in population if g.id not in fitness.fitness]
    if missing:
        raise EvolutionError(f"fitness missing for ids: {missing}")
    rng = _as_rng(rng)
    weights = np.array([fitness.fitness[g.id] for g in population], dtype=np.float64)
    p = weights / weights.sum()
    picks = rng.choice(len(population), size=count, replace=True, p=p)
    return [population[int(i)] for i in picks]


def elite_ids(fitness: FitnessVector, elitism_count: int) -> list[str]:
    """Best ids by fitness (ties broken by id), highest first."""
    order = sorted(fitness.fitness, key=lambda i: (-fitness.fitness[i], i))
    return order[:elitism_count]


def next_generation(
    population: list[Genome],
    fitness: FitnessVector,
    config: EvolutionConfig,
    stage_schedule: StageSchedule,
    generation_index: int,
    rng,
) -> list[Genome]:
    """Elites survive verbatim; the rest is bred by roulette + crossover + mutation.

    Elites keep their ids (their gene values are unchanged, so their renders
    stay valid); every offspring gets a fresh id from the rng stream. The
    whole step is a pure function of its arguments.
    """
    if len(population) != config.population_size:
        raise EvolutionError(
            f"population size {len(population)} != configured {config.population_size}"
        )
    rng = _as_rng(rng)
    by_id = {g.id: g for g in population}

    elites = [by_id[i] for i in elite_ids(fitness, config.elitism_count)]
    crossover_prob = stage_schedule.crossover_at(generation_index, config.max_generations)
    mutation_prob = stage_schedule.mutation_at(generation_index, config.max_generations)
    probs = MutationProbs.uniform(mutation_prob)
    multiplier = stage_schedule.position_mutation_multiplier

    taken = {g.id for g in elites}
    children: list[Genome] = []
    while len(elites) + len(children) < config.population_size:
        parent_a, parent_b = select_parents(population, fitness, 2, rng)
        if rng.random() < crossover_prob:
            child_a, child_b = crossover(parent_a, parent_b, config.gene_swap_prob, rng)
        else:
            child_a, child_b = parent_a, parent_b
        for child in (child_a, child_b):
            if len(elites) + len(children) >= config.population_size:
                break
            mutated = mutate(child, probs, config.mutation_scales, multiplier, rng)
            child_id = draw_genome_id(rng)
            while child_id in taken:
                child_id = draw_genome_id(rng)
            taken.add(child_id)
            children.append(mutated.with_id(child_id))

    return elites + children
