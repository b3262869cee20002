"""Population-size sweep: repeated exploration runs compared on equal terms.

Each (population size, seed) pair gets an independent headless run. The
final populations are then compared by pooling every configuration's top
representatives into one fresh tournament, and budget curves charge each
configuration the matches it actually issued per generation so that
configurations of different sizes can be compared at equal judge spend.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .evaluate import Intent, formal_aspects
from .evolve import EvolutionConfig
from .genome import Genome, bake_lut
from .render import Camera, RenderSettings, camera_from_orbit, render
from .session import create_session, step_generation
from .tournament import run_tournament, swiss_rounds
from .volume import VolumeDataset


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class SweepConfig:
    population_sizes: tuple[int, ...] = (10, 25, 50)
    max_generations: int = 10
    representatives_k: int = 10
    seeds: tuple[int, ...] = (0,)
    judge: str = "heuristic"

    def __post_init__(self):
        object.__setattr__(self, "population_sizes", tuple(self.population_sizes))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.population_sizes:
            raise HarnessError("population_sizes must be non-empty")
        if any(n < 2 for n in self.population_sizes):
            raise HarnessError("every population size must be >= 2")
        if self.max_generations < 1:
            raise HarnessError("max_generations must be >= 1")
        if not 1 <= self.representatives_k <= min(self.population_sizes):
            raise HarnessError(
                "representatives_k must be in [1, min population size]"
            )
        if not self.seeds:
            raise HarnessError("seeds must be non-empty")
        if self.judge not in ("heuristic", "mllm"):
            raise HarnessError("judge must be heuristic or mllm")

    def to_dict(self) -> dict:
        return {
            "population_sizes": list(self.population_sizes),
            "max_generations": self.max_generations,
            "representatives_k": self.representatives_k,
            "seeds": list(self.seeds),
            "judge": self.judge,
        }


@dataclass(frozen=True)
class RunResult:
    """One (population size, seed) run: its directory and top-k snapshots.

    ``snapshots[g]`` holds the top-k genomes of the generation-g leaderboard
    in rating order; there are max_generations + 1 of them.
    """

    population_size: int
    seed: int
    directory: Path
    snapshots: tuple[tuple[Genome, ...], ...] = field(repr=False)


@dataclass(frozen=True)
class SweepResult:
    sweep: SweepConfig
    volume: VolumeDataset
    camera: Camera
    settings: RenderSettings
    image_size: tuple[int, int]
    runs: tuple[RunResult, ...]


def matches_per_generation(population_size: int) -> int:
    """Judge calls one generation costs: every round pairs floor(n/2) matches."""
    return swiss_rounds(population_size) * (population_size // 2)


def config_label(population_size: int) -> str:
    return f"pop{population_size}"


def run_sweep(
    sweep: SweepConfig,
    volume: VolumeDataset,
    out_dir: str | Path,
    judge,
    *,
    camera: Camera | None = None,
    settings: RenderSettings | None = None,
    image_size: tuple[int, int] = (64, 64),
    gene_count: int = 5,
    workers: int = 1,
) -> SweepResult:
    """Run one headless exploration per (population size, seed) pair."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if camera is None:
        camera = camera_from_orbit(volume)
    if settings is None:
        settings = RenderSettings()
    (out / "sweep.json").write_text(json.dumps(sweep.to_dict(), indent=2))

    jobs = [
        (size, seed) for size in sweep.population_sizes for seed in sweep.seeds
    ]

    def one_run(size: int, seed: int) -> RunResult:
        run_dir = out / f"{config_label(size)}-seed{seed}"
        config = EvolutionConfig(
            population_size=size,
            max_generations=sweep.max_generations,
            rng_seed=seed,
        )
        session = create_session(
            volume,
            config,
            camera,
            data_dir=run_dir,
            settings=settings,
            image_size=image_size,
            gene_count=gene_count,
        )
        for _ in range(sweep.max_generations):
            step_generation(session, judge)
        snapshots = tuple(
            tuple(
                session.genome_by_id(entry.genome_id)
                for entry in record.entries[: sweep.representatives_k]
            )
            for record in session.history
        )
        return RunResult(
            population_size=size, seed=seed, directory=run_dir, snapshots=snapshots
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: one_run(*job), jobs))
    else:
        results = [one_run(*job) for job in jobs]

    return SweepResult(
        sweep=sweep,
        volume=volume,
        camera=camera,
        settings=settings,
        image_size=image_size,
        runs=tuple(results),
    )


def _context_render_fn(result: SweepResult):
    """Render pool members at the sweep's shared viewpoint, deduplicated.

    Pool ids are namespaced per run (and per generation for budget pools),
    so the cache keys on gene content: elites that persist across
    generations render once.
    """
    width, height = result.image_size
    cache: dict = {}

    def render_member(genome: Genome):
        image = cache.get(genome.genes)
        if image is None:
            image = render(
                result.volume,
                bake_lut(genome),
                result.camera,
                result.settings,
                width,
                height,
            )
            cache[genome.genes] = image
        return image

    return render_member


def _ranked_pool(pool: list[Genome], labels: dict[str, str], judge, render_fn):
    if len(pool) < 2:
        raise HarnessError("pool must have at least 2 members")
    _, ranks = run_tournament(pool, render_fn, judge, formal_aspects(), Intent.none())
    grouped: dict[str, list[int]] = {}
    for member_id, rank in ranks.items():
        grouped.setdefault(labels[member_id], []).append(rank)
    return grouped


def pooled_rank(
    result: SweepResult, judge, *, k: int | None = None, render_fn=None
) -> dict[str, float]:
    """Mean rank per configuration in one fresh tournament over the pool.

    The pool is the union of every run's final top-k representatives; lower
    mean rank is better.
    """
    if k is None:
        k = result.sweep.representatives_k
    if render_fn is None:
        render_fn = _context_render_fn(result)

    pool: list[Genome] = []
    labels: dict[str, str] = {}
    for run in result.runs:
        label = config_label(run.population_size)
        for genome in run.snapshots[-1][:k]:
            member = genome.with_id(f"{label}:s{run.seed}:{genome.id}")
            pool.append(member)
            labels[member.id] = label

    grouped = _ranked_pool(pool, labels, judge, render_fn)
    return {
        label: sum(ranks) / len(ranks) for label, ranks in sorted(grouped.items())
    }


def budget_curve(
    result: SweepResult, judge, *, k: int | None = None, render_fn=None
) -> list[dict]:
    """Best pooled mean rank each configuration reaches at matched budgets.

    Every generation snapshot of every run joins one big pooled tournament;
    a configuration's entry at budget B is the best (lowest) mean rank among
    the generations it can afford at B, so the curve is monotone in budget.
    """
    if k is None:
        k = result.sweep.representatives_k
    if render_fn is None:
        render_fn = _context_render_fn(result)

    pool: list[Genome] = []
    labels: dict[str, str] = {}
    generation_of: dict[str, int] = {}
    for run in result.runs:
        label = config_label(run.population_size)
        for gen, snapshot in enumerate(run.snapshots):
            for genome in snapshot[:k]:
                member = genome.with_id(f"{label}:s{run.seed}:g{gen}:{genome.id}")
                pool.append(member)
                labels[member.id] = label
                generation_of[member.id] = gen

    if len(pool) < 2:
        raise HarnessError("pool must have at least 2 members")
    _, ranks = run_tournament(pool, render_fn, judge, formal_aspects(), Intent.none())

    per_generation: dict[tuple[str, int], list[int]] = {}
    for member_id, rank in ranks.items():
        key = (labels[member_id], generation_of[member_id])
        per_generation.setdefault(key, []).append(rank)
    mean_rank = {key: sum(r) / len(r) for key, r in per_generation.items()}

    sizes = sorted(set(run.population_size for run in result.runs))
    generations = result.sweep.max_generations
    budgets = sorted(
        {
            gen * matches_per_generation(size)
            for size in sizes
            for gen in range(generations + 1)
        }
    )

    rows = []
    for budget in budgets:
        for size in sizes:
            label = config_label(size)
            affordable = min(generations, budget // matches_per_generation(size))
            best = min(mean_rank[(label, gen)] for gen in range(affordable + 1))
            rows.append(
                {
                    "budget": budget,
                    "config": label,
                    "generations_affordable": affordable,
                    "best_mean_rank": best,
                }
            )
    return rows


def write_ranks_csv(path: str | Path, mean_ranks: dict[str, float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "mean_rank"])
        for label, value in sorted(mean_ranks.items(), key=lambda kv: (kv[1], kv[0])):
            writer.writerow([label, f"{value:.6f}"])


def write_budget_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["budget", "config", "generations_affordable", "best_mean_rank"],
        )
        writer.writeheader()
        for row in sorted(rows, key=lambda r: (r["budget"], r["config"])):
            writer.writerow({**row, "best_mean_rank": f"{row['best_mean_rank']:.6f}"})
