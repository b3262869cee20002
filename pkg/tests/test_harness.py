import csv

import numpy as np
import pytest

from tfevolve.evaluate import HeuristicJudge
from tfevolve.genome import serialize
from tfevolve.harness import (
    HarnessError,
    SweepConfig,
    budget_curve,
    config_label,
    matches_per_generation,
    pooled_rank,
    run_sweep,
    write_budget_csv,
    write_ranks_csv,
)
from tfevolve.render import RenderedImage, RenderSettings
from tfevolve.volume import make_synthetic

VOLUME = make_synthetic("nested_spheres", (12, 12, 12))
FAST = dict(settings=RenderSettings(shading="none"), image_size=(16, 16), gene_count=2)


class CountingJudge:
    """Wraps the heuristic judge to count decide() calls."""

    name = "counting"

    def __init__(self):
        self.inner = HeuristicJudge()
        self.calls = 0

    def decide(self, image_a, image_b, aspects, intent):
        self.calls += 1
        return self.inner.decide(image_a, image_b, aspects, intent)


class PreferredConfigJudge:
    """Total order: members of the preferred config beat everyone else."""

    name = "scripted"

    def __init__(self):
        self.calls = 0

    def decide(self, image_a, image_b, aspects, intent):
        self.calls += 1
        tag_a = int(image_a.pixels[0, 0, 0])
        tag_b = int(image_b.pixels[0, 0, 0])
        winner = "A" if tag_a < tag_b else "B"
        return {a.id: winner for a in aspects}, None, False


def strength_render_fn(strength_of):
    """Maps each pool member to a 1x1 tag image; lower tag = stronger."""

    def render_member(genome):
        pixels = np.zeros((1, 1, 4), dtype=np.uint8)
        pixels[0, 0] = (strength_of(genome.id), 0, 0, 255)
        return RenderedImage(width=1, height=1, pixels=pixels)

    return render_member


def small_sweep(**overrides):
    defaults = dict(
        population_sizes=(4, 6),
        max_generations=2,
        representatives_k=2,
        seeds=(1, 2),
    )
    defaults.update(overrides)
    return SweepConfig(**defaults)


def test_sweep_config_validation():
    with pytest.raises(HarnessError):
        SweepConfig(population_sizes=())
    with pytest.raises(HarnessError):
        SweepConfig(population_sizes=(1, 10))
    with pytest.raises(HarnessError):
        SweepConfig(population_sizes=(4,), representatives_k=5)
    with pytest.raises(HarnessError):
        SweepConfig(seeds=())
    with pytest.raises(HarnessError):
        SweepConfig(judge="psychic")


def test_matches_per_generation_formula():
    assert matches_per_generation(10) == 30  # 6 rounds x 5 matches
    assert matches_per_generation(4) == 8  # 4 rounds x 2 matches
    assert matches_per_generation(5) == 10  # 5 rounds x 2 matches, one bye


def test_run_sweep_creates_one_directory_per_job(tmp_path):
    result = run_sweep(small_sweep(), VOLUME, tmp_path / "sweep", HeuristicJudge(), **FAST)
    assert len(result.runs) == 4
    dirs = {run.directory for run in result.runs}
    assert len(dirs) == 4
    for run in result.runs:
        assert run.directory.is_dir()
        assert (run.directory / "session.json").exists()
        assert len(run.snapshots) == 3  # generations + 1
        for snapshot in run.snapshots:
            assert len(snapshot) == 2
    assert (tmp_path / "sweep" / "sweep.json").exists()


def test_run_sweep_charges_expected_judge_calls(tmp_path):
    judge = CountingJudge()
    sweep = small_sweep(population_sizes=(4,), seeds=(3,), max_generations=2)
    run_sweep(sweep, VOLUME, tmp_path / "sweep", judge, **FAST)
    assert judge.calls == 2 * matches_per_generation(4)


def test_run_sweep_reruns_identically(tmp_path):
    first = run_sweep(small_sweep(), VOLUME, tmp_path / "a", HeuristicJudge(), **FAST)
    second = run_sweep(small_sweep(), VOLUME, tmp_path / "b", HeuristicJudge(), **FAST)

    def flat(result):
        return [
            [serialize(g) for g in snapshot]
            for run in result.runs
            for snapshot in run.snapshots
        ]

    assert flat(first) == flat(second)


def test_run_sweep_workers_match_serial(tmp_path):
    serial = run_sweep(small_sweep(), VOLUME, tmp_path / "s", HeuristicJudge(), **FAST)
    threaded = run_sweep(
        small_sweep(), VOLUME, tmp_path / "t", HeuristicJudge(), workers=4, **FAST
    )
    serial_ids = [[g.id for g in run.snapshots[-1]] for run in serial.runs]
    threaded_ids = [[g.id for g in run.snapshots[-1]] for run in threaded.runs]
    assert serial_ids == threaded_ids


def test_pooled_rank_single_config_averages_all_ranks(tmp_path):
    sweep = small_sweep(population_sizes=(4,), seeds=(1, 2))
    result = run_sweep(sweep, VOLUME, tmp_path / "sweep", HeuristicJudge(), **FAST)
    means = pooled_rank(result, HeuristicJudge())
    # pool of 4 members, ranks are a permutation of 1..4 regardless of judge
    assert means == {"pop4": 2.5}


def test_pooled_rank_prefers_dominating_config(tmp_path):
    result = run_sweep(small_sweep(), VOLUME, tmp_path / "sweep", HeuristicJudge(), **FAST)

    def strength(member_id):
        # every pop4 member outranks every pop6 member; unique tags
        base = 10 if member_id.startswith("pop4") else 100
        return base + hash(member_id) % 64

    means = pooled_rank(
        result, PreferredConfigJudge(), render_fn=strength_render_fn(strength)
    )
    assert means["pop4"] < means["pop6"]


def test_pooled_rank_k_one_two_configs(tmp_path):
    sweep = small_sweep(seeds=(5,), representatives_k=2)
    result = run_sweep(sweep, VOLUME, tmp_path / "sweep", HeuristicJudge(), **FAST)
    means = pooled_rank(
        result,
        PreferredConfigJudge(),
        k=1,
        render_fn=strength_render_fn(
            lambda member_id: 1 if member_id.startswith("pop4") else 2
        ),
    )
    assert means == {"pop4": 1.0, "pop6": 2.0}


def test_budget_curve_is_monotone_and_grounded(tmp_path):
    result = run_sweep(small_sweep(), VOLUME, tmp_path / "sweep", HeuristicJudge(), **FAST)
    rows = budget_curve(result, HeuristicJudge())

    zero_rows = [r for r in rows if r["budget"] == 0]
    assert {r["config"] for r in zero_rows} == {"pop4", "pop6"}
    assert all(r["generations_affordable"] == 0 for r in zero_rows)

    for label in ("pop4", "pop6"):
        series = [r for r in rows if r["config"] == label]
        series.sort(key=lambda r: r["budget"])
        bests = [r["best_mean_rank"] for r in series]
        assert all(a >= b for a, b in zip(bests, bests[1:]))
        affordable = [r["generations_affordable"] for r in series]
        assert all(a <= b for a, b in zip(affordable, affordable[1:]))
        assert series[-1]["generations_affordable"] == 2


def test_budget_checkpoints_cover_every_config_generation(tmp_path):
    sweep = small_sweep(population_sizes=(4,), seeds=(1,))
    result = run_sweep(sweep, VOLUME, tmp_path / "sweep", HeuristicJudge(), **FAST)
    rows = budget_curve(result, HeuristicJudge())
    budgets = sorted({r["budget"] for r in rows})
    assert budgets == [0, 8, 16]  # generation cost is 8 for n=4


def test_csv_writers_emit_expected_headers(tmp_path):
    write_ranks_csv(tmp_path / "ranks.csv", {"pop4": 3.5, "pop6": 2.0})
    with open(tmp_path / "ranks.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["config"] for r in rows] == ["pop6", "pop4"]  # best first
    assert rows[0]["mean_rank"] == "2.000000"

    write_budget_csv(
        tmp_path / "budget.csv",
        [
            {"budget": 8, "config": "pop4", "generations_affordable": 1, "best_mean_rank": 2.0},
            {"budget": 0, "config": "pop4", "generations_affordable": 0, "best_mean_rank": 3.0},
        ],
    )
    with open(tmp_path / "budget.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["budget"]) for r in rows] == [0, 8]


def test_config_label_shape():
    assert config_label(25) == "pop25"
