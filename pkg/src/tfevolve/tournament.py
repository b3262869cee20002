"""Elo ratings over Swiss-style pairwise tournaments, and rank-based fitness.

Every generation runs a fresh tournament: all ratings start at 1600, pairs
are judged image-against-image, and ratings move by the classic logistic
update with K=32. Final ranks convert to fitness through a rising selection
pressure so early generations explore and late generations exploit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .evaluate import Aspect, Intent, compare
from .genome import Genome

ELO_INIT = 1600.0
ELO_K = 32.0
MIN_PRESSURE = 1.2
MAX_PRESSURE = 4.0
PRESSURE_EXPONENT = 2.0

OUTCOME_SCORES = {"A": 1.0, "B": 0.0, "Tie": 0.5}


class TournamentError(Exception):
    pass


@dataclass
class EloState:
    ratings: dict[str, float]
    played: set[frozenset] = field(default_factory=set)
    round: int = 0

    def __post_init__(self):
        for genome_id, rating in self.ratings.items():
            if not math.isfinite(rating):
                raise TournamentError(f"non-finite rating for {genome_id}")
        for pair in self.played:
            if not pair <= self.ratings.keys():
                raise TournamentError(f"played pair {set(pair)} references unknown ids")
        if self.round < 0:
            raise TournamentError("round must be >= 0")


@dataclass(frozen=True)
class FitnessVector:
    fitness: dict[str, float]
    pressure_used: float

    def __post_init__(self):
        if any(f <= 0 for f in self.fitness.values()):
            raise TournamentError("fitness values must be positive")


@dataclass(frozen=True)
class AgreementRecord:
    pair_id: str
    p: float  # machine probability of preferring the first image
    q: float  # human probability of preferring the first image

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.q <= 1.0):
            raise TournamentError(f"probabilities must lie in [0,1]: {self}")


def expected(sigma_i: float, sigma_j: float) -> float:
    """Probability that the first player beats the second."""
    return 1.0 / (1.0 + 10.0 ** ((sigma_j - sigma_i) / 400.0))


def update(
    sigma_i: float, sigma_j: float, outcome: float, k: float = ELO_K
) -> tuple[float, float]:
    """One zero-sum rating exchange; outcome is S for the first player."""
    if outcome not in (0.0, 0.5, 1.0):
        raise TournamentError(f"outcome must be 0, 0.5 or 1, got {outcome}")
    delta = k * (outcome - expected(sigma_i, sigma_j))
    return sigma_i + delta, sigma_j - delta


def swiss_rounds(n: int) -> int:
    if n < 2:
        raise TournamentError("a tournament needs at least 2 entrants")
    return math.ceil(math.log2(n)) + 2


def pair_round(state: EloState, ids: list[str]) -> tuple[list[tuple[str, str]], str | None]:
    """Greedy nearest-rating pairing that avoids rematches when possible.

    Odd counts first hand the lowest-rated entrant a bye, then the rest pair
    top-down: each leader takes the closest-rated fresh opponent, falling
    back to the closest rematch when every remaining opponent was played.
    """
    if len(ids) < 2:
        raise TournamentError("need at least 2 ids to pair")
    if len(set(ids)) != len(ids):
        raise TournamentError("duplicate ids in pairing request")
    order = sorted(ids, key=lambda i: (-state.ratings[i], i))

    bye = None
    if len(order) % 2 == 1:
        bye = order.pop()

    pairs = []
    while order:
        leader = order.pop(0)
        fresh = [o for o in order if frozenset((leader, o)) not in state.played]
        pool = fresh if fresh else order
        opponent = min(
            pool,
            key=lambda o: (abs(state.ratings[o] - state.ratings[leader]), order.index(o)),
        )
        order.remove(opponent)
        pairs.append((leader, opponent))
    return pairs, bye


def run_tournament(
    population: list[Genome],
    render_fn,
    judge,
    aspects: list[Aspect],
    intent: Intent,
    trace_path: str | Path | None = None,
    progress=None,
    trace_append: bool = False,
    trace_meta: dict | None = None,
) -> tuple[EloState, dict[str, int]]:
    """Swiss tournament over a population; returns final state and ranks.

    ``render_fn(genome) -> RenderedImage`` is called once per genome; all
    matches reuse the images. Rating updates are batched per round: every
    match's delta is computed from the round's starting ratings, then all
    deltas apply at once. ``progress(done_rounds, total_rounds)`` is invoked
    after each round. ``trace_meta`` keys are merged into every trace line
    (sessions tag lines with their generation).
    """
    ids = [g.id for g in population]
    if len(ids) < 2:
        raise TournamentError("population must have at least 2 genomes")
    if len(set(ids)) != len(ids):
        raise TournamentError("population has duplicate genome ids")

    images = {g.id: render_fn(g) for g in population}
    state = EloState(ratings={i: ELO_INIT for i in ids})
    total_rounds = swiss_rounds(len(ids))

    trace_file = None
    if trace_path is not None:
        trace_path = Path(trace_path)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        trace_file = trace_path.open("a" if trace_append else "w")

    try:
        for round_index in range(1, total_rounds + 1):
            pairs, _bye = pair_round(state, ids)
            results = []
            for id_a, id_b in pairs:
                outcome = compare(
                    judge, images[id_a], images[id_b], aspects, intent
                ).overall
                score = OUTCOME_SCORES[outcome]
                delta = ELO_K * (
                    score - expected(state.ratings[id_a], state.ratings[id_b])
                )
                results.append((id_a, id_b, outcome, delta))

            for id_a, id_b, outcome, delta in results:
                state.ratings[id_a] += delta
                state.ratings[id_b] -= delta
                state.played.add(frozenset((id_a, id_b)))
            state.round = round_index

            if trace_file is not None:
                for id_a, id_b, outcome, delta in results:
                    line = {
                        "round": round_index,
                        "id_a": id_a,
                        "id_b": id_b,
                        "outcome": outcome,
                        "delta": delta,
                        "ratings_after": {
                            id_a: state.ratings[id_a],
                            id_b: state.ratings[id_b],
                        },
                    }
                    if trace_meta:
                        line = {**trace_meta, **line}
                    trace_file.write(json.dumps(line) + "\n")
            if progress is not None:
                progress(round_index, total_rounds)
    finally:
        if trace_file is not None:
            trace_file.close()

    return state, ranks_from_ratings(state.ratings)


def ranks_from_ratings(ratings: dict[str, float]) -> dict[str, int]:
    """Dense 1..n ranks, best rating first, ties broken by id."""
    order = sorted(ratings, key=lambda i: (-ratings[i], i))
    return {genome_id: rank for rank, genome_id in enumerate(order, start=1)}


def fitness_from_ranks(ranks: dict[str, int], n: int, pressure_value: float) -> FitnessVector:
    if sorted(ranks.values()) != list(range(1, n + 1)):
        raise TournamentError("ranks must be a permutation of 1..n")
    if pressure_value < 1.0:
        raise TournamentError("pressure must be >= 1")
    fitness = {i: float(n - r + 1) ** pressure_value for i, r in ranks.items()}
    return FitnessVector(fitness=fitness, pressure_used=pressure_value)


def pressure(
    current_gen: int,
    max_gen: int,
    min_p: float = MIN_PRESSURE,
    max_p: float = MAX_PRESSURE,
    k: float = PRESSURE_EXPONENT,
) -> float:
    """Selection pressure rises from min_p to max_p as generations progress."""
    if max_gen < 1:
        raise TournamentError("max_gen must be >= 1")
    if current_gen < 0:
        raise TournamentError("current_gen must be >= 0")
    progress = min(1.0, current_gen / max_gen)
    return min_p + (max_p - min_p) * progress**k


def agreement_score(records: list[AgreementRecord]) -> float:
    """Mean probability that machine and human would pick the same image."""
    if not records:
        raise TournamentError("agreement_score needs at least one record")
    total = sum(r.p * r.q + (1.0 - r.p) * (1.0 - r.q) for r in records)
    return total / len(records)


def load_agreement_csvs(machine_path: str | Path, human_path: str | Path) -> list[AgreementRecord]:
    """Join machine (pair_id,p) and human (pair_id,q) CSVs on pair_id."""
    machine = _read_probability_csv(machine_path, "p")
    human = _read_probability_csv(human_path, "q")
    shared = sorted(machine.keys() & human.keys())
    if not shared:
        raise TournamentError("no shared pair_ids between machine and human CSVs")
    return [AgreementRecord(pair_id=i, p=machine[i], q=human[i]) for i in shared]


def _read_probability_csv(path: str | Path, column: str) -> dict[str, float]:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or {"pair_id", column} - set(reader.fieldnames):
            raise TournamentError(f"{path}: expected columns pair_id,{column}")
        out = {}
        for row in reader:
            out[row["pair_id"]] = float(row[column])
    return out
