"""Session lifecycle: exploration, customization, refinement.

A session owns one volume, one camera pose, one evolving population, and an
append-only history of generation records. Steps run a Swiss tournament on
the current population, convert ranks to fitness under the rising pressure
schedule, and breed the next generation. Intents move the session into
customization; feature picks freeze every other gene and move it into
refinement. Checkpoints capture the full state, including the rng stream,
so restored sessions replay bit-identically.
"""

from __future__ import annotations

import base64
import json
import os
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .evaluate import Intent, default_aspects, formal_aspects
from .evolve import (
    EvolutionConfig,
    MutationProbs,
    mutate,
    next_generation,
    stage_defaults,
)
from .genome import (
    Genome,
    bake_lut,
    draw_genome_id,
    from_dict as genome_from_dict,
    random_genome,
    to_dict as genome_to_dict,
)
from .render import (
    Camera,
    RenderedImage,
    RenderSettings,
    camera_from_orbit,
    image_from_png_bytes,
    pick_feature,
    render,
)
from .tournament import (
    ELO_INIT,
    fitness_from_ranks,
    pressure,
    run_tournament,
)
from .volume import VolumeDataset, load_raw, make_synthetic

CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.json"
DEFAULT_IMAGE_SIZE = (128, 128)
DEFAULT_GENE_COUNT = 5
STAGE_ORDER = {"exploration": 0, "customization": 1, "refinement": 2}


class SessionError(Exception):
    pass


@dataclass(frozen=True)
class GalleryEntry:
    genome_id: str
    rating: float
    thumbnail: str  # path relative to the session data dir

    def to_dict(self) -> dict:
        return {
            "genome_id": self.genome_id,
            "rating": self.rating,
            "thumbnail": self.thumbnail,
        }


@dataclass(frozen=True)
class GenerationRecord:
    """Full leaderboard of one evaluated generation, best rating first."""

    generation_index: int
    stage: str
    entries: tuple[GalleryEntry, ...]

    def __post_init__(self):
        ratings = [e.rating for e in self.entries]
        if any(a < b for a, b in zip(ratings, ratings[1:])):
            raise SessionError("record entries must be sorted by rating descending")

    def to_dict(self) -> dict:
        return {
            "generation_index": self.generation_index,
            "stage": self.stage,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationRecord":
        return cls(
            generation_index=data["generation_index"],
            stage=data["stage"],
            entries=tuple(GalleryEntry(**e) for e in data["entries"]),
        )


class Session:
    """Mutable workflow state; advance with the module-level operations."""

    def __init__(
        self,
        session_id: str,
        volume: VolumeDataset,
        config: EvolutionConfig,
        camera: Camera,
        settings: RenderSettings,
        image_size: tuple[int, int],
        data_dir: Path,
        volume_source: dict | None,
        gene_count: int,
        rng: np.random.Generator,
    ):
        self.id = session_id
        self.volume = volume
        self.config = config
        self.camera = camera
        self.settings = settings
        self.image_size = tuple(image_size)
        self.data_dir = Path(data_dir)
        self.volume_source = volume_source
        self.gene_count = gene_count
        self.rng = rng

        self.stage = "exploration"
        self.intent = Intent.none()
        self.generation_index = 0
        self.stage_generation_index = 0
        self.population: list[Genome] = []
        self.frozen_gene_indices: set[int] = set()
        self.latest_ratings: dict[str, float] = {}
        self.history: list[GenerationRecord] = []
        self.genome_store: dict[str, Genome] = {}
        self._render_cache: dict[str, RenderedImage] = {}

    # -- rendering helpers ---------------------------------------------------

    def render_genome(self, genome: Genome) -> RenderedImage:
        cached = self._render_cache.get(genome.id)
        if cached is None:
            width, height = self.image_size
            cached = render(
                self.volume, bake_lut(genome), self.camera, self.settings, width, height
            )
            self._render_cache[genome.id] = cached
        return cached

    def genome_by_id(self, genome_id: str) -> Genome:
        genome = self.genome_store.get(genome_id)
        if genome is None:
            raise SessionError(f"unknown genome id {genome_id!r}")
        return genome

    def aspects(self):
        if self.stage == "exploration":
            return formal_aspects()
        return default_aspects(self.intent)


def _volume_source_for(volume: VolumeDataset, explicit: dict | None) -> dict | None:
    if explicit is not None:
        return explicit
    if volume.synthetic_spec is not None:
        return {
            "kind": "synthetic",
            "name": volume.synthetic_spec,
            "dims": list(volume.dims),
        }
    return None


def _load_volume_source(source: dict) -> VolumeDataset:
    if source["kind"] == "synthetic":
        return make_synthetic(source["name"], tuple(source["dims"]))
    if source["kind"] == "raw":
        return load_raw(source["descriptor_path"])
    raise SessionError(f"unknown volume source kind {source['kind']!r}")


def create_session(
    volume: VolumeDataset,
    config: EvolutionConfig,
    camera: Camera | None = None,
    *,
    data_dir: str | Path,
    settings: RenderSettings | None = None,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    gene_count: int = DEFAULT_GENE_COUNT,
    volume_source: dict | None = None,
    session_id: str | None = None,
) -> Session:
    """Seed a fresh exploration-stage session and write its generation-0 record."""
    rng = np.random.default_rng(config.rng_seed)
    if camera is None:
        camera = camera_from_orbit(volume)
    if settings is None:
        settings = RenderSettings()
    if session_id is None:
        session_id = draw_genome_id(rng)

    session = Session(
        session_id=session_id,
        volume=volume,
        config=config,
        camera=camera,
        settings=settings,
        image_size=image_size,
        data_dir=Path(data_dir),
        volume_source=_volume_source_for(volume, volume_source),
        gene_count=gene_count,
        rng=rng,
    )

    population = []
    taken = set()
    for _ in range(config.population_size):
        genome = random_genome(gene_count, session.rng)
        while genome.id in taken:
            genome = genome.with_id(draw_genome_id(session.rng))
        taken.add(genome.id)
        population.append(genome)
    session.population = population
    session.latest_ratings = {g.id: ELO_INIT for g in population}
    _remember_genomes(session, population)

    _write_record(session)
    _persist(session)
    return session


def _remember_genomes(session: Session, genomes: list[Genome]) -> None:
    for genome in genomes:
        session.genome_store[genome.id] = genome
        genome_dir = session.data_dir / "genomes"
        genome_dir.mkdir(parents=True, exist_ok=True)
        (genome_dir / f"{genome.id}.json").write_text(
            json.dumps(genome_to_dict(genome), indent=2)
        )


def _write_record(session: Session, evaluated: list[Genome] | None = None) -> GenerationRecord:
    """Record the leaderboard of ``evaluated`` (default: current population)."""
    members = evaluated if evaluated is not None else session.population
    order = sorted(members, key=lambda g: (-session.latest_ratings[g.id], g.id))
    render_dir = session.data_dir / "renders" / str(session.generation_index)
    render_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for genome in order:
        rel = f"renders/{session.generation_index}/{genome.id}.png"
        session.render_genome(genome).save(session.data_dir / rel)
        entries.append(
            GalleryEntry(
                genome_id=genome.id,
                rating=session.latest_ratings[genome.id],
                thumbnail=rel,
            )
        )
    record = GenerationRecord(
        generation_index=session.generation_index,
        stage=session.stage,
        entries=tuple(entries),
    )
    session.history.append(record)
    return record


def step_generation(session: Session, judge, progress=None) -> GenerationRecord:
    """Evaluate the current population, record it, and breed the next one.

    ``progress(done_rounds, total_rounds)`` forwards the tournament's
    per-round callback.
    """
    if session.stage_generation_index >= session.config.max_generations:
        raise SessionError(
            f"stage {session.stage!r} exhausted its {session.config.max_generations} generations; "
            "apply an intent or refine a feature to continue"
        )
    evaluated = list(session.population)
    state, ranks = run_tournament(
        evaluated,
        session.render_genome,
        judge,
        session.aspects(),
        session.intent,
        trace_path=session.data_dir / "trace.jsonl",
        progress=progress,
        trace_append=True,
        trace_meta={"generation": session.generation_index + 1},
    )
    session.latest_ratings = dict(state.ratings)

    pressure_value = pressure(
        session.stage_generation_index,
        session.config.max_generations,
        session.config.min_pressure,
        session.config.max_pressure,
        session.config.pressure_exponent,
    )
    fitness = fitness_from_ranks(ranks, len(evaluated), pressure_value)
    schedule = stage_defaults(session.stage)
    session.population = next_generation(
        evaluated,
        fitness,
        session.config,
        schedule,
        session.stage_generation_index,
        session.rng,
    )

    session.generation_index += 1
    session.stage_generation_index += 1
    record = _write_record(session, evaluated)
    _remember_genomes(session, session.population)
    _persist(session)
    return record


def apply_intent(session: Session, intent: Intent) -> None:
    """Store the intent; first intent moves exploration into customization."""
    if intent.kind == "none":
        raise SessionError("intent must be text or image")
    first = session.stage == "exploration"
    session.intent = intent
    if first:
        session.stage = "customization"
        session.stage_generation_index = 0
        _reseed_from_elites(session)
    _persist(session)


def _reseed_from_elites(session: Session) -> None:
    """Replace the worst third of non-elites with mutated elite clones.

    Widens the search when an intent first arrives while keeping the
    best-known material dominant.
    """
    elite_count = session.config.elitism_count
    if elite_count == 0:
        return
    ranked = sorted(
        session.population,
        key=lambda g: (-session.latest_ratings.get(g.id, ELO_INIT), g.id),
    )
    elites = ranked[:elite_count]
    non_elites = ranked[elite_count:]
    n_reseed = len(non_elites) // 3
    if n_reseed == 0:
        return

    schedule = stage_defaults("customization")
    probs = MutationProbs.uniform(schedule.mutation_start)
    survivors = non_elites[: len(non_elites) - n_reseed]
    reseeded = []
    for i in range(n_reseed):
        source = elites[i % len(elites)]
        child = mutate(
            source,
            probs,
            session.config.mutation_scales,
            schedule.position_mutation_multiplier,
            session.rng,
        )
        reseeded.append(child.with_id(draw_genome_id(session.rng)))
    session.population = elites + survivors + reseeded
    session.latest_ratings = {
        g.id: session.latest_ratings.get(g.id, ELO_INIT) for g in session.population
    }
    _remember_genomes(session, reseeded)


def best_genome(session: Session) -> Genome:
    if not session.history:
        raise SessionError("session has no history")
    top = session.history[-1].entries[0]
    return session.genome_by_id(top.genome_id)


def refine_feature(
    session: Session,
    gene_index: int | None = None,
    pixel: tuple[int, int] | None = None,
    directive: str = "",
) -> int:
    """Freeze every gene except the targeted one across the population.

    The target comes either from an explicit ``gene_index`` or from picking
    a ``pixel`` on the current best genome's render. Returns the resolved
    gene index.
    """
    if (gene_index is None) == (pixel is None):
        raise SessionError("provide exactly one of gene_index or pixel")
    best = best_genome(session)
    if pixel is not None:
        width, height = session.image_size
        gene_index = pick_feature(
            session.volume, best, session.camera, session.settings, pixel, width, height
        )
    if not 0 <= gene_index < session.gene_count:
        raise SessionError(f"gene index {gene_index} out of range")

    session.stage = "refinement"
    session.stage_generation_index = 0
    session.frozen_gene_indices = set(range(session.gene_count)) - {gene_index}
    session.population = [
        _apply_freeze_mask(g, session.frozen_gene_indices) for g in session.population
    ]
    for genome in session.population:
        session.genome_store[genome.id] = genome
    _remember_genomes(session, session.population)

    if directive:
        if session.intent.kind == "none":
            session.intent = Intent.from_text(directive)
        else:
            joined = f"{session.intent.text} {directive}".strip() if session.intent.text else directive
            session.intent = replace(session.intent, text=joined)
    _persist(session)
    return gene_index


def _apply_freeze_mask(genome: Genome, frozen_indices: set[int]) -> Genome:
    genes = tuple(
        replace(gene, frozen=(i in frozen_indices)) for i, gene in enumerate(genome.genes)
    )
    return Genome(id=genome.id, genes=genes)


def replace_genome(session: Session, genome: Genome) -> None:
    """Swap in a hand-edited genome for the population member with its id."""
    if len(genome.genes) != session.gene_count:
        raise SessionError(
            f"genome must have {session.gene_count} genes, got {len(genome.genes)}"
        )
    for slot, member in enumerate(session.population):
        if member.id == genome.id:
            adjusted = _apply_freeze_mask(genome, session.frozen_gene_indices)
            session.population[slot] = adjusted
            session.genome_store[genome.id] = adjusted
            session._render_cache.pop(genome.id, None)
            _remember_genomes(session, [adjusted])
            _persist(session)
            return
    raise SessionError(f"genome {genome.id!r} is not in the current population")


def gallery(session: Session, k: int) -> list[tuple[str, float, Path]]:
    """Top-k of the latest record: (genome id, rating, absolute thumbnail path)."""
    if k < 0:
        raise SessionError("k must be >= 0")
    if not session.history:
        raise SessionError("session has no completed generations")
    record = session.history[-1]
    return [
        (e.genome_id, e.rating, session.data_dir / e.thumbnail)
        for e in record.entries[:k]
    ]


# -- persistence -------------------------------------------------------------


def _intent_to_dict(intent: Intent) -> dict:
    data = {"kind": intent.kind, "text": intent.text}
    if intent.reference is not None:
        data["reference_png"] = base64.b64encode(intent.reference.to_png_bytes()).decode()
    return data


def _intent_from_dict(data: dict) -> Intent:
    reference = None
    if data.get("reference_png"):
        reference = image_from_png_bytes(base64.b64decode(data["reference_png"]))
    return Intent(kind=data["kind"], text=data.get("text"), reference=reference)


def _camera_to_dict(camera: Camera) -> dict:
    return {
        "position": list(camera.position),
        "target": list(camera.target),
        "up": list(camera.up),
        "vertical_fov": camera.vertical_fov,
        "projection": camera.projection,
    }


def _camera_from_dict(data: dict) -> Camera:
    return Camera(
        position=tuple(data["position"]),
        target=tuple(data["target"]),
        up=tuple(data["up"]),
        vertical_fov=data["vertical_fov"],
        projection=data["projection"],
    )


def _settings_to_dict(settings: RenderSettings) -> dict:
    return {
        "step_world": settings.step_world,
        "background": list(settings.background),
        "shading": settings.shading,
        "early_termination_alpha": settings.early_termination_alpha,
    }


def _settings_from_dict(data: dict) -> RenderSettings:
    return RenderSettings(
        step_world=data["step_world"],
        background=tuple(data["background"]),
        shading=data["shading"],
        early_termination_alpha=data["early_termination_alpha"],
    )


def _state_dict(session: Session, include_data_dir: bool = True) -> dict:
    if session.volume_source is None:
        raise SessionError(
            "session volume has no recorded source; pass volume_source at creation"
        )
    state = {
        "version": CHECKPOINT_VERSION,
        "id": session.id,
        "volume_source": session.volume_source,
        "config": session.config.to_dict(),
        "camera": _camera_to_dict(session.camera),
        "settings": _settings_to_dict(session.settings),
        "image_size": list(session.image_size),
        "gene_count": session.gene_count,
        "stage": session.stage,
        "intent": _intent_to_dict(session.intent),
        "generation_index": session.generation_index,
        "stage_generation_index": session.stage_generation_index,
        "frozen_gene_indices": sorted(session.frozen_gene_indices),
        "population": [g.id for g in session.population],
        "latest_ratings": session.latest_ratings,
        "history": [r.to_dict() for r in session.history],
        "genome_store": {i: genome_to_dict(g) for i, g in session.genome_store.items()},
        "rng_state": session.rng.bit_generator.state,
    }
    if include_data_dir:
        # external checkpoints need the pointer; the in-dir session.json
        # stays path-free so identical runs produce identical directories
        state["data_dir"] = str(session.data_dir)
    return state


def _atomic_write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2))
    os.replace(tmp, path)


def _persist(session: Session) -> None:
    if session.volume_source is None:
        return  # in-memory session; checkpoint() will demand a source
    _atomic_write_json(
        session.data_dir / "session.json", _state_dict(session, include_data_dir=False)
    )
    _atomic_write_json(
        session.data_dir / "history.json",
        {"records": [r.to_dict() for r in session.history]},
    )


def checkpoint(session: Session, directory: str | Path) -> Path:
    """Atomically write the full session state; returns the checkpoint path."""
    path = Path(directory) / CHECKPOINT_NAME
    _atomic_write_json(path, _state_dict(session))
    return path


def _session_from_state(state: dict, data_dir: Path) -> Session:
    if state.get("version") != CHECKPOINT_VERSION:
        raise SessionError(
            f"checkpoint version {state.get('version')!r} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    volume = _load_volume_source(state["volume_source"])
    rng = np.random.default_rng()
    rng.bit_generator.state = state["rng_state"]
    session = Session(
        session_id=state["id"],
        volume=volume,
        config=EvolutionConfig.from_dict(state["config"]),
        camera=_camera_from_dict(state["camera"]),
        settings=_settings_from_dict(state["settings"]),
        image_size=tuple(state["image_size"]),
        data_dir=data_dir,
        volume_source=state["volume_source"],
        gene_count=state["gene_count"],
        rng=rng,
    )
    session.stage = state["stage"]
    session.intent = _intent_from_dict(state["intent"])
    session.generation_index = state["generation_index"]
    session.stage_generation_index = state["stage_generation_index"]
    session.frozen_gene_indices = set(state["frozen_gene_indices"])
    session.genome_store = {
        i: genome_from_dict(g) for i, g in state["genome_store"].items()
    }
    session.population = [session.genome_store[i] for i in state["population"]]
    session.latest_ratings = state["latest_ratings"]
    session.history = [GenerationRecord.from_dict(r) for r in state["history"]]
    return session


def restore(directory: str | Path, data_dir: str | Path | None = None) -> Session:
    """Rebuild a session from a checkpoint; rng state resumes exactly."""
    path = Path(directory) / CHECKPOINT_NAME
    if not path.exists():
        raise SessionError(f"no checkpoint found at {path}")
    try:
        state = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SessionError(f"corrupt checkpoint at {path}: {exc}") from exc
    target = Path(data_dir) if data_dir is not None else Path(state["data_dir"])
    return _session_from_state(state, target)


def resume(data_dir: str | Path) -> Session:
    """Reload a persisted session from its own data directory."""
    path = Path(data_dir) / "session.json"
    if not path.exists():
        raise SessionError(f"no session found at {path}")
    try:
        state = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SessionError(f"corrupt session file at {path}: {exc}") from exc
    return _session_from_state(state, Path(data_dir))


def rollback(
    session: Session, generation_index: int, data_dir: str | Path | None = None
) -> Session:
    """Clone a past record into a fresh session that resumes from it.

    The clone starts a new append-only lineage: history up to the chosen
    record, that record's population and stage, and a deterministic rng
    reseeded from (config seed, record index). Thumbnails and genome files
    for the retained history are copied into the clone's data dir.
    """
    record = next(
        (r for r in session.history if r.generation_index == generation_index), None
    )
    if record is None:
        raise SessionError(f"no record for generation {generation_index}")

    new_id = f"{session.id}-rb{generation_index}"
    new_dir = (
        Path(data_dir)
        if data_dir is not None
        else session.data_dir.parent / new_id
    )
    rng = np.random.default_rng((session.config.rng_seed, generation_index, 1))

    clone = Session(
        session_id=new_id,
        volume=session.volume,
        config=session.config,
        camera=session.camera,
        settings=session.settings,
        image_size=session.image_size,
        data_dir=new_dir,
        volume_source=session.volume_source,
        gene_count=session.gene_count,
        rng=rng,
    )
    clone.stage = record.stage
    clone.intent = session.intent if record.stage != "exploration" else Intent.none()
    clone.generation_index = record.generation_index
    clone.stage_generation_index = 0
    clone.history = [
        r for r in session.history if r.generation_index <= generation_index
    ]
    frozen = session.frozen_gene_indices if record.stage == "refinement" else set()
    clone.frozen_gene_indices = set(frozen)
    clone.population = [
        _apply_freeze_mask(session.genome_by_id(e.genome_id), frozen)
        for e in record.entries
    ]
    clone.latest_ratings = {e.genome_id: e.rating for e in record.entries}
    for kept in clone.history:
        for entry in kept.entries:
            source_genome = session.genome_store.get(entry.genome_id)
            if source_genome is not None:
                clone.genome_store[entry.genome_id] = source_genome
    for genome in clone.population:
        clone.genome_store[genome.id] = genome

    new_dir.mkdir(parents=True, exist_ok=True)
    for kept in clone.history:
        src = session.data_dir / "renders" / str(kept.generation_index)
        dst = new_dir / "renders" / str(kept.generation_index)
        if src.is_dir() and not dst.exists():
            shutil.copytree(src, dst)
    _remember_genomes(clone, list(clone.genome_store.values()))
    _persist(clone)
    return clone
