"""Command line front door: one subcommand per workflow step.

Every subcommand accepts --seed and --judge. The mllm judge reads its
endpoint from TFEVOLVE_MLLM_URL, TFEVOLVE_MLLM_MODEL, and TFEVOLVE_MLLM_KEY.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .evaluate import (
    EvaluatorError,
    HeuristicJudge,
    Intent,
    MLLMConfig,
    MLLMJudge,
)
from .evolve import EvolutionConfig, EvolutionError
from .genome import GenomeError, bake_lut, deserialize
from .harness import (
    HarnessError,
    SweepConfig,
    budget_curve,
    pooled_rank,
    run_sweep,
    write_budget_csv,
    write_ranks_csv,
)
from .render import (
    RenderError,
    RenderSettings,
    camera_from_orbit,
    image_from_png_bytes,
    render,
)
from .session import (
    SessionError,
    apply_intent,
    create_session,
    gallery,
    refine_feature,
    resume,
    step_generation,
)
from .tournament import TournamentError, agreement_score, load_agreement_csvs, run_tournament
from .volume import (
    SYNTHETIC_KINDS,
    VolumeError,
    describe,
    load_raw,
    make_synthetic,
)

class CliError(Exception):
    pass


USER_ERRORS = (
    CliError,
    EvaluatorError,
    EvolutionError,
    GenomeError,
    HarnessError,
    RenderError,
    SessionError,
    TournamentError,
    VolumeError,
)


def parse_volume_arg(text: str):
    """A descriptor file path, or a synthetic kind like nested_spheres@32x32x32."""
    path = Path(text)
    if path.exists():
        return load_raw(path), {"kind": "raw", "descriptor_path": str(path)}
    name, _, dims_text = text.partition("@")
    if name in SYNTHETIC_KINDS:
        if dims_text:
            parts = dims_text.split("x")
            if len(parts) != 3:
                raise CliError(f"synthetic dims must look like 32x32x32, got {dims_text!r}")
            dims = tuple(int(p) for p in parts)
        else:
            dims = (64, 64, 64)
        return make_synthetic(name, dims), None
    raise CliError(
        f"volume {text!r} is neither a descriptor file nor one of {', '.join(SYNTHETIC_KINDS)}"
    )


def judge_from_args(args):
    if args.judge == "heuristic":
        return HeuristicJudge()
    config = MLLMConfig(
        url=os.environ.get("TFEVOLVE_MLLM_URL", ""),
        model=os.environ.get("TFEVOLVE_MLLM_MODEL", ""),
        api_key=os.environ.get("TFEVOLVE_MLLM_KEY", ""),
    )
    return MLLMJudge(config)


def settings_from_args(args) -> RenderSettings:
    return RenderSettings(shading=args.shading)


def print_gallery(session, k: int = 8) -> None:
    for rank, (genome_id, rating, path) in enumerate(gallery(session, k), start=1):
        print(f"{rank:2d}. {genome_id}  rating {rating:7.1f}  {path}")


def run_steps(session, judge, count: int) -> None:
    for _ in range(count):
        record = step_generation(session, judge)
        top = record.entries[0]
        print(
            f"generation {record.generation_index}: "
            f"best {top.genome_id} rating {top.rating:.1f}"
        )


def cmd_volume_info(args) -> int:
    volume, _ = parse_volume_arg(args.volume)
    print(describe(volume))
    return 0


def cmd_render(args) -> int:
    volume, _ = parse_volume_arg(args.volume)
    genome = deserialize(Path(args.genome).read_text())
    camera = camera_from_orbit(volume, args.yaw, args.pitch, args.dist)
    image = render(
        volume, bake_lut(genome), camera, settings_from_args(args), args.size, args.size
    )
    image.save(args.out)
    print(args.out)
    return 0


def cmd_explore(args) -> int:
    volume, source = parse_volume_arg(args.volume)
    config = EvolutionConfig(
        population_size=args.pop, max_generations=args.gens, rng_seed=args.seed
    )
    session = create_session(
        volume,
        config,
        data_dir=args.out,
        settings=settings_from_args(args),
        image_size=(args.size, args.size),
        gene_count=args.gene_count,
        volume_source=source,
    )
    print(f"session {session.id} at {session.data_dir}")
    run_steps(session, judge_from_args(args), args.gens)
    print_gallery(session)
    return 0


def cmd_customize(args) -> int:
    session = resume(args.session)
    if args.text:
        intent = Intent.from_text(args.text)
    else:
        intent = Intent.from_image(image_from_png_bytes(Path(args.image).read_bytes()))
    apply_intent(session, intent)
    print(f"stage {session.stage}")
    run_steps(session, judge_from_args(args), args.gens)
    print_gallery(session)
    return 0


def cmd_refine(args) -> int:
    session = resume(args.session)
    if args.pixel:
        x_text, _, y_text = args.pixel.partition(",")
        picked = refine_feature(
            session, pixel=(int(x_text), int(y_text)), directive=args.directive
        )
    else:
        picked = refine_feature(
            session, gene_index=args.gene_index, directive=args.directive
        )
    print(f"refining gene {picked}; frozen {sorted(session.frozen_gene_indices)}")
    run_steps(session, judge_from_args(args), args.gens)
    print_gallery(session)
    return 0


def cmd_tournament(args) -> int:
    volume, _ = parse_volume_arg(args.volume)
    genome_dir = Path(args.genomes)
    paths = sorted(genome_dir.glob("*.json"))
    if len(paths) < 2:
        raise CliError(f"need at least 2 genome files in {genome_dir}")
    population = [deserialize(p.read_text()) for p in paths]
    camera = camera_from_orbit(volume)
    settings = settings_from_args(args)

    def render_fn(genome):
        return render(volume, bake_lut(genome), camera, settings, args.size, args.size)

    from .evaluate import formal_aspects

    state, ranks = run_tournament(
        population,
        render_fn,
        judge_from_args(args),
        formal_aspects(),
        Intent.none(),
        trace_path=args.trace,
    )
    for genome_id, rank in sorted(ranks.items(), key=lambda kv: kv[1]):
        print(f"{rank:2d}. {genome_id}  rating {state.ratings[genome_id]:7.1f}")
    return 0


def cmd_agreement(args) -> int:
    records = load_agreement_csvs(args.machine, args.human)
    print(agreement_score(records))
    return 0


def cmd_harness(args) -> int:
    volume, _ = parse_volume_arg(args.volume)
    sweep = SweepConfig(
        population_sizes=tuple(int(p) for p in args.pops.split(",")),
        max_generations=args.gens,
        representatives_k=args.k,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        judge=args.judge,
    )
    judge = judge_from_args(args)
    result = run_sweep(
        sweep,
        volume,
        args.out,
        judge,
        settings=settings_from_args(args),
        image_size=(args.size, args.size),
        workers=args.workers,
    )
    ranks = pooled_rank(result, judge)
    write_ranks_csv(Path(args.out) / "ranks.csv", ranks)
    rows = budget_curve(result, judge)
    write_budget_csv(Path(args.out) / "budget.csv", rows)
    for label, mean in sorted(ranks.items(), key=lambda kv: kv[1]):
        print(f"{label}: mean pooled rank {mean:.2f}")
    print(f"wrote {Path(args.out) / 'ranks.csv'} and {Path(args.out) / 'budget.csv'}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    judge_config = {"kind": args.judge}
    if args.judge == "mllm":
        judge_config.update(
            url=os.environ.get("TFEVOLVE_MLLM_URL", ""),
            model=os.environ.get("TFEVOLVE_MLLM_MODEL", ""),
            api_key=os.environ.get("TFEVOLVE_MLLM_KEY", ""),
        )
    data_dir = args.data or os.environ.get("TFEVOLVE_DATA_DIR", "tfevolve-data")
    serve(args.bind, data_dir, judge_config=judge_config, static_dir=args.static)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="rng seed")
    common.add_argument(
        "--judge", choices=("heuristic", "mllm"), default="heuristic", help="judge backend"
    )

    render_opts = argparse.ArgumentParser(add_help=False)
    render_opts.add_argument("--size", type=int, default=128, help="square image size")
    render_opts.add_argument(
        "--shading", choices=("lambert", "none"), default="lambert"
    )

    parser = argparse.ArgumentParser(prog="tfevolve")
    sub = parser.add_subparsers(dest="command", required=True)

    volume_parser = sub.add_parser("volume", help="volume inspection")
    volume_sub = volume_parser.add_subparsers(dest="volume_command", required=True)
    info = volume_sub.add_parser("info", parents=[common], help="print volume stats")
    info.add_argument("--volume", required=True)
    info.set_defaults(func=cmd_volume_info)

    rend = sub.add_parser(
        "render", parents=[common, render_opts], help="render one genome to a PNG"
    )
    rend.add_argument("--volume", required=True)
    rend.add_argument("--genome", required=True, help="genome JSON file")
    rend.add_argument("--out", required=True, help="output PNG path")
    rend.add_argument("--yaw", type=float, default=45.0)
    rend.add_argument("--pitch", type=float, default=30.0)
    rend.add_argument("--dist", type=float, default=1.6)
    rend.set_defaults(func=cmd_render)

    explore = sub.add_parser(
        "explore", parents=[common, render_opts], help="run a fresh exploration session"
    )
    explore.add_argument("--volume", required=True)
    explore.add_argument("--out", required=True, help="session directory")
    explore.add_argument("--pop", type=int, default=25)
    explore.add_argument("--gens", type=int, default=5)
    explore.add_argument("--gene-count", type=int, default=5)
    explore.set_defaults(func=cmd_explore)

    customize = sub.add_parser(
        "customize", parents=[common], help="apply an intent to a session and evolve"
    )
    customize.add_argument("--session", required=True, help="session directory")
    group = customize.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", help="natural language intent")
    group.add_argument("--image", help="reference image PNG")
    customize.add_argument("--gens", type=int, default=3)
    customize.set_defaults(func=cmd_customize)

    refine = sub.add_parser(
        "refine", parents=[common], help="freeze all but one gene and evolve"
    )
    refine.add_argument("--session", required=True, help="session directory")
    target = refine.add_mutually_exclusive_group(required=True)
    target.add_argument("--gene-index", type=int)
    target.add_argument("--pixel", help="x,y pick on the best render")
    refine.add_argument("--directive", default="")
    refine.add_argument("--gens", type=int, default=3)
    refine.set_defaults(func=cmd_refine)

    tourney = sub.add_parser(
        "tournament",
        parents=[common, render_opts],
        help="one tournament over a directory of genome JSON files",
    )
    tourney.add_argument("--volume", required=True)
    tourney.add_argument("--genomes", required=True, help="directory of genome JSON files")
    tourney.add_argument("--trace", default=None, help="write match trace JSONL here")
    tourney.set_defaults(func=cmd_tournament)

    agree = sub.add_parser(
        "agreement", parents=[common], help="agreement score between two verdict CSVs"
    )
    agree.add_argument("--machine", required=True)
    agree.add_argument("--human", required=True)
    agree.set_defaults(func=cmd_agreement)

    harness = sub.add_parser(
        "harness", parents=[common, render_opts], help="population-size sweep"
    )
    harness.add_argument("--volume", required=True)
    harness.add_argument("--pops", default="10,25,50", help="comma-separated sizes")
    harness.add_argument("--gens", type=int, default=10)
    harness.add_argument("--seeds", default="0", help="comma-separated seeds")
    harness.add_argument("--k", type=int, default=10, help="representatives per run")
    harness.add_argument("--out", required=True)
    harness.add_argument("--workers", type=int, default=1)
    harness.set_defaults(func=cmd_harness)

    serve_parser = sub.add_parser("serve", parents=[common], help="run the HTTP API")
    serve_parser.add_argument("--bind", default="127.0.0.1:8765")
    serve_parser.add_argument("--data", default=None, help="data directory")
    serve_parser.add_argument("--static", default=None, help="frontend build to mount")
    serve_parser.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
