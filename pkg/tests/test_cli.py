import json
from pathlib import Path

import pytest

from tfevolve.cli import CliError, main, parse_volume_arg
from tfevolve.genome import random_genome, serialize


def run(args):
    return main([str(a) for a in args])


def tree_of(root: Path) -> dict:
    files = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            files[str(path.relative_to(root))] = path.read_bytes()
    return files


def test_parse_volume_arg_variants(tmp_path):
    volume, source = parse_volume_arg("nested_spheres@8x8x8")
    assert volume.dims == (8, 8, 8)
    assert source is None
    volume, _ = parse_volume_arg("ramp")
    assert volume.dims == (64, 64, 64)
    with pytest.raises(CliError):
        parse_volume_arg("not_a_kind")
    with pytest.raises(CliError):
        parse_volume_arg("ramp@8x8")


def test_volume_info_prints_stats(capsys):
    assert run(["volume", "info", "--volume", "nested_spheres@8x8x8"]) == 0
    out = capsys.readouterr().out
    assert "8 x 8 x 8" in out or "(8, 8, 8)" in out or "8x8x8" in out


def test_render_is_deterministic(tmp_path):
    genome_path = tmp_path / "g.json"
    genome_path.write_text(serialize(random_genome(3, 5)))
    for name in ("a.png", "b.png"):
        code = run(
            [
                "render",
                "--volume", "nested_spheres@8x8x8",
                "--genome", genome_path,
                "--out", tmp_path / name,
                "--size", 24,
                "--shading", "none",
            ]
        )
        assert code == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def explore_args(out, seed=7):
    return [
        "explore",
        "--volume", "nested_spheres@10x10x10",
        "--out", out,
        "--pop", 4,
        "--gens", 2,
        "--gene-count", 2,
        "--size", 16,
        "--shading", "none",
        "--seed", seed,
    ]


def test_explore_twice_produces_identical_directories(tmp_path):
    assert run(explore_args(tmp_path / "one")) == 0
    assert run(explore_args(tmp_path / "two")) == 0
    one, two = tree_of(tmp_path / "one"), tree_of(tmp_path / "two")
    assert one.keys() == two.keys()
    mismatched = [name for name in one if one[name] != two[name]]
    assert mismatched == []


def test_customize_then_refine_flow(tmp_path, capsys):
    session_dir = tmp_path / "s"
    assert run(explore_args(session_dir)) == 0
    assert (
        run(
            [
                "customize",
                "--session", session_dir,
                "--text", "make the shell glow",
                "--gens", 1,
            ]
        )
        == 0
    )
    out = capsys.readouterr().out
    assert "stage customization" in out

    assert (
        run(
            [
                "refine",
                "--session", session_dir,
                "--gene-index", 1,
                "--directive", "sharper",
                "--gens", 1,
            ]
        )
        == 0
    )
    out = capsys.readouterr().out
    assert "refining gene 1" in out
    state = json.loads((session_dir / "session.json").read_text())
    assert state["stage"] == "refinement"
    assert state["frozen_gene_indices"] == [0]


def test_tournament_over_genome_directory(tmp_path, capsys):
    genome_dir = tmp_path / "genomes"
    genome_dir.mkdir()
    for i in range(4):
        genome = random_genome(2, 20 + i, genome_id=f"cand{i}")
        (genome_dir / f"{genome.id}.json").write_text(serialize(genome))
    code = run(
        [
            "tournament",
            "--volume", "nested_spheres@10x10x10",
            "--genomes", genome_dir,
            "--size", 16,
            "--shading", "none",
            "--trace", tmp_path / "trace.jsonl",
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    assert lines[0].lstrip().startswith("1.")
    assert (tmp_path / "trace.jsonl").exists()


def test_agreement_identical_files_print_one(tmp_path, capsys):
    csv_text = "pair_id,p\nm1,1\nm2,0\nm3,1\n"
    machine = tmp_path / "m.csv"
    machine.write_text(csv_text)
    human = tmp_path / "h.csv"
    human.write_text(csv_text.replace(",p", ",q"))
    assert run(["agreement", "--machine", machine, "--human", human]) == 0
    assert capsys.readouterr().out.strip() == "1.0"


def test_harness_writes_csvs(tmp_path):
    code = run(
        [
            "harness",
            "--volume", "nested_spheres@10x10x10",
            "--pops", "4,6",
            "--gens", 1,
            "--seeds", "1",
            "--k", 2,
            "--out", tmp_path / "sweep",
            "--size", 16,
            "--shading", "none",
        ]
    )
    assert code == 0
    assert (tmp_path / "sweep" / "ranks.csv").exists()
    assert (tmp_path / "sweep" / "budget.csv").exists()
    assert (tmp_path / "sweep" / "pop4-seed1").is_dir()
    assert (tmp_path / "sweep" / "pop6-seed1").is_dir()


def test_errors_exit_nonzero_with_message(tmp_path, capsys):
    assert run(["volume", "info", "--volume", "bogus_kind"]) == 1
    assert "error:" in capsys.readouterr().err
    assert run(["customize", "--session", tmp_path / "ghost", "--text", "x"]) == 1
    assert "error:" in capsys.readouterr().err


def test_mllm_judge_without_env_fails_cleanly(tmp_path, capsys, monkeypatch):
    for var in ("TFEVOLVE_MLLM_URL", "TFEVOLVE_MLLM_MODEL", "TFEVOLVE_MLLM_KEY"):
        monkeypatch.delenv(var, raising=False)
    code = run(explore_args(tmp_path / "s") + ["--judge", "mllm"])
    assert code == 1
    assert "error:" in capsys.readouterr().err
