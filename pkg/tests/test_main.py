import json

import pytest

from conftest import CATALOG_FILES, SAMPLE_DIR, write_lines
from main import run
from pipeline import read_jsonl

CATALOG_ARGS = ["--catalog"] + [str(SAMPLE_DIR / name) for name in CATALOG_FILES]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SGF_STORE_DIR", raising=False)
    return tmp_path


@pytest.fixture
def taxonomy_file(workdir):
    path = workdir / "taxonomy.json"
    assert run(["taxonomy", "build", "--edges", str(SAMPLE_DIR / "object_edges.tsv"),
                "--vocab", str(SAMPLE_DIR / "vocabulary.tsv"), "--out", str(path)]) == 0
    return path


def generate(taxonomy_file, out, seed="5", *extra):
    return run(["generate", "--preset", "paper-3d", "--seed", seed, "--count", "20", "--out", str(out),
                "--taxonomy", str(taxonomy_file), *CATALOG_ARGS, "--store-dir", "structures", *extra])


def test_usage_errors(workdir):
    assert run([]) == 1
    assert run(["transmogrify"]) == 1
    assert run(["enumerate", "--complexity", "0-2"]) == 1
    assert run(["--help"]) == 0


def test_taxonomy_validate(taxonomy_file, capsys):
    assert run(["taxonomy", "validate", "--taxonomy", str(taxonomy_file)]) == 0
    assert "object\t38" in capsys.readouterr().out


def test_catalog_validate_with_scope(taxonomy_file, workdir, capsys):
    scope = workdir / "scope.json"
    scope.write_text(json.dumps({"include_subtrees": ["object/vehicle#n.01"]}), encoding="utf-8")
    assert run(["catalog", "validate", "--taxonomy", str(taxonomy_file), *CATALOG_ARGS, "--scope", str(scope)]) == 0
    out = capsys.readouterr().out
    assert "object\t4" in out
    assert "attribute\t25" in out


def test_enumerate_writes_store(workdir, capsys):
    assert run(["enumerate", "--complexity", "1-3", "--store-dir", "structures"]) == 0
    assert capsys.readouterr().out.splitlines() == ["1\t1", "2\t2", "3\t4"]
    assert sorted(p.name for p in (workdir / "structures").iterdir()) == [
        "structures_c01.jsonl", "structures_c02.jsonl", "structures_c03.jsonl"]


def test_store_dir_from_environment(workdir, monkeypatch):
    monkeypatch.setenv("SGF_STORE_DIR", str(workdir / "env_store"))
    assert run(["enumerate", "--complexity", "2"]) == 0
    assert (workdir / "env_store" / "structures_c02.jsonl").exists()


def test_generate_is_reproducible(taxonomy_file, workdir):
    assert generate(taxonomy_file, workdir / "a.jsonl") == 0
    assert generate(taxonomy_file, workdir / "b.jsonl") == 0
    assert (workdir / "a.jsonl").read_bytes() == (workdir / "b.jsonl").read_bytes()
    records = read_jsonl(workdir / "a.jsonl")
    assert len(records) == 20
    assert all(1 <= r.complexity <= 3 for r in records)
    assert generate(taxonomy_file, workdir / "c.jsonl", "6") == 0
    assert (workdir / "c.jsonl").read_bytes() != (workdir / "a.jsonl").read_bytes()


def test_generate_from_config_file(taxonomy_file, workdir):
    cfg = workdir / "gen.json"
    cfg.write_text(json.dumps({"master_seed": 1, "count": 5, "complexity_range": [2, 4],
                               "scene_attr_range": [1, 2], "output_path": "from_config.jsonl"}), encoding="utf-8")
    assert run(["generate", "--config", str(cfg), "--seed", "9", "--taxonomy", str(taxonomy_file),
                *CATALOG_ARGS, "--store-dir", "structures"]) == 0
    records = read_jsonl(workdir / "from_config.jsonl")
    assert [r.seed["master_seed"] for r in records] == [9] * 5
    assert all(1 <= len(r.scene_attributes) <= 2 for r in records)


def test_config_file_without_seed_uses_command_line(taxonomy_file, workdir):
    cfg = workdir / "gen.json"
    cfg.write_text(json.dumps({"preset": "paper-3d", "count": 6}), encoding="utf-8")
    assert run(["generate", "--config", str(cfg), "--seed", "4", "--out", "seedless.jsonl",
                "--taxonomy", str(taxonomy_file), *CATALOG_ARGS, "--store-dir", "structures"]) == 0
    records = read_jsonl(workdir / "seedless.jsonl")
    assert len(records) == 6
    assert {r.seed["master_seed"] for r in records} == {4}


def paper_image(taxonomy_file, out, workers):
    return run(["generate", "--preset", "paper-image", "--seed", "7", "--count", "500", "--workers", workers,
                "--out", str(out), "--taxonomy", str(taxonomy_file), *CATALOG_ARGS, "--store-dir", "structures"])


def test_paper_image_output_is_independent_of_workers(taxonomy_file, workdir):
    assert paper_image(taxonomy_file, workdir / "one.jsonl", "1") == 0
    assert paper_image(taxonomy_file, workdir / "eight.jsonl", "8") == 0
    assert (workdir / "one.jsonl").read_bytes() == (workdir / "eight.jsonl").read_bytes()
    records = read_jsonl(workdir / "one.jsonl")
    assert len(records) == 500
    assert all(0 <= len(r.scene_attributes) <= 5 for r in records)
    # 500 uniform draws over ten complexities leave none of them empty
    assert sorted({r.complexity for r in records}) == list(range(3, 13))


def test_paper_3d_preset_at_full_size(taxonomy_file, workdir):
    assert run(["generate", "--preset", "paper-3d", "--seed", "7", "--out", "threed.jsonl",
                "--taxonomy", str(taxonomy_file), *CATALOG_ARGS, "--store-dir", "structures"]) == 0
    records = read_jsonl(workdir / "threed.jsonl")
    assert len(records) == 1000
    assert sorted({r.complexity for r in records}) == [1, 2, 3]
    assert all(len(r.scene_attributes) <= 2 for r in records)


def test_hard_concepts_preset_needs_focus(taxonomy_file, workdir):
    assert run(["generate", "--preset", "paper-hard-concepts", "--seed", "1", "--out", "x.jsonl",
                "--taxonomy", str(taxonomy_file), *CATALOG_ARGS]) == 1


def test_bad_seed_graph_is_a_data_error(taxonomy_file, workdir):
    seed = workdir / "seed.json"
    seed.write_text("{\"objects\": [", encoding="utf-8")
    assert generate(taxonomy_file, workdir / "a.jsonl", "5", "--seed-graph", str(seed)) == 2


def test_missing_dataset_is_a_data_error(workdir):
    assert run(["filter", "--dataset", "nowhere.jsonl", "--property", "clip", "--min", "0.5",
                "--out", "kept.jsonl"]) == 2


def test_attach_filter_and_analyze(taxonomy_file, workdir):
    dataset = workdir / "captions.jsonl"
    assert generate(taxonomy_file, dataset) == 0
    records = read_jsonl(dataset)

    write_lines(workdir / "props.csv", ["caption_id,property,value"] +
                [f"{r.caption_id},clip,{i}" for i, r in enumerate(records)])
    assert run(["attach", "--dataset", str(dataset), "--scores", "props.csv", "--out", "scored.jsonl"]) == 0
    assert run(["filter", "--dataset", "scored.jsonl", "--property", "clip", "--percentile", "0", "50",
                "--out", "kept.jsonl"]) == 0
    assert [r.properties["clip"] for r in read_jsonl(workdir / "kept.jsonl")] == list(range(10))

    score_rows = [f"{r.caption_id},{model},vqa,{0.9 if model == 'ref' else i / 20}"
                  for i, r in enumerate(records) for model in ("ref", "ours")]
    write_lines(workdir / "scores.csv", ["caption_id,model_id,metric_id,value"] + score_rows)
    assert run(["analyze", "gaps", "--dataset", "scored.jsonl", "--scores", "scores.csv", "--model-a", "ours",
                "--model-b", "ref", "--metric", "vqa", "--k", "3", "--min-support", "1", "--out", "gaps.csv"]) == 0
    lines = (workdir / "gaps.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "concept_id,mean_a,mean_b,gap,n_a,n_b"
    assert len(lines) == 4

    assert run(["analyze", "buckets", "--dataset", "scored.jsonl", "--scores", "scores.csv", "--model", "ours",
                "--metric", "vqa", "--property", "clip", "--buckets", "4", "--out", "buckets.csv"]) == 0
    assert len((workdir / "buckets.csv").read_text(encoding="utf-8").splitlines()) == 5

    assert run(["select", "top", "--scores", "scores.csv", "--model", "ours", "--metric", "vqa",
                "--out", "top.csv"]) == 0
    top = (workdir / "top.csv").read_text(encoding="utf-8").splitlines()
    assert len(top) == 1 + 5
    assert top[1].startswith(records[19].caption_id)

    assert run(["select", "random", "--scores", "scores.csv", "--candidates", "x.csv", "--seed", "1",
                "--out", "r.csv"]) == 1
