"""End-to-end checks of the command-line surface: each subcommand on a
tiny workload, config/flag merging, and the documented exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from partfield import cli, codebook, diffusion, field, geometry


def run(*argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_writes_dataset_and_manifest(tmp_path):
    out = tmp_path / "data"
    rc = run("gen-data", "--categories", "bottle_with_cap,box_with_lid",
             "--instances", 2, "--points", 128, "--out", out)
    assert rc == 0
    clouds = geometry.load_dataset(out / "dataset.jsonl")
    assert len(clouds) == 4
    assert {c.category for c in clouds} == {"bottle_with_cap", "box_with_lid"}
    assert all(c.n_points == 128 for c in clouds)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "gen-data"
    assert "dataset.jsonl" in manifest["files"]


def test_gen_data_deterministic_bytes(tmp_path):
    for name in ("a", "b"):
        rc = run("gen-data", "--categories", "bottle_with_cap",
                 "--instances", 3, "--points", 96, "--seed", 7,
                 "--out", tmp_path / name)
        assert rc == 0
    blob_a = (tmp_path / "a" / "dataset.jsonl").read_bytes()
    blob_b = (tmp_path / "b" / "dataset.jsonl").read_bytes()
    assert blob_a == blob_b


def test_gen_data_seed_changes_output(tmp_path):
    run("gen-data", "--categories", "bottle_with_cap", "--instances", 1,
        "--points", 96, "--seed", 0, "--out", tmp_path / "s0")
    run("gen-data", "--categories", "bottle_with_cap", "--instances", 1,
        "--points", 96, "--seed", 1, "--out", tmp_path / "s1")
    assert (tmp_path / "s0" / "dataset.jsonl").read_bytes() != \
        (tmp_path / "s1" / "dataset.jsonl").read_bytes()


def test_gen_data_unknown_category_is_usage_error(tmp_path):
    rc = run("gen-data", "--categories", "flying_saucer",
             "--out", tmp_path / "x")
    assert rc == cli.EXIT_USAGE


def test_gen_data_missing_categories_is_usage_error(tmp_path):
    rc = run("gen-data", "--out", tmp_path / "x")
    assert rc == cli.EXIT_USAGE


# ---------------------------------------------------------------------------
# config handling


def test_config_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"instances": 1, "bogus_knob": 5}))
    rc = run("gen-data", "--categories", "bottle_with_cap",
             "--config", cfg, "--out", tmp_path / "x")
    assert rc == cli.EXIT_USAGE


def test_config_invalid_json_is_data_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    rc = run("gen-data", "--categories", "bottle_with_cap",
             "--config", cfg, "--out", tmp_path / "x")
    assert rc == cli.EXIT_DATA


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"instances": 5, "points": 96}))
    rc = run("gen-data", "--categories", "bottle_with_cap", "--config", cfg,
             "--instances", 2, "--out", tmp_path / "x")
    assert rc == 0
    clouds = geometry.load_dataset(tmp_path / "x" / "dataset.jsonl")
    # flag wins for instances, config wins for points
    assert len(clouds) == 2
    assert clouds[0].n_points == 96


# ---------------------------------------------------------------------------
# train-field


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = run("gen-data", "--categories", "bottle_with_cap,pot_with_handle",
             "--instances", 2, "--points", 160, "--out", out)
    assert rc == 0
    return out / "dataset.jsonl"


FIELD_CFG = {"steps": 25, "points_per_part": 8, "instances_per_batch": 2,
             "hidden": 16, "depth": 2, "n_dim": 8, "k_neighbors": 8}


@pytest.fixture(scope="module")
def tiny_field(tmp_path_factory, tiny_data):
    out = tmp_path_factory.mktemp("field")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps(FIELD_CFG))
    rc = run("train-field", "--data", tiny_data, "--config", cfg, "--out", out)
    assert rc == 0
    return out


def test_train_field_outputs(tiny_field):
    params = field.load_field_checkpoint(tiny_field / "field.ckpt")
    assert params.hidden == 16 and params.depth == 2 and params.n == 8
    books = codebook.load_codebooks(tiny_field / "codebooks.jsonl")
    assert set(books) == set(geometry.CATEGORIES)
    assert books["bottle_with_cap"].dim == 8
    log = (tiny_field / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,L_geo,L_sem,total"
    assert len(log) == 1 + FIELD_CFG["steps"]
    manifest = json.loads((tiny_field / "manifest.json").read_text())
    assert set(manifest["files"]) == {"field.ckpt", "codebooks.jsonl",
                                      "train_log.csv"}


def test_train_field_ablation_blanks_sem_column(tiny_data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**FIELD_CFG, "steps": 5, "enable_sem": 0}))
    rc = run("train-field", "--data", tiny_data, "--config", cfg,
             "--out", tmp_path / "f")
    assert rc == 0
    rows = (tmp_path / "f" / "train_log.csv").read_text().splitlines()[1:]
    assert all(row.split(",")[2] == "" for row in rows)
    assert all(row.split(",")[1] != "" for row in rows)


def test_train_field_missing_data_is_data_error(tmp_path):
    rc = run("train-field", "--data", tmp_path / "nope.jsonl",
             "--out", tmp_path / "f")
    assert rc == cli.EXIT_DATA


# ---------------------------------------------------------------------------
# train-policy and rollout


POLICY_CFG = {"steps": 30, "batch_size": 4, "cond_dim": 8, "hidden": 16,
              "schedule_steps": 4}


@pytest.fixture(scope="module")
def demo_spec(tmp_path_factory):
    path = tmp_path_factory.mktemp("demos") / "demos.json"
    path.write_text(json.dumps(
        {"tasks": [["bottle_with_cap", "cap"]], "demos_per_task": 2}))
    return path


@pytest.fixture(scope="module")
def tiny_policy(tmp_path_factory, demo_spec, tiny_field):
    out = tmp_path_factory.mktemp("policy")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps(POLICY_CFG))
    rc = run("train-policy", "--demos", demo_spec, "--config", cfg,
             "--field-ckpt", tiny_field / "field.ckpt", "--out", out)
    assert rc == 0
    return out


def test_train_policy_outputs(tiny_policy):
    params = diffusion.load_policy_checkpoint(tiny_policy / "policy.ckpt")
    assert params.horizon == diffusion.DEFAULT_HORIZON
    assert params.action_dim == 4
    log = (tiny_policy / "policy_log.csv").read_text().splitlines()
    assert log[0] == "step,mse"
    assert len(log) == 1 + POLICY_CFG["steps"]


def test_train_policy_empty_tasks_is_usage_error(tmp_path, tiny_field):
    spec = tmp_path / "demos.json"
    spec.write_text(json.dumps({"tasks": []}))
    rc = run("train-policy", "--demos", spec,
             "--field-ckpt", tiny_field / "field.ckpt", "--out", tmp_path / "p")
    assert rc == cli.EXIT_USAGE


def test_rollout_writes_split_table(tmp_path, demo_spec, tiny_policy,
                                    tiny_field):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**POLICY_CFG, "episodes_per_split": 1,
                               "splits": "OS,OI"}))
    out = tmp_path / "rollout.csv"
    rc = run("rollout", "--policy", tiny_policy / "policy.ckpt",
             "--field-ckpt", tiny_field / "field.ckpt",
             "--demos", demo_spec, "--config", cfg, "--out", out)
    assert rc == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "split,success_rate,stderr,n"
    assert sorted(r.split(",")[0] for r in rows[1:]) == ["OI", "OS"]


# ---------------------------------------------------------------------------
# evaluation commands


def test_eval_seg_writes_table(tmp_path, tiny_data, tiny_field):
    out = tmp_path / "seg.csv"
    rc = run("eval-seg", "--data", tiny_data,
             "--field-ckpt", tiny_field / "field.ckpt", "--out", out)
    assert rc == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "category,seed,miou_field,miou_raw"
    assert len(rows) == 5
    for row in rows[1:]:
        parts = row.split(",")
        assert 0.0 <= float(parts[2]) <= 1.0
        assert 0.0 <= float(parts[3]) <= 1.0


def test_eval_corr_writes_table(tmp_path, tiny_data, tiny_field):
    out = tmp_path / "corr.csv"
    rc = run("eval-corr", "--data", tiny_data,
             "--field-ckpt", tiny_field / "field.ckpt", "--out", out)
    assert rc == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "category,seed_a,seed_b,part_accuracy"
    assert len(rows) == 3  # one pair per category


def test_eval_corr_single_cloud_is_usage_error(tmp_path, tiny_field):
    run("gen-data", "--categories", "bottle_with_cap", "--instances", 1,
        "--points", 96, "--out", tmp_path / "one")
    rc = run("eval-corr", "--data", tmp_path / "one" / "dataset.jsonl",
             "--field-ckpt", tiny_field / "field.ckpt",
             "--out", tmp_path / "corr.csv")
    assert rc == cli.EXIT_USAGE


# ---------------------------------------------------------------------------
# export-ply


def test_export_ply_pca_colors(tmp_path, tiny_field):
    out = tmp_path / "cloud.ply"
    rc = run("export-ply", "--field-ckpt", tiny_field / "field.ckpt",
             "--category", "box_with_lid", "--instance-seed", 3, "--out", out,
             "--config", json_file(tmp_path, {"points": 128}))
    assert rc == 0
    cloud = geometry.load_cloud_ply(out)
    assert cloud.n_points == 128
    assert cloud.category == "box_with_lid"


def test_export_ply_query_heatmap(tmp_path, tiny_field):
    out = tmp_path / "heat.ply"
    rc = run("export-ply", "--field-ckpt", tiny_field / "field.ckpt",
             "--category", "pot_with_handle", "--instance-seed", 1,
             "--query", "handle", "--out", out,
             "--config", json_file(tmp_path, {"points": 128}))
    assert rc == 0
    assert out.read_bytes().startswith(b"ply\n")


def test_export_ply_unknown_query_is_data_error(tmp_path, tiny_field):
    rc = run("export-ply", "--field-ckpt", tiny_field / "field.ckpt",
             "--category", "pot_with_handle", "--instance-seed", 1,
             "--query", "wing", "--out", tmp_path / "x.ply",
             "--config", json_file(tmp_path, {"points": 128}))
    assert rc == cli.EXIT_DATA


def json_file(tmp_path, payload):
    path = tmp_path / "extra_cfg.json"
    path.write_text(json.dumps(payload))
    return path
