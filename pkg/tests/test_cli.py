import hashlib
import json
import os

import numpy as np
import pytest

from hcmgnn.cli import main
from hcmgnn.evaluation import load_embeddings
from hcmgnn.graph import GENE, MICROBE, DISEASE, derive_positive_triplets, load_edges

SMALL_MODEL = {"proj_dim": 4, "heads": 2, "fusion_dim": 5, "mlp_hidden": 6}


def write_config(tmp_path, out_name="run", **overrides):
    doc = {
        "seed": 5,
        "out": str(tmp_path / out_name),
        "synthetic": {"n_genes": 20, "n_microbes": 16, "n_diseases": 16,
                      "latent_dim": 4, "edge_density": 0.2, "rng_seed": 3},
        "model": SMALL_MODEL,
        "train": {"max_epochs": 3, "patience": 50},
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path), doc["out"]


def test_synth_writes_files_and_manifest(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["synth", "--config", cfg]) == 0
    data = os.path.join(out, "data")
    names = sorted(os.listdir(data))
    assert "manifest.json" in names
    assert len([n for n in names if n.startswith("edges_")]) == 3
    assert len([n for n in names if n.startswith("features_")]) == 3

    manifest = json.load(open(os.path.join(data, "manifest.json")))
    g = load_edges(os.path.join(data, "edges_gene_microbe.tsv"),
                   os.path.join(data, "edges_gene_disease.tsv"),
                   os.path.join(data, "edges_microbe_disease.tsv"))
    assert manifest["triangles"] == len(derive_positive_triplets(g))
    assert abs(manifest["realized_density"] - 0.2) <= 0.02


def test_synth_same_seed_identical_manifest(tmp_path):
    cfg1, out1 = write_config(tmp_path, out_name="a")
    main(["synth", "--config", cfg1])
    cfg2, out2 = write_config(tmp_path, out_name="b")
    main(["synth", "--config", cfg2])

    def digest(out):
        return hashlib.sha256(
            open(os.path.join(out, "data", "manifest.json"), "rb").read()).hexdigest()

    assert digest(out1) == digest(out2)


def test_cv_emits_five_folds_plus_mean_and_reruns_identically(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["cv", "--config", cfg]) == 0
    path = os.path.join(out, "metrics", "cv.json")
    first = open(path, "rb").read()
    doc = json.loads(first)
    assert len(doc["folds"]) == 5
    assert doc["mean"]["fold"] == "mean"
    for rec in doc["folds"]:
        for key in ("hit1", "hit3", "hit5", "ndcg1", "ndcg3", "ndcg5", "mrr",
                    "epochs", "best_epoch"):
            assert key in rec
    for k in range(5):
        assert os.path.exists(os.path.join(out, "checkpoints", f"fold{k}.json"))

    assert main(["cv", "--config", cfg]) == 0
    assert open(path, "rb").read() == first


def test_cv_threads_env_does_not_change_results(tmp_path):
    cfg, out = write_config(tmp_path, out_name="serial")
    main(["cv", "--config", cfg])
    serial = open(os.path.join(out, "metrics", "cv.json"), "rb").read()
    cfg2, out2 = write_config(tmp_path, out_name="parallel")
    os.environ["HCMGNN_THREADS"] = "3"
    try:
        main(["cv", "--config", cfg2])
    finally:
        del os.environ["HCMGNN_THREADS"]
    parallel = open(os.path.join(out2, "metrics", "cv.json"), "rb").read()
    assert serial == parallel


def test_test_command_outputs(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["test", "--config", cfg]) == 0
    doc = json.load(open(os.path.join(out, "metrics", "test.json")))
    assert set(doc["metrics"]) == {"hit1", "hit3", "hit5",
                                   "ndcg1", "ndcg3", "ndcg5", "mrr"}
    assert -1.0 <= doc["silhouette"] <= 1.0
    n_test = len(doc["ranks"])
    assert n_test > 0
    assert os.path.exists(os.path.join(out, "checkpoints", "test.json"))
    ids, labels, vecs = load_embeddings(os.path.join(out, "exports",
                                                     "test_embeddings.tsv"))
    assert len(ids) == n_test * 31
    assert vecs.shape[1] == 3 * SMALL_MODEL["heads"] * SMALL_MODEL["proj_dim"]
    assert labels.sum() == n_test


def test_ablate_emits_seven_rows_sharing_split(tmp_path):
    cfg, out = write_config(tmp_path, train={"max_epochs": 2, "patience": 50})
    assert main(["ablate", "--config", cfg]) == 0
    doc = json.load(open(os.path.join(out, "metrics", "ablation.json")))
    rows = doc["rows"]
    assert [r["variant"] for r in rows] == ["full", "woMP-i", "woMP-ii",
                                            "woMP-iii", "woTM", "woAF", "woBF"]
    assert len({r["split_hash"] for r in rows}) == 1
    assert all(r["error"] is None for r in rows)
    assert all("mrr" in r for r in rows)


def test_stratify_last_stratum_matches_global_hit1(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["test", "--config", cfg])
    assert main(["stratify", "--config", cfg]) == 0
    doc = json.load(open(os.path.join(out, "metrics", "test.json")))
    lines = open(os.path.join(out, "metrics", "strata.tsv")).read().strip().split("\n")
    rows = [line.split("\t") for line in lines]
    assert len(rows) == 12
    counts = [int(r[1]) for r in rows]
    assert counts == sorted(counts)
    assert counts[-1] == len(doc["ranks"])
    assert float(rows[-1][2]) == pytest.approx(doc["metrics"]["hit1"])


def test_stratify_requires_checkpoint(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["stratify", "--config", cfg]) == 1


def test_instances_dump(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["instances", "--config", cfg]) == 0
    lines = open(os.path.join(out, "exports", "instances.tsv")).read().strip().split("\n")
    names = {line.split("\t")[0] for line in lines}
    assert names == {"G-M-D", "G-D-M", "D-M-G", "D-G-M", "M-D-G", "M-G-D"}


def test_variant_and_seed_overrides(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["cv", "--config", cfg, "--variant", "woAF", "--seed", "9"]) == 0
    run = json.load(open(os.path.join(out, "run.json")))
    assert run["model"]["variant"] == "woAF"
    assert run["seed"] == 9


def test_config_must_pick_exactly_one_source(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"seed": 1, "out": str(tmp_path / "o"),
                                "model": {}, "train": {}}), encoding="utf-8")
    assert main(["cv", "--config", str(path)]) == 1


def test_run_config_is_written_without_timestamps(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["synth", "--config", cfg])
    run1 = open(os.path.join(out, "run.json"), "rb").read()
    main(["synth", "--config", cfg])
    assert open(os.path.join(out, "run.json"), "rb").read() == run1
