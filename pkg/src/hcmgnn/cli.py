"""Command-line entry point: synth / cv / test / ablate / stratify / instances.

One JSON config drives every command; a single top-level seed fans out to
all randomized stages through sha256, so rerunning a command reproduces
its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .evaluation import (default_thresholds, export_embeddings, silhouette,
                         stratify_by_degree)
from .graph import (DISEASE, GENE, MICROBE, HetGraph, LabeledTriplet, SplitPlan,
                    derive_positive_triplets, load_edges, make_split)
from .metapath import causal_metapaths, dump_instances
from .model import (VARIANTS, ModelCache, ModelConfig, ModelParams, forward)
from .seeding import derive_seed
from .synthetic import generate_synthetic
from .training import TrainConfig, run_cv, run_test, train_for_test

_FEATURE_KEYS = {"gene": GENE, "microbe": MICROBE, "disease": DISEASE}


@dataclass
class RunConfig:
    seed: int
    out: str
    model: ModelConfig
    train: TrainConfig
    synthetic: dict | None = None
    dataset: dict | None = None
    split: dict | None = None
    split_file: str | None = None

    def resolved(self) -> dict:
        doc = {"seed": self.seed, "out": self.out,
               "model": asdict(self.model), "train": asdict(self.train),
               "split": self.split or {"test_fraction": 0.1, "folds": 5}}
        if self.synthetic is not None:
            doc["synthetic"] = self.synthetic
        if self.dataset is not None:
            doc["dataset"] = self.dataset
        if self.split_file:
            doc["split_file"] = self.split_file
        return doc


def load_config(path, seed_override=None, out_override=None,
                variant_override=None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if ("synthetic" in doc) == ("dataset" in doc):
        raise ValueError("config must contain exactly one of 'synthetic' or 'dataset'")
    seed = int(seed_override if seed_override is not None else doc.get("seed", 0))
    model_doc = dict(doc.get("model", {}))
    if variant_override is not None:
        model_doc["variant"] = variant_override
    train_doc = dict(doc.get("train", {}))
    train_doc["seed"] = seed
    out = out_override or doc.get("out") or "runs/out"
    return RunConfig(seed=seed, out=out,
                     model=ModelConfig(**model_doc), train=TrainConfig(**train_doc),
                     synthetic=doc.get("synthetic"), dataset=doc.get("dataset"),
                     split=doc.get("split"), split_file=doc.get("split_file"))


def build_graph(cfg: RunConfig, out_dir=None) -> HetGraph:
    if cfg.synthetic is not None:
        block = cfg.synthetic
        gen_seed = block.get("rng_seed", derive_seed(cfg.seed, "synthetic"))
        return generate_synthetic(
            block["n_genes"], block["n_microbes"], block["n_diseases"],
            block.get("latent_dim", 8), block.get("edge_density", 0.15),
            gen_seed, out_dir=out_dir).graph
    ds = cfg.dataset
    features = {}
    for key, t in _FEATURE_KEYS.items():
        path = (ds.get("features") or {}).get(key)
        if path:
            features[t] = path
    return load_edges(ds["gene_microbe"], ds["gene_disease"], ds["microbe_disease"],
                      feature_paths=features or None)


def build_split(cfg: RunConfig, g: HetGraph) -> SplitPlan:
    if cfg.split_file:
        return SplitPlan.load(cfg.split_file)
    opts = cfg.split or {}
    positives = derive_positive_triplets(g)
    return make_split(g, positives,
                      test_fraction=opts.get("test_fraction", 0.1),
                      folds=opts.get("folds", 5),
                      rng_seed=derive_seed(cfg.seed, "split"))


def split_hash(plan: SplitPlan) -> str:
    return hashlib.sha256(plan.to_json().encode("utf-8")).hexdigest()[:16]


def _ensure_dirs(out):
    for sub in ("metrics", "checkpoints", "exports"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_run_file(cfg: RunConfig):
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "run.json"), cfg.resolved())


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HCMGNN_THREADS", "1")))
    except ValueError:
        return 1


def cmd_synth(cfg: RunConfig) -> str:
    if cfg.synthetic is None:
        raise ValueError("synth needs a 'synthetic' block in the config")
    _write_run_file(cfg)
    data_dir = os.path.join(cfg.out, "data")
    block = cfg.synthetic
    gen_seed = block.get("rng_seed", derive_seed(cfg.seed, "synthetic"))
    result = generate_synthetic(
        block["n_genes"], block["n_microbes"], block["n_diseases"],
        block.get("latent_dim", 8), block.get("edge_density", 0.15),
        gen_seed, out_dir=data_dir)
    triangles = len(derive_positive_triplets(result.graph))
    manifest = {
        "seed": gen_seed,
        "sizes": {"genes": result.graph.num_nodes(GENE),
                  "microbes": result.graph.num_nodes(MICROBE),
                  "diseases": result.graph.num_nodes(DISEASE)},
        "realized_density": result.realized_density,
        "bias": result.bias,
        "triangles": triangles,
        "files": sorted(result.files),
    }
    path = os.path.join(data_dir, "manifest.json")
    _write_json(path, manifest)
    print(f"wrote {len(result.files)} dataset files + manifest to {data_dir} "
          f"(density {result.realized_density:.4f}, {triangles} positive triplets)")
    return path


def cmd_cv(cfg: RunConfig) -> str:
    _write_run_file(cfg)
    _ensure_dirs(cfg.out)
    g = build_graph(cfg)
    plan = build_split(cfg, g)
    result = run_cv(g, plan, cfg.model, cfg.train, max_workers=_threads())
    doc = {"split_hash": split_hash(plan), "seed": cfg.seed,
           "variant": cfg.model.variant,
           "folds": result.records, "mean": result.mean}
    path = os.path.join(cfg.out, "metrics", "cv.json")
    _write_json(path, doc)
    for fold in result.folds:
        fold.params.save(os.path.join(cfg.out, "checkpoints", f"fold{fold.fold}.json"))
    for rec in result.all_records():
        print("fold {fold}: hit1={hit1:.4f} hit3={hit3:.4f} hit5={hit5:.4f} "
              "mrr={mrr:.4f}".format(**rec))
    return path


def _test_run(cfg: RunConfig, g: HetGraph, plan: SplitPlan):
    params, report, cache = train_for_test(g, plan, cfg.model, cfg.train)
    metrics, cases = run_test(g, plan, cache, params, cfg.train.seed)
    return params, report, cache, metrics, cases


def cmd_test(cfg: RunConfig) -> str:
    _write_run_file(cfg)
    _ensure_dirs(cfg.out)
    g = build_graph(cfg)
    plan = build_split(cfg, g)
    params, report, cache, metrics, cases = _test_run(cfg, g, plan)
    params.save(os.path.join(cfg.out, "checkpoints", "test.json"))

    # embed every ranked candidate for external projection tools
    samples, labels, ids = [], [], []
    positive_ids = {c.positive_id for c in cases}
    for c in cases:
        for cid in c.candidate_ids:
            gi, mi, di = cid.split("|")
            label = 1 if cid in positive_ids else 0
            samples.append(LabeledTriplet(
                g.node_index[GENE][gi], g.node_index[MICROBE][mi],
                g.node_index[DISEASE][di], label,
                "observed" if label else "sampled-negative"))
            labels.append(label)
            ids.append(cid)
    out = forward(cache, params, samples)
    vecs = np.concatenate([
        out.embeddings[GENE].data[[s.gene for s in samples]],
        out.embeddings[MICROBE].data[[s.microbe for s in samples]],
        out.embeddings[DISEASE].data[[s.disease for s in samples]]], axis=1)
    export_path = os.path.join(cfg.out, "exports", "test_embeddings.tsv")
    export_embeddings(export_path, ids, labels, vecs)

    doc = {"split_hash": split_hash(plan), "seed": cfg.seed,
           "variant": cfg.model.variant, "metrics": metrics,
           "silhouette": silhouette(vecs, np.array(labels)),
           "best_epoch": report.best_epoch, "epochs": report.epochs_run,
           "ranks": [{"id": c.positive_id, "rank": c.rank,
                      "avg_degree": c.avg_degree} for c in cases]}
    path = os.path.join(cfg.out, "metrics", "test.json")
    _write_json(path, doc)
    print("test: " + " ".join(f"{k}={v:.4f}" for k, v in sorted(metrics.items())))
    return path


def cmd_ablate(cfg: RunConfig) -> str:
    _write_run_file(cfg)
    _ensure_dirs(cfg.out)
    g = build_graph(cfg)
    plan = build_split(cfg, g)
    shash = split_hash(plan)

    def run_variant(variant: str) -> dict:
        row = {"variant": variant, "split_hash": shash, "error": None}
        try:
            vcfg = RunConfig(seed=cfg.seed, out=cfg.out,
                             model=ModelConfig(**{**asdict(cfg.model), "variant": variant}),
                             train=cfg.train, synthetic=cfg.synthetic,
                             dataset=cfg.dataset, split=cfg.split,
                             split_file=cfg.split_file)
            _, report, _, metrics, _ = _test_run(vcfg, g, plan)
            row.update(metrics)
            row["best_epoch"] = report.best_epoch
            row["epochs"] = report.epochs_run
        except Exception as exc:  # a broken variant must not sink the others
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_variant, VARIANTS))
    else:
        rows = [run_variant(v) for v in VARIANTS]

    path = os.path.join(cfg.out, "metrics", "ablation.json")
    _write_json(path, {"split_hash": shash, "seed": cfg.seed, "rows": rows})
    for row in rows:
        if row["error"]:
            print(f"{row['variant']:>9}: ERROR {row['error']}")
        else:
            print(f"{row['variant']:>9}: hit1={row['hit1']:.4f} mrr={row['mrr']:.4f}")
    return path


def cmd_stratify(cfg: RunConfig, checkpoint_path=None) -> str:
    _write_run_file(cfg)
    _ensure_dirs(cfg.out)
    checkpoint_path = checkpoint_path or os.path.join(cfg.out, "checkpoints", "test.json")
    if not os.path.exists(checkpoint_path):
        raise FileNotFoundError(f"checkpoint not found: {checkpoint_path}")
    params = ModelParams.load(checkpoint_path)
    g = build_graph(cfg)
    plan = build_split(cfg, g)
    cache = ModelCache(g, params.config.variant)
    _, cases = run_test(g, plan, cache, params, cfg.seed)
    reports = stratify_by_degree(cases, default_thresholds(cases, k=12))
    path = os.path.join(cfg.out, "metrics", "strata.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            hit = "null" if r.hit1 is None else repr(r.hit1)
            fh.write(f"{r.threshold!r}\t{r.count}\t{hit}\n")
    print(f"wrote {len(reports)} strata to {path}")
    return path


def cmd_instances(cfg: RunConfig) -> str:
    _write_run_file(cfg)
    _ensure_dirs(cfg.out)
    g = build_graph(cfg)
    path = os.path.join(cfg.out, "exports", "instances.tsv")
    dump_instances(path, g, causal_metapaths())
    print(f"wrote instance dump to {path}")
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hcmgnn",
                                     description="causal-metapath triplet ranking")
    parser.add_argument("command",
                        choices=["synth", "cv", "test", "ablate", "stratify", "instances"])
    parser.add_argument("--config", required=True, help="run config JSON")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--variant", default=None, choices=list(VARIANTS),
                        help="model variant override")
    parser.add_argument("--checkpoint", default=None,
                        help="checkpoint path (stratify)")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed_override=args.seed,
                          out_override=args.out, variant_override=args.variant)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "cv":
            cmd_cv(cfg)
        elif args.command == "test":
            cmd_test(cfg)
        elif args.command == "ablate":
            cmd_ablate(cfg)
        elif args.command == "stratify":
            cmd_stratify(cfg, checkpoint_path=args.checkpoint)
        elif args.command == "instances":
            cmd_instances(cfg)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
