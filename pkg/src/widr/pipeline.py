"""Pipeline stages. Each reads and writes files under the work directory:

    patches/<doc_id>_<line>_<idx>.pgm
    checkpoints/<run>.widp
    features/<run>/<doc_id>.widf
    descriptors/<run>/<doc_id>.widf
    reports/<run>.csv, reports/<run>.json
"""
from __future__ import annotations

import csv
import json
import logging
import re
from pathlib import Path

import numpy as np

from widr import encode, model, retrieve
from widr.config import PipelineConfig
from widr.dataset import Manifest, class_index_map, load_manifest
from widr.preprocess import page_patches, read_pgm, write_pgm
from widr.synth import CorpusConfig, synth_corpus

log = logging.getLogger(__name__)

WORKDIR_LAYOUT = ("patches", "checkpoints", "features", "descriptors", "reports")
ENSEMBLE_NOTE = "ensemble: per-stream l2-scaled descriptor concatenation (stand-in combination rule)"


class MissingArtifactError(FileNotFoundError):
    pass


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{stage}: missing upstream artifact {path}")
    return path


def workdir(cfg: PipelineConfig) -> Path:
    root = cfg.workdir
    for sub in WORKDIR_LAYOUT:
        (root / sub).mkdir(parents=True, exist_ok=True)
    return root


def _manifest(cfg: PipelineConfig) -> Manifest:
    return load_manifest(_require(cfg.manifest_path, "manifest"))


def run_synth(cfg: PipelineConfig) -> Manifest:
    s = cfg.synth
    corpus = CorpusConfig(
        n_writers=s.n_writers,
        docs_per_writer=s.docs_per_writer,
        test_writers=s.test_writers,
        n_extra_writers=s.n_extra_writers,
        extra_docs_per_writer=s.extra_docs_per_writer,
        patches_per_doc=s.patches_per_doc,
        lines_per_doc=s.lines_per_doc,
        line_height=s.line_height,
        patch_size=cfg.preprocess.patch_size,
        common_fraction=s.common_fraction,
    )
    out = cfg.manifest_path.parent
    manifest = synth_corpus(corpus, s.seed, out)
    if cfg.manifest_path.name != "manifest.csv":
        (out / "manifest.csv").replace(cfg.manifest_path)
    log.info("synth: %d documents under %s", len(manifest), out)
    return manifest


def run_preprocess(cfg: PipelineConfig) -> dict[str, int]:
    manifest = _manifest(cfg)
    pdir = workdir(cfg) / "patches"
    for stale in pdir.glob("*.pgm"):
        stale.unlink()
    counts = {}
    p = cfg.preprocess
    for rec in manifest:
        page = read_pgm(_require(manifest.resolve(rec), "preprocess"))
        patches = page_patches(page, p.patch_size, p.ink_ratio_min, p.line_window, p.line_rho)
        for li, pi, patch in patches:
            write_pgm(pdir / f"{rec.doc_id}_{li}_{pi}.pgm", patch)
        counts[rec.doc_id] = len(patches)
        if not patches:
            log.warning("preprocess: no patches kept for %s", rec.doc_id)
    log.info("preprocess: %d patches from %d documents", sum(counts.values()), len(counts))
    return counts


def load_doc_patches(cfg: PipelineConfig, doc_id: str) -> np.ndarray:
    pdir = _require(cfg.workdir / "patches", "patches")
    pattern = re.compile(rf"^{re.escape(doc_id)}_(\d+)_(\d+)\.pgm$")
    found = []
    for f in pdir.glob(f"{glob_escape(doc_id)}_*.pgm"):
        m = pattern.match(f.name)
        if m:
            found.append((int(m.group(1)), int(m.group(2)), f))
    found.sort()
    size = cfg.preprocess.patch_size
    if not found:
        return np.zeros((0, size, size), dtype=np.uint8)
    return np.stack([read_pgm(f) for _, _, f in found])


def glob_escape(text: str) -> str:
    return re.sub(r"([*?\[])", r"[\1]", text)


def _net_config(cfg: PipelineConfig, num_classes: int) -> model.NetworkConfig:
    if cfg.model.num_classes and cfg.model.num_classes != num_classes:
        raise ValueError(
            f"model.num_classes={cfg.model.num_classes} but manifest has {num_classes} labeled writers"
        )
    return model.NetworkConfig(
        conv_channels=cfg.model.conv_channels,
        feature_dim=cfg.model.feature_dim,
        num_classes=num_classes,
        dropout_rate=cfg.model.dropout,
        input_side=cfg.preprocess.patch_size,
    )


def checkpoint_path(cfg: PipelineConfig, run: str) -> Path:
    return cfg.workdir / "checkpoints" / f"{run}.widp"


def run_train(cfg: PipelineConfig, run: str | None = None) -> model.TrainResult:
    run = run or cfg.run_name
    manifest = _manifest(cfg)
    labeled_docs = manifest.select("train", labeled=True)
    classes = class_index_map(r.writer_id for r in labeled_docs)
    stacks, labels = [], []
    for rec in labeled_docs:
        p = load_doc_patches(cfg, rec.doc_id)
        stacks.append(p)
        labels += [classes[rec.writer_id]] * len(p)
    if cfg.loss.mode == "wlsr_mixed":
        for rec in manifest.select("train", labeled=False):
            p = load_doc_patches(cfg, rec.doc_id)
            stacks.append(p)
            labels += [None] * len(p)
    if not labels or all(k is None for k in labels):
        raise MissingArtifactError(f"train: no labeled patches under {cfg.workdir / 'patches'}")
    t = cfg.train
    result = model.train(
        np.concatenate(stacks),
        labels,
        _net_config(cfg, len(classes)),
        model.TrainConfig(t.lr, t.lr_after, t.lr_decay_epoch, t.momentum, t.epochs, t.batch_size, t.seed),
        model.LossConfig(cfg.loss.mode, cfg.loss.epsilon),
    )
    root = workdir(cfg)
    model.save_checkpoint(checkpoint_path(cfg, run), result.params)
    summary = {
        "run": run,
        "loss_mode": cfg.loss.mode,
        "num_classes": len(classes),
        "n_labeled": sum(k is not None for k in labels),
        "n_extra": sum(k is None for k in labels),
        "seed": t.seed,
        "epochs": t.epochs,
        "history": result.history,
    }
    (root / "reports" / f"{run}.train.json").write_text(json.dumps(summary, indent=2) + "\n")
    return result


def run_extract(cfg: PipelineConfig, run: str | None = None) -> int:
    run = run or cfg.run_name
    ckpt = _require(checkpoint_path(cfg, run), "extract")
    params = model.load_checkpoint(ckpt, cfg.model.dropout, cfg.preprocess.patch_size)
    manifest = _manifest(cfg)
    out = workdir(cfg) / "features" / run
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for rec in manifest.select("train", labeled=True) + manifest.select("test"):
        feats = model.extract_features(params, load_doc_patches(cfg, rec.doc_id))
        encode.write_features(out / f"{rec.doc_id}.widf", feats)
        n += 1
    return n


def _read_doc_features(cfg: PipelineConfig, run: str, doc_id: str, kind: str) -> np.ndarray:
    return encode.read_features(_require(cfg.workdir / kind / run / f"{doc_id}.widf", kind))


def run_encode(cfg: PipelineConfig, run: str | None = None, feature_run: str | None = None) -> int:
    run = run or cfg.run_name
    feature_run = feature_run or run
    manifest = _manifest(cfg)
    train_feats = [
        _read_doc_features(cfg, feature_run, r.doc_id, "features")
        for r in manifest.select("train", labeled=True)
    ]
    train_feats = np.concatenate([f for f in train_feats if len(f)])
    e = cfg.encode
    pca = encode.fit_pca_white(train_feats, e.pca_dim or None, e.ridge)
    white = encode.apply_pca_white(pca, train_feats)
    codebook = encode.kmeans_fit(white, e.kmeans_k, e.kmeans_seed)
    out = workdir(cfg) / "descriptors" / run
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for rec in manifest.select("test"):
        feats = _read_doc_features(cfg, feature_run, rec.doc_id, "features")
        if len(feats) == 0:
            log.warning("encode: %s has no local features; skipped", rec.doc_id)
            continue
        v = encode.vlad_encode(codebook, encode.apply_pca_white(pca, feats), e.l2_normalize)
        encode.write_features(out / f"{rec.doc_id}.widf", v)
        n += 1
    return n


def _descriptors(cfg: PipelineConfig, run: str, manifest: Manifest) -> dict[str, np.ndarray]:
    return {
        r.doc_id: _read_doc_features(cfg, run, r.doc_id, "descriptors")[0]
        for r in manifest.select("test")
    }


def run_eval(cfg: PipelineConfig, run: str | None = None, extra_info: dict | None = None) -> retrieve.MetricsReport:
    run = run or cfg.run_name
    manifest = _manifest(cfg)
    writers = manifest.writer_of()
    if cfg.eval.ensemble_runs:
        streams = [_descriptors(cfg, r, manifest) for r in cfg.eval.ensemble_runs]
        report = retrieve.evaluate(retrieve.ensemble_concat(streams), writers, cfg.eval.top_k)
        report.notes.append(ENSEMBLE_NOTE)
        run = "ensemble_" + "+".join(cfg.eval.ensemble_runs)
    else:
        report = retrieve.evaluate(_descriptors(cfg, run, manifest), writers, cfg.eval.top_k)
    rdir = workdir(cfg) / "reports"
    retrieve.write_report(report, rdir / f"{run}.csv", rdir / f"{run}.json")
    # run metadata for the summary report
    meta = json.loads((rdir / f"{run}.json").read_text())
    meta["run"] = run
    meta["config"] = {
        "loss_mode": cfg.loss.mode,
        "feature_dim": cfg.model.feature_dim,
        "kmeans_k": cfg.encode.kmeans_k,
        "pca_dim": cfg.encode.pca_dim,
        **(extra_info or {}),
    }
    (rdir / f"{run}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    log.info("eval %s: mAP %.4f %s", run, report.map_value, report.hard_top_k)
    return report


# ---- reports ----------------------------------------------------------------

def _metric_items(run_json: dict) -> list[tuple[str, str, float | None]]:
    items = [("mAP", "", run_json["mAP"])]
    for k, v in sorted(run_json["hard_top_k"].items(), key=lambda kv: int(kv[0])):
        items.append(("hard_top_k", k, v))
    return items


def emit_report(runs: list[dict], csv_path: Path, json_path: Path) -> list[dict]:
    """One row per (configuration, metric). When a ``real_onehot`` run with the
    same feature_dim/k/pca_dim exists, other runs get a delta against it."""
    baselines = {}
    for r in runs:
        c = r.get("config", {})
        if c.get("loss_mode") == "real_onehot":
            baselines[(c.get("feature_dim"), c.get("kmeans_k"), c.get("pca_dim"))] = r
    with_delta = bool(baselines) and len(runs) > 1
    rows = []
    for r in sorted(runs, key=lambda r: r["run"]):
        c = r.get("config", {})
        base = baselines.get((c.get("feature_dim"), c.get("kmeans_k"), c.get("pca_dim")))
        base_vals = {(m, k): v for m, k, v in _metric_items(base)} if base and base is not r else {}
        for metric, k, value in _metric_items(r):
            row = {"configuration": r["run"], "loss_mode": c.get("loss_mode", ""),
                   "feature_dim": c.get("feature_dim", ""), "kmeans_k": c.get("kmeans_k", ""),
                   "metric": metric, "k": k, "value": value}
            if with_delta:
                b = base_vals.get((metric, k))
                row["delta_vs_baseline"] = None if b is None or value is None else value - b
            rows.append(row)
    fields = ["configuration", "loss_mode", "feature_dim", "kmeans_k", "metric", "k", "value"]
    if with_delta:
        fields.append("delta_vs_baseline")

    def fmt(key, v):
        if v is None:
            return "N/A"
        if key == "delta_vs_baseline":
            return f"{v:+.6f}"
        return f"{v:.6f}" if isinstance(v, float) else v

    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: fmt(k, row[k]) for k in fields})
    json_path.write_text(json.dumps({"rows": rows}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return rows


def load_run_reports(cfg: PipelineConfig, names: list[str] | None = None) -> list[dict]:
    rdir = _require(cfg.workdir / "reports", "report")
    runs = []
    for f in sorted(rdir.glob("*.json")):
        if f.name.endswith(".train.json") or f.stem in ("summary", "sweep"):
            continue
        data = json.loads(f.read_text())
        if "mAP" in data and "run" in data and (names is None or data["run"] in names):
            runs.append(data)
    if not runs:
        raise MissingArtifactError(f"report: no evaluated runs under {rdir}")
    return runs


def run_report(cfg: PipelineConfig, names: list[str] | None = None, stem: str = "summary") -> list[dict]:
    rdir = workdir(cfg) / "reports"
    return emit_report(load_run_reports(cfg, names), rdir / f"{stem}.csv", rdir / f"{stem}.json")


def run_single(cfg: PipelineConfig, run: str | None = None) -> retrieve.MetricsReport:
    run = run or cfg.run_name
    run_train(cfg, run)
    run_extract(cfg, run)
    run_encode(cfg, run)
    return run_eval(cfg, run)


def run_pipeline(cfg: PipelineConfig) -> list[dict]:
    if cfg.synth.enabled:
        run_synth(cfg)
    run_preprocess(cfg)
    names = [cfg.run_name]
    run_single(cfg)
    if cfg.loss.compare_baseline and cfg.loss.mode != "real_onehot":
        base = cfg.replace(loss={"mode": "real_onehot"}, paths={"run_name": ""})
        names.append(base.run_name)
        run_single(base)
    return run_report(cfg, names)


def run_sweep(cfg: PipelineConfig) -> list[dict]:
    """Grid over feature_dim x kmeans_k on already preprocessed patches.

    One network is trained per feature_dim; every k reuses its features.
    """
    dims = cfg.sweep.feature_dim or (cfg.model.feature_dim,)
    ks = cfg.sweep.kmeans_k or (cfg.encode.kmeans_k,)
    names = []
    for d in dims:
        train_run = f"{cfg.run_name}_fd{d}"
        sub = cfg.replace(model={"feature_dim": d})
        run_train(sub, train_run)
        run_extract(sub, train_run)
        for k in ks:
            enc = sub.replace(encode={"kmeans_k": k})
            name = f"{train_run}_k{k}"
            run_encode(enc, name, feature_run=train_run)
            run_eval(enc, name)
            names.append(name)
    return run_report(cfg, names, stem="sweep")
