"""Glue between manifests, features, training and evaluation outputs."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from . import afx, dataset, metrics, optim
from .audio_io import read_wav
from .errors import UsageError
from .features import FeatureNormalizer, MelConfig, log_mel
from .network import Model, NetworkConfig, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


def generate(out_dir, n_dry: int = 64, seed: int = 0, split_mode: str = "group",
             wav_dir=None, effects=afx.KINDS, max_len: int = 3, mix=None) -> dataset.Manifest:
    """Dry sources -> wet renders -> split assignment -> manifest.jsonl."""
    out_dir = Path(out_dir)
    if wav_dir:
        dry = dataset.ingest_wavs(wav_dir)
        if not dry:
            raise UsageError(f"no usable 10 s chunks in {wav_dir}")
    else:
        dry = dataset.synth_dry(n_dry, seed=seed)
    chains = afx.enumerate_chains(effects, max_len)
    m = dataset.build_dataset(dry, chains, out_dir, seed=seed, mix=mix,
                              config={"split_seed": seed, "dry_source": "wav" if wav_dir else "synth"})
    dataset.assign_splits(m, split_mode, seed)
    dataset.write_manifest(m, out_dir / "manifest.jsonl")
    return m


def split_frames(manifest: dataset.Manifest, split: str, mel: MelConfig = MelConfig(),
                 cache: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Un-normalised log-mel frames (N, T, M) float32 and labels for one split, in record order."""
    recs = manifest.split(split)
    frames = np.empty((len(recs), mel.n_frames, mel.n_mels), dtype=np.float32)
    for i, r in enumerate(recs):
        key = (str(manifest.resolve(r.wet_path)), mel)
        if cache is not None and key in cache:
            frames[i] = cache[key]
            continue
        audio, sr = read_wav(manifest.resolve(r.wet_path))
        frames[i] = log_mel(audio, sr, mel)
        if cache is not None:
            cache[key] = frames[i]
    return frames, np.array([r.label for r in recs], dtype=np.int64)


def check_compatible(manifest: dataset.Manifest, config: NetworkConfig):
    K = int(manifest.config.get("n_classes", len(manifest.vocabulary())))
    if K != config.n_classes:
        raise UsageError(f"model has {config.n_classes} classes but the manifest has {K}")


def run_training(manifest: dataset.Manifest, net_cfg: NetworkConfig, train_cfg: optim.TrainConfig,
                 out_dir, model_seed: int | None = None, cache: dict | None = None,
                 provenance: dict | None = None) -> tuple[Model, optim.TrainResult]:
    """Train one model and write model.ckpt, history.csv and history.png into ``out_dir``."""
    from .plotting import plot_history

    check_compatible(manifest, net_cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    x_tr, y_tr = split_frames(manifest, "train", net_cfg.mel, cache)
    x_va, y_va = split_frames(manifest, "val", net_cfg.mel, cache)
    if not len(y_tr) or not len(y_va):
        raise UsageError("manifest has an empty train or validation split")
    norm = FeatureNormalizer.fit([x_tr])
    x_tr, x_va = norm(x_tr), norm(x_va)
    log.info("features ready in %.1fs (%d train, %d val)", time.time() - t0, len(y_tr), len(y_va))
    seed = train_cfg.seed if model_seed is None else model_seed
    model = Model(net_cfg, seed=seed)
    model.normalizer = norm
    result = optim.train(model, (x_tr, y_tr), (x_va, y_va), train_cfg)
    meta = {"best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss if result.history else None,
            "train": optim.config_dict(train_cfg), "provenance": provenance or {}}
    save_checkpoint(model, out_dir / "model.ckpt", meta)
    result.write_history(out_dir / "history.csv")
    plot_history(result.history, out_dir / "history.png",
                 f"{net_cfg.geometry} J={net_cfg.dim}" + (f" c={net_cfg.c:g}" if net_cfg.geometry == "hyperbolic" else ""))
    return model, result


def predict_split(model: Model, manifest: dataset.Manifest, split: str = "test",
                  cache: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    x, y = split_frames(manifest, split, model.config.mel, cache)
    if not len(y):
        raise UsageError(f"manifest has an empty {split} split")
    if model.normalizer is not None:
        x = model.normalizer(x)
    preds, _ = model.predict_frames(x)
    return preds, y


def run_evaluation(checkpoints, manifest: dataset.Manifest, out_dir, first_n=(), latest_n=(),
                   debug_perfect: bool = False, split: str = "test", cache: dict | None = None,
                   provenance: dict | None = None) -> dict:
    """Evaluate one or more checkpoints (e.g. one per seed) and write report.json + confusion.csv."""
    from .plotting import plot_confusion

    vocab = manifest.vocabulary()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs, scalars, total_cm, configs = [], [], None, []
    for ck in checkpoints:
        model, meta = load_checkpoint(ck)
        check_compatible(manifest, model.config)
        if debug_perfect:
            truths = np.array([r.label for r in manifest.split(split)], dtype=np.int64)
            if not len(truths):
                raise UsageError(f"manifest has an empty {split} split")
            preds = truths.copy()
        else:
            preds, truths = predict_split(model, manifest, split, cache)
        blocks, cm = metrics.evaluate_predictions(preds, truths, vocab, first_n, latest_n)
        runs.append({"checkpoint": str(ck), "metrics": blocks, "n_samples": int(len(truths))})
        scalars.append(metrics.summary_scalars(blocks))
        configs.append({"network": model.config.to_dict(), "meta": meta})
        total_cm = cm if total_cm is None else metrics.ConfusionMatrix(total_cm.counts + cm.counts, cm.labels)
    agg = metrics.aggregate(scalars)
    report = {"split": split, "debug_perfect": debug_perfect, "first_n": list(first_n),
              "latest_n": list(latest_n), "classes": [metrics.tuple_label(c, vocab.max_len) for c in vocab.chains],
              "runs": runs, "aggregate": agg.to_dict(), "config": configs,
              "provenance": provenance or {}}
    tmp = out_dir / "report.json.part"
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True))
    tmp.replace(out_dir / "report.json")
    metrics.write_confusion_csv(total_cm, out_dir / "confusion.csv")
    plot_confusion(total_cm, out_dir / "confusion.png")
    return report
