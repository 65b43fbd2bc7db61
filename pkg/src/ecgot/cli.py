"""Command-line entry point: ingest, preprocess, features, augment, train, eval, run, compare."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import dsp, evaluate, features, ingest, model, pipeline
from .config import PipelineConfig, load_config, save_config
from .errors import EcgotError, EmptyDataset, IncomparableRuns, StageFailure
from .ingest import CLASS_NAMES, DiagnosticClass, N_CLASSES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_INPUT = 2
EXIT_DIGEST_MISMATCH = 3


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "strategy", None):
        cfg.augment.strategy = args.strategy
    if getattr(args, "seed", None) is not None:
        cfg.augment.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def cmd_ingest(args) -> int:
    out_dir = Path(args.out)
    if args.synthetic:
        mix = None
        if args.class_mix:
            values = [float(v) for v in args.class_mix.split(",")]
            mix = {c: values[int(c)] for c in DiagnosticClass}
        manifest = pipeline.build_synthetic_dataset(
            out_dir, args.synthetic, args.seed or 0, class_mix=mix, noise_mv=args.noise
        )
        records = ingest.read_manifest(manifest)
    else:
        data_root = args.data_root or PipelineConfig().resolved_data_root()
        if not data_root:
            print("ingest: --synthetic or --data-root required", file=sys.stderr)
            return EXIT_MISSING_INPUT
        try:
            records = ingest.load_ptbxl_records(Path(data_root))
        except EmptyDataset as exc:
            print(f"ingest: {exc}", file=sys.stderr)
            return EXIT_MISSING_INPUT
        paths = {
            r.record_id: str(Path(data_root) / f"records/{r.record_id}.hea") for r in records
        }
        manifest = ingest.write_manifest(records, paths, out_dir / "manifest.csv")
    stats = ingest.dataset_stats(records)
    print(stats.format_table())
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _load_cfg(args)
    records = ingest.read_manifest(args.manifest)
    rows = []
    windows = []
    rpeak_rows = []
    for rec in records:
        beats, skipped, r_peaks = dsp.preprocess_record(
            rec,
            n_points=cfg.dsp.n_points,
            notch_f0_hz=cfg.dsp.notch_f0_hz,
            notch_q=cfg.dsp.notch_q,
            window_samples=cfg.dsp.window_samples,
        )
        if args.rpeak_dump:
            rpeak_rows.append(
                {"record_id": rec.record_id, "r_peaks": " ".join(str(p) for p in r_peaks)}
            )
        for b in beats:
            rows.append(
                {
                    "beat_id": f"{rec.record_id}_{len(rows):06d}",
                    "record_id": rec.record_id,
                    "label": b.label.name if b.label is not None else "",
                    "fold": rec.split_fold,
                    "r_peak_index": b.r_peak_index,
                    "sample_rate_hz": b.sample_rate_hz,
                    "window_samples": b.window.shape[1],
                }
            )
            windows.append(b.window)
    out_dir = Path(args.out)
    meta = pd.DataFrame(rows)
    pipeline.save_beats(np.stack(windows) if windows else np.empty((0, 12, 0)), meta, out_dir)
    if args.rpeak_dump:
        pd.DataFrame(rpeak_rows).to_csv(out_dir / "r_peaks.csv", index=False)
    print(f"beats: {len(rows)} -> {out_dir}")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _load_cfg(args)
    windows, meta = pipeline.load_beats(Path(args.beats))
    matrix, kept = features.assemble_vectors_batch(
        windows, float(meta["sample_rate_hz"].iloc[0]), cfg.features.z8_uses_shape_mean
    )
    meta_kept = meta.iloc[kept].reset_index(drop=True)
    labels = np.array([DiagnosticClass[n] for n in meta_kept["label"]], dtype=np.int64)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    features.export_feature_matrix_binary(matrix, labels, out_dir / "features.bin")
    index = meta_kept[["beat_id", "record_id", "label", "fold"]]
    index.to_csv(out_dir / "features_index.csv", index=False)
    if args.csv:
        df = pd.DataFrame(matrix, columns=[f"f{i:03d}" for i in range(matrix.shape[1])])
        df["label"] = [CLASS_NAMES[l] for l in labels]
        df.to_csv(out_dir / "features.csv", index=False)
    print(f"features: {matrix.shape[0]} rows -> {out_dir}")
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _load_cfg(args)
    windows, meta = pipeline.load_beats(Path(args.beats))
    train_mask = meta["fold"].astype(int) != 10
    windows = windows[train_mask.to_numpy()]
    meta = meta[train_mask].reset_index(drop=True)
    labels = np.array([DiagnosticClass[n] for n in meta["label"]], dtype=np.int64)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.augment.strategy == "oversample":
        rng = np.random.default_rng(cfg.augment.seed)
        idx = evaluate.oversample_indices(labels, rng)
        pd.DataFrame({"row": idx}).to_csv(out_dir / "oversample_indices.csv", index=False)
        print(f"oversample: {idx.size} rows -> {out_dir}")
        return EXIT_OK
    if cfg.augment.strategy != "ot":
        print("augment: nothing to do for strategy 'none'")
        return EXIT_OK
    synth_windows, synth_labels, provenance = pipeline.synthesize_minority_beats(
        cfg, windows, labels
    )
    provenance.to_csv(out_dir / "provenance.csv", index=False)
    if synth_windows.shape[0] == 0:
        print("ot augmentation: classes already balanced, nothing synthesized")
        return EXIT_OK
    synth_meta = pd.DataFrame(
        {
            "beat_id": provenance["synth_id"],
            "record_id": provenance["synth_id"],
            "label": [CLASS_NAMES[l] for l in synth_labels],
            "fold": 1,
            "r_peak_index": windows.shape[2] // 2,
            "sample_rate_hz": float(meta["sample_rate_hz"].iloc[0]),
            "window_samples": windows.shape[2],
        }
    )
    pipeline.save_beats(synth_windows, synth_meta, out_dir, stem="synth_beats")
    print(f"ot augmentation: {synth_windows.shape[0]} synthetic beats -> {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    matrix, labels = features.import_feature_matrix_binary(
        Path(args.features) / "features.bin", cfg.model.feature_len
    )
    index = pd.read_csv(Path(args.features) / "features_index.csv")
    train_mask = index["fold"].astype(int) != 10
    x_train = matrix[train_mask.to_numpy()]
    y_train = labels[train_mask.to_numpy()]
    mean, std = pipeline.standardize_fit(x_train)
    params, log = model.train((x_train - mean) / std, y_train, cfg.model, cfg.train)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params["scaler.mean"] = mean
    params["scaler.scale"] = std
    model.save_checkpoint(out_dir / "checkpoint.bin", params, cfg.model, meta={"strategy": cfg.augment.strategy, "seed": cfg.train.seed})
    lines = ["epoch,train_loss,val_accuracy"] + [f"{e},{repr(l)},{repr(a)}" for e, l, a in log]
    (out_dir / "training_log.csv").write_text("\n".join(lines) + "\n")
    print(f"checkpoint -> {out_dir / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, mcfg, meta = model.load_checkpoint(args.checkpoint)
    mean = params.pop("scaler.mean")
    std = params.pop("scaler.scale")
    matrix, labels = features.import_feature_matrix_binary(
        Path(args.features) / "features.bin", mcfg.feature_len
    )
    index = pd.read_csv(Path(args.features) / "features_index.csv")
    test_mask = (index["fold"].astype(int) == 10).to_numpy()
    x_test = matrix[test_mask]
    y_test = labels[test_mask]
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(x_test, dtype="<f4").tobytes())
    digest.update(np.ascontiguousarray(y_test, dtype=np.uint8).tobytes())
    probs = model.forward((x_test - mean) / std, params, mcfg)
    cm = evaluate.confusion(y_test, probs.argmax(axis=1))
    m = evaluate.metrics(cm)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluate.write_confusion_csv(cm, out_dir / "confusion.csv")
    evaluate.write_confusion_svg(cm, str(meta.get("strategy", "eval")), out_dir / "confusion.svg")
    payload = {
        "run_id": digest.hexdigest()[:16],
        "strategy": meta.get("strategy", "none"),
        "seed": meta.get("seed", 0),
        "config_digest": "",
        "test_digest": digest.hexdigest(),
        "train_rows": 0,
        "augmented_rows": 0,
        "test_rows": int(y_test.size),
        "train_class_counts": {},
        "metrics": m.to_dict(),
    }
    (out_dir / "metrics.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"accuracy {m.average_accuracy:.4f}  macro F1 {m.macro_f1:.4f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    try:
        result = pipeline.run_pipeline(cfg, Path(args.manifest), out_dir)
    except StageFailure as exc:
        print(f"run failed in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_FAILURE
    m = result.metrics
    print(
        f"strategy={cfg.augment.strategy} seed={cfg.train.seed} "
        f"accuracy={m.average_accuracy:.4f} macro_f1={m.macro_f1:.4f}"
    )
    print(f"artifacts: {result.run_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    runs = [evaluate.RunSummary.load(Path(d)) for d in args.runs]
    try:
        table = evaluate.compare_runs(runs, Path(args.out))
    except IncomparableRuns as exc:
        print(f"compare: {exc}", file=sys.stderr)
        return EXIT_DIGEST_MISMATCH
    print(table.read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgot",
        description="ECG beat rebalancing with optimal transport and transformer classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a dataset manifest (synthetic or PTB-XL style)")
    p.add_argument("--synthetic", type=int, default=0, metavar="N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05, help="synthetic noise level in mV")
    p.add_argument("--class-mix", help="five comma-separated proportions")
    p.add_argument("--data-root", help="PTB-XL style dataset root")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="filter records and segment beats")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--rpeak-dump", action="store_true", help="write per-record R-peak CSV")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("features", help="extract per-beat feature vectors")
    p.add_argument("--beats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--csv", action="store_true", help="also write features.csv")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("augment", help="rebalance train-side beats")
    p.add_argument("--beats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--strategy", choices=["none", "oversample", "ot"], default="ot")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the classifier on extracted features")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test fold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="full pipeline: manifest -> metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--strategy", choices=["none", "oversample", "ot"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare completed runs on a shared test set")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "compare" and len(args.runs) < 2:
        parser.error("compare needs at least two run directories")
    try:
        return args.func(args)
    except EcgotError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
