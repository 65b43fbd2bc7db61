"""End-to-end orchestration: ingest, preprocess, features, augment, train, eval.

Every run directory is self-describing: a config snapshot, the test-set
digest (computed before any augmentation), the checkpoint, the metrics JSON,
the confusion CSV/SVG, the training log, and (for transport augmentation)
the provenance sidecar. Reruns with an identical snapshot reproduce the
metrics JSON byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import dsp, evaluate, features, ingest, model, ot
from .config import PipelineConfig
from .errors import EmptyDataset, StageFailure
from .ingest import CLASS_NAMES, DiagnosticClass, EcgRecord, N_CLASSES

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# beat archives (binary blobs + index CSV)
# ---------------------------------------------------------------------------


def save_beats(
    windows: np.ndarray,
    meta: pd.DataFrame,
    out_dir: Path,
    stem: str = "beats",
) -> Path:
    """Write stacked beat windows as little-endian float32 blobs + index CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(windows, dtype="<f4").tofile(out_dir / f"{stem}.f32")
    meta.to_csv(out_dir / f"{stem}.csv", index=False)
    return out_dir / f"{stem}.f32"


def load_beats(out_dir: Path, stem: str = "beats") -> tuple[np.ndarray, pd.DataFrame]:
    out_dir = Path(out_dir)
    meta = pd.read_csv(out_dir / f"{stem}.csv")
    n = len(meta)
    w = int(meta["window_samples"].iloc[0]) if n else 0
    raw = np.fromfile(out_dir / f"{stem}.f32", dtype="<f4")
    windows = raw.reshape(n, ingest.N_LEADS, w).astype(np.float64)
    return windows, meta


def beats_to_arrays(beats: list[dsp.Beat]) -> tuple[np.ndarray, np.ndarray]:
    """Stack beats into (n, 12, W) windows and an int label vector."""
    if not beats:
        return np.empty((0, ingest.N_LEADS, 0)), np.empty(0, dtype=np.int64)
    windows = np.stack([b.window for b in beats])
    labels = np.array(
        [int(b.label) if b.label is not None else -1 for b in beats], dtype=np.int64
    )
    return windows, labels


def preprocess_records(
    records: list[EcgRecord], cfg: PipelineConfig
) -> tuple[list[dsp.Beat], dict]:
    """Filter every record, detect R peaks on lead II, and segment beats."""
    beats: list[dsp.Beat] = []
    skipped_edges = 0
    per_record_peaks: dict[str, int] = {}
    for rec in records:
        rec_beats, skipped, r_peaks = dsp.preprocess_record(
            rec,
            n_points=cfg.dsp.n_points,
            notch_f0_hz=cfg.dsp.notch_f0_hz,
            notch_q=cfg.dsp.notch_q,
            window_samples=cfg.dsp.window_samples,
        )
        beats.extend(rec_beats)
        skipped_edges += skipped
        per_record_peaks[rec.record_id] = int(len(r_peaks))
    report = {"n_beats": len(beats), "skipped_edge_peaks": skipped_edges}
    return beats, report


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


@dataclass
class AugmentOutput:
    matrix: np.ndarray
    labels: np.ndarray
    provenance: pd.DataFrame | None = None
    added_rows: int = 0


def synthesize_minority_beats(
    cfg: PipelineConfig,
    train_windows: np.ndarray,
    train_labels: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, pd.DataFrame]:
    """Transport NORM beats onto every minority class up to the majority count.

    Returns (synthetic windows (n, 12, W), labels, provenance table).
    """
    counts = {c: int((train_labels == int(c)).sum()) for c in DiagnosticClass}
    stats = ingest.DatasetStats(
        patient_counts={c: 0 for c in DiagnosticClass},
        beat_counts=counts,
        patient_pct={c: 0.0 for c in DiagnosticClass},
        beat_pct={c: 0.0 for c in DiagnosticClass},
    )
    tasks = ot.plan_augmentation(stats)
    n_leads, w = train_windows.shape[1], train_windows.shape[2]
    flat = train_windows.reshape(train_windows.shape[0], n_leads * w)
    norm_points = flat[train_labels == int(DiagnosticClass.NORM)]
    chunks, labels, prov_rows = [], [], []
    for task in tasks:
        target_points = flat[train_labels == int(task.target_class)]
        result = ot.augment_class(
            norm_points,
            target_points,
            task.target_class,
            task.n_synthetic,
            batch_size=cfg.ot.batch_size,
            gamma_scale=cfg.ot.gamma_scale,
            seed=cfg.augment.seed + int(task.target_class),
            max_iter=cfg.ot.max_iter,
            tol=cfg.ot.tol,
        )
        chunks.append(result.points.reshape(-1, n_leads, w))
        labels.append(
            np.full(result.points.shape[0], int(task.target_class), dtype=np.int64)
        )
        row = 0
        for batch in result.batches:
            for j in range(batch.n_produced):
                if row >= result.points.shape[0]:
                    break
                prov_rows.append(
                    {
                        "synth_id": f"synth_{task.target_class.name}_{row:05d}",
                        "source_class": task.source_class.name,
                        "target_class": task.target_class.name,
                        "seed": batch.batch_seed,
                        "gamma": batch.gamma,
                        "marginal_error": batch.marginal_error,
                        "source_index": int(batch.source_indices[j]),
                        "batch_index": batch.batch_index,
                    }
                )
                row += 1
    prov = pd.DataFrame(
        prov_rows,
        columns=[
            "synth_id",
            "source_class",
            "target_class",
            "seed",
            "gamma",
            "marginal_error",
            "source_index",
            "batch_index",
        ],
    )
    if not chunks:
        return np.empty((0, n_leads, w)), np.empty(0, dtype=np.int64), prov
    return np.concatenate(chunks), np.concatenate(labels), prov


def apply_strategy(
    cfg: PipelineConfig,
    train_windows: np.ndarray,
    train_labels: np.ndarray,
    train_matrix: np.ndarray,
    sample_rate_hz: float = 100.0,
) -> AugmentOutput:
    """Rebalance the training side according to the configured strategy."""
    strategy = cfg.augment.strategy
    if strategy == "none":
        return AugmentOutput(train_matrix, train_labels)
    if strategy == "oversample":
        rng = np.random.default_rng(cfg.augment.seed)
        idx = evaluate.oversample_indices(train_labels, rng)
        return AugmentOutput(
            train_matrix[idx], train_labels[idx], added_rows=idx.size - train_labels.size
        )
    synth_windows, synth_labels, prov = synthesize_minority_beats(
        cfg, train_windows, train_labels
    )
    if synth_windows.shape[0] == 0:
        return AugmentOutput(train_matrix, train_labels, provenance=prov)
    matrix, kept = features.assemble_vectors_batch(
        synth_windows,
        sample_rate_hz=sample_rate_hz,
        z8_uses_shape_mean=cfg.features.z8_uses_shape_mean,
    )
    out_matrix = np.concatenate([train_matrix, matrix], axis=0)
    out_labels = np.concatenate([train_labels, synth_labels[kept]])
    return AugmentOutput(
        out_matrix,
        out_labels,
        provenance=prov,
        added_rows=out_labels.size - train_labels.size,
    )


# ---------------------------------------------------------------------------
# the run itself
# ---------------------------------------------------------------------------


def _digest_matrix(matrix: np.ndarray, labels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    return h.hexdigest()


def standardize_fit(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return mean, std


@dataclass
class RunResult:
    run_dir: Path
    metrics: evaluate.EvalMetrics
    confusion: evaluate.ConfusionMatrix
    test_digest: str
    metrics_json: dict = field(default_factory=dict)


def run_from_arrays(
    cfg: PipelineConfig,
    train_windows: np.ndarray,
    train_labels: np.ndarray,
    test_windows: np.ndarray,
    test_labels: np.ndarray,
    out_dir: Path,
    sample_rate_hz: float = 100.0,
) -> RunResult:
    """Features -> strategy -> train -> eval on pre-segmented beat windows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return _run_from_arrays_inner(
            cfg, train_windows, train_labels, test_windows, test_labels, out_dir, sample_rate_hz
        )
    except StageFailure:
        _quarantine(out_dir)
        raise
    except Exception as exc:  # pragma: no cover - defensive
        _quarantine(out_dir)
        raise StageFailure("run", exc) from exc


def _quarantine(out_dir: Path) -> None:
    failed = out_dir / "failed"
    failed.mkdir(exist_ok=True)
    for item in list(out_dir.iterdir()):
        if item.name == "failed":
            continue
        shutil.move(str(item), str(failed / item.name))


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageFailure):
                raise StageFailure(name, exc) from exc
            return False

    return _Ctx()


def _run_from_arrays_inner(
    cfg: PipelineConfig,
    train_windows: np.ndarray,
    train_labels: np.ndarray,
    test_windows: np.ndarray,
    test_labels: np.ndarray,
    out_dir: Path,
    sample_rate_hz: float,
) -> RunResult:
    from .config import save_config

    save_config(cfg, out_dir / "config_snapshot.json")

    with _stage("features"):
        test_matrix, kept_test = features.assemble_vectors_batch(
            test_windows, sample_rate_hz, cfg.features.z8_uses_shape_mean
        )
        y_test = test_labels[kept_test]
        test_digest = _digest_matrix(test_matrix, y_test)
        train_matrix, kept_train = features.assemble_vectors_batch(
            train_windows, sample_rate_hz, cfg.features.z8_uses_shape_mean
        )
        y_train = train_labels[kept_train]
        if y_train.size == 0 or y_test.size == 0:
            raise EmptyDataset("no usable beats after feature extraction")

    with _stage("augment"):
        augmented = apply_strategy(
            cfg, train_windows[kept_train], y_train, train_matrix, sample_rate_hz
        )
        if augmented.provenance is not None:
            augmented.provenance.to_csv(out_dir / "provenance.csv", index=False)

    with _stage("train"):
        mean, std = standardize_fit(augmented.matrix)
        x_train = (augmented.matrix - mean) / std
        params, log = model.train(x_train, augmented.labels, cfg.model, cfg.train)
        log_lines = ["epoch,train_loss,val_accuracy"] + [
            f"{e},{repr(l)},{repr(a)}" for e, l, a in log
        ]
        (out_dir / "training_log.csv").write_text("\n".join(log_lines) + "\n")
        scaler_params = dict(params)
        scaler_params["scaler.mean"] = mean
        scaler_params["scaler.scale"] = std
        model.save_checkpoint(
            out_dir / "checkpoint.bin",
            scaler_params,
            cfg.model,
            meta={"strategy": cfg.augment.strategy, "seed": cfg.train.seed},
        )

    with _stage("eval"):
        # evaluate through the serialized checkpoint so `run` and a later
        # standalone `eval` of the same artifacts agree exactly
        loaded, loaded_cfg, _ = model.load_checkpoint(out_dir / "checkpoint.bin")
        l_mean = loaded.pop("scaler.mean")
        l_std = loaded.pop("scaler.scale")
        x_test = (test_matrix - l_mean) / l_std
        probs = model.forward(x_test, loaded, loaded_cfg)
        preds = probs.argmax(axis=1)
        cm = evaluate.confusion(y_test, preds)
        m = evaluate.metrics(cm)
        evaluate.write_confusion_csv(cm, out_dir / "confusion.csv")
        evaluate.write_confusion_svg(
            cm, f"{cfg.augment.strategy} (seed {cfg.train.seed})", out_dir / "confusion.svg"
        )

    with _stage("report"):
        config_digest = cfg.digest()
        run_id = hashlib.sha256(f"{config_digest}:{test_digest}".encode()).hexdigest()[:16]
        payload = {
            "run_id": run_id,
            "strategy": cfg.augment.strategy,
            "seed": cfg.train.seed,
            "config_digest": config_digest,
            "test_digest": test_digest,
            "train_rows": int(augmented.labels.size),
            "augmented_rows": int(augmented.added_rows),
            "test_rows": int(y_test.size),
            "train_class_counts": {
                CLASS_NAMES[c]: int((augmented.labels == c).sum()) for c in range(N_CLASSES)
            },
            "metrics": m.to_dict(),
        }
        (out_dir / "metrics.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n"
        )
    return RunResult(out_dir, m, cm, test_digest, payload)


def run_pipeline(cfg: PipelineConfig, manifest_path: Path, out_dir: Path) -> RunResult:
    """Full record-level pipeline from a dataset manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        with _stage("ingest"):
            records = ingest.read_manifest(manifest_path)
            if not records:
                raise EmptyDataset("manifest lists no records")
        with _stage("split"):
            train_records, test_records = ingest.split_train_test(records)
        with _stage("preprocess"):
            train_beats, train_report = preprocess_records(train_records, cfg)
            test_beats, test_report = preprocess_records(test_records, cfg)
            (out_dir / "preprocess_report.json").write_text(
                json.dumps({"train": train_report, "test": test_report}, sort_keys=True)
                + "\n"
            )
        train_windows, train_labels = beats_to_arrays(train_beats)
        test_windows, test_labels = beats_to_arrays(test_beats)
        sample_rate = records[0].sample_rate_hz
        return run_from_arrays(
            cfg, train_windows, train_labels, test_windows, test_labels, out_dir, sample_rate
        )
    except StageFailure:
        _quarantine(out_dir)
        raise


# ---------------------------------------------------------------------------
# synthetic dataset construction
# ---------------------------------------------------------------------------


def build_synthetic_dataset(
    out_dir: Path,
    n_records: int,
    seed: int,
    class_mix: dict[DiagnosticClass, float] | None = None,
    noise_mv: float = 0.05,
) -> Path:
    """Generate records, store them as WFDB pairs, and write the manifest."""
    out_dir = Path(out_dir)
    records_dir = out_dir / "records"
    if class_mix is None:
        class_mix = {c: 1.0 / N_CLASSES for c in DiagnosticClass}
    records = ingest.generate_synthetic_ecg(n_records, class_mix, seed, noise_mv=noise_mv)
    paths = {}
    for rec in records:
        hea = ingest.write_wfdb(rec, records_dir)
        paths[rec.record_id] = str(hea.relative_to(out_dir))
    manifest = ingest.write_manifest(records, paths, out_dir / "manifest.csv")
    return manifest


def prepare_study_beats(
    seed: int,
    train_beat_targets: dict[DiagnosticClass, int],
    test_beats_per_class: int,
    cfg: PipelineConfig,
    noise_mv: float = 0.2,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Desk-scale imbalance study fixture with exact per-class beat counts.

    Generates records class by class, preprocesses them, and truncates the
    segmented beats at the requested counts for the train and test sides.
    """
    rng = np.random.default_rng([seed, 2024])

    def collect(klass: DiagnosticClass, target: int, side: str) -> np.ndarray:
        got: list[np.ndarray] = []
        count = 0
        serial = 0
        while count < target:
            leads, _ = ingest.synthesize_record_leads(
                rng, klass, 100.0, 10.0, noise_mv
            )
            rec = EcgRecord(
                record_id=f"study_{side}_{klass.name}_{serial:04d}",
                patient_id=f"p{side}{klass.name}{serial:04d}",
                leads=leads,
                sample_rate_hz=100.0,
                label=klass,
                split_fold=10 if side == "test" else 1,
            )
            beats, _, _ = dsp.preprocess_record(
                rec,
                n_points=cfg.dsp.n_points,
                notch_f0_hz=cfg.dsp.notch_f0_hz,
                notch_q=cfg.dsp.notch_q,
                window_samples=cfg.dsp.window_samples,
            )
            for b in beats:
                got.append(b.window)
                count += 1
            serial += 1
            if serial > 50 * (target + 1):  # safety; never hit in practice
                raise RuntimeError("synthetic generator failed to produce beats")
        return np.stack(got[:target])

    train_chunks, train_labels = [], []
    test_chunks, test_labels = [], []
    for klass in DiagnosticClass:
        target = int(train_beat_targets.get(klass, 0))
        if target > 0:
            w = collect(klass, target, "train")
            train_chunks.append(w)
            train_labels.append(np.full(target, int(klass), dtype=np.int64))
        if test_beats_per_class > 0:
            w = collect(klass, test_beats_per_class, "test")
            test_chunks.append(w)
            test_labels.append(np.full(test_beats_per_class, int(klass), dtype=np.int64))
    return (
        np.concatenate(train_chunks),
        np.concatenate(train_labels),
        np.concatenate(test_chunks),
        np.concatenate(test_labels),
    )
