"""Beat-level evaluation: confusion matrices, accuracy/F1, run comparison."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyEvaluation, IncomparableRuns, InvalidArgument
from .ingest import CLASS_NAMES, N_CLASSES


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted; class order NORM..HYP."""

    counts: np.ndarray  # (n, n) int64

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        """Per-true-class percentage form (rows sum to 100 where populated)."""
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(sums > 0, 100.0 * self.counts / sums, 0.0)
        return pct


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalMetrics:
    average_accuracy: float
    macro_f1: float
    per_class: list[ClassMetrics]

    def to_dict(self) -> dict:
        return {
            "average_accuracy": self.average_accuracy,
            "macro_f1": self.macro_f1,
            "per_class": [
                {
                    "name": c.name,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                }
                for c in self.per_class
            ],
        }


def confusion(
    true_labels, predicted_labels, n_classes: int = N_CLASSES
) -> ConfusionMatrix:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape:
        raise InvalidArgument("label arrays must have equal length")
    if true_labels.size and (
        true_labels.min() < 0
        or true_labels.max() >= n_classes
        or predicted_labels.min() < 0
        or predicted_labels.max() >= n_classes
    ):
        raise InvalidArgument(f"labels must lie in 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix, class_names: tuple[str, ...] = CLASS_NAMES) -> EvalMetrics:
    """Average accuracy plus per-class precision/recall/F1 and the macro F1.

    Degenerate 0/0 ratios are defined as 0.
    """
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise EmptyEvaluation("confusion matrix is empty")
    accuracy = float(np.trace(counts) / total)
    per_class = []
    f1s = []
    n = counts.shape[0]
    for c in range(n):
        tp = counts[c, c]
        support = int(counts[c].sum())
        pred = int(counts[:, c].sum())
        precision = float(tp / pred) if pred else 0.0
        recall = float(tp / support) if support else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if (precision + recall) > 0
            else 0.0
        )
        name = class_names[c] if c < len(class_names) else str(c)
        per_class.append(ClassMetrics(name, precision, recall, f1, support))
        f1s.append(f1)
    return EvalMetrics(accuracy, float(np.mean(f1s)), per_class)


def oversample_indices(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Duplicate minority rows with replacement up to the majority class count.

    Returns indices into the original rows: all originals plus the sampled
    duplicates, so the rebalanced set has equal class counts.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InvalidArgument("empty label array")
    classes, counts = np.unique(labels, return_counts=True)
    majority = counts.max()
    picked = [np.arange(labels.size)]
    for klass, count in zip(classes, counts):
        deficit = int(majority - count)
        if deficit <= 0:
            continue
        pool = np.nonzero(labels == klass)[0]
        picked.append(rng.choice(pool, size=deficit, replace=True))
    return np.concatenate(picked)


# ---------------------------------------------------------------------------
# run comparison
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    run_dir: Path
    strategy: str
    seed: int
    test_digest: str
    metrics: dict
    confusion: np.ndarray

    @classmethod
    def load(cls, run_dir: Path) -> "RunSummary":
        run_dir = Path(run_dir)
        payload = json.loads((run_dir / "metrics.json").read_text())
        confusion_rows = np.loadtxt(run_dir / "confusion.csv", delimiter=",", skiprows=1, usecols=range(1, N_CLASSES + 1))
        return cls(
            run_dir=run_dir,
            strategy=payload["strategy"],
            seed=payload["seed"],
            test_digest=payload["test_digest"],
            metrics=payload,
            confusion=np.asarray(confusion_rows, dtype=np.int64),
        )


def compare_runs(runs: list[RunSummary], out_dir: Path) -> Path:
    """Side-by-side comparison table plus SVG figures; runs must share a test set."""
    if len(runs) < 1:
        raise InvalidArgument("nothing to compare")
    digests = {r.test_digest for r in runs}
    if len(digests) != 1:
        raise IncomparableRuns(f"test-set digests differ: {sorted(digests)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    header = ["strategy", "seed", "average_accuracy", "macro_f1"] + [
        f"recall_{n}" for n in CLASS_NAMES
    ]
    lines = [",".join(header)]
    for r in runs:
        recalls = [c["recall"] for c in r.metrics["metrics"]["per_class"]]
        lines.append(
            ",".join(
                [r.strategy, str(r.seed)]
                + [repr(r.metrics["metrics"]["average_accuracy"]), repr(r.metrics["metrics"]["macro_f1"])]
                + [repr(v) for v in recalls]
            )
        )
    table_path = out_dir / "comparison.csv"
    table_path.write_text("\n".join(lines) + "\n")

    _write_bar_chart(runs, out_dir / "comparison.svg")
    for r in runs:
        _write_heatmap(r, out_dir / f"confusion_{r.strategy}_{r.seed}.svg")
    return table_path


def _write_bar_chart(runs: list[RunSummary], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [f"{r.strategy}/{r.seed}" for r in runs]
    accs = [r.metrics["metrics"]["average_accuracy"] for r in runs]
    f1s = [r.metrics["metrics"]["macro_f1"] for r in runs]
    x = np.arange(len(runs))
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(runs), 3.2))
    ax.bar(x - 0.18, accs, width=0.36, label="accuracy")
    ax.bar(x + 0.18, f1s, width=0.36, label="macro F1")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _write_heatmap(run: RunSummary, path: Path) -> None:
    write_confusion_svg(ConfusionMatrix(run.confusion), f"{run.strategy} (seed {run.seed})", path)


def write_confusion_svg(cm: ConfusionMatrix, title: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pct = cm.row_normalized()
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(pct, cmap="Blues", vmin=0, vmax=100)
    ax.set_xticks(range(N_CLASSES), CLASS_NAMES)
    ax.set_yticks(range(N_CLASSES), CLASS_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    for i in range(N_CLASSES):
        for j in range(N_CLASSES):
            ax.text(j, i, f"{pct[i, j]:.0f}", ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def write_confusion_csv(cm: ConfusionMatrix, path: Path) -> None:
    lines = ["true\\pred," + ",".join(CLASS_NAMES)]
    for i, name in enumerate(CLASS_NAMES):
        lines.append(name + "," + ",".join(str(int(v)) for v in cm.counts[i]))
    Path(path).write_text("\n".join(lines) + "\n")
