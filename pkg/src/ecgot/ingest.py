"""Dataset ingestion: WFDB records, superclass labels, splits, synthetic data.

Reads the low-rate (100 Hz, format 16) WFDB files plus the two metadata CSVs
of a PTB-XL style layout, assigns the five diagnostic superclasses, and
produces fold-based train/test splits. A deterministic synthetic 12-lead
generator provides desk-scale fixtures with ground-truth R-peak positions.
"""
from __future__ import annotations

import ast
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    EmptyDataset,
    InvalidArgument,
    ParseError,
    TruncatedSignal,
    UnsupportedFormat,
)

logger = logging.getLogger(__name__)

N_LEADS = 12
LEAD_NAMES = ("I", "II", "III", "AVR", "AVL", "AVF", "V1", "V2", "V3", "V4", "V5", "V6")
# WFDB default ADC gain (adu per physical unit) when a header omits it.
DEFAULT_GAIN = 200.0
# PTB-XL low-rate files: 16-bit, 1 uV/LSB -> 1000 adu per mV.
PTBXL_GAIN = 1000.0
PTBXL_SAMPLE_RATE = 100.0


class DiagnosticClass(IntEnum):
    """Five-way diagnostic superclass; the order fixes confusion-matrix indexing."""

    NORM = 0
    MI = 1
    STTC = 2
    CD = 3
    HYP = 4


CLASS_NAMES = tuple(c.name for c in DiagnosticClass)
N_CLASSES = len(DiagnosticClass)


@dataclass
class EcgRecord:
    """One 12-lead fixed-rate recording with metadata.

    ``leads`` is (12, L) in millivolts. ``true_r_peaks`` carries the generator's
    ground-truth R sample indices for synthetic records (None for real data).
    """

    record_id: str
    patient_id: str
    leads: np.ndarray
    sample_rate_hz: float
    label: DiagnosticClass | None
    split_fold: int | None
    true_r_peaks: np.ndarray | None = None

    def validate(self) -> None:
        if self.leads.ndim != 2 or self.leads.shape[0] != N_LEADS:
            raise ParseError(
                f"record {self.record_id}: expected {N_LEADS} leads, got shape {self.leads.shape}"
            )
        if self.leads.shape[1] < 1:
            raise ParseError(f"record {self.record_id}: empty signal")
        if not np.isfinite(self.leads).all():
            raise ParseError(f"record {self.record_id}: non-finite samples after decoding")
        if self.sample_rate_hz <= 0:
            raise ParseError(f"record {self.record_id}: non-positive sample rate")

    @property
    def n_samples(self) -> int:
        return self.leads.shape[1]


@dataclass
class DatasetStats:
    """Per-class patient/beat counts with percentages (Table-II style)."""

    patient_counts: dict[DiagnosticClass, int]
    beat_counts: dict[DiagnosticClass, int]
    patient_pct: dict[DiagnosticClass, float]
    beat_pct: dict[DiagnosticClass, float]

    def format_table(self) -> str:
        lines = [f"{'Category':<10}{'Patients':>10}{'Pct':>8}{'ECG beats':>12}{'Pct':>8}"]
        for c in DiagnosticClass:
            lines.append(
                f"{c.name:<10}{self.patient_counts[c]:>10}{self.patient_pct[c]:>7.1f}%"
                f"{self.beat_counts[c]:>12}{self.beat_pct[c]:>7.1f}%"
            )
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# WFDB header / signal handling (format 16 only)
# ---------------------------------------------------------------------------


@dataclass
class SignalSpec:
    file_name: str
    fmt: int
    gain: float
    units: str
    description: str


@dataclass
class WfdbHeader:
    record_id: str
    n_leads: int
    sample_rate_hz: float
    n_samples: int
    signals: list[SignalSpec] = field(default_factory=list)


def parse_wfdb_header(header_text: str) -> WfdbHeader:
    """Parse a WFDB ``.hea`` file. Only signal format 16 is accepted."""
    lines = header_text.splitlines()
    record_line = None
    record_lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        record_line = stripped
        record_lineno = lineno
        break
    if record_line is None:
        raise ParseError("no record line found", 1)

    tokens = record_line.split()
    if len(tokens) < 2:
        raise ParseError("record line needs at least 'name n_sig'", record_lineno)
    record_id = tokens[0].split("/")[0]
    try:
        n_leads = int(tokens[1])
    except ValueError:
        raise ParseError(f"bad signal count {tokens[1]!r}", record_lineno) from None
    sample_rate = 250.0
    n_samples = 0
    if len(tokens) >= 3:
        try:
            sample_rate = float(tokens[2].split("/")[0])
        except ValueError:
            raise ParseError(f"bad sample rate {tokens[2]!r}", record_lineno) from None
    if len(tokens) >= 4:
        try:
            n_samples = int(tokens[3])
        except ValueError:
            raise ParseError(f"bad sample count {tokens[3]!r}", record_lineno) from None

    signals: list[SignalSpec] = []
    lineno = record_lineno
    for raw in lines[record_lineno:]:
        lineno += 1
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if len(signals) == n_leads:
            break
        parts = stripped.split()
        if len(parts) < 2:
            raise ParseError("signal line needs at least 'file format'", lineno)
        fmt_token = parts[1]
        # strip optional xSPF, :skew, +offset suffixes
        for sep in ("x", ":", "+"):
            fmt_token = fmt_token.split(sep)[0]
        try:
            fmt = int(fmt_token)
        except ValueError:
            raise ParseError(f"bad format code {parts[1]!r}", lineno) from None
        if fmt != 16:
            raise UnsupportedFormat(f"signal format {fmt} not supported (only 16)")
        gain = DEFAULT_GAIN
        units = "mV"
        if len(parts) >= 3:
            gain_token = parts[2]
            if "/" in gain_token:
                gain_token, units = gain_token.split("/", 1)
            gain_token = gain_token.split("(")[0]
            if gain_token:
                try:
                    gain = float(gain_token)
                except ValueError:
                    raise ParseError(f"bad gain {parts[2]!r}", lineno) from None
            if gain == 0.0:
                gain = DEFAULT_GAIN
        description = parts[8] if len(parts) >= 9 else ""
        signals.append(SignalSpec(parts[0], fmt, gain, units, description))

    if len(signals) != n_leads:
        raise ParseError(
            f"header declares {n_leads} signals but lists {len(signals)}", lineno
        )
    return WfdbHeader(record_id, n_leads, sample_rate, n_samples, signals)


def decode_signal_16(
    raw: bytes, n_leads: int, n_samples: int, gains: np.ndarray
) -> np.ndarray:
    """Decode frame-interleaved little-endian int16 samples to millivolts."""
    expected = 2 * n_leads * n_samples
    if len(raw) != expected:
        raise TruncatedSignal(f"expected {expected} bytes, got {len(raw)}")
    adc = np.frombuffer(raw, dtype="<i2").reshape(n_samples, n_leads).T
    gains = np.asarray(gains, dtype=np.float64)
    return adc.astype(np.float64) / gains[:, None]


def encode_signal_16(leads_mv: np.ndarray, gains: np.ndarray) -> bytes:
    """Quantize millivolt samples to interleaved little-endian int16 frames."""
    gains = np.asarray(gains, dtype=np.float64)
    adc = np.rint(leads_mv * gains[:, None])
    adc = np.clip(adc, -32768, 32767).astype("<i2")
    return adc.T.tobytes()


def write_wfdb(record: EcgRecord, directory: Path, gain: float = PTBXL_GAIN) -> Path:
    """Write a record as a ``.hea``/``.dat`` pair; returns the header path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    gains = np.full(N_LEADS, gain)
    dat_name = f"{record.record_id}.dat"
    lines = [
        f"{record.record_id} {N_LEADS} {record.sample_rate_hz:g} {record.n_samples}"
    ]
    for i in range(N_LEADS):
        lines.append(f"{dat_name} 16 {gain:g}/mV 16 0 0 0 0 {LEAD_NAMES[i]}")
    hea_path = directory / f"{record.record_id}.hea"
    hea_path.write_text("\n".join(lines) + "\n")
    (directory / dat_name).write_bytes(encode_signal_16(record.leads, gains))
    return hea_path


def read_wfdb_record(hea_path: Path) -> tuple[WfdbHeader, np.ndarray]:
    """Read a header/dat pair; enforces the 12-lead layout used downstream."""
    hea_path = Path(hea_path)
    header = parse_wfdb_header(hea_path.read_text())
    if header.n_leads != N_LEADS:
        raise ParseError(
            f"{hea_path.name}: {header.n_leads} leads, {N_LEADS} required", 1
        )
    dat_path = hea_path.parent / header.signals[0].file_name
    gains = np.array([s.gain for s in header.signals])
    leads = decode_signal_16(
        dat_path.read_bytes(), header.n_leads, header.n_samples, gains
    )
    return header, leads


# ---------------------------------------------------------------------------
# labels, stats, splits
# ---------------------------------------------------------------------------


def load_scp_statements(csv_path: Path) -> dict[str, str]:
    """Map SCP code -> diagnostic superclass name from ``scp_statements.csv``."""
    df = pd.read_csv(csv_path, index_col=0)
    if "diagnostic_class" not in df.columns:
        raise ParseError(f"{csv_path}: missing diagnostic_class column")
    table = {}
    for code, row in df.iterrows():
        klass = row["diagnostic_class"]
        if isinstance(klass, str) and klass in CLASS_NAMES:
            table[str(code)] = klass
    return table


def assign_superclass(
    scp_codes: dict[str, float], table: dict[str, str]
) -> DiagnosticClass | None:
    """Superclass of the highest-likelihood diagnostic code; None if unlabeled.

    Likelihood ties resolve to the lowest class index so the result is a pure
    function of the inputs.
    """
    best: tuple[float, int] | None = None
    for code, likelihood in scp_codes.items():
        name = table.get(code)
        if name is None:
            if code not in table:
                logger.warning("unknown SCP code %r skipped", code)
            continue
        klass = DiagnosticClass[name]
        key = (-float(likelihood), int(klass))
        if best is None or key < best:
            best = key
    if best is None:
        return None
    return DiagnosticClass(best[1])


def dataset_stats(
    records: list[EcgRecord], beats_per_record: dict[str, int] | None = None
) -> DatasetStats:
    """Per-class patient counts, beat counts, and percentages."""
    if not records:
        raise EmptyDataset("no records")
    patients: dict[DiagnosticClass, set[str]] = {c: set() for c in DiagnosticClass}
    beats: dict[DiagnosticClass, int] = {c: 0 for c in DiagnosticClass}
    for rec in records:
        if rec.label is None:
            continue
        patients[rec.label].add(rec.patient_id)
        if beats_per_record is not None:
            beats[rec.label] += int(beats_per_record.get(rec.record_id, 0))
    patient_counts = {c: len(patients[c]) for c in DiagnosticClass}
    total_p = sum(patient_counts.values())
    total_b = sum(beats.values())
    patient_pct = {
        c: (100.0 * patient_counts[c] / total_p if total_p else 0.0)
        for c in DiagnosticClass
    }
    beat_pct = {
        c: (100.0 * beats[c] / total_b if total_b else 0.0) for c in DiagnosticClass
    }
    return DatasetStats(patient_counts, beats, patient_pct, beat_pct)


def split_train_test(
    records: list[EcgRecord],
) -> tuple[list[EcgRecord], list[EcgRecord]]:
    """Folds 1-9 train, fold 10 test. Records without a fold are skipped."""
    train, test = [], []
    for rec in records:
        if rec.split_fold is None:
            logger.warning("record %s skipped: no split fold", rec.record_id)
            continue
        (test if rec.split_fold == 10 else train).append(rec)
    return train, test


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

# (wave, per-lead projection): rough limb/chest amplitudes, lead II dominant R.
_LEAD_PROJ = {
    "P": np.array([0.7, 1.0, 0.5, -0.8, 0.3, 0.7, 0.3, 0.4, 0.5, 0.6, 0.7, 0.7]),
    "Q": np.array([0.8, 1.0, 0.6, -0.7, 0.4, 0.8, 0.5, 0.6, 0.7, 0.8, 0.9, 0.8]),
    "R": np.array([0.6, 1.0, 0.5, -0.6, 0.2, 0.8, -0.4, 0.5, 0.9, 1.0, 0.9, 0.7]),
    "S": np.array([0.7, 1.0, 0.6, -0.5, 0.3, 0.8, 1.2, 1.0, 0.7, 0.5, 0.4, 0.4]),
    "T": np.array([0.7, 1.0, 0.4, -0.7, 0.2, 0.8, 0.4, 0.8, 0.9, 0.9, 0.8, 0.7]),
    "ST": np.array([0.6, 1.0, 0.5, -0.6, 0.2, 0.8, 0.8, 1.0, 0.9, 0.8, 0.7, 0.6]),
}

# base waves: (offset from R in s, width sigma in s, amplitude in mV on lead II)
_BASE_WAVES = {
    "P": (-0.18, 0.025, 0.15),
    "Q": (-0.035, 0.010, -0.12),
    "R": (0.0, 0.012, 1.0),
    "S": (0.035, 0.012, -0.25),
    "T": (0.22, 0.045, 0.35),
}


def _class_waves(label: DiagnosticClass) -> dict[str, tuple[float, float, float]]:
    """Per-class template shifts: each class perturbs the NORM morphology."""
    waves = dict(_BASE_WAVES)
    if label == DiagnosticClass.MI:
        off, sig, amp = waves["Q"]
        waves["Q"] = (off, sig, amp * 3.5)
        off, sig, amp = waves["R"]
        waves["R"] = (off, sig, amp * 0.65)
        off, sig, amp = waves["T"]
        waves["T"] = (off, sig, amp * -0.6)
    elif label == DiagnosticClass.STTC:
        waves["ST"] = (0.10, 0.050, 0.25)
        off, sig, amp = waves["T"]
        waves["T"] = (off, sig, amp * 1.4)
    elif label == DiagnosticClass.CD:
        for w in ("Q", "R", "S"):
            off, sig, amp = waves[w]
            waves[w] = (off, sig * 2.2, amp * 0.85)
    elif label == DiagnosticClass.HYP:
        off, sig, amp = waves["R"]
        waves["R"] = (off, sig, amp * 1.45)
        off, sig, amp = waves["S"]
        waves["S"] = (off, sig, amp * 1.4)
    return waves


def _apportion(n: int, proportions: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment of n items over the classes."""
    raw = proportions * n
    counts = np.floor(raw).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    for i in range(remainder):
        counts[order[i]] += 1
    return counts


def synthesize_record_leads(
    rng: np.random.Generator,
    label: DiagnosticClass,
    fs: float,
    duration_s: float,
    noise_mv: float,
    heart_rate_bpm: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One synthetic 12-lead signal; returns (leads (12,L), r_peak_indices)."""
    n = int(round(fs * duration_s))
    t = np.arange(n) / fs
    if heart_rate_bpm is None:
        heart_rate_bpm = rng.uniform(60.0, 92.0)
    rr = 60.0 / heart_rate_bpm
    beat_times = []
    t_beat = rng.uniform(0.15, 0.15 + rr)
    while t_beat < duration_s - 0.05:
        beat_times.append(t_beat)
        t_beat += rr * (1.0 + rng.uniform(-0.03, 0.03))
    beat_times = np.asarray(beat_times)

    waves = _class_waves(label)
    scale = rng.lognormal(mean=0.0, sigma=0.08)
    leads = np.zeros((N_LEADS, n))
    for name, (off, sig, amp) in waves.items():
        proj = _LEAD_PROJ[name]
        for tb in beat_times:
            bump = np.exp(-0.5 * ((t - tb - off) / sig) ** 2)
            leads += (amp * scale) * proj[:, None] * bump[None, :]

    if noise_mv > 0:
        white = rng.normal(0.0, noise_mv, size=(N_LEADS, n))
        kernel = np.hanning(7)
        kernel /= kernel.sum()
        smooth = np.apply_along_axis(
            lambda row: np.convolve(row, kernel, mode="same"), 1, white
        )
        wander_f = rng.uniform(0.15, 0.35)
        wander_phase = rng.uniform(0, 2 * np.pi, size=(N_LEADS, 1))
        leads += smooth
        leads += 0.6 * noise_mv * np.sin(2 * np.pi * wander_f * t[None, :] + wander_phase)

    r_peaks = np.round(beat_times * fs).astype(int)
    r_peaks = r_peaks[(r_peaks >= 0) & (r_peaks < n)]
    return leads, r_peaks


def generate_synthetic_ecg(
    n_records: int,
    class_mix: dict[DiagnosticClass, float] | np.ndarray,
    seed: int,
    fs: float = PTBXL_SAMPLE_RATE,
    duration_s: float = 10.0,
    noise_mv: float = 0.05,
) -> list[EcgRecord]:
    """Deterministic synthetic 12-lead records with ground-truth R peaks.

    ``class_mix`` gives the record proportions per class (must sum to 1);
    counts are settled by largest-remainder apportionment so exact mixes like
    uniform over 100 records give exactly 20 per class.
    """
    if n_records <= 0:
        raise InvalidArgument("n_records must be positive")
    if isinstance(class_mix, dict):
        proportions = np.array([class_mix.get(c, 0.0) for c in DiagnosticClass], float)
    else:
        proportions = np.asarray(class_mix, dtype=float)
    if proportions.shape != (N_CLASSES,):
        raise InvalidArgument("class_mix must cover the five classes")
    if abs(proportions.sum() - 1.0) > 1e-9 or (proportions < 0).any():
        raise InvalidArgument("class proportions must be nonnegative and sum to 1")

    counts = _apportion(n_records, proportions)
    rng = np.random.default_rng(seed)
    records: list[EcgRecord] = []
    idx = 0
    for klass, count in zip(DiagnosticClass, counts):
        for k in range(count):
            leads, r_peaks = synthesize_record_leads(rng, klass, fs, duration_s, noise_mv)
            fold = (k % 10) + 1
            records.append(
                EcgRecord(
                    record_id=f"syn{idx:05d}",
                    patient_id=f"synp{idx:05d}",
                    leads=leads,
                    sample_rate_hz=fs,
                    label=klass,
                    split_fold=fold,
                    true_r_peaks=r_peaks,
                )
            )
            idx += 1
    return records


# ---------------------------------------------------------------------------
# PTB-XL style dataset loading and the manifest interface
# ---------------------------------------------------------------------------


def load_ptbxl_records(data_root: Path) -> list[EcgRecord]:
    """Load a PTB-XL style tree: database CSV + statement table + WFDB files.

    Records with no diagnostic code (Unlabeled) are dropped.
    """
    data_root = Path(data_root)
    db_path = data_root / "ptbxl_database.csv"
    scp_path = data_root / "scp_statements.csv"
    if not db_path.exists():
        raise EmptyDataset(f"missing metadata: {db_path}")
    if not scp_path.exists():
        raise EmptyDataset(f"missing metadata: {scp_path}")
    table = load_scp_statements(scp_path)
    df = pd.read_csv(db_path)
    required = {"ecg_id", "patient_id", "scp_codes", "strat_fold", "filename_lr"}
    missing = required - set(df.columns)
    if missing:
        raise ParseError(f"{db_path}: missing columns {sorted(missing)}")
    records = []
    for _, row in df.iterrows():
        codes = ast.literal_eval(str(row["scp_codes"]))
        label = assign_superclass(codes, table)
        if label is None:
            continue
        hea_path = data_root / f"{row['filename_lr']}.hea"
        header, leads = read_wfdb_record(hea_path)
        rec = EcgRecord(
            record_id=str(row["ecg_id"]),
            patient_id=str(row["patient_id"]),
            leads=leads,
            sample_rate_hz=header.sample_rate_hz,
            label=label,
            split_fold=int(row["strat_fold"]),
        )
        rec.validate()
        records.append(rec)
    return records


def write_manifest(records: list[EcgRecord], paths: dict[str, str], out_path: Path) -> Path:
    """Write the normalized dataset manifest CSV."""
    rows = [
        {
            "record_id": r.record_id,
            "patient_id": r.patient_id,
            "label": r.label.name if r.label is not None else "",
            "fold": r.split_fold if r.split_fold is not None else "",
            "path": paths.get(r.record_id, ""),
        }
        for r in records
    ]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=["record_id", "patient_id", "label", "fold", "path"]).to_csv(
        out_path, index=False
    )
    return out_path


def read_manifest(manifest_path: Path) -> list[EcgRecord]:
    """Load all records referenced by a manifest CSV (paths relative to it)."""
    manifest_path = Path(manifest_path)
    df = pd.read_csv(manifest_path)
    base = manifest_path.parent
    records = []
    for _, row in df.iterrows():
        hea_path = Path(str(row["path"]))
        if not hea_path.is_absolute():
            hea_path = base / hea_path
        header, leads = read_wfdb_record(hea_path)
        label = DiagnosticClass[str(row["label"])] if str(row["label"]) else None
        fold = int(row["fold"]) if str(row["fold"]) not in ("", "nan") else None
        rec = EcgRecord(
            record_id=str(row["record_id"]),
            patient_id=str(row["patient_id"]),
            leads=leads,
            sample_rate_hz=header.sample_rate_hz,
            label=label,
            split_fold=fold,
        )
        rec.validate()
        records.append(rec)
    return records
