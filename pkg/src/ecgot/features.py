"""Per-beat statistical features: 16 time-domain and 10 frequency-domain per lead.

The model input concatenates, lead by lead, the 30 downsampled raw samples,
the 16 time statistics of the downsampled window, and the 10 spectral
statistics of the native-rate window: 12 x (30 + 16 + 10) = 672 values.
Scalar entry points exist for every statistic; the pipeline uses the batch
variants, which share the exact same arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import Beat, Spectrum, downsample_batch, fft_magnitude
from .errors import AllZeroSpectrum, InvalidArgument
from .ingest import DiagnosticClass, N_LEADS

MODE_BINS = 64
RAW_SAMPLES_PER_LEAD = 30

TIME_FEATURE_NAMES = (
    "maximum",
    "minimum",
    "range",
    "mean",
    "median",
    "mode",
    "std_dev",
    "rms",
    "mean_square",
    "third_central_moment",
    "skewness",
    "kurtosis",
    "kurtosis_factor",
    "waveform_factor",
    "pulse_factor",
    "margin_factor",
)

FREQ_FEATURE_NAMES = (
    "fft_mean",
    "fft_variance",
    "fft_entropy",
    "fft_energy",
    "fft_skew",
    "fft_kurt",
    "fft_shape_mean",
    "fft_shape_std",
    "fft_shape_skew",
    "fft_shape_kurt",
)

FEATURES_PER_LEAD = RAW_SAMPLES_PER_LEAD + len(TIME_FEATURE_NAMES) + len(FREQ_FEATURE_NAMES)
VECTOR_LENGTH = N_LEADS * FEATURES_PER_LEAD


@dataclass
class TimeFeatures:
    maximum: float
    minimum: float
    range: float
    mean: float
    median: float
    mode: float
    std_dev: float
    rms: float
    mean_square: float
    third_central_moment: float
    skewness: float
    kurtosis: float
    kurtosis_factor: float
    waveform_factor: float
    pulse_factor: float
    margin_factor: float
    degenerate: tuple[str, ...] = ()

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in TIME_FEATURE_NAMES])


@dataclass
class FreqFeatures:
    fft_mean: float
    fft_variance: float
    fft_entropy: float
    fft_energy: float
    fft_skew: float
    fft_kurt: float
    fft_shape_mean: float
    fft_shape_std: float
    fft_shape_skew: float
    fft_shape_kurt: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FREQ_FEATURE_NAMES])


@dataclass
class FeatureVector:
    """Structured per-beat model input; ``vector()`` flattens it lead-major."""

    raw: np.ndarray  # (12, 30)
    time_feats: np.ndarray  # (12, 16)
    freq_feats: np.ndarray  # (12, 10)
    label: DiagnosticClass | None

    def vector(self) -> np.ndarray:
        return np.concatenate([self.raw, self.time_feats, self.freq_feats], axis=1).ravel()


def _mode_histogram(x: np.ndarray) -> np.ndarray:
    """Row-wise histogram mode: center of the fullest of 64 bins on [min, max]."""
    mn = x.min(axis=1)
    mx = x.max(axis=1)
    span = mx - mn
    flat = span == 0.0
    safe_span = np.where(flat, 1.0, span)
    idx = np.floor((x - mn[:, None]) / safe_span[:, None] * MODE_BINS).astype(int)
    np.clip(idx, 0, MODE_BINS - 1, out=idx)
    counts = np.zeros((x.shape[0], MODE_BINS), dtype=int)
    rows = np.repeat(np.arange(x.shape[0]), x.shape[1])
    np.add.at(counts, (rows, idx.ravel()), 1)
    best = counts.argmax(axis=1)
    centers = mn + (best + 0.5) * span / MODE_BINS
    return np.where(flat, mn, centers)


def time_features_batch(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Time statistics for each row of x (n, L).

    Returns (features (n, 16), degenerate mask (n, 16)); degenerate entries
    (zero variance or zero mean absolute value) are set to 0 instead of NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise InvalidArgument("time features need rows of at least 2 samples")
    n = x.shape[0]
    maximum = x.max(axis=1)
    minimum = x.min(axis=1)
    rng = maximum - minimum
    mean = x.mean(axis=1)
    median = np.median(x, axis=1)
    mode = _mode_histogram(x)
    centered = x - mean[:, None]
    var = (centered**2).mean(axis=1)
    std = np.sqrt(var)
    mean_square = (x**2).mean(axis=1)
    rms = np.sqrt(mean_square)
    m3 = (centered**3).mean(axis=1)
    m4 = (centered**4).mean(axis=1)
    abs_mean = np.abs(x).mean(axis=1)
    abs_max = np.abs(x).max(axis=1)
    sqrt_mean = np.sqrt(np.abs(x)).mean(axis=1)

    zero_std = std == 0.0
    zero_abs = abs_mean == 0.0
    zero_ms = mean_square == 0.0
    zero_sqrt = sqrt_mean == 0.0

    safe_std = np.where(zero_std, 1.0, std)
    safe_abs = np.where(zero_abs, 1.0, abs_mean)
    safe_ms = np.where(zero_ms, 1.0, mean_square)
    safe_sqrt = np.where(zero_sqrt, 1.0, sqrt_mean)

    skewness = np.where(zero_std, 0.0, m3 / safe_std**3)
    kurtosis = np.where(zero_std, 0.0, m4 / safe_std**4)
    kurtosis_factor = np.where(zero_std | zero_ms, 0.0, kurtosis / safe_ms**2)
    waveform_factor = np.where(zero_abs, 0.0, rms / safe_abs)
    pulse_factor = np.where(zero_abs, 0.0, abs_max / safe_abs)
    margin_factor = np.where(zero_sqrt, 0.0, abs_max / safe_sqrt**2)

    feats = np.stack(
        [
            maximum,
            minimum,
            rng,
            mean,
            median,
            mode,
            std,
            rms,
            mean_square,
            m3,
            skewness,
            kurtosis,
            kurtosis_factor,
            waveform_factor,
            pulse_factor,
            margin_factor,
        ],
        axis=1,
    )
    degenerate = np.zeros((n, len(TIME_FEATURE_NAMES)), dtype=bool)
    degenerate[:, 10] = zero_std
    degenerate[:, 11] = zero_std
    degenerate[:, 12] = zero_std | zero_ms
    degenerate[:, 13] = zero_abs
    degenerate[:, 14] = zero_abs
    degenerate[:, 15] = zero_sqrt
    return feats, degenerate


def time_features(x: np.ndarray) -> TimeFeatures:
    """Time statistics of one sequence."""
    feats, degenerate = time_features_batch(np.asarray(x, dtype=np.float64)[None, :])
    flagged = tuple(
        name for name, bad in zip(TIME_FEATURE_NAMES, degenerate[0]) if bad
    )
    return TimeFeatures(*feats[0].tolist(), degenerate=flagged)


def freq_features_batch(
    mags: np.ndarray, freqs: np.ndarray, z8_uses_shape_mean: bool = False
) -> np.ndarray:
    """Spectral statistics for each magnitude row (n, N) on shared bins (N,).

    Implements the published formula table verbatim, including its mixed
    frequency/magnitude shape terms; ``z8_uses_shape_mean`` swaps the shape-std
    center from the kurtosis value to the shape mean (see module docs).
    """
    mags = np.asarray(mags, dtype=np.float64)
    freqs = np.asarray(freqs, dtype=np.float64)
    if mags.ndim != 2 or mags.shape[1] < 2:
        raise InvalidArgument("freq features need spectra of at least 2 bins")
    if freqs.shape != (mags.shape[1],):
        raise InvalidArgument("bin frequencies must match the spectrum width")
    total = mags.sum(axis=1)
    if (total == 0.0).any():
        bad = int(np.nonzero(total == 0.0)[0][0])
        raise AllZeroSpectrum(f"all-zero spectrum (row {bad})")

    n_bins = mags.shape[1]
    z1 = mags.mean(axis=1)
    centered = mags - z1[:, None]
    z2 = (centered**2).sum(axis=1) / (n_bins - 1)
    p = mags / (z1[:, None] * n_bins)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0.0, p * np.log2(p), 0.0)
    z3 = -plogp.sum(axis=1)
    z4 = (mags**2).mean(axis=1)
    zero_var = z2 == 0.0
    safe_sqrt_z2 = np.where(zero_var, 1.0, np.sqrt(z2))
    standardized = centered / safe_sqrt_z2[:, None]
    z5 = np.where(zero_var, 0.0, (standardized**3).mean(axis=1))
    z6 = np.where(zero_var, 0.0, (standardized**4).mean(axis=1))
    diff = freqs[None, :] - mags
    z7 = diff.sum(axis=1) / total
    center = z7 if z8_uses_shape_mean else z6
    z8 = np.sqrt(((freqs[None, :] - center[:, None]) ** 2 * mags).sum(axis=1) / total)
    z9 = (diff**3 * mags).sum(axis=1) / total
    z10 = (diff**4 * mags).sum(axis=1) / total
    return np.stack([z1, z2, z3, z4, z5, z6, z7, z8, z9, z10], axis=1)


def freq_features(spec: Spectrum, z8_uses_shape_mean: bool = False) -> FreqFeatures:
    """Spectral statistics of one spectrum."""
    feats = freq_features_batch(
        spec.magnitudes[None, :], spec.freqs, z8_uses_shape_mean
    )
    return FreqFeatures(*feats[0].tolist())


def assemble_vector(beat: Beat, z8_uses_shape_mean: bool = False) -> FeatureVector:
    """Build the per-beat model input from one segmented beat.

    Raw samples and time features come from the 50 Hz downsampled window;
    frequency features from the native-rate window's spectrum. Beats with an
    all-zero lead are rejected via :class:`AllZeroSpectrum`.
    """
    window = np.asarray(beat.window, dtype=np.float64)
    raw = downsample_batch(window, beat.sample_rate_hz)
    time_feats, _ = time_features_batch(raw)
    spec0 = fft_magnitude(window[0], beat.sample_rate_hz)
    mags = np.abs(np.fft.rfft(window, axis=1))
    freq_feats = freq_features_batch(mags, spec0.freqs, z8_uses_shape_mean)
    return FeatureVector(raw=raw, time_feats=time_feats, freq_feats=freq_feats, label=beat.label)


def assemble_vectors_batch(
    windows: np.ndarray,
    sample_rate_hz: float,
    z8_uses_shape_mean: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized feature assembly over stacked beats (n, 12, W).

    Returns (matrix (n_kept, 672), kept row indices); beats with an all-zero
    lead are dropped, mirroring the scalar path's rejection.
    """
    windows = np.asarray(windows, dtype=np.float64)
    n, n_leads, w = windows.shape
    flat = windows.reshape(n * n_leads, w)
    zero_lead = np.abs(flat).sum(axis=1) == 0.0
    keep = ~zero_lead.reshape(n, n_leads).any(axis=1)
    kept_idx = np.nonzero(keep)[0]
    flat = windows[keep].reshape(kept_idx.size * n_leads, w)
    if kept_idx.size == 0:
        return np.empty((0, N_LEADS * FEATURES_PER_LEAD)), kept_idx

    raw = downsample_batch(flat, sample_rate_hz)
    time_feats, _ = time_features_batch(raw)
    mags = np.abs(np.fft.rfft(flat, axis=1))
    freqs = np.fft.rfftfreq(w, d=1.0 / sample_rate_hz)
    freq_feats = freq_features_batch(mags, freqs, z8_uses_shape_mean)
    per_lead = np.concatenate([raw, time_feats, freq_feats], axis=1)
    matrix = per_lead.reshape(kept_idx.size, n_leads * per_lead.shape[1])
    return matrix, kept_idx


def export_feature_matrix_binary(matrix: np.ndarray, labels: np.ndarray, path) -> None:
    """Binary export: per row, the features as little-endian float32 + label byte."""
    rows = np.asarray(matrix, dtype="<f4")
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        for row, label in zip(rows, labels):
            fh.write(row.tobytes())
            fh.write(bytes([int(label)]))


def import_feature_matrix_binary(path, n_features: int = VECTOR_LENGTH) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`export_feature_matrix_binary`."""
    blob = Path(path).read_bytes()
    row_bytes = 4 * n_features + 1
    if len(blob) % row_bytes:
        raise InvalidArgument("feature file length is not a whole number of rows")
    n = len(blob) // row_bytes
    matrix = np.empty((n, n_features), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        chunk = blob[i * row_bytes : (i + 1) * row_bytes]
        matrix[i] = np.frombuffer(chunk[:-1], dtype="<f4")
        labels[i] = chunk[-1]
    return matrix, labels
