"""Preprocessing chain: spectrum, smoothing, notch, R-peak detection, beats.

The chain runs per lead at the native rate (window filter then notch), then
detects R peaks on lead II, slices fixed windows around each peak, and
downsamples to 50 Hz for the model input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import InvalidArgument
from .ingest import DiagnosticClass, EcgRecord, N_LEADS

DEFAULT_WINDOW_SAMPLES = 60
DEFAULT_N_POINTS = 5
DEFAULT_NOTCH_F0_HZ = 50.0
DEFAULT_NOTCH_Q = 30.0
DEFAULT_DOWNSAMPLE_HZ = 50.0
REFERENCE_LEAD = 1  # lead II
REFRACTORY_S = 0.2


@dataclass
class Spectrum:
    """One-sided magnitude spectrum with its bin frequencies."""

    magnitudes: np.ndarray
    freqs: np.ndarray
    n_samples: int

    def __len__(self) -> int:
        return len(self.magnitudes)

    def energy(self) -> float:
        """Time-domain-equivalent energy (Parseval) of the underlying signal."""
        weights = np.full(len(self.magnitudes), 2.0)
        weights[0] = 1.0
        if self.n_samples % 2 == 0:
            weights[-1] = 1.0
        return float((weights * self.magnitudes**2).sum() / self.n_samples)


@dataclass
class Beat:
    """One segmented heartbeat: 12 leads sliced around a shared R peak."""

    window: np.ndarray  # (12, W)
    r_peak_index: int
    source_record: str
    label: DiagnosticClass | None
    sample_rate_hz: float


def fft_magnitude(x: np.ndarray, sample_rate_hz: float) -> Spectrum:
    """One-sided FFT magnitude spectrum of a real signal."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise InvalidArgument("fft_magnitude needs at least 2 samples")
    mags = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, d=1.0 / sample_rate_hz)
    return Spectrum(mags, freqs, x.size)


def window_filter(x: np.ndarray, n_points: int = DEFAULT_N_POINTS) -> np.ndarray:
    """Centered moving average of odd width, reflection-padded at the edges."""
    if n_points < 1 or n_points % 2 == 0:
        raise InvalidArgument("n_points must be odd and >= 1")
    x = np.asarray(x, dtype=np.float64)
    if n_points == 1:
        return x.copy()
    half = n_points // 2
    if x.size <= half:
        raise InvalidArgument(f"signal too short for n_points={n_points}")
    padded = np.pad(x, half, mode="reflect")
    kernel = np.full(n_points, 1.0 / n_points)
    return np.convolve(padded, kernel, mode="valid")


def notch_filter(
    x: np.ndarray,
    sample_rate_hz: float,
    f0_hz: float = DEFAULT_NOTCH_F0_HZ,
    q: float = DEFAULT_NOTCH_Q,
) -> np.ndarray:
    """Zero-phase biquad notch at f0 with the given quality factor."""
    if not (0.0 < f0_hz < sample_rate_hz / 2.0):
        raise InvalidArgument(
            f"notch frequency {f0_hz} Hz must sit below Nyquist {sample_rate_hz / 2} Hz"
        )
    x = np.asarray(x, dtype=np.float64)
    b, a = sps.iirnotch(f0_hz, q, fs=sample_rate_hz)
    padlen = 3 * max(len(a), len(b))
    if x.size <= padlen:
        raise InvalidArgument(f"signal too short for zero-phase notch ({x.size} samples)")
    return sps.filtfilt(b, a, x)


def detect_r_peaks(x: np.ndarray, sample_rate_hz: float) -> np.ndarray:
    """Pan-Tompkins style R-peak detection on one lead.

    Bandpass 5-15 Hz, derivative, squaring, 150 ms moving-window integration,
    adaptive signal/noise thresholds, 200 ms refractory period.
    """
    x = np.asarray(x, dtype=np.float64)
    fs = float(sample_rate_hz)
    if x.size < 2 * fs:
        raise InvalidArgument("need at least 2 s of signal for R-peak detection")
    if fs <= 31.0:
        raise InvalidArgument("sample rate too low for the 5-15 Hz QRS band")
    if np.abs(x).max() == 0.0:
        return np.array([], dtype=int)

    nyq = fs / 2.0
    b, a = sps.butter(2, [5.0 / nyq, 15.0 / nyq], btype="band")
    band = sps.filtfilt(b, a, x)
    deriv = np.gradient(band)
    squared = deriv * deriv
    w_int = max(1, int(round(0.150 * fs)))
    integ = np.convolve(squared, np.full(w_int, 1.0 / w_int), mode="same")

    refractory = max(1, int(round(REFRACTORY_S * fs)))
    candidates, _ = sps.find_peaks(integ, distance=refractory)
    if candidates.size == 0:
        return np.array([], dtype=int)

    head = integ[: int(2 * fs)]
    head_band = band[: int(2 * fs)]
    spk_i = 0.5 * head.max()
    npk_i = 0.5 * head.mean()
    spk_f = 0.5 * head_band.max()
    npk_f = 0.5 * np.abs(head_band).mean()
    peaks: list[int] = []
    search = max(1, w_int)
    for cand in candidates:
        thr_i = npk_i + 0.25 * (spk_i - npk_i)
        thr_f = npk_f + 0.25 * (spk_f - npk_f)
        value = integ[cand]
        lo = max(0, cand - search)
        hi = min(x.size, cand + search // 2 + 1)
        r = lo + int(np.argmax(band[lo:hi]))
        if value > thr_i and band[r] > thr_f:
            if peaks and r - peaks[-1] < refractory:
                if band[r] > band[peaks[-1]]:
                    peaks[-1] = r
            else:
                peaks.append(r)
            spk_i = 0.125 * value + 0.875 * spk_i
            spk_f = 0.125 * band[r] + 0.875 * spk_f
        else:
            npk_i = 0.125 * value + 0.875 * npk_i
            npk_f = 0.125 * band[r] + 0.875 * npk_f

    if len(peaks) >= 3:
        # amplitude-consistency post-pass: within one record the true R peaks
        # share a scale; spikes well under the median are noise crossings
        amps = band[np.asarray(peaks)]
        floor = 0.6 * np.median(amps)
        peaks = [p for p in peaks if band[p] >= floor]
    return np.asarray(peaks, dtype=int)


def segment_beats(
    record: EcgRecord,
    r_peaks: np.ndarray,
    window_samples: int = DEFAULT_WINDOW_SAMPLES,
) -> tuple[list[Beat], int]:
    """Slice all 12 leads around each R peak; returns (beats, n_skipped).

    Peaks whose window would cross a record boundary are skipped and counted.
    """
    if window_samples % 2 != 0 or window_samples <= 0:
        raise InvalidArgument("window_samples must be even and positive")
    half = window_samples // 2
    n = record.n_samples
    beats: list[Beat] = []
    skipped = 0
    for r in np.asarray(r_peaks, dtype=int):
        lo, hi = r - half, r + half
        if lo < 0 or hi > n:
            skipped += 1
            continue
        beats.append(
            Beat(
                window=record.leads[:, lo:hi].copy(),
                r_peak_index=half,
                source_record=record.record_id,
                label=record.label,
                sample_rate_hz=record.sample_rate_hz,
            )
        )
    return beats, skipped


def downsample(
    x: np.ndarray, from_hz: float, to_hz: float = DEFAULT_DOWNSAMPLE_HZ
) -> np.ndarray:
    """Anti-alias low-pass (cutoff 0.45 x to_hz) then integer decimation.

    The low-pass is realized in the frequency domain so that content below
    the cutoff passes unattenuated; decimation keeps every factor-th sample.
    """
    factor_f = from_hz / to_hz
    factor = int(round(factor_f))
    if abs(factor_f - factor) > 1e-9 or factor < 1:
        raise InvalidArgument(
            f"downsample factor {from_hz}/{to_hz} must be a positive integer"
        )
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x.copy()
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / from_hz)
    spectrum[freqs > 0.45 * to_hz] = 0.0
    filtered = np.fft.irfft(spectrum, n=x.size)
    return filtered[::factor]


def downsample_batch(
    x: np.ndarray, from_hz: float, to_hz: float = DEFAULT_DOWNSAMPLE_HZ
) -> np.ndarray:
    """Vectorized :func:`downsample` over the last axis of a 2-D array."""
    factor_f = from_hz / to_hz
    factor = int(round(factor_f))
    if abs(factor_f - factor) > 1e-9 or factor < 1:
        raise InvalidArgument(
            f"downsample factor {from_hz}/{to_hz} must be a positive integer"
        )
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x.copy()
    spectrum = np.fft.rfft(x, axis=-1)
    freqs = np.fft.rfftfreq(x.shape[-1], d=1.0 / from_hz)
    spectrum[..., freqs > 0.45 * to_hz] = 0.0
    filtered = np.fft.irfft(spectrum, n=x.shape[-1], axis=-1)
    return filtered[..., ::factor]


def preprocess_lead(
    x: np.ndarray,
    sample_rate_hz: float,
    n_points: int = DEFAULT_N_POINTS,
    notch_f0_hz: float = DEFAULT_NOTCH_F0_HZ,
    notch_q: float = DEFAULT_NOTCH_Q,
) -> np.ndarray:
    """Window filter plus notch; the notch is skipped when f0 reaches Nyquist.

    PTB-XL low-rate files sample at 100 Hz, which puts the 50 Hz powerline
    notch exactly at Nyquist; there is no interference band left to remove,
    so the stage degrades to the window filter alone.
    """
    y = window_filter(x, n_points)
    if 0.0 < notch_f0_hz < sample_rate_hz / 2.0:
        y = notch_filter(y, sample_rate_hz, notch_f0_hz, notch_q)
    return y


def preprocess_record(
    record: EcgRecord,
    n_points: int = DEFAULT_N_POINTS,
    notch_f0_hz: float = DEFAULT_NOTCH_F0_HZ,
    notch_q: float = DEFAULT_NOTCH_Q,
    window_samples: int = DEFAULT_WINDOW_SAMPLES,
) -> tuple[list[Beat], int, np.ndarray]:
    """Full per-record chain: filter all leads, detect R on lead II, segment.

    Returns (beats, n_skipped, r_peaks).
    """
    filtered = np.stack(
        [
            preprocess_lead(record.leads[i], record.sample_rate_hz, n_points, notch_f0_hz, notch_q)
            for i in range(N_LEADS)
        ]
    )
    r_peaks = detect_r_peaks(filtered[REFERENCE_LEAD], record.sample_rate_hz)
    clean = EcgRecord(
        record_id=record.record_id,
        patient_id=record.patient_id,
        leads=filtered,
        sample_rate_hz=record.sample_rate_hz,
        label=record.label,
        split_fold=record.split_fold,
        true_r_peaks=record.true_r_peaks,
    )
    beats, skipped = segment_beats(clean, r_peaks, window_samples)
    return beats, skipped, r_peaks
