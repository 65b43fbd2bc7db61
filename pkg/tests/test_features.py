import math

import numpy as np
import pytest

from ecgot import dsp, features, ingest
from ecgot.errors import AllZeroSpectrum, InvalidArgument
from ecgot.ingest import DiagnosticClass

# ---------------------------------------------------------------------------
# independent brute-force oracles (plain python loops, no numpy vector paths)
# ---------------------------------------------------------------------------


def oracle_time_features(xs):
    xs = [float(v) for v in xs]
    n = len(xs)
    mx, mn = max(xs), min(xs)
    rng = mx - mn
    mean = sum(xs) / n
    ordered = sorted(xs)
    if n % 2:
        median = ordered[n // 2]
    else:
        median = 0.5 * (ordered[n // 2 - 1] + ordered[n // 2])
    # 64-bin histogram mode
    if rng == 0.0:
        mode = mn
    else:
        counts = [0] * 64
        for v in xs:
            b = int((v - mn) / rng * 64)
            if b > 63:
                b = 63
            counts[b] += 1
        best = 0
        for b in range(1, 64):
            if counts[b] > counts[best]:
                best = b
        mode = mn + (best + 0.5) * rng / 64
    var = sum((v - mean) ** 2 for v in xs) / n
    std = math.sqrt(var)
    ms = sum(v * v for v in xs) / n
    rms = math.sqrt(ms)
    m3 = sum((v - mean) ** 3 for v in xs) / n
    m4 = sum((v - mean) ** 4 for v in xs) / n
    skew = m3 / std**3 if std > 0 else 0.0
    kurt = m4 / std**4 if std > 0 else 0.0
    kf = kurt / ms**2 if std > 0 and ms > 0 else 0.0
    abs_mean = sum(abs(v) for v in xs) / n
    abs_max = max(abs(v) for v in xs)
    sqrt_mean = sum(math.sqrt(abs(v)) for v in xs) / n
    wf = rms / abs_mean if abs_mean > 0 else 0.0
    pf = abs_max / abs_mean if abs_mean > 0 else 0.0
    mf = abs_max / sqrt_mean**2 if sqrt_mean > 0 else 0.0
    return [mx, mn, rng, mean, median, mode, std, rms, ms, m3, skew, kurt, kf, wf, pf, mf]


def oracle_freq_features(mags, freqs, z8_uses_shape_mean=False):
    mags = [float(v) for v in mags]
    freqs = [float(v) for v in freqs]
    n = len(mags)
    total = sum(mags)
    z1 = total / n
    z2 = sum((v - z1) ** 2 for v in mags) / (n - 1)
    z3 = 0.0
    for v in mags:
        p = v / (z1 * n)
        if p > 0:
            z3 -= p * math.log2(p)
    z4 = sum(v * v for v in mags) / n
    if z2 > 0:
        s = math.sqrt(z2)
        z5 = sum(((v - z1) / s) ** 3 for v in mags) / n
        z6 = sum(((v - z1) / s) ** 4 for v in mags) / n
    else:
        z5 = z6 = 0.0
    z7 = sum(f - v for f, v in zip(freqs, mags)) / total
    center = z7 if z8_uses_shape_mean else z6
    z8 = math.sqrt(sum((f - center) ** 2 * v for f, v in zip(freqs, mags)) / total)
    z9 = sum((f - v) ** 3 * v for f, v in zip(freqs, mags)) / total
    z10 = sum((f - v) ** 4 * v for f, v in zip(freqs, mags)) / total
    return [z1, z2, z3, z4, z5, z6, z7, z8, z9, z10]


def rel_err(a, b):
    scale = max(abs(a), abs(b), 1e-30)
    return abs(a - b) / scale


# ---------------------------------------------------------------------------
# time features
# ---------------------------------------------------------------------------


class TestTimeFeatures:
    def test_constant_sequence_flags(self):
        tf = features.time_features(np.array([1.0, 1.0, 1.0, 1.0]))
        assert tf.mean == 1.0
        assert tf.range == 0.0
        assert tf.std_dev == 0.0
        assert tf.skewness == 0.0 and tf.kurtosis == 0.0
        assert "skewness" in tf.degenerate and "kurtosis" in tf.degenerate

    def test_symmetric_two_point(self):
        tf = features.time_features(np.array([-2.0, 2.0]))
        assert tf.rms == pytest.approx(2.0)
        assert tf.mean_square == pytest.approx(4.0)
        assert tf.waveform_factor == pytest.approx(1.0)
        assert tf.pulse_factor == pytest.approx(1.0)

    def test_matches_oracle_on_seeded_normal(self):
        rng = np.random.default_rng(100)
        x = rng.standard_normal(1000)
        got = features.time_features(x).as_array()
        want = oracle_time_features(x)
        for g, w, name in zip(got, want, features.TIME_FEATURE_NAMES):
            assert rel_err(g, w) <= 1e-9, name

    def test_rms_squared_equals_mean_square(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            x = rng.normal(size=64)
            tf = features.time_features(x)
            assert rel_err(tf.rms**2, tf.mean_square) <= 1e-9
            assert tf.range == pytest.approx(tf.maximum - tf.minimum)
            assert tf.std_dev >= 0

    def test_translation_consistency(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=128)
        c = 3.7
        base = features.time_features(x)
        shifted = features.time_features(x + c)
        assert rel_err(shifted.mean, base.mean + c) <= 1e-9
        assert rel_err(shifted.range, base.range) <= 1e-9
        assert rel_err(shifted.std_dev, base.std_dev) <= 1e-9
        assert rel_err(shifted.skewness, base.skewness) <= 1e-8
        assert rel_err(shifted.kurtosis, base.kurtosis) <= 1e-8

    def test_affine_invariance_of_standardized_moments(self):
        rng = np.random.default_rng(43)
        x = rng.normal(size=256)
        base = features.time_features(x)
        mapped = features.time_features(2.5 * x + 1.0)
        assert rel_err(mapped.skewness, base.skewness) <= 1e-9
        assert rel_err(mapped.kurtosis, base.kurtosis) <= 1e-9

    def test_zero_signal_factors_flagged(self):
        tf = features.time_features(np.zeros(16))
        assert tf.waveform_factor == 0.0
        assert tf.pulse_factor == 0.0
        assert tf.margin_factor == 0.0
        assert np.isfinite(tf.as_array()).all()

    def test_too_short(self):
        with pytest.raises(InvalidArgument):
            features.time_features(np.array([1.0]))


# ---------------------------------------------------------------------------
# frequency features
# ---------------------------------------------------------------------------


class TestFreqFeatures:
    def _spectrum(self, mags, fs=100.0):
        mags = np.asarray(mags, dtype=np.float64)
        freqs = np.linspace(0, fs / 2, mags.size)
        return dsp.Spectrum(mags, freqs, 2 * (mags.size - 1))

    def test_flat_spectrum(self):
        n = 16
        ff = features.freq_features(self._spectrum(np.full(n, 2.0)))
        assert ff.fft_mean == pytest.approx(2.0)
        assert ff.fft_variance == pytest.approx(0.0)
        assert ff.fft_entropy == pytest.approx(math.log2(n))
        assert ff.fft_skew == 0.0

    def test_two_bin_arithmetic(self):
        ff = features.freq_features(self._spectrum([1.0, 3.0]))
        assert ff.fft_mean == pytest.approx(2.0)
        assert ff.fft_energy == pytest.approx(5.0)

    def test_matches_oracle_on_seeded_spectra(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            mags = rng.uniform(0.0, 4.0, size=31)
            spec = self._spectrum(mags)
            got = features.freq_features(spec).as_array()
            want = oracle_freq_features(spec.magnitudes, spec.freqs)
            for g, w, name in zip(got, want, features.FREQ_FEATURE_NAMES):
                assert rel_err(g, w) <= 1e-9, name

    def test_z8_shape_mean_switch(self):
        rng = np.random.default_rng(8)
        mags = rng.uniform(0.1, 2.0, size=33)
        spec = self._spectrum(mags)
        literal = features.freq_features(spec, z8_uses_shape_mean=False)
        swapped = features.freq_features(spec, z8_uses_shape_mean=True)
        want = oracle_freq_features(spec.magnitudes, spec.freqs, z8_uses_shape_mean=True)
        assert rel_err(swapped.fft_shape_std, want[7]) <= 1e-9
        assert literal.fft_shape_std != swapped.fft_shape_std

    def test_all_zero_rejected(self):
        with pytest.raises(AllZeroSpectrum):
            features.freq_features(self._spectrum(np.zeros(8)))

    def test_scaling_laws(self):
        rng = np.random.default_rng(9)
        mags = rng.uniform(0.1, 3.0, size=21)
        spec = self._spectrum(mags)
        scaled = self._spectrum(2.0 * mags)
        base = features.freq_features(spec)
        big = features.freq_features(scaled)
        assert rel_err(big.fft_mean, 2.0 * base.fft_mean) <= 1e-9
        assert rel_err(big.fft_energy, 4.0 * base.fft_energy) <= 1e-9
        assert rel_err(big.fft_entropy, base.fft_entropy) <= 1e-9

    def test_invariants(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            spec = self._spectrum(rng.uniform(0.0, 5.0, size=17))
            ff = features.freq_features(spec)
            assert ff.fft_variance >= 0
            assert ff.fft_energy >= 0
            assert ff.fft_shape_std >= 0
            assert np.isfinite(ff.as_array()).all()


# ---------------------------------------------------------------------------
# vector assembly
# ---------------------------------------------------------------------------


def _synthetic_beats(n_records=3, seed=14, label=DiagnosticClass.NORM):
    recs = ingest.generate_synthetic_ecg(n_records, {label: 1.0}, seed=seed)
    beats = []
    for rec in recs:
        got, _, _ = dsp.preprocess_record(rec)
        beats.extend(got)
    return beats


class TestAssembleVector:
    def test_vector_length_672(self):
        beats = _synthetic_beats()
        fv = features.assemble_vector(beats[0])
        assert fv.vector().shape == (672,)
        assert fv.raw.shape == (12, 30)
        assert fv.time_feats.shape == (12, 16)
        assert fv.freq_feats.shape == (12, 10)

    def test_all_zero_beat_rejected(self):
        beat = dsp.Beat(
            window=np.zeros((12, 60)),
            r_peak_index=30,
            source_record="z",
            label=DiagnosticClass.NORM,
            sample_rate_hz=100.0,
        )
        with pytest.raises(AllZeroSpectrum):
            features.assemble_vector(beat)

    def test_deterministic_and_order_stable(self):
        beats = _synthetic_beats()
        a = features.assemble_vector(beats[0]).vector()
        b = features.assemble_vector(beats[0]).vector()
        np.testing.assert_array_equal(a, b)

    def test_lead_major_ordering(self):
        beats = _synthetic_beats()
        beat = beats[0]
        fv = features.assemble_vector(beat)
        vec = fv.vector()
        # lead 0 block: raw 30, then 16 time stats, then 10 freq stats
        np.testing.assert_array_equal(vec[:30], fv.raw[0])
        np.testing.assert_array_equal(vec[30:46], fv.time_feats[0])
        np.testing.assert_array_equal(vec[46:56], fv.freq_feats[0])
        np.testing.assert_array_equal(vec[56:86], fv.raw[1])

    def test_batch_matches_scalar_path(self):
        beats = _synthetic_beats()
        windows = np.stack([b.window for b in beats])
        matrix, kept = features.assemble_vectors_batch(windows, 100.0)
        assert kept.size == len(beats)
        for i in (0, len(beats) // 2, len(beats) - 1):
            scalar = features.assemble_vector(beats[i]).vector()
            np.testing.assert_allclose(matrix[i], scalar, rtol=0, atol=0)

    def test_batch_drops_zero_beats(self):
        beats = _synthetic_beats()
        windows = np.stack([b.window for b in beats])
        windows[1] = 0.0
        matrix, kept = features.assemble_vectors_batch(windows, 100.0)
        assert 1 not in kept
        assert matrix.shape[0] == len(beats) - 1

    def test_corpus_statistics_sane(self):
        beats = _synthetic_beats(n_records=6)
        windows = np.stack([b.window for b in beats])
        matrix, _ = features.assemble_vectors_batch(windows, 100.0)
        assert np.isfinite(matrix).all()
        # raw QRS region varies across beats
        raw_block = matrix[:, :30]
        assert (raw_block.var(axis=0) > 0).any()
