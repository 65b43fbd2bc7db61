import numpy as np
import pytest

from ecgot import dsp, ingest
from ecgot.errors import (
    EmptyDataset,
    InvalidArgument,
    ParseError,
    TruncatedSignal,
    UnsupportedFormat,
)
from ecgot.ingest import DiagnosticClass


def make_header(n_leads=12, fs=100, n_samples=1000, fmt=16, gain="1000/mV"):
    lines = [f"rec {n_leads} {fs} {n_samples}"]
    for i in range(n_leads):
        lines.append(f"rec.dat {fmt} {gain} 16 0 0 0 0 L{i}")
    return "\n".join(lines) + "\n"


class TestParseHeader:
    def test_minimal_header(self):
        header = ingest.parse_wfdb_header(make_header())
        assert header.record_id == "rec"
        assert header.n_leads == 12
        assert header.sample_rate_hz == 100
        assert header.n_samples == 1000
        assert len(header.signals) == 12
        assert header.signals[0].gain == 1000.0

    def test_ptbxl_style_header(self):
        # 100 Hz, 10 s, format 16, 1 uV/LSB resolution
        header = ingest.parse_wfdb_header(make_header(fs=100, n_samples=1000))
        assert header.sample_rate_hz == 100.0
        assert header.n_samples == 1000

    def test_gain_default_when_omitted(self):
        lines = ["rec 1 100 10", "rec.dat 16"]
        header = ingest.parse_wfdb_header("\n".join(lines))
        assert header.signals[0].gain == ingest.DEFAULT_GAIN

    def test_unsupported_format(self):
        with pytest.raises(UnsupportedFormat):
            ingest.parse_wfdb_header(make_header(fmt=212))

    def test_malformed_record_line_carries_line_number(self):
        with pytest.raises(ParseError) as err:
            ingest.parse_wfdb_header("rec twelve 100 1000\n")
        assert err.value.line_number == 1

    def test_malformed_signal_line(self):
        text = "rec 2 100 10\nrec.dat 16 1000/mV\nrec.dat\n"
        with pytest.raises(ParseError) as err:
            ingest.parse_wfdb_header(text)
        assert err.value.line_number == 3

    def test_comments_skipped(self):
        text = "# a comment\n" + make_header()
        header = ingest.parse_wfdb_header(text)
        assert header.record_id == "rec"

    def test_three_leads_rejected_on_record_load(self, tmp_path):
        (tmp_path / "rec.hea").write_text(make_header(n_leads=3))
        (tmp_path / "rec.dat").write_bytes(b"\x00" * (2 * 3 * 1000))
        with pytest.raises(ParseError):
            ingest.read_wfdb_record(tmp_path / "rec.hea")


class TestDecode:
    def test_all_zero(self):
        out = ingest.decode_signal_16(b"\x00" * 8, 2, 2, np.array([1000.0, 1000.0]))
        assert out.shape == (2, 2)
        assert (out == 0).all()

    def test_unit_lsb(self):
        out = ingest.decode_signal_16(b"\x01\x00", 1, 1, np.array([1000.0]))
        assert out[0, 0] == pytest.approx(0.001)

    def test_twos_complement(self):
        out = ingest.decode_signal_16(b"\xff\xff", 1, 1, np.array([1000.0]))
        assert out[0, 0] == pytest.approx(-0.001)

    def test_truncated(self):
        with pytest.raises(TruncatedSignal):
            ingest.decode_signal_16(b"\x00\x00", 2, 2, np.array([1000.0, 1000.0]))

    def test_roundtrip_quantized(self):
        rng = np.random.default_rng(5)
        leads = rng.normal(0, 1.5, size=(12, 200))
        gains = np.full(12, 1000.0)
        raw = ingest.encode_signal_16(leads, gains)
        decoded = ingest.decode_signal_16(raw, 12, 200, gains)
        quantized = np.rint(leads * 1000.0) / 1000.0
        np.testing.assert_array_equal(decoded, quantized)

    def test_wfdb_file_roundtrip(self, tmp_path):
        recs = ingest.generate_synthetic_ecg(1, {DiagnosticClass.NORM: 1.0}, seed=3)
        rec = recs[0]
        ingest.write_wfdb(rec, tmp_path)
        header, leads = ingest.read_wfdb_record(tmp_path / f"{rec.record_id}.hea")
        assert header.sample_rate_hz == rec.sample_rate_hz
        quantized = np.rint(rec.leads * 1000.0) / 1000.0
        np.testing.assert_allclose(leads, quantized, atol=5e-4)


class TestAssignSuperclass:
    TABLE = {"NORM": "NORM", "IMI": "MI", "AMI": "MI", "LVH": "HYP", "ISCAL": "STTC"}

    def test_single_code(self):
        assert ingest.assign_superclass({"NORM": 100.0}, self.TABLE) == DiagnosticClass.NORM

    def test_table_lookup(self):
        assert ingest.assign_superclass({"IMI": 100.0}, self.TABLE) == DiagnosticClass.MI

    def test_empty_is_unlabeled(self):
        assert ingest.assign_superclass({}, self.TABLE) is None

    def test_unknown_code_skipped(self):
        assert (
            ingest.assign_superclass({"XYZ": 90.0, "IMI": 50.0}, self.TABLE)
            == DiagnosticClass.MI
        )

    def test_highest_likelihood_wins(self):
        codes = {"NORM": 40.0, "LVH": 80.0}
        assert ingest.assign_superclass(codes, self.TABLE) == DiagnosticClass.HYP

    def test_tie_breaks_by_class_order(self):
        codes = {"LVH": 50.0, "IMI": 50.0}
        assert ingest.assign_superclass(codes, self.TABLE) == DiagnosticClass.MI

    def test_pure_function(self):
        codes = {"ISCAL": 35.0, "NORM": 15.0}
        first = ingest.assign_superclass(codes, self.TABLE)
        second = ingest.assign_superclass(codes, self.TABLE)
        assert first == second == DiagnosticClass.STTC


def _stats_fixture_records():
    """Dummy records reproducing the published per-class patient counts."""
    patient_counts = {
        DiagnosticClass.NORM: 9528,
        DiagnosticClass.MI: 5486,
        DiagnosticClass.STTC: 5250,
        DiagnosticClass.CD: 4907,
        DiagnosticClass.HYP: 2655,
    }
    beat_counts = {
        DiagnosticClass.NORM: 28419,
        DiagnosticClass.MI: 10959,
        DiagnosticClass.STTC: 8906,
        DiagnosticClass.CD: 20955,
        DiagnosticClass.HYP: 8342,
    }
    leads = np.zeros((12, 1))
    records = []
    beats_per_record = {}
    idx = 0
    for klass, n_patients in patient_counts.items():
        per_record, remainder = divmod(beat_counts[klass], n_patients)
        for k in range(n_patients):
            rid = f"r{idx}"
            records.append(
                ingest.EcgRecord(rid, f"p{idx}", leads, 100.0, klass, split_fold=1)
            )
            beats_per_record[rid] = per_record + (1 if k < remainder else 0)
            idx += 1
    return records, beats_per_record


class TestDatasetStats:
    def test_full_ptbxl_counts(self):
        records, beats_per_record = _stats_fixture_records()
        stats = ingest.dataset_stats(records, beats_per_record)
        assert stats.patient_counts[DiagnosticClass.NORM] == 9528
        assert stats.patient_counts[DiagnosticClass.HYP] == 2655
        assert stats.beat_counts[DiagnosticClass.NORM] == 28419
        assert stats.beat_counts[DiagnosticClass.CD] == 20955
        # published percentages, rounded to one decimal
        assert round(stats.patient_pct[DiagnosticClass.NORM], 1) == 34.2
        assert round(stats.patient_pct[DiagnosticClass.HYP], 1) == 9.5
        assert round(stats.beat_pct[DiagnosticClass.NORM], 1) == 36.6
        assert round(stats.beat_pct[DiagnosticClass.CD], 1) == 27.0

    def test_two_record_split(self):
        leads = np.zeros((12, 1))
        records = [
            ingest.EcgRecord("a", "pa", leads, 100.0, DiagnosticClass.NORM, 1),
            ingest.EcgRecord("b", "pb", leads, 100.0, DiagnosticClass.MI, 1),
        ]
        stats = ingest.dataset_stats(records)
        assert stats.patient_pct[DiagnosticClass.NORM] == pytest.approx(50.0)
        assert stats.patient_pct[DiagnosticClass.MI] == pytest.approx(50.0)

    def test_percentages_sum_to_100(self):
        records, beats_per_record = _stats_fixture_records()
        stats = ingest.dataset_stats(records, beats_per_record)
        assert sum(stats.patient_pct.values()) == pytest.approx(100.0, abs=0.2)
        assert sum(stats.beat_pct.values()) == pytest.approx(100.0, abs=0.2)

    def test_empty_raises(self):
        with pytest.raises(EmptyDataset):
            ingest.dataset_stats([])


class TestSplit:
    def _record(self, rid, fold):
        return ingest.EcgRecord(
            rid, f"p{rid}", np.zeros((12, 1)), 100.0, DiagnosticClass.NORM, fold
        )

    def test_fold10_test(self):
        train, test = ingest.split_train_test([self._record("a", 10)])
        assert not train and [r.record_id for r in test] == ["a"]

    def test_fold1_train(self):
        train, test = ingest.split_train_test([self._record("a", 1)])
        assert [r.record_id for r in train] == ["a"] and not test

    def test_empty(self):
        assert ingest.split_train_test([]) == ([], [])

    def test_missing_fold_skipped(self):
        train, test = ingest.split_train_test([self._record("a", None)])
        assert not train and not test

    def test_partition_property(self):
        records = [self._record(str(i), (i % 10) + 1) for i in range(40)]
        train, test = ingest.split_train_test(records)
        train_ids = {r.record_id for r in train}
        test_ids = {r.record_id for r in test}
        assert train_ids | test_ids == {r.record_id for r in records}
        assert not (train_ids & test_ids)


class TestSyntheticGenerator:
    def test_deterministic(self):
        mix = {c: 0.2 for c in DiagnosticClass}
        a = ingest.generate_synthetic_ecg(10, mix, seed=7)
        b = ingest.generate_synthetic_ecg(10, mix, seed=7)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.leads, rb.leads)
            np.testing.assert_array_equal(ra.true_r_peaks, rb.true_r_peaks)

    def test_exact_proportions(self):
        mix = {c: 0.2 for c in DiagnosticClass}
        recs = ingest.generate_synthetic_ecg(100, mix, seed=1)
        counts = {c: sum(1 for r in recs if r.label == c) for c in DiagnosticClass}
        assert all(v == 20 for v in counts.values())

    def test_invalid_count(self):
        with pytest.raises(InvalidArgument):
            ingest.generate_synthetic_ecg(0, {DiagnosticClass.NORM: 1.0}, seed=1)

    def test_bad_mix(self):
        with pytest.raises(InvalidArgument):
            ingest.generate_synthetic_ecg(5, {DiagnosticClass.NORM: 0.5}, seed=1)

    def test_records_validate(self):
        recs = ingest.generate_synthetic_ecg(5, {c: 0.2 for c in DiagnosticClass}, seed=2)
        for rec in recs:
            rec.validate()
            assert rec.sample_rate_hz == 100.0

    def test_detector_finds_programmed_peaks(self):
        recs = ingest.generate_synthetic_ecg(8, {DiagnosticClass.NORM: 1.0}, seed=9)
        for rec in recs:
            lead2 = dsp.preprocess_lead(rec.leads[1], rec.sample_rate_hz)
            detected = dsp.detect_r_peaks(lead2, rec.sample_rate_hz)
            tolerance = int(0.030 * rec.sample_rate_hz)
            assert len(detected) == len(rec.true_r_peaks)
            assert all(
                min(abs(d - t) for t in rec.true_r_peaks) <= tolerance for d in detected
            )


class TestManifest:
    def test_roundtrip(self, tmp_path):
        recs = ingest.generate_synthetic_ecg(4, {c: 0.25 for c in list(DiagnosticClass)[:4]} | {DiagnosticClass.HYP: 0.0}, seed=4)
        paths = {}
        for rec in recs:
            hea = ingest.write_wfdb(rec, tmp_path / "records")
            paths[rec.record_id] = str(hea.relative_to(tmp_path))
        manifest = ingest.write_manifest(recs, paths, tmp_path / "manifest.csv")
        loaded = ingest.read_manifest(manifest)
        assert [r.record_id for r in loaded] == [r.record_id for r in recs]
        assert [r.label for r in loaded] == [r.label for r in recs]
        assert [r.split_fold for r in loaded] == [r.split_fold for r in recs]
