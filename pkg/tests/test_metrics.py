'''
Tests for the audio metrics and metric reports.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import itertools

import numpy as np
import pytest
import torch

import maskflow.audio.dsp as mfd
import maskflow.audio.metrics as mfm
import maskflow.constants as mfc
import maskflow.data.corpus as mfo
import maskflow.data.tasks as mft


SR = mfc.SAMPLE_RATE


def _noise(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


def _orthogonalize(a, b):
    return b - np.dot(a, b) / np.dot(a, a) * a


class TestSISDR:
    def test_orthogonal_interference(self):
        ref = _noise(8000, 0)
        err = _orthogonalize(ref, _noise(8000, 1))
        err *= np.linalg.norm(ref) / np.linalg.norm(err) / np.sqrt(10.0)
        assert mfm.si_sdr(ref + err, ref) == pytest.approx(10.0, abs=1e-6)

    def test_scale_invariance(self):
        ref = _noise(4000, 0)
        est = ref + 0.3 * _noise(4000, 1)
        a = mfm.si_sdr(est, ref)
        assert mfm.si_sdr(5.0 * est, ref) == pytest.approx(a, abs=1e-9)
        assert mfm.si_sdr(est, 0.1 * ref) == pytest.approx(a, abs=1e-9)

    def test_exact_match_is_capped(self):
        ref = _noise(4000, 0)
        assert mfm.si_sdr(ref, ref) == mfm.SI_SDR_CAP_DB

    def test_orthogonal_estimate_is_capped(self):
        ref = _noise(4000, 0)
        est = _orthogonalize(ref, _noise(4000, 1))
        assert mfm.si_sdr(est, ref) == -mfm.SI_SDR_CAP_DB

    def test_accepts_waveforms(self):
        ref = mfd.Waveform(0.1 * _noise(4000, 0))
        est = mfd.Waveform(ref.samples + 0.01 * _noise(4000, 1))
        assert np.isfinite(mfm.si_sdr(est, ref))

    def test_improvement(self):
        ref = _noise(4000, 0)
        mixture = ref + _noise(4000, 1)
        est = ref + 0.1 * _noise(4000, 2)
        assert mfm.si_sdr_improvement(est, mixture, ref) == pytest.approx(
            mfm.si_sdr(est, ref) - mfm.si_sdr(mixture, ref))
        assert mfm.si_sdr_improvement(mixture, mixture, ref) == 0.0

    def test_silent_reference(self):
        with pytest.raises(mfm.MetricError, match="silent"):
            mfm.si_sdr(np.ones(10), np.zeros(10))

    def test_length_mismatch(self):
        with pytest.raises(mfm.MetricError, match="Length"):
            mfm.si_sdr(np.ones(10), np.ones(11))

    def test_non_finite(self):
        with pytest.raises(mfm.MetricError, match="finite"):
            mfm.si_sdr(np.array([1.0, np.inf]), np.ones(2))


class TestESTOI:
    def test_identical_signals(self):
        t = np.arange(SR) / SR
        x = mfd.Waveform(
            np.sin(2 * np.pi * 200 * t) * (1 + np.sin(2 * np.pi * 4 * t))
            + 0.05 * _noise(SR, 0))
        assert mfm.estoi(x, x) == pytest.approx(1.0, abs=1e-3)

    def test_noise_lowers_the_score(self):
        t = np.arange(SR) / SR
        clean = np.sin(2 * np.pi * 300 * t) * (1 + np.sin(2 * np.pi * 3 * t))
        noisy = clean + 2.0 * _noise(SR, 1)
        ref = mfd.Waveform(clean)
        score = mfm.estoi(mfd.Waveform(noisy), ref)
        assert -1.0 <= score < mfm.estoi(ref, ref)
        assert mfm.estoi_improvement(ref, mfd.Waveform(noisy), ref) > 0

    @pytest.mark.slow
    def test_median_rises_with_snr(self):
        corpus = mfo.make_synth_speech(mfo.SynthCorpusConfig(
            n_utterances=50, duration_range_s=(1.0, 1.5), seed=0))
        rng = np.random.default_rng(0)
        noises = [mfo.make_noise(len(u.waveform), rng) for u in corpus]

        medians = []
        for snr in (-10, -5, 0, 5, 10, 15, 20):
            scores = []
            for utt, noise in zip(corpus, noises):
                mixture, _ = mft.mix_at_snr(utt.waveform, noise, snr)
                scores.append(mfm.estoi(mixture, utt.waveform))
            medians.append(np.median(scores))

        assert np.all(np.diff(medians) >= -1e-3)
        assert medians[-1] > medians[0]

    def test_too_short(self):
        x = mfd.Waveform(_noise(SR // 10, 0))
        with pytest.raises(mfm.MetricError, match="ESTOI"):
            mfm.estoi(x, x)


class TestPermutationInvariant:
    def _metric(self, est, ref):
        return -abs(est - ref)

    def test_identity(self):
        score, perm = mfm.permutation_invariant(
            self._metric, [1.0, 2.0], [1.0, 2.0])
        assert perm == (0, 1)
        assert score == 0.0

    def test_swapped(self):
        score, perm = mfm.permutation_invariant(
            self._metric, [2.0, 1.0], [1.0, 2.0])
        assert perm == (1, 0)
        assert score == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            ests = list(rng.normal(size=3))
            refs = list(rng.normal(size=3))
            expected = max(
                np.mean([self._metric(ests[p], r) for p, r in zip(perm, refs)])
                for perm in itertools.permutations(range(3)))
            score, _ = mfm.permutation_invariant(self._metric, ests, refs)
            assert score == pytest.approx(expected)

    def test_ties_prefer_identity(self):
        score, perm = mfm.permutation_invariant(
            lambda e, r: 1.0, ["a", "b", "c"], ["x", "y", "z"])
        assert perm == (0, 1, 2)

    def test_si_sdr_assignment(self):
        refs = [_noise(4000, k) for k in range(3)]
        ests = [refs[2] + 0.1 * _noise(4000, 7), refs[0], refs[1]]
        _, perm = mfm.permutation_invariant(mfm.si_sdr, ests, refs)
        assert perm == (1, 2, 0)

    def test_mismatched_lists(self):
        with pytest.raises(mfm.MetricError):
            mfm.permutation_invariant(self._metric, [1.0], [1.0, 2.0])
        with pytest.raises(mfm.MetricError):
            mfm.permutation_invariant(self._metric, [1.0] * 4, [1.0] * 4)


class TestLogSpectralDistance:
    def test_identical(self):
        m = torch.randn(10, 80)
        assert mfm.log_spectral_distance(m, m) == 0.0

    def test_constant_offset(self):
        m = mfd.MelSpectrogram(torch.randn(10, 80))
        shifted = mfd.MelSpectrogram(m.values + 0.5)
        assert mfm.log_spectral_distance(shifted, m) == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(mfm.MetricError, match="Shape"):
            mfm.log_spectral_distance(torch.zeros(3, 4), torch.zeros(4, 4))


class TestMetricReport:
    def _report(self):
        return mfm.MetricReport("enhance", [
            mfm.UtteranceMetrics(
                "a", si_sdr=60.0, si_sdri=4.0, estoi=0.9, estoii=0.1,
                lsd=1.0),
            mfm.UtteranceMetrics(
                "b", si_sdr=10.0, si_sdri=2.0, estoi=0.7, estoii=0.2,
                lsd=2.0),
            mfm.UtteranceMetrics.failure("c", ValueError("boom")),
        ])

    def test_summary(self):
        summary = self._report().summary()
        assert summary["num_utterances"] == 3
        assert summary["num_failed"] == 1
        assert summary["num_si_sdr_capped"] == 1
        assert summary["si_sdri"]["mean"] == pytest.approx(3.0)
        assert summary["si_sdri"]["median"] == pytest.approx(3.0)
        assert summary["si_sdri"]["count"] == 2
        assert summary["lsd"]["std"] == pytest.approx(0.5)

    def test_failures_are_excluded(self):
        report = self._report()
        assert report.values("si_sdri") == [4.0, 2.0]
        assert report.records[2].failed
        assert report.records[2].error == "boom"

    def test_round_trip(self):
        report = self._report()
        loaded = mfm.MetricReport.from_str(report.to_str())
        assert loaded.scenario == "enhance"
        assert loaded.to_dict() == report.to_dict()
        assert "summary" in report.to_dict()
