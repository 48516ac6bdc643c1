'''
Tests for the waveform/log-Mel conversions.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import math

import numpy as np
import pytest
import scipy.signal
import torch

import maskflow.audio.dsp as mfd
import maskflow.constants as mfc


SR = mfc.SAMPLE_RATE


def _sine(freq, seconds=1.0, amplitude=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return mfd.Waveform(amplitude * np.sin(2 * np.pi * freq * t))


def _speech_like(seconds=1.0, f0=140.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * SR)) / SR
    x = sum(
        np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
        for k in range(1, 20))
    x *= 0.5 * (1.0 + np.sin(2 * np.pi * 3.0 * t)) / 2.0 + 0.25
    return mfd.Waveform(0.3 * x / np.abs(x).max())


def _snr_db(est, ref):
    noise = est - ref
    return 10 * np.log10(np.sum(ref ** 2) / np.sum(noise ** 2))


class TestSTFT:
    def test_zero_waveform(self):
        spec = mfd.stft(mfd.Waveform(np.zeros(SR)))
        assert len(spec) == 1 + SR // mfc.HOP_LENGTH
        assert spec.values.shape[1] == mfc.FFT_SIZE // 2 + 1
        assert torch.count_nonzero(spec.values) == 0

    def test_sine_peaks_at_nearest_bin(self):
        spec = mfd.stft(_sine(1000.0))
        expected_bin = round(1000.0 * mfc.FFT_SIZE / SR)
        peaks = spec.magnitude.argmax(dim=1)
        assert torch.all(peaks[2:-2] == expected_bin)

    def test_istft_round_trip(self):
        w = _speech_like()
        w2 = mfd.istft(mfd.stft(w))
        assert len(w2) == len(w)
        interior = slice(mfc.FFT_SIZE, -mfc.FFT_SIZE)
        assert _snr_db(
            w2.samples[interior].astype(np.float64),
            w.samples[interior].astype(np.float64)) >= 40.0

    def test_istft_uses_the_spectrogram_window(self):
        w = _speech_like(seconds=0.5)
        x = torch.from_numpy(w.samples)
        values = torch.stft(
            x, n_fft=mfc.FFT_SIZE, hop_length=mfc.HOP_LENGTH,
            win_length=400, window=torch.hann_window(400, periodic=True),
            center=True, pad_mode="constant", return_complex=True)
        spec = mfd.ComplexSpectrogram(
            values.transpose(0, 1), window_length=400, num_samples=len(w))

        w2 = mfd.istft(spec)
        assert len(w2) == len(w)
        assert np.max(np.abs(w2.samples - w.samples)) < 1e-4

    def test_shape_law(self):
        rng = np.random.default_rng(0)
        for n in rng.integers(1, 3 * SR, size=50):
            w = mfd.Waveform(rng.standard_normal(int(n)) * 0.1)
            assert len(mfd.stft(w)) == mfd.frame_count(int(n))
            assert mfd.frame_count(int(n)) == 1 + int(n) // mfc.HOP_LENGTH

    def test_num_samples_for_frames_inverts_frame_count(self):
        for num_frames in (1, 2, 101, 377):
            n = mfd.num_samples_for_frames(num_frames)
            assert mfd.frame_count(n) == num_frames

    def test_empty_waveform_rejected(self):
        with pytest.raises(mfd.DSPError, match="empty"):
            mfd.stft(mfd.Waveform(np.zeros(0)))

    def test_wrong_sample_rate_rejected(self):
        with pytest.raises(mfd.DSPError, match="16000Hz"):
            mfd.stft(mfd.Waveform(np.zeros(800), sample_rate=8000))

    def test_non_finite_samples_rejected(self):
        with pytest.raises(mfd.DSPError, match="non-finite"):
            mfd.Waveform([0.0, np.nan])


class TestLogMel:
    def test_silence_hits_the_floor(self):
        m = mfd.wave_to_logmel(mfd.Waveform(np.zeros(SR // 2)))
        assert m.n_mels == mfc.N_MELS
        assert torch.allclose(
            m.values, torch.full_like(m.values, math.log(mfc.LOG_FLOOR_EPS)))

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        w = mfd.Waveform(0.1 * rng.standard_normal(SR))
        a = mfd.wave_to_logmel(w).values.numpy().tobytes()
        b = mfd.wave_to_logmel(w).values.numpy().tobytes()
        assert a == b

    def test_scaling_never_decreases_entries(self):
        w = _speech_like()
        m1 = mfd.wave_to_logmel(w).values
        m2 = mfd.wave_to_logmel(w.scaled(2.0)).values
        assert bool((m2 >= m1).all())

    def test_chirp_energy_ascends(self):
        t = np.arange(SR) / SR
        w = mfd.Waveform(0.5 * scipy.signal.chirp(t, 200.0, 1.0, 7000.0))
        peaks = mfd.wave_to_logmel(w).values.argmax(dim=1).numpy()
        assert np.all(np.diff(peaks[3:-3]) >= 0)
        assert peaks[-4] > peaks[3]

    def test_frame_rate_and_duration(self):
        m = mfd.wave_to_logmel(_sine(440.0, seconds=2.0))
        assert m.frame_rate == 100
        assert len(m) == 201
        assert m.duration == pytest.approx(2.01)


class TestInversion:
    def test_round_trip_recovers_the_signal(self):
        w = _speech_like()
        spec = mfd.stft(w)
        w2 = mfd.logmel_to_wave(mfd.spec_to_logmel(spec), spec)
        assert len(w2) == len(w)
        assert _snr_db(
            w2.samples.astype(np.float64),
            w.samples.astype(np.float64)) > 3.0

    def test_reanalysis_error_below_tolerance(self):
        for seed, f0 in enumerate((110.0, 160.0, 220.0)):
            w = _speech_like(f0=f0, seed=seed)
            spec = mfd.stft(w)
            err = mfd.reanalysis_error(mfd.spec_to_logmel(spec), spec)
            assert err < mfd.DEFAULT_REANALYSIS_TOLERANCE

    def test_floor_mel_is_near_silent(self):
        values = torch.full((50, mfc.N_MELS), math.log(mfc.LOG_FLOOR_EPS))
        spec = mfd.stft(_speech_like(seconds=0.49))
        w = mfd.logmel_to_wave(mfd.MelSpectrogram(values), spec)
        assert w.rms < 1e-3

    def test_phase_sources_change_audio_not_features(self):
        w = _speech_like()
        m = mfd.wave_to_logmel(w)
        spec_a = mfd.stft(w)
        spec_b = mfd.stft(w.scaled(-1.0))
        wa = mfd.logmel_to_wave(m, spec_a)
        wb = mfd.logmel_to_wave(m, spec_b)
        assert not np.allclose(wa.samples, wb.samples)

        ma = mfd.wave_to_logmel(wa).values
        mb = mfd.wave_to_logmel(wb).values
        assert float((ma - mb).abs().max()) < 1e-2

    def test_short_phase_source_rejected(self):
        m = mfd.wave_to_logmel(_sine(440.0, seconds=1.0))
        spec = mfd.stft(_sine(440.0, seconds=0.5))
        with pytest.raises(mfd.DSPError, match="Phase source"):
            mfd.logmel_to_wave(m, spec)

    def test_inverse_magnitude_is_non_negative(self):
        m = mfd.wave_to_logmel(_speech_like())
        assert bool((mfd.mel_to_linear(m) >= 0).all())


class TestFilterbank:
    def test_rows_are_contiguous_triangles(self):
        fb = mfd.mel_filterbank(mfc.N_MELS, mfc.FFT_SIZE, SR).numpy()
        assert fb.shape == (mfc.N_MELS, mfc.FFT_SIZE // 2 + 1)
        assert (fb >= 0).all()
        for row in fb:
            support = np.flatnonzero(row > 0)
            assert len(support) > 0
            assert support[-1] - support[0] + 1 == len(support)

    def test_bins_between_centers_are_covered(self):
        fb = mfd.mel_filterbank(mfc.N_MELS, mfc.FFT_SIZE, SR).numpy()
        centers = fb.argmax(axis=1)
        sums = fb.sum(axis=0)
        assert (sums[centers[0]:centers[-1] + 1] > 0).all()

    def test_pseudo_inverse_reconstructs_smooth_spectra(self):
        fb = mfd.mel_filterbank(mfc.N_MELS, mfc.FFT_SIZE, SR).double()
        inv = mfd.mel_pseudo_inverse(mfc.N_MELS, mfc.FFT_SIZE, SR).double()
        assert inv.shape == (mfc.FFT_SIZE // 2 + 1, mfc.N_MELS)

        rng = np.random.default_rng(0)
        k = torch.arange(fb.shape[1], dtype=torch.float64)
        for _ in range(10):
            period, phase = rng.uniform(100, 400), rng.uniform(0, 2 * np.pi)
            spectrum = 1.0 + 0.5 * torch.sin(2 * np.pi * k / period + phase)
            recon = inv @ (fb @ spectrum)
            rel = torch.linalg.norm(recon - spectrum) / torch.linalg.norm(
                spectrum)
            assert float(rel) < 0.35

    def test_too_many_filters_rejected(self):
        with pytest.raises(mfd.DSPError, match="Cannot build"):
            mfd.mel_filterbank(600, 1024, SR)

    def test_fft_size_must_be_power_of_two(self):
        with pytest.raises(mfd.DSPError, match="power of two"):
            mfd.mel_filterbank(80, 1000, SR)


class TestFileFormats:
    def test_wav_is_16_bit_pcm(self, tmp_path):
        w = _speech_like(seconds=0.5)
        path = str(tmp_path / "a.wav")
        mfd.write_wav(w, path)
        w2 = mfd.read_wav(path)
        assert w2.sample_rate == SR
        assert np.max(np.abs(w2.samples - w.samples)) <= 1.0 / 32768 + 1e-6

    def test_missing_wav(self, tmp_path):
        with pytest.raises(mfd.DSPError, match="Unable to read audio"):
            mfd.read_wav(str(tmp_path / "missing.wav"))

    def test_mel_container(self, tmp_path):
        m = mfd.wave_to_logmel(_speech_like(seconds=0.5))
        path = str(tmp_path / "a.mel")
        mfd.write_mel(m, path)

        with open(path, "rb") as f:
            header = f.read(16)
        assert header[:4] == b"MELS"
        assert int.from_bytes(header[4:8], "little") == 1
        assert int.from_bytes(header[8:12], "little") == len(m)
        assert int.from_bytes(header[12:16], "little") == mfc.N_MELS

        assert torch.equal(mfd.read_mel(path).values, m.values.float())

    def test_missing_mel(self, tmp_path):
        with pytest.raises(mfd.DSPError, match="Unable to read features"):
            mfd.read_mel(str(tmp_path / "missing.mel"))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.mel"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(mfd.DSPError, match="not a Mel container"):
            mfd.read_mel(str(path))

    def test_truncated_container_rejected(self, tmp_path):
        m = mfd.MelSpectrogram(torch.zeros(3, 4))
        path = str(tmp_path / "a.mel")
        mfd.write_mel(m, path)
        with open(path, "rb") as f:
            data = f.read()
        with open(path, "wb") as f:
            f.write(data[:-4])

        with pytest.raises(mfd.DSPError, match="bytes"):
            mfd.read_mel(path)
