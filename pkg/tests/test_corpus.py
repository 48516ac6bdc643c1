'''
Tests for synthetic corpora, alignments and manifests.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import json

import numpy as np
import pytest

import maskflow.audio.dsp as mfd
import maskflow.core.config as mfcf
import maskflow.data.corpus as mfo


def _small_config(**kwargs):
    d = dict(
        n_utterances=6, duration_range_s=(0.5, 0.8), n_speakers=3,
        symbol_vocab_size=12, seed=0)
    d.update(kwargs)
    return mfo.SynthCorpusConfig(**d)


@pytest.fixture(scope="module")
def corpus():
    return mfo.make_synth_speech(_small_config())


class TestSynthCorpus:
    def test_reproducible(self, corpus):
        again = mfo.make_synth_speech(_small_config())
        for a, b in zip(corpus, again):
            assert a.name == b.name
            assert np.array_equal(a.waveform.samples, b.waveform.samples)
            assert a.alignment.segments == b.alignment.segments

    def test_seed_changes_corpus(self, corpus):
        other = mfo.make_synth_speech(_small_config(seed=1))
        assert not np.array_equal(
            corpus[0].waveform.samples[:100], other[0].waveform.samples[:100])

    def test_alignments_cover_every_frame(self, corpus):
        for utt in corpus:
            ids = utt.alignment.frame_ids()
            assert len(ids) == utt.num_frames == len(utt.mel())
            assert ids.min() >= 0 and ids.max() < 12
            for _, start, end in utt.alignment.segments:
                assert (
                    mfo.MIN_SEGMENT_FRAMES <= end - start
                    <= mfo.MAX_SEGMENT_FRAMES)

    @pytest.mark.parametrize("num_frames", [5, 30, 31, 34, 35, 61, 250])
    def test_segment_lengths_stay_in_range(self, num_frames):
        for seed in range(200):
            alignment = mfo._random_alignment(
                num_frames, 8, np.random.default_rng(seed))
            pos = 0
            for symbol, start, end in alignment.segments:
                assert start == pos
                assert 0 <= symbol < 8
                assert (
                    mfo.MIN_SEGMENT_FRAMES <= end - start
                    <= mfo.MAX_SEGMENT_FRAMES)
                pos = end
            assert pos == num_frames

    def test_too_few_frames_to_align(self):
        with pytest.raises(mfo.CorpusError):
            mfo._random_alignment(4, 8, np.random.default_rng(0))

    def test_durations_and_levels(self, corpus):
        for utt in corpus:
            assert 0.49 <= utt.duration <= 0.81
            assert np.abs(utt.waveform.samples).max() < 0.6
            assert utt.waveform.rms > 0.01

    def test_speakers(self, corpus):
        assert [u.speaker_id for u in corpus] == [0, 1, 2, 0, 1, 2]
        summary = mfo.corpus_summary(corpus)
        assert summary["utterances"] == 6
        assert summary["speakers"] == 3
        assert summary["total_seconds"] == pytest.approx(
            sum(u.duration for u in corpus))

    def test_speaker_profiles_span_their_ranges(self):
        speakers = mfo.make_speakers(5, np.random.default_rng(0))
        f0s = sorted(s.f0 for s in speakers)
        assert f0s[0] == pytest.approx(100.0)
        assert f0s[-1] == pytest.approx(240.0)

    @pytest.mark.parametrize("kwargs", [
        dict(n_utterances=0),
        dict(symbol_vocab_size=1),
        dict(duration_range_s=(2.0, 1.0)),
        dict(duration_range_s=(0.03, 1.0)),
        dict(snr_range_db=(10.0, 0.0)),
    ])
    def test_invalid_config(self, kwargs):
        with pytest.raises(mfcf.ConfigError):
            _small_config(**kwargs)


class TestNoise:
    @pytest.mark.parametrize("kind", ["white", "pink", "brown"])
    def test_level(self, kind):
        noise = mfo.make_noise(16000, np.random.default_rng(0), kind=kind)
        assert len(noise) == 16000
        assert noise.rms == pytest.approx(0.1, rel=0.05)

    def test_colors(self):
        def lag_one(kind):
            x = mfo.make_noise(
                16000, np.random.default_rng(0), kind=kind).samples
            return np.corrcoef(x[:-1], x[1:])[0, 1]

        assert abs(lag_one("white")) < 0.05
        assert lag_one("pink") > lag_one("white")
        assert lag_one("brown") > 0.9

    def test_unknown_kind(self):
        with pytest.raises(mfo.CorpusError, match="noise kind"):
            mfo.make_noise(10, np.random.default_rng(0), kind="blue")


class TestSymbolAlignment:
    def test_frame_ids(self):
        alignment = mfo.SymbolAlignment([(3, 0, 2), (1, 2, 5)])
        assert len(alignment) == 5
        assert alignment.frame_ids().tolist() == [3, 3, 1, 1, 1]

    @pytest.mark.parametrize("segments", [
        [(0, 1, 3)],
        [(0, 0, 2), (1, 3, 5)],
        [(0, 0, 2), (1, 2, 2)],
        [(-1, 0, 2)],
    ])
    def test_invalid(self, segments):
        with pytest.raises(mfo.CorpusError, match="contiguous"):
            mfo.SymbolAlignment(segments)

    def test_file_round_trip(self, tmp_path):
        alignment = mfo.SymbolAlignment([(3, 0, 2), (1, 2, 5)])
        path = str(tmp_path / "a.txt")
        alignment.write(path)
        assert mfo.SymbolAlignment.read(path).segments == alignment.segments

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("0 0 2\n1 2\n")
        with pytest.raises(mfo.CorpusError, match="line 2"):
            mfo.SymbolAlignment.read(str(path))


class TestManifest:
    def test_round_trip(self, corpus, tmp_path):
        manifest = mfo.write_corpus(corpus, str(tmp_path))
        loaded = mfo.load_manifest(manifest)
        assert [u.name for u in loaded] == [u.name for u in corpus]
        for a, b in zip(loaded, corpus):
            assert a.speaker_id == b.speaker_id
            assert a.alignment.segments == b.alignment.segments
            assert np.max(np.abs(a.waveform.samples - b.waveform.samples)) < (
                1e-4)

    def test_alignment_must_match_audio(self, tmp_path):
        w = mfd.Waveform(np.zeros(1600, dtype=np.float32))
        mfd.write_wav(w, str(tmp_path / "a.wav"))
        mfo.SymbolAlignment([(0, 0, 4)]).write(str(tmp_path / "a.txt"))
        manifest = tmp_path / "manifest.json"
        manifest.write_text(
            json.dumps([{"wav": "a.wav", "alignment": "a.txt"}]))
        with pytest.raises(mfo.CorpusError, match="covers 4 frames"):
            mfo.load_manifest(str(manifest))

    def test_manifest_must_be_a_list(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"wav": "a.wav"}))
        with pytest.raises(mfo.CorpusError, match="JSON list"):
            mfo.load_manifest(str(manifest))

    def test_entries_need_audio(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps([{"speaker": 1}]))
        with pytest.raises(mfo.CorpusError, match="wav"):
            mfo.load_manifest(str(manifest))
