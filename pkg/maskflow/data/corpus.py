'''
Synthetic speech-like corpora, symbol alignments and corpus manifests.

Synthetic utterances are built from a harmonic (voiced) or noise (unvoiced)
source shaped by per-symbol formant band-pass filters, with one symbol per
50-300ms segment. Each utterance comes with the frame-level symbol alignment
used as an oracle phone alignment.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
import logging
import os

import numpy as np
import scipy.signal

import maskflow.audio.dsp as mfd
import maskflow.constants as mfc
import maskflow.core.config as mfcf
import maskflow.core.utils as mfu


logger = logging.getLogger(__name__)


MIN_SEGMENT_FRAMES = 5
MAX_SEGMENT_FRAMES = 30

_F0_RANGE = (100.0, 240.0)
_FORMANT_SCALE_RANGE = (0.85, 1.2)
_FORMANT_RANGES = ((250.0, 900.0), (800.0, 2500.0), (2000.0, 3500.0))
_NOISE_FLOOR = 1e-3
_PEAK_LEVEL = 0.5
_FADE_SAMPLES = 80


class SynthCorpusConfig(mfcf.Config):
    '''Configuration of a synthetic speech-like corpus.

    Attributes:
        n_utterances (int): the number of utterances
        duration_range_s (tuple): the ``(min, max)`` utterance duration, in
            seconds
        n_speakers (int): the number of distinct speaker profiles
        snr_range_db (tuple): the ``(min, max)`` SNR used when mixing noise
            into the corpus for enhancement
        symbol_vocab_size (int): the number of distinct symbols
        seed (int): the random seed that fixes the corpus
    '''

    def __init__(
            self, n_utterances=200, duration_range_s=(2.0, 4.0),
            n_speakers=8, snr_range_db=(-5.0, 20.0), symbol_vocab_size=32,
            seed=0):
        self.n_utterances = int(n_utterances)
        self.duration_range_s = tuple(float(v) for v in duration_range_s)
        self.n_speakers = int(n_speakers)
        self.snr_range_db = tuple(float(v) for v in snr_range_db)
        self.symbol_vocab_size = int(symbol_vocab_size)
        self.seed = int(seed)
        self.validate()

    def validate(self):
        mfcf.require(self.n_utterances >= 1, "n_utterances must be positive")
        mfcf.require(self.n_speakers >= 1, "n_speakers must be positive")
        mfcf.require(
            self.symbol_vocab_size >= 2,
            "symbol_vocab_size must be at least 2; found %d",
            self.symbol_vocab_size)
        lo, hi = self.duration_range_s
        mfcf.require(
            0.0 < lo <= hi,
            "duration_range_s must satisfy 0 < min <= max; found %s",
            self.duration_range_s)
        mfcf.require(
            lo * mfc.FRAME_RATE >= MIN_SEGMENT_FRAMES,
            "Utterances must last at least %gs; found %gs",
            MIN_SEGMENT_FRAMES / mfc.FRAME_RATE, lo)
        lo, hi = self.snr_range_db
        mfcf.require(
            lo <= hi, "snr_range_db must satisfy min <= max; found %s",
            self.snr_range_db)


class SpeakerProfile(object):
    '''A synthetic speaker.

    Attributes:
        speaker_id (int): the speaker index
        f0 (float): the mean fundamental frequency, in Hz
        formant_scale (float): the multiplier applied to every formant
    '''

    def __init__(self, speaker_id, f0, formant_scale):
        self.speaker_id = speaker_id
        self.f0 = f0
        self.formant_scale = formant_scale


class SymbolInventory(object):
    '''The acoustic realization of each symbol id.

    Attributes:
        formants (numpy.ndarray): a ``[vocab_size, 3]`` array of formant
            frequencies, in Hz
        voiced (numpy.ndarray): a boolean vector marking voiced symbols
    '''

    def __init__(self, formants, voiced):
        self.formants = formants
        self.voiced = voiced

    def __len__(self):
        return len(self.voiced)

    @classmethod
    def generate(cls, vocab_size, rng):
        '''Draws a random inventory in which roughly one symbol in five is
        unvoiced.
        '''
        formants = np.stack(
            [rng.uniform(lo, hi, size=vocab_size)
             for lo, hi in _FORMANT_RANGES], axis=1)
        voiced = rng.random(vocab_size) >= 0.2
        voiced[0] = True
        return cls(formants, voiced)


class SymbolAlignment(object):
    '''A frame-level symbol alignment.

    Attributes:
        segments (list): a list of ``(symbol, start_frame, end_frame)``
            tuples with half-open frame intervals
    '''

    def __init__(self, segments):
        self.segments = [(int(s), int(a), int(b)) for s, a, b in segments]
        self._validate()

    def __len__(self):
        return self.segments[-1][2] if self.segments else 0

    def frame_ids(self):
        '''Returns the per-frame symbol ids as an integer vector.'''
        ids = np.empty(len(self), dtype=np.int64)
        for symbol, start, end in self.segments:
            ids[start:end] = symbol

        return ids

    def write(self, path):
        '''Writes the alignment as one ``symbol start end`` line per
        segment.
        '''
        mfu.write_text(
            "".join("%d %d %d\n" % seg for seg in self.segments), path)

    @classmethod
    def read(cls, path):
        '''Reads an alignment written by :func:`write`.'''
        segments = []
        with open(path, "rt") as f:
            for num, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue

                parts = line.split()
                if len(parts) != 3:
                    raise CorpusError(
                        "Malformed alignment line %d in '%s'" % (num, path))

                segments.append(tuple(int(p) for p in parts))

        return cls(segments)

    def _validate(self):
        pos = 0
        for symbol, start, end in self.segments:
            if start != pos or end <= start or symbol < 0:
                raise CorpusError(
                    "Alignment segments must be contiguous, non-empty and "
                    "start at frame 0; found %s" % ((symbol, start, end),))
            pos = end


class Utterance(object):
    '''A corpus utterance.

    Attributes:
        name (str): the utterance name
        waveform (Waveform): the audio
        alignment (SymbolAlignment): the symbol alignment, if any
        speaker_id (int): the speaker id
    '''

    def __init__(self, name, waveform, alignment=None, speaker_id=0):
        self.name = name
        self.waveform = waveform
        self.alignment = alignment
        self.speaker_id = speaker_id
        self._mel = None

    @property
    def num_frames(self):
        '''The number of Mel frames of the utterance.'''
        return mfd.frame_count(len(self.waveform))

    @property
    def duration(self):
        '''The duration of the utterance, in seconds.'''
        return self.waveform.duration

    def mel(self):
        '''Returns the (cached) log-Mel spectrogram of the utterance.'''
        if self._mel is None:
            self._mel = mfd.wave_to_logmel(self.waveform)

        return self._mel


class ManifestEntry(mfu.Serializable):
    '''An entry of a corpus manifest.

    Attributes:
        wav (str): the path to the WAV file
        alignment (str): the path to the alignment file, if any
        speaker (int): the speaker id
    '''

    def __init__(self, wav, alignment=None, speaker=0):
        self.wav = wav
        self.alignment = alignment
        self.speaker = speaker

    @classmethod
    def from_dict(cls, d):
        if "wav" not in d:
            raise CorpusError("Manifest entries must have a 'wav' field")

        return cls(
            d["wav"], alignment=d.get("alignment", None),
            speaker=d.get("speaker", 0))


def make_speakers(n_speakers, rng):
    '''Builds speaker profiles whose pitch and formant scales are spread over
    their ranges and randomly paired.

    Args:
        n_speakers (int): the number of speakers
        rng (numpy.random.Generator): the random generator

    Returns:
        a list of :class:`SpeakerProfile`
    '''
    f0s = np.linspace(_F0_RANGE[0], _F0_RANGE[1], n_speakers)
    scales = np.linspace(
        _FORMANT_SCALE_RANGE[0], _FORMANT_SCALE_RANGE[1], n_speakers)
    f0s = rng.permutation(f0s)
    scales = rng.permutation(scales)
    return [
        SpeakerProfile(i, float(f0), float(scale))
        for i, (f0, scale) in enumerate(zip(f0s, scales))]


def make_synth_speech(cfg, rng=None):
    '''Synthesizes a speech-like corpus.

    Args:
        cfg (SynthCorpusConfig): the corpus config
        rng (numpy.random.Generator, optional): the random generator. By
            default, one seeded with ``cfg.seed`` is used

    Returns:
        a list of :class:`Utterance`
    '''
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    speakers = make_speakers(cfg.n_speakers, rng)
    inventory = SymbolInventory.generate(cfg.symbol_vocab_size, rng)

    utterances = []
    for idx in range(cfg.n_utterances):
        speaker = speakers[idx % len(speakers)]
        duration = rng.uniform(*cfg.duration_range_s)
        num_frames = max(int(round(duration * mfc.FRAME_RATE)) + 1, 2)
        alignment = _random_alignment(
            num_frames, cfg.symbol_vocab_size, rng)
        samples = synthesize(alignment, speaker, inventory, rng)
        utterances.append(Utterance(
            "utt_%05d" % idx, mfd.Waveform(samples), alignment=alignment,
            speaker_id=speaker.speaker_id))

    logger.info(
        "Synthesized %d utterances from %d speakers", len(utterances),
        len(speakers))
    return utterances


def synthesize(alignment, speaker, inventory, rng):
    '''Renders the audio of a symbol alignment for the given speaker.

    Args:
        alignment (SymbolAlignment): the symbol alignment
        speaker (SpeakerProfile): the speaker
        inventory (SymbolInventory): the symbol inventory
        rng (numpy.random.Generator): the random generator

    Returns:
        a float32 sample vector of ``(L - 1) * hop`` samples
    '''
    sr = mfc.SAMPLE_RATE
    hop = mfc.HOP_LENGTH
    num_samples = mfd.num_samples_for_frames(len(alignment))
    time = np.arange(num_samples) / sr

    # Slowly drifting pitch contour
    drift = 1.0 + 0.05 * np.sin(
        2 * np.pi * rng.uniform(0.5, 2.0) * time + rng.uniform(0, 2 * np.pi))
    f0 = speaker.f0 * drift
    phase = 2 * np.pi * np.cumsum(f0) / sr
    num_harmonics = int((sr / 2) // (speaker.f0 * 1.1))
    harmonics = np.arange(1, num_harmonics + 1)
    voiced_source = (
        np.sin(np.outer(phase, harmonics)) / harmonics).sum(axis=1)
    noise_source = rng.standard_normal(num_samples)

    out = np.zeros(num_samples)
    for symbol, start, end in alignment.segments:
        a = max(start * hop - _FADE_SAMPLES, 0)
        b = min(end * hop + _FADE_SAMPLES, num_samples)
        if b <= a:
            continue

        if inventory.voiced[symbol]:
            source = voiced_source[a:b]
        else:
            source = 0.3 * noise_source[a:b]

        formants = inventory.formants[symbol] * speaker.formant_scale
        segment = _formant_filter(source, formants, sr)
        out[a:b] += segment * _fade_window(b - a)

    peak = np.max(np.abs(out))
    if peak > 0:
        out *= _PEAK_LEVEL / peak

    out += _NOISE_FLOOR * rng.standard_normal(num_samples)
    return out.astype(np.float32)


def make_noise(num_samples, rng, kind="white"):
    '''Generates a noise signal with unit variance.

    Args:
        num_samples (int): the number of samples
        rng (numpy.random.Generator): the random generator
        kind (str, optional): ``"white"``, ``"pink"`` or ``"brown"``

    Returns:
        a :class:`maskflow.audio.dsp.Waveform`
    '''
    white = rng.standard_normal(num_samples)
    if kind == "white":
        noise = white
    elif kind == "pink":
        b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
        a = [1.0, -2.494956002, 2.017265875, -0.522189400]
        noise = scipy.signal.lfilter(b, a, white)
    elif kind == "brown":
        noise = scipy.signal.lfilter([1.0], [1.0, -0.98], white)
    else:
        raise CorpusError("Unsupported noise kind '%s'" % kind)

    noise = noise / (np.std(noise) + 1e-12)
    return mfd.Waveform(0.1 * noise)


def write_corpus(utterances, output_dir):
    '''Writes utterances as WAV and alignment files plus a JSON manifest.

    Args:
        utterances (list): a list of :class:`Utterance`
        output_dir (str): the output directory

    Returns:
        the path to the manifest
    '''
    entries = []
    for utt in utterances:
        wav_path = os.path.join(output_dir, "wavs", utt.name + ".wav")
        mfd.write_wav(utt.waveform, wav_path)
        align_path = None
        if utt.alignment is not None:
            align_path = os.path.join(
                output_dir, "alignments", utt.name + ".txt")
            utt.alignment.write(align_path)

        entries.append(ManifestEntry(
            os.path.relpath(wav_path, output_dir),
            alignment=(
                os.path.relpath(align_path, output_dir) if align_path
                else None),
            speaker=utt.speaker_id))

    manifest_path = os.path.join(output_dir, "manifest.json")
    mfu.write_json([e.to_dict() for e in entries], manifest_path)
    logger.info(
        "Wrote %d utterances to '%s'", len(utterances), output_dir)
    return manifest_path


def load_manifest(manifest_path):
    '''Loads the utterances listed in a corpus manifest.

    Relative paths are resolved against the manifest's directory. Alignments
    must cover exactly the frames of their audio.

    Args:
        manifest_path (str): the path to a JSON manifest listing objects with
            ``wav``, optional ``alignment`` and optional ``speaker`` fields

    Returns:
        a list of :class:`Utterance`

    Raises:
        :class:`CorpusError` if the manifest is malformed
    '''
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    records = mfu.read_json(manifest_path)
    if not isinstance(records, list):
        raise CorpusError("Manifest '%s' must be a JSON list" % manifest_path)

    utterances = []
    for record in records:
        entry = ManifestEntry.from_dict(record)
        wav_path = os.path.join(base_dir, entry.wav)
        waveform = mfd.read_wav(wav_path)
        alignment = None
        if entry.alignment:
            alignment = SymbolAlignment.read(
                os.path.join(base_dir, entry.alignment))
            num_frames = mfd.frame_count(len(waveform))
            if len(alignment) != num_frames:
                raise CorpusError(
                    "Alignment of '%s' covers %d frames but the audio has %d"
                    % (entry.wav, len(alignment), num_frames))

        name = os.path.splitext(os.path.basename(entry.wav))[0]
        utterances.append(Utterance(
            name, waveform, alignment=alignment, speaker_id=entry.speaker))

    return utterances


def corpus_summary(utterances):
    '''Returns an ordered dictionary summarizing the corpus.'''
    durations = [u.duration for u in utterances]
    return OrderedDict([
        ("utterances", len(utterances)),
        ("speakers", len(set(u.speaker_id for u in utterances))),
        ("total_seconds", float(np.sum(durations)) if durations else 0.0),
        ("mean_seconds", float(np.mean(durations)) if durations else 0.0),
    ])


def _random_alignment(num_frames, vocab_size, rng):
    if num_frames < MIN_SEGMENT_FRAMES:
        raise CorpusError(
            "Cannot align %d frames into segments of at least %d frames"
            % (num_frames, MIN_SEGMENT_FRAMES))

    segments = []
    pos = 0
    prev = -1
    while pos < num_frames:
        remaining = num_frames - pos
        if remaining <= MAX_SEGMENT_FRAMES:
            length = remaining
        else:
            # The tail must still hold at least one full segment
            length = int(rng.integers(
                MIN_SEGMENT_FRAMES,
                min(MAX_SEGMENT_FRAMES, remaining - MIN_SEGMENT_FRAMES) + 1))

        symbol = int(rng.integers(0, vocab_size))
        if symbol == prev:
            symbol = (symbol + 1) % vocab_size

        segments.append((symbol, pos, pos + length))
        prev = symbol
        pos += length

    return SymbolAlignment(segments)


def _formant_filter(source, formants, sample_rate):
    nyquist = sample_rate / 2.0
    out = np.zeros_like(source)
    for k, freq in enumerate(formants):
        lo = max(freq * 0.85, 50.0) / nyquist
        hi = min(freq * 1.15, nyquist * 0.95) / nyquist
        if hi <= lo:
            continue

        sos = scipy.signal.butter(2, [lo, hi], btype="band", output="sos")
        out += scipy.signal.sosfilt(sos, source) / (k + 1)

    return out


def _fade_window(n):
    window = np.ones(n)
    fade = min(2 * _FADE_SAMPLES, n // 2)
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade)
        window[:fade] = ramp
        window[-fade:] = ramp[::-1]

    return window


class CorpusError(Exception):
    '''Exception raised when a corpus or alignment is malformed.'''
    pass
