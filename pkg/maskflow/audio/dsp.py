'''
Conversions between waveforms and log-Mel spectrograms.

The forward path is a centered Hann-window STFT followed by a Mel filter bank
and a floored natural log. The inverse path multiplies the exponentiated Mel
energies by the pseudo-inverse of the filter bank, reuses the phase of a
reference STFT, and applies the inverse STFT.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import functools
import logging
import struct

import librosa
import numpy as np
import soundfile as sf
import torch

import maskflow.constants as mfc
import maskflow.core.utils as mfu


logger = logging.getLogger(__name__)


MEL_MAGIC = b"MELS"
MEL_FORMAT_VERSION = 1
_MEL_HEADER = struct.Struct("<4sIII")

# Mean absolute log-Mel error allowed for a logmel -> wave -> logmel round trip
DEFAULT_REANALYSIS_TOLERANCE = 0.5


class Waveform(object):
    '''A mono time-domain signal.

    Attributes:
        samples (numpy.ndarray): a float32 vector of amplitudes in [-1, 1]
        sample_rate (int): the sample rate, in Hz
    '''

    def __init__(self, samples, sample_rate=mfc.SAMPLE_RATE):
        '''Creates a Waveform instance.

        Args:
            samples (array-like): the sample values
            sample_rate (int, optional): the sample rate, in Hz. The default
                is 16kHz

        Raises:
            :class:`DSPError` if the samples are not a finite vector
        '''
        samples = np.asarray(samples, dtype=np.float32)
        if samples.ndim != 1:
            raise DSPError(
                "Waveforms must be mono; found shape %s" % (samples.shape,))
        if not np.all(np.isfinite(samples)):
            raise DSPError("Waveform contains non-finite samples")

        self.samples = samples
        self.sample_rate = int(sample_rate)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        '''The duration of the waveform, in seconds.'''
        return len(self.samples) / self.sample_rate

    @property
    def rms(self):
        '''The root-mean-square amplitude of the waveform.'''
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples.astype(np.float64) ** 2)))

    def scaled(self, gain):
        '''Returns a copy of the waveform multiplied by the given gain.'''
        return Waveform(self.samples * np.float32(gain), self.sample_rate)


class MelSpectrogram(object):
    '''A log-Mel feature matrix.

    Attributes:
        values (torch.Tensor): a ``[L, n_mels]`` float tensor of natural-log
            Mel energies
        frame_rate (int): the frame rate, in Hz
    '''

    def __init__(self, values, frame_rate=mfc.FRAME_RATE):
        values = torch.as_tensor(values)
        if values.dim() != 2 or values.shape[0] < 1:
            raise DSPError(
                "Mel spectrograms must have shape [L >= 1, d]; found %s"
                % (tuple(values.shape),))
        if not torch.isfinite(values).all():
            raise DSPError("Mel spectrogram contains non-finite values")

        self.values = values
        self.frame_rate = frame_rate

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_mels(self):
        '''The number of Mel bins.'''
        return self.values.shape[1]

    @property
    def duration(self):
        '''The duration covered by the frames, in seconds.'''
        return len(self) / self.frame_rate


class ComplexSpectrogram(object):
    '''A complex STFT matrix.

    Attributes:
        values (torch.Tensor): a ``[L, F]`` complex tensor
        fft_size (int): the FFT size, in samples
        hop (int): the hop length, in samples
        window_length (int): the analysis window length, in samples
        num_samples (int): the length of the analyzed signal, in samples
    '''

    def __init__(
            self, values, fft_size=mfc.FFT_SIZE, hop=mfc.HOP_LENGTH,
            window_length=mfc.WINDOW_LENGTH, num_samples=None):
        if values.shape[-1] != fft_size // 2 + 1:
            raise DSPError(
                "Expected %d frequency bins; found %d"
                % (fft_size // 2 + 1, values.shape[-1]))

        self.values = values
        self.fft_size = fft_size
        self.hop = hop
        self.window_length = window_length
        self.num_samples = num_samples

    def __len__(self):
        return self.values.shape[0]

    @property
    def magnitude(self):
        '''The ``[L, F]`` magnitude spectrogram.'''
        return self.values.abs()

    @property
    def phase(self):
        '''The ``[L, F]`` phase spectrogram, in radians.'''
        return self.values.angle()


def frame_count(num_samples, hop=mfc.HOP_LENGTH):
    '''Returns the number of STFT frames produced for a signal of the given
    length under centered (zero-padded) framing.

    Args:
        num_samples (int): the number of samples
        hop (int, optional): the hop length

    Returns:
        the number of frames
    '''
    return 1 + num_samples // hop


def num_samples_for_frames(num_frames, hop=mfc.HOP_LENGTH):
    '''Returns the smallest signal length that yields the given number of
    frames.

    Args:
        num_frames (int): the number of frames
        hop (int, optional): the hop length

    Returns:
        the number of samples
    '''
    return (num_frames - 1) * hop


def stft(w):
    '''Computes the STFT of the waveform.

    Frames are centered on multiples of the hop length, the signal is
    zero-padded by half an FFT on both sides, and a periodic Hann window of
    40ms is used.

    Args:
        w (Waveform): the waveform

    Returns:
        a :class:`ComplexSpectrogram`

    Raises:
        :class:`DSPError` if the waveform is empty or has the wrong sample
        rate
    '''
    _validate_waveform(w)
    x = torch.from_numpy(w.samples)
    spec = torch.stft(
        x, n_fft=mfc.FFT_SIZE, hop_length=mfc.HOP_LENGTH,
        win_length=mfc.WINDOW_LENGTH,
        window=_window(mfc.WINDOW_LENGTH, x.dtype),
        center=True, pad_mode="constant", return_complex=True)

    return ComplexSpectrogram(spec.transpose(0, 1), num_samples=len(w))


def istft(spec, length=None):
    '''Inverts an STFT computed by :func:`stft`.

    Args:
        spec (ComplexSpectrogram): the complex spectrogram
        length (int, optional): the desired number of output samples. By
            default, ``spec.num_samples`` is used when available, and
            ``(L - 1) * hop`` otherwise

    Returns:
        a :class:`Waveform`
    '''
    if length is None:
        length = spec.num_samples
    if length is None:
        length = num_samples_for_frames(len(spec), hop=spec.hop)

    values = spec.values.transpose(0, 1)
    real_dtype = values.real.dtype
    x = torch.istft(
        values, n_fft=spec.fft_size, hop_length=spec.hop,
        win_length=spec.window_length,
        window=_window(spec.window_length, real_dtype), center=True,
        length=length)

    return Waveform(x.detach().cpu().numpy())


def mel_filterbank(n_mels, fft_size, sample_rate):
    '''Builds a bank of triangular Mel-scale filters spanning [0, Nyquist].

    Args:
        n_mels (int): the number of filters
        fft_size (int): the FFT size, which must be a power of two
        sample_rate (int): the sample rate, in Hz

    Returns:
        a float32 ``[n_mels, fft_size // 2 + 1]`` tensor

    Raises:
        :class:`DSPError` if the arguments are invalid
    '''
    if n_mels < 1:
        raise DSPError("n_mels must be positive; found %d" % n_mels)
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise DSPError("fft_size must be a power of two; found %d" % fft_size)

    num_bins = fft_size // 2 + 1
    if n_mels > num_bins:
        raise DSPError(
            "Cannot build %d Mel filters over %d FFT bins"
            % (n_mels, num_bins))

    return _mel_basis(n_mels, fft_size, sample_rate).clone()


def mel_pseudo_inverse(n_mels, fft_size, sample_rate):
    '''Returns the Moore-Penrose pseudo-inverse of :func:`mel_filterbank`.

    Args:
        n_mels (int): the number of filters
        fft_size (int): the FFT size
        sample_rate (int): the sample rate, in Hz

    Returns:
        a float32 ``[fft_size // 2 + 1, n_mels]`` tensor
    '''
    mel_filterbank(n_mels, fft_size, sample_rate)
    return _mel_inverse(n_mels, fft_size, sample_rate).clone()


def wave_to_logmel(w, n_mels=mfc.N_MELS):
    '''Computes the log-Mel spectrogram of the waveform.

    Args:
        w (Waveform): the waveform
        n_mels (int, optional): the number of Mel bins

    Returns:
        a :class:`MelSpectrogram`
    '''
    return spec_to_logmel(stft(w), n_mels=n_mels)


def spec_to_logmel(spec, n_mels=mfc.N_MELS):
    '''Computes the log-Mel spectrogram of a complex STFT.

    Args:
        spec (ComplexSpectrogram): the complex spectrogram
        n_mels (int, optional): the number of Mel bins

    Returns:
        a :class:`MelSpectrogram`
    '''
    basis = _mel_basis(n_mels, spec.fft_size, mfc.SAMPLE_RATE)
    mel = spec.magnitude.to(basis.dtype) @ basis.t()
    return MelSpectrogram(torch.log(torch.clamp(mel, min=mfc.LOG_FLOOR_EPS)))


def logmel_to_wave(m, phase_source, length=None):
    '''Inverts a log-Mel spectrogram to a waveform using the filter bank
    pseudo-inverse and the phase of a reference STFT.

    Args:
        m (MelSpectrogram): the log-Mel spectrogram
        phase_source (ComplexSpectrogram): the STFT whose phase is reused. It
            must have at least as many frames as ``m``; extra frames are
            ignored
        length (int, optional): the desired number of output samples. By
            default, the length of the signal analyzed by ``phase_source`` is
            used when the frame counts match

    Returns:
        a :class:`Waveform`

    Raises:
        :class:`DSPError` if the phase source has too few frames
    '''
    num_frames = len(m)
    if len(phase_source) < num_frames:
        raise DSPError(
            "Phase source has %d frames but the Mel spectrogram has %d"
            % (len(phase_source), num_frames))

    magnitude = mel_to_linear(m, fft_size=phase_source.fft_size)
    phase = phase_source.phase[:num_frames].to(magnitude.dtype)
    values = torch.polar(magnitude, phase)

    if length is None and len(phase_source) == num_frames:
        length = phase_source.num_samples

    spec = ComplexSpectrogram(
        values, fft_size=phase_source.fft_size, hop=phase_source.hop,
        window_length=phase_source.window_length)
    return istft(spec, length=length)


def mel_to_linear(m, fft_size=mfc.FFT_SIZE):
    '''Maps log-Mel energies back to a non-negative linear magnitude
    spectrogram via the filter bank pseudo-inverse.

    Args:
        m (MelSpectrogram): the log-Mel spectrogram
        fft_size (int, optional): the FFT size

    Returns:
        a ``[L, fft_size // 2 + 1]`` tensor
    '''
    inverse = _mel_inverse(m.n_mels, fft_size, mfc.SAMPLE_RATE)
    energies = torch.exp(m.values.to(inverse.dtype))
    return torch.clamp(energies @ inverse.t(), min=0.0)


def reanalysis_error(m, phase_source):
    '''Computes the mean absolute log-Mel difference introduced by a
    logmel -> wave -> logmel round trip.

    Args:
        m (MelSpectrogram): the log-Mel spectrogram
        phase_source (ComplexSpectrogram): the STFT whose phase is reused

    Returns:
        the mean absolute difference, in nats
    '''
    w = logmel_to_wave(m, phase_source)
    m2 = wave_to_logmel(w, n_mels=m.n_mels)
    num_frames = min(len(m), len(m2))
    diff = m2.values[:num_frames] - m.values[:num_frames].to(m2.values.dtype)
    return float(diff.abs().mean())


def read_wav(path):
    '''Reads a mono 16kHz WAV file.

    Args:
        path (str): the path to the WAV file

    Returns:
        a :class:`Waveform`

    Raises:
        :class:`DSPError` if the file cannot be read or is not mono 16kHz
        audio
    '''
    try:
        samples, sample_rate = sf.read(
            path, dtype="float32", always_2d=False)
    except (OSError, RuntimeError) as e:
        raise DSPError("Unable to read audio from '%s': %s" % (path, e))

    if samples.ndim != 1:
        raise DSPError("Expected mono audio in '%s'" % path)
    if sample_rate != mfc.SAMPLE_RATE:
        raise DSPError(
            "Expected %dHz audio in '%s'; found %dHz"
            % (mfc.SAMPLE_RATE, path, sample_rate))

    return Waveform(samples, sample_rate=sample_rate)


def write_wav(w, path):
    '''Writes the waveform as a 16-bit PCM mono WAV file.

    Samples outside [-1, 1] are clipped.

    Args:
        w (Waveform): the waveform
        path (str): the output path
    '''
    _validate_waveform(w)
    mfu.ensure_basedir(path)
    sf.write(
        path, np.clip(w.samples, -1.0, 1.0), w.sample_rate,
        subtype="PCM_16", format="WAV")


def write_mel(m, path):
    '''Writes the Mel spectrogram to a binary feature container.

    The container consists of the header ``(b"MELS", version, L, d)``, packed
    as little-endian unsigned 32-bit integers, followed by the row-major
    float32 values.

    Args:
        m (MelSpectrogram): the Mel spectrogram
        path (str): the output path
    '''
    values = m.values.detach().cpu().numpy().astype("<f4")
    header = _MEL_HEADER.pack(
        MEL_MAGIC, MEL_FORMAT_VERSION, values.shape[0], values.shape[1])
    mfu.ensure_basedir(path)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(values).tobytes())


def read_mel(path):
    '''Reads a Mel spectrogram written by :func:`write_mel`.

    Args:
        path (str): the input path

    Returns:
        a :class:`MelSpectrogram`

    Raises:
        :class:`DSPError` if the file cannot be read or is not a valid
        feature container
    '''
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DSPError("Unable to read features from '%s': %s" % (path, e))

    if len(data) < _MEL_HEADER.size:
        raise DSPError("File '%s' is too short to be a Mel container" % path)

    magic, version, num_frames, n_mels = _MEL_HEADER.unpack_from(data)
    if magic != MEL_MAGIC:
        raise DSPError("File '%s' is not a Mel container" % path)
    if version != MEL_FORMAT_VERSION:
        raise DSPError(
            "Unsupported Mel container version %d in '%s'" % (version, path))

    expected = _MEL_HEADER.size + 4 * num_frames * n_mels
    if len(data) != expected:
        raise DSPError(
            "Mel container '%s' has %d bytes; expected %d"
            % (path, len(data), expected))

    values = np.frombuffer(data, dtype="<f4", offset=_MEL_HEADER.size)
    values = values.reshape(num_frames, n_mels).astype(np.float32)
    return MelSpectrogram(torch.from_numpy(values))


def _validate_waveform(w):
    if len(w) == 0:
        raise DSPError("Cannot analyze an empty waveform")
    if w.sample_rate != mfc.SAMPLE_RATE:
        raise DSPError(
            "Expected %dHz audio; found %dHz"
            % (mfc.SAMPLE_RATE, w.sample_rate))


def _window(length, dtype):
    return torch.hann_window(length, periodic=True, dtype=dtype)


@functools.lru_cache(maxsize=None)
def _mel_basis(n_mels, fft_size, sample_rate):
    basis = librosa.filters.mel(
        sr=sample_rate, n_fft=fft_size, n_mels=n_mels, fmin=0.0,
        fmax=sample_rate / 2.0, htk=False, norm=None)
    return torch.from_numpy(basis.astype(np.float32))


@functools.lru_cache(maxsize=None)
def _mel_inverse(n_mels, fft_size, sample_rate):
    basis = _mel_basis(n_mels, fft_size, sample_rate).double()
    return torch.linalg.pinv(basis).float()


class DSPError(Exception):
    '''Exception raised when a signal processing operation fails.'''
    pass
