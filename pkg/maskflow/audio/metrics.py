'''
Objective metrics for generated audio.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
import itertools
import logging

import numpy as np
from pystoi import stoi
import torch

import maskflow.constants as mfc
import maskflow.core.utils as mfu


logger = logging.getLogger(__name__)


SI_SDR_CAP_DB = 60.0

# The shortest signal the intelligibility measure accepts, in seconds
ESTOI_MIN_SECONDS = 0.4

# Metrics reported for every utterance
METRIC_NAMES = ("si_sdr", "si_sdri", "estoi", "estoii", "lsd")


def si_sdr(est, ref):
    '''Computes the scale-invariant signal-to-distortion ratio, clipped to
    ``[-60, 60]`` dB.

    Args:
        est (Waveform): the estimate
        ref (Waveform): the reference

    Returns:
        the SI-SDR, in dB

    Raises:
        :class:`MetricError` if the lengths differ or the reference is silent
    '''
    e, r = _pair(est, ref)
    ref_energy = np.dot(r, r)
    if ref_energy <= 0:
        raise MetricError("SI-SDR is undefined for a silent reference")

    alpha = np.dot(e, r) / ref_energy
    target = alpha * r
    residual = e - target
    target_energy = np.dot(target, target)
    residual_energy = np.dot(residual, residual)

    if residual_energy <= 0:
        return SI_SDR_CAP_DB
    if target_energy <= 0:
        return -SI_SDR_CAP_DB

    value = 10.0 * np.log10(target_energy / residual_energy)
    return float(np.clip(value, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


def si_sdr_improvement(est, mixture, ref):
    '''Computes the SI-SDR improvement of the estimate over the mixture.

    Args:
        est (Waveform): the estimate
        mixture (Waveform): the unprocessed input
        ref (Waveform): the reference

    Returns:
        the improvement, in dB
    '''
    return si_sdr(est, ref) - si_sdr(mixture, ref)


def estoi(est, ref):
    '''Computes the extended short-time objective intelligibility.

    Args:
        est (Waveform): the estimate
        ref (Waveform): the reference

    Returns:
        a score in [-1, 1]

    Raises:
        :class:`MetricError` if the signals are too short or mismatched
    '''
    e, r = _pair(est, ref)
    sample_rate = _sample_rate(ref)
    if len(r) < ESTOI_MIN_SECONDS * sample_rate:
        raise MetricError(
            "ESTOI needs at least %.1fs of audio; found %.3fs"
            % (ESTOI_MIN_SECONDS, len(r) / sample_rate))

    return float(stoi(r, e, sample_rate, extended=True))


def estoi_improvement(est, mixture, ref):
    '''Computes the ESTOI improvement of the estimate over the mixture.'''
    return estoi(est, ref) - estoi(mixture, ref)


def permutation_invariant(metric, ests, refs):
    '''Scores estimates against references under the best assignment.

    Args:
        metric (function): a function ``metric(est, ref)`` to maximize
        ests (list): the estimates
        refs (list): the references

    Returns:
        a ``(score, permutation)`` tuple, where ``score`` is the best mean
        metric and ``permutation[k]`` is the index of the estimate assigned
        to reference ``k``. Ties resolve to the earliest permutation in
        lexicographic order, starting with the identity

    Raises:
        :class:`MetricError` if the lists are mismatched or too long
    '''
    if len(ests) != len(refs):
        raise MetricError(
            "Found %d estimates but %d references" % (len(ests), len(refs)))
    if not 1 <= len(refs) <= 3:
        raise MetricError(
            "Permutation-invariant scoring supports 1 to 3 sources; found %d"
            % len(refs))

    best_score = None
    best_perm = None
    for perm in itertools.permutations(range(len(refs))):
        score = float(np.mean(
            [metric(ests[p], ref) for p, ref in zip(perm, refs)]))
        if best_score is None or score > best_score:
            best_score = score
            best_perm = perm

    return best_score, best_perm


def log_spectral_distance(est_mel, ref_mel):
    '''Computes the root-mean-square difference of two log-Mel
    spectrograms.

    Args:
        est_mel (MelSpectrogram or torch.Tensor): the estimate
        ref_mel (MelSpectrogram or torch.Tensor): the reference

    Returns:
        a non-negative float

    Raises:
        :class:`MetricError` if the shapes differ
    '''
    a = _mel_values(est_mel)
    b = _mel_values(ref_mel)
    if a.shape != b.shape:
        raise MetricError(
            "Shape mismatch: %s vs %s" % (tuple(a.shape), tuple(b.shape)))

    return float(torch.sqrt(torch.mean((a - b) ** 2)))


class UtteranceMetrics(mfu.Serializable):
    '''The metrics of one evaluated utterance.

    Attributes:
        name (str): the utterance name
        si_sdr (float): the SI-SDR, in dB
        si_sdri (float): the SI-SDR improvement, in dB
        estoi (float): the ESTOI score
        estoii (float): the ESTOI improvement
        lsd (float): the log-spectral distance
        permutation (list): the chosen source assignment, for separation
        error (str): the failure message, if the utterance failed
    '''

    def __init__(self, name, si_sdr=None, si_sdri=None, estoi=None,
                 estoii=None, lsd=None, permutation=None, error=None):
        self.name = name
        self.si_sdr = si_sdr
        self.si_sdri = si_sdri
        self.estoi = estoi
        self.estoii = estoii
        self.lsd = lsd
        self.permutation = list(permutation) if permutation else None
        self.error = error

    @property
    def failed(self):
        '''Whether the utterance failed to evaluate.'''
        return self.error is not None

    @classmethod
    def failure(cls, name, error):
        '''Builds the record of a failed utterance.'''
        return cls(name, error=str(error))

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class MetricReport(mfu.Serializable):
    '''Per-utterance metrics and their corpus summary for one scenario.

    Attributes:
        scenario (str): the evaluated scenario
        records (list): a list of :class:`UtteranceMetrics`
    '''

    def __init__(self, scenario, records=None):
        self.scenario = scenario
        self.records = list(records or [])

    def add(self, record):
        '''Appends an utterance record.'''
        self.records.append(record)

    @property
    def num_failed(self):
        '''The number of failed utterances.'''
        return sum(1 for r in self.records if r.failed)

    def values(self, metric):
        '''Returns the values of the given metric over successful
        utterances.
        '''
        return [
            getattr(r, metric) for r in self.records
            if not r.failed and getattr(r, metric) is not None]

    def summary(self):
        '''Returns the corpus mean, standard deviation, median and count of
        every metric, plus the number of failed and capped utterances.
        '''
        d = OrderedDict()
        for metric in METRIC_NAMES:
            vals = self.values(metric)
            if not vals:
                continue

            d[metric] = OrderedDict([
                ("mean", float(np.mean(vals))),
                ("std", float(np.std(vals))),
                ("median", float(np.median(vals))),
                ("count", len(vals)),
            ])

        d["num_utterances"] = len(self.records)
        d["num_failed"] = self.num_failed
        d["num_si_sdr_capped"] = sum(
            1 for v in self.values("si_sdr") if abs(v) >= SI_SDR_CAP_DB)
        return d

    def to_dict(self):
        d = super(MetricReport, self).to_dict()
        d["summary"] = self.summary()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["scenario"],
            records=[UtteranceMetrics.from_dict(r) for r in d["records"]])


def _pair(est, ref):
    e = np.asarray(_samples(est), dtype=np.float64)
    r = np.asarray(_samples(ref), dtype=np.float64)
    if e.shape != r.shape:
        raise MetricError(
            "Length mismatch: %d vs %d samples" % (len(e), len(r)))
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(r))):
        raise MetricError("Signals must be finite")

    return e, r


def _samples(w):
    return getattr(w, "samples", w)


def _sample_rate(w):
    return getattr(w, "sample_rate", mfc.SAMPLE_RATE)


def _mel_values(m):
    values = m if torch.is_tensor(m) else getattr(m, "values", m)
    return torch.as_tensor(values).double()


class MetricError(Exception):
    '''Exception raised when a metric cannot be computed.'''
    pass
