'''
Task-specific condition/target pairs, task datasets and multi-task mixing.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import logging
import math

import numpy as np
import torch

import maskflow.audio.dsp as mfd
import maskflow.constants as mfc
import maskflow.flows.masking as mfk
import maskflow.flows.model as mfn


logger = logging.getLogger(__name__)


# Length of the visible prompt of the continuation geometry, in seconds
CONTINUATION_PROMPT_SECONDS = 3.0

# Frame energy, relative to the source peak, above which a frame is voiced
_ONSET_THRESHOLD = 1e-3


class TaskTag(object):
    '''Enumeration of the supported tasks.'''

    PRETRAIN = "pretrain"
    ENHANCE = "enhance"
    SEPARATE = "separate"
    SYNTH = "synth"

    ALL = (PRETRAIN, ENHANCE, SEPARATE, SYNTH)


class PairedExample(object):
    '''A condition/target pair of a task.

    Attributes:
        target (MelSpectrogram): the target features ``x1``
        cond (ConditionBundle): the condition ``y``
        task_tag (str): the task, one of :class:`TaskTag`
        loss_region (numpy.ndarray): a boolean vector selecting the frames
            that contribute to the loss
        aux (dict): reference waveforms used for evaluation, keyed by
            ``"clean"``, ``"mixture"``, ``"noise"`` or ``"sources"``
        phase_source (ComplexSpectrogram): the STFT whose phase is reused to
            invert generated features, if any
    '''

    def __init__(self, target, cond, task_tag, loss_region=None, aux=None,
                 phase_source=None):
        if len(cond) != len(target):
            raise TaskError(
                "Condition has %d frames but the target has %d"
                % (len(cond), len(target)))

        if loss_region is None:
            loss_region = np.ones(len(target), dtype=bool)

        self.target = target
        self.cond = cond
        self.task_tag = task_tag
        self.loss_region = np.asarray(loss_region, dtype=bool)
        self.aux = aux or {}
        self.phase_source = phase_source

    def __len__(self):
        return len(self.target)

    @property
    def duration(self):
        '''The duration of the target, in seconds.'''
        return self.target.duration


def mix_at_snr(clean, noise, snr_db):
    '''Mixes noise into a clean signal at the requested SNR.

    The noise is tiled or cropped to the length of the clean signal. An SNR
    of ``+inf`` returns the clean signal and all-zero noise.

    Args:
        clean (Waveform): the clean signal
        noise (Waveform): the noise
        snr_db (float): the desired SNR, in dB

    Returns:
        a ``(mixture, scaled_noise)`` tuple of Waveforms, with
        ``mixture == clean + scaled_noise`` sample-wise

    Raises:
        :class:`TaskError` if the noise has no energy
    '''
    if clean.sample_rate != noise.sample_rate:
        raise TaskError(
            "Sample rate mismatch: %d vs %d"
            % (clean.sample_rate, noise.sample_rate))
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise TaskError("Invalid SNR %s" % snr_db)

    num = len(clean)
    if snr_db == math.inf:
        scaled = np.zeros(num, dtype=np.float32)
    else:
        n = _fit_length(noise.samples, num).astype(np.float64)
        noise_power = np.mean(n ** 2)
        if noise_power <= 0:
            raise TaskError("Cannot mix zero-energy noise at a finite SNR")

        clean_power = np.mean(clean.samples.astype(np.float64) ** 2)
        gain = np.sqrt(clean_power / (noise_power * 10 ** (snr_db / 10.0)))
        scaled = (gain * n).astype(np.float32)

    mixture = clean.samples + scaled
    return (
        mfd.Waveform(mixture, clean.sample_rate),
        mfd.Waveform(scaled, clean.sample_rate))


def build_enhance_example(clean, noise, snr_db, drop_prob, rng):
    '''Builds a denoising example.

    The condition is the Mel spectrogram of the noisy mixture. With
    probability ``drop_prob`` it is replaced by zeros; it is never partially
    masked.

    Args:
        clean (Waveform): the clean signal
        noise (Waveform): the noise
        snr_db (float): the mixing SNR, in dB
        drop_prob (float): the probability of dropping the condition
        rng (numpy.random.Generator): the random generator

    Returns:
        a :class:`PairedExample`
    '''
    mixture, scaled = mix_at_snr(clean, noise, snr_db)
    target = mfd.wave_to_logmel(clean)
    mix_spec = mfd.stft(mixture)
    cond_mel = mfd.spec_to_logmel(mix_spec)
    cond = mfn.ConditionBundle(cond_mel.values)
    if drop_prob > 0 and rng.random() < drop_prob:
        cond = cond.dropped()

    return PairedExample(
        target, cond, TaskTag.ENHANCE,
        aux={"clean": clean, "mixture": mixture, "noise": scaled},
        phase_source=mix_spec)


def build_separation_example(sources, noise=None, rng=None, snr_db=None):
    '''Builds a separation example by time-axis concatenation.

    Sources are zero-padded to equal length and summed in input order into
    the mixture, optionally with noise. Targets are ordered by the onset of
    their first voiced frame and concatenated along time; the mixture
    condition is tiled once per source.

    Args:
        sources (list): 2 or 3 Waveforms
        noise (Waveform, optional): noise added to the mixture only
        rng (numpy.random.Generator, optional): unused; accepted for
            interface symmetry with the other builders
        snr_db (float, optional): the SNR of the noise relative to the
            summed sources. Required when ``noise`` is provided

    Returns:
        a :class:`PairedExample`

    Raises:
        :class:`TaskError` if the number of sources is not 2 or 3
    '''
    num_sources = len(sources)
    if num_sources not in (2, 3):
        raise TaskError(
            "Separation needs 2 or 3 sources; found %d" % num_sources)

    length = max(len(s) for s in sources)
    padded = [
        mfd.Waveform(_pad(s.samples, length), s.sample_rate)
        for s in sources]

    mixture = padded[0].samples.copy()
    for s in padded[1:]:
        mixture = mixture + s.samples

    aux = {}
    mixture = mfd.Waveform(mixture)
    if noise is not None:
        if snr_db is None:
            raise TaskError("An SNR is required to add noise")
        speech = mixture
        mixture, scaled = mix_at_snr(speech, noise, snr_db)
        aux["noise"] = scaled
        aux["speech"] = speech

    order = sorted(range(num_sources), key=lambda i: _onset(padded[i]))
    ordered = [padded[i] for i in order]

    mix_spec = mfd.stft(mixture)
    cond_mel = mfd.spec_to_logmel(mix_spec).values
    target = torch.cat(
        [mfd.wave_to_logmel(s).values for s in ordered], dim=0)
    cond = mfn.ConditionBundle(cond_mel.repeat(num_sources, 1))

    aux.update({"sources": ordered, "mixture": mixture, "order": order})
    return PairedExample(
        mfd.MelSpectrogram(target), cond, TaskTag.SEPARATE, aux=aux,
        phase_source=mix_spec)


def build_synth_example(utterance, alignment, mask_policy, rng, plan=None):
    '''Builds an aligned-symbol synthesis (infilling) example.

    Args:
        utterance (Waveform or MelSpectrogram): the utterance
        alignment (SymbolAlignment or array-like): the frame-level symbol
            alignment
        mask_policy (MaskPolicy): the masking policy
        rng (numpy.random.Generator): the random generator
        plan (MaskPlan, optional): an explicit mask plan, which overrides
            the policy

    Returns:
        a :class:`PairedExample` whose loss region is the masked frames

    Raises:
        :class:`TaskError` if the alignment does not cover every frame
    '''
    phase_source = None
    aux = {}
    if isinstance(utterance, mfd.Waveform):
        phase_source = mfd.stft(utterance)
        target = mfd.spec_to_logmel(phase_source)
        aux["clean"] = utterance
    else:
        target = utterance

    ids = alignment.frame_ids() if hasattr(alignment, "frame_ids") else (
        np.asarray(alignment, dtype=np.int64))
    if len(ids) != len(target):
        raise TaskError(
            "Alignment covers %d frames but the utterance has %d"
            % (len(ids), len(target)))

    if plan is None:
        plan = mfk.sample_mask_plan(len(target), mask_policy, rng)

    cond = mfn.ConditionBundle(
        mfk.apply_mask(target.values, plan),
        symbol_ids=torch.from_numpy(ids))
    return PairedExample(
        target, cond, TaskTag.SYNTH, loss_region=plan.frame_mask.copy(),
        aux=aux, phase_source=phase_source)


def build_continuation_example(utterance, alignment,
                               prompt_seconds=CONTINUATION_PROMPT_SECONDS):
    '''Builds a synthesis example whose first ``prompt_seconds`` are visible
    and whose remainder is generated from the symbols.

    Args:
        utterance (Waveform): the utterance
        alignment (SymbolAlignment): the symbol alignment
        prompt_seconds (float, optional): the visible prompt duration

    Returns:
        a :class:`PairedExample`
    '''
    num_frames = mfd.frame_count(len(utterance))
    n_prefix = min(int(round(prompt_seconds * mfc.FRAME_RATE)), num_frames)
    plan = mfk.prefix_mask_plan(num_frames, n_prefix)
    return build_synth_example(utterance, alignment, None, None, plan=plan)


class TaskDataset(object):
    '''Base class for datasets that draw :class:`PairedExample` instances.

    Subclasses must implement :func:`__len__` and :func:`draw`.
    '''

    task_tag = None

    def __len__(self):
        raise NotImplementedError("subclass must implement __len__()")

    def draw(self, index, rng):
        '''Draws the example at the given index.

        Args:
            index (int): the item index
            rng (numpy.random.Generator): the random generator used for
                noise, SNR and masking choices

        Returns:
            a :class:`PairedExample`
        '''
        raise NotImplementedError("subclass must implement draw()")


class MaskedAudioDataset(TaskDataset):
    '''Unlabeled utterances whose condition is a masked copy of the target,
    drawn with a fresh mask plan each time.
    '''

    task_tag = TaskTag.PRETRAIN

    def __init__(self, mels, mask_policy):
        self.mels = mels
        self.mask_policy = mask_policy

    def __len__(self):
        return len(self.mels)

    def draw(self, index, rng):
        mel = self.mels[index]
        plan = mfk.sample_mask_plan(len(mel), self.mask_policy, rng)
        cond = mfn.ConditionBundle(
            mfk.apply_mask(mel.values, plan), cond_dropped=plan.fully_masked)
        return PairedExample(
            mel, cond, TaskTag.PRETRAIN, loss_region=plan.frame_mask.copy())


class EnhanceDataset(TaskDataset):
    '''Noisy/clean pairs built on the fly from clean utterances and noise.'''

    task_tag = TaskTag.ENHANCE

    def __init__(self, utterances, noises, snr_range_db, drop_prob=0.0):
        if not noises:
            raise TaskError("At least one noise signal is required")

        self.utterances = utterances
        self.noises = noises
        self.snr_range_db = snr_range_db
        self.drop_prob = drop_prob

    def __len__(self):
        return len(self.utterances)

    def draw(self, index, rng):
        utt = self.utterances[index]
        noise = self.noises[int(rng.integers(len(self.noises)))]
        snr_db = float(rng.uniform(*self.snr_range_db))
        return build_enhance_example(
            utt.waveform, _random_crop(noise, len(utt.waveform), rng),
            snr_db, self.drop_prob, rng)


class SeparationDataset(TaskDataset):
    '''Mixtures of 2 or 3 utterances, optionally with noise.'''

    task_tag = TaskTag.SEPARATE

    def __init__(self, utterances, num_sources=(2,), noises=None,
                 snr_range_db=None, max_seconds=None):
        if len(utterances) < max(num_sources):
            raise TaskError(
                "Need at least %d utterances; found %d"
                % (max(num_sources), len(utterances)))

        self.utterances = utterances
        self.num_sources = tuple(num_sources)
        self.noises = noises
        self.snr_range_db = snr_range_db
        self.max_seconds = max_seconds

    def __len__(self):
        return len(self.utterances)

    def draw(self, index, rng):
        k = int(rng.choice(self.num_sources))
        others = [i for i in range(len(self.utterances)) if i != index]
        picks = [index] + list(rng.choice(others, size=k - 1, replace=False))
        sources = [self.utterances[i].waveform for i in picks]
        if self.max_seconds is not None:
            max_len = mfd.num_samples_for_frames(
                int(self.max_seconds * mfc.FRAME_RATE) + 1)
            sources = [_random_crop(s, min(len(s), max_len), rng)
                       for s in sources]

        noise = None
        snr_db = None
        if self.noises:
            length = max(len(s) for s in sources)
            noise = self.noises[int(rng.integers(len(self.noises)))]
            noise = _random_crop(noise, length, rng)
            snr_db = float(rng.uniform(*self.snr_range_db))

        return build_separation_example(
            sources, noise=noise, rng=rng, snr_db=snr_db)


class SynthDataset(TaskDataset):
    '''Masked infilling of aligned utterances.'''

    task_tag = TaskTag.SYNTH

    def __init__(self, utterances, mask_policy):
        missing = [u.name for u in utterances if u.alignment is None]
        if missing:
            raise TaskError(
                "Utterances without alignments: %s" % ", ".join(missing[:5]))

        self.utterances = utterances
        self.mask_policy = mask_policy

    def __len__(self):
        return len(self.utterances)

    def draw(self, index, rng):
        utt = self.utterances[index]
        return build_synth_example(
            utt.waveform, utt.alignment, self.mask_policy, rng)


class StaticDataset(TaskDataset):
    '''A dataset of precomputed examples.'''

    def __init__(self, examples):
        self.examples = list(examples)
        if self.examples:
            self.task_tag = self.examples[0].task_tag

    def __len__(self):
        return len(self.examples)

    def draw(self, index, rng):
        return self.examples[index]


def multitask_mixer(datasets, upsample_factors, rng):
    '''Yields an infinite shuffled stream of examples in which each item of
    dataset ``i`` appears ``upsample_factors[i]`` times per epoch.

    Args:
        datasets (list): a list of :class:`TaskDataset`
        upsample_factors (list): one positive integer per dataset
        rng (numpy.random.Generator): the random generator

    Returns:
        a generator of :class:`PairedExample`

    Raises:
        :class:`TaskError` if a dataset is empty or the factors are invalid
    '''
    if len(datasets) != len(upsample_factors):
        raise TaskError(
            "Found %d datasets but %d upsampling factors"
            % (len(datasets), len(upsample_factors)))
    for factor in upsample_factors:
        if int(factor) != factor or factor < 1:
            raise TaskError(
                "Upsampling factors must be positive integers; found %s"
                % factor)
    for ds in datasets:
        if len(ds) == 0:
            raise TaskError("Cannot mix an empty dataset")

    return _mix(datasets, [int(f) for f in upsample_factors], rng)


def _mix(datasets, factors, rng):
    pool = np.array([
        (i, j) for i, (ds, f) in enumerate(zip(datasets, factors))
        for _ in range(f) for j in range(len(ds))], dtype=np.int64)

    while True:
        for i, j in pool[rng.permutation(len(pool))]:
            yield datasets[i].draw(int(j), rng)


def example_stream(dataset, rng):
    '''Yields an infinite stream of a single dataset, reshuffled each
    epoch.
    '''
    return multitask_mixer([dataset], [1], rng)


def collate(examples):
    '''Pads examples to a common length and stacks them into a batch.

    Args:
        examples (list): a list of :class:`PairedExample`

    Returns:
        a :class:`Batch`
    '''
    if not examples:
        raise TaskError("Cannot collate an empty batch")

    max_len = max(len(ex) for ex in examples)
    B = len(examples)
    d = examples[0].target.n_mels
    d_cond = examples[0].cond.cond_frames.shape[-1]

    target = torch.zeros(B, max_len, d)
    cond = torch.zeros(B, max_len, d_cond)
    symbol_ids = torch.full((B, max_len), mfn.NO_SYMBOL, dtype=torch.long)
    loss_region = torch.zeros(B, max_len, dtype=torch.bool)
    valid = torch.zeros(B, max_len, dtype=torch.bool)
    has_symbols = False

    for b, ex in enumerate(examples):
        L = len(ex)
        target[b, :L] = ex.target.values.float()
        cond[b, :L] = ex.cond.cond_frames.float()
        loss_region[b, :L] = torch.from_numpy(ex.loss_region)
        valid[b, :L] = True
        if ex.cond.symbol_ids is not None:
            symbol_ids[b, :L] = ex.cond.symbol_ids.long()
            has_symbols = True

    bundle = mfn.ConditionBundle(
        cond, symbol_ids=symbol_ids if has_symbols else None)
    return Batch(target, bundle, loss_region, valid)


class Batch(object):
    '''A padded batch of examples.

    Attributes:
        target (torch.Tensor): the ``[B, L, d]`` targets
        cond (ConditionBundle): the ``[B, L, d_cond]`` conditions
        loss_region (torch.Tensor): the ``[B, L]`` loss regions
        valid (torch.Tensor): the ``[B, L]`` mask of non-padding frames
    '''

    def __init__(self, target, cond, loss_region, valid):
        self.target = target
        self.cond = cond
        self.loss_region = loss_region
        self.valid = valid

    def __len__(self):
        return self.target.shape[0]

    @property
    def seconds(self):
        '''The total unpadded duration of the batch, in seconds.'''
        return float(self.valid.sum()) / mfc.FRAME_RATE


def batch_by_seconds(stream, batch_seconds):
    '''Groups a stream of items into lists whose total duration reaches
    ``batch_seconds``.

    Items are added until the total duration is at least ``batch_seconds``,
    so every batch exceeds the target by less than one item.

    Args:
        stream (iterable): items with a ``duration`` attribute, in seconds
        batch_seconds (float): the target duration per batch

    Returns:
        a generator of lists
    '''
    batch = []
    total = 0.0
    for item in stream:
        batch.append(item)
        total += item.duration
        if total >= batch_seconds:
            yield batch
            batch = []
            total = 0.0

    if batch:
        yield batch


def _onset(w):
    frames = mfd.frame_count(len(w)) - 1
    hop = mfc.HOP_LENGTH
    if frames < 1:
        return math.inf

    energy = np.array([
        np.mean(w.samples[i * hop:(i + 1) * hop].astype(np.float64) ** 2)
        for i in range(frames)])
    peak = energy.max()
    if peak <= 0:
        return math.inf

    voiced = np.flatnonzero(energy > _ONSET_THRESHOLD * peak)
    return int(voiced[0])


def _pad(samples, length):
    out = np.zeros(length, dtype=np.float32)
    out[:len(samples)] = samples
    return out


def _fit_length(samples, length):
    if len(samples) >= length:
        return samples[:length]

    reps = int(math.ceil(length / max(len(samples), 1)))
    return np.tile(samples, reps)[:length]


def _random_crop(w, length, rng):
    if len(w) <= length:
        return mfd.Waveform(_fit_length(w.samples, length), w.sample_rate)

    start = int(rng.integers(0, len(w) - length + 1))
    return mfd.Waveform(w.samples[start:start + length], w.sample_rate)


class TaskError(Exception):
    '''Exception raised when a task example cannot be built.'''
    pass
