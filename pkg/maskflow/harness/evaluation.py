'''
Scenario evaluation: sampling, waveform reconstruction and scoring.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import logging

import numpy as np
import torch

import maskflow.audio.dsp as mfd
import maskflow.audio.metrics as mfm
import maskflow.constants as mfc
import maskflow.core.config as mfcf
import maskflow.core.utils as mfu
import maskflow.data.tasks as mft
import maskflow.flows.flow as mff
import maskflow.flows.model as mfn
import maskflow.flows.sampler as mfs
import maskflow.harness.config as mfh


logger = logging.getLogger(__name__)


SCENARIO_TASKS = {
    mfh.Scenario.ENHANCE: mft.TaskTag.ENHANCE,
    mfh.Scenario.SEPARATE: mft.TaskTag.SEPARATE,
    mfh.Scenario.SYNTH_INFILL: mft.TaskTag.SYNTH,
}


def scenario_for_task(task_tag):
    '''Returns the evaluation scenario of the given task tag.'''
    for scenario, tag in SCENARIO_TASKS.items():
        if tag == task_tag:
            return scenario

    raise mfcf.ConfigError("No evaluation scenario for task '%s'" % task_tag)


def reconstruct(example, est_values):
    '''Inverts generated features of an example to waveforms.

    Enhancement and separation reuse the phase of the mixture; synthesis
    reuses the phase of the clean utterance. Separation estimates are split
    into one chunk per source.

    Args:
        example (PairedExample): the example
        est_values (torch.Tensor): the ``[L, d]`` generated features

    Returns:
        a list of Waveforms, one per estimated source

    Raises:
        :class:`maskflow.data.tasks.TaskError` if the example carries no
        phase source
    '''
    if example.phase_source is None:
        raise mft.TaskError(
            "Cannot reconstruct a %s example without a phase source"
            % example.task_tag)

    est_values = est_values.detach().cpu()
    if example.task_tag == mft.TaskTag.SEPARATE:
        num_sources = len(example.aux["sources"])
        length = len(example.aux["mixture"])
        return [
            mfd.logmel_to_wave(
                mfd.MelSpectrogram(chunk), example.phase_source,
                length=length)
            for chunk in torch.chunk(est_values, num_sources, dim=0)]

    return [mfd.logmel_to_wave(
        mfd.MelSpectrogram(est_values), example.phase_source)]


def masked_baseline(clean, frame_mask):
    '''Returns the clean waveform with the samples of masked frames zeroed,
    which serves as the unprocessed input of infilling.

    Args:
        clean (Waveform): the clean utterance
        frame_mask (numpy.ndarray): a boolean vector of masked frames

    Returns:
        a Waveform
    '''
    samples = clean.samples.copy()
    hop = mfc.HOP_LENGTH
    for i in np.flatnonzero(frame_mask):
        start = max(0, i * hop - hop // 2)
        samples[start:i * hop + hop // 2] = 0.0

    return mfd.Waveform(samples, clean.sample_rate)


def score_example(example, est_values, name):
    '''Scores generated features against the references of an example.

    Args:
        example (PairedExample): the example
        est_values (torch.Tensor): the ``[L, d]`` generated features
        name (str): the utterance name

    Returns:
        an :class:`maskflow.audio.metrics.UtteranceMetrics`
    '''
    ests = reconstruct(example, est_values)
    target = example.target.values

    if example.task_tag == mft.TaskTag.SEPARATE:
        return _score_separation(example, ests, est_values, name)

    if example.task_tag == mft.TaskTag.SYNTH:
        ref = example.aux["clean"]
        baseline = masked_baseline(ref, example.loss_region)
        region = torch.from_numpy(example.loss_region)
        if not bool(region.any()):
            region = torch.ones_like(region)
        lsd = mfm.log_spectral_distance(
            est_values.detach().cpu()[region], target[region])
    else:
        ref = example.aux["clean"]
        baseline = example.aux["mixture"]
        lsd = mfm.log_spectral_distance(est_values.detach().cpu(), target)

    est = ests[0]
    return mfm.UtteranceMetrics(
        name, si_sdr=mfm.si_sdr(est, ref),
        si_sdri=mfm.si_sdr_improvement(est, baseline, ref),
        estoi=mfm.estoi(est, ref),
        estoii=mfm.estoi_improvement(est, baseline, ref), lsd=lsd)


def _score_separation(example, ests, est_values, name):
    refs = example.aux["sources"]
    mixture = example.aux["mixture"]
    score, perm = mfm.permutation_invariant(mfm.si_sdr, ests, refs)

    assigned = [ests[p] for p in perm]
    si_sdri = np.mean([
        mfm.si_sdr_improvement(e, mixture, r)
        for e, r in zip(assigned, refs)])
    estoi = np.mean([mfm.estoi(e, r) for e, r in zip(assigned, refs)])
    estoii = np.mean([
        mfm.estoi_improvement(e, mixture, r)
        for e, r in zip(assigned, refs)])

    chunks = torch.chunk(est_values.detach().cpu(), len(refs), dim=0)
    ordered = torch.cat([chunks[p] for p in perm], dim=0)
    lsd = mfm.log_spectral_distance(ordered, example.target.values)

    return mfm.UtteranceMetrics(
        name, si_sdr=score, si_sdri=float(si_sdri), estoi=float(estoi),
        estoii=float(estoii), lsd=lsd, permutation=perm)


def evaluate(model, examples, scenario, sampler_cfg=None, seed=0,
             topline=False, names=None, max_workers=1):
    '''Evaluates a model on a list of examples of one scenario.

    Utterance ``i`` is sampled with seed ``seed + i``. Failing utterances
    are recorded in the report and the run continues.

    Args:
        model (VectorFieldModel): the model. May be None in topline mode
        examples (list): a list of PairedExamples of the scenario's task
        scenario (str): one of :class:`maskflow.harness.config.Scenario`
        sampler_cfg (SamplerConfig, optional): the sampler config
        seed (int, optional): the base seed
        topline (bool, optional): whether to score the reference features
            instead of model samples, which measures the reconstruction
            ceiling
        names (list, optional): utterance names. By default, ``utt%04d``
        max_workers (int, optional): the number of parallel workers

    Returns:
        a :class:`maskflow.audio.metrics.MetricReport`

    Raises:
        :class:`maskflow.core.config.ConfigError` if the scenario is unknown
        or the examples belong to another task
    '''
    if scenario not in SCENARIO_TASKS:
        raise mfcf.ConfigError("Unsupported scenario '%s'" % scenario)
    if model is None and not topline:
        raise mfcf.ConfigError("A model is required outside topline mode")

    task_tag = SCENARIO_TASKS[scenario]
    for ex in examples:
        if ex.task_tag != task_tag:
            raise mfcf.ConfigError(
                "Scenario '%s' cannot evaluate %s examples"
                % (scenario, ex.task_tag))

    if names is None:
        names = ["utt%04d" % i for i in range(len(examples))]
    sampler_cfg = sampler_cfg or mfs.SamplerConfig.for_task(task_tag)

    if model is not None:
        was_training = model.training
        model.eval()

    def _evaluate_one(item):
        idx, ex = item
        name = names[idx]
        try:
            if topline:
                est = ex.target.values
            else:
                est = _generate(model, ex, sampler_cfg, seed + idx)

            return score_example(ex, est, name)
        except (mfcf.NumericalError, mfm.MetricError, mfd.DSPError,
                mft.TaskError, mfn.ModelError) as e:
            logger.warning("Utterance '%s' failed: %s", name, e)
            return mfm.UtteranceMetrics.failure(name, e)

    try:
        records = mfu.thread_map(
            _evaluate_one, list(enumerate(examples)),
            max_workers=max_workers)
    finally:
        if model is not None:
            model.train(was_training)

    report = mfm.MetricReport(scenario, records)
    logger.info(
        "Evaluated %d utterances for '%s' (%d failed)", len(records),
        scenario, report.num_failed)
    return report


def _generate(model, example, sampler_cfg, seed):
    generator = mff.make_generator(seed)
    return mfs.sample_task(
        model, example.cond, len(example), generator, cfg=sampler_cfg)
