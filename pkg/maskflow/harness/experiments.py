'''
End-to-end experiment pipelines and hyperparameter sweeps.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
import logging
import os
import time

import numpy as np

import maskflow.constants as mfc
import maskflow.core.config as mfcf
import maskflow.data.corpus as mfo
import maskflow.data.tasks as mft
import maskflow.flows.masking as mfk
import maskflow.harness.config as mfh
import maskflow.harness.evaluation as mfe
import maskflow.harness.records as mfr
import maskflow.harness.reporting as mfp
import maskflow.harness.training as mfl


logger = logging.getLogger(__name__)


# Values of each sweepable hyperparameter at desk scale
SWEEP_AXES = OrderedDict([
    ("p_cond", [0.0, 0.5, 0.8, 0.9, 1.0]),
    ("n_mask_range", [
        [0.6, 1.0], [0.7, 1.0], [0.8, 1.0], [0.6, 0.9], [0.7, 0.9]]),
    ("l_mask", [5, 10, 15]),
    ("pretrain_steps", [2000, 5000, 10000, 20000]),
    ("peak_lr", [2e-4, 5e-4, 1e-3, 2e-3]),
    ("step_size", [0.25, 0.125, 0.0625, 0.03125]),
])

NOISE_KINDS = ("white", "pink", "brown")
NOISE_SECONDS = 10.0


def apply_sweep_value(exp_cfg, axis, value):
    '''Returns a copy of the experiment config with one swept value set.

    Args:
        exp_cfg (ExperimentConfig): the base config
        axis (str): a key of ``SWEEP_AXES``
        value: the value

    Returns:
        an ExperimentConfig

    Raises:
        :class:`maskflow.core.config.ConfigError` if the axis is unknown or
        the value is invalid
    '''
    if axis not in SWEEP_AXES:
        raise mfcf.ConfigError(
            "Unknown sweep axis '%s'; supported axes are %s"
            % (axis, ", ".join(SWEEP_AXES)))

    pretrain = exp_cfg.pretrain
    if axis in ("p_cond", "n_mask_range", "l_mask"):
        policy = pretrain.mask_policy.replace(**{axis: value})
        return exp_cfg.replace(pretrain=pretrain.replace(mask_policy=policy))

    if axis == "pretrain_steps":
        steps = int(value)
        return exp_cfg.replace(pretrain=pretrain.replace(
            total_steps=steps,
            warmup_steps=min(pretrain.warmup_steps, steps // 2)))

    if axis == "peak_lr":
        return exp_cfg.replace(pretrain=pretrain.replace(peak_lr=value))

    return exp_cfg.replace(sampler=exp_cfg.sampler.replace(step_size=value))


def make_noises(seed, sample_rate=mfc.SAMPLE_RATE):
    '''Generates one noise signal of each kind.'''
    rng = np.random.default_rng(seed)
    num_samples = int(NOISE_SECONDS * sample_rate)
    return [mfo.make_noise(num_samples, rng, kind=k) for k in NOISE_KINDS]


def task_dataset(task, utterances, noises, corpus_cfg, train_cfg):
    '''Builds the fine-tuning dataset of a task.

    Args:
        task (str): ``enhance``, ``separate`` or ``synth``
        utterances (list): the training utterances
        noises (list): noise Waveforms
        corpus_cfg (SynthCorpusConfig): the corpus config
        train_cfg (TrainConfig): the fine-tuning config

    Returns:
        a :class:`maskflow.data.tasks.TaskDataset`
    '''
    if task == mft.TaskTag.ENHANCE:
        return mft.EnhanceDataset(
            utterances, noises, corpus_cfg.snr_range_db,
            drop_prob=train_cfg.drop_prob)
    if task == mft.TaskTag.SEPARATE:
        return mft.SeparationDataset(utterances, num_sources=(2,))
    if task == mft.TaskTag.SYNTH:
        return mft.SynthDataset(utterances, train_cfg.mask_policy)

    raise mfcf.ConfigError("Unsupported task '%s'" % task)


def eval_examples(task, utterances, noises, corpus_cfg):
    '''Builds the held-out examples of a task. The examples depend only on
    the corpus seed, so every run on the same corpus scores the same inputs.

    Args:
        task (str): ``enhance``, ``separate`` or ``synth``
        utterances (list): the held-out utterances
        noises (list): noise Waveforms
        corpus_cfg (SynthCorpusConfig): the corpus config

    Returns:
        a list of PairedExamples
    '''
    rng = np.random.default_rng(corpus_cfg.seed + 2)
    if task == mft.TaskTag.ENHANCE:
        dataset = mft.EnhanceDataset(
            utterances, noises, corpus_cfg.snr_range_db, drop_prob=0.0)
    elif task == mft.TaskTag.SEPARATE:
        dataset = mft.SeparationDataset(utterances, num_sources=(2,))
    elif task == mft.TaskTag.SYNTH:
        dataset = mft.SynthDataset(utterances, mfk.MaskPolicy(p_cond=1.0))
    else:
        raise mfcf.ConfigError("Unsupported task '%s'" % task)

    return [dataset.draw(i, rng) for i in range(len(dataset))]


def split_corpus(utterances, num_eval):
    '''Splits utterances into ``(train, eval)`` lists; the last ``num_eval``
    utterances are held out.
    '''
    if not 1 <= num_eval < len(utterances):
        raise mfcf.ConfigError(
            "Cannot hold out %d of %d utterances"
            % (num_eval, len(utterances)))

    return utterances[:-num_eval], utterances[-num_eval:]


def run_pipeline(exp_cfg, seed=0, run_dir=None, sweep=None, max_workers=1):
    '''Runs synthesis of the corpus, optional pretraining, fine-tuning and
    evaluation of one experiment.

    Args:
        exp_cfg (ExperimentConfig): the experiment
        seed (int, optional): the training and sampling seed
        run_dir (str, optional): the output directory
        sweep (dict, optional): the swept values, stored in the record
        max_workers (int, optional): the number of evaluation workers

    Returns:
        an :class:`maskflow.harness.records.ExperimentRecord`
    '''
    start_time = time.time()
    corpus_cfg = exp_cfg.corpus
    utterances = mfo.make_synth_speech(corpus_cfg)
    train_utts, eval_utts = split_corpus(utterances, exp_cfg.num_eval)
    noises = make_noises(corpus_cfg.seed + 1)

    checkpoints = []
    if exp_cfg.pretrain_enabled:
        logger.info("Pretraining '%s' with seed %d", exp_cfg.name, seed)
        model, pre_record = mfl.pretrain(
            [u.mel() for u in train_utts], exp_cfg.model,
            exp_cfg.pretrain.replace(seed=seed),
            run_dir=_subdir(run_dir, "pretrain"))
        checkpoints.extend(pre_record.checkpoints)
    else:
        model = exp_cfg.model

    finetune_cfg = exp_cfg.finetune.replace(seed=seed)
    rng = np.random.default_rng(seed)
    if finetune_cfg.mode == mfh.TrainMode.MULTITASK:
        datasets = [
            task_dataset(t, train_utts, noises, corpus_cfg, finetune_cfg)
            for t in (mft.TaskTag.ENHANCE, mft.TaskTag.SEPARATE,
                      mft.TaskTag.SYNTH)]
        stream = mft.multitask_mixer(
            datasets, finetune_cfg.upsample_factors, rng)
        vocab_size = corpus_cfg.symbol_vocab_size
    else:
        dataset = task_dataset(
            exp_cfg.task, train_utts, noises, corpus_cfg, finetune_cfg)
        stream = mft.example_stream(dataset, rng)
        vocab_size = (
            corpus_cfg.symbol_vocab_size
            if exp_cfg.task == mft.TaskTag.SYNTH else None)

    logger.info("Fine-tuning '%s' for %s", exp_cfg.name, exp_cfg.task)
    model, ft_record = mfl.finetune(
        model, stream, finetune_cfg, run_dir=_subdir(run_dir, "finetune"),
        symbol_vocab_size=vocab_size)
    checkpoints.extend(ft_record.checkpoints)

    examples = eval_examples(exp_cfg.task, eval_utts, noises, corpus_cfg)
    report = mfe.evaluate(
        model, examples, mfe.scenario_for_task(exp_cfg.task),
        sampler_cfg=exp_cfg.sampler, seed=seed,
        names=[u.name for u in eval_utts], max_workers=max_workers)

    config = OrderedDict([
        ("experiment", exp_cfg.to_dict()),
        ("seed", seed),
    ])
    record = mfr.ExperimentRecord(
        exp_cfg.name, config=config, loss_curve=ft_record.loss_curve,
        checkpoints=checkpoints, reports=[report],
        wall_clock=time.time() - start_time, sweep=sweep)
    if run_dir:
        record.to_json(os.path.join(run_dir, "record.json"))

    return record


def run_sweep(exp_cfg, axis, values=None, seeds=(0,), run_dir=None,
              plots=True, max_workers=1):
    '''Runs the pipeline for every value of a sweep axis and every seed, and
    writes the report of the sweep.

    Args:
        exp_cfg (ExperimentConfig): the base experiment
        axis (str): a key of ``SWEEP_AXES``
        values (list, optional): the values to run. By default, those of
            ``SWEEP_AXES[axis]`` are used
        seeds (list, optional): the seeds
        run_dir (str, optional): the output directory
        plots (bool, optional): whether to render plots
        max_workers (int, optional): the number of evaluation workers

    Returns:
        the list of ExperimentRecords
    '''
    if values is None:
        if axis not in SWEEP_AXES:
            raise mfcf.ConfigError("Unknown sweep axis '%s'" % axis)
        values = SWEEP_AXES[axis]

    records = []
    for value in values:
        cfg = apply_sweep_value(exp_cfg, axis, value)
        cfg = cfg.replace(
            name="%s-%s" % (exp_cfg.name, mfp.render_axis_value(value)))
        for seed in seeds:
            logger.info("Sweep %s = %s, seed %d", axis, value, seed)
            sub = _subdir(
                run_dir, "%s_%s" % (axis, mfp.render_axis_value(value)),
                "seed_%d" % seed)
            records.append(run_pipeline(
                cfg, seed=seed, run_dir=sub, sweep={axis: value},
                max_workers=max_workers))

    if run_dir:
        mfp.report(records, run_dir, plots=plots)

    return records


def pretraining_benefit(exp_cfg, seeds=(0, 1, 2, 3, 4), run_dir=None,
                        max_workers=1):
    '''Compares pretrained-then-fine-tuned models against models fine-tuned
    from scratch with the same budget.

    Args:
        exp_cfg (ExperimentConfig): the experiment
        seeds (list, optional): the seeds
        run_dir (str, optional): the output directory
        max_workers (int, optional): the number of evaluation workers

    Returns:
        a ``(records, margin)`` tuple, where ``margin`` is the median over
        seeds of the pretrained minus scratch median SI-SDRi
    '''
    records = []
    margins = []
    for seed in seeds:
        medians = []
        for enabled in (True, False):
            name = "pretrained" if enabled else "scratch"
            cfg = exp_cfg.replace(pretrain_enabled=enabled)
            record = run_pipeline(
                cfg, seed=seed,
                run_dir=_subdir(run_dir, name, "seed_%d" % seed),
                sweep={"pretrained": enabled}, max_workers=max_workers)
            records.append(record)
            medians.append(float(np.median(record.reports[0].values(
                "si_sdri"))))

        margins.append(medians[0] - medians[1])
        logger.info(
            "Seed %d: pretrained %.2f dB vs scratch %.2f dB", seed,
            medians[0], medians[1])

    return records, float(np.median(margins))


def _subdir(run_dir, *names):
    return os.path.join(run_dir, *names) if run_dir else None
