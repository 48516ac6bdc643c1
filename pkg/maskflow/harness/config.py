'''
Training and experiment configuration.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import logging

import maskflow.core.config as mfcf
import maskflow.data.corpus as mfo
import maskflow.flows.masking as mfk
import maskflow.flows.model as mfn
import maskflow.flows.sampler as mfs


logger = logging.getLogger(__name__)


class TrainMode(object):
    '''Enumeration of the supported training modes.'''

    PRETRAIN = "pretrain"
    FINETUNE = "finetune"
    LORA = "lora"
    MULTITASK = "multitask"

    ALL = (PRETRAIN, FINETUNE, LORA, MULTITASK)


class Scenario(object):
    '''Enumeration of the supported evaluation scenarios.'''

    ENHANCE = "enhance"
    SEPARATE = "separate"
    SYNTH_INFILL = "synth-infill"

    ALL = (ENHANCE, SEPARATE, SYNTH_INFILL)


class TrainConfig(mfcf.Config):
    '''Configuration of a training run.

    Attributes:
        total_steps (int): the number of optimizer steps
        warmup_steps (int): the number of linear warmup steps
        peak_lr (float): the learning rate at the end of warmup
        final_lr (float): the learning rate at ``total_steps``
        batch_seconds (float): the total utterance duration per batch
        grad_clip (float): the maximum global gradient norm
        seed (int): the random seed
        mode (str): the training mode, one of :class:`TrainMode`
        mask_policy (MaskPolicy): the pretraining masking policy
        drop_prob (float): the probability of dropping the enhancement
            condition during fine-tuning
        lora_rank (int): the adaptor rank used in ``lora`` mode
        upsample_factors (tuple): the per-task upsampling factors used in
            ``multitask`` mode
        betas (tuple): the Adam moment coefficients
        eps (float): the Adam epsilon
        log_every (int): the number of steps between loss log lines
        checkpoint_every (int): the number of steps between checkpoints. 0
            writes only the final checkpoint
    '''

    _NESTED = {"mask_policy": mfk.MaskPolicy}

    def __init__(
            self, total_steps=20000, warmup_steps=1000, peak_lr=5e-4,
            final_lr=1e-4, batch_seconds=60.0, grad_clip=1.0, seed=0,
            mode=TrainMode.PRETRAIN, mask_policy=None, drop_prob=0.3,
            lora_rank=16, upsample_factors=(10, 4, 1), betas=(0.9, 0.999),
            eps=1e-8, log_every=100, checkpoint_every=1000):
        self.total_steps = int(total_steps)
        self.warmup_steps = int(warmup_steps)
        self.peak_lr = float(peak_lr)
        self.final_lr = float(final_lr)
        self.batch_seconds = float(batch_seconds)
        self.grad_clip = float(grad_clip)
        self.seed = int(seed)
        self.mode = mode
        self.mask_policy = mask_policy or mfk.MaskPolicy()
        self.drop_prob = float(drop_prob)
        self.lora_rank = int(lora_rank)
        self.upsample_factors = tuple(int(f) for f in upsample_factors)
        self.betas = tuple(float(b) for b in betas)
        self.eps = float(eps)
        self.log_every = int(log_every)
        self.checkpoint_every = int(checkpoint_every)
        self.validate()

    def validate(self):
        mfcf.require(
            self.mode in TrainMode.ALL, "Unsupported mode '%s'", self.mode)
        mfcf.require(
            0 <= self.warmup_steps < self.total_steps,
            "warmup_steps (%d) must be in [0, total_steps (%d))",
            self.warmup_steps, self.total_steps)
        mfcf.require(
            self.peak_lr > self.final_lr >= 0.0,
            "Learning rates must satisfy peak_lr > final_lr >= 0; found "
            "%s and %s", self.peak_lr, self.final_lr)
        mfcf.require(
            self.batch_seconds > 0, "batch_seconds must be positive")
        mfcf.require(self.grad_clip > 0, "grad_clip must be positive")
        mfcf.require(
            0.0 <= self.drop_prob <= 1.0,
            "drop_prob must be in [0, 1]; found %s", self.drop_prob)
        mfcf.require(self.lora_rank >= 1, "lora_rank must be positive")
        mfcf.require(
            len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas),
            "betas must be two values in [0, 1); found %s", self.betas)
        mfcf.require(self.log_every >= 1, "log_every must be positive")
        mfcf.require(
            self.checkpoint_every >= 0,
            "checkpoint_every must be non-negative")


# Fine-tuning presets at full scale, keyed by task
FULL_SCALE_FINETUNE_PRESETS = {
    "enhance": dict(
        warmup_steps=5000, peak_lr=2e-5, final_lr=0.0, batch_seconds=50.0),
    "enhance_scratch": dict(
        warmup_steps=5000, peak_lr=2e-4, final_lr=0.0, batch_seconds=50.0),
    "separate": dict(
        warmup_steps=5000, peak_lr=3e-5, final_lr=0.0, batch_seconds=37.5),
    "separate_scratch": dict(
        warmup_steps=5000, peak_lr=5e-5, final_lr=0.0, batch_seconds=37.5),
    "synth": dict(
        total_steps=150000, warmup_steps=5000, peak_lr=1e-5, final_lr=0.0,
        batch_seconds=75.0),
    "synth_lora": dict(
        total_steps=150000, warmup_steps=5000, peak_lr=1e-3, final_lr=0.0,
        batch_seconds=75.0, mode=TrainMode.LORA, lora_rank=64),
    "multitask": dict(
        total_steps=700000, warmup_steps=5000, peak_lr=2e-5, final_lr=0.0,
        batch_seconds=50.0, mode=TrainMode.MULTITASK),
}


def full_scale_pretrain_config(**kwargs):
    '''Returns the full-scale pretraining config: 600k steps, 5k warmup
    steps to 5e-5, decay to 1e-5, 75 seconds per batch.
    '''
    d = dict(
        total_steps=600000, warmup_steps=5000, peak_lr=5e-5, final_lr=1e-5,
        batch_seconds=75.0, mode=TrainMode.PRETRAIN)
    d.update(kwargs)
    return TrainConfig(**d)


def full_scale_finetune_config(preset, **kwargs):
    '''Returns a full-scale fine-tuning config.

    Args:
        preset (str): a key of ``FULL_SCALE_FINETUNE_PRESETS``
        **kwargs: overrides

    Returns:
        a TrainConfig
    '''
    if preset not in FULL_SCALE_FINETUNE_PRESETS:
        raise mfcf.ConfigError("Unknown fine-tuning preset '%s'" % preset)

    d = dict(total_steps=150000, mode=TrainMode.FINETUNE)
    d.update(FULL_SCALE_FINETUNE_PRESETS[preset])
    d.update(kwargs)
    return TrainConfig(**d)


def desk_pretrain_config(**kwargs):
    '''Returns the desk-scale pretraining config.'''
    d = dict(mode=TrainMode.PRETRAIN)
    d.update(kwargs)
    return TrainConfig(**d)


def desk_finetune_config(**kwargs):
    '''Returns the desk-scale fine-tuning config: 5k steps peaking at 2e-4
    after 500 steps and decaying to 0.
    '''
    d = dict(
        total_steps=5000, warmup_steps=500, peak_lr=2e-4, final_lr=0.0,
        batch_seconds=30.0, mode=TrainMode.FINETUNE, checkpoint_every=0)
    d.update(kwargs)
    return TrainConfig(**d)


class ExperimentConfig(mfcf.Config):
    '''An end-to-end experiment: corpus, model, pretraining, fine-tuning and
    evaluation settings.

    Attributes:
        name (str): the experiment name
        task (str): the downstream task, one of ``enhance``, ``separate``
            or ``synth``
        corpus (SynthCorpusConfig): the synthetic corpus
        model (VectorFieldModelConfig): the model architecture
        pretrain (TrainConfig): the pretraining config
        finetune (TrainConfig): the fine-tuning config
        sampler (SamplerConfig): the sampler config
        num_eval (int): the number of held-out utterances to evaluate
        pretrain_enabled (bool): whether to pretrain before fine-tuning
    '''

    _NESTED = {
        "corpus": mfo.SynthCorpusConfig,
        "model": mfn.VectorFieldModelConfig,
        "pretrain": TrainConfig,
        "finetune": TrainConfig,
        "sampler": mfs.SamplerConfig,
    }

    def __init__(
            self, name="experiment", task="enhance", corpus=None, model=None,
            pretrain=None, finetune=None, sampler=None, num_eval=20,
            pretrain_enabled=True):
        self.name = name
        self.task = task
        self.corpus = corpus or mfo.SynthCorpusConfig()
        self.model = model or mfn.desk_config()
        self.pretrain = pretrain or desk_pretrain_config()
        self.finetune = finetune or desk_finetune_config()
        self.sampler = sampler or mfs.SamplerConfig.for_task(task)
        self.num_eval = int(num_eval)
        self.pretrain_enabled = bool(pretrain_enabled)
        self.validate()

    def validate(self):
        mfcf.require(
            self.task in ("enhance", "separate", "synth"),
            "Unsupported task '%s'", self.task)
        mfcf.require(self.num_eval >= 1, "num_eval must be positive")
        mfcf.require(
            self.num_eval < self.corpus.n_utterances,
            "num_eval (%d) must be smaller than the corpus (%d)",
            self.num_eval, self.corpus.n_utterances)
