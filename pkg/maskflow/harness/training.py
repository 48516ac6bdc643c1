'''
Pretraining and fine-tuning loops.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
import logging
import math
import os
import time

import numpy as np
import torch

import maskflow.core.config as mfcf
import maskflow.core.utils as mfu
import maskflow.data.tasks as mft
import maskflow.flows.flow as mff
import maskflow.flows.model as mfn
import maskflow.harness.config as mfh
import maskflow.harness.records as mfr


logger = logging.getLogger(__name__)


FAILURE_RECORD_NAME = "failure.json"


def lr_schedule(step, cfg):
    '''Returns the learning rate at the given step: a linear ramp from 0 to
    ``peak_lr`` over ``warmup_steps``, then a linear decay to ``final_lr``
    at ``total_steps``. Steps beyond ``total_steps`` use ``final_lr``.

    Args:
        step (int): the step
        cfg (TrainConfig): the training config

    Returns:
        the learning rate
    '''
    if step < 0:
        raise mfcf.ConfigError("Steps must be non-negative; found %d" % step)
    if step >= cfg.total_steps:
        return cfg.final_lr
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps

    frac = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.peak_lr + (cfg.final_lr - cfg.peak_lr) * frac


def batch_stream(example_stream, batch_seconds):
    '''Groups a stream of examples into collated batches of about
    ``batch_seconds`` of audio.

    Args:
        example_stream (iterable): a stream of PairedExamples
        batch_seconds (float): the target duration per batch

    Returns:
        a generator of :class:`maskflow.data.tasks.Batch`
    '''
    for examples in mft.batch_by_seconds(example_stream, batch_seconds):
        yield mft.collate(examples)


def prefetch(iterator):
    '''Yields the items of the iterator while the next item is produced on a
    single background worker.
    '''
    iterator = iter(iterator)
    with ThreadPoolExecutor(max_workers=1) as executor:
        future = executor.submit(next, iterator, None)
        while True:
            item = future.result()
            if item is None:
                return

            future = executor.submit(next, iterator, None)
            yield item


class Trainer(object):
    '''Runs optimizer steps of the flow-matching objective.

    Attributes:
        model (VectorFieldModel): the model being trained
        cfg (TrainConfig): the training config
        run_dir (str): the directory in which checkpoints and logs are
            written, if any
        step (int): the number of completed steps
        loss_curve (list): a list of ``[step, loss]`` pairs
    '''

    def __init__(self, model, cfg, run_dir=None, flow_cfg=None,
                 optimizer_state=None, step=0):
        '''Creates a Trainer instance.

        Args:
            model (VectorFieldModel): the model
            cfg (TrainConfig): the training config
            run_dir (str, optional): the output directory
            flow_cfg (FlowPathConfig, optional): the path config
            optimizer_state (dict, optional): an optimizer state to resume
            step (int, optional): the step to resume from
        '''
        self.model = model
        self.cfg = cfg
        self.run_dir = run_dir
        self.flow_cfg = flow_cfg or mff.FlowPathConfig()
        self.params = mfn.trainable_parameters(model)
        if not self.params:
            raise mfcf.ConfigError("The model has no trainable parameters")

        self.optimizer = torch.optim.Adam(
            self.params, lr=lr_schedule(step, cfg), betas=cfg.betas,
            eps=cfg.eps)
        if optimizer_state is not None:
            self.optimizer.load_state_dict(optimizer_state)

        self.generator = mff.make_generator(cfg.seed + step)
        self.step = step
        self.loss_curve = []
        self.checkpoints = []

    @property
    def device(self):
        '''The device of the model parameters.'''
        return self.params[0].device

    def train_step(self, batch):
        '''Performs one optimizer step on the given batch.

        Args:
            batch (Batch): a collated batch

        Returns:
            the loss value

        Raises:
            :class:`maskflow.core.config.NumericalError` if the loss or the
            gradients are not finite
        '''
        lr = lr_schedule(self.step, self.cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        dtype = self.params[0].dtype
        x1 = batch.target.to(self.device, dtype)
        valid = batch.valid.to(self.device)
        cond = batch.cond.to(self.device)
        cond.cond_frames = cond.cond_frames.to(dtype)

        sample = mff.FlowSample.draw(x1, self.flow_cfg, self.generator)
        pred = self.model(sample.x_t, sample.t, cond, frame_valid=valid)
        region = batch.loss_region.to(self.device)
        if self.cfg.mode == mfh.TrainMode.PRETRAIN:
            loss = mff.cfm_pretrain_loss(
                pred, sample.u_target, region, valid=valid)
        else:
            loss = mff.cfm_finetune_loss(
                pred, sample.u_target, region, valid=valid)

        value = float(loss.detach())
        if not math.isfinite(value):
            self._abort("Non-finite loss %s" % value, lr, batch)

        self.optimizer.zero_grad()
        loss.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(
            self.params, self.cfg.grad_clip)
        if not torch.isfinite(grad_norm):
            self._abort("Non-finite gradient norm", lr, batch, loss=value)

        self.optimizer.step()
        self.step += 1
        self.loss_curve.append([self.step, value])
        return value

    def fit(self, batches, num_steps=None):
        '''Trains until ``total_steps`` (or ``num_steps`` more steps) have
        been run or the batches are exhausted.

        Args:
            batches (iterable): an iterable of batches
            num_steps (int, optional): the maximum number of steps to run

        Returns:
            the list of ``[step, loss]`` pairs recorded by this call
        '''
        stop = self.cfg.total_steps
        if num_steps is not None:
            stop = min(stop, self.step + num_steps)

        start = len(self.loss_curve)
        start_time = time.time()
        if self.step >= stop:
            return []

        for batch in prefetch(batches):
            loss = self.train_step(batch)
            if self.step % self.cfg.log_every == 0 or self.step == stop:
                logger.info(
                    "Step %d/%d: loss %.4f, lr %.3g, %d utterances "
                    "(%.1fs), elapsed %s", self.step, self.cfg.total_steps,
                    loss, lr_schedule(self.step - 1, self.cfg), len(batch),
                    batch.seconds,
                    mfu.to_human_time_str(time.time() - start_time))

            every = self.cfg.checkpoint_every
            if (every and self.run_dir and self.step % every == 0
                    and self.step < stop):
                self.save()

            if self.step >= stop:
                break

        if self.run_dir:
            self.save()

        return self.loss_curve[start:]

    def save(self, path=None, extra=None):
        '''Writes a checkpoint of the model and optimizer.

        Args:
            path (str, optional): the output path. By default, a per-step
                path in the run directory is used

        Returns:
            the checkpoint path
        '''
        if path is None:
            if not self.run_dir:
                raise mfcf.ConfigError("No run directory to save to")
            path = checkpoint_path(self.run_dir, self.step)

        extra = extra or {}
        extra.setdefault("train_config", self.cfg.to_dict())
        mfn.save_checkpoint(
            self.model, path, step=self.step, optimizer=self.optimizer,
            extra=extra)
        self.checkpoints.append(path)
        return path

    def _abort(self, message, lr, batch, loss=None):
        record = OrderedDict([
            ("step", self.step),
            ("message", message),
            ("lr", lr),
            ("loss", None if loss is None else repr(loss)),
            ("batch_utterances", len(batch)),
            ("batch_seconds", batch.seconds),
            ("mode", self.cfg.mode),
            ("seed", self.cfg.seed),
        ])
        if self.run_dir:
            path = os.path.join(self.run_dir, FAILURE_RECORD_NAME)
            mfu.write_json(record, path)
            logger.error("Diagnostic record written to '%s'", path)

        raise mfcf.NumericalError(message, step=self.step)


def checkpoint_path(run_dir, step):
    '''Returns the path of the checkpoint of the given step.'''
    return os.path.join(run_dir, "checkpoints", "step_%07d.pt" % step)


def latest_checkpoint(run_dir):
    '''Returns the path of the most recent checkpoint in the run directory,
    or None if there is none.
    '''
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    if not os.path.isdir(ckpt_dir):
        return None

    names = sorted(n for n in os.listdir(ckpt_dir) if n.endswith(".pt"))
    return os.path.join(ckpt_dir, names[-1]) if names else None


def pretrain(mels, model_cfg, train_cfg, run_dir=None, resume=None,
             num_steps=None):
    '''Pretrains a model with the masked-condition objective.

    Args:
        mels (list): a list of MelSpectrogram
        model_cfg (VectorFieldModelConfig): the model config. Ignored when
            resuming
        train_cfg (TrainConfig): the training config
        run_dir (str, optional): the output directory
        resume (str, optional): a checkpoint to resume from
        num_steps (int, optional): the maximum number of steps to run

    Returns:
        a ``(model, record)`` tuple, where ``record`` is an
        :class:`ExperimentRecord`
    '''
    if train_cfg.mode != mfh.TrainMode.PRETRAIN:
        raise mfcf.ConfigError(
            "Pretraining requires mode '%s'" % mfh.TrainMode.PRETRAIN)
    if not mels:
        raise mfcf.ConfigError("Cannot pretrain on an empty corpus")

    trainer = _make_trainer(model_cfg, train_cfg, run_dir, resume)
    rng = np.random.default_rng(train_cfg.seed + trainer.step)
    dataset = mft.MaskedAudioDataset(mels, train_cfg.mask_policy)
    batches = batch_stream(
        mft.example_stream(dataset, rng), train_cfg.batch_seconds)

    return _run(trainer, batches, num_steps, "pretrain")


def finetune(checkpoint_or_fresh, task_stream, train_cfg, run_dir=None,
             symbol_vocab_size=None, num_steps=None, resume=None):
    '''Fine-tunes a model on a stream of task examples.

    In ``lora`` mode, adaptors of rank ``train_cfg.lora_rank`` are attached
    and all pretrained weights are frozen.

    Args:
        checkpoint_or_fresh: a checkpoint path, a :class:`Checkpoint`, a
            model, or a :class:`VectorFieldModelConfig` to train from scratch
        task_stream (iterable): a stream of PairedExamples
        train_cfg (TrainConfig): the training config
        run_dir (str, optional): the output directory
        symbol_vocab_size (int, optional): enables symbol conditioning with
            the given vocabulary if the model does not have it yet
        num_steps (int, optional): the maximum number of steps to run
        resume (str, optional): a fine-tuning checkpoint to resume from

    Returns:
        a ``(model, record)`` tuple
    '''
    if train_cfg.mode == mfh.TrainMode.PRETRAIN:
        raise mfcf.ConfigError("Fine-tuning cannot run in pretrain mode")

    if resume is not None:
        trainer = _make_trainer(None, train_cfg, run_dir, resume)
    else:
        model = _resolve_model(checkpoint_or_fresh, train_cfg.seed)
        if (symbol_vocab_size is not None
                and model.symbol_embedding is None):
            model.enable_symbol_conditioning(symbol_vocab_size)
        if train_cfg.mode == mfh.TrainMode.LORA:
            mfn.apply_lora(model, train_cfg.lora_rank)
        trainer = Trainer(model, train_cfg, run_dir=run_dir)

    batches = batch_stream(task_stream, train_cfg.batch_seconds)
    return _run(trainer, batches, num_steps, train_cfg.mode)


def _resolve_model(checkpoint_or_fresh, seed):
    if isinstance(checkpoint_or_fresh, str):
        return mfn.load_checkpoint(checkpoint_or_fresh).model
    if isinstance(checkpoint_or_fresh, mfn.Checkpoint):
        return checkpoint_or_fresh.model
    if isinstance(checkpoint_or_fresh, mfn.VectorFieldModelConfig):
        torch.manual_seed(seed)
        return mfn.VectorFieldModel(checkpoint_or_fresh)
    if isinstance(checkpoint_or_fresh, torch.nn.Module):
        return checkpoint_or_fresh
    if checkpoint_or_fresh is None:
        torch.manual_seed(seed)
        return mfn.VectorFieldModel()

    raise mfcf.ConfigError(
        "Cannot build a model from %r" % (checkpoint_or_fresh,))


def _make_trainer(model_cfg, train_cfg, run_dir, resume):
    if resume is not None:
        ckpt = mfn.load_checkpoint(resume)
        logger.info("Resuming from '%s' at step %d", resume, ckpt.step)
        return Trainer(
            ckpt.model, train_cfg, run_dir=run_dir,
            optimizer_state=ckpt.optimizer_state, step=ckpt.step)

    torch.manual_seed(train_cfg.seed)
    model = mfn.VectorFieldModel(model_cfg)
    return Trainer(model, train_cfg, run_dir=run_dir)


def _run(trainer, batches, num_steps, name):
    start_time = time.time()
    trainer.fit(batches, num_steps=num_steps)
    config = OrderedDict([
        ("train", trainer.cfg.to_dict()),
        ("model", trainer.model.model_config.to_dict()),
    ])
    record = mfr.ExperimentRecord(
        name, config=config, loss_curve=trainer.loss_curve,
        checkpoints=trainer.checkpoints,
        wall_clock=time.time() - start_time)
    if trainer.run_dir:
        record.to_json(os.path.join(trainer.run_dir, "record.json"))

    return trainer.model, record
