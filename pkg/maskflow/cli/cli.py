'''
Core module that defines the functionality of the `maskflow` command-line
interface (CLI).

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import argparse
import glob
import json
import logging
import os
import sys

import argcomplete
import numpy as np
from tabulate import tabulate
import torch

import maskflow.audio.dsp as mfd
import maskflow.audio.metrics as mfm
import maskflow.constants as mfc
import maskflow.core.config as mfcf
import maskflow.core.logging as mfg
import maskflow.core.utils as mfu
import maskflow.data.corpus as mfo
import maskflow.data.tasks as mft
import maskflow.flows.flow as mff
import maskflow.flows.model as mfn
import maskflow.flows.sampler as mfs
import maskflow.harness.config as mfh
import maskflow.harness.evaluation as mfe
import maskflow.harness.experiments as mfx
import maskflow.harness.records as mfr
import maskflow.harness.reporting as mfp
import maskflow.harness.training as mfl


logger = logging.getLogger(__name__)


_TABLE_FORMAT = "simple"

EXIT_SUCCESS = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3

# Errors caused by invalid user inputs
_CONFIG_ERRORS = (
    mfcf.ConfigError, mfo.CorpusError, mfd.DSPError, mfn.ModelError,
    mft.TaskError, mfu.SerializationError)

# TrainConfig fields that can be overridden by flags
_TRAIN_FLAGS = (
    "total_steps", "warmup_steps", "peak_lr", "final_lr", "batch_seconds",
    "grad_clip", "seed", "drop_prob", "lora_rank", "log_every",
    "checkpoint_every")
_INT_TRAIN_FLAGS = (
    "total_steps", "warmup_steps", "seed", "lora_rank", "log_every",
    "checkpoint_every")

# SamplerConfig fields that can be overridden by flags
_SAMPLER_FLAGS = ("method", "step_size", "cfg_alpha", "cfg_sign")


class Command(object):
    '''Interface for defining commands.

    Command instances must implement the `setup()` method, and they should
    implement the `execute()` method if they perform any functionality beyond
    defining subparsers.
    '''

    @staticmethod
    def setup(parser):
        '''Setup the command-line arguments for the command.

        Args:
            parser: an `argparse.ArgumentParser` instance
        '''
        raise NotImplementedError("subclass must implement setup()")

    @staticmethod
    def execute(parser, args):
        '''Executes the command on the given args.

        args:
            parser: the `argparse.ArgumentParser` instance for the command
            args: an `argparse.Namespace` instance containing the arguments
                for the command
        '''
        raise NotImplementedError("subclass must implement execute()")


class MaskflowCommand(Command):
    '''Masked-condition flow matching command-line interface.'''

    @staticmethod
    def setup(parser):
        parser.add_argument(
            "--verbose", action="store_true", help="log debug messages")
        subparsers = parser.add_subparsers(title="available commands")
        _register_command(subparsers, "make-data", MakeDataCommand)
        _register_command(subparsers, "pretrain", PretrainCommand)
        _register_command(subparsers, "finetune", FinetuneCommand)
        _register_command(subparsers, "sample", SampleCommand)
        _register_command(subparsers, "evaluate", EvaluateCommand)
        _register_command(subparsers, "report", ReportCommand)
        _register_command(subparsers, "sweep", SweepCommand)
        _register_command(subparsers, "info", InfoCommand)

    @staticmethod
    def execute(parser, args):
        parser.print_help()


class MakeDataCommand(Command):
    '''Synthesize a speech-like corpus.

    Examples:
        # Write the default corpus
        maskflow make-data /path/to/corpus

        # Write a small corpus with a custom seed
        maskflow make-data /path/to/corpus --num-utterances 20 --seed 3

        # Use a corpus config file
        maskflow make-data /path/to/corpus --config corpus.json
    '''

    @staticmethod
    def setup(parser):
        parser.add_argument(
            "output_dir", metavar="OUTPUT_DIR",
            help="the directory in which to write the corpus")
        parser.add_argument(
            "--config", metavar="PATH", help="a corpus config JSON file")
        parser.add_argument(
            "--num-utterances", metavar="N", type=int,
            help="the number of utterances")
        parser.add_argument(
            "--num-speakers", metavar="N", type=int,
            help="the number of speakers")
        parser.add_argument(
            "--seed", metavar="SEED", type=int, help="the random seed")

    @staticmethod
    def execute(parser, args):
        if args.config:
            cfg = mfo.SynthCorpusConfig.from_json(args.config)
        else:
            cfg = mfo.SynthCorpusConfig()

        cfg = cfg.replace(**_overrides(args, {
            "num_utterances": "n_utterances",
            "num_speakers": "n_speakers",
            "seed": "seed",
        }))
        utterances = mfo.make_synth_speech(cfg)
        manifest_path = mfo.write_corpus(utterances, args.output_dir)
        cfg.to_json(os.path.join(args.output_dir, "corpus_config.json"))

        summary = mfo.corpus_summary(utterances)
        contents = list(summary.items()) + [("manifest", manifest_path)]
        print(tabulate(
            contents, headers=["Corpus", ""], tablefmt=_TABLE_FORMAT))


class PretrainCommand(Command):
    '''Pretrain a model with the masked-condition objective.

    Examples:
        # Pretrain on the synthetic corpus of an experiment config
        maskflow pretrain --config experiment.json

        # Pretrain on a corpus manifest with overrides
        maskflow pretrain --manifest corpus/manifest.json \\
            --total-steps 2000 --peak-lr 5e-4 --p-cond 0.9

        # Resume from the latest checkpoint of a run
        maskflow pretrain --config experiment.json --resume
    '''

    @staticmethod
    def setup(parser):
        _add_experiment_args(parser)
        _add_train_args(parser)
        parser.add_argument(
            "--p-cond", metavar="P", type=float,
            help="the probability of a partially masked condition")
        parser.add_argument(
            "--l-mask", metavar="FRAMES", type=int,
            help="the minimum masked span length")
        parser.add_argument(
            "--num-steps", metavar="N", type=int,
            help="the maximum number of steps to run in this invocation")
        parser.add_argument(
            "--resume", action="store_true",
            help="resume from the latest checkpoint of the run")

    @staticmethod
    def execute(parser, args):
        exp_cfg = _load_experiment(args)
        train_cfg = _train_config(exp_cfg.pretrain, args)
        policy = train_cfg.mask_policy.replace(**_overrides(args, {
            "p_cond": "p_cond", "l_mask": "l_mask"}))
        train_cfg = train_cfg.replace(mask_policy=policy)

        utterances = _train_utterances(args, exp_cfg)
        run_dir = _run_dir(args, exp_cfg, "pretrain")
        resume = mfl.latest_checkpoint(run_dir) if args.resume else None

        _, record = mfl.pretrain(
            [u.mel() for u in utterances], exp_cfg.model, train_cfg,
            run_dir=run_dir, resume=resume, num_steps=args.num_steps)
        _print_record(record)


class FinetuneCommand(Command):
    '''Fine-tune a model on a downstream task.

    Examples:
        # Fine-tune a pretrained checkpoint for enhancement
        maskflow finetune --checkpoint run/pretrain/checkpoints/X.pt \\
            --task enhance

        # Train the same loop from a random initialization
        maskflow finetune --from-scratch --task enhance

        # Fine-tune rank-16 adaptors for synthesis
        maskflow finetune --checkpoint X.pt --task synth --mode lora

        # Fine-tune on a mixture of all tasks
        maskflow finetune --checkpoint X.pt --mode multitask
    '''

    @staticmethod
    def setup(parser):
        _add_experiment_args(parser)
        _add_train_args(parser)
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument(
            "--checkpoint", metavar="PATH",
            help="the pretrained checkpoint to start from")
        source.add_argument(
            "--from-scratch", action="store_true",
            help="start from a random initialization")
        parser.add_argument(
            "--task", choices=(
                mft.TaskTag.ENHANCE, mft.TaskTag.SEPARATE,
                mft.TaskTag.SYNTH),
            help="the downstream task")
        parser.add_argument(
            "--mode", choices=(
                mfh.TrainMode.FINETUNE, mfh.TrainMode.LORA,
                mfh.TrainMode.MULTITASK),
            help="the fine-tuning mode")
        parser.add_argument(
            "--num-steps", metavar="N", type=int,
            help="the maximum number of steps to run in this invocation")
        parser.add_argument(
            "--resume", action="store_true",
            help="resume from the latest checkpoint of the run")

    @staticmethod
    def execute(parser, args):
        exp_cfg = _load_experiment(args)
        if args.task:
            exp_cfg = exp_cfg.replace(task=args.task)

        train_cfg = _train_config(exp_cfg.finetune, args)
        if args.mode:
            train_cfg = train_cfg.replace(mode=args.mode)

        utterances = _train_utterances(args, exp_cfg)
        noises = mfx.make_noises(exp_cfg.corpus.seed + 1)
        rng = np.random.default_rng(train_cfg.seed)
        vocab_size = exp_cfg.corpus.symbol_vocab_size
        if train_cfg.mode == mfh.TrainMode.MULTITASK:
            datasets = [
                mfx.task_dataset(
                    t, utterances, noises, exp_cfg.corpus, train_cfg)
                for t in (mft.TaskTag.ENHANCE, mft.TaskTag.SEPARATE,
                          mft.TaskTag.SYNTH)]
            stream = mft.multitask_mixer(
                datasets, train_cfg.upsample_factors, rng)
        else:
            dataset = mfx.task_dataset(
                exp_cfg.task, utterances, noises, exp_cfg.corpus, train_cfg)
            stream = mft.example_stream(dataset, rng)
            if exp_cfg.task != mft.TaskTag.SYNTH:
                vocab_size = None

        run_dir = _run_dir(args, exp_cfg, "finetune")
        resume = mfl.latest_checkpoint(run_dir) if args.resume else None
        start = exp_cfg.model if args.from_scratch else args.checkpoint
        _, record = mfl.finetune(
            start, stream, train_cfg, run_dir=run_dir,
            symbol_vocab_size=vocab_size, num_steps=args.num_steps,
            resume=resume)
        _print_record(record)


class SampleCommand(Command):
    '''Generate features for a condition recording.

    Examples:
        # Enhance a noisy recording
        maskflow sample model.pt noisy.wav --task enhance \\
            --output-mel out.mel --output-wav out.wav

        # Separate a two-speaker mixture into out_0.wav and out_1.wav
        maskflow sample model.pt mix.wav --task separate --num-sources 2 \\
            --output-wav out.wav

        # Continue an utterance after a 3 second prompt
        maskflow sample model.pt prompt.wav --task synth \\
            --alignment prompt.txt --output-wav out.wav
    '''

    @staticmethod
    def setup(parser):
        parser.add_argument(
            "checkpoint", metavar="CHECKPOINT", help="the model checkpoint")
        parser.add_argument(
            "input", metavar="WAV", help="the condition recording")
        parser.add_argument(
            "--task", default=mft.TaskTag.ENHANCE, choices=(
                mft.TaskTag.ENHANCE, mft.TaskTag.SEPARATE,
                mft.TaskTag.SYNTH),
            help="the task")
        parser.add_argument(
            "--num-sources", metavar="K", type=int, default=2,
            help="the number of sources to separate")
        parser.add_argument(
            "--alignment", metavar="PATH",
            help="the symbol alignment of the recording, for synthesis")
        parser.add_argument(
            "--prompt-seconds", metavar="SECONDS", type=float,
            default=mft.CONTINUATION_PROMPT_SECONDS,
            help="the visible prompt duration, for synthesis")
        parser.add_argument(
            "--output-mel", metavar="PATH",
            help="where to write the generated features")
        parser.add_argument(
            "--output-wav", metavar="PATH",
            help="where to write the reconstructed audio")
        parser.add_argument(
            "--seed", metavar="SEED", type=int, default=0,
            help="the random seed")
        _add_sampler_args(parser)

    @staticmethod
    def execute(parser, args):
        if not args.output_mel and not args.output_wav:
            raise mfcf.ConfigError("Provide --output-mel and/or --output-wav")

        model = mfn.load_checkpoint(args.checkpoint).model
        example = _sample_example(args)
        sampler_cfg = _sampler_config(
            mfs.SamplerConfig.for_task(args.task), args)

        est = mfs.sample_task(
            model, example.cond, len(example),
            mff.make_generator(args.seed), cfg=sampler_cfg)
        if args.output_mel:
            mfd.write_mel(mfd.MelSpectrogram(est), args.output_mel)
            print("Features written to '%s'" % args.output_mel)

        if args.output_wav:
            waves = mfe.reconstruct(example, est)
            root, ext = os.path.splitext(args.output_wav)
            for idx, w in enumerate(waves):
                path = args.output_wav if len(waves) == 1 else (
                    "%s_%d%s" % (root, idx, ext))
                mfd.write_wav(w, path)
                print("Audio written to '%s'" % path)


class EvaluateCommand(Command):
    '''Evaluate a checkpoint on held-out synthetic utterances.

    Examples:
        # Evaluate enhancement
        maskflow evaluate --checkpoint model.pt --scenario enhance

        # Measure the reconstruction ceiling of separation
        maskflow evaluate --topline --scenario separate

        # Write the full report
        maskflow evaluate --checkpoint model.pt --scenario synth-infill \\
            --output report.json
    '''

    @staticmethod
    def setup(parser):
        parser.add_argument(
            "--config", metavar="PATH", help="an experiment config JSON file")
        parser.add_argument(
            "--checkpoint", metavar="PATH", help="the model checkpoint")
        parser.add_argument(
            "--scenario", required=True, choices=mfh.Scenario.ALL,
            help="the evaluation scenario")
        parser.add_argument(
            "--topline", action="store_true",
            help="score the reference features instead of model samples")
        parser.add_argument(
            "--num-eval", metavar="N", type=int,
            help="the number of held-out utterances")
        parser.add_argument(
            "--seed", metavar="SEED", type=int, default=0,
            help="the sampling seed")
        parser.add_argument(
            "--workers", metavar="N", type=int, default=1,
            help="the number of parallel evaluation workers")
        parser.add_argument(
            "--output", metavar="PATH",
            help="where to write the metric report JSON")
        _add_sampler_args(parser)

    @staticmethod
    def execute(parser, args):
        if not args.checkpoint and not args.topline:
            raise mfcf.ConfigError("Provide --checkpoint or --topline")

        exp_cfg = _load_experiment(args)
        if args.num_eval:
            exp_cfg = exp_cfg.replace(num_eval=args.num_eval)

        task = mfe.SCENARIO_TASKS[args.scenario]
        utterances = mfo.make_synth_speech(exp_cfg.corpus)
        _, eval_utts = mfx.split_corpus(utterances, exp_cfg.num_eval)
        noises = mfx.make_noises(exp_cfg.corpus.seed + 1)
        examples = mfx.eval_examples(task, eval_utts, noises, exp_cfg.corpus)

        model = None
        if args.checkpoint:
            model = mfn.load_checkpoint(args.checkpoint).model

        sampler_cfg = _sampler_config(
            mfs.SamplerConfig.for_task(task), args)
        report = mfe.evaluate(
            model, examples, args.scenario, sampler_cfg=sampler_cfg,
            seed=args.seed, topline=args.topline,
            names=[u.name for u in eval_utts], max_workers=args.workers)

        print(mfp.summary_table(report))
        if args.output:
            report.to_json(args.output)
            print("\nReport written to '%s'" % args.output)


class ReportCommand(Command):
    '''Render tables and plots from experiment records.

    Examples:
        # Report all records found under a run directory
        maskflow report /path/to/run

        # Report specific records into another directory
        maskflow report a/record.json b/record.json --output-dir out
    '''

    @staticmethod
    def setup(parser):
        parser.add_argument(
            "paths", nargs="+", metavar="PATH",
            help="record JSON files or directories to search for them")
        parser.add_argument(
            "--output-dir", metavar="DIR",
            help="the output directory. By default, the first directory "
            "argument is used")
        parser.add_argument(
            "--metric", default="si_sdri", choices=mfm.METRIC_NAMES,
            help="the metric to report")
        parser.add_argument(
            "--no-plots", action="store_true", help="skip plot rendering")

    @staticmethod
    def execute(parser, args):
        paths = _find_records(args.paths)
        if not paths:
            raise mfcf.ConfigError("No records found in %s" % args.paths)

        records = [mfr.ExperimentRecord.from_json(p) for p in paths]
        output_dir = args.output_dir or next(
            (p for p in args.paths if os.path.isdir(p)), None)

        print(mfp.records_table(records, metric=args.metric))
        if output_dir:
            mfp.report(
                records, output_dir, metric=args.metric,
                plots=not args.no_plots)
            print("\nReport written to '%s'" % output_dir)


class SweepCommand(Command):
    '''Run a hyperparameter sweep end-to-end.

    Examples:
        # Sweep the conditioning probability over three seeds
        maskflow sweep p_cond --seeds 0 1 2

        # Sweep custom masking ranges
        maskflow sweep n_mask_range --values '[[0.6, 1.0], [0.8, 1.0]]'
    '''

    @staticmethod
    def setup(parser):
        parser.add_argument(
            "axis", metavar="AXIS", choices=list(mfx.SWEEP_AXES),
            help="the swept hyperparameter, one of %s"
            % ", ".join(mfx.SWEEP_AXES))
        parser.add_argument(
            "--values", metavar="JSON",
            help="a JSON list of values. By default, the declared values "
            "of the axis are used")
        parser.add_argument(
            "--seeds", metavar="SEED", type=int, nargs="+", default=[0],
            help="the seeds")
        parser.add_argument(
            "--config", metavar="PATH", help="an experiment config JSON file")
        parser.add_argument(
            "--run-dir", metavar="DIR", help="the run directory root")
        parser.add_argument(
            "--workers", metavar="N", type=int, default=1,
            help="the number of parallel evaluation workers")
        parser.add_argument(
            "--no-plots", action="store_true", help="skip plot rendering")

    @staticmethod
    def execute(parser, args):
        exp_cfg = _load_experiment(args)
        values = None
        if args.values:
            try:
                values = json.loads(args.values)
            except ValueError as e:
                raise mfcf.ConfigError("Invalid --values: %s" % e)

        run_dir = os.path.join(
            mfcf.get_run_dir(args.run_dir), exp_cfg.name,
            "sweep_%s" % args.axis)
        records = mfx.run_sweep(
            exp_cfg, args.axis, values=values, seeds=args.seeds,
            run_dir=run_dir, plots=not args.no_plots,
            max_workers=args.workers)
        print(mfp.records_table(records))


class InfoCommand(Command):
    '''Show details of a checkpoint or config file.

    Examples:
        # Show a checkpoint
        maskflow info run/finetune/checkpoints/step_0005000.pt

        # Show the parameter count of a model config
        maskflow info model.json
    '''

    @staticmethod
    def setup(parser):
        parser.add_argument(
            "path", metavar="PATH", help="a checkpoint or model config")

    @staticmethod
    def execute(parser, args):
        if args.path.endswith(".json"):
            cfg = mfn.VectorFieldModelConfig.from_json(args.path)
            contents = [
                ("parameters", mfu.to_human_decimal_str(
                    mfn.count_parameters(cfg))),
                ("config", cfg.to_str()),
            ]
        else:
            ckpt = mfn.load_checkpoint(args.path)
            model = ckpt.model
            contents = [
                ("step", ckpt.step),
                ("parameters", mfu.to_human_decimal_str(
                    sum(p.numel() for p in model.parameters()))),
                ("trainable", mfu.to_human_decimal_str(
                    mfn.count_trainable_parameters(model))),
                ("optimizer state", ckpt.optimizer_state is not None),
                ("config", model.model_config.to_str()),
            ]

        print(tabulate(contents, headers=[args.path, ""],
                       tablefmt=_TABLE_FORMAT))


def _add_experiment_args(parser):
    parser.add_argument(
        "--config", metavar="PATH", help="an experiment config JSON file")
    parser.add_argument(
        "--manifest", metavar="PATH",
        help="a corpus manifest to train on instead of the synthetic corpus")
    parser.add_argument(
        "--name", metavar="NAME", help="the experiment name")
    parser.add_argument(
        "--run-dir", metavar="DIR", help="the run directory root")


def _add_train_args(parser):
    for field in _TRAIN_FLAGS:
        parser.add_argument(
            "--%s" % field.replace("_", "-"), dest=field, metavar="VALUE",
            type=int if field in _INT_TRAIN_FLAGS else float,
            help="override the %s training field" % field)


def _add_sampler_args(parser):
    parser.add_argument(
        "--method", choices=mfs.SamplerMethod.ALL, help="the ODE solver")
    parser.add_argument(
        "--step-size", metavar="H", type=float, help="the solver step size")
    parser.add_argument(
        "--cfg-alpha", metavar="ALPHA", type=float,
        help="the guidance strength")
    parser.add_argument(
        "--cfg-sign", choices=mfs.CFGSign.ALL,
        help="the guidance convention")


def _overrides(args, mapping):
    return {
        field: getattr(args, flag) for flag, field in mapping.items()
        if getattr(args, flag, None) is not None}


def _train_config(base, args):
    return base.replace(**_overrides(args, {f: f for f in _TRAIN_FLAGS}))


def _sampler_config(base, args):
    return base.replace(**_overrides(args, {f: f for f in _SAMPLER_FLAGS}))


def _load_experiment(args):
    if getattr(args, "config", None):
        exp_cfg = mfh.ExperimentConfig.from_json(args.config)
    else:
        exp_cfg = mfh.ExperimentConfig()

    if getattr(args, "name", None):
        exp_cfg = exp_cfg.replace(name=args.name)

    return exp_cfg


def _train_utterances(args, exp_cfg):
    if args.manifest:
        return mfo.load_manifest(args.manifest)

    utterances = mfo.make_synth_speech(exp_cfg.corpus)
    train, _ = mfx.split_corpus(utterances, exp_cfg.num_eval)
    return train


def _run_dir(args, exp_cfg, stage):
    return os.path.join(
        mfcf.get_run_dir(args.run_dir), exp_cfg.name, stage)


def _sample_example(args):
    w = mfd.read_wav(args.input)
    if args.task == mft.TaskTag.ENHANCE:
        spec = mfd.stft(w)
        cond = mfn.ConditionBundle(mfd.spec_to_logmel(spec).values)
        return mft.PairedExample(
            mfd.MelSpectrogram(torch.zeros(len(cond), mfc.N_MELS)), cond,
            mft.TaskTag.ENHANCE, aux={"mixture": w}, phase_source=spec)

    if args.task == mft.TaskTag.SEPARATE:
        k = args.num_sources
        if k not in (2, 3):
            raise mfcf.ConfigError("--num-sources must be 2 or 3")

        spec = mfd.stft(w)
        cond_mel = mfd.spec_to_logmel(spec).values
        cond = mfn.ConditionBundle(cond_mel.repeat(k, 1))
        return mft.PairedExample(
            mfd.MelSpectrogram(torch.zeros(len(cond), mfc.N_MELS)), cond,
            mft.TaskTag.SEPARATE, aux={"mixture": w, "sources": [w] * k},
            phase_source=spec)

    if not args.alignment:
        raise mfcf.ConfigError("Synthesis requires --alignment")

    alignment = mfo.SymbolAlignment.read(args.alignment)
    return mft.build_continuation_example(
        w, alignment, prompt_seconds=args.prompt_seconds)


def _find_records(paths):
    found = []
    for path in paths:
        if os.path.isdir(path):
            found.extend(sorted(glob.glob(
                os.path.join(path, "**", "record.json"), recursive=True)))
        elif os.path.isfile(path):
            found.append(path)

    # Stage records are nested inside experiment records
    return [
        p for p in found
        if os.path.basename(os.path.dirname(p)) not in (
            "pretrain", "finetune")]


def _print_record(record):
    contents = [
        ("name", record.name),
        ("steps", record.loss_curve[-1][0] if record.loss_curve else 0),
        ("final loss", record.final_loss),
        ("checkpoints", len(record.checkpoints)),
        ("wall clock", mfu.to_human_time_str(record.wall_clock)),
        ("created", mfp.render_datetime(record.created_at)),
    ]
    print(tabulate(contents, headers=["Run", ""], tablefmt=_TABLE_FORMAT))


def _has_subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return True

    return False


def _iter_subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for subparser in action.choices.values():
                yield subparser


class _RecursiveHelpAction(argparse._HelpAction):

    def __call__(self, parser, *args, **kwargs):
        self._recurse(parser)
        parser.exit()

    @staticmethod
    def _recurse(parser):
        print("\n%s\n%s" % ("*" * 79, parser.format_help()))
        for subparser in _iter_subparsers(parser):
            _RecursiveHelpAction._recurse(subparser)


def _register_main_command(command, version=None, recursive_help=True):
    parser = argparse.ArgumentParser(description=command.__doc__.rstrip())

    parser.set_defaults(execute=lambda args: command.execute(parser, args))
    command.setup(parser)

    if version:
        parser.add_argument(
            "-v", "--version", action="version", version=version,
            help="show version info")

    if recursive_help and _has_subparsers(parser):
        parser.add_argument(
            "--all-help", action=_RecursiveHelpAction,
            help="show help recursively and exit")

    argcomplete.autocomplete(parser)
    return parser


def _register_command(parent, name, command, recursive_help=True):
    parser = parent.add_parser(
        name, help=command.__doc__.splitlines()[0],
        description=command.__doc__.rstrip(),
        formatter_class=argparse.RawTextHelpFormatter)

    parser.set_defaults(execute=lambda args: command.execute(parser, args))
    command.setup(parser)

    if recursive_help and _has_subparsers(parser):
        parser.add_argument(
            "--all-help", action=_RecursiveHelpAction,
            help="show help recursively and exit")

    return parser


def run(argv=None):
    '''Executes the `maskflow` tool with the given command-line args and
    returns its exit code.

    Args:
        argv (list, optional): the arguments. By default, ``sys.argv`` is
            used

    Returns:
        0 on success, 2 on configuration errors and 3 on numerical failures
    '''
    parser = _register_main_command(MaskflowCommand, version=mfc.VERSION_LONG)
    args = parser.parse_args(argv)
    mfg.set_verbosity(getattr(args, "verbose", False))
    try:
        args.execute(args)
    except mfcf.NumericalError as e:
        logger.error("Numerical failure: %s", e)
        return EXIT_NUMERICAL_ERROR
    except _CONFIG_ERRORS as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG_ERROR

    return EXIT_SUCCESS


def main():
    '''Executes the `maskflow` tool with the given command-line args.'''
    sys.exit(run())
