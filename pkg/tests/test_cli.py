'''
Tests for the `maskflow` command-line interface.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import json
import os

import numpy as np
import pytest
import torch

import maskflow.audio.dsp as mfd
import maskflow.cli.cli as mfcli
import maskflow.core.config as mfcf
import maskflow.data.corpus as mfo
import maskflow.flows.model as mfn
import maskflow.harness.config as mfh
import maskflow.harness.records as mfr
import maskflow.harness.training as mfl


def _tiny_model_config():
    return mfn.VectorFieldModelConfig(
        n_layers=2, n_heads=2, d_model=32, d_ffn=64, conv_pos_kernel=3,
        conv_pos_groups=4)


@pytest.fixture
def experiment(tmp_path):
    cfg = mfh.ExperimentConfig(
        name="tiny",
        corpus=mfo.SynthCorpusConfig(
            n_utterances=5, duration_range_s=(0.5, 0.7), n_speakers=2,
            symbol_vocab_size=8),
        model=_tiny_model_config(), num_eval=2)
    path = str(tmp_path / "experiment.json")
    cfg.to_json(path)
    return path


@pytest.fixture
def checkpoint(tmp_path):
    torch.manual_seed(0)
    path = str(tmp_path / "model.pt")
    mfn.save_checkpoint(mfn.VectorFieldModel(_tiny_model_config()), path)
    return path


class TestInfo:
    def test_model_config(self, tmp_path, capsys):
        path = str(tmp_path / "model.json")
        mfn.full_scale_config().to_json(path)
        assert mfcli.run(["info", path]) == mfcli.EXIT_SUCCESS
        assert "parameters" in capsys.readouterr().out

    def test_checkpoint(self, checkpoint, capsys):
        assert mfcli.run(["info", checkpoint]) == mfcli.EXIT_SUCCESS
        out = capsys.readouterr().out
        assert "trainable" in out

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"n_layers": 2, "depth": 3}))
        assert mfcli.run(["info", str(path)]) == mfcli.EXIT_CONFIG_ERROR

    def test_unsupported_schema_version(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"schema_version": 99}))
        assert mfcli.run(["info", str(path)]) == mfcli.EXIT_CONFIG_ERROR

    def test_missing_config(self, tmp_path):
        code = mfcli.run([
            "evaluate", "--config", str(tmp_path / "missing.json"),
            "--scenario", "enhance", "--topline"])
        assert code == mfcli.EXIT_CONFIG_ERROR


class TestMakeData:
    def test_writes_corpus(self, tmp_path, capsys):
        out_dir = str(tmp_path / "corpus")
        code = mfcli.run([
            "make-data", out_dir, "--num-utterances", "3", "--seed", "4"])
        assert code == mfcli.EXIT_SUCCESS
        assert "manifest" in capsys.readouterr().out

        utterances = mfo.load_manifest(os.path.join(out_dir, "manifest.json"))
        assert len(utterances) == 3
        cfg = mfo.SynthCorpusConfig.from_json(
            os.path.join(out_dir, "corpus_config.json"))
        assert cfg.seed == 4

    def test_invalid_override(self, tmp_path):
        code = mfcli.run([
            "make-data", str(tmp_path), "--num-utterances", "0"])
        assert code == mfcli.EXIT_CONFIG_ERROR


class TestTrainingCommands:
    def test_pretrain_then_evaluate(self, experiment, tmp_path, capsys):
        run_root = str(tmp_path / "runs")
        code = mfcli.run([
            "pretrain", "--config", experiment, "--run-dir", run_root,
            "--total-steps", "2", "--warmup-steps", "1",
            "--batch-seconds", "1"])
        assert code == mfcli.EXIT_SUCCESS

        run_dir = os.path.join(run_root, "tiny", "pretrain")
        ckpt = mfl.latest_checkpoint(run_dir)
        assert ckpt == mfl.checkpoint_path(run_dir, 2)

        report_path = str(tmp_path / "report.json")
        code = mfcli.run([
            "evaluate", "--config", experiment, "--checkpoint", ckpt,
            "--scenario", "enhance", "--step-size", "0.5",
            "--output", report_path])
        assert code == mfcli.EXIT_SUCCESS
        with open(report_path) as f:
            assert json.load(f)["scenario"] == "enhance"

        # Stage records are not experiment records
        code = mfcli.run(["report", run_root, "--no-plots"])
        assert code == mfcli.EXIT_CONFIG_ERROR

    def test_numerical_failure(self, experiment, tmp_path, monkeypatch):
        def _diverge(*args, **kwargs):
            raise mfcf.NumericalError("Non-finite loss nan", step=7)

        monkeypatch.setattr(mfl, "pretrain", _diverge)
        code = mfcli.run([
            "pretrain", "--config", experiment, "--run-dir", str(tmp_path),
            "--total-steps", "2", "--warmup-steps", "1"])
        assert code == mfcli.EXIT_NUMERICAL_ERROR

    def test_finetune_needs_a_source(self, experiment):
        with pytest.raises(SystemExit):
            mfcli.run(["finetune", "--config", experiment])

    def test_finetune_from_scratch(self, experiment, tmp_path):
        run_root = str(tmp_path / "runs")
        code = mfcli.run([
            "finetune", "--config", experiment, "--run-dir", run_root,
            "--from-scratch", "--task", "synth", "--total-steps", "2",
            "--warmup-steps", "1", "--batch-seconds", "1"])
        assert code == mfcli.EXIT_SUCCESS
        ckpt = mfl.latest_checkpoint(
            os.path.join(run_root, "tiny", "finetune"))
        model = mfn.load_checkpoint(ckpt).model
        assert model.model_config.symbol_vocab_size == 8


class TestEvaluate:
    def test_needs_a_model(self, experiment):
        code = mfcli.run([
            "evaluate", "--config", experiment, "--scenario", "enhance"])
        assert code == mfcli.EXIT_CONFIG_ERROR

    def test_topline(self, experiment, capsys):
        code = mfcli.run([
            "evaluate", "--config", experiment, "--scenario", "separate",
            "--topline"])
        assert code == mfcli.EXIT_SUCCESS
        assert "si_sdri" in capsys.readouterr().out


class TestSample:
    def test_enhance(self, checkpoint, tmp_path):
        noisy = mfd.Waveform(
            0.1 * np.random.default_rng(0).standard_normal(8000))
        in_path = str(tmp_path / "noisy.wav")
        mfd.write_wav(noisy, in_path)
        out_wav = str(tmp_path / "out.wav")
        out_mel = str(tmp_path / "out.mel")

        code = mfcli.run([
            "sample", checkpoint, in_path, "--output-wav", out_wav,
            "--output-mel", out_mel, "--step-size", "0.5"])
        assert code == mfcli.EXIT_SUCCESS
        assert len(mfd.read_wav(out_wav)) == len(noisy)
        assert len(mfd.read_mel(out_mel)) == mfd.frame_count(len(noisy))

    def test_separate(self, checkpoint, tmp_path):
        mix = mfd.Waveform(
            0.1 * np.random.default_rng(0).standard_normal(8000))
        in_path = str(tmp_path / "mix.wav")
        mfd.write_wav(mix, in_path)
        code = mfcli.run([
            "sample", checkpoint, in_path, "--task", "separate",
            "--output-wav", str(tmp_path / "out.wav"), "--step-size", "0.5"])
        assert code == mfcli.EXIT_SUCCESS
        assert os.path.isfile(str(tmp_path / "out_0.wav"))
        assert os.path.isfile(str(tmp_path / "out_1.wav"))

    def test_needs_an_output(self, checkpoint, tmp_path):
        assert mfcli.run([
            "sample", checkpoint, str(tmp_path / "x.wav")]) == (
                mfcli.EXIT_CONFIG_ERROR)

    def test_synth_needs_alignment(self, checkpoint, tmp_path):
        w = mfd.Waveform(np.zeros(8000, dtype=np.float32))
        in_path = str(tmp_path / "prompt.wav")
        mfd.write_wav(w, in_path)
        code = mfcli.run([
            "sample", checkpoint, in_path, "--task", "synth",
            "--output-wav", str(tmp_path / "out.wav")])
        assert code == mfcli.EXIT_CONFIG_ERROR


class TestReport:
    def test_writes_table(self, tmp_path, capsys):
        run_dir = tmp_path / "runs"
        for name, loss in (("a", 0.5), ("b", 0.25)):
            record = mfr.ExperimentRecord(
                name, loss_curve=[[10, loss]], sweep={"l_mask": len(name)})
            record.to_json(str(run_dir / name / "record.json"))

        code = mfcli.run(["report", str(run_dir), "--no-plots"])
        assert code == mfcli.EXIT_SUCCESS
        assert "0.2500" in capsys.readouterr().out
        assert (run_dir / "records.txt").is_file()

    def test_no_records(self, tmp_path):
        code = mfcli.run(["report", str(tmp_path)])
        assert code == mfcli.EXIT_CONFIG_ERROR
