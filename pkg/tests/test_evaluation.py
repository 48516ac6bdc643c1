'''
Tests for scenario evaluation.

| Copyright 2017-2020, Voxel51, Inc.
| `voxel51.com <https://voxel51.com/>`_
|
'''
import math

import numpy as np
import pytest
import torch

import maskflow.audio.dsp as mfd
import maskflow.core.config as mfcf
import maskflow.data.corpus as mfo
import maskflow.data.tasks as mft
import maskflow.flows.masking as mfk
import maskflow.flows.model as mfn
import maskflow.flows.sampler as mfs
import maskflow.harness.config as mfh
import maskflow.harness.evaluation as mfe


@pytest.fixture(scope="module")
def utterances():
    cfg = mfo.SynthCorpusConfig(
        n_utterances=4, duration_range_s=(0.6, 0.8), n_speakers=2,
        symbol_vocab_size=8, seed=5)
    return mfo.make_synth_speech(cfg)


@pytest.fixture(scope="module")
def enhance_examples(utterances):
    noise = mfo.make_noise(16000, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    return [
        mft.build_enhance_example(u.waveform, noise, 0.0, 0.0, rng)
        for u in utterances[:2]]


def _tiny_model():
    torch.manual_seed(0)
    model = mfn.VectorFieldModel(mfn.VectorFieldModelConfig(
        n_layers=2, n_heads=2, d_model=32, d_ffn=64, conv_pos_kernel=3,
        conv_pos_groups=4))
    return model.eval()


class TestScenarios:
    def test_scenario_for_task(self):
        assert mfe.scenario_for_task("enhance") == mfh.Scenario.ENHANCE
        assert mfe.scenario_for_task("separate") == mfh.Scenario.SEPARATE
        assert mfe.scenario_for_task("synth") == mfh.Scenario.SYNTH_INFILL
        with pytest.raises(mfcf.ConfigError):
            mfe.scenario_for_task("pretrain")

    def test_masked_baseline(self):
        clean = mfd.Waveform(np.ones(800, dtype=np.float32))
        mask = np.zeros(6, dtype=bool)
        mask[2] = True
        baseline = mfe.masked_baseline(clean, mask)
        zeroed = np.flatnonzero(baseline.samples == 0.0)
        assert zeroed.tolist() == list(range(240, 400))
        assert np.array_equal(clean.samples, np.ones(800))


class TestTopline:
    def test_enhance(self, enhance_examples):
        report = mfe.evaluate(
            None, enhance_examples, mfh.Scenario.ENHANCE, topline=True)
        assert report.num_failed == 0
        assert len(report.records) == 2
        for record in report.records:
            assert math.isfinite(record.si_sdr)
            assert record.lsd == 0.0
            assert -1.0 <= record.estoi <= 1.0

    def test_separation_keeps_source_order(self, utterances):
        ex = mft.build_separation_example(
            [utterances[0].waveform, utterances[1].waveform])
        report = mfe.evaluate(None, [ex], mfh.Scenario.SEPARATE, topline=True)
        record = report.records[0]
        assert not record.failed
        assert record.permutation == [0, 1]
        assert record.si_sdri > 0

    def test_synth_beats_masked_input(self, utterances):
        ex = mft.build_synth_example(
            utterances[2].waveform, utterances[2].alignment,
            mfk.MaskPolicy(p_cond=1.0), np.random.default_rng(0))
        report = mfe.evaluate(
            None, [ex], mfh.Scenario.SYNTH_INFILL, topline=True,
            names=["infill"])
        record = report.records[0]
        assert record.name == "infill"
        assert record.si_sdri > 0
        assert record.lsd == 0.0

    def test_workers_do_not_change_results(self, enhance_examples):
        serial = mfe.evaluate(
            None, enhance_examples, mfh.Scenario.ENHANCE, topline=True)
        threaded = mfe.evaluate(
            None, enhance_examples, mfh.Scenario.ENHANCE, topline=True,
            max_workers=2)
        assert serial.to_dict() == threaded.to_dict()


class TestModelEvaluation:
    def test_fixed_seed_is_reproducible(self, enhance_examples):
        model = _tiny_model()
        cfg = mfs.SamplerConfig(step_size=0.25, cfg_alpha=0.5)
        a = mfe.evaluate(
            model, enhance_examples, mfh.Scenario.ENHANCE, sampler_cfg=cfg,
            seed=3)
        b = mfe.evaluate(
            model, enhance_examples, mfh.Scenario.ENHANCE, sampler_cfg=cfg,
            seed=3)
        assert a.to_dict() == b.to_dict()
        assert [r.name for r in a.records] == ["utt0000", "utt0001"]

    def test_restores_training_mode(self, enhance_examples):
        model = _tiny_model().train()
        cfg = mfs.SamplerConfig(step_size=0.5, cfg_alpha=0.0)
        mfe.evaluate(
            model, enhance_examples[:1], mfh.Scenario.ENHANCE,
            sampler_cfg=cfg)
        assert model.training


class TestFailures:
    def test_failures_are_recorded(self, utterances, enhance_examples):
        utt = utterances[3]
        no_phase = mft.build_synth_example(
            utt.mel(), utt.alignment, mfk.MaskPolicy(),
            np.random.default_rng(0))
        ok = mft.build_synth_example(
            utt.waveform, utt.alignment, mfk.MaskPolicy(),
            np.random.default_rng(0))
        report = mfe.evaluate(
            None, [no_phase, ok], mfh.Scenario.SYNTH_INFILL, topline=True)
        assert report.num_failed == 1
        assert "phase source" in report.records[0].error
        assert not report.records[1].failed
        assert report.summary()["num_utterances"] == 2

    def test_task_mismatch(self, enhance_examples):
        with pytest.raises(mfcf.ConfigError, match="cannot evaluate"):
            mfe.evaluate(
                None, enhance_examples, mfh.Scenario.SEPARATE, topline=True)

    def test_unknown_scenario(self, enhance_examples):
        with pytest.raises(mfcf.ConfigError, match="scenario"):
            mfe.evaluate(None, enhance_examples, "dereverb", topline=True)

    def test_model_required(self, enhance_examples):
        with pytest.raises(mfcf.ConfigError, match="model"):
            mfe.evaluate(None, enhance_examples, mfh.Scenario.ENHANCE)
