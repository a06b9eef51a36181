"""Tests for configuration, persistence and the conversion pipeline."""

import json

import numpy as np
import pytest

from svcflow import pipeline
from svcflow.audio import AudioBuffer, read_wav, write_wav
from svcflow.config import PipelineConfig, env_overrides, load_config, tiny_config
from svcflow.errors import ConfigError, InputError, SchemaError
from svcflow.features import extract_melody
from svcflow.features.melody import MelodySeries
from svcflow.metrics import f0corr
from svcflow.model import SvcModel
from svcflow import tensorfile

SMALL = dict(ssl_dim=8, d_model=8, condition_channels=10, d_spk=4, n_heads=2, d_ff=8, kernel=3,
             cfm_hidden=8, cfm_blocks=1, train_steps=3)


def small_config(**kw):
    return tiny_config(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = small_config()
    pipeline.synth_corpus(root, cfg, seed=0, n_train=3, duration=0.5)
    pipeline.pool_build(sorted((root / "train").glob("*.ssl")), root / "pool.npz", cfg)
    return root, cfg


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class TestConfig:
    def test_defaults_valid(self):
        cfg = PipelineConfig()
        assert cfg.condition_channels == cfg.d_model + 2
        assert cfg.ablation == "none"

    def test_condition_channels_checked(self):
        with pytest.raises(ConfigError, match="d_model \\+ 2"):
            PipelineConfig(condition_channels=100)

    def test_heads_divide(self):
        with pytest.raises(ConfigError):
            PipelineConfig(n_heads=3)

    def test_non_positive(self):
        with pytest.raises(ConfigError):
            PipelineConfig(k=0)

    def test_bad_sigma_mode(self):
        with pytest.raises(ConfigError):
            PipelineConfig(sigma_mode="global")

    def test_fft_hop_relation(self):
        with pytest.raises(ConfigError):
            PipelineConfig(fft_size=256, hop=240)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            PipelineConfig.from_dict({"bogus": 1})

    def test_dict_roundtrip(self):
        cfg = small_config(seed=5)
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg

    def test_ablation_switches(self):
        cfg = PipelineConfig()
        assert cfg.with_ablation("no-spk").spk_branch is False
        assert cfg.with_ablation("no-att").dual_attention is False
        assert cfg.with_ablation("no-att").with_ablation("none") == cfg
        with pytest.raises(ConfigError):
            cfg.with_ablation("everything")

    def test_env_overrides(self):
        env = {"SVCFLOW_N_STEPS": "4", "SVCFLOW_LAM": "0.5", "SVCFLOW_RESIDUAL": "off",
               "SVCFLOW_QUERY_LAYERS": "1,2", "OTHER": "x"}
        assert env_overrides(env) == {"n_steps": 4, "lam": 0.5, "residual": False, "query_layers": (1, 2)}

    def test_env_bad_value(self):
        with pytest.raises(ConfigError):
            env_overrides({"SVCFLOW_K": "four"})

    def test_precedence(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"k": 2, "n_steps": 3}))
        cfg = load_config(path, {"n_steps": 7}, environ={"SVCFLOW_K": "5"})
        assert (cfg.k, cfg.n_steps) == (5, 7)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(path, environ={})
        path.write_text("[1]")
        with pytest.raises(ConfigError):
            load_config(path, environ={})


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


class TestFiles:
    def test_melody_roundtrip(self, tmp_path):
        cfg = small_config()
        mel = MelodySeries(np.array([0.0, 110.0, 220.0]), np.array([-100.0, -20.0, -10.0]), cfg.hop)
        pipeline.save_melody(tmp_path / "m.mel", mel, cfg, 720)
        back = pipeline.load_melody(tmp_path / "m.mel")
        np.testing.assert_array_equal(back.f0, mel.f0)
        np.testing.assert_array_equal(back.loudness, mel.loudness)
        _, meta = tensorfile.load(tmp_path / "m.mel")
        assert meta["n_bins"] == cfg.fft_size // 2 + 1
        assert meta["config_hash"] == tensorfile.config_hash(cfg.to_dict())

    def test_melody_wrong_kind(self, tmp_path):
        tensorfile.save(tmp_path / "x.mel", {"f0": np.zeros(2)}, {"kind": "other"})
        with pytest.raises(SchemaError):
            pipeline.load_melody(tmp_path / "x.mel")

    def test_speaker_file_forms(self, tmp_path):
        np.save(tmp_path / "a.npy", np.ones(4))
        (tmp_path / "b.json").write_text(json.dumps([[1, 2], [3, 4]]))
        assert pipeline.load_speaker(tmp_path / "a.npy").shape == (1, 4)
        assert pipeline.load_speaker(tmp_path / "b.json").shape == (2, 2)

    def test_checkpoint_roundtrip(self, tmp_path):
        model = SvcModel(small_config(), seed=3)
        model.spec_scale = 0.25
        model.save(tmp_path / "m.dafm")
        back = SvcModel.load(tmp_path / "m.dafm")
        assert back.config == model.config
        assert back.spec_scale == 0.25
        for (na, a), (nb, b) in zip(model.state_dict().items(), back.state_dict().items()):
            assert na == nb
            assert a.tobytes() == b.tobytes()

    def test_checkpoint_wrong_kind(self, tmp_path):
        tensorfile.save(tmp_path / "m.dafm", {}, {"kind": "toy-field"})
        with pytest.raises(SchemaError):
            SvcModel.load(tmp_path / "m.dafm")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


class TestCommands:
    def test_synth_layout(self, corpus):
        root, _ = corpus
        manifest = json.loads((root / "train.json").read_text())
        assert len(manifest["utterances"]) == 3
        for name in ("source.wav", "source.ssl", "target_spk.npy", "train/utt_02.wav"):
            assert (root / name).exists()

    def test_extract_sine(self, tmp_path):
        write_wav(tmp_path / "a.wav", AudioBuffer.sine(440.0, duration=0.5, amplitude=0.5))
        out = pipeline.extract(tmp_path / "a.wav", tmp_path / "a.mel", small_config())
        assert abs(out["f0_median"] - 440.0) <= 2.0
        assert out["voiced_frames"] == out["n_frames"]

    def test_oracle_identity_convert(self, corpus, tmp_path):
        root, cfg = corpus
        out = pipeline.convert(root / "source.ssl", root / "source.wav", root / "pool.npz", tmp_path / "o.wav",
                               cfg, generator="oracle-identity")
        assert out["shift_factor"] == 1.0
        src = extract_melody(read_wav(root / "source.wav"), cfg.hop, cfg.fft_size)
        cvt = extract_melody(read_wav(tmp_path / "o.wav"), cfg.hop, cfg.fft_size)
        assert f0corr(src.f0, cvt.f0) == pytest.approx(1.0, abs=1e-6)

    def test_model_needs_checkpoint(self, corpus, tmp_path):
        root, cfg = corpus
        with pytest.raises(InputError):
            pipeline.convert(root / "source.ssl", root / "source.wav", root / "pool.npz", tmp_path / "o.wav", cfg)

    def test_unknown_generator(self, corpus, tmp_path):
        root, cfg = corpus
        with pytest.raises(InputError):
            pipeline.convert(root / "source.ssl", root / "source.wav", root / "pool.npz", tmp_path / "o.wav", cfg,
                             generator="griffin-lim")

    def test_train_and_convert_deterministic(self, corpus, tmp_path):
        root, cfg = corpus
        for run in ("a", "b"):
            summary = pipeline.train_cfm(root / "train.json", tmp_path / run, cfg, seed=1)
            assert summary["steps"] == 3
            pipeline.extract(root / "train/utt_00.wav", tmp_path / run / "t.mel", cfg)
            res = pipeline.convert(root / "source.ssl", root / "source.wav", root / "pool.npz",
                                   tmp_path / run / "o.wav", cfg, checkpoint=tmp_path / run / "checkpoint.dafm",
                                   speaker_emb=root / "target_spk.npy", target_melody=tmp_path / run / "t.mel",
                                   seed=1)
            assert res["shift_factor"] > 1.0
            assert res["samples"] == len(read_wav(root / "source.wav"))
        for name in ("checkpoint.dafm", "loss_curve.json", "o.wav"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_training_manifest_schema(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"utterances": [{"audio": "x.wav"}]}))
        with pytest.raises(SchemaError):
            pipeline.train_cfm(tmp_path / "m.json", tmp_path / "out", small_config())
        (tmp_path / "m.json").write_text(json.dumps({"utterances": []}))
        with pytest.raises(SchemaError):
            pipeline.train_cfm(tmp_path / "m.json", tmp_path / "out", small_config())

    def test_toy_task(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"task": "toy2d", "steps": 60}))
        summary = pipeline.train_cfm(tmp_path / "m.json", tmp_path / "out", small_config())
        assert summary["steps"] == 60
        assert len(summary["sample_mean"]) == 2
        assert (tmp_path / "out" / "checkpoint.dafm").exists()
