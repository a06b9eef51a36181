"""Acceptance suite: one group of tests per criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.  Criterion 9 trains the tiny model through the
CLI and takes several minutes.
"""

import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from cases import (
    ORACLE_C,
    ORACLE_P,
    ORACLE_S,
    OP_CASES,
    dual_attention_problem,
    encoder_problem,
    manual_dual_attention,
    op_problem,
    oracle_module,
    total_loss_problem,
)

from svcflow.audio import AudioBuffer, read_wav
from svcflow.cfm import band_split, euler_sample, interpolate, oracle_field, pack_spectrum, sample_spectrum
from svcflow.cfm.bands import BandSpec
from svcflow.cfm.toy import sample_toy, train_toy
from svcflow.cfm.train import moving_average
from svcflow.config import tiny_config
from svcflow.features import extract_melody, pitch_shift_factor
from svcflow.features.loudness import a_weighting_db
from svcflow.features.pitch import extract_pitch
from svcflow.features.stft import istft, stft
from svcflow.matching import MatchingPool, build_pool, cosine_topk, knn_replace, l2_rows
from svcflow.metrics import f0corr, loudness_rmse, mcd, ssim
from svcflow.nn import grad_check, make_rng
from svcflow.pipeline import load_melody
from svcflow.synthetic import f0_contour, harmonic_audio, make_utterance

# exact moments of the toy target: weights (0.3, 0.7), means (-0.5, 0.25) and
# (2.5, 1.75), isotropic std 0.2
#   mean = 0.3 m1 + 0.7 m2                       = (1.6, 1.3)
#   var  = 0.2^2 + 0.3 * 0.7 * (m2 - m1)^2       = (1.93, 0.5125)
TOY_MEAN = np.array([1.6, 1.3])
TOY_STD = np.sqrt([1.93, 0.5125])

SMALL = dict(ssl_dim=8, d_model=8, condition_channels=10, d_spk=4, n_heads=2, d_ff=8, kernel=3,
             cfm_hidden=8, cfm_blocks=1, train_steps=3)


def report(n, message):
    print(f"[AC{n}] {message}")


def cli(*args, cwd):
    res = subprocess.run([sys.executable, "-m", "svcflow", *[str(a) for a in args]], capture_output=True,
                         text=True, cwd=cwd)
    assert res.returncode == 0, res.stdout + res.stderr
    return res.stdout


# ---------------------------------------------------------------------------
# 1. Dual-attention oracle
# ---------------------------------------------------------------------------


@pytest.mark.criterion(1)
class TestDualAttentionOracle:
    @pytest.mark.parametrize("alpha", [0.0, 0.7, -1.3])
    def test_matches_manual_evaluation(self, alpha):
        t0 = time.perf_counter()
        out = oracle_module(alpha)(np.array(ORACLE_C), np.array(ORACLE_S), np.array(ORACLE_P)).data[0]
        ref, _ = manual_dual_attention(alpha)
        err = float(np.max(np.abs(out - ref)))
        elapsed = time.perf_counter() - t0
        report(1, f"alpha={alpha} max error {err:.2e} in {elapsed:.3f}s")
        assert err < 1e-10
        assert elapsed < 1.0

    def test_zero_gate_speaker_term_exactly_zero(self):
        att = oracle_module(0.0)
        out, maps = att(np.array(ORACLE_C), np.array(ORACLE_S), np.array(ORACLE_P), return_maps=True)
        gated = np.tanh(att.alpha.data) * maps.speaker_term
        assert np.all(gated == 0.0)
        assert out.data.tobytes() == maps.melody_term.tobytes()


# ---------------------------------------------------------------------------
# 2. Gradient suite
# ---------------------------------------------------------------------------

_grad_seconds = {}


def _check(name, f, params, **kw):
    t0 = time.perf_counter()
    rep = grad_check(f, params, h=1e-5, tolerance=1e-4, **kw)
    _grad_seconds[name] = time.perf_counter() - t0
    report(2, f"{name}: max relative error {rep.max_rel_error:.2e} ({_grad_seconds[name]:.1f}s)")
    assert rep.passed, rep.summary()


@pytest.mark.criterion(2)
class TestGradientSuite:
    def test_every_op(self):
        worst = 0.0
        t0 = time.perf_counter()
        for name in sorted(OP_CASES):
            f, params = op_problem(name)
            rep = grad_check(f, params, h=1e-5, tolerance=1e-4)
            assert rep.passed, f"{name}: {rep.summary()}"
            worst = max(worst, rep.max_rel_error)
        _grad_seconds["ops"] = time.perf_counter() - t0
        report(2, f"{len(OP_CASES)} ops: worst relative error {worst:.2e}")

    def test_content_encoder_four_blocks(self):
        f, params, enc = encoder_problem()
        assert len(enc.blocks) == 4
        _check("content encoder", f, params)

    def test_dual_attention_block(self):
        f, params, _ = dual_attention_problem()
        _check("dual attention", f, params)

    def test_total_loss(self):
        f, params, _ = total_loss_problem()
        _check("total loss", f, params)

    def test_runtime_budget(self):
        total = sum(_grad_seconds.values())
        report(2, f"total {total:.1f}s")
        assert len(_grad_seconds) == 4
        assert total < 120.0


# ---------------------------------------------------------------------------
# 3. kNN oracle
# ---------------------------------------------------------------------------


def full_sort_topk(query_matrix, query, k):
    sims = query_matrix @ query
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    return [(i, float(sims[i])) for i in order[:k]]


@pytest.mark.criterion(3)
class TestKnnOracle:
    def test_two_hundred_random_pools(self):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        ties = 0
        for _ in range(200):
            rows, dim = int(rng.integers(1, 513)), int(rng.integers(3, 65))
            raw = np.round(rng.standard_normal((rows, dim)), 1)
            if rows > 4:
                # duplicated rows give exactly tied similarities
                dup = rng.integers(0, rows, size=rows // 4)
                raw[rng.integers(0, rows, size=dup.size)] = raw[dup]
            raw[np.all(raw == 0, axis=1), 0] = 1.0
            unit, _ = l2_rows(raw)
            pool = MatchingPool(unit, raw, np.zeros((rows, 2), np.int64))
            q = raw[rng.integers(rows)] if rng.random() < 0.5 else np.round(rng.standard_normal(dim), 1)
            q = q / np.linalg.norm(q) if np.any(q) else np.eye(dim)[0]
            k = int(rng.integers(1, min(rows, 32) + 1))
            got = cosine_topk(q, pool, k)
            want = full_sort_topk(unit, q, k)
            assert got == want
            sims = [s for _, s in want]
            ties += len(sims) != len(set(sims))
            cos = raw @ q / np.linalg.norm(raw, axis=1)
            np.testing.assert_allclose([s for _, s in got], cos[[i for i, _ in got]], atol=1e-12)
        elapsed = time.perf_counter() - t0
        report(3, f"200 pools exact, {ties} with tied similarities, {elapsed:.2f}s")
        assert ties > 0
        assert elapsed < 30.0


# ---------------------------------------------------------------------------
# 4. Self-match identity
# ---------------------------------------------------------------------------


@pytest.mark.criterion(4)
class TestSelfMatch:
    def test_pool_of_source_k1(self, tmp_path):
        utt = make_utterance(2, seed=11, duration=2.0, ssl_dim=32)
        seq = utt["ssl"]
        build_pool([seq]).save(tmp_path / "pool.npz")
        pool = MatchingPool.load(tmp_path / "pool.npz")
        cfg = tiny_config(k=1)
        out = knn_replace(seq, pool, cfg.k, cfg.query_layers, cfg.aggregate)
        report(4, f"{out.shape[0]} frames bit-exact: {out.tobytes() == seq.layer(cfg.value_layer).tobytes()}")
        assert out.tobytes() == seq.layer(6).tobytes()


# ---------------------------------------------------------------------------
# 5. Flow endpoints and oracle integration
# ---------------------------------------------------------------------------


@pytest.mark.criterion(5)
class TestFlowOracle:
    def test_interpolate_endpoints(self):
        rng = np.random.default_rng(5)
        x0, x1 = rng.standard_normal((2, 3, 40, 16))
        assert interpolate(x0, x1, 0.0).tobytes() == x0.tobytes()
        assert interpolate(x0, x1, 1.0).tobytes() == x1.tobytes()
        t = np.array([0.0, 1.0, 0.0])
        assert np.array_equal(interpolate(x0, x1, t)[1], x1[1])

    @pytest.mark.parametrize("n_steps", [1, 10])
    def test_oracle_field_recovers_target(self, n_steps):
        spec = BandSpec(512, 240, 2, 8)
        audio = AudioBuffer(np.random.default_rng(6).standard_normal(240 * 30) * 0.1)
        frames = stft(audio, 512, 240).frames[:30]
        target = pack_spectrum(frames)
        z0 = band_split(make_rng(9, "sample").standard_normal(target.shape), spec)[None]
        field = oracle_field(band_split(target, spec)[None], z0)
        packed = sample_spectrum(field, None, spec, 30, n_steps=n_steps, seed=9)
        spec_frames, wav = euler_sample(field, None, spec, 30, n_steps=n_steps, seed=9)
        err = max(np.max(np.abs(packed - target)), np.max(np.abs(spec_frames.frames - frames)))
        report(5, f"n_steps={n_steps} max error {err:.2e}")
        assert err < 1e-6
        assert len(wav) == 30 * 240


# ---------------------------------------------------------------------------
# 6. Toy CFM convergence
# ---------------------------------------------------------------------------


@pytest.mark.criterion(6)
class TestToyConvergence:
    def test_gaussian_to_mixture(self):
        t0 = time.perf_counter()
        field, history = train_toy(steps=5000, n_train=4096, seed=0)
        ma = moving_average(np.array([r["rf"] for r in history]), 50)
        ratio = ma[-1] / ma[49]
        samples = sample_toy(field, n=4096, n_steps=10, seed=0)
        mean_err = np.abs(samples.mean(axis=0) - TOY_MEAN)
        std_err = np.abs(samples.std(axis=0) - TOY_STD)
        elapsed = time.perf_counter() - t0
        report(6, f"loss ratio {ratio:.3f}, mean error {mean_err.round(3)}, std error {std_err.round(3)}, "
                  f"{elapsed:.0f}s")
        assert ratio <= 0.5
        assert np.all(mean_err <= 0.1)
        assert np.all(std_err <= 0.15)
        assert elapsed < 600


# ---------------------------------------------------------------------------
# 7. Metric identities
# ---------------------------------------------------------------------------


@pytest.mark.criterion(7)
class TestMetricIdentities:
    def test_twenty_random_inputs(self):
        rng = np.random.default_rng(7)
        for i in range(20):
            f0 = f0_contour(int(rng.integers(40, 120)), rng, 120.0, 400.0)
            audio = harmonic_audio(f0, 240, amplitude=float(rng.uniform(0.05, 0.8)))
            assert f0corr(f0, f0) == pytest.approx(1.0, abs=1e-12)
            assert loudness_rmse(audio, audio) == 0.0
            assert mcd(audio, audio) == 0.0
            v = rng.standard_normal(int(rng.integers(2, 256)))
            assert ssim(v, v) == pytest.approx(1.0, abs=1e-12)
        report(7, "identities hold on 20 inputs")

    def test_amplitude_halving(self):
        audio = harmonic_audio(np.full(100, 220.0), 240, amplitude=0.6)
        got = loudness_rmse(audio, audio.scaled(0.5))
        report(7, f"halving gives {got:.4f} dB (20 log10 2 = {20 * np.log10(2):.4f})")
        assert abs(got - 6.02) <= 0.1


# ---------------------------------------------------------------------------
# 8. DSP accuracy
# ---------------------------------------------------------------------------


@pytest.mark.criterion(8)
class TestDspAccuracy:
    @pytest.mark.parametrize("amplitude,phase", [(0.5, 0.0), (0.1, 1.0), (0.9, 2.5)])
    def test_pitch_440(self, amplitude, phase):
        f0 = extract_pitch(AudioBuffer.sine(440.0, duration=1.0, amplitude=amplitude, phase=phase))
        voiced = f0[f0 > 0]
        within = np.mean(np.abs(voiced - 440.0) <= 2.0)
        report(8, f"440 Hz a={amplitude}: {within:.3f} of {voiced.size} voiced frames within 2 Hz")
        assert voiced.size > 0
        assert within >= 0.95

    def test_a_weighting_1k(self):
        gain = float(a_weighting_db(np.array([1000.0]))[0])
        report(8, f"A-weighting at 1 kHz {gain:+.2e} dB")
        assert abs(gain) < 1e-3

    @pytest.mark.parametrize("fft_size,hop", [(1024, 240), (512, 240), (512, 128)])
    def test_stft_roundtrip(self, fft_size, hop):
        audio = AudioBuffer(np.random.default_rng(fft_size + hop).uniform(-1, 1, 24000))
        back = istft(stft(audio, fft_size, hop))
        err = float(np.max(np.abs(back.samples - audio.samples)))
        report(8, f"STFT {fft_size}/{hop} round trip error {err:.2e}")
        assert len(back) == len(audio)
        assert err < 1e-6


# ---------------------------------------------------------------------------
# 9. End-to-end smoke
# ---------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion(9)
class TestEndToEnd:
    def test_cli_convert(self, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps(tiny_config().to_dict()))
        c = ("--config", "cfg.json", "--json")
        t0 = time.perf_counter()
        cli("synth", "corpus", *c, cwd=tmp_path)
        cli("pool", "build", *sorted(Path("corpus/train").joinpath(p.name) for p in
                                     (tmp_path / "corpus/train").glob("*.ssl")), "--out", "pool.npz", *c,
            cwd=tmp_path)
        cli("train-cfm", "corpus/train.json", "model", *c, cwd=tmp_path)
        train_seconds = time.perf_counter() - t0
        cli("extract", "corpus/train/utt_00.wav", "target.mel", *c, cwd=tmp_path)
        cli("convert", "--source-features", "corpus/source.ssl", "--source-audio", "corpus/source.wav",
            "--pool", "pool.npz", "--checkpoint", "model/checkpoint.dafm", "--speaker-emb", "corpus/target_spk.npy",
            "--target-melody", "target.mel", "--out", "out.wav", *c, cwd=tmp_path)

        out = read_wav(tmp_path / "out.wav", target_rate=None)
        src = extract_melody(read_wav(tmp_path / "corpus/source.wav"), 240, 512)
        factor = pitch_shift_factor(src.f0, load_melody(tmp_path / "target.mel").f0)
        got = extract_melody(out, 240, 512)
        corr = f0corr(src.f0 * factor, got.f0)
        rms = float(np.sqrt(np.mean(out.samples ** 2)))
        report(9, f"trained in {train_seconds:.0f}s, rms {rms:.4f}, shift {factor:.3f}, f0corr {corr:.3f}")
        assert out.sample_rate == 24000
        assert np.all(np.isfinite(out.samples))
        assert rms > 1e-3
        assert train_seconds < 900
        assert corr >= 0.8


# ---------------------------------------------------------------------------
# 10. Determinism
# ---------------------------------------------------------------------------


def _snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.criterion(10)
class TestDeterminism:
    def test_every_command_twice(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(tiny_config(**SMALL).to_dict()))
        snaps, stdouts = [], []
        for run in ("a", "b"):
            d = tmp_path / run
            d.mkdir()
            shutil.copy(cfg, d / "cfg.json")
            c = ("--config", "cfg.json", "--json", "--seed", "3")
            outs = [cli("synth", "corpus", "--n-train", 3, "--duration", 0.5, *c, cwd=d)]
            refs = sorted(str(p.relative_to(d)) for p in (d / "corpus/train").glob("*.ssl"))
            outs.append(cli("pool", "build", *refs, "--out", "pool.npz", *c, cwd=d))
            outs.append(cli("extract", "corpus/train/utt_00.wav", "target.mel", *c, cwd=d))
            outs.append(cli("train-cfm", "corpus/train.json", "model", *c, cwd=d))
            outs.append(cli("convert", "--source-features", "corpus/source.ssl", "--source-audio",
                            "corpus/source.wav", "--pool", "pool.npz", "--checkpoint", "model/checkpoint.dafm",
                            "--speaker-emb", "corpus/target_spk.npy", "--target-melody", "target.mel",
                            "--out", "out.wav", *c, cwd=d))
            (d / "eval.json").write_text(json.dumps({"pairs": [
                {"id": "x", "source": "corpus/source.wav", "converted": "out.wav"}]}))
            outs.append(cli("eval", "eval.json", "report", *c, cwd=d))
            check = json.loads(cli("selfcheck", *c, cwd=d))
            for r in check["result"]["checks"]:
                r.pop("seconds")  # wall-clock timing
            outs.append(json.dumps(check, sort_keys=True))
            outs = [o.replace(str(d), "<run>") for o in outs]
            snaps.append(_snapshot(d))
            stdouts.append(outs)
        report(10, f"{len(snaps[0])} files and {len(stdouts[0])} command outputs compared")
        assert snaps[0].keys() == snaps[1].keys()
        for name in snaps[0]:
            assert snaps[0][name] == snaps[1][name], name
        assert stdouts[0] == stdouts[1]
