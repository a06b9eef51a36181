"""Orchestration: extract -> pool -> match -> fuse -> generate -> evaluate.

Each function here backs one CLI command, reads and writes files only
through the tensor-file, WAV and JSON codecs, and is deterministic given
its seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics, synthetic, tensorfile
from .audio import AudioBuffer, read_wav, write_wav
from .cfm.bands import pack_spectrum
from .cfm.train import cosine_schedule, train_loop
from .config import PipelineConfig
from .errors import InputError, SchemaError
from .features.melody import MelodySeries, extract_melody, pitch_shift_factor
from .features.stft import stft
from .matching import MatchingPool, SslSequence, build_pool, knn_replace
from .model import SvcModel
from .nn.optim import ParamStore

logger = logging.getLogger(__name__)

GENERATORS = ("model", "oracle-identity")


# ---- melody files ----

def save_melody(path, melody: MelodySeries, config: PipelineConfig, n_samples: int) -> None:
    meta = {
        "kind": "melody",
        "hop": melody.hop,
        "sample_rate": melody.sample_rate,
        "fft_size": config.fft_size,
        "window": config.window,
        "n_frames": len(melody),
        "n_samples": int(n_samples),
        "n_bins": config.fft_size // 2 + 1,
        "config_hash": tensorfile.config_hash(config.to_dict()),
    }
    tensorfile.save(path, {"f0": melody.f0, "loudness": melody.loudness}, meta)


def load_melody(path) -> MelodySeries:
    tensors, meta = tensorfile.load(path)
    if meta.get("kind") != "melody":
        raise SchemaError(f"{path}: not a melody file")
    for key in ("f0", "loudness"):
        if key not in tensors:
            raise SchemaError(f"{path}: missing tensor {key!r}")
    return MelodySeries(tensors["f0"], tensors["loudness"], int(meta["hop"]), int(meta["sample_rate"]))


def load_speaker(path) -> np.ndarray:
    """Speaker embeddings ``(n_vectors, d_spk)`` from ``.npy`` or ``.json``."""
    emb = np.asarray(metrics.load_embedding(Path(path)), dtype=np.float64)
    if emb.ndim == 1:
        emb = emb[None]
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise SchemaError(f"{path}: speaker embeddings must be a vector or a non-empty matrix")
    return emb


# ---- commands ----

def extract(audio_path, out_path, config: PipelineConfig) -> dict:
    audio = read_wav(audio_path, config.sample_rate)
    melody = extract_melody(audio, config.hop, config.fft_size)
    save_melody(out_path, melody, config, len(audio))
    voiced = melody.f0[melody.voiced]
    return {
        "n_frames": len(melody),
        "voiced_frames": int(voiced.size),
        "f0_median": float(np.median(voiced)) if voiced.size else 0.0,
        "loudness_mean_db": float(melody.loudness.mean()),
    }


def pool_build(ssl_paths, out_path, config: PipelineConfig, max_frames=None) -> dict:
    refs = [SslSequence.load(p) for p in ssl_paths]
    pool = build_pool(refs, config.query_layers, config.value_layer, max_frames)
    pool.save(out_path)
    return {"rows": len(pool), "excluded": pool.excluded, "utterances": len(refs)}


def convert(source_features, source_audio, pool_path, out_wav, config: PipelineConfig, checkpoint=None,
            speaker_emb=None, target_melody=None, generator="model", seed=0) -> dict:
    """Full conversion of one utterance; writes a float WAV at the config rate."""
    if generator not in GENERATORS:
        raise InputError(f"generator must be one of {GENERATORS}, got {generator!r}")
    ssl = SslSequence.load(source_features)
    pool = MatchingPool.load(pool_path)
    matched = knn_replace(ssl, pool, config.k, config.query_layers, config.aggregate)
    audio = read_wav(source_audio, config.sample_rate)
    melody = extract_melody(audio, config.hop, config.fft_size)
    factor = 1.0
    if target_melody is not None:
        factor = pitch_shift_factor(melody.f0, load_melody(target_melody).f0)
    shifted = melody.shifted(factor)
    if generator == "oracle-identity":
        out = audio
    else:
        if checkpoint is None:
            raise InputError("the model generator needs --checkpoint")
        if speaker_emb is None and config.spk_branch:
            raise InputError("the speaker branch needs --speaker-emb")
        model = SvcModel.load(checkpoint)
        spk = load_speaker(speaker_emb) if speaker_emb is not None else np.zeros((1, model.config.d_spk))
        cond = model.condition(matched, spk, shifted)
        out = model.generate(cond, len(melody), seed=seed)
        out = AudioBuffer(out.samples[: len(audio)], out.sample_rate)
    if not np.all(np.isfinite(out.samples)):
        raise InputError("generated audio is not finite")
    write_wav(out_wav, out)
    return {
        "n_frames": len(melody),
        "shift_factor": factor,
        "samples": len(out),
        "rms": float(np.sqrt(np.mean(out.samples ** 2))),
        "generator": generator,
    }


# ---- training ----

@dataclass
class TrainItem:
    matched: np.ndarray
    speaker: np.ndarray
    melody: MelodySeries
    audio: AudioBuffer


def prepare_items(entries, config: PipelineConfig) -> list:
    """Load utterances and match each against a pool of the others.

    Leave-one-out matching gives the fusion stage the same kind of input it
    sees at conversion time; a single utterance falls back to its own
    value-layer features.
    """
    seqs = [e["ssl"] for e in entries]
    items = []
    for i, e in enumerate(entries):
        others = [s for j, s in enumerate(seqs) if j != i]
        if others:
            pool = build_pool(others, config.query_layers, config.value_layer)
            matched = knn_replace(seqs[i], pool, min(config.k, len(pool)), config.query_layers, config.aggregate)
        else:
            matched = seqs[i].layer(config.value_layer)
        audio = e["audio"]
        items.append(TrainItem(matched, e["speaker"], extract_melody(audio, config.hop, config.fft_size), audio))
    return items


def train_model(items, config: PipelineConfig, steps=None, seed=None, checkpoint_fn=None, checkpoint_interval=0,
                diag_dir=None):
    """Jointly train fusion and flow on random crops; returns ``(model, history)``."""
    steps = config.train_steps if steps is None else steps
    seed = config.seed if seed is None else seed
    if not items:
        raise InputError("no training utterances")
    model = SvcModel(config, seed)
    packed = [pack_spectrum(stft(it.audio, config.fft_size, config.hop, config.window).frames) for it in items]
    model.spec_scale = float(np.concatenate(packed).std()) or 1.0
    targets = [model.target_bands(it.audio) for it in items]
    seg = config.segment_frames

    def loss_fn(step, rng):
        idx = int(rng.integers(len(items)))
        it, x1 = items[idx], targets[idx]
        n = len(it.melody)
        length = min(seg, n - n % 2) if n > 1 else n
        start = 2 * int(rng.integers(0, (n - length) // 2 + 1))
        mel = MelodySeries(it.melody.f0[start:start + length], it.melody.loudness[start:start + length],
                           it.melody.hop, it.melody.sample_rate)
        matched = it.matched[start // 2: start // 2 + (length + 1) // 2]
        cond = model.condition(matched, it.speaker, mel)
        return model.loss(cond, x1[:, start:start + length], rng)

    store = ParamStore.from_module(model)
    history = train_loop(loss_fn, store, steps, lr=cosine_schedule(config.lr, steps), weight_decay=config.weight_decay,
                         seed=seed, checkpoint_fn=checkpoint_fn, checkpoint_interval=checkpoint_interval,
                         diag_dir=diag_dir)
    return model, history


def _load_training_manifest(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise SchemaError("training manifest must be a JSON object")
    return manifest, path.parent


def train_cfm(manifest_path, out_dir, config: PipelineConfig, seed=0) -> dict:
    """Train from a manifest and write ``checkpoint.dafm`` and ``loss_curve.json``.

    ``{"task": "toy2d", "steps": n}`` runs the two-dimensional mixture task;
    otherwise ``{"utterances": [{"audio", "ssl", "speaker_emb"}]}`` trains
    the full model.
    """
    manifest, root = _load_training_manifest(manifest_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if manifest.get("task") == "toy2d":
        return _train_toy(manifest, out, seed)
    entries = manifest.get("utterances")
    if not isinstance(entries, list) or not entries:
        raise SchemaError("training manifest needs a non-empty 'utterances' list or task 'toy2d'")
    loaded = []
    for e in entries:
        for key in ("audio", "ssl", "speaker_emb"):
            if key not in e:
                raise SchemaError(f"training utterance lacks {key!r}")
        loaded.append({
            "audio": read_wav(root / e["audio"], config.sample_rate),
            "ssl": SslSequence.load(root / e["ssl"]),
            "speaker": load_speaker(root / e["speaker_emb"]),
        })
    steps = int(manifest.get("steps", config.train_steps))
    items = prepare_items(loaded, config)
    model, history = train_model(items, config, steps, seed, diag_dir=out)
    model.save(out / "checkpoint.dafm", extra_meta={"train_steps": steps, "seed": seed})
    summary = {"steps": steps, "final_total": history[-1]["total"], "first_total": history[0]["total"]}
    (out / "loss_curve.json").write_text(json.dumps({"history": history, "summary": summary}, sort_keys=True) + "\n")
    return summary


def _train_toy(manifest, out: Path, seed) -> dict:
    from .cfm.toy import GaussianMixture, sample_toy, train_toy
    from .cfm.train import moving_average

    steps = int(manifest.get("steps", 5000))
    field, history = train_toy(steps=steps, seed=seed)
    rf = np.array([r["rf"] for r in history])
    ma = moving_average(rf, 50)
    samples = sample_toy(field, seed=seed)
    mean, std = GaussianMixture().moments()
    summary = {
        "steps": steps,
        "rf_ma_step50": float(ma[min(49, len(ma) - 1)]),
        "rf_ma_final": float(ma[-1]),
        "sample_mean": samples.mean(axis=0).tolist(),
        "sample_std": samples.std(axis=0).tolist(),
        "target_mean": mean.tolist(),
        "target_std": std.tolist(),
    }
    tensorfile.save(out / "checkpoint.dafm", {f"param/{n}": v for n, v in field.state_dict().items()},
                    {"kind": "toy-field", "steps": steps, "seed": seed})
    (out / "loss_curve.json").write_text(json.dumps({"history": history, "summary": summary}, sort_keys=True) + "\n")
    return summary


def evaluate(manifest_path, report_dir) -> dict:
    report = metrics.evaluate_manifest(manifest_path, report_dir)
    return {"n_pairs": report["n_pairs"], "aggregate": report["aggregate"]}


# ---- synthetic corpus ----

def synth_corpus(out_dir, config: PipelineConfig, seed=0, n_train=24, duration=2.0, train_steps=None) -> dict:
    """Write a synthetic target-speaker corpus plus one source utterance.

    Layout: ``train/utt_XX.{wav,ssl}``, ``target_spk.npy``, ``train.json``,
    ``source.{wav,ssl}``.  The source singer (speaker 2) sits lower than the
    target (speaker 1) so conversion needs an upward pitch shift.
    """
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    kw = dict(hop=config.hop, sample_rate=config.sample_rate, ssl_dim=config.ssl_dim, d_spk=config.d_spk)
    entries = []
    for i in range(n_train):
        utt = synthetic.make_utterance(1, seed * 1000 + i, duration, **kw)
        write_wav(out / "train" / f"utt_{i:02d}.wav", utt["audio"])
        utt["ssl"].save(out / "train" / f"utt_{i:02d}.ssl")
        entries.append({"audio": f"train/utt_{i:02d}.wav", "ssl": f"train/utt_{i:02d}.ssl",
                        "speaker_emb": "target_spk.npy"})
    np.save(out / "target_spk.npy", synthetic.speaker_embeddings(1, config.d_spk))
    manifest = {"utterances": entries}
    if train_steps is not None:
        manifest["steps"] = int(train_steps)
    (out / "train.json").write_text(json.dumps(manifest, indent=2) + "\n")
    src = synthetic.make_utterance(2, seed * 1000 + 999, duration, f0_range=(110.0, 220.0), **kw)
    write_wav(out / "source.wav", src["audio"])
    src["ssl"].save(out / "source.ssl")
    return {"train_utterances": n_train, "duration": duration, "dir": str(out)}
