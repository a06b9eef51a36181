"""Joint fusion + flow-matching model, its training step and checkpoints."""

from __future__ import annotations

import numpy as np

from . import tensorfile
from .audio import AudioBuffer
from .cfm.bands import band_split, pack_spectrum
from .cfm.losses import endpoint_estimate, interpolate, overlap_loss, rf_objective, sigma_of, stft_loss, total_loss
from .cfm.net import VectorFieldNet
from .cfm.sampler import euler_sample
from .config import PipelineConfig
from .errors import SchemaError
from .features.melody import MelodySeries
from .features.stft import stft
from .fusion import FusionModel, align_frames, fuse_and_condition, upsample_frames
from .nn.modules import Module
from .nn.rng import make_rng

CHECKPOINT_KIND = "checkpoint"


class SvcModel(Module):
    """Content encoder, dual attention and a band-shared vector field.

    ``spec_scale`` divides packed spectra before they enter the flow so the
    data endpoint has roughly unit scale; it is stored with the weights.
    """

    def __init__(self, config: PipelineConfig, seed=None):
        seed = config.seed if seed is None else seed
        rng = make_rng(seed, "init")
        self.config = config
        self.spec = config.band_spec()
        self.fusion = FusionModel(config.ssl_dim, config.d_model, config.d_spk, config.n_blocks, config.n_heads,
                                  config.d_ff, config.kernel, config.ablation, config.residual,
                                  config.melody_positions, rng=rng)
        self.field = VectorFieldNet(self.spec.channels, config.condition_channels, self.spec.n_bands,
                                    config.cfm_hidden, config.cfm_blocks, config.cfm_kernel, rng=rng)
        self.spec_scale = 1.0

    def condition(self, matched, speaker, melody: MelodySeries):
        """Frame-synchronous condition ``(1, n_frames, d_model + 2)``.

        ``matched`` is at the SSL frame rate and is upsampled by two, then
        trimmed or padded onto the melody grid.
        """
        content = align_frames(upsample_frames(matched, 2), len(melody))
        channels = melody.condition_channels()
        fused = self.fusion(content, np.asarray(speaker, dtype=np.float64), channels)
        return fuse_and_condition(fused, channels)

    def target_bands(self, audio: AudioBuffer) -> np.ndarray:
        """Scaled band tensor ``(n_bands, n_frames, channels)`` of an utterance."""
        frames = stft(audio, self.spec.fft_size, self.spec.hop, self.config.window)
        return band_split(pack_spectrum(frames.frames) / self.spec_scale, self.spec)

    def loss(self, cond, x1, rng):
        """Total loss and its parts for one item; ``x1`` is ``(n_bands, T, channels)``."""
        x1 = x1[None]
        s = self.spec
        noise = rng.standard_normal((x1.shape[2], 2 * s.n_slots))
        x0 = band_split(noise, s)[None]
        t = rng.uniform(0.0, 1.0, size=1)
        xt = interpolate(x0, x1, t)
        v_hat = self.field(xt, t, cond)
        l_rf = rf_objective(v_hat, x0, x1, sigma_of(x0, x1, self.config.sigma_mode))
        x1_hat = endpoint_estimate(xt, v_hat, t)
        l_ov = overlap_loss(x1_hat, s)
        l_stft = stft_loss(x1_hat, x1, s)
        total = total_loss(l_rf, l_ov, l_stft, self.config.lam)
        return total, {"rf": float(l_rf.data), "overlap": float(l_ov.data), "stft": float(l_stft.data)}

    def generate(self, cond, n_frames: int, seed=0, n_steps=None) -> AudioBuffer:
        c = np.asarray(getattr(cond, "data", cond))
        _, audio = euler_sample(self.field, c, self.spec, n_frames, n_steps or self.config.n_steps, seed,
                                self.spec_scale, self.config.sample_rate, self.config.window)
        return audio

    # ---- persistence ----

    def save(self, path, extra_tensors=None, extra_meta=None) -> None:
        tensors = {f"param/{n}": v for n, v in self.state_dict().items()}
        tensors.update(extra_tensors or {})
        meta = {
            "kind": CHECKPOINT_KIND,
            "config": self.config.to_dict(),
            "config_hash": tensorfile.config_hash(self.config.to_dict()),
            "band_spec": self.spec.to_dict(),
            "spec_scale": self.spec_scale,
        }
        meta.update(extra_meta or {})
        tensorfile.save(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "SvcModel":
        tensors, meta = tensorfile.load(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise SchemaError(f"{path}: not a model checkpoint")
        model = cls(PipelineConfig.from_dict(meta["config"]))
        model.load_state_dict({n[len("param/"):]: v for n, v in tensors.items() if n.startswith("param/")})
        model.spec_scale = float(meta["spec_scale"])
        return model
