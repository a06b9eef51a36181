"""Content encoder and gated dual cross-attention fusion.

The fusion stage turns pre-matched SSL features ``C``, speaker embeddings
``S`` and melody features ``P`` into a frame-synchronous condition::

    O = softmax(q_C k_P^T / sqrt(d)) v_P + tanh(alpha) softmax(q_C k_S^T / sqrt(d)) v_S

with queries and keys L2-normalised per head ("query-key normalisation")
and the gate ``alpha`` starting at exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ConfigError, InputError, ShapeError
from .nn import ops as T
from .nn.modules import Conv1d, LayerNorm, Linear, Module, sinusoidal_embedding
from .nn.tensor import Parameter, Tensor, as_tensor

ABLATIONS = ("none", "no-spk", "no-att")


def upsample_frames(x: np.ndarray, factor: int = 2) -> np.ndarray:
    """Linear interpolation of a ``(frames, dim)`` matrix to ``factor`` x frames.

    Output frame ``j`` sits at input position ``(j + 0.5) / factor - 0.5``,
    clamped to the ends (half-sample alignment of the two frame grids).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if factor == 1 or n == 0:
        return x.copy()
    pos = np.clip((np.arange(n * factor) + 0.5) / factor - 0.5, 0, n - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    w = (pos - lo)[:, None]
    return (1 - w) * x[lo] + w * x[hi]


def align_frames(x: np.ndarray, n_frames: int, tolerance: int = 2) -> np.ndarray:
    """Trim or edge-pad ``x`` to ``n_frames`` rows when within ``tolerance``."""
    diff = x.shape[0] - n_frames
    if abs(diff) > tolerance:
        raise AlignmentError(f"stream has {x.shape[0]} frames, melody has {n_frames} (tolerance {tolerance})")
    if diff > 0:
        return x[:n_frames]
    if diff < 0:
        return np.concatenate([x, np.repeat(x[-1:], -diff, axis=0)], axis=0)
    return x


def _batched(x) -> Tensor:
    x = as_tensor(x)
    return T.reshape(x, (1,) + x.shape) if x.ndim == 2 else x


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """``(B, T, D)`` to ``(B, H, T, D // H)``."""
    b, t, d = x.shape
    if d % n_heads:
        raise ShapeError(f"width {d} not divisible by {n_heads} heads")
    return T.transpose(T.reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


class MultiHeadSelfAttention(Module):
    def __init__(self, d_model, n_heads, rng, dtype=np.float64):
        self.wq = Linear(d_model, d_model, rng, dtype=dtype)
        self.wk = Linear(d_model, d_model, rng, dtype=dtype)
        self.wv = Linear(d_model, d_model, rng, dtype=dtype)
        self.wo = Linear(d_model, d_model, rng, dtype=dtype)
        self.n_heads = n_heads

    def __call__(self, x):
        q = split_heads(self.wq(x), self.n_heads)
        k = split_heads(self.wk(x), self.n_heads)
        v = split_heads(self.wv(x), self.n_heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        attn = T.softmax(T.matmul(q, T.swap_last(k)) * scale)
        return self.wo(merge_heads(T.matmul(attn, v)))


class FFTBlock(Module):
    """Feed-forward Transformer block: self-attention then a two-layer
    convolutional feed-forward, each with residual and post layer norm."""

    def __init__(self, d_model, n_heads, d_ff, kernel, rng, dtype=np.float64):
        self.attn = MultiHeadSelfAttention(d_model, n_heads, rng, dtype)
        self.norm1 = LayerNorm(d_model, dtype)
        self.conv1 = Conv1d(d_model, d_ff, kernel, rng, dtype=dtype)
        self.conv2 = Conv1d(d_ff, d_model, 1, rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype)

    def __call__(self, x):
        h = self.norm1(x + self.attn(x))
        return self.norm2(h + self.conv2(T.gelu(self.conv1(h))))


class ContentEncoder(Module):
    def __init__(self, d_in, d_model=256, n_blocks=4, n_heads=4, d_ff=1024, kernel=9, rng=None,
                 dtype=np.float64):
        self.in_proj = Linear(d_in, d_model, rng, dtype=dtype)
        self.blocks = [FFTBlock(d_model, n_heads, d_ff, kernel, rng, dtype) for _ in range(n_blocks)]
        self.d_model = d_model

    def __call__(self, matched, n_frames=None):
        """Encode ``(frames, d_in)`` (or batched) features to ``(B, frames, d_model)``.

        ``n_frames`` is the melody frame count the content must match.
        """
        x = _batched(matched)
        if n_frames is not None and x.shape[1] != n_frames:
            raise AlignmentError(f"content has {x.shape[1]} frames but melody has {n_frames}")
        h = self.in_proj(x)
        h = h + sinusoidal_embedding(np.arange(x.shape[1]), self.d_model).astype(h.dtype)
        for block in self.blocks:
            h = block(h)
        return h


@dataclass
class AttentionMaps:
    melody_logits: np.ndarray
    melody_weights: np.ndarray
    speaker_logits: np.ndarray | None
    speaker_weights: np.ndarray | None
    melody_term: np.ndarray
    speaker_term: np.ndarray | None


class DualAttention(Module):
    """Gated dual cross-attention over melody and speaker streams.

    With ``n_heads > 1`` the formula is applied per head (head width
    ``d = d_model / n_heads``) and heads are concatenated.  ``melody_positions``
    adds sinusoidal positions to melody-branch queries and keys before
    normalisation.
    """

    def __init__(self, d_model=256, d_spk=192, d_melody=2, n_heads=4, rng=None, dtype=np.float64,
                 melody_positions=True, gate_per_head=False):
        self.wq = Linear(d_model, d_model, rng, dtype=dtype)
        self.w_sk = Linear(d_spk, d_model, rng, dtype=dtype)
        self.w_sv = Linear(d_spk, d_model, rng, dtype=dtype)
        self.w_pk = Linear(d_melody, d_model, rng, dtype=dtype)
        self.w_pv = Linear(d_melody, d_model, rng, dtype=dtype)
        self.alpha = Parameter(np.zeros(n_heads if gate_per_head else 1, dtype), decay=False)
        self.n_heads = n_heads
        self.melody_positions = melody_positions
        self.gate_per_head = gate_per_head

    def _positions(self, n, like):
        dh = like.shape[-1]
        return sinusoidal_embedding(np.arange(n), dh).astype(like.dtype)

    def __call__(self, content, speaker, melody, use_speaker=True, return_maps=False):
        c = _batched(content)
        p = _batched(melody)
        if p.shape[:2] != c.shape[:2]:
            raise AlignmentError(f"melody {p.shape[:2]} and content {c.shape[:2]} are not frame-aligned")
        h = self.n_heads
        q = split_heads(self.wq(c), h)
        pk = split_heads(self.w_pk(p), h)
        pv = split_heads(self.w_pv(p), h)
        if self.melody_positions:
            pos = self._positions(c.shape[1], q)
            q_m, pk = q + pos, pk + pos
        else:
            q_m = q
        scale = 1.0 / np.sqrt(q.shape[-1])
        melody_logits = T.matmul(T.l2_normalize(q_m), T.swap_last(T.l2_normalize(pk))) * scale
        melody_w = T.softmax(melody_logits)
        melody_term = T.matmul(melody_w, pv)
        out = melody_term
        spk_logits = spk_w = spk_term = None
        if use_speaker:
            s = as_tensor(speaker) if speaker is not None else None
            if s is None or s.data.size == 0:
                raise InputError("speaker branch enabled but no speaker embeddings given")
            s = _batched(s)
            if s.shape[0] != c.shape[0]:
                s = T.broadcast_to(s, (c.shape[0],) + s.shape[1:])
            sk = split_heads(self.w_sk(s), h)
            sv = split_heads(self.w_sv(s), h)
            spk_logits = T.matmul(T.l2_normalize(q), T.swap_last(T.l2_normalize(sk))) * scale
            spk_w = T.softmax(spk_logits)
            spk_term = T.matmul(spk_w, sv)
            gate = T.tanh(self.alpha)
            gate = T.reshape(gate, (1, -1, 1, 1)) if self.gate_per_head else gate
            out = out + gate * spk_term
        out = merge_heads(out)
        if not return_maps:
            return out
        maps = AttentionMaps(
            melody_logits.data, melody_w.data,
            None if spk_logits is None else spk_logits.data,
            None if spk_w is None else spk_w.data,
            merge_heads(melody_term).data,
            None if spk_term is None else merge_heads(spk_term).data,
        )
        return out, maps


class FusionModel(Module):
    """Content encoder plus the fusion stage, with ablation modes.

    ``none``: residual content plus dual attention output.
    ``no-spk``: encoded content only (no speaker input, no attention).
    ``no-att``: concatenation of content, mean speaker embedding and melody,
    linearly projected back to ``d_model``.
    """

    def __init__(self, d_ssl=1024, d_model=256, d_spk=192, n_blocks=4, n_heads=4, d_ff=1024, kernel=9,
                 ablation="none", residual=True, melody_positions=True, gate_per_head=False, rng=None,
                 dtype=np.float64):
        if ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {ablation!r}")
        self.encoder = ContentEncoder(d_ssl, d_model, n_blocks, n_heads, d_ff, kernel, rng, dtype)
        self.ablation = ablation
        self.residual = residual
        self.d_model = d_model
        self.attention = None
        self.concat_proj = None
        if ablation == "none":
            self.attention = DualAttention(d_model, d_spk, 2, n_heads, rng, dtype, melody_positions, gate_per_head)
        elif ablation == "no-att":
            self.concat_proj = Linear(d_model + d_spk + 2, d_model, rng, dtype=dtype)

    def __call__(self, matched, speaker, melody_channels):
        """``(frames, d_ssl)`` features -> ``(B, frames, d_model)`` fused output."""
        p = _batched(melody_channels)
        c = self.encoder(matched, n_frames=p.shape[1])
        if self.ablation == "no-spk":
            return c
        if self.ablation == "no-att":
            s = as_tensor(speaker)
            s = T.reshape(s, (1,) + s.shape) if s.ndim == 2 else s
            s_mean = T.broadcast_to(T.mean(s, axis=1, keepdims=True), (c.shape[0], c.shape[1], s.shape[-1]))
            return self.concat_proj(T.concat([c, s_mean, p], axis=-1))
        o = self.attention(c, speaker, p)
        return c + o if self.residual else o


def fuse_and_condition(fused, melody) -> Tensor:
    """Append the two melody channels to the fused stream: ``(.., frames, d_model + 2)``."""
    channels = melody.condition_channels() if hasattr(melody, "condition_channels") else np.asarray(melody)
    o = as_tensor(fused)
    p = as_tensor(np.asarray(channels, dtype=o.dtype))
    if o.ndim == 3 and p.ndim == 2:
        p = as_tensor(np.broadcast_to(p.data, (o.shape[0],) + p.shape).copy())
    if o.shape[-2] != p.shape[-2]:
        raise AlignmentError(f"fused stream has {o.shape[-2]} frames, melody has {p.shape[-2]}")
    return T.concat([o, p], axis=-1)
