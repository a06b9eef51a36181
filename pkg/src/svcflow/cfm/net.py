"""Vector-field networks for flow matching."""

from __future__ import annotations

import numpy as np

from ..nn import ops as T
from ..nn.modules import Conv1d, LayerNorm, Linear, Module, sinusoidal_embedding
from ..nn.tensor import Parameter, as_tensor

T_EMBED_DIM = 32


def time_features(t, dim=T_EMBED_DIM) -> np.ndarray:
    """Sinusoidal features of flow time, shape ``(len(t), dim)``."""
    return sinusoidal_embedding(np.atleast_1d(np.asarray(t, dtype=np.float64)) * 1000.0, dim)


def fourier_features(x, n_freqs=7) -> np.ndarray:
    """``sin`` and ``cos`` of ``pi * 2**i * x`` for each trailing channel of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    ang = np.pi * x[..., None] * (2.0 ** np.arange(n_freqs))
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return feats.reshape(x.shape[:-1] + (-1,))


class ConvNeXtBlock(Module):
    """Depthwise conv, layer norm, pointwise MLP, residual."""

    def __init__(self, dim, rng, kernel=7, expansion=2, dtype=np.float64):
        self.dwconv = Conv1d(dim, dim, kernel, rng, groups=dim, dtype=dtype)
        self.norm = LayerNorm(dim, dtype)
        self.pw1 = Linear(dim, expansion * dim, rng, dtype=dtype)
        self.pw2 = Linear(expansion * dim, dim, rng, dtype=dtype)

    def __call__(self, x):
        return x + self.pw2(T.gelu(self.pw1(self.norm(self.dwconv(x)))))


class VectorFieldNet(Module):
    """Shared multi-band field ``v(x_t, t | C, band)``.

    ``x_t`` is ``(B, n_bands, T, channels)``; the condition ``(B, T, cond_dim)``
    and the time features are projected once and broadcast over bands, and a
    learned per-band embedding tells bands apart.

    With ``x_skip`` the output also gets a per-channel gated term ``g * x_t``.
    The gain ``g`` sums a time term, a band term and a head on the final
    hidden state, all zero-initialised.  This lets the field act on every
    input channel when ``hidden`` is narrower than ``channels``, and lets the
    condition select which channels to amplify.

    The last ``fourier_channels`` condition channels (the melody scalars)
    are also expanded with :func:`fourier_features`; a bin-selective
    response to pitch is hard to build from the raw scalar.
    """

    def __init__(self, channels, cond_dim, n_bands, hidden=128, n_blocks=4, kernel=7, rng=None,
                 dtype=np.float64, x_skip=True, fourier_channels=2, n_freqs=7):
        self.fourier_channels = fourier_channels
        self.n_freqs = n_freqs
        extra = 2 * n_freqs * fourier_channels
        self.x_proj = Linear(channels, hidden, rng, dtype=dtype)
        self.c_proj = Linear(cond_dim + extra, hidden, rng, bias=False, dtype=dtype)
        self.t_proj = Linear(T_EMBED_DIM, hidden, rng, bias=False, dtype=dtype)
        self.band_emb = Parameter(rng.normal(0.0, 0.02, size=(n_bands, hidden)).astype(dtype), decay=False)
        self.blocks = [ConvNeXtBlock(hidden, rng, kernel, dtype=dtype) for _ in range(n_blocks)]
        self.out_norm = LayerNorm(hidden, dtype)
        self.out_proj = Linear(hidden, channels, rng, dtype=dtype)
        self.hidden = hidden
        self.skip_t = Linear(T_EMBED_DIM, channels, rng, bias=False, dtype=dtype, zero_init=True) if x_skip else None
        self.skip_band = Parameter(np.zeros((n_bands, channels), dtype), decay=False) if x_skip else None
        self.skip_head = Linear(hidden, channels, rng, dtype=dtype, zero_init=True) if x_skip else None

    def __call__(self, xt, t, cond):
        x = as_tensor(np.asarray(xt, dtype=self.x_proj.weight.dtype)) if not hasattr(xt, "data") else xt
        bsz, n_bands, n_t, _ = x.shape
        c = as_tensor(cond)
        if c.ndim == 2:
            c = T.reshape(c, (1,) + c.shape)
        if self.fourier_channels:
            tail = c.data[..., -self.fourier_channels:]
            c = T.concat([c, as_tensor(fourier_features(tail, self.n_freqs).astype(c.dtype))], axis=-1)
        t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (bsz,))
        temb = time_features(t).astype(x.dtype)
        h = self.x_proj(x)
        h = h + T.reshape(self.c_proj(c), (c.shape[0], 1, n_t, self.hidden))
        h = h + T.reshape(self.t_proj(temb), (bsz, 1, 1, self.hidden))
        h = h + T.reshape(self.band_emb, (1, n_bands, 1, self.hidden))
        h = T.reshape(h, (bsz * n_bands, n_t, self.hidden))
        for block in self.blocks:
            h = block(h)
        h = self.out_norm(h)
        out = T.reshape(self.out_proj(h), (bsz, n_bands, n_t, -1))
        if self.skip_t is not None:
            gain = T.reshape(self.skip_head(h), (bsz, n_bands, n_t, -1))
            gain = gain + T.reshape(self.skip_t(temb), (bsz, 1, 1, -1)) + T.reshape(self.skip_band, (1, n_bands, 1, -1))
            out = out + gain * x
        return out


class MLPField(Module):
    """Pointwise field for low-dimensional toy data ``(..., dim)``."""

    def __init__(self, dim=2, hidden=128, n_layers=3, rng=None, dtype=np.float64):
        sizes = [dim + T_EMBED_DIM] + [hidden] * n_layers
        self.layers = [Linear(a, b, rng, dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])]
        self.out = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, xt, t, cond=None):
        x = as_tensor(np.asarray(xt, dtype=self.out.weight.dtype))
        lead = x.shape[:-1]
        t = np.asarray(t, dtype=np.float64)
        t = np.broadcast_to(t.reshape(t.shape + (1,) * (len(lead) - t.ndim)), lead)
        temb = time_features(t.reshape(-1)).reshape(lead + (T_EMBED_DIM,)).astype(x.dtype)
        h = T.concat([x, as_tensor(temb)], axis=-1)
        for layer in self.layers:
            h = T.gelu(layer(h))
        return self.out(h)
