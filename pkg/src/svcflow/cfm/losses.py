"""Flow-matching objective and auxiliary spectral losses."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteLossError, ShapeError
from ..nn import ops as T
from ..nn.tensor import Tensor, as_tensor
from .bands import BandSpec, band_merge, overlap_pairs

SIGMA_FLOOR = 1e-6
SIGMA_MODES = ("frame", "utterance", "none")
LAMBDA_AUX = 0.01


def interpolate(x0, x1, t):
    """Straight-line path ``t * x1 + (1 - t) * x0``; ``t`` scalar or per leading item."""
    x0 = np.asarray(x0)
    x1 = np.asarray(x1)
    if x0.shape != x1.shape:
        raise ShapeError(f"x0 {x0.shape} and x1 {x1.shape} differ")
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    t = t.reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    return t * x1 + (1.0 - t) * x0


def sigma_of(x0, x1, mode="frame", floor=SIGMA_FLOOR) -> np.ndarray:
    """Scale of ``x1 - x0`` along the feature axis, broadcastable against it.

    ``frame``: population std over the last axis, one value per frame.
    ``utterance``: std over the last two axes (frames and features).
    ``none``: ones.
    """
    d = np.asarray(x1, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    if mode == "frame":
        s = d.std(axis=-1, keepdims=True)
    elif mode == "utterance":
        s = d.std(axis=(-2, -1), keepdims=True)
    elif mode == "none":
        return np.ones(d.shape[:-1] + (1,))
    else:
        raise ValueError(f"sigma mode must be one of {SIGMA_MODES}")
    return np.maximum(s, floor)


def rf_objective(v_hat, x0, x1, sigma) -> Tensor:
    """Mean of ``((x1 - x0) / sigma - v_hat / sigma) ** 2`` over all elements.

    Raises :class:`NonFiniteLossError` naming the first bad batch item.
    """
    v_hat = as_tensor(v_hat)
    inv = (1.0 / np.asarray(sigma)).astype(v_hat.dtype)
    target = ((np.asarray(x1) - np.asarray(x0)) * inv).astype(v_hat.dtype)
    resid = target - v_hat * inv
    sq = resid * resid
    per_item = sq.data.reshape(sq.shape[0], -1).mean(axis=1) if sq.ndim > 1 else sq.data
    bad = np.nonzero(~np.isfinite(per_item))[0]
    if bad.size:
        raise NonFiniteLossError(f"non-finite flow loss at batch index {int(bad[0])}", int(bad[0]))
    return T.mean(sq)


def rf_loss(field, x0, x1, t, cond=None, sigma_mode="frame") -> Tensor:
    """Monte Carlo flow-matching loss of ``field(x_t, t, cond)`` at the given ``t``."""
    xt = interpolate(x0, x1, t)
    v_hat = field(xt, t, cond)
    return rf_objective(v_hat, x0, x1, sigma_of(x0, x1, sigma_mode))


def endpoint_estimate(xt, v_hat, t) -> Tensor:
    """One-step estimate ``x_t + (1 - t) v_hat`` of the data endpoint."""
    v_hat = as_tensor(v_hat)
    t = np.asarray(t, dtype=np.float64)
    remain = (1.0 - t).reshape(t.shape + (1,) * (v_hat.ndim - t.ndim)).astype(v_hat.dtype)
    return as_tensor(np.asarray(xt, dtype=v_hat.dtype)) + v_hat * remain


def overlap_loss(bands, spec: BandSpec) -> Tensor:
    """Mean squared disagreement of adjacent bands on their shared slots."""
    bands = as_tensor(bands)
    if spec.n_bands < 2 or spec.band_overlap == 0:
        return Tensor(np.zeros((), dtype=bands.dtype))
    left, right = overlap_pairs(spec)
    a = T.getitem(bands, (Ellipsis, slice(0, spec.n_bands - 1), slice(None), left))
    b = T.getitem(bands, (Ellipsis, slice(1, spec.n_bands), slice(None), right))
    d = a - b
    return T.mean(d * d)


def _bin_magnitude(packed, eps):
    """Magnitudes of the ``n_slots + 1`` bins from packed ``[re | im]`` frames."""
    s = packed.shape[-1] // 2
    re = T.getitem(packed, (Ellipsis, slice(0, s)))
    im = T.getitem(packed, (Ellipsis, slice(s, 2 * s)))
    dc_nyq = T.getitem(im, (Ellipsis, slice(0, 1)))
    im_rest = T.getitem(im, (Ellipsis, slice(1, s)))
    zeros = np.zeros(dc_nyq.shape, dtype=packed.dtype)
    re_bins = T.concat([re, dc_nyq], axis=-1)
    im_bins = T.concat([zeros, im_rest, zeros], axis=-1)
    return T.sqrt(re_bins * re_bins + im_bins * im_bins + eps)


def stft_loss(x1_hat_bands, x1_bands, spec: BandSpec, eps=1e-7) -> Tensor:
    """Spectral convergence plus mean absolute log-magnitude difference.

    Both inputs are band tensors ``(B, n_bands, T, channels)``; they are
    merged back to full spectra before comparing magnitudes.
    """
    pred = band_merge(as_tensor(x1_hat_bands), spec)
    ref = band_merge(np.asarray(x1_bands, dtype=pred.dtype), spec)
    mag_hat = _bin_magnitude(pred, eps)
    mag = _bin_magnitude(as_tensor(ref), eps).data
    axes = tuple(range(1, mag.ndim))
    ref_norm = np.sqrt(np.sum(mag ** 2, axis=axes)) + eps
    conv = T.norm(mag_hat - mag, axis=axes) / ref_norm
    log_term = T.mean(T.tabs(T.log(mag_hat) - np.log(mag)))
    return T.mean(conv) + log_term


def total_loss(l_rf, l_overlap, l_stft, lam=LAMBDA_AUX):
    """``l_rf + lam * (l_overlap + l_stft)``."""
    return l_rf + (l_overlap + l_stft) * lam
