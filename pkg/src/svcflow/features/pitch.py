"""Frame-wise F0 estimation: three independent estimators and median fusion.

The three estimators rest on different principles so their errors are
weakly correlated:

``normalized-cmnd``
    YIN cumulative-mean-normalised difference with absolute threshold.
``autocorr-yin``
    Normalised cross-correlation (NCCF) peak picking.
``cepstral``
    Real-cepstrum peak, refined on the strongest nearby harmonic.

All return 0 for frames they consider unvoiced.
"""

from __future__ import annotations

import numpy as np

from ..audio import AudioBuffer
from ..errors import InputError
from .stft import frame_signal

F0_MIN = 50.0
F0_MAX = 1100.0
PITCH_FRAME = 2048
METHODS = ("normalized-cmnd", "autocorr-yin", "cepstral")

_SILENCE = 1e-10  # mean-square energy below which a frame is unvoiced


def _lag_range(sample_rate, fmin=F0_MIN, fmax=F0_MAX):
    return int(np.floor(sample_rate / fmax)), int(np.ceil(sample_rate / fmin))


def _parabolic(y_left, y_mid, y_right):
    """Vertex offset of the parabola through three equally spaced points."""
    denom = y_left - 2 * y_mid + y_right
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(np.abs(denom) > 1e-12, 0.5 * (y_left - y_right) / denom, 0.0)
    return np.clip(off, -0.5, 0.5)


def _correlation_terms(frames, window, tau_max):
    """Lagged cross-correlation and energies over an integration window.

    Returns ``(r, e0, et)`` with ``r[:, tau] = sum_j x[j] x[j + tau]`` for
    ``j < window`` and the matching energies of both segments.
    """
    n_fft = 1 << int(np.ceil(np.log2(frames.shape[1] + window)))
    head = np.zeros_like(frames)
    head[:, :window] = frames[:, :window]
    spec = np.conj(np.fft.rfft(head, n_fft)) * np.fft.rfft(frames, n_fft)
    r = np.fft.irfft(spec, n_fft)[:, :tau_max + 2]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    taus = np.arange(tau_max + 2)
    et = sq[:, taus + window] - sq[:, taus]
    e0 = et[:, :1]
    return r, e0, et


def _yin(frames, sample_rate, threshold=0.15):
    tau_min, tau_max = _lag_range(sample_rate)
    window = frames.shape[1] - tau_max - 2
    r, e0, et = _correlation_terms(frames, window, tau_max)
    diff = np.maximum(e0 + et - 2 * r, 0.0)
    cum = np.cumsum(diff[:, 1:], axis=1)
    taus = np.arange(1, diff.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd = np.ones_like(diff)
        cmnd[:, 1:] = np.where(cum > 0, diff[:, 1:] * taus / cum, 1.0)
    f0 = np.zeros(frames.shape[0])
    for i, row in enumerate(cmnd):
        if e0[i, 0] / window < _SILENCE:
            continue
        below = np.nonzero(row[tau_min:tau_max + 1] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        lag = tau + _parabolic(row[tau - 1], row[tau], row[tau + 1])
        f0[i] = sample_rate / lag
    return f0


def _nccf(frames, sample_rate, voicing=0.6, tolerance=0.9):
    tau_min, tau_max = _lag_range(sample_rate)
    window = frames.shape[1] - tau_max - 2
    r, e0, et = _correlation_terms(frames, window, tau_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        nccf = np.where(e0 * et > 0, r / np.sqrt(e0 * et), 0.0)
    f0 = np.zeros(frames.shape[0])
    for i, row in enumerate(nccf):
        if e0[i, 0] / window < _SILENCE:
            continue
        seg = row[tau_min:tau_max + 1]
        peaks = np.nonzero((seg[1:-1] > seg[:-2]) & (seg[1:-1] >= seg[2:]))[0] + 1
        if peaks.size == 0:
            continue
        best = seg[peaks].max()
        if best < voicing:
            continue
        tau = tau_min + peaks[np.nonzero(seg[peaks] >= tolerance * best)[0][0]]
        lag = tau + _parabolic(row[tau - 1], row[tau], row[tau + 1])
        f0[i] = sample_rate / lag
    return f0


def _cepstral(frames, sample_rate, voicing=0.02, max_flatness=0.3, tolerance=0.8, max_harmonic=4):
    tau_min, tau_max = _lag_range(sample_rate)
    n = frames.shape[1]
    n_fft = 4 * n
    win = np.hanning(n)
    mag = np.abs(np.fft.rfft(frames * win, n_fft, axis=1))
    logmag = np.log(mag + 1e-6 * mag.max(axis=1, keepdims=True) + 1e-12)
    # spectral flatness separates tonal frames from noise; the cepstral
    # peak height alone does not
    power = mag ** 2 + 1e-20
    flatness = np.exp(np.mean(np.log(power), axis=1)) / np.mean(power, axis=1)
    ceps = np.fft.irfft(logmag, n_fft, axis=1)
    q_min, q_max = tau_min, tau_max
    bin_hz = sample_rate / n_fft
    f0 = np.zeros(frames.shape[0])
    energy = np.mean(frames ** 2, axis=1)
    for i in range(frames.shape[0]):
        if energy[i] < _SILENCE or flatness[i] > max_flatness:
            continue
        seg = ceps[i, q_min:q_max + 1]
        peaks = np.nonzero((seg[1:-1] > seg[:-2]) & (seg[1:-1] >= seg[2:]))[0] + 1
        if peaks.size == 0:
            continue
        best = seg[peaks].max()
        if best < voicing:
            continue
        q = q_min + peaks[np.nonzero(seg[peaks] >= tolerance * best)[0][0]]
        coarse = sample_rate / (q + _parabolic(ceps[i, q - 1], ceps[i, q], ceps[i, q + 1]))
        # refine on the strongest of the first few harmonics near h * coarse
        row = logmag[i]
        best_h, best_k, best_val = 0, 0, -np.inf
        for h in range(1, max_harmonic + 1):
            lo = int(np.floor(h * coarse * 0.97 / bin_hz))
            hi = int(np.ceil(h * coarse * 1.03 / bin_hz))
            if lo < 1 or hi >= row.shape[0] - 1:
                break
            k = lo + int(np.argmax(row[lo:hi + 1]))
            if row[k] > best_val:
                best_h, best_k, best_val = h, k, row[k]
        if best_h == 0:
            continue
        k = best_k
        if 0 < k < row.shape[0] - 1:
            f0[i] = (k + _parabolic(row[k - 1], row[k], row[k + 1])) * bin_hz / best_h
    return f0


_ESTIMATORS = {
    "normalized-cmnd": _yin,
    "autocorr-yin": _nccf,
    "cepstral": _cepstral,
}


def estimate_pitch_single(audio: AudioBuffer, hop: int = 240, method_id: str = "normalized-cmnd") -> np.ndarray:
    """Per-frame F0 in Hz from one estimator; 0 marks unvoiced frames."""
    if len(audio) == 0:
        raise InputError("audio is empty")
    if hop <= 0:
        raise InputError(f"hop must be positive, got {hop}")
    try:
        estimator = _ESTIMATORS[method_id]
    except KeyError:
        raise InputError(f"unknown pitch method {method_id!r}; choose from {METHODS}") from None
    frames = frame_signal(audio.samples, PITCH_FRAME, hop, pad_mode="constant")
    f0 = estimator(frames, audio.sample_rate)
    f0[(f0 < F0_MIN) | (f0 > F0_MAX) | ~np.isfinite(f0)] = 0.0
    return f0


def fuse_candidates(candidates) -> np.ndarray:
    """Median fusion of per-frame estimator outputs, shape ``(n_estimators, n_frames)``.

    A frame is unvoiced when a majority of estimators report 0; otherwise
    the result is the median of the voiced candidates (the mean when two
    remain).
    """
    cand = np.asarray(candidates, dtype=np.float64)
    if cand.ndim != 2:
        raise InputError(f"candidates must be 2-D, got shape {cand.shape}")
    voiced = cand > 0
    out = np.zeros(cand.shape[1])
    majority = voiced.sum(axis=0) * 2 > cand.shape[0]
    for j in np.nonzero(majority)[0]:
        out[j] = np.median(cand[voiced[:, j], j])
    return out


def extract_pitch(audio: AudioBuffer, hop: int = 240) -> np.ndarray:
    """Median-of-three F0 contour."""
    return fuse_candidates([estimate_pitch_single(audio, hop, m) for m in METHODS])
