"""Objective evaluation: F0 correlation, loudness RMSE, MCD and singer similarity.

All sequence metrics compare DTW-aligned frame series.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio import AudioBuffer, read_wav
from .errors import InputError, SchemaError, ShapeError, UndefinedCorrelationError
from .features.loudness import extract_loudness
from .features.melody import minmax_normalize
from .features.pitch import extract_pitch
from .features.stft import stft

logger = logging.getLogger(__name__)

MCD_CONST = 10.0 / math.log(10.0)
DTW_COSTS = ("euclidean", "abs")


@dataclass(frozen=True)
class AlignmentPath:
    """Monotone DTW path, ``pairs[k] = (i, j)``, plus the accumulated cost."""

    pairs: np.ndarray
    cost: float

    def __len__(self):
        return len(self.pairs)

    @property
    def i(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def j(self) -> np.ndarray:
        return self.pairs[:, 1]


def _as_frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def frame_costs(a, b, cost="euclidean") -> np.ndarray:
    a, b = _as_frames(a), _as_frames(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"frame widths differ: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    if cost == "euclidean":
        return np.sqrt((diff ** 2).sum(axis=-1))
    if cost == "abs":
        return np.abs(diff).sum(axis=-1)
    raise InputError(f"cost must be one of {DTW_COSTS}, got {cost!r}")


def dtw(a, b, cost="euclidean") -> AlignmentPath:
    """Exact DTW with steps (1,1), (1,0), (0,1) and no band constraint.

    Ties in the backtrack prefer the diagonal, then (1,0), then (0,1).
    """
    if len(a) == 0 or len(b) == 0:
        raise InputError("dtw needs two non-empty sequences")
    c = frame_costs(a, b, cost)
    n, m = c.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        prev, ci = acc[i - 1], c[i - 1]
        # vertical and diagonal predecessors come from the finished row above
        up = (np.minimum(prev[:-1], prev[1:]) + ci).tolist()
        cl = ci.tolist()
        row = [np.inf] * (m + 1)
        for j in range(m):
            left = row[j] + cl[j]
            row[j + 1] = up[j] if up[j] <= left else left
        acc[i] = row
    pairs = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        options = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        best = min(o[0] for o in options)
        for val, ni, nj in options:
            if val == best:
                i, j = ni, nj
                break
        pairs.append((i - 1, j - 1))
    return AlignmentPath(np.asarray(pairs[::-1], dtype=np.int64), float(acc[n, m]))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"pearson needs equal-length vectors, got {x.shape} and {y.shape}")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((dx * dx).sum()), np.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant sequence")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def f0corr(source_f0, converted_f0, align=True) -> float:
    """Pearson correlation of min-max normalised voiced F0 contours.

    Unvoiced frames (F0 = 0) are dropped first.  With ``align`` the two
    contours are DTW-aligned (absolute cost); otherwise they must have the
    same number of voiced frames and are compared frame by frame.
    """
    src = np.asarray(source_f0, dtype=np.float64).reshape(-1)
    cvt = np.asarray(converted_f0, dtype=np.float64).reshape(-1)
    src, cvt = src[src > 0], cvt[cvt > 0]
    if src.size < 2 or cvt.size < 2:
        raise InputError(f"f0corr needs >= 2 voiced frames each, got {src.size} and {cvt.size}")
    if np.ptp(src) == 0 or np.ptp(cvt) == 0:
        raise UndefinedCorrelationError("f0 contour is constant")
    a, b = minmax_normalize(src), minmax_normalize(cvt)
    if align:
        path = dtw(a, b, "abs")
        a, b = a[path.i], b[path.j]
    return pearson(a, b)


def series_rmse(a, b, align=True) -> float:
    """RMSE between two scalar series, over the DTW path when ``align``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if align:
        path = dtw(a, b, "abs")
        a, b = a[path.i], b[path.j]
    elif a.shape != b.shape:
        raise ShapeError(f"unaligned series differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise InputError("empty series")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def loudness_rmse(source: AudioBuffer, converted: AudioBuffer, hop=240, fft_size=1024) -> float:
    """dB RMSE between DTW-aligned A-weighted loudness contours."""
    return series_rmse(extract_loudness(source, hop, fft_size), extract_loudness(converted, hop, fft_size))


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int, fmin=0.0, fmax=None) -> np.ndarray:
    """HTK-scale triangular filters, shape ``(n_mels, fft_size // 2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    to_mel = lambda f: 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)
    to_hz = lambda m: 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)
    edges = to_hz(np.linspace(to_mel(fmin), to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs - lo) / (mid - lo)
    fall = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rise, fall))


def mfcc(audio: AudioBuffer, n_ceps=13, fft_size=1024, hop=240, n_mels=40) -> np.ndarray:
    """Cepstra ``c0..c{n_ceps}`` per frame, shape ``(frames, n_ceps + 1)``."""
    if len(audio) < fft_size:
        raise InputError(f"audio too short for MCD: {len(audio)} samples < fft size {fft_size}")
    spec = stft(audio, fft_size, hop)
    power = np.abs(spec.frames) ** 2
    mel = power @ mel_filterbank(n_mels, fft_size, audio.sample_rate).T
    return dct(np.log(mel + 1e-10), type=2, norm="ortho", axis=-1)[:, : n_ceps + 1]


def mcd_from_cepstra(target_ceps, converted_ceps, align=True) -> float:
    """Mean ``(10 / ln 10) * sqrt(2) * ||dc||`` over aligned frames.

    Inputs are the coefficients to compare (``c0`` already removed).
    """
    a, b = _as_frames(target_ceps), _as_frames(converted_ceps)
    if align:
        path = dtw(a, b, "euclidean")
        a, b = a[path.i], b[path.j]
    elif a.shape != b.shape:
        raise ShapeError(f"unaligned cepstra differ in shape: {a.shape} vs {b.shape}")
    dist = np.sqrt(((a - b) ** 2).sum(axis=1))
    return float(MCD_CONST * np.sqrt(2.0) * dist.mean())


def mcd(target: AudioBuffer, converted: AudioBuffer, n_ceps=13, fft_size=1024, hop=240, n_mels=40) -> float:
    ct = mfcc(target, n_ceps, fft_size, hop, n_mels)[:, 1:]
    cc = mfcc(converted, n_ceps, fft_size, hop, n_mels)[:, 1:]
    return mcd_from_cepstra(ct, cc)


def ssim(converted_emb, target_emb) -> float:
    """Cosine similarity of two speaker embeddings."""
    a = np.asarray(converted_emb, dtype=np.float64).reshape(-1)
    b = np.asarray(target_emb, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"embedding sizes differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InputError("ssim undefined for a zero embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# ---- batch mode ----

REPORT_FIELDS = ("id", "f0corr", "loudness_rmse", "mcd", "ssim", "voiced_source", "voiced_converted")


def load_embedding(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".json":
        return np.asarray(json.loads(path.read_text()), dtype=np.float64)
    raise SchemaError(f"unsupported embedding file {path} (expected .npy or .json)")


def _f0corr_or_none(f0_s, f0_c, pair_id):
    # an unvoiced or flat output leaves the correlation undefined; the row
    # still reports the voiced-frame counts
    try:
        return f0corr(f0_s, f0_c)
    except InputError as exc:
        logger.warning("pair %s: f0corr undefined (%s)", pair_id, exc)
        return None


def evaluate_pair(entry: dict, root: Path, hop=240) -> dict:
    if "id" not in entry or "source" not in entry or "converted" not in entry:
        raise SchemaError("manifest pair needs 'id', 'source' and 'converted'")
    src = read_wav(root / entry["source"])
    cvt = read_wav(root / entry["converted"])
    f0_s, f0_c = extract_pitch(src, hop), extract_pitch(cvt, hop)
    row = {
        "id": str(entry["id"]),
        "f0corr": _f0corr_or_none(f0_s, f0_c, entry["id"]),
        "loudness_rmse": loudness_rmse(src, cvt, hop),
        "mcd": None,
        "ssim": None,
        "voiced_source": int((f0_s > 0).sum()),
        "voiced_converted": int((f0_c > 0).sum()),
    }
    if entry.get("target"):
        row["mcd"] = mcd(read_wav(root / entry["target"]), cvt, hop=hop)
    if entry.get("converted_emb") and entry.get("target_emb"):
        row["ssim"] = ssim(load_embedding(root / entry["converted_emb"]), load_embedding(root / entry["target_emb"]))
    return row


def evaluate_manifest(manifest_path, report_dir) -> dict:
    """Score every pair in a manifest; writes ``report.csv`` and ``report.json``.

    Manifest: ``{"pairs": [{"id", "source", "converted", "target"?,
    "converted_emb"?, "target_emb"?}]}`` with paths relative to the manifest.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    pairs = manifest.get("pairs") if isinstance(manifest, dict) else None
    if not isinstance(pairs, list) or not pairs:
        raise SchemaError("manifest must contain a non-empty 'pairs' list")
    rows = [evaluate_pair(p, manifest_path.parent) for p in pairs]
    aggregate = {}
    for key in ("f0corr", "loudness_rmse", "mcd", "ssim"):
        vals = [r[key] for r in rows if r[key] is not None]
        aggregate[key] = float(np.mean(vals)) if vals else None
    report = {"pairs": rows, "aggregate": aggregate, "n_pairs": len(rows),
              "f0corr_voicing": "unvoiced frames dropped before normalisation"}
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                             for k in REPORT_FIELDS})
    return report
