"""Reference matching pool and cosine kNN replacement of SSL features."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensorfile
from .errors import ConfigError, InputError, SchemaError

logger = logging.getLogger(__name__)

QUERY_LAYERS = (20, 21, 22, 23, 24)
VALUE_LAYER = 6
SSL_FRAME_RATE = 50.0


@dataclass
class SslSequence:
    """Frame-wise encoder outputs for one utterance, keyed by layer id."""

    layer_features: dict
    frame_rate: float = SSL_FRAME_RATE
    source_id: str = ""

    def __post_init__(self):
        feats = {int(k): np.asarray(v, dtype=np.float64) for k, v in self.layer_features.items()}
        shapes = {v.shape for v in feats.values()}
        if not feats:
            raise SchemaError("SSL sequence has no layers")
        if any(len(s) != 2 for s in shapes) or len(shapes) != 1:
            raise SchemaError(f"all layers must be frame x dim matrices of one shape, got {sorted(shapes)}")
        self.layer_features = feats

    @property
    def n_frames(self) -> int:
        return next(iter(self.layer_features.values())).shape[0]

    @property
    def dim(self) -> int:
        return next(iter(self.layer_features.values())).shape[1]

    def layer(self, layer_id: int) -> np.ndarray:
        try:
            return self.layer_features[layer_id]
        except KeyError:
            raise SchemaError(f"{self.source_id or 'SSL sequence'} is missing layer {layer_id}") from None

    def query_view(self, layers=QUERY_LAYERS) -> np.ndarray:
        """Mean of the given layers (unnormalised)."""
        return np.mean([self.layer(i) for i in layers], axis=0)

    def save(self, path) -> None:
        tensors = {f"layer_{i}": v for i, v in sorted(self.layer_features.items())}
        meta = {
            "kind": "ssl",
            "layers": sorted(self.layer_features),
            "frame_rate": self.frame_rate,
            "source_id": self.source_id,
        }
        tensorfile.save(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "SslSequence":
        tensors, meta = tensorfile.load(path)
        if meta.get("kind") != "ssl":
            raise SchemaError(f"{path}: not an SSL feature file")
        layers = {int(name.split("_", 1)[1]): arr for name, arr in tensors.items() if name.startswith("layer_")}
        return cls(layers, float(meta.get("frame_rate", SSL_FRAME_RATE)), meta.get("source_id", str(path)))


def l2_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1)
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[..., None], norms


@dataclass
class MatchingPool:
    query_matrix: np.ndarray
    value_matrix: np.ndarray
    provenance: np.ndarray
    utterances: list = field(default_factory=list)
    excluded: int = 0

    def __post_init__(self):
        if self.query_matrix.shape[0] != self.value_matrix.shape[0]:
            raise SchemaError("query and value matrices disagree on row count")
        if self.query_matrix.shape[0] != self.provenance.shape[0]:
            raise SchemaError("provenance length does not match pool size")

    def __len__(self):
        return self.query_matrix.shape[0]

    def save(self, path) -> None:
        meta = {"kind": "pool", "utterances": list(self.utterances), "excluded": int(self.excluded)}
        tensorfile.save(path, {
            "query": self.query_matrix,
            "value": self.value_matrix,
            "provenance": self.provenance.astype(np.float64),
        }, meta)

    @classmethod
    def load(cls, path) -> "MatchingPool":
        tensors, meta = tensorfile.load(path)
        if meta.get("kind") != "pool":
            raise SchemaError(f"{path}: not a matching-pool file")
        for key in ("query", "value", "provenance"):
            if key not in tensors:
                raise SchemaError(f"{path}: missing tensor {key!r}")
        return cls(tensors["query"], tensors["value"], tensors["provenance"].astype(np.int64),
                   meta.get("utterances", []), int(meta.get("excluded", 0)))


def build_pool(references, query_layers=QUERY_LAYERS, value_layer=VALUE_LAYER, max_frames=None) -> MatchingPool:
    """Stack reference frames into a pool of (unit query, raw value) rows.

    Frames whose query vector has zero norm are dropped and counted in
    ``pool.excluded``.  ``max_frames`` caps the pool, keeping reference
    order.
    """
    queries, values, prov, names = [], [], [], []
    excluded = 0
    for u, ref in enumerate(references):
        q = ref.query_view(query_layers)
        v = ref.layer(value_layer)
        qn, norms = l2_rows(q)
        keep = norms > 0
        excluded += int(np.count_nonzero(~keep))
        idx = np.nonzero(keep)[0]
        queries.append(qn[keep])
        values.append(v[keep])
        prov.append(np.stack([np.full(idx.size, u), idx], axis=1))
        names.append(ref.source_id or f"ref{u}")
    if excluded:
        logger.warning("excluded %d zero-norm frames from the matching pool", excluded)
    if not queries:
        raise InputError("no reference sequences given")
    pool = MatchingPool(np.concatenate(queries), np.concatenate(values),
                        np.concatenate(prov).astype(np.int64), names, excluded)
    if max_frames is not None and len(pool) > max_frames:
        pool = MatchingPool(pool.query_matrix[:max_frames], pool.value_matrix[:max_frames],
                            pool.provenance[:max_frames], names, excluded)
    return pool


def _ranked(sims: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries; ties go to the lower index."""
    n = sims.shape[0]
    kth = np.partition(sims, n - k)[n - k]
    cand = np.nonzero(sims >= kth)[0]
    order = np.argsort(-sims[cand], kind="stable")
    return cand[order[:k]]


def cosine_topk(query, pool: MatchingPool, k: int) -> list:
    """Exact top-``k`` pool rows by cosine similarity, as (index, similarity)."""
    if k < 1 or k > len(pool):
        raise ConfigError(f"k={k} must be in [1, pool size {len(pool)}]")
    sims = pool.query_matrix @ np.asarray(query, dtype=np.float64)
    idx = _ranked(sims, k)
    return [(int(i), float(sims[i])) for i in idx]


def _topk_rows(sims: np.ndarray, k: int) -> np.ndarray:
    n = sims.shape[1]
    kth = np.partition(sims, n - k, axis=1)[:, n - k]
    mask = sims >= kth[:, None]
    out = np.empty((sims.shape[0], k), dtype=np.int64)
    counts = mask.sum(axis=1)
    for r in range(sims.shape[0]):
        cand = np.nonzero(mask[r])[0] if counts[r] == k else None
        if cand is None:
            out[r] = _ranked(sims[r], k)
        else:
            out[r] = cand[np.argsort(-sims[r, cand], kind="stable")]
    return out


def knn_replace(source: SslSequence, pool: MatchingPool, k: int = 4, query_layers=QUERY_LAYERS,
                aggregate: str = "mean", block: int = 1024) -> np.ndarray:
    """Replace each source frame by the mean value vector of its ``k`` nearest pool rows."""
    if len(pool) == 0:
        raise InputError("matching pool is empty")
    if k < 1 or k > len(pool):
        raise ConfigError(f"k={k} must be in [1, pool size {len(pool)}]")
    if aggregate not in ("mean", "weighted"):
        raise ConfigError(f"unknown aggregate {aggregate!r}")
    q, _ = l2_rows(source.query_view(query_layers))
    if q.shape[1] != pool.query_matrix.shape[1]:
        raise SchemaError(f"source dim {q.shape[1]} != pool dim {pool.query_matrix.shape[1]}")
    out = np.empty((q.shape[0], pool.value_matrix.shape[1]))
    for start in range(0, q.shape[0], block):
        sims = q[start:start + block] @ pool.query_matrix.T
        idx = _topk_rows(sims, k)
        vals = pool.value_matrix[idx]  # (rows, k, dim)
        if aggregate == "mean":
            out[start:start + block] = vals.mean(axis=1) if k > 1 else vals[:, 0]
        else:
            w = np.maximum(np.take_along_axis(sims, idx, axis=1), 0.0)
            tot = w.sum(axis=1, keepdims=True)
            w = np.where(tot > 0, w / np.where(tot > 0, tot, 1.0), 1.0 / k)
            out[start:start + block] = np.einsum("rk,rkd->rd", w, vals)
    return out
