"""Generic optimisation loop with loss logging and checkpoint hooks."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..errors import NonFiniteLossError
from ..nn.optim import ParamStore, adamw_step
from ..nn.rng import make_rng

logger = logging.getLogger(__name__)


def train_loop(loss_fn, store: ParamStore, steps: int, lr=2e-3, betas=(0.9, 0.999), weight_decay=0.01,
               seed=0, checkpoint_fn=None, checkpoint_interval=0, diag_dir=None, log_every=0) -> list:
    """Run ``steps`` AdamW updates on ``loss_fn(step, rng) -> (total, parts)``.

    Returns one record per step: ``{"step", "total", **parts}`` with float
    values.  ``lr`` may be a callable ``step -> lr``.  A non-finite total
    halts training; when ``diag_dir`` is set a JSON dump of the recent loss
    history is written there first.
    """
    rng = make_rng(seed, "train")
    history = []
    for step in range(1, steps + 1):
        store.zero_grad()
        total, parts = loss_fn(step, rng)
        value = float(total.data)
        record = {"step": step, "total": value, **{k: float(v) for k, v in parts.items()}}
        if not np.isfinite(value):
            if diag_dir is not None:
                Path(diag_dir).mkdir(parents=True, exist_ok=True)
                dump = {"failed_step": record, "recent": history[-20:],
                        "param_norms": {n: float(np.linalg.norm(p.data)) for n, p in store.params.items()}}
                (Path(diag_dir) / "diverged.json").write_text(json.dumps(dump, indent=1, default=str))
            raise NonFiniteLossError(f"loss became non-finite at step {step}")
        total.backward()
        adamw_step(store, lr=lr(step) if callable(lr) else lr, betas=betas, weight_decay=weight_decay)
        history.append(record)
        if log_every and step % log_every == 0:
            logger.info("step %d loss %.5f", step, value)
        if checkpoint_fn is not None and checkpoint_interval and step % checkpoint_interval == 0:
            checkpoint_fn(step)
    return history


def cosine_schedule(base_lr, steps, final_fraction=0.1):
    """Cosine decay from ``base_lr`` at step 1 to ``final_fraction * base_lr`` at ``steps``."""
    def lr(step):
        frac = (step - 1) / max(steps - 1, 1)
        return base_lr * (final_fraction + (1 - final_fraction) * 0.5 * (1 + np.cos(np.pi * frac)))
    return lr


def moving_average(values, window=50) -> np.ndarray:
    """Trailing mean; entry ``i`` averages ``values[max(0, i - window + 1): i + 1]``."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(v.size)
    lo = np.maximum(0, idx - window + 1)
    return (c[idx + 1] - c[lo]) / (idx + 1 - lo)
