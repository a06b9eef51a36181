"""Parameter store with AdamW moment buffers."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteLossError, ShapeError


class ParamStore:
    """Named parameters plus first/second moment buffers and a step counter."""

    def __init__(self, params):
        self.params = dict(params)
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.step = 0

    @classmethod
    def from_module(cls, module):
        return cls(module.named_parameters())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict:
        out = {}
        for n in self.params:
            out[f"opt.m/{n}"] = self.m[n]
            out[f"opt.v/{n}"] = self.v[n]
        return out

    def load_state(self, tensors: dict, step: int) -> None:
        for n in self.params:
            if f"opt.m/{n}" in tensors:
                self.m[n] = np.array(tensors[f"opt.m/{n}"], dtype=self.params[n].dtype)
                self.v[n] = np.array(tensors[f"opt.v/{n}"], dtype=self.params[n].dtype)
        self.step = int(step)


def adamw_step(store: ParamStore, grads=None, lr=2e-3, betas=(0.9, 0.999), weight_decay=0.01,
               eps=1e-8, on_nonfinite="error") -> ParamStore:
    """One AdamW update in place (decoupled decay, bias-corrected moments).

    ``grads`` maps names to arrays; by default each parameter's ``.grad`` is
    used (missing gradients count as zero).  Parameters created with
    ``decay=False`` skip weight decay.  A non-finite gradient either raises
    (``on_nonfinite="error"``) or skips the whole step (``"skip"``).
    """
    if grads is None:
        grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in store.params.items()}
    for n, p in store.params.items():
        g = grads.get(n)
        if g is not None and np.shape(g) != p.shape:
            raise ShapeError(f"gradient for {n} has shape {np.shape(g)}, parameter has {p.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        if on_nonfinite == "skip":
            return store
        raise NonFiniteLossError("non-finite gradient in optimizer step")
    beta1, beta2 = betas
    store.step += 1
    c1 = 1.0 - beta1 ** store.step
    c2 = 1.0 - beta2 ** store.step
    for n, p in store.params.items():
        g = grads.get(n)
        if g is None:
            g = np.zeros_like(p.data)
        if getattr(p, "decay", True) and weight_decay:
            p.data = p.data * (1.0 - lr * weight_decay)
        store.m[n] = beta1 * store.m[n] + (1.0 - beta1) * g
        store.v[n] = beta2 * store.v[n] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (store.m[n] / c1) / (np.sqrt(store.v[n] / c2) + eps)
    return store
