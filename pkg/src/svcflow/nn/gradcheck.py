"""Central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng
from .tensor import no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    per_param: dict = field(default_factory=dict)
    n_checked: int = 0
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def summary(self) -> str:
        worst = max(self.per_param, key=self.per_param.get) if self.per_param else "-"
        return (f"grad_check {'PASS' if self.passed else 'FAIL'}: max rel {self.max_rel_error:.2e} "
                f"(worst {worst}), max abs {self.max_abs_error:.2e}, {self.n_checked} coords")


def grad_check(f, params, h=1e-5, tolerance=1e-4, max_coords=32, seed=0, floor=1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` with central differences.

    ``params`` is a dict (or iterable of pairs) of leaf tensors that ``f``
    reads.  Tensors larger than ``max_coords`` are checked on a random
    subset.  Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.  The floor keeps coordinates whose
    true gradient is near zero from being judged on finite-difference
    rounding noise (about ``eps * |f| / h``, ~1e-11 for O(1) losses).
    """
    params = dict(params)
    for p in params.values():
        p.grad = None
    out = f()
    out.backward()
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in params.items()}
    rng = make_rng(seed, "gradcheck")
    per_param, max_rel, max_abs, total = {}, 0.0, 0.0, 0
    with no_grad():
        for n, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if flat.size > max_coords:
                idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            worst = 0.0
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                ana = float(analytic[n].reshape(-1)[i])
                err = abs(ana - num)
                rel = err / max(abs(ana), abs(num), floor)
                worst = max(worst, rel)
                max_abs = max(max_abs, err)
            per_param[n] = worst
            max_rel = max(max_rel, worst)
            total += idx.size
    return GradCheckReport(max_rel, max_abs, per_param, total, tolerance)
