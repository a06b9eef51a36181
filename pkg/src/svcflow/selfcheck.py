"""Fast invariant and oracle checks for a fresh build."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensorfile
from .audio import AudioBuffer
from .cfm.bands import BandSpec, band_merge, band_split
from .cfm.sampler import euler_integrate, oracle_field
from .features.loudness import a_weighting_db
from .features.pitch import extract_pitch
from .features.stft import istft, stft
from .fusion import DualAttention
from .matching import MatchingPool, cosine_topk
from .nn import ops as T
from .nn.gradcheck import grad_check
from .nn.rng import make_rng
from .nn.tensor import Parameter


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail, "seconds": round(self.seconds, 3)}


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def dual_attention_case(alpha=0.7):
    """Single-head d=2 instance with hand-set weights.

    Returns ``(module output, direct evaluation)`` for a 2-frame content
    stream, a 2-frame melody stream and two speaker vectors.
    """
    att = DualAttention(d_model=2, d_spk=2, d_melody=2, n_heads=1, rng=make_rng(0, "oracle"),
                        melody_positions=False)
    wq = np.array([[1.0, 0.5], [-0.3, 2.0]])
    wpk = np.array([[0.2, 1.0], [1.5, -0.4]])
    wpv = np.array([[1.0, 0.0], [0.3, 0.7]])
    wsk = np.array([[0.9, -0.1], [0.4, 1.1]])
    wsv = np.array([[-0.6, 0.8], [0.5, 0.25]])
    for lin, w in ((att.wq, wq), (att.w_pk, wpk), (att.w_pv, wpv), (att.w_sk, wsk), (att.w_sv, wsv)):
        lin.weight.data = w.copy()
        lin.bias.data = np.zeros(2)
    att.alpha.data = np.array([alpha])
    c = np.array([[1.0, 2.0], [-0.5, 0.3]])
    p = np.array([[0.4, 0.9], [0.1, 0.2]])
    s = np.array([[1.0, -1.0], [0.5, 2.0]])
    out = att(c, s, p).data[0]
    q = _unit_rows(c @ wq)
    melody = _softmax_rows(q @ _unit_rows(p @ wpk).T / np.sqrt(2.0)) @ (p @ wpv)
    speaker = _softmax_rows(q @ _unit_rows(s @ wsk).T / np.sqrt(2.0)) @ (s @ wsv)
    return out, melody + np.tanh(alpha) * speaker


def _check_dual_attention():
    out, ref = dual_attention_case()
    err = float(np.abs(out - ref).max())
    zero_out, zero_ref = dual_attention_case(alpha=0.0)
    return err < 1e-10 and np.abs(zero_out - zero_ref).max() < 1e-10, f"max abs error {err:.2e}"


def _check_grad_ops():
    rng = make_rng(0, "selfcheck-grad")
    a = Parameter(rng.normal(size=(3, 4)))
    b = Parameter(rng.normal(size=(4, 2)))
    w = Parameter(rng.normal(size=(3, 4, 3)))
    x = Parameter(rng.normal(size=(1, 6, 4)))

    def f():
        h = T.matmul(T.tanh(a), b)
        h = T.softmax(h) * T.gelu(h)
        y = T.layer_norm(T.conv1d(x, w))
        return T.mean(h * h) + T.mean(T.l2_normalize(y) * y)

    report = grad_check(f, {"a": a, "b": b, "w": w, "x": x})
    return report.passed, report.summary()


def _check_knn():
    rng = make_rng(0, "selfcheck-knn")
    for trial in range(20):
        n, d = int(rng.integers(1, 200)), int(rng.integers(3, 32))
        q = np.round(rng.normal(size=(n, d)), 1)
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        pool = MatchingPool(q, q.copy(), np.zeros(n, dtype=np.int64), ["x"], 0)
        query = q[int(rng.integers(n))]
        k = int(rng.integers(1, n + 1))
        sims = q @ query
        expected = sorted(range(n), key=lambda i: (-sims[i], i))[:k]
        got = [i for i, _ in cosine_topk(query, pool, k)]
        if got != expected:
            return False, f"trial {trial}: {got[:5]} != {expected[:5]}"
    return True, "20 pools match brute force"


def _check_stft():
    noise = make_rng(0, "selfcheck-stft").normal(scale=0.1, size=24000)
    audio = AudioBuffer(noise)
    err = float(np.abs(istft(stft(audio)).samples - noise).max())
    return err < 1e-6, f"max abs error {err:.2e}"


def _check_bands():
    spec = BandSpec()
    x = make_rng(0, "selfcheck-bands").normal(size=(5, 2 * spec.n_slots))
    err = float(np.abs(band_merge(band_split(x, spec), spec) - x).max())
    return err == 0.0, f"max abs error {err:.2e}"


def _check_tensorfile():
    t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": make_rng(0, "tf").normal(size=4)}
    back, meta = tensorfile.loads(tensorfile.dumps(t, {"k": 1}))
    ok = all(back[k].dtype == t[k].dtype and back[k].tobytes() == t[k].tobytes() for k in t) and meta == {"k": 1}
    return ok, "bit-exact" if ok else "payload mismatch"


def _check_euler():
    rng = make_rng(0, "selfcheck-euler")
    x1, z0 = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    errs = [float(np.abs(euler_integrate(oracle_field(x1, z0), z0, n) - x1).max()) for n in (1, 10)]
    return max(errs) < 1e-6, f"max abs error {max(errs):.2e}"


def _check_pitch():
    f0 = extract_pitch(AudioBuffer.sine(440.0, 1.0))
    voiced = f0[f0 > 0]
    frac = float(np.mean(np.abs(voiced - 440.0) <= 2.0)) if voiced.size else 0.0
    return frac >= 0.95, f"{frac:.1%} of voiced frames within 2 Hz"


def _check_a_weighting():
    g = float(a_weighting_db(np.array([1000.0]))[0])
    return abs(g) < 1e-3, f"gain at 1 kHz {g:+.2e} dB"


CHECKS = (
    ("dual-attention-oracle", _check_dual_attention),
    ("gradient-ops", _check_grad_ops),
    ("knn-brute-force", _check_knn),
    ("stft-roundtrip", _check_stft),
    ("band-roundtrip", _check_bands),
    ("tensorfile-roundtrip", _check_tensorfile),
    ("euler-oracle", _check_euler),
    ("pitch-440", _check_pitch),
    ("a-weighting-1k", _check_a_weighting),
)


def run_selfcheck() -> list:
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
