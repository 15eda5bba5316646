"""Losses and evaluation metrics: SSIM, TSM, cross-entropies, AP / C-MAP, P."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


@lru_cache(maxsize=32)
def _band(n: int, g_bytes: bytes) -> np.ndarray:
    """``(n, n-k+1)`` matrix whose columns are shifted copies of the window."""
    g = np.frombuffer(g_bytes)
    k = g.size
    m = np.zeros((n, n - k + 1))
    for j in range(n - k + 1):
        m[j : j + k, j] = g
    m.setflags(write=False)
    return m


def filter_valid(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation of ``(..., H, W, C)`` maps with ``g``."""
    h, w = a.shape[-3], a.shape[-2]
    key = np.ascontiguousarray(g, dtype=float).tobytes()
    bh, bw = _band(h, key), _band(w, key)
    t = np.moveaxis(a, -1, -3)  # (..., C, H, W)
    return np.moveaxis(bh.T @ t @ bw, -3, -1)


def filter_valid_T(m: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`filter_valid` (zero-padded 'full' convolution)."""
    k = g.size
    h, w = m.shape[-3] + k - 1, m.shape[-2] + k - 1
    key = np.ascontiguousarray(g, dtype=float).tobytes()
    bh, bw = _band(h, key), _band(w, key)
    t = np.moveaxis(m, -1, -3)
    return np.moveaxis(bh @ t @ bw.T, -3, -1)


def _check_pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim < 3 or min(x.shape[-3], x.shape[-2]) < SSIM_WIN:
        raise ValueError(f"images must be at least {SSIM_WIN}x{SSIM_WIN} (H, W, C), got {x.shape}")
    return x, y


def ssim_terms(x, y):
    """Local statistics used by SSIM and its adjoint.

    Returns the per-window SSIM map together with the filtered moments.
    """
    g = gaussian_window()
    mx, my = filter_valid(x, g), filter_valid(y, g)
    sxx = filter_valid(x * x, g)
    syy = filter_valid(y * y, g)
    sxy = filter_valid(x * y, g)
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * (sxy - mx * my) + SSIM_C2
    b1 = mx**2 + my**2 + SSIM_C1
    b2 = (sxx - mx**2) + (syy - my**2) + SSIM_C2
    smap = (a1 * a2) / (b1 * b2)
    return smap, (mx, my, a1, a2, b1, b2)


def ssim_map(x, y) -> np.ndarray:
    x, y = _check_pair(x, y)
    return ssim_terms(x, y)[0]


def ssim(x, y) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1).

    Averaged over channels and all valid window positions. A perfectly flat
    pair is handled by the stabilising constants rather than special-cased.
    """
    return float(ssim_map(x, y).mean())


def video_ssim(vx, vy) -> float:
    """Mean framewise SSIM of two ``(T, H, W, 3)`` videos."""
    vx, vy = _check_pair(vx, vy)
    if vx.ndim != 4:
        raise ValueError(f"expected a (T, H, W, C) video, got {vx.shape}")
    return float(np.mean([ssim(a, b) for a, b in zip(vx, vy)]))


def tsm(e) -> np.ndarray:
    """Temporal similarity matrix ``-||e_i - e_j||^2`` for ``(..., T, D)``."""
    e = np.asarray(e, dtype=float)
    diff = e[..., :, None, :] - e[..., None, :, :]
    out = -np.einsum("...ijd,...ijd->...ij", diff, diff)
    return out


def tsm_loss(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"TSM size mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def cross_entropy(logits, labels) -> float:
    """Mean softmax cross-entropy of ``(B, K)`` logits against integer labels."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.atleast_1d(np.asarray(labels))
    k = logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label index out of range for {k} classes")
    lp = log_softmax(logits)
    return float(-np.mean(lp[np.arange(len(labels)), labels]))


def binary_cross_entropy(logits, labels) -> float:
    """Per-attribute sigmoid cross-entropy, averaged over attributes and batch."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    if z.shape != y.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {y.shape}")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("attribute labels must be 0 or 1")
    return float(np.mean(softplus(z) - y * z))


def harmonic_p(a_c: float, a_a: float) -> float:
    """Harmonic mean of action accuracy and attribute protection ``1 - a_a``."""
    if not (0.0 <= a_c <= 1.0 and 0.0 <= a_a <= 1.0):
        raise ValueError(f"accuracies must lie in [0, 1], got A_C={a_c}, A_A={a_a}")
    den = (1.0 - a_a) + a_c
    if den == 0.0:
        warnings.warn("P undefined for A_C = 0 and A_A = 1", RuntimeWarning, stacklevel=2)
        return math.nan
    return 2.0 * a_c * (1.0 - a_a) / den


def average_precision(scores, labels) -> float:
    """Area under the precision-recall step curve.

    Tied scores form a single threshold, so the result is invariant to any
    strictly increasing transform of ``scores``.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # keep the last index of each run of tied scores
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = tp[last]
    precision = tp / (last + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def c_map(aps) -> float:
    """Class-based mean AP; attributes with undefined AP are skipped."""
    aps = np.asarray(aps, dtype=float)
    bad = np.isnan(aps)
    if bad.all():
        raise ValueError("no attribute has a defined AP")
    if bad.any():
        warnings.warn(
            f"{int(bad.sum())} attribute(s) without positives excluded from C-MAP",
            RuntimeWarning,
            stacklevel=2,
        )
    return float(aps[~bad].mean())


def per_attribute_ap(scores, labels) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    return np.array([average_precision(scores[:, i], labels[:, i]) for i in range(labels.shape[1])])


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction / truth length mismatch")
    return float(np.mean(pred == truth))


@dataclass
class EvalReport:
    A_C: float
    A_A: float
    ssim_mean: float
    attribute_ap: list = field(default_factory=list)
    P: float = math.nan

    def __post_init__(self):
        self.P = harmonic_p(self.A_C, self.A_A)

    @classmethod
    def from_predictions(cls, action_pred, action_true, attr_scores, attr_true, ssim_mean=math.nan):
        aps = per_attribute_ap(attr_scores, attr_true)
        return cls(accuracy(action_pred, action_true), c_map(aps), float(ssim_mean), aps.tolist())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"A_C={self.A_C!r}", f"A_A={self.A_A!r}", f"ssim_mean={self.ssim_mean!r}", f"P={self.P!r}"]
        lines += [f"AP_{i}={v!r}" for i, v in enumerate(self.attribute_ap)]
        return "\n".join(lines) + "\n"
