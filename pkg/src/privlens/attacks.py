"""Privacy attacks on a frozen camera and baseline cameras for comparison.

``fresh_adversary_attack`` trains several new attribute adversaries on the
camera's private training clips and reports the best test C-MAP. Wiener
deconvolution is the non-blind reconstruction attack.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .camera import Camera
from .metrics import accuracy, c_map, harmonic_p, per_attribute_ap, video_ssim
from .optics import PsfStack
from .synthdata import Dataset
from .zernike import compose_mask

log = logging.getLogger(__name__)

ILL_POSED_TOL = 1e-12
K_SWEEP = tuple(10.0**e for e in range(-6, 0))


class IllPosedWarning(RuntimeWarning):
    """Unregularised deconvolution with vanishing transfer function."""


class NonConvergenceWarning(RuntimeWarning):
    """An attack adversary never improved on its initial training loss."""


@dataclass
class AttackReport:
    cmaps: list
    best_index: int
    best_aps: list
    prevalence: list
    best_scores: np.ndarray = field(repr=False, default=None)
    converged: list = field(default_factory=list)

    @property
    def best(self) -> float:
        return self.cmaps[self.best_index]

    @property
    def chance(self) -> float:
        return float(np.mean(self.prevalence))

    def to_dict(self) -> dict:
        return {
            "cmaps": list(self.cmaps),
            "best": self.best,
            "best_index": self.best_index,
            "best_aps": list(self.best_aps),
            "prevalence": list(self.prevalence),
            "converged": list(self.converged),
        }


@dataclass
class ReconstructionReport:
    ssim_distorted: float
    ssim_reconstructed: float
    K: float

    def __post_init__(self):
        if not (np.isfinite(self.ssim_distorted) and np.isfinite(self.ssim_reconstructed)):
            raise ValueError("reconstruction SSIM must be finite")


def _adversary_plan(k: int, base_width: int):
    """``(init_from_pretrained, width, seed_offset)`` for each of ``k`` adversaries.

    The last ``min(2, k)`` start from scratch with varied widths; the rest
    fine-tune the clean pretrained adversary with different data orders.
    """
    n_scratch = min(2, k)
    widths = (base_width, base_width + 4)
    plan = [(True, base_width, 100 + i) for i in range(k - n_scratch)]
    plan += [(False, widths[i], 200 + i) for i in range(n_scratch)]
    return plan


def fresh_adversary_attack(camera: Camera, dataset: Dataset, k: int = 5, trainer=None, epochs=None) -> AttackReport:
    """Train ``k`` new adversaries on private clips of ``camera``; report the best test C-MAP."""
    from .trainer import TrainConfig, Trainer

    if k < 1:
        raise ValueError("k must be >= 1")
    if trainer is None:
        trainer = Trainer(TrainConfig(), dataset, camera.optics)
    init = getattr(trainer, "pretrained_adversary", None)
    epochs = trainer.config.attack_epochs if epochs is None else epochs
    priv_train = camera.capture(dataset.train.videos, (3,)).astype(np.float32)
    priv_test = camera.capture(dataset.test.videos, (4,))
    cmaps, aps_all, scores_all, converged = [], [], [], []
    for from_init, width, offset in _adversary_plan(k, trainer.config.adversary_width):
        start = init if (from_init and init is not None) else None
        net = trainer.pretrain_adversary(priv_train, seed_offset=offset, width=width, epochs=epochs, init=start)
        scores = net.decision_function(priv_test)
        aps = per_attribute_ap(scores, dataset.test.attributes)
        ok = bool(np.ptp(scores) > 0)
        if not ok:
            warnings.warn(f"attack adversary {offset} produced constant scores", NonConvergenceWarning, stacklevel=2)
        cmaps.append(c_map(aps))
        aps_all.append(aps)
        scores_all.append(scores)
        converged.append(ok)
        log.info("attack adversary %d (width %d, %s): C-MAP %.4f", offset, width,
                 "fine-tuned" if start is not None else "scratch", cmaps[-1])
    best = int(np.argmax(cmaps))
    return AttackReport(
        cmaps=[float(c) for c in cmaps],
        best_index=best,
        best_aps=aps_all[best].tolist(),
        prevalence=dataset.test.attributes.mean(axis=0).tolist(),
        best_scores=scores_all[best],
        converged=converged,
    )


# ----------------------------------------------------------- deconvolution


def wiener_deconvolve(y, psf, K: float) -> np.ndarray:
    """Per-channel Wiener filter ``conj(H) Y / (|H|^2 + K)``, clamped to [0, 1].

    ``y`` is ``(..., H, W, 3)``; the OTF uses the same embedding as the
    sensor's circular convolution.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    y = np.asarray(y, dtype=float)
    kernels = psf.kernels if isinstance(psf, PsfStack) else np.asarray(psf, dtype=float)
    c = kernels.shape[-1] // 2
    if K == 0 and np.all(kernels[:, c, c] == 1.0) and np.count_nonzero(kernels) == kernels.shape[0]:
        return y.copy()
    h, w = y.shape[-3], y.shape[-2]
    otf = ad.kernel_to_otf(kernels, h, w)  # (3, h, w//2+1)
    mag2 = np.abs(otf) ** 2
    if K == 0 and mag2.min() < ILL_POSED_TOL:
        warnings.warn("K=0 with vanishing transfer function: deconvolution is ill-posed", IllPosedWarning, stacklevel=2)
    ych = np.moveaxis(y, -1, -3)
    yf = np.fft.rfft2(ych)
    with np.errstate(divide="ignore", invalid="ignore"):
        xf = np.conj(otf) * yf / (mag2 + K)
    x = np.fft.irfft2(xf, s=(h, w))
    return np.clip(np.moveaxis(x, -3, -1), 0.0, 1.0)


def reconstruction_attack(clean_videos, private_videos, psf, ks=K_SWEEP) -> ReconstructionReport:
    """Sweep ``K`` and keep the value that is best for the attacker."""
    clean = np.asarray(clean_videos, dtype=float)
    priv = np.asarray(private_videos, dtype=float)
    s_dist = float(np.mean([video_ssim(a, b) for a, b in zip(clean, priv)]))
    best = (-np.inf, None)
    for K in ks:
        rec = wiener_deconvolve(priv, psf, K)
        s = float(np.mean([video_ssim(a, b) for a, b in zip(clean, rec)]))
        if s > best[0]:
            best = (s, K)
    return ReconstructionReport(s_dist, best[0], float(best[1]))


# --------------------------------------------------------------- baselines


def baseline_lowres(video, side: int = 16) -> np.ndarray:
    """Box-average to ``side x side`` then nearest-upsample back."""
    v = np.asarray(video, dtype=float)
    h, w = v.shape[-3], v.shape[-2]
    if h % side or w % side:
        raise ValueError(f"side {side} must divide the frame size {h}x{w}")
    fh, fw = h // side, w // side
    lead = v.shape[:-3]
    small = v.reshape(lead + (side, fh, side, fw, v.shape[-1])).mean(axis=(-4, -2))
    return np.repeat(np.repeat(small, fh, axis=-3), fw, axis=-2)


def baseline_defocus(strength: float, camera: Camera | None = None, q: int = 15) -> Camera:
    """Camera whose mask is a pure defocus term, ``alpha = strength * e_4``."""
    if q < 4:
        raise ValueError("defocus needs q >= 4")
    alpha = np.zeros(q)
    alpha[3] = strength
    if camera is None:
        return Camera(alpha)
    return camera.with_alpha(alpha)


def defocus_psf(strength: float, camera: Camera | None = None) -> PsfStack:
    cam = baseline_defocus(strength, camera)
    compose_mask(cam.basis, cam.alpha)  # validates the coefficients
    return cam.psf


# -------------------------------------------------------------- comparison

TABLE_COLUMNS = ("method", "SSIM", "A_C", "A_A", "P")


def compare_methods(dataset: Dataset, methods: dict, trainer=None, k: int = 5) -> list[dict]:
    """Retrain a classifier and attack every distortion; one table row per method.

    ``methods`` maps a name to a callable taking ``(videos, stream)`` and
    returning distorted videos of the same shape.
    """
    from .trainer import TrainConfig, Trainer

    trainer = trainer or Trainer(TrainConfig(), dataset)
    rows = []
    for name, distort in methods.items():
        tr = distort(dataset.train.videos, (5,)).astype(np.float32)
        te = distort(dataset.test.videos, (6,))
        sub = Dataset(
            type(dataset.train)(tr, dataset.train.actions, dataset.train.attributes, dataset.train.seeds),
            type(dataset.test)(te.astype(np.float32), dataset.test.actions, dataset.test.attributes, dataset.test.seeds),
            dataset.master_seed,
        )
        t = Trainer(trainer.config, sub, trainer.optics)
        clf = t.pretrain_classifier()
        a_c = accuracy(clf.predict(te), dataset.test.actions)
        report = fresh_adversary_attack(_Identity(), sub, k=k, trainer=t)
        s = float(np.mean([video_ssim(a, b) for a, b in zip(dataset.test.videos.astype(float), te)]))
        rows.append({"method": name, "SSIM": s, "A_C": a_c, "A_A": report.best, "P": harmonic_p(a_c, report.best)})
    return rows


class _Identity:
    """Stand-in camera for already-distorted clips."""

    def capture(self, videos, stream=(), ids=None):
        return np.asarray(videos, dtype=float)


def format_table(rows: list[dict]) -> str:
    head = f"{'method':<16}" + "".join(f"{c:>8}" for c in TABLE_COLUMNS[1:])
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['method']:<16}" + "".join(f"{r[c]:>8.3f}" for c in TABLE_COLUMNS[1:]))
    return "\n".join(lines)


def table_csv(rows: list[dict]) -> str:
    lines = [",".join(TABLE_COLUMNS)]
    for r in rows:
        lines.append(",".join([r["method"]] + [f"{r[c]:.6f}" for c in TABLE_COLUMNS[1:]]))
    return "\n".join(lines) + "\n"
