import warnings

import numpy as np
import pytest

from privlens.attacks import (
    K_SWEEP,
    AttackReport,
    IllPosedWarning,
    ReconstructionReport,
    _adversary_plan,
    baseline_defocus,
    baseline_lowres,
    defocus_psf,
    format_table,
    reconstruction_attack,
    table_csv,
    wiener_deconvolve,
)
from privlens.camera import Camera
from privlens.optics import PsfStack
from privlens.sensor import SensorConfig, convolve


def gaussian_psf(sigma=1.5, size=15):
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None] ** 2) / (2 * sigma**2))
    return np.repeat((g / g.sum())[None], 3, axis=0)


def smooth_image(rng, h=32, w=32):
    i, j = np.indices((h, w))
    img = np.full((h, w, 3), 0.5)
    for c in range(3):
        for _ in range(4):
            fy, fx = rng.integers(0, 3, 2)
            ph = rng.uniform(0, 2 * np.pi)
            img[..., c] += 0.07 * np.cos(2 * np.pi * (fy * i / h + fx * j / w) + ph)
    return img


def test_delta_psf_k0_is_exact():
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 1, (4, 16, 16, 3))
    assert np.array_equal(wiener_deconvolve(y, PsfStack.delta(5), 0.0), y)


def test_gaussian_psf_noiseless_recovery():
    rng = np.random.default_rng(1)
    x = smooth_image(rng)
    k = gaussian_psf()
    y = convolve(x, k)
    # frequency-domain oracle of the same filter
    H = np.fft.fft2(np.fft.ifftshift(np.pad(k[0], ((9, 8), (9, 8)))))
    Y = np.fft.fft2(y[..., 0])
    ref = np.real(np.fft.ifft2(np.conj(H) * Y / (np.abs(H) ** 2 + 1e-8)))
    xr = wiener_deconvolve(y, k, 1e-8)
    assert np.max(np.abs(xr[..., 0] - np.clip(ref, 0, 1))) < 1e-8
    assert np.linalg.norm(xr - x) / np.linalg.norm(x) < 1e-3


def test_ill_posed_flag():
    k = np.zeros((3, 3, 3))
    k[:, 1, :] = 1 / 3  # box blur has OTF zeros on a 12-wide grid
    with pytest.warns(IllPosedWarning):
        wiener_deconvolve(np.full((12, 12, 3), 0.5), k, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        wiener_deconvolve(np.full((12, 12, 3), 0.5), k, 1e-3)


def test_negative_k_rejected():
    with pytest.raises(ValueError):
        wiener_deconvolve(np.zeros((8, 8, 3)), PsfStack.delta(3), -1.0)


def test_tuned_wiener_improves_ssim():
    from privlens.synthdata import ClipSpec, render

    x = np.stack([render(ClipSpec(a, (1, 0, 1, 0, 1), a)) for a in range(2)])
    k = gaussian_psf(1.5)
    y = convolve(x, k)
    rep = reconstruction_attack(x, y, k)
    assert rep.K in K_SWEEP
    assert rep.ssim_reconstructed >= rep.ssim_distorted


def test_reconstruction_report_must_be_finite():
    with pytest.raises(ValueError):
        ReconstructionReport(float("nan"), 0.5, 1e-3)


def test_lowres_identity_and_block_average():
    rng = np.random.default_rng(2)
    v = rng.uniform(0, 1, (2, 32, 32, 3))
    assert np.array_equal(baseline_lowres(v, side=32), v)
    lo = baseline_lowres(v, side=16)
    assert lo.shape == v.shape
    assert np.allclose(lo[:, 0, 0], v[:, :2, :2].mean(axis=(1, 2)))
    assert np.array_equal(lo[:, 0, 0], lo[:, 1, 1])
    with pytest.raises(ValueError):
        baseline_lowres(v, side=12)


def test_defocus_baseline():
    cam = baseline_defocus(0.0)
    assert np.all(cam.alpha == 0)
    c = cam.psf.size // 2
    assert np.all(cam.psf.kernels[:, c, c] > 0.8)
    strong = defocus_psf(2.0)
    assert np.all(strong.kernels[:, c, c] < cam.psf.kernels[:, c, c])
    base = Camera(np.zeros(15), sensor=SensorConfig(noise_sigma=0.0))
    assert baseline_defocus(1.0, base).sensor.noise_sigma == 0.0


def test_adversary_plan_has_scratch_members():
    plan = _adversary_plan(5, 12)
    assert len(plan) == 5
    assert sum(1 for p in plan if not p[0]) == 2
    assert len({p[2] for p in plan}) == 5
    assert _adversary_plan(1, 12) == [(False, 12, 200)]


def test_attack_report_best():
    r = AttackReport([0.5, 0.7, 0.6], 1, [0.7] * 5, [0.5] * 5)
    assert r.best == 0.7 and r.best == max(r.cmaps)
    assert r.chance == 0.5
    assert r.to_dict()["best"] == 0.7


def test_table_formats():
    rows = [{"method": "no-privacy", "SSIM": 1.0, "A_C": 0.97, "A_A": 0.96, "P": 0.077}]
    assert table_csv(rows).splitlines()[0] == "method,SSIM,A_C,A_A,P"
    text = format_table(rows)
    assert text.splitlines()[0].split() == ["method", "SSIM", "A_C", "A_A", "P"]
    assert "1.000" in text
