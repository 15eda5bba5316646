"""Acceptance gates.

Each test checks one numbered criterion at its stated tolerance and prints a
single ``[criterion N] PASS/FAIL`` line (visible under ``pytest -v``). The
desk-scale training criteria (6 and 7) run the shipped default configuration
end to end and take tens of minutes on one CPU.
"""

import time
from copy import deepcopy

import numpy as np
import pytest

from privlens import autodiff as ad
from privlens import data_path
from privlens.attacks import fresh_adversary_attack, reconstruction_attack, wiener_deconvolve
from privlens.camera import basis_for
from privlens.io import read_config
from privlens.metrics import average_precision, harmonic_p, ssim, tsm
from privlens.optics import OpticsConfig, PhaseMask, PsfStack, psf_stack
from privlens.sensor import convolve
from privlens.synthdata import make_dataset
from privlens.models import ActionClassifier, AttributeAdversary
from privlens.trainer import TrainConfig, Trainer, TrainState
from privlens.zernike import PupilGrid, build_basis, compose_mask, nm_to_noll, noll_to_nm

from test_attacks import gaussian_psf, smooth_image
from test_autodiff import CASES, adjoint_gap
from test_zernike import noll_index_oracle


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


# ------------------------------------------------------------------ 1


def test_criterion_1_harmonic_p_rows(verdict):
    rows = [((0.738, 0.665), 0.461), ((0.633, 0.689), 0.417)]
    got = [harmonic_p(*args) for args, _ in rows]
    ok = all(abs(g - want) <= 5e-4 for g, (_, want) in zip(got, rows))
    assert verdict(1, ok, "harmonic_p = " + ", ".join(f"{g:.4f}" for g in got))


# ------------------------------------------------------------------ 2


def test_criterion_2_zernike_suite(verdict):
    t = time.perf_counter()
    pairs = [noll_to_nm(j) for j in range(1, 1001)]
    bijective = len(set(pairs)) == 1000 and all(
        nm_to_noll(n, m) == j == noll_index_oracle(n, m) for j, (n, m) in enumerate(pairs, 1)
    )
    g = build_basis(PupilGrid(256, 1e-3), 15).gram()
    d = np.sqrt(np.diag(g))
    leakage = float(np.max(np.abs(g / np.outer(d, d) - np.eye(15))))
    basis = build_basis(PupilGrid(64, 1e-3), 15)
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 15))
    lhs = compose_mask(basis, a - 1.7 * b).phi
    rhs = compose_mask(basis, a).phi - 1.7 * compose_mask(basis, b).phi
    lin = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)))
    dt = time.perf_counter() - t
    ok = bijective and leakage < 0.02 and lin < 1e-13 and dt < 10
    assert verdict(2, ok, f"bijective={bijective} leakage={leakage:.4f} linearity={lin:.1e} ({dt:.1f}s)")


# ------------------------------------------------------------------ 3


def test_criterion_3_optics_suite(verdict):
    t = time.perf_counter()
    cfg = OpticsConfig()
    basis = basis_for(cfg, 15)
    rng = np.random.default_rng(1)
    draws = rng.standard_normal((20, 15))
    draws /= np.linalg.norm(draws, axis=1, keepdims=True)

    def kernels(alpha):
        return psf_stack(compose_mask(basis, alpha), cfg).kernels

    k0 = kernels(np.zeros(15))
    sums = max(abs(kernels(a).sum(axis=(1, 2)) - 1).max() for a in [np.zeros(15), *draws[:5]])
    m = compose_mask(basis, 0.3 * draws[0])
    phase = np.max(np.abs(psf_stack(m, cfg).kernels - psf_stack(PhaseMask(m.grid, m.phi + 0.8), cfg).kernels))
    centro = np.max(np.abs(k0 - k0[:, ::-1, ::-1]))
    c = cfg.psf_size // 2
    dominant = all(np.all(k0[:, c, c] > kernels(a)[:, c, c]) for a in draws)
    dt = time.perf_counter() - t
    ok = sums < 1e-6 and phase < 1e-10 and centro < 1e-8 and dominant and dt < 30
    detail = f"unit-sum {sums:.1e}, phase {phase:.1e}, centrosymmetry {centro:.1e}, centre dominance {dominant} ({dt:.1f}s)"
    assert verdict(3, ok, detail)


# ------------------------------------------------------------------ 4


def test_criterion_4_gradient_fidelity(verdict):
    t = time.perf_counter()
    data = make_dataset(20, 20, master_seed=3)
    tr = Trainer(TrainConfig(noise_sigma=0.0, classifier_width=4, adversary_width=3), data)
    alpha = np.random.default_rng(4).normal(0, 0.2, 15)
    st = TrainState(alpha, ActionClassifier(width=4, seed=0), AttributeAdversary(width=3, seed=0))
    ref = tr.reference_tsm(st.classifier, "train")
    tr.tsm_scale = float(np.mean(ref**2))
    idx = np.arange(2)
    x = data.train.videos[idx].astype(float)
    err = ad.grad_check(lambda ts: tr.batch_losses(st, x, idx, 0, alpha=ts[0])[4], [alpha], eps=1e-6)
    gaps = {name: max(adjoint_gap(fn, xs, s) for s in range(3)) for name, (fn, xs) in CASES.items()}
    worst = max(gaps, key=gaps.get)
    dt = time.perf_counter() - t
    ok = err < 1e-3 and gaps[worst] < 1e-8 and dt < 120
    detail = f"end-to-end rel err {err:.1e}; worst adjoint gap {gaps[worst]:.1e} ({worst}) ({dt:.1f}s)"
    assert verdict(4, ok, detail)


# ------------------------------------------------------------------ 5

TINY = dict(
    epochs=1, batch_size=4, classifier_epochs=2, adversary_epochs=2, optics_steps=2,
    classifier_width=4, adversary_width=3, attack_k=2, attack_epochs=1,
)


def test_criterion_5_algorithm_mechanics(verdict):
    t = time.perf_counter()
    data = make_dataset(20, 20, master_seed=5)
    tr0 = Trainer(TrainConfig(**TINY), data)
    base = tr0.pretrain()

    def touched(before, after, prefix):
        return any(not np.array_equal(before[k], after[k]) for k in before if k.startswith(prefix))

    freeze = True
    for which, lrs in (("alpha", (1e-2, 0, 0)), ("c.", (0, 1e-2, 0)), ("a.", (0, 0, 1e-2))):
        st = deepcopy(base)
        before = st.snapshot()
        tr0.adversarial_step(st, np.arange(4), 0, lrs)
        after = st.snapshot()
        freeze &= all(touched(before, after, p) == (p == which) for p in ("alpha", "c.", "a."))

    zero = Trainer(TrainConfig(**{**TINY, "lr_optics": 0.0, "lr_classifier": 0.0, "lr_adversary": 0.0}), data)
    zero.tsm_ref, zero.tsm_scale = tr0.tsm_ref, tr0.tsm_scale
    st = deepcopy(base)
    before = st.snapshot()
    zero.adversarial_epoch(st)
    noop = all(np.array_equal(v, st.snapshot()[k]) for k, v in before.items())

    runs = []
    for _ in range(2):
        s = Trainer(TrainConfig(**TINY), data).train()
        runs.append((s.snapshot(), s.telemetry))
    (s1, t1), (s2, t2) = runs
    deterministic = all(np.array_equal(s1[k], s2[k]) for k in s1) and t1 == t2
    dt = time.perf_counter() - t
    ok = freeze and noop and deterministic and dt < 300
    assert verdict(5, ok, f"freeze={freeze} zero-lr no-op={noop} deterministic={deterministic} ({dt:.1f}s)")


# ------------------------------------------------------------- 6 and 7


def _trainer_from(pretrained, config):
    """A trainer for ``config`` that reuses another trainer's pretraining."""
    src, state = pretrained
    tr = Trainer(config, src.dataset, src.optics)
    tr.tsm_ref, tr.tsm_scale = src.tsm_ref, src.tsm_scale
    tr.pretrained_adversary = src.pretrained_adversary
    return tr, deepcopy(state)


def _pretrain(config, optics, dataset):
    tr = Trainer(config, dataset, optics)
    return tr, tr.pretrain()


@pytest.fixture(scope="module")
def desk():
    train, optics, data = read_config(data_path("default.cfg"))
    dataset = make_dataset(data["n_train"], data["n_test"], data["master_seed"])
    return train, optics, dataset


@pytest.fixture(scope="module")
def full_run(desk):
    train, optics, dataset = desk
    t = time.perf_counter()
    pretrained = _pretrain(train, optics, dataset)
    tr, st = _trainer_from(pretrained, train)
    tr.train(st)
    report, attack = tr.final_report(st)
    return pretrained, tr, st, report, attack, time.perf_counter() - t


def test_criterion_6_desk_adversarial_outcome(verdict, desk, full_run):
    train, _, dataset = desk
    (_, base), _, st, report, attack, dt = full_run
    ub = base.upper_bounds
    a = ub["A_C_clean"] >= 0.95 and ub["C_MAP_clean"] >= 0.95
    b = abs(attack.best - attack.chance) <= 0.10
    c = report.A_C >= 0.80 * ub["A_C_clean"]
    d = report.ssim_mean <= 0.85
    sizes = (len(dataset.train), len(dataset.test), train.q, train.epochs) == (512, 128, 15, 50)
    detail = (
        f"(a) clean A_C={ub['A_C_clean']:.3f} C-MAP={ub['C_MAP_clean']:.3f} {a}; "
        f"(b) best-of-{len(attack.cmaps)} C-MAP={attack.best:.3f} vs chance {attack.chance:.3f} {b}; "
        f"(c) A_C={report.A_C:.3f} {c}; (d) ssim={report.ssim_mean:.3f} {d}; "
        f"attack C-MAPs {[round(v, 3) for v in attack.cmaps]}; 512/128/q15/50 epochs {sizes} ({dt / 60:.1f} min)"
    )
    assert verdict(6, a and b and c and d and sizes, detail)


def _ablation(pretrained, train, **change):
    tr, st = _trainer_from(pretrained, TrainConfig.from_dict({**train.to_dict(), **change}))
    tr.train(st)
    return tr, st


def _direction_checks(pretrained, train, full_tr, full_st, full_attack):
    """``(tsm_ok, adv_ok, numbers)`` for one seed."""
    full_ac, _ = full_tr.final_report(full_st, full_attack)
    _, no_tsm = _ablation(pretrained, train, use_tsm=False)
    no_tsm_ac = no_tsm.telemetry[-1]["A_C"]
    nadv_tr, nadv_st = _ablation(pretrained, train, adversarial=False)
    nadv_attack = fresh_adversary_attack(nadv_tr.camera(nadv_st.alpha), nadv_tr.dataset, train.attack_k, nadv_tr)
    numbers = (full_ac.A_C, no_tsm_ac, full_attack.best, nadv_attack.best)
    return no_tsm_ac <= full_ac.A_C + 0.02, nadv_attack.best >= full_attack.best, numbers


def test_criterion_7_ablation_directions(verdict, desk, full_run):
    train, optics, dataset = desk
    t = time.perf_counter()
    pretrained, tr, st, _, attack, _ = full_run
    results = {train.seed: _direction_checks(pretrained, train, tr, st, attack)}
    tsm_ok, adv_ok, _ = results[train.seed]
    if not (tsm_ok and adv_ok):
        # a single-seed violation is settled by a three-seed majority
        for seed in (train.seed + 1, train.seed + 2):
            cfg = TrainConfig.from_dict({**train.to_dict(), "seed": seed})
            pre = _pretrain(cfg, optics, dataset)
            ftr, fst = _trainer_from(pre, cfg)
            ftr.train(fst)
            fattack = fresh_adversary_attack(ftr.camera(fst.alpha), dataset, cfg.attack_k, ftr)
            results[seed] = _direction_checks(pre, cfg, ftr, fst, fattack)
    tsm_votes = sum(r[0] for r in results.values())
    adv_votes = sum(r[1] for r in results.values())
    need = len(results) // 2 + 1
    ok = tsm_votes >= need and adv_votes >= need
    per_seed = "; ".join(
        f"seed {s}: A_C full={n[0]:.3f} noTSM={n[1]:.3f}, attack C-MAP adv={n[2]:.3f} noAdv={n[3]:.3f}"
        for s, (_, _, n) in results.items()
    )
    dt = time.perf_counter() - t
    detail = f"TSM votes {tsm_votes}/{len(results)}, adversarial votes {adv_votes}/{len(results)}; {per_seed} ({dt / 60:.1f} min)"
    assert verdict(7, ok, detail)


# ------------------------------------------------------------------ 8


def test_criterion_8_wiener_attack(verdict, full_run):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 1, (4, 16, 16, 3))
    exact = np.array_equal(wiener_deconvolve(y, PsfStack.delta(5), 0.0), y)
    x = smooth_image(rng)
    k = gaussian_psf()
    rec = wiener_deconvolve(convolve(x, k), k, 1e-8)
    rel = float(np.linalg.norm(rec - x) / np.linalg.norm(x))

    (_, _), tr, st, _, _, _ = full_run
    cam = tr.camera(st.alpha)
    clean = tr.dataset.test.videos[:32].astype(float)
    priv = cam.capture(clean, (5,))
    rr = reconstruction_attack(clean, priv, cam.psf)
    dt = time.perf_counter() - t
    ok = exact and rel < 1e-3 and dt < 60
    detail = (
        f"delta K=0 exact={exact}; gaussian rel err {rel:.1e}; trained lens ssim distorted "
        f"{rr.ssim_distorted:.3f} -> reconstructed {rr.ssim_reconstructed:.3f} (K={rr.K:g}) ({dt:.1f}s)"
    )
    assert verdict(8, ok, detail)


# ------------------------------------------------------------------ 9


def test_criterion_9_metrics_suite(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    ssim_ok = True
    for i in range(1000):
        x = rng.uniform(0, 1, (12, 12, 3))
        y = rng.uniform(0, 1, (12, 12, 3)) if i % 2 else np.clip(x + rng.normal(0, 0.05, x.shape), 0, 1)
        s = ssim(x, y)
        ssim_ok &= abs(ssim(x, x) - 1) < 1e-12 and s == ssim(y, x) and -1 <= s <= 1
    tsm_ok = True
    for _ in range(50):
        e = rng.standard_normal((8, 5))
        m = tsm(e)
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        tsm_ok &= bool(
            np.all(np.diag(m) == 0) and np.array_equal(m, m.T) and np.all(m <= 0)
            and np.allclose(tsm(e @ q + rng.standard_normal(5)), m, atol=1e-10)
        )
    ap_ok = average_precision(-np.arange(7.0), np.array([1, 1, 1, 0, 0, 0, 0])) == 1.0
    for k in (1, 2, 5, 10):
        y = np.zeros(12)
        y[k - 1] = 1
        ap_ok &= abs(average_precision(-np.arange(12.0), y) - 1 / k) < 1e-12
    dt = time.perf_counter() - t
    ok = ssim_ok and tsm_ok and ap_ok and dt < 30
    assert verdict(9, ok, f"ssim={ssim_ok} tsm={tsm_ok} ap={ap_ok} ({dt:.1f}s)")
