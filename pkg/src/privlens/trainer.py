"""Pretraining and the three-player adversarial loop over lens, classifier and adversary.

Per minibatch the private videos are captured once with the current lens and
reused for three plain-SGD updates in a fixed order: the lens on
``L_O + gamma1 L_C - gamma2 L_A`` with both networks frozen, then the
classifier on ``L_C`` and finally the adversary on ``L_A``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .camera import Camera
from .metrics import EvalReport, accuracy, c_map, harmonic_p, per_attribute_ap, video_ssim
from .models import ActionClassifier, AttributeAdversary, adversary_loss, augment, classifier_loss
from .optics import OpticsConfig
from .optim import SGD, Adam, NumericalError, check_finite, fit, late_drop, tensor_grads
from .sensor import SensorConfig, draw_noise
from .synthdata import Dataset

log = logging.getLogger(__name__)

TELEMETRY_COLUMNS = ("epoch", "L_O", "L_C", "L_A", "ssim", "A_C", "A_A", "P")
PRETRAIN_SSIM = 0.98


class PretrainError(RuntimeError):
    """The pretrained lens did not reach near-identity imaging."""


@dataclass
class TrainConfig:
    lr_optics: float = 3e-3
    lr_classifier: float = 1e-4
    lr_adversary: float = 1e-4
    gamma1: float = 0.7
    gamma2: float = 0.3
    epochs: int = 50
    batch_size: int = 8
    decay_factor: float = 0.1
    decay_epoch: int = 25
    decay_mode: str = "exponential"  # or "step" for a single drop
    q: int = 15
    use_tsm: bool = True
    adversarial: bool = True
    noise_sigma: float = 0.01
    seed: int = 0
    # pretraining, Adam
    pretrain_lr: float = 3e-3
    pretrain_batch: int = 16
    classifier_epochs: int = 40
    adversary_epochs: int = 40
    optics_steps: int = 60
    optics_lr: float = 0.01
    init_alpha_scale: float = 0.02
    # toy network sizes
    classifier_width: int = 16
    adversary_width: int = 12
    # final evaluation
    attack_k: int = 5
    attack_epochs: int = 20

    def __post_init__(self):
        for name in ("lr_optics", "lr_classifier", "lr_adversary"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("gamma1", "gamma2"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.decay_mode not in ("exponential", "step"):
            raise ValueError("decay_mode must be 'exponential' or 'step'")
        if self.epochs < 0 or self.batch_size < 1 or self.q < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and q >= 1 required")

    @property
    def effective_gamma2(self) -> float:
        return self.gamma2 if self.adversarial else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown train option(s): {sorted(unknown)}")
        return cls(**d)


def lr_schedule(epoch: int, config: TrainConfig) -> tuple[float, float, float]:
    """Learning rates ``(optics, classifier, adversary)`` for ``epoch``.

    Rates are constant before ``decay_epoch``; from then on they shrink by
    ``decay_factor`` every epoch (``exponential``) or once (``step``).
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < config.decay_epoch:
        f = 1.0
    elif config.decay_mode == "step":
        f = config.decay_factor
    else:
        f = config.decay_factor ** (epoch - config.decay_epoch + 1)
    return config.lr_optics * f, config.lr_classifier * f, config.lr_adversary * f


@dataclass
class TrainState:
    alpha: np.ndarray
    classifier: ActionClassifier
    adversary: AttributeAdversary
    epoch: int = 0
    telemetry: list = field(default_factory=list)
    upper_bounds: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        """Copies of every parameter array, for bit-level comparisons."""
        out = {"alpha": self.alpha.copy()}
        out.update({f"c.{k}": v.copy() for k, v in self.classifier.params.items()})
        out.update({f"a.{k}": v.copy() for k, v in self.adversary.params.items()})
        return out


@dataclass
class RunResult:
    state: TrainState
    report: EvalReport
    attack: object
    pretrain_ssim: float

    @property
    def alpha(self) -> np.ndarray:
        return self.state.alpha


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


class Trainer:
    """Owns the dataset, camera model and cached reference TSMs for one run."""

    def __init__(self, config: TrainConfig, dataset: Dataset, optics: OpticsConfig | None = None):
        self.config = config
        self.dataset = dataset
        self.optics = optics or OpticsConfig()
        self.sensor = SensorConfig(noise_sigma=config.noise_sigma, rng_seed=config.seed)
        self.tsm_ref = {}
        self.tsm_scale = 1.0

    def camera(self, alpha) -> Camera:
        return Camera(alpha, self.optics, self.sensor)

    def _rng(self, *stream) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, *stream])

    # ----------------------------------------------------------- pretraining

    def reference_tsm(self, classifier: ActionClassifier, split: str, batch: int = 64) -> np.ndarray:
        """Clean-video TSMs from the frozen pretrained classifier, cached per split."""
        if split not in self.tsm_ref:
            videos = getattr(self.dataset, split).videos
            out = []
            for i in range(0, len(videos), batch):
                e = classifier.embed_frames(_as_float(videos[i : i + batch]))
                out.append(-ad.pairwise_sqdist(e).value)
            self.tsm_ref[split] = np.concatenate(out)
        return self.tsm_ref[split]

    def pretrain_classifier(self) -> ActionClassifier:
        cfg, tr = self.config, self.dataset.train
        net = ActionClassifier(width=cfg.classifier_width, seed=cfg.seed)

        rng = self._rng(10)

        def loss(net, p, idx):
            return ad.softmax_ce(net.forward(augment(tr.videos[idx], rng), p)[0], tr.actions[idx])

        epochs = cfg.classifier_epochs
        fit(net, loss, len(tr), epochs, late_drop(cfg.pretrain_lr, epochs), cfg.pretrain_batch, rng, name="C")
        return net

    def pretrain_adversary(self, videos=None, seed_offset: int = 0, width=None, epochs=None, init=None):
        """Train an adversary on ``videos`` (clean training clips by default)."""
        cfg, tr = self.config, self.dataset.train
        videos = tr.videos if videos is None else videos
        net = init.copy() if init is not None else AttributeAdversary(
            width=width or cfg.adversary_width, seed=cfg.seed + seed_offset
        )
        rng = self._rng(11, seed_offset)
        t = videos.shape[1]

        def loss(net, p, idx):
            # attributes are constant over a clip, so two random frames suffice
            f = np.sort(rng.choice(t, size=min(2, t), replace=False))
            return adversary_loss(net.forward(_as_float(videos[idx][:, f]), p), tr.attributes[idx])

        epochs = cfg.adversary_epochs if epochs is None else epochs
        fit(net, loss, len(tr), epochs, late_drop(cfg.pretrain_lr, epochs), cfg.pretrain_batch, rng, name="A")
        return net

    def pretrain_optics(self) -> tuple[np.ndarray, float]:
        """Start from small random coefficients and maximise SSIM with Adam."""
        cfg, tr = self.config, self.dataset.train
        rng = self._rng(12)
        alpha = {"alpha": rng.normal(0.0, cfg.init_alpha_scale, cfg.q)}
        cam = self.camera(alpha["alpha"])
        opt = Adam()
        for _ in range(cfg.optics_steps):
            idx = rng.choice(len(tr), size=cfg.batch_size, replace=False)
            x = _as_float(tr.videos[idx])
            a = ad.Tensor(alpha["alpha"], requires_grad=True)
            y = cam.capture_tensor(a, x)
            loss = 1.0 - ad.ssim(_flat(x), _flat(y))
            ad.backward(loss)
            opt.step(alpha, {"alpha": a.grad}, cfg.optics_lr)
        # near-identity is a property of the optics, so judge it without sensor noise
        s = self.mean_ssim(Camera(alpha["alpha"], self.optics, SensorConfig(noise_sigma=0.0)), "test")
        return alpha["alpha"], s

    def pretrain(self) -> TrainState:
        """Separate clean training of C and A and near-identity optics."""
        alpha, s = self.pretrain_optics()
        if s < PRETRAIN_SSIM:
            raise PretrainError(
                f"pretrained lens reaches video SSIM {s:.4f} < {PRETRAIN_SSIM}; |alpha| = {np.linalg.norm(alpha):.4g}"
            )
        clf = self.pretrain_classifier()
        adv = self.pretrain_adversary()
        te = self.dataset.test
        bounds = {
            "A_C_clean": accuracy(clf.predict(_as_float(te.videos)), te.actions),
            "C_MAP_clean": c_map(per_attribute_ap(adv.decision_function(_as_float(te.videos)), te.attributes)),
            "ssim_pretrained": s,
            "alpha_norm_pretrained": float(np.linalg.norm(alpha)),
        }
        log.info("pretraining: %s", bounds)
        ref = self.reference_tsm(clf, "train")
        self.reference_tsm(clf, "test")
        self.tsm_scale = float(np.mean(ref**2)) or 1.0
        self.pretrained_adversary = adv.copy()
        return TrainState(alpha, clf, adv, upper_bounds=bounds)

    # ------------------------------------------------------ adversarial loop

    def _noise(self, idx, epoch, shape):
        if self.sensor.noise_sigma == 0:
            return None
        return np.stack([draw_noise(shape[1:], self.sensor, 1, epoch, int(i)) for i in idx])

    def batch_losses(self, state: TrainState, x, idx, epoch, alpha=None, clf=None, adv=None):
        """Forward pass: private videos, ``L_O``, ``L_C``, ``L_A`` and their mix."""
        cfg = self.config
        alpha = state.alpha if alpha is None else alpha
        y = self.camera(state.alpha).capture_tensor(alpha, x, self._noise(idx, epoch, x.shape))
        l_o = ad.ssim(_flat(x), _flat(y))
        logits, emb = state.classifier.forward(y, clf)
        ref = self.tsm_ref["train"][idx] if cfg.use_tsm else None
        l_c = classifier_loss(logits, emb, self.dataset.train.actions[idx], ref, self.tsm_scale)
        l_a = adversary_loss(state.adversary.forward(y, adv), self.dataset.train.attributes[idx])
        total = l_o + cfg.gamma1 * l_c - cfg.effective_gamma2 * l_a
        return y, l_o, l_c, l_a, total

    def adversarial_step(self, state: TrainState, idx, epoch: int, lrs) -> dict:
        cfg, tr = self.config, self.dataset.train
        sgd = SGD()
        lr_o, lr_c, lr_a = lrs
        x = _as_float(tr.videos[idx])

        # (1)+(2) capture and lens update, networks frozen
        a = ad.Tensor(state.alpha, requires_grad=True)
        y, l_o, l_c, l_a, total = self.batch_losses(state, x, idx, epoch, alpha=a)
        for name, term in (("L_O", l_o), ("L_C", l_c), ("L_A", l_a)):
            check_finite(name, term.value)
        ad.backward(total)
        check_finite("lens gradient", a.grad)
        y = y.value  # private videos reused by the next two updates
        params = {"alpha": state.alpha}
        sgd.step(params, {"alpha": a.grad}, lr_o)
        state.alpha = params["alpha"]

        # (3) classifier update, lens and adversary frozen
        if lr_c:
            pc = state.classifier.tensors()
            logits, emb = state.classifier.forward(y, pc)
            ref = self.tsm_ref["train"][idx] if cfg.use_tsm else None
            ad.backward(classifier_loss(logits, emb, tr.actions[idx], ref, self.tsm_scale))
            sgd.step(state.classifier.params, tensor_grads(pc), lr_c)

        # (4) adversary update, lens and classifier frozen
        if lr_a and cfg.adversarial:
            pa = state.adversary.tensors()
            ad.backward(adversary_loss(state.adversary.forward(y, pa), tr.attributes[idx]))
            sgd.step(state.adversary.params, tensor_grads(pa), lr_a)
        return {"L_O": float(l_o.value), "L_C": float(l_c.value), "L_A": float(l_a.value)}

    def adversarial_epoch(self, state: TrainState) -> TrainState:
        cfg = self.config
        lrs = lr_schedule(state.epoch, cfg)
        n = len(self.dataset.train)
        perm = self._rng(20, state.epoch).permutation(n)
        sums = {"L_O": 0.0, "L_C": 0.0, "L_A": 0.0}
        for i in range(0, n, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            losses = self.adversarial_step(state, idx, state.epoch, lrs)
            for k in sums:
                sums[k] += losses[k] * len(idx)
        row = {"epoch": state.epoch, **{k: v / n for k, v in sums.items()}, **self.evaluate(state)}
        state.telemetry.append(row)
        state.epoch += 1
        log.info("epoch %d: %s", row["epoch"], {k: round(v, 4) for k, v in row.items()})
        return state

    # ------------------------------------------------------------ evaluation

    def mean_ssim(self, camera: Camera, split: str = "test") -> float:
        videos = getattr(self.dataset, split).videos
        priv = camera.capture(videos, (2,))
        return float(np.mean([video_ssim(x, y) for x, y in zip(_as_float(videos), priv)]))

    def evaluate(self, state: TrainState) -> dict:
        """Test-split SSIM, action accuracy and current-adversary C-MAP."""
        te = self.dataset.test
        cam = self.camera(state.alpha)
        priv = cam.capture(te.videos, (2,))
        s = float(np.mean([video_ssim(x, y) for x, y in zip(_as_float(te.videos), priv)]))
        a_c = accuracy(state.classifier.predict(priv), te.actions)
        a_a = c_map(per_attribute_ap(state.adversary.decision_function(priv), te.attributes))
        return {"ssim": s, "A_C": a_c, "A_A": a_a, "P": harmonic_p(a_c, a_a)}

    def train(self, state: TrainState | None = None) -> TrainState:
        state = self.pretrain() if state is None else state
        while state.epoch < self.config.epochs:
            self.adversarial_epoch(state)
        return state

    def final_report(self, state: TrainState, attack=None) -> tuple[EvalReport, object]:
        from .attacks import fresh_adversary_attack

        cfg, te = self.config, self.dataset.test
        cam = self.camera(state.alpha)
        if attack is None:
            attack = fresh_adversary_attack(cam, self.dataset, k=cfg.attack_k, trainer=self)
        priv = cam.capture(te.videos, (2,))
        ssims = [video_ssim(x, y) for x, y in zip(_as_float(te.videos), priv)]
        report = EvalReport.from_predictions(
            state.classifier.predict(priv), te.actions, attack.best_scores, te.attributes, float(np.mean(ssims))
        )
        return report, attack

    def run(self) -> RunResult:
        state = self.train()
        report, attack = self.final_report(state)
        return RunResult(state, report, attack, state.upper_bounds["ssim_pretrained"])


def _flat(v):
    """``(B, T, H, W, C)`` -> ``(B*T, H, W, C)`` for the image-level SSIM."""
    v = ad.as_tensor(v)
    return ad.reshape(v, (-1,) + v.shape[2:])


def pretrain(dataset: Dataset, config: TrainConfig | None = None, optics: OpticsConfig | None = None) -> TrainState:
    return Trainer(config or TrainConfig(), dataset, optics).pretrain()


def run(config: TrainConfig, dataset: Dataset, optics: OpticsConfig | None = None) -> RunResult:
    return Trainer(config, dataset, optics).run()


__all__ = [
    "NumericalError",
    "PretrainError",
    "RunResult",
    "TELEMETRY_COLUMNS",
    "TrainConfig",
    "TrainState",
    "Trainer",
    "lr_schedule",
    "pretrain",
    "run",
]
