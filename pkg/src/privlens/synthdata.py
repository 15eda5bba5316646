"""Labelled synthetic sprite clips with an action and five private attributes.

Each clip shows one elongated body on a flat background. The action is a
coarse motion of the body; every attribute is a fine, near zero-mean detail
(pixel-scale texture or outline) that is visible in any single clean frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIONS = ("translate", "bounce", "rotate", "pulse")
ATTRIBUTES = ("shape_class", "fill_texture", "marker_dot", "border_style", "companion")
K_ACTIONS = len(ACTIONS)
M_ATTRIBUTES = len(ATTRIBUTES)

FRAMES = 8
SIZE = 32
SUPERSAMPLE = 4

_HALF_LEN = 6.0
_HALF_WID = 2.5
_TOOTH = 1.0
_TEXTURE = 0.15
_MARKER = 0.25
_RING = 0.25
_COMPANION = 0.25


@dataclass(frozen=True)
class ClipSpec:
    action: int
    attributes: tuple
    seed: int
    frames: int = FRAMES
    size: int = SIZE

    def __post_init__(self):
        if not 0 <= self.action < K_ACTIONS:
            raise ValueError(f"action must be in [0, {K_ACTIONS}), got {self.action}")
        attrs = tuple(int(a) for a in self.attributes)
        if len(attrs) != M_ATTRIBUTES or any(a not in (0, 1) for a in attrs):
            raise ValueError(f"need {M_ATTRIBUTES} binary attributes, got {self.attributes}")
        object.__setattr__(self, "attributes", attrs)


def _patterns(size: int):
    """Zero-mean +-1 checker, row-stripe and column-stripe patterns."""
    i, j = np.indices((size, size))
    sign = lambda k: np.where(k % 2 == 0, 1.0, -1.0)
    return sign(i + j), sign(i), sign(j)


def _coverage(size, cx, cy, angle, scale, serrated, grow=0.0):
    """Anti-aliased coverage of the body, via a supersampled inside test.

    The serrated variant alternates the half-width by one pixel every two pixels
    along the long axis, so its mean width matches the smooth body.
    """
    s = SUPERSAMPLE
    ax = (np.arange(size * s) + 0.5) / s
    x, y = np.meshgrid(ax, ax, indexing="xy")
    dx, dy = x - cx, y - cy
    c, sn = np.cos(angle), np.sin(angle)
    lx = (c * dx + sn * dy) / scale
    ly = (-sn * dx + c * dy) / scale
    a = _HALF_LEN + grow / scale
    b = np.full_like(lx, _HALF_WID + grow / scale)
    if serrated:
        b = b + _TOOTH * np.where(np.floor(lx * scale / 2) % 2 == 0, 1.0, -1.0)
    inside = (np.abs(lx) <= a) & (np.abs(ly) <= b)
    return inside.reshape(size, s, size, s).mean(axis=(1, 3))


def _trajectory(spec: ClipSpec, rng: np.random.Generator):
    t = np.arange(spec.frames)
    mid = spec.size / 2
    cx = np.full(spec.frames, mid + rng.uniform(-3, 3))
    cy = np.full(spec.frames, mid + rng.uniform(-3, 3))
    angle = np.full(spec.frames, rng.uniform(0, np.pi))
    scale = np.ones(spec.frames)
    phase = rng.uniform(0, 2 * np.pi)
    name = ACTIONS[spec.action]
    if name == "translate":
        # mostly horizontal drift, left or right
        heading = rng.uniform(-np.pi / 6, np.pi / 6) + np.pi * rng.integers(0, 2)
        speed = 1.5
        cx = cx + speed * np.cos(heading) * (t - (spec.frames - 1) / 2)
        cy = cy + speed * np.sin(heading) * (t - (spec.frames - 1) / 2)
    elif name == "bounce":
        cy = cy + 3.5 * np.sin(2 * np.pi * t / 4 + phase)
    elif name == "rotate":
        angle = angle + rng.choice([-1, 1]) * np.deg2rad(25.0) * t
    elif name == "pulse":
        scale = 1.0 + 0.3 * np.sin(2 * np.pi * t / 4 + phase)
    return cx, cy, angle, scale


def render(spec: ClipSpec) -> np.ndarray:
    """Render a ``(T, H, W, 3)`` clip in [0, 1]; deterministic in ``spec``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    shape_cls, texture, marker, border, companion = spec.attributes
    background = rng.uniform(0.3, 0.4)
    colour = rng.uniform(0.55, 0.7, size=3)
    cx, cy, angle, scale = _trajectory(spec, rng)
    chk, rows, cols = _patterns(n)

    comp = np.zeros((n, n))
    if companion:
        # static 4x4 fine-grained patch in one corner region
        qx, qy = rng.integers(0, 2, size=2)
        x0 = 2 + qx * (n - 8) + rng.integers(0, 3)
        y0 = 2 + qy * (n - 8) + rng.integers(0, 3)
        comp[y0 : y0 + 4, x0 : x0 + 4] = _COMPANION * cols[y0 : y0 + 4, x0 : x0 + 4]
    else:
        rng.integers(0, 2, size=2), rng.integers(0, 3), rng.integers(0, 3)

    frames = np.empty((spec.frames, n, n, 3))
    for t in range(spec.frames):
        cov = _coverage(n, cx[t], cy[t], angle[t], scale[t], bool(shape_cls))
        img = background + cov[..., None] * (colour - background)
        if texture:
            img += (_TEXTURE * rows * (cov > 0.99))[..., None]
        if border:
            ring = _coverage(n, cx[t], cy[t], angle[t], scale[t], bool(shape_cls), grow=1.0) - cov
            img += (_RING * chk * (ring > 0.5))[..., None]
        if marker:
            mx, my = int(round(cx[t])) - 2, int(round(cy[t])) - 2
            patch = np.zeros((n, n))
            patch[my : my + 4, mx : mx + 4] = 1.0
            img = np.where(patch[..., None] > 0, colour + _MARKER * chk[..., None], img)
        img += comp[..., None]
        frames[t] = img
    return np.clip(frames, 0.0, 1.0)


@dataclass
class Split:
    videos: np.ndarray  # (N, T, H, W, 3) float32
    actions: np.ndarray  # (N,) int
    attributes: np.ndarray  # (N, M) int
    seeds: np.ndarray  # (N,) int

    def __len__(self):
        return len(self.actions)

    def specs(self):
        return [ClipSpec(int(a), tuple(m), int(s)) for a, m, s in zip(self.actions, self.attributes, self.seeds)]

    def subset(self, idx) -> "Split":
        return Split(self.videos[idx], self.actions[idx], self.attributes[idx], self.seeds[idx])


@dataclass
class Dataset:
    train: Split
    test: Split
    master_seed: int = 0
    meta: dict = field(default_factory=dict)

    def prevalence(self, split: str = "test") -> np.ndarray:
        return getattr(self, split).attributes.mean(axis=0)


def _balanced_labels(rng, n):
    actions = rng.permutation(np.arange(n) % K_ACTIONS)
    attrs = np.stack([rng.permutation(np.arange(n) % 2) for _ in range(M_ATTRIBUTES)], axis=1)
    return actions, attrs


def make_split(n: int, first_seed: int, label_seed) -> Split:
    rng = np.random.default_rng(label_seed)
    actions, attrs = _balanced_labels(rng, n)
    seeds = first_seed + np.arange(n)
    videos = np.stack([render(ClipSpec(int(a), tuple(m), int(s))) for a, m, s in zip(actions, attrs, seeds)])
    return Split(videos.astype(np.float32), actions, attrs, seeds)


def make_dataset(n_train: int = 512, n_test: int = 128, master_seed: int = 0, out=None) -> Dataset:
    """Train/test clips with disjoint seed ranges and balanced labels.

    With ``out`` the clips are also written there as tensor files together
    with a ``manifest.jsonl``.
    """
    need = K_ACTIONS * M_ATTRIBUTES
    if n_train < need or n_test < need:
        raise ValueError(f"each split needs at least {need} clips")
    base = int(master_seed) * 1_000_000
    train = make_split(n_train, base, [master_seed, 0])
    test = make_split(n_test, base + n_train, [master_seed, 1])
    ds = Dataset(train, test, master_seed, {"n_train": n_train, "n_test": n_test})
    if out is not None:
        from .io import save_dataset

        save_dataset(out, ds)
    return ds
