"""Small convolutional networks for the action classifier and the attribute adversary.

Parameters live in plain dicts of numpy arrays so they can be copied, saved
and swapped; ``forward`` accepts either arrays or autodiff Tensors.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .synthdata import K_ACTIONS, M_ATTRIBUTES

EMBED_DIM = 32
DIFF_GAIN = 4.0


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _conv_init(rng, cin, cout, k=3):
    return _he(rng, (k, k, cin, cout), k * k * cin), np.zeros(cout)


class Network:
    """A parameter dict plus a forward function."""

    def __init__(self, params: dict):
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}

    def tensors(self, requires_grad=True) -> dict:
        return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def copy(self):
        out = type(self).__new__(type(self))
        out.__dict__.update(self.__dict__)
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def init_kwargs(self) -> dict:
        """Constructor arguments (besides ``params``) that rebuild this network."""
        raise NotImplementedError


def _frames(videos):
    v = ad.as_tensor(videos)
    b, t, h, w, c = v.shape
    return v, b, t, h, w, c


class ActionClassifier(Network):
    """Per-frame encoder over ``[X_t, X_{t+1} - X_t]`` with a temporal-mean head.

    Each frame is paired with its forward difference (the last frame repeats),
    encoded by two stride-2 convolutions and global mean pooling into a
    ``D``-dimensional embedding. Logits come from the temporal mean of the
    embeddings.
    """

    def __init__(self, width=16, embed=EMBED_DIM, n_actions=K_ACTIONS, seed=0, params=None, kernels=(3, 5)):
        self.width, self.embed, self.n_actions = width, embed, n_actions
        if params is None:
            rng = np.random.default_rng(seed)
            w1, b1 = _conv_init(rng, 6, width, kernels[0])
            w2, b2 = _conv_init(rng, width, embed, kernels[1])
            params = dict(w1=w1, b1=b1, w2=w2, b2=b2, wh=_he(rng, (embed, n_actions), embed) / 2, bh=np.zeros(n_actions))
        super().__init__(params)

    def init_kwargs(self) -> dict:
        k = (self.params["w1"].shape[0], self.params["w2"].shape[0])
        return {"width": self.width, "embed": self.embed, "n_actions": self.n_actions, "kernels": list(k)}

    def embed_frames(self, videos, p=None):
        """Embeddings ``(B, T, D)`` for ``(B, T, H, W, 3)`` videos."""
        p = self.params if p is None else p
        v, b, t, h, w, c = _frames(videos)
        nxt = ad.concat([v[:, 1:], v[:, -1:]], axis=1)
        x = ad.concat([v, (nxt - v) * DIFF_GAIN], axis=4)
        x = ad.reshape(x, (b * t, h, w, 2 * c))
        x = ad.relu(ad.conv2d(x, p["w1"], p["b1"], stride=2, pad=p["w1"].shape[0] // 2))
        x = ad.relu(ad.conv2d(x, p["w2"], p["b2"], stride=2, pad=p["w2"].shape[0] // 2))
        return ad.reshape(ad.mean(x, axis=(1, 2)), (b, t, self.embed))

    def forward(self, videos, p=None):
        """Return ``(logits (B, K), embeddings (B, T, D))``."""
        p = self.params if p is None else p
        e = self.embed_frames(videos, p)
        logits = ad.matmul(ad.mean(e, axis=1), p["wh"]) + p["bh"]
        return logits, e

    def predict_proba(self, videos, batch=64):
        out = []
        for i in range(0, len(videos), batch):
            z = self.forward(np.asarray(videos[i : i + batch], dtype=float))[0].value
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            out.append(e / e.sum(axis=1, keepdims=True))
        return np.concatenate(out)

    def predict(self, videos, batch=64):
        return self.predict_proba(videos, batch).argmax(axis=1)


class AttributeAdversary(Network):
    """Per-frame convolutional encoder, ``M`` sigmoid logits, max over frames."""

    def __init__(self, width=12, n_attributes=M_ATTRIBUTES, seed=0, params=None, stride=1):
        self.width, self.n_attributes, self.stride = width, n_attributes, stride
        if params is None:
            rng = np.random.default_rng(seed)
            w1, b1 = _conv_init(rng, 3, width)
            w2, b2 = _conv_init(rng, width, 2 * width)
            params = dict(
                w1=w1, b1=b1, w2=w2, b2=b2,
                wh=_he(rng, (2 * width, n_attributes), 2 * width) / 2, bh=np.zeros(n_attributes),
            )
        super().__init__(params)

    def init_kwargs(self) -> dict:
        return {"width": self.width, "n_attributes": self.n_attributes, "stride": self.stride}

    def frame_logits(self, videos, p=None):
        p = self.params if p is None else p
        v, b, t, h, w, c = _frames(videos)
        x = ad.reshape(v, (b * t, h, w, c))
        x = ad.relu(ad.conv2d(x, p["w1"], p["b1"], stride=self.stride, pad=1))
        x = ad.relu(ad.conv2d(x, p["w2"], p["b2"], stride=2, pad=1))
        n, h2, w2, c2 = x.shape
        pooled = ad.max(ad.reshape(x, (n, h2 * w2, c2)), axis=1)
        z = ad.matmul(pooled, p["wh"]) + p["bh"]
        return ad.reshape(z, (b, t, self.n_attributes))

    def forward(self, videos, p=None):
        """Clip logits ``(B, M)``: the per-attribute maximum over frames."""
        return ad.max(self.frame_logits(videos, p), axis=1)

    def decision_function(self, videos, batch=64):
        return np.concatenate(
            [self.forward(np.asarray(videos[i : i + batch], dtype=float)).value for i in range(0, len(videos), batch)]
        )


def augment(videos, rng) -> np.ndarray:
    """Random horizontal flip, vertical flip and time reversal per clip.

    All three keep every action class of the synthetic set.
    """
    v = np.array(videos, dtype=float)
    flips = rng.integers(0, 2, size=(len(v), 3)).astype(bool)
    for i, (fh, fv, ft) in enumerate(flips):
        if fh:
            v[i] = v[i][:, :, ::-1]
        if fv:
            v[i] = v[i][:, ::-1]
        if ft:
            v[i] = v[i][::-1]
    return v


def classifier_loss(logits, embeddings, actions, tsm_ref=None, tsm_scale=1.0):
    """Cross-entropy plus the TSM mismatch ``mean((T' - T)^2) / tsm_scale``.

    The TSM term is skipped when ``tsm_ref`` is None.
    """
    ce = ad.softmax_ce(logits, actions)
    if tsm_ref is None:
        return ce
    tsm = ad.neg(ad.pairwise_sqdist(embeddings))
    diff = tsm - tsm_ref
    return ce + ad.mean(diff * diff) * (1.0 / tsm_scale)


def adversary_loss(logits, attributes):
    return ad.sigmoid_ce(logits, attributes)
