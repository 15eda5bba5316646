"""A small reverse-mode autodiff engine over numpy arrays.

Every primitive records its parents and a vector-Jacobian product. For complex
values the stored gradient of a real loss ``L`` is ``dL/dRe + i dL/dIm``
(the conjugate Wirtinger convention), so real inner products
``Re <a, b>`` are preserved by every adjoint.
"""

from __future__ import annotations

import builtins
import itertools

import numpy as np

from . import metrics as _m

_ids = itertools.count()


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "vjp", "op", "id")

    def __init__(self, value, requires_grad=False, parents=(), vjp=None, op="leaf"):
        v = np.asarray(value)
        if not np.iscomplexobj(v):
            v = v.astype(float, copy=False)
        self.value = v
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __neg__ = lambda a: neg(a)
    __matmul__ = lambda a, b: matmul(a, b)
    __getitem__ = lambda a, idx: getitem(a, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, vjp, op):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, vjp, op)
    return Tensor(value, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _fit(g, ref: Tensor):
    g = _unbroadcast(g, ref.shape)
    if not np.iscomplexobj(ref.value):
        g = g.real
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, (a, b), lambda g: (_fit(g, a), _fit(g, b)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value - b.value, (a, b), lambda g: (_fit(g, a), _fit(-g, b)), "sub")


def neg(a):
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, b),
        lambda g: (_fit(g * np.conj(bv), a), _fit(g * np.conj(av), b)),
        "mul",
    )


def div(a, b):
    """Real division."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _node(out, (a, b), lambda g: (_fit(g / bv, a), _fit(-g * out / bv, b)), "div")


def matmul(a, b):
    """Real matrix product; ``a`` may carry leading batch axes, ``b`` is 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

    def vjp(g):
        ga = g @ bv.T
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _node(av @ bv, (a, b), vjp, "matmul")


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _node(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx):
    a = as_tensor(a)

    key = idx if isinstance(idx, tuple) else (idx,)
    basic = builtins.all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in key)

    def vjp(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), vjp, "getitem")


def concat(ts, axis):
    ts = [as_tensor(t) for t in ts]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(
        np.concatenate([t.value for t in ts], axis=axis),
        ts,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
        "concat",
    )


def stack(ts, axis=0):
    ts = [as_tensor(t) for t in ts]
    return _node(
        np.stack([t.value for t in ts], axis=axis),
        ts,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
        "stack",
    )


# ------------------------------------------------------------ nonlinearities


def relu(a):
    a = as_tensor(a)
    on = a.value > 0
    return _node(np.where(on, a.value, 0.0), (a,), lambda g: (g * on,), "relu")


def clamp(a, lo=0.0, hi=1.0, eps=1e-6):
    """Clamp with a pass-through gradient on ``[lo - eps, hi + eps]``, zero outside."""
    a = as_tensor(a)
    v = a.value
    inside = (v >= lo - eps) & (v <= hi + eps)
    return _node(np.clip(v, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def max(a, axis):  # noqa: A001 - mirrors numpy
    """Maximum along one axis; the gradient goes to the first maximiser."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.value, axis=axis), axis)
    out = np.take_along_axis(a.value, idx, axis=axis)

    def vjp(g):
        full = np.zeros(a.shape)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _node(np.squeeze(out, axis), (a,), vjp, "max")


# ------------------------------------------------------------ complex / FFT


def expi(theta):
    """``exp(i * theta)`` for real ``theta``."""
    theta = as_tensor(theta)
    z = np.exp(1j * theta.value)
    return _node(z, (theta,), lambda g: (np.imag(np.conj(z) * g),), "expi")


def dft2(a):
    """Unitary 2-D DFT over the last two axes."""
    a = as_tensor(a)
    return _node(
        np.fft.fft2(a.value, norm="ortho"),
        (a,),
        lambda g: (_fit(np.fft.ifft2(g, norm="ortho"), a),),
        "dft2",
    )


def idft2(a):
    a = as_tensor(a)
    return _node(
        np.fft.ifft2(a.value, norm="ortho"),
        (a,),
        lambda g: (_fit(np.fft.fft2(g, norm="ortho"), a),),
        "idft2",
    )


def abs2(z):
    """``|z|^2`` as a real tensor."""
    z = as_tensor(z)
    zv = z.value
    return _node((zv * np.conj(zv)).real, (z,), lambda g: (_fit(2.0 * g * zv, z),), "abs2")


# ------------------------------------------------------------- convolutions


def kernel_to_otf(k: np.ndarray, h: int, w: int) -> np.ndarray:
    """Embed ``(C, P, P)`` centred kernels in ``(C, h, w)`` and return rFFTs."""
    c, p, _ = k.shape
    pad = np.zeros((c, h, w))
    pad[:, :p, :p] = k
    pad = np.roll(pad, (-(p // 2), -(p // 2)), axis=(1, 2))
    return np.fft.rfft2(pad)


def _otf_T(g: np.ndarray, p: int) -> np.ndarray:
    """Adjoint of the embedding used by :func:`kernel_to_otf` (spatial part)."""
    g = np.roll(g, (p // 2, p // 2), axis=(-2, -1))
    return g[..., :p, :p]


def conv_fft(x, k):
    """Circular per-channel convolution of ``(N, H, W, C)`` images with
    ``(C, P, P)`` kernels, computed in the frequency domain."""
    x, k = as_tensor(x), as_tensor(k)
    xv, kv = x.value, k.value
    n, h, w, c = xv.shape
    if kv.ndim != 3 or kv.shape[0] != c or kv.shape[1] != kv.shape[2]:
        raise ValueError(f"kernel shape {kv.shape} does not match {c} channels")
    p = kv.shape[1]
    if p > h or p > w:
        raise ValueError(f"kernel {p}x{p} larger than image {h}x{w}")
    xf = np.fft.rfft2(np.moveaxis(xv, -1, 1))  # (N, C, H, W//2+1)
    kf = kernel_to_otf(kv, h, w)
    out = np.moveaxis(np.fft.irfft2(xf * kf, s=(h, w)), 1, -1)

    def vjp(g):
        gf = np.fft.rfft2(np.moveaxis(g, -1, 1))
        gx = np.moveaxis(np.fft.irfft2(gf * np.conj(kf), s=(h, w)), 1, -1) if x.requires_grad else None
        gk = None
        if k.requires_grad:
            corr = np.fft.irfft2((gf * np.conj(xf)).sum(axis=0), s=(h, w))
            gk = _otf_T(corr, p)
        return gx, gk

    return _node(out, (x, k), vjp, "conv_fft")


def _pad_hw(v, pad):
    return np.pad(v, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else v


def conv2d(x, w, b=None, stride=1, pad=0):
    """Spatial convolution, NHWC input and ``(kh, kw, Cin, Cout)`` weights."""
    x, w = as_tensor(x), as_tensor(w)
    xv, wv = x.value, w.value
    kh, kw, cin, cout = wv.shape
    if xv.ndim != 4 or xv.shape[-1] != cin:
        raise ValueError(f"conv2d expects (N, H, W, {cin}) input, got {xv.shape}")
    xp = _pad_hw(xv, pad)
    n, hp, wp, _ = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : stride * ho : stride, : stride * wo : stride]  # (n, ho, wo, cin, kh, kw)
    out = np.tensordot(win, wv, axes=([4, 5, 3], [0, 1, 2]))
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.value
        parents.append(b)

    def vjp(g):
        gw = gx = None
        if w.requires_grad:
            gw = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += g @ wv[i, j].T
            gx = gxp[:, pad : hp - pad, pad : wp - pad, :] if pad else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return tuple(grads)

    return _node(out, parents, vjp, "conv2d")


# ------------------------------------------------------------------- losses


def softmax_ce(logits, labels):
    """Mean softmax cross-entropy over the batch; ``labels`` are integers."""
    z = as_tensor(logits)
    labels = np.asarray(labels)
    lp = _m.log_softmax(z.value)
    b = labels.shape[0]
    loss = -lp[np.arange(b), labels].mean()

    def vjp(g):
        p = np.exp(lp)
        p[np.arange(b), labels] -= 1.0
        return (g * p / b,)

    return _node(loss, (z,), vjp, "softmax_ce")


def sigmoid_ce(logits, labels):
    """Mean independent sigmoid cross-entropy over attributes and batch."""
    z = as_tensor(logits)
    y = np.asarray(labels, dtype=float)
    zv = z.value
    loss = np.mean(_m.softplus(zv) - y * zv)

    def vjp(g):
        s = 0.5 * (1.0 + np.tanh(0.5 * zv))
        return (g * (s - y) / zv.size,)

    return _node(loss, (z,), vjp, "sigmoid_ce")


def ssim(x, y):
    """Mean SSIM over a batch of ``(N, H, W, C)`` images (differentiable in both)."""
    x, y = as_tensor(x), as_tensor(y)
    xv, yv = x.value, y.value
    smap, (mx, my, a1, a2, b1, b2) = _m.ssim_terms(xv, yv)
    cnt = smap.size
    win = _m.gaussian_window()

    def vjp(g):
        s = smap * (g / cnt)
        d_sxy = 2.0 * s / a2
        d_sq = -s / b2
        d_mx = s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2)
        d_my = s * (2 * mx / a1 - 2 * mx / a2 - 2 * my / b1 + 2 * my / b2)
        t_sxy = _m.filter_valid_T(d_sxy, win)
        t_sq = _m.filter_valid_T(d_sq, win)
        gx = _m.filter_valid_T(d_mx, win) + 2 * xv * t_sq + yv * t_sxy
        gy = _m.filter_valid_T(d_my, win) + 2 * yv * t_sq + xv * t_sxy
        return gx, gy

    return _node(smap.mean(), (x, y), vjp, "ssim")


def pairwise_sqdist(e):
    """``||e_i - e_j||^2`` for ``(..., T, D)`` sequences -> ``(..., T, T)``."""
    e = as_tensor(e)
    ev = e.value
    diff = ev[..., :, None, :] - ev[..., None, :, :]
    out = np.einsum("...ijd,...ijd->...ij", diff, diff)

    def vjp(g):
        gs = g + np.swapaxes(g, -1, -2)
        return (2.0 * (gs.sum(axis=-1)[..., None] * ev - gs @ ev),)

    return _node(out, (e,), vjp, "pairwise_sqdist")


# ----------------------------------------------------------------- backward


class Tape:
    """Topologically ordered record of the nodes that lead to an output."""

    def __init__(self, output: Tensor):
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and p.id not in seen:
                    stack.append((p, False))
        self.nodes = order  # parents before children
        self.output = output

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, grad=None) -> Tape:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every reachable leaf."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor produced by a forward pass")
    if not loss.requires_grad:
        raise RuntimeError("backward called on a tensor with no recorded graph (run the forward pass first)")
    if grad is None:
        if loss.value.size != 1:
            raise ValueError("backward without an explicit seed needs a scalar loss")
        grad = np.ones_like(loss.value)
    tape = Tape(loss)
    grads = {loss.id: np.asarray(grad)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if gp is None or not p.requires_grad:
                continue
            grads[p.id] = grads[p.id] + gp if p.id in grads else gp
    return tape


def grad(fn, *leaves):
    """Gradients of scalar ``fn(*leaves)`` with respect to array ``leaves``."""
    ts = [Tensor(np.array(v, dtype=float), requires_grad=True) for v in leaves]
    out = fn(*ts)
    backward(out)
    return float(out.value), [t.grad if t.grad is not None else np.zeros(t.shape) for t in ts]


def grad_check(f, leaves, eps=1e-6, floor=1e-2):
    """Worst relative error between reverse-mode and central-difference gradients.

    ``f`` maps a list of Tensors to a scalar Tensor. Each coordinate is judged
    relative to its own magnitude, but never on a scale below
    ``floor * max|g|`` (tiny entries are dominated by difference noise).
    """
    leaves = [np.array(v, dtype=float) for v in leaves]

    def value(arrs):
        return float(f([Tensor(a) for a in arrs]).value)

    if value(leaves) != value(leaves):
        raise ValueError("grad_check requires a deterministic function")
    ts = [Tensor(a.copy(), requires_grad=True) for a in leaves]
    backward(f(ts))
    ad = [t.grad if t.grad is not None else np.zeros(t.shape) for t in ts]
    fd = []
    for li, a in enumerate(leaves):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in leaves]
            minus = [x.copy() for x in leaves]
            plus[li][idx] += eps
            minus[li][idx] -= eps
            g[idx] = (value(plus) - value(minus)) / (2 * eps)
        fd.append(g)
    a_all = np.concatenate([g.ravel() for g in ad])
    f_all = np.concatenate([g.ravel() for g in fd])
    scale = np.maximum(np.maximum(np.abs(a_all), np.abs(f_all)), floor * builtins.max(np.abs(f_all).max(), 1e-300))
    return float(np.max(np.abs(a_all - f_all) / scale))
