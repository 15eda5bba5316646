import numpy as np
import pytest

from privlens import autodiff as ad
from privlens.autodiff import Tensor, backward, grad_check


def _real_inner(a, b):
    return float(np.real(np.vdot(a, b)))


def jvp_fd(fn, xs, vs, h=2e-4):
    """Fourth-order central difference of ``fn`` along direction ``vs``."""

    def at(t):
        return fn(*[Tensor(x + t * v) for x, v in zip(xs, vs)]).value

    return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)


def vjp(fn, xs, w):
    ts = [Tensor(x, requires_grad=True) for x in xs]
    out = fn(*ts)
    backward(out, grad=w)
    return [t.grad if t.grad is not None else np.zeros_like(t.value) for t in ts]


def like(rng, x):
    v = rng.standard_normal(x.shape)
    if np.iscomplexobj(x):
        v = v + 1j * rng.standard_normal(x.shape)
    return v


def adjoint_gap(fn, xs, seed=0, h=2e-4):
    rng = np.random.default_rng(seed)
    vs = [like(rng, x) for x in xs]
    jv = jvp_fd(fn, xs, vs, h)
    w = like(rng, np.asarray(jv))
    jtw = vjp(fn, xs, w)
    lhs = _real_inner(jv, w)
    rhs = sum(_real_inner(v, g) for v, g in zip(vs, jtw))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)


def _images(rng, n=2, h=13, w=14, c=3):
    return rng.uniform(0.1, 0.9, size=(n, h, w, c))


rng0 = np.random.default_rng(42)
_ATTR = (rng0.uniform(size=(3, 5)) > 0.5).astype(float)
CASES = {
    "add": (lambda a, b: a + b, [rng0.standard_normal((3, 4)), rng0.standard_normal((4,))]),
    "sub": (lambda a, b: a - b, [rng0.standard_normal((3, 4)), rng0.standard_normal((3, 1))]),
    "mul": (lambda a, b: a * b, [rng0.standard_normal((3, 4)), rng0.standard_normal((3, 4))]),
    "mul_complex": (
        lambda a, b: a * b,
        [rng0.standard_normal((4, 4)) + 1j * rng0.standard_normal((4, 4)), rng0.standard_normal((4, 4))],
    ),
    "div": (lambda a, b: a / b, [rng0.standard_normal((5,)), rng0.uniform(1, 2, (5,))]),
    "matmul": (lambda a, b: a @ b, [rng0.standard_normal((2, 3, 4)), rng0.standard_normal((4, 5))]),
    "sum_axis": (lambda a: ad.sum(a, axis=1), [rng0.standard_normal((3, 4, 2))]),
    "mean_pool": (lambda a: ad.mean(a, axis=(1, 2)), [rng0.standard_normal((2, 4, 4, 3))]),
    "reshape_getitem": (lambda a: ad.reshape(a, (6, 4))[1:5, ::2], [rng0.standard_normal((2, 3, 4))]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [rng0.standard_normal((2, 3)), rng0.standard_normal((2, 2))]),
    "relu": (ad.relu, [rng0.standard_normal((4, 5))]),
    "clamp": (ad.clamp, [rng0.uniform(-0.5, 1.5, (6, 6))]),
    "max": (lambda a: ad.max(a, axis=1), [rng0.standard_normal((3, 5, 2))]),
    "expi": (ad.expi, [rng0.standard_normal((4, 4))]),
    "dft2": (ad.dft2, [rng0.standard_normal((3, 8, 8)) + 1j * rng0.standard_normal((3, 8, 8))]),
    "idft2": (ad.idft2, [rng0.standard_normal((8, 6)) + 1j * rng0.standard_normal((8, 6))]),
    "abs2": (ad.abs2, [rng0.standard_normal((5, 5)) + 1j * rng0.standard_normal((5, 5))]),
    "conv_fft": (ad.conv_fft, [_images(rng0, h=12, w=10), rng0.uniform(0, 1, (3, 5, 5))]),
    "conv2d": (
        lambda x, w, b: ad.conv2d(x, w, b, stride=2, pad=1),
        [rng0.standard_normal((2, 9, 8, 3)), rng0.standard_normal((3, 3, 3, 4)), rng0.standard_normal((4,))],
    ),
    "conv2d_stride1": (
        lambda x, w, b: ad.conv2d(x, w, b, stride=1, pad=2),
        [rng0.standard_normal((2, 7, 6, 2)), rng0.standard_normal((5, 5, 2, 3)), rng0.standard_normal((3,))],
    ),
    "softmax_ce": (lambda z: ad.softmax_ce(z, np.array([0, 2, 1])), [rng0.standard_normal((3, 4))]),
    "sigmoid_ce": (
        lambda z: ad.sigmoid_ce(z, _ATTR),
        [rng0.standard_normal((3, 5))],
    ),
    "ssim": (ad.ssim, [_images(rng0), _images(rng0)]),
    "pairwise_sqdist": (ad.pairwise_sqdist, [rng0.standard_normal((2, 6, 4))]),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_adjoint(name):
    fn, xs = CASES[name]
    for seed in range(3):
        assert adjoint_gap(fn, xs, seed) < 1e-8, name


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == 6.0


def test_linear_chain():
    x = Tensor(np.array(2.5), requires_grad=True)
    backward(3.0 * x)
    assert x.grad == 3.0


def test_disconnected_leaf_gets_zero():
    x = Tensor(np.ones(3), requires_grad=True)
    y = Tensor(np.ones(3), requires_grad=True)
    val, (gx, gy) = ad.grad(lambda a, b: ad.sum(a * a), np.ones(3), np.ones(3))
    assert np.all(gy == 0)
    assert np.allclose(gx, 2.0)
    assert x.grad is None and y.grad is None


def test_backward_before_forward_rejected():
    with pytest.raises(RuntimeError):
        backward(Tensor(np.array(1.0)))


def test_repeated_backward_after_zeroing_is_idempotent():
    w = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    grads = []
    for _ in range(3):
        w.zero_grad()
        backward(ad.sum(ad.relu(w) * w))
        grads.append(w.grad.copy())
    assert all(np.array_equal(grads[0], g) for g in grads)


def test_dft_unitarity_inner_product():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    y = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    fx = np.fft.fft2(x, norm="ortho")
    fy_adj = np.fft.ifft2(y, norm="ortho")
    assert abs(np.vdot(fx, y) - np.vdot(x, fy_adj)) < 1e-10


def test_grad_check_quadratic_form():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 4))
    m = Tensor(a @ a.T)

    def f(ts):
        (x,) = ts
        return ad.sum(x * ad.reshape(ad.matmul(ad.reshape(x, (1, 4)), m), (4,)))

    assert grad_check(f, [rng.standard_normal(4)], eps=1e-5) < 1e-8


def test_grad_check_rejects_nondeterministic():
    rng = np.random.default_rng()

    def f(ts):
        return ad.sum(ts[0] * rng.standard_normal())

    with pytest.raises(ValueError):
        grad_check(f, [np.ones(2)])


def test_ssim_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, (1, 16, 16, 1))
    delta = 0.1 * rng.standard_normal((1, 16, 16, 1))
    xt = Tensor(x)
    err = grad_check(lambda ts: ad.ssim(xt, xt + ts[0]), [delta], eps=1e-6)
    assert err < 1e-4


def test_tape_visits_each_node_once():
    x = Tensor(np.ones(2), requires_grad=True)
    y = x * x
    z = y + y
    loss = ad.sum(z * y)
    tape = backward(loss)
    ids = [n.id for n in tape.nodes]
    assert len(ids) == len(set(ids))
    # d/dx (2 x^2 * x^2) = 8 x^3
    assert np.allclose(x.grad, 8.0)


def test_replay_is_bit_deterministic():
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, (2, 12, 12, 3))
    k = rng.uniform(0, 1, (3, 5, 5))

    def run():
        kt = Tensor(k, requires_grad=True)
        backward(ad.ssim(Tensor(x), ad.conv_fft(x, kt)))
        return kt.grad

    assert np.array_equal(run(), run())
