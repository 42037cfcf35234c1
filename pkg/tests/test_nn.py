import numpy as np
import pytest

from stylemotion import nn


def _param(shape, seed, name="p"):
    rng = np.random.default_rng(seed)
    return nn.Parameter(rng.normal(scale=0.5, size=shape), name=name)


def test_dense_gradient():
    w = _param((4, 8), 0, "w")
    b = _param((8,), 1, "b")
    x = nn.Tensor(np.random.default_rng(2).normal(size=(5, 4)))

    def forward():
        h = x.matmul(w.tensor) + b.tensor
        return (h * h).mean()

    err, loc = nn.gradient_check(forward, [w, b], eps=1e-5)
    assert err < 1e-7, loc


def test_elu_and_layernorm_gradient():
    w = _param((6, 6), 3, "w")
    x = nn.Tensor(np.random.default_rng(4).normal(size=(7, 6)))

    def forward():
        h = nn.layer_norm(x.matmul(w.tensor)).elu()
        return (h * h).sum()

    err, loc = nn.gradient_check(forward, [w], eps=1e-5)
    assert err < 1e-6, loc


def test_softmax_gradient():
    w = _param((5, 3), 5, "w")
    x = nn.Tensor(np.random.default_rng(6).normal(size=(4, 5)))

    def forward():
        return (nn.softmax(x.matmul(w.tensor)) * nn.Tensor(np.arange(3.0))).sum()

    err, loc = nn.gradient_check(forward, [w], eps=1e-5)
    assert err < 1e-6, loc


def test_conv_maxpool_gradient():
    filt = _param((16, 8, 9), 7, "filt")  # (out, in, width)
    bias = _param((16,), 8, "bias")
    x = nn.Tensor(np.random.default_rng(9).normal(size=(8, 30)))  # (C_in, T)

    def forward():
        h = nn.maxpool1d(nn.conv1d_same(x, filt.tensor, bias.tensor).elu(), 2)
        return (h * h).mean()

    err, loc = nn.gradient_check(forward, [filt, bias], eps=2e-4, max_per_tensor=60)
    assert err < 1e-5, loc


def test_layer_norm_statistics():
    x = nn.Tensor(np.random.default_rng(10).normal(3.0, 5.0, size=(9, 32)))
    out = nn.layer_norm(x).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    assert np.allclose(out.std(axis=-1), 1.0, atol=1e-3)


def test_fault_injection_caught():
    """A deliberately wrong analytic gradient must produce a large reported error.

    The analytic pass sees the bias applied twice while the FD twin sees it
    once, so the analytic gradient is exactly 2x the true one.
    """
    w = _param((4, 4), 11, "w")
    b = nn.Parameter(np.random.default_rng(12).normal(size=(4,)), name="b")
    x = nn.Tensor(np.random.default_rng(13).normal(size=(6, 4)))

    def analytic_forward():
        h = x.matmul(w.tensor) + b.tensor + b.tensor
        return (h * h).mean()

    def fd_forward():
        h = x.matmul(w.tensor) + b.tensor
        return (h * h).mean()

    err, loc = nn.gradient_check(
        analytic_forward, [b], eps=1e-5, fd_forward=fd_forward, fd_params=[b]
    )
    assert err > 1e-2


def test_nondeterministic_forward_rejected():
    p = _param((3,), 14)
    rng = np.random.default_rng(15)

    def forward():
        return (p.tensor * nn.Tensor(rng.normal(size=3))).sum()

    with pytest.raises(RuntimeError):
        nn.gradient_check(forward, [p])


def test_adam_first_step_is_signed_lr():
    """With bias correction, step one moves each weight by ~lr*sign(grad)."""
    p = _param((64,), 16)
    before = p.data.copy()
    x = nn.Tensor(np.random.default_rng(17).normal(size=(64,)))
    loss = (p.tensor * x).sum()
    loss.backward()
    g = p.grad.copy()
    nn.adam_step([p], lr=1e-3)
    step = p.data - before
    assert np.allclose(step, -1e-3 * np.sign(g), atol=1e-6)
    assert p.grad is None or np.all(p.grad == 0.0)
    assert p.step_count == 1


def test_adam_matches_reference_formula():
    rng = np.random.default_rng(18)
    p = nn.Parameter(rng.normal(size=(32,)), name="p")
    ref = p.data.copy()
    m = np.zeros(32)
    v = np.zeros(32)
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    for t in range(1, 6):
        g = rng.normal(size=(32,))
        loss = (p.tensor * nn.Tensor(g)).sum()
        loss.backward()
        nn.adam_step([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        ref = ref - lr * mhat / (np.sqrt(vhat) + eps)
    assert np.allclose(p.data, ref, atol=1e-10)


def test_adam_skips_unused_parameters():
    p = _param((3,), 19)
    before = p.data.copy()
    nn.adam_step([p])
    assert np.array_equal(p.data, before)
    assert p.step_count == 1


def test_dropout_inference_identity():
    x = nn.Tensor(np.random.default_rng(20).normal(size=(50, 10)))
    out = nn.dropout(x, 0.5, training=False, rng=np.random.default_rng(0))
    assert np.array_equal(out.data, x.data)


def test_dropout_training_scales():
    rng = np.random.default_rng(21)
    x = nn.Tensor(np.ones((2000, 16)))
    out = nn.dropout(x, 0.3, training=True, rng=rng).data
    kept = out[out != 0]
    assert np.allclose(kept, 1.0 / 0.7, atol=1e-12)
    drop_rate = np.mean(out == 0)
    assert drop_rate == pytest.approx(0.3, abs=0.02)
    # inverted scaling keeps the expectation near the input
    assert out.mean() == pytest.approx(1.0, abs=0.03)


def test_shape_error_on_bad_matmul():
    a = nn.Tensor(np.zeros((3, 4)))
    b = nn.Tensor(np.zeros((5, 6)))
    with pytest.raises(nn.ShapeError):
        a.matmul(b)


def test_concat_gradient():
    a = _param((3, 2), 22, "a")
    b = _param((4, 2), 23, "b")

    def forward():
        cat = nn.concat([a.tensor, b.tensor], axis=0)
        return (cat * cat).sum()

    err, loc = nn.gradient_check(forward, [a, b], eps=1e-5)
    assert err < 1e-7, loc


def test_broadcast_add_gradient():
    a = _param((5, 4), 24, "a")
    b = _param((4,), 25, "b")

    def forward():
        return ((a.tensor + b.tensor) * (a.tensor + b.tensor)).mean()

    err, loc = nn.gradient_check(forward, [a, b], eps=1e-5)
    assert err < 1e-7, loc
