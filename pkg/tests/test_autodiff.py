import numpy as np
import pytest

import sketchcorr.autodiff as ad
from sketchcorr.autodiff import AutodiffError, Tensor

from oracles import central_difference


def param(shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=shape, scale=scale), requires_grad=True)


def check_gradients(build_loss, tensors, h=1e-6, rtol=1e-5, n_samples=10, seed=0):
    """Compare backward() grads against central differences on random entries."""
    loss = build_loss()
    loss.backward()
    rng = np.random.default_rng(seed)
    for t in tensors:
        assert t.grad is not None and t.grad.shape == t.data.shape
        flat_idx = rng.choice(t.data.size, size=min(n_samples, t.data.size), replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, t.data.shape)
            num = central_difference(lambda: build_loss().item(), t.data, idx, h)
            ana = t.grad[idx]
            assert ana == pytest.approx(num, rel=rtol, abs=1e-7), f"{idx}: {ana} vs {num}"
        t.zero_grad()


class TestTape:
    def test_double_backward_rejected(self):
        x = param((3,))
        loss = ad.tsum(ad.mul(x, x))
        loss.backward()
        with pytest.raises(AutodiffError, match="consumed"):
            loss.backward()

    def test_backward_without_graph_rejected(self):
        with pytest.raises(AutodiffError, match="recorded"):
            Tensor(np.zeros(1)).backward()

    def test_backward_requires_scalar(self):
        x = param((3,))
        with pytest.raises(AutodiffError, match="scalar"):
            ad.mul(x, x).backward()

    def test_no_grad_builds_no_tape(self):
        x = param((3,))
        with ad.no_grad():
            y = ad.tsum(ad.mul(x, x))
        assert y._backward is None and not y.requires_grad

    def test_grad_accumulates_across_uses(self):
        x = param((4,), seed=1)
        loss = ad.tsum(ad.add(ad.mul(x, x), x))  # x used twice
        loss.backward()
        assert np.allclose(x.grad, 2 * x.data + 1, atol=1e-12)

    def test_constant_loss_zero_gradients(self):
        x = param((4,), seed=2)
        loss = ad.tsum(ad.mul(x, Tensor(np.zeros(4))))
        loss.backward()
        assert np.array_equal(x.grad, np.zeros(4))


class TestElementwiseOps:
    def test_add_sub_mul_div(self):
        a, b = param((3, 4), 1), param((3, 4), 2, scale=0.5)
        b.data += 2.0  # keep away from zero for div
        check_gradients(lambda: ad.tsum(ad.mul(ad.div(ad.add(a, b), b), ad.sub(a, b))), [a, b])

    def test_broadcast_bias(self):
        a, b = param((5, 3), 3), param((3,), 4)
        check_gradients(lambda: ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b))), [a, b])

    def test_relu_gradient_off_kink(self):
        a = param((4, 4), 5)
        a.data[np.abs(a.data) < 0.05] += 0.1
        check_gradients(lambda: ad.tsum(ad.mul(ad.relu(a), ad.relu(a))), [a])

    def test_sqrt_and_sum_axis(self):
        a = param((3, 5), 6)
        a.data = np.abs(a.data) + 0.5
        check_gradients(lambda: ad.tsum(ad.sqrt(ad.tsum(ad.mul(a, a), axis=1))), [a])

    def test_mean_matches_manual(self):
        a = param((6,), 7)
        loss = ad.tmean(ad.mul(a, a))
        loss.backward()
        assert np.allclose(a.grad, 2 * a.data / 6, atol=1e-12)

    def test_matmul(self):
        a, b = param((4, 3), 8), param((3, 2), 9)
        check_gradients(lambda: ad.tsum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), [a, b])

    def test_concat_and_take_rows(self):
        a, b = param((3, 4), 10), param((2, 4), 11)
        idx = [4, 0, 2, 2]

        def loss():
            cat = ad.concat([a, b], axis=0)
            rows = ad.take_rows(cat, idx)
            return ad.tsum(ad.mul(rows, rows))

        check_gradients(loss, [a, b])

    def test_reshape(self):
        a = param((2, 6), 12)
        check_gradients(lambda: ad.tsum(ad.mul(ad.reshape(a, (3, 4)), ad.reshape(a, (3, 4)))), [a])


class TestConv2d:
    @pytest.mark.parametrize("stride,pad,kernel", [(1, 1, 3), (2, 1, 3), (1, 0, 4)])
    def test_gradients(self, stride, pad, kernel):
        x = param((2, 8, 8, 3), seed=stride * 7 + pad)
        w = param((kernel, kernel, 3, 5), seed=20 + stride, scale=0.4)

        def loss():
            y = ad.conv2d(x, w, stride=stride, pad=pad)
            return ad.tsum(ad.mul(y, y))

        check_gradients(loss, [x, w], n_samples=8)

    def test_full_kernel_case(self):
        x = param((3, 8, 8, 4), 30)
        w = param((8, 8, 4, 6), 31, scale=0.2)
        check_gradients(lambda: ad.tsum(ad.mul(ad.conv2d(x, w), ad.conv2d(x, w))), [x, w],
                        n_samples=8)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ad.conv2d(Tensor(np.zeros((2, 8, 8, 3))), Tensor(np.zeros((3, 3, 4, 5))))


class TestBatchNorm:
    def test_training_mode_gradient(self):
        x = param((30, 4), 40)
        rm, rv = np.zeros(4), np.ones(4)

        def loss():
            y = ad.batch_norm(x, rm.copy(), rv.copy(), training=True)
            return ad.tsum(ad.mul(y, ad.add(y, Tensor(np.full((30, 4), 0.3)))))

        check_gradients(loss, [x], n_samples=10)

    def test_eval_mode_gradient_and_running_stats(self):
        x = param((20, 3), 41)
        rm, rv = np.full(3, 0.2), np.full(3, 1.5)

        def loss():
            y = ad.batch_norm(x, rm, rv, training=False)
            return ad.tsum(ad.mul(y, y))

        check_gradients(loss, [x], n_samples=6)
        assert np.allclose(rm, 0.2) and np.allclose(rv, 1.5)  # eval never updates

    def test_running_stats_updated_in_training(self):
        x = Tensor(np.random.default_rng(42).normal(2.0, 3.0, (500, 2)))
        rm, rv = np.zeros(2), np.ones(2)
        ad.batch_norm(x, rm, rv, training=True, momentum=1.0)
        assert np.allclose(rm, x.data.mean(0), atol=1e-6)
        assert np.allclose(rv, x.data.var(0), rtol=1e-3)

    def test_4d_channel_statistics(self):
        x = Tensor(np.random.default_rng(1).normal(size=(4, 5, 5, 3)))
        rm, rv = np.zeros(3), np.ones(3)
        y = ad.batch_norm(x, rm, rv, training=True)
        flat = y.data.reshape(-1, 3)
        assert np.allclose(flat.mean(0), 0, atol=1e-6)
        assert np.allclose(flat.var(0), 1, rtol=1e-2)


class TestCompositeHelpers:
    def test_l2_normalize_rows(self):
        x = param((5, 7), 50)
        y = ad.l2_normalize(x, axis=1)
        norms = np.linalg.norm(y.data, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)
        check_gradients(lambda: ad.tsum(ad.mul(ad.l2_normalize(x, axis=1),
                                               Tensor(np.ones((5, 7)) * 0.3))), [x])

    def test_euclidean_distance(self):
        a, b = param((4, 6), 51), param((4, 6), 52)
        d = ad.euclidean_distance(a, b)
        expected = np.linalg.norm(a.data - b.data, axis=1)
        assert np.allclose(d.data, expected, atol=1e-9)
        check_gradients(lambda: ad.tsum(ad.euclidean_distance(a, b)), [a, b])
