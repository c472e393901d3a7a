import numpy as np
import pytest

from celltransit.errors import (
    CheckpointError,
    ConfigError,
    PoisonedUpdateError,
    ShapeError,
)
from celltransit.nn import (
    BatchNorm,
    Conv2d,
    Linear,
    ParamStore,
    Tape,
    Tensor,
    adam_step,
    add,
    batchnorm,
    concat,
    conv2d,
    global_avg_pool,
    gradient_check,
    linear,
    load_weights,
    maxpool2d,
    relu,
    save_weights,
    sgd_step,
    softmax_cross_entropy,
)
from celltransit.nn.layers import Module, RunningStats
from celltransit.nn.tensor import TapeError


def rand(shape, rng, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def scalarize(t):
    # reduce any tensor to a scalar with fixed random weights so gradient
    # checks exercise every output element
    rng = np.random.default_rng(123)
    w = rng.normal(size=t.shape)

    def weighted_sum(x):
        out = Tensor(np.asarray(np.sum(x.data * w)), requires_grad=True)
        from celltransit.nn.tensor import active_tape

        tape = active_tape()
        if tape is not None and x.requires_grad:
            def backward():
                x.accumulate(out.grad * w)
            tape.record(out, backward)
        return out

    return weighted_sum(t)


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        w = Tensor(np.eye(3))
        b = Tensor(np.zeros(3))
        assert np.allclose(linear(x, w, b).data, x.data)

    def test_zero_input_gives_bias(self):
        x = Tensor(np.zeros((4, 3)))
        w = Tensor(np.ones((3, 2)))
        b = Tensor(np.array([1.0, -2.0]))
        out = linear(x, w, b)
        assert np.allclose(out.data, np.tile([1.0, -2.0], (4, 1)))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_gradcheck(self):
        rng = np.random.default_rng(0)
        x, w, b = rand((5, 4), rng), rand((4, 3), rng), rand((3,), rng)
        rep = gradient_check(lambda: scalarize(linear(x, w, b)), [x, w, b],
                             tolerance=1e-6, n_samples=35)
        assert rep.passed, str(rep)


class TestConv2d:
    def test_one_by_one_identity(self):
        x = Tensor(np.random.default_rng(1).normal(size=(2, 1, 5, 5)))
        k = Tensor(np.ones((1, 1, 1, 1)))
        assert np.allclose(conv2d(x, k).data, x.data)

    def test_output_size_formula(self):
        x = Tensor(np.zeros((1, 1, 64, 64)))
        k = Tensor(np.zeros((8, 1, 7, 7)))
        out = conv2d(x, k, stride=2, padding=3)
        assert out.shape == (1, 8, 32, 32)

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 5, 5))))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (2, 3), (3, 2)])
    def test_gradcheck(self, stride, padding):
        rng = np.random.default_rng(2)
        x = rand((2, 3, 9, 9), rng)
        k = rand((4, 3, 3, 3), rng)
        b = rand((4,), rng)
        rep = gradient_check(
            lambda: scalarize(conv2d(x, k, stride=stride, padding=padding,
                                     bias=b)),
            [x, k, b], tolerance=1e-6, n_samples=40)
        assert rep.passed, str(rep)

    def test_matches_direct_convolution(self):
        # independent O(n^4) loop oracle
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 2, 6, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        out = conv2d(Tensor(x), Tensor(k), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expect = np.zeros_like(out)
        for o in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = xp[0, :, i * 2:i * 2 + 3, j * 2:j * 2 + 3]
                    expect[0, o, i, j] = np.sum(patch * k[o])
        assert np.allclose(out, expect, atol=1e-12)


class TestBatchNorm:
    def test_train_normalizes(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(3.0, 2.0, size=(64, 5)))
        gamma = Tensor(np.ones(5))
        beta = Tensor(np.zeros(5))
        out = batchnorm(x, gamma, beta, RunningStats(5), training=True)
        assert np.allclose(out.data.mean(axis=0), 0.0, atol=1e-10)
        assert np.allclose(out.data.var(axis=0), 1.0, atol=1e-2)

    def test_eval_identity_on_standardized(self):
        x = Tensor(np.random.default_rng(5).normal(size=(10, 3)))
        out = batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                        RunningStats(3), training=False)
        assert np.allclose(out.data, x.data / np.sqrt(1 + 1e-5), atol=1e-9)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ConfigError):
            batchnorm(Tensor(np.zeros((1, 3))), Tensor(np.ones(3)),
                      Tensor(np.zeros(3)), RunningStats(3), training=True)

    @pytest.mark.parametrize("shape", [(6, 4), (3, 2, 5, 5)])
    def test_gradcheck(self, shape):
        rng = np.random.default_rng(6)
        c = shape[1]
        x = rand(shape, rng)
        gamma = Tensor(rng.uniform(0.5, 1.5, size=c), requires_grad=True)
        beta = rand((c,), rng)
        stats = RunningStats(c)
        rep = gradient_check(
            lambda: scalarize(batchnorm(x, gamma, beta, stats, training=True)),
            [x, gamma, beta], tolerance=1e-5, n_samples=40)
        assert rep.passed, str(rep)

    def test_gradcheck_eval_mode(self):
        rng = np.random.default_rng(7)
        x = rand((5, 3), rng)
        gamma, beta = rand((3,), rng), rand((3,), rng)
        stats = RunningStats(3)
        stats.mean = rng.normal(size=3)
        stats.var = rng.uniform(0.5, 2.0, size=3)
        rep = gradient_check(
            lambda: scalarize(batchnorm(x, gamma, beta, stats, training=False)),
            [x, gamma, beta], tolerance=1e-6, n_samples=30)
        assert rep.passed, str(rep)


class TestSimpleOps:
    def test_relu_values(self):
        out = relu(Tensor(np.array([[-1.0, 2.0]])))
        assert out.data.tolist() == [[0.0, 2.0]]

    def test_gap_constant(self):
        x = Tensor(np.full((2, 3, 4, 4), 7.5))
        assert np.allclose(global_avg_pool(x).data, 7.5)

    def test_concat_dims(self):
        a = Tensor(np.zeros((2, 512)))
        b = Tensor(np.zeros((2, 16)))
        assert concat([a, b]).shape == (2, 528)

    def test_maxpool_first_max_wins(self):
        x = Tensor(np.array([[[[1.0, 1.0], [1.0, 1.0]]]]), requires_grad=True)
        with Tape() as tape:
            out = maxpool2d(x, kernel=2)
            loss = scalarize(out)
        tape.backward(loss)
        # gradient lands on the first of the tied maxima only
        nz = np.flatnonzero(x.grad)
        assert nz.tolist() == [0]

    @pytest.mark.parametrize("kernel,stride,padding", [(2, 2, 0), (3, 2, 1)])
    def test_maxpool_gradcheck(self, kernel, stride, padding):
        rng = np.random.default_rng(8)
        # distinct values avoid FD stepping across a tie boundary
        vals = rng.permutation(2 * 3 * 8 * 8).astype(float).reshape(2, 3, 8, 8)
        x = Tensor(vals / 50.0, requires_grad=True)
        rep = gradient_check(
            lambda: scalarize(maxpool2d(x, kernel, stride, padding)), [x],
            tolerance=1e-6, n_samples=40)
        assert rep.passed, str(rep)

    def test_add_and_gap_gradcheck(self):
        rng = np.random.default_rng(9)
        a, b = rand((2, 3, 4, 4), rng), rand((2, 3, 4, 4), rng)
        rep = gradient_check(
            lambda: scalarize(global_avg_pool(relu(add(a, b)))), [a, b],
            tolerance=1e-6, n_samples=40)
        assert rep.passed, str(rep)

    def test_concat_gradcheck(self):
        rng > (rng := np.random.default_rng(10))
        a, b = rand((3, 5), rng), rand((3, 7), rng)
        rep = gradient_check(
            lambda: scalarize(relu(concat([a, b]))), [a, b],
            tolerance=1e-6, n_samples=30)
        assert rep.passed, str(rep)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((4, 2)))
        loss, probs = softmax_cross_entropy(logits, [0, 1, 0, 1])
        assert float(loss.data) == pytest.approx(np.log(2))
        assert np.allclose(probs, 0.5)

    def test_large_margin_loss_vanishes(self):
        logits = Tensor(np.array([[100.0, -100.0]]))
        loss, _ = softmax_cross_entropy(logits, [0])
        assert float(loss.data) < 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        logits = Tensor(rng.normal(size=(50, 2)) * 30)
        _, probs = softmax_cross_entropy(logits, [0] * 50)
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-12)

    def test_invalid_label(self):
        with pytest.raises(ConfigError):
            softmax_cross_entropy(Tensor(np.zeros((2, 2))), [0, 2])

    def test_gradcheck(self):
        rng = np.random.default_rng(12)
        logits = rand((6, 3), rng)
        labels = rng.integers(0, 3, size=6)
        rep = gradient_check(
            lambda: softmax_cross_entropy(logits, labels)[0], [logits],
            tolerance=1e-7, n_samples=18)
        assert rep.passed, str(rep)


class TestTape:
    def test_backward_twice_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            loss = scalarize(relu(x))
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_each_op_visited_once(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            h = relu(x)
            h2 = add(h, h)
            loss = scalarize(h2)
        n_ops = len(tape)
        calls = []
        tape._entries = [lambda fn=fn: (calls.append(1), fn()) for fn in
                         tape._entries]
        tape.backward(loss)
        assert len(calls) == n_ops

    def test_no_recording_without_tape(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        out = relu(x)
        assert out.node_id is None


class TestOptim:
    def test_zero_grad_leaves_params(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        store = ParamStore([("p", p)])
        sgd_step(store, lr=0.1)
        assert p.data.tolist() == [1.0, 2.0]

    def test_sgd_single_step(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        p.accumulate(np.array([1.0]))
        store = ParamStore([("p", p)])
        sgd_step(store, lr=0.1)
        assert p.data[0] == pytest.approx(-0.1)

    def test_adam_converges_on_quadratic(self):
        # minimize (p - 3)^2; analytic minimum p = 3
        p = Tensor(np.array([0.0]), requires_grad=True)
        store = ParamStore([("p", p)])
        for _ in range(200):
            store.zero_grad()
            p.accumulate(2 * (p.data - 3.0))
            adam_step(store, lr=0.1)
        assert abs(p.data[0] - 3.0) < 1e-6

    def test_nan_grad_names_parameter(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        p.accumulate(np.array([np.nan]))
        store = ParamStore([("theta", p)])
        with pytest.raises(PoisonedUpdateError, match="theta"):
            adam_step(store, lr=0.1)

    def test_frozen_params_excluded(self):
        frozen = Tensor(np.array([5.0]), requires_grad=False)
        store = ParamStore([("frozen", frozen)])
        assert "frozen" not in store.params


class TestGradCheckHarness:
    def test_corrupted_backward_detected(self):
        x = Tensor(np.random.default_rng(13).normal(size=(3, 3)),
                   requires_grad=True)

        def bad_loss():
            from celltransit.nn.tensor import active_tape
            out = Tensor(np.asarray(np.sum(x.data ** 2)), requires_grad=True)
            tape = active_tape()
            if tape is not None:
                # wrong by a factor of 2
                tape.record(out, lambda: x.accumulate(out.grad * x.data))
            return out

        rep = gradient_check(bad_loss, [x], tolerance=1e-6, n_samples=9)
        assert not rep.passed

    def test_requires_float64(self):
        x = Tensor(np.zeros((2, 2), dtype=np.float32), requires_grad=True)
        with pytest.raises(ConfigError):
            gradient_check(lambda: scalarize(relu(x)), [x])


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(14)
        arrays = {"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=(7,))}
        path = tmp_path / "w.bin"
        save_weights(path, arrays)
        loaded = load_weights(path)
        for name, arr in arrays.items():
            assert np.array_equal(loaded[name], arr)

    def test_shape_validation_lists_mismatches(self, tmp_path):
        path = tmp_path / "w.bin"
        save_weights(path, {"a": np.zeros((2, 2)), "b": np.zeros(3)})
        with pytest.raises(CheckpointError) as exc:
            load_weights(path, expected_shapes={"a": (2, 3), "c": (1,)})
        msg = str(exc.value)
        assert "'a'" in msg and "'c'" in msg and "'b'" in msg

    def test_module_state_roundtrip(self, tmp_path):
        rng = np.random.default_rng(15)

        class Net(Module):
            def __init__(self):
                self.fc = Linear(3, 2, rng)
                self.bn = BatchNorm(2)

        net = Net()
        net.bn.running.mean[:] = [1.0, 2.0]
        path = tmp_path / "net.bin"
        save_weights(path, net.state_arrays())
        net2 = Net()
        net2.load_state_arrays(load_weights(path))
        assert np.array_equal(net2.fc.w.data, net.fc.w.data)
        assert np.array_equal(net2.bn.running.mean, [1.0, 2.0])
