import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utils.tensor import (
    INFERENCE, TRAINING, BatchNormState, ComputationTape, GeometryError, ShapeError, TapeUsageError, Tensor,
    TensorValidationError, active_tape, add, avgpool1d, backward, batchnorm1d, conv1d, conv_geometry,
    cross_entropy_loss, default_dtype, dense, dropout, flatten, leaky_relu, maxpool1d, numerical_gradient,
    pool_geometry, precision, relative_error, relu, sigmoid, softmax, sum_all,
)

GRAD_TOLERANCE = 1e-5
FLOAT32_TOLERANCE = 1e-3
TRIALS = range(20)
PADDINGS = ("valid", "same")


def _dot(out: Tensor, weights: np.ndarray) -> Tensor:
    flat = flatten(out) if out.ndim == 3 else out
    projection = Tensor(weights.reshape(1, -1))
    return sum_all(dense(flat, projection))


def assert_gradients_match(build, *tensors):
    with ComputationTape() as tape:
        loss = build()
    backward(tape, loss)
    for tensor in tensors:
        numeric = numerical_gradient(lambda: build().item(), tensor)
        assert relative_error(tensor.grad, numeric) < GRAD_TOLERANCE, tensor.name


class TestConvolution:
    def setup_method(self):
        self.rng = np.random.default_rng(0)

    def test_forward_matches_cross_correlation(self):
        x = self.rng.standard_normal((1, 1, 20))
        w = self.rng.standard_normal((1, 1, 5))
        with precision(np.float64):
            out = conv1d(Tensor(x), Tensor(w), stride=1, padding="valid")
        expected = np.correlate(x[0, 0], w[0, 0], mode="valid")
        np.testing.assert_allclose(out.data[0, 0], expected, rtol=1e-12)

    def test_unbatched_input_keeps_rank(self):
        x = Tensor(self.rng.standard_normal((2, 16)))
        w = Tensor(self.rng.standard_normal((4, 2, 3)))
        assert conv1d(x, w).shape == (4, 14)

    @pytest.mark.parametrize("trial", TRIALS)
    def test_gradients(self, trial):
        rng = np.random.default_rng(trial)
        stride, kernel = int(rng.integers(1, 4)), int(rng.integers(1, 7))
        padding = PADDINGS[trial % 2]
        n, c_in, c_out = (int(v) for v in rng.integers(1, 4, size=3))
        length = int(rng.integers(kernel + stride, 25))
        with precision(np.float64):
            x = Tensor(rng.standard_normal((n, c_in, length)), requires_grad=True, name="x")
            w = Tensor(rng.standard_normal((c_out, c_in, kernel)), requires_grad=True, name="w")
            b = Tensor(rng.standard_normal(c_out), requires_grad=True, name="b")
            out_len = conv_geometry(length, kernel, stride, padding)[0]
            projection = rng.standard_normal(c_out * out_len)
            assert_gradients_match(lambda: _dot(conv1d(x, w, b, stride, padding), projection), x, w, b)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.zeros((1, 2, 10))), Tensor(np.zeros((3, 1, 3))))

    def test_kernel_longer_than_input_raises(self):
        with pytest.raises(GeometryError):
            conv1d(Tensor(np.zeros((1, 1, 4))), Tensor(np.zeros((1, 1, 5))))

    def test_same_padding_extra_goes_right(self):
        out_len, left, right = conv_geometry(10, 4, 1, "same")
        assert (out_len, left, right) == (10, 1, 2)


class TestGeometry:
    @settings(max_examples=200, deadline=None)
    @given(length=st.integers(1, 5000), kernel=st.integers(1, 300), stride=st.integers(1, 50))
    def test_same_padding_output_is_ceiling(self, length, kernel, stride):
        out_len, left, right = conv_geometry(length, kernel, stride, "same")
        assert out_len == -(-length // stride)
        assert left <= right <= left + 1
        assert (out_len - 1) * stride + kernel <= length + left + right

    @settings(max_examples=200, deadline=None)
    @given(length=st.integers(1, 5000), kernel=st.integers(1, 300), stride=st.integers(1, 50))
    def test_valid_output_length(self, length, kernel, stride):
        if kernel > length:
            with pytest.raises(GeometryError):
                conv_geometry(length, kernel, stride, "valid")
        else:
            assert conv_geometry(length, kernel, stride, "valid")[0] == (length - kernel) // stride + 1

    def test_pool_larger_than_input_raises(self):
        with pytest.raises(GeometryError):
            pool_geometry(3, 4, 4)

    def test_unknown_padding_raises(self):
        with pytest.raises(GeometryError):
            conv_geometry(10, 3, 1, "causal")


class TestPooling:
    def setup_method(self):
        self.rng = np.random.default_rng(1)

    def test_maxpool_drops_trailing_remainder(self):
        x = Tensor(np.arange(10, dtype=float).reshape(1, 1, 10))
        out = maxpool1d(x, 3)
        np.testing.assert_array_equal(out.data[0, 0], [2, 5, 8])

    def test_maxpool_tie_routes_gradient_to_first(self):
        with precision(np.float64):
            x = Tensor(np.array([[[1.0, 1.0, 0.0, 0.0]]]), requires_grad=True)
            with ComputationTape() as tape:
                loss = sum_all(maxpool1d(x, 2))
            backward(tape, loss)
        np.testing.assert_array_equal(x.grad[0, 0], [1.0, 0.0, 1.0, 0.0])

    @pytest.mark.parametrize("pool_fn", [maxpool1d, avgpool1d])
    @pytest.mark.parametrize("trial", TRIALS)
    def test_gradients(self, pool_fn, trial):
        rng = np.random.default_rng(trial)
        pool, stride = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        channels, length = int(rng.integers(1, 4)), int(rng.integers(pool, 20))
        with precision(np.float64):
            x = Tensor(rng.standard_normal((2, channels, length)), requires_grad=True, name="x")
            out_len = pool_geometry(length, pool, stride)
            projection = rng.standard_normal(channels * out_len)
            assert_gradients_match(lambda: _dot(pool_fn(x, pool, stride), projection), x)


class TestBatchNorm:
    def setup_method(self):
        self.rng = np.random.default_rng(2)

    @pytest.mark.parametrize("mode", [TRAINING, INFERENCE])
    @pytest.mark.parametrize("trial", TRIALS)
    def test_gradients(self, mode, trial):
        rng = np.random.default_rng(trial)
        n, channels, length = int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 7))
        with precision(np.float64):
            state = BatchNormState.create(channels)
            state.gamma.data[:] = rng.uniform(0.5, 1.5, channels)
            state.beta.data[:] = rng.standard_normal(channels)
            state.running_mean[:] = rng.standard_normal(channels)
            state.running_var[:] = rng.uniform(0.5, 2.0, channels)
            state.mode = mode
            x = Tensor(rng.standard_normal((n, channels, length)), requires_grad=True, name="x")
            projection = rng.standard_normal(channels * length)
            assert_gradients_match(lambda: _dot(batchnorm1d(x, state), projection), x, state.gamma, state.beta)

    def test_training_normalizes_and_updates_running_stats(self):
        with precision(np.float64):
            state = BatchNormState.create(2)
            x = Tensor(self.rng.normal(3.0, 2.0, (8, 2, 50)))
            out = batchnorm1d(x, state)
        np.testing.assert_allclose(out.data.mean(axis=(0, 2)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.var(axis=(0, 2)), 1.0, atol=1e-3)
        np.testing.assert_allclose(state.running_mean, 0.1 * x.data.mean(axis=(0, 2)), rtol=1e-10)

    def test_inference_uses_running_stats(self):
        with precision(np.float64):
            state = BatchNormState.create(1)
            state.running_mean[:] = 2.0
            state.running_var[:] = 4.0
            state.mode = INFERENCE
            out = batchnorm1d(Tensor(np.full((1, 1, 3), 4.0)), state)
        np.testing.assert_allclose(out.data, 1.0, atol=1e-5)

    def test_single_value_per_channel_in_training_raises(self):
        with pytest.raises(TensorValidationError):
            batchnorm1d(Tensor(np.zeros((1, 2, 1))), BatchNormState.create(2))

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            batchnorm1d(Tensor(np.zeros((2, 3, 4))), BatchNormState.create(2))


class TestActivationsAndLoss:
    def setup_method(self):
        self.rng = np.random.default_rng(3)

    @pytest.mark.parametrize("fn", [relu, leaky_relu, sigmoid, softmax])
    @pytest.mark.parametrize("trial", TRIALS)
    def test_activation_gradients(self, fn, trial):
        rng = np.random.default_rng(trial)
        n, width = int(rng.integers(1, 6)), int(rng.integers(2, 9))
        with precision(np.float64):
            x = Tensor(3 * rng.standard_normal((n, width)), requires_grad=True, name="x")
            projection = rng.standard_normal(width)
            assert_gradients_match(lambda: _dot(fn(x), projection), x)

    @pytest.mark.parametrize("trial", TRIALS)
    def test_dense_cross_entropy_gradients(self, trial):
        rng = np.random.default_rng(trial)
        n, features, classes = int(rng.integers(1, 8)), int(rng.integers(1, 9)), int(rng.integers(2, 11))
        with precision(np.float64):
            x = Tensor(rng.standard_normal((n, features)), requires_grad=True, name="x")
            w = Tensor(rng.standard_normal((classes, features)), requires_grad=True, name="w")
            b = Tensor(rng.standard_normal(classes), requires_grad=True, name="b")
            labels = rng.integers(0, classes, n)
            assert_gradients_match(lambda: cross_entropy_loss(dense(x, w, b), labels), x, w, b)

    def test_loss_accumulates_in_float64(self):
        logits = Tensor(self.rng.standard_normal((4, 10)))
        assert logits.dtype == np.float32
        assert cross_entropy_loss(logits, [0, 1, 2, 3]).dtype == np.float64

    def test_cross_entropy_of_uniform_logits(self):
        loss = cross_entropy_loss(Tensor(np.zeros((4, 10))), [0, 1, 2, 3])
        assert loss.item() == pytest.approx(np.log(10), rel=1e-6)

    def test_cross_entropy_stable_for_large_logits(self):
        logits = Tensor(np.array([[1000.0, 0.0], [0.0, 1000.0]]))
        assert np.isfinite(cross_entropy_loss(logits, [0, 1]).item())

    def test_label_out_of_range_raises(self):
        with pytest.raises(TensorValidationError):
            cross_entropy_loss(Tensor(np.zeros((2, 10))), [0, 10])

    def test_softmax_rows_sum_to_one(self):
        out = softmax(Tensor(self.rng.standard_normal((6, 10)) * 50))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, rtol=1e-5)

    def test_leaky_relu_slope(self):
        out = leaky_relu(Tensor(np.array([-2.0, 3.0])))
        np.testing.assert_allclose(out.data, [-0.02, 3.0], rtol=1e-6)


class TestDropout:
    def test_inference_is_identity(self):
        x = Tensor(np.ones((2, 5)))
        assert dropout(x, 0.5, INFERENCE) is x

    def test_zero_probability_is_identity(self):
        x = Tensor(np.ones((2, 5)))
        assert dropout(x, 0.0, TRAINING) is x

    def test_training_scales_kept_units(self):
        x = Tensor(np.ones((100, 100)))
        out = dropout(x, 0.5, TRAINING, np.random.default_rng(0))
        assert set(np.unique(out.data)) <= {0.0, 2.0}
        assert 0.4 < (out.data > 0).mean() < 0.6

    @pytest.mark.parametrize("trial", TRIALS)
    def test_gradients(self, trial):
        rng = np.random.default_rng(trial)
        p = float(rng.uniform(0.1, 0.8))
        with precision(np.float64):
            x = Tensor(rng.standard_normal((3, 7)), requires_grad=True, name="x")
            projection = rng.standard_normal(7)
            # a fresh generator per call keeps the mask fixed across finite-difference evaluations
            assert_gradients_match(lambda: _dot(dropout(x, p, TRAINING, np.random.default_rng(trial)), projection), x)

    @pytest.mark.parametrize("p", [-0.1, 1.0])
    def test_invalid_probability_raises(self, p):
        with pytest.raises(TensorValidationError):
            dropout(Tensor(np.ones(3)), p)


class TestTape:
    def test_backward_rejects_foreign_loss(self):
        with ComputationTape() as tape:
            pass
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(TapeUsageError):
            backward(tape, sum_all(x))

    def test_backward_rejects_non_scalar(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        with ComputationTape() as tape:
            out = relu(x)
        with pytest.raises(TapeUsageError):
            backward(tape, out)

    def test_gradients_accumulate_until_reset(self):
        x = Tensor(np.ones(3), requires_grad=True)
        for _ in range(2):
            with ComputationTape() as tape:
                loss = sum_all(x)
            backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])
        x.zero_grad()
        assert x.grad is None

    def test_fan_out_sums_contributions(self):
        with precision(np.float64):
            x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
            with ComputationTape() as tape:
                loss = sum_all(add(x, x))
            leaves = backward(tape, loss)
        assert leaves == [x]
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_ops_outside_a_tape_are_not_recorded(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ComputationTape() as tape:
            pass
        out = relu(x)
        assert out.requires_grad
        assert len(tape) == 0
        assert active_tape() is None

    def test_rank_four_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1)))


class TestPrecision:
    def test_default_is_float32(self):
        assert default_dtype() is np.float32
        assert Tensor([1.0]).dtype == np.float32

    def test_float64_scope_is_restored(self):
        with precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert default_dtype() is np.float32


def _composite_arrays(trial):
    rng = np.random.default_rng(100 + trial)
    stride, kernel = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    length, classes = int(rng.integers(12, 24)), 4
    out_len = conv_geometry(length, kernel, stride, PADDINGS[trial % 2])[0]
    pooled = pool_geometry(out_len, 2, 2)
    arrays = {
        "x": rng.standard_normal((3, 2, length)),
        "w": 0.5 * rng.standard_normal((3, 2, kernel)),
        "b": 0.1 * rng.standard_normal(3),
        "gamma": rng.uniform(0.5, 1.5, 3),
        "beta": 0.1 * rng.standard_normal(3),
        "dense_w": 0.5 * rng.standard_normal((classes, 3 * pooled)),
        "dense_b": 0.1 * rng.standard_normal(classes),
    }
    return arrays, rng.integers(0, classes, 3), stride


def _composite_loss(params, labels, stride, padding, variant):
    h = conv1d(params["x"], params["w"], params["b"], stride, padding)
    if variant == "batchnorm":
        state = BatchNormState(params["gamma"], params["beta"], np.zeros(3, dtype=h.dtype), np.ones(3, dtype=h.dtype))
        h = maxpool1d(relu(batchnorm1d(h, state)), 2)
    else:
        h = avgpool1d(sigmoid(h), 2)
    return cross_entropy_loss(dense(flatten(h), params["dense_w"], params["dense_b"]), labels)


class TestFloat32Gradients:
    """Float32 analytic gradients against float64 finite differences of the same network."""

    @pytest.mark.parametrize("variant", ["sigmoid", "batchnorm"])
    @pytest.mark.parametrize("trial", TRIALS)
    def test_composite_network(self, variant, trial):
        arrays, labels, stride = _composite_arrays(trial)
        padding = PADDINGS[trial % 2]

        single = {k: Tensor(v, requires_grad=True, dtype=np.float32, name=k) for k, v in arrays.items()}
        with ComputationTape() as tape:
            loss = _composite_loss(single, labels, stride, padding, variant)
        backward(tape, loss)

        with precision(np.float64):
            double = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in arrays.items()}
            for name, tensor in double.items():
                if variant != "batchnorm" and name in ("gamma", "beta"):
                    continue
                numeric = numerical_gradient(
                    lambda: _composite_loss(double, labels, stride, padding, variant).item(), tensor)
                assert single[name].grad.dtype == np.float32
                assert relative_error(single[name].grad, numeric) < FLOAT32_TOLERANCE, name
