import numpy as np
import pytest

from utils.optim import Adam, AdamConfig, AdamState, optimizer_step
from utils.tensor import ComputationTape, ShapeError, Tensor, backward, cross_entropy_loss, dense, precision


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        with precision(np.float64):
            p = Tensor(np.array([1.0, -1.0, 0.5]), requires_grad=True)
        p.grad = np.array([0.3, -2.0, 1e-3])
        Adam([p], AdamConfig(learning_rate=0.01)).step()
        # bias correction makes the first update lr * sign(g) up to epsilon
        np.testing.assert_allclose(p.data, [0.99, -0.99, 0.49], atol=1e-6)

    def test_missing_gradient_leaves_parameter_untouched(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        a.grad = np.ones(2)
        optimizer = Adam([a, b])
        optimizer.step()
        np.testing.assert_array_equal(b.data, np.ones(2))
        np.testing.assert_array_equal(optimizer.state.first_moments[1], 0.0)
        assert optimizer.step_count == 1

    def test_zero_gradient_is_a_fixed_point(self):
        p = Tensor(np.array([0.7, -1.2, 3.0]), requires_grad=True)
        before = p.data.copy()
        optimizer = Adam([p], AdamConfig(learning_rate=0.1))
        for _ in range(5):
            p.grad = np.zeros(3)
            optimizer.step()
        np.testing.assert_array_equal(p.data, before)

    def test_converges_on_quadratic_bowl(self):
        with precision(np.float64):
            w = Tensor(np.array([1.0]), requires_grad=True)
        optimizer = Adam([w], AdamConfig(learning_rate=0.05))
        for _ in range(200):
            # d/dw of w**2
            w.grad = 2.0 * w.data
            optimizer.step()
        assert abs(w.item()) < 0.05

    def test_zero_grad_clears_every_parameter(self):
        params = [Tensor(np.ones(2), requires_grad=True) for _ in range(3)]
        for p in params:
            p.grad = np.ones(2)
        Adam(params).zero_grad()
        assert all(p.grad is None for p in params)

    def test_mismatched_gradient_shape_raises(self):
        p = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            optimizer_step([p], [np.ones(4)], AdamState.for_params([p]), AdamConfig())

    def test_mismatched_list_lengths_raise(self):
        p = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            optimizer_step([p], [], AdamState.for_params([p]), AdamConfig())

    def test_reduces_softmax_regression_loss(self):
        rng = np.random.default_rng(0)
        with precision(np.float64):
            centers = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 2.0]])
            labels = np.repeat(np.arange(3), 20)
            x = Tensor(centers[labels] + 0.3 * rng.standard_normal((60, 2)))
            w = Tensor(np.zeros((3, 2)), requires_grad=True)
            b = Tensor(np.zeros(3), requires_grad=True)
        optimizer = Adam([w, b], AdamConfig(learning_rate=0.05))
        losses = []
        for _ in range(200):
            optimizer.zero_grad()
            with ComputationTape() as tape:
                loss = cross_entropy_loss(dense(x, w, b), labels)
            backward(tape, loss)
            optimizer.step()
            losses.append(loss.item())
        assert losses[-1] < 0.1 * losses[0]
        assert optimizer.step_count == 200
