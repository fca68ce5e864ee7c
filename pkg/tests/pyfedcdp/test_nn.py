"""Tests for the network core."""
import numpy as np
import pytest

from pyfedcdp.errors import NumericError, ShapeError
from pyfedcdp.nn import (
    Activation,
    Batch,
    ConvGeometry,
    Example,
    Layer,
    LayerGradient,
    ModelParams,
    accuracy,
    batch_gradient,
    forward,
    init_model,
    input_gradient_of_match_loss,
    loss,
    match_loss,
    per_example_gradients,
    sgd_step,
)
from pyfedcdp.nn.utils import (
    add,
    flatten,
    global_norm,
    mean_stack,
    scale,
    stack_gradients,
    unflatten,
    zeros_like,
)


def _hand_model():
    """A 2-2-2 identity network with known weights."""
    hidden = Layer(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([0.5, -0.5]), Activation.IDENTITY)
    out = Layer(np.array([[1.0, 1.0], [-1.0, 0.0]]), np.zeros(2), Activation.SOFTMAX_OUTPUT)
    return ModelParams((hidden, out))


def _numeric_gradient(model, batch, step=1e-6):
    """Central differences of the mean loss with respect to every parameter."""
    params = flatten(model.parameters())
    grads = np.empty_like(params)
    for i in range(params.size):
        for sign in (1.0, -1.0):
            shifted = params.copy()
            shifted[i] += sign * step
            layers = unflatten(shifted, model.parameters())
            candidate = ModelParams(
                tuple(layer.replace(g.weights, g.bias) for layer, g in zip(model.layers, layers))
            )
            value = loss(candidate, batch)
            grads[i] = value if sign > 0 else (grads[i] - value) / (2 * step)
    return grads


class TestModelParams:
    """Tests for model construction and validation."""

    def test_adjacent_layers_must_match(self):
        """Test that mismatched layer widths are rejected."""
        a = Layer(np.zeros((3, 2)), np.zeros(3), Activation.RELU)
        b = Layer(np.zeros((2, 4)), np.zeros(2), Activation.SOFTMAX_OUTPUT)
        with pytest.raises(ShapeError):
            ModelParams((a, b))

    def test_non_finite_parameter_names_layer(self):
        """Test that NaN weights are reported with their layer."""
        a = Layer(np.zeros((3, 2)), np.zeros(3), Activation.RELU)
        b = Layer(np.full((2, 3), np.nan), np.zeros(2), Activation.SOFTMAX_OUTPUT)
        with pytest.raises(NumericError) as excinfo:
            ModelParams((a, b))
        assert excinfo.value.layer == 1

    def test_init_model_shapes_and_bounds(self, rng):
        """Test that initialization respects sizes and the fan-in bound."""
        model = init_model([10, 8, 4], rng)
        assert model.shapes() == (((8, 10), (8,)), ((4, 8), (4,)))
        assert np.all(np.abs(model.layers[0].weights) <= 1 / np.sqrt(10))
        assert model.layers[-1].activation is Activation.SOFTMAX_OUTPUT
        assert model.num_parameters == 8 * 10 + 8 + 4 * 8 + 4

    def test_init_model_rejects_short_sizes(self, rng):
        """Test that a single layer size is rejected."""
        with pytest.raises(ValueError):
            init_model([4], rng)

    def test_init_model_with_convolution(self, rng):
        """Test that a convolution is placed before the dense stack."""
        geometry = ConvGeometry(1, 6, 6, kernel=3, stride=1, out_channels=2)
        model = init_model([36, 5, 3], rng, Activation.SIGMOID, geometry)
        assert model.layers[0].conv == geometry
        assert model.layers[0].weights.shape == (2, 9)
        assert model.layers[1].weights.shape == (5, geometry.out_dim)


class TestForward:
    """Tests for forward, loss and accuracy."""

    def test_forward_matches_hand_computation(self):
        """Test logits of a hand-set identity network."""
        logits = forward(_hand_model(), np.array([1.0, 1.0]))
        np.testing.assert_allclose(logits, [3.0, -1.5])

    def test_forward_accepts_matrix(self):
        """Test that a feature matrix yields one row of logits per example."""
        x = np.array([[1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(forward(_hand_model(), x), [[3.0, -1.5], [0.0, -0.5]])

    def test_forward_rejects_wrong_width(self, sigmoid_model):
        """Test that a feature vector of the wrong size is rejected."""
        with pytest.raises(ShapeError):
            forward(sigmoid_model, np.zeros(7))

    def test_loss_of_uniform_logits(self):
        """Test that zero weights give a loss of log(classes)."""
        zero = ModelParams((Layer(np.zeros((3, 2)), np.zeros(3), Activation.SOFTMAX_OUTPUT),))
        batch = Batch(np.ones((4, 2)), np.array([0, 1, 2, 0]))
        assert loss(zero, batch) == pytest.approx(np.log(3))

    def test_accuracy_counts_argmax(self):
        """Test accuracy on examples with known predictions."""
        batch = Batch(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([0, 1]))
        assert accuracy(_hand_model(), batch) == 0.5


class TestGradients:
    """Tests for per-example and batch gradients."""

    def test_per_example_mean_equals_batch_gradient(self, relu_model, small_batch):
        """Test that the mean of per-example gradients equals the batch gradient."""
        per_example = per_example_gradients(relu_model, small_batch)
        mean = mean_stack(stack_gradients(per_example))
        for a, b in zip(mean, batch_gradient(relu_model, small_batch)):
            np.testing.assert_allclose(a.weights, b.weights, atol=1e-10)
            np.testing.assert_allclose(a.bias, b.bias, atol=1e-10)

    def test_per_example_gradients_carry_indices(self, sigmoid_model, small_batch):
        """Test that each gradient is tagged with its example index."""
        grads = per_example_gradients(sigmoid_model, small_batch)
        assert [g.example_index for g in grads] == list(range(len(small_batch)))

    def test_batch_gradient_matches_finite_differences(self, sigmoid_model, small_batch):
        """Test the batch gradient against central differences."""
        analytic = flatten(batch_gradient(sigmoid_model, small_batch))
        numeric = _numeric_gradient(sigmoid_model, small_batch)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_conv_gradient_matches_finite_differences(self, rng):
        """Test a convolutional network's gradient against central differences."""
        geometry = ConvGeometry(1, 5, 5, kernel=3, stride=2, out_channels=2)
        model = init_model([25, 4, 3], rng, Activation.SIGMOID, geometry)
        batch = Batch(rng.uniform(0, 1, (3, 25)), np.array([0, 1, 2]))
        analytic = flatten(batch_gradient(model, batch))
        numeric = _numeric_gradient(model, batch)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_empty_batch_is_rejected(self):
        """Test that a batch cannot be built from zero examples."""
        with pytest.raises(ValueError):
            Batch.from_examples([])

    def test_label_out_of_range(self, sigmoid_model):
        """Test that a label beyond the class count is rejected."""
        batch = Batch(np.zeros((1, 4)), np.array([3]))
        with pytest.raises(ValueError):
            batch_gradient(sigmoid_model, batch)


class TestSgdStep:
    """Tests for the parameter update."""

    def test_sgd_step_is_pure(self, sigmoid_model):
        """Test that the input model is left untouched."""
        before = flatten(sigmoid_model.parameters()).copy()
        grad = tuple(
            LayerGradient(np.ones_like(layer.weights), np.ones_like(layer.bias))
            for layer in sigmoid_model.layers
        )
        updated = sgd_step(sigmoid_model, grad, 0.5)
        np.testing.assert_array_equal(flatten(sigmoid_model.parameters()), before)
        np.testing.assert_allclose(flatten(updated.parameters()), before - 0.5)

    def test_zero_step_is_identity(self, sigmoid_model, small_batch):
        """Test that eta = 0 reproduces the model bit for bit."""
        updated = sgd_step(sigmoid_model, batch_gradient(sigmoid_model, small_batch), 0.0)
        assert updated.equals(sigmoid_model)

    def test_shape_mismatch(self, sigmoid_model, relu_model):
        """Test that a gradient of another architecture is rejected."""
        with pytest.raises(ShapeError):
            sgd_step(sigmoid_model, zeros_like(relu_model), 0.1)

    def test_training_reduces_loss(self, rng):
        """Test that 100 full-batch steps reduce the loss."""
        model = init_model([4, 8, 2], rng)
        x = rng.uniform(0, 1, (40, 4))
        batch = Batch(x, (x[:, 0] > x[:, 1]).astype(int))
        start = loss(model, batch)
        for _ in range(100):
            model = sgd_step(model, batch_gradient(model, batch), 0.5)
        assert loss(model, batch) < start


class TestUtils:
    """Tests for layered tensor arithmetic."""

    def test_flatten_order(self):
        """Test that flattening interleaves weights and biases per layer."""
        grad = (
            LayerGradient(np.array([[1.0, 2.0]]), np.array([3.0])),
            LayerGradient(np.array([[4.0]]), np.array([5.0])),
        )
        np.testing.assert_array_equal(flatten(grad), [1, 2, 3, 4, 5])

    def test_unflatten_rejects_wrong_length(self, sigmoid_model):
        """Test that a vector of the wrong size cannot be unflattened."""
        with pytest.raises(ShapeError):
            unflatten(np.zeros(3), sigmoid_model.parameters())

    def test_add_scale_norm(self, sigmoid_model):
        """Test add, scale and global norm together."""
        ones = tuple(
            LayerGradient(np.ones_like(layer.weights), np.ones_like(layer.bias))
            for layer in sigmoid_model.layers
        )
        doubled = add(ones, ones)
        assert global_norm(scale(doubled, 0.5)) == pytest.approx(
            np.sqrt(sigmoid_model.num_parameters)
        )


class TestInputGradient:
    """Tests for the derivative of the gradient-matching loss."""

    @pytest.fixture
    def target(self, sigmoid_model, rng):
        victim = Example(rng.uniform(0, 1, 4), 1)
        stack = per_example_gradients(sigmoid_model, victim)[0]
        return victim, stack.per_layer

    def test_analytic_matches_finite_difference(self, sigmoid_model, target, rng):
        """Test the analytic double backprop against central differences."""
        _, grad = target
        seed = Example(rng.uniform(0, 1, 4), 1)
        analytic = input_gradient_of_match_loss(sigmoid_model, grad, seed)
        numeric = input_gradient_of_match_loss(
            sigmoid_model, grad, seed, method="finite_difference", step=1e-5
        )
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)

    def test_analytic_matches_finite_difference_deep(self, rng):
        """Test the analytic path through two hidden sigmoid layers."""
        model = init_model([5, 4, 4, 3], rng, Activation.SIGMOID)
        victim = Example(rng.uniform(0, 1, 5), 2)
        grad = per_example_gradients(model, victim)[0].per_layer
        seed = Example(rng.uniform(0, 1, 5), 2)
        analytic = input_gradient_of_match_loss(model, grad, seed)
        numeric = input_gradient_of_match_loss(
            model, grad, seed, method="finite_difference", step=1e-5
        )
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)

    def test_analytic_matches_finite_difference_conv(self, rng):
        """Test the analytic path through a convolution."""
        geometry = ConvGeometry(1, 5, 5, kernel=3, stride=1, out_channels=2)
        model = init_model([25, 4, 3], rng, Activation.SIGMOID, geometry)
        victim = Example(rng.uniform(0, 1, 25), 0)
        grad = per_example_gradients(model, victim)[0].per_layer
        seed = Example(rng.uniform(0, 1, 25), 0)
        analytic = input_gradient_of_match_loss(model, grad, seed)
        numeric = input_gradient_of_match_loss(
            model, grad, seed, method="finite_difference", step=1e-5
        )
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)

    def test_fixed_point_has_zero_gradient(self, sigmoid_model, target):
        """Test that the victim itself is a stationary point of the match loss."""
        victim, grad = target
        assert match_loss(sigmoid_model, grad, victim) == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_allclose(
            input_gradient_of_match_loss(sigmoid_model, grad, victim), 0.0, atol=1e-12
        )

    def test_deterministic(self, sigmoid_model, target):
        """Test that repeated calls return identical arrays."""
        victim, grad = target
        seed = Example(np.full(4, 0.25), victim.label)
        first = input_gradient_of_match_loss(sigmoid_model, grad, seed)
        second = input_gradient_of_match_loss(sigmoid_model, grad, seed)
        np.testing.assert_array_equal(first, second)

    def test_rejects_incongruent_target(self, sigmoid_model, relu_model, target):
        """Test that a target of another architecture is rejected."""
        victim, _ = target
        with pytest.raises(ShapeError):
            input_gradient_of_match_loss(sigmoid_model, zeros_like(relu_model), victim)
