"""Tests for the pruning and additive-noise baselines."""
import numpy as np
import pytest

from pyfedcdp.defenses import additive_random_noise, prune_random_dssgd, prune_threshold
from pyfedcdp.nn import LayerGradient
from pyfedcdp.nn.utils import flatten


def _update():
    return (
        LayerGradient(np.array([[0.5, -3.0], [0.1, 2.0]]), np.array([-0.2, 1.0])),
        LayerGradient(np.array([[4.0, -0.05]]), np.array([0.3])),
    )


class TestPruneThreshold:
    """Tests for magnitude pruning."""

    def test_zero_percent_is_identity(self):
        """Test that pruning 0% leaves the update bit-identical."""
        update = _update()
        np.testing.assert_array_equal(flatten(prune_threshold(update, 0)), flatten(update))

    def test_prunes_smallest_magnitudes(self):
        """Test that 50% pruning zeroes the four smallest of nine coordinates."""
        pruned = flatten(prune_threshold(_update(), 50))
        expected = [0.5, -3.0, 0.0, 2.0, 0.0, 1.0, 4.0, 0.0, 0.0]
        np.testing.assert_array_equal(pruned, expected)

    def test_ties_fall_to_lower_indices(self):
        """Test that equal magnitudes are pruned in index order."""
        pruned = prune_threshold(np.array([1.0, -1.0, 1.0, 5.0]), 50)
        np.testing.assert_array_equal(pruned, [0.0, 0.0, 1.0, 5.0])

    def test_input_is_not_modified(self):
        """Test that the caller's array is left untouched."""
        v = np.array([1.0, 2.0, 3.0])
        prune_threshold(v, 60)
        np.testing.assert_array_equal(v, [1.0, 2.0, 3.0])

    @pytest.mark.parametrize("percent", [-1, 100])
    def test_invalid_percent(self, percent):
        """Test that percentages outside [0, 100) are rejected."""
        with pytest.raises(ValueError):
            prune_threshold(np.ones(3), percent)


class TestPruneRandomDssgd:
    """Tests for random selective pruning."""

    def test_keeps_fraction_of_eligible(self):
        """Test that ceil(theta * eligible) coordinates above the threshold survive."""
        v = np.array([0.01, 5.0, -4.0, 0.02, 3.0, 2.0])
        out = prune_random_dssgd(v, 0.5, 0.1, np.random.default_rng(0))
        kept = np.flatnonzero(out)
        assert kept.size == 2
        assert set(kept) <= {1, 2, 4, 5}
        np.testing.assert_array_equal(out[kept], v[kept])

    def test_keep_all(self):
        """Test that theta = 1 with a zero threshold keeps every non-zero coordinate."""
        update = _update()
        out = prune_random_dssgd(update, 1.0, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(flatten(out), flatten(update))

    def test_deterministic_for_seed(self):
        """Test that equal generators select equal coordinates."""
        v = np.arange(1.0, 21.0)
        a = prune_random_dssgd(v, 0.3, 0.0, np.random.default_rng(5))
        b = prune_random_dssgd(v, 0.3, 0.0, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_invalid_fraction(self):
        """Test that a keep fraction of zero is rejected."""
        with pytest.raises(ValueError):
            prune_random_dssgd(np.ones(3), 0.0, 0.0, np.random.default_rng(0))


class TestAdditiveNoise:
    """Tests for uncalibrated additive noise."""

    def test_zero_variance_is_identity(self):
        """Test that zero variance returns the same values."""
        update = _update()
        out = additive_random_noise(update, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(flatten(out), flatten(update))

    def test_variance(self):
        """Test that the added noise has the requested variance."""
        out = additive_random_noise(np.zeros(200_000), 0.01, np.random.default_rng(1))
        assert np.var(out) == pytest.approx(0.01, rel=0.02)

    def test_preserves_layout(self):
        """Test that a layered update keeps its shapes."""
        out = additive_random_noise(_update(), 0.5, np.random.default_rng(2))
        assert [g.weights.shape for g in out] == [(2, 2), (1, 2)]

    def test_negative_variance(self):
        """Test that a negative variance is rejected."""
        with pytest.raises(ValueError):
            additive_random_noise(np.ones(2), -0.1, np.random.default_rng(0))
