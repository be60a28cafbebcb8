"""The MLP: forward oracle, exact gradients, updates, growth, perturbation, io."""

import numpy as np
import pytest

from xder import MLP, SGDConfig, finite_difference_gradient, full_ce


def naive_forward(model, x):
    """Independent re-implementation of the forward pass."""
    h = np.asarray(x, dtype=np.float64)
    n_layers = len(model.weights)
    for i in range(n_layers):
        h = h @ model.weights[i].data + model.biases[i].data
        if i < n_layers - 1:
            h = np.tanh(h)
    return h


class TestForward:
    def test_zero_weights_zero_logits(self):
        model = MLP(3, (4,), 2, seed=0)
        model.set_flat(np.zeros(model.num_parameters))
        out = model.logits(np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_array_equal(out, np.zeros((5, 2)))

    def test_single_linear_layer_basis_vector(self):
        """With no hidden layers, e_k picks out row k of the weight matrix."""
        model = MLP(4, (), 3, seed=1)
        x = np.zeros((1, 4))
        x[0, 1] = 1.0
        expected = model.weights[0].data[1] + model.biases[0].data
        np.testing.assert_allclose(model.logits(x)[0], expected)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(3)
        model = MLP(6, (8, 8), 10, seed=3)
        x = rng.normal(size=(7, 6))
        np.testing.assert_allclose(model.logits(x), naive_forward(model, x))
        np.testing.assert_allclose(model.forward(x).data, naive_forward(model, x))

    def test_forward_is_pure(self):
        model = MLP(4, (8,), 5, seed=2)
        x = np.random.default_rng(1).normal(size=(3, 4))
        np.testing.assert_array_equal(model.logits(x), model.logits(x))

    def test_dimension_mismatch(self):
        model = MLP(4, (8,), 5, seed=2)
        with pytest.raises(ValueError):
            model.forward(np.zeros((2, 3)))


class TestGradient:
    def test_constant_loss_not_connected(self):
        from xder import Tensor

        model = MLP(3, (4,), 2, seed=0)
        with pytest.raises(ValueError):
            model.gradient(Tensor(1.0))

    def test_quadratic_parameter_loss(self):
        """L = 0.5 * ||theta||^2 has gradient theta."""
        model = MLP(3, (4,), 2, seed=5)
        loss = None
        for p in model.parameters():
            term = ((p * p).sum()) * 0.5
            loss = term if loss is None else loss + term
        grad = model.gradient(loss)
        np.testing.assert_allclose(grad, model.get_flat())

    def test_ce_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        model = MLP(4, (6,), 6, seed=9)
        x = rng.normal(size=(5, 4))
        y = rng.integers(0, 6, size=5)
        grad = model.gradient(full_ce(model.forward(x), y))
        theta0 = model.get_flat()

        def loss_at(theta):
            model.set_flat(theta)
            return float(full_ce(model.forward(x), y).data)

        fd = finite_difference_gradient(loss_at, theta0)
        model.set_flat(theta0)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), np.linalg.norm(fd))
        assert rel <= 1e-7


class TestSGD:
    def test_zero_lr_no_change(self):
        model = MLP(3, (4,), 2, seed=0)
        before = model.get_flat()
        model.sgd_step(np.ones_like(before), SGDConfig(lr=0.0))
        np.testing.assert_array_equal(model.get_flat(), before)

    def test_plain_step_arithmetic(self):
        model = MLP(1, (), 1, seed=0)
        model.set_flat(np.array([1.0, 0.0]))
        model.sgd_step(np.array([2.0, 0.0]), SGDConfig(lr=0.5))
        np.testing.assert_allclose(model.get_flat(), [0.0, 0.0])

    def test_momentum_second_step_is_1_9x(self):
        model = MLP(1, (), 1, seed=0)
        model.set_flat(np.zeros(2))
        opt = SGDConfig(lr=0.1, momentum=0.9)
        g = np.array([1.0, 0.0])
        model.sgd_step(g, opt)
        first = -model.get_flat()[0]
        before = model.get_flat()[0]
        model.sgd_step(g, opt)
        second = before - model.get_flat()[0]
        np.testing.assert_allclose(second, 1.9 * first)

    def test_weight_decay(self):
        model = MLP(1, (), 1, seed=0)
        model.set_flat(np.array([2.0, 0.0]))
        model.sgd_step(np.zeros(2), SGDConfig(lr=0.5, weight_decay=0.1))
        np.testing.assert_allclose(model.get_flat()[0], 2.0 - 0.5 * 0.2)

    def test_length_mismatch(self):
        model = MLP(3, (4,), 2, seed=0)
        with pytest.raises(ValueError):
            model.sgd_step(np.zeros(3), SGDConfig(lr=0.1))


class TestGrowHead:
    def test_old_logits_unchanged(self):
        rng = np.random.default_rng(4)
        model = MLP(5, (8,), 6, seed=4)
        x = rng.normal(size=(4, 5))
        before = model.logits(x)
        model.grow_head(3)
        after = model.logits(x)
        assert model.output_dim == 9
        np.testing.assert_array_equal(after[:, :6], before)

    def test_grow_zero_is_noop(self):
        model = MLP(5, (8,), 6, seed=4)
        theta = model.get_flat()
        model.grow_head(0)
        np.testing.assert_array_equal(model.get_flat(), theta)

    def test_incremental_growth_keeps_head_available(self):
        """Starting with k+1 heads and growing each task end, the head for
        task c always exists when task c begins."""
        y, tasks, k = 3, 6, 1
        model = MLP(4, (8,), (k + 1) * y, seed=0)
        for c in range(tasks):
            assert model.output_dim >= (c + 1) * y
            if model.output_dim < tasks * y:
                model.grow_head(y)

    def test_growth_is_seeded(self):
        a = MLP(5, (8,), 6, seed=7)
        b = MLP(5, (8,), 6, seed=7)
        a.grow_head(2)
        b.grow_head(2)
        np.testing.assert_array_equal(a.get_flat(), b.get_flat())


class TestPerturb:
    def test_zero_alpha_identity(self):
        model = MLP(4, (8,), 5, seed=1)
        np.testing.assert_array_equal(model.perturb(0.0, seed=3), model.get_flat())

    def test_zero_parameters_stay_zero(self):
        model = MLP(4, (8,), 5, seed=1)
        theta = model.get_flat()
        theta[::3] = 0.0
        model.set_flat(theta)
        perturbed = model.perturb(0.5, seed=3)
        np.testing.assert_array_equal(perturbed[::3], 0.0)

    def test_relative_noise_variance(self):
        """Sample variance of (perturbed - theta) / |theta| approaches alpha^2."""
        model = MLP(1, (), 1, seed=0)
        model.set_flat(np.array([2.0, -3.0]))
        alpha = 0.2
        draws = np.array([model.perturb(alpha, seed=s) for s in range(10_000)])
        rel = (draws - model.get_flat()) / np.abs(model.get_flat())
        sample_var = rel.var(axis=0)
        np.testing.assert_allclose(sample_var, alpha**2, rtol=0.05)

    def test_snapshot_perturb_restore_roundtrip(self):
        model = MLP(4, (8,), 5, seed=1)
        snap = model.snapshot()
        model.set_flat(model.perturb(0.3, seed=9))
        model.restore(snap)
        np.testing.assert_array_equal(model.get_flat(), snap)


class TestCheckpointIO:
    def test_roundtrip_bitwise(self, tmp_path):
        model = MLP(6, (8, 8), 10, seed=12)
        model.grow_head(2)
        path = tmp_path / "model.ckpt"
        model.save(path)
        loaded = MLP.load(path)
        assert loaded.layer_sizes == model.layer_sizes
        np.testing.assert_array_equal(loaded.get_flat(), model.get_flat())

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTAMODL" + b"\x00" * 32)
        with pytest.raises(ValueError):
            MLP.load(path)

    def test_from_flat(self):
        model = MLP(3, (4,), 2, seed=6)
        rebuilt = MLP.from_flat(model.layer_sizes, model.get_flat())
        x = np.random.default_rng(0).normal(size=(2, 3))
        np.testing.assert_array_equal(rebuilt.logits(x), model.logits(x))
